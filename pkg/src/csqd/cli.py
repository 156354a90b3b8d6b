"""Command-line interface: ``csqd run|synth|diagnose|oracle``.

Runs are configured with a YAML document; ``--set key=value`` overrides one
key (dotted keys reach nested blocks, values are parsed as YAML).  In a run
config, list values for ``d_max``, ``K`` or ``cluster_kind`` expand into a
sweep: every combination runs in its own subdirectory with a seed derived
from ``(seed, cell index)``.

Errors print one line ``error: CLASS: detail`` to stderr and exit with the
code of their class.
"""

import argparse
import copy
import itertools
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .cisolver import DavidsonOptions
from .diagnostics import (
    eta_matrix,
    exclusion_test,
    load_run,
    unique_strings,
    write_eta,
    write_result,
)
from .driver import RunConfig, run
from .errors import ArtifactIOError, ConfigError, CSQDError
from .hamiltonian import read_fcidump
from .oracle import DEFAULT_CAP, DenseSectorBasis, dense_fci
from .sampling import load_samples, sector_fraction, synth_sample, write_samples

EXIT_CODES = {"OK": 0, "CONFIG": 2, "INPUT": 3, "NUMERIC": 4, "CONVERGENCE": 5, "IO": 6}

BUNDLED_PREFIX = "bundled:"
SWEEP_KEYS = ("d_max", "K", "cluster_kind")
CONFIG_NAME = "config.yaml"

_RUN_KEYS = {
    "fcidump": None,
    "samples": None,
    "synth": None,
    "output": None,
    "swap_halves": False,
    "reverse_bits": False,
    "reference_energy": None,
}
_SYNTH_KEYS = {"flip_prob": 0.0, "shots": 100000, "seed": 0, "workers": 1}
_DAVIDSON_KEYS = set(DavidsonOptions.__dataclass_fields__)
_RUNCONFIG_KEYS = set(RunConfig.__dataclass_fields__) - {"davidson"}


# ---------------------------------------------------------------- config handling


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


def apply_overrides(doc: dict, overrides) -> dict:
    doc = copy.deepcopy(doc)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: {exc}") from exc
        target = doc
        parts = key.strip().split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ConfigError(f"override {item!r}: {part} is not a block")
        target[parts[-1]] = value
    return doc


def _resolve_path(value, base: Path):
    if value is None:
        return None
    value = str(value)
    if value.startswith(BUNDLED_PREFIX):
        return value
    p = Path(value).expanduser()
    return str(p if p.is_absolute() else (base / p).resolve())


def _open_fcidump(value):
    if value is None:
        raise ConfigError("config key 'fcidump' is required")
    if value.startswith(BUNDLED_PREFIX):
        name = value[len(BUNDLED_PREFIX):]
        resource = resources.files("csqd") / "data" / name
        if not resource.is_file():
            raise ConfigError(f"no bundled FCIDUMP named {name!r}")
        return read_fcidump(resource)
    if not Path(value).is_file():
        raise ConfigError(f"fcidump not found: {value}")
    return read_fcidump(value)


def resolve_run_config(doc: dict, base: Path) -> dict:
    """Validate keys and fill every default explicitly."""
    allowed = set(_RUN_KEYS) | _RUNCONFIG_KEYS | {"davidson"}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    out = dict(_RUN_KEYS)
    defaults = RunConfig().to_dict()
    for key in sorted(_RUNCONFIG_KEYS):
        out[key] = defaults[key]
    out["davidson"] = dict(defaults["davidson"])
    for key, value in doc.items():
        if key == "davidson":
            if not isinstance(value, dict):
                raise ConfigError("'davidson' must be a mapping")
            bad = sorted(set(value) - _DAVIDSON_KEYS)
            if bad:
                raise ConfigError(f"unknown davidson keys: {', '.join(bad)}")
            out["davidson"].update(value)
        elif key == "synth":
            if value is not None:
                if not isinstance(value, dict):
                    raise ConfigError("'synth' must be a mapping")
                bad = sorted(set(value) - set(_SYNTH_KEYS))
                if bad:
                    raise ConfigError(f"unknown synth keys: {', '.join(bad)}")
                out["synth"] = {**_SYNTH_KEYS, **value}
        else:
            out[key] = value
    out["fcidump"] = _resolve_path(out["fcidump"], base)
    out["samples"] = _resolve_path(out["samples"], base)
    out["output"] = _resolve_path(out["output"], base)
    if out["fcidump"] is None:
        raise ConfigError("config key 'fcidump' is required")
    if out["output"] is None:
        raise ConfigError("config key 'output' is required")
    if (out["samples"] is None) == (out["synth"] is None):
        raise ConfigError("exactly one of 'samples' or 'synth' must be given")
    return out


def expand_sweep(cfg: dict) -> list:
    """``[(subdir or None, cell config)]``; non-sweeps give a single cell."""
    axes = [k for k in SWEEP_KEYS if isinstance(cfg.get(k), list)]
    for key, value in cfg.items():
        if isinstance(value, list) and key not in SWEEP_KEYS:
            raise ConfigError(f"key {key!r} cannot be swept")
    if not axes:
        return [(None, cfg)]
    cells = []
    for index, combo in enumerate(itertools.product(*(cfg[k] for k in axes))):
        cell = copy.deepcopy(cfg)
        for k, v in zip(axes, combo):
            cell[k] = v
        cell["seed"] = int(np.random.SeedSequence([int(cfg["seed"]), index]).generate_state(1)[0])
        name = "_".join(f"{k}-{v}" for k, v in zip(axes, combo))
        cell["output"] = str(Path(cfg["output"]) / name)
        cells.append((name, cell))
    return cells


def _run_config(cell: dict) -> RunConfig:
    try:
        return RunConfig(**{k: cell[k] for k in _RUNCONFIG_KEYS}, davidson=DavidsonOptions(**cell["davidson"]))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------- subcommands


def _execute_cell(cell: dict):
    config = _run_config(cell)
    ham = _open_fcidump(cell["fcidump"])
    outdir = Path(cell["output"])
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactIOError(f"{outdir}: {exc.strerror}") from exc
    if cell["samples"] is not None:
        if not Path(cell["samples"]).is_file():
            raise ConfigError(f"samples not found: {cell['samples']}")
        samples = load_samples(
            cell["samples"], n_mo=ham.n_orbitals, swap_halves=cell["swap_halves"], reverse_bits=cell["reverse_bits"]
        )
    else:
        s = cell["synth"]
        _, vec = dense_fci(ham)
        basis = DenseSectorBasis(ham.n_orbitals, ham.n_alpha, ham.n_beta)
        samples = synth_sample(vec, basis, s["flip_prob"], s["shots"], s["seed"], s["workers"])
        write_samples(samples, outdir / "samples.txt", comment=_synth_comment(s))
    _emit_yaml(cell, outdir / CONFIG_NAME)
    result = run(ham, samples, config)
    write_result(result, outdir, cell["reference_energy"])
    print(f"{outdir}\tenergy={result.best.energy:.10f}\ts2={result.best.s2:.2e}\tstop={result.stop_reason}")
    return result


def cmd_run(args) -> int:
    doc = apply_overrides(load_config(args.config), args.set)
    cfg = resolve_run_config(doc, Path(args.config).resolve().parent)
    for _, cell in expand_sweep(cfg):
        _execute_cell(cell)
    return 0


def _synth_comment(s):
    return (
        "synthetic samples: dense ground state, i.i.d. bit flips\n"
        f"flip_prob={s['flip_prob']!r} shots={s['shots']} seed={s['seed']}"
    )


def cmd_synth(args) -> int:
    doc = apply_overrides(load_config(args.config), args.set)
    allowed = {"fcidump", "output"} | set(_SYNTH_KEYS)
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    base = Path(args.config).resolve().parent
    s = {**_SYNTH_KEYS, **{k: doc[k] for k in _SYNTH_KEYS if k in doc}}
    if doc.get("output") is None:
        raise ConfigError("config key 'output' is required")
    ham = _open_fcidump(_resolve_path(doc.get("fcidump"), base))
    if int(s["shots"]) < 0:
        raise ConfigError("shots must be nonnegative")
    _, vec = dense_fci(ham)
    basis = DenseSectorBasis(ham.n_orbitals, ham.n_alpha, ham.n_beta)
    samples = synth_sample(vec, basis, float(s["flip_prob"]), int(s["shots"]), int(s["seed"]), int(s["workers"]))
    target = Path(_resolve_path(doc["output"], base))
    try:
        write_samples(samples, target, comment=_synth_comment(s))
    except OSError as exc:
        raise ArtifactIOError(f"{target}: {exc.strerror}") from exc
    frac = sector_fraction(samples, ham.n_alpha, ham.n_beta)
    print(f"{target}\tunique={len(samples)}\tshots={samples.total_shots}\tin_sector={frac:.4f}")
    return 0


def cmd_oracle(args) -> int:
    ham = _open_fcidump(_resolve_path(args.fcidump, Path.cwd()))
    energy, _ = dense_fci(ham, cap=args.cap)
    basis = DenseSectorBasis(ham.n_orbitals, ham.n_alpha, ham.n_beta)
    print(f"energy\t{energy!r}")
    print(f"sector_dim\t{basis.size}")
    return 0


def cmd_diagnose(args) -> int:
    rundir = Path(args.rundir)
    runinfo = load_run(rundir)
    labels, refs = runinfo["references"]
    if args.baseline:
        base_labels, base_refs = load_run(args.baseline)["references"]
        global_ref = base_refs.mean(axis=0, keepdims=True)
        labels = ["SQD"] + labels
        refs = np.vstack([global_ref, refs])
    eta_text = write_eta(eta_matrix(refs, labels), rundir / "eta.tsv")
    print(eta_text, end="")
    if args.exclude_cluster is not None or args.exclude_none:
        cfg = load_config(rundir / CONFIG_NAME)
        ham = _open_fcidump(cfg["fcidump"])
        best = runinfo["best"]
        lam = float(cfg.get("lam", 0.1))
        opts = DavidsonOptions(**cfg.get("davidson", {}))
        rows = ["excluded\tn_removed\tenergy\tdelta_mHa"]
        targets = []
        if args.exclude_none:
            targets.append(("none", []))
        members = runinfo.get("memberships")
        for k in args.exclude_cluster or []:
            if members is None:
                raise ConfigError("run directory has no membership table")
            if not 1 <= k <= members.K:
                raise ConfigError(f"cluster {k} out of range 1..{members.K}")
            present = {int(s) for s in best.strings}
            targets.append((f"C{k}", [s for s in unique_strings(members, k - 1) if s in present]))
        for name, subset in targets:
            energy, delta = exclusion_test(ham, best, subset, lam=lam, opts=opts)
            rows.append(f"{name}\t{len(subset)}\t{energy:.5f}\t{delta:.2f}")
        text = "\n".join(rows) + "\n"
        try:
            (rundir / "exclusion.tsv").write_text(text)
        except OSError as exc:
            raise ArtifactIOError(f"{rundir}: {exc.strerror}") from exc
        print(text, end="")
    return 0


def _emit_yaml(doc, path):
    try:
        Path(path).write_text(yaml.safe_dump(doc, sort_keys=True, default_flow_style=False))
    except OSError as exc:
        raise ArtifactIOError(f"{path}: {exc.strerror}") from exc


# ---------------------------------------------------------------- entry point


def build_parser():
    parser = argparse.ArgumentParser(prog="csqd", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run CSQD or SQD from a YAML config")
    p.add_argument("config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="write synthetic noisy samples of the exact ground state")
    p.add_argument("config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("diagnose", help="eta matrix and cluster-exclusion test for a run directory")
    p.add_argument("rundir")
    p.add_argument("--baseline", help="SQD run directory supplying the global reference")
    p.add_argument("--exclude-cluster", type=int, action="append", metavar="K",
                   help="remove strings unique to cluster K (1-based) and re-solve")
    p.add_argument("--exclude-none", action="store_true", help="include the empty-exclusion control row")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("oracle", help="dense FCI energy of an FCIDUMP (or bundled:NAME)")
    p.add_argument("fcidump")
    p.add_argument("--cap", type=int, default=DEFAULT_CAP)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CSQDError as exc:
        cls, message = exc.exit_class, str(exc)
    except OSError as exc:
        cls, message = "IO", str(exc)
    message = " ".join(message.split())
    print(f"error: {cls}: {message}", file=sys.stderr)
    return EXIT_CODES[cls]


if __name__ == "__main__":
    sys.exit(main())
