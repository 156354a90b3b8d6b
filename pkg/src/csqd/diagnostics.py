"""Reference-separation metric, cluster-exclusion test and run artifacts.

Tables are tab-separated with a header row.  Energies in machine-readable
tables are written with ``repr`` so they parse back bit-for-bit; rounded
values (hartree to 5 decimals, mHa to 2 decimals) appear in human-facing
summaries.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cisolver import SubspaceSolution, read_solution, solve, write_solution
from .clustering import save_model
from .determinants import from_text, to_text
from .errors import ArtifactIOError, DimensionError, FormatError, InputError
from .hamiltonian import ActiveSpaceHamiltonian
from .recovery import MembershipTable

HARTREE_TO_MHA = 1000.0

SUMMARY = "summary.txt"
HISTORY = "history.tsv"
REFERENCES = "references.tsv"
MEMBERSHIPS = "memberships.tsv"
TIMINGS = "timings.tsv"
SOLUTION = "best"
MODEL = "model.json"


@dataclass(eq=False)
class EtaMatrix:
    labels: list
    values: np.ndarray


def eta(n_i, n_j) -> float:
    """Half the L1 distance between two occupancy vectors (electrons to move)."""
    n_i = np.asarray(n_i, dtype=np.float64)
    n_j = np.asarray(n_j, dtype=np.float64)
    if n_i.shape != n_j.shape:
        raise DimensionError(f"occupancy vectors of shapes {n_i.shape} and {n_j.shape}")
    return 0.5 * float(np.abs(n_i - n_j).sum())


def eta_matrix(refs, labels=None) -> EtaMatrix:
    refs = np.atleast_2d(np.asarray(refs, dtype=np.float64))
    if labels is None:
        labels = [f"C{k + 1}" for k in range(len(refs))]
    if len(labels) != len(refs):
        raise DimensionError(f"{len(labels)} labels for {len(refs)} references")
    values = 0.5 * np.abs(refs[:, None, :] - refs[None, :, :]).sum(axis=2)
    return EtaMatrix(list(labels), values)


def write_eta(matrix: EtaMatrix, sink):
    lines = ["label\t" + "\t".join(matrix.labels)]
    for label, row in zip(matrix.labels, matrix.values):
        lines.append(label + "\t" + "\t".join(f"{v:.6f}" for v in row))
    return _emit("\n".join(lines) + "\n", sink)


def unique_strings(members: MembershipTable, cluster: int) -> list:
    """Strings whose membership vector has exactly the bit of ``cluster`` set."""
    bit = 1 << int(cluster)
    return sorted(s for s, m in members.items() if m == bit)


def exclusion_test(ham: ActiveSpaceHamiltonian, best: SubspaceSolution, exclude, lam=0.1, opts=None):
    """Re-solve on ``D* \\ exclude``; returns ``(energy, delta_mHa)``."""
    drop = {int(s) for s in exclude}
    present = {int(s) for s in best.strings}
    if not drop <= present:
        raise InputError(f"{len(drop - present)} excluded strings are not in the best subspace")
    if not drop:
        return best.energy, 0.0
    keep = np.array([s for s in best.strings if int(s) not in drop], dtype=np.uint64)
    if len(keep) == 0:
        raise InputError("exclusion removes every string of the best subspace")
    sol = solve(ham, keep, lam=lam, opts=opts)
    return sol.energy, (sol.energy - best.energy) * HARTREE_TO_MHA


# ---------------------------------------------------------------- history


_HISTORY_COLUMNS = ("kind", "iteration", "batch", "energy", "s2", "n_strings", "best_so_far", "ref_change")


def export_history(result, sink):
    """Per-batch rows plus one best-so-far summary row per iteration."""
    lines = ["\t".join(_HISTORY_COLUMNS)]
    by_iter = {}
    for rec in result.history:
        by_iter.setdefault(rec.iteration, []).append(rec)
    for it in result.iterations:
        for rec in by_iter.get(it.iteration, []):
            lines.append(
                f"batch\t{rec.iteration}\t{rec.batch}\t{rec.energy!r}\t{rec.s2!r}\t{rec.n_strings}\t-\t-"
            )
        lines.append(f"iteration\t{it.iteration}\t-\t-\t-\t-\t{it.best_energy!r}\t{it.ref_change!r}")
    return _emit("\n".join(lines) + "\n", sink)


def read_history(source) -> list:
    """Parse a history table into dicts (numbers as int/float, ``-`` as None)."""
    text = _read(source)
    lines = text.splitlines()
    if not lines or tuple(lines[0].split("\t")) != _HISTORY_COLUMNS:
        raise FormatError("history table header missing or malformed", line=1)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split("\t")
        if len(cells) != len(_HISTORY_COLUMNS):
            raise FormatError(f"expected {len(_HISTORY_COLUMNS)} columns", line=lineno)
        row = {"kind": cells[0]}
        for name, cell in zip(_HISTORY_COLUMNS[1:], cells[1:]):
            if cell == "-":
                row[name] = None
            elif name in ("iteration", "batch", "n_strings"):
                row[name] = int(cell)
            else:
                row[name] = float(cell)
        rows.append(row)
    return rows


# ---------------------------------------------------------------- references and memberships


def write_references(refs, sink, labels=None):
    refs = np.atleast_2d(np.asarray(refs, dtype=np.float64))
    n = refs.shape[1]
    labels = labels or [f"C{k + 1}" for k in range(len(refs))]
    lines = ["cluster\t" + "\t".join(f"n{p}" for p in range(n))]
    for label, row in zip(labels, refs):
        lines.append(label + "\t" + "\t".join(repr(float(v)) for v in row))
    return _emit("\n".join(lines) + "\n", sink)


def read_references(source):
    """Returns ``(labels, refs)``."""
    lines = _read(source).splitlines()
    if not lines or not lines[0].startswith("cluster\t"):
        raise FormatError("reference table header missing", line=1)
    labels, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split("\t")
        try:
            rows.append([float(c) for c in cells[1:]])
        except ValueError:
            raise FormatError("non-numeric occupancy", line=lineno) from None
        labels.append(cells[0])
    return labels, np.array(rows)


def write_memberships(members: MembershipTable, n_mo, sink):
    lines = ["string\t" + "\t".join(f"C{k + 1}" for k in range(members.K))]
    for s in sorted(members.strings(), key=lambda s: to_text(s, n_mo)):
        lines.append(to_text(s, n_mo) + "\t" + "\t".join(str(int(b)) for b in members.vector(s)))
    return _emit("\n".join(lines) + "\n", sink)


def read_memberships(source) -> MembershipTable:
    lines = _read(source).splitlines()
    if not lines or not lines[0].startswith("string"):
        raise FormatError("membership table header missing", line=1)
    K = len(lines[0].split("\t")) - 1
    table = MembershipTable(K)
    for line in lines[1:]:
        cells = line.split("\t")
        for k, bit in enumerate(cells[1:]):
            if bit == "1":
                table.set(from_text(cells[0]), k)
    return table


# ---------------------------------------------------------------- run directory


def format_summary(result, reference_energy=None) -> str:
    best = result.best
    cfg = result.config
    lines = [
        f"method: {cfg.method}",
        f"energy: {best.energy!r}",
        f"energy_5dp: {best.energy:.5f}",
        f"s2: {best.s2!r}",
        f"n_strings: {len(best.strings)}",
        f"dim: {best.dim}",
        f"d_max: {cfg.d_max}",
        f"best_iteration: {result.best_at[0]}",
        f"best_batch: {result.best_at[1]}",
        f"iterations_run: {len(result.iterations)}",
        f"stop_reason: {result.stop_reason}",
    ]
    if cfg.method == "csqd":
        lines.append(f"K: {cfg.K}")
        lines.append(f"cluster_kind: {cfg.cluster_kind}")
        if result.model is not None:
            lines.append(f"cluster_fit_score: {result.model.fit_score!r}")
        if result.stats is not None:
            lines.append("cluster_weights: " + " ".join(repr(float(w)) for w in result.stats.w))
            lines.append("cluster_allocations: " + " ".join(str(int(m)) for m in result.stats.m))
    if reference_energy is not None:
        lines.append(f"reference_energy: {float(reference_energy)!r}")
        lines.append(f"error_mHa: {(best.energy - reference_energy) * HARTREE_TO_MHA:.2f}")
    return "\n".join(lines) + "\n"


def read_summary(source) -> dict:
    out = {}
    for line in _read(source).splitlines():
        if ": " in line:
            key, value = line.split(": ", 1)
            out[key] = value
    return out


def write_result(result, outdir, reference_energy=None):
    """Write summary, history, references, memberships, model, best solution and timings."""
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactIOError(f"{out}: {exc}") from exc
    n_mo = result.best.n_mo
    _emit(format_summary(result, reference_energy), out / SUMMARY)
    export_history(result, out / HISTORY)
    labels = ["SQD"] if result.config.method == "sqd" else None
    write_references(result.references, out / REFERENCES, labels)
    if result.memberships is not None:
        write_memberships(result.memberships, n_mo, out / MEMBERSHIPS)
    if result.model is not None:
        save_model(result.model, out / MODEL)
    write_solution(result.best, out / SOLUTION)
    lines = ["phase\tseconds"]
    lines += [f"{phase}\t{secs:.6f}" for phase, secs in sorted(result.timings.items())]
    lines += [f"batch:{r.iteration}:{r.batch}\t{r.seconds:.6f}" for r in result.history]
    _emit("\n".join(lines) + "\n", out / TIMINGS)
    return out


def load_run(outdir):
    """Read back the artifacts needed by the diagnostics of a finished run."""
    out = Path(outdir)
    if not (out / SUMMARY).exists():
        raise ArtifactIOError(f"{out}: not a run directory (no {SUMMARY})")
    run = {
        "summary": read_summary(out / SUMMARY),
        "references": read_references(out / REFERENCES),
        "best": read_solution(out / SOLUTION),
    }
    if (out / MEMBERSHIPS).exists():
        run["memberships"] = read_memberships(out / MEMBERSHIPS)
    return run


def _emit(text, sink):
    if isinstance(sink, (str, Path)):
        try:
            Path(sink).write_text(text)
        except OSError as exc:
            raise ArtifactIOError(f"{sink}: {exc}") from exc
    else:
        sink.write(text)
    return text


def _read(source) -> str:
    if isinstance(source, (str, Path)):
        try:
            return Path(source).read_text()
        except OSError as exc:
            raise ArtifactIOError(f"{source}: {exc}") from exc
    return source.read()
