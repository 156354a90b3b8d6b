import gzip
import io
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csqd.determinants import from_text
from csqd.errors import EmptyInputError, FormatError, InputError
from csqd.oracle import DenseSectorBasis
from csqd.sampling import (
    SampleSet,
    load_samples,
    pool_spin_strings,
    postselect,
    sector_fraction,
    synth_sample,
    write_samples,
)


def test_load_counts_and_totals():
    s = load_samples(io.StringIO("1010 2\n0110 1\n"))
    assert len(s) == 2 and s.total_shots == 3 and s.n_mo == 2


def test_load_merges_duplicates():
    s = load_samples(io.StringIO("1010 1\n1010 1\n"))
    assert s.entries == {"1010": 2}


@pytest.mark.parametrize(
    "text,line",
    [("10x0 1\n", 1), ("1010 1\n101 1\n", 2), ("1010 0\n", 1), ("1010 a\n", 1), ("1010\n", 1)],
)
def test_load_format_errors_carry_line(text, line):
    with pytest.raises(FormatError) as info:
        load_samples(io.StringIO(text))
    assert info.value.line == line


def test_load_comments_gzip_and_flags(tmp_path):
    path = tmp_path / "s.txt.gz"
    path.write_bytes(gzip.compress(b"# header\n1100 3  # trailing\n"))
    assert load_samples(path).entries == {"1100": 3}
    assert load_samples(path, swap_halves=True).entries == {"0011": 3}
    assert load_samples(path, reverse_bits=True).entries == {"0011": 3}


def test_write_read_round_trip(tmp_path):
    s = SampleSet({"1001": 4, "0110": 2}, 2)
    write_samples(s, tmp_path / "x.txt", comment="two\nlines")
    assert load_samples(tmp_path / "x.txt") == s


def test_pool_weights_example():
    s = SampleSet({"1001": 2, "1010": 1}, 2)
    pool = pool_spin_strings(s)
    assert pool.weight(from_text("10")) == pytest.approx(2 / 3, abs=1e-15)
    assert pool.weight(from_text("01")) == pytest.approx(1 / 3, abs=1e-15)


def test_pool_identical_halves_and_split():
    assert pool_spin_strings(SampleSet({"0101": 7}, 2)).pi.tolist() == [1.0]
    pool = pool_spin_strings(SampleSet({"1001": 1}, 2))
    assert pool.pi.tolist() == [0.5, 0.5]


def test_pool_empty():
    with pytest.raises(EmptyInputError):
        pool_spin_strings(SampleSet({}, 2))


@given(st.dictionaries(st.text("01", min_size=6, max_size=6), st.integers(1, 50), min_size=1, max_size=20))
def test_pool_normalized_and_postselect_idempotent(entries):
    s = SampleSet(entries, 3)
    assert pool_spin_strings(s).pi.sum() == pytest.approx(1.0, abs=1e-12)
    once = postselect(s, 1, 2)
    assert postselect(once, 1, 2) == once
    assert all(k[:3].count("1") == 1 and k[3:].count("1") == 2 for k in once.entries)


def test_postselect_identity_when_all_valid():
    s = SampleSet({"1001": 1, "0110": 3}, 2)
    assert postselect(s, 1, 1) == s


def test_postselect_uniform_fraction():
    # every 4-bit string once: 2 of 4 halves have weight 1
    s = SampleSet({"".join(b): 1 for b in product("01", repeat=4)}, 2)
    assert sector_fraction(s, 1, 1) == 0.25


def _one_det_state():
    basis = DenseSectorBasis(4, 2, 2)
    vec = np.zeros(basis.shape)
    vec[0, 0] = 1.0
    return basis, vec


def test_synth_noiseless_single_determinant():
    basis, vec = _one_det_state()
    s = synth_sample(vec, basis, 0.0, 500, seed=3)
    assert len(s) == 1 and s.total_shots == 500
    assert sector_fraction(s, 2, 2) == 1.0


def test_synth_noisy_sector_fraction_matches_enumeration():
    basis, vec = _one_det_state()
    p = 0.05
    # probability that flips leave a 4-bit half with 2 electrons, from a 2-electron start
    keep_half = sum(
        p ** sum(m) * (1 - p) ** (4 - sum(m))
        for m in product((0, 1), repeat=4)
        if (m[0] + m[1]) == (m[2] + m[3])  # flips out of occupied == flips into empty
    )
    s = synth_sample(vec, basis, p, 100_000, seed=1)
    assert sector_fraction(s, 2, 2) == pytest.approx(keep_half**2, abs=0.01)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 200_000))
def test_synth_independent_of_workers(seed, shots):
    basis = DenseSectorBasis(3, 1, 1)
    vec = np.full(basis.shape, 1 / 3)
    assert synth_sample(vec, basis, 0.1, shots, seed, workers=1) == synth_sample(vec, basis, 0.1, shots, seed, workers=3)


def test_synth_rejects_unnormalized():
    basis, vec = _one_det_state()
    with pytest.raises(InputError):
        synth_sample(2 * vec, basis, 0.0, 10, 0)
