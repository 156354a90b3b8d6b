"""The compiled and pure-Python kernels must agree to round-off."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csqd import kernels
from csqd.cisolver import SubspaceOperator
from csqd.determinants import all_strings
from csqd.hamiltonian import random_hamiltonian

from conftest import random_strings

BACKENDS = kernels.available_backends()


def test_python_backend_always_available():
    assert "python" in BACKENDS
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")
@settings(max_examples=25, deadline=None)
@given(st.integers(3, 7), st.integers(0, 2**16), st.data())
def test_backends_agree(n_mo, seed, data):
    n_sigma = data.draw(st.integers(1, n_mo - 1))
    rng = np.random.default_rng(seed)
    ham = random_hamiltonian(n_mo, n_sigma, seed=seed)
    total = len(all_strings(n_mo, n_sigma))
    strings = random_strings(rng, n_mo, n_sigma, data.draw(st.integers(1, min(total, 12))))
    v = rng.standard_normal(len(strings) ** 2)
    ops = {b: SubspaceOperator(ham, strings, b) for b in BACKENDS}
    ref = ops["python"]
    for op in ops.values():
        assert np.allclose(op.apply_h(v), ref.apply_h(v), atol=1e-12, rtol=0)
        assert np.allclose(op.apply_s2(v), ref.apply_s2(v), atol=1e-12, rtol=0)
        assert np.allclose(op.diag_h, ref.diag_h, atol=1e-12, rtol=0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_backend_outputs_are_deterministic(backend):
    ham = random_hamiltonian(6, 3, seed=2)
    strings = all_strings(6, 3)
    v = np.random.default_rng(0).standard_normal(len(strings) ** 2)
    a = SubspaceOperator(ham, strings, backend).apply_h(v)
    b = SubspaceOperator(ham, strings, backend).apply_h(v)
    assert a.tobytes() == b.tobytes()
