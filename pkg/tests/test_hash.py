import numpy as np
from hypothesis import given, strategies as st
from numba import njit

from rwre._hash import combine, derive_seed, mix64, nb_combine, nb_mix64, replicate_seed

u64 = st.integers(0, 2**64 - 1)


@njit
def _nb_pair(key, value):
    return nb_mix64(key), nb_combine(key, value)


@given(u64, st.integers(-2**62, 2**62))
def test_numba_matches_python(key, value):
    a, b = _nb_pair(np.uint64(key), np.int64(value))
    assert int(a) == mix64(key)
    assert int(b) == combine(key, value)


def test_derive_seed_is_deterministic_and_separates_streams():
    assert derive_seed(1, "walk", 3) == derive_seed(1, "walk", 3)
    assert derive_seed(1, "walk", 3) != derive_seed(1, "env", 3)
    assert replicate_seed(5, 0) != replicate_seed(5, 1)
