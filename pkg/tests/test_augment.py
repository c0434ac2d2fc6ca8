import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from robustdlm.augment import (EPSILON, EVOLUTION, OBSERVATION, build_augmented,
                               build_rw1_precision)
from robustdlm.model import DlmSpec, ModelError, TimeSeries


def test_layout_single_series():
    y = np.array([1.0, np.nan, 3.0, 4.0])
    m = build_augmented(DlmSpec(TimeSeries(y)))
    assert m.n_obs == 3
    assert m.role.tolist() == [OBSERVATION] * 3 + [EVOLUTION] * 3
    assert m.obs_t.tolist() == [0, 2, 3]
    assert m.state[m.evo_rows].tolist() == [1, 2, 3]
    assert m.prev_state[m.evo_rows].tolist() == [0, 1, 2]
    assert np.all(m.z[m.evo_rows] == 0.0)
    assert m.masked() == [(0, 1)]
    assert m.epsilon == EPSILON
    # augmented response has 2 n_d - 1 rows when nothing is missing
    full = build_augmented(DlmSpec(TimeSeries(np.arange(5.0))))
    assert full.z.size == 2 * 5 - 1


def test_layout_grouped():
    y = np.array([[1.0, 2.0, 3.0], [np.nan, 5.0, 6.0]])
    m = build_augmented(DlmSpec(y))
    assert m.obs_series.tolist() == [0, 0, 0, 1, 1]
    assert m.obs_t.tolist() == [0, 1, 2, 1, 2]
    assert m.masked() == [(1, 0)]


def test_bad_epsilon():
    with pytest.raises(ModelError):
        build_augmented(DlmSpec(TimeSeries([1.0, 2.0])), epsilon=0.0)


@given(hnp.arrays(np.float64, st.integers(2, 30), elements=st.floats(-1e3, 1e3)))
def test_rw1_quadratic_form(x):
    r = build_rw1_precision(x.size)
    assert r.quadratic_form(x) == pytest.approx(np.sum(np.diff(x) ** 2), rel=1e-10, abs=1e-8)
    np.testing.assert_allclose(r.matvec(x), r.dense() @ x, atol=1e-9)


def test_rw1_structure():
    r = build_rw1_precision(4).dense()
    np.testing.assert_array_equal(r, [[1, -1, 0, 0], [-1, 2, -1, 0], [0, -1, 2, -1], [0, 0, -1, 1]])
    # rank n - 1 with the constant vector in its null space
    assert np.linalg.matrix_rank(r) == 3
    np.testing.assert_allclose(r @ np.ones(4), 0.0)
    with pytest.raises(ModelError):
        build_rw1_precision(1)
