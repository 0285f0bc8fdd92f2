import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from mppctl.pathint import (
    StateIntegral, constant_rule, gauss_rule, integrate_min_linear, merge_nodes, piece_cells,
)

finite = st.floats(-5, 5, allow_nan=False)


def test_merge_and_piece_cells():
    nodes = merge_nodes([0.0, 0.5, 1.0], [0.0, 0.25, 1.0])
    np.testing.assert_array_equal(nodes, [0.0, 0.25, 0.5, 1.0])
    np.testing.assert_array_equal(piece_cells(np.array([0.0, 0.5, 1.0]), nodes), [0, 0, 1])


def test_constant_rule_segments():
    nodes = np.array([0.0, 0.5, 1.0])
    vals = np.array([[1.0, 2.0], [3.0, 4.0]])  # (piece, state)
    si = StateIntegral(nodes, 2, constant_rule(vals))
    assert si.over(0, 0.0, 1.0) == pytest.approx(2.0)
    assert si.over(1, 0.25, 0.75) == pytest.approx(0.25 * 2 + 0.25 * 4)


def test_gauss_rule_polynomial_exact():
    nodes = np.linspace(0.0, 1.0, 4)
    si = StateIntegral(nodes, 1, gauss_rule(lambda x, k, s: s ** 5, order=4))
    assert si.over(0, 0.1, 0.9) == pytest.approx((0.9 ** 6 - 0.1 ** 6) / 6, rel=1e-14)


@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=4), st.floats(0.01, 3))
def test_min_linear_matches_quadrature(lines, width):
    c0 = np.array([[a for a, _ in lines]])
    c1 = np.array([[b for _, b in lines]])
    exact = integrate_min_linear(c0, c1, np.array([width]))[0]
    kinks = []
    for i in range(len(lines)):
        for j in range(i + 1, len(lines)):
            den = (c0[0, i] - c0[0, j]) - (c1[0, i] - c1[0, j])
            if den != 0:
                lam = (c0[0, i] - c0[0, j]) / den
                if 0 < lam < 1:
                    kinks.append(lam * width)
    f = lambda s: np.min(c0[0] + (c1[0] - c0[0]) * s / width)  # noqa: E731
    ref, _ = integrate.quad(f, 0, width, points=kinks or None, epsabs=1e-12, limit=200)
    assert exact == pytest.approx(ref, abs=1e-9)


def test_min_linear_single_line():
    out = integrate_min_linear(np.array([[1.0]]), np.array([[3.0]]), np.array([2.0]))
    assert out[0] == pytest.approx(4.0)
