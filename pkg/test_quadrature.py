"""
Тесты квадратур и мономиального базиса.
"""

import numpy as np
import pytest

from quadrature import (
    DegeneratePolygonError,
    ScaledMonomialBasis,
    _TRIANGLE_RULES,
    _triangle_rule,
    edge_quadrature,
    gauss_legendre_01,
    monomial_exponents,
    polygon_centroid,
    polygon_monomial_moments,
    polygon_quadrature,
    signed_area,
)

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
# С-образный многоугольник: центр масс лежит вне его
C_SHAPE = np.array([[0.0, 0.0], [3.0, 0.0], [3.0, 1.0], [1.0, 1.0],
                    [1.0, 2.0], [3.0, 2.0], [3.0, 3.0], [0.0, 3.0]])
HEXAGON = np.array([[np.cos(a), np.sin(a)] for a in np.linspace(0, 2 * np.pi, 7)[:-1]]) * 0.3 + [2.0, -1.0]


def test_monomial_order():
    assert monomial_exponents(2).tolist() == [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]


@pytest.mark.parametrize("order", range(0, 10))
def test_gauss_legendre_exactness(order):
    t, w = gauss_legendre_01(order)
    for d in range(order + 1):
        assert np.isclose(w @ t ** d, 1.0 / (d + 1), rtol=0, atol=1e-14)


@pytest.mark.parametrize("order", sorted(_TRIANGLE_RULES) + [7, 9])
def test_triangle_rule_weights(order):
    bary, weights = _triangle_rule(order)
    assert np.isclose(weights.sum(), 1.0, atol=1e-14)
    assert np.all(weights > 0)
    assert np.allclose(bary.sum(axis=1), 1.0)
    assert np.all(bary >= 0)


def test_unit_square_moments():
    basis = ScaledMonomialBasis(center=(0.5, 0.5), scale=1.0, degree=2)
    moments = polygon_monomial_moments(UNIT_SQUARE, basis, 2)
    assert np.allclose(moments, [1.0, 0.0, 0.0, 1.0 / 12.0, 0.0, 1.0 / 12.0], atol=1e-15)


def test_centroid_and_area():
    assert signed_area(UNIT_SQUARE) == pytest.approx(1.0)
    assert signed_area(UNIT_SQUARE[::-1]) == pytest.approx(-1.0)
    assert np.allclose(polygon_centroid(UNIT_SQUARE), [0.5, 0.5])
    with pytest.raises(DegeneratePolygonError):
        polygon_centroid(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))


@pytest.mark.parametrize("polygon", [UNIT_SQUARE, HEXAGON, C_SHAPE], ids=["square", "hexagon", "c-shape"])
@pytest.mark.parametrize("order", range(1, 9))
def test_polygon_quadrature_matches_moments(polygon, order):
    """Квадратура точна на мономах степени <= order."""
    center = tuple(polygon_centroid(polygon))
    scale = float(np.ptp(polygon, axis=0).max())
    basis = ScaledMonomialBasis(center=center, scale=scale, degree=order)
    rule = polygon_quadrature(polygon, order)
    exact = polygon_monomial_moments(polygon, basis, order)
    approx = rule.integrate(basis.values(rule.points))
    assert np.allclose(approx, exact, rtol=0, atol=1e-12 * abs(exact[0]))


def test_nonstar_polygon_uses_ear_clipping():
    assert polygon_quadrature(C_SHAPE, 2).fallback
    assert not polygon_quadrature(HEXAGON, 2).fallback


def test_moments_reject_clockwise():
    basis = ScaledMonomialBasis(center=(0.5, 0.5), scale=1.0, degree=1)
    with pytest.raises(DegeneratePolygonError):
        polygon_monomial_moments(UNIT_SQUARE[::-1], basis, 1)


def test_basis_derivatives_match_finite_differences():
    basis = ScaledMonomialBasis(center=(0.3, -0.2), scale=0.7, degree=2)
    point = np.array([[0.41, 0.13]])
    step = 1e-6
    grad = basis.gradients(point)[0]
    hess = basis.hessians(point)[0]
    for j in range(2):
        shift = np.zeros(2)
        shift[j] = step
        fd_grad = (basis.values(point + shift) - basis.values(point - shift))[0] / (2 * step)
        fd_hess = (basis.gradients(point + shift) - basis.gradients(point - shift))[0] / (2 * step)
        assert np.allclose(grad[:, j], fd_grad, atol=1e-8)
        assert np.allclose(hess[:, :, j], fd_hess, atol=1e-6)


def test_edge_quadrature():
    rule = edge_quadrature([0.0, 0.0], [3.0, 4.0], 3)
    assert rule.weights.sum() == pytest.approx(5.0)
    # int_0^5 s^3 ds вдоль отрезка
    s = np.hypot(rule.points[:, 0], rule.points[:, 1])
    assert rule.integrate(s ** 3) == pytest.approx(5.0 ** 4 / 4.0)
    with pytest.raises(DegeneratePolygonError):
        edge_quadrature([1.0, 1.0], [1.0, 1.0], 2)
