"""
Модуль квадратур для многоугольных ячеек.
Содержит масштабированный мономиальный базис, точные моменты многоугольника
и квадратурные правила на многоугольниках и отрезках.
"""

import os
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np

# Настройка логирования
os.makedirs("logs", exist_ok=True)
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler("logs/quadrature.log"),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger("quadrature")


# Симметричные правила на треугольнике с положительными весами:
# ((l1, l2) орбиты, вес), l3 = 1 - l1 - l2. Веса нормированы на площадь 1.
_TRIANGLE_RULES = {
    1: [((1 / 3, 1 / 3), 1.0)],
    2: [((1 / 6, 1 / 6), 1 / 3)],
    4: [
        ((0.445948490915965, 0.445948490915965), 0.223381589678011),
        ((0.091576213509771, 0.091576213509771), 0.109951743655322),
    ],
    5: [
        ((1 / 3, 1 / 3), 0.225),
        ((0.470142064105115, 0.470142064105115), 0.132394152788506),
        ((0.101286507323456, 0.101286507323456), 0.125939180544827),
    ],
    6: [
        ((0.249286745170910, 0.249286745170910), 0.116786275726379),
        ((0.063089014491502, 0.063089014491502), 0.050844906370207),
        ((0.053145049844817, 0.310352451033784), 0.082851075618374),
    ],
}
_TRIANGLE_RULES[3] = _TRIANGLE_RULES[4]


class DegeneratePolygonError(RuntimeError):
    """Многоугольник или отрезок нулевой меры."""


@dataclass(frozen=True)
class QuadratureRule:
    """Квадратурное правило: точки (N, 2) и веса (N,)."""

    points: np.ndarray
    weights: np.ndarray
    fallback: bool = False

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Интеграл от значений в точках правила (первая ось - точки)."""
        return np.tensordot(self.weights, values, axes=(0, 0))


@dataclass(frozen=True)
class ScaledMonomialBasis:
    """
    Мономы m_a(x) = ((x - x_E)/h_E)^a1 ((y - y_E)/h_E)^a2, |a| <= k,
    в градуированно-лексикографическом порядке.
    """

    center: Tuple[float, float]
    scale: float
    degree: int
    exponents: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "exponents", monomial_exponents(self.degree))

    @property
    def dim(self) -> int:
        return (self.degree + 1) * (self.degree + 2) // 2

    def _scaled(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        X = (points[:, 0] - self.center[0]) / self.scale
        Y = (points[:, 1] - self.center[1]) / self.scale
        return X, Y

    def values(self, points: np.ndarray) -> np.ndarray:
        """
        Значения всех мономов в точках.

        Args:
            points (np.ndarray): Точки формы (N, 2).

        Returns:
            np.ndarray: Массив (N, dim).
        """
        X, Y = self._scaled(points)
        a = self.exponents[:, 0]
        b = self.exponents[:, 1]
        return X[:, None] ** a[None, :] * Y[:, None] ** b[None, :]

    def gradients(self, points: np.ndarray) -> np.ndarray:
        """
        Градиенты мономов (с множителем 1/h_E).

        Returns:
            np.ndarray: Массив (N, dim, 2).
        """
        X, Y = self._scaled(points)
        a = self.exponents[:, 0]
        b = self.exponents[:, 1]
        out = np.zeros((X.size, self.dim, 2))
        out[:, :, 0] = a * _power(X, a - 1) * Y[:, None] ** b
        out[:, :, 1] = b * X[:, None] ** a * _power(Y, b - 1)
        return out / self.scale

    def hessians(self, points: np.ndarray) -> np.ndarray:
        """Вторые производные мономов, массив (N, dim, 2, 2)."""
        X, Y = self._scaled(points)
        a = self.exponents[:, 0]
        b = self.exponents[:, 1]
        out = np.zeros((X.size, self.dim, 2, 2))
        out[:, :, 0, 0] = a * (a - 1) * _power(X, a - 2) * Y[:, None] ** b
        out[:, :, 0, 1] = a * b * _power(X, a - 1) * _power(Y, b - 1)
        out[:, :, 1, 0] = out[:, :, 0, 1]
        out[:, :, 1, 1] = b * (b - 1) * X[:, None] ** a * _power(Y, b - 2)
        return out / self.scale ** 2


def _power(base: np.ndarray, exponents: np.ndarray) -> np.ndarray:
    # отрицательные степени встречаются только с нулевым коэффициентом
    return base[:, None] ** np.maximum(exponents, 0)[None, :]


@lru_cache(maxsize=None)
def _exponents_cached(degree: int) -> Tuple[Tuple[int, int], ...]:
    return tuple((d - j, j) for d in range(degree + 1) for j in range(d + 1))


def monomial_exponents(degree: int) -> np.ndarray:
    """Показатели (a1, a2) мономов степени <= degree."""
    return np.array(_exponents_cached(degree), dtype=int).reshape(-1, 2)


def eval_basis(basis: ScaledMonomialBasis, point: Sequence[float]) -> np.ndarray:
    """Значения базиса в одной точке."""
    return basis.values(np.asarray(point, dtype=float).reshape(1, 2))[0]


def eval_basis_grad(basis: ScaledMonomialBasis, point: Sequence[float]) -> np.ndarray:
    """Градиенты базиса в одной точке, массив (dim, 2)."""
    return basis.gradients(np.asarray(point, dtype=float).reshape(1, 2))[0]


def signed_area(vertices: np.ndarray) -> float:
    """Ориентированная площадь по формуле шнурков."""
    x = vertices[:, 0]
    y = vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(vertices: np.ndarray) -> np.ndarray:
    """Центр масс многоугольника."""
    x = vertices[:, 0]
    y = vertices[:, 1]
    xn = np.roll(x, -1)
    yn = np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if abs(area) <= 0.0:
        raise DegeneratePolygonError("Многоугольник нулевой площади")
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * area)


def gauss_legendre_01(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Правило Гаусса-Лежандра на [0, 1], точное для степени <= order."""
    n = max(1, order // 2 + 1)
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t + 1.0), 0.5 * w


def polygon_monomial_moments(vertices: np.ndarray, basis: ScaledMonomialBasis,
                             up_to_degree: int) -> np.ndarray:
    """
    Точные интегралы мономов по многоугольнику.

    Интеграл X^a Y^b сводится теоремой о дивергенции к контурному
    интегралу h X^{a+1} Y^b n_x/(a+1), который берется по ребрам
    правилом Гаусса достаточного порядка.

    Args:
        vertices (np.ndarray): Вершины (m, 2) против часовой стрелки.
        basis (ScaledMonomialBasis): Базис (центр и масштаб).
        up_to_degree (int): Максимальная степень мономов.

    Returns:
        np.ndarray: Вектор моментов длины (d+1)(d+2)/2.
    """
    vertices = np.asarray(vertices, dtype=float)
    if signed_area(vertices) <= 0.0:
        raise DegeneratePolygonError("Вырожденный или ориентированный по часовой стрелке многоугольник")
    exps = monomial_exponents(up_to_degree)
    t, w = gauss_legendre_01(up_to_degree + 1)
    start = vertices
    end = np.roll(vertices, -1, axis=0)
    # точки (ребро, узел)
    pts = start[:, None, :] + t[None, :, None] * (end - start)[:, None, :]
    X = (pts[..., 0] - basis.center[0]) / basis.scale
    Y = (pts[..., 1] - basis.center[1]) / basis.scale
    dy = (end - start)[:, 1]
    a = exps[:, 0]
    b = exps[:, 1]
    integrand = X[..., None] ** (a + 1) * Y[..., None] ** b / (a + 1)
    return basis.scale * np.einsum("e,n,enk->k", dy, w, integrand)


def _is_star_from(vertices: np.ndarray, point: np.ndarray) -> bool:
    rel = vertices - point
    nxt = np.roll(rel, -1, axis=0)
    cross = rel[:, 0] * nxt[:, 1] - rel[:, 1] * nxt[:, 0]
    return bool(np.all(cross > 0.0))


def _ear_clip(vertices: np.ndarray) -> List[Tuple[int, int, int]]:
    """Триангуляция простого многоугольника (CCW) отсечением ушей."""
    idx = list(range(len(vertices)))
    triangles = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    guard = 0
    while len(idx) > 3 and guard < 10 * len(vertices) ** 2:
        guard += 1
        m = len(idx)
        for j in range(m):
            i0, i1, i2 = idx[j - 1], idx[j], idx[(j + 1) % m]
            a, b, c = vertices[i0], vertices[i1], vertices[i2]
            if cross(a, b, c) <= 0.0:
                continue
            inside = False
            for other in idx:
                if other in (i0, i1, i2):
                    continue
                p = vertices[other]
                if cross(a, b, p) > 0 and cross(b, c, p) > 0 and cross(c, a, p) > 0:
                    inside = True
                    break
            if not inside:
                triangles.append((i0, i1, i2))
                idx.pop(j)
                break
        else:
            raise DegeneratePolygonError("Не удалось триангулировать многоугольник")
    triangles.append(tuple(idx))
    return triangles


def _triangle_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Барицентрические точки (N, 3) и веса (сумма 1) правила на треугольнике."""
    if order in _TRIANGLE_RULES:
        bary, weights = [], []
        for (l1, l2), weight in _TRIANGLE_RULES[order]:
            for p in _permutations((l1, l2, 1.0 - l1 - l2)):
                bary.append(p)
                weights.append(weight)
        return np.array(bary), np.array(weights)
    # Коническое произведение Гаусса-Лежандра для порядков выше таблицы
    u, wu = gauss_legendre_01(order + 1)
    v, wv = gauss_legendre_01(order)
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv) * (1.0 - U) * 2.0
    l1 = U.ravel()
    l2 = (V * (1.0 - U)).ravel()
    return np.column_stack([1.0 - l1 - l2, l1, l2]), W.ravel()


def _permutations(orbit):
    """Различные перестановки барицентрической орбиты."""
    a, b, c = orbit
    unique = {}
    for p in [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]:
        unique.setdefault(tuple(round(v, 12) for v in p), p)
    return list(unique.values())


def polygon_quadrature(vertices: np.ndarray, order: int) -> QuadratureRule:
    """
    Квадратура на многоугольнике, точная для полиномов степени <= order.

    Многоугольник разбивается веером из центра масс (если он виден со всех
    ребер) или отсечением ушей; на каждом треугольнике применяется
    симметричное правило.

    Args:
        vertices (np.ndarray): Вершины (m, 2) против часовой стрелки.
        order (int): Степень точности.

    Returns:
        QuadratureRule: Правило; флаг fallback отмечает отсечение ушей.
    """
    vertices = np.asarray(vertices, dtype=float)
    order = max(int(order), 1)
    bary, bw = _triangle_rule(order)
    centroid = polygon_centroid(vertices)
    if _is_star_from(vertices, centroid):
        nxt = np.roll(vertices, -1, axis=0)
        tri = np.stack([np.broadcast_to(centroid, vertices.shape), vertices, nxt], axis=1)
        fallback = False
    else:
        logger.warning(f"Многоугольник из {len(vertices)} вершин не звездный относительно центра, "
                       f"используется отсечение ушей")
        tri = np.array([vertices[list(t)] for t in _ear_clip(vertices)])
        fallback = True
    # tri: (T, 3, 2)
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    points = np.einsum("qi,tid->tqd", bary, tri).reshape(-1, 2)
    weights = (areas[:, None] * bw[None, :]).ravel()
    return QuadratureRule(points=points, weights=weights, fallback=fallback)


def edge_quadrature(start: Sequence[float], end: Sequence[float], order: int) -> QuadratureRule:
    """
    Правило Гаусса-Лежандра на отрезке.

    Raises:
        DegeneratePolygonError: Отрезок нулевой длины.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    length = float(np.hypot(*(end - start)))
    if length <= 0.0:
        raise DegeneratePolygonError(f"Отрезок нулевой длины в точке {start.tolist()}")
    t, w = gauss_legendre_01(order)
    return QuadratureRule(points=start + t[:, None] * (end - start), weights=w * length)
