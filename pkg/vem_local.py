"""
Модуль локальных операторов виртуальных элементов для линейной упругости.

Для одной многоугольной ячейки строит раскладку степеней свободы,
энергетический проектор, L2-проекторы, стабилизации, локальную матрицу
жесткости и вектор нагрузки, тройную норму и интерполянт.
"""

import os
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy import linalg

from quadrature import (
    DegeneratePolygonError,
    ScaledMonomialBasis,
    gauss_legendre_01,
    polygon_centroid,
    polygon_monomial_moments,
    polygon_quadrature,
    signed_area,
)

# Настройка логирования
os.makedirs("logs", exist_ok=True)
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler("logs/vem_local.log"),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger("vem_local")

VectorField = Callable[[np.ndarray], np.ndarray]

SUPPORTED_DEGREES = (1, 2)
STABILIZATIONS = ("dofi", "dtangent")

PROJECTOR_RESIDUAL = 1e-9
SYMMETRY_TOLERANCE = 1e-11
KERNEL_TOLERANCE = 1e-9
NEGATIVE_TOLERANCE = 1e-11

# Интегралы производных лагранжевых функций ребра по [0, 1]
_EDGE_DERIVATIVE_GRAM = {
    1: np.array([[1.0, -1.0], [-1.0, 1.0]]),
    2: np.array([[7.0, 1.0, -8.0], [1.0, 7.0, -8.0], [-8.0, -8.0, 16.0]]) / 3.0,
}
# Интегралы лагранжевых функций ребра по [0, 1]
_EDGE_MASS_WEIGHTS = {
    1: np.array([0.5, 0.5]),
    2: np.array([1.0, 1.0, 4.0]) / 6.0,
}


class MaterialError(ValueError):
    """Недопустимые параметры материала."""


class UnsupportedDegreeError(ValueError):
    """Степень элемента вне {1, 2}."""


class ProjectorError(RuntimeError):
    """Вырожденная система проектора или невязка ограничений выше порога."""


class LocalAssemblyError(RuntimeError):
    """Локальная матрица жесткости несимметрична или имеет неверное ядро."""

    def __init__(self, message: str, cell_id: Optional[int] = None):
        self.cell_id = cell_id
        prefix = f"ячейка {cell_id}: " if cell_id is not None else ""
        super().__init__(prefix + message)


def lame_from_young_poisson(young: float, poisson: float) -> Tuple[float, float]:
    """
    Параметры Ламе по модулю Юнга и коэффициенту Пуассона.

    Args:
        young (float): Модуль Юнга E > 0.
        poisson (float): Коэффициент Пуассона из (-1, 1/2).

    Returns:
        Tuple[float, float]: (mu, lambda).

    Raises:
        MaterialError: E <= 0 или nu вне (-1, 1/2), в том числе nu = 1/2.
    """
    if not young > 0.0:
        raise MaterialError(f"Модуль Юнга должен быть положительным, получено {young}")
    if not -1.0 < poisson < 0.5:
        raise MaterialError(f"Коэффициент Пуассона должен лежать в (-1, 1/2), получено {poisson}")
    mu = young / (2.0 * (1.0 + poisson))
    lam = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
    return mu, lam


@dataclass(frozen=True)
class Material:
    """Изотропный упругий материал."""

    young: float = 1.0
    poisson: float = 0.35
    density: float = 1.0

    def __post_init__(self):
        lame_from_young_poisson(self.young, self.poisson)
        if not self.density > 0.0:
            raise MaterialError(f"Плотность должна быть положительной, получено {self.density}")

    @property
    def mu(self) -> float:
        return lame_from_young_poisson(self.young, self.poisson)[0]

    @property
    def lam(self) -> float:
        return lame_from_young_poisson(self.young, self.poisson)[1]


@dataclass(frozen=True)
class DofLayout:
    """
    Раскладка локальных степеней свободы.

    Скалярные номера: вершины 0..n-1, середины ребер n..2n-1 (ребро j
    идет от вершины j к j+1), среднее по ячейке 2n (только k = 2).
    Векторная степень свободы: компонента c, скалярный номер s -> c * n_scalar + s.
    """

    degree: int
    n_vertices: int

    def __post_init__(self):
        if self.degree not in SUPPORTED_DEGREES:
            raise UnsupportedDegreeError(f"Поддерживаются степени 1 и 2, получено k = {self.degree}")
        if self.n_vertices < 3:
            raise ValueError(f"Ячейка должна иметь не менее 3 вершин, получено {self.n_vertices}")

    @property
    def n_scalar(self) -> int:
        n, k = self.n_vertices, self.degree
        return n * k + (1 if k == 2 else 0)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_scalar

    @property
    def internal(self) -> Optional[int]:
        return 2 * self.n_vertices if self.degree == 2 else None

    def index(self, component: int, scalar: int) -> int:
        return component * self.n_scalar + scalar

    def edge_nodes(self, j: int) -> List[int]:
        """Скалярные номера узлов ребра j в порядке [начало, конец, середина]."""
        n = self.n_vertices
        nodes = [j, (j + 1) % n]
        if self.degree == 2:
            nodes.append(n + j)
        return nodes

    def boundary_point_dofs(self) -> np.ndarray:
        """Векторные номера всех граничных поточечных степеней свободы."""
        boundary = self.n_vertices * self.degree
        return np.concatenate([np.arange(boundary), self.n_scalar + np.arange(boundary)])


@dataclass(frozen=True)
class CellGeometry:
    vertices: np.ndarray
    area: float
    centroid: np.ndarray
    h: float
    lengths: np.ndarray
    tangents: np.ndarray
    normals: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices + np.roll(self.vertices, -1, axis=0))


def cell_geometry(vertices: np.ndarray) -> CellGeometry:
    """
    Геометрические величины ячейки.

    Raises:
        DegeneratePolygonError: Нулевая площадь, обратная ориентация или ребро нулевой длины.
    """
    vertices = np.asarray(vertices, dtype=float)
    area = signed_area(vertices)
    if not area > 0.0:
        raise DegeneratePolygonError(f"Ориентированная площадь ячейки {area:.3e} <= 0")
    edges = np.roll(vertices, -1, axis=0) - vertices
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    if np.any(lengths <= 0.0):
        raise DegeneratePolygonError("Ребро ячейки нулевой длины")
    tangents = edges / lengths[:, None]
    normals = np.column_stack([tangents[:, 1], -tangents[:, 0]])
    diff = vertices[:, None, :] - vertices[None, :, :]
    h = float(np.sqrt((diff ** 2).sum(axis=-1)).max())
    return CellGeometry(vertices=vertices, area=area, centroid=polygon_centroid(vertices), h=h,
                        lengths=lengths, tangents=tangents, normals=normals)


def _edge_shape(degree: int, t: np.ndarray) -> np.ndarray:
    """Лагранжевы функции ребра в узлах [0, 1, 1/2], массив (len(t), k+1)."""
    if degree == 1:
        return np.column_stack([1.0 - t, t])
    return np.column_stack([(1.0 - t) * (1.0 - 2.0 * t), t * (2.0 * t - 1.0), 4.0 * t * (1.0 - t)])


def _edge_legendre_matrix(trace_degree: int, degree: int) -> np.ndarray:
    """Узловые значения следа -> коэффициенты по сдвинутым многочленам Лежандра на [0, 1]."""
    t, w = gauss_legendre_01(2 * trace_degree)
    legendre = np.polynomial.legendre.legvander(2.0 * t - 1.0, degree)
    shape = _edge_shape(trace_degree, t)
    scale = 2.0 * np.arange(degree + 1) + 1.0
    return scale[:, None] * ((legendre * w[:, None]).T @ shape)


def _stress(gradients: np.ndarray, material: Material) -> Tuple[np.ndarray, np.ndarray]:
    """Деформации и напряжения по градиентам векторных полей (..., 2, 2)."""
    strain = 0.5 * (gradients + np.swapaxes(gradients, -1, -2))
    trace = strain[..., 0, 0] + strain[..., 1, 1]
    stress = 2.0 * material.mu * strain + material.lam * trace[..., None, None] * np.eye(2)
    return strain, stress


def _vector_gradients(basis: ScaledMonomialBasis, points: np.ndarray) -> np.ndarray:
    """Градиенты векторных мономов m_a e_c: массив (N, 2*dim, 2, 2), [i, j] = d_j p_i."""
    scalar = basis.gradients(points)
    nk = basis.dim
    out = np.zeros((scalar.shape[0], 2 * nk, 2, 2))
    out[:, :nk, 0, :] = scalar
    out[:, nk:, 1, :] = scalar
    return out


def polynomial_dofs(geom: CellGeometry, basis: ScaledMonomialBasis, layout: DofLayout) -> np.ndarray:
    """
    Степени свободы векторных мономов.

    Returns:
        np.ndarray: Матрица (n_dofs, 2*dim), столбец beta - степени свободы p_beta.
    """
    n, nk = layout.n_vertices, basis.dim
    scalar = np.zeros((layout.n_scalar, nk))
    scalar[:n] = basis.values(geom.vertices)
    if layout.degree == 2:
        scalar[n:2 * n] = basis.values(geom.midpoints)
        scalar[2 * n] = polygon_monomial_moments(geom.vertices, basis, basis.degree) / geom.area
    return linalg.block_diag(scalar, scalar)


def monomial_stiffness(geom: CellGeometry, basis: ScaledMonomialBasis, material: Material) -> np.ndarray:
    """Точная матрица G[a, b] = int_E sigma(p_a) : eps(p_b)."""
    rule = polygon_quadrature(geom.vertices, max(2 * (basis.degree - 1), 1))
    strain, stress = _stress(_vector_gradients(basis, rule.points), material)
    return np.einsum("q,qaij,qbij->ab", rule.weights, stress, strain)


def boundary_constraints(geom: CellGeometry, layout: DofLayout) -> np.ndarray:
    """Функционалы int_{dE} v_x, int_{dE} v_y и int_{dE} v.t на степенях свободы, (3, n_dofs)."""
    weights = _EDGE_MASS_WEIGHTS[layout.degree]
    out = np.zeros((3, layout.n_dofs))
    for j in range(layout.n_vertices):
        nodes = layout.edge_nodes(j)
        lw = geom.lengths[j] * weights
        tx, ty = geom.tangents[j]
        for c in range(2):
            idx = [layout.index(c, s) for s in nodes]
            out[c, idx] += lw
            out[2, idx] += lw * (tx if c == 0 else ty)
    return out


def _galerkin_rhs(geom: CellGeometry, basis: ScaledMonomialBasis, material: Material,
                  layout: DofLayout) -> np.ndarray:
    """
    Матрица B[beta, i] = a^E(phi_i, p_beta), вычисленная по степеням свободы
    интегрированием по частям.
    """
    k, nk = layout.degree, basis.dim
    out = np.zeros((2 * nk, layout.n_dofs))
    t, w = gauss_legendre_01(2 * k)
    shape = _edge_shape(k, t)
    for j in range(layout.n_vertices):
        start = geom.vertices[j]
        end = geom.vertices[(j + 1) % layout.n_vertices]
        points = start + t[:, None] * (end - start)
        _, stress = _stress(_vector_gradients(basis, points), material)
        traction = stress @ geom.normals[j]
        nodes = layout.edge_nodes(j)
        for c in range(2):
            idx = [layout.index(c, s) for s in nodes]
            out[:, idx] += geom.lengths[j] * np.einsum("q,qb,ql->bl", w, traction[:, :, c], shape)
    if k == 2:
        # div sigma(p) постоянна для квадратичных p
        hess = basis.hessians(geom.centroid.reshape(1, 2))[0]
        laplace = hess[:, 0, 0] + hess[:, 1, 1]
        mu, lam = material.mu, material.lam
        for comp in range(2):
            block = slice(comp * nk, (comp + 1) * nk)
            for i in range(2):
                div_sigma = (mu + lam) * hess[:, i, comp]
                if i == comp:
                    div_sigma = div_sigma + mu * laplace
                out[block, layout.index(i, layout.internal)] -= geom.area * div_sigma
    return out


def energy_projector(geom: CellGeometry, basis: ScaledMonomialBasis, material: Material,
                     layout: DofLayout, residual_tol: float = PROJECTOR_RESIDUAL,
                     dofs: Optional[np.ndarray] = None,
                     stiffness: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Энергетический проектор на векторные многочлены степени k.

    Решает окаймленную систему [[G, A^T], [A, 0]] с правыми частями
    a^E(phi_i, p_beta) и ограничениями на средние по границе и на
    циркуляцию вдоль касательной. Факторизация одна на ячейку.

    Args:
        geom (CellGeometry): Геометрия ячейки.
        basis (ScaledMonomialBasis): Масштабированный базис степени k.
        material (Material): Материал.
        layout (DofLayout): Раскладка степеней свободы.
        residual_tol (float): Допустимая относительная невязка.
        dofs (np.ndarray, optional): Готовая матрица polynomial_dofs.
        stiffness (np.ndarray, optional): Готовая матрица monomial_stiffness.

    Returns:
        Tuple[np.ndarray, np.ndarray]: PiStar (2*dim, n_dofs) и PiDof (n_dofs, n_dofs).

    Raises:
        ProjectorError: Вырожденная система или невязка выше порога.
    """
    D = polynomial_dofs(geom, basis, layout) if dofs is None else dofs
    G = monomial_stiffness(geom, basis, material) if stiffness is None else stiffness
    Dc = boundary_constraints(geom, layout)
    A = Dc @ D
    m = G.shape[0]
    bordered = np.zeros((m + 3, m + 3))
    bordered[:m, :m] = G
    bordered[:m, m:] = A.T
    bordered[m:, :m] = A
    rhs = np.vstack([_galerkin_rhs(geom, basis, material, layout), Dc])

    lu, piv = linalg.lu_factor(bordered, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= np.finfo(float).eps * pivots.max() * (m + 3):
        raise ProjectorError(f"Вырожденная система проектора (ведущие элементы {pivots.min():.3e})")
    solution = linalg.lu_solve((lu, piv), rhs)
    residual = np.linalg.norm(bordered @ solution - rhs) / max(np.linalg.norm(rhs), 1.0)
    constraint = np.linalg.norm(A @ solution[:m] - Dc) / max(np.linalg.norm(Dc), 1.0)
    if residual > residual_tol or constraint > residual_tol:
        raise ProjectorError(f"Невязка проектора {max(residual, constraint):.3e} > {residual_tol:.1e}")
    pi_star = solution[:m]
    return pi_star, D @ pi_star


@dataclass(frozen=True)
class L2Projectors:
    """
    Коэффициенты L2-проекций по векторному мономиальному базису.

    Attributes:
        pi0_k: Проекция на [P_k]^2, (2*dim_k, n_dofs).
        pi0_1: Проекция на [P_1]^2, (6, n_dofs).
        pi0_km2: Проекция на [P_{k-2}]^2; пустая при k = 1.
    """

    pi0_k: np.ndarray
    pi0_1: np.ndarray
    pi0_km2: np.ndarray


def monomial_mass(geom: CellGeometry, basis: ScaledMonomialBasis) -> np.ndarray:
    rule = polygon_quadrature(geom.vertices, 2 * basis.degree)
    values = basis.values(rule.points)
    return np.einsum("q,qa,qb->ab", rule.weights, values, values)


def l2_projectors(geom: CellGeometry, basis: ScaledMonomialBasis, layout: DofLayout,
                  pi_star: np.ndarray) -> L2Projectors:
    """
    L2-проекторы обогащенного пространства.

    Моменты против P_{k-2} берутся из внутренних степеней свободы,
    остальные моменты совпадают с моментами энергетической проекции.

    Raises:
        ProjectorError: Вырожденная матрица масс мономов или ее угловой блок.
    """
    nk = basis.dim
    H = monomial_mass(geom, basis)
    pi0_k, pi0_1, pi0_km2 = [], [], []
    try:
        factor = linalg.cho_factor(H)
        for c in range(2):
            moments = H @ pi_star[c * nk:(c + 1) * nk]
            if layout.degree == 2:
                mean = np.zeros(layout.n_dofs)
                mean[layout.index(c, layout.internal)] = 1.0
                moments[0] = geom.area * mean
                pi0_km2.append(mean[None, :])
                pi0_1.append(linalg.solve(H[:3, :3], moments[:3], assume_a="pos"))
            coefs = linalg.cho_solve(factor, moments)
            pi0_k.append(coefs)
            if layout.degree == 1:
                pi0_1.append(coefs)
    except linalg.LinAlgError as exc:
        raise ProjectorError(f"Вырожденная матрица масс мономов: {exc}") from exc
    empty = np.zeros((0, layout.n_dofs))
    return L2Projectors(pi0_k=np.vstack(pi0_k), pi0_1=np.vstack(pi0_1),
                        pi0_km2=np.vstack(pi0_km2) if pi0_km2 else empty)


def edge_l2_projector(start, end, trace_values: np.ndarray, degree: int) -> np.ndarray:
    """
    L2-проекция следа на многочлены степени degree на ребре.

    Args:
        start, end: Концы ребра.
        trace_values (np.ndarray): Значения следа в узлах [начало, конец, середина]
            (k+1 строк, по столбцу на компоненту).
        degree (int): Степень проекции (k-1).

    Returns:
        np.ndarray: Коэффициенты по сдвинутым многочленам Лежандра P_j(2t-1), (degree+1, ...).

    Raises:
        DegeneratePolygonError: Ребро нулевой длины.
    """
    length = float(np.hypot(*(np.asarray(end, dtype=float) - np.asarray(start, dtype=float))))
    if length <= 0.0:
        raise DegeneratePolygonError("Ребро нулевой длины")
    values = np.asarray(trace_values, dtype=float)
    return _edge_legendre_matrix(len(values) - 1, degree) @ values


def triple_norm_matrix(geom: CellGeometry, layout: DofLayout) -> np.ndarray:
    """Матрица T квадратичной формы |||v|||^2 = v^T T v."""
    k = layout.degree
    out = np.zeros((layout.n_dofs, layout.n_dofs))
    if k == 2:
        for c in range(2):
            i = layout.index(c, layout.internal)
            out[i, i] += geom.area
    E = _edge_legendre_matrix(k, k - 1)
    gram = E.T @ np.diag(1.0 / (2.0 * np.arange(k) + 1.0)) @ E
    for j in range(layout.n_vertices):
        local = geom.h * geom.lengths[j] * gram
        for c in range(2):
            idx = [layout.index(c, s) for s in layout.edge_nodes(j)]
            out[np.ix_(idx, idx)] += local
    return out


def triple_norm(geom: CellGeometry, layout: DofLayout, dofs: np.ndarray) -> float:
    """Тройная норма |||v|||_{k,E} по вектору степеней свободы."""
    dofs = np.asarray(dofs, dtype=float)
    return float(np.sqrt(max(dofs @ triple_norm_matrix(geom, layout) @ dofs, 0.0)))


def stab_derivative(geom: CellGeometry, layout: DofLayout) -> np.ndarray:
    """Стабилизация h_E int_{dE} d_s w . d_s v по известным следам на ребрах."""
    gram = _EDGE_DERIVATIVE_GRAM[layout.degree]
    out = np.zeros((layout.n_dofs, layout.n_dofs))
    for j in range(layout.n_vertices):
        local = (geom.h / geom.lengths[j]) * gram
        for c in range(2):
            idx = [layout.index(c, s) for s in layout.edge_nodes(j)]
            out[np.ix_(idx, idx)] += local
    return out


def stab_classic(geom: CellGeometry, layout: DofLayout) -> np.ndarray:
    """Единичная матрица на граничных поточечных степенях свободы, ноль на моментах."""
    diag = np.zeros(layout.n_dofs)
    diag[layout.boundary_point_dofs()] = 1.0
    return np.diag(diag)


def stabilization(geom: CellGeometry, layout: DofLayout, kind: str) -> np.ndarray:
    if kind == "dofi":
        return stab_classic(geom, layout)
    if kind == "dtangent":
        return stab_derivative(geom, layout)
    raise ValueError(f"Неизвестная стабилизация '{kind}', ожидалось одно из {STABILIZATIONS}")


def check_stiffness(K: np.ndarray, cell_id: Optional[int] = None,
                    symmetry_tol: float = SYMMETRY_TOLERANCE) -> np.ndarray:
    """
    Проверка симметрии и ядра локальной матрицы жесткости.

    Returns:
        np.ndarray: Симметризованная матрица.

    Raises:
        LocalAssemblyError: Несимметричность, отрицательные собственные значения
            или размерность ядра, отличная от 3.
    """
    scale = np.abs(K).max()
    asym = np.abs(K - K.T).max() / scale if scale > 0 else 0.0
    if asym > symmetry_tol:
        raise LocalAssemblyError(f"несимметричная матрица жесткости ({asym:.3e})", cell_id)
    K = 0.5 * (K + K.T)
    eig = linalg.eigvalsh(K)
    top = eig[-1]
    if eig[0] < -NEGATIVE_TOLERANCE * top:
        raise LocalAssemblyError(f"отрицательное собственное значение {eig[0]:.3e}", cell_id)
    kernel = int(np.count_nonzero(eig < KERNEL_TOLERANCE * top))
    if kernel != 3:
        raise LocalAssemblyError(f"размерность ядра {kernel} вместо 3", cell_id)
    return K


def local_stiffness(geom: CellGeometry, basis: ScaledMonomialBasis, material: Material,
                    layout: DofLayout, stab: str = "dofi",
                    projector: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                    cell_id: Optional[int] = None, check: bool = True,
                    symmetry_tol: float = SYMMETRY_TOLERANCE) -> np.ndarray:
    """
    Локальная матрица жесткости K = PiStar^T G PiStar + (I - PiDof)^T S (I - PiDof).

    Raises:
        LocalAssemblyError: Нарушены симметрия или ядро (при check=True).
    """
    G = monomial_stiffness(geom, basis, material)
    if projector is None:
        projector = energy_projector(geom, basis, material, layout, stiffness=G)
    pi_star, pi_dof = projector
    K = combine_stiffness(G, pi_star, pi_dof, stabilization(geom, layout, stab))
    return check_stiffness(K, cell_id, symmetry_tol) if check else 0.5 * (K + K.T)


def combine_stiffness(G: np.ndarray, pi_star: np.ndarray, pi_dof: np.ndarray,
                      S: np.ndarray) -> np.ndarray:
    complement = np.eye(pi_dof.shape[0]) - pi_dof
    return pi_star.T @ G @ pi_star + complement.T @ S @ complement


def local_load(geom: CellGeometry, basis: ScaledMonomialBasis, layout: DofLayout,
               material: Material, load: VectorField, pi0_1: np.ndarray) -> np.ndarray:
    """
    Вектор нагрузки F_i = int_E rho f . Pi0_1 phi_i.

    Args:
        load (VectorField): f(points (N, 2)) -> (N, 2).
        pi0_1 (np.ndarray): Матрица L2-проекции на [P_1]^2, (6, n_dofs).
    """
    rule = polygon_quadrature(geom.vertices, 2 * layout.degree + 2)
    values = material.density * np.asarray(load(rule.points), dtype=float).reshape(-1, 2)
    linear = basis.values(rule.points)[:, :3]
    moments = np.einsum("q,qc,qa->ca", rule.weights, values, linear)
    return moments.ravel() @ pi0_1


def interpolate_local(geom: CellGeometry, layout: DofLayout, displacement: VectorField) -> np.ndarray:
    """Степени свободы интерполянта гладкого поля displacement(points (N, 2)) -> (N, 2)."""
    n = layout.n_vertices
    scalar = np.zeros((layout.n_scalar, 2))
    scalar[:n] = np.asarray(displacement(geom.vertices), dtype=float).reshape(-1, 2)
    if layout.degree == 2:
        scalar[n:2 * n] = np.asarray(displacement(geom.midpoints), dtype=float).reshape(-1, 2)
        rule = polygon_quadrature(geom.vertices, 2 * layout.degree + 2)
        scalar[2 * n] = rule.integrate(np.asarray(displacement(rule.points), dtype=float).reshape(-1, 2)) / geom.area
    return scalar.T.ravel()


def rigid_modes(geom: CellGeometry, layout: DofLayout) -> np.ndarray:
    """Степени свободы сдвигов (1, 0), (0, 1) и поворота (-(y - y_E), x - x_E), (3, n_dofs)."""
    xc, yc = geom.centroid

    def translation_x(p):
        return np.column_stack([np.ones(len(p)), np.zeros(len(p))])

    def translation_y(p):
        return np.column_stack([np.zeros(len(p)), np.ones(len(p))])

    def rotation(p):
        return np.column_stack([-(p[:, 1] - yc), p[:, 0] - xc])

    return np.vstack([interpolate_local(geom, layout, f) for f in (translation_x, translation_y, rotation)])


@dataclass
class LocalOperators:
    """Все локальные операторы ячейки."""

    PiStar: np.ndarray
    PiDof: np.ndarray
    Pi0: L2Projectors
    K: np.ndarray
    S: np.ndarray
    M_edge: List[np.ndarray] = field(default_factory=list)


class VirtualElement:
    """
    Виртуальный элемент на одной ячейке: кеширует геометрию, базис,
    проекторы и матрицу жесткости для сборки и вычисления ошибок.
    """

    def __init__(self, vertices: np.ndarray, degree: int, material: Material,
                 stab: str = "dofi", cell_id: Optional[int] = None,
                 projector_residual: float = PROJECTOR_RESIDUAL,
                 symmetry_tol: float = SYMMETRY_TOLERANCE, check: bool = True):
        if stab not in STABILIZATIONS:
            raise ValueError(f"Неизвестная стабилизация '{stab}', ожидалось одно из {STABILIZATIONS}")
        self.geom = cell_geometry(vertices)
        self.layout = DofLayout(degree, self.geom.n_vertices)
        self.material = material
        self.stab = stab
        self.cell_id = cell_id
        self.projector_residual = projector_residual
        self.symmetry_tol = symmetry_tol
        self.check = check
        self.basis = ScaledMonomialBasis(center=tuple(self.geom.centroid), scale=self.geom.h, degree=degree)

    @property
    def degree(self) -> int:
        return self.layout.degree

    @property
    def n_dofs(self) -> int:
        return self.layout.n_dofs

    @cached_property
    def dofs_of_monomials(self) -> np.ndarray:
        return polynomial_dofs(self.geom, self.basis, self.layout)

    @cached_property
    def G(self) -> np.ndarray:
        return monomial_stiffness(self.geom, self.basis, self.material)

    @cached_property
    def projector(self) -> Tuple[np.ndarray, np.ndarray]:
        try:
            return energy_projector(self.geom, self.basis, self.material, self.layout,
                                    residual_tol=self.projector_residual,
                                    dofs=self.dofs_of_monomials, stiffness=self.G)
        except ProjectorError as exc:
            logger.error(f"Ячейка {self.cell_id}: {exc}")
            raise

    @property
    def pi_star(self) -> np.ndarray:
        return self.projector[0]

    @property
    def pi_dof(self) -> np.ndarray:
        return self.projector[1]

    @cached_property
    def l2(self) -> L2Projectors:
        return l2_projectors(self.geom, self.basis, self.layout, self.pi_star)

    @cached_property
    def S(self) -> np.ndarray:
        return stabilization(self.geom, self.layout, self.stab)

    @cached_property
    def K(self) -> np.ndarray:
        K = combine_stiffness(self.G, self.pi_star, self.pi_dof, self.S)
        if not self.check:
            return 0.5 * (K + K.T)
        try:
            return check_stiffness(K, self.cell_id, self.symmetry_tol)
        except LocalAssemblyError as exc:
            logger.error(f"Сборка локальной матрицы не прошла проверку: {exc}")
            raise

    def edge_projectors(self) -> List[np.ndarray]:
        E = _edge_legendre_matrix(self.degree, self.degree - 1)
        return [E for _ in range(self.geom.n_vertices)]

    def operators(self) -> LocalOperators:
        return LocalOperators(PiStar=self.pi_star, PiDof=self.pi_dof, Pi0=self.l2,
                              K=self.K, S=self.S, M_edge=self.edge_projectors())

    def load(self, load: VectorField) -> np.ndarray:
        return local_load(self.geom, self.basis, self.layout, self.material, load, self.l2.pi0_1)

    def interpolate(self, displacement: VectorField) -> np.ndarray:
        return interpolate_local(self.geom, self.layout, displacement)

    def rigid_modes(self) -> np.ndarray:
        return rigid_modes(self.geom, self.layout)

    def triple_norm(self, dofs: np.ndarray) -> float:
        return triple_norm(self.geom, self.layout, dofs)

    def polynomial_values(self, coefs: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Значения векторного многочлена (коэффициенты по блокам компонент) в точках, (N, 2)."""
        nk = self.basis.dim
        values = self.basis.values(points)
        return np.column_stack([values @ coefs[:nk], values @ coefs[nk:2 * nk]])

    def polynomial_gradients(self, coefs: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Градиенты векторного многочлена, (N, 2, 2), [i, j] = d_j u_i."""
        nk = self.basis.dim
        grads = self.basis.gradients(points)
        return np.stack([np.einsum("qad,a->qd", grads, coefs[:nk]),
                         np.einsum("qad,a->qd", grads, coefs[nk:2 * nk])], axis=1)
