"""
Модуль глобальной задачи: нумерация степеней свободы, сборка разреженной
системы, исключение условий Дирихле и решение линейной системы.
"""

import os
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from geometry import Mesh
from quadrature import DegeneratePolygonError
from vem_local import (
    LocalAssemblyError,
    Material,
    ProjectorError,
    VectorField,
    VirtualElement,
)

# Настройка логирования
os.makedirs("logs", exist_ok=True)
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler("logs/solver.log"),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger("solver")

SOLVER_RESIDUAL = 1e-10
CG_RTOL = 1e-12
DEFAULT_DUMP_PATH = "output/failed_system.txt"


class SolverError(RuntimeError):
    """Сбой факторизации, несходимость CG или невязка выше порога."""

    def __init__(self, message: str, dump_path: Optional[str] = None):
        self.dump_path = dump_path
        suffix = f" (система сохранена в {dump_path})" if dump_path else ""
        super().__init__(message + suffix)


@dataclass
class GlobalDofMap:
    """
    Глобальная нумерация.

    Скалярные узлы: вершины 0..nv-1, затем ребра (k = 2) в каноническом
    порядке, затем средние по ячейкам (k = 2). Векторная степень свободы
    компоненты c скалярного узла s имеет номер c * n_scalar + s.
    """

    degree: int
    n_scalar: int
    cell_dofs: List[np.ndarray]
    boundary: np.ndarray
    node_points: np.ndarray
    n_vertices: int
    n_edges: int

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_scalar

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.boundary] = False
        return np.flatnonzero(mask)


def build_dof_map(mesh: Mesh, degree: int) -> GlobalDofMap:
    """
    Детерминированная глобальная нумерация степеней свободы.

    Args:
        mesh (Mesh): Корректная сетка.
        degree (int): Степень k.

    Returns:
        GlobalDofMap: Локально-глобальные массивы и граничные степени свободы.
    """
    nv = mesh.n_vertices
    edges = mesh.canonical_edges if degree == 2 else []
    edge_id = {e: i for i, e in enumerate(edges)}
    n_edges = len(edges)
    n_scalar = nv + (n_edges + mesh.n_cells if degree == 2 else 0)

    node_points = [mesh.vertices]
    boundary_scalar = list(np.flatnonzero(mesh.boundary_vertex_flags))
    if degree == 2:
        ends = np.array(edges, dtype=int).reshape(-1, 2)
        node_points.append(0.5 * (mesh.vertices[ends[:, 0]] + mesh.vertices[ends[:, 1]]))
        node_points.append(np.array([mesh.cell_coords(c).mean(axis=0) for c in range(mesh.n_cells)]))
        boundary_scalar += [nv + i for i, e in enumerate(edges) if len(mesh.edge_cells[e]) == 1]

    cell_dofs = []
    for c, cell in enumerate(mesh.cells):
        m = len(cell)
        scalar = list(cell)
        if degree == 2:
            scalar += [nv + edge_id[(min(cell[j], cell[(j + 1) % m]), max(cell[j], cell[(j + 1) % m]))]
                       for j in range(m)]
            scalar.append(nv + n_edges + c)
        scalar = np.array(scalar, dtype=np.int64)
        cell_dofs.append(np.concatenate([scalar, scalar + n_scalar]))

    boundary_scalar = np.array(sorted(boundary_scalar), dtype=np.int64)
    boundary = np.concatenate([boundary_scalar, boundary_scalar + n_scalar])
    logger.debug(f"Нумерация k={degree}: {2 * n_scalar} степеней свободы, {len(boundary)} граничных")
    return GlobalDofMap(degree=degree, n_scalar=n_scalar, cell_dofs=cell_dofs, boundary=boundary,
                        node_points=np.vstack(node_points), n_vertices=nv, n_edges=n_edges)


def build_elements(mesh: Mesh, degree: int, material: Material, stab: str = "dofi",
                   check: bool = True, **tolerances) -> List[VirtualElement]:
    """
    Виртуальные элементы всех ячеек сетки.

    Raises:
        LocalAssemblyError: Вырожденная или обратно ориентированная ячейка (с номером ячейки).
    """
    elements = []
    for c in range(mesh.n_cells):
        try:
            elements.append(VirtualElement(mesh.cell_coords(c), degree, material, stab=stab,
                                           cell_id=c, check=check, **tolerances))
        except DegeneratePolygonError as exc:
            logger.error(f"Ячейка {c} отклонена: {exc}")
            raise LocalAssemblyError(str(exc), c) from exc
    return elements


@dataclass(frozen=True)
class SparseSystem:
    """Собранная система A u = b до учета граничных условий."""

    A: sparse.csr_matrix
    b: np.ndarray


def assemble(mesh: Mesh, dof_map: GlobalDofMap, material: Material, degree: int,
             stab: str = "dofi", load: Optional[VectorField] = None,
             elements: Optional[Sequence[VirtualElement]] = None) -> SparseSystem:
    """
    Сборка глобальной матрицы жесткости и вектора нагрузки.

    Вклады ячеек складываются в порядке номеров ячеек.

    Args:
        mesh (Mesh): Сетка.
        dof_map (GlobalDofMap): Нумерация.
        material (Material): Материал.
        degree (int): Степень k.
        stab (str): 'dofi' или 'dtangent'.
        load (VectorField, optional): Объемная сила f; None означает f = 0.
        elements (Sequence[VirtualElement], optional): Готовые элементы; их
            стабилизация и степень должны совпадать с stab и degree.

    Returns:
        SparseSystem: Симметричная система.

    Raises:
        LocalAssemblyError: Сбой локальной сборки с номером ячейки.
        ValueError: Готовые элементы не согласованы с stab, degree или сеткой.
    """
    if elements is None:
        elements = build_elements(mesh, degree, material, stab)
    else:
        if len(elements) != mesh.n_cells:
            raise ValueError(f"Передано {len(elements)} элементов для {mesh.n_cells} ячеек")
        for element in elements:
            if element.stab != stab or element.degree != degree:
                raise ValueError(f"Элемент ячейки {element.cell_id} собран с stab='{element.stab}', "
                                 f"k={element.degree}, ожидалось stab='{stab}', k={degree}")
    n = dof_map.n_dofs
    rows, cols, vals = [], [], []
    b = np.zeros(n)
    for c, element in enumerate(elements):
        idx = dof_map.cell_dofs[c]
        try:
            K = element.K
            F = element.load(load) if load is not None else None
        except (ProjectorError, DegeneratePolygonError) as exc:
            logger.error(f"Сбой локальной сборки в ячейке {c}: {exc}")
            raise LocalAssemblyError(str(exc), c) from exc
        m = len(idx)
        rows.append(np.repeat(idx, m))
        cols.append(np.tile(idx, m))
        vals.append(K.ravel())
        if F is not None:
            np.add.at(b, idx, F)
    A = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()
    logger.info(f"Собрана система: {n} степеней свободы, {A.nnz} ненулевых элементов")
    return SparseSystem(A=A, b=b)


@dataclass
class ReducedSystem:
    """Система на свободных степенях свободы после исключения Дирихле."""

    A: sparse.csr_matrix
    b: np.ndarray
    free: np.ndarray
    g: np.ndarray

    @property
    def size(self) -> int:
        return len(self.free)

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        """Полный вектор: свободные значения и граничные данные."""
        u = self.g.copy()
        u[self.free] = u_free
        return u


def boundary_values(dof_map: GlobalDofMap, g: Optional[VectorField]) -> np.ndarray:
    values = np.zeros(dof_map.n_dofs)
    if g is None:
        return values
    scalar = dof_map.boundary[:len(dof_map.boundary) // 2]
    traces = np.asarray(g(dof_map.node_points[scalar]), dtype=float).reshape(-1, 2)
    values[scalar] = traces[:, 0]
    values[scalar + dof_map.n_scalar] = traces[:, 1]
    return values


def apply_dirichlet(system: SparseSystem, dof_map: GlobalDofMap,
                    g: Optional[VectorField] = None) -> ReducedSystem:
    """
    Симметричное исключение граничных степеней свободы.

    Args:
        system (SparseSystem): Собранная система (не изменяется).
        dof_map (GlobalDofMap): Нумерация.
        g (VectorField, optional): Граничное поле; None означает g = 0.

    Returns:
        ReducedSystem: A_ff u_f = b_f - A_fb g_b.
    """
    values = boundary_values(dof_map, g)
    free = dof_map.free
    A_free = system.A[free]
    b = system.b[free] - A_free[:, dof_map.boundary] @ values[dof_map.boundary]
    return ReducedSystem(A=A_free[:, free].tocsr(), b=b, free=free, g=values)


@dataclass(frozen=True)
class SolverReport:
    method: str
    iterations: int
    residual: float


@dataclass
class Solution:
    u: np.ndarray
    report: SolverReport


def dump_system(reduced: ReducedSystem, path: Union[str, Path]) -> str:
    """
    Запись системы в формате %%sym-coord: нижний треугольник, номера с 1,
    затем секция %%rhs с правой частью.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lower = sparse.tril(reduced.A, format="coo")
    lines = ["%%sym-coord", f"{reduced.size} {reduced.size} {lower.nnz}"]
    lines += [f"{i + 1} {j + 1} {v:.17g}" for i, j, v in zip(lower.row, lower.col, lower.data)]
    lines.append("%%rhs")
    lines += [f"{v:.17g}" for v in reduced.b]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Система размера {reduced.size} сохранена в {path}")
    return str(path)


def _relative_residual(A, u: np.ndarray, b: np.ndarray) -> float:
    norm_b = np.linalg.norm(b)
    r = np.linalg.norm(A @ u - b)
    return float(r / norm_b) if norm_b > 0.0 else float(r)


def _solve_cg(A, b: np.ndarray, rtol: float):
    diag = A.diagonal()
    if np.any(diag <= 0.0):
        raise SolverError("Неположительная диагональ: предобусловливатель Якоби невозможен")
    preconditioner = splinalg.LinearOperator(A.shape, matvec=lambda x: x / diag)
    iterations = [0]

    def count(_):
        iterations[0] += 1

    u, info = splinalg.cg(A, b, rtol=rtol, maxiter=20 * A.shape[0], M=preconditioner, callback=count)
    return u, info, iterations[0]


def solve(reduced: ReducedSystem, method: str = "direct", residual_tol: float = SOLVER_RESIDUAL,
          cg_rtol: float = CG_RTOL, dump_path: Union[str, Path] = DEFAULT_DUMP_PATH) -> Solution:
    """
    Решение приведенной системы.

    Прямой разреженный LU; при сбое факторизации или большой невязке
    используется CG с диагональным предобусловливателем.

    Args:
        reduced (ReducedSystem): Приведенная система.
        method (str): 'direct' или 'cg'.
        residual_tol (float): Порог относительной невязки.
        cg_rtol (float): Относительная точность CG.
        dump_path: Куда сохранить систему при сбое.

    Returns:
        Solution: Полный вектор и отчет решателя.

    Raises:
        SolverError: Ни один путь не дал невязку ниже порога.
    """
    if reduced.size == 0:
        return Solution(u=reduced.g.copy(), report=SolverReport("empty", 0, 0.0))
    A, b = reduced.A, reduced.b

    if method == "direct":
        try:
            u = splinalg.splu(A.tocsc()).solve(b)
            residual = _relative_residual(A, u, b)
            if residual <= residual_tol:
                logger.info(f"Прямое решение: n = {reduced.size}, невязка {residual:.3e}")
                return Solution(u=reduced.expand(u), report=SolverReport("direct", 1, residual))
            logger.warning(f"Невязка прямого решения {residual:.3e} > {residual_tol:.1e}, переход к CG")
        except RuntimeError as exc:
            logger.warning(f"Сбой факторизации ({exc}), переход к CG")
    elif method != "cg":
        raise ValueError(f"Неизвестный метод решения '{method}'")

    u, info, iterations = _solve_cg(A, b, cg_rtol)
    residual = _relative_residual(A, u, b)
    if info != 0 or residual > residual_tol:
        path = dump_system(reduced, dump_path)
        logger.error(f"CG не сошелся: info={info}, итераций {iterations}, невязка {residual:.3e}")
        raise SolverError(f"CG не сошелся за {iterations} итераций, невязка {residual:.3e}", path)
    logger.info(f"CG: n = {reduced.size}, {iterations} итераций, невязка {residual:.3e}")
    return Solution(u=reduced.expand(u), report=SolverReport("cg", iterations, residual))


def solve_elasticity(mesh: Mesh, degree: int, material: Material, stab: str = "dofi",
                     load: Optional[VectorField] = None, dirichlet: Optional[VectorField] = None,
                     method: str = "direct", residual_tol: float = SOLVER_RESIDUAL,
                     cg_rtol: float = CG_RTOL, dump_path: Union[str, Path] = DEFAULT_DUMP_PATH,
                     **tolerances):
    """
    Нумерация, сборка, граничные условия и решение на одной сетке.

    Returns:
        Tuple[GlobalDofMap, List[VirtualElement], Solution]
    """
    dof_map = build_dof_map(mesh, degree)
    elements = build_elements(mesh, degree, material, stab, **tolerances)
    system = assemble(mesh, dof_map, material, degree, stab, load, elements)
    reduced = apply_dirichlet(system, dof_map, dirichlet)
    solution = solve(reduced, method=method, residual_tol=residual_tol, cg_rtol=cg_rtol,
                     dump_path=dump_path)
    return dof_map, elements, solution
