"""
Модуль геометрии: многоугольные сетки, генераторы семейств сеток,
проверка и метрики сеток, чтение и запись сеток в текстовом формате.
"""

import os
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Voronoi, cKDTree
from scipy.spatial.distance import pdist

from quadrature import polygon_centroid, signed_area

# Настройка логирования
os.makedirs("logs", exist_ok=True)
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler("logs/geometry.log"),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger("geometry")

Point2 = Tuple[float, float]
Cell = Tuple[int, ...]

DOMAIN_AREAS = {"unit_square": 1.0, "lshape": 3.0}

MESH_KINDS = {
    "unit_square": ("triangles", "deformed_triangles_midpoints", "deformed_squares",
                    "squares", "voronoi", "glued_voronoi"),
    "lshape": ("triangles", "deformed_triangles_midpoints", "deformed_squares",
               "squares", "voronoi", "mixed"),
}

LLOYD_ITERATIONS = 3
SEED_PERTURBATION = 0.25
DEFORMATION = 0.2
MIN_SEPARATION = 1e-14
DEFAULT_SMALL_EDGE_FRACTION = 1.0 / 50.0
AREA_TOLERANCE = 1e-10
MERGE_TOLERANCE = 1e-10


class UnsupportedMeshError(ValueError):
    """Неизвестная комбинация области и семейства сеток."""


class MeshFormatError(ValueError):
    """Ошибка разбора файла сетки."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"строка {line}: " if line is not None else ""
        super().__init__(prefix + message)


class MeshGenerationError(RuntimeError):
    """Генератор построил вырожденную ячейку."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Многоугольная сетка.

    Attributes:
        vertices (np.ndarray): Координаты вершин (nv, 2).
        cells (Tuple[Cell, ...]): Ячейки, номера вершин против часовой стрелки.
        boundary_vertex_flags (np.ndarray): Признак граничной вершины.
        domain (str): Имя области.
        domain_area (float, optional): Точная площадь области, если известна.
    """

    vertices: np.ndarray
    cells: Tuple[Cell, ...]
    boundary_vertex_flags: np.ndarray
    domain: str = "custom"
    domain_area: Optional[float] = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def cell_coords(self, cell_id: int) -> np.ndarray:
        return self.vertices[list(self.cells[cell_id])]

    @cached_property
    def edge_cells(self) -> Dict[Tuple[int, int], List[Tuple[int, int]]]:
        """Каноническое ребро (меньший номер первым) -> [(ячейка, локальное ребро)]."""
        table: Dict[Tuple[int, int], List[Tuple[int, int]]] = {}
        for c, cell in enumerate(self.cells):
            m = len(cell)
            for j in range(m):
                a, b = cell[j], cell[(j + 1) % m]
                table.setdefault((min(a, b), max(a, b)), []).append((c, j))
        return table

    @cached_property
    def canonical_edges(self) -> List[Tuple[int, int]]:
        return sorted(self.edge_cells)

    @cached_property
    def boundary_edge_flags(self) -> frozenset:
        """Множество пар (ячейка, локальное ребро), лежащих на границе области."""
        return frozenset(uses[0] for uses in self.edge_cells.values() if len(uses) == 1)


@dataclass(frozen=True)
class CellMetrics:
    h_E: float
    area: float
    perimeter: float
    min_edge: float
    rho_hat: float


@dataclass(frozen=True)
class MeshMetrics:
    h: float
    per_cell: List[CellMetrics] = field(repr=False)

    @property
    def min_edge(self) -> float:
        return min(c.min_edge for c in self.per_cell)


@dataclass(frozen=True)
class MeshViolation:
    rule: str
    message: str
    cell: Optional[int] = None
    edge: Optional[Tuple[int, int]] = None

    def __str__(self) -> str:
        where = []
        if self.cell is not None:
            where.append(f"ячейка {self.cell}")
        if self.edge is not None:
            where.append(f"ребро {self.edge}")
        return f"[{self.rule}] {', '.join(where)}: {self.message}"


# ---------------------------------------------------------------------------
# Метрики и проверка
# ---------------------------------------------------------------------------

def _cell_metrics(coords: np.ndarray) -> CellMetrics:
    nxt = np.roll(coords, -1, axis=0)
    edges = nxt - coords
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    centroid = polygon_centroid(coords)
    rel = centroid - coords
    dist = np.abs(edges[:, 0] * rel[:, 1] - edges[:, 1] * rel[:, 0]) / lengths
    return CellMetrics(
        h_E=float(pdist(coords).max()),
        area=signed_area(coords),
        perimeter=float(lengths.sum()),
        min_edge=float(lengths.min()),
        rho_hat=float(dist.min()),
    )


def mesh_metrics(mesh: Mesh) -> MeshMetrics:
    """
    Размер сетки и характеристики ячеек.

    Args:
        mesh (Mesh): Корректная сетка.

    Returns:
        MeshMetrics: h = max h_E и метрики каждой ячейки.
    """
    per_cell = [_cell_metrics(mesh.cell_coords(c)) for c in range(mesh.n_cells)]
    return MeshMetrics(h=max(c.h_E for c in per_cell), per_cell=per_cell)


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, p, tol) -> bool:
    return (min(a[0], b[0]) - tol <= p[0] <= max(a[0], b[0]) + tol
            and min(a[1], b[1]) - tol <= p[1] <= max(a[1], b[1]) + tol)


def _segments_touch(p, q, r, s, scale) -> bool:
    eps = 1e-14 * scale * scale
    tol = 1e-14 * scale
    d1, d2 = _orient(r, s, p), _orient(r, s, q)
    d3, d4 = _orient(p, q, r), _orient(p, q, s)
    if ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and \
            ((d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)):
        return True
    return ((abs(d1) <= eps and _on_segment(r, s, p, tol))
            or (abs(d2) <= eps and _on_segment(r, s, q, tol))
            or (abs(d3) <= eps and _on_segment(p, q, r, tol))
            or (abs(d4) <= eps and _on_segment(p, q, s, tol)))


def _cell_violations(c: int, cell: Cell, vertices: np.ndarray) -> List[MeshViolation]:
    m = len(cell)
    if m < 3:
        return [MeshViolation("min-vertices", f"{m} вершин, нужно не меньше 3", cell=c)]
    if min(cell) < 0 or max(cell) >= len(vertices):
        return [MeshViolation("index", "номер вершины вне диапазона", cell=c)]
    coords = vertices[list(cell)]
    out = []
    h_E = float(pdist(coords).max())
    area = signed_area(coords)
    if not area > 0.0:
        out.append(MeshViolation("orientation", f"ориентированная площадь {area:.3e} <= 0", cell=c))
    lengths = np.hypot(*(np.roll(coords, -1, axis=0) - coords).T)
    for j in np.flatnonzero(lengths <= MIN_SEPARATION * h_E):
        out.append(MeshViolation("coincident", "совпадающие соседние вершины", cell=c,
                                 edge=(cell[j], cell[(j + 1) % m])))
    for i in range(m):
        for j in range(i + 2, m):
            if i == 0 and j == m - 1:
                continue
            if _segments_touch(coords[i], coords[(i + 1) % m], coords[j], coords[(j + 1) % m], h_E):
                out.append(MeshViolation("self-intersection",
                                         f"ребра {i} и {j} пересекаются", cell=c))
    return out


def validate_mesh(mesh: Mesh) -> List[MeshViolation]:
    """
    Проверка инвариантов ячеек и сетки.

    Args:
        mesh (Mesh): Проверяемая сетка.

    Returns:
        List[MeshViolation]: Пустой список, если все инварианты выполнены.
    """
    violations: List[MeshViolation] = []
    for c, cell in enumerate(mesh.cells):
        violations.extend(_cell_violations(c, cell, mesh.vertices))
    if violations:
        return violations

    directed: Dict[Tuple[int, int], List[Tuple[int, int]]] = {}
    for c, cell in enumerate(mesh.cells):
        m = len(cell)
        for j in range(m):
            a, b = cell[j], cell[(j + 1) % m]
            directed.setdefault((min(a, b), max(a, b)), []).append((a, b))

    loop_area = 0.0
    for key, uses in directed.items():
        if len(uses) > 2:
            violations.append(MeshViolation("edge-multiplicity",
                                            f"ребро принадлежит {len(uses)} ячейкам", edge=key))
        elif len(uses) == 2 and uses[0] == uses[1]:
            violations.append(MeshViolation("edge-orientation",
                                            "общее ребро имеет одинаковую ориентацию в обеих ячейках",
                                            edge=key))
        elif len(uses) == 1:
            a, b = uses[0]
            pa, pb = mesh.vertices[a], mesh.vertices[b]
            loop_area += 0.5 * (pa[0] * pb[1] - pb[0] * pa[1])
            if not (mesh.boundary_vertex_flags[a] and mesh.boundary_vertex_flags[b]):
                violations.append(MeshViolation("boundary-flag",
                                                "вершина граничного ребра не помечена граничной",
                                                edge=key))

    total = sum(signed_area(mesh.cell_coords(c)) for c in range(mesh.n_cells))
    reference = mesh.domain_area if mesh.domain_area is not None else loop_area
    if abs(total - reference) > AREA_TOLERANCE * abs(reference):
        violations.append(MeshViolation("area-sum",
                                        f"сумма площадей {total:.15g} != площадь области {reference:.15g}"))
    return violations


# ---------------------------------------------------------------------------
# Сборка сеток
# ---------------------------------------------------------------------------

def _boundary_vertex_mask(n_vertices: int, cells: Sequence[Sequence[int]]) -> np.ndarray:
    counts: Dict[Tuple[int, int], int] = {}
    for cell in cells:
        m = len(cell)
        for j in range(m):
            a, b = cell[j], cell[(j + 1) % m]
            key = (min(a, b), max(a, b))
            counts[key] = counts.get(key, 0) + 1
    mask = np.zeros(n_vertices, dtype=bool)
    for (a, b), count in counts.items():
        if count == 1:
            mask[a] = mask[b] = True
    return mask


def _finalize(vertices: np.ndarray, cells: Sequence[Sequence[int]], domain: str,
              check: bool = True) -> Mesh:
    """Удаляет неиспользуемые вершины, проверяет ориентацию и инварианты."""
    used = np.unique(np.concatenate([np.asarray(c, dtype=int) for c in cells]))
    renumber = -np.ones(len(vertices), dtype=int)
    renumber[used] = np.arange(len(used))
    vertices = np.ascontiguousarray(vertices[used], dtype=float)
    out_cells = []
    for c, cell in enumerate(cells):
        cell = tuple(int(renumber[v]) for v in cell)
        area = signed_area(vertices[list(cell)])
        if area < 0.0:
            cell = cell[::-1]
        elif area == 0.0:
            raise MeshGenerationError(f"Ячейка {c} имеет нулевую площадь")
        out_cells.append(cell)
    mesh = Mesh(vertices=vertices, cells=tuple(out_cells),
                boundary_vertex_flags=_boundary_vertex_mask(len(vertices), out_cells),
                domain=domain, domain_area=DOMAIN_AREAS.get(domain))
    if check:
        violations = validate_mesh(mesh)
        if violations:
            for v in violations[:5]:
                logger.error(f"Нарушение в сгенерированной сетке: {v}")
            raise MeshGenerationError(f"Сгенерированная сетка некорректна: {violations[0]}")
    return mesh


def _structured_grid(domain: str, n: int) -> Tuple[np.ndarray, List[List[int]]]:
    """Квадратная решетка шага 1/n; для L-области квадрат [1,2)^2 удаляется."""
    cells_per_side = n if domain == "unit_square" else 2 * n
    xs = np.arange(cells_per_side + 1) / n
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    stride = cells_per_side + 1
    quads = []
    for j in range(cells_per_side):
        for i in range(cells_per_side):
            if domain == "lshape" and i >= n and j >= n:
                continue
            v0 = j * stride + i
            quads.append([v0, v0 + 1, v0 + stride + 1, v0 + stride])
    return vertices, quads


def _deform(vertices: np.ndarray, cells: Sequence[Sequence[int]], spacing: float,
            rng: np.random.Generator, fixed: Optional[np.ndarray] = None) -> np.ndarray:
    """Сдвигает внутренние вершины на случайный вектор длины <= 0.2 h."""
    if fixed is None:
        fixed = _boundary_vertex_mask(len(vertices), cells)
    angle = rng.uniform(0.0, 2.0 * np.pi, len(vertices))
    radius = rng.uniform(0.0, DEFORMATION * spacing, len(vertices))
    shift = np.column_stack([np.cos(angle), np.sin(angle)]) * radius[:, None]
    shift[fixed] = 0.0
    return vertices + shift


def _triangulate_quads(quads: Sequence[Sequence[int]]) -> List[List[int]]:
    tris = []
    for v0, v1, v2, v3 in quads:
        tris.append([v0, v1, v2])
        tris.append([v0, v2, v3])
    return tris


def _lattice_seeds(rng: np.random.Generator, bounds, nx: int, ny: int) -> np.ndarray:
    x0, y0, x1, y1 = bounds
    dx, dy = (x1 - x0) / nx, (y1 - y0) / ny
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    centers = np.column_stack([x0 + (I.ravel() + 0.5) * dx, y0 + (J.ravel() + 0.5) * dy])
    shift = rng.uniform(-SEED_PERTURBATION, SEED_PERTURBATION, size=centers.shape) * [dx, dy]
    return centers + shift


def _rectangle_voronoi(seeds: np.ndarray, bounds) -> List[np.ndarray]:
    """
    Ячейки Вороного, обрезанные прямоугольником.

    Семена отражаются относительно четырех сторон, поэтому ячейки исходных
    семян ограничены ровно сторонами прямоугольника.
    """
    x0, y0, x1, y1 = bounds
    x, y = seeds[:, 0], seeds[:, 1]
    mirrored = np.vstack([
        seeds,
        np.column_stack([2 * x0 - x, y]),
        np.column_stack([2 * x1 - x, y]),
        np.column_stack([x, 2 * y0 - y]),
        np.column_stack([x, 2 * y1 - y]),
    ])
    vor = Voronoi(mirrored)
    tol = 1e-10 * max(x1 - x0, y1 - y0)
    polys = []
    for i, seed in enumerate(seeds):
        region = vor.regions[vor.point_region[i]]
        if not region or -1 in region:
            raise MeshGenerationError(f"Неограниченная ячейка Вороного для семени {i}")
        poly = vor.vertices[region].copy()
        for col, lo, hi in ((0, x0, x1), (1, y0, y1)):
            vals = poly[:, col]
            vals[np.abs(vals - lo) <= tol] = lo
            vals[np.abs(vals - hi) <= tol] = hi
            np.clip(vals, lo, hi, out=vals)
        order = np.argsort(np.arctan2(poly[:, 1] - seed[1], poly[:, 0] - seed[0]))
        poly = _drop_close(poly[order], tol)
        if len(poly) < 3:
            raise MeshGenerationError(f"Вырожденная ячейка Вороного для семени {i}")
        polys.append(poly)
    return polys


def _drop_close(poly: np.ndarray, tol: float) -> np.ndarray:
    keep = [0]
    for j in range(1, len(poly)):
        if np.hypot(*(poly[j] - poly[keep[-1]])) > tol:
            keep.append(j)
    if len(keep) > 1 and np.hypot(*(poly[keep[-1]] - poly[keep[0]])) <= tol:
        keep.pop()
    return poly[keep]


def _lloyd_voronoi(seeds: np.ndarray, bounds, iterations: int = LLOYD_ITERATIONS) -> List[np.ndarray]:
    for _ in range(iterations):
        polys = _rectangle_voronoi(seeds, bounds)
        seeds = np.array([polygon_centroid(p) for p in polys])
    return _rectangle_voronoi(seeds, bounds)


def _merge_polygons(polys: Sequence[np.ndarray], tol: float) -> Tuple[np.ndarray, List[List[int]]]:
    """Склеивает совпадающие (в пределах tol) вершины независимых многоугольников."""
    coords = np.vstack(polys)
    offsets = np.cumsum([0] + [len(p) for p in polys])
    pairs = cKDTree(coords).query_pairs(tol, output_type="ndarray")
    n = len(coords)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    _, first = np.unique(labels, return_index=True)
    vertices = coords[first]
    cells = []
    for k in range(len(polys)):
        ring = labels[offsets[k]:offsets[k + 1]].tolist()
        cell = [v for j, v in enumerate(ring) if v != ring[j - 1]] if len(set(ring)) > 1 else ring
        cells.append(cell)
    return vertices, cells


def _on_rectangle_boundary(points: np.ndarray, rects, tol: float) -> np.ndarray:
    mask = np.zeros(len(points), dtype=bool)
    for x0, y0, x1, y1 in rects:
        inside = ((points[:, 0] >= x0 - tol) & (points[:, 0] <= x1 + tol)
                  & (points[:, 1] >= y0 - tol) & (points[:, 1] <= y1 + tol))
        on_side = ((np.abs(points[:, 0] - x0) <= tol) | (np.abs(points[:, 0] - x1) <= tol)
                   | (np.abs(points[:, 1] - y0) <= tol) | (np.abs(points[:, 1] - y1) <= tol))
        mask |= inside & on_side
    return mask


def _insert_hanging_vertices(vertices: np.ndarray, cells: List[List[int]], rects,
                             tol: float) -> List[List[int]]:
    """
    Делает склейку конформной: вершина соседнего лоскута, лежащая внутри
    ребра ячейки, вставляется в это ребро.
    """
    candidates = np.flatnonzero(_on_rectangle_boundary(vertices, rects, tol))
    is_candidate = np.zeros(len(vertices), dtype=bool)
    is_candidate[candidates] = True
    tree = cKDTree(vertices[candidates])
    inserted = 0
    out = []
    for cell in cells:
        m = len(cell)
        new_cell = []
        for j in range(m):
            a, b = cell[j], cell[(j + 1) % m]
            new_cell.append(a)
            if not (is_candidate[a] and is_candidate[b]):
                continue
            pa, pb = vertices[a], vertices[b]
            d = pb - pa
            length = float(np.hypot(*d))
            inner = []
            for local in tree.query_ball_point(0.5 * (pa + pb), 0.5 * length + tol):
                v = int(candidates[local])
                if v in (a, b):
                    continue
                r = vertices[v] - pa
                s = float(np.dot(r, d)) / length ** 2
                if abs(d[0] * r[1] - d[1] * r[0]) / length <= tol and 0.0 < s < 1.0:
                    inner.append((s, v))
            inserted += len(inner)
            new_cell.extend(v for _, v in sorted(inner))
        out.append(new_cell)
    logger.debug(f"Вставлено {inserted} вершин на стыках лоскутов")
    return out


def _glue_patches(polys: Sequence[np.ndarray], rects, domain: str) -> Mesh:
    tol = MERGE_TOLERANCE
    vertices, cells = _merge_polygons(polys, tol)
    cells = _insert_hanging_vertices(vertices, cells, rects, tol)
    return _finalize(vertices, cells, domain)


def _voronoi_mesh(domain: str, n: int, seed: int) -> Mesh:
    rng = np.random.default_rng(seed)
    if domain == "unit_square":
        bounds = (0.0, 0.0, 1.0, 1.0)
        polys = _lloyd_voronoi(_lattice_seeds(rng, bounds, n, n), bounds)
        vertices, cells = _merge_polygons(polys, MERGE_TOLERANCE)
        return _finalize(vertices, cells, domain)
    seeds = _lattice_seeds(rng, (0.0, 0.0, 2.0, 2.0), 2 * n, 2 * n)
    seeds = seeds[~((seeds[:, 0] >= 1.0) & (seeds[:, 1] >= 1.0))]
    bottom, top = (0.0, 0.0, 2.0, 1.0), (0.0, 1.0, 1.0, 2.0)
    polys = (_lloyd_voronoi(seeds[seeds[:, 1] < 1.0], bottom)
             + _lloyd_voronoi(seeds[seeds[:, 1] >= 1.0], top))
    return _glue_patches(polys, [bottom, top], domain)


def _glued_voronoi_mesh(n: int, seed: int) -> Mesh:
    """Три независимо засеянные вертикальные полосы единичного квадрата."""
    edges = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]
    nx = max(1, int(round(n / 3)))
    polys, rects = [], []
    for strip in range(3):
        bounds = (edges[strip], 0.0, edges[strip + 1], 1.0)
        rng = np.random.default_rng([seed, strip])
        polys.extend(_lloyd_voronoi(_lattice_seeds(rng, bounds, nx, n), bounds))
        rects.append(bounds)
    return _glue_patches(polys, rects, "unit_square")


def _grid_patch(bounds, n: int) -> Tuple[np.ndarray, List[List[int]]]:
    x0, y0, x1, y1 = bounds
    xs = x0 + (x1 - x0) * np.arange(n + 1) / n
    ys = y0 + (y1 - y0) * np.arange(n + 1) / n
    xs[-1], ys[-1] = x1, y1
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    stride = n + 1
    quads = [[j * stride + i, j * stride + i + 1, (j + 1) * stride + i + 1, (j + 1) * stride + i]
             for j in range(n) for i in range(n)]
    return vertices, quads


def _mixed_mesh(n: int, seed: int) -> Mesh:
    """L-область: Вороной, квадраты и деформированные квадраты на трех единичных квадратах."""
    rng = np.random.default_rng(seed)
    voronoi_box, squares_box, deformed_box = (0.0, 0.0, 1.0, 1.0), (1.0, 0.0, 2.0, 1.0), (0.0, 1.0, 1.0, 2.0)
    polys = _lloyd_voronoi(_lattice_seeds(rng, voronoi_box, n, n), voronoi_box)
    vertices, quads = _grid_patch(squares_box, n)
    polys += [vertices[q] for q in quads]
    vertices, quads = _grid_patch(deformed_box, n)
    vertices = _deform(vertices, quads, 1.0 / n, rng)
    polys += [vertices[q] for q in quads]
    return _glue_patches(polys, [voronoi_box, squares_box, deformed_box], "lshape")


def generate_mesh(domain: str, kind: str, level: int, seed: int = 0) -> Mesh:
    """
    Генерация сетки заданного семейства.

    Args:
        domain (str): 'unit_square' или 'lshape'.
        kind (str): Семейство сеток (см. MESH_KINDS).
        level (int): Уровень n (решетка n x n или около n^2 семян).
        seed (int): Зерно всех случайных величин.

    Returns:
        Mesh: Проверенная сетка.

    Raises:
        UnsupportedMeshError: Неизвестная комбинация области и семейства.
        MeshGenerationError: Вырожденная ячейка.
    """
    if domain not in MESH_KINDS or kind not in MESH_KINDS[domain]:
        raise UnsupportedMeshError(f"Семейство сеток '{kind}' не поддерживается для области '{domain}'")
    if int(level) < 1:
        raise UnsupportedMeshError(f"Уровень сетки должен быть >= 1, получено {level}")
    n = int(level)
    rng = np.random.default_rng(seed)

    if kind in ("squares", "triangles", "deformed_squares", "deformed_triangles_midpoints"):
        vertices, quads = _structured_grid(domain, n)
        if kind.startswith("deformed"):
            vertices = _deform(vertices, quads, 1.0 / n, rng)
        cells = quads if kind.endswith("squares") else _triangulate_quads(quads)
        mesh = _finalize(vertices, cells, domain)
        if kind == "deformed_triangles_midpoints":
            mesh = split_edges_small(mesh, 0.5)
    elif kind == "voronoi":
        mesh = _voronoi_mesh(domain, n, seed)
    elif kind == "glued_voronoi":
        mesh = _glued_voronoi_mesh(n, seed)
    else:
        mesh = _mixed_mesh(n, seed)

    logger.info(f"Сетка {domain}/{kind} уровня {n}: {mesh.n_cells} ячеек, {mesh.n_vertices} вершин")
    return mesh


def split_edges_small(mesh: Mesh, fraction: float = DEFAULT_SMALL_EDGE_FRACTION) -> Mesh:
    """
    Вставляет в каждое ребро точку на расстоянии fraction * h_e от его
    первой (с меньшим номером) вершины.

    Общие ребра получают одну и ту же точку с обеих сторон, поэтому сетка
    остается конформной; треугольник превращается в шестиугольник.

    Args:
        mesh (Mesh): Исходная сетка.
        fraction (float): Доля длины ребра, 0 < fraction <= 1/2.

    Returns:
        Mesh: Новая сетка с той же геометрией ячеек.
    """
    if not 0.0 < fraction <= 0.5:
        raise ValueError(f"Доля разбиения ребра должна лежать в (0, 1/2], получено {fraction}")
    vertices = [mesh.vertices]
    flags = [mesh.boundary_vertex_flags]
    split_point: Dict[Tuple[int, int], int] = {}
    next_id = mesh.n_vertices
    new_coords, new_flags = [], []
    for lo, hi in mesh.canonical_edges:
        p = mesh.vertices[lo] + fraction * (mesh.vertices[hi] - mesh.vertices[lo])
        new_coords.append(p)
        new_flags.append(len(mesh.edge_cells[(lo, hi)]) == 1)
        split_point[(lo, hi)] = next_id
        next_id += 1
    vertices.append(np.array(new_coords).reshape(-1, 2))
    flags.append(np.array(new_flags, dtype=bool))
    cells = []
    for cell in mesh.cells:
        m = len(cell)
        out = []
        for j in range(m):
            a, b = cell[j], cell[(j + 1) % m]
            out.extend((a, split_point[(min(a, b), max(a, b))]))
        cells.append(tuple(out))
    logger.info(f"Ребра разбиты в доле {fraction:g}: добавлено {len(new_coords)} вершин")
    return Mesh(vertices=np.vstack(vertices), cells=tuple(cells),
                boundary_vertex_flags=np.concatenate(flags),
                domain=mesh.domain, domain_area=mesh.domain_area)


# ---------------------------------------------------------------------------
# Файловый формат
# ---------------------------------------------------------------------------

MESH_HEADER = "polymesh2d 1"


def save_mesh(mesh: Mesh, path: Union[str, Path]) -> str:
    """
    Запись сетки в текстовый файл формата polymesh2d.

    Args:
        mesh (Mesh): Сетка.
        path (Union[str, Path]): Путь к файлу.

    Returns:
        str: Путь к записанному файлу.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [MESH_HEADER]
    area = "" if mesh.domain_area is None else f" area {mesh.domain_area:.17g}"
    lines.append(f"# domain {mesh.domain}{area}")
    lines.append(f"{mesh.n_vertices} {mesh.n_cells}")
    for (x, y), b in zip(mesh.vertices, mesh.boundary_vertex_flags):
        lines.append(f"{x:.17g} {y:.17g} {int(bool(b))}")
    for cell in mesh.cells:
        lines.append(" ".join(str(v) for v in (len(cell),) + tuple(cell)))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Сетка записана в {path}: {mesh.n_vertices} вершин, {mesh.n_cells} ячеек")
    return str(path)


def load_mesh(path: Union[str, Path]) -> Mesh:
    """
    Чтение сетки из файла формата polymesh2d.

    Raises:
        MeshFormatError: Неверный заголовок, число полей или номер вершины.
    """
    domain, domain_area = "custom", None
    records: List[Tuple[int, List[str]]] = []
    with open(path, "r", encoding="utf-8") as file:
        for lineno, raw in enumerate(file, start=1):
            stripped = raw.strip()
            if stripped.startswith("# domain"):
                tokens = stripped[1:].split()
                domain = tokens[1] if len(tokens) > 1 else domain
                if len(tokens) > 3 and tokens[2] == "area":
                    domain_area = float(tokens[3])
            text = raw.split("#", 1)[0].strip()
            if text:
                records.append((lineno, text.split()))

    if not records or " ".join(records[0][1]) != MESH_HEADER:
        raise MeshFormatError(f"ожидался заголовок '{MESH_HEADER}'", records[0][0] if records else 1)
    try:
        lineno, tokens = records[1]
        nv, nc = (int(t) for t in tokens)
    except (IndexError, ValueError):
        raise MeshFormatError("ожидалась строка '<nv> <nc>'", records[1][0] if len(records) > 1 else None)
    if len(records) != 2 + nv + nc:
        raise MeshFormatError(f"ожидалось {nv} вершин и {nc} ячеек, найдено {len(records) - 2} записей")

    vertices = np.zeros((nv, 2))
    flags = np.zeros(nv, dtype=bool)
    for i, (lineno, tokens) in enumerate(records[2:2 + nv]):
        if len(tokens) != 3 or tokens[2] not in ("0", "1"):
            raise MeshFormatError("ожидалась строка 'x y b'", lineno)
        try:
            vertices[i] = float(tokens[0]), float(tokens[1])
        except ValueError:
            raise MeshFormatError("неверная координата", lineno)
        flags[i] = tokens[2] == "1"

    cells = []
    for lineno, tokens in records[2 + nv:]:
        try:
            ids = [int(t) for t in tokens]
        except ValueError:
            raise MeshFormatError("неверный номер вершины", lineno)
        if len(ids) < 1 or ids[0] != len(ids) - 1:
            raise MeshFormatError("число вершин ячейки не совпадает с количеством номеров", lineno)
        if any(v < 0 or v >= nv for v in ids[1:]):
            raise MeshFormatError(f"номер вершины вне диапазона [0, {nv})", lineno)
        cells.append(tuple(ids[1:]))

    mesh = Mesh(vertices=vertices, cells=tuple(cells), boundary_vertex_flags=flags,
                domain=domain, domain_area=domain_area)
    for violation in validate_mesh(mesh):
        logger.warning(f"Сетка {path}: {violation}")
    logger.info(f"Сетка прочитана из {path}: {nv} вершин, {nc} ячеек")
    return mesh
