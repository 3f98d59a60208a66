"""
Модуль исследования сходимости: аналитические решения, нормы ошибок,
порядки сходимости, прогон по уровням сетки и запись таблиц.
"""

import os
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from geometry import (
    DEFAULT_SMALL_EDGE_FRACTION,
    MESH_KINDS,
    Mesh,
    generate_mesh,
    mesh_metrics,
    split_edges_small,
)
from quadrature import polygon_quadrature
from solver import GlobalDofMap, build_elements, solve_elasticity
from vem_local import STABILIZATIONS, SUPPORTED_DEGREES, Material, VirtualElement

# Настройка логирования
os.makedirs("logs", exist_ok=True)
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler("logs/study.log"),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger("study")

STUDY_COLUMNS = ["level", "h", "ndof", "err_l2", "err_h1", "rate_l2", "rate_h1"]
SOLUTIONS = ("sine", "poly3", "patch1", "patch2")
LOCKING_POISSONS = (0.35, 0.45, 0.47, 0.49)
# Относительное падение err_h1 по nu, которое еще не считается нарушением тренда
LOCKING_TREND_RTOL = 1e-4


class StudyConfigError(ValueError):
    """Недопустимая конфигурация исследования."""


class StudyError(RuntimeError):
    """Численный сбой на одном из уровней исследования."""

    def __init__(self, message: str, level: Optional[int] = None):
        self.level = level
        super().__init__(message)


class LockingTrendError(StudyError):
    """Ошибка H1 убывает при росте коэффициента Пуассона."""


@dataclass(frozen=True)
class ManufacturedSolution:
    """
    Аналитическое решение и согласованная нагрузка f = -div sigma(u) / rho.

    Все функции принимают точки (N, 2); u и f возвращают (N, 2),
    grad возвращает (N, 2, 2) с [i, j] = d_j u_i.
    """

    name: str
    u: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    f: Callable[[np.ndarray], np.ndarray]
    polynomial_degree: Optional[int] = None
    domains: Tuple[str, ...] = ("unit_square", "lshape")


def _xy(points):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return points[:, 0], points[:, 1]


def _sine(material: Material) -> ManufacturedSolution:
    mu, lam, rho = material.mu, material.lam, material.density
    pi = np.pi

    def u(p):
        x, y = _xy(p)
        s = np.sin(pi * x) * np.sin(pi * y)
        return np.column_stack([s, s])

    def grad(p):
        x, y = _xy(p)
        dx = pi * np.cos(pi * x) * np.sin(pi * y)
        dy = pi * np.sin(pi * x) * np.cos(pi * y)
        row = np.stack([dx, dy], axis=-1)
        return np.stack([row, row], axis=1)

    def f(p):
        x, y = _xy(p)
        s = np.sin(pi * x) * np.sin(pi * y)
        c = np.cos(pi * x) * np.cos(pi * y)
        value = pi ** 2 / rho * (2.0 * mu * s + (mu + lam) * (s - c))
        return np.column_stack([value, value])

    return ManufacturedSolution("sine", u, grad, f)


def _poly3(material: Material) -> ManufacturedSolution:
    mu, lam, rho = material.mu, material.lam, material.density

    def parts(p):
        x, y = _xy(p)
        a, da = x - x ** 2, 1.0 - 2.0 * x
        b, db = y - y ** 2, 1.0 - 2.0 * y
        c, dc, ddc = x ** 2 - x ** 3, 2.0 * x - 3.0 * x ** 2, 2.0 - 6.0 * x
        return a, da, b, db, c, dc, ddc

    def u(p):
        a, _, b, _, c, _, _ = parts(p)
        return np.column_stack([a * b, c * b])

    def grad(p):
        a, da, b, db, c, dc, _ = parts(p)
        return np.stack([np.stack([da * b, a * db], axis=-1),
                         np.stack([dc * b, c * db], axis=-1)], axis=1)

    def f(p):
        a, da, b, db, c, dc, ddc = parts(p)
        div1 = mu * (-2.0 * a - 2.0 * b) + (mu + lam) * (-2.0 * b + dc * db)
        div2 = mu * (ddc * b - 2.0 * c) + (mu + lam) * (da * db - 2.0 * c)
        return -np.column_stack([div1, div2]) / rho

    return ManufacturedSolution("poly3", u, grad, f, domains=("unit_square",))


def _patch1(material: Material) -> ManufacturedSolution:
    # линейное поле с ненулевыми сдвигом, поворотом и деформацией
    def u(p):
        x, y = _xy(p)
        return np.column_stack([1.0 + 2.0 * x - y, -1.0 + 0.5 * x + 3.0 * y])

    def grad(p):
        x, _ = _xy(p)
        return np.broadcast_to(np.array([[2.0, -1.0], [0.5, 3.0]]), (len(x), 2, 2)).copy()

    def f(p):
        x, _ = _xy(p)
        return np.zeros((len(x), 2))

    return ManufacturedSolution("patch1", u, grad, f, polynomial_degree=1)


def _patch2(material: Material) -> ManufacturedSolution:
    mu, lam, rho = material.mu, material.lam, material.density
    load = -np.array([mu + 4.0 * (mu + lam), mu + 3.0 * (mu + lam)]) / rho

    def u(p):
        x, y = _xy(p)
        return np.column_stack([x ** 2 + x * y - 0.5 * y ** 2 + x,
                                -0.5 * x ** 2 + 2.0 * x * y + y ** 2 - y])

    def grad(p):
        x, y = _xy(p)
        return np.stack([np.stack([2.0 * x + y + 1.0, x - y], axis=-1),
                         np.stack([-x + 2.0 * y, 2.0 * x + 2.0 * y - 1.0], axis=-1)], axis=1)

    def f(p):
        x, _ = _xy(p)
        return np.tile(load, (len(x), 1))

    return ManufacturedSolution("patch2", u, grad, f, polynomial_degree=2)


_FACTORIES = {"sine": _sine, "poly3": _poly3, "patch1": _patch1, "patch2": _patch2}


def manufactured(name: str, material: Material, domain: Optional[str] = None) -> ManufacturedSolution:
    """
    Аналитическое решение по идентификатору.

    Args:
        name (str): 'sine', 'poly3', 'patch1' или 'patch2'.
        material (Material): Материал (нагрузка зависит от mu и lambda).
        domain (str, optional): Область для проверки совместимости.

    Raises:
        StudyConfigError: Неизвестный идентификатор или несовместимая область.
    """
    if name not in _FACTORIES:
        raise StudyConfigError(f"Неизвестное решение '{name}', ожидалось одно из {SOLUTIONS}")
    solution = _FACTORIES[name](material)
    if domain is not None and domain not in solution.domains:
        raise StudyConfigError(f"Решение '{name}' не определено на области '{domain}'")
    return solution


def _element_error(element: VirtualElement, solution: ManufacturedSolution,
                   local_dofs: np.ndarray) -> Tuple[float, float]:
    coefs = element.pi_star @ local_dofs
    rule = polygon_quadrature(element.geom.vertices, 2 * element.degree + 2)
    du = solution.u(rule.points) - element.polynomial_values(coefs, rule.points)
    dg = solution.grad(rule.points) - element.polynomial_gradients(coefs, rule.points)
    return (float(rule.weights @ (du ** 2).sum(axis=1)),
            float(rule.weights @ (dg ** 2).sum(axis=(1, 2))))


def error_norms(mesh: Mesh, dof_map: GlobalDofMap, degree: int, material: Material,
                solution: ManufacturedSolution, u_h: np.ndarray,
                elements: Optional[Sequence[VirtualElement]] = None) -> Tuple[float, float]:
    """
    Ошибки ||u - Pi u_h||_0 и |u - Pi u_h|_{1,h} по энергетической проекции.

    Returns:
        Tuple[float, float]: (err_l2, err_h1).
    """
    if elements is None:
        elements = build_elements(mesh, degree, material, check=False)
    l2, h1 = 0.0, 0.0
    for c, element in enumerate(elements):
        e0, e1 = _element_error(element, solution, u_h[dof_map.cell_dofs[c]])
        l2 += e0
        h1 += e1
    return float(np.sqrt(l2)), float(np.sqrt(h1))


def interpolate_global(dof_map: GlobalDofMap, elements: Sequence[VirtualElement],
                       displacement: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Глобальный вектор степеней свободы интерполянта."""
    u = np.zeros(dof_map.n_dofs)
    for c, element in enumerate(elements):
        u[dof_map.cell_dofs[c]] = element.interpolate(displacement)
    return u


def interpolation_errors(mesh: Mesh, dof_map: GlobalDofMap, degree: int, material: Material,
                         solution: ManufacturedSolution,
                         elements: Optional[Sequence[VirtualElement]] = None) -> Tuple[float, float]:
    """Ошибки Pi I u, оценка снизу для ошибок дискретного решения."""
    if elements is None:
        elements = build_elements(mesh, degree, material, check=False)
    u_i = interpolate_global(dof_map, elements, solution.u)
    return error_norms(mesh, dof_map, degree, material, solution, u_i, elements)


@dataclass(frozen=True)
class StudyConfig:
    """Параметры исследования сходимости."""

    domain: str = "unit_square"
    mesh_kind: str = "squares"
    degree: int = 1
    levels: Tuple[int, ...] = (8, 16, 32)
    material: Material = field(default_factory=Material)
    stab: str = "dofi"
    solution: str = "sine"
    out: Optional[str] = None
    seed: int = 0
    small_edges: bool = False
    edge_fraction: float = DEFAULT_SMALL_EDGE_FRACTION
    projector_residual: float = 1e-9
    symmetry_tol: float = 1e-11
    solver_residual: float = 1e-10
    cg_rtol: float = 1e-12
    dump_path: str = "output/failed_system.txt"
    method: str = "direct"

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(level) for level in self.levels))
        if not self.levels:
            raise StudyConfigError("Список уровней пуст")
        if any(level < 1 for level in self.levels):
            raise StudyConfigError(f"Уровни должны быть положительными: {self.levels}")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise StudyConfigError(f"Уровни должны строго возрастать: {self.levels}")
        if self.domain not in MESH_KINDS:
            raise StudyConfigError(f"Неизвестная область '{self.domain}'")
        if self.mesh_kind not in MESH_KINDS[self.domain]:
            raise StudyConfigError(f"Семейство '{self.mesh_kind}' недоступно для области '{self.domain}'")
        if self.degree not in SUPPORTED_DEGREES:
            raise StudyConfigError(f"Поддерживаются степени {SUPPORTED_DEGREES}, получено {self.degree}")
        if self.stab not in STABILIZATIONS:
            raise StudyConfigError(f"Неизвестная стабилизация '{self.stab}'")
        if not 0.0 < self.edge_fraction <= 0.5:
            raise StudyConfigError(f"Доля разбиения ребра вне (0, 1/2]: {self.edge_fraction}")
        manufactured(self.solution, self.material, self.domain)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["levels"] = list(self.levels)
        return data


@dataclass(frozen=True)
class StudyRow:
    level: int
    h: float
    ndof: int
    err_l2: float
    err_h1: float
    rate_l2: Optional[float] = None
    rate_h1: Optional[float] = None


def _rate(e_prev: float, e_next: float, h_prev: float, h_next: float) -> Optional[float]:
    if e_prev <= 0.0 or e_next <= 0.0:
        return None
    return float(np.log(e_prev / e_next) / np.log(h_prev / h_next))


def rates(rows: Sequence[StudyRow]) -> List[StudyRow]:
    """
    Порядки сходимости по соседним строкам.

    Raises:
        StudyConfigError: h не убывает строго.
    """
    rows = list(rows)
    for prev, row in zip(rows, rows[1:]):
        if not row.h < prev.h:
            raise StudyConfigError(f"h должно строго убывать: {prev.h} -> {row.h}")
    out = [replace(rows[0], rate_l2=None, rate_h1=None)] if rows else []
    for prev, row in zip(rows, rows[1:]):
        out.append(replace(row,
                           rate_l2=_rate(prev.err_l2, row.err_l2, prev.h, row.h),
                           rate_h1=_rate(prev.err_h1, row.err_h1, prev.h, row.h)))
    return out


def mean_last_rates(rows: Sequence[StudyRow]) -> Tuple[Optional[float], Optional[float]]:
    """Среднее двух последних порядков (или последнего, если строк две)."""
    def average(values):
        values = [v for v in values[-2:] if v is not None]
        return float(np.mean(values)) if values else None
    tail = list(rows)[1:]
    return average([r.rate_l2 for r in tail]), average([r.rate_h1 for r in tail])


def terminal_rates(rows: Sequence[StudyRow]) -> Tuple[Optional[float], Optional[float]]:
    """Порядки на последней паре уровней."""
    if len(rows) < 2:
        return None, None
    return rows[-1].rate_l2, rows[-1].rate_h1


def study_mesh(config: StudyConfig, level: int) -> Mesh:
    mesh = generate_mesh(config.domain, config.mesh_kind, level, seed=config.seed)
    if config.small_edges:
        mesh = split_edges_small(mesh, config.edge_fraction)
    return mesh


def solve_level(config: StudyConfig, level: int, mesh: Optional[Mesh] = None):
    """
    Решение на одном уровне.

    Returns:
        Tuple[Mesh, GlobalDofMap, List[VirtualElement], Solution, ManufacturedSolution]
    """
    solution = manufactured(config.solution, config.material, config.domain)
    if mesh is None:
        mesh = study_mesh(config, level)
    dof_map, elements, result = solve_elasticity(
        mesh, config.degree, config.material, config.stab,
        load=solution.f, dirichlet=solution.u, method=config.method,
        residual_tol=config.solver_residual, cg_rtol=config.cg_rtol, dump_path=config.dump_path,
        projector_residual=config.projector_residual, symmetry_tol=config.symmetry_tol)
    return mesh, dof_map, elements, result, solution


def run_study(config: StudyConfig, writer: Optional["StudyTableWriter"] = None) -> List[StudyRow]:
    """
    Прогон исследования сходимости по уровням.

    Args:
        config (StudyConfig): Конфигурация.
        writer (StudyTableWriter, optional): Запись CSV, если задан config.out.

    Returns:
        List[StudyRow]: Строки с порядками сходимости.
    """
    logger.info(f"Исследование: {config.domain}/{config.mesh_kind}, k={config.degree}, "
                f"nu={config.material.poisson}, stab={config.stab}, уровни {list(config.levels)}")
    rows = []
    for level in config.levels:
        try:
            mesh, dof_map, elements, result, solution = solve_level(config, level)
            err_l2, err_h1 = error_norms(mesh, dof_map, config.degree, config.material,
                                         solution, result.u, elements)
        except (RuntimeError, np.linalg.LinAlgError) as exc:
            logger.error(f"Уровень {level}: {exc}")
            raise StudyError(f"уровень {level}: {exc}", level) from exc
        row = StudyRow(level=level, h=mesh_metrics(mesh).h, ndof=dof_map.n_dofs,
                       err_l2=err_l2, err_h1=err_h1)
        logger.info(f"Уровень {level}: h={row.h:.4e}, ndof={row.ndof}, "
                    f"err_l2={err_l2:.4e}, err_h1={err_h1:.4e}, решатель {result.report.method}")
        rows.append(row)
    rows = rates(rows)
    if config.out:
        (writer or StudyTableWriter()).write_rows(rows, config.out)
    return rows


def locking_trend_violations(table: pd.DataFrame,
                             rtol: float = LOCKING_TREND_RTOL) -> List[Tuple[int, float, float]]:
    """
    Нарушения тренда запирания в таблице серии.

    На каждом уровне err_h1 не должна убывать при росте nu; падение
    меньше rtol относительно предыдущего значения не считается нарушением.

    Returns:
        List[Tuple[int, float, float]]: (уровень, nu_prev, nu_next) для каждого падения.
    """
    violations = []
    for level, group in table.groupby("level", sort=True):
        group = group.sort_values("nu", kind="stable")
        nus = group["nu"].to_numpy()
        errors = group["err_h1"].to_numpy()
        for i in range(1, len(errors)):
            if errors[i] < errors[i - 1] * (1.0 - rtol):
                violations.append((int(level), float(nus[i - 1]), float(nus[i])))
    return violations


def locking_sweep(config: StudyConfig, poissons: Sequence[float] = LOCKING_POISSONS,
                  writer: Optional["StudyTableWriter"] = None, require_trend: bool = False,
                  trend_rtol: float = LOCKING_TREND_RTOL) -> pd.DataFrame:
    """
    Одно и то же исследование для набора коэффициентов Пуассона.

    При заданном config.out каждая серия пишется в <stem>_nu<nu>.csv.

    Args:
        config (StudyConfig): Базовая конфигурация; nu из материала заменяется.
        poissons (Sequence[float]): Коэффициенты Пуассона.
        writer (StudyTableWriter, optional): Запись CSV.
        require_trend (bool): Считать убывание err_h1 по nu ошибкой.
        trend_rtol (float): Допуск на убывание, см. locking_trend_violations.

    Returns:
        pd.DataFrame: Строки (nu, уровень) со столбцами таблицы сходимости.

    Raises:
        LockingTrendError: Тренд нарушен при require_trend=True.
    """
    writer = writer or StudyTableWriter()
    frames = []
    for nu in poissons:
        material = replace(config.material, poisson=float(nu))
        out = None
        if config.out:
            base = Path(config.out)
            out = str(base.with_name(f"{base.stem}_nu{nu:g}{base.suffix or '.csv'}"))
        rows = run_study(replace(config, material=material, out=out), writer)
        frame = writer.rows_to_frame(rows)
        frame.insert(0, "nu", float(nu))
        frames.append(frame)
    table = pd.concat(frames, ignore_index=True)

    violations = locking_trend_violations(table, trend_rtol)
    for level, nu_prev, nu_next in violations:
        logger.warning(f"Уровень {level}: err_h1 убывает при nu {nu_prev:g} -> {nu_next:g}")
    if violations and require_trend:
        raise LockingTrendError(f"Тренд запирания нарушен в {len(violations)} парах: {violations}")
    return table


class StudyTableWriter:
    """Запись и чтение таблиц исследования в CSV."""

    def __init__(self, float_format: str = "%.17g"):
        self.float_format = float_format

    @staticmethod
    def rows_to_frame(rows: Sequence[StudyRow]) -> pd.DataFrame:
        frame = pd.DataFrame([asdict(r) for r in rows], columns=STUDY_COLUMNS)
        return frame.astype({"level": int, "ndof": int, "rate_l2": float, "rate_h1": float})

    def write_frame(self, frame: pd.DataFrame, path: Union[str, Path]) -> str:
        """
        Запись таблицы: полная точность, пустые поля вместо NaN, окончания строк LF.

        Returns:
            str: Путь к файлу.
        """
        try:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            frame.to_csv(path, index=False, float_format=self.float_format, na_rep="",
                         lineterminator="\n")
            logger.info(f"Записано {len(frame)} строк в {path}")
            return str(path)
        except Exception as e:
            logger.error(f"Ошибка при записи таблицы {path}: {str(e)}")
            raise

    def write_rows(self, rows: Sequence[StudyRow], path: Union[str, Path]) -> str:
        return self.write_frame(self.rows_to_frame(rows), path)

    def read_rows(self, path: Union[str, Path]) -> List[StudyRow]:
        try:
            frame = pd.read_csv(path, float_precision="round_trip")
        except Exception as e:
            logger.error(f"Ошибка при чтении таблицы {path}: {str(e)}")
            raise
        rows = []
        for record in frame.to_dict("records"):
            rows.append(StudyRow(
                level=int(record["level"]), h=float(record["h"]), ndof=int(record["ndof"]),
                err_l2=float(record["err_l2"]), err_h1=float(record["err_h1"]),
                rate_l2=None if pd.isna(record["rate_l2"]) else float(record["rate_l2"]),
                rate_h1=None if pd.isna(record["rate_h1"]) else float(record["rate_h1"]),
            ))
        return rows

    def write_solution(self, dof_map: GlobalDofMap, u: np.ndarray, path: Union[str, Path]) -> str:
        """Степени свободы решения: номер, компонента, скалярный узел, координаты узла, значение."""
        n = dof_map.n_scalar
        node = np.tile(np.arange(n), 2)
        frame = pd.DataFrame({
            "dof": np.arange(dof_map.n_dofs),
            "component": np.repeat([0, 1], n),
            "node": node,
            "x": dof_map.node_points[node, 0],
            "y": dof_map.node_points[node, 1],
            "value": u,
        })
        return self.write_frame(frame, path)

    def write_samples(self, points: np.ndarray, values: np.ndarray, path: Union[str, Path],
                      cells: Optional[np.ndarray] = None) -> str:
        """Значения проекции решения в точках."""
        frame = pd.DataFrame({"x": points[:, 0], "y": points[:, 1],
                              "u1": values[:, 0], "u2": values[:, 1]})
        if cells is not None:
            frame.insert(0, "cell", cells)
        return self.write_frame(frame, path)


def projected_samples(elements: Sequence[VirtualElement], dof_map: GlobalDofMap,
                      u: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Проекция Pi u_h в центрах масс и вершинах каждой ячейки."""
    cells, points, values = [], [], []
    for c, element in enumerate(elements):
        coefs = element.pi_star @ u[dof_map.cell_dofs[c]]
        pts = np.vstack([element.geom.centroid, element.geom.vertices])
        cells.append(np.full(len(pts), c))
        points.append(pts)
        values.append(element.polynomial_values(coefs, pts))
    return np.concatenate(cells), np.vstack(points), np.vstack(values)
