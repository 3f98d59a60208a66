"""
Наборы проверок инвариантов: воспроизведение многочленов проекторами,
ограничения, ядро жесткости, квадратуры, согласованность жесткости,
нагрузки аналитических решений и patch-тест.
"""

import os
import logging
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from geometry import generate_mesh, split_edges_small
from quadrature import ScaledMonomialBasis, polygon_monomial_moments, polygon_quadrature
from solver import solve_elasticity
from study import SOLUTIONS, error_norms, manufactured
from vem_local import Material, VirtualElement, boundary_constraints

# Настройка логирования
os.makedirs("logs", exist_ok=True)
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler("logs/checks.log"),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger("checks")

SMALL_EDGE_FRACTION = 1.0 / 50.0
DEFAULT_CHECK_CELLS = 200


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.detail}"


def random_star_cell(rng: np.random.Generator, split: bool = False) -> np.ndarray:
    """
    Случайная звездная ячейка: 3..8 вершин со смещенными углами, радиусы
    0.7..1, случайный масштаб и сдвиг. При split каждое ребро разбивается
    в доле 1/50.
    """
    m = int(rng.integers(3, 9))
    angles = 2.0 * np.pi * (np.arange(m) + rng.uniform(-0.3, 0.3, m)) / m
    radii = rng.uniform(0.7, 1.0, m)
    scale = 10.0 ** rng.uniform(-2.0, 0.0)
    center = rng.uniform(-1.0, 1.0, 2)
    cell = center + scale * np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
    if split:
        nxt = np.roll(cell, -1, axis=0)
        extra = cell + SMALL_EDGE_FRACTION * (nxt - cell)
        cell = np.stack([cell, extra], axis=1).reshape(-1, 2)
    return cell


def _random_cells(n_cells: int, seed: int) -> List[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [random_star_cell(rng, split=bool(i % 2)) for i in range(n_cells)]


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1.0))


def check_projectors(cells, material: Material) -> CheckResult:
    """Pi и Pi0_k воспроизводят многочлены; PiDof идемпотентен."""
    worst = 0.0
    for degree in (1, 2):
        for cell in cells:
            element = VirtualElement(cell, degree, material)
            D = element.dofs_of_monomials
            identity = np.eye(D.shape[1])
            worst = max(worst,
                        _relative(element.pi_star @ D, identity),
                        _relative(element.l2.pi0_k @ D, identity),
                        _relative(element.pi_dof @ element.pi_dof, element.pi_dof))
    return CheckResult("projector", worst <= 1e-10, f"максимальное отклонение {worst:.2e}")


def check_constraints(cells, material: Material, rng: np.random.Generator) -> CheckResult:
    """Средние по границе и циркуляция v - Pi v равны нулю."""
    worst = 0.0
    for degree in (1, 2):
        for cell in cells:
            element = VirtualElement(cell, degree, material)
            v = rng.standard_normal(element.n_dofs)
            Dc = boundary_constraints(element.geom, element.layout)
            gap = Dc @ (v - element.pi_dof @ v)
            worst = max(worst, float(np.abs(gap).max() / (np.linalg.norm(v) * element.geom.h)))
    return CheckResult("constraints", worst <= 1e-10, f"максимальная невязка {worst:.2e}")


def check_kernel(cells, material: Material) -> CheckResult:
    """K аннулирует жесткие движения для обеих стабилизаций."""
    worst = 0.0
    try:
        for degree in (1, 2):
            for stab in ("dofi", "dtangent"):
                for cell in cells:
                    element = VirtualElement(cell, degree, material, stab=stab)
                    K = element.K
                    residual = K @ element.rigid_modes().T
                    worst = max(worst, float(np.abs(residual).max() / np.abs(K).max()))
    except RuntimeError as exc:
        return CheckResult("kernel", False, str(exc))
    return CheckResult("kernel", worst <= 1e-11, f"максимальное |K r| / |K| = {worst:.2e}")


def check_quadrature(cells) -> CheckResult:
    """Квадратура многоугольника против точных моментов мономов."""
    worst = 0.0
    fallbacks = 0
    for cell in cells:
        center = tuple(cell.mean(axis=0))
        scale = float(np.ptp(cell, axis=0).max())
        for order in range(1, 9):
            basis = ScaledMonomialBasis(center=center, scale=scale, degree=order)
            rule = polygon_quadrature(cell, order)
            fallbacks += int(rule.fallback)
            exact = polygon_monomial_moments(cell, basis, order)
            approx = rule.integrate(basis.values(rule.points))
            worst = max(worst, float(np.abs(approx - exact).max() / abs(exact[0])))
    return CheckResult("quadrature", worst <= 1e-12,
                       f"максимальное отклонение {worst:.2e}, отсечение ушей {fallbacks} раз")


def check_stiffness_consistency(cells, material: Material) -> CheckResult:
    """dof(p)^T K dof(q) = a(p, q) для векторных многочленов степени k."""
    worst = 0.0
    for degree in (1, 2):
        for cell in cells:
            element = VirtualElement(cell, degree, material)
            D = element.dofs_of_monomials
            worst = max(worst, _relative(D.T @ element.K @ D, element.G))
    return CheckResult("stiffness", worst <= 1e-10, f"максимальное отклонение {worst:.2e}")


def _divergence_fd(grad: Callable, material: Material, points: np.ndarray, step: float) -> np.ndarray:
    def stress(p):
        g = grad(p)
        strain = 0.5 * (g + np.swapaxes(g, 1, 2))
        trace = strain[:, 0, 0] + strain[:, 1, 1]
        return 2.0 * material.mu * strain + material.lam * trace[:, None, None] * np.eye(2)

    div = np.zeros((len(points), 2))
    for j in range(2):
        shift = np.zeros(2)
        shift[j] = step
        div += (stress(points + shift)[:, :, j] - stress(points - shift)[:, :, j]) / (2.0 * step)
    return div


def check_manufactured(material: Material, rng: np.random.Generator) -> CheckResult:
    """Нагрузка аналитических решений против конечных разностей -div sigma(u) / rho."""
    worst = 0.0
    points = rng.uniform(0.05, 0.95, size=(5, 2))
    for name in SOLUTIONS:
        solution = manufactured(name, material)
        fd = -_divergence_fd(solution.grad, material, points, 1e-5) / material.density
        exact = solution.f(points)
        worst = max(worst, float(np.abs(fd - exact).max() / max(np.abs(exact).max(), 1.0)))
    return CheckResult("manufactured", worst <= 1e-5, f"максимальное отклонение {worst:.2e}")


def check_patch(material: Material, seed: int) -> CheckResult:
    """Многочленные решения воспроизводятся на сетках с малыми ребрами."""
    meshes = {
        "dsquares": split_edges_small(generate_mesh("unit_square", "deformed_squares", 3, seed)),
        "voronoi": split_edges_small(generate_mesh("unit_square", "voronoi", 3, seed)),
    }
    worst = 0.0
    for label, mesh in meshes.items():
        for name, degree in (("patch1", 1), ("patch1", 2), ("patch2", 2)):
            for stab in ("dofi", "dtangent"):
                solution = manufactured(name, material)
                dof_map, elements, result = solve_elasticity(
                    mesh, degree, material, stab, load=solution.f, dirichlet=solution.u)
                err_l2, err_h1 = error_norms(mesh, dof_map, degree, material, solution, result.u, elements)
                logger.debug(f"patch {label}/{name}/k={degree}/{stab}: {err_l2:.2e}, {err_h1:.2e}")
                worst = max(worst, err_l2, err_h1)
    return CheckResult("patch", worst <= 1e-9, f"максимальная ошибка {worst:.2e}")


def run_checks(n_cells: int = DEFAULT_CHECK_CELLS, seed: int = 0,
               material: Material = Material()) -> List[CheckResult]:
    """
    Запуск всех наборов проверок.

    Args:
        n_cells (int): Число случайных ячеек (половина с малыми ребрами).
        seed (int): Зерно генератора.
        material (Material): Материал.

    Returns:
        List[CheckResult]: Результаты по наборам.
    """
    rng = np.random.default_rng(seed)
    cells = _random_cells(n_cells, seed)
    suites = [
        ("projector", lambda: check_projectors(cells, material)),
        ("constraints", lambda: check_constraints(cells, material, rng)),
        ("kernel", lambda: check_kernel(cells, material)),
        ("quadrature", lambda: check_quadrature(cells)),
        ("stiffness", lambda: check_stiffness_consistency(cells, material)),
        ("manufactured", lambda: check_manufactured(material, rng)),
        ("patch", lambda: check_patch(material, seed)),
    ]
    results = []
    for name, suite in suites:
        try:
            result = suite()
        except RuntimeError as exc:
            result = CheckResult(name, False, str(exc))
        log = logger.info if result.passed else logger.error
        log(str(result))
        results.append(result)
    return results
