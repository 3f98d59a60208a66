"""
Тесты аналитических решений, норм ошибок, порядков сходимости и таблиц.
"""

import numpy as np
import pandas as pd
import pytest

import study
from checks import check_manufactured
from geometry import generate_mesh
from solver import build_dof_map, build_elements
from study import (
    STUDY_COLUMNS,
    LockingTrendError,
    StudyConfig,
    StudyConfigError,
    StudyError,
    StudyRow,
    StudyTableWriter,
    error_norms,
    interpolation_errors,
    locking_sweep,
    locking_trend_violations,
    manufactured,
    mean_last_rates,
    projected_samples,
    rates,
    run_study,
    solve_level,
    terminal_rates,
)
from vem_local import Material, ProjectorError

MATERIAL = Material()


def test_sine_values():
    sine = manufactured("sine", MATERIAL)
    assert np.allclose(sine.u(np.array([[0.5, 0.5]])), [[1.0, 1.0]])
    edge = np.array([[0.0, 0.3], [1.0, 0.7], [0.2, 0.0], [0.9, 1.0]])
    assert np.allclose(sine.u(edge), 0.0, atol=1e-15)


@pytest.mark.parametrize("material", [Material(), Material(poisson=0.49), Material(young=3.0, density=2.0)])
def test_loads_match_divergence_of_stress(material):
    result = check_manufactured(material, np.random.default_rng(1))
    assert result.passed, result.detail


def test_patch2_load_is_constant():
    material = Material(poisson=0.25, density=2.0)
    patch = manufactured("patch2", material)
    expected = -np.array([material.mu + 4.0 * (material.mu + material.lam),
                          material.mu + 3.0 * (material.mu + material.lam)]) / 2.0
    assert np.allclose(patch.f(np.array([[0.1, 0.2], [0.7, 0.4]])), expected)


def test_unknown_or_incompatible_solution():
    with pytest.raises(StudyConfigError):
        manufactured("cosine", MATERIAL)
    with pytest.raises(StudyConfigError):
        manufactured("poly3", MATERIAL, "lshape")
    with pytest.raises(StudyConfigError):
        StudyConfig(domain="lshape", solution="poly3")


@pytest.mark.parametrize("kwargs", [
    {"levels": ()},
    {"levels": (8, 4)},
    {"levels": (0, 2)},
    {"degree": 3},
    {"stab": "energy"},
    {"domain": "lshape", "mesh_kind": "glued_voronoi"},
    {"edge_fraction": 0.7},
])
def test_study_config_validation(kwargs):
    with pytest.raises(StudyConfigError):
        StudyConfig(**kwargs)


def test_zero_discrete_solution_errors():
    """Для u_h = 0 ошибки равны нормам самого решения."""
    mesh = generate_mesh("unit_square", "squares", 8)
    dof_map = build_dof_map(mesh, 1)
    sine = manufactured("sine", MATERIAL)
    err_l2, err_h1 = error_norms(mesh, dof_map, 1, MATERIAL, sine, np.zeros(dof_map.n_dofs))
    assert err_l2 == pytest.approx(np.sqrt(0.5), rel=1e-3)
    assert err_h1 == pytest.approx(np.pi, rel=1e-3)


def test_interpolation_errors_decrease():
    sine = manufactured("sine", MATERIAL)
    errors = []
    for level in (4, 8):
        mesh = generate_mesh("unit_square", "voronoi", level, seed=2)
        errors.append(interpolation_errors(mesh, build_dof_map(mesh, 2), 2, MATERIAL, sine))
    assert errors[1][0] < errors[0][0] / 4.0
    assert errors[1][1] < errors[0][1] / 2.0


def test_rates():
    rows = rates([StudyRow(1, 1.0, 10, 1.0, 1.0), StudyRow(2, 0.5, 20, 0.25, 0.5)])
    assert rows[0].rate_l2 is None and rows[0].rate_h1 is None
    assert rows[1].rate_l2 == pytest.approx(2.0)
    assert rows[1].rate_h1 == pytest.approx(1.0)

    rows = rates([StudyRow(1, 1.0, 10, 1.0, 1.0), StudyRow(2, 0.5, 20, 0.0, 0.5)])
    assert rows[1].rate_l2 is None
    assert rows[1].rate_h1 == pytest.approx(1.0)

    with pytest.raises(StudyConfigError):
        rates([StudyRow(1, 0.5, 10, 1.0, 1.0), StudyRow(2, 0.5, 20, 0.5, 0.5)])


def test_mean_last_rates():
    rows = [StudyRow(1, 1.0, 1, 1.0, 1.0), StudyRow(2, 0.5, 1, 1.0, 1.0, 1.0, 3.0),
            StudyRow(3, 0.25, 1, 1.0, 1.0, 2.0, None), StudyRow(4, 0.125, 1, 1.0, 1.0, 4.0, None)]
    assert mean_last_rates(rows) == (3.0, None)
    assert mean_last_rates(rows[:2]) == (1.0, 3.0)


@pytest.mark.parametrize("degree,levels,l2_band,h1_band", [
    (1, (4, 8, 16), (1.7, 2.3), (0.85, 1.2)),
    (2, (4, 8, 16), (2.6, 3.4), (1.7, 2.3)),
])
def test_convergence_rates_on_squares(degree, levels, l2_band, h1_band):
    config = StudyConfig(degree=degree, levels=levels)
    rows = run_study(config)
    assert [r.level for r in rows] == list(levels)
    assert all(b.err_l2 < a.err_l2 for a, b in zip(rows, rows[1:]))
    rate_l2, rate_h1 = mean_last_rates(rows)
    assert l2_band[0] <= rate_l2 <= l2_band[1]
    assert h1_band[0] <= rate_h1 <= h1_band[1]


def test_small_edges_do_not_spoil_convergence():
    config = StudyConfig(mesh_kind="voronoi", degree=1, levels=(4, 8, 16), small_edges=True, seed=3)
    rate_l2, rate_h1 = mean_last_rates(run_study(config))
    assert rate_l2 > 1.5
    assert rate_h1 > 0.7


def test_study_csv_is_deterministic(tmp_path):
    out = tmp_path / "study.csv"
    config = StudyConfig(degree=1, levels=(2, 4), out=str(out))
    rows = run_study(config)
    first = out.read_bytes()
    run_study(config)
    assert out.read_bytes() == first

    lines = first.decode().split("\n")
    assert lines[0] == ",".join(STUDY_COLUMNS)
    assert lines[1].endswith(",,")
    assert lines[-1] == ""
    assert StudyTableWriter().read_rows(out) == rows


def test_locking_sweep_writes_one_file_per_poisson(tmp_path):
    config = StudyConfig(degree=2, levels=(2, 4), out=str(tmp_path / "lock.csv"))
    table = locking_sweep(config, (0.35, 0.49))
    assert list(table.columns) == ["nu"] + STUDY_COLUMNS
    assert table["nu"].tolist() == [0.35, 0.35, 0.49, 0.49]
    for nu in ("0.35", "0.49"):
        frame = pd.read_csv(tmp_path / f"lock_nu{nu}.csv")
        assert list(frame.columns) == STUDY_COLUMNS
        assert len(frame) == 2


def test_solution_tables(tmp_path):
    config = StudyConfig(degree=2, levels=(2,))
    mesh, dof_map, elements, result, _ = solve_level(config, 2)
    writer = StudyTableWriter()
    frame = pd.read_csv(writer.write_solution(dof_map, result.u, tmp_path / "u.csv"),
                        float_precision="round_trip")
    assert list(frame.columns) == ["dof", "component", "node", "x", "y", "value"]
    assert len(frame) == dof_map.n_dofs
    assert np.array_equal(frame["value"].to_numpy(), result.u)

    cells, points, values = projected_samples(elements, dof_map, result.u)
    assert len(points) == sum(len(cell) + 1 for cell in mesh.cells)
    samples = pd.read_csv(writer.write_samples(points, values, tmp_path / "s.csv", cells))
    assert list(samples.columns) == ["cell", "x", "y", "u1", "u2"]


def test_error_norms_accept_prebuilt_elements():
    mesh = generate_mesh("lshape", "squares", 2)
    dof_map = build_dof_map(mesh, 1)
    elements = build_elements(mesh, 1, MATERIAL)
    patch = manufactured("patch1", MATERIAL)
    u = np.zeros(dof_map.n_dofs)
    for c, element in enumerate(elements):
        u[dof_map.cell_dofs[c]] = element.interpolate(patch.u)
    err_l2, err_h1 = error_norms(mesh, dof_map, 1, MATERIAL, patch, u, elements)
    assert err_l2 < 1e-12
    assert err_h1 < 1e-12


def test_terminal_rates():
    rows = rates([StudyRow(1, 1.0, 1, 1.0, 1.0), StudyRow(2, 0.5, 1, 0.25, 0.5),
                  StudyRow(3, 0.25, 1, 0.125, 0.125)])
    assert terminal_rates(rows) == (pytest.approx(1.0), pytest.approx(2.0))
    assert terminal_rates(rows[:1]) == (None, None)


@pytest.mark.parametrize("error", [ProjectorError("вырожденная окаймленная система"),
                                   np.linalg.LinAlgError("Singular matrix")])
def test_failure_names_level(monkeypatch, error):
    original = study.solve_level

    def failing(config, level, mesh=None):
        if level == 4:
            raise error
        return original(config, level, mesh)

    monkeypatch.setattr(study, "solve_level", failing)
    with pytest.raises(StudyError) as info:
        run_study(StudyConfig(levels=(2, 4)))
    assert info.value.level == 4
    assert "уровень 4" in str(info.value)
    assert info.value.__cause__ is error


def test_locking_trend_violations():
    table = pd.DataFrame({"nu": [0.35, 0.35, 0.45, 0.45, 0.49, 0.49],
                          "level": [4, 8, 4, 8, 4, 8],
                          "err_h1": [1.0, 0.5, 1.1, 0.49999, 1.2, 0.4]})
    assert locking_trend_violations(table) == [(8, 0.45, 0.49)]
    assert locking_trend_violations(table, rtol=0.0) == [(8, 0.35, 0.45), (8, 0.45, 0.49)]


def test_locking_sweep_requires_trend(monkeypatch):
    def fake_study(config, writer=None):
        err = 1.0 - config.material.poisson
        return rates([StudyRow(2, 0.5, 10, err, err), StudyRow(4, 0.25, 40, err / 4, err / 2)])

    monkeypatch.setattr(study, "run_study", fake_study)
    config = StudyConfig(levels=(2, 4))
    table = locking_sweep(config, (0.35, 0.45))
    assert len(table) == 4
    with pytest.raises(LockingTrendError):
        locking_sweep(config, (0.35, 0.45), require_trend=True)


_STUDIES = {}


def _cached_study(**kwargs):
    """Прогон исследования один раз на сессию для совпадающих параметров."""
    key = tuple(sorted(kwargs.items()))
    if key not in _STUDIES:
        _STUDIES[key] = run_study(StudyConfig(**kwargs))
    return _STUDIES[key]


FINE_LEVELS = (8, 16, 32, 64)
BANDS = {1: ((1.8, 2.2), (0.85, 1.15)), 2: ((2.7, 3.3), (1.8, 2.2))}


def _in_bands(rate_pair, degree):
    (l2_lo, l2_hi), (h1_lo, h1_hi) = BANDS[degree]
    rate_l2, rate_h1 = rate_pair
    return l2_lo <= rate_l2 <= l2_hi and h1_lo <= rate_h1 <= h1_hi


@pytest.mark.slow
@pytest.mark.parametrize("degree", [1, 2])
def test_optimal_rates_with_derivative_stabilization(degree):
    rows = _cached_study(degree=degree, levels=FINE_LEVELS, stab="dtangent")
    assert _in_bands(terminal_rates(rows), degree), rows


@pytest.mark.slow
def test_stabilizations_agree_linear():
    derivative = _cached_study(degree=1, levels=FINE_LEVELS, stab="dtangent")
    classic = _cached_study(degree=1, levels=FINE_LEVELS, stab="dofi")
    for a, b in zip(derivative[1:], classic[1:]):
        assert abs(a.rate_l2 - b.rate_l2) < 0.15
        assert abs(a.rate_h1 - b.rate_h1) < 0.15


@pytest.mark.slow
def test_stabilizations_agree_quadratic_asymptotically():
    """При k = 2 разрыв порядков сужается к мелким сеткам, оба предела оптимальны."""
    derivative = _cached_study(degree=2, levels=FINE_LEVELS, stab="dtangent")
    classic = _cached_study(degree=2, levels=FINE_LEVELS, stab="dofi")
    assert _in_bands(terminal_rates(classic), 2)
    assert _in_bands(terminal_rates(derivative), 2)
    gaps_l2 = [abs(a.rate_l2 - b.rate_l2) for a, b in zip(derivative[1:], classic[1:])]
    gaps_h1 = [abs(a.rate_h1 - b.rate_h1) for a, b in zip(derivative[1:], classic[1:])]
    assert all(b < a for a, b in zip(gaps_l2, gaps_l2[1:])), gaps_l2
    assert gaps_h1[-1] < gaps_h1[0], gaps_h1


@pytest.mark.slow
@pytest.mark.parametrize("stab", ["dtangent", "dofi"])
def test_small_edges_keep_triangle_rates(stab):
    plain = terminal_rates(_cached_study(mesh_kind="triangles", levels=FINE_LEVELS, stab=stab))
    split = terminal_rates(_cached_study(mesh_kind="triangles", levels=FINE_LEVELS, stab=stab,
                                         small_edges=True))
    assert abs(plain[0] - split[0]) < 0.1
    assert abs(plain[1] - split[1]) < 0.1


@pytest.mark.slow
def test_locking_trend_on_squares():
    table = locking_sweep(StudyConfig(levels=(32,)), require_trend=True)
    assert table["nu"].tolist() == [0.35, 0.45, 0.47, 0.49]


@pytest.mark.slow
def test_locking_trend_on_triangles_is_strict():
    table = locking_sweep(StudyConfig(mesh_kind="triangles", levels=(32,)), require_trend=True,
                          trend_rtol=0.0)
    assert table["err_h1"].is_monotonic_increasing


@pytest.mark.slow
@pytest.mark.parametrize("stab", ["dtangent", "dofi"])
def test_glued_voronoi_rates(stab):
    rows = _cached_study(mesh_kind="glued_voronoi", levels=FINE_LEVELS, stab=stab)
    assert _in_bands(mean_last_rates(rows), 1), rows


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["triangles", "deformed_triangles_midpoints", "mixed", "voronoi"])
def test_lshape_smooth_rates(kind):
    rows = _cached_study(domain="lshape", mesh_kind=kind, levels=(8, 16, 32))
    assert _in_bands(mean_last_rates(rows), 1), rows
