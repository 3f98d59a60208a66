"""
Тесты генераторов сеток, проверки сеток, метрик и файлового формата.
"""

import numpy as np
import pytest

from geometry import (
    MESH_KINDS,
    Mesh,
    MeshFormatError,
    UnsupportedMeshError,
    generate_mesh,
    load_mesh,
    mesh_metrics,
    save_mesh,
    split_edges_small,
    validate_mesh,
)
from quadrature import signed_area

ALL_KINDS = [(domain, kind) for domain, kinds in MESH_KINDS.items() for kind in kinds]


@pytest.mark.parametrize("domain,kind", ALL_KINDS)
def test_generated_meshes_are_valid(domain, kind):
    mesh = generate_mesh(domain, kind, 4, seed=3)
    assert validate_mesh(mesh) == []
    total = sum(signed_area(mesh.cell_coords(c)) for c in range(mesh.n_cells))
    assert total == pytest.approx(1.0 if domain == "unit_square" else 3.0, rel=1e-10)
    assert all(signed_area(mesh.cell_coords(c)) > 0 for c in range(mesh.n_cells))


@pytest.mark.parametrize("domain,kind", ALL_KINDS)
def test_generation_is_deterministic(domain, kind):
    a = generate_mesh(domain, kind, 3, seed=11)
    b = generate_mesh(domain, kind, 3, seed=11)
    assert np.array_equal(a.vertices, b.vertices)
    assert a.cells == b.cells


def test_squares_counts():
    mesh = generate_mesh("unit_square", "squares", 2)
    assert mesh.n_cells == 4
    assert mesh.n_vertices == 9
    assert int(mesh.boundary_vertex_flags.sum()) == 8


def test_lshape_squares_counts():
    mesh = generate_mesh("lshape", "squares", 2)
    assert mesh.n_cells == 12
    assert not np.any((mesh.vertices[:, 0] > 1.0) & (mesh.vertices[:, 1] > 1.0))


def test_triangles_metrics():
    mesh = generate_mesh("unit_square", "triangles", 4)
    metrics = mesh_metrics(mesh)
    assert mesh.n_cells == 32
    assert metrics.h == pytest.approx(np.sqrt(2.0) / 4.0)
    assert metrics.min_edge == pytest.approx(0.25)


def test_squares_rho_hat():
    metrics = mesh_metrics(generate_mesh("unit_square", "squares", 4))
    assert all(c.rho_hat == pytest.approx(0.125) for c in metrics.per_cell)
    assert all(c.perimeter == pytest.approx(1.0) for c in metrics.per_cell)


def test_deformation_keeps_boundary():
    n = 5
    base = generate_mesh("unit_square", "squares", n)
    deformed = generate_mesh("unit_square", "deformed_squares", n, seed=1)
    flags = base.boundary_vertex_flags
    assert np.array_equal(flags, deformed.boundary_vertex_flags)
    assert np.array_equal(base.vertices[flags], deformed.vertices[flags])
    shift = np.hypot(*(deformed.vertices - base.vertices).T)
    assert shift[~flags].max() <= 0.2 / n + 1e-15
    assert shift[~flags].max() > 0.0


def test_triangles_with_midpoints_are_hexagons():
    mesh = generate_mesh("unit_square", "deformed_triangles_midpoints", 3, seed=2)
    assert all(len(cell) == 6 for cell in mesh.cells)
    for cell in mesh.cells:
        coords = mesh.vertices[list(cell)]
        assert np.allclose(coords[1], 0.5 * (coords[0] + coords[2]))


def test_split_edges_small():
    """Каждое ребро получает точку на расстоянии h_e/50 от вершины с меньшим номером."""
    mesh = generate_mesh("unit_square", "triangles", 4)
    split = split_edges_small(mesh)
    assert split.n_vertices == mesh.n_vertices + len(mesh.canonical_edges)
    assert all(len(cell) == 6 for cell in split.cells)
    assert validate_mesh(split) == []
    assert mesh_metrics(split).min_edge == pytest.approx(0.25 / 50.0)
    for i, (lo, hi) in enumerate(mesh.canonical_edges):
        expected = mesh.vertices[lo] + (mesh.vertices[hi] - mesh.vertices[lo]) / 50.0
        assert np.allclose(split.vertices[mesh.n_vertices + i], expected)
    assert np.array_equal(split.boundary_vertex_flags[:mesh.n_vertices], mesh.boundary_vertex_flags)


def test_split_shared_edges_once():
    mesh = generate_mesh("unit_square", "voronoi", 4, seed=5)
    split = split_edges_small(mesh)
    interior_edges = sum(1 for uses in mesh.edge_cells.values() if len(uses) == 2)
    shared = sum(1 for uses in split.edge_cells.values() if len(uses) == 2)
    assert shared == 2 * interior_edges


@pytest.mark.parametrize("fraction", [0.0, -0.1, 0.6])
def test_split_rejects_fraction(fraction):
    with pytest.raises(ValueError):
        split_edges_small(generate_mesh("unit_square", "squares", 2), fraction)


@pytest.mark.parametrize("domain,kind", [("lshape", "glued_voronoi"), ("unit_square", "mixed"),
                                         ("disk", "squares"), ("unit_square", "hexagons")])
def test_unsupported_combinations(domain, kind):
    with pytest.raises(UnsupportedMeshError):
        generate_mesh(domain, kind, 4)


def test_glued_voronoi_inserts_interface_vertices():
    """На стыках полос в ребра вставлены вершины соседних полос."""
    mesh = generate_mesh("unit_square", "glued_voronoi", 6, seed=4)
    on_interface = np.isclose(mesh.vertices[:, 0], 1.0 / 3.0, atol=1e-12)
    assert on_interface.sum() > 2
    for uses in mesh.edge_cells.values():
        assert len(uses) <= 2


def test_validate_detects_problems():
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    flags = np.ones(4, dtype=bool)
    clockwise = Mesh(vertices=vertices, cells=((0, 3, 2, 1),), boundary_vertex_flags=flags)
    rules = {v.rule for v in validate_mesh(clockwise)}
    assert "orientation" in rules

    bowtie = Mesh(vertices=vertices, cells=((0, 1, 3, 2),), boundary_vertex_flags=flags)
    assert "self-intersection" in {v.rule for v in validate_mesh(bowtie)}

    overlapping = Mesh(vertices=vertices, cells=((0, 1, 2), (0, 1, 2)), boundary_vertex_flags=flags,
                       domain_area=0.5)
    rules = {v.rule for v in validate_mesh(overlapping)}
    assert "edge-orientation" in rules
    assert "area-sum" in rules


def test_save_and_load(tmp_path):
    mesh = generate_mesh("lshape", "voronoi", 3, seed=7)
    path = save_mesh(mesh, tmp_path / "mesh.txt")
    loaded = load_mesh(path)
    assert np.array_equal(loaded.vertices, mesh.vertices)
    assert loaded.cells == mesh.cells
    assert np.array_equal(loaded.boundary_vertex_flags, mesh.boundary_vertex_flags)
    assert loaded.domain == "lshape"
    assert loaded.domain_area == pytest.approx(3.0)


def test_load_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("polymesh2d 2\n3 1\n")
    with pytest.raises(MeshFormatError) as info:
        load_mesh(path)
    assert info.value.line == 1

    path.write_text("polymesh2d 1\n3 1\n0 0 1\n1 0 1\n0 1 1\n3 0 1 5\n")
    with pytest.raises(MeshFormatError) as info:
        load_mesh(path)
    assert info.value.line == 6

    path.write_text("polymesh2d 1\n3 1\n0 0 1\n1 0 1\n0 1\n3 0 1 2\n")
    with pytest.raises(MeshFormatError) as info:
        load_mesh(path)
    assert info.value.line == 5


def test_load_without_domain_uses_boundary_area(tmp_path):
    path = tmp_path / "tri.txt"
    path.write_text("polymesh2d 1\n# один треугольник\n3 1\n0 0 1\n2 0 1\n0 2 1\n3 0 1 2\n")
    mesh = load_mesh(path)
    assert mesh.domain == "custom"
    assert validate_mesh(mesh) == []
