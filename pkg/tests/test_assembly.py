import itertools
import math

import numpy as np
import pytest

from fbm_forge import assembly
from fbm_forge.errors import ClosureError, GroupNotClosedError


def brute_force_order(omega, limit=200):
    """Closure by repeated products of all elements, no breadth-first bookkeeping."""
    gens = list(assembly.group_generators(omega).values())
    found = [np.eye(3)]
    while True:
        fresh = []
        for A, B in itertools.product(found, gens):
            Q = A @ B
            if all(np.max(np.abs(Q - E)) > 1e-9 for E in found + fresh):
                fresh.append(Q)
        if not fresh:
            return len(found)
        found += fresh
        if len(found) > limit:
            return None


def test_generators_are_involutions():
    for G in assembly.group_generators(0.3).values():
        np.testing.assert_allclose(G @ G, np.eye(3), atol=1e-15)
        assert np.linalg.det(G) == pytest.approx(-1.0)


def test_pi_over_8_group_is_finite():
    group = assembly.enumerate_group(math.pi / 8)
    assert group.finite
    assert group.order == brute_force_order(math.pi / 8) == 32
    assert group.orthogonality_defect() <= 1e-13
    # every element is the product spelled by its word
    gens = group.generators
    for Q, word in zip(group.elements, group.words):
        M = np.eye(3)
        for name in filter(None, word.split(".")):
            M = M @ gens[name]
        np.testing.assert_allclose(M, Q, atol=1e-12)


def test_rotation_order():
    # pi + 2 omega = 5 pi / 4 has order 8
    assert assembly.rotation_order(math.pi / 8) == 8
    assert assembly.rotation_order(math.pi / 6) == 3
    assert assembly.rotation_order(0.1) is None


def test_irrational_angle_does_not_close():
    group = assembly.enumerate_group(0.1, cap=64)
    assert not group.finite and group.order is None and len(group) == 64
    with pytest.raises(ValueError):
        assembly.enumerate_group(0.1, cap=3)


@pytest.fixture(scope="module")
def pi8_mesh(pi8_small):
    return assembly.assemble_surface(pi8_small)


def test_pi_over_8_annulus(pi8_small, pi8_mesh):
    d = pi8_mesh.diagnostics
    assert d["closed"] and d["copies"] == 32
    assert d["euler_characteristic"] == 0
    assert d["boundary_loops"] == 2
    assert d["boundary_sphere_defect"] <= 1e-6
    assert d["max_seam_gap"] <= 1e-7
    assert d["nonmanifold_edges"] == 0 and d["orientation_consistent"]
    piece = assembly.fundamental_piece(pi8_small)
    assert pi8_mesh.n_triangles == 32 * len(piece.triangles)


def test_welded_vertices_keep_provenance(pi8_mesh):
    copy, chart, _ = pi8_mesh.provenance.T
    assert copy.min() == 0 and copy.max() == 31
    assert set(np.unique(chart)) == set(assembly.CHART_CODES.values())
    assert pi8_mesh.raw_to_welded.max() == pi8_mesh.n_vertices - 1


def test_strip_mode_at_irrational_angle(small_initial01):
    mesh = assembly.assemble_surface(small_initial01, copies=3)
    d = mesh.diagnostics
    assert not d["closed"] and not d["group_closes"]
    assert d["copies"] == 12
    assert d["euler_characteristic"] == 1 and d["boundary_loops"] == 1
    assert d["max_seam_gap"] <= 1e-7
    with pytest.raises(GroupNotClosedError):
        assembly.assemble_surface(small_initial01)
    with pytest.raises(ValueError):
        assembly.strip_elements(0.1, 0)


def test_mismatched_planes_fail_to_weld(pi8_small):
    with pytest.raises(ClosureError) as info:
        assembly.assemble_surface(pi8_small, omega=0.1, copies=3)
    assert info.value.worst["gap"] > 1e-7


def test_obj_roundtrip(pi8_mesh, tmp_path):
    path = assembly.export(pi8_mesh, "obj", tmp_path / "annulus.obj")
    verts, faces = assembly.read_obj(path)
    np.testing.assert_allclose(verts, pi8_mesh.vertices, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(faces, pi8_mesh.triangles)


def test_ply_roundtrip_is_exact(pi8_mesh, tmp_path):
    path = assembly.export(pi8_mesh, "ply", tmp_path / "annulus.ply")
    verts, faces = assembly.read_ply(path)
    np.testing.assert_array_equal(verts, pi8_mesh.vertices)
    np.testing.assert_array_equal(faces, pi8_mesh.triangles)


@pytest.mark.parametrize("fmt,reader", [("obj", assembly.read_obj), ("ply", assembly.read_ply)])
def test_empty_mesh_roundtrip(fmt, reader, tmp_path):
    verts, faces = reader(assembly.export(assembly.empty_mesh(), fmt, tmp_path / f"empty.{fmt}"))
    assert verts.shape == (0, 3) and faces.shape == (0, 3)


def test_io_errors_name_the_path(tmp_path):
    missing = tmp_path / "no" / "such" / "dir" / "mesh.obj"
    with pytest.raises(OSError) as info:
        assembly.write_obj(assembly.empty_mesh(), missing)
    assert str(missing) in str(info.value)
    with pytest.raises(OSError) as info:
        assembly.read_ply(tmp_path / "absent.ply")
    assert "absent.ply" in str(info.value)
    with pytest.raises(ValueError):
        assembly.export(assembly.empty_mesh(), "stl", tmp_path / "x.stl")


def test_thread_count_from_environment(monkeypatch):
    monkeypatch.setenv(assembly.THREADS_ENV, "3")
    assert assembly.worker_count() == 3
    monkeypatch.setenv(assembly.THREADS_ENV, "many")
    with pytest.raises(ValueError):
        assembly.worker_count()
