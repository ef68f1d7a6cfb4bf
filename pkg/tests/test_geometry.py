import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from causticsim import geometry as g
from causticsim.errors import ParseError

finite = st.floats(-10, 10, allow_nan=False)
vec = st.tuples(finite, finite, finite)
unit_axis = vec.filter(lambda v: math.sqrt(sum(c * c for c in v)) > 1e-3)


@given(unit_axis, st.floats(-7, 7), vec)
def test_quat_rotation_matches_matrix(axis, angle, v):
    q = g.quat_from_axis_angle(axis, angle)
    assert abs(math.sqrt(sum(c * c for c in q)) - 1.0) < 1e-12
    np.testing.assert_allclose(g.quat_rotate(q, v), g.quat_to_matrix(q) @ np.asarray(v), atol=1e-9)


@given(unit_axis, st.floats(-3, 3), unit_axis, st.floats(-3, 3))
def test_quat_mul_composes(a1, t1, a2, t2):
    q1, q2 = g.quat_from_axis_angle(a1, t1), g.quat_from_axis_angle(a2, t2)
    np.testing.assert_allclose(
        g.quat_to_matrix(g.quat_mul(q1, q2)), g.quat_to_matrix(q1) @ g.quat_to_matrix(q2), atol=1e-12
    )


@given(unit_axis, st.floats(-3.1, 3.1))
def test_matrix_round_trip(axis, angle):
    q = g.quat_from_axis_angle(axis, angle)
    m = g.quat_to_matrix(q)
    np.testing.assert_allclose(g.quat_to_matrix(g.quat_from_matrix(m)), m, atol=1e-12)


@given(unit_axis, unit_axis)
def test_quat_between_maps_a_to_b(a, b):
    a = np.asarray(a) / np.linalg.norm(a)
    b = np.asarray(b) / np.linalg.norm(b)
    np.testing.assert_allclose(g.quat_rotate(g.quat_between(a, b), a), b, atol=1e-9)


def test_look_at_points_minus_z_at_target():
    eye, target = (1.0, 2.0, 3.0), (0.0, 0.0, 0.0)
    q = g.look_at(eye, target)
    fwd = g.quat_rotate(q, (0.0, 0.0, -1.0))
    want = -np.asarray(eye) / np.linalg.norm(eye)
    np.testing.assert_allclose(fwd, want, atol=1e-12)
    # camera +y stays in the upper half space
    assert g.quat_rotate(q, (0.0, 1.0, 0.0))[2] > 0


@pytest.mark.parametrize("mesh", [
    g.icosphere(0.5, 2), g.box((1, 2, 3)), g.cylinder(0.3, 1), g.cone(0.3, 1), g.wedge(1, 1, 1),
])
def test_meshes_closed_and_outward(mesh):
    # closed: every edge used once in each direction
    edges = np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]], mesh.faces[:, [2, 0]]])
    fwd = {tuple(e) for e in edges.tolist()}
    pos = np.round(mesh.vertices, 9)
    key = lambda i: tuple(pos[i])  # noqa: E731
    directed = [(key(a), key(b)) for a, b in edges.tolist()]
    assert len(set(directed)) == len(directed)
    assert all((b, a) in set(directed) for a, b in directed)
    assert fwd
    v = mesh.vertices[mesh.faces]
    vol = np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0
    assert vol > 0
    np.testing.assert_allclose(np.linalg.norm(mesh.normals, axis=1), 1.0, atol=1e-12)


def test_box_volume_and_centroid():
    m = g.box((1.0, 2.0, 3.0))
    v = m.vertices[m.faces]
    vol = np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0
    assert vol == pytest.approx(6.0)
    np.testing.assert_allclose(m.volume_centroid(), 0.0, atol=1e-12)


def test_icosphere_vertices_on_sphere():
    m = g.icosphere(0.25, 3)
    np.testing.assert_allclose(np.linalg.norm(m.vertices, axis=1), 0.25, rtol=1e-12)
    assert m.bounding_radius == pytest.approx(0.25)


def test_obj_round_trip(tmp_path):
    m = g.cylinder(0.2, 0.5, 16)
    g.write_obj(m, tmp_path / "c.obj")
    r = g.read_obj(tmp_path / "c.obj")
    np.testing.assert_array_equal(r.vertices[r.faces], m.vertices[m.faces])
    np.testing.assert_allclose(r.normals[r.faces], m.normals[m.faces], atol=1e-15)


def test_obj_without_normals_and_quads(tmp_path):
    (tmp_path / "q.obj").write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    m = g.read_obj(tmp_path / "q.obj")
    assert m.faces.shape == (2, 3)
    np.testing.assert_allclose(m.normals, [[0, 0, 1]] * 4)


@pytest.mark.parametrize("text", ["", "v 0 0 0\nf 1 2 3\n", "v a b c\n", "# nothing\n"])
def test_obj_malformed(tmp_path, text):
    (tmp_path / "bad.obj").write_text(text)
    with pytest.raises(ParseError):
        g.read_obj(tmp_path / "bad.obj")
