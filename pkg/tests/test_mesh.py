import pytest

from surfelrecon.mesh import TriangleMesh


def test_add_remove():
    m = TriangleMesh()
    t = m.add_triangle(1, 2, 3)
    assert len(m) == 1
    assert m.has_triangle(3, 1, 2)
    assert m.triangles_of(2) == {t}
    m.remove_triangle(t)
    assert len(m) == 0
    assert not m.triangles_of(2)


def test_duplicate_rejected_any_order():
    m = TriangleMesh()
    assert m.add_triangle(1, 2, 3) is not None
    assert m.add_triangle(2, 3, 1) is None
    assert m.add_triangle(3, 2, 1) is None
    assert len(m) == 1


def test_degenerate_raises():
    m = TriangleMesh()
    with pytest.raises(ValueError):
        m.add_triangle(1, 1, 2)


def test_vertex_ring_counts():
    m = TriangleMesh()
    # closed fan of 3 triangles around 0
    m.add_triangle(0, 1, 2)
    m.add_triangle(0, 2, 3)
    m.add_triangle(0, 3, 1)
    ring = m.vertex_ring(0)
    assert ring == {1: 2, 2: 2, 3: 2}


def test_edge_triangles():
    m = TriangleMesh()
    a = m.add_triangle(0, 1, 2)
    b = m.add_triangle(1, 0, 3)
    assert m.edge_triangles(0, 1) == {a, b}
    assert m.edge_triangles(2, 3) == set()


def test_remove_triangles_of():
    m = TriangleMesh()
    m.add_triangle(0, 1, 2)
    m.add_triangle(0, 2, 3)
    m.add_triangle(4, 5, 6)
    removed = m.remove_triangles_of(0)
    assert len(removed) == 2
    assert len(m) == 1


def test_triangle_array_deterministic():
    m = TriangleMesh()
    m.add_triangle(5, 6, 7)
    m.add_triangle(1, 2, 3)
    arr = m.triangle_array()
    assert arr.shape == (2, 3)
    assert tuple(arr[0]) == (5, 6, 7)  # insertion (tid) order
