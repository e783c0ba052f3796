import numpy as np
import pytest

from sembed.planar import (
    PlanarityError,
    all_faces,
    build_quad_graph,
    corners_of_quad,
    double_cover_gauge,
    gauge_with_source_swap,
    square_patch_faces,
)


def test_single_square_face():
    g = build_quad_graph(square_patch_faces(1))
    assert g.n_primal == 4
    assert g.n_dual == 2  # inner + outer
    assert g.n_quads == 4
    assert g.n_corners == 8


def test_square_patch_edge_count():
    for n in (2, 3, 4):
        g = build_quad_graph(square_patch_faces(n))
        assert g.n_quads == 2 * n * (n + 1)
        assert g.euler_defect() == 0


def test_quads_alternate_and_distinct():
    g = build_quad_graph(square_patch_faces(3))
    for q in g.quads:
        assert len(set(q)) == 4 or (q[0] != q[2] and q[1] != q[3])


def test_corner_in_two_quads():
    g = build_quad_graph(square_patch_faces(2))
    assert np.all(g.corner_quads >= 0)  # sphere compactification: always 2


def test_adjacent_quads_share_one_corner_pair():
    g = build_quad_graph(square_patch_faces(2))
    for c in range(g.n_corners):
        z1, z2 = g.corner_quads[c]
        shared = set(g.quad_corners[z1]) & set(g.quad_corners[z2])
        assert c in shared
        # generic adjacency shares exactly one corner; two boundary edges
        # meeting at a patch corner share both of theirs (same face pair)
        assert len(shared) in (1, 2)
    interior = [
        c for c in range(g.n_corners)
        if g.corners[c, 1] != 0
        and len(set(g.quad_corners[g.corner_quads[c][0]])
                & set(g.quad_corners[g.corner_quads[c][1]])) == 1
    ]
    assert interior  # generic case realized


def test_three_faces_on_edge_rejected():
    faces = [[0, 1, 2], [0, 2, 1], [0, 1, 3]]  # edge (0,1) used twice same way
    with pytest.raises(PlanarityError):
        build_quad_graph(faces)


def test_loops_rejected():
    with pytest.raises(PlanarityError):
        build_quad_graph([[0, 0, 1, 2]])


def test_deterministic():
    f = square_patch_faces(3)
    g1, g2 = build_quad_graph(f), build_quad_graph(f)
    assert np.array_equal(g1.quads, g2.quads)
    assert np.array_equal(g1.corners, g2.corners)


def test_corners_of_quad_labels():
    g = build_quad_graph(square_patch_faces(2))
    for z in range(g.n_quads):
        c00, c01, c10, c11 = corners_of_quad(g, z)
        v0, d0, v1, d1 = g.quads[z]
        assert tuple(g.corners[c00]) == (v0, d0)
        assert tuple(g.corners[c01]) == (v0, d1)
        assert tuple(g.corners[c10]) == (v1, d0)
        assert tuple(g.corners[c11]) == (v1, d1)


def test_trivial_cover_all_plus():
    g = build_quad_graph(square_patch_faces(2))
    gauge = double_cover_gauge(g, set())
    assert np.all(gauge.edge_signs == 1) or all(
        gauge.face_monodromy(f) == 1 for f in all_faces(g)
    )


def test_branch_over_all_faces():
    g = build_quad_graph(square_patch_faces(2))
    gauge = double_cover_gauge(g, set(all_faces(g)))
    for f in all_faces(g):
        assert gauge.face_monodromy(f) == -1


def test_branch_parity_violation():
    g = build_quad_graph(square_patch_faces(2))
    with pytest.raises(ValueError):
        double_cover_gauge(g, {("q", 0)})


def test_source_swap_gauge():
    g = build_quad_graph(square_patch_faces(2))
    gauge = double_cover_gauge(g, set(all_faces(g)))
    a = g.corner_id(0, 1)  # corner at primal 0, inner face 1
    z_minus = int(g.corner_quads[a][0])
    swapped = gauge_with_source_swap(gauge, a, z_minus)
    va, da = g.corners[a]
    for f in all_faces(g):
        want = -1
        if f == ("p", int(va)) or f == ("d", int(da)):
            want = 1
        assert swapped.face_monodromy(f) == want
    # edge signs differ only on the two flipped edges
    diff = np.nonzero(swapped.edge_signs != gauge.edge_signs)
    assert len(diff[0]) == 2
    assert set(diff[0]) == {z_minus}
