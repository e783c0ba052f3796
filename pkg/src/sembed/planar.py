"""Combinatorics of planar graphs for the s-embedding machinery.

A planar graph G comes with its dual.  We work with:

* primal vertices (black, ``G•``), indexed ``0..n_primal-1``;
* dual vertices (white, ``G◦``), one per face *including the outer face*,
  which is always dual vertex ``0`` in disc-like patches;
* quads, one per edge of G, stored as a 4-tuple ``(v0, d0, v1, d1)``
  of alternating primal/dual vertices in counterclockwise order;
* corners, the edges of the bipartite graph Lambda(G) = G• ∪ G◦, i.e.
  incident (primal, dual) pairs.  Corners carry the fermions.

The corner graph Y(G) has the corners as vertices; two corners are adjacent
when they are consecutive in the corner cycle of a common quad.  Every quad
contributes a 4-cycle of corners ``c00 - c10 - c11 - c01`` where
``c_pq = (v_p, d_q)``.  Faces of Y(G) correspond to quads, primal vertices
and dual vertices; spinors live on double covers of Y(G) branching over a
prescribed set of those faces.  Covers are represented by a sign gauge on
the edges of Y(G) rather than by materializing the cover.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "QuadGraph",
    "SignGauge",
    "build_quad_graph",
    "square_patch_faces",
    "corners_of_quad",
    "double_cover_gauge",
    "all_faces",
    "interior_faces",
    "gauge_with_source_swap",
]


class PlanarityError(ValueError):
    pass


# Within a quad the corner cycle is (c00, c10, c11, c01); edge k of the
# cycle joins cycle[k] and cycle[(k+1) % 4].  The Lambda-vertex shared by
# the two corners of edge k (position in the quad tuple):
#   k=0: c00-c10 share d0;  k=1: c10-c11 share v1;
#   k=2: c11-c01 share d1;  k=3: c01-c00 share v0.
_EDGE_SHARED_SLOT = (1, 2, 3, 0)  # index into the quad tuple (v0,d0,v1,d1)


@dataclass(frozen=True)
class QuadGraph:
    """Immutable combinatorial data of G, its dual, quads and corners."""

    n_primal: int
    n_dual: int
    quads: np.ndarray          # (nq, 4) int: (v0, d0, v1, d1), ccw
    corners: np.ndarray        # (nc, 2) int: (primal, dual), lexicographic
    quad_corners: np.ndarray   # (nq, 4) corner ids in cycle order (c00,c10,c11,c01)
    corner_quads: np.ndarray   # (nc, 2) quad ids containing the corner (-1 pad)
    has_outer: bool = True     # dual vertex 0 is the outer face

    @property
    def n_quads(self) -> int:
        return len(self.quads)

    @property
    def n_corners(self) -> int:
        return len(self.corners)

    def corner_id(self, primal: int, dual: int) -> int:
        i = np.searchsorted(self._corner_keys, primal * (self.n_dual + 1) + dual)
        if i >= len(self.corners) or tuple(self.corners[i]) != (primal, dual):
            raise KeyError(f"no corner ({primal}, {dual})")
        return int(i)

    @property
    def _corner_keys(self) -> np.ndarray:
        return self.corners[:, 0] * (self.n_dual + 1) + self.corners[:, 1]

    @property
    def boundary_corners(self) -> np.ndarray:
        """Corners incident to the outer face (empty if no outer face)."""
        if not self.has_outer:
            return np.empty(0, dtype=np.int64)
        return np.nonzero(self.corners[:, 1] == 0)[0]

    def euler_defect(self) -> int:
        """|G•| + |G◦| - |quads| - 2; zero on sphere-like patches."""
        return self.n_primal + self.n_dual - self.n_quads - 2

    def primal_degree(self) -> np.ndarray:
        deg = np.zeros(self.n_primal, dtype=np.int64)
        np.add.at(deg, self.quads[:, 0], 1)
        np.add.at(deg, self.quads[:, 2], 1)
        return deg


def square_patch_faces(n: int, m: int | None = None) -> list[list[int]]:
    """Faces of an n x m patch of the square lattice.

    Primal vertices sit on the (n+1) x (m+1) grid, id = i*(m+1) + j for
    grid point (i, j); faces are listed row-major, counterclockwise.
    """
    if m is None:
        m = n
    faces = []
    for i in range(n):
        for j in range(m):
            a = i * (m + 1) + j
            b = (i + 1) * (m + 1) + j
            faces.append([a, b, b + 1, a + 1])
    return faces


def build_quad_graph(faces: list[list[int]]) -> QuadGraph:
    """Build the quad graph from a list of interior faces (ccw vertex cycles).

    The outer face is inferred and becomes dual vertex 0.  Interior face k
    becomes dual vertex k+1.  Each undirected edge of G yields one quad
    ``(v0, d0, v1, d1)`` with v0 < v1 and d0 the face to the right of the
    oriented edge v0 -> v1 (so the tuple is counterclockwise in the plane).
    """
    directed: dict[tuple[int, int], int] = {}
    n_primal = 0
    for k, cyc in enumerate(faces):
        if len(cyc) < 3:
            raise PlanarityError(f"face {k} has fewer than 3 vertices")
        for a, b in zip(cyc, cyc[1:] + cyc[:1]):
            if a == b:
                raise PlanarityError("loops are not allowed")
            if (a, b) in directed:
                raise PlanarityError(
                    f"edge ({a},{b}) traversed twice in the same direction "
                    "(an edge may border at most 2 faces)"
                )
            directed[(a, b)] = k + 1
            n_primal = max(n_primal, a + 1, b + 1)

    seen = set()
    quad_list = []
    for (a, b), left in directed.items():
        if (min(a, b), max(a, b)) in seen:
            continue
        seen.add((min(a, b), max(a, b)))
        right = directed.get((b, a), 0)  # 0 = outer face
        # orient with v0 = a: quad (v0, right-of(v0->v1), v1, left-of(v0->v1))
        if a < b:
            quad_list.append((a, right, b, left))
        else:
            quad_list.append((b, left, a, right))
    quad_list.sort()
    quads = np.asarray(quad_list, dtype=np.int64)
    n_dual = len(faces) + 1
    return _finish_quad_graph(n_primal, n_dual, quads, has_outer=True)


def _finish_quad_graph(
    n_primal: int, n_dual: int, quads: np.ndarray, has_outer: bool
) -> QuadGraph:
    nq = len(quads)
    # corners: distinct (primal, dual) incidences
    pd = np.empty((4 * nq, 2), dtype=np.int64)
    pd[0::4] = quads[:, [0, 1]]  # c00
    pd[1::4] = quads[:, [2, 1]]  # c10
    pd[2::4] = quads[:, [2, 3]]  # c11
    pd[3::4] = quads[:, [0, 3]]  # c01
    keys = pd[:, 0] * (n_dual + 1) + pd[:, 1]
    uniq, inverse = np.unique(keys, return_inverse=True)
    corners = np.column_stack([uniq // (n_dual + 1), uniq % (n_dual + 1)])
    quad_corners = inverse.reshape(nq, 4)

    corner_quads = np.full((len(corners), 2), -1, dtype=np.int64)
    count = np.zeros(len(corners), dtype=np.int64)
    for z in range(nq):
        for c in quad_corners[z]:
            if count[c] >= 2:
                raise PlanarityError(
                    f"corner {tuple(corners[c])} belongs to more than two quads"
                )
            corner_quads[c, count[c]] = z
            count[c] += 1
    return QuadGraph(
        n_primal=n_primal,
        n_dual=n_dual,
        quads=quads,
        corners=corners,
        quad_corners=quad_corners,
        corner_quads=corner_quads,
        has_outer=has_outer,
    )


def corners_of_quad(g: QuadGraph, z: int) -> tuple[int, int, int, int]:
    """Corner ids (c00, c01, c10, c11) of quad z, c_pq = (v_p, d_q)."""
    if not 0 <= z < g.n_quads:
        raise KeyError(f"unknown quad {z}")
    c00, c10, c11, c01 = g.quad_corners[z]
    return int(c00), int(c01), int(c10), int(c11)


# ---------------------------------------------------------------------------
# Double covers of the corner graph Y(G)
# ---------------------------------------------------------------------------

def all_faces(g: QuadGraph) -> list[tuple[str, int]]:
    """All faces of Y(G): ('q', z), ('p', v) and ('d', u)."""
    return (
        [("q", z) for z in range(g.n_quads)]
        + [("p", v) for v in range(g.n_primal)]
        + [("d", u) for u in range(g.n_dual)]
    )


def interior_faces(g: QuadGraph) -> list[tuple[str, int]]:
    """Faces of Y(G) whose boundary is a closed cycle.

    On a patch without the outer face, fans around boundary Lambda-vertices
    are open paths, so their edge-sign product is not gauge-invariant and
    monodromy conditions are vacuous there.  Quads are always closed; a fan
    is closed iff every corner at its Lambda-vertex lies in two quads.
    """
    closed_corner = np.all(g.corner_quads >= 0, axis=1)
    closed_p = np.ones(g.n_primal, dtype=bool)
    closed_d = np.ones(g.n_dual, dtype=bool)
    for c in np.nonzero(~closed_corner)[0]:
        closed_p[g.corners[c, 0]] = False
        closed_d[g.corners[c, 1]] = False
    return (
        [("q", z) for z in range(g.n_quads)]
        + [("p", int(v)) for v in np.nonzero(closed_p)[0]]
        + [("d", int(u)) for u in np.nonzero(closed_d)[0]]
    )


def corner_graph_face_edges(
    g: QuadGraph,
) -> dict[tuple[str, int], list[tuple[int, int]]]:
    """Map each face of Y(G) to the list of Y-edges (z, k) on its boundary."""
    fe: dict[tuple[str, int], list[tuple[int, int]]] = {}
    for z in range(g.n_quads):
        fe[("q", z)] = [(z, k) for k in range(4)]
        for k in range(4):
            fe.setdefault(_face_of_edge(g, z, k), []).append((z, k))
    return fe


@dataclass(frozen=True)
class SignGauge:
    """Section of a double cover of Y(G): +-1 transport per Y-edge.

    ``edge_signs[z, k]`` is the transport along edge k of quad z's corner
    cycle.  Spinor values are stored on base corners; transporting a value
    across edge (z, k) multiplies it by ``edge_signs[z, k]``.  The product
    of signs around a face of Y(G) is -1 exactly at the branch faces.
    """

    graph: QuadGraph
    edge_signs: np.ndarray           # (nq, 4) of +-1
    branch: frozenset = field(default_factory=frozenset)

    def sign(self, z: int, k: int) -> int:
        return int(self.edge_signs[z, k])

    def face_monodromy(self, face: tuple[str, int]) -> int:
        """Product of edge signs around a face of Y(G)."""
        return self.loop_transport(corner_graph_face_edges(self.graph)[face])

    def loop_transport(self, edges: list[tuple[int, int]]) -> int:
        prod = 1
        for z, k in edges:
            prod *= int(self.edge_signs[z, k])
        return prod


def _face_of_edge(g: QuadGraph, z: int, k: int) -> tuple[str, int]:
    """The non-quad face of Y(G) bordered by edge (z, k)."""
    slot = _EDGE_SHARED_SLOT[k]
    v = int(g.quads[z, slot])
    return ("p", v) if slot in (0, 2) else ("d", v)


def double_cover_gauge(
    g: QuadGraph, branch_spec: set[tuple[str, int]]
) -> SignGauge:
    """Edge-sign gauge realizing the double cover branching over branch_spec.

    Faces are named ('q', z) for quads, ('p', v) for primal vertices and
    ('d', u) for dual vertices.  On sphere-like patches the branch set must
    have even cardinality.  Deterministic: BFS from face ('q', 0).
    """
    branch = frozenset(branch_spec)
    if g.euler_defect() == 0 and len(branch) % 2 != 0:
        raise ValueError("branch set must have even cardinality on a sphere")

    nq = g.n_quads
    signs = np.ones((nq, 4), dtype=np.int64)

    # dual graph on faces of Y(G); each Y-edge joins a 'q' face and a
    # vertex face.  Spanning tree by BFS, then fix monodromies leaves-up.
    adj: dict[tuple[str, int], list[tuple[tuple[str, int], tuple[int, int]]]] = {}
    for z in range(nq):
        for k in range(4):
            f = _face_of_edge(g, z, k)
            adj.setdefault(("q", z), []).append((f, (z, k)))
            adj.setdefault(f, []).append((("q", z), (z, k)))

    root = ("q", 0)
    parent_edge: dict[tuple[str, int], tuple[int, int]] = {}
    order = [root]
    seen = {root}
    queue = deque([root])
    while queue:
        f = queue.popleft()
        for f2, e in adj[f]:
            if f2 not in seen:
                seen.add(f2)
                parent_edge[f2] = e
                order.append(f2)
                queue.append(f2)

    face_edges = corner_graph_face_edges(g)
    target = {f: (-1 if f in branch else 1) for f in seen}

    def mono(f):
        p = 1
        for z, k in face_edges[f]:
            p *= int(signs[z, k])
        return p

    for f in reversed(order[1:]):
        if mono(f) != target[f]:
            z, k = parent_edge[f]
            signs[z, k] = -signs[z, k]
    if mono(root) != target[root]:
        raise ValueError("inconsistent branch parity: root face unsatisfiable")
    return SignGauge(graph=g, edge_signs=signs, branch=branch)


def gauge_with_source_swap(
    gauge: SignGauge, a: int, z_minus: int
) -> SignGauge:
    """Gauge for the cover branching everywhere except at corner a's endpoints.

    Starting from a gauge for the everywhere-branching cover, flip the two
    Y-edges incident to corner ``a`` inside quad ``z_minus``.  This removes
    the branching at the primal and dual endpoints of a while leaving every
    other face monodromy unchanged ("nearby connections to a+- swapped");
    the quad z_minus keeps its branching and becomes the quad where the
    propagation equation fails for the source fermion.
    """
    g = gauge.graph
    cyc = g.quad_corners[z_minus]
    ks = [k for k in range(4) if a in (cyc[k], cyc[(k + 1) % 4])]
    if len(ks) != 2:
        raise ValueError(f"corner {a} not in quad {z_minus}")
    signs = gauge.edge_signs.copy()
    for k in ks:
        signs[z_minus, k] = -signs[z_minus, k]
    va, da = gauge.graph.corners[a]
    branch = set(gauge.branch) - {("p", int(va)), ("d", int(da))}
    return SignGauge(graph=g, edge_signs=signs, branch=frozenset(branch))
