"""Bosonization faces and S-graphs: S + alpha^2 Q, walk rates, Laplacian.

Each quad z of an s-embedding splits into four triangles (one Lambda-edge
plus the incircle centre each), two black and two white in a bipartite
coloring: triangles alternate around each quad and the two triangles of a
corner (one per quad containing it) get opposite colors.  Dimer weights
on adjacent (white, black) pairs are

    K = 1      if the pair shares the corner edge (different quads),
    K = cos t  if the pair shares the primal vertex of a quad with angle t,
    K = sin t  if the pair shares the dual vertex.

For unimodular alpha, the map F = S + alpha^2 Q (with the complex origami
extension at quad centres for the chosen coloring) folds every black
triangle onto a segment.  The S-graph is the image structure: vertices
are the distinct image points (Lambda vertices and centres, merged where
a white triangle collapses), each interior vertex lies strictly inside
exactly one black segment, and the random walk jumps to the segment
endpoints with rates

    q(v -> v_pm) = 1 / (|v_pm - v| |v_plus - v_minus|).

The white triangle of corner c collapses exactly when alpha is
conj(sigma eta_c) up to sign (equivalently S(v) - S(u) lies in
-alpha^2 R_+); the merged (degenerate) vertex jumps into the third
points of its three adjacent black faces with rates m_k / |v_k - v|^2,
m_k proportional to the black-triangle areas.  The invariant measure mu
is the black-face area (3-face area sum at a degenerate vertex).
"""

from __future__ import annotations

import cmath
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .embedding import SEmbedding, OrigamiMap, extend_to_quads, SIGMA
from .planar import QuadGraph

__all__ = [
    "TFaces",
    "SGraph",
    "bosonize",
    "tface_weights",
    "angle_sums",
    "alpha_for_corner",
    "build_sgraph",
    "assemble_laplacian",
    "simulate_walk",
    "segment_rates",
]


# ---------------------------------------------------------------------------
# Bosonization triangles
# ---------------------------------------------------------------------------

@dataclass
class TFaces:
    emb: SEmbedding
    white_mask: np.ndarray       # (nq, 4) bool per cycle position
    anchor: int | None = None    # corner whose white face sits in z_a+
    z_plus: int | None = None

    @property
    def eta_d(self) -> np.ndarray:
        """Per-corner unimodular face value, equal on c-black and c-white."""
        return np.conj(SIGMA) * self.emb.eta

    def white_face_of_corner(self, c: int) -> tuple[int, int]:
        """(quad, cycle position) of corner c's white triangle."""
        return self._face_of_corner(c, True)

    def black_face_of_corner(self, c: int) -> tuple[int, int]:
        return self._face_of_corner(c, False)

    def _face_of_corner(self, c, want_white):
        g = self.emb.graph
        out = []
        for z in g.corner_quads[c]:
            if z < 0:
                continue
            j = int(np.nonzero(g.quad_corners[z] == c)[0][0])
            if bool(self.white_mask[z, j]) == want_white:
                out.append((int(z), j))
        if len(out) != 1:
            raise ValueError(
                f"corner {c} has {len(out)} "
                f"{'white' if want_white else 'black'} faces (boundary?)"
            )
        return out[0]


def bosonize(emb: SEmbedding, anchor: int | None = None,
             z_plus: int | None = None) -> TFaces:
    """Bipartite triangle coloring; with an anchor corner a, the white
    face of a is placed inside the quad z_a+ (default: the second quad of
    the corner, matching the oracle's z_a- = first-quad default)."""
    g = emb.graph
    # white_mask[z, j] = b[z] ^ (j % 2): within-quad alternation built in.
    b = np.full(g.n_quads, -1, dtype=np.int8)
    constraints = []  # (z1, z2, parity): b[z1] ^ b[z2] must equal parity
    for c in range(g.n_corners):
        zs = [int(z) for z in g.corner_quads[c] if z >= 0]
        if len(zs) != 2:
            continue
        z1, z2 = zs
        j1 = int(np.nonzero(g.quad_corners[z1] == c)[0][0])
        j2 = int(np.nonzero(g.quad_corners[z2] == c)[0][0])
        constraints.append((z1, z2, 1 ^ (j1 % 2) ^ (j2 % 2)))
    adj: list[list[tuple[int, int]]] = [[] for _ in range(g.n_quads)]
    for z1, z2, p in constraints:
        adj[z1].append((z2, p))
        adj[z2].append((z1, p))
    starts = []
    if anchor is not None:
        if z_plus is None:
            z_plus = int(g.corner_quads[anchor][1])
        j = int(np.nonzero(g.quad_corners[z_plus] == anchor)[0][0])
        b[z_plus] = 1 ^ (j % 2)  # makes white_mask[z_plus, j] True
        starts.append(z_plus)
    starts.extend(range(g.n_quads))
    for start in starts:
        if b[start] < 0:
            b[start] = 0
        queue = deque([start])
        while queue:
            z = queue.popleft()
            for z2, p in adj[z]:
                want = b[z] ^ p
                if b[z2] < 0:
                    b[z2] = want
                    queue.append(z2)
                elif b[z2] != want:
                    raise ValueError("triangle coloring is not bipartite")
    white = (b[:, None] ^ (np.arange(4)[None, :] % 2)).astype(bool)
    return TFaces(emb, white, anchor, z_plus)


def tface_weights(tf: TFaces):
    """List of (white_face, black_face, K) with faces labelled (z, j).

    Within a quad, cycle edge k joins positions k and k+1 (mod 4); the
    shared Lambda vertex is primal for k in {1, 3} (K = cos t) and dual
    for k in {0, 2} (K = sin t).  Across quads, the two faces of a corner
    share its Lambda edge with K = 1.
    """
    emb = tf.emb
    g = emb.graph
    out = []
    cth, sth = np.cos(emb.thetas), np.sin(emb.thetas)
    for z in range(g.n_quads):
        for k in range(4):
            j1, j2 = k, (k + 1) % 4
            f1, f2 = (z, j1), (z, j2)
            K = cth[z] if k in (1, 3) else sth[z]
            if tf.white_mask[z, j1]:
                out.append((f1, f2, float(K)))
            else:
                out.append((f2, f1, float(K)))
    for c in range(g.n_corners):
        zs = [int(z) for z in g.corner_quads[c] if z >= 0]
        if len(zs) != 2:
            continue
        faces = []
        for z in zs:
            j = int(np.nonzero(g.quad_corners[z] == c)[0][0])
            faces.append(((z, j), bool(tf.white_mask[z, j])))
        (fa, wa), (fb, wb) = faces
        if wa == wb:
            raise ValueError("corner faces not oppositely colored")
        out.append((fa if wa else fb, fb if wa else fa, 1.0))
    return out


def angle_sums(tf: TFaces) -> dict:
    """Sum of black-triangle angles at each interior Lambda vertex (and
    the white sums); both should equal pi on an s-embedding."""
    emb = tf.emb
    g = emb.graph
    n_lam = g.n_primal + g.n_dual
    black = np.zeros(n_lam)
    white = np.zeros(n_lam)
    interior = np.ones(n_lam, dtype=bool)
    for c in range(g.n_corners):
        if np.any(g.corner_quads[c] < 0):
            v, u = g.corners[c]
            interior[v] = False
            interior[g.n_primal + u] = False
    for z in range(g.n_quads):
        for j in range(4):
            c = g.quad_corners[z, j]
            v, u = g.corners[c]
            pv = emb.pos[v]
            pu = emb.pos[g.n_primal + u]
            pz = emb.pos_quad[z]
            for lam, p, q, r in ((v, pv, pu, pz),
                                 (g.n_primal + u, pu, pv, pz)):
                ang = abs(cmath.phase((q - p) / (r - p)))
                if tf.white_mask[z, j]:
                    white[lam] += ang
                else:
                    black[lam] += ang
    return {"black": black, "white": white, "interior": interior}


# ---------------------------------------------------------------------------
# S-graph construction
# ---------------------------------------------------------------------------

def alpha_for_corner(emb: SEmbedding, c: int) -> complex:
    """The unimodular alpha collapsing the white face of corner c:
    alpha = conj(sigma eta_c), i.e. alpha^2 = -Delta_c/|Delta_c|."""
    return complex(np.conj(SIGMA * emb.eta[c]))


@dataclass
class SGraph:
    emb: SEmbedding
    tfaces: TFaces
    alpha: complex
    points: np.ndarray            # complex position per S-graph vertex
    cls_of_lambda: np.ndarray     # Lambda index -> vertex id
    cls_of_centre: np.ndarray     # quad index -> vertex id
    degenerate: list              # vertex ids merged from collapsed whites
    collapsed_whites: list        # (corner, quad, pos) of collapsed faces
    neighbors: list               # per vertex: list of (vertex id, rate)
    mu: np.ndarray                # invariant measure per vertex
    black_of_vertex: np.ndarray   # per vertex: black face index or -1
    black_faces: list             # (z, j) per black face index
    interior: np.ndarray          # vertices with assigned rates

    @property
    def n_vertices(self) -> int:
        return len(self.points)

    def vertex_of_lambda(self, lam: int) -> int:
        return int(self.cls_of_lambda[lam])


def segment_rates(pv: complex, p1: complex, p2: complex) -> tuple[float, float]:
    """Rates out of a point strictly inside the segment [p1, p2]."""
    span = abs(p1 - p2)
    return 1.0 / (abs(p1 - pv) * span), 1.0 / (abs(p2 - pv) * span)


def build_sgraph(emb: SEmbedding, om: OrigamiMap, alpha: complex,
                 tf: TFaces | None = None, tol: float = 1e-9) -> SGraph:
    if abs(abs(alpha) - 1.0) > 1e-12:
        raise ValueError("alpha must be unimodular")
    if tf is None:
        tf = bosonize(emb)
    g = emb.graph
    n_lam = g.n_primal + g.n_dual
    a2 = alpha * alpha
    Qz = extend_to_quads(om, tf.white_mask)
    F_lam = emb.pos + a2 * om.values
    F_cen = emb.pos_quad + a2 * Qz
    scale = float(np.median(emb.corner_length))

    # --- collapse detection:  white face of corner c shrinks iff
    #     u_c + alpha^2 == 0 (then F(v) == F(u) == F(z_w))
    u = emb.corner_delta / emb.corner_length
    gap = np.abs(u + a2)
    collapsed = gap <= 1e-12 * 10
    near = (gap > 1e-11) & (gap < 1e-6)
    if np.any(near):
        raise ValueError(
            "alpha is within tolerance of a degeneracy direction for "
            f"corners {np.nonzero(near)[0].tolist()} but not exactly equal; "
            "snap alpha with alpha_for_corner first"
        )

    # --- union-find over Lambda points + centres
    allF = np.concatenate([F_lam, F_cen])
    parent = np.arange(n_lam + g.n_quads)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    collapsed_whites = []
    for c in np.nonzero(collapsed)[0]:
        v, du = g.corners[c]
        pts = [int(v), g.n_primal + int(du)]
        zw = None
        for z in g.corner_quads[c]:
            if z < 0:
                continue
            j = int(np.nonzero(g.quad_corners[z] == c)[0][0])
            if tf.white_mask[z, j]:
                zw = int(z)
                pts.append(n_lam + zw)
        pos = [allF[i] for i in pts]
        if max(abs(p - pos[0]) for p in pos) > 1e-6 * scale:
            raise AssertionError("collapse criterion met but points differ")
        for i in pts[1:]:
            union(pts[0], i)
        collapsed_whites.append((int(c), zw))

    roots = {}
    cls = np.empty(n_lam + g.n_quads, dtype=np.int64)
    for i in range(n_lam + g.n_quads):
        r = find(i)
        if r not in roots:
            roots[r] = len(roots)
        cls[i] = roots[r]
    n_vert = len(roots)
    points = np.empty(n_vert, dtype=complex)
    for i in range(n_lam + g.n_quads):
        points[cls[i]] = allF[i]
    degenerate = sorted(
        {int(cls[g.corners[c, 0]]) for c, _ in collapsed_whites}
    )

    # --- black faces: (z, j) with 3 member points and S-plane area
    black_faces = []
    members = []
    areas = []
    for z in range(g.n_quads):
        for j in range(4):
            if tf.white_mask[z, j]:
                continue
            c = g.quad_corners[z, j]
            v, du = g.corners[c]
            ids = (int(cls[int(v)]), int(cls[n_lam - g.n_dual + int(du)]),
                   int(cls[n_lam + z]))
            p = (emb.pos[int(v)], emb.pos[g.n_primal + int(du)],
                 emb.pos_quad[z])
            area = 0.5 * abs(
                ((p[1] - p[0]) * np.conj(p[2] - p[0])).imag
            )
            black_faces.append((z, j))
            members.append(ids)
            areas.append(area)
    areas = np.asarray(areas)

    # --- rates
    neighbors: list[list[tuple[int, float]]] = [[] for _ in range(n_vert)]
    black_of_vertex = np.full(n_vert, -1, dtype=np.int64)
    deg_faces: dict[int, list[tuple[int, int]]] = {d: [] for d in degenerate}
    for bf, ids in enumerate(members):
        uniq = sorted(set(ids))
        if len(uniq) == 2:
            # face adjacent to a collapsed white: repeated point is the
            # degenerate vertex, the segment runs to the third point
            rep = ids[0] if ids.count(ids[0]) == 2 else (
                ids[1] if ids.count(ids[1]) == 2 else ids[2])
            other = [i for i in ids if i != rep][0]
            if rep not in deg_faces:
                raise AssertionError(
                    "repeated black-face point at a non-degenerate vertex"
                )
            deg_faces[rep].append((bf, other))
            continue
        if len(uniq) == 1:
            raise AssertionError("black face fully collapsed")
        p = [points[i] for i in ids]
        # the two farthest-apart points are the segment endpoints
        pairs = [(abs(p[0] - p[1]), 2), (abs(p[0] - p[2]), 1),
                 (abs(p[1] - p[2]), 0)]
        span, mid = max(pairs)
        vmid = ids[mid]
        e1, e2 = ids[(mid + 1) % 3], ids[(mid + 2) % 3]
        t = (p[mid] - p[(mid + 1) % 3]) / (p[(mid + 2) % 3] - p[(mid + 1) % 3])
        if abs(t.imag) > 1e-6:
            raise AssertionError(
                f"black face {black_faces[bf]} image is not a segment "
                f"(transverse offset {abs(t.imag):.2e})"
            )
        if black_of_vertex[vmid] >= 0:
            raise AssertionError(
                f"vertex {vmid} is the middle of two black faces"
            )
        black_of_vertex[vmid] = bf
        q1, q2 = segment_rates(points[vmid], points[e1], points[e2])
        neighbors[vmid] = [(e1, q1), (e2, q2)]
    for d, faces in deg_faces.items():
        black_of_vertex[d] = -2  # degenerate marker
        if len(faces) != 3:
            # a boundary degenerate vertex sees an incomplete face fan;
            # its jump rates are not defined, so it absorbs
            continue
        tot = sum(areas[bf] for bf, _ in faces)
        neighbors[d] = [
            (other, float(areas[bf] / tot) / abs(points[other] - points[d]) ** 2)
            for bf, other in faces
        ]

    # --- invariant measure
    mu = np.zeros(n_vert)
    for v in range(n_vert):
        if black_of_vertex[v] >= 0:
            mu[v] = areas[black_of_vertex[v]]
    for d, faces in deg_faces.items():
        mu[d] = float(sum(areas[bf] for bf, _ in faces))
    interior = np.array([len(nb) > 0 for nb in neighbors])

    return SGraph(emb, tf, alpha, points, cls[:n_lam], cls[n_lam:],
                  degenerate, collapsed_whites, neighbors, mu,
                  black_of_vertex, black_faces, interior)


def assemble_laplacian(sg: SGraph):
    """Sparse generator: (L h)(v) = sum_k q(v -> v_k)(h(v_k) - h(v)).

    Rows of boundary (rate-less) vertices are zero; they act as absorbing
    states.
    """
    from scipy import sparse

    n = sg.n_vertices
    rows, cols, vals = [], [], []
    for v, nb in enumerate(sg.neighbors):
        tot = 0.0
        for w, q in nb:
            if q < 0:
                raise ValueError("negative rate")
            rows.append(v)
            cols.append(w)
            vals.append(q)
            tot += q
        if nb:
            rows.append(v)
            cols.append(v)
            vals.append(-tot)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def simulate_walk(sg: SGraph, start: int, absorbing, seed: int = 0,
                  n_paths: int = 1000, step_cap: int = 100000,
                  track: int | None = None) -> dict:
    """Continuous-time walk statistics by jump-chain simulation.

    Occupation times use the expected holding time 1/sum(q) per visit
    (conditional Monte Carlo).  Vertices without rates absorb.  If
    ``track`` is given, per-path occupation times of that vertex are
    recorded and summarized with a standard error.
    """
    rng = np.random.default_rng(seed)
    absorbing = set(int(a) for a in absorbing)
    hold = np.zeros(sg.n_vertices)
    probs = []
    for v, nb in enumerate(sg.neighbors):
        if nb:
            qs = np.array([q for _, q in nb])
            hold[v] = 1.0 / qs.sum()
            probs.append((np.array([w for w, _ in nb]), qs / qs.sum()))
        else:
            probs.append((None, None))
    occupation = np.zeros(sg.n_vertices)
    track_samples = np.zeros(n_paths) if track is not None else None
    exits: dict[int, int] = {}
    capped = 0
    for path in range(n_paths):
        v = start
        for _ in range(step_cap):
            if v in absorbing or probs[v][0] is None:
                exits[v] = exits.get(v, 0) + 1
                break
            occupation[v] += hold[v]
            if track is not None and v == track:
                track_samples[path] += hold[v]
            nbrs, p = probs[v]
            v = int(nbrs[rng.choice(len(p), p=p)])
        else:
            capped += 1
    occupation /= n_paths
    out = {"occupation": occupation, "exits": exits, "capped": capped,
           "n_paths": n_paths}
    if track is not None:
        out["track_mean"] = float(track_samples.mean())
        out["track_se"] = float(track_samples.std(ddof=1)
                                / math.sqrt(n_paths))
    return out
