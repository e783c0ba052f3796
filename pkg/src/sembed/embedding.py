"""s-embeddings: geometry, validation, origami maps, generators, propagation.

An s-embedding draws Lambda(G) = G• ∪ G◦ in the plane so that every quad
(one per edge of G) is a quadrilateral tangential to an inscribed circle.
The corner edge of c = (v, u) has complex increment

    Delta_c = S(v•(c)) - S(v◦(c)) = (X(c))^2,

where X is a complex solution of the three-term propagation equation

    X(c_pq) = X(c_{p,1-q}) cos(theta_z) + X(c_{1-p,q}) sin(theta_z)

on the double cover of the corner graph branching over all faces.  The
Ising weight of the edge is x(e) = tan(theta_z / 2).

The Dirac spinor direction of a corner is

    eta_c = sigma * exp(-(i/2) * arg(Delta_c)),       sigma = exp(i pi/4),

defined up to sign; we fix the reference sheet by taking the principal
argument in (-pi, pi].  The companion square root with X^2 = Delta is
chi_c = sigma * |Delta_c|^{1/2} * conj(eta_c).

The origami map Q folds the embedding: along each corner edge,
Q(v•) - Q(v◦) = |Delta_c|.  Extended to quad centres it is complex-valued
and depends on the bipartite coloring of the bosonization triangles
(see :mod:`sembed.sgraph`).
"""

from __future__ import annotations

import cmath
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .planar import (
    QuadGraph,
    SignGauge,
    _finish_quad_graph,
    build_quad_graph,
    square_patch_faces,
)

SIGMA = cmath.exp(1j * math.pi / 4)  # the fourth root of -1 used everywhere

__all__ = [
    "SIGMA",
    "SEmbedding",
    "OrigamiMap",
    "CornerSolution",
    "theta_from_x",
    "x_from_theta",
    "theta_from_quad_geometry",
    "validate_embedding",
    "origami_map",
    "lip_scale",
    "exp_fat_test",
    "propagate_solution",
    "propagation_residuals",
    "embedding_from_solution",
    "builtin_family",
    "disc_patch",
    "eta_gauge",
]


def theta_from_x(x):
    """Ising angle theta = 2 arctan x, x in (0,1) => theta in (0, pi/2)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0) or np.any(x >= 1):
        raise ValueError("weight x must lie in (0, 1)")
    return 2.0 * np.arctan(x)


def x_from_theta(theta):
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0) or np.any(theta >= np.pi / 2):
        raise ValueError("theta must lie in (0, pi/2)")
    return np.tan(theta / 2.0)


@dataclass
class SEmbedding:
    """Positions of Lambda(G) ∪ quad centres plus radii, angles, weights."""

    graph: QuadGraph               # full-plane patch: has_outer == False
    pos: np.ndarray                # complex, primal then dual Lambda positions
    pos_quad: np.ndarray           # complex S(z), incircle centres
    radii: np.ndarray              # incircle radii r_z
    thetas: np.ndarray             # theta_z in (0, pi/2)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._cache: dict = {}

    # -- Lambda indexing: primal v -> v, dual u -> n_primal + u
    def pos_primal(self, v):
        return self.pos[v]

    def pos_dual(self, u):
        return self.pos[self.graph.n_primal + u]

    @property
    def weights(self) -> np.ndarray:
        return np.tan(self.thetas / 2.0)

    @property
    def corner_delta(self) -> np.ndarray:
        """Delta_c = S(v•(c)) - S(v◦(c)) per corner."""
        if "delta" not in self._cache:
            g = self.graph
            self._cache["delta"] = (
                self.pos[g.corners[:, 0]]
                - self.pos[g.n_primal + g.corners[:, 1]]
            )
        return self._cache["delta"]

    @property
    def corner_length(self) -> np.ndarray:
        """delta_c = |Delta_c|, the corner edge length."""
        if "len" not in self._cache:
            self._cache["len"] = np.abs(self.corner_delta)
        return self._cache["len"]

    @property
    def eta(self) -> np.ndarray:
        """Dirac spinor eta_c on the reference sheet (principal argument)."""
        if "eta" not in self._cache:
            self._cache["eta"] = SIGMA * np.exp(
                -0.5j * np.angle(self.corner_delta)
            )
        return self._cache["eta"]

    @property
    def chi(self) -> np.ndarray:
        """chi_c with chi_c^2 = Delta_c, on the same sheet as eta."""
        if "chi" not in self._cache:
            self._cache["chi"] = (
                SIGMA * np.sqrt(self.corner_length) * np.conj(self.eta)
            )
        return self._cache["chi"]

    def corner_midpoint(self, c) -> complex:
        g = self.graph
        return 0.5 * (
            self.pos[g.corners[c, 0]] + self.pos[g.n_primal + g.corners[c, 1]]
        )

    def quad_cycle_positions(self, z) -> np.ndarray:
        """Positions of (v0, d0, v1, d1) of quad z, counterclockwise."""
        g = self.graph
        v0, d0, v1, d1 = g.quads[z]
        npm = g.n_primal
        return np.array(
            [self.pos[v0], self.pos[npm + d0], self.pos[v1], self.pos[npm + d1]]
        )


# ---------------------------------------------------------------------------
# Geometry diagnostics
# ---------------------------------------------------------------------------

def _quad_corner_positions(emb: SEmbedding) -> tuple[np.ndarray, np.ndarray]:
    """(nq,4) arrays of quad-cycle vertex positions and side vectors."""
    g = emb.graph
    npm = g.n_primal
    P = np.column_stack(
        [
            emb.pos[g.quads[:, 0]],
            emb.pos[npm + g.quads[:, 1]],
            emb.pos[g.quads[:, 2]],
            emb.pos[npm + g.quads[:, 3]],
        ]
    )
    sides = np.roll(P, -1, axis=1) - P  # side k: vertex k -> k+1
    return P, sides


def theta_from_quad_geometry(emb: SEmbedding, z=None):
    """theta_z from the tangential-quad half-angles:

    tan(theta_z) = sqrt( sin(phi_v0) sin(phi_v1) / (sin(phi_d0) sin(phi_d1)) )
    """
    P, sides = _quad_corner_positions(emb)
    if z is not None:
        P, sides = P[z : z + 1], sides[z : z + 1]
    # interior angle at vertex k between sides (k-1 reversed) and k
    prev = -np.roll(sides, 1, axis=1)
    ang = np.abs(np.angle(sides / prev))
    if np.any(ang < 1e-14):
        raise ValueError("degenerate quad: zero half-angle")
    half = 0.5 * ang
    s = np.sin(half)
    tan_theta = np.sqrt(s[:, 0] * s[:, 2] / (s[:, 1] * s[:, 3]))
    th = np.arctan(tan_theta)
    return float(th[0]) if np.isscalar(z) else th


@dataclass
class ValidationReport:
    pitot: np.ndarray            # per-quad alternating side-length sum
    incircle: np.ndarray         # per-quad max |dist(S(z), side) - r_z|
    theta_residual: np.ndarray   # |theta_geometry - theta_stored|
    degenerate: np.ndarray       # bool per quad
    convex_ccw: np.ndarray       # bool per quad
    overlaps: list               # list of overlapping quad pairs
    overlap_checked: bool
    scale: float                 # reference length for relative tolerances

    def ok(self, tol=1e-9) -> bool:
        if len(self.pitot) == 0:
            return True
        s = self.scale
        return bool(
            np.all(self.pitot < tol * s)
            and np.all(self.incircle < tol * s)
            and np.all(self.theta_residual < 1e-6 + 0 * self.theta_residual)
            and not np.any(self.degenerate)
            and np.all(self.convex_ccw)
            and not self.overlaps
        )


def _convex_overlap(A: np.ndarray, B: np.ndarray) -> bool:
    """Separating-axis test for two convex polygons (True = interiors meet)."""
    for poly in (A, B):
        n = len(poly)
        for k in range(n):
            edge = poly[(k + 1) % n] - poly[k]
            axis = -1j * edge
            pa = (A * np.conj(axis)).real
            pb = (B * np.conj(axis)).real
            if pa.max() <= pb.min() + 1e-12 or pb.max() <= pa.min() + 1e-12:
                return False
    return True


def validate_embedding(
    emb: SEmbedding, tol: float = 1e-9, check_overlap: bool | None = None
) -> ValidationReport:
    g = emb.graph
    nq = g.n_quads
    if nq == 0:
        e = np.empty(0)
        return ValidationReport(e, e, e, e.astype(bool), e.astype(bool), [], True, 1.0)
    P, sides = _quad_corner_positions(emb)
    slen = np.abs(sides)
    scale = float(np.median(slen))
    pitot = np.abs(slen[:, 0] - slen[:, 1] + slen[:, 2] - slen[:, 3])

    # distance from the stored centre S(z) to each side, versus r_z
    dist = np.abs(((emb.pos_quad[:, None] - P) * np.conj(sides / slen)).imag)
    incircle = np.max(np.abs(dist - emb.radii[:, None]), axis=1)

    nxt = np.roll(sides, -1, axis=1)
    cross = sides.real * nxt.imag - sides.imag * nxt.real
    convex_ccw = np.all(cross > 0, axis=1)
    degenerate = (np.min(slen, axis=1) < tol * scale) | ~convex_ccw

    try:
        theta_res = np.abs(theta_from_quad_geometry(emb) - emb.thetas)
    except ValueError:
        theta_res = np.full(nq, np.inf)

    if check_overlap is None:
        check_overlap = nq <= 20000
    overlaps = []
    if check_overlap:
        xmin = P.real.min(axis=1)
        xmax = P.real.max(axis=1)
        ymin = P.imag.min(axis=1)
        ymax = P.imag.max(axis=1)
        order = np.argsort(xmin, kind="stable")
        active: list[int] = []
        qsets = [set(q) for q in g.quads]
        for idx in order:
            active = [j for j in active if xmax[j] > xmin[idx] + tol * scale]
            for j in active:
                if ymin[idx] >= ymax[j] or ymin[j] >= ymax[idx]:
                    continue
                if qsets[idx] & qsets[j]:
                    continue  # sharing a Lambda vertex: tangency allowed
                if _convex_overlap(P[idx], P[j]):
                    overlaps.append((int(min(idx, j)), int(max(idx, j))))
            active.append(int(idx))
    return ValidationReport(
        pitot, incircle, theta_res, degenerate, convex_ccw, overlaps,
        bool(check_overlap), scale,
    )


# ---------------------------------------------------------------------------
# Origami map
# ---------------------------------------------------------------------------

@dataclass
class OrigamiMap:
    """Real origami values on Lambda(G); complex extension to quad centres
    is provided per bipartite coloring by :func:`extend_to_quads`."""

    emb: SEmbedding
    values: np.ndarray  # real, length n_primal + n_dual

    def increments_residual(self) -> float:
        g = self.emb.graph
        q = self.values
        res = (
            q[g.corners[:, 0]]
            - q[g.n_primal + g.corners[:, 1]]
            - self.emb.corner_length
        )
        return float(np.max(np.abs(res))) if len(res) else 0.0

    def lipschitz_defect(self) -> float:
        """max over Lambda edges of |dQ| - |dS| (should be <= 0 + roundoff)."""
        g = self.emb.graph
        dq = np.abs(
            self.values[g.corners[:, 0]]
            - self.values[g.n_primal + g.corners[:, 1]]
        )
        return float(np.max(dq - self.emb.corner_length)) if len(dq) else 0.0


def _lambda_adjacency(g: QuadGraph):
    """Adjacency list of Lambda(G): primal v <-> n_primal + dual, per corner."""
    n = g.n_primal + g.n_dual
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for c, (v, u) in enumerate(g.corners):
        adj[v].append((g.n_primal + u, c))
        adj[g.n_primal + u].append((v, c))
    return adj


def origami_map(
    emb: SEmbedding,
    base_vertex: int = 0,
    base_value: float = 0.0,
    order_seed: int | None = None,
    tol: float = 1e-8,
) -> OrigamiMap:
    """Integrate Q along Lambda edges: Q(v•) - Q(v◦) = |Delta_c|.

    ``order_seed`` shuffles the traversal (used to test path-independence,
    which is exactly the Pitot identity of tangential quads).
    """
    g = emb.graph
    n = g.n_primal + g.n_dual
    adj = _lambda_adjacency(g)
    if order_seed is not None:
        rng = np.random.default_rng(order_seed)
        for lst in adj:
            rng.shuffle(lst)
    dlen = emb.corner_length
    vals = np.full(n, np.nan)
    vals[base_vertex] = base_value
    queue = deque([base_vertex])
    while queue:
        v = queue.popleft()
        for w, c in adj[v]:
            inc = dlen[c] if w < g.n_primal else -dlen[c]
            if np.isnan(vals[w]):
                vals[w] = vals[v] + inc
                queue.append(w)
    if np.any(np.isnan(vals)):
        raise ValueError("Lambda(G) is disconnected; origami map undefined")
    om = OrigamiMap(emb, vals)
    # round-off of the longest edges bounds the achievable absolute accuracy
    scale = float(np.max(dlen)) if len(dlen) else 1.0
    if om.increments_residual() > tol * max(scale, 1.0):
        raise ValueError(
            "inconsistent origami increments (embedding is not tangential): "
            f"residual {om.increments_residual():.3e}"
        )
    return om


def extend_to_quads(om: OrigamiMap, white_mask: np.ndarray) -> np.ndarray:
    """Complex origami values at quad centres for a given coloring.

    ``white_mask[z, j]`` marks which of the 4 triangles (cycle position j)
    of quad z is white.  Across a white triangle of corner c the origami
    form is conj(u_c) dz with u_c = Delta_c/|Delta_c| (holomorphic type);
    across a black one it is u_c d(conj z).  Both extensions from any
    vertex of the quad agree; we use a white face and assert consistency.
    """
    emb = om.emb
    g = emb.graph
    u = emb.corner_delta / emb.corner_length
    cyc = g.quad_corners            # (nq, 4) corner ids
    npm = g.n_primal
    v = g.corners[cyc, 0]           # (nq, 4) primal endpoint of each corner
    d = g.corners[cyc, 1]
    uq = u[cyc]
    Sz = emb.pos_quad[:, None]
    white = (
        om.values[v] + np.conj(uq) * (Sz - emb.pos[v])
    )
    black = (
        om.values[npm + d] + uq * np.conj(Sz - emb.pos[npm + d])
    )
    vals = np.where(white_mask, white, black)
    out = vals[:, 0].copy()
    res = np.max(np.abs(vals - out[:, None]), axis=1)
    bad = res > 1e-7 * (1.0 + np.abs(out))
    if np.any(bad):
        raise ValueError(
            f"inconsistent origami extension at quad {int(np.argmax(bad))}"
        )
    return out


# ---------------------------------------------------------------------------
# Scale and fatness diagnostics
# ---------------------------------------------------------------------------

def lip_scale(
    positions: np.ndarray,
    qvalues: np.ndarray,
    kappa: float,
    pair_budget: int = 4_000_000,
    seed: int = 0,
):
    """Smallest scale above which Q is kappa-Lipschitz w.r.t. S.

    Returns (scale, exact_flag).  scale = sup |S(v')-S(v)| over pairs
    violating |Q(v')-Q(v)| <= kappa |S(v')-S(v)|; 0 if none violate.
    Exhaustive below the pair budget, randomized estimate above.
    """
    if not 0 < kappa < 1:
        raise ValueError("kappa must be in (0,1)")
    n = len(positions)
    if n * (n - 1) // 2 <= pair_budget:
        ds = np.abs(positions[:, None] - positions[None, :])
        dq = np.abs(qvalues[:, None] - qvalues[None, :])
        viol = dq > kappa * ds + 1e-14
        np.fill_diagonal(viol, False)
        return (float(ds[viol].max()) if viol.any() else 0.0), True
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(8):
        i = rng.integers(0, n, size=pair_budget // 8)
        j = rng.integers(0, n, size=pair_budget // 8)
        ds = np.abs(positions[i] - positions[j])
        dq = np.abs(qvalues[i] - qvalues[j])
        viol = (dq > kappa * ds + 1e-14) & (i != j)
        if viol.any():
            best = max(best, float(ds[viol].max()))
    return best, False


def exp_fat_test(emb: SEmbedding, delta: float, rho: float):
    """Exp-Fat(delta, rho): remove quads with r_z >= delta*exp(-rho/delta);
    remaining vertex-connected components must have diameter <= rho."""
    thr = delta * math.exp(-rho / delta)
    keep = np.nonzero(emb.radii < thr)[0]
    if len(keep) == 0:
        return True, []
    # union-find over kept quads via shared Lambda vertices
    parent = {int(z): int(z) for z in keep}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    by_vertex: dict[int, int] = {}
    for z in keep:
        z = int(z)
        for v in (
            emb.graph.quads[z, 0],
            emb.graph.quads[z, 2],
            emb.graph.n_primal + emb.graph.quads[z, 1],
            emb.graph.n_primal + emb.graph.quads[z, 3],
        ):
            v = int(v)
            if v in by_vertex:
                ra, rb = find(by_vertex[v]), find(z)
                if ra != rb:
                    parent[ra] = rb
            else:
                by_vertex[v] = z
    comps: dict[int, list[int]] = {}
    for z in keep:
        comps.setdefault(find(int(z)), []).append(int(z))
    diams = []
    for zs in comps.values():
        pts = np.concatenate([emb.quad_cycle_positions(z) for z in zs])
        diams.append(
            float(np.max(np.abs(pts[:, None] - pts[None, :])))
            if len(pts) < 2000
            else float(
                np.hypot(
                    pts.real.max() - pts.real.min(),
                    pts.imag.max() - pts.imag.min(),
                )
            )
        )
    return all(d <= rho for d in diams), diams


# ---------------------------------------------------------------------------
# Propagation of corner solutions and embedding reconstruction
# ---------------------------------------------------------------------------

# quad corner-cycle positions: 0=c00, 1=c10, 2=c11, 3=c01
_COS_PARTNER = (3, 2, 1, 0)   # shares the primal vertex
_SIN_PARTNER = (1, 0, 3, 2)   # shares the dual vertex
_COS_EDGE = (3, 1, 1, 3)      # Y-edge index joining j and cos partner
_SIN_EDGE = (0, 0, 2, 2)      # Y-edge index joining j and sin partner


@dataclass
class CornerSolution:
    graph: QuadGraph
    values: np.ndarray      # complex per corner (section in `gauge`)
    gauge: SignGauge
    thetas: np.ndarray      # per quad


def propagation_residuals(sol: CornerSolution) -> np.ndarray:
    """(nq, 4) residuals of the three-term relation in the given gauge."""
    g = sol.graph
    X = sol.values
    w = sol.gauge.edge_signs
    cyc = g.quad_corners
    cth = np.cos(sol.thetas)[:, None]
    sth = np.sin(sol.thetas)[:, None]
    Xq = X[cyc]  # (nq, 4)
    cosn = Xq[:, list(_COS_PARTNER)] * w[:, list(_COS_EDGE)]
    sinn = Xq[:, list(_SIN_PARTNER)] * w[:, list(_SIN_EDGE)]
    return np.abs(Xq - cth * cosn - sth * sinn)


def quad_relation_matrix(g: QuadGraph, thetas, gauge: SignGauge):
    """Sparse (4 nq, nc) matrix of the three-term relations, rank 2 per quad."""
    from scipy import sparse

    thetas = np.asarray(thetas, dtype=float)
    w = gauge.edge_signs
    cyc = g.quad_corners
    nq = g.n_quads
    rows = np.repeat(np.arange(4 * nq), 3)
    cols = np.empty(12 * nq, dtype=np.int64)
    vals = np.empty(12 * nq)
    cth, sth = np.cos(thetas), np.sin(thetas)
    for j in range(4):
        base = np.arange(nq) * 12 + 3 * j
        cols[base] = cyc[:, j]
        vals[base] = 1.0
        cols[base + 1] = cyc[:, _COS_PARTNER[j]]
        vals[base + 1] = -w[:, _COS_EDGE[j]] * cth
        cols[base + 2] = cyc[:, _SIN_PARTNER[j]]
        vals[base + 2] = -w[:, _SIN_EDGE[j]] * sth
    return sparse.csr_matrix(
        (vals, (rows, cols)), shape=(4 * nq, g.n_corners)
    )


def propagate_solution(
    g: QuadGraph,
    thetas: np.ndarray,
    seed_values: dict[int, complex],
    gauge: SignGauge,
    tol: float = 1e-9,
) -> CornerSolution:
    """Solve the three-term relations subject to prescribed seed values.

    The relations alone leave a kernel of dimension 2(n + m - 2) on an
    n-by-m patch; the seed must pin exactly that kernel.  The stacked
    system (relations + seed rows) is solved globally: rank deficiency
    signals an under-determined seed, a large residual an inconsistent
    (over-determined) one.  Greedy quad-by-quad filling is not used: a
    determining seed need not admit a local filling order.
    """
    from scipy import sparse
    from scipy.sparse.linalg import splu

    thetas = np.asarray(thetas, dtype=float)
    A = quad_relation_matrix(g, thetas, gauge)
    seeds = sorted(seed_values)
    B = sparse.csr_matrix(
        (np.ones(len(seeds)), (np.arange(len(seeds)), seeds)),
        shape=(len(seeds), g.n_corners),
    )
    b = np.array([seed_values[c] for c in seeds], dtype=complex)
    M = sparse.vstack([A, B]).tocsc()
    rhs = np.concatenate([np.zeros(A.shape[0], dtype=complex), b])
    scale = max(float(np.max(np.abs(b), initial=0.0)), 1.0)
    if g.n_corners <= 4000:
        Md = M.toarray()
        X, _, rank, _ = np.linalg.lstsq(Md, rhs, rcond=None)
        if rank < g.n_corners:
            raise ValueError(
                f"under-determined seed: rank {rank} < {g.n_corners} corners"
            )
        # one step of iterative refinement for ill-conditioned patches
        X += np.linalg.lstsq(Md, rhs - Md @ X, rcond=None)[0]
    else:
        N = (M.T @ M).tocsc()
        try:
            lu = splu(N)
        except RuntimeError as exc:
            raise ValueError(f"under-determined seed: {exc}") from exc
        atb = M.T @ rhs
        X = lu.solve(atb)
        for _ in range(2):
            X += lu.solve(atb - N @ X)
    out = CornerSolution(g, X, gauge, thetas)
    res = propagation_residuals(out)
    seed_err = float(np.max(np.abs(X[seeds] - b), initial=0.0))
    if max(float(np.max(res)), seed_err) > tol * scale:
        raise ValueError(
            "inconsistent (over-determined) or numerically under-determined "
            f"seed: residual {max(float(np.max(res)), seed_err):.3e}"
        )
    return out


def embedding_from_solution(sol: CornerSolution, tol: float = 1e-8) -> SEmbedding:
    """Integrate S from Delta_c = X(c)^2 and place centres via

    S(v_p•(z)) - S(z) = w_p X(c_p0) X(c_p1) cos(theta_z),

    where w_p is the gauge sign of the Y-edge joining c_p0 and c_p1 (the
    corner product is only gauge-covariant together with that sign).
    """
    g = sol.graph
    X = sol.values
    n = g.n_primal + g.n_dual
    adj = _lambda_adjacency(g)
    S = np.full(n, np.nan + 0j)
    S[0] = 0.0
    queue = deque([0])
    while queue:
        v = queue.popleft()
        for w_, c in adj[v]:
            inc = X[c] ** 2 if w_ < g.n_primal else -(X[c] ** 2)
            if np.isnan(S[w_].real):
                S[w_] = S[v] + inc
                queue.append(w_)
    if np.any(np.isnan(S.real)):
        raise ValueError("Lambda(G) disconnected")
    # consistency of the integration (closedness around quads); off-critical
    # solutions span many orders of magnitude, so compare each residual to
    # the local increment size rather than a global scale
    res = np.abs(
        S[g.corners[:, 0]] - S[g.n_primal + g.corners[:, 1]] - X**2
    )
    local = np.abs(X) ** 2
    scale = float(np.max(local)) or 1.0
    # 1e-8 * scale floor: float64 round-off of the largest increments is
    # the best achievable absolute accuracy anywhere on the patch
    rel = res / (local + 1e-8 * scale)
    if np.max(rel) > 100 * tol:
        raise ValueError(f"S increments inconsistent: {np.max(rel):.3e}")

    cyc = g.quad_corners
    cth = np.cos(sol.thetas)
    w = sol.gauge.edge_signs
    # cos-edge 3 joins c00 and c01 (shared primal v0); cos-edge 1 joins
    # c10 and c11 (shared primal v1)
    Sz0 = S[g.quads[:, 0]] - w[:, 3] * X[cyc[:, 0]] * X[cyc[:, 3]] * cth
    Sz1 = S[g.quads[:, 2]] - w[:, 1] * X[cyc[:, 1]] * X[cyc[:, 2]] * cth
    qscale = (
        np.abs(Sz0 - S[g.quads[:, 0]])
        + np.abs(Sz1 - S[g.quads[:, 2]])
        + 1e-8 * scale
    )
    if np.max(np.abs(Sz0 - Sz1) / qscale) > 100 * tol:
        raise ValueError("centre formula inconsistent between p=0 and p=1")
    emb = SEmbedding(
        graph=g,
        pos=S,
        pos_quad=Sz0,
        radii=np.zeros(g.n_quads),
        thetas=sol.thetas.copy(),
    )
    # incircle radii = distance from centre to the sides
    P, sides = _quad_corner_positions(emb)
    slen = np.abs(sides)
    dist = np.abs(((emb.pos_quad[:, None] - P) * np.conj(sides / slen)).imag)
    emb.radii = dist.mean(axis=1)
    return emb


# ---------------------------------------------------------------------------
# Geometric gauge: the everywhere-branching cover carried by eta
# ---------------------------------------------------------------------------

def eta_gauge(emb: SEmbedding) -> SignGauge:
    """Sign gauge of the cover branching over all faces of Y(G), obtained by
    continuous half-angle tracking of eta along quad corner cycles."""
    g = emb.graph
    eta = emb.eta
    delta = emb.corner_delta
    cyc = g.quad_corners
    signs = np.ones((g.n_quads, 4), dtype=np.int64)
    for k in range(4):
        c0 = cyc[:, k]
        c1 = cyc[:, (k + 1) % 4]
        phi = np.angle(delta[c1] / delta[c0])
        transported = eta[c0] * np.exp(-0.5j * phi)
        signs[:, k] = np.where(
            (eta[c1] * np.conj(transported)).real > 0, 1, -1
        )
    from .planar import all_faces  # deferred to avoid cycle at import

    return SignGauge(graph=g, edge_signs=signs,
                     branch=frozenset(all_faces(g)))


# ---------------------------------------------------------------------------
# Built-in families
# ---------------------------------------------------------------------------

def _lattice_quad_graph(n: int, m: int) -> QuadGraph:
    """Full-plane n x m square-lattice patch: interior edges only, no outer
    face.  Primal (i,j) -> i*(m+1)+j on the (n+1) x (m+1) grid; dual (face)
    (i,j) -> i*m+j on the n x m grid."""
    quads = []
    for i in range(n + 1):
        for j in range(m + 1):
            v = i * (m + 1) + j
            # horizontal edge (i,j)-(i+1,j): faces (i, j-1) below, (i, j) above
            if i < n and 0 < j < m:
                quads.append((v, i * m + (j - 1), v + (m + 1), i * m + j))
            # vertical edge (i,j)-(i,j+1): faces (i,j) right... orientation:
            if j < m and 0 < i < n:
                quads.append((v, i * m + j, v + 1, (i - 1) * m + j))
    quads = np.asarray(sorted(quads), dtype=np.int64)
    # compact away grid vertices that touch no interior quad (the 4 extreme
    # patch corners) so Lambda(G) stays connected
    used = np.zeros((n + 1) * (m + 1), dtype=bool)
    used[quads[:, 0]] = True
    used[quads[:, 2]] = True
    remap = np.cumsum(used) - 1
    quads[:, 0] = remap[quads[:, 0]]
    quads[:, 2] = remap[quads[:, 2]]
    g = _finish_quad_graph(int(used.sum()), n * m, quads, has_outer=False)
    return g, used


def _square_lattice_embedding(
    n: int, m: int, primal_pos, dual_pos, thetas_fn
) -> SEmbedding:
    g, used = _lattice_quad_graph(n, m)
    remap = np.cumsum(used) - 1
    pos = np.empty(g.n_primal + g.n_dual, dtype=complex)
    for i in range(n + 1):
        for j in range(m + 1):
            if used[i * (m + 1) + j]:
                pos[remap[i * (m + 1) + j]] = primal_pos(i, j)
    for i in range(n):
        for j in range(m):
            pos[g.n_primal + i * m + j] = dual_pos(i, j)
    thetas = np.array([thetas_fn(z, g) for z in range(g.n_quads)])
    emb = SEmbedding(
        graph=g, pos=pos, pos_quad=np.zeros(g.n_quads, dtype=complex),
        radii=np.zeros(g.n_quads), thetas=thetas,
        meta={"n": n, "m": m, "primal_used": used, "primal_remap": remap},
    )
    # centres and radii from the geometry
    P, sides = _quad_corner_positions(emb)
    emb.pos_quad = _incentre(P, sides)
    slen = np.abs(sides)
    dist = np.abs(((emb.pos_quad[:, None] - P) * np.conj(sides / slen)).imag)
    emb.radii = dist.mean(axis=1)
    return emb


def _incentre(P: np.ndarray, sides: np.ndarray) -> np.ndarray:
    """Incentre of tangential polygons: intersection of angle bisectors at
    vertices 0 and 1 (vectorized over quads)."""
    u = sides / np.abs(sides)
    d0 = u[:, 0] - u[:, 3]          # bisector direction at vertex 0
    d0 /= np.abs(d0)
    d1 = u[:, 1] - u[:, 0]          # bisector direction at vertex 1
    d1 /= np.abs(d1)
    rhs = P[:, 1] - P[:, 0]
    det = d0.real * (-d1.imag) - d0.imag * (-d1.real)
    t = (rhs.real * (-d1.imag) - rhs.imag * (-d1.real)) / det
    return P[:, 0] + t * d0


def lattice_primal_ij(emb: SEmbedding) -> np.ndarray:
    """(n_primal, 2) grid coordinates (i, j) of each primal vertex."""
    m = emb.meta["m"]
    grid = np.nonzero(emb.meta["primal_used"])[0]
    return np.column_stack([grid // (m + 1), grid % (m + 1)])


def lattice_dual_ij(emb: SEmbedding) -> np.ndarray:
    """(n_dual, 2) grid coordinates (i, j) of each face (dual vertex)."""
    m = emb.meta["m"]
    d = np.arange(emb.graph.n_dual)
    return np.column_stack([d // m, d % m])


def _seed_corners(emb: SEmbedding) -> list[int]:
    """U-shaped determining seed line for an n-by-m lattice patch.

    Left leg: both corner families joining i=0 primal vertices to i=0
    faces.  Bottom leg: corners joining j=0 primal vertices to the face on
    their lower left.  Top leg: corners joining top-row primal vertices to
    the face on their upper right.  This supplies exactly the
    2(n-1) + 2(m-1) degrees of freedom the quad relations leave free, and
    (unlike an L of bottom + left lines) its seed rows are independent of
    the relation rows, so the stacked system has full column rank.
    """
    pij = lattice_primal_ij(emb)
    dij = lattice_dual_ij(emb)
    g = emb.graph
    pv, dv = pij[g.corners[:, 0]], dij[g.corners[:, 1]]
    mtop = int(dv[:, 1].max())
    left = (pv[:, 0] == 0) & (dv[:, 0] == 0)
    bottom = (pv[:, 1] == 0) & (dv[:, 1] == 0) & (dv[:, 0] == pv[:, 0] - 1)
    top = (pv[:, 1] == mtop) & (dv[:, 1] == mtop) & (dv[:, 0] == pv[:, 0])
    return [int(c) for c in np.nonzero(left | bottom | top)[0]]


def critical_square(delta: float, n: int, m: int | None = None) -> SEmbedding:
    """Critical square lattice: Lambda is the diagonal grid with edge length
    delta; all theta = pi/4, all radii delta/2, x = tan(pi/8) = sqrt(2)-1."""
    if m is None:
        m = n
    gscale = delta * math.sqrt(2.0)
    emb = _square_lattice_embedding(
        n, m,
        primal_pos=lambda i, j: gscale * (i + 1j * j),
        dual_pos=lambda i, j: gscale * (i + 0.5 + 1j * (j + 0.5)),
        thetas_fn=lambda z, g: math.pi / 4,
    )
    emb.meta.update({"family": "critical_square", "delta": delta})
    return emb


def isoradial_rhombic(
    delta: float, n: int, m: int | None = None,
    alphas=None, betas=None,
) -> SEmbedding:
    """Rhombic (isoradial) embedding of the square lattice.

    Lambda-edges of the quad at primal row/column use unit directions
    exp(i alpha_i) (horizontal train track i) and exp(i beta_j); the default
    profile reproduces the critical square lattice.  Weights are the
    corresponding Z-invariant ones, theta_z = rhombus half-angle at the
    primal vertices.
    """
    if m is None:
        m = n
    if alphas is None:
        alphas = np.zeros(n + m + 2)
    if betas is None:
        betas = np.full(n + m + 2, math.pi / 2)
    alphas = np.asarray(alphas, dtype=float)
    betas = np.asarray(betas, dtype=float)

    # Lambda is the grid L(s,t): primal when s+t even; the square-lattice
    # patch coordinates: primal (i,j) -> L(i+j, j-i+n), dual (i,j) ->
    # L(i+j+1, j-i+n).  Edge directions: step in s uses exp(i alpha_s)/sqrt2
    # scaled so rhombus side = delta.
    A = delta * np.exp(1j * alphas)
    B = delta * np.exp(1j * betas)
    SA = np.concatenate([[0], np.cumsum(A)])
    SB = np.concatenate([[0], np.cumsum(B)])

    def lpos(s, t):
        return SA[s] + SB[t]

    def primal_pos(i, j):
        return lpos(i + j, j - i + n)

    def dual_pos(i, j):
        return lpos(i + j + 1, j - i + n)

    emb = _square_lattice_embedding(n, m, primal_pos, dual_pos,
                                    lambda z, g: math.pi / 4)
    emb.thetas = theta_from_quad_geometry(emb)
    emb.meta.update({"family": "isoradial_rhombic", "delta": delta})
    return emb


def off_critical_square(
    x: float, delta: float, n: int, m: int | None = None
) -> SEmbedding:
    """Square lattice with uniform weight x (off-critical unless
    x = sqrt(2)-1), built by propagating the critical-lattice seed line."""
    if m is None:
        m = n
    base = critical_square(delta, n, m)
    g = base.graph
    gauge = eta_gauge(base)
    theta = float(theta_from_x(x))
    thetas = np.full(g.n_quads, theta)
    chi = base.chi
    # seed line: corners joining bottom-row vertices (j = 0) to bottom-row
    # faces, with the critical-lattice chi values
    seed = {c: complex(chi[c]) for c in _seed_corners(base)}
    sol = propagate_solution(g, thetas, seed, gauge, tol=1e-7)
    emb = embedding_from_solution(sol)
    emb.meta.update(
        {"family": "off_critical_square", "delta": delta, "x": x,
         "n": n, "m": m}
    )
    return emb


def doubly_periodic(
    weights_block: np.ndarray, delta: float, n: int, m: int | None = None
) -> SEmbedding:
    """Square lattice with doubly periodic weights (k x l fundamental
    domain), built by propagation from the critical seed line.  A 1 x 1
    block with the critical weight reproduces critical_square."""
    if m is None:
        m = n
    wb = np.asarray(weights_block, dtype=float)
    if wb.ndim != 2:
        raise ValueError("weights_block must be 2-D")
    base = critical_square(delta, n, m)
    g = base.graph
    gauge = eta_gauge(base)
    # assign theta per quad by the (i, j) cell of its first primal endpoint
    pij = lattice_primal_ij(base)
    thetas = np.empty(g.n_quads)
    for z in range(g.n_quads):
        i, j = pij[g.quads[z, 0]]
        thetas[z] = theta_from_x(wb[i % wb.shape[0], j % wb.shape[1]])
    chi = base.chi
    seed = {c: complex(chi[c]) for c in _seed_corners(base)}
    sol = propagate_solution(g, thetas, seed, gauge, tol=1e-7)
    emb = embedding_from_solution(sol)
    emb.meta.update(
        {"family": "doubly_periodic", "delta": delta, "n": n, "m": m}
    )
    return emb


def disc_patch(delta: float, radius: float = 1.0,
               center: complex = 0j) -> SEmbedding:
    """Critical-square approximation of the disc D(center, radius).

    Keeps the square-lattice faces whose centres fall inside the disc and
    builds the disc-shaped patch (outer face = dual 0) with the standard
    critical geometry (theta = pi/4, incircle radii delta/2).  The outer
    face is assigned a placeholder position outside the disc; corners on
    the outer face carry no meaningful geometry and interior observables
    must not touch them.
    """
    from .planar import build_quad_graph

    gscale = delta * math.sqrt(2.0)
    R = int(math.ceil(radius / gscale)) + 1
    centres = {}
    for i in range(-R, R):
        for j in range(-R, R):
            z = gscale * ((i + 0.5) + 1j * (j + 0.5)) + center
            if abs(z - center) <= radius:
                centres[(i, j)] = z
    if not centres:
        raise ValueError("disc contains no faces at this delta")
    vid = {}
    pos_primal = []

    def v(i, j):
        if (i, j) not in vid:
            vid[(i, j)] = len(pos_primal)
            pos_primal.append(gscale * (i + 1j * j) + center)
        return vid[(i, j)]

    faces = []
    face_keys = sorted(centres)
    for (i, j) in face_keys:
        faces.append([v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)])
    g = build_quad_graph(faces)
    pos = np.empty(g.n_primal + g.n_dual, dtype=complex)
    pos[: g.n_primal] = pos_primal
    pos[g.n_primal] = center + (radius + 10.0 * gscale)   # outer placeholder
    for k, key in enumerate(face_keys):
        pos[g.n_primal + 1 + k] = centres[key]
    q = np.empty(g.n_quads, dtype=complex)
    npm = g.n_primal
    q = 0.25 * (pos[g.quads[:, 0]] + pos[npm + g.quads[:, 1]]
                + pos[g.quads[:, 2]] + pos[npm + g.quads[:, 3]])
    emb = SEmbedding(
        graph=g, pos=pos, pos_quad=q,
        radii=np.full(g.n_quads, delta / 2.0),
        thetas=np.full(g.n_quads, math.pi / 4.0),
        meta={"family": "disc_patch", "delta": delta,
              "radius": radius},
    )
    return emb


_FAMILIES = {
    "critical_square": lambda **kw: critical_square(**kw),
    "isoradial_rhombic": lambda **kw: isoradial_rhombic(**kw),
    "off_critical_square": lambda **kw: off_critical_square(**kw),
    "doubly_periodic": lambda **kw: doubly_periodic(**kw),
    "disc_patch": lambda **kw: disc_patch(**kw),
}


def builtin_family(name: str, **params) -> SEmbedding:
    if name not in _FAMILIES:
        raise ValueError(
            f"unknown family {name!r}; choose from {sorted(_FAMILIES)}"
        )
    return _FAMILIES[name](**params)
