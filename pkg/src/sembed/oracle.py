"""Exact brute-force reference for Kadanoff-Ceva quantities on tiny graphs.

The Ising spins sigma live on the dual vertices (faces) of a disc patch;
the coupling of primal edge e (one per quad) ties the two faces adjacent
to e, with weight x(e) = exp(-2 beta J_e) in (0, 1).  Disorders mu live on
primal vertices and act by flipping the couplings along a primal line.
Corners c = (v, u) carry the fermion chi_c = mu_v sigma_u.

Everything here is computed by exhaustive enumeration, with two
independent evaluation routes cross-checked wherever the sign bookkeeping
is non-trivial:

* spin-configuration sums (optionally with flipped couplings along a
  disorder line), and
* low-temperature polynomial sums over even subgraphs of the primal graph
  (domain walls of the face spins), or over subgraphs with prescribed odd
  degrees for disorder insertions.

All accumulation is done in extended precision (numpy longdouble) so that
1e-12 cross-comparisons remain meaningful.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .planar import QuadGraph, SignGauge, all_faces, double_cover_gauge, \
    gauge_with_source_swap

SPIN_CAP = 22       # max dual vertices for configuration sums
CYCLE_CAP = 22      # max cycle-space dimension for subgraph sums

__all__ = [
    "SpinModel",
    "partition_function",
    "low_temp_polynomial",
    "spin_correlator",
    "disorder_correlator",
    "mixed_correlator",
    "energy_density",
    "monotone_limit",
    "fermion_vector",
    "fermion_R",
    "primal_path",
    "dual_path",
    "source_gauge",
    "OracleFermion",
]


class EnumerationCapError(ValueError):
    pass


@dataclass(frozen=True)
class SpinModel:
    """Ising model on the faces of a disc patch.

    ``x[e]`` is the low-temperature edge weight of primal edge e (= quad e),
    x = exp(-2 beta J).  ``boundary`` is 'wired' (the outer face is a single
    spin, which the disc representation gives for free) or 'free' (couplings
    on boundary edges are switched off).
    """

    graph: QuadGraph
    x: np.ndarray
    boundary: str = "wired"

    def __post_init__(self):
        if not self.graph.has_outer:
            raise ValueError("SpinModel needs a disc patch with outer face")
        x = np.asarray(self.x, dtype=float)
        if x.shape != (self.graph.n_quads,):
            raise ValueError("need one coupling per edge")
        if np.any(x <= 0) or np.any(x >= 1):
            raise ValueError("weights x must lie in (0, 1)")
        if self.boundary not in ("wired", "free"):
            raise ValueError("boundary must be 'wired' or 'free'")
        object.__setattr__(self, "x", x)

    @property
    def effective_x(self) -> np.ndarray:
        """Weights actually used: free boundary decouples boundary edges."""
        if self.boundary == "wired":
            return self.x
        xe = self.x.copy()
        boundary = (self.graph.quads[:, 1] == 0) | (self.graph.quads[:, 3] == 0)
        xe[boundary] = 1.0  # x = 1 <=> J = 0
        return xe

    @property
    def thetas(self) -> np.ndarray:
        return 2.0 * np.arctan(self.x)


def _check_spin_cap(m: SpinModel):
    if m.graph.n_dual > SPIN_CAP:
        raise EnumerationCapError(
            f"{m.graph.n_dual} faces exceeds the enumeration cap {SPIN_CAP}"
        )


def _spin_matrix(nd: int) -> np.ndarray:
    """(2^nd, nd) matrix of +-1 spins, one row per configuration."""
    idx = np.arange(1 << nd, dtype=np.uint32)
    return 1 - 2 * ((idx[:, None] >> np.arange(nd)) & 1).astype(np.int8)


def _config_weights(m: SpinModel, flip: np.ndarray | None = None):
    """(weights, spins): relative Boltzmann weight of each configuration.

    Relative weight = prod over edges of x_e^(1 - s s')/2 — i.e. x_e per
    disagreement.  ``flip`` marks edges whose coupling is negated (disorder
    line): there x_e is paid on agreement instead.
    """
    _check_spin_cap(m)
    g = m.graph
    S = _spin_matrix(g.n_dual)
    xe = m.effective_x
    prod = S[:, g.quads[:, 1]] * S[:, g.quads[:, 3]]  # (nconf, ne) of +-1
    logx = np.log(xe.astype(np.longdouble))
    pay = prod < 0
    if flip is not None:
        pay = pay ^ flip[None, :]
    logw = pay.astype(np.longdouble) @ logx
    return np.exp(logw), S


# ---------------------------------------------------------------------------
# Even-subgraph (low-temperature polynomial) route
# ---------------------------------------------------------------------------

def _primal_adjacency(g: QuadGraph):
    adj: list[list[tuple[int, int]]] = [[] for _ in range(g.n_primal)]
    for e, (v0, _, v1, _) in enumerate(g.quads):
        adj[v0].append((int(v1), e))
        adj[v1].append((int(v0), e))
    return adj


def primal_path(g: QuadGraph, v_from: int, v_to: int,
                avoid_edges: set[int] | None = None) -> list[int]:
    """Edge list of a shortest primal path (BFS), optionally avoiding edges."""
    adj = _primal_adjacency(g)
    prev: dict[int, tuple[int, int]] = {v_from: (-1, -1)}
    queue = deque([v_from])
    while queue:
        v = queue.popleft()
        if v == v_to:
            break
        for w, e in adj[v]:
            if w not in prev and not (avoid_edges and e in avoid_edges):
                prev[w] = (v, e)
                queue.append(w)
    if v_to not in prev:
        raise ValueError("no primal path")
    path = []
    v = v_to
    while v != v_from:
        v, e = prev[v]
        path.append(e)
    return path[::-1]


def dual_path(g: QuadGraph, u_from: int, u_to: int) -> list[int]:
    """Edge (= quad) list of a shortest dual path between two faces."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(g.n_dual)]
    for e, (_, d0, _, d1) in enumerate(g.quads):
        adj[d0].append((int(d1), e))
        adj[d1].append((int(d0), e))
    prev: dict[int, tuple[int, int]] = {u_from: (-1, -1)}
    queue = deque([u_from])
    while queue:
        u = queue.popleft()
        if u == u_to:
            break
        for w, e in adj[u]:
            if w not in prev:
                prev[w] = (u, e)
                queue.append(w)
    if u_to not in prev:
        raise ValueError("no dual path")
    path = []
    u = u_to
    while u != u_from:
        u, e = prev[u]
        path.append(e)
    return path[::-1]


def _cycle_space(g: QuadGraph) -> list[int]:
    """Fundamental-cycle edge bitmasks from a BFS spanning tree of G."""
    adj = _primal_adjacency(g)
    parent_edge = np.full(g.n_primal, -1, dtype=np.int64)
    seen = np.zeros(g.n_primal, dtype=bool)
    seen[0] = True
    order = deque([0])
    tree = np.zeros(g.n_quads, dtype=bool)
    while order:
        v = order.popleft()
        for w, e in adj[v]:
            if not seen[w]:
                seen[w] = True
                parent_edge[w] = e
                tree[e] = True
                order.append(w)
    if not np.all(seen):
        raise ValueError("primal graph disconnected")
    # tree-path-to-root edge masks, following parent edges
    parent = np.full(g.n_primal, -1, dtype=np.int64)
    for v in range(g.n_primal):
        if parent_edge[v] >= 0:
            parent[v] = _other_end(g, int(parent_edge[v]), v)
    root_mask = [-1] * g.n_primal
    root_mask[0] = 0

    def mask_to_root(v: int) -> int:
        chain = []
        while root_mask[v] < 0:
            chain.append(v)
            v = int(parent[v])
        base = root_mask[v]
        for w in reversed(chain):
            base = base | (1 << int(parent_edge[w]))
            root_mask[w] = base
        return base if not chain else root_mask[chain[0]]

    cycles = []
    for e in np.nonzero(~tree)[0]:
        v0, _, v1, _ = g.quads[e]
        mask = mask_to_root(int(v0)) ^ mask_to_root(int(v1)) ^ (1 << int(e))
        cycles.append(mask)
    if len(cycles) > CYCLE_CAP:
        raise EnumerationCapError(
            f"cycle space dimension {len(cycles)} exceeds cap {CYCLE_CAP}"
        )
    return cycles


def _other_end(g: QuadGraph, e: int, v: int) -> int:
    v0, _, v1, _ = g.quads[e]
    return int(v1) if v == int(v0) else int(v0)


def _subgraph_sum(m: SpinModel, base_mask: int = 0,
                  sign_mask: int = 0) -> np.longdouble:
    """Sum over the coset base_mask + cycle space of
    prod_{e in E} x_e * (-1)^{|E & sign_mask|}."""
    g = m.graph
    cycles = _cycle_space(g)
    xe = m.effective_x.astype(np.longdouble)
    total = np.longdouble(0.0)
    ne = g.n_quads
    for subset in range(1 << len(cycles)):
        mask = base_mask
        s = subset
        k = 0
        while s:
            if s & 1:
                mask ^= cycles[k]
            s >>= 1
            k += 1
        w = np.longdouble(1.0)
        mm = mask
        e = 0
        while mm:
            if mm & 1:
                w *= xe[e]
            mm >>= 1
            e += 1
        if bin(mask & sign_mask).count("1") & 1:
            w = -w
        total += w
    return total


# ---------------------------------------------------------------------------
# Partition function and correlators
# ---------------------------------------------------------------------------

def partition_function(m: SpinModel, check: bool = True) -> float:
    """Exact Z = sum over face-spin configurations of exp(beta sum J s s').

    Cross-checks the identity Z = 2 exp(beta sum J) * sum_{even E} x(E)
    (domain walls of face spins are exactly the even subgraphs of G).
    """
    w, _ = _config_weights(m)
    xe = m.effective_x
    beta_sum = -0.5 * np.sum(np.log(xe.astype(np.longdouble)))
    z = float(np.exp(beta_sum) * w.sum())
    if check:
        poly = low_temp_polynomial(m)
        rel = abs(z - float(2.0 * np.exp(beta_sum) * poly)) / z
        if rel > 1e-12:
            raise AssertionError(
                f"spin-sum vs subgraph partition functions differ: {rel:.3e}"
            )
    return z


def low_temp_polynomial(m: SpinModel) -> float:
    """x(E(G)) = sum over even subgraphs of prod x_e."""
    return float(_subgraph_sum(m))


def spin_correlator(m: SpinModel, faces, check: bool = True) -> float:
    """E[prod sigma_u] over the listed faces (dual vertices).

    Spin-sum route, cross-checked against the subgraph route
    (-1)^{|E ∩ gamma◦|} with a dual path pairing the faces.
    """
    faces = list(faces)
    if len(set(faces)) != len(faces):
        raise ValueError("faces must be distinct")
    w, S = _config_weights(m)
    ins = np.ones(len(w), dtype=np.int8)
    for u in faces:
        ins = ins * S[:, u]
    val = float((w * ins).sum() / w.sum())
    if check and len(faces) % 2 == 0 and faces:
        sign_mask = 0
        for k in range(0, len(faces), 2):
            for e in dual_path(m.graph, faces[k], faces[k + 1]):
                sign_mask ^= 1 << e
        alt = float(_subgraph_sum(m, 0, sign_mask) / _subgraph_sum(m))
        if abs(val - alt) > 1e-12 * max(1.0, abs(val)):
            raise AssertionError(
                f"spin-sum vs subgraph spin correlator differ: {val} vs {alt}"
            )
    return val


def _line_mask(line) -> int:
    mask = 0
    for e in line:
        mask ^= 1 << e
    return mask


def disorder_correlator(m: SpinModel, vertices, line=None,
                        check: bool = True) -> float:
    """E[prod mu_v] over an even list of primal vertices.

    Spin route: Z with couplings flipped along a primal line pairing the
    vertices, divided by Z.  Subgraph route: x(E^{[v]})/x(E) over subgraphs
    with odd degree exactly at the vertices.  Both are line-independent;
    the cross-check recomputes the spin route with a second line.
    """
    vertices = list(vertices)
    if len(vertices) % 2:
        raise ValueError("need an even number of disorder insertions")
    if not vertices:
        return 1.0
    if line is None:
        line = default_disorder_line(m.graph, vertices)
    flip = np.zeros(m.graph.n_quads, dtype=bool)
    for e in line:
        flip[e] = not flip[e]
    w0, _ = _config_weights(m)
    wf, _ = _config_weights(m, flip)
    val = float(wf.sum() / w0.sum())
    if check:
        base = _line_mask(line)
        alt = float(_subgraph_sum(m, base) / _subgraph_sum(m))
        if abs(val - alt) > 1e-12 * max(1.0, abs(val)):
            raise AssertionError(
                f"disorder routes differ: {val} vs {alt}"
            )
    return val


def default_disorder_line(g: QuadGraph, vertices) -> list[int]:
    line: list[int] = []
    for k in range(0, len(vertices), 2):
        line.extend(primal_path(g, vertices[k], vertices[k + 1]))
    return line


def mixed_correlator(m: SpinModel, vertices, faces, line=None,
                     check: bool = True) -> float:
    """E[prod mu_v prod sigma_u] for the given disorder line.

    The value depends on the line through the parity of its intersections
    with the spin insertions: deforming the line across one inserted spin
    flips the sign (the spinor property the Kadanoff-Ceva fermion is built
    from).  Spin route: flipped-coupling expectation of prod sigma.  The
    cross-check compares to the subgraph route with the sign
    (-1)^{gamma• . gamma◦}.
    """
    vertices = list(vertices)
    faces = list(faces)
    if len(vertices) % 2:
        raise ValueError("need an even number of disorder insertions")
    if line is None:
        line = default_disorder_line(m.graph, vertices)
    flip = np.zeros(m.graph.n_quads, dtype=bool)
    for e in line:
        flip[e] = not flip[e]
    wf, S = _config_weights(m, flip if vertices else None)
    ins = np.ones(len(wf), dtype=np.int8)
    for u in faces:
        ins = ins * S[:, u]
    w0, _ = _config_weights(m)
    val = float((wf * ins).sum() / w0.sum())
    if check and len(faces) % 2 == 0 and faces:
        gamma_line = _line_mask(line)
        sign_mask = 0
        for k in range(0, len(faces), 2):
            for e in dual_path(m.graph, faces[k], faces[k + 1]):
                sign_mask ^= 1 << e
        crossings = bin(gamma_line & sign_mask).count("1") & 1
        alt = _subgraph_sum(m, gamma_line, sign_mask) / _subgraph_sum(m)
        alt = float(alt) * (-1 if crossings else 1)
        if abs(val - alt) > 1e-12 * max(1.0, abs(val)):
            raise AssertionError(
                f"mixed routes differ: {val} vs {alt}"
            )
    return val


def energy_density(m: SpinModel, edge: int) -> float:
    """E[sigma_{u-} sigma_{u+}] across primal edge ``edge``."""
    _, d0, _, d1 = m.graph.quads[edge]
    return spin_correlator(m, [int(d0), int(d1)])


def monotone_limit(values) -> dict:
    """Report on a sequence expected to decrease monotonically (wired
    boxes): returns the sequence, the last value and a monotonicity flag."""
    vals = [float(v) for v in values]
    mono = all(b <= a + 1e-14 for a, b in zip(vals, vals[1:]))
    return {"values": vals, "limit": vals[-1] if vals else None,
            "monotone_decreasing": mono}


# ---------------------------------------------------------------------------
# Finite-volume Kadanoff-Ceva fermion
# ---------------------------------------------------------------------------

def source_gauge(g: QuadGraph, a: int, z_minus: int | None = None) -> SignGauge:
    """Sign gauge of the double cover for the fermion sourced at corner a:
    branching over all faces except the two Lambda-endpoints of a."""
    base = double_cover_gauge(g, set(all_faces(g)))
    if z_minus is None:
        z_minus = int(g.corner_quads[a][0])
    return gauge_with_source_swap(base, a, z_minus)


@dataclass
class OracleFermion:
    model: SpinModel
    a: int
    z_minus: int
    gauge: SignGauge                 # source gauge for Y x_(a)
    values: np.ndarray               # signed X(c) per corner, X(a) = +1
    magnitudes: np.ndarray           # |<chi_c chi_a>| from enumeration
    residuals: np.ndarray            # (nq, 4) in the source gauge: ~0 everywhere
    residuals_plain: np.ndarray      # in the all-branching gauge: fails at z_a-
    residuals_plain_flipped: np.ndarray  # X(a) negated: fails at z_a+ instead


def _corner_magnitudes(m: SpinModel, a: int) -> np.ndarray:
    g = m.graph
    va, ua = (int(x) for x in g.corners[a])
    mags = np.empty(g.n_corners)
    for c in range(g.n_corners):
        vc, uc = (int(x) for x in g.corners[c])
        verts = [] if vc == va else [va, vc]
        fcs = [] if uc == ua else [ua, uc]
        mags[c] = abs(mixed_correlator(m, verts, fcs, check=False))
    return mags


def fermion_vector(m: SpinModel, a: int, z_minus: int | None = None,
                   tol: float = 1e-10) -> OracleFermion:
    """The finite-volume fermion X^(a)(c) = <chi_c chi_a>, X^(a)(a) = +1.

    Magnitudes come from enumeration; signs are fixed by requiring the
    three-term propagation relations in the source gauge (the double cover
    branching over all faces except the endpoints of a), where they hold
    at every quad.  Viewing the same values as a section of the plain
    all-branching cover instead ("sign-swapping" the two edges at a inside
    z_a-), the relation fails exactly at z_a-; negating X(a) there moves
    the failure to z_a+.  All three residual tables are returned.
    """
    from .embedding import _COS_PARTNER, _SIN_PARTNER, _COS_EDGE, _SIN_EDGE

    g = m.graph
    if z_minus is None:
        z_minus = int(g.corner_quads[a][0])
    gauge = source_gauge(g, a, z_minus)
    mags = _corner_magnitudes(m, a)
    thetas = m.thetas
    w = gauge.edge_signs
    cyc = g.quad_corners

    def quad_matrix(z):
        mat = np.zeros((4, 4))
        c, s = math.cos(thetas[z]), math.sin(thetas[z])
        for j in range(4):
            mat[j, j] = 1.0
            mat[j, _COS_PARTNER[j]] -= w[z, _COS_EDGE[j]] * c
            mat[j, _SIN_PARTNER[j]] -= w[z, _SIN_EDGE[j]] * s
        return mat

    X = np.full(g.n_corners, np.nan)
    X[a] = 1.0
    if abs(mags[a] - 1.0) > tol:
        raise AssertionError("<chi_a chi_a> must be 1")
    pending = set(range(g.n_quads))
    progress = True
    while progress and pending:
        progress = False
        for z in sorted(pending):
            known = [j for j in range(4) if not np.isnan(X[cyc[z, j]])]
            if len(known) == 4:
                pending.discard(z)
                progress = True
                continue
            mat = quad_matrix(z)
            unknown = [j for j in range(4) if j not in known]
            if len(known) >= 2:
                sub = mat[:, unknown]
                sv = np.linalg.svd(sub, compute_uv=False)
                if sv[-1] < 1e-9 * sv[0]:
                    continue
                rhs = -mat[:, known] @ X[cyc[z, known]]
                sol, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
                if np.max(np.abs(np.abs(sol) - mags[cyc[z, unknown]])) > 1e3 * tol:
                    raise AssertionError(
                        f"propagated magnitudes disagree with enumeration "
                        f"at quad {z}"
                    )
                for j, v in zip(unknown, sol):
                    X[cyc[z, j]] = v
                pending.discard(z)
                progress = True
            elif len(known) == 1:
                # try the 8 sign patterns for the three unknown corners
                good = []
                for bits in range(8):
                    trial = X[cyc[z]].copy()
                    for t, j in enumerate(unknown):
                        s = 1.0 if (bits >> t) & 1 else -1.0
                        trial[j] = s * mags[cyc[z, j]]
                    if np.max(np.abs(mat @ trial)) <= 1e3 * tol:
                        good.append(trial)
                if len(good) == 1:
                    X[cyc[z]] = good[0]
                    pending.discard(z)
                    progress = True
    if np.any(np.isnan(X)):
        raise AssertionError(
            f"sign propagation stalled with {int(np.isnan(X).sum())} "
            "corners unresolved"
        )
    if np.max(np.abs(np.abs(X) - mags)) > 1e3 * tol:
        raise AssertionError("signed fermion magnitudes drifted")

    plain = double_cover_gauge(g, set(all_faces(g)))

    def residual_table(vals, signs):
        res = np.empty((g.n_quads, 4))
        for z in range(g.n_quads):
            mat = np.zeros((4, 4))
            c, s = math.cos(thetas[z]), math.sin(thetas[z])
            for j in range(4):
                mat[j, j] = 1.0
                mat[j, _COS_PARTNER[j]] -= signs[z, _COS_EDGE[j]] * c
                mat[j, _SIN_PARTNER[j]] -= signs[z, _SIN_EDGE[j]] * s
            res[z] = np.abs(mat @ vals[cyc[z]])
        return res

    res = residual_table(X, w)
    res_plain = residual_table(X, plain.edge_signs)
    Xf = X.copy()
    Xf[a] = -Xf[a]
    res_plain_f = residual_table(Xf, plain.edge_signs)
    return OracleFermion(m, a, z_minus, gauge, X, mags,
                         res, res_plain, res_plain_f)


def fermion_R(m: SpinModel, a: int, c: int,
              z_minus: int | None = None) -> float:
    """Single entry X^(a)(c) of the finite-volume fermion."""
    return float(fermion_vector(m, a, z_minus).values[c])
