"""s-holomorphic fermion machinery.

A *quad field* F assigns a complex value per quad; its corner projection

    X(c) = delta_c^{1/2} Re[conj(eta_c) F(z)],   delta_c = |Delta_c|,

is side-independent exactly when F is s-holomorphic across c.  This module
provides the X <-> F conversions, s-holomorphicity residual reports, the
primitives I_C, H_X and H_F, contour monodromy, the full-plane fermion
reconstructed from the regularized S-graph Green field (J = -1/2 M), the
Pfaffian and multipoint correlators, and energy-density fusion helpers.

Conventions (documented, fixed once):

* The increment of I_C across corner c, oriented dual -> primal, is

      inc_z(c) = conj(s) F(z) Delta_c + s conj(F(z)) delta_c,
      s = SIGMA = e^{i pi/4},

  which equals 2 delta_c^{1/2} m_c Re[conj(eta_c) F(z)] with
  m_c = e^{i arg(Delta_c)/2}; it depends only on the corner projection.
* Monodromy is the increment picked up by I_C when winding once
  counterclockwise around the source corner a.  For the monodromy-
  normalized reconstructed fermion it equals 2i alpha =
  2i conj(SIGMA eta_a) exactly: "2i eta_bar_a" with eta_a read on the
  collapse-direction lift (eta^2 = -conj(Delta_a)/|Delta_a|); the
  principal-argument sheet of eta differs by a fixed quarter turn.
* ``fullplane_fermion`` normalizations: "source" scales the field so that
  delta_a * Re[conj(eta_a) F(z_a+)] = +1 (the lattice two-point convention
  <chi_a chi_a> = 1, under which fused adjacent corners reproduce the
  energy density); "monodromy" is exactly half of that, making the
  monodromy magnitude 2.  The factor of two between the two conventions
  is a measured fact of the construction and is recorded in ``meta``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .embedding import SEmbedding, SIGMA, origami_map
from .green import full_plane_green
from .sgraph import alpha_for_corner, bosonize, build_sgraph

__all__ = [
    "QuadField",
    "PrimitiveField",
    "x_from_f",
    "corner_projections",
    "f_from_x",
    "shol_residuals",
    "primitive_IC",
    "primitive_HX",
    "primitive_HF",
    "monodromy",
    "fullplane_fermion",
    "pfaffian",
    "two_point_matrix",
    "multipoint",
    "edge_fusion_corners",
    "r_edge",
    "energy_covariance_terms",
    "scaled_energy_correlator",
    "scaled_domain_density",
]


# ---------------------------------------------------------------------------
# Quad fields and X <-> F conversion
# ---------------------------------------------------------------------------

@dataclass
class QuadField:
    """Complex values per quad, optionally singular at a source corner."""

    emb: SEmbedding
    values: np.ndarray            # complex, one per quad
    source: int | None = None     # singular corner, if any
    meta: dict = field(default_factory=dict)


def x_from_f(F: QuadField, c: int, z: int | None = None) -> float:
    """Corner projection X(c) = delta_c^{1/2} Re[conj(eta_c) F(z)].

    ``z`` defaults to the first quad of the corner; for s-holomorphic
    fields the two sides agree.
    """
    emb = F.emb
    g = emb.graph
    if z is None:
        z = int(g.corner_quads[c][0] if g.corner_quads[c][0] >= 0
                else g.corner_quads[c][1])
    if c not in g.quad_corners[z]:
        raise ValueError(f"corner {c} does not belong to quad {z}")
    return float(
        math.sqrt(emb.corner_length[c])
        * (np.conj(emb.eta[c]) * F.values[z]).real
    )


def corner_projections(F: QuadField) -> np.ndarray:
    """(nc, 2) array of X(c) read from each side (NaN for a missing quad)."""
    emb = F.emb
    g = emb.graph
    out = np.full((g.n_corners, 2), np.nan)
    root = np.sqrt(emb.corner_length)
    eta_bar = np.conj(emb.eta)
    for i in range(2):
        zi = g.corner_quads[:, i]
        ok = zi >= 0
        out[ok, i] = root[ok] * (eta_bar[ok] * F.values[zi[ok]]).real
    return out


def f_from_x(emb: SEmbedding, z: int, xs: dict[int, float],
             tol: float = 1e-12) -> complex:
    """Recover F(z) from corner projections X(c) of quad z.

    Solves the real 2x2 least-squares system Re[conj(eta_c) F] =
    X(c)/delta_c^{1/2} over the supplied corners.  Raises on a degenerate
    denominator (all supplied eta-lines parallel).
    """
    g = emb.graph
    rows, rhs = [], []
    for c, x in xs.items():
        if c not in g.quad_corners[z]:
            raise ValueError(f"corner {c} does not belong to quad {z}")
        eb = np.conj(emb.eta[c])
        rows.append([eb.real, -eb.imag])
        rhs.append(x / math.sqrt(emb.corner_length[c]))
    A = np.array(rows)
    sv = np.linalg.svd(A, compute_uv=False)
    if len(sv) < 2 or sv[-1] <= tol * sv[0]:
        raise ValueError("degenerate denominator: eta directions parallel")
    sol, *_ = np.linalg.lstsq(A, np.array(rhs), rcond=None)
    return complex(sol[0], sol[1])


def shol_residuals(F: QuadField) -> dict:
    """Per-corner projection mismatch report.

    ``residual[c] = |X_side0(c) - X_side1(c)|`` (NaN for boundary corners)
    and ``flipped[c] = |X_side0(c) + X_side1(c)|``; a source corner is
    s-holomorphic "up to sign": its plain residual is large but the
    flipped one vanishes.
    """
    proj = corner_projections(F)
    residual = np.abs(proj[:, 0] - proj[:, 1])
    flipped = np.abs(proj[:, 0] + proj[:, 1])
    return {"residual": residual, "flipped": flipped,
            "projections": proj, "source": F.source}


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def _region_mask(g, region) -> np.ndarray:
    """Normalize a quad-region spec (None, bool mask, or id iterable)."""
    if region is None:
        return np.ones(g.n_quads, dtype=bool)
    region = np.asarray(region)
    if region.dtype == bool:
        if region.shape != (g.n_quads,):
            raise ValueError("region mask has wrong length")
        return region
    mask = np.zeros(g.n_quads, dtype=bool)
    mask[region.astype(int)] = True
    return mask


def _corner_increments(F: QuadField) -> np.ndarray:
    """(nc, 2) complex increments of I_C across each corner (dual->primal),
    computed from each side's quad value."""
    emb = F.emb
    g = emb.graph
    delta = emb.corner_delta
    dlen = emb.corner_length
    out = np.full((g.n_corners, 2), np.nan, dtype=complex)
    for i in range(2):
        zi = g.corner_quads[:, i]
        ok = zi >= 0
        Fz = F.values[zi[ok]]
        out[ok, i] = (np.conj(SIGMA) * Fz * delta[ok]
                      + SIGMA * np.conj(Fz) * dlen[ok])
    return out


@dataclass
class PrimitiveField:
    """Primitive I_C on Lambda(G) of the cut plane."""

    emb: SEmbedding
    values: np.ndarray            # complex per Lambda vertex (NaN unreached)
    base: int
    cut: list                     # corners excluded from integration
    monodromy: complex | None
    source: int | None
    meta: dict = field(default_factory=dict)


def _ray_crossing(p: complex, q: complex, origin: complex,
                  direction: complex) -> bool:
    """Does the open segment (p, q) cross the ray origin + t*direction?"""
    w = np.conj(direction)
    a = w * (p - origin)
    b = w * (q - origin)
    if a.imag * b.imag >= 0:
        return False
    t = a.imag / (a.imag - b.imag)
    x = a.real + t * (b.real - a.real)
    return x > 0


def primitive_IC(F: QuadField, base: int | None = None,
                 cut_angle: float = 0.3, tol: float = 1e-8,
                 region=None) -> PrimitiveField:
    """Integrate I_C[F] over Lambda(G) by BFS across corners.

    With a source, a branch cut runs from the source corner's midpoint
    along the ray of angle ``cut_angle``; cut corners (and the source
    itself) are skipped.  ``region`` (boolean mask or iterable of quad
    ids) restricts the integration to corners of those quads — useful
    when a reconstructed field is only s-holomorphic on a subdomain.
    Path-independence over the integrated corners is checked to ``tol``
    relative to the largest increment; the monodromy is measured
    separately by ``monodromy`` on contours around the source.
    """
    emb = F.emb
    g = emb.graph
    n_lam = g.n_primal + g.n_dual
    inc2 = _corner_increments(F)
    rmask = _region_mask(g, region)
    in_r = rmask[np.clip(g.corner_quads, 0, None)] & (g.corner_quads >= 0)
    # read the increment from a side inside the region when possible
    side = np.where(in_r[:, 0], 0, 1)
    inc = inc2[np.arange(g.n_corners), side]
    cut: set[int] = set(np.nonzero(~in_r.any(axis=1))[0].tolist())
    if F.source is not None:
        origin = emb.corner_midpoint(F.source)
        direction = complex(math.cos(cut_angle), math.sin(cut_angle))
        cut.add(int(F.source))
        for c in range(g.n_corners):
            p = emb.pos[g.corners[c, 0]]
            q = emb.pos[g.n_primal + g.corners[c, 1]]
            if _ray_crossing(p, q, origin, direction):
                cut.add(c)
    if base is None:
        base = 0
        if region is not None:
            zr = np.nonzero(rmask)[0]
            base = int(g.quads[zr[0], 0])
    # adjacency of Lambda(G) through non-cut corners
    adj: list[list[tuple[int, int, int]]] = [[] for _ in range(n_lam)]
    for c in range(g.n_corners):
        if c in cut:
            continue
        v = int(g.corners[c, 0])
        u = g.n_primal + int(g.corners[c, 1])
        adj[u].append((v, c, +1))   # dual -> primal: +inc
        adj[v].append((u, c, -1))
    I = np.full(n_lam, np.nan, dtype=complex)
    I[base] = 0.0
    queue = deque([base])
    while queue:
        v = queue.popleft()
        for w, c, s in adj[v]:
            if np.isnan(I[w].real):
                I[w] = I[v] + s * inc[c]
                queue.append(w)
    # path independence: every non-cut corner with both ends reached
    scale = float(np.nanmax(np.abs(inc))) or 1.0
    worst = 0.0
    for c in range(g.n_corners):
        if c in cut:
            continue
        v = int(g.corners[c, 0])
        u = g.n_primal + int(g.corners[c, 1])
        if np.isnan(I[v].real) or np.isnan(I[u].real):
            continue
        worst = max(worst, abs(I[v] - I[u] - inc[c]))
    if worst > tol * scale:
        raise ValueError(
            f"path-dependent primitive: residual {worst:.3e} "
            f"(> {tol:.1e} x max increment {scale:.3e})"
        )
    mono = None
    if F.source is not None:
        try:
            mono = monodromy(F)
        except ValueError:
            mono = None
    return PrimitiveField(emb, I, int(base), sorted(cut), mono, F.source,
                          {"path_residual": worst, "cut_angle": cut_angle})


def primitive_HX(emb: SEmbedding, X: np.ndarray, gauge,
                 tol: float = 1e-8, skip_quads=(),
                 region=None) -> np.ndarray:
    """Primitive H_X on Lambda(G) + quad centres from real corner values.

    Increments (X read as a section of ``gauge``):

        H(v_p) - H(z) = w_cos X(c_p0) X(c_p1) cos(theta_z),
        H(z) - H(u_q) = w_sin X(c_0q) X(c_1q) sin(theta_z),

    with w the gauge sign of the corner-graph edge joining the two
    corners (cos edges 3 and 1, sin edges 0 and 2).  Values are indexed
    primal, dual, then centres; H at Lambda vertex 0 is 0.  Quads in
    ``skip_quads`` (e.g. the two quads of a source corner, where the
    three-term relation fails by construction) are left out of the
    integration and their centre values may come back NaN.
    """
    g = emb.graph
    n_lam = g.n_primal + g.n_dual
    cyc = g.quad_corners
    w = gauge.edge_signs
    cth, sth = np.cos(emb.thetas), np.sin(emb.thetas)
    Xc = np.asarray(X, dtype=float)
    n = n_lam + g.n_quads
    H = np.full(n, np.nan)
    skip = set(int(z) for z in skip_quads)
    rmask = _region_mask(g, region)
    adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    start_lam = None
    for z in range(g.n_quads):
        if z in skip or not rmask[z]:
            continue
        if start_lam is None:
            start_lam = int(g.quads[z, 0])
        zz = n_lam + z
        incs = (
            (int(g.quads[z, 0]),
             w[z, 3] * Xc[cyc[z, 0]] * Xc[cyc[z, 3]] * cth[z]),
            (int(g.quads[z, 2]),
             w[z, 1] * Xc[cyc[z, 1]] * Xc[cyc[z, 2]] * cth[z]),
            (g.n_primal + int(g.quads[z, 1]),
             -w[z, 0] * Xc[cyc[z, 0]] * Xc[cyc[z, 1]] * sth[z]),
            (g.n_primal + int(g.quads[z, 3]),
             -w[z, 2] * Xc[cyc[z, 2]] * Xc[cyc[z, 3]] * sth[z]),
        )
        for lam, dH in incs:     # H(lam) = H(z) + dH
            adj[zz].append((lam, dH))
            adj[lam].append((zz, -dH))
    start = 0 if start_lam is None else start_lam
    H[start] = 0.0
    queue = deque([start])
    worst = 0.0
    scale = float(np.max(Xc**2)) or 1.0
    while queue:
        v = queue.popleft()
        for u, dH in adj[v]:
            if np.isnan(H[u]):
                H[u] = H[v] + dH
                queue.append(u)
            else:
                worst = max(worst, abs(H[u] - H[v] - dH))
    if worst > tol * scale:
        raise ValueError(f"H_X increments inconsistent: {worst:.3e}")
    return H


def primitive_HF(F: QuadField, tol: float = 1e-8,
                 region=None) -> np.ndarray:
    """Primitive H_F = 1/2 Int Re(conj(SIGMA)^2 F^2 dS + |F|^2 dQ) on
    Lambda(G) + quad centres.

    The corner increment (dual -> primal) reduces to delta_c p_c^2 with
    p_c = Re[conj(eta_c) F]; the 1/2 prefactor makes it equal X(c)^2,
    matching the H_X normalization so that H_F - H_X is constant.
    Centre values use the half-corner split H(v_p) - H(z) =
    w X(c_p0) X(c_p1) cos(theta) computed from F's own projections, with
    the same corner-graph gauge sign w as H_X (principal-sheet corner
    products are only defined together with that sign).
    """
    from .embedding import eta_gauge
    emb = F.emb
    g = emb.graph
    proj = corner_projections(F)
    rmask = _region_mask(g, region)
    # per-corner X^2 read from an in-region side (sides agree for
    # s-holomorphic F; at a source both signs give the same square)
    in_r = rmask[np.clip(g.corner_quads, 0, None)] & (g.corner_quads >= 0)
    side = np.where(in_r[:, 0], 0, 1)
    X2 = proj[np.arange(g.n_corners), side] ** 2
    n_lam = g.n_primal + g.n_dual
    n = n_lam + g.n_quads
    H = np.full(n, np.nan)
    cyc = g.quad_corners
    cth = np.cos(emb.thetas)
    eta_bar = np.conj(emb.eta)
    root = np.sqrt(emb.corner_length)
    w = eta_gauge(emb).edge_signs
    adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    start_lam = None
    for z in range(g.n_quads):
        if not rmask[z]:
            continue
        if start_lam is None:
            start_lam = int(g.quads[z, 0])
        zz = n_lam + z
        Xq = root[cyc[z]] * (eta_bar[cyc[z]] * F.values[z]).real
        incs = (
            (int(g.quads[z, 0]), w[z, 3] * Xq[0] * Xq[3] * cth[z]),
            (int(g.quads[z, 2]), w[z, 1] * Xq[1] * Xq[2] * cth[z]),
        )
        for lam, dH in incs:
            adj[zz].append((lam, dH))
            adj[lam].append((zz, -dH))
        # dual centres via the corner increment minus the primal half
        for j, p in ((0, 0), (2, 2)):
            c = int(cyc[z, j])
            u = g.n_primal + int(g.corners[c, 1])
            v = int(g.corners[c, 0])
            dcorner = X2[c]          # H(v) - H(u)
            dprimal = incs[0][1] if v == int(g.quads[z, 0]) else incs[1][1]
            # H(z) - H(u) = dcorner - dprimal
            adj[zz].append((u, -(dcorner - dprimal)))
            adj[u].append((zz, dcorner - dprimal))
    start = 0 if start_lam is None else start_lam
    H[start] = 0.0
    queue = deque([start])
    worst = 0.0
    scale = float(np.nanmax(X2)) or 1.0
    src_lam = set()
    if F.source is not None:
        src_lam = {int(g.corners[F.source, 0]),
                   g.n_primal + int(g.corners[F.source, 1])}
    while queue:
        v = queue.popleft()
        for u, dH in adj[v]:
            if np.isnan(H[u]):
                H[u] = H[v] + dH
                queue.append(u)
            elif not (src_lam & {u, v}):
                worst = max(worst, abs(H[u] - H[v] - dH))
    if worst > tol * scale:
        raise ValueError(f"H_F increments inconsistent: {worst:.3e}")
    return H


# ---------------------------------------------------------------------------
# Monodromy
# ---------------------------------------------------------------------------

def monodromy(F: QuadField, radius: float | None = None) -> complex:
    """Counterclockwise closure defect of I_C around the source corner.

    Sums the oriented side-specific increments over all quads within
    ``radius`` of the source midpoint: interior corners cancel exactly
    (the increment depends only on the projection), so the sum equals the
    contour integral along the region boundary.  The result is the
    monodromy added to I_C per positive winding around the source.
    """
    if F.source is None:
        raise ValueError("monodromy needs a field with a source corner")
    emb = F.emb
    g = emb.graph
    origin = emb.corner_midpoint(F.source)
    if radius is None:
        # stay clear of the patch boundary: 60% of the distance from the
        # source to the nearest boundary-corner midpoint
        bc = np.nonzero(np.any(g.corner_quads < 0, axis=1))[0]
        mids = 0.5 * (emb.pos[g.corners[bc, 0]]
                      + emb.pos[g.n_primal + g.corners[bc, 1]])
        radius = 0.6 * float(np.min(np.abs(mids - origin)))
    sel = np.abs(emb.pos_quad - origin) <= radius
    for z in g.corner_quads[F.source]:
        if z < 0 or not sel[int(z)]:
            raise ValueError("contour must enclose the source's quads")
    inc2 = _corner_increments(F)
    # boundary corners must be interior to the patch
    zs = np.nonzero(sel)[0]
    cs = g.quad_corners[zs]
    if np.any(g.corner_quads[cs.ravel()] < 0):
        raise ValueError("contour reaches the patch boundary")
    # Sum the oriented side-specific increments over every quad of the
    # region, skipping the source corner: interior corners cancel (the
    # increment is projection-only), so the sum equals the ccw contour
    # integral along the region boundary, which is the monodromy.
    total = 0.0 + 0.0j
    for z in zs:
        for j in range(4):
            c = int(g.quad_corners[z, j])
            if c == F.source:
                continue
            side = 0 if int(g.corner_quads[c, 0]) == z else 1
            s = 1.0 if j % 2 == 1 else -1.0
            total += s * inc2[c, side]
    return complex(total)


# ---------------------------------------------------------------------------
# Full-plane fermion via the Green field
# ---------------------------------------------------------------------------

def fullplane_fermion(emb: SEmbedding, a: int, P_list=None, tol: float = 1e-3,
                      normalization: str = "monodromy") -> QuadField:
    """Reconstruct the full-plane fermion with source corner ``a``.

    Pipeline: anchored bosonization with alpha = conj(SIGMA eta_a) (the
    white face of a collapses exactly), S-graph + regularized Green field,
    J = -1/2 M on S-graph vertices; across each non-collapsed corner the
    projection is read off from

        X(c) = (J(v_primal) - J(v_dual))
               / (2 delta_c^{1/2} Re[conj(alpha) m_c]),

    and F(z) is the per-quad least-squares solution of
    Re[conj(eta_c) F] = X(c)/delta_c^{1/2} over its usable corners.

    ``normalization``: "source" fixes delta_a Re[conj(eta_a) F(z_a+)] = +1
    (lattice two-point convention); "monodromy" scales by the measured
    monodromy so that it equals 2i alpha exactly (continuum-theorem
    convention; numerically half the source normalization); "raw" keeps
    J's own scale.  meta records the monodromy, the source projection,
    the Laplacian-at-source check and the Green stabilization data.
    """
    g = emb.graph
    if np.any(g.corner_quads[a] < 0):
        raise ValueError("source corner must be interior")
    alpha = alpha_for_corner(emb, a)
    tf = bosonize(emb, anchor=a)
    om = origami_map(emb)
    sg = build_sgraph(emb, om, alpha, tf)
    if not any(c == a for c, _ in sg.collapsed_whites):
        raise AssertionError("anchored alpha did not collapse the source")
    av = sg.vertex_of_lambda(int(g.corners[a, 0]))
    gf = full_plane_green(sg, av, P_list=P_list, tol=tol)
    J = -0.5 * gf.values
    Jlam = J[sg.cls_of_lambda]

    delta = emb.corner_delta
    dlen = emb.corner_length
    root = np.sqrt(dlen)
    m = np.exp(0.5j * np.angle(delta))
    denom = 2.0 * root * (np.conj(alpha) * m).real
    dJ = Jlam[g.corners[:, 0]] - Jlam[g.n_primal + g.corners[:, 1]]
    usable = np.abs(denom) > 1e-8 * float(np.max(root))
    X = np.zeros(g.n_corners)
    X[usable] = dJ[usable] / denom[usable]

    eta_bar = np.conj(emb.eta)
    # vectorized per-quad 2x2 normal equations over usable corners
    cyc = g.quad_corners
    use = usable[cyc]                                  # (nq, 4)
    if np.any(use.sum(axis=1) < 2):
        raise ValueError("a quad has fewer than 2 usable corners")
    r1 = eta_bar[cyc].real * use
    r2 = -eta_bar[cyc].imag * use
    b = np.where(use, X[cyc] / root[cyc], 0.0)
    A11 = (r1 * r1).sum(axis=1)
    A12 = (r1 * r2).sum(axis=1)
    A22 = (r2 * r2).sum(axis=1)
    b1 = (r1 * b).sum(axis=1)
    b2 = (r2 * b).sum(axis=1)
    det = A11 * A22 - A12 * A12
    if np.any(det <= 1e-12 * np.maximum(A11 + A22, 1e-300) ** 2):
        raise ValueError("degenerate quad system in reconstruction")
    Fre = (A22 * b1 - A12 * b2) / det
    Fim = (A11 * b2 - A12 * b1) / det
    values = Fre + 1j * Fim
    fit_res = np.abs(r1 * Fre[:, None] + r2 * Fim[:, None] - b).max()

    Fq = QuadField(emb, values, int(a))
    z_plus = int(tf.z_plus)
    x_plus = dlen[a] * (eta_bar[a] * values[z_plus]).real
    if x_plus < 0:   # gradient-phase fix: X(a+) = +1 side
        values = -values
        x_plus = -x_plus
    Fq.values = values
    mono_raw = monodromy(Fq)
    if normalization == "source":
        scale = 1.0 / x_plus
    elif normalization == "monodromy":
        # the measured monodromy direction is exactly +/- m_a = i alpha
        # (a real multiple); dividing by that signed real multiple makes
        # the monodromy equal 2i alpha exactly.  Note the resulting global
        # sign can differ from the X(a+) = +1 convention: sign conventions
        # are pinned per normalization, and all physical (quadratic)
        # quantities are sign-independent.
        scale = 2.0 / float((mono_raw * np.conj(2j * alpha)).real
                            / (2.0 * abs(alpha)))
    elif normalization == "raw":
        scale = 1.0
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    values = values * scale
    x_plus = x_plus * scale
    Fq.values = values
    mono = scale * mono_raw
    rep = shol_residuals(Fq)
    away = np.ones(g.n_corners, dtype=bool)
    away[a] = False
    # core region: corners well inside both the patch and the Green disc,
    # where the reconstruction is exact; residuals outside reflect
    # boundary/truncation contamination and are reported separately
    origin = emb.corner_midpoint(a)
    bc = np.nonzero(np.any(g.corner_quads < 0, axis=1))[0]
    bmids = 0.5 * (emb.pos[g.corners[bc, 0]]
                   + emb.pos[g.n_primal + g.corners[bc, 1]])
    core_r = 0.6 * float(np.min(np.abs(bmids - origin)))
    cmids = 0.5 * (emb.pos[g.corners[:, 0]]
                   + emb.pos[g.n_primal + g.corners[:, 1]])
    core = away & (np.abs(cmids - origin) <= core_r)
    # Laplacian-at-source identity: (Delta J)(a) = -1/(2 mu(a)), mu the
    # 3-triangle area sum at the degenerate source vertex
    Lsrc = float(-0.5 * gf.meta["source_identity"] / sg.mu[av])
    Fq.meta.update({
        "alpha": alpha,
        "z_plus": z_plus,
        "x_aplus": float(x_plus),
        "monodromy_raw": mono_raw,
        "normalization": normalization,
        "monodromy": mono,
        "monodromy_target": 2j * alpha,
        "fit_residual": float(fit_res),
        "shol_max_away": float(np.nanmax(rep["residual"][away])),
        "shol_max_core": float(np.nanmax(rep["residual"][core])),
        "core_radius": core_r,
        "shol_flipped_at_source": float(rep["flipped"][a]),
        "laplacian_at_source": Lsrc,
        "laplacian_at_source_target": float(-1.0 / (2.0 * sg.mu[av])),
        "green_meta": gf.meta,
        "sgraph": sg,
        "green": gf,
    })
    return Fq


# ---------------------------------------------------------------------------
# Pfaffians and multipoint correlators
# ---------------------------------------------------------------------------

def pfaffian(A: np.ndarray, tol: float = 1e-12) -> float:
    """Pfaffian of a real antisymmetric matrix.

    Skew-symmetric elimination with partial pivoting (largest absolute
    pivot); Pf(A)^2 = det(A).
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    scale = float(np.max(np.abs(A))) or 1.0
    if np.max(np.abs(A + A.T)) > tol * scale:
        raise ValueError("matrix is not antisymmetric")
    if n % 2 == 1:
        return 0.0
    pf = 1.0
    for k in range(0, n - 1, 2):
        col = np.abs(A[k + 1:, k])
        kp = k + 1 + int(np.argmax(col))
        if A[kp, k] == 0.0:
            return 0.0
        if kp != k + 1:
            A[[k + 1, kp]] = A[[kp, k + 1]]
            A[:, [k + 1, kp]] = A[:, [kp, k + 1]]
            pf = -pf
        pf *= A[k, k + 1]
        if k + 2 < n:
            t = slice(k + 2, n)
            c = A[k, t] / A[k, k + 1]
            d = A[k + 1, t]
            # Schur complement of the 2x2 pivot block
            A[t, t] -= np.outer(c, d) - np.outer(d, c)
    return float(pf)


def two_point_matrix(model, corners) -> np.ndarray:
    """Gauge-consistent antisymmetric matrix A[i, j] = <chi_i chi_j> from
    oracle fermion runs.

    Each run fixes <chi_a chi_a> = +1 in its own sheet; relative per-run
    signs are fixed by antisymmetry against the first run and checked for
    consistency on all remaining pairs.
    """
    from .oracle import fermion_vector

    corners = [int(c) for c in corners]
    if len(set(corners)) != len(corners):
        raise ValueError("corners must be pairwise distinct")
    rows = [fermion_vector(model, c).values for c in corners]
    n = len(corners)
    s = np.ones(n)
    for i in range(1, n):
        ref = -s[0] * rows[0][corners[i]]
        if rows[i][corners[0]] == 0.0:
            raise ValueError("cannot fix relative gauge: zero entry")
        s[i] = math.copysign(1.0, ref * rows[i][corners[0]])
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                A[i, j] = s[i] * rows[i][corners[j]]
    if np.max(np.abs(A + A.T)) > 1e-9 * max(np.max(np.abs(A)), 1e-300):
        raise ValueError("per-run gauges are antisymmetry-inconsistent")
    return 0.5 * (A - A.T)


def multipoint(model, corners) -> float:
    """2n-point fermion correlator as the Pfaffian of the gauge-consistent
    2-point matrix (sign convention: that of the first run's sheet)."""
    return pfaffian(two_point_matrix(model, corners))


# ---------------------------------------------------------------------------
# Energy fusion
# ---------------------------------------------------------------------------

def edge_fusion_corners(emb: SEmbedding, e: int,
                        primal_end: int = 0) -> tuple[int, int]:
    """The fused corner pair of edge (= quad) e: the two corners at one of
    its primal endpoints, facing the two dual faces of the edge."""
    g = emb.graph
    v = int(g.quads[e, 0 if primal_end == 0 else 2])
    d0, d1 = int(g.quads[e, 1]), int(g.quads[e, 3])
    return g.corner_id(v, d0), g.corner_id(v, d1)


def r_edge(emb: SEmbedding, e: int, primal_end: int = 0) -> float:
    """Geometric fusion scale r_e = -cos(theta_e) Im[conj(eta_a) eta_b]
    (delta_a delta_b)^{1/2} for the edge's fused corner pair."""
    ca, cb = edge_fusion_corners(emb, e, primal_end)
    return float(
        -math.cos(emb.thetas[e])
        * (np.conj(emb.eta[ca]) * emb.eta[cb]).imag
        * math.sqrt(emb.corner_length[ca] * emb.corner_length[cb])
    )


def _pair_value(F: QuadField, c: int) -> float:
    """Lattice two-point <chi_c chi_source> read from a source-normalized
    field: (delta_a delta_c)^{1/2} Re[conj(eta_c) F(z_c)], side-averaged."""
    emb = F.emb
    proj = corner_projections(F)
    p = np.nanmean(proj[c])
    return float(math.sqrt(emb.corner_length[F.source]) * p)


def energy_covariance_terms(Fa: QuadField, Fb: QuadField,
                            e2: int, primal_end: int = 0) -> dict:
    """Connected energy correlator pieces by corner fusion.

    ``Fa``/``Fb`` are source-normalized fields with sources at the fused
    corner pair (a1, b1) of the first edge; the result assembles

        cov = -<chi_b1 chi_b2><chi_a1 chi_a2> + <chi_a1 chi_b2><chi_b1 chi_a2>

    over the fused pair (a2, b2) of edge e2.  The overall sign carries the
    per-run sheet ambiguity; the magnitude does not (pinned positive
    against the oracle's nearest-neighbour energy covariance).
    """
    emb = Fa.emb
    a2, b2 = edge_fusion_corners(emb, e2, primal_end)
    v_aa = _pair_value(Fa, a2)
    v_ab = _pair_value(Fa, b2)
    v_ba = _pair_value(Fb, a2)
    v_bb = _pair_value(Fb, b2)
    cov = -v_bb * v_aa + v_ab * v_ba
    return {"cov": cov, "pairs": {"a1a2": v_aa, "a1b2": v_ab,
                                  "b1a2": v_ba, "b1b2": v_bb}}


def scaled_energy_correlator(emb: SEmbedding, e1: int, e2: int,
                             P_list=None, tol: float = 1e-3,
                             normalization: str = "monodromy") -> dict:
    """Full-plane scaled energy correlator of two edges:

        cos(theta_1) cos(theta_2) / (r_1 r_2) * Cov(eps_1, eps_2),

    with the covariance assembled by corner fusion from two full-plane
    fermions sourced at the fused corners of e1, and r_e the geometric
    fusion scale.  With "monodromy"-normalized fields the flat-lattice
    value converges to the continuum-theorem constant 1/pi^2 (per unit
    separation); "source"-normalized fields give the physical covariance,
    which is exactly 4x larger (a factor 2 per fermion insertion — the
    same convention gap surfaced by the two-point comparison).  The sign
    is reported as measured.
    """
    a1, b1 = edge_fusion_corners(emb, e1)
    Fa = fullplane_fermion(emb, a1, P_list, tol, normalization=normalization)
    Fb = fullplane_fermion(emb, b1, P_list, tol, normalization=normalization)
    terms = energy_covariance_terms(Fa, Fb, e2)
    r1, r2 = r_edge(emb, e1), r_edge(emb, e2)
    pref = math.cos(emb.thetas[e1]) * math.cos(emb.thetas[e2]) / (r1 * r2)
    return {"scaled": pref * terms["cov"], "cov": terms["cov"],
            "r1": r1, "r2": r2, "prefactor": pref, "terms": terms,
            "fields": (Fa, Fb)}


def scaled_domain_density(emb: SEmbedding, e: int, E_w: float,
                          E_inf: float) -> float:
    """Bounded-domain scaled energy density cos(theta_e) (E_w - E_inf) / |r_e|
    (compared against l_Omega(a)/pi in the continuum).

    |r_e| because the fusion scale's sign flips with edge orientation on
    the square lattice while the continuum target is positive; the
    positive-scale convention matches the oracle-pinned covariance sign.
    """
    return float(math.cos(emb.thetas[e]) * (E_w - E_inf)
                 / abs(r_edge(emb, e)))
