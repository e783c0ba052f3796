import itertools
import math

import numpy as np
import pytest

from sembed.embedding import SIGMA, critical_square, eta_gauge, origami_map
from sembed.fermion import (
    QuadField,
    corner_projections,
    edge_fusion_corners,
    energy_covariance_terms,
    f_from_x,
    fullplane_fermion,
    monodromy,
    multipoint,
    pfaffian,
    primitive_HF,
    primitive_HX,
    primitive_IC,
    r_edge,
    scaled_energy_correlator,
    shol_residuals,
    two_point_matrix,
    x_from_f,
)
from sembed.oracle import (
    SpinModel,
    energy_density,
    fermion_vector,
    mixed_correlator,
    spin_correlator,
)
from sembed.planar import build_quad_graph, square_patch_faces

XCRIT = math.tan(math.pi / 8)


# ---------------------------------------------------------------------------
# fixtures
# ---------------------------------------------------------------------------

def central_corner(emb):
    g = emb.graph
    mids = 0.5 * (emb.pos[g.corners[:, 0]]
                  + emb.pos[g.n_primal + g.corners[:, 1]])
    interior = np.all(g.corner_quads >= 0, axis=1)
    cand = np.nonzero(interior)[0]
    return int(cand[np.argmin(np.abs(mids[cand] - emb.pos.mean()))]), mids


@pytest.fixture(scope="module")
def flat32():
    emb = critical_square(1 / 8, 32)
    a, mids = central_corner(emb)
    F = fullplane_fermion(emb, a, tol=1e-3)
    return emb, a, mids, F


@pytest.fixture(scope="module")
def disc3():
    """3x3 disc patch with the critical-square geometry and its oracle."""
    g = build_quad_graph(square_patch_faces(3))
    pos = np.empty(g.n_primal + g.n_dual, dtype=complex)
    for i in range(4):
        for j in range(4):
            pos[i * 4 + j] = i + 1j * j
    pos[g.n_primal + 0] = 50.0 + 50.0j     # outer face: position unused
    for k in range(1, g.n_dual):
        fi, fj = divmod(k - 1, 3)
        pos[g.n_primal + k] = (fi + 0.5) + 1j * (fj + 0.5)
    centres = np.array([
        0.25 * sum(
            (pos[v0], pos[g.n_primal + d0], pos[v1], pos[g.n_primal + d1])
        )
        for v0, d0, v1, d1 in g.quads
    ])
    from sembed.embedding import SEmbedding
    emb = SEmbedding(graph=g, pos=pos, pos_quad=centres,
                     radii=np.full(g.n_quads, 0.25),
                     thetas=np.full(g.n_quads, math.pi / 4))
    m = SpinModel(g, np.full(g.n_quads, XCRIT))
    return emb, m


def oracle_quadfield(emb, m, a):
    """Knit the oracle fermion into a principal-sheet QuadField."""
    g = emb.graph
    fer = fermion_vector(m, a)
    X = fer.values
    root = np.sqrt(emb.corner_length)
    eta_bar = np.conj(emb.eta)
    cyc = g.quad_corners
    good = (g.quads[:, 1] != 0) & (g.quads[:, 3] != 0)
    Fz = np.zeros(g.n_quads, dtype=complex)
    for z in np.nonzero(good)[0]:
        sols = []
        for bits in range(8):
            s = [1.0] + [1.0 if (bits >> t) & 1 else -1.0 for t in range(3)]
            A = np.array([[eta_bar[c].real, -eta_bar[c].imag]
                          for c in cyc[z]])
            b = np.array([s[j] * X[cyc[z, j]] / root[cyc[z, j]]
                          for j in range(4)])
            sol, res, *_ = np.linalg.lstsq(A, b, rcond=None)
            r = np.max(np.abs(A @ sol - b))
            if r < 1e-9:
                sols.append(complex(sol[0], sol[1]))
        assert sols, f"no sheet assignment works at quad {z}"
        Fz[z] = sols[0]
    # knit per-quad global signs by projection continuity across corners
    fixed = np.zeros(g.n_quads, dtype=bool)
    fixed[int(np.nonzero(good)[0][0])] = True
    pending = True
    while pending:
        pending = False
        for c in range(g.n_corners):
            if c == a or int(g.corners[c, 1]) == 0:
                continue
            z0, z1 = (int(z) for z in g.corner_quads[c])
            if not (good[z0] and good[z1]):
                continue
            if fixed[z0] == fixed[z1]:
                continue
            src, dst = (z0, z1) if fixed[z0] else (z1, z0)
            p_src = (eta_bar[c] * Fz[src]).real
            p_dst = (eta_bar[c] * Fz[dst]).real
            if abs(p_src) > 1e-9:
                if p_src * p_dst < 0:
                    Fz[dst] = -Fz[dst]
                fixed[dst] = True
                pending = True
    assert fixed[good].all()
    return QuadField(emb, Fz, int(a)), fer, good


# ---------------------------------------------------------------------------
# conversions
# ---------------------------------------------------------------------------

def test_x_from_f_trivial_projections():
    emb = critical_square(1.0, 4)
    g = emb.graph
    z = g.n_quads // 2
    c = int(g.quad_corners[z, 0])
    dl = emb.corner_length[c]
    F = QuadField(emb, np.full(g.n_quads, emb.eta[c]))
    assert x_from_f(F, c, z) == pytest.approx(math.sqrt(dl), abs=1e-14)
    F = QuadField(emb, np.full(g.n_quads, 1j * emb.eta[c]))
    assert x_from_f(F, c, z) == pytest.approx(0.0, abs=1e-14)


def test_roundtrip_f_from_x(flat32):
    emb, a, mids, F = flat32
    g = emb.graph
    rng = np.random.default_rng(7)
    for z in rng.integers(0, g.n_quads, size=10):
        z = int(z)
        val = complex(*rng.normal(size=2))
        G = QuadField(emb, np.full(g.n_quads, val))
        xs = {int(c): x_from_f(G, int(c), z) for c in g.quad_corners[z]}
        assert f_from_x(emb, z, xs) == pytest.approx(val, abs=1e-12)


def test_f_from_x_degenerate_denominator():
    emb = critical_square(1.0, 4)
    g = emb.graph
    z = 0
    c = int(g.quad_corners[z, 0])
    with pytest.raises(ValueError, match="degenerate"):
        f_from_x(emb, z, {c: 0.3})


def test_wrong_quad_rejected():
    emb = critical_square(1.0, 4)
    g = emb.graph
    c = int(g.quad_corners[0, 0])
    other = next(z for z in range(g.n_quads)
                 if c not in g.quad_corners[z])
    F = QuadField(emb, np.ones(g.n_quads, dtype=complex))
    with pytest.raises(ValueError, match="belong"):
        x_from_f(F, c, other)


def test_generic_field_is_not_sholomorphic():
    # negative control: a smoothly varying non-s-holomorphic field
    emb = critical_square(1.0, 5)
    F = QuadField(emb, np.conj(emb.pos_quad) ** 2)
    rep = shol_residuals(F)
    assert np.nanmax(rep["residual"]) > 0.1


# ---------------------------------------------------------------------------
# oracle fixture: roundtrip, s-holomorphicity, H_F vs H_X
# ---------------------------------------------------------------------------

def test_oracle_fermion_roundtrip_and_residuals(disc3):
    emb, m = disc3
    g = emb.graph
    # central corner: primal (1,1)-ish vertex with an interior dual
    a = None
    for c in range(g.n_corners):
        v, u = (int(x) for x in g.corners[c])
        if v == 5 and u != 0:
            a = c
            break
    F, fer, good = oracle_quadfield(emb, m, a)
    proj = corner_projections(F)
    # roundtrip: projections reproduce the oracle magnitudes exactly
    checked = 0
    for c in range(g.n_corners):
        if int(g.corners[c, 1]) == 0:
            continue
        for i, z in enumerate(g.corner_quads[c]):
            if good[int(z)]:
                assert abs(abs(proj[c, i]) - abs(fer.values[c])) < 1e-9
                checked += 1
    assert checked > 20
    rep = shol_residuals(F)
    ok = [c for c in range(g.n_corners)
          if c != a and int(g.corners[c, 1]) != 0
          and all(good[int(z)] for z in g.corner_quads[c])]
    assert max(rep["residual"][c] for c in ok) < 1e-9
    # at the source: projections are negatives (flipped residual vanishes)
    assert rep["flipped"][a] < 1e-9
    assert rep["residual"][a] > 0.1


def test_hf_hx_constant_on_oracle_fixture(disc3):
    emb, m = disc3
    g = emb.graph
    a = next(c for c in range(g.n_corners)
             if int(g.corners[c, 0]) == 5 and int(g.corners[c, 1]) != 0)
    F, _, good = oracle_quadfield(emb, m, a)
    region = good
    skip = [int(z) for z in g.corner_quads[a]]
    proj = corner_projections(F)
    # per corner, take the projection from a side whose quad is interior
    X = np.zeros(g.n_corners)
    for c in range(g.n_corners):
        for i, z in enumerate(g.corner_quads[c]):
            if int(z) >= 0 and good[int(z)]:
                X[c] = proj[c, i]
                break
    HX = primitive_HX(emb, X, eta_gauge(emb), skip_quads=skip, region=region)
    HF = primitive_HF(F, region=region)
    n_lam = g.n_primal + g.n_dual
    d = (HF - HX)[:n_lam]
    vals = d[~np.isnan(d)]
    assert len(vals) > 8
    assert vals.max() - vals.min() < 1e-10


# ---------------------------------------------------------------------------
# primitives on the reconstructed field
# ---------------------------------------------------------------------------

def test_constant_field_primitive_is_linear():
    emb = critical_square(1.0, 5)
    g = emb.graph
    om = origami_map(emb)
    val = 0.7 - 0.4j
    F = QuadField(emb, np.full(g.n_quads, val))
    P = primitive_IC(F)
    want = (np.conj(SIGMA) * val * emb.pos
            + SIGMA * np.conj(val) * om.values)
    diff = P.values - want
    diff -= diff[P.base]
    assert np.nanmax(np.abs(diff)) < 1e-12


def test_primitive_ic_on_reconstructed_field(flat32):
    emb, a, mids, F = flat32
    g = emb.graph
    origin = emb.corner_midpoint(a)
    region = np.abs(emb.pos_quad - origin) <= F.meta["core_radius"]
    P = primitive_IC(F, region=region)
    assert P.meta["path_residual"] < 1e-12
    assert a in P.cut
    assert abs(P.monodromy - F.meta["monodromy"]) < 1e-12


def test_hf_hx_constant_on_reconstructed_field(flat32):
    emb, a, mids, F = flat32
    g = emb.graph
    origin = emb.corner_midpoint(a)
    region = np.abs(emb.pos_quad - origin) <= F.meta["core_radius"]
    rep = shol_residuals(F)
    X = np.nanmean(rep["projections"], axis=1)
    skip = [int(z) for z in g.corner_quads[a]]
    HX = primitive_HX(emb, X, eta_gauge(emb), skip_quads=skip, region=region)
    HF = primitive_HF(F, region=region)
    n_lam = g.n_primal + g.n_dual
    d = (HF - HX)[:n_lam]
    vals = d[~np.isnan(d)]
    assert len(vals) > 100
    assert vals.max() - vals.min() < 1e-10


# ---------------------------------------------------------------------------
# full-plane reconstruction
# ---------------------------------------------------------------------------

def test_fullplane_monodromy_exact(flat32):
    emb, a, mids, F = flat32
    meta = F.meta
    assert abs(meta["monodromy"] - meta["monodromy_target"]) < 1e-9
    # contour independence over three radii
    monos = [monodromy(F, r) for r in (0.6, 1.0, 1.4)]
    assert max(abs(x - monos[0]) for x in monos) < 1e-12
    with pytest.raises(ValueError, match="enclose"):
        monodromy(F, 0.01)


def test_fullplane_invariants(flat32):
    emb, a, mids, F = flat32
    meta = F.meta
    assert meta["fit_residual"] < 1e-10
    assert meta["shol_max_core"] < 1e-10
    assert meta["shol_flipped_at_source"] < 1e-3
    assert abs(meta["laplacian_at_source"]
               - meta["laplacian_at_source_target"]) < 1e-9
    # monodromy normalization: the source projection sits at ~1/2 in
    # magnitude (its sign is pinned by the monodromy, not by X(a+) = +1)
    assert abs(meta["x_aplus"]) == pytest.approx(0.5, abs=0.01)


def test_fullplane_source_normalization_is_twice_monodromy():
    emb = critical_square(1 / 8, 24)
    a, _ = central_corner(emb)[0], None
    a = central_corner(emb)[0]
    Fs = fullplane_fermion(emb, a, P_list=[1.2, 2.2], tol=1e-2,
                           normalization="source")
    Fm = fullplane_fermion(emb, a, P_list=[1.2, 2.2], tol=1e-2,
                           normalization="monodromy")
    origin = emb.corner_midpoint(a)
    sel = (np.abs(emb.pos_quad - origin) <= Fm.meta["core_radius"])
    ratio = np.abs(Fs.values[sel]) / np.abs(Fm.values[sel])
    assert np.allclose(ratio, 2.0, atol=2e-3)
    assert Fs.meta["x_aplus"] == pytest.approx(1.0, abs=1e-12)
    assert abs(abs(Fs.meta["monodromy"]) - 4.0) < 1e-2


def test_fullplane_two_point_matches_flat_formula(flat32):
    # the acceptance-grade comparison, at coarse resolution: the
    # monodromy-normalized projection vs (1/pi) Re[eta_bar_c eta_bar_a/(c-a)]
    emb, a, mids, F = flat32
    g = emb.graph
    interior = np.all(g.corner_quads >= 0, axis=1)
    proj = corner_projections(F)
    errs = []
    for c in np.nonzero(interior)[0]:
        d = abs(mids[c] - mids[a])
        if 0.8 < d < 1.3:
            val = np.nanmean(proj[c]) / math.sqrt(emb.corner_length[c])
            ref = (1 / math.pi) * (np.conj(emb.eta[c]) * np.conj(emb.eta[a])
                                   / (mids[c] - mids[a])).real
            if abs(ref) > 0.05:
                errs.append(abs(val - ref) / abs(ref))
    assert len(errs) > 20
    assert np.median(errs) < 0.05


def test_fullplane_antisymmetry():
    emb = critical_square(1 / 8, 40)
    g = emb.graph
    a, mids = central_corner(emb)
    interior = np.all(g.corner_quads >= 0, axis=1)
    cand = np.nonzero(interior)[0]
    b = int(cand[np.argmin(np.abs(mids[cand] - (mids[a] + 1.0)))])
    Fa = fullplane_fermion(emb, a, tol=1e-3)
    Fb = fullplane_fermion(emb, b, tol=1e-3)
    pa = corner_projections(Fa)
    pb = corner_projections(Fb)
    v_ab = math.sqrt(emb.corner_length[a]) * np.nanmean(pa[b])
    v_ba = math.sqrt(emb.corner_length[b]) * np.nanmean(pb[a])
    assert abs(v_ab) > 1e-3
    assert abs(v_ab + v_ba) < 0.3 * abs(v_ab)


def test_fullplane_boundary_source_rejected():
    emb = critical_square(1.0, 4)
    g = emb.graph
    c = next(c for c in range(g.n_corners)
             if np.any(g.corner_quads[c] < 0))
    with pytest.raises(ValueError, match="interior"):
        fullplane_fermion(emb, c)


# ---------------------------------------------------------------------------
# Pfaffians and multipoint
# ---------------------------------------------------------------------------

def test_pfaffian_2x2_and_4x4():
    assert pfaffian([[0.0, 3.5], [-3.5, 0.0]]) == pytest.approx(3.5)
    rng = np.random.default_rng(1)
    M = rng.normal(size=(4, 4))
    A = M - M.T
    want = A[0, 1] * A[2, 3] - A[0, 2] * A[1, 3] + A[0, 3] * A[1, 2]
    assert pfaffian(A) == pytest.approx(want, rel=1e-12)


def test_pfaffian_squares_to_determinant():
    rng = np.random.default_rng(2)
    for n in (4, 6, 8, 10):
        M = rng.normal(size=(n, n))
        A = M - M.T
        assert pfaffian(A) ** 2 == pytest.approx(np.linalg.det(A), rel=1e-9)


def test_pfaffian_odd_and_invalid():
    assert pfaffian(np.zeros((3, 3))) == 0.0
    with pytest.raises(ValueError, match="antisymmetric"):
        pfaffian(np.eye(4))


def test_multipoint_matches_enumerated_four_point(disc3):
    emb, m = disc3
    g = emb.graph
    corners = []
    for c in range(g.n_corners):
        v, u = (int(x) for x in g.corners[c])
        if u == 0:
            continue
        if all(v != int(g.corners[d][0]) and u != int(g.corners[d][1])
               for d in corners):
            corners.append(c)
        if len(corners) == 4:
            break
    pf = multipoint(m, corners)
    vs = [int(g.corners[c][0]) for c in corners]
    us = [int(g.corners[c][1]) for c in corners]
    four = mixed_correlator(m, vs, us)
    assert abs(abs(pf) - abs(four)) < 1e-10


def test_multipoint_antisymmetry(disc3):
    emb, m = disc3
    g = emb.graph
    corners = [c for c in range(g.n_corners)
               if int(g.corners[c, 1]) != 0][:4:1]
    corners = corners[:4]
    A = two_point_matrix(m, corners)
    assert np.max(np.abs(A + A.T)) < 1e-12
    swapped = [corners[1], corners[0], corners[2], corners[3]]
    assert pfaffian(two_point_matrix(m, swapped)) == pytest.approx(
        -pfaffian(A), rel=1e-9
    )


# ---------------------------------------------------------------------------
# energy fusion
# ---------------------------------------------------------------------------

def test_energy_fusion_matches_oracle(disc3):
    emb, m = disc3
    g = emb.graph
    cand = [e for e in range(g.n_quads)
            if g.quads[e, 1] != 0 and g.quads[e, 3] != 0]
    e1, e2 = cand[0], cand[-1]
    a1, b1 = edge_fusion_corners(emb, e1)
    a2, b2 = edge_fusion_corners(emb, e2)
    A = two_point_matrix(m, [a1, b1, a2, b2])
    # <eps> and the Pfaffian expansion of <eps1 eps2>
    assert A[0, 1] == pytest.approx(energy_density(m, e1), abs=1e-10)
    duals = [int(g.quads[e1, 1]), int(g.quads[e1, 3]),
             int(g.quads[e2, 1]), int(g.quads[e2, 3])]
    prod = spin_correlator(m, duals)
    assert pfaffian(A) == pytest.approx(prod, abs=1e-10)
    cov = prod - energy_density(m, e1) * energy_density(m, e2)
    cov_fusion = -A[1, 3] * A[0, 2] + A[0, 3] * A[1, 2]
    assert cov_fusion == pytest.approx(cov, abs=1e-10)


def test_fused_fullplane_energy_density():
    emb = critical_square(1 / 8, 24)
    g = emb.graph
    centre = emb.pos.mean()
    e1 = int(np.argmin(np.abs(emb.pos_quad - centre)))
    a1, b1 = edge_fusion_corners(emb, e1)
    F = fullplane_fermion(emb, a1, P_list=[1.2, 2.2], tol=1e-2,
                          normalization="source")
    proj = corner_projections(F)
    val = math.sqrt(emb.corner_length[a1]) * np.nanmean(proj[b1])
    assert abs(abs(val) - math.sqrt(2) / 2) < 1e-3


def test_r_edge_critical_square():
    delta = 1 / 8
    emb = critical_square(delta, 8)
    e = int(np.argmin(np.abs(emb.pos_quad - emb.pos.mean())))
    assert abs(r_edge(emb, e)) == pytest.approx(delta / 2, rel=1e-12)


def test_scaled_energy_correlator_near_continuum():
    emb = critical_square(1 / 8, 40)
    g = emb.graph
    centre = emb.pos.mean()
    qc = emb.pos_quad
    e1 = int(np.argmin(np.abs(qc - centre)))
    e2 = int(np.argmin(np.abs(qc - (qc[e1] + 1.0))))
    out = scaled_energy_correlator(emb, e1, e2, tol=1e-3)
    sep = abs(qc[e2] - qc[e1])
    ref = 1.0 / (math.pi ** 2 * sep ** 2)
    assert out["scaled"] > 0          # sign pinned by the oracle covariance
    assert abs(out["scaled"] - ref) / ref < 0.1
    # the "source"-normalized covariance is exactly 4x the theorem one
    out_src = energy_covariance_terms(
        *(f for f in out["fields"]), e2
    )
    Fa2 = fullplane_fermion(emb, edge_fusion_corners(emb, e1)[0],
                            tol=1e-3, normalization="source")
    Fb2 = fullplane_fermion(emb, edge_fusion_corners(emb, e1)[1],
                            tol=1e-3, normalization="source")
    cov_src = energy_covariance_terms(Fa2, Fb2, e2)["cov"]
    # the two normalizations differ by a factor 2 per insertion, exact in
    # the scaling limit (|x_aplus| -> 1/2 under monodromy normalization)
    assert cov_src == pytest.approx(4.0 * out["cov"], rel=1e-3)
