"""Acceptance gate: quantitative scaling-limit experiments (E1-E4) and
strict invariant suites (P1-P4).  Each test prints a single pass/fail
line for its criterion (bypassing capture so the line is always visible)
and asserts it.
"""

import math
import sys
import time

import numpy as np

from sembed import continuum, fermion, green, mcmc, oracle, sgraph
from sembed.cli import load_config, run_experiment
from sembed.embedding import (
    critical_square,
    disc_patch,
    doubly_periodic,
    exp_fat_test,
    isoradial_rhombic,
    lip_scale,
    off_critical_square,
    origami_map,
    validate_embedding,
)
from sembed.oracle import SpinModel
from sembed.planar import build_quad_graph, square_patch_faces

XCRIT = math.tan(math.pi / 8.0)


def _criterion(name: str, ok: bool, detail: str = ""):
    line = f"{name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    sys.__stdout__.write(line + "\n")
    sys.__stdout__.flush()
    assert ok, line


def _patch_model(n, x=XCRIT):
    g = build_quad_graph(square_patch_faces(n))
    return SpinModel(g, np.full(g.n_quads, x))


# ---------------------------------------------------------------------------
# E1: full-plane two-point fermion vs flat continuum formula
# ---------------------------------------------------------------------------

def test_e1_two_point_scaling():
    t0 = time.perf_counter()
    cfg = load_config({
        "schema_version": 1, "experiment": "E1",
        "deltas": [1 / 8, 1 / 16, 1 / 32],
        "extent": 3.0, "separations": [1.0, 2.0],
        "pairs_per_separation": 2, "threshold": 0.05,
    })
    rep = run_experiment(cfg)
    finals = {r["case"]: r["rel_err"] for r in rep.rows
              if r["delta"] == 1 / 32}
    assert len(finals) == 4              # 4 corner pairs, |c - a| in {1, 2}
    worst = max(finals.values())
    _criterion(
        "E1", rep.passed,
        f"4 pairs, rel err decreasing, worst at delta=1/32: {worst:.4f} "
        f"< 0.05; {time.perf_counter() - t0:.0f}s"
        + ("" if rep.passed else f"; failures: {rep.failures}"),
    )


# ---------------------------------------------------------------------------
# E2: scaled energy correlator vs 1/pi^2, sign pinned by the oracle
# ---------------------------------------------------------------------------

def test_e2_energy_correlator_scaling():
    t0 = time.perf_counter()
    # sign reference: exact covariance of two disjoint interior edges on an
    # enumerable patch is positive
    m = _patch_model(3)
    g = m.graph
    interior = np.nonzero((g.quads[:, 1] != 0) & (g.quads[:, 3] != 0))[0]
    e1 = int(interior[0])
    e2 = next(int(e) for e in interior[1:]
              if len({*g.quads[e1][[1, 3]], *g.quads[e][[1, 3]]}) == 4)
    f1 = [int(u) for u in g.quads[e1][[1, 3]]]
    f2 = [int(u) for u in g.quads[e2][[1, 3]]]
    cov = (oracle.spin_correlator(m, f1 + f2)
           - oracle.spin_correlator(m, f1) * oracle.spin_correlator(m, f2))
    sign_ok = cov > 0

    cfg = load_config({
        "schema_version": 1, "experiment": "E2",
        "deltas": [1 / 8, 1 / 16, 1 / 32],
        "extent": 3.0, "threshold": 0.10,
    })
    rep = run_experiment(cfg)
    final = [r for r in rep.rows if r["delta"] == 1 / 32][0]
    ok = rep.passed and sign_ok
    _criterion(
        "E2", ok,
        f"|a1-a2|=1: measured {final['measured']:.5f} vs 1/pi^2 = "
        f"{1 / math.pi ** 2:.5f}, rel err {final['rel_err']:.4f} < 0.10, "
        f"oracle covariance sign {'+' if cov > 0 else '-'}; "
        f"{time.perf_counter() - t0:.0f}s"
        + ("" if ok else f"; failures: {rep.failures}"),
    )


# ---------------------------------------------------------------------------
# E3: wired unit disc energy density via MCMC vs hyperbolic metric
# ---------------------------------------------------------------------------

def test_e3_disc_density_mcmc():
    t0 = time.perf_counter()
    cfg = load_config({
        "schema_version": 1, "experiment": "E3", "deltas": [1 / 64],
        "seed": 11,
        "mcmc": {"clusters": 1_000_000, "torus": 256,
                 "points": [0.0, 0.5], "thresholds": [0.10, 0.12]},
    })
    rep = run_experiment(cfg)
    stat3 = rep.meta["a0_stat_err_3sigma"]
    budget_ok = stat3 <= 0.03 * (2.0 / math.pi)
    ok = rep.passed and budget_ok
    r0, r5 = rep.rows
    _criterion(
        "E3", ok,
        f"a=0: {r0['measured']:.4f} vs 2/pi={2 / math.pi:.4f} "
        f"(rel {r0['rel_err']:.4f} < 0.10); a=1/2: {r5['measured']:.4f} vs "
        f"(8/3)/pi={(8 / 3) / math.pi:.4f} (rel {r5['rel_err']:.4f} < 0.12); "
        f"3-sigma stat {stat3:.4f} <= 3% of target; >=1e6 clusters; "
        f"{time.perf_counter() - t0:.0f}s"
        + ("" if ok else f"; failures: {rep.failures}"),
    )


# ---------------------------------------------------------------------------
# E4: flat-chart continuum targets reproduce E3's target as an identity
# ---------------------------------------------------------------------------

def test_e4_flat_chart_identity():
    chart = continuum.flat_chart()
    zz, zbz, _, _ = continuum._chart_derivatives(chart, 0.3 + 0.1j)
    denom_err = abs((abs(zz) - abs(zbz)) - 1.0)
    out0 = continuum.maximal_targets(chart, 0.0, 0.0, 1.0)
    out5 = continuum.maximal_targets(chart, 0.5, 0.0, 1.0)
    errs = [
        denom_err,
        abs(out0["energy"] - 1.0 / math.pi ** 2),
        abs(out0["density"] - 2.0 / math.pi),
        abs(out5["density"]
            - continuum.hyperbolic_metric("disc", 0.5) / math.pi),
        abs(abs(out0["residue"]) - 1.0),
    ]
    ok = max(errs) <= 1e-12
    _criterion("E4", ok,
               f"flat chart reproduces disc targets, max abs err "
               f"{max(errs):.2e} <= 1e-12")


# ---------------------------------------------------------------------------
# P1: oracle/Pfaffian suite on enumerable patches
# ---------------------------------------------------------------------------

def test_p1_oracle_pfaffian_suite():
    t0 = time.perf_counter()
    m = _patch_model(3)                      # 9 faces <= 12
    g = m.graph
    corners = []
    for c in range(g.n_corners):
        v, u = (int(t) for t in g.corners[c])
        if u != 0 and all(v != int(g.corners[d][0])
                          and u != int(g.corners[d][1]) for d in corners):
            corners.append(c)
        if len(corners) == 4:
            break
    pf = fermion.multipoint(m, corners)
    four = oracle.mixed_correlator(m, [int(g.corners[c][0]) for c in corners],
                                   [int(g.corners[c][1]) for c in corners])
    pf_err = abs(abs(pf) - abs(four))

    # mixed-correlator disorder-line independence
    v1, v2 = 5, 10
    line1 = oracle.primal_path(g, v1, v2)
    line2 = oracle.primal_path(g, v1, v2, avoid_edges=set(line1))
    faces = [1, 7]
    m1 = oracle.mixed_correlator(m, [v1, v2], faces, line1)
    m2 = oracle.mixed_correlator(m, [v1, v2], faces, line2)
    line_err = abs(m1 - m2) / abs(m1)

    # fermion_R propagation residuals: zero in the source gauge; viewed on
    # the plain cover they fail exactly at z_a-, and flipping X(a) moves
    # the failure to z_a+
    a = next(c for c in range(g.n_corners)
             if np.all(g.corner_quads[c] >= 0))
    fer = oracle.fermion_vector(m, a)
    zm, zp = (int(q) for q in g.corner_quads[a])
    res_ok = float(np.max(fer.residuals)) < 1e-10
    other = [z for z in range(g.n_quads) if z != zm]
    swap_ok = (np.max(fer.residuals_plain[other]) < 1e-10
               and np.max(fer.residuals_plain[zm]) > 1e-6)
    other_p = [z for z in range(g.n_quads) if z != zp]
    swap_ok &= (np.max(fer.residuals_plain_flipped[other_p]) < 1e-10
                and np.max(fer.residuals_plain_flipped[zp]) > 1e-6)

    ok = pf_err < 1e-10 and line_err < 1e-12 and res_ok and bool(swap_ok)
    _criterion(
        "P1", ok,
        f"4-point vs Pfaffian {pf_err:.2e} < 1e-10, line independence "
        f"{line_err:.2e} < 1e-12, propagation residuals zero except the "
        f"documented sign-swap at z_a-; {time.perf_counter() - t0:.0f}s",
    )


# ---------------------------------------------------------------------------
# P2: geometry suite on all built-in families
# ---------------------------------------------------------------------------

def test_p2_geometry_suite():
    t0 = time.perf_counter()
    fams = {
        "critical_square": critical_square(0.25, 6),
        "isoradial_rhombic": isoradial_rhombic(0.25, 6),
        "off_critical_square": off_critical_square(0.3, 0.25, 6),
        "doubly_periodic": doubly_periodic(np.array([[0.3, 0.45]]), 0.25, 6),
        "disc_patch": disc_patch(0.25),
    }
    worst = 0.0
    worst_origami = 0.0
    for emb in fams.values():
        rep = validate_embedding(emb)
        worst = max(worst, float(np.max(rep.pitot)),
                    float(np.max(rep.incircle)),
                    float(np.max(rep.theta_residual)))
        worst_origami = max(worst_origami,
                            float(origami_map(emb).increments_residual()))
    flat = critical_square(0.25, 10)
    s_flat, exact = lip_scale(flat.pos, origami_map(flat).values, 0.9)
    fat_ok = all(
        exp_fat_test(emb, 0.25, 1.0)[0]
        for emb in (fams["critical_square"], fams["isoradial_rhombic"])
    )
    ok = (worst < 1e-9 and worst_origami < 1e-10
          and s_flat == 0.0 and exact and fat_ok)
    _criterion(
        "P2", ok,
        f"geometry residuals {worst:.2e} < 1e-9 on all families, origami "
        f"path-independence {worst_origami:.2e} < 1e-10, lip_scale(flat) = "
        f"{s_flat}, exp-fat pass; {time.perf_counter() - t0:.0f}s",
    )


# ---------------------------------------------------------------------------
# P3: S-graph / Green suite
# ---------------------------------------------------------------------------

def test_p3_sgraph_green_suite():
    t0 = time.perf_counter()
    emb = critical_square(1.0, 16)
    g = emb.graph
    om = origami_map(emb)
    interior = np.all(g.corner_quads >= 0, axis=1)
    mids = 0.5 * (emb.pos[g.corners[:, 0]]
                  + emb.pos[g.n_primal + g.corners[:, 1]])
    cand = np.nonzero(interior)[0]
    a_corner = int(cand[np.argmin(np.abs(mids[cand] - emb.pos.mean()))])
    alpha = sgraph.alpha_for_corner(emb, a_corner)
    tf = sgraph.bosonize(emb, anchor=a_corner)
    sg = sgraph.build_sgraph(emb, om, alpha, tf)

    # martingale identities at every interior vertex
    drift = 0.0
    for v in np.nonzero(sg.interior)[0]:
        d = sum(q * (sg.points[w] - sg.points[v]) for w, q in sg.neighbors[v])
        s = sum(q * abs(sg.points[w] - sg.points[v])
                for w, q in sg.neighbors[v])
        drift = max(drift, abs(d) / s)

    av = sg.vertex_of_lambda(int(g.corners[a_corner, 0]))
    gf = green.full_plane_green(sg, av, P_list=[2.0, 4.0, 8.0], tol=10.0)
    src_err = abs(gf.meta["source_identity"] - 1.0)
    anchor_ok = gf.values[gf.anchor] == 0.0

    G2 = green.green_P(sg, av, 2.0)
    G4 = green.green_P(sg, av, 4.0)
    monotone_ok = float(np.min(G4 - G2)) >= -1e-12 and float(G2.min()) >= 0.0
    oscs = [green.annulus_oscillation(
        green.regularized_field(sg, av, P, anchor=gf.anchor), 1.0, 2.0)
        for P in (2.0, 4.0, 8.0)]
    osc_ok = max(oscs) < 10.0 * min(o for o in oscs if o > 0)

    F = fermion.fullplane_fermion(emb, a_corner)
    mono_err = abs(F.meta["monodromy"] - F.meta["monodromy_target"])
    # nontrivial direction check on the unnormalized field: the raw
    # monodromy is a real multiple of i*alpha
    raw = F.meta["monodromy_raw"]
    dir_err = abs((raw * np.conj(1j * alpha)).imag) / abs(raw)

    ok = (drift < 1e-10 and src_err < 1e-9 and anchor_ok and monotone_ok
          and osc_ok and mono_err < 1e-9 and dir_err < 1e-9)
    _criterion(
        "P3", ok,
        f"martingale drift {drift:.2e} < 1e-10, source identity err "
        f"{src_err:.2e} < 1e-9, anchor zero exact, monodromy err "
        f"{mono_err:.2e} < 1e-9 (direction {dir_err:.2e}), G_P monotone, "
        f"annulus oscillation bounded over P in (2,4,8); "
        f"{time.perf_counter() - t0:.0f}s",
    )


# ---------------------------------------------------------------------------
# P4: cross-backend agreement
# ---------------------------------------------------------------------------

def test_p4_cross_backend():
    t0 = time.perf_counter()
    details = []
    agree_ok = True
    for n in (2, 3, 4):
        m = _patch_model(n)
        g = m.graph
        interior = np.nonzero((g.quads[:, 1] != 0) & (g.quads[:, 3] != 0))[0]
        edge = int(interior[len(interior) // 2])
        system = mcmc.system_from_model(m)
        exact = oracle.energy_density(m, edge)
        hits = 0
        for seed in range(20):
            est = mcmc.wolff_sample(
                system, mcmc.ChainConfig(seed=seed, sweeps=20000,
                                         burn_in=2000),
                observables=[edge],
            )
            if abs(est["mean"][0] - exact) < 3 * est["stderr"][0]:
                hits += 1
        agree_ok &= hits >= 19
        details.append(f"{n}x{n}: {hits}/20")

    # simulated walk occupation vs the Green solver
    emb = critical_square(1.0, 7)
    om = origami_map(emb)
    sg = sgraph.build_sgraph(emb, om, complex(np.exp(0.3j)))
    ints = np.nonzero(sg.interior)[0]
    a = int(ints[np.argmin(np.abs(sg.points[ints]
                                  - sg.points[sg.interior].mean()))])
    P = 2.5
    G = green.green_P(sg, a, P)
    outside = set(np.nonzero(~green.disc_mask(sg, a, P))[0].tolist())
    cand = np.nonzero(sg.interior & green.disc_mask(sg, a, P))[0]
    b = int(cand[np.argsort(np.abs(sg.points[cand] - sg.points[a]))[4]])
    out = sgraph.simulate_walk(sg, b, outside, seed=21, n_paths=4000,
                               track=a)
    walk_ok = (out["capped"] == 0
               and abs(out["track_mean"] - G[b]) < 3 * out["track_se"])

    ok = agree_ok and walk_ok
    _criterion(
        "P4", ok,
        f"MCMC vs oracle 3-sigma hits {', '.join(details)} (>= 19/20 each), "
        f"walk occupation within 3-sigma of green_P; "
        f"{time.perf_counter() - t0:.0f}s",
    )
