"""Acceptance battery: one test per criterion, each printing a PASS/FAIL line.

Run with  pytest tests/test_acceptance.py -v -s  to see the lines as they
complete; tolerances are pinned here and nowhere else.
"""

import json
import math

import numpy as np
import pytest

import switchback as sb
from switchback.cli import build_profile, main, solve_pricing
from switchback.grids import RegimeGrid, solve_linear_regime_bsde
from switchback.model import load_problem, regrid

from conftest import (PAPER_RATES, euler_linear_system_oracle, make_spec,
                      random_followers_spec, random_l3_spec)


def report(name: str, ok: bool, detail: str = "") -> None:
    tail = f"  ({detail})" if detail else ""
    print(f"{'PASS' if ok else 'FAIL'} — {name}{tail}")
    assert ok, f"{name}{tail}"


@pytest.fixture(scope="module")
def pricing_full(pricing_spec):
    return pricing_spec  # bundled grid: N = 1000


@pytest.fixture(scope="module")
def pricing_profile(pricing_full):
    prof, grids = build_profile(pricing_full, "pricing", "rk4", 1e-10)
    return prof, grids


def test_section5_reproduction(tmp_path, pricing_full):
    """Bundled coefficients reproduce the pricing adjoints: exact terminal
    values and 1e-6 agreement with an independent explicit-Euler fine grid."""
    out = tmp_path / "solve"
    assert main(["solve", "--problem", "pricing.json", "--mode", "pricing",
                 "--out", str(out)]) == 0
    rows_p = (out / "p.csv").read_text().splitlines()[1:]
    rows_y = (out / "y.csv").read_text().splitlines()[1:]

    def cell(rows, idx):
        return float(rows[idx].split(",")[2])

    # terminal values to machine precision (y's terminal is the computed
    # difference 0.6 - 0.7, one ulp away from the decimal literal)
    terminal_ok = (
        cell(rows_p, -2) == 0.5 and cell(rows_p, -1) == 0.7
        and cell(rows_y, -2) == 0.5
        and abs(cell(rows_y, -1) - (-0.1)) <= 1e-15
    )
    A = (0.5, 0.3)
    oracle_p = euler_linear_system_oracle(
        lambda t, i: A[i], lambda t, i: 0.0, [0.5, 0.7],
        PAPER_RATES, 1.0, 1_000_000)
    oracle_y = euler_linear_system_oracle(
        lambda t, i: A[i], lambda t, i: 0.0, [0.5, -0.1],
        PAPER_RATES, 1.0, 1_000_000)
    err = max(abs(cell(rows_p, 0) - oracle_p[0]),
              abs(cell(rows_p, 1) - oracle_p[1]),
              abs(cell(rows_y, 0) - oracle_y[0]),
              abs(cell(rows_y, 1) - oracle_y[1]))
    report("Section 5 reproduction", terminal_ok and err <= 1e-6,
           f"oracle gap {err:.2e}")


def test_analytic_single_regime_bsde():
    """m = 1, constant drift weight: solution g e^{A(T-t)} to 1e-8 at N=1000."""
    N, A, g, T = 1000, 0.5, 0.8, 1.0
    gen = sb.validate_generator([[0.0]])
    F = np.full((N + 1, 1), A)
    v, _ = solve_linear_regime_bsde(F, np.zeros((N + 1, 1)), np.array([g]),
                                    gen, (T, N))
    t = v.t_nodes
    err = float(np.max(np.abs(v.values[:, 0] - g * np.exp(A * (T - t)))))
    report("analytic single-regime backward equation", err <= 1e-8,
           f"max error {err:.2e}")


def test_riccati_envelope_suite():
    """20 randomized problems satisfying the standing assumptions stay inside
    the closed-form envelope, which itself stays below rho_bar; a corrupted
    solution fails the check."""
    rng = np.random.default_rng(20240810)
    worst = math.inf
    for _ in range(20):
        spec = random_followers_spec(rng, m=int(rng.integers(1, 4)))
        pf = sb.solve_PF(spec)
        env = sb.envelope(spec)
        chk = sb.check_envelope(pf.P_F, env)
        cap = float(np.max(env.plus.values)) <= env.rho_bar * (1 + 1e-12)
        assert chk.ok and cap, f"escape at t={chk.t} regime {chk.regime}"
        worst = min(worst, chk.worst_margin)
    spec = random_followers_spec(rng)
    pf = sb.solve_PF(spec)
    env = sb.envelope(spec)
    bad = RegimeGrid(values=pf.P_F.values + 2 * env.rho_bar + 1.0,
                     T=spec.T, N=spec.N)
    falsified = not sb.check_envelope(bad, env).ok
    report("Riccati envelope suite (20 specs + falsification)", falsified,
           f"worst margin {worst:.3e}")


def test_zero_and_terminal_properties():
    """Zero-coefficient problems freeze every weight at its terminal value;
    terminal conditions are exact on generic problems."""
    spec = load_problem(str(__import__("importlib.resources", fromlist=["files"])
                            .files("switchback") / "data" / "zero.json"))
    pf = sb.solve_PF(spec)
    frozen = (np.all(pf.P_F.values[:, 0] == 0.4)
              and np.all(pf.P_F.values[:, 1] == 0.2))
    aug = sb.build_augmented(spec)
    P_L = sb.solve_PL(spec, aug)
    frozen &= bool(np.all(P_L.values == np.broadcast_to(
        aug.cal_G, P_L.values.shape)))

    rng = np.random.default_rng(77)
    gspec = random_l3_spec(rng)
    gpf = sb.solve_PFbar(gspec, sb.solve_PF(gspec))
    co = sb.feedback_coeffs(gspec, gpf)
    phi, _ = sb.solve_phi(gspec, co,
                          np.zeros((gspec.N + 1, gspec.m, gspec.m0)))
    gaug = sb.build_augmented(gspec)
    gP = sb.solve_PL(gspec, gaug)
    gPb = sb.solve_PLbar(gspec, gaug, gP)
    tau, _ = sb.solve_tau(gspec, gaug, gP, gPb)
    exact = (
        np.array_equal(gpf.P_F.values[-1], gspec.follower_cost.G_F)
        and np.array_equal(gpf.P_F_bar.values[-1], gspec.follower_cost.G_F_bar)
        and np.all(phi.values[-1] == 0.0)
        and np.array_equal(gP.values[-1], gaug.cal_G)
        and np.array_equal(gPb.values[-1], gaug.cal_G_bar)
        and np.all(tau.values[-1] == 0.0)
    )
    report("zero/terminal exactness", frozen and exact)


def test_blockform_cross_solver():
    """Per-regime solve equals the stacked block-diagonal solve to 1e-8 in
    max-norm for m = 1, 2, 3."""
    worst = 0.0
    for m in (1, 2, 3):
        rng = np.random.default_rng(500 + m)
        spec = random_l3_spec(rng, m=m)
        aug = sb.build_augmented(spec)
        P = sb.solve_PL(spec, aug)
        stacked = sb.solve_PL_blockform(spec, aug)
        for i in range(1, m + 1):
            worst = max(worst, float(np.max(np.abs(
                sb.extract_block_regime(stacked, i) - P.values[:, i - 1]))))
    report("block-form cross-solver agreement", worst <= 1e-8,
           f"max deviation {worst:.2e}")


def test_saddle_point_inequality(pricing_full, pricing_profile):
    """Unilateral follower deviations on the pricing problem, 2e4 paired
    paths: follower-1 differences >= -3 SE, follower-2 <= +3 SE for
    eps in {0.05, 0.1, 0.2} and three direction fields; eps = 0 is exact."""
    prof, _ = pricing_profile
    base = sb.simulate_paths(pricing_full, prof, 2000, 424242)
    null = sb.simulate_paths(
        pricing_full,
        prof.shifted("F1", np.ones((pricing_full.N + 1, 2)), 0.0),
        2000, 424242)
    exact_zero = np.array_equal(base.J_F, null.J_F)

    rep = sb.saddle_test(pricing_full, prof, n=20000, seed=20240810)
    ok = rep.all_ok and exact_zero
    worst = min((r.mean_diff + 3 * r.se if r.player == "F1"
                 else 3 * r.se - r.mean_diff) for r in rep.rows)
    report("saddle-point inequality", ok,
           f"{len(rep.rows)} cases, worst slack {worst:.2e}")


def test_leader_optimality(pricing_full, pricing_profile):
    """Leader deviations: paired differences >= -3 SE and pure quadratic
    scaling in eps within 25% across the eps grid."""
    prof, _ = pricing_profile
    rep = sb.leader_test(pricing_full, prof, n=20000, seed=20240811)
    quad = max(rep.quad_spread.values())
    report("leader optimality", rep.all_ok and quad <= 0.25,
           f"quadratic spread {quad:.3f}")


def test_hamiltonian_consistency_decay():
    """Terminal adjoint residual halves (+-20%) with each grid doubling."""
    means = []
    for N in (250, 500, 1000, 2000):
        spec = make_spec(
            PAPER_RATES, N=N,
            dynamics=[{"A": 0.4, "C": 0.2, "B_F1": [0.5], "B_F2": [0.2],
                       "sigma": 0.4, "b": 0.1},
                      {"A": -0.1, "C": 0.1, "B_F1": [0.4], "B_F2": [0.1],
                       "sigma": 0.3, "b": -0.1}],
            follower_cost=[{"Q_F": 0.3, "G_F": 0.4},
                           {"Q_F": 0.2, "G_F": 0.1}])
        prof, grids = build_profile(spec, "followers", "rk4", 1e-10)
        stats = sb.hamiltonian_residual(spec, prof, grids["P_F"],
                                        grids["P_F_bar"], grids["phi"],
                                        n=400, seed=20240812)
        means.append(stats.terminal_mean)
    ratios = [means[i] / means[i + 1] for i in range(3)]
    ok = all(1.6 <= r <= 2.4 for r in ratios)
    report("Hamiltonian/feedback consistency decay", ok,
           "ratios " + ", ".join(f"{r:.2f}" for r in ratios))


def test_filter_correctness(pricing_full, pricing_profile):
    """Ensemble mean over one frozen chain matches the filter within 3 SE at
    10 checkpoints (1e4 paths)."""
    prof, _ = pricing_profile
    chain = sb.sample_chain(pricing_full.generator, 1, 1.0,
                            sb.chain_stream(20240813, 0))
    rows = sb.filter_consistency(pricing_full, prof, chain, n=10000,
                                 seed=20240813)
    ok = len(rows) == 10 and all(r.ok for r in rows)
    gap = max(abs(r.ensemble_mean - r.filter_value) / (3 * r.se)
              for r in rows)
    report("filter correctness", ok, f"worst normalized gap {gap:.2f}")


def test_martingale_property(pricing_full):
    """Compensated jump counts have mean within 3 SE of zero over 1e5 paths."""
    est = sb.martingale_residual_means(pricing_full.generator, 1, 1.0,
                                       100_000, 20240814)
    ok = all(abs(e.mean) <= 3 * e.se for e in est.values())
    worst = max(abs(e.mean) / (3 * e.se) for e in est.values())
    report("martingale property", ok, f"worst normalized mean {worst:.2f}")


def test_determinism_byte_identical(tmp_path):
    """Identical config and seed produce byte-identical CSV artifacts."""
    outs = []
    for tag in ("a", "b"):
        o = tmp_path / f"solve_{tag}"
        assert main(["solve", "--problem", "pricing.json", "--mode", "pricing",
                     "--out", str(o)]) == 0
        outs.append(o)
    same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
               for f in ("p.csv", "y.csv"))
    sims = []
    for tag in ("a", "b"):
        o = tmp_path / f"sim_{tag}"
        assert main(["simulate", "--problem", "pricing.json", "--mode",
                     "pricing", "--out", str(o), "--paths", "200",
                     "--seed", "31415"]) == 0
        sims.append(o)
    for f in ("chain.csv", "trajectory.csv", "costs.csv", "fig_p.csv",
              "fig_y.csv", "fig_uF1.csv", "fig_uF2.csv", "fig_uL.csv",
              "fig_x.csv"):
        same &= (sims[0] / f).read_bytes() == (sims[1] / f).read_bytes()
    report("determinism (byte-identical artifacts)", same)
