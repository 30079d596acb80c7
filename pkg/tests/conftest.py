"""Shared builders and independent oracles for the test suite.

The fine-grid oracles are deliberate re-transcriptions of the equations as
plain explicit-Euler loops; they never call the package's integrators.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from switchback.model import ProblemSpec, load_problem


def spec_dict(rates, *, T=1.0, N=200, m0=1, m1=1, m2=1, x0=1.0,
              dynamics=None, follower_cost=None, leader_cost=None) -> dict:
    """Problem dict with all-zero defaults and unit control weights."""
    m = len(rates)
    dyn_default = {
        "A": 0.0, "A_bar": 0.0, "C": 0.0, "C_bar": 0.0,
        "B_L": [0.0] * m0, "B_F1": [0.0] * m1, "B_F2": [0.0] * m2,
        "D_L": [0.0] * m0, "D_F1": [0.0] * m1, "D_F2": [0.0] * m2,
        "b": 0.0, "sigma": 0.0,
    }
    fc_default = {
        "Q_F": 0.0, "Q_F_bar": 0.0,
        "R_F1": np.eye(m1).tolist(), "R_F2": (-np.eye(m2)).tolist(),
        "S_F": np.zeros((m1, m2)).tolist(), "G_F": 0.0, "G_F_bar": 0.0,
    }
    lc_default = {
        "Q_L": 0.0, "Q_L_bar": 0.0, "R_L": np.eye(m0).tolist(),
        "G_L": 0.0, "G_L_bar": 0.0,
    }

    def per_regime(default, overrides):
        out = []
        for i in range(m):
            obj = dict(default)
            if overrides is not None:
                obj.update(overrides[i])
            out.append(obj)
        return out

    return {
        "generator": [list(map(float, row)) for row in rates],
        "horizon": T, "steps": N,
        "dims": {"leader": m0, "follower1": m1, "follower2": m2},
        "x0": x0,
        "dynamics": per_regime(dyn_default, dynamics),
        "follower_cost": per_regime(fc_default, follower_cost),
        "leader_cost": per_regime(lc_default, leader_cost),
    }


def make_spec(rates, **kw) -> ProblemSpec:
    return load_problem(spec_dict(rates, **kw))


PAPER_RATES = [[-1.0, 1.0], [0.5, -0.5]]


@pytest.fixture(scope="session")
def pricing_spec() -> ProblemSpec:
    import importlib.resources
    path = importlib.resources.files("switchback") / "data" / "pricing.json"
    return load_problem(str(path))


def pricing_dict() -> dict:
    """The product-pricing data as a plain dict (for modified copies)."""
    import importlib.resources
    import json
    path = importlib.resources.files("switchback") / "data" / "pricing.json"
    return json.loads(path.read_text())


# ---------------------------------------------------------------------------
# Random problem generators
# ---------------------------------------------------------------------------

def random_followers_spec(rng: np.random.Generator, m: int = 2,
                          N: int = 200) -> ProblemSpec:
    """Random problem satisfying (F1)-(F5) by construction.

    Scalar follower controls, D proportional to B (so B^T D is symmetric),
    |B_F1| > |B_F2| with equal-magnitude weights so B R^-1 B^T >= 0, and the
    control weights set above the (rho + rho_bar c2_bar) threshold computed
    from the drawn dynamics.
    """
    rates = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            if i != j:
                rates[i, j] = rng.uniform(0.2, 1.0)
        rates[i, i] = -rates[i].sum()
    dynamics = []
    fcost = []
    kappa = rng.uniform(0.2, 0.8)
    for i in range(m):
        b1 = rng.uniform(0.4, 0.8) * rng.choice([-1.0, 1.0])
        b2 = rng.uniform(0.05, 0.3) * rng.choice([-1.0, 1.0])
        dynamics.append({
            "A": rng.uniform(-0.4, 0.4), "C": rng.uniform(-0.3, 0.3),
            "B_F1": [b1], "B_F2": [b2],
            "D_F1": [kappa * b1], "D_F2": [kappa * b2],
            "B_L": [rng.uniform(-0.5, 0.5)],
            "b": rng.uniform(-0.2, 0.2), "sigma": rng.uniform(0.0, 0.5),
        })
        fcost.append({"Q_F": rng.uniform(0.0, 0.3), "G_F": rng.uniform(0.0, 0.3)})
    spec0 = make_spec(rates.tolist(), N=N, dynamics=dynamics,
                      follower_cost=fcost)
    from switchback.model import derive_constants
    c = derive_constants(spec0)
    w = c.rho + c.rho_bar * max(c.c2_bar_1, c.c2_bar_2) + rng.uniform(0.5, 2.0)
    for i in range(m):
        fcost[i]["R_F1"] = [[w]]
        fcost[i]["R_F2"] = [[-w]]
    return make_spec(rates.tolist(), N=N, dynamics=dynamics,
                     follower_cost=fcost)


def random_l3_spec(rng: np.random.Generator, m: int = 2, N: int = 200,
                   zero_C: bool = True) -> ProblemSpec:
    """Random problem with the leader-layer structural zeros in force."""
    rates = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            if i != j:
                rates[i, j] = rng.uniform(0.2, 1.0)
        rates[i, i] = -rates[i].sum()
    dynamics, fcost, lcost = [], [], []
    for i in range(m):
        dynamics.append({
            "A": rng.uniform(-0.5, 0.5),
            "A_bar": rng.uniform(-0.3, 0.3),
            "C": 0.0 if zero_C else rng.uniform(-0.3, 0.3),
            "B_L": [rng.uniform(0.3, 1.0) * rng.choice([-1.0, 1.0])],
            "B_F1": [rng.uniform(0.3, 0.8)],
            "B_F2": [rng.uniform(0.05, 0.2)],
            "b": rng.uniform(-0.3, 0.3), "sigma": rng.uniform(0.1, 0.6),
        })
        fcost.append({
            "Q_F": rng.uniform(0.0, 0.4), "G_F": rng.uniform(0.0, 0.4),
            "R_F1": [[rng.uniform(0.8, 2.0)]], "R_F2": [[-rng.uniform(0.8, 2.0)]],
        })
        lcost.append({
            "Q_L": rng.uniform(0.0, 0.4), "Q_L_bar": rng.uniform(0.0, 0.3),
            "G_L": rng.uniform(0.0, 0.4), "G_L_bar": rng.uniform(0.0, 0.3),
            "R_L": [[rng.uniform(0.8, 2.0)]],
        })
    return make_spec(rates.tolist(), N=N, dynamics=dynamics,
                     follower_cost=fcost, leader_cost=lcost)


# ---------------------------------------------------------------------------
# Independent explicit-Euler oracles
# ---------------------------------------------------------------------------

def euler_linear_system_oracle(F_fn, h_fn, g, rates, T, n_steps):
    """Explicit Euler for v'(t,i) + F(t,i) v(t,i) + sum_j q_ij v(t,j) + h = 0.

    F_fn(t, i) -> scalar, h_fn(t, i) -> scalar band g the terminal vector.
    Steps straight down from T with step T/n_steps; plain loops on floats.
    """
    m = len(g)
    dt = T / n_steps
    v = [float(g[i]) for i in range(m)]
    for k in range(n_steps, 0, -1):
        t = k * dt
        dv = []
        for i in range(m):
            coup = 0.0
            for j in range(m):
                coup += rates[i][j] * v[j]
            dv.append(F_fn(t, i) * v[i] + coup + h_fn(t, i))
        for i in range(m):
            v[i] += dt * dv[i]
    return v


def euler_pf_oracle(A, C, Q, G, B1, B2, D1, D2, R1, R2, T, n_steps):
    """Explicit Euler for the scalar single-regime follower weight equation.

    P' + (2A + C^2) P + Q - Beff^T Reff^-1 Beff = 0, P(T) = G, with
    Reff = diag(R1, R2) + P [D1, D2]^T [D1, D2] and
    Beff = P ([B1, B2] + C [D1, D2])^T.  Transcribed with a literal 2x2
    block inverse, no shared code with the solver.
    """
    dt = T / n_steps
    P = float(G)
    for _ in range(n_steps):
        r11 = R1 + P * D1 * D1
        r12 = P * D1 * D2
        r22 = R2 + P * D2 * D2
        det = r11 * r22 - r12 * r12
        b1 = P * (B1 + C * D1)
        b2 = P * (B2 + C * D2)
        quad = (b1 * (r22 * b1 - r12 * b2) + b2 * (r11 * b2 - r12 * b1)) / det
        dP = (2.0 * A + C * C) * P + Q - quad
        P += dt * dP
    return P


def euler_pfbar_oracle(A, Abar, C, Cbar, Q, Qbar, G, Gbar,
                       B1, B2, D1, D2, R1, R2, T, n_steps):
    """Explicit Euler for the scalar single-regime pair (P, Pbar)."""
    dt = T / n_steps
    P, Pb = float(G), float(Gbar)
    for _ in range(n_steps):
        r11 = R1 + P * D1 * D1
        r12 = P * D1 * D2
        r22 = R2 + P * D2 * D2
        det = r11 * r22 - r12 * r12

        def inv_apply(u1, u2):
            return ((r22 * u1 - r12 * u2) / det, (r11 * u2 - r12 * u1) / det)

        b1 = P * (B1 + C * D1)
        b2 = P * (B2 + C * D2)
        bb1 = Pb * B1 + P * Cbar * D1
        bb2 = Pb * B2 + P * Cbar * D2
        s1, s2 = inv_apply(b1, b2)
        sb1, sb2 = inv_apply(bb1, bb2)
        dP = (2 * A + C * C) * P + Q - (b1 * s1 + b2 * s2)
        dPb = (2 * (A + Abar) * Pb
               + (2 * Abar + Cbar * Cbar + 2 * C * Cbar) * P + Qbar
               - (b1 * sb1 + b2 * sb2)
               - (bb1 * sb1 + bb2 * sb2)
               - (bb1 * s1 + bb2 * s2))
        P += dt * dP
        Pb += dt * dPb
    return P, Pb


def euler_matrix_riccati_oracle(A, B1, Q, G, T, n_steps):
    """Explicit Euler for P' + PA + AP + P B1 P + Q = 0 (single regime)."""
    dt = T / n_steps
    P = np.array(G, dtype=float)
    A = np.asarray(A, float)
    B1 = np.asarray(B1, float)
    Q = np.asarray(Q, float)
    for _ in range(n_steps):
        dP = P @ A + A @ P + P @ B1 @ P + Q
        P = P + dt * dP
    return P
