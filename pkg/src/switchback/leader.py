"""Leader layer: augmented block system, its Riccati equations, feedback.

The leader's problem couples the optimal-response state with an auxiliary
adjoint pair; stacking them gives a 2-dimensional system whose block
coefficients embed the followers' first-order conditions.  The weight
matrices are integrated as general (possibly nonsymmetric) 2x2 matrices per
regime: the state-cost block [[Q_L, -Q_F], [Q_F, 0]] is not symmetric and no
symmetry is imposed.  A block-diagonal stacked form over all regimes, with
sqrt-rate coupling matrices, is kept as a second independent solver and used
as a cross-check oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RequiresL3, SingularRF, SingularRL
from .grids import (JumpIntegrand, RegimeGrid, integrate_backward, interp_time,
                    markov_coupling, solve_linear_regime_bsde)
from .model import TOL_INVERT, ProblemSpec

I2 = np.eye(2)


@dataclass(frozen=True)
class AugmentedSystem:
    """Block coefficients of the stacked leader system, per (node, regime).

    Shapes: cal_A/… (N+1, m, 2, 2); cal_B/cal_D (N+1, m, 2, m0);
    B1/B2/D1/D2 (N+1, m, 2, 2); cal_E (2,); Q-blocks (N+1, m, 2, 2);
    G-blocks (m, 2, 2).
    """

    cal_A: np.ndarray
    cal_A_bar: np.ndarray
    cal_C: np.ndarray
    cal_C_bar: np.ndarray
    cal_B: np.ndarray
    cal_D: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    cal_E: np.ndarray
    cal_Q: np.ndarray
    cal_Q_bar: np.ndarray
    cal_G: np.ndarray
    cal_G_bar: np.ndarray


@dataclass(frozen=True)
class LeaderRiccati:
    P_L: RegimeGrid                  # (N+1, m, 2, 2)
    P_L_bar: RegimeGrid | None
    tau: RegimeGrid | None           # (N+1, m, 2)
    tau_M: JumpIntegrand | None


def solve_leader(spec: ProblemSpec, aug: AugmentedSystem,
                 scheme: str = "rk4") -> LeaderRiccati:
    """All three leader grids plus the jump integrand of the offset."""
    P_L = solve_PL(spec, aug, scheme)
    P_L_bar = solve_PLbar(spec, aug, P_L, scheme)
    tau, tau_M = solve_tau(spec, aug, P_L, P_L_bar, scheme)
    return LeaderRiccati(P_L=P_L, P_L_bar=P_L_bar, tau=tau, tau_M=tau_M)


def _kmat(top_left: np.ndarray, off: np.ndarray) -> np.ndarray:
    """Block pattern [[K_L, -K_F], [K_F, 0]] for grids of matching shape."""
    out = np.zeros(top_left.shape + (2, 2))
    out[..., 0, 0] = top_left
    out[..., 0, 1] = -off
    out[..., 1, 0] = off
    return out


def build_augmented(spec: ProblemSpec,
                    tol_invert: float = TOL_INVERT) -> AugmentedSystem:
    """Assemble every block of the stacked system on the grid nodes.

    Requires invertible R_L and R_F (the B1/B2 blocks embed their inverses);
    raises SingularRL / SingularRF with the offending (t, regime).
    """
    dyn, fc, lc = spec.dynamics, spec.follower_cost, spec.leader_cost
    Np1, m, m0 = spec.N + 1, spec.m, spec.m0
    BF, DF, RF = spec.B_F, spec.D_F, spec.R_F
    t_nodes = spec.t_nodes

    def scal(arr):
        return arr[..., None, None] * I2

    cal_B = np.zeros((Np1, m, 2, m0))
    cal_B[:, :, 0, :] = dyn.B_L
    cal_D = np.zeros((Np1, m, 2, m0))
    cal_D[:, :, 0, :] = dyn.D_L

    B1 = np.zeros((Np1, m, 2, 2))
    B2 = np.zeros((Np1, m, 2, 2))
    D1 = np.zeros((Np1, m, 2, 2))
    D2 = np.zeros((Np1, m, 2, 2))
    for k in range(Np1):
        for i in range(m):
            RL = lc.R_L[k, i]
            if np.linalg.svd(RL, compute_uv=False)[-1] <= tol_invert * max(
                    1.0, float(np.max(np.abs(RL)))):
                raise SingularRL(float(t_nodes[k]), i + 1)
            try:
                RLi = np.linalg.inv(RL)
                RFi = np.linalg.inv(RF[k, i])
            except np.linalg.LinAlgError:
                raise SingularRF(float(t_nodes[k]), i + 1)
            if np.linalg.svd(RF[k, i], compute_uv=False)[-1] <= tol_invert * max(
                    1.0, float(np.max(np.abs(RF[k, i])))):
                raise SingularRF(float(t_nodes[k]), i + 1)
            bl, dl = dyn.B_L[k, i], dyn.D_L[k, i]
            bf, df = BF[k, i], DF[k, i]
            blrb = float(bl @ RLi @ bl)
            blrd = float(bl @ RLi @ dl)
            dlrb = float(dl @ RLi @ bl)
            dlrd = float(dl @ RLi @ dl)
            bfrb = float(bf @ RFi @ bf)
            bfrd = float(bf @ RFi @ df)
            dfrb = float(df @ RFi @ bf)
            dfrd = float(df @ RFi @ df)
            B1[k, i] = [[-blrb, -bfrb], [bfrb, 0.0]]
            B2[k, i] = [[-blrd, -bfrd], [bfrd, 0.0]]
            D1[k, i] = [[-dlrb, -dfrb], [dfrb, 0.0]]
            D2[k, i] = [[-dlrd, -dfrd], [dfrd, 0.0]]

    return AugmentedSystem(
        cal_A=scal(dyn.A), cal_A_bar=scal(dyn.A_bar),
        cal_C=scal(dyn.C), cal_C_bar=scal(dyn.C_bar),
        cal_B=cal_B, cal_D=cal_D, B1=B1, B2=B2, D1=D1, D2=D2,
        cal_E=np.array([1.0, 0.0]),
        cal_Q=_kmat(lc.Q_L, fc.Q_F),
        cal_Q_bar=_kmat(lc.Q_L_bar, fc.Q_F_bar),
        cal_G=_kmat(lc.G_L, fc.G_F),
        cal_G_bar=_kmat(lc.G_L_bar, fc.G_F_bar),
    )


def solve_PL(spec: ProblemSpec, aug: AugmentedSystem,
             scheme: str = "rk4") -> RegimeGrid:
    """Backward RK4 of dP/dt + P A + A P + P B1 P + Q + coupling = 0,
    P(T, i) = G(i).  No symmetrization is applied."""
    rates = spec.generator.rates
    T = spec.T

    def rhs(t: float, P: np.ndarray) -> np.ndarray:
        A = interp_time(aug.cal_A, T, t)
        B1 = interp_time(aug.B1, T, t)
        Q = interp_time(aug.cal_Q, T, t)
        drift = P @ A + A @ P + P @ B1 @ P + Q
        return -(drift + markov_coupling(rates, P))

    return integrate_backward(rhs, aug.cal_G, (T, spec.N), scheme)


def block_coupling_mats(spec: ProblemSpec) -> list[np.ndarray]:
    """sqrt-rate coupling matrices of the stacked form, one per offset k.

    Entry (i, i+k mod m) of the k-th matrix is sqrt(lambda_{i, i+k mod m}),
    expanded by 2x2 identity blocks.
    """
    m = spec.m
    rates = spec.generator.rates
    mats = []
    for k in range(1, m):
        S = np.zeros((m, m))
        for i in range(m):
            j = (i + k) % m
            S[i, j] = np.sqrt(max(rates[i, j], 0.0))
        mats.append(np.kron(S, I2))
    return mats


def solve_PL_blockform(spec: ProblemSpec, aug: AugmentedSystem,
                       scheme: str = "rk4") -> RegimeGrid:
    """Stacked 2m x 2m solve of the same equation as solve_PL.

    The per-regime blocks sit on the diagonal, the A-blocks absorb a
    +lambda_ii/2 shift, and the chain coupling becomes sum_k N_k P N_k^T.
    Returned as a RegimeGrid with a single pseudo-regime of shape (2m, 2m);
    use ``extract_block_regime`` to pull regime blocks out.
    """
    m = spec.m
    rates = spec.generator.rates
    Ns = block_coupling_mats(spec)
    T = spec.T

    def bdiag(mats: np.ndarray) -> np.ndarray:
        out = np.zeros((2 * m, 2 * m))
        for i in range(m):
            out[2 * i:2 * i + 2, 2 * i:2 * i + 2] = mats[i]
        return out

    shift = np.array([0.5 * rates[i, i] * I2 for i in range(m)])

    def rhs(t: float, V: np.ndarray) -> np.ndarray:
        P = V[0]
        A = bdiag(interp_time(aug.cal_A, T, t) + shift)
        B1 = bdiag(interp_time(aug.B1, T, t))
        Q = bdiag(interp_time(aug.cal_Q, T, t))
        drift = P @ A + A @ P + P @ B1 @ P + Q
        for Nk in Ns:
            drift = drift + Nk @ P @ Nk.T
        return -drift[None]

    terminal = bdiag(aug.cal_G)[None]
    return integrate_backward(rhs, terminal, (T, spec.N), scheme)


def extract_block_regime(stacked: RegimeGrid, regime: int) -> np.ndarray:
    """Per-regime (N+1, 2, 2) slice of the stacked block solution."""
    i = regime - 1
    return stacked.values[:, 0, 2 * i:2 * i + 2, 2 * i:2 * i + 2]


def solve_PLbar(spec: ProblemSpec, aug: AugmentedSystem, P_L: RegimeGrid,
                scheme: str = "rk4") -> RegimeGrid:
    """Backward solve of the conditional-mean weight of the leader system.

    Integrated jointly with P_L so stage values stay consistent.  The
    P_L-source term is taken as 2 A_bar P_L, matching the scalar companion
    equation of the follower layer (the mean-field weight couples to the
    state weight through the bar-coefficients).
    """
    rates = spec.generator.rates
    T = spec.T

    def rhs(t: float, V: np.ndarray) -> np.ndarray:
        P, Pb = V[:, 0], V[:, 1]
        A = interp_time(aug.cal_A, T, t)
        Ab = interp_time(aug.cal_A_bar, T, t)
        C = interp_time(aug.cal_C, T, t)
        B1 = interp_time(aug.B1, T, t)
        B2 = interp_time(aug.B2, T, t)
        Q = interp_time(aug.cal_Q, T, t)
        Qb = interp_time(aug.cal_Q_bar, T, t)
        dP = P @ A + A @ P + P @ B1 @ P + Q
        dPb = (
            Pb @ B1 @ Pb
            + (2.0 * (A + Ab) + P @ B1) @ Pb
            + Pb @ (B1 + B2 @ C) @ P
            + 2.0 * Ab @ P
            + Qb
        )
        return -(np.stack([dP, dPb], axis=1) + markov_coupling(rates, V))

    terminal = np.stack([aug.cal_G, aug.cal_G_bar], axis=1)
    sol = integrate_backward(rhs, terminal, (T, spec.N), scheme)
    pl_err = np.max(np.abs(sol.values[:, :, 0] - P_L.values))
    if pl_err > 1e-9 * max(1.0, float(np.max(np.abs(P_L.values)))):
        raise ValueError(f"P_L input inconsistent with joint solve ({pl_err:.3e})")
    return RegimeGrid(values=sol.values[:, :, 1].copy(), T=T, N=spec.N)


def solve_tau(spec: ProblemSpec, aug: AugmentedSystem, P_L: RegimeGrid,
              P_L_bar: RegimeGrid, scheme: str = "rk4"
              ) -> tuple[RegimeGrid, JumpIntegrand]:
    """Offset equation of the leader system under regime-deterministic data.

    tau_W vanishes and conditional expectations collapse, leaving a linear
    regime system with drift map (A + P_L B1) + (A_bar + P_L_bar B1) and
    source (C + P_L B2)(P_L E sigma) + P_L_bar B2 (P_L E sigma)
    + (P_L + P_L_bar) E b; terminal value 0.
    """
    Np1, m = spec.N + 1, spec.m
    E = aug.cal_E
    F = np.empty((Np1, m, 2, 2))
    h = np.empty((Np1, m, 2))
    sig = spec.dynamics.sigma
    b = spec.dynamics.b
    for k in range(Np1):
        for i in range(m):
            P, Pb = P_L.values[k, i], P_L_bar.values[k, i]
            B1, B2 = aug.B1[k, i], aug.B2[k, i]
            F[k, i] = (aug.cal_A[k, i] + P @ B1) + (aug.cal_A_bar[k, i] + Pb @ B1)
            zsig = P @ E * sig[k, i]
            h[k, i] = ((aug.cal_C[k, i] + P @ B2) @ zsig + Pb @ B2 @ zsig
                       + (P + Pb) @ E * b[k, i])
    return solve_linear_regime_bsde(F, h, np.zeros((m, 2)), spec.generator,
                                    (spec.T, spec.N), scheme)


@dataclass(frozen=True)
class LeaderGains:
    """Affine feedback u_L = K_X X + K_X_hat X_hat + offset per (node, regime)."""

    K_X: np.ndarray        # (N+1, m, m0, 2)
    K_X_hat: np.ndarray    # (N+1, m, m0, 2)
    offset: np.ndarray     # (N+1, m, m0)


def leader_feedback(spec: ProblemSpec, aug: AugmentedSystem, P_L: RegimeGrid,
                    P_L_bar: RegimeGrid, tau: RegimeGrid) -> LeaderGains:
    """Gains of u_L = -R_L^{-1} B^T [P_L X + P_L_bar X_hat + tau].

    Only valid under the structural zeros (the diffusion feedback path is
    out of scope); raises RequiresL3 when D_L is present.
    """
    if np.any(spec.dynamics.D_L != 0.0):
        raise RequiresL3("leader feedback with D_L != 0 is not supported")
    lc = spec.leader_cost
    Np1, m, m0 = spec.N + 1, spec.m, spec.m0
    K_X = np.empty((Np1, m, m0, 2))
    K_Xh = np.empty((Np1, m, m0, 2))
    off = np.empty((Np1, m, m0))
    for k in range(Np1):
        for i in range(m):
            BT = aug.cal_B[k, i].T     # (m0, 2)
            RL = lc.R_L[k, i]
            K_X[k, i] = -np.linalg.solve(RL, BT @ P_L.values[k, i])
            K_Xh[k, i] = -np.linalg.solve(RL, BT @ P_L_bar.values[k, i])
            off[k, i] = -np.linalg.solve(RL, BT @ tau.values[k, i])
    return LeaderGains(K_X=K_X, K_X_hat=K_Xh, offset=off)
