"""Continuous-time Markov chains: validation, exact path simulation, grid views.

Paths are simulated jump by jump (exponential holding times, embedded-chain
transition probabilities), so the chain itself carries no time-discretization
bias.  Grid projections take the left limit: the regime reported at a grid
time t is the regime in force immediately before t.

Random streams
--------------
Everything derives from one 64-bit master seed.  Path ``k`` of an ensemble
draws its chain from ``SeedSequence(seed, spawn_key=(0, k))`` and its Brownian
increments from ``SeedSequence(seed, spawn_key=(1, k))``, so any single path
can be regenerated in isolation and chain/noise streams can be recombined
(e.g. many Brownian paths over one frozen chain).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeneratorError, NegativeOffDiagonal, RowSumNonzero

ROW_SUM_TOL = 1e-12

_CHAIN_DOMAIN = 0
_BROWNIAN_DOMAIN = 1


def chain_stream(seed: int, path_index: int) -> np.random.Generator:
    """Per-path RNG for chain jumps."""
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(_CHAIN_DOMAIN, path_index))
    )


def brownian_stream(seed: int, path_index: int) -> np.random.Generator:
    """Per-path RNG for Brownian increments."""
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(_BROWNIAN_DOMAIN, path_index))
    )


@dataclass(frozen=True)
class Generator:
    """Validated transition-rate matrix of an m-state chain.

    ``rates[i, j]`` (0-based storage) is the jump intensity from regime i+1
    to regime j+1; rows sum to zero and off-diagonal entries are nonnegative.
    """

    m: int
    rates: np.ndarray

    def __post_init__(self):
        self.rates.setflags(write=False)


def validate_generator(rates) -> Generator:
    """Check sign and row-sum invariants and wrap the matrix.

    Raises NegativeOffDiagonal or RowSumNonzero (for the worst row) on
    violation.  Regime indices in errors are 1-based.
    """
    arr = np.asarray(rates, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise GeneratorError(f"rate matrix must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GeneratorError("rate matrix contains non-finite entries")
    m = arr.shape[0]
    for i in range(m):
        for j in range(m):
            if i != j and arr[i, j] < 0:
                raise NegativeOffDiagonal(i + 1, j + 1, float(arr[i, j]))
    row_sums = arr.sum(axis=1)
    worst = int(np.argmax(np.abs(row_sums)))
    if abs(row_sums[worst]) > ROW_SUM_TOL:
        raise RowSumNonzero(worst + 1, float(row_sums[worst]))
    return Generator(m=m, rates=arr.copy())


@dataclass(frozen=True)
class ChainPath:
    """One chain realization on [0, T].

    ``jump_times`` are strictly increasing in (0, T]; ``states`` holds the
    initial regime followed by the post-jump regimes (1-based), so
    ``len(states) == len(jump_times) + 1``.
    """

    jump_times: np.ndarray
    states: np.ndarray
    T: float

    def __post_init__(self):
        self.jump_times.setflags(write=False)
        self.states.setflags(write=False)

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    def state_at(self, t: float) -> int:
        """Regime at time t (right-continuous value, alpha_t)."""
        k = int(np.searchsorted(self.jump_times, t, side="right"))
        return int(self.states[k])

    def state_before(self, t: float) -> int:
        """Left limit alpha_{t-}; a jump exactly at t is not yet visible."""
        k = int(np.searchsorted(self.jump_times, t, side="left"))
        return int(self.states[k])

    def occupation_times(self, m: int) -> np.ndarray:
        """Time spent in each regime over [0, T] (1-based regimes -> index-1)."""
        occ = np.zeros(m)
        edges = np.concatenate(([0.0], self.jump_times, [self.T]))
        for seg, s in enumerate(self.states):
            occ[s - 1] += edges[seg + 1] - edges[seg]
        return occ


def sample_chain(gen: Generator, i0: int, T: float, seed) -> ChainPath:
    """Exact jump-time simulation started in regime i0 (1-based).

    ``seed`` may be an int (path 0 of that master seed) or a Generator.
    Absorbing regimes (zero exit rate) simply stop jumping.
    """
    if not 1 <= i0 <= gen.m:
        raise ValueError(f"i0 = {i0} outside 1..{gen.m}")
    if T <= 0:
        raise ValueError("T must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else chain_stream(int(seed), 0)

    rates = gen.rates
    jump_times: list[float] = []
    states = [i0]
    t = 0.0
    s = i0
    while True:
        exit_rate = -rates[s - 1, s - 1]
        if exit_rate <= 0.0:
            break
        t += rng.exponential(1.0 / exit_rate)
        if t > T:
            break
        # embedded-chain draw: one uniform against the cumulative rates
        u = rng.random() * exit_rate
        acc = 0.0
        nxt = s
        for j in range(gen.m):
            if j == s - 1:
                continue
            acc += rates[s - 1, j]
            if u <= acc:
                nxt = j + 1
                break
        s = nxt
        jump_times.append(t)
        states.append(s)
    return ChainPath(
        jump_times=np.asarray(jump_times, dtype=float),
        states=np.asarray(states, dtype=np.int64),
        T=float(T),
    )


def project_to_grid(path: ChainPath, N: int, T: float) -> np.ndarray:
    """Regime per grid point t_k = kT/N, taken as the left limit.

    A jump exactly at t_k assigns the pre-jump regime to index k; a jump
    strictly inside a step becomes visible at the next grid index.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    t = np.arange(N + 1) * (T / N)
    idx = np.searchsorted(path.jump_times, t, side="left")
    return path.states[idx]


@dataclass(frozen=True)
class MartingaleLedger:
    """Counting processes [M_ij](T) with their compensators <M_ij>(T)."""

    counts: np.ndarray
    compensators: np.ndarray
    T: float = field(default=0.0)

    def __post_init__(self):
        self.counts.setflags(write=False)
        self.compensators.setflags(write=False)

    @property
    def residuals(self) -> np.ndarray:
        """M_ij(T) = [M_ij](T) - <M_ij>(T); diagonal identically zero."""
        return self.counts - self.compensators


def martingale_ledger(path: ChainPath, gen: Generator, T: float) -> MartingaleLedger:
    """Transition counts and compensators lambda_ij * (time in i) up to T."""
    m = gen.m
    counts = np.zeros((m, m))
    for k in range(path.n_jumps):
        i = path.states[k] - 1
        j = path.states[k + 1] - 1
        counts[i, j] += 1.0
    occ = path.occupation_times(m)
    comp = gen.rates * occ[:, None]
    np.fill_diagonal(comp, 0.0)
    return MartingaleLedger(counts=counts, compensators=comp, T=T)
