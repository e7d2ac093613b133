"""Synthetic cohort generation: covariates, failure times from the
transformation model, randomized visit schedules, interval construction, and
calibration of the study end time to a target event rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError, ConfigError
from .likelihood import ObservedRecord
from .model import TransformationSpec, transform_G, transform_G_inverse

# Correlation 0.5^|i-j| among the three truncated-normal covariates.
_NORMAL_BLOCK_COV = np.array(
    [[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]]
)
_NORMAL_BLOCK_CHOL = np.linalg.cholesky(_NORMAL_BLOCK_COV)


@dataclass(frozen=True)
class SimConfig:
    """Cohort-generation settings; ``tau`` is filled in by calibration."""

    n: int
    g_case: int
    r: float
    target_event_rate: float
    k_visits: int = 10
    attend_prob: float = 0.8
    baseline_scale: float = 0.1
    baseline_power: float = 2.0
    tau: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"cohort size must be >= 1, got {self.n}")
        if not 0.0 < self.target_event_rate < 1.0:
            raise ConfigError(f"target event rate must lie in (0, 1), got {self.target_event_rate}")
        if not 0.0 < self.attend_prob <= 1.0:
            raise ConfigError(f"attendance probability must lie in (0, 1], got {self.attend_prob}")
        if self.k_visits < 1:
            raise ConfigError(f"need at least one scheduled visit, got {self.k_visits}")
        if self.tau is not None and not self.tau > 0:
            raise ConfigError(f"study end time must be positive, got {self.tau}")

    @property
    def spec(self) -> TransformationSpec:
        return TransformationSpec(self.r)


def gen_covariates(n: int, rng: np.random.Generator) -> np.ndarray:
    """n x 5 covariate matrix: Bernoulli(0.5), three correlated normals
    clipped to [0, 2], and a Uniform[0, 1]."""
    z1 = (rng.random(n) < 0.5).astype(float)
    z234 = rng.standard_normal((n, 3)) @ _NORMAL_BLOCK_CHOL.T
    z234 = np.clip(z234, 0.0, 2.0)
    z5 = rng.random(n)
    return np.column_stack([z1, z234, z5])


def _g_inner(Z: np.ndarray) -> np.ndarray:
    z1, z2, z3, z4, z5 = (Z[:, j] for j in range(5))
    return z1 * z2**2 / 3.0 + np.log(z3 + 1.0) + np.sqrt(z3 * z4) + np.exp(z5) / 3.0


def g_true(g_case: int, z) -> float | np.ndarray:
    """True covariate effect for the three simulation settings (centered by
    the fixed intercepts 0.25, 1.18, 0.53)."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Z = z[None, :] if single else z
    if g_case == 1:
        out = Z[:, 0] - 0.3 * Z[:, 1] - 0.3 * Z[:, 2] + 0.6 * Z[:, 3] - 0.5 * Z[:, 4] - 0.25
    elif g_case == 2:
        out = _g_inner(Z) - 1.18
    elif g_case == 3:
        out = _g_inner(Z) ** 2 / 4.0 - 0.53
    else:
        raise ConfigError(f"unknown covariate-effect case {g_case}")
    return float(out[0]) if single else out


def draw_failure_time(spec: TransformationSpec, gval, U, scale: float = 0.1, power: float = 2.0):
    """Invert S(t|z) = U in closed form for the power baseline hazard."""
    U = np.asarray(U, dtype=float)
    if np.any(U <= 0.0) or np.any(U >= 1.0):
        raise ValueError("U must lie strictly inside (0, 1)")
    # S = exp(-G(x)) with x = Lam(t) e^g, so x = G^{-1}(-log U).
    x = transform_G_inverse(spec, -np.log(U))
    t = (x * np.exp(-np.asarray(gval, dtype=float)) / scale) ** (1.0 / power)
    return float(t) if t.ndim == 0 else t


def gen_visits(k: int, tau: float, rng: np.random.Generator) -> np.ndarray:
    """Attended visit times: k equally spaced appointments, uniformly
    perturbed by up to a third of the spacing, each kept with probability 0.8."""
    if k < 1 or tau <= 0:
        raise ConfigError(f"need k >= 1 and tau > 0, got k={k}, tau={tau}")
    td = tau / (k + 1)
    scheduled = np.arange(1, k + 1) * td
    times = scheduled + rng.uniform(-td / 3.0, td / 3.0, size=k)
    attended = rng.random(k) < 0.8
    return np.sort(times[attended])


def censor(T: float, visits: np.ndarray) -> tuple[float, float, int, int]:
    """Map a failure time onto its observation interval (L, R] and indicators."""
    visits = np.asarray(visits, dtype=float)
    before = visits[visits < T]
    after = visits[visits >= T]
    L = float(before[-1]) if len(before) else 0.0
    R = float(after[0]) if len(after) else math.inf
    delta_L = int(L == 0.0 and math.isfinite(R))
    delta_I = int(L > 0.0 and math.isfinite(R))
    return L, R, delta_L, delta_I


def _draw_failure_inputs(sim: SimConfig, n: int, rng: np.random.Generator):
    Z = gen_covariates(n, rng)
    g = g_true(sim.g_case, Z)
    U = np.maximum(rng.random(n), 1e-300)
    T = draw_failure_time(sim.spec, g, U, sim.baseline_scale, sim.baseline_power)
    return Z, g, U, T


def calibrate_tau(
    sim: SimConfig,
    rng: np.random.Generator,
    mc_size: int = 100_000,
    tol: float = 0.005,
    max_iter: int = 60,
) -> float:
    """Bisection on the study end time until the Monte Carlo event rate hits
    the target within ``tol``.

    One Monte Carlo sample of failure times, visit perturbations, and
    attendance is drawn up front and reused for every candidate end time
    (common random numbers), which makes the rate a deterministic
    nondecreasing function of tau.
    """
    if not 0.01 < sim.target_event_rate < 0.9:
        raise ConfigError(f"calibration target must lie in (0.01, 0.9), got {sim.target_event_rate}")
    k = sim.k_visits
    _, _, _, T = _draw_failure_inputs(sim, mc_size, rng)
    eps_frac = rng.uniform(-1.0 / 3.0, 1.0 / 3.0, size=(mc_size, k))
    attended = rng.random((mc_size, k)) < sim.attend_prob
    # A subject is a case iff its last attended visit is at or past T, i.e.
    # tau/(k+1) * max_j attended (j + eps_j) >= T.
    slot = np.arange(1, k + 1)[None, :] + eps_frac
    last = np.max(np.where(attended, slot, -np.inf), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        threshold = np.where(last > 0, (k + 1) * T / last, np.inf)

    def rate(tau: float) -> float:
        return float(np.mean(threshold <= tau))

    lo, hi = 0.0, 1.0
    for _ in range(max_iter):
        if rate(hi) >= sim.target_event_rate:
            break
        hi *= 2.0
    else:
        raise CalibrationError(f"could not bracket target event rate {sim.target_event_rate}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        r_mid = rate(mid)
        if abs(r_mid - sim.target_event_rate) <= tol:
            return mid
        if r_mid < sim.target_event_rate:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"bisection did not converge for target {sim.target_event_rate}")


def gen_cohort(sim: SimConfig, rng: np.random.Generator) -> list[ObservedRecord]:
    """Generate a complete cohort (covariates present everywhere, weight 1)."""
    if sim.tau is None:
        raise ConfigError("SimConfig.tau is unset; run calibrate_tau first")
    n, k, tau = sim.n, sim.k_visits, sim.tau
    td = tau / (k + 1)
    Z, _, _, T = _draw_failure_inputs(sim, n, rng)
    scheduled = np.arange(1, k + 1)[None, :] * td
    times = scheduled + rng.uniform(-td / 3.0, td / 3.0, size=(n, k))
    attended = rng.random((n, k)) < sim.attend_prob
    # Subjects who miss every visit get one fresh schedule before we accept
    # them as degenerate (right-censored at 0).
    missing = np.flatnonzero(~attended.any(axis=1))
    if len(missing):
        times[missing] = scheduled + rng.uniform(-td / 3.0, td / 3.0, size=(len(missing), k))
        attended[missing] = rng.random((len(missing), k)) < sim.attend_prob

    masked_lt = np.where(attended & (times < T[:, None]), times, -np.inf)
    masked_ge = np.where(attended & (times >= T[:, None]), times, np.inf)
    L = np.max(masked_lt, axis=1)
    L = np.where(np.isfinite(L), L, 0.0)
    R = np.min(masked_ge, axis=1)
    delta_L = (L == 0.0) & np.isfinite(R)
    delta_I = (L > 0.0) & np.isfinite(R)

    return [
        ObservedRecord(
            L=float(L[i]),
            R=float(R[i]),
            delta_L=int(delta_L[i]),
            delta_I=int(delta_I[i]),
            observed=1,
            z=Z[i],
            weight=1.0,
        )
        for i in range(n)
    ]


def event_rate(records: list[ObservedRecord]) -> float:
    return sum(rec.is_case for rec in records) / len(records)


@dataclass(frozen=True)
class TrueModel:
    """The data-generating model, exposing the same prediction surface as a fit."""

    g_case: int
    spec: TransformationSpec
    baseline_scale: float = 0.1
    baseline_power: float = 2.0

    @classmethod
    def from_config(cls, sim: SimConfig) -> "TrueModel":
        return cls(
            g_case=sim.g_case,
            spec=sim.spec,
            baseline_scale=sim.baseline_scale,
            baseline_power=sim.baseline_power,
        )

    def baseline(self, t):
        return self.baseline_scale * np.asarray(t, dtype=float) ** self.baseline_power

    def g(self, Z):
        return g_true(self.g_case, Z)

    def predict_survival(self, t_grid, Z) -> np.ndarray:
        """Survival curves, shape (n_subjects, n_times)."""
        lam = self.baseline(np.asarray(t_grid, dtype=float))
        g = np.atleast_1d(self.g(Z))
        return np.exp(-transform_G(self.spec, lam[None, :] * np.exp(g)[:, None]))
