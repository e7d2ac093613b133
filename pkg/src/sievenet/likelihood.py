"""Observed-data records, inverse-probability weights, and the weighted
log-likelihood of the transformation model.

A subject contributes one of three censoring terms:

    left      (delta_L=1):  log[1 - exp(-G(Lam(R) e^g))]
    interval  (delta_I=1):  log[exp(-G(Lam(L) e^g)) - exp(-G(Lam(R) e^g))]
    right     (otherwise): -G(Lam(L) e^g)

each multiplied by the subject's IPW weight.  Probabilities inside logs are
floored at PROB_FLOOR to keep early training finite; floor events are counted
when a diagnostics dict is supplied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .model import BernsteinHazard, CovariateNetwork, TransformationSpec, hazard_eval, network_forward, transform_G

PROB_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class ObservedRecord:
    """One subject: censoring interval (L, R], indicators, covariates, weight.

    R is math.inf for right-censored subjects.  ``observed`` = 0 means the
    second sampling phase did not collect covariates; then z is None and the
    weight is zero.
    """

    L: float
    R: float
    delta_L: int
    delta_I: int
    observed: int
    z: np.ndarray | None
    weight: float

    def __post_init__(self):
        if self.delta_L + self.delta_I > 1:
            raise ConfigError("at most one of delta_L, delta_I may be set")
        if self.delta_L == 1 and not (self.L == 0.0 and math.isfinite(self.R)):
            raise ConfigError("left-censored record requires L = 0 and finite R")
        if self.delta_I == 1 and not (self.L > 0.0 and math.isfinite(self.R)):
            raise ConfigError("interval-censored record requires L > 0 and finite R")
        if self.delta_L == 0 and self.delta_I == 0 and math.isfinite(self.R):
            raise ConfigError("right-censored record requires R = +inf")
        if not self.L < self.R:
            raise ConfigError(f"need L < R, got L={self.L}, R={self.R}")
        if self.observed == 0 and (self.z is not None or self.weight != 0.0):
            raise ConfigError("unobserved record must have absent covariates and zero weight")
        if self.observed == 1 and (self.z is None or not self.weight > 0.0):
            raise ConfigError("observed record must carry covariates and a positive weight")
        if self.z is not None:
            object.__setattr__(self, "z", np.asarray(self.z, dtype=float))

    @property
    def is_case(self) -> bool:
        return self.delta_L + self.delta_I == 1


def ipw_weight(delta_L: int, delta_I: int, observed: int, p_s: float, p_c: float) -> float:
    """Inverse inclusion probability of the two-phase design.

    Non-cases are kept only through the subcohort (probability p_s);
    cases are kept through the subcohort or the follow-up case draw
    (probability p_s + (1 - p_s) p_c).
    """
    for name, p in (("p_s", p_s), ("p_c", p_c)):
        if not 0.0 < p <= 1.0:
            raise ConfigError(f"{name} must lie in (0, 1], got {p}")
    case = delta_L + delta_I
    inclusion = (1 - case) * p_s + case * (p_s + (1.0 - p_s) * p_c)
    return observed / inclusion


def _record_loglik(
    spec: TransformationSpec,
    lam_L: float,
    lam_R: float,
    g: float,
    delta_L: int,
    delta_I: int,
    diagnostics: dict | None = None,
) -> float:
    """Unweighted log-likelihood term given hazard values and covariate effect."""
    eg = math.exp(g)
    if delta_L == 1:
        p = 1.0 - math.exp(-transform_G(spec, lam_R * eg))
    elif delta_I == 1:
        p = math.exp(-transform_G(spec, lam_L * eg)) - math.exp(-transform_G(spec, lam_R * eg))
    else:
        return -transform_G(spec, lam_L * eg)
    if p < PROB_FLOOR:
        if diagnostics is not None:
            diagnostics["floored"] = diagnostics.get("floored", 0) + 1
        p = PROB_FLOOR
    return math.log(p)


def loglik_one(
    hazard: BernsteinHazard,
    net: CovariateNetwork,
    spec: TransformationSpec,
    rec: ObservedRecord,
    masks: list[np.ndarray] | None = None,
    diagnostics: dict | None = None,
) -> float:
    """Weighted log-likelihood of a single observed record.

    L and finite R must already lie within the hazard support; the harness
    clamps before calling.  ``masks`` threads training-mode dropout through
    the covariate forward pass.
    """
    if rec.observed != 1:
        raise ConfigError("loglik_one requires an observed record")
    g = network_forward(net, rec.z, masks)
    try:
        lam_L = 0.0 if rec.delta_L == 1 else hazard_eval(hazard, rec.L)
        lam_R = hazard_eval(hazard, rec.R) if math.isfinite(rec.R) else math.inf
        value = rec.weight * _record_loglik(spec, lam_L, lam_R, g, rec.delta_L, rec.delta_I, diagnostics)
    except OverflowError as err:
        raise NumericalError(f"overflow in likelihood term: {err}") from None
    if not math.isfinite(value):
        raise NumericalError(f"non-finite likelihood term: {value}")
    return value


def loglik_weighted(
    hazard: BernsteinHazard,
    net: CovariateNetwork,
    spec: TransformationSpec,
    data: list[ObservedRecord],
    diagnostics: dict | None = None,
) -> float:
    """Sum of weighted per-record terms over the observed part of the data."""
    total = 0.0
    for i, rec in enumerate(data):
        if rec.observed != 1 or rec.weight == 0.0:
            continue
        try:
            total += loglik_one(hazard, net, spec, rec, diagnostics=diagnostics)
        except NumericalError as err:
            raise NumericalError(str(err), record_index=i) from None
    return total


def survival(hazard: BernsteinHazard, net: CovariateNetwork, spec: TransformationSpec, t: float, z) -> float:
    """Model-implied survival S(t | z) = exp(-G(Lam(t) e^{g(z)})) for t in the support."""
    g = network_forward(net, np.asarray(z, dtype=float))
    return math.exp(-transform_G(spec, hazard_eval(hazard, t) * math.exp(g)))


def survival_matrix(
    hazard: BernsteinHazard,
    net: CovariateNetwork,
    spec: TransformationSpec,
    t_grid: np.ndarray,
    Z: np.ndarray,
    center: float = 0.0,
) -> np.ndarray:
    """Survival curves for every row of Z over t_grid, shape (n, len(t_grid)).

    ``center`` rebalances the exposed pieces (hazard scaled up, covariate
    effect shifted down); the composite is unchanged up to rounding.
    """
    lam = hazard_eval(hazard, np.asarray(t_grid, dtype=float)) * math.exp(center)
    g = network_forward(net, np.asarray(Z, dtype=float)) - center
    composite = lam[None, :] * np.exp(g)[:, None]
    return np.exp(-transform_G(spec, composite))
