"""Two-phase (generalized) case-cohort sampling plus the SUB and SRS baselines.

Phase one observes every subject's censoring interval; phase two collects
covariates for a Bernoulli subcohort (probability p_s) and, among cases
missed by the subcohort, a Bernoulli case subset (probability p_c).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .likelihood import ObservedRecord, ipw_weight


@dataclass(frozen=True)
class CaseCohortSample:
    """Sampled cohort with inclusion flags and IPW weights populated."""

    records: list[ObservedRecord]
    zeta: np.ndarray
    xi: np.ndarray
    p_s: float
    p_c: float


def draw_case_cohort(
    cohort: list[ObservedRecord], p_s: float, p_c: float, rng: np.random.Generator
) -> CaseCohortSample:
    """Sample the two phases and erase covariates outside the observed set."""
    if not cohort:
        raise ConfigError("cohort is empty")
    for name, p in (("p_s", p_s), ("p_c", p_c)):
        if not 0.0 < p <= 1.0:
            raise ConfigError(f"{name} must lie in (0, 1], got {p}")
    n = len(cohort)
    case = np.array([rec.is_case for rec in cohort])
    zeta = rng.random(n) < p_s
    # One uniform per subject keeps the draw count independent of who is eligible.
    xi = case & ~zeta & (rng.random(n) < p_c)
    observed = zeta | xi
    records = []
    for i, rec in enumerate(cohort):
        w = ipw_weight(rec.delta_L, rec.delta_I, int(observed[i]), p_s, p_c)
        if observed[i]:
            records.append(replace(rec, observed=1, weight=w))
        else:
            records.append(replace(rec, observed=0, z=None, weight=0.0))
    return CaseCohortSample(
        records=records, zeta=zeta.astype(int), xi=xi.astype(int), p_s=p_s, p_c=p_c
    )


def subcohort_only(sample: CaseCohortSample) -> list[ObservedRecord]:
    """Subcohort members only, reweighted to 1 for an unweighted fit."""
    return [
        replace(rec, weight=1.0)
        for rec, z in zip(sample.records, sample.zeta)
        if z == 1
    ]


def draw_srs(
    cohort: list[ObservedRecord], size: int, rng: np.random.Generator
) -> list[ObservedRecord]:
    """Simple random sample without replacement, in cohort order, weights 1."""
    if size > len(cohort):
        raise ConfigError(f"sample size {size} exceeds cohort size {len(cohort)}")
    idx = np.sort(rng.choice(len(cohort), size=size, replace=False))
    return [replace(cohort[i], weight=1.0) for i in idx]
