"""Exact Shapley attribution of the covariate network with an interventional
value function: coalition features come from the explained sample, the rest
are marginalized over background rows.

Exact enumeration is used up to 12 features (4096 coalitions); beyond that a
permutation-sampling estimator of the same quantity is provided.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .likelihood import ObservedRecord
from .model import CovariateNetwork, network_forward

EXACT_FEATURE_LIMIT = 12


@dataclass(frozen=True)
class AttributionResult:
    """Per-sample feature contributions; base + row sum reproduces each prediction."""

    base: float
    values: np.ndarray  # (n_samples, n_features)
    feature_names: tuple[str, ...]


def shap_base(net: CovariateNetwork, background) -> float:
    """Expected prediction over the background rows."""
    bg = np.atleast_2d(np.asarray(background, dtype=float))
    if bg.shape[0] == 0:
        raise ConfigError("background is empty")
    return float(np.mean(network_forward(net, bg)))


def _coalition_values(net: CovariateNetwork, z: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Mean prediction for every coalition bitmask, shape (2**p,)."""
    p = len(z)
    n_bg = background.shape[0]
    subsets = ((np.arange(2**p)[:, None] >> np.arange(p)[None, :]) & 1).astype(bool)
    composed = np.where(subsets[:, None, :], z[None, None, :], background[None, :, :])
    out = network_forward(net, composed.reshape(-1, p))
    return out.reshape(2**p, n_bg).mean(axis=1)


def shap_exact(net: CovariateNetwork, z, background) -> np.ndarray:
    """Exact Shapley values by full coalition enumeration (p <= 12)."""
    z = np.asarray(z, dtype=float)
    bg = np.atleast_2d(np.asarray(background, dtype=float))
    p = len(z)
    if p > EXACT_FEATURE_LIMIT:
        raise ConfigError(f"{p} features exceed the exact enumeration bound {EXACT_FEATURE_LIMIT}; use shap_sampled")
    if bg.shape[0] == 0:
        raise ConfigError("background is empty")
    v = _coalition_values(net, z, bg)
    sizes = np.array([bin(mask).count("1") for mask in range(2**p)])
    # |S|! (p - |S| - 1)! / p! for coalitions S not containing the feature
    size_weight = np.array(
        [math.factorial(s) * math.factorial(p - s - 1) / math.factorial(p) for s in range(p)]
    )
    phi = np.zeros(p)
    masks = np.arange(2**p)
    for j in range(p):
        without = masks[(masks >> j) & 1 == 0]
        with_j = without | (1 << j)
        phi[j] = np.sum(size_weight[sizes[without]] * (v[with_j] - v[without]))
    return phi


def shap_sampled(
    net: CovariateNetwork,
    z,
    background,
    n_permutations: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Permutation-sampling estimate of the exact Shapley values.

    When the requested budget covers all p! orderings the full set is
    enumerated once, which reproduces shap_exact.
    """
    if n_permutations < 1:
        raise ConfigError(f"need at least one permutation, got {n_permutations}")
    z = np.asarray(z, dtype=float)
    bg = np.atleast_2d(np.asarray(background, dtype=float))
    p = len(z)
    total = math.factorial(p)
    if total <= n_permutations:
        perms = itertools.permutations(range(p))
        count = total
    else:
        perms = (rng.permutation(p) for _ in range(n_permutations))
        count = n_permutations

    phi = np.zeros(p)
    for perm in perms:
        stack = np.repeat(bg[None, :, :], p + 1, axis=0)
        for pos, feat in enumerate(perm):
            stack[pos + 1 :, :, feat] = z[feat]
        v = network_forward(net, stack.reshape(-1, p)).reshape(p + 1, -1).mean(axis=1)
        for pos, feat in enumerate(perm):
            phi[feat] += v[pos + 1] - v[pos]
    return phi / count


def attribute(
    net: CovariateNetwork,
    Z,
    background,
    feature_names: tuple[str, ...] | None = None,
) -> AttributionResult:
    """Exact attribution of every row of Z against the shared background."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    names = tuple(feature_names) if feature_names is not None else tuple(f"z{j+1}" for j in range(Z.shape[1]))
    if len(names) != Z.shape[1]:
        raise ConfigError("feature name count does not match the covariate dimension")
    values = np.vstack([shap_exact(net, row, background) for row in Z])
    return AttributionResult(base=shap_base(net, background), values=values, feature_names=names)


def shap_summary(result: AttributionResult) -> list[tuple[str, float]]:
    """Features ranked by mean absolute contribution, ties kept in index order."""
    mean_abs = np.mean(np.abs(result.values), axis=0)
    order = np.argsort(-mean_abs, kind="stable")
    return [(result.feature_names[j], float(mean_abs[j])) for j in order]


def _partner_statistic(z_j: np.ndarray, z_k: np.ndarray, phi_j: np.ndarray) -> float:
    """Variance across z_j deciles of the high-vs-low z_k contrast in phi_j."""
    edges = np.quantile(z_j, np.linspace(0.0, 1.0, 11))
    edges = np.unique(edges)
    if len(edges) < 2:
        return -np.inf
    bins = np.clip(np.searchsorted(edges, z_j, side="right") - 1, 0, len(edges) - 2)
    contrasts = []
    for b in range(len(edges) - 1):
        in_bin = bins == b
        if np.sum(in_bin) < 2:
            continue
        zk_bin = z_k[in_bin]
        med = np.median(zk_bin)
        high = in_bin & (z_k > med)
        low = in_bin & (z_k <= med)
        if not (high.any() and low.any()):
            continue
        contrasts.append(float(np.mean(phi_j[high]) - np.mean(phi_j[low])))
    if len(contrasts) < 2:
        return -np.inf
    return float(np.var(contrasts))


def shap_dependence(
    result: AttributionResult, covariate_matrix, feature_j: int
) -> tuple[int | None, np.ndarray]:
    """Dependence-plot export for one feature.

    Returns the partner feature (the one whose high/low split moves phi_j
    most variably across deciles of z_j; None with fewer than 20 samples)
    and one row per sample: (z_j, phi_j, partner id, partner value).
    """
    Z = np.atleast_2d(np.asarray(covariate_matrix, dtype=float))
    n, p = Z.shape
    if result.values.shape != (n, p):
        raise ConfigError("attribution matrix does not match the covariate matrix")
    z_j = Z[:, feature_j]
    phi_j = result.values[:, feature_j]

    partner = None
    if n >= 20:
        stats = np.full(p, -np.inf)
        for k in range(p):
            if k != feature_j:
                stats[k] = _partner_statistic(z_j, Z[:, k], phi_j)
        if np.isfinite(stats).any():
            partner = int(np.argmax(stats))

    partner_col = Z[:, partner] if partner is not None else np.full(n, np.nan)
    partner_id = float(partner) if partner is not None else np.nan
    rows = np.column_stack([z_j, phi_j, np.full(n, partner_id), partner_col])
    return partner, rows


def draw_background(
    records: list[ObservedRecord], size: int, rng: np.random.Generator
) -> np.ndarray:
    """Background rows drawn from observed records, stratified so the case
    fraction matches the source sample to within one subject."""
    obs = [rec for rec in records if rec.observed == 1]
    if not obs:
        raise ConfigError("no observed records to draw a background from")
    size = min(size, len(obs))
    cases = [rec for rec in obs if rec.is_case]
    controls = [rec for rec in obs if not rec.is_case]
    n_cases = round(size * len(cases) / len(obs))
    n_cases = min(n_cases, len(cases))
    n_controls = min(size - n_cases, len(controls))
    chosen = []
    if n_cases:
        chosen += [cases[i] for i in rng.choice(len(cases), size=n_cases, replace=False)]
    if n_controls:
        chosen += [controls[i] for i in rng.choice(len(controls), size=n_controls, replace=False)]
    return np.vstack([rec.z for rec in chosen])
