"""Model primitives: logarithmic transformation family, monotone Bernstein
hazard, and the ReLU covariate network.

Everything here is a pure function of explicit inputs; nothing mutates the
dataclasses after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

# Below this the transformation is evaluated at its r -> 0 limit to avoid 0/0.
_R_ZERO = 1e-12


@dataclass(frozen=True)
class TransformationSpec:
    """Logarithmic transformation family G(x) = log(1 + r*x)/r, with G(x) = x at r = 0."""

    r: float = 0.0

    def __post_init__(self):
        if not (self.r >= 0.0 and math.isfinite(self.r)):
            raise ConfigError(f"transformation index must be a finite nonnegative real, got {self.r}")


def transform_G(spec: TransformationSpec, x):
    """Apply the transformation to a nonnegative scalar or array."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("transform_G requires x >= 0")
    if spec.r < _R_ZERO:
        out = x
    else:
        out = np.log1p(spec.r * x) / spec.r
    return float(out) if out.ndim == 0 else out


def transform_G_deriv(spec: TransformationSpec, x):
    """dG/dx = 1/(1 + r*x); equals 1 everywhere at r = 0."""
    x = np.asarray(x, dtype=float)
    if spec.r < _R_ZERO:
        out = np.ones_like(x)
    else:
        out = 1.0 / (1.0 + spec.r * x)
    return float(out) if out.ndim == 0 else out


def transform_G_inverse(spec: TransformationSpec, y):
    """Inverse of the transformation: x with G(x) = y."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("transform_G_inverse requires y >= 0")
    if spec.r < _R_ZERO:
        out = y
    else:
        out = np.expm1(spec.r * y) / spec.r
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BernsteinHazard:
    """Nondecreasing cumulative hazard on [c, u] spanned by Bernstein basis
    polynomials of degree m.

    The free parameters ``eta`` are unconstrained; the basis coefficients are
    the cumulative sums phi_k = sum_{j<=k} exp(eta_j), which enforces
    0 < phi_0 <= ... <= phi_m for finite eta.
    """

    m: int
    c: float
    u: float
    eta: np.ndarray

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError(f"Bernstein degree must be >= 1, got {self.m}")
        if not (0.0 <= self.c < self.u):
            raise ConfigError(f"hazard support must satisfy 0 <= c < u, got [{self.c}, {self.u}]")
        eta = np.asarray(self.eta, dtype=float)
        if eta.shape != (self.m + 1,):
            raise ConfigError(f"eta must have length m+1 = {self.m + 1}, got shape {eta.shape}")
        object.__setattr__(self, "eta", eta)

    @classmethod
    def from_coefficients(cls, phi, c: float, u: float) -> "BernsteinHazard":
        """Build from explicit nondecreasing coefficients (zero increments allowed)."""
        phi = np.asarray(phi, dtype=float)
        increments = np.diff(phi, prepend=0.0)
        if np.any(increments < 0):
            raise ConfigError("coefficients must be nonnegative and nondecreasing")
        with np.errstate(divide="ignore"):
            eta = np.log(increments)
        return cls(m=len(phi) - 1, c=c, u=u, eta=eta)

    def coefficients(self) -> np.ndarray:
        return np.cumsum(np.exp(self.eta))


def bernstein_basis(m: int, c: float, u: float, t) -> np.ndarray:
    """Bernstein basis row(s) B_0..B_m at time(s) t in [c, u].

    Returns shape (m+1,) for scalar t and (n, m+1) for a length-n array.
    """
    if m < 1:
        raise ConfigError(f"Bernstein degree must be >= 1, got {m}")
    if not c < u:
        raise ConfigError(f"support must satisfy c < u, got [{c}, {u}]")
    t = np.asarray(t, dtype=float)
    if np.any(t < c) or np.any(t > u):
        raise ValueError(f"time outside hazard support [{c}, {u}]")
    s = (t - c) / (u - c)
    k = np.arange(m + 1)
    coef = np.array([math.comb(m, int(j)) for j in k], dtype=float)
    s_col = s[..., None]
    return coef * s_col**k * (1.0 - s_col) ** (m - k)


def hazard_eval(hazard: BernsteinHazard, t):
    """Evaluate the cumulative hazard at scalar or array t in [c, u]."""
    basis = bernstein_basis(hazard.m, hazard.c, hazard.u, t)
    out = basis @ hazard.coefficients()
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CovariateNetwork:
    """Fully connected ReLU network mapping a covariate vector to a scalar.

    ``weights[h]`` has shape (p_{h+1}, p_h) and ``biases[h]`` length p_{h+1}
    for layers h = 0..H, where H is the hidden-layer count.  When
    ``output_bias`` is False the final layer has no bias term (the linear
    transformation-model variant, whose intercept is absorbed by the hazard
    scale) and ``biases`` holds only the H hidden entries.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout_rate: float = 0.0
    output_bias: bool = True

    def __post_init__(self):
        if not self.weights:
            raise ConfigError("network needs at least one layer")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")
        weights = [np.asarray(w, dtype=float) for w in self.weights]
        biases = [np.asarray(b, dtype=float) for b in self.biases]
        n_bias = len(weights) if self.output_bias else len(weights) - 1
        if len(biases) != n_bias:
            raise ConfigError(f"expected {n_bias} bias vectors, got {len(biases)}")
        for h in range(len(weights) - 1):
            if weights[h + 1].shape[1] != weights[h].shape[0]:
                raise ConfigError(
                    f"layer shapes do not chain: W_{h} is {weights[h].shape}, W_{h+1} is {weights[h+1].shape}"
                )
        for h, b in enumerate(biases):
            if b.shape != (weights[h].shape[0],):
                raise ConfigError(f"bias {h} has shape {b.shape}, expected ({weights[h].shape[0]},)")
        if weights[-1].shape[0] != 1:
            raise ConfigError("output layer must have a single unit")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    @property
    def hidden_layers(self) -> int:
        return len(self.weights) - 1

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]


def forward_trace(
    net: CovariateNetwork, Z: np.ndarray, masks: list[np.ndarray] | None = None
) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Batched forward pass keeping intermediates for backpropagation.

    Z has shape (n, p0).  ``masks`` carries one 0/1 array of shape
    (n, p_{h+1}) per hidden layer; masked units output zero and survivors are
    scaled by 1/(1 - dropout_rate) so inference needs no rescaling.

    Returns (output of shape (n,), per-layer inputs, hidden pre-activations).
    """
    H = net.hidden_layers
    if masks is not None and len(masks) != H:
        raise ConfigError(f"expected {H} dropout masks, got {len(masks)}")
    keep_scale = 1.0 / (1.0 - net.dropout_rate) if net.dropout_rate > 0 else 1.0
    layer_inputs = [Z]
    pre_acts = []
    a = Z
    for h in range(H):
        pre = a @ net.weights[h].T + net.biases[h]
        pre_acts.append(pre)
        a = np.maximum(pre, 0.0)
        if masks is not None:
            a = a * masks[h] * keep_scale
        layer_inputs.append(a)
    out = a @ net.weights[H].T
    if net.output_bias:
        out = out + net.biases[H]
    return out[:, 0], layer_inputs, pre_acts


def network_forward(net: CovariateNetwork, z, masks: list[np.ndarray] | None = None):
    """Evaluate the network on a single covariate vector or an (n, p) batch."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Z = z[None, :] if single else z
    if Z.shape[1] != net.input_dim:
        raise ConfigError(f"input has {Z.shape[1]} features, network expects {net.input_dim}")
    if masks is not None and single:
        masks = [np.asarray(m, dtype=float)[None, :] for m in masks]
    out, _, _ = forward_trace(net, Z, masks)
    return float(out[0]) if single else out


def init_network(
    widths: tuple[int, ...],
    rng: np.random.Generator,
    dropout_rate: float = 0.0,
    output_bias: bool = True,
) -> CovariateNetwork:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization for all layers."""
    weights, biases = [], []
    for h in range(len(widths) - 1):
        fan_in = widths[h]
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(widths[h + 1], widths[h])))
        if output_bias or h < len(widths) - 2:
            biases.append(rng.uniform(-bound, bound, size=widths[h + 1]))
    return CovariateNetwork(weights=weights, biases=biases, dropout_rate=dropout_rate, output_bias=output_bias)
