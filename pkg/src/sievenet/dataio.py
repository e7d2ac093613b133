"""File formats: record CSV, model JSON, and TOML run configuration.

The record schema is ``L,R,delta_L,delta_I,observed,z1,...,zp`` with the
right-censoring sentinel written as the literal ``inf`` and unobserved
covariates left empty.  Weights are never stored; they are recomputed from
the sampling probabilities at load time.
"""

from __future__ import annotations

import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .likelihood import ObservedRecord, ipw_weight
from .model import BernsteinHazard, CovariateNetwork, TransformationSpec
from .simulate import SimConfig
from .train import FitResult, Hyperparameters


def write_records_csv(path, records: list[ObservedRecord]) -> None:
    dims = {len(rec.z) for rec in records if rec.z is not None}
    if len(dims) > 1:
        raise ConfigError(f"inconsistent covariate dimensions: {sorted(dims)}")
    p = dims.pop() if dims else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["L", "R", "delta_L", "delta_I", "observed"] + [f"z{j+1}" for j in range(p)])
        for rec in records:
            row = [
                repr(rec.L),
                "inf" if math.isinf(rec.R) else repr(rec.R),
                rec.delta_L,
                rec.delta_I,
                rec.observed,
            ]
            row += [repr(float(v)) for v in rec.z] if rec.z is not None else [""] * p
            writer.writerow(row)


def read_records_csv(path, p_s: float = 1.0, p_c: float = 1.0) -> list[ObservedRecord]:
    """Load records, recomputing IPW weights from the design probabilities."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:5] != ["L", "R", "delta_L", "delta_I", "observed"]:
            raise ConfigError(f"unexpected record header in {path}: {header[:5]}")
        p = len(header) - 5
        for row in reader:
            delta_L, delta_I, observed = int(row[2]), int(row[3]), int(row[4])
            z_fields = row[5 : 5 + p]
            z = np.array([float(v) for v in z_fields]) if observed == 1 else None
            records.append(
                ObservedRecord(
                    L=float(row[0]),
                    R=float(row[1]),
                    delta_L=delta_L,
                    delta_I=delta_I,
                    observed=observed,
                    z=z,
                    weight=ipw_weight(delta_L, delta_I, observed, p_s, p_c),
                )
            )
    return records


def save_model_json(path, fit_result: FitResult) -> None:
    doc = {
        "spec": {"r": fit_result.spec.r},
        "hazard": {
            "m": fit_result.hazard.m,
            "c": fit_result.hazard.c,
            "u": fit_result.hazard.u,
            "eta": fit_result.hazard.eta.tolist(),
        },
        "network": {
            "hidden_layers": fit_result.net.hidden_layers,
            "widths": list(fit_result.net.widths),
            "weights": [w.ravel().tolist() for w in fit_result.net.weights],
            "biases": [b.tolist() for b in fit_result.net.biases],
            "dropout_rate": fit_result.net.dropout_rate,
            "output_bias": fit_result.net.output_bias,
        },
        "center": fit_result.center,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_model_json(path) -> FitResult:
    with open(path) as fh:
        doc = json.load(fh)
    haz = doc["hazard"]
    netdoc = doc["network"]
    widths = netdoc["widths"]
    weights = [
        np.array(flat).reshape(widths[h + 1], widths[h])
        for h, flat in enumerate(netdoc["weights"])
    ]
    biases = [np.array(b) for b in netdoc["biases"]]
    net = CovariateNetwork(
        weights=weights,
        biases=biases,
        dropout_rate=netdoc.get("dropout_rate", 0.0),
        output_bias=netdoc.get("output_bias", True),
    )
    hazard = BernsteinHazard(m=haz["m"], c=haz["c"], u=haz["u"], eta=np.array(haz["eta"]))
    return FitResult(
        hazard=hazard,
        net=net,
        spec=TransformationSpec(doc["spec"]["r"]),
        center=doc["center"],
    )


@dataclass(frozen=True)
class RunConfig:
    """Settings for the simulation/fitting harness, mirrored by the TOML file."""

    sim: SimConfig
    design: str = "case_cohort"
    p_s: float = 0.2
    p_c: float = 1.0
    hp: Hyperparameters = field(default_factory=Hyperparameters)
    hp_ltm: Hyperparameters | None = None  # linear baseline is tuned separately
    base_seed: int = 0
    reps: int = 1
    train_frac: float = 0.9
    stratified: bool = True
    methods: tuple[str, ...] = ("pro", "sub", "srs", "ltm")
    monitor: str = "train"
    val_frac: float = 0.1
    jobs: int = 1
    tau_cache: str | None = None
    support_mode: str = "tau"

    def __post_init__(self):
        if self.design not in ("case_cohort", "generalized", "none"):
            raise ConfigError(f"unknown design {self.design!r}")
        if self.support_mode not in ("tau", "observed"):
            raise ConfigError(f"unknown support mode {self.support_mode!r}")
        if self.design == "generalized" and not self.p_c < 1.0:
            raise ConfigError("the generalized design requires p_c < 1")
        if self.reps < 1:
            raise ConfigError(f"need at least one replication, got {self.reps}")
        if not 0.0 < self.train_frac < 1.0:
            raise ConfigError(f"train fraction must lie in (0, 1), got {self.train_frac}")
        unknown = set(self.methods) - {"pro", "sub", "srs", "ltm"}
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}")


def _build(cls, table: dict, what: str):
    try:
        return cls(**table)
    except TypeError as err:
        raise ConfigError(f"bad {what} section: {err}") from None


def load_run_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    if "sim" not in doc:
        raise ConfigError(f"{path} is missing the [sim] table")
    sim = _build(SimConfig, doc.pop("sim"), "sim")
    hp = _build(Hyperparameters, doc.pop("hp", {}), "hp")
    hp_ltm = _build(Hyperparameters, doc.pop("hp_ltm"), "hp_ltm") if "hp_ltm" in doc else None
    if "methods" in doc:
        doc["methods"] = tuple(doc["methods"])
    return _build(RunConfig, {**doc, "sim": sim, "hp": hp, "hp_ltm": hp_ltm}, "run config")


def load_grid(path) -> list[Hyperparameters]:
    """Expand a TOML of per-field value lists into the full grid, in
    declaration order (first key varies slowest)."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    if not doc:
        raise ConfigError(f"{path} defines an empty grid")
    keys = list(doc.keys())
    value_lists = []
    for key in keys:
        vals = doc[key]
        value_lists.append(vals if isinstance(vals, list) else [vals])
    grid = []
    import itertools

    for combo in itertools.product(*value_lists):
        grid.append(_build(Hyperparameters, dict(zip(keys, combo)), "grid point"))
    return grid


def load_tau_cache(path) -> dict:
    if path is None or not Path(path).exists():
        return {}
    with open(path) as fh:
        return {tuple(json.loads(k)): v for k, v in json.load(fh).items()}


def save_tau_cache(path, cache: dict) -> None:
    if path is None:
        return
    with open(path, "w") as fh:
        json.dump({json.dumps(list(k)): v for k, v in cache.items()}, fh, indent=1)
