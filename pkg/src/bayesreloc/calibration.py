"""Gamma-based normalization of uncertainty traces into percentile scores.

A scene's population of covariance traces is strongly right-skewed and
strictly positive, so each channel (translation, rotation) gets its own
two-parameter gamma fit.  A new trace is then scored by its CDF percentile
within that population; percentiles from the two channels average into a
single comparable confidence score per scene.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import (
    InsufficientPopulation,
    InsufficientVariance,
    NoConvergence,
    NonPositiveValue,
    ParseError,
)
from .special import digamma, reg_lower_gamma, trigamma

if TYPE_CHECKING:
    from .mc_posterior import UncertaintyEstimate

MIN_POPULATION = 8
CALIBRATION_FORMAT = "bayesreloc-cal-v1"

# Newton iteration on the shape parameter stops when the step shrinks
# below this fraction of the current value.
_SHAPE_REL_TOL = 1e-10
_MAX_NEWTON_ITER = 100
# Log-moment gaps below this mean the population is numerically constant.
_MIN_LOG_MOMENT_GAP = 1e-12


@dataclass(frozen=True)
class GammaModel:
    """A fitted gamma distribution (shape k, scale theta).

    ``log_likelihood`` and ``iterations`` record how the fit went; they do
    not affect scoring.
    """

    shape: float
    scale: float
    log_likelihood: float = math.nan
    iterations: int = 0

    def __post_init__(self):
        ok = math.isfinite(self.shape) and math.isfinite(self.scale)
        if not (ok and self.shape > 0.0 and self.scale > 0.0):
            raise ValueError(
                f"gamma parameters must be positive and finite, got shape={self.shape!r} scale={self.scale!r}"
            )

    def mean(self) -> float:
        return self.shape * self.scale


@dataclass(frozen=True)
class CalibrationModel:
    """Per-scene gamma fits for the two uncertainty channels."""

    trans: GammaModel
    rot: GammaModel
    source_scene: str
    population_size: int
    trans_ks: float = math.nan
    rot_ks: float = math.nan

    def __post_init__(self):
        if self.population_size < MIN_POPULATION:
            raise ValueError(
                f"population_size {self.population_size} below minimum {MIN_POPULATION}"
            )


@dataclass(frozen=True)
class ZScore:
    """CDF percentiles of an uncertainty estimate within a scene population.

    Each field lies in [0, 1]; lower means more confident.  ``combined``
    is the plain average of the two channels.
    """

    trans_pct: float
    rot_pct: float
    combined: float


def fit_gamma(values: Sequence[float]) -> GammaModel:
    """Maximum-likelihood gamma fit.

    Solves ln(k) - psi(k) = ln(mean) - mean(ln v) for the shape by Newton
    iteration from the closed-form starting point
    k0 = (3 - s + sqrt((s - 3)^2 + 24 s)) / (12 s); the scale is mean / k.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"values must be a flat sequence, got shape {v.shape}")
    if v.size < MIN_POPULATION:
        raise InsufficientPopulation(f"need at least {MIN_POPULATION} values, got {v.size}")
    if not np.all(np.isfinite(v)) or np.any(v <= 0.0):
        raise NonPositiveValue("gamma fitting requires strictly positive, finite values")

    mean = float(v.mean())
    mean_log = float(np.log(v).mean())
    s = math.log(mean) - mean_log
    if s < _MIN_LOG_MOMENT_GAP:
        raise InsufficientVariance(
            f"log-moment gap {s!r} is too small; the population is nearly constant"
        )

    k = (3.0 - s + math.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    iterations = 0
    converged = False
    for iterations in range(1, _MAX_NEWTON_ITER + 1):
        step = (math.log(k) - digamma(k) - s) / (1.0 / k - trigamma(k))
        k_next = k - step
        if k_next <= 0.0:
            k_next = k / 2.0
        converged = abs(k_next - k) < _SHAPE_REL_TOL * k
        k = k_next
        if converged:
            break
    if not converged:
        raise NoConvergence(f"gamma shape solve did not converge within {_MAX_NEWTON_ITER} steps")

    theta = mean / k
    ll = float(
        (k - 1.0) * v.size * mean_log
        - v.sum() / theta
        - v.size * (math.lgamma(k) + k * math.log(theta))
    )
    return GammaModel(shape=k, scale=theta, log_likelihood=ll, iterations=iterations)


def gamma_cdf(model: GammaModel, x: float) -> float:
    """P(X <= x) under the fitted gamma; 0 for non-positive x."""
    if x <= 0.0:
        return 0.0
    return reg_lower_gamma(model.shape, x / model.scale)


def ks_statistic(model: GammaModel, values: Sequence[float]) -> float:
    """One-sample Kolmogorov-Smirnov distance between data and the fit."""
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    if n == 0:
        raise ValueError("cannot compute a KS statistic on an empty sample")
    cdf = np.array([gamma_cdf(model, float(x)) for x in v])
    steps = np.arange(n, dtype=float)
    upper = float(np.max((steps + 1.0) / n - cdf))
    lower = float(np.max(cdf - steps / n))
    return max(upper, lower)


def calibrate(scene_traces: Sequence[tuple[float, float]], scene_id: str) -> CalibrationModel:
    """Fit independent gamma models to a scene's two trace channels.

    ``scene_traces`` holds (trans_trace, rot_trace) pairs from one scene.
    A KS distance per channel is recorded as a goodness-of-fit diagnostic.
    """
    arr = np.asarray(scene_traces, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(
            f"scene_traces must be (trans_trace, rot_trace) pairs, got shape {arr.shape}"
        )
    if arr.shape[0] < MIN_POPULATION:
        raise InsufficientPopulation(
            f"need at least {MIN_POPULATION} trace pairs, got {arr.shape[0]}"
        )
    trans = fit_gamma(arr[:, 0])
    rot = fit_gamma(arr[:, 1])
    return CalibrationModel(
        trans=trans,
        rot=rot,
        source_scene=scene_id,
        population_size=int(arr.shape[0]),
        trans_ks=ks_statistic(trans, arr[:, 0]),
        rot_ks=ks_statistic(rot, arr[:, 1]),
    )


def z_score(model: CalibrationModel, estimate: "UncertaintyEstimate") -> ZScore:
    """Percentile of each trace within the calibration population."""
    t = gamma_cdf(model.trans, estimate.trans_trace)
    r = gamma_cdf(model.rot, estimate.rot_trace)
    return ZScore(trans_pct=t, rot_pct=r, combined=0.5 * (t + r))


def _gamma_to_dict(g: GammaModel) -> dict:
    return {
        "shape": g.shape,
        "scale": g.scale,
        "log_likelihood": g.log_likelihood,
        "iterations": g.iterations,
    }


def _gamma_from_dict(d: dict) -> GammaModel:
    return GammaModel(
        shape=float(d["shape"]),
        scale=float(d["scale"]),
        log_likelihood=float(d.get("log_likelihood", math.nan)),
        iterations=int(d.get("iterations", 0)),
    )


def save_calibration(path: str | os.PathLike, model: CalibrationModel) -> None:
    doc = {
        "format": CALIBRATION_FORMAT,
        "source_scene": model.source_scene,
        "population_size": model.population_size,
        "trans": _gamma_to_dict(model.trans),
        "rot": _gamma_to_dict(model.rot),
        "trans_ks": model.trans_ks,
        "rot_ks": model.rot_ks,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_calibration(path: str | os.PathLike) -> CalibrationModel:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid calibration file: {e.msg}", line=e.lineno) from e
    if doc.get("format") != CALIBRATION_FORMAT:
        raise ParseError(
            f"unsupported calibration format {doc.get('format')!r}, expected {CALIBRATION_FORMAT!r}"
        )
    return CalibrationModel(
        trans=_gamma_from_dict(doc["trans"]),
        rot=_gamma_from_dict(doc["rot"]),
        source_scene=str(doc["source_scene"]),
        population_size=int(doc["population_size"]),
        trans_ks=float(doc.get("trans_ks", math.nan)),
        rot_ks=float(doc.get("rot_ks", math.nan)),
    )
