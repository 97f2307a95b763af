"""Monte Carlo dropout inference: pose sampling and scatter uncertainty.

Repeated stochastic forward passes through a dropout network give a cloud
of pose hypotheses.  The point estimate is the sample mean (componentwise
for position, hemisphere-aligned mean for orientation) and the uncertainty
per channel is the trace of the sample covariance.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ParseError
from .geometry import Pose, UnitQuaternion, Vec3, normalize, quaternion_mean
from .regressor import NetworkParams, draw_mask, forward

# Scatter statistics stop improving noticeably past this many passes.
DEFAULT_NUM_SAMPLES = 40
MAX_NUM_SAMPLES = 128
SAMPLE_DUMP_FORMAT = "bayesreloc-samples-v1"
# Componentwise spread at or below this is floating-point noise, not
# scatter; the channel then reports exactly zero trace and the common row
# as its mean (averaging bit-identical rows would drift by an ulp).
IDENTICAL_TOL = 1e-12


@dataclass(frozen=True)
class PoseSampleSet:
    """Stochastic pose hypotheses for one query.

    ``quaternions`` rows are unit norm and hemisphere-aligned to row 0.
    """

    positions: np.ndarray
    quaternions: np.ndarray
    sample_count: int
    master_seed: int


@dataclass(frozen=True)
class UncertaintyEstimate:
    """Mean pose and covariance-trace uncertainty of a sample set.

    ``degenerate`` marks sets with no usable scatter (a single sample, or
    all samples identical, as with dropout_p = 0); traces are then zero.
    """

    trans_trace: float
    rot_trace: float
    trans_mean: Vec3
    rot_mean: UnitQuaternion
    degenerate: bool = False


def sample_posterior(
    net: NetworkParams,
    x,
    num_samples: int = DEFAULT_NUM_SAMPLES,
    master_seed: int = 0,
) -> PoseSampleSet:
    """Run ``num_samples`` stochastic passes with fresh masks.

    Sample i uses the mask derived from (master_seed, i), so the set is a
    pure function of its arguments.
    """
    if not (1 <= num_samples <= MAX_NUM_SAMPLES):
        raise ValueError(f"num_samples must be in [1, {MAX_NUM_SAMPLES}], got {num_samples}")
    positions = np.empty((num_samples, 3))
    quaternions = np.empty((num_samples, 4))
    for i in range(num_samples):
        mask = draw_mask(net, master_seed, i)
        out = forward(net, x, mask)
        positions[i] = out[:3]
        row = normalize(out[3:]).as_array()
        if i > 0 and float(row @ quaternions[0]) < 0.0:
            row = -row
        quaternions[i] = row
    return PoseSampleSet(positions, quaternions, num_samples, master_seed)


def _canonical_sign(q: UnitQuaternion) -> UnitQuaternion:
    """Flip sign so the first nonzero component is positive."""
    for c in (q.w, q.x, q.y, q.z):
        if c > 0.0:
            return q
        if c < 0.0:
            return q.negated()
    return q


def _aligned_rows(quaternions: np.ndarray) -> np.ndarray:
    """Hemisphere-align rows to row 0.

    sample_posterior already stores aligned rows, but estimates must stay
    unchanged if a caller hands in a set with some signs flipped, so the
    scatter statistics re-align defensively.
    """
    rows = np.array(quaternions, dtype=float)
    flip = rows @ rows[0] < 0.0
    rows[flip] = -rows[flip]
    return rows


def estimate(samples: PoseSampleSet) -> UncertaintyEstimate:
    """Mean pose and per-channel covariance traces.

    Traces use the N-1 denominator.  The rotation channel is the trace of
    the 4x4 covariance of the aligned quaternion components; the returned
    mean orientation is sign-canonicalized, so flipping signs of any input
    samples never changes the estimate.
    """
    n = samples.sample_count
    positions = samples.positions
    quats = _aligned_rows(samples.quaternions)
    pos_identical = bool(np.max(np.abs(positions - positions[0])) <= IDENTICAL_TOL)
    rot_identical = bool(np.max(np.abs(quats - quats[0])) <= IDENTICAL_TOL)

    if pos_identical:
        trans_mean = Vec3.from_array(positions[0])
    else:
        trans_mean = Vec3.from_array(positions.mean(axis=0))
    if rot_identical:
        rot_mean = _canonical_sign(normalize(quats[0]))
    else:
        rot_mean = _canonical_sign(
            quaternion_mean([UnitQuaternion.from_array(row) for row in quats])
        )

    if n < 2:
        return UncertaintyEstimate(0.0, 0.0, trans_mean, rot_mean, degenerate=True)
    trans_trace = 0.0 if pos_identical else float(positions.var(axis=0, ddof=1).sum())
    rot_trace = 0.0 if rot_identical else float(quats.var(axis=0, ddof=1).sum())
    degenerate = trans_trace == 0.0 and rot_trace == 0.0
    return UncertaintyEstimate(trans_trace, rot_trace, trans_mean, rot_mean, degenerate=degenerate)


def estimate_determinant(samples: PoseSampleSet) -> tuple[float, float]:
    """Determinants of the two sample covariance matrices.

    Kept alongside the traces for comparison: a cloud stretched along one
    axis keeps a large trace but its determinant collapses toward zero, so
    determinants understate elongated scatter.
    """
    if samples.sample_count < 2:
        raise ValueError("need at least 2 samples for covariance determinants")
    trans_cov = np.cov(samples.positions, rowvar=False, ddof=1)
    rot_cov = np.cov(_aligned_rows(samples.quaternions), rowvar=False, ddof=1)
    return float(np.linalg.det(trans_cov)), float(np.linalg.det(rot_cov))


def localize(
    net: NetworkParams,
    x,
    num_samples: int = DEFAULT_NUM_SAMPLES,
    master_seed: int = 0,
) -> tuple[Pose, UncertaintyEstimate]:
    """Sample, average, and score one query in a single call."""
    samples = sample_posterior(net, x, num_samples, master_seed)
    est = estimate(samples)
    return Pose(est.trans_mean, est.rot_mean), est


def write_sample_dump(path: str | os.PathLike, samples: PoseSampleSet, query_id: str) -> None:
    """Write one query's samples as delimited text for external analysis."""
    if any(ch.isspace() for ch in query_id):
        raise ValueError(f"query_id must not contain whitespace, got {query_id!r}")
    with open(path, "w", encoding="utf-8") as f:
        f.write(
            f"# {SAMPLE_DUMP_FORMAT} query_id={query_id} "
            f"num_samples={samples.sample_count} master_seed={samples.master_seed}\n"
        )
        f.write("# sample_index px py pz qw qx qy qz\n")
        for i in range(samples.sample_count):
            p = samples.positions[i]
            q = samples.quaternions[i]
            fields = [str(i)] + [repr(float(v)) for v in (*p, *q)]
            f.write(" ".join(fields) + "\n")


def read_sample_dump(path: str | os.PathLike) -> tuple[str, PoseSampleSet]:
    """Parse a sample dump back into (query_id, PoseSampleSet)."""
    with open(path, "r", encoding="utf-8") as f:
        lines = f.readlines()
    if not lines:
        raise ParseError("empty sample dump", line=1)
    head = lines[0].strip().lstrip("# ").split()
    if not head or head[0] != SAMPLE_DUMP_FORMAT:
        raise ParseError(f"expected header tag {SAMPLE_DUMP_FORMAT!r}", line=1)
    meta = dict(kv.split("=", 1) for kv in head[1:])
    try:
        query_id = meta["query_id"]
        count = int(meta["num_samples"])
        master_seed = int(meta["master_seed"])
    except (KeyError, ValueError) as e:
        raise ParseError(f"bad sample dump header: {e}", line=1) from e

    positions = np.empty((count, 3))
    quaternions = np.empty((count, 4))
    seen = 0
    for lineno, raw in enumerate(lines[1:], start=2):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 8:
            raise ParseError(f"expected 8 fields, got {len(parts)}", line=lineno)
        try:
            idx = int(parts[0])
            values = [float(v) for v in parts[1:]]
        except ValueError as e:
            raise ParseError(str(e), line=lineno) from e
        if not (0 <= idx < count):
            raise ParseError(f"sample index {idx} out of range [0, {count})", line=lineno)
        positions[idx] = values[:3]
        quaternions[idx] = values[3:]
        seen += 1
    if seen != count:
        raise ParseError(f"header promised {count} samples but file has {seen}")
    return query_id, PoseSampleSet(positions, quaternions, count, master_seed)
