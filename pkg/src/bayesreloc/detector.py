"""Scene recognition by lowest calibrated uncertainty.

Given one trained network plus calibration per candidate scene, a query is
run through every model and assigned to the scene whose percentile score
is lowest: the model that finds the input least surprising.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .calibration import CalibrationModel, ZScore, z_score
from .mc_posterior import DEFAULT_NUM_SAMPLES, localize
from .regressor import NetworkParams
from .seeding import derive_seed

CONFUSION_FORMAT = "bayesreloc-confusion-v1"

# Scoring channels: the average percentile or either single channel.
CHANNELS = ("combined", "trans", "rot")


@dataclass(frozen=True)
class SceneModel:
    """A scene's network and its matching calibration."""

    scene_id: str
    network: NetworkParams
    calibration: CalibrationModel

    def __post_init__(self):
        if self.calibration.source_scene != self.scene_id:
            raise ValueError(
                f"calibration was fitted on {self.calibration.source_scene!r}, "
                f"but this model is for {self.scene_id!r}"
            )


@dataclass(frozen=True)
class DetectionResult:
    """Chosen scene plus every candidate's score.

    ``tie`` is set when another scene matched the winning score exactly;
    the winner is then the earliest such scene in the model list.
    """

    scene_id: str
    scores: list[tuple[str, ZScore]]
    tie: bool


def _scene_tag(scene_id: str) -> int:
    # Stable integer for seed derivation; independent of list order.
    return zlib.crc32(scene_id.encode("utf-8"))


def _channel_value(score: ZScore, channel: str) -> float:
    if channel == "combined":
        return score.combined
    if channel == "trans":
        return score.trans_pct
    if channel == "rot":
        return score.rot_pct
    raise ValueError(f"unknown channel {channel!r}, expected one of {CHANNELS}")


def detect(
    models: Sequence[SceneModel],
    x,
    num_samples: int = DEFAULT_NUM_SAMPLES,
    master_seed: int = 0,
    channel: str = "combined",
) -> DetectionResult:
    """Score a query under every scene model and pick the least uncertain.

    Each model's Monte Carlo seed derives from (master_seed, scene_id), so
    reordering the model list permutes scores without changing them.
    """
    if len(models) < 2:
        raise ValueError(f"need at least 2 scene models, got {len(models)}")
    ids = [m.scene_id for m in models]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate scene ids in model list: {ids}")

    scores = []
    for model in models:
        seed = derive_seed(master_seed, _scene_tag(model.scene_id))
        _, est = localize(model.network, x, num_samples, seed)
        scores.append((model.scene_id, z_score(model.calibration, est)))

    values = [_channel_value(s, channel) for _, s in scores]
    best = min(range(len(values)), key=lambda i: values[i])
    tie = any(i != best and values[i] == values[best] for i in range(len(values)))
    return DetectionResult(scene_id=ids[best], scores=scores, tie=tie)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with true scenes as rows and predicted scenes as columns."""

    scene_ids: list[str]
    counts: np.ndarray

    def __post_init__(self):
        s = len(self.scene_ids)
        if self.counts.shape != (s, s):
            raise ValueError(f"counts shape {self.counts.shape} does not match {s} scenes")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.counts.sum())


def confusion(
    models: Sequence[SceneModel],
    test_sets: Mapping[str, Sequence],
    num_samples: int = DEFAULT_NUM_SAMPLES,
    seed: int = 0,
    channel: str = "combined",
) -> ConfusionMatrix:
    """Classify every query of every scene; rows index the true scene.

    ``test_sets`` maps scene_id to that scene's query feature vectors.
    Every scene appearing there must have a model.
    """
    ids = [m.scene_id for m in models]
    index = {sid: i for i, sid in enumerate(ids)}
    for sid in test_sets:
        if sid not in index:
            raise ValueError(f"no model for scene {sid!r}")

    counts = np.zeros((len(ids), len(ids)), dtype=int)
    for sid, queries in test_sets.items():
        for qi, x in enumerate(queries):
            if len(models) == 1:
                # A lone candidate matches every query; there is nothing
                # to score against.
                counts[0, 0] += 1
                continue
            result = detect(
                models, x, num_samples, derive_seed(seed, _scene_tag(sid), qi), channel
            )
            counts[index[sid], index[result.scene_id]] += 1
    return ConfusionMatrix(ids, counts)


def format_confusion(matrix: ConfusionMatrix) -> str:
    """Delimited text: header row/column of scene ids plus an accuracy line."""
    lines = [f"# {CONFUSION_FORMAT}"]
    lines.append("\t".join(["true\\pred"] + matrix.scene_ids))
    for sid, row in zip(matrix.scene_ids, matrix.counts):
        lines.append("\t".join([sid] + [str(int(v)) for v in row]))
    lines.append(f"accuracy {matrix.accuracy!r}")
    return "\n".join(lines) + "\n"
