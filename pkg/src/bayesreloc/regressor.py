"""Feed-forward pose regressor with Bernoulli dropout, trained by SGD.

The network maps a feature vector to a raw 7-vector (position plus an
unnormalized quaternion).  Dropout uses the inverted convention: a unit is
dropped with probability p, and surviving activations are scaled by
1 / (1 - p), so the maskless forward pass needs no weight rescaling.
Masks are pure functions of (master_seed, sample_index); training and
Monte Carlo sampling are therefore exactly reproducible.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .errors import (
    DegenerateQuaternion,
    InvalidArchitecture,
    NonFiniteLoss,
    ParseError,
    ShapeMismatch,
)
from .geometry import NORM_FLOOR, LossConfig, Pose
from .seeding import derive_rng

POSE_WIDTH = 7
CHECKPOINT_FORMAT = "bayesreloc-net-v1"
AUX_LOSS_WEIGHT = 0.3

Activation = Literal["relu", "identity"]

# A training example: (feature vector, ground-truth pose).
TrainExample = tuple[np.ndarray, Pose]


@dataclass(frozen=True)
class LayerSpec:
    """Width, activation, and dropout placement of one weight layer."""

    input_width: int
    output_width: int
    has_dropout: bool = False
    activation: Activation = "relu"

    def __post_init__(self):
        if self.input_width < 1 or self.output_width < 1:
            raise ValueError(f"layer widths must be >= 1, got {self.input_width}x{self.output_width}")
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class Layer:
    """One weight layer: weights are (output_width, input_width)."""

    spec: LayerSpec
    weights: np.ndarray
    bias: np.ndarray


@dataclass
class AuxHead:
    """Optional linear pose head tapped from a hidden activation.

    ``after_layer`` is the index of the trunk layer whose post-activation
    output feeds the head.  During training its loss joins the total with
    weight AUX_LOSS_WEIGHT.
    """

    after_layer: int
    weights: np.ndarray
    bias: np.ndarray
    has_dropout: bool = True


@dataclass
class NetworkParams:
    """All learnable state plus the dropout rate and the build seed."""

    layers: list[Layer]
    dropout_p: float
    seed: int
    aux: AuxHead | None = None

    @property
    def input_width(self) -> int:
        return self.layers[0].spec.input_width

    def dropout_layer_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.spec.has_dropout]

    def copy(self) -> "NetworkParams":
        layers = [Layer(l.spec, l.weights.copy(), l.bias.copy()) for l in self.layers]
        aux = None
        if self.aux is not None:
            aux = AuxHead(
                self.aux.after_layer,
                self.aux.weights.copy(),
                self.aux.bias.copy(),
                self.aux.has_dropout,
            )
        return NetworkParams(layers, self.dropout_p, self.seed, aux)


@dataclass(frozen=True)
class DropoutMask:
    """Keep/drop indicators for one stochastic pass.

    One vector per dropout-enabled trunk layer (in layer order), each as
    long as that layer's input; 0 drops the unit, 1 keeps it.
    """

    layer_masks: tuple[np.ndarray, ...]
    aux_mask: np.ndarray | None = None


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int
    epochs: int
    loss: LossConfig
    seed: int
    momentum: float = 0.9

    def __post_init__(self):
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0.0):
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate!r}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum!r}")


@dataclass
class NetworkGradients:
    """Per-parameter gradients, congruent to NetworkParams, plus the loss."""

    layers: list[tuple[np.ndarray, np.ndarray]]
    aux: tuple[np.ndarray, np.ndarray] | None
    mean_loss: float


@dataclass
class TrainResult:
    net: NetworkParams
    epoch_losses: list[float]


def build_network(
    specs: Sequence[LayerSpec],
    dropout_p: float,
    seed: int,
    aux_after: int | None = None,
) -> NetworkParams:
    """Initialize a network with uniform Glorot weights and zero biases.

    Weight entries are drawn from U(-a, a) with a = sqrt(6 / (fan_in +
    fan_out)).  The final layer must be identity with width POSE_WIDTH.
    """
    if len(specs) == 0:
        raise InvalidArchitecture("need at least one layer")
    for prev, nxt in zip(specs, specs[1:]):
        if prev.output_width != nxt.input_width:
            raise InvalidArchitecture(
                f"layer widths do not chain: {prev.output_width} -> {nxt.input_width}"
            )
    last = specs[-1]
    if last.output_width != POSE_WIDTH or last.activation != "identity":
        raise InvalidArchitecture(
            f"final layer must be identity with width {POSE_WIDTH}, "
            f"got {last.activation!r} with width {last.output_width}"
        )
    for i, spec in enumerate(specs):
        if spec.has_dropout and i < len(specs) - 2:
            raise InvalidArchitecture(
                f"dropout is only placed before the final two weight layers; layer {i} has it"
            )
    if not (0.0 <= dropout_p < 1.0):
        raise ValueError(f"dropout_p must be in [0, 1), got {dropout_p!r}")
    if aux_after is not None and not (0 <= aux_after < len(specs) - 1):
        raise InvalidArchitecture(
            f"aux_after must name a hidden layer in [0, {len(specs) - 2}], got {aux_after}"
        )

    rng = derive_rng(seed)
    layers = []
    for spec in specs:
        limit = math.sqrt(6.0 / (spec.input_width + spec.output_width))
        weights = rng.uniform(-limit, limit, size=(spec.output_width, spec.input_width))
        layers.append(Layer(spec, weights, np.zeros(spec.output_width)))

    aux = None
    if aux_after is not None:
        width = specs[aux_after].output_width
        limit = math.sqrt(6.0 / (width + POSE_WIDTH))
        aux = AuxHead(
            after_layer=aux_after,
            weights=rng.uniform(-limit, limit, size=(POSE_WIDTH, width)),
            bias=np.zeros(POSE_WIDTH),
        )
    return NetworkParams(layers, float(dropout_p), int(seed), aux)


def draw_mask(net: NetworkParams, master_seed: int, sample_index: int) -> DropoutMask:
    """Draw the keep/drop pattern for one stochastic pass.

    A pure function of (master_seed, sample_index): the same pair always
    yields the same mask regardless of how calls are ordered or batched.
    """
    rng = derive_rng(master_seed, sample_index)
    p = net.dropout_p
    layer_masks = []
    for layer in net.layers:
        if layer.spec.has_dropout:
            layer_masks.append((rng.random(layer.spec.input_width) >= p).astype(float))
    aux_mask = None
    if net.aux is not None and net.aux.has_dropout:
        aux_mask = (rng.random(net.aux.weights.shape[1]) >= p).astype(float)
    return DropoutMask(tuple(layer_masks), aux_mask)


def _check_input(net: NetworkParams, x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != (net.input_width,):
        raise ShapeMismatch(f"input shape {arr.shape} does not match network input ({net.input_width},)")
    return arr


def _check_mask(net: NetworkParams, mask: DropoutMask | None) -> DropoutMask | None:
    if mask is None:
        return None
    indices = net.dropout_layer_indices()
    if len(mask.layer_masks) != len(indices):
        raise ShapeMismatch(
            f"mask has {len(mask.layer_masks)} layer vectors, network has {len(indices)} dropout layers"
        )
    for vec, idx in zip(mask.layer_masks, indices):
        want = net.layers[idx].spec.input_width
        if vec.shape != (want,):
            raise ShapeMismatch(f"mask vector shape {vec.shape} does not fit layer {idx} input ({want},)")
    if net.aux is not None and net.aux.has_dropout:
        if mask.aux_mask is None:
            raise ShapeMismatch("network has an aux head with dropout but the mask has no aux vector")
        want = net.aux.weights.shape[1]
        if mask.aux_mask.shape != (want,):
            raise ShapeMismatch(f"aux mask shape {mask.aux_mask.shape} does not fit head input ({want},)")
    return mask


def forward(net: NetworkParams, x, mask: DropoutMask | None = None) -> np.ndarray:
    """One forward pass; a maskless pass is the deterministic baseline."""
    a = _check_input(net, x)
    mask = _check_mask(net, mask)
    scale = 1.0 / (1.0 - net.dropout_p)
    mi = 0
    for layer in net.layers:
        if layer.spec.has_dropout and mask is not None:
            a = a * mask.layer_masks[mi] * scale
            mi += 1
        z = layer.weights @ a + layer.bias
        a = np.maximum(z, 0.0) if layer.spec.activation == "relu" else z
    return a


def forward_aux(net: NetworkParams, x, mask: DropoutMask | None = None) -> np.ndarray:
    """Raw pose from the auxiliary head."""
    if net.aux is None:
        raise InvalidArchitecture("network has no auxiliary head")
    a = _check_input(net, x)
    mask = _check_mask(net, mask)
    scale = 1.0 / (1.0 - net.dropout_p)
    mi = 0
    for i, layer in enumerate(net.layers[: net.aux.after_layer + 1]):
        if layer.spec.has_dropout and mask is not None:
            a = a * mask.layer_masks[mi] * scale
            mi += 1
        z = layer.weights @ a + layer.bias
        a = np.maximum(z, 0.0) if layer.spec.activation == "relu" else z
    if net.aux.has_dropout and mask is not None and mask.aux_mask is not None:
        a = a * mask.aux_mask * scale
    return net.aux.weights @ a + net.aux.bias


def feature_embedding(net: NetworkParams, x) -> np.ndarray:
    """Activation entering the final layer, computed without masks."""
    a = _check_input(net, x)
    for layer in net.layers[:-1]:
        z = layer.weights @ a + layer.bias
        a = np.maximum(z, 0.0) if layer.spec.activation == "relu" else z
    return a


def _head_gradient(out: np.ndarray, pos: np.ndarray, quat: np.ndarray, beta: float):
    """Row-wise gradient of ||p_hat - p|| + beta * ||q_hat - q|| and the losses.

    Rows sitting exactly at a norm kink get the zero subgradient.
    """
    d_pos = out[:, :3] - pos
    n_pos = np.linalg.norm(d_pos, axis=1)
    d_quat = out[:, 3:] - quat
    n_quat = np.linalg.norm(d_quat, axis=1)
    grad = np.zeros_like(out)
    rows = n_pos > 0.0
    grad[rows, :3] = d_pos[rows] / n_pos[rows, None]
    rows = n_quat > 0.0
    grad[rows, 3:] = beta * d_quat[rows] / n_quat[rows, None]
    return grad, n_pos + beta * n_quat


def loss_gradient(
    net: NetworkParams,
    batch: Sequence[TrainExample],
    mask_per_example: Sequence[DropoutMask] | None,
    config: LossConfig,
) -> NetworkGradients:
    """Exact analytic gradient of the mean pose loss over a batch.

    Dropout masks enter as constants.  When the network has an auxiliary
    head, its loss joins with weight AUX_LOSS_WEIGHT and its gradient flows
    back into the trunk.
    """
    if len(batch) == 0:
        raise ValueError("batch must not be empty")
    if mask_per_example is not None and len(mask_per_example) != len(batch):
        raise ShapeMismatch(
            f"{len(mask_per_example)} masks for {len(batch)} examples"
        )
    n = len(batch)
    x = np.stack([_check_input(net, f) for f, _ in batch])
    pos = np.stack([t.position.as_array() for _, t in batch])
    quat = np.stack([t.orientation.as_array() for _, t in batch])

    masks = None
    aux_masks = None
    if mask_per_example is not None:
        checked = [_check_mask(net, m) for m in mask_per_example]
        n_drop = len(net.dropout_layer_indices())
        masks = [np.stack([m.layer_masks[j] for m in checked]) for j in range(n_drop)]
        if net.aux is not None and net.aux.has_dropout:
            aux_masks = np.stack([m.aux_mask for m in checked])

    scale = 1.0 / (1.0 - net.dropout_p)

    # Forward, keeping the (possibly masked) input each layer consumed.
    layer_inputs = []
    preacts = []
    acts = []
    a = x
    mi = 0
    for layer in net.layers:
        a_in = a
        if layer.spec.has_dropout and masks is not None:
            a_in = a * masks[mi] * scale
            mi += 1
        z = a_in @ layer.weights.T + layer.bias
        a = np.maximum(z, 0.0) if layer.spec.activation == "relu" else z
        layer_inputs.append(a_in)
        preacts.append(z)
        acts.append(a)
    out = acts[-1]

    q_norms = np.linalg.norm(out[:, 3:], axis=1)
    if np.any(q_norms <= NORM_FLOOR):
        raise DegenerateQuaternion("a predicted raw quaternion collapsed to (near) zero norm")

    grad_out, losses = _head_gradient(out, pos, quat, config.beta)
    grad_out = grad_out / n
    mean_loss = float(losses.mean())

    aux_grads = None
    aux_back = None
    if net.aux is not None:
        h = acts[net.aux.after_layer]
        h_in = h
        if aux_masks is not None:
            h_in = h * aux_masks * scale
        out_aux = h_in @ net.aux.weights.T + net.aux.bias
        q_norms_aux = np.linalg.norm(out_aux[:, 3:], axis=1)
        if np.any(q_norms_aux <= NORM_FLOOR):
            raise DegenerateQuaternion("an auxiliary raw quaternion collapsed to (near) zero norm")
        grad_aux, losses_aux = _head_gradient(out_aux, pos, quat, config.beta)
        grad_aux = grad_aux * (AUX_LOSS_WEIGHT / n)
        mean_loss += AUX_LOSS_WEIGHT * float(losses_aux.mean())
        aux_grads = (grad_aux.T @ h_in, grad_aux.sum(axis=0))
        aux_back = grad_aux @ net.aux.weights
        if aux_masks is not None:
            aux_back = aux_back * aux_masks * scale

    # Backward.
    grads: list[tuple[np.ndarray, np.ndarray] | None] = [None] * len(net.layers)
    d_act = grad_out
    mi = len(masks) - 1 if masks is not None else -1
    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        if layer.spec.activation == "relu":
            d_z = d_act * (preacts[i] > 0.0)
        else:
            d_z = d_act
        grads[i] = (d_z.T @ layer_inputs[i], d_z.sum(axis=0))
        if i == 0:
            break
        d_prev = d_z @ layer.weights
        if layer.spec.has_dropout and masks is not None:
            d_prev = d_prev * masks[mi] * scale
            mi -= 1
        if net.aux is not None and net.aux.after_layer == i - 1:
            d_prev = d_prev + aux_back
        d_act = d_prev

    return NetworkGradients(layers=grads, aux=aux_grads, mean_loss=mean_loss)


def train(net: NetworkParams, dataset: Sequence[TrainExample], config: TrainConfig) -> TrainResult:
    """SGD with momentum; returns updated parameters and per-epoch mean loss.

    The input network is left untouched.  Example order reshuffles every
    epoch from the config seed, and each example's dropout mask comes from
    (seed, global example counter), so a rerun reproduces the exact same
    parameter trajectory.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must not be empty")
    params = net.copy()
    velocity = [
        (np.zeros_like(layer.weights), np.zeros_like(layer.bias)) for layer in params.layers
    ]
    velocity_aux = None
    if params.aux is not None:
        velocity_aux = (np.zeros_like(params.aux.weights), np.zeros_like(params.aux.bias))

    has_dropout = len(params.dropout_layer_indices()) > 0 or (
        params.aux is not None and params.aux.has_dropout
    )
    n = len(dataset)
    counter = 0
    epoch_losses = []
    for epoch in range(config.epochs):
        order = derive_rng(config.seed, 0, epoch).permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            batch = [dataset[i] for i in batch_idx]
            masks = None
            if has_dropout:
                masks = [draw_mask(params, config.seed, counter + j) for j in range(len(batch))]
            counter += len(batch)

            grads = loss_gradient(params, batch, masks, config.loss)
            if not math.isfinite(grads.mean_loss):
                raise NonFiniteLoss(f"loss became {grads.mean_loss!r} at epoch {epoch}")
            loss_sum += grads.mean_loss * len(batch)

            for layer, vel, (d_w, d_b) in zip(params.layers, velocity, grads.layers):
                vel[0][...] = config.momentum * vel[0] - config.learning_rate * d_w
                vel[1][...] = config.momentum * vel[1] - config.learning_rate * d_b
                layer.weights += vel[0]
                layer.bias += vel[1]
            if grads.aux is not None:
                velocity_aux[0][...] = (
                    config.momentum * velocity_aux[0] - config.learning_rate * grads.aux[0]
                )
                velocity_aux[1][...] = (
                    config.momentum * velocity_aux[1] - config.learning_rate * grads.aux[1]
                )
                params.aux.weights += velocity_aux[0]
                params.aux.bias += velocity_aux[1]
        epoch_losses.append(loss_sum / n)
    return TrainResult(net=params, epoch_losses=epoch_losses)


def _layer_to_dict(layer: Layer) -> dict:
    return {
        "input_width": layer.spec.input_width,
        "output_width": layer.spec.output_width,
        "has_dropout": layer.spec.has_dropout,
        "activation": layer.spec.activation,
        "weights": layer.weights.tolist(),
        "bias": layer.bias.tolist(),
    }


def _layer_from_dict(d: dict) -> Layer:
    spec = LayerSpec(
        input_width=int(d["input_width"]),
        output_width=int(d["output_width"]),
        has_dropout=bool(d["has_dropout"]),
        activation=str(d["activation"]),
    )
    weights = np.asarray(d["weights"], dtype=float)
    bias = np.asarray(d["bias"], dtype=float)
    if weights.shape != (spec.output_width, spec.input_width) or bias.shape != (spec.output_width,):
        raise ParseError(
            f"stored parameter shapes {weights.shape}/{bias.shape} do not match "
            f"layer {spec.input_width}x{spec.output_width}"
        )
    return Layer(spec, weights, bias)


def save_checkpoint(path: str | os.PathLike, net: NetworkParams) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "dropout_p": net.dropout_p,
        "seed": net.seed,
        "layers": [_layer_to_dict(layer) for layer in net.layers],
        "aux": None
        if net.aux is None
        else {
            "after_layer": net.aux.after_layer,
            "has_dropout": net.aux.has_dropout,
            "weights": net.aux.weights.tolist(),
            "bias": net.aux.bias.tolist(),
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def load_checkpoint(path: str | os.PathLike) -> NetworkParams:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid checkpoint file: {e.msg}", line=e.lineno) from e
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(
            f"unsupported checkpoint format {doc.get('format')!r}, expected {CHECKPOINT_FORMAT!r}"
        )
    layers = [_layer_from_dict(d) for d in doc["layers"]]
    aux = None
    if doc.get("aux") is not None:
        a = doc["aux"]
        aux = AuxHead(
            after_layer=int(a["after_layer"]),
            weights=np.asarray(a["weights"], dtype=float),
            bias=np.asarray(a["bias"], dtype=float),
            has_dropout=bool(a["has_dropout"]),
        )
    return NetworkParams(
        layers=layers,
        dropout_p=float(doc["dropout_p"]),
        seed=int(doc["seed"]),
        aux=aux,
    )
