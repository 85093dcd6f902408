"""The adaptation network: MLP feature extractor + temperature-scaled cosine head.

The extractor applies ReLU after every linear layer. The classifier holds one
weight column per class; logits are cosine similarities between the
L2-normalized embedding and each column, divided by the temperature. A
two-class linear head over embeddings serves as the domain discriminator for
the marginal-alignment baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics
from .errors import CheckpointError, DimensionError
from .numerics import ParamBlock

CHECKPOINT_VERSION = 1


@dataclass
class ModelParams:
    """All trainable state plus the fixed temperature."""

    layers: list[tuple[ParamBlock, ParamBlock]]
    prototypes: ParamBlock
    temperature: float
    domain_head: tuple[ParamBlock, ParamBlock]
    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    seed: int

    @property
    def embedding_dim(self) -> int:
        return self.prototypes.value.shape[0]

    def extractor_blocks(self) -> list[ParamBlock]:
        return [b for pair in self.layers for b in pair]

    def classifier_blocks(self) -> list[ParamBlock]:
        return [self.prototypes]

    def domain_blocks(self) -> list[ParamBlock]:
        return list(self.domain_head)

    def all_blocks(self) -> list[ParamBlock]:
        return self.extractor_blocks() + self.classifier_blocks() + self.domain_blocks()

    def zero_grads(self) -> None:
        for block in self.all_blocks():
            block.zero_grad()


@dataclass
class Prediction:
    """Class probabilities and the embeddings they were computed from."""

    probabilities: np.ndarray
    embeddings: np.ndarray


@dataclass
class ForwardCache:
    """Intermediate activations kept for the hand-written backward pass."""

    inputs: np.ndarray
    preacts: list[np.ndarray]
    acts: list[np.ndarray]
    normalized: np.ndarray
    norms: np.ndarray
    logits: np.ndarray
    probs: np.ndarray

    @property
    def embeddings(self) -> np.ndarray:
        return self.acts[-1]


def init_model(
    input_dim: int,
    hidden_dims: tuple[int, ...],
    num_classes: int,
    temperature: float = 0.05,
    seed: int = 0,
) -> ModelParams:
    """Seeded initialization.

    Extractor weights are He-scaled Gaussians with zero biases. The prototype
    matrix starts as a 1/sqrt(d)-scaled Gaussian with L2-normalized columns so
    each column is a unit prototype from the first step. The domain head
    starts at zero, which makes an untrained discriminator output exactly 0.5.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    rng = np.random.default_rng([seed, 0])
    layers = []
    fan_in = input_dim
    for i, width in enumerate(hidden_dims):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, width))
        layers.append(
            (
                ParamBlock(f"layer{i}.weight", w),
                ParamBlock(f"layer{i}.bias", np.zeros((1, width))),
            )
        )
        fan_in = width
    d = hidden_dims[-1]
    proto = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, num_classes))
    proto /= np.linalg.norm(proto, axis=0, keepdims=True)
    domain = (
        ParamBlock("domain.weight", np.zeros((d, 2))),
        ParamBlock("domain.bias", np.zeros((1, 2))),
    )
    return ModelParams(
        layers=layers,
        prototypes=ParamBlock("prototypes", proto),
        temperature=temperature,
        domain_head=domain,
        input_dim=input_dim,
        hidden_dims=tuple(hidden_dims),
        num_classes=num_classes,
        seed=seed,
    )


def extract_features(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    """Embeddings F(x); ReLU after every layer."""
    h = np.ascontiguousarray(inputs, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != params.input_dim:
        raise DimensionError(f"inputs shape {h.shape} incompatible with input dim {params.input_dim}")
    for w, b in params.layers:
        h = numerics.relu(numerics.linear_forward(h, w, b))
    return h


def forward_full(params: ModelParams, inputs: np.ndarray) -> ForwardCache:
    """Forward pass through extractor and cosine head, caching everything."""
    x = np.ascontiguousarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise DimensionError(f"inputs shape {x.shape} incompatible with input dim {params.input_dim}")
    preacts, acts = [], []
    h = x
    for w, b in params.layers:
        z = numerics.linear_forward(h, w, b)
        preacts.append(z)
        h = numerics.relu(z)
        acts.append(h)
    normalized, norms = numerics.l2_normalize_rows(h)
    logits = normalized @ params.prototypes.value / params.temperature
    probs = numerics.softmax_rows(logits)
    return ForwardCache(x, preacts, acts, normalized, norms, logits, probs)


def classify(params: ModelParams, inputs: np.ndarray) -> Prediction:
    cache = forward_full(params, inputs)
    return Prediction(probabilities=cache.probs, embeddings=cache.embeddings)


def backward_extractor(
    params: ModelParams, cache: ForwardCache, d_embed: np.ndarray, scale: float = 1.0
) -> None:
    """Chain an embedding gradient back through the extractor.

    ``scale`` is applied per block at accumulation, so the stored gradients
    are bit-identical to ``scale`` times the unscaled chain.
    """
    g = d_embed
    for i in range(len(params.layers) - 1, -1, -1):
        w, b = params.layers[i]
        g = numerics.relu_backward(g, cache.preacts[i])
        upstream = cache.inputs if i == 0 else cache.acts[i - 1]
        g = numerics.linear_backward(g, upstream, w, b, scale)


def backward_head(
    params: ModelParams,
    cache: ForwardCache,
    d_logits: np.ndarray,
    head_scale: float = 1.0,
    feature_scale: float = 1.0,
) -> None:
    """Backward from cosine-head logits into prototypes and the extractor."""
    t = params.temperature
    params.prototypes.accumulate(cache.normalized.T @ d_logits / t, head_scale)
    d_norm = d_logits @ params.prototypes.value.T / t
    d_embed = numerics.l2_normalize_backward(d_norm, cache.normalized, cache.norms)
    backward_extractor(params, cache, d_embed, feature_scale)


def discriminate_domain(params: ModelParams, embeddings: np.ndarray) -> np.ndarray:
    """Per-sample probability of coming from the target domain."""
    w, b = params.domain_head
    if embeddings.shape[1] != w.value.shape[0]:
        raise DimensionError(
            f"embeddings dim {embeddings.shape[1]} != discriminator dim {w.value.shape[0]}"
        )
    logits = numerics.linear_forward(np.ascontiguousarray(embeddings, dtype=np.float64), w, b)
    return numerics.softmax_rows(logits)[:, 1]


def relu_signature(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    """Active-unit pattern of every ReLU; used to detect kink crossings."""
    h = np.ascontiguousarray(inputs, dtype=np.float64)
    bits = []
    for w, b in params.layers:
        z = numerics.linear_forward(h, w, b)
        bits.append((z > 0.0).reshape(-1))
        h = numerics.relu(z)
    return np.concatenate(bits)


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Write a versioned JSON checkpoint (layout documented in the README)."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "temperature": params.temperature,
        "seed": params.seed,
        "input_dim": params.input_dim,
        "hidden_dims": list(params.hidden_dims),
        "num_classes": params.num_classes,
        "blocks": {
            b.name: {"shape": list(b.value.shape), "values": b.value.reshape(-1).tolist()}
            for b in params.all_blocks()
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path: str | Path) -> ModelParams:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {doc.get('format_version')} unsupported (want {CHECKPOINT_VERSION})"
        )
    params = init_model(
        doc["input_dim"],
        tuple(doc["hidden_dims"]),
        doc["num_classes"],
        temperature=doc["temperature"],
        seed=doc["seed"],
    )
    for block in params.all_blocks():
        entry = doc["blocks"].get(block.name)
        if entry is None:
            raise CheckpointError(f"checkpoint missing block {block.name!r}")
        values = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if values.shape != block.value.shape:
            raise CheckpointError(
                f"block {block.name!r} shape {values.shape} != model shape {block.value.shape}"
            )
        block.value[...] = values
    return params
