"""Training objectives: supervised head loss, self-training loss, the
minimax entropy term with its reversed routing, and label-distribution
diagnostics (Jensen-Shannon machinery and the additivity lower bound).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from . import numerics
from .errors import UsageError
from .model import ModelParams


@dataclass
class LossBreakdown:
    """Per-step scalar losses; l_st is always l_sc + l_target_pseudo."""

    l_sc: float
    l_target_pseudo: float
    l_st: float
    l_h: float
    alpha: float

    def as_dict(self) -> dict[str, float]:
        return {
            "l_sc": self.l_sc,
            "l_target_pseudo": self.l_target_pseudo,
            "l_st": self.l_st,
            "l_h": self.l_h,
            "alpha": self.alpha,
        }


def label_distribution(counts: np.ndarray) -> np.ndarray:
    """Normalize nonnegative class counts into proportions."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise UsageError("cannot normalize an all-zero count vector")
    return counts / total


def check_distribution(p: np.ndarray, name: str = "distribution") -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or (p < 0).any() or abs(p.sum() - 1.0) > 1e-6:
        raise UsageError(f"{name} is not a valid probability vector: {p!r}")
    return p


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in nats with 0 log 0 := 0; q must dominate p."""
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def js_divergence(p: np.ndarray, q: np.ndarray) -> float:
    p = check_distribution(p, "p")
    q = check_distribution(q, "q")
    m = 0.5 * (p + q)
    return 0.5 * kl_divergence(p, m) + 0.5 * kl_divergence(q, m)


def js_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Square root of the JS divergence (natural log); at most sqrt(ln 2)."""
    return float(np.sqrt(max(0.0, js_divergence(p, q))))


def js_label_bound(p: np.ndarray, q: np.ndarray, d_js_features: float = 0.0) -> float:
    """Lower bound on the sum of source and target risks when label
    distributions differ: 0.5 * (d_JS(p, q) - d_js_features)^2.

    The feature-space term is taken as an input (default 0, the conservative
    choice) because estimating it would require density estimation.
    """
    return 0.5 * (js_distance(p, q) - d_js_features) ** 2


def source_classification_loss(params: ModelParams, inputs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy of the cosine head on labeled rows; accumulates
    gradients into the prototypes and the extractor."""
    if len(inputs) == 0:
        raise UsageError("source batch is empty")
    cache = model_mod.forward_full(params, inputs)
    loss, d_logits = numerics.softmax_cross_entropy(cache.logits, labels)
    model_mod.backward_head(params, cache, d_logits)
    return loss


def self_training_loss(
    params: ModelParams,
    source_inputs: np.ndarray,
    source_labels: np.ndarray,
    target_inputs: np.ndarray,
    target_pseudo: np.ndarray,
    target_mask: np.ndarray,
) -> tuple[float, float, float]:
    """Supervised loss plus the masked pseudo-label loss on target rows.

    Returns (l_st, l_sc, l_target_pseudo); an all-zero mask reduces the
    target term to exactly zero, leaving only the supervised part.
    """
    l_sc = source_classification_loss(params, source_inputs, source_labels)
    cache = model_mod.forward_full(params, target_inputs)
    l_pseudo, d_logits = numerics.softmax_cross_entropy(cache.logits, target_pseudo, target_mask)
    model_mod.backward_head(params, cache, d_logits)
    return l_sc + l_pseudo, l_sc, l_pseudo


def entropy_objective(params: ModelParams, target_inputs: np.ndarray, alpha: float) -> float:
    """Mean prediction entropy on target rows with adversarial routing.

    One backward pass leaves the classifier head with the gradient of
    -alpha * entropy (it is trained to spread probability mass) and the
    extractor with the gradient of +alpha * entropy (it is trained to
    concentrate it); the sign flip between the two is the reversal boundary.
    """
    if alpha < 0:
        raise UsageError(f"alpha must be nonnegative, got {alpha}")
    cache = model_mod.forward_full(params, target_inputs)
    l_h, d_logits = numerics.mean_entropy(cache.probs)
    model_mod.backward_head(params, cache, d_logits, head_scale=-alpha, feature_scale=alpha)
    return l_h


def domain_alignment_loss(
    params: ModelParams,
    source_inputs: np.ndarray,
    target_inputs: np.ndarray,
    grl_lambda: float = 1.0,
) -> tuple[float, float]:
    """Adversarial domain-confusion loss for the marginal-alignment baseline.

    The discriminator head is trained to tell source (0) from target (1)
    embeddings; the extractor receives the reversed gradient scaled by
    ``grl_lambda``. Returns (loss, batch domain accuracy).
    """
    src_cache = model_mod.forward_full(params, source_inputs)
    tgt_cache = model_mod.forward_full(params, target_inputs)
    embeddings = np.vstack([src_cache.embeddings, tgt_cache.embeddings])
    domains = np.concatenate(
        [np.zeros(len(source_inputs), dtype=np.int64), np.ones(len(target_inputs), dtype=np.int64)]
    )
    w, b = params.domain_head
    logits = numerics.linear_forward(embeddings, w, b)
    loss, d_logits = numerics.softmax_cross_entropy(logits, domains)
    d_embed = numerics.linear_backward(d_logits, embeddings, w, b)
    n_src = len(source_inputs)
    model_mod.backward_extractor(params, src_cache, d_embed[:n_src], scale=-grl_lambda)
    model_mod.backward_extractor(params, tgt_cache, d_embed[n_src:], scale=-grl_lambda)
    accuracy = float((logits.argmax(axis=1) == domains).mean())
    return loss, accuracy
