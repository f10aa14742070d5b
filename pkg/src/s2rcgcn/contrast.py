"""Reliable sample sets, supervised contrastive loss and the total objective.

Similarity between two node features is their cosine divided by the
temperature. Logarithms are natural.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ContractError, ShapeError
from .numkit import Tensor, ops

Scalar = Union[Tensor, float]

DEFAULT_TAU = 0.99
DEFAULT_TEMPERATURE = 1.0


@dataclass
class ReliableSet:
    """Contrastive candidates: true-labeled nodes plus confident pseudo-labels.

    ``candidates``/``candidate_labels``/``pseudo`` are aligned arrays. Anchors
    are truly labeled nodes with at least one same-label candidate.
    """

    anchors: np.ndarray
    candidates: np.ndarray
    candidate_labels: np.ndarray
    pseudo: np.ndarray
    tau: float
    temperature: float
    skipped_anchors: int
    accepted_per_class: np.ndarray

    @property
    def n_pseudo(self) -> int:
        return int(self.pseudo.sum())

    def positive_mask(self) -> np.ndarray:
        """anchors x candidates boolean mask of same-label pairs."""
        pos_of = dict(zip(self.candidates.tolist(), self.candidate_labels.tolist()))
        anchor_labels = np.array([pos_of[i] for i in self.anchors.tolist()], dtype=np.int64)
        return anchor_labels[:, None] == self.candidate_labels[None, :]


def accepted_mask(y: np.ndarray, pseudo_probs: np.ndarray, tau: float) -> np.ndarray:
    """Unlabeled nodes whose top predicted probability exceeds ``tau``."""
    return (np.asarray(y) == 0) & (np.asarray(pseudo_probs).max(axis=1) > tau)


def build_reliable_set(
    y: np.ndarray,
    pseudo_probs: np.ndarray,
    tau: float = DEFAULT_TAU,
    temperature: float = DEFAULT_TEMPERATURE,
) -> ReliableSet:
    """Collect contrastive candidates from labels ``y`` (0 = unlabeled) and class probabilities.

    Column ``c`` of ``pseudo_probs`` is the probability of label ``c + 1``.
    """
    y = np.asarray(y, dtype=np.int64)
    probs = np.asarray(pseudo_probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != len(y):
        raise ShapeError(f"pseudo_probs shape {probs.shape} does not match {len(y)} nodes")
    n_classes = probs.shape[1]
    if not 1.0 / n_classes < tau < 1.0:
        raise ContractError(f"threshold tau={tau} must lie in (1/{n_classes}, 1)")
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    labeled = y > 0
    accepted = accepted_mask(y, probs, tau)
    cand = np.flatnonzero(labeled | accepted)
    labels = np.where(labeled, y, probs.argmax(axis=1) + 1)[cand]
    pseudo = accepted[cand]
    anchors = np.flatnonzero(labeled)
    # an anchor is always its own cross-view positive; the check guards callers that pass odd labels
    has_pos = np.isin(y[anchors], labels)
    counts = np.bincount(labels[pseudo], minlength=n_classes + 1)[1:]
    return ReliableSet(
        anchors=anchors[has_pos],
        candidates=cand,
        candidate_labels=labels,
        pseudo=pseudo,
        tau=float(tau),
        temperature=float(temperature),
        skipped_anchors=int((~has_pos).sum()),
        accepted_per_class=counts,
    )


def drop_nodes(rs: ReliableSet, drop: np.ndarray) -> ReliableSet:
    """Remove the flagged nodes (boolean over all nodes) from anchors and candidates.

    Used when a node's feature vector is zero in either view, where cosine
    similarity is undefined. Removed anchors add to ``skipped_anchors``.
    """
    drop = np.asarray(drop, dtype=bool)
    keep_c = ~drop[rs.candidates]
    keep_a = ~drop[rs.anchors]
    return ReliableSet(
        anchors=rs.anchors[keep_a],
        candidates=rs.candidates[keep_c],
        candidate_labels=rs.candidate_labels[keep_c],
        pseudo=rs.pseudo[keep_c],
        tau=rs.tau,
        temperature=rs.temperature,
        skipped_anchors=rs.skipped_anchors + int((~keep_a).sum()),
        accepted_per_class=rs.accepted_per_class,
    )


def _directional_losses(anchor_feats: Tensor, cand_feats: Tensor, pos_mask: np.ndarray, temperature: float) -> Tensor:
    """Per-anchor ``-log(sum_pos exp(sim) / sum_all exp(sim))``."""
    a = ops.l2_normalize_rows(anchor_feats)
    c = ops.l2_normalize_rows(cand_feats)
    sim = ops.scale(ops.matmul(a, ops.transpose(c)), 1.0 / temperature)
    return ops.sub(ops.logsumexp_rows(sim), ops.logsumexp_rows(sim, pos_mask))


def contrastive_pair_loss(anchor: Tensor, candidates: Tensor, positive: np.ndarray, temperature: float = 1.0) -> Tensor:
    """Loss of one anchor vector against candidate rows; ``positive`` flags same-label candidates."""
    pos = np.asarray(positive, dtype=bool).reshape(1, -1)
    if pos.shape[1] != candidates.shape[0]:
        raise ShapeError(f"{pos.shape[1]} positive flags for {candidates.shape[0]} candidates")
    if not pos.any():
        raise ContractError("anchor has no positive candidate")
    row = ops.reshape(anchor, (1, -1))
    return ops.sum(_directional_losses(row, candidates, pos, temperature))


def contrastive_total(h_j: Tensor, h_p: Tensor, rs: ReliableSet) -> Tensor:
    """Symmetric two-view average of the pair loss over all anchors."""
    if h_j.shape != h_p.shape:
        raise ShapeError(f"views differ in shape: {h_j.shape} vs {h_p.shape}")
    anchors = rs.anchors
    n = len(anchors)
    if n == 0:
        return Tensor(0.0)
    mask = rs.positive_mask()
    forward = _directional_losses(ops.take_rows(h_j, anchors), ops.take_rows(h_p, rs.candidates), mask, rs.temperature)
    backward = _directional_losses(ops.take_rows(h_p, anchors), ops.take_rows(h_j, rs.candidates), mask, rs.temperature)
    return ops.scale(ops.add(ops.sum(forward), ops.sum(backward)), 1.0 / (2 * n))


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood; ``targets`` are 0-based class indices."""
    t = np.asarray(targets, dtype=np.intp)
    if logits.ndim != 2 or len(t) != logits.shape[0]:
        raise ShapeError(f"{len(t)} targets for logits of shape {logits.shape}")
    if len(t) == 0:
        raise ContractError("cross-entropy over an empty set of labeled nodes")
    if t.min() < 0 or t.max() >= logits.shape[1]:
        raise ContractError(f"targets must lie in [0, {logits.shape[1] - 1}]")
    picked = ops.pick(ops.log_softmax_rows(logits), np.arange(len(t)), t)
    return ops.scale(ops.sum(picked), -1.0 / len(t))


@dataclass
class LossTerms:
    L_C: Tensor
    L_ce: Tensor
    L_total: Tensor

    def values(self):
        return float(self.L_C.data), float(self.L_ce.data), float(self.L_total.data)


def total_loss(l_c: Scalar, l_ce: Scalar) -> LossTerms:
    """Unweighted sum of the contrastive and cross-entropy terms."""
    a = l_c if isinstance(l_c, Tensor) else Tensor(float(l_c))
    b = l_ce if isinstance(l_ce, Tensor) else Tensor(float(l_ce))
    return LossTerms(a, b, ops.add(a, b))
