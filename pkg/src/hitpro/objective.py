"""Prototype-contrastive losses, epoch-gated scheduling, EMA prototype memory.

Prototypes are non-parametric memory: losses differentiate only with respect
to the batch embeddings, and the store evolves exclusively through the EMA
update after each optimizer step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import PrototypeStore, TrainConfig, WeightedPositiveSet
from .numerics import l2_normalize, log_softmax, stable_softmax

# batch item: (embedding, source tracklet_id)
BatchItem = tuple[np.ndarray, str]


@dataclass
class LossBreakdown:
    l_ic: float
    l_imcc: float
    l_cm: float
    l_total: float
    active_imcc: bool
    active_cm: bool
    grads: list[np.ndarray]  # per batch embedding, vis entries then ir entries


def _camera_matrix(store: PrototypeStore, modality, camera_id):
    group = store.group(modality, camera_id)
    ids = [p.tracklet_id for p in group]
    return ids, np.stack([p.vector for p in group])


def loss_intra_camera(
    batch: list[BatchItem], store: PrototypeStore, loss_temp: float
) -> tuple[float, list[np.ndarray]]:
    """Softmax cross entropy of each embedding against its own camera's
    prototypes, positive at its own prototype; mean over the batch."""
    total = 0.0
    grads = []
    inv_b = 1.0 / len(batch)
    for q, source_id in batch:
        own = store.get(source_id)
        ids, mat = _camera_matrix(store, own.modality, own.camera_id)
        own_pos = ids.index(source_id)
        logits = (mat @ q) / loss_temp
        total += -float(log_softmax(logits)[own_pos]) * inv_b
        probs = stable_softmax(logits)
        grads.append((probs @ mat - mat[own_pos]) / loss_temp * inv_b)
    return total, grads


def _weighted_alignment_loss(
    batch: list[BatchItem],
    store: PrototypeStore,
    positive_sets: dict[str, WeightedPositiveSet],
    loss_temp: float,
) -> tuple[float, list[np.ndarray]]:
    """Weighted cross entropy toward each accepted target, softmax over the
    target's own camera; embeddings with empty sets contribute zero."""
    total = 0.0
    grads = []
    inv_b = 1.0 / len(batch)
    for q, source_id in batch:
        grad = np.zeros_like(q)
        wps = positive_sets.get(source_id)
        if wps is not None:
            for target_id, weight in wps.entries:
                try:
                    target = store.get(target_id)
                except KeyError as exc:
                    raise ValueError(
                        f"positive set for {source_id!r} references missing "
                        f"prototype {target_id!r}"
                    ) from exc
                ids, mat = _camera_matrix(store, target.modality, target.camera_id)
                pos = ids.index(target_id)
                logits = (mat @ q) / loss_temp
                total += -weight * float(log_softmax(logits)[pos]) * inv_b
                probs = stable_softmax(logits)
                grad += weight * (probs @ mat - mat[pos]) / loss_temp * inv_b
        grads.append(grad)
    return total, grads


def loss_imcc(
    batch: list[BatchItem],
    store: PrototypeStore,
    intra_sets: dict[str, WeightedPositiveSet],
    loss_temp: float,
) -> tuple[float, list[np.ndarray]]:
    """Alignment to mined same-modality cross-camera prototypes."""
    return _weighted_alignment_loss(batch, store, intra_sets, loss_temp)


def loss_cross_modal(
    batch: list[BatchItem],
    store: PrototypeStore,
    cross_sets: dict[str, WeightedPositiveSet],
    loss_temp: float,
) -> tuple[float, list[np.ndarray]]:
    """Alignment to mined opposite-modality prototypes."""
    return _weighted_alignment_loss(batch, store, cross_sets, loss_temp)


def total_loss(
    epoch: int,
    vis_batch: list[BatchItem],
    ir_batch: list[BatchItem],
    store: PrototypeStore,
    intra_sets: dict[str, WeightedPositiveSet],
    cross_sets: dict[str, WeightedPositiveSet],
    cfg: TrainConfig,
) -> LossBreakdown:
    """Sum each term over both modality batches, gated by epoch schedule.

    Inactive terms are skipped entirely, so values and gradients are
    bitwise identical to the intra-camera loss alone before the schedule
    admits the other terms.
    """
    active_imcc = cfg.use_imcc and (not cfg.use_hls or epoch >= cfg.intra_start_epoch)
    active_cm = cfg.use_cm and (not cfg.use_hls or epoch >= cfg.cross_start_epoch)

    batches = [b for b in (vis_batch, ir_batch) if b]
    l_ic = 0.0
    grads: list[np.ndarray] = []
    for batch in batches:
        value, g = loss_intra_camera(batch, store, cfg.loss_temp)
        l_ic += value
        grads.extend(g)

    l_imcc = 0.0
    if active_imcc:
        offset = 0
        for batch in batches:
            value, g = loss_imcc(batch, store, intra_sets, cfg.loss_temp)
            l_imcc += value
            for i, gi in enumerate(g):
                grads[offset + i] = grads[offset + i] + gi
            offset += len(batch)

    l_cm = 0.0
    if active_cm:
        offset = 0
        for batch in batches:
            value, g = loss_cross_modal(batch, store, cross_sets, cfg.loss_temp)
            l_cm += value
            for i, gi in enumerate(g):
                grads[offset + i] = grads[offset + i] + gi
            offset += len(batch)

    l_total = l_ic
    if active_imcc:
        l_total += l_imcc
    if active_cm:
        l_total += l_cm
    return LossBreakdown(
        l_ic=l_ic,
        l_imcc=l_imcc,
        l_cm=l_cm,
        l_total=l_total,
        active_imcc=active_imcc,
        active_cm=active_cm,
        grads=grads,
    )


def ema_update(
    store: PrototypeStore,
    batch: list[BatchItem],
    intra_sets: dict[str, WeightedPositiveSet],
    cross_sets: dict[str, WeightedPositiveSet],
    momentum: float,
    normalize: bool = True,
) -> None:
    """p <- (1 - momentum) * p + momentum * q, then re-normalize.

    Each embedding updates its own prototype plus every accepted intra- and
    cross-modal target, in batch order.
    """
    for q, source_id in batch:
        targets = [source_id]
        for sets in (intra_sets, cross_sets):
            wps = sets.get(source_id)
            if wps is not None:
                targets.extend(wps.target_ids)
        for tid in targets:
            proto = store.get(tid)
            blended = (1.0 - momentum) * proto.vector + momentum * q
            proto.vector = l2_normalize(blended) if normalize else blended
