"""Training batch construction: C cameras x P tracklets x S sub-tracklets.

Small synthetic datasets may not contain C cameras or P tracklets per
camera; sampling then falls back to replacement instead of erroring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import Dataset, Modality, SubTracklet, TrainConfig


@dataclass(frozen=True)
class BatchSpec:
    modality: Modality
    entries: tuple[tuple[SubTracklet, str], ...]  # (sub-tracklet, source tracklet_id)

    def __len__(self) -> int:
        return len(self.entries)


def sample_batch(
    dataset: Dataset,
    modality: Modality,
    partitions: dict[str, list[SubTracklet]],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> BatchSpec:
    """Draw one batch; deterministic given the generator state.

    Cameras and tracklets are drawn without replacement where counts allow,
    with replacement otherwise; likewise sub-tracklet indices against K_eff.
    """
    cameras = [
        cam for cam in range(dataset.n_cameras(modality))
        if dataset.group(modality, cam)
    ]
    if not cameras:
        raise ValueError(f"no tracklets in modality {modality.value}")
    cam_choice = rng.choice(
        cameras, size=cfg.batch_cameras, replace=len(cameras) < cfg.batch_cameras
    )
    entries: list[tuple[SubTracklet, str]] = []
    for cam in cam_choice:
        tracklets = dataset.group(modality, int(cam))
        t_idx = rng.choice(
            len(tracklets), size=cfg.batch_tracklets,
            replace=len(tracklets) < cfg.batch_tracklets,
        )
        for ti in t_idx:
            tracklet = tracklets[int(ti)]
            subs = partitions[tracklet.tracklet_id]
            s_idx = rng.choice(
                len(subs), size=cfg.batch_subs, replace=len(subs) < cfg.batch_subs
            )
            for si in s_idx:
                entries.append((subs[int(si)], tracklet.tracklet_id))
    return BatchSpec(modality=modality, entries=tuple(entries))
