"""Ground-truthed synthetic cross-modal tracklet datasets.

Each identity owns a latent vector; cameras add latent-space offsets; each
modality observes the latent space through its own linear map (identity
blended with a random orthogonal basis, so the modality gap is tunable and
invertible). Frames add a bounded random walk plus i.i.d. noise. Everything
is a pure function of the config, with per-tracklet RNG streams so parallel
generation cannot change the output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import Dataset, Modality, Tracklet


@dataclass(frozen=True)
class GenConfig:
    n_identities: int = 50
    cams_vis: int = 2
    cams_ir: int = 2
    d_in: int = 16
    d_latent: int = 6
    tracklets_per_identity_per_camera: int = 1
    frame_len_min: int = 8
    frame_len_max: int = 16
    camera_offset_scale: float = 0.3
    modality_transform_scale: float = 0.5
    frame_noise: float = 0.2
    walk_step: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("camera_offset_scale", "modality_transform_scale", "frame_noise", "walk_step"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.d_latent > self.d_in:
            raise ValueError("d_latent must not exceed d_in")
        if not (1 <= self.frame_len_min <= self.frame_len_max):
            raise ValueError("need 1 <= frame_len_min <= frame_len_max")
        if min(self.n_identities, self.cams_vis, self.cams_ir,
               self.tracklets_per_identity_per_camera) < 1:
            raise ValueError("counts must be >= 1")


def _modality_map(cfg: GenConfig, rng: np.random.Generator) -> np.ndarray:
    """(1 - scale) * identity-pad + scale * random orthonormal columns."""
    eye = np.zeros((cfg.d_in, cfg.d_latent))
    eye[: cfg.d_latent, : cfg.d_latent] = np.eye(cfg.d_latent)
    q, _ = np.linalg.qr(rng.normal(size=(cfg.d_in, cfg.d_latent)))
    s = cfg.modality_transform_scale
    return (1.0 - s) * eye + s * q


def _reflect(w: np.ndarray, bound: float) -> np.ndarray:
    if bound == 0.0:
        return w
    out = np.where(w > bound, 2.0 * bound - w, w)
    return np.where(out < -bound, -2.0 * bound - out, out)


def _tracklet_rng(cfg: GenConfig, tracklet_index: int) -> np.random.Generator:
    # stream derived from (seed, tracklet index): parallel-safe and stable
    return np.random.default_rng(np.random.SeedSequence((cfg.seed, 1, tracklet_index)))


def generate_dataset(cfg: GenConfig) -> Dataset:
    """Build the full dataset; deterministic given ``cfg.seed``."""
    global_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0)))

    latents = global_rng.normal(size=(cfg.n_identities, cfg.d_latent))
    offsets: dict[tuple[Modality, int], np.ndarray] = {}
    for modality, n_cams in ((Modality.VIS, cfg.cams_vis), (Modality.IR, cfg.cams_ir)):
        for cam in range(n_cams):
            offsets[(modality, cam)] = (
                cfg.camera_offset_scale * global_rng.normal(size=cfg.d_latent)
            )
    maps = {
        Modality.VIS: _modality_map(cfg, global_rng),
        Modality.IR: _modality_map(cfg, global_rng),
    }

    bound = 3.0 * cfg.walk_step
    tracklets = []
    index = 0
    for identity in range(cfg.n_identities):
        for modality, n_cams in ((Modality.VIS, cfg.cams_vis), (Modality.IR, cfg.cams_ir)):
            for cam in range(n_cams):
                for rep in range(cfg.tracklets_per_identity_per_camera):
                    rng = _tracklet_rng(cfg, index)
                    index += 1
                    length = int(rng.integers(cfg.frame_len_min, cfg.frame_len_max + 1))
                    center = latents[identity] + offsets[(modality, cam)]
                    walk = np.zeros(cfg.d_latent)
                    frames = np.empty((length, cfg.d_in))
                    for t in range(length):
                        walk = _reflect(
                            walk + cfg.walk_step * rng.normal(size=cfg.d_latent), bound
                        )
                        frames[t] = maps[modality] @ (center + walk)
                    frames += cfg.frame_noise * rng.normal(size=(length, cfg.d_in))
                    tid = f"{modality.value.lower()}_c{cam}_i{identity:04d}_r{rep}"
                    tracklets.append(
                        Tracklet(
                            tracklet_id=tid,
                            modality=modality,
                            camera_id=cam,
                            frames=frames.astype("<f4"),
                            gt_identity=identity,
                        )
                    )
    return Dataset(
        d_in=cfg.d_in,
        n_cameras_vis=cfg.cams_vis,
        n_cameras_ir=cfg.cams_ir,
        tracklets=tuple(tracklets),
    )
