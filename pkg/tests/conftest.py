import numpy as np

from hitpro.datamodel import Modality, Prototype, PrototypeStore


def random_store(rng, cams_vis=2, cams_ir=2, max_per_cam=4, d=6):
    """Random unit-norm store plus the plain-dict mirror the oracles consume."""
    protos = []
    groups = {}
    for modality, n_cams in ((Modality.VIS, cams_vis), (Modality.IR, cams_ir)):
        for cam in range(n_cams):
            n = int(rng.integers(1, max_per_cam + 1))
            group = []
            for i in range(n):
                v = rng.normal(size=d)
                v /= np.linalg.norm(v)
                tid = f"{modality.value}_{cam}_{i}"
                protos.append(
                    Prototype(tracklet_id=tid, modality=modality, camera_id=cam, vector=v)
                )
                group.append((tid, v.tolist()))
            groups[(modality, cam)] = group
    return PrototypeStore(protos), groups
