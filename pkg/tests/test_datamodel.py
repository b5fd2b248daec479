import json
import struct

import numpy as np
import pytest

from hitpro.datamodel import (
    CheckpointError,
    Dataset,
    DatasetError,
    Modality,
    Prototype,
    PrototypeStore,
    SubTracklet,
    TrainConfig,
    Tracklet,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
)
from hitpro.encoder import encoder_init


def make_tracklet(tid="t0", modality=Modality.VIS, cam=0, n_frames=4, d_in=3, gt=None, seed=0):
    frames = np.random.default_rng(seed).normal(size=(n_frames, d_in)).astype("<f4")
    return Tracklet(tracklet_id=tid, modality=modality, camera_id=cam, frames=frames,
                    gt_identity=gt)


def make_dataset(n=4, d_in=3):
    tracklets = []
    for i in range(n):
        modality = Modality.VIS if i % 2 == 0 else Modality.IR
        tracklets.append(
            make_tracklet(tid=f"t{i}", modality=modality, cam=i % 2, d_in=d_in, gt=i, seed=i)
        )
    return Dataset(d_in=d_in, n_cameras_vis=2, n_cameras_ir=2, tracklets=tuple(tracklets))


def test_empty_dataset_round_trip(tmp_path):
    ds = Dataset(d_in=5, n_cameras_vis=1, n_cameras_ir=1, tracklets=())
    manifest = save_dataset(ds, tmp_path)
    loaded = load_dataset(manifest)
    assert loaded.tracklets == ()
    assert loaded.d_in == 5


def test_round_trip_bit_identical(tmp_path):
    ds = make_dataset()
    save_dataset(ds, tmp_path)
    loaded = load_dataset(tmp_path)
    assert len(loaded.tracklets) == len(ds.tracklets)
    for orig, back in zip(ds.tracklets, loaded.tracklets):
        assert back.tracklet_id == orig.tracklet_id
        assert back.modality == orig.modality
        assert back.camera_id == orig.camera_id
        assert back.gt_identity == orig.gt_identity
        assert back.frames.tobytes() == orig.frames.tobytes()


def test_payload_size_rule(tmp_path):
    ds = make_dataset(n=2)
    save_dataset(ds, tmp_path)
    for t in ds.tracklets:
        size = (tmp_path / f"{t.tracklet_id}.f32").stat().st_size
        assert size == 4 * t.n_frames * ds.d_in


def test_dimension_mismatch_error(tmp_path):
    ds = make_dataset(n=1)
    save_dataset(ds, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["tracklets"][0]["n_frames"] = 6  # 6*3 floats != stored 4*3
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DatasetError, match="bytes"):
        load_dataset(tmp_path)


def test_missing_payload_error(tmp_path):
    ds = make_dataset(n=1)
    save_dataset(ds, tmp_path)
    (tmp_path / "t0.f32").unlink()
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)


def test_duplicate_tracklet_id_rejected():
    t = make_tracklet()
    with pytest.raises(DatasetError, match="duplicate"):
        Dataset(d_in=3, n_cameras_vis=1, n_cameras_ir=1, tracklets=(t, t))


def test_camera_range_validation():
    t = make_tracklet(cam=5)
    with pytest.raises(DatasetError, match="camera_id"):
        Dataset(d_in=3, n_cameras_vis=2, n_cameras_ir=2, tracklets=(t,))


def test_modality_keys_partition_dataset():
    ds = make_dataset(n=8)
    groups = [
        t.tracklet_id
        for m in (Modality.VIS, Modality.IR)
        for c in range(ds.n_cameras(m))
        for t in ds.group(m, c)
    ]
    assert sorted(groups) == sorted(t.tracklet_id for t in ds.tracklets)


def test_subtracklet_validation():
    with pytest.raises(ValueError):
        SubTracklet(parent="t0", k=0, start=3, end=3)


def test_train_config_invariants():
    with pytest.raises(ValueError):
        TrainConfig(thresh_init=0.8, thresh_final=0.9)
    with pytest.raises(ValueError):
        TrainConfig(intra_start_epoch=10, cross_start_epoch=5)
    with pytest.raises(ValueError):
        TrainConfig(loss_temp=0.0)
    with pytest.raises(ValueError):
        TrainConfig(ema_momentum=0.0)
    with pytest.raises(ValueError):
        TrainConfig(n_subtracklets=0)


def make_store(d=4, seed=0):
    rng = np.random.default_rng(seed)
    protos = []
    for modality in (Modality.VIS, Modality.IR):
        for cam in range(2):
            for i in range(3):
                v = rng.normal(size=d)
                protos.append(
                    Prototype(
                        tracklet_id=f"{modality.value}_{cam}_{i}",
                        modality=modality,
                        camera_id=cam,
                        vector=v / np.linalg.norm(v),
                    )
                )
    return PrototypeStore(protos)


def checkpoint_pair():
    params = encoder_init(
        d_in=4, embed_dim=8, ffn_dim=16, pool_hidden_dim=8, n_tte_layers=2,
        seq_len=3, seed=4,
    )
    return params, make_store(d=8)


def test_checkpoint_round_trip(tmp_path):
    params, store = checkpoint_pair()
    path = tmp_path / "checkpoint.hpt"
    save_checkpoint(params, store, epoch=17, path=path)
    loaded_params, loaded_store, epoch = load_checkpoint(path)

    assert epoch == 17
    for (name, orig), (_, back) in zip(params.named_arrays(), loaded_params.named_arrays()):
        np.testing.assert_array_equal(
            back, orig.astype("<f4").astype(np.float64), err_msg=name
        )
    assert len(loaded_store) == len(store)
    for modality in (Modality.VIS, Modality.IR):
        for cam in store.cameras(modality):
            orig_group = store.group(modality, cam)
            back_group = loaded_store.group(modality, cam)
            assert [p.tracklet_id for p in back_group] == [p.tracklet_id for p in orig_group]
            for o, b in zip(orig_group, back_group):
                np.testing.assert_array_equal(b.vector, o.vector.astype("<f4").astype(np.float64))

    # a second save of the loaded structures is byte-identical
    path2 = tmp_path / "again.hpt"
    save_checkpoint(loaded_params, loaded_store, epoch=17, path=path2)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_truncated(tmp_path):
    params, store = checkpoint_pair()
    path = tmp_path / "checkpoint.hpt"
    save_checkpoint(params, store, epoch=1, path=path)
    raw = path.read_bytes()
    (tmp_path / "cut.hpt").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "cut.hpt")


def test_checkpoint_version_mismatch(tmp_path):
    params, store = checkpoint_pair()
    path = tmp_path / "checkpoint.hpt"
    save_checkpoint(params, store, epoch=1, path=path)
    raw = path.read_bytes()
    (header_len,) = struct.unpack("<I", raw[:4])
    header = json.loads(raw[4 : 4 + header_len])
    header["format_version"] = 99
    new_header = json.dumps(header, sort_keys=True).encode()
    (tmp_path / "bad.hpt").write_bytes(
        struct.pack("<I", len(new_header)) + new_header + raw[4 + header_len :]
    )
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "bad.hpt")


def test_checkpoint_garbage(tmp_path):
    (tmp_path / "junk.hpt").write_bytes(b"\x01")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.hpt")


def test_store_lookup_and_order():
    store = make_store()
    assert store.cameras(Modality.VIS) == [0, 1]
    group = store.group(Modality.VIS, 0)
    assert [p.tracklet_id for p in group] == ["VIS_0_0", "VIS_0_1", "VIS_0_2"]
    assert store.get("IR_1_2").camera_id == 1
    with pytest.raises(KeyError):
        store.get("nope")
