import numpy as np
import pytest

from hitpro.datamodel import Modality, PositiveKind, TrainConfig
from hitpro.encoder import encoder_init
from hitpro.evaluator import (
    distance_distribution,
    embed_tracklet,
    evaluate_dataset,
    evaluate_retrieval,
    mining_quality,
)
from hitpro.mining import MiningReport, MiningRow, build_mining_report
from hitpro.prototyping import build_prototypes
from hitpro.synthgen import GenConfig, generate_dataset

from conftest import random_store
from oracles import naive_retrieval


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def small_setup(seed=0):
    ds = generate_dataset(
        GenConfig(
            n_identities=5, cams_vis=2, cams_ir=2, d_in=6, d_latent=3,
            frame_len_min=4, frame_len_max=8, camera_offset_scale=0.2,
            modality_transform_scale=0.3, frame_noise=0.1, walk_step=0.05,
            seed=seed,
        )
    )
    cfg = TrainConfig(
        d_in=6, embed_dim=8, ffn_dim=16, pool_hidden_dim=8, n_tte_layers=1,
        seq_len=3, n_subtracklets=2, total_epochs=1, iters_per_epoch=1,
        intra_start_epoch=0, cross_start_epoch=0, seed=seed,
    )
    params = encoder_init(
        d_in=6, embed_dim=8, ffn_dim=16, pool_hidden_dim=8, n_tte_layers=1,
        seq_len=3, seed=seed,
    )
    return ds, cfg, params


def test_embed_matches_prototype_recipe():
    ds, cfg, params = small_setup()
    store = build_prototypes(params, ds, cfg)
    for t in ds.tracklets:
        np.testing.assert_allclose(
            embed_tracklet(params, t, cfg), store.get(t.tracklet_id).vector,
            rtol=0, atol=1e-10,
        )


def test_embed_deterministic():
    ds, cfg, params = small_setup()
    t = ds.tracklets[0]
    np.testing.assert_array_equal(
        embed_tracklet(params, t, cfg), embed_tracklet(params, t, cfg)
    )


def test_retrieval_perfect_case():
    gallery = [(unit([1.0, 0.0]), 0), (unit([0.0, 1.0]), 1)]
    queries = [(unit([0.9, 0.1]), 0), (unit([0.1, 0.9]), 1)]
    res = evaluate_retrieval(queries, gallery, max_rank=2)
    assert res.cmc[0] == 1.0
    assert res.mean_ap == 1.0


def test_retrieval_hand_case():
    # 2 queries, one relevant each, found at ranks 1 and 2
    gallery = [(unit([1.0, 0.0]), 0), (unit([0.0, 1.0]), 1)]
    queries = [
        (unit([1.0, 0.1]), 0),   # rank 1 hit
        (unit([1.0, 0.05]), 1),  # closer to gallery 0: its hit lands at rank 2
    ]
    res = evaluate_retrieval(queries, gallery, max_rank=2)
    assert res.cmc[0] == pytest.approx(0.5)
    assert res.cmc[1] == pytest.approx(1.0)
    assert res.mean_ap == pytest.approx(0.75)


def test_retrieval_matches_naive_oracle():
    rng = np.random.default_rng(7)
    queries = [(unit(rng.normal(size=6)), int(rng.integers(0, 6))) for _ in range(5)]
    gallery = [(unit(rng.normal(size=6)), i % 6) for i in range(20)]
    res = evaluate_retrieval(queries, gallery, max_rank=10)
    q_mat = np.stack([q for q, _ in queries])
    g_mat = np.stack([g for g, _ in gallery])
    sims = (q_mat @ g_mat.T).tolist()
    cmc, mean_ap = naive_retrieval(
        sims, [i for _, i in queries], [i for _, i in gallery], max_rank=10
    )
    np.testing.assert_allclose(res.cmc, cmc, rtol=0, atol=1e-12)
    assert res.mean_ap == pytest.approx(mean_ap, abs=1e-12)


def test_cmc_monotone_and_map_bounded():
    rng = np.random.default_rng(3)
    queries = [(unit(rng.normal(size=4)), int(rng.integers(0, 4))) for _ in range(8)]
    gallery = [(unit(rng.normal(size=4)), i % 4) for i in range(16)]
    res = evaluate_retrieval(queries, gallery, max_rank=12)
    assert np.all(np.diff(res.cmc) >= 0)
    assert res.cmc[-1] <= 1.0
    assert 0.0 <= res.mean_ap <= res.cmc[-1]


def test_retrieval_scale_invariance():
    rng = np.random.default_rng(11)
    queries = [(unit(rng.normal(size=4)), int(rng.integers(0, 3))) for _ in range(6)]
    gallery = [(unit(rng.normal(size=4)), i % 3) for i in range(9)]
    a = evaluate_retrieval(queries, gallery, max_rank=5)
    scaled_q = [(q * 3.7, i) for q, i in queries]
    scaled_g = [(g * 0.2, i) for g, i in gallery]
    b = evaluate_retrieval(scaled_q, scaled_g, max_rank=5)
    np.testing.assert_array_equal(a.cmc, b.cmc)
    assert a.mean_ap == b.mean_ap


def test_retrieval_missing_identity_rejected():
    gallery = [(unit([1.0, 0.0]), 0)]
    queries = [(unit([1.0, 0.0]), 5)]
    with pytest.raises(ValueError, match="absent"):
        evaluate_retrieval(queries, gallery)


def test_tie_break_by_gallery_index():
    g = unit([1.0, 0.0])
    gallery = [(g.copy(), 0), (g.copy(), 1)]  # identical vectors: tie
    queries = [(g.copy(), 1)]
    res = evaluate_retrieval(queries, gallery, max_rank=2)
    # gallery 0 wins the tie, so the correct match sits at rank 2
    assert res.cmc[0] == 0.0
    assert res.cmc[1] == 1.0


def test_evaluate_dataset_both_directions():
    ds, cfg, params = small_setup()
    results = evaluate_dataset(params, ds, cfg, max_rank=5)
    assert set(results) == {"IR->VIS", "VIS->IR"}
    for res in results.values():
        assert res.n_query > 0 and res.n_gallery > 0
        assert np.all(np.diff(res.cmc) >= 0)


def test_distance_distribution_identical_embeddings():
    e = unit([1.0, 0.0])
    embeddings = [(e.copy(), 0), (e.copy(), 0), (e.copy(), 1), (e.copy(), 1)]
    out = distance_distribution(embeddings, n_pairs=100, rng=np.random.default_rng(0))
    np.testing.assert_allclose(out["positive_distances"], 0.0, atol=1e-12)
    np.testing.assert_allclose(out["negative_distances"], 0.0, atol=1e-12)


def test_distance_distribution_orthogonal_clusters():
    a, b = unit([1.0, 0.0]), unit([0.0, 1.0])
    embeddings = [(a.copy(), 0), (a.copy(), 0), (b.copy(), 1), (b.copy(), 1)]
    out = distance_distribution(embeddings, n_pairs=64, rng=np.random.default_rng(1))
    np.testing.assert_allclose(out["positive_distances"], 0.0, atol=1e-12)
    np.testing.assert_allclose(out["negative_distances"], 1.0, atol=1e-12)


def test_distance_distribution_sample_mean_matches_enumeration():
    rng = np.random.default_rng(5)
    embeddings = [
        (unit(rng.normal(size=8) + 2.0 * np.eye(8)[i % 4]), i % 4) for i in range(100)
    ]
    out = distance_distribution(
        embeddings, n_pairs=40_000, rng=np.random.default_rng(9)
    )
    mat = np.stack([e for e, _ in embeddings])
    ids = np.array([i for _, i in embeddings])
    sims = mat @ mat.T
    iu = np.triu_indices(len(ids), k=1)
    same = ids[iu[0]] == ids[iu[1]]
    pos_mean = float(np.mean(1.0 - sims[iu][same]))
    neg_mean = float(np.mean(1.0 - sims[iu][~same]))
    assert abs(float(out["positive_distances"].mean()) - pos_mean) < 0.02
    assert abs(float(out["negative_distances"].mean()) - neg_mean) < 0.02


def test_distance_distribution_requires_both_kinds():
    e = unit([1.0, 0.0])
    with pytest.raises(ValueError):
        distance_distribution([(e, 0), (e, 0)], n_pairs=10, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        distance_distribution([(e, 0), (e, 1)], n_pairs=10, rng=np.random.default_rng(0))


def test_mining_quality_all_correct():
    rng = np.random.default_rng(2)
    store, _ = random_store(rng, cams_vis=2, cams_ir=2, max_per_cam=2)
    cfg = TrainConfig(total_epochs=10, intra_start_epoch=0, cross_start_epoch=0)
    report = build_mining_report(store, Modality.VIS, PositiveKind.INTRA_MODAL, 0, cfg)
    gt = {}
    for m in (Modality.VIS, Modality.IR):
        for p in store.modality_prototypes(m):
            gt[p.tracklet_id] = 7  # single identity: every pair is correct
    precision, recall = mining_quality(report, gt)
    if any(r.accepted for r in report.rows):
        assert precision == 1.0
        assert 0.0 < recall <= 1.0


def test_mining_quality_empty_accepted():
    report = MiningReport(
        source_modality=Modality.VIS, kind=PositiveKind.INTRA_MODAL, epoch=0,
        rows=[MiningRow(source="a", s_max=0.5, threshold=0.9,
                        candidates=[(1, "b", 0.5)], accepted=[])],
    )
    precision, recall = mining_quality(report, {"a": 0, "b": 0})
    assert precision is None
    assert recall == 0.0


def test_mining_quality_hand_counts():
    # six prototypes; source s0 accepts one true and one false target,
    # and skips a true candidate in a third camera
    rows = [
        MiningRow(
            source="s0", s_max=0.9, threshold=0.6,
            candidates=[(1, "t1", 0.9), (2, "t2", 0.7), (3, "t3", 0.5)],
            accepted=[("t1", 0.9, 0.6), ("t2", 0.7, 0.4)],
        ),
    ]
    report = MiningReport(source_modality=Modality.VIS,
                          kind=PositiveKind.INTRA_MODAL, epoch=0, rows=rows)
    gt = {"s0": 1, "t1": 1, "t2": 2, "t3": 1}
    precision, recall = mining_quality(report, gt)
    assert precision == pytest.approx(0.5)  # 1 of 2 accepted correct
    assert recall == pytest.approx(0.5)  # t1 accepted, t3 (true candidate) missed
