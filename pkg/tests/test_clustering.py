import json

import numpy as np
import pytest

from emocluster.clustering import (
    KMeansConfig,
    center_distances,
    cluster_speakers,
    kmeans,
    run_from_dict,
    run_to_dict,
)
from emocluster.corpus import SynthSpec, generate_synthetic, length_normalize
from emocluster.serialize import canonical_dumps


def test_two_separated_pairs():
    points = np.array([[0.0, 0.0], [0.0, 0.1], [10.0, 10.0], [10.0, 10.1]])
    assign, centers, inertia = kmeans(points, KMeansConfig(k=2, seed=0))
    assert len(set(assign.tolist())) == 2
    centers_sorted = centers[np.argsort(centers[:, 0])]
    assert np.allclose(centers_sorted, [[0.0, 0.05], [10.0, 10.05]], atol=1e-9)
    assert inertia == pytest.approx(0.01, abs=1e-9)


def test_k1_closed_form():
    rng = np.random.default_rng(0)
    points = rng.normal(size=(40, 3))
    assign, centers, inertia = kmeans(points, KMeansConfig(k=1, seed=0))
    assert np.allclose(centers[0], points.mean(axis=0))
    assert inertia == pytest.approx(((points - points.mean(axis=0)) ** 2).sum())
    assert set(assign.tolist()) == {0}


def test_beats_random_assignment_baselines():
    rng = np.random.default_rng(123)
    points = rng.normal(size=(50, 4))
    _, centers, inertia = kmeans(points, KMeansConfig(k=3, seed=7))
    for _ in range(1000):
        labels = rng.integers(0, 3, size=50)
        if len(set(labels.tolist())) < 3:
            continue
        baseline_centers = np.stack([points[labels == c].mean(axis=0) for c in range(3)])
        diff = points - baseline_centers[labels]
        baseline = float((diff * diff).sum())
        assert inertia <= baseline + 1e-9


def test_assignment_consistency_invariant():
    rng = np.random.default_rng(5)
    points = rng.normal(size=(60, 3))
    assign, centers, _ = kmeans(points, KMeansConfig(k=4, seed=2))
    dists = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assert np.array_equal(np.argmin(dists, axis=1), assign)


def test_centers_are_member_means():
    rng = np.random.default_rng(6)
    points = rng.normal(size=(80, 2))
    assign, centers, _ = kmeans(points, KMeansConfig(k=3, seed=3, tol=1e-12, max_iters=500))
    for c in range(centers.shape[0]):
        members = points[assign == c]
        assert len(members)
        assert np.allclose(centers[c], members.mean(axis=0), atol=1e-6)


def test_determinism():
    rng = np.random.default_rng(9)
    points = rng.normal(size=(30, 3))
    a = kmeans(points, KMeansConfig(k=3, seed=11))
    b = kmeans(points, KMeansConfig(k=3, seed=11))
    assert np.array_equal(a[0], b[0]) and np.allclose(a[1], b[1]) and a[2] == b[2]


def test_k_exceeding_distinct_points_degrades():
    points = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 1.0]])
    assign, centers, inertia = kmeans(points, KMeansConfig(k=4, seed=0))
    assert centers.shape[0] == 2  # only 2 distinct points
    assert inertia == pytest.approx(0.0, abs=1e-12)


def test_inertia_nonnegative_and_best_of_restarts():
    from emocluster.clustering import _kmeanspp_init, _lloyd
    from emocluster.serialize import stable_seed

    rng = np.random.default_rng(21)
    points = rng.normal(size=(40, 2))
    config = KMeansConfig(k=3, seed=13, n_restarts=8)
    _, _, best = kmeans(points, config)
    assert best >= 0
    # recompute every individual restart with the same derived seeds
    singles = []
    for restart in range(config.n_restarts):
        restart_rng = np.random.default_rng(stable_seed(config.seed, "kmeans", restart))
        init = _kmeanspp_init(points, 3, restart_rng)
        singles.append(_lloyd(points, init, config.max_iters, config.tol)[2])
    assert best == pytest.approx(min(singles), abs=1e-12)
    assert all(best <= s + 1e-12 for s in singles)


def _normalized_corpus(seed=8, **overrides):
    kwargs = dict(
        n_speakers=4, n_emotions=4, utts_per_cell=20, dim=8,
        speaker_spread=1.0, emotion_offset_norm=1.0, within_noise=0.25, seed=seed,
    )
    kwargs.update(overrides)
    return length_normalize(generate_synthetic(SynthSpec(**kwargs)))


def test_cluster_speakers_recovers_structure():
    corpus = _normalized_corpus()
    run = cluster_speakers(corpus, KMeansConfig(k=4, seed=1))
    assert set(run.per_speaker) == set(corpus.speakers)
    for sc in run.per_speaker.values():
        assert sc.effective_k == 4
        assert sc.inertia >= 0
        assert len(sc.assignments) == 80


def test_cluster_speakers_warns_when_unnormalized():
    spec = SynthSpec(n_speakers=2, n_emotions=2, utts_per_cell=5, dim=4, seed=3)
    raw = generate_synthetic(spec)
    with pytest.warns(UserWarning, match="not length-normalized"):
        cluster_speakers(raw, KMeansConfig(k=2, seed=0))


def test_cluster_speakers_degenerate_speaker_warns():
    from emocluster.corpus import EmbeddingRecord, build_corpus

    recs = [
        EmbeddingRecord(f"u{i}", "tiny", None, np.eye(3)[i % 3].astype(float)) for i in range(3)
    ]
    corpus = build_corpus(recs)
    with pytest.warns(UserWarning, match="degrading"):
        run = cluster_speakers(corpus, KMeansConfig(k=4, seed=0))
    assert run.per_speaker["tiny"].effective_k <= 3


def test_speaker_order_independence():
    corpus = _normalized_corpus()
    run1 = cluster_speakers(corpus, KMeansConfig(k=4, seed=1))
    from emocluster.corpus import build_corpus

    reversed_corpus = build_corpus(list(reversed(corpus.records)))
    run2 = cluster_speakers(reversed_corpus, KMeansConfig(k=4, seed=1))
    for spk in run1.per_speaker:
        assert run1.per_speaker[spk].assignments == run2.per_speaker[spk].assignments
        assert np.allclose(run1.per_speaker[spk].centers, run2.per_speaker[spk].centers)


def test_center_distances_345():
    from emocluster.clustering import SpeakerClustering

    sc = SpeakerClustering(
        spk_id="s", assignments={}, centers=np.array([[0.0, 0.0], [3.0, 4.0]]),
        inertia=0.0, effective_k=2, seed_used=0,
    )
    d = center_distances(sc)
    assert d.shape == (2, 2)
    assert d[0, 1] == pytest.approx(5.0)
    assert np.allclose(d, d.T)
    assert np.allclose(np.diag(d), 0.0)


def test_center_distances_matches_elementwise_recomputation():
    rng = np.random.default_rng(3)
    from emocluster.clustering import SpeakerClustering

    centers = rng.normal(size=(5, 4))
    sc = SpeakerClustering("s", {}, centers, 0.0, 5, 0)
    d = center_distances(sc)
    for i in range(5):
        for j in range(5):
            assert d[i, j] == pytest.approx(float(np.linalg.norm(centers[i] - centers[j])), abs=1e-12)


def test_run_json_roundtrip():
    corpus = _normalized_corpus(n_speakers=2, utts_per_cell=6)
    run = cluster_speakers(corpus, KMeansConfig(k=3, seed=5))
    payload = run_to_dict(run)
    blob = canonical_dumps(payload)
    restored = run_from_dict(json.loads(blob))
    assert restored.config == run.config
    for spk in run.per_speaker:
        assert restored.per_speaker[spk].assignments == run.per_speaker[spk].assignments
        assert np.allclose(restored.per_speaker[spk].centers, run.per_speaker[spk].centers)
        assert restored.per_speaker[spk].inertia == pytest.approx(run.per_speaker[spk].inertia)


def test_config_validation():
    with pytest.raises(ValueError):
        KMeansConfig(k=0).validate()
    with pytest.raises(ValueError):
        KMeansConfig(n_restarts=0).validate()
