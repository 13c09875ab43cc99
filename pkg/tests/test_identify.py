"""Distances, threshold calibration, decisions and clustering of suspect transcripts"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corefp.corefp_core import DegenerateTranscriptError, InsufficientDataError, SchemaError, ShapeError
from corefp.corefp_identify import (ClusterModel, Method, SuspectTranscript, Thresholds, Verdict, agglomerative,
                                    calibrate_threshold, calibrate_thresholds, classify_suspect, cos_dist, cos_matrix,
                                    cluster_features, decide, kind_group, kmeans, l1_dist, load_cluster_model,
                                    load_thresholds, load_transcript, majority_tags, query_suspect, read_verdicts_csv,
                                    save_cluster_model, save_thresholds, save_transcript, verdicts_csv)
from corefp.corefp_fingerprint import CorePoint, Fingerprint
from corefp.corefp_nn import forward
from corefp.corefp_zoo import ModelKind


def transcript(rows, labels=None, model_id="s"):
    rows = np.asarray(rows, dtype=np.float64)
    return SuspectTranscript(model_id, list(range(len(rows))) if labels is None else labels, rows)


def random_transcript(rng, n=4, model_id="s"):
    return transcript(rng.standard_normal((n, n)) + 0.1, model_id=model_id)

# ============================================================================
# METRICS
# ============================================================================

class TestMetricProperties:
    """Exhaustive over 100 random transcripts"""

    @pytest.fixture(scope="class")
    def transcripts(self):
        rng = np.random.default_rng(123)
        return [random_transcript(rng, model_id=f"t{i}") for i in range(100)]

    def test_identity_is_zero(self, transcripts):
        for t in transcripts:
            assert l1_dist(t, t) == 0.0
            assert cos_dist(t, t) == 0.0

    def test_symmetric_and_non_negative(self, transcripts):
        for a, b in zip(transcripts, transcripts[1:]):
            assert l1_dist(a, b) == l1_dist(b, a) >= 0.0
            assert cos_dist(a, b) == pytest.approx(cos_dist(b, a), abs=1e-15)
            assert cos_dist(a, b) >= 0.0

    def test_cos_matrix_diagonal_and_scale(self, transcripts):
        rng = np.random.default_rng(5)
        for t in transcripts:
            C = cos_matrix(t)
            assert np.max(np.abs(np.diag(C) - 1.0)) <= 1e-12
            scaled = cos_matrix(t.outputs * rng.uniform(0.1, 10.0))
            assert np.max(np.abs(scaled - C)) <= 1e-12


def test_l1_reads_target_entries_only():
    v = transcript([[5.0, 1.0], [0.0, 2.0]])
    s = transcript([[4.0, 9.0], [7.0, 2.5]])
    assert l1_dist(v, s) == pytest.approx(1.0 + 0.5)


def test_l1_two_point_example():
    v = transcript(np.diag([3.0, 5.0]))
    s = transcript(np.diag([2.5, 7.0]))
    assert l1_dist(v, s) == pytest.approx(2.5)


def test_cos_dist_hand_example():
    v = transcript([[1.0, 0.0], [0.0, 1.0]])
    s = transcript([[1.0, 0.0], [1.0, 0.0]], labels=[0, 1])
    assert cos_dist(v, s) == pytest.approx(0.5)


def test_zero_row_is_degenerate():
    with pytest.raises(DegenerateTranscriptError):
        cos_matrix(np.array([[1.0, 2.0], [0.0, 0.0]]))


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        l1_dist(transcript(np.eye(2)), transcript(np.eye(3)))
    with pytest.raises(ShapeError):
        cos_dist(transcript(np.eye(2)), transcript(np.eye(2), labels=[1, 0]))


def test_output_kinds_must_match():
    logits = transcript([[2.0, 0.0], [0.0, 2.0]])
    probs = SuspectTranscript("s", [0, 1], np.array([[0.9, 0.1], [0.1, 0.9]]), "probabilities")
    with pytest.raises(ShapeError, match="logits against probabilities"):
        l1_dist(logits, probs)
    with pytest.raises(ShapeError):
        cos_dist(probs, logits)


def test_transcript_validation():
    with pytest.raises(ShapeError):
        SuspectTranscript("s", [0, 5], np.eye(2))
    with pytest.raises(ValueError):
        SuspectTranscript("s", [0], np.array([[np.nan, 1.0]]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 100.0))
def test_cos_dist_ignores_positive_rescaling(seed, scale):
    rng = np.random.default_rng(seed)
    v = random_transcript(rng)
    s = random_transcript(rng)
    rescaled = transcript(s.outputs * scale)
    assert cos_dist(v, rescaled) == pytest.approx(cos_dist(v, s), abs=1e-12)

# ============================================================================
# QUERIES
# ============================================================================

class TestQuery:
    def test_transcript_matches_forward(self, small_zoo, tiny_split):
        fp = Fingerprint([CorePoint(label, tiny_split.victim.xs[label], 0.1, 0.0, 0, 0.5, True) for label in range(3)],
                         "victim")
        t = query_suspect(small_zoo.get("pm_fa-00").oracle(), fp)
        assert t.model_id == "pm_fa-00"
        assert t.shape == (3, 3)
        assert t.labels == fp.labels
        assert np.array_equal(t.outputs, forward(small_zoo.get("pm_fa-00").net, fp.points))
        probs = query_suspect(small_zoo.victim.oracle(), fp, "probabilities")
        assert np.allclose(probs.outputs.sum(axis=1), 1.0)

        with pytest.raises(TypeError):
            query_suspect(small_zoo.victim.oracle().label_only(), fp)
        with pytest.raises(ValueError):
            query_suspect(small_zoo.victim.oracle(), fp, "labels")

# ============================================================================
# CALIBRATION & DECISIONS
# ============================================================================

class TestCalibration:
    def test_midpoint_of_gap(self):
        d, margin, overlapping = calibrate_threshold([1.0, 2.0], [4.0, 6.0])
        assert (d, margin, overlapping) == (3.0, 2.0, False)

    def test_overlap_picks_fewest_errors(self):
        d, margin, overlapping = calibrate_threshold([1.0, 5.0], [3.0, 10.0])
        assert d == 2.0
        assert margin == -2.0
        assert overlapping

    def test_threshold_forced_positive(self):
        d, _, overlapping = calibrate_threshold([0.0], [0.0])
        assert overlapping
        assert d > 0

    def test_needs_both_groups(self):
        with pytest.raises(InsufficientDataError):
            calibrate_threshold([], [1.0])

    def test_population_calibration(self):
        victim = transcript(np.eye(3) * 4 + 0.5)
        near = transcript(np.eye(3) * 4 + 0.6, model_id="pm")
        far = transcript(np.array([[1.0, 3.0, 0.2], [2.0, 0.1, 1.0], [0.3, 0.4, 0.1]]), model_id="hm")
        th = calibrate_thresholds(victim, [(near, ModelKind.PM_FA), (far, "hm_sa")])
        assert th.d1 == pytest.approx((l1_dist(victim, near) + l1_dist(victim, far)) / 2)
        assert th.margin_cos > 0 and not th.overlap_cos
        assert decide(victim, near, th, Method.L1).is_piracy
        assert not decide(victim, far, th, Method.COS).is_piracy

    def test_population_needs_homologous(self):
        t = transcript(np.eye(2))
        with pytest.raises(InsufficientDataError):
            calibrate_thresholds(t, [(t, "PM_FA")])

    def test_decision_is_strict(self):
        v = transcript([[2.0, 0.0], [0.0, 2.0]])
        s = transcript([[1.0, 0.0], [0.0, 2.0]])
        assert not decide(v, s, Thresholds(1.0, 1.0), Method.L1).is_piracy
        assert decide(v, s, Thresholds(1.0 + 1e-9, 1.0), Method.L1).is_piracy

    def test_cluster_is_not_a_threshold_method(self):
        t = transcript(np.eye(2))
        with pytest.raises(ValueError):
            decide(t, t, Thresholds(1.0, 1.0), Method.CLUSTER)

    def test_thresholds_positive(self):
        with pytest.raises(ValueError):
            Thresholds(0.0, 1.0)

    def test_kind_group(self):
        assert kind_group(ModelKind.EM_DA_PR) == "EM"
        assert kind_group("pm_adv") == "PM"
        assert kind_group("HM") == "HM"

# ============================================================================
# CLUSTERING
# ============================================================================

def blobs():
    rng = np.random.default_rng(0)
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    X = np.concatenate([c + 0.1 * rng.standard_normal((5, 2)) for c in centers])
    kinds = ["HM_SA"] * 5 + ["PM_FA"] * 5 + ["EM_SA_L"] * 5
    return X, kinds


class TestClustering:
    def test_kmeans_recovers_blobs(self):
        X, kinds = blobs()
        cm = kmeans(X, 3, seed=1, kinds=kinds)
        assert cm.converged
        for start in (0, 5, 10):
            assert len(set(cm.assignments[start:start + 5])) == 1
        assert sorted(cm.tags) == ["EM", "HM", "PM"]

    def test_kmeans_is_seeded(self):
        X, _ = blobs()
        a, b = kmeans(X, 3, seed=4), kmeans(X, 3, seed=4)
        assert np.array_equal(a.assignments, b.assignments)
        assert np.array_equal(a.centers, b.centers)

    def test_kmeans_never_leaves_a_cluster_empty(self):
        X = np.array([[0.0], [0.0], [0.0], [5.0]])
        cm = kmeans(X, 3, seed=0)
        assert sorted(set(cm.assignments.tolist())) == [0, 1, 2]

    def test_kmeans_arguments(self):
        X, _ = blobs()
        with pytest.raises(InsufficientDataError):
            kmeans(X[:2], 3, seed=0)
        with pytest.raises(ValueError):
            kmeans(X, 0, seed=0)
        with pytest.raises(ValueError):
            kmeans(X, 2, seed=0, max_iters=0)

    def test_agglomerative_ties_merge_lowest_pair(self):
        cm = agglomerative(np.array([[0.0], [1.0], [2.0]]), 2)
        assert cm.assignments.tolist() == [0, 0, 1]
        assert cm.centers[:, 0].tolist() == [0.5, 2.0]

    def test_agglomerative_average_linkage(self):
        X, kinds = blobs()
        cm = agglomerative(X, 3, kinds=kinds)
        assert cm.tags == ["HM", "PM", "EM"]

    def test_majority_tie_order(self):
        assert majority_tags(np.array([0, 0, 1, 1]), 2, ["PM", "EM", "EM", "HM"]) == ["PM", "HM"]
        assert majority_tags(np.array([0]), 2, ["EM"]) == ["EM", "HM"]

    def test_classify_nearest_center(self):
        X, kinds = blobs()
        cm = kmeans(X, 3, seed=1, kinds=kinds)
        near_pm = classify_suspect(cm, np.array([9.8, 0.3]), "x")
        near_hm = classify_suspect(cm, np.array([0.2, -0.1]), "y")
        assert near_pm.is_piracy and near_pm.tag == "PM"
        assert not near_hm.is_piracy and near_hm.method is Method.CLUSTER

    def test_classify_needs_tags_and_matching_width(self):
        X, kinds = blobs()
        with pytest.raises(ValueError, match="tags"):
            classify_suspect(kmeans(X, 3, seed=1), X[0])
        with pytest.raises(ShapeError):
            classify_suspect(kmeans(X, 3, seed=1, kinds=kinds), np.zeros(3))

    def test_restarts_never_raise_inertia(self):
        X, _ = blobs()
        X = np.concatenate([X, np.random.default_rng(2).uniform(-2, 12, (10, 2))])

        def inertia(cm):
            return float(np.sum((X - cm.centers[cm.assignments]) ** 2))

        assert inertia(kmeans(X, 4, seed=3, n_init=8)) <= inertia(kmeans(X, 4, seed=3, n_init=1))
        with pytest.raises(ValueError):
            kmeans(X, 2, seed=0, n_init=0)

    def test_cosine_features_ignore_row_scale(self):
        rng = np.random.default_rng(8)
        base = [random_transcript(rng, model_id=f"t{i}") for i in range(6)]
        kinds = ["PM_FA"] * 3 + ["HM_SA"] * 3
        cm = kmeans(base, 2, seed=0, kinds=kinds, features="cosine")
        assert cm.centers.shape == (2, 6)
        scaled = transcript(base[4].outputs * np.array([[3.0], [0.5], [7.0], [1.5]]), model_id="big")
        assert classify_suspect(cm, scaled).cluster == classify_suspect(cm, base[4]).cluster
        np.testing.assert_allclose(cluster_features(scaled, "cosine"), cluster_features(base[4], "cosine"),
                                   atol=1e-12)

    def test_classify_rejects_other_output_kind(self):
        rng = np.random.default_rng(9)
        population = [random_transcript(rng, model_id=f"t{i}") for i in range(4)]
        cm = kmeans(population, 2, seed=0, kinds=["PM_FA", "PM_FA", "HM_SA", "HM_SA"])
        assert cm.output_kind == "logits"
        probs = SuspectTranscript("p", [0, 1, 2, 3], np.full((4, 4), 0.25), "probabilities")
        with pytest.raises(ShapeError):
            classify_suspect(cm, probs)

    def test_cluster_model_shape(self):
        with pytest.raises(ValueError):
            ClusterModel(2, np.zeros((3, 2)), np.zeros(3), "kmeans")

# ============================================================================
# PERSISTENCE
# ============================================================================

def test_transcript_and_threshold_files(tmp_path):
    t = transcript([[1.0, 2.0], [3.0, 4.0]], model_id="hm_sa-00")
    save_transcript(t, tmp_path / "t.json")
    assert np.array_equal(load_transcript(tmp_path / "t.json").outputs, t.outputs)
    th = Thresholds(1.5, 0.25, 0.5, -0.1, False, True)
    save_thresholds(th, tmp_path / "th.json")
    assert load_thresholds(tmp_path / "th.json") == th


def test_verdict_rows(tmp_path):
    verdicts = [Verdict("pm_fa-00", Method.COS, 0.125, True, kind_truth="PM_FA"),
                Verdict("hm_sa-01", Method.CLUSTER, 3.5, False, cluster=2, tag="HM", kind_truth="HM_SA")]
    path = tmp_path / "verdicts.csv"
    path.write_text(verdicts_csv(verdicts))
    assert path.read_text().splitlines()[0] == "model_id,kind_truth,method,distance,cluster,is_piracy"
    back = read_verdicts_csv(path)
    assert [(v.model_id, v.is_piracy, v.cluster) for v in back] == [("pm_fa-00", True, None), ("hm_sa-01", False, 2)]
    assert "cluster=2 tag=HM" in verdicts[1].line()
    assert verdicts[0].line() == "pm_fa-00: piracy (method=cos distance=0.125)"


def test_verdict_csv_columns_checked(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("model_id,method\nx,l1\n")
    with pytest.raises(SchemaError):
        read_verdicts_csv(path)


def test_cluster_model_file(tmp_path):
    X, kinds = blobs()
    cm = agglomerative(X, 3, kinds=kinds)
    save_cluster_model(cm, tmp_path / "cm.json")
    back = load_cluster_model(tmp_path / "cm.json")
    np.testing.assert_allclose(back.centers, cm.centers, rtol=1e-12)
    assert back.tags == cm.tags
    assert back.assignments.tolist() == cm.assignments.tolist()
    assert (back.algorithm, back.features, back.output_kind) == ("agglomerative-average", "outputs", "logits")
    assert classify_suspect(back, X[7], "x").tag == "PM"
    with pytest.raises(SchemaError):
        ClusterModel.from_dict({'k': 1})
