"""DeepFool radius, core point generation and fingerprint artifacts"""

import numpy as np
import pytest

from corefp.corefp_core import CoreGenerationError, DegenerateGeometryError, SchemaError
from corefp.corefp_fingerprint import (BOUNDARY_TOL, CoreGenConfig, Fingerprint, InitMode, core_loss,
                                       deepfool_radius, generate_core_point, generate_fingerprint,
                                       load_fingerprint, save_fingerprint)
from corefp.corefp_harness import score_radius_correlation
from corefp.corefp_nn import LayerSpec, Network, forward, predict, save_network, softmax

from conftest import linear_net, tanh_net

CHEAP = CoreGenConfig(seed=2, outer_max_epochs=200, burst=50)


def analytic_distance(W, b, x):
    z = W @ x + b
    top = int(np.argmax(z))
    return min(abs(z[l] - z[top]) / np.linalg.norm(W[l] - W[top]) for l in range(len(z)) if l != top)


def saturating_net() -> Network:
    """1-D input, tanh hidden unit, logits (2 tanh(x) - 1, 0)"""
    layers = [LayerSpec("dense", 1, 1), LayerSpec("tanh", 1, 1), LayerSpec("dense", 1, 2)]
    params = [(np.array([[1.0]]), np.array([0.0])), None, (np.array([[2.0], [0.0]]), np.array([-1.0, 0.0]))]
    return Network(layers, params, "saturating")

# ============================================================================
# DEEPFOOL
# ============================================================================

class TestDeepFool:
    def test_binary_linear_distance_in_one_step(self):
        w = np.array([1.0, 2.0, -1.0])
        net = linear_net(np.stack([w, np.zeros(3)]))
        x = np.array([0.5, 0.25, 0.1])
        result = deepfool_radius(net, x, overshoot=0.0)
        assert result.radius == pytest.approx(0.9 / np.sqrt(6.0), rel=1e-9)
        assert result.iters == 1
        assert result.converged

    def test_random_linear_classifiers(self):
        rng = np.random.default_rng(2024)
        for _ in range(20):
            W = rng.standard_normal((4, 6))
            b = rng.standard_normal(4)
            x = rng.uniform(size=6)
            result = deepfool_radius(linear_net(W, b), x, overshoot=0.0)
            expected = analytic_distance(W, b, x)
            assert abs(result.radius - expected) <= 1e-3 * expected
            assert result.iters <= 2

    def test_point_on_boundary_has_zero_radius(self):
        result = deepfool_radius(linear_net(np.eye(2)), np.array([0.5, 0.5]))
        assert result.radius == 0.0
        assert result.iters == 0
        assert result.converged
        assert result.final_label == 1

    def test_flat_network_is_degenerate(self):
        with pytest.raises(DegenerateGeometryError):
            deepfool_radius(linear_net(np.zeros((2, 2))), np.array([0.3, 0.7]))

    def test_iteration_cap_without_flip(self):
        result = deepfool_radius(saturating_net(), np.array([0.0]), overshoot=0.0, max_iters=1)
        assert result.radius == pytest.approx(0.5)
        assert not result.converged
        assert result.final_label == 1

    def test_overshoot_crosses_curved_boundary(self):
        result = deepfool_radius(saturating_net(), np.array([0.0]))
        assert result.converged
        assert result.final_label == 0
        assert 0.549 < result.radius < 0.6
        assert np.argmax(forward(saturating_net(), result.perturbation)) == 0

    def test_perturbation_norm_is_radius(self):
        net = tanh_net(11)
        result = deepfool_radius(net, np.full(5, 0.4))
        assert result.radius == pytest.approx(np.linalg.norm(result.perturbation))
        if result.converged and result.radius > BOUNDARY_TOL:
            assert predict(net, np.full(5, 0.4) + result.perturbation)[0] != predict(net, np.full(5, 0.4))[0]

# ============================================================================
# CONFIG & LOSS
# ============================================================================

class TestConfig:
    def test_defaults(self):
        cfg = CoreGenConfig()
        assert (cfg.theta, cfg.gamma, cfg.outer_max_epochs, cfg.burst) == (0.1, 1e-2, 2000, 100)
        assert cfg.init is InitMode.FROM_DATA

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            CoreGenConfig(theta=0.0)
        with pytest.raises(ValueError):
            CoreGenConfig(burst=0)
        with pytest.raises(ValueError):
            CoreGenConfig(clip_box=(1.0, 0.0))

    def test_infinite_gamma_survives_dict(self):
        cfg = CoreGenConfig(gamma=float("inf"), init="UNIFORM_NOISE", clip_box=[0, 1])
        d = cfg.to_dict()
        assert d['gamma'] == "inf"
        assert CoreGenConfig.from_dict(d) == cfg


def test_core_loss_is_negative_log_confidence():
    net = tanh_net(1)
    x = np.full(5, 0.2)
    assert core_loss(net, x, 3) == pytest.approx(-np.log(softmax(forward(net, x))[3]))

# ============================================================================
# CORE POINTS
# ============================================================================

class TestCorePoint:
    def test_descent_raises_confidence(self):
        net = tanh_net(4)
        cfg = CoreGenConfig(init=InitMode.UNIFORM_NOISE, gamma=float("inf"), burst=20, seed=1)
        cp = generate_core_point(net, 2, cfg)
        assert [c.epoch for c in cp.checkpoints] == [0, 20]
        assert cp.checkpoints[1].confidence > cp.checkpoints[0].confidence
        assert cp.epochs_used == 20

    def test_checkpoints_every_burst(self):
        cfg = CoreGenConfig(init=InitMode.UNIFORM_NOISE, outer_max_epochs=70, burst=20, gamma=1e-300, seed=1)
        cp = generate_core_point(tanh_net(4), 0, cfg)
        epochs = [c.epoch for c in cp.checkpoints]
        assert epochs == sorted(epochs)
        assert all(e in (0, 20, 40, 60, 70) for e in epochs)

    def test_unsettled_radius_keeps_best_classified_checkpoint(self):
        cfg = CoreGenConfig(init=InitMode.UNIFORM_NOISE, outer_max_epochs=40, burst=10, gamma=1e-300, seed=3)
        cp = generate_core_point(tanh_net(8), 1, cfg)
        assert not cp.converged
        classified = [c for c in cp.checkpoints if c.classified]
        if classified:
            assert cp.radius == max(c.radius for c in classified)

    def test_huge_gamma_stops_after_one_burst(self):
        cfg = CoreGenConfig(init=InitMode.UNIFORM_NOISE, gamma=float("inf"), burst=5, seed=0)
        cp = generate_core_point(tanh_net(2), 1, cfg)
        assert cp.converged
        assert cp.epochs_used == 5

    def test_clip_box_holds_every_checkpoint(self):
        cfg = CoreGenConfig(init=InitMode.UNIFORM_NOISE, clip_box=(0.0, 1.0), theta=1.0,
                            outer_max_epochs=60, burst=20, seed=0)
        cp = generate_core_point(tanh_net(5), 0, cfg)
        for c in cp.checkpoints:
            assert c.point.min() >= 0.0 and c.point.max() <= 1.0

    def test_seeded(self):
        cfg = CoreGenConfig(init=InitMode.UNIFORM_NOISE, outer_max_epochs=40, burst=20, seed=9)
        a = generate_core_point(tanh_net(6), 3, cfg)
        b = generate_core_point(tanh_net(6), 3, cfg)
        assert np.array_equal(a.point, b.point)

    def test_explicit_initial_point(self):
        cfg = CoreGenConfig(outer_max_epochs=20, burst=20)
        x0 = np.full(5, 0.5)
        cp = generate_core_point(tanh_net(6), 0, cfg, init_point=x0)
        assert np.array_equal(cp.checkpoints[0].point, x0)

    def test_from_data_needs_pool(self):
        with pytest.raises(ValueError, match="init_pool"):
            generate_core_point(tanh_net(6), 0, CoreGenConfig())

# ============================================================================
# FINGERPRINTS
# ============================================================================

class TestFingerprint:
    def test_one_classified_point_per_label(self, desk_victim, desk_split):
        fp = generate_fingerprint(desk_victim.net, CHEAP, init_pool=desk_split.victim)
        assert fp.labels == [0, 1, 2, 3, 4]
        assert predict(desk_victim.net, fp.points).tolist() == fp.labels
        assert np.all(fp.radii > 0)

    def test_initial_points_come_from_pool(self, desk_victim, desk_split):
        fp = generate_fingerprint(desk_victim.net, CHEAP, init_pool=desk_split.victim)
        initial = fp.initial()
        assert 0 in fp.checkpoint_epochs()
        for cp in initial.core_points:
            assert any(np.array_equal(cp.point, x) for x in desk_split.victim.xs[desk_split.victim.ys == cp.label])

    def test_at_epoch_picks_latest_checkpoint(self, desk_victim, desk_split):
        fp = generate_fingerprint(desk_victim.net, CHEAP, init_pool=desk_split.victim)
        snapshot = fp.at_epoch(50)
        for cp, snap in zip(fp.core_points, snapshot.core_points):
            latest = [c for c in cp.checkpoints if c.epoch <= 50][-1]
            assert snap.epochs_used == latest.epoch
            assert np.array_equal(snap.point, latest.point)
        assert snapshot.config["epoch"] == 50

    def test_top_k_keeps_largest_radii_in_label_order(self, desk_victim, desk_split):
        full = generate_fingerprint(desk_victim.net, CHEAP, init_pool=desk_split.victim)
        top = generate_fingerprint(desk_victim.net, CHEAP, init_pool=desk_split.victim, top_k=3, threads=2)
        assert len(top) == 3
        assert top.labels == sorted(top.labels)
        assert sorted(top.radii) == sorted(full.radii)[-3:]
        assert top.config['top_k'] == 3

    def test_top_k_out_of_range(self, desk_victim):
        with pytest.raises(ValueError, match="top_k"):
            generate_fingerprint(desk_victim.net, CHEAP, top_k=6)

    def test_failed_label_reports_partial_progress(self, desk_victim, desk_split):
        with pytest.raises(CoreGenerationError) as info:
            generate_fingerprint(desk_victim.net, CHEAP, init_pool=desk_split.victim, labels=[0, 99])
        assert list(info.value.partial) == [0]

    def test_validation(self, desk_fingerprint):
        with pytest.raises(ValueError):
            Fingerprint([], "victim")
        cp = desk_fingerprint.core_points[0]
        with pytest.raises(ValueError, match="distinct"):
            Fingerprint([cp, cp], "victim")
        with pytest.raises(ValueError, match="output kind"):
            Fingerprint([cp], "victim", output_kind="labels")

    def test_round_trip(self, tmp_path, desk_fingerprint):
        save_fingerprint(desk_fingerprint, tmp_path / "fp.json")
        loaded = load_fingerprint(tmp_path / "fp.json")
        assert np.array_equal(loaded.points, desk_fingerprint.points)
        assert loaded.labels == desk_fingerprint.labels
        assert [len(cp.checkpoints) for cp in loaded.core_points] == \
            [len(cp.checkpoints) for cp in desk_fingerprint.core_points]
        assert loaded.victim_outputs is None
        assert loaded.output_kind == "logits"

    def test_output_kind_survives_file(self, tmp_path, desk_fingerprint):
        fp = Fingerprint(desk_fingerprint.core_points, "victim", victim_outputs=np.full((len(desk_fingerprint), 5), 0.2),
                         output_kind="probabilities")
        save_fingerprint(fp, tmp_path / "fp.json")
        assert load_fingerprint(tmp_path / "fp.json").output_kind == "probabilities"

    def test_wrong_artifact_type(self, tmp_path, desk_victim):
        save_network(desk_victim.net, tmp_path / "net.json")
        with pytest.raises(SchemaError):
            load_fingerprint(tmp_path / "net.json")


@pytest.mark.slow
def test_radius_grows_with_score(desk_fingerprint):
    for label, rho in score_radius_correlation(desk_fingerprint).items():
        assert rho is not None and rho >= 0.8, f"label {label}: spearman {rho}"
