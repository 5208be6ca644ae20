import numpy as np
import pytest

from artwalk.attack import (
    AttackAbortedError,
    AttackConfig,
    Perturbation,
    SceneBattery,
    estimate_gradient,
    load_perturbation,
    objectness_loss,
    optimize_perturbation,
    save_perturbation,
)
from artwalk.compose import LoadedScene, apply_perturbation, compose_scene
from artwalk.detect import Detection, SyntheticDetector
from artwalk.errors import AdapterDeadError, InputError
from artwalk.raster import BinaryMask, Raster
from artwalk.scenegen import SceneGenConfig, generate_scene, stripe_art

COMPACT = SceneGenConfig(
    seed=7, image_size=(192, 160), n_crosswalks=1,
    pedestrians_per_scene=(2, 2), perspective_skew=0.12,
)


@pytest.fixture(scope="module")
def scenes():
    return [generate_scene(COMPACT, i).scene for i in range(2)]


def fake_scene(rng):
    return LoadedScene(
        background=Raster(rng.random((20, 24, 3))),
        regions=[],
        ground_truth=[],
        foregrounds=[],
    )


def boxes(*objs):
    return [Detection(x=0, y=0, w=4, h=4, objectness=o) for o in objs]


class TestObjectnessLoss:
    def test_no_detections_gives_zero(self, rng):
        art = Raster(rng.random((8, 8, 3)))
        batch = [fake_scene(rng)]
        assert objectness_loss(art, np.zeros(art.data.shape), batch, lambda r: []) == 0.0

    def test_max_rule_single_image(self, rng):
        art = Raster(rng.random((8, 8, 3)))
        batch = [fake_scene(rng)]
        detector = lambda r: boxes(0.7, 0.9)
        assert objectness_loss(art, np.zeros(art.data.shape), batch, detector) == 0.9

    def test_mean_of_maxima(self, rng):
        art = Raster(rng.random((8, 8, 3)))
        batch = [fake_scene(rng), fake_scene(rng)]
        replies = iter([boxes(0.8), boxes(0.4)])
        detector = lambda r: next(replies)
        assert objectness_loss(art, np.zeros(art.data.shape), batch, detector) == pytest.approx(0.6)

    def test_max_aggregate(self, rng):
        art = Raster(rng.random((8, 8, 3)))
        batch = [fake_scene(rng), fake_scene(rng)]
        replies = iter([boxes(0.8), boxes(0.4)])
        detector = lambda r: next(replies)
        assert objectness_loss(
            art, np.zeros(art.data.shape), batch, detector, aggregate="max"
        ) == 0.8

    def test_loss_in_unit_interval(self, scenes):
        art = stripe_art()
        loss = objectness_loss(art, np.zeros(art.data.shape), scenes, SyntheticDetector())
        assert 0.0 <= loss <= 1.0


class TestSceneBattery:
    def test_compose_matches_compose_scene_bitwise(self, scenes, rng):
        art = stripe_art()
        det = SyntheticDetector()
        battery = SceneBattery(art, scenes, det)
        delta = rng.uniform(-0.05, 0.05, size=art.data.shape)
        perturbed = apply_perturbation(art, delta)
        art_values = np.clip(art.data + delta, 0.0, 1.0)
        for scene, plan in zip(scenes, battery._plans):
            fast = battery.compose(art_values, plan)
            reference = compose_scene(
                scene.background, scene.regions, perturbed, scene.foregrounds
            )
            assert np.array_equal(fast, reference.data)

    def test_loss_matches_explicit_pipeline(self, scenes, rng):
        art = stripe_art()
        det = SyntheticDetector()
        delta = rng.uniform(-0.05, 0.05, size=art.data.shape)
        fast = objectness_loss(art, delta, scenes, det)
        maxima = []
        for scene in scenes:
            img = compose_scene(
                scene.background, scene.regions, apply_perturbation(art, delta),
                scene.foregrounds,
            )
            dets = det(img)
            maxima.append(max((d.objectness for d in dets), default=0.0))
        assert fast == pytest.approx(float(np.mean(maxima)), abs=1e-12)

    def test_empty_batch_rejected(self, rng):
        art = Raster(rng.random((8, 8, 3)))
        with pytest.raises(InputError):
            SceneBattery(art, [], lambda r: [])


class TestEstimateGradient:
    def test_constant_loss_exactly_zero(self, rng):
        art = Raster(rng.random((4, 4, 3)))
        cfg = AttackConfig(queries_per_gradient=8, seed=1)
        grad = estimate_gradient(
            art, np.zeros((4, 4, 3)), None, None, cfg, loss_fn=lambda v: 0.42
        )
        assert np.all(grad == 0.0)

    def test_linear_loss_calibration(self):
        """Estimator mean equals the analytic gradient of <c, delta>."""
        shape = (2, 2, 3)
        rng = np.random.default_rng(99)
        c = rng.uniform(-1, 1, size=shape)
        cfg = AttackConfig(queries_per_gradient=1, smoothing_sigma=4 / 255, seed=0)
        probe_rng = np.random.default_rng(555)
        total = np.zeros(shape)
        n = 10_000
        for _ in range(n):
            total += estimate_gradient(
                Raster(np.zeros(shape) + 0.5), np.zeros(shape), None, None, cfg,
                rng=probe_rng, loss_fn=lambda v: float((c * v).sum()),
            )
        mean = total / n
        rel_err = np.linalg.norm(mean - c) / np.linalg.norm(c)
        assert rel_err < 0.05

    def test_quadratic_loss_calibration(self):
        """Estimator mean approximates 2*delta0 for ||delta||^2 at delta0."""
        shape = (2, 2, 3)
        rng = np.random.default_rng(7)
        delta0 = rng.uniform(-0.5, 0.5, size=shape)
        cfg = AttackConfig(queries_per_gradient=1, smoothing_sigma=4 / 255, seed=0)
        probe_rng = np.random.default_rng(321)
        total = np.zeros(shape)
        n = 10_000
        for _ in range(n):
            total += estimate_gradient(
                Raster(np.zeros(shape) + 0.5), delta0, None, None, cfg,
                rng=probe_rng, loss_fn=lambda v: float((v ** 2).sum()),
            )
        mean = total / n
        rel_err = np.linalg.norm(mean - 2 * delta0) / np.linalg.norm(2 * delta0)
        assert rel_err < 0.10

    def test_support_zeroes_directions(self, rng):
        shape = (4, 4, 3)
        support = np.zeros((4, 4), dtype=bool)
        support[0, 0] = True
        cfg = AttackConfig(queries_per_gradient=4, seed=5)
        grad = estimate_gradient(
            Raster(np.full(shape, 0.5)), np.zeros(shape), None, None, cfg,
            loss_fn=lambda v: float(v.sum()),
            support=BinaryMask(support),
        )
        assert np.all(grad[1:, :, :] == 0.0)
        assert np.all(grad[0, 1:, :] == 0.0)


class TestPerturbationType:
    def test_epsilon_bound_enforced(self):
        with pytest.raises(InputError):
            Perturbation(values=np.full((2, 2, 3), 0.2), epsilon=0.1)

    def test_support_zero_outside_enforced(self):
        support = np.zeros((2, 2), dtype=bool)
        support[0, 0] = True
        values = np.full((2, 2, 3), 0.05)
        with pytest.raises(InputError):
            Perturbation(values=values, epsilon=0.1, support=BinaryMask(support))

    def test_save_load_roundtrip(self, tmp_path, rng):
        support = np.zeros((6, 8), dtype=bool)
        support[2:5, 1:7] = True
        eps = 16 / 255
        values = rng.uniform(-eps, eps, size=(6, 8, 3))
        values[~support] = 0.0
        pert = Perturbation(values=values, epsilon=eps, support=BinaryMask(support))
        sidecar = save_perturbation(pert, tmp_path)
        loaded = load_perturbation(sidecar)
        assert loaded.epsilon == eps
        assert np.abs(loaded.values - values).max() <= 1.0 / 65535.0
        assert np.array_equal(loaded.support.bits, support)
        assert np.all(loaded.values[~support] == 0.0)


class FakeCountingDetector:
    """Deterministic fake: objectness decreases as the art dims."""

    def __init__(self):
        self.calls = 0

    def __call__(self, raster):
        self.calls += 1
        level = float(raster.data.mean())
        return boxes(min(1.0, max(0.0, level)))


class TestOptimizePerturbation:
    def test_zero_iterations(self, scenes):
        art = stripe_art()
        cfg = AttackConfig(iterations=0, seed=7)
        pert, trace = optimize_perturbation(art, scenes, SyntheticDetector(), cfg)
        assert np.all(pert.values == 0.0)
        assert trace.rows == []
        assert trace.initial_loss is not None

    def test_tiny_epsilon_keeps_initial_loss(self, scenes):
        art = stripe_art()
        cfg = AttackConfig(epsilon=1e-9, iterations=2, queries_per_gradient=2, seed=7)
        pert, trace = optimize_perturbation(art, scenes, SyntheticDetector(), cfg)
        assert np.abs(pert.values).max() <= 1e-9
        assert trace.metrics_delta["loss_best"] == pytest.approx(trace.initial_loss, abs=1e-4)

    def test_feasibility_invariants(self, scenes):
        art = stripe_art()
        support = np.zeros((art.height, art.width), dtype=bool)
        support[:, : art.width // 2] = True
        cfg = AttackConfig(iterations=3, queries_per_gradient=2, seed=7)
        pert, _ = optimize_perturbation(
            art, scenes, SyntheticDetector(), cfg, support=BinaryMask(support)
        )
        assert np.abs(pert.values).max() <= cfg.epsilon
        assert np.all(pert.values[~support] == 0.0)
        shifted = art.data + pert.values
        assert shifted.min() >= -1e-12 and shifted.max() <= 1.0 + 1e-12

    def test_best_loss_monotone_and_queries_counted(self, scenes):
        art = stripe_art()
        n = 2
        cfg = AttackConfig(iterations=4, queries_per_gradient=n, seed=7)
        _, trace = optimize_perturbation(art, scenes, SyntheticDetector(), cfg)
        best = [r.best_loss for r in trace.rows]
        assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
        assert best[-1] <= trace.initial_loss
        used = [r.queries_used for r in trace.rows]
        assert used[0] == 1 + (2 * n + 1)
        assert all(b - a == 2 * n + 1 for a, b in zip(used, used[1:]))

    def test_deterministic_reruns(self, scenes):
        art = stripe_art()
        cfg = AttackConfig(iterations=3, queries_per_gradient=2, seed=11)
        p1, t1 = optimize_perturbation(art, scenes, SyntheticDetector(), cfg)
        p2, t2 = optimize_perturbation(art, scenes, SyntheticDetector(), cfg)
        assert np.array_equal(p1.values, p2.values)
        assert t1.rows == t2.rows

    def test_detector_failure_aborts_with_partial_trace(self, rng):
        art = Raster(rng.random((8, 8, 3)))
        batch = [fake_scene(rng)]
        calls = {"n": 0}

        def flaky(raster):
            calls["n"] += 1
            if calls["n"] > 10:
                raise AdapterDeadError("gone")
            return boxes(0.5)

        cfg = AttackConfig(iterations=50, queries_per_gradient=2, seed=0)
        with pytest.raises(AttackAbortedError) as err:
            optimize_perturbation(art, batch, flaky, cfg)
        assert err.value.trace.initial_loss is not None

    def test_loss_decreases_on_fake_detector(self, rng):
        """Sanity: the optimizer pushes down a loss that tracks art brightness."""
        art = Raster(np.full((6, 6, 3), 0.5))
        scene = LoadedScene(
            background=Raster(np.full((12, 12, 3), 0.5)),
            regions=[],
            ground_truth=[],
            foregrounds=[],
        )
        detector = lambda r: boxes(float(np.clip(r.data.mean() + 0.4, 0, 1)))
        # loss depends on delta only through nothing (no regions) -> stays flat
        cfg = AttackConfig(iterations=2, queries_per_gradient=2, seed=3)
        _, trace = optimize_perturbation(art, [scene], detector, cfg)
        assert trace.metrics_delta["loss_best"] <= trace.initial_loss


class TestAttackConfig:
    def test_validation(self):
        with pytest.raises(InputError):
            AttackConfig(epsilon=0.0)
        with pytest.raises(InputError):
            AttackConfig(iterations=-1)
        with pytest.raises(InputError):
            AttackConfig(queries_per_gradient=0)
        with pytest.raises(InputError):
            AttackConfig(aggregate="median")

    def test_default_step_is_epsilon_over_eight(self):
        cfg = AttackConfig(epsilon=0.2)
        assert cfg.step == pytest.approx(0.025)

    def test_json_roundtrip(self):
        cfg = AttackConfig(epsilon=0.1, iterations=5, seed=3)
        assert AttackConfig.from_json(cfg.to_json()).epsilon == 0.1


class TestTraceOutput:
    def test_jsonl_lines(self, tmp_path, scenes):
        art = stripe_art()
        cfg = AttackConfig(iterations=2, queries_per_gradient=2, seed=7)
        _, trace = optimize_perturbation(art, scenes, SyntheticDetector(), cfg)
        path = tmp_path / "trace.jsonl"
        trace.write_jsonl(path)
        import json

        lines = [json.loads(l) for l in path.read_text().splitlines()]
        assert len(lines) == 3  # initial + 2 iterations
        assert lines[0]["iteration"] == 0
        assert lines[1]["queries_used"] > lines[0]["queries_used"]
