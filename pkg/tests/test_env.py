import numpy as np
import pytest

from apl.env import (ActivePoseEnv, DegenerateScene, EntropyPolicy, MaxDistancePolicy,
                     RandomPolicy, RewardConfig, SceneContext, UnidirectionalPolicy,
                     baseline_action, make_baseline, reward_terms, score_attention_fn,
                     view_entropy_table)
from apl.estimator import NoiseModel
from apl.fusion import ObjectFeature
from apl.geom import Pose6D, build_grid, geodesic_distance
from apl.scene import Scene, default_bin_extent, generate_scene, make_model

GRID = build_grid(800.0, 8, 2)
MODEL = make_model("cup", 200, seed=1)

EXACT = NoiseModel(sigma_t_base=0.0, sigma_r_base=0.0, occlusion_gain=0.0,
                   depth_axis_gain=1.0, detect_v0=1e-9, detect_sharpness=1e6)


def make_env(n_objects=6, scene_seed=40, horizon=3, env_seed=0, noise=None,
             reward=None, **kw):
    scene = generate_scene(MODEL, n_objects, seed=scene_seed)
    ctx = SceneContext(scene, GRID)
    return ActivePoseEnv(ctx, score_attention_fn, noise or EXACT,
                         reward or RewardConfig(), horizon,
                         np.random.default_rng(env_seed), start_view=0, **kw)


class TestRewardTerms:
    def test_no_change_all_zero(self):
        r = reward_terms(10.0, 10.0, [0, 0, 0], [0, 0, 0], [5, 0, 0], [5, 0, 0],
                         RewardConfig())
        assert (r.r_eadd, r.r_dist, r.r_motion, r.r_total) == (0, 0, 0, 0)

    def test_units_are_decimeters(self):
        r = reward_terms(50.0, 10.0, [0, 0, 0], [0, 0, 0], [100, 0, 0], [0, 100, 0],
                         RewardConfig(alpha=0.0, beta=1.0))
        assert r.r_eadd == pytest.approx(0.4)  # 40 mm improvement
        assert r.r_motion == pytest.approx(2.0)  # L1 motion of 200 mm

    def test_alpha_one_reduces_to_distance_term(self):
        cfg = RewardConfig(alpha=1.0, beta=0.7)
        r = reward_terms(30.0, 5.0, [10, 0, 0], [10, 0, 0], [500, 0, 0], [200, 0, 0],
                         cfg)
        assert r.r_total == pytest.approx(0.7 * r.r_dist)

    def test_penalty_recovery_example(self):
        # undetected (50 mm) at t, detected with 10 mm at t+1
        r = reward_terms(50.0, 10.0, [0, 0, 0], [0, 0, 0], [1, 1, 1], [1, 1, 1],
                         RewardConfig())
        assert r.r_eadd == pytest.approx(0.4)

    def test_affine_combination(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a, b = rng.random(), rng.random()
            cfg = RewardConfig(alpha=a, beta=b)
            args = [rng.uniform(0, 60), rng.uniform(0, 60),
                    rng.normal(size=3) * 100, rng.normal(size=3) * 100,
                    rng.normal(size=3) * 500, rng.normal(size=3) * 500]
            r = reward_terms(*args, cfg)
            want = (1 - a) * r.r_eadd + a * b * r.r_dist - (1 - a) * (1 - b) * r.r_motion
            assert r.r_total == pytest.approx(want, abs=1e-12)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            RewardConfig(alpha=1.5)


class TestEnvBasics:
    def test_state_dimension(self):
        env = make_env(horizon=5)
        state = env.reset()
        assert env.state_dim == 15 + 3 * 5
        assert state.shape == (30,)

    def test_reset_deterministic(self):
        a = make_env(env_seed=3).reset()
        b = make_env(env_seed=3).reset()
        assert np.array_equal(a, b)

    def test_initial_estimate_nonempty(self):
        env = make_env()
        env.reset()
        assert len(env.estimate.selected) > 0

    def test_history_slots(self):
        env = make_env(horizon=4)
        env.reset()
        assert np.allclose(env.history[0], env._norm_pos(0))
        assert np.allclose(env.history[1:], 0.0)
        env.step([1.0, 0.5])
        assert np.any(env.history[1] != 0.0)
        assert np.allclose(env.history[2:], 0.0)

    def test_zero_travel_zero_motion(self):
        env = make_env()
        env.reset()
        az = env.ctx.grid.azimuths[0]
        el = env.ctx.grid.elevations[0]
        result = env.step([az, el])
        assert result.info["view_index"] == 0
        assert result.reward.r_motion == 0.0
        assert result.info["geodesic_step"] == 0.0

    def test_full_episode_then_done(self):
        env = make_env(horizon=3)
        env.reset()
        rng = np.random.default_rng(1)
        rewards = []
        done = False
        while not done:
            r = env.step(rng.uniform([0, 0], [2 * np.pi, np.pi / 2]))
            rewards.append(r.reward.r_total)
            done = r.done
        assert len(rewards) == 3
        with pytest.raises(RuntimeError):
            env.step([0.0, 0.5])

    def test_reward_components_affine_throughout_episode(self):
        cfg = RewardConfig(alpha=0.35, beta=0.6)
        env = make_env(reward=cfg, noise=NoiseModel())
        env.reset()
        rng = np.random.default_rng(2)
        done = False
        while not done:
            res = env.step(rng.uniform([0, 0], [2 * np.pi, np.pi / 2]))
            r = res.reward
            want = (0.65 * r.r_eadd + 0.35 * 0.6 * r.r_dist - 0.65 * 0.4 * r.r_motion)
            assert r.r_total == pytest.approx(want, abs=1e-12)
            done = res.done

    def test_geodesic_step_logged(self):
        env = make_env()
        env.reset()
        res = env.step([np.pi, 0.5])
        j = res.info["view_index"]
        assert res.info["geodesic_step"] == pytest.approx(
            geodesic_distance(GRID, 0, j), abs=1e-9)

    def test_degenerate_scene_raises(self):
        # one object high above the hemisphere, outside every camera frustum
        scene = Scene(MODEL, (Pose6D(np.array([1.0, 0, 0, 0]), [0, 0, 3000.0]),),
                      default_bin_extent(MODEL), 0)
        ctx = SceneContext(scene, GRID)
        env = ActivePoseEnv(ctx, score_attention_fn, EXACT, RewardConfig(), 3,
                            np.random.default_rng(0), start_view=0)
        with pytest.raises(DegenerateScene):
            env.reset()

    def test_alpha_zero_reward_is_error_change_minus_motion(self):
        cfg = RewardConfig(alpha=0.0, beta=0.0)
        env = make_env(reward=cfg)
        env.reset()
        res = env.step([2.0, 0.6])
        r = res.reward
        assert r.r_total == pytest.approx(r.r_eadd - r.r_motion, abs=1e-12)


class TestViewEntropy:
    def test_single_object_zero(self):
        scene = Scene(MODEL, (Pose6D.identity(),), default_bin_extent(MODEL), 0)
        table = view_entropy_table(scene, GRID)
        assert np.allclose(table, 0.0)

    def test_bounded_by_log_count(self):
        scene = generate_scene(MODEL, 5, seed=41)
        table = view_entropy_table(scene, GRID)
        assert (table >= 0).all()
        assert (table <= np.log(5) + 1e-12).all()

    def test_context_table_matches(self):
        scene = generate_scene(MODEL, 4, seed=42)
        ctx = SceneContext(scene, GRID)
        assert np.allclose(ctx.entropy_table, view_entropy_table(scene, GRID))


class TestBaselines:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_baseline("oracle")

    def test_unidirectional_revolution(self):
        env = make_env(horizon=5)
        env.reset()
        pol = UnidirectionalPolicy()
        rng = np.random.default_rng(0)
        for t in range(5):
            a = pol.action(env, rng)
            assert a[1] == pytest.approx(np.pi / 4)
            expect = env.ctx.grid.azimuths[0] + (t + 1) * 2 * np.pi / 5
            assert a[0] == pytest.approx(expect)
            env.step(a)

    def test_random_jitters_around_current(self):
        env = make_env()
        env.reset()
        pol = RandomPolicy(sigma_az=0.6, sigma_el=0.3)
        draws = np.array([pol.action(env, np.random.default_rng(i)) for i in range(500)])
        assert draws[:, 0].mean() == pytest.approx(env.ctx.grid.azimuths[0], abs=0.1)
        assert draws[:, 0].std() == pytest.approx(0.6, abs=0.08)
        assert draws[:, 1].std() == pytest.approx(0.3, abs=0.05)

    def test_max_distance_matches_linear_scan(self):
        env = make_env()
        env.reset()
        rng = np.random.default_rng(3)
        for _ in range(3):
            a = MaxDistancePolicy().action(env, rng)
            # oracle: exhaustive scan over unvisited views
            best, best_d = None, -1.0
            for k in range(len(GRID)):
                if k in env.visited:
                    continue
                d = min(geodesic_distance(GRID, k, j) for j in env.visited)
                if d > best_d:
                    best, best_d = k, d
            assert np.allclose(a, [GRID.azimuths[best], GRID.elevations[best]])
            env.step(a)

    def test_entropy_picks_unvisited_argmax(self):
        env = make_env()
        env.reset()
        a = EntropyPolicy().action(env, np.random.default_rng(0))
        table = env.ctx.entropy_table
        cand = [k for k in range(len(GRID)) if k not in env.visited]
        best = max(cand, key=lambda k: (table[k], -k))
        assert np.allclose(a, [GRID.azimuths[best], GRID.elevations[best]])

    def test_baseline_action_dispatch(self):
        env = make_env()
        env.reset()
        a = baseline_action("unidirectional", env, np.random.default_rng(0))
        assert a[1] == pytest.approx(np.pi / 4)


class TestScoreAttention:
    def test_picks_lowest_score(self):
        feats = [ObjectFeature((0.1, 0.1, 0.2, 0.2), 0.5, 0.9),
                 ObjectFeature((0.3, 0.3, 0.4, 0.4), 0.5, 0.2),
                 ObjectFeature((0.5, 0.5, 0.6, 0.6), 0.5, 0.7)]
        out = score_attention_fn(feats)
        assert out.m == 1
        assert np.array_equal(out.weights, [0.0, 1.0, 0.0])
        assert np.allclose(out.o[:6], 0.0)
        assert np.allclose(out.o[6:], feats[1].vector)
