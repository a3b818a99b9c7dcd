"""Latent-SDE policy: spec operations, training bookkeeping, determinism."""

from __future__ import annotations

import json

import numpy as np
import pytest
import torch

from rallynet.data import Dataset
from rallynet.model.config import ModelConfig, desk_scale_config
from rallynet.model.policy import (
    Context,
    EmptyExperienceError,
    PolicyAgent,
    RallyNetPolicy,
    RallySession,
    UnknownPlayerError,
    make_agents,
)
from rallynet.synth import SyntheticConfig, generate_synthetic_dataset, initial_state


@pytest.fixture(scope="module")
def players(small_dataset):
    return sorted(small_dataset.players)


@pytest.fixture(scope="module")
def policy(tiny_config, players):
    return RallyNetPolicy(tiny_config, players)


@pytest.fixture(scope="module")
def rally(small_dataset):
    return next(r for r in small_dataset.rallies if len(r.strokes) >= 6)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(context_dim=0).validate()
        with pytest.raises(ValueError):
            ModelConfig(reg_weight=1.5).validate()
        with pytest.raises(ValueError):
            ModelConfig(std_clamp=0.0).validate()

    def test_round_trip(self):
        cfg = desk_scale_config(seed=5)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_latent_dim_composition(self):
        cfg = desk_scale_config()
        assert cfg.latent_dim == cfg.state_embed_dim + cfg.player_embed_dim + cfg.context_dim


class TestEmbedState:
    def test_fixed_dimension(self, policy, rally, players, tiny_config):
        x = policy.embed_state([], rally.strokes[0][1], players[0])
        assert x.shape == (tiny_config.state_dim,)
        states = [s for _, s, _ in rally.strokes[:4]]
        x2 = policy.embed_state(states[:-1], states[-1], players[0])
        assert x2.shape == (tiny_config.state_dim,)

    def test_eval_determinism(self, policy, rally, players):
        a = policy.embed_state([], rally.strokes[0][1], players[0])
        b = policy.embed_state([], rally.strokes[0][1], players[0])
        assert np.array_equal(a, b)

    def test_player_block_is_only_difference(self, policy, rally, players, tiny_config):
        a = policy.embed_state([], rally.strokes[0][1], players[0])
        b = policy.embed_state([], rally.strokes[0][1], players[1])
        d = tiny_config.player_embed_dim
        # player-embedding block leads; the rally-encoder block is identical
        assert np.array_equal(a[d:], b[d:])
        assert not np.array_equal(a[:d], b[:d])

    def test_unknown_player(self, policy, rally):
        with pytest.raises(UnknownPlayerError):
            policy.embed_state([], rally.strokes[0][1], "nobody", allow_generic=False)
        # generic fallback embeds without error
        x = policy.embed_state([], rally.strokes[0][1], "nobody")
        assert np.all(np.isfinite(x))


class TestContextOps:
    def test_encode_determinism(self, policy, rally):
        acts = [a for _, _, a in rally.strokes]
        a = policy.encode_context(acts, sample=False)
        b = policy.encode_context(acts, sample=False)
        assert np.array_equal(a.z, b.z)
        s1 = policy.encode_context(acts, sample=True, seed=9)
        s2 = policy.encode_context(acts, sample=True, seed=9)
        assert np.array_equal(s1.z, s2.z)
        assert not np.array_equal(s1.z, a.z)

    def test_encode_empty_rejected(self, policy):
        with pytest.raises(EmptyExperienceError):
            policy.encode_context([])

    def test_sigma_positive(self, policy, rally):
        c = policy.encode_context([a for _, _, a in rally.strokes])
        assert np.all(c.sigma > 0)

    def test_centroid(self):
        v = np.array([1.0, 3.0])
        w = np.array([3.0, 5.0])
        c = RallyNetPolicy.context_centroid([Context(z=v), Context(z=w)])
        assert np.allclose(c.z, [2.0, 4.0])
        single = RallyNetPolicy.context_centroid([Context(z=v)])
        assert np.array_equal(single.z, v)
        anti = RallyNetPolicy.context_centroid([Context(z=v), Context(z=-v)])
        assert np.allclose(anti.z, 0.0)

    def test_centroid_empty_rejected(self):
        with pytest.raises(ValueError):
            RallyNetPolicy.context_centroid([])

    def test_select_context_shape_and_determinism(self, policy, rally, players, tiny_config):
        acts = [a for _, _, a in rally.strokes]
        c = policy.encode_context(acts, sample=False)
        x = policy.embed_state([], rally.strokes[0][1], players[0])
        a = policy.select_context(c, x)
        b = policy.select_context(c, x)
        assert a.z.shape == (tiny_config.context_dim,)
        assert np.array_equal(a.z, b.z)

    def test_target_context_matches_encode(self, policy, rally):
        acts = [a for _, _, a in rally.strokes][:3]
        t = policy.target_context(acts, seed=4)
        e = policy.encode_context(acts, sample=True, seed=4)
        assert np.array_equal(t.z, e.z)
        assert policy.target_context(acts[:1], seed=0).z.shape == t.z.shape

    def test_decode_context(self, policy, rally, tiny_config):
        c = policy.encode_context([a for _, _, a in rally.strokes], sample=False)
        steps = policy.decode_context(c, horizon=3)
        assert len(steps) == 3
        for shot_dist, land, move in steps:
            assert shot_dist.sum() == pytest.approx(1.0, abs=1e-5)
            assert land.means.shape == (tiny_config.n_mixtures, 2)
            assert np.all(land.stds <= tiny_config.std_clamp + 1e-9)
        assert len(policy.decode_context(c, horizon=1)) == 1
        with pytest.raises(ValueError):
            policy.decode_context(c, horizon=0)


class _ConstNet(torch.nn.Module):
    """Stand-in drift/diffusion head returning a constant field."""

    def __init__(self, value: float, dim: int):
        super().__init__()
        self.value = value
        self.dim = dim

    def forward(self, z, t):
        return torch.full((z.shape[0], self.dim), self.value)


class TestSDE:
    def test_deterministic_drift(self, policy, tiny_config, monkeypatch):
        d = tiny_config.latent_dim
        c = 0.37
        monkeypatch.setattr(policy, "drift_player", _ConstNet(c, d))
        monkeypatch.setattr(policy, "diffusion", _ConstNet(0.0, d))
        prev = np.zeros(d)
        z = policy.sde_step(prev, np.zeros(d), "player", noise_seed=0)
        assert np.allclose(z, c, atol=1e-6)

    def test_seeded_determinism(self, policy, tiny_config):
        d = tiny_config.latent_dim
        zp = np.random.default_rng(0).normal(0, 1, d).astype(np.float32)
        a = policy.sde_step(np.zeros(d), zp, "player", noise_seed=7)
        b = policy.sde_step(np.zeros(d), zp, "player", noise_seed=7)
        assert np.array_equal(a, b)
        c = policy.sde_step(np.zeros(d), zp, "target", noise_seed=7)
        assert not np.array_equal(a, c)

    def test_increment_statistics(self, policy, tiny_config, monkeypatch):
        # h == 0, sigma == 1, dt == 1: increments are standard normal
        d = tiny_config.latent_dim
        monkeypatch.setattr(policy, "drift_player", _ConstNet(0.0, d))
        monkeypatch.setattr(policy, "diffusion", _ConstNet(1.0, d))
        n = 10_000
        prev = np.zeros(d)
        incs = np.empty((n, d))
        for i in range(n):
            nxt = policy.sde_step(prev, np.zeros(d), "player", noise_seed=i)
            incs[i] = nxt - prev
        mean = incs.mean(axis=0)
        var = incs.var(axis=0)
        assert np.all(np.abs(mean) <= 3.0 / np.sqrt(n))
        assert np.all((0.9 <= var) & (var <= 1.1))


class TestProjectAction:
    def test_codomain(self, policy, tiny_config):
        rng = np.random.default_rng(0)
        for _ in range(20):
            z = rng.normal(0, 1, tiny_config.latent_dim)
            shot_dist, land, move = policy.project_action(z)
            assert shot_dist.shape == (tiny_config.n_shot_types,)
            assert shot_dist.sum() == pytest.approx(1.0, abs=1e-5)
            assert np.all(shot_dist >= 0)
            for mix in (land, move):
                assert mix.means.shape == (tiny_config.n_mixtures, 2)
                assert np.all((0 < mix.stds) & (mix.stds <= tiny_config.std_clamp + 1e-9))
                assert mix.weights.sum() == pytest.approx(1.0, abs=1e-5)

    def test_samples_near_components(self, policy, tiny_config):
        z = np.random.default_rng(1).normal(0, 1, tiny_config.latent_dim)
        _, land, _ = policy.project_action(z)
        rng = np.random.default_rng(2)
        for _ in range(2000):
            p = land.sample(rng)
            dist = np.abs(np.array([p.x, p.y]) - land.means) / land.stds
            assert (dist.max(axis=1) <= 4.0).any()


class TestTraining:
    def test_loss_log_identity_and_format(self, tiny_policy, small_split, small_index, tmp_path, tiny_config):
        train, _ = small_split
        log_path = tmp_path / "loss.jsonl"
        policy = RallyNetPolicy(tiny_config, sorted(train.players))
        entries = policy.fit(train, small_index, log_path=log_path)
        w1, w2, w3 = tiny_config.loss_weights
        lines = [json.loads(line) for line in log_path.read_text().splitlines()]
        assert lines == entries
        for e in entries:
            assert set(e) >= {"step", "epoch", "pred", "ctx", "sde", "total"}
            assert e["total"] == pytest.approx(
                w1 * e["pred"] + w2 * e["ctx"] + w3 * e["sde"], abs=0.0
            )
            assert np.isfinite(e["total"])

    def test_seeded_determinism(self, small_split, small_index, tiny_config):
        train, _ = small_split
        a = RallyNetPolicy(tiny_config, sorted(train.players))
        log_a = a.fit(train, small_index)
        b = RallyNetPolicy(tiny_config, sorted(train.players))
        log_b = b.fit(train, small_index)
        assert log_a == log_b
        for ka, kb in zip(a.state_dict().values(), b.state_dict().values()):
            assert torch.equal(ka, kb)

    def test_divergence_aborts(self, small_split, small_index, tiny_config):
        from dataclasses import replace

        train, _ = small_split
        cfg = replace(tiny_config, learning_rate=1e6, epochs=1)
        policy = RallyNetPolicy(cfg, sorted(train.players))
        with pytest.raises(RuntimeError):
            policy.fit(train, small_index)

    def test_save_load_round_trip(self, tiny_policy, tmp_path):
        path = tmp_path / "model.pt"
        tiny_policy.save(path, dataset_hash="abc123")
        loaded = RallyNetPolicy.load(path)
        assert loaded.cfg == tiny_policy.cfg
        for ka, kb in zip(
            tiny_policy.state_dict().values(), loaded.state_dict().values()
        ):
            assert torch.equal(ka, kb)
        blob = torch.load(path, weights_only=False)
        assert blob["kind"] == "rallynet"
        assert blob["dataset_hash"] == "abc123"

    @pytest.mark.slow
    def test_overfit_single_rally(self, small_dataset, tiny_config):
        from dataclasses import replace

        from rallynet.experience import build_index

        rally = next(r for r in small_dataset.rallies if len(r.strokes) >= 6)
        corpus = Dataset([rally], players=list(small_dataset.players), court=dict(small_dataset.court))
        idx = build_index(corpus)
        cfg = replace(tiny_config, epochs=400, batch_size=1, learning_rate=2e-3)
        policy = RallyNetPolicy(cfg, sorted(corpus.players))
        log = policy.fit(corpus, idx)
        assert np.mean([e["type"] for e in log[-5:]]) < 0.1


class TestPolicyAgent:
    def test_context_held_per_rally(self, tiny_policy, small_index):
        from rallynet.engine import rollout_rally

        agent_a, agent_b = make_agents(tiny_policy, small_index, mode="sample")
        trace = rollout_rally(agent_a, agent_b, initial_state(), seed=0)
        per_player = {}
        for info in trace.step_infos:
            if "context" in info:
                per_player.setdefault(info["actor"], []).append(info["context"])
        for ctxs in per_player.values():
            assert all(np.array_equal(c, ctxs[0]) for c in ctxs)

    def test_mode_emission_deterministic(self, tiny_policy, small_index):
        session = RallySession()
        agent = PolicyAgent(tiny_policy, small_index, mode="mode", session=session)
        agent.reset_rally()
        a = agent.act([], initial_state(), tiny_policy.players[0], seed=1)
        agent.reset_rally()
        b = agent.act([], initial_state(), tiny_policy.players[0], seed=1)
        assert a.shot == b.shot
        assert (a.landing.x, a.landing.y) == (b.landing.x, b.landing.y)

    def test_act_codomain_fuzz(self, tiny_policy, small_index):
        agent, _ = make_agents(tiny_policy, small_index, mode="sample")
        rng = np.random.default_rng(0)
        from rallynet.data import PlayerState, Position

        agent.reset_rally()
        for i in range(200):
            s = PlayerState(
                score_info=(0, 0, 1),
                shuttle_pos=Position(*rng.uniform(-1, 1, 2)),
                incoming_shot=int(rng.integers(12)),
                self_pos=Position(*rng.uniform(-1, 0, 2)),
                opp_pos=Position(*rng.uniform(-1, 0, 2)),
                opp_move_vec=(0.0, 0.0),
            )
            act = agent.act([], s, tiny_policy.players[0], seed=i)
            assert 0 <= act.shot < 12
            for p in (act.landing, act.move):
                assert np.isfinite(p.x) and np.isfinite(p.y)
