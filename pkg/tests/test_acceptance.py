"""Acceptance suite: one pass/fail line per criterion.

Criteria 1-6 are fast closed-form, oracle, and statistical checks; criteria
7-10 share one desk-scale end-to-end training run on a 2,000-rally synthetic
corpus (marked slow); criterion 11 checks bit-identical reruns.
"""

from __future__ import annotations

import itertools
import json
import math

import numpy as np
import pytest
import torch

from rallynet.agents import BCPolicy, CloneAgent, RandomAgent, RuleAgent
from rallynet.data import split_dataset
from rallynet.engine import rollout_rally, simulate_matchup
from rallynet.evaluation import (
    build_report,
    evaluate_agent,
    rally_initial_conditions,
    reconstruction_metrics,
)
from rallynet.experience import build_index
from rallynet.metrics import (
    CTC_BLANK,
    N_CTC_SYMBOLS,
    ctc_loss,
    ctc_required_frames,
    dtw_distance,
    mrns,
    rns,
    win_rate_difference,
)
from rallynet.model.config import desk_scale_config
from rallynet.model.losses import (
    ctx_loss,
    kl_std_normal,
    position_nll,
    pred_loss,
    sde_loss,
)
from rallynet.model.policy import RallyNetPolicy, make_agents
from rallynet.synth import SyntheticConfig, generate_synthetic_dataset

# Full-training settings for the desk-scale end-to-end criteria (7-10).
DESK_KW = dict(diffusion_clamp=0.05, learning_rate=2e-3)
DESK_EPOCHS = 100
BC_EPOCHS = 60
EVAL_SEEDS = (0, 1, 2, 3, 4)


def _line(n: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f"  [{detail}]" if detail else ""
    print(f"ACCEPTANCE {n:02d} {name}: {status}{suffix}")
    assert ok, f"criterion {n} ({name}) failed{suffix}"


# --------------------------------------------------------------- criterion 1
TABLE_INIT = {
    # model: (land, shot, move, printed MRNS)
    "iq-learn": (1.7464, 127.8784, 1.0720, -0.8652),
    "bc": (0.9603, 63.5967, 0.4829, 1.1199),
    "hbc": (0.6940, 32.5972, 0.4031, 1.7155),
    "rallynet": (0.5931, 18.8678, 0.3416, 1.9988),
}
TABLE_TWO_STEP = {
    "bc": (1.0343, 56.1007, 0.5832, 1.3084),
    "hbc": (0.8760, 33.1886, 0.5529, 2.1062),
    "dymf": (1.1828, 26.5931, 1.2266, 0.6389),
    "shuttlenet": (0.9090, 34.0467, 0.5059, 2.0918),
    "rallynet": (0.7959, 19.5100, 0.4943, 2.6124),
}
ANCHORS_INIT = {"random": (1.3044, 104.382, 0.8506), "rule": (0.9130, 65.4033, 0.5942)}
ANCHORS_TWO_STEP = {"random": (1.2548, 79.2586, 0.8763), "rule": (1.0888, 61.7431, 0.6464)}


def test_criterion_1_published_score_arithmetic():
    worst = 0.0
    for anchors, table in ((ANCHORS_INIT, TABLE_INIT), (ANCHORS_TWO_STEP, TABLE_TWO_STEP)):
        rand, rule = anchors["random"], anchors["rule"]
        for land, shot, move, printed in table.values():
            got = mrns(
                rns(rand[0], rule[0], land),
                rns(rand[1], rule[1], shot),
                rns(rand[2], rule[2], move),
            )
            worst = max(worst, abs(got - printed))
    _line(1, "published-score-arithmetic", worst < 5e-4, f"max err {worst:.2e}")


# --------------------------------------------------------------- criterion 2
@pytest.fixture(scope="module")
def anchor_corpus():
    ds = generate_synthetic_dataset(SyntheticConfig(n_rallies=250), seed=3)
    train, test = split_dataset(ds, 0.8)
    idx = build_index(train)
    seeds = (0, 1)
    rnd = evaluate_agent(
        lambda r: (RandomAgent(), RandomAgent()), test, "init_only", seeds, name="random"
    )
    rule = RuleAgent(idx)
    rul = evaluate_agent(lambda r: (rule, rule), test, "init_only", seeds, name="rule")
    return ds, train, test, idx, rnd, rul


def test_criterion_2_normalization_anchors(anchor_corpus):
    _, _, test, _, rnd, rul = anchor_corpus
    rule_rep = build_report(rul, rnd, rul, test)
    rand_rep = build_report(rnd, rnd, rul, test)
    ok = (
        rule_rep.rns_land == 1.0
        and rule_rep.rns_shot == 1.0
        and rule_rep.rns_move == 1.0
        and rule_rep.mrns == 1.0
        and rand_rep.mrns == 0.0
    )
    _line(2, "normalization-anchors", ok, f"rule {rule_rep.mrns}, random {rand_rep.mrns}")


# --------------------------------------------------------------- criterion 3
def _dtw_brute(a, b):
    cost = np.linalg.norm(np.asarray(a)[:, None, :] - np.asarray(b)[None, :, :], axis=-1)
    memo: dict = {}

    def best(i, j):
        if (i, j) in memo:
            return memo[i, j]
        c = cost[i, j]
        if i == 0 and j == 0:
            out = c
        else:
            prev = []
            if i > 0:
                prev.append(best(i - 1, j))
            if j > 0:
                prev.append(best(i, j - 1))
            if i > 0 and j > 0:
                prev.append(best(i - 1, j - 1))
            out = c + min(prev)
        memo[i, j] = out
        return out

    return best(len(a) - 1, len(b) - 1)


def _ctc_brute(probs, labels):
    T = probs.shape[0]
    alphabet = sorted(set(labels) | {CTC_BLANK})
    total = 0.0
    for path in itertools.product(alphabet, repeat=T):
        collapsed, prev = [], None
        for s in path:
            if s != prev and s != CTC_BLANK:
                collapsed.append(s)
            prev = s
        if collapsed == list(labels):
            total += float(np.prod([probs[t, path[t]] for t in range(T)]))
    return -math.log(total) if total > 0 else math.inf


@pytest.mark.slow
def test_criterion_3_metric_oracles():
    points = [(0.0, 0.0), (1.0, 0.0), (0.5, -1.0)]
    seqs = []
    for n in range(1, 7):
        seqs.extend(itertools.product(points, repeat=n))
    # DTW: every pair of sequences of length <= 6 over the 3-point alphabet.
    # Equal cost matrices give equal DTW, so comparing index sequences over
    # the alphabet covers every geometric pair exactly once.
    worst_dtw = 0.0
    idx_seqs = []
    for n in range(1, 7):
        idx_seqs.extend(itertools.product(range(3), repeat=n))
    pts = np.array(points)
    for ia in idx_seqs:
        a = pts[list(ia)]
        for ib in idx_seqs:
            b = pts[list(ib)]
            worst_dtw = max(worst_dtw, abs(dtw_distance(a, b) - _dtw_brute(a, b)))
            if worst_dtw > 1e-9:
                break
        if worst_dtw > 1e-9:
            break
    rng = np.random.default_rng(0)
    worst_ctc = 0.0
    labels_all = [list(l) for n in (1, 2, 3) for l in itertools.product(range(3), repeat=n)]
    for labels in labels_all:
        for t in range(ctc_required_frames(labels), 7):
            probs = rng.dirichlet(np.ones(N_CTC_SYMBOLS), size=t)
            worst_ctc = max(
                worst_ctc, abs(ctc_loss(probs, labels) - _ctc_brute(probs, labels))
            )
    ok = worst_dtw <= 1e-9 and worst_ctc <= 1e-7
    _line(3, "metric-oracles", ok, f"dtw err {worst_dtw:.2e}, ctc err {worst_ctc:.2e}")


# --------------------------------------------------------------- criterion 4
def test_criterion_4_loss_closed_forms():
    rng = np.random.default_rng(4)
    mu = torch.tensor(rng.normal(0, 1, (8, 5)))
    sigma = torch.tensor(rng.uniform(0.1, 2.5, (8, 5)))
    want = 0.5 * (mu**2 + sigma**2 - 1 - 2 * torch.log(sigma)).sum(-1)
    kl_ok = torch.allclose(kl_std_normal(mu, sigma), want, atol=1e-9)

    h = torch.tensor(rng.normal(0, 1, (5, 6)))
    s = torch.tensor(rng.uniform(0.1, 1.0, (5, 6)))
    sde_ok = sde_loss(h, h.clone(), s).item() == 0.0 and sde_loss(h + 1e-3, h, s).item() > 0

    target = torch.tensor([[0.3, -0.2]])
    nll = position_nll(
        target,
        target[:, None, :].clone(),
        torch.full((1, 1, 2), 0.1, dtype=torch.float64),
        torch.ones(1, 1, dtype=torch.float64),
    ).item()
    nll_ok = abs(nll - (-2.7672)) <= 1e-4
    _line(4, "loss-closed-forms", kl_ok and sde_ok and nll_ok, f"nll {nll:.4f}")


# --------------------------------------------------------------- criterion 5
def _directional_fd(fn, params, eps=1e-6):
    leaves = [p.detach().clone().requires_grad_(True) for p in params]
    loss = fn(*leaves)
    grads = torch.autograd.grad(loss, leaves)
    rng = np.random.default_rng(int(abs(loss.item()) * 1e6) % 2**31)
    dirs = [torch.tensor(rng.normal(0, 1, tuple(p.shape))) for p in leaves]
    analytic = sum((g * d).sum().item() for g, d in zip(grads, dirs))
    plus = fn(*[p + eps * d for p, d in zip(params, dirs)]).item()
    minus = fn(*[p - eps * d for p, d in zip(params, dirs)]).item()
    fd = (plus - minus) / (2 * eps)
    return abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-8)


def test_criterion_5_gradient_checks():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        b = int(rng.integers(2, 6))
        logits = torch.tensor(rng.normal(0, 1, (b, 12)))
        lm = torch.tensor(rng.normal(0, 0.5, (b, 3, 2)))
        mm = torch.tensor(rng.normal(0, 0.5, (b, 3, 2)))
        lst = torch.tensor(rng.uniform(0.05, 0.3, (b, 3, 2)))
        mst = torch.tensor(rng.uniform(0.05, 0.3, (b, 3, 2)))
        w = torch.tensor(rng.dirichlet(np.ones(3), b))
        shots = torch.tensor(rng.integers(0, 12, b))
        lt = torch.tensor(rng.normal(0, 0.4, (b, 2)))
        mt = torch.tensor(rng.normal(0, 0.4, (b, 2)))

        def fn(lg, lme, lsd, mme, msd):
            return pred_loss(lg, (lme, lsd, w), (mme, msd, w), shots, lt, mt)["total"]

        worst = max(worst, _directional_fd(fn, [logits, lm, lst, mm, mst]))
    for _ in range(20):
        b = int(rng.integers(2, 6))
        mu = torch.tensor(rng.normal(0, 1, (b, 5)))
        sigma = torch.tensor(rng.uniform(0.2, 1.5, (b, 5)))
        recon = torch.tensor(rng.uniform(0.1, 2.0))
        worst = max(
            worst, _directional_fd(lambda m, s, r: ctx_loss(m, s, r)["total"], [mu, sigma, recon])
        )
    for _ in range(20):
        b = int(rng.integers(2, 6))
        hp = torch.tensor(rng.normal(0, 1, (b, 6)))
        ht = torch.tensor(rng.normal(0, 1, (b, 6)))
        sg = torch.tensor(rng.uniform(0.2, 1.0, (b, 6)))
        worst = max(worst, _directional_fd(lambda a, c, s: sde_loss(a, c, s), [hp, ht, sg]))
    _line(5, "gradient-checks", worst < 1e-4, f"max rel err {worst:.2e}")


# --------------------------------------------------------------- criterion 6
class _ConstNet(torch.nn.Module):
    def __init__(self, value, dim):
        super().__init__()
        self.value = value
        self.dim = dim

    def forward(self, z, t):
        return torch.full((z.shape[0], self.dim), self.value)


def test_criterion_6_sde_statistics():
    cfg = desk_scale_config(seed=0, state_embed_dim=16, context_dim=8, encoder_hidden=16)
    policy = RallyNetPolicy(cfg, ["A", "B"])
    d = cfg.latent_dim
    policy.drift_player = _ConstNet(0.0, d)
    policy.diffusion = _ConstNet(1.0, d)
    n = 10_000
    prev = np.zeros(d)
    incs = np.empty((n, d))
    for i in range(n):
        incs[i] = policy.sde_step(prev, np.zeros(d), "player", noise_seed=i) - prev
    mean = np.abs(incs.mean(axis=0)).max()
    var_lo, var_hi = incs.var(axis=0).min(), incs.var(axis=0).max()
    ok = mean <= 3.0 / math.sqrt(n) and 0.9 <= var_lo and var_hi <= 1.1
    _line(6, "sde-increment-statistics", ok, f"|mean| {mean:.4f}, var [{var_lo:.3f},{var_hi:.3f}]")


# ---------------------------------------------------- criteria 7-10 fixture
@pytest.fixture(scope="module")
def desk_run():
    ds = generate_synthetic_dataset(SyntheticConfig(n_rallies=2000), seed=11)
    train, test = split_dataset(ds, 0.8)
    idx = build_index(train)
    players = sorted(ds.players)

    policy = RallyNetPolicy(desk_scale_config(seed=0, epochs=DESK_EPOCHS, **DESK_KW), players)
    policy.fit(train, idx)
    bc = BCPolicy(desk_scale_config(seed=0, epochs=BC_EPOCHS, learning_rate=2e-3), players)
    bc.fit(train)

    rnd = evaluate_agent(
        lambda r: (RandomAgent(), RandomAgent()), test, "init_only", EVAL_SEEDS, name="random"
    )
    rule = RuleAgent(idx)
    rul = evaluate_agent(lambda r: (rule, rule), test, "init_only", EVAL_SEEDS, name="rule")
    rn_raw = evaluate_agent(
        lambda r: make_agents(policy, idx, mode="sample"), test, "init_only", EVAL_SEEDS,
        name="rallynet",
    )
    bc_raw = evaluate_agent(
        lambda r: (CloneAgent(bc), CloneAgent(bc)), test, "init_only", EVAL_SEEDS, name="bc"
    )
    reports = {
        "rallynet": build_report(rn_raw, rnd, rul, test),
        "bc": build_report(bc_raw, rnd, rul, test),
        "rule": build_report(rul, rnd, rul, test),
        "random": build_report(rnd, rnd, rul, test),
    }
    return {
        "ds": ds, "train": train, "test": test, "idx": idx,
        "policy": policy, "bc": bc, "reports": reports, "rn_raw": rn_raw,
    }


@pytest.mark.slow
def test_criterion_7_end_to_end_ordering(desk_run):
    rn = desk_run["reports"]["rallynet"].mrns
    bc = desk_run["reports"]["bc"].mrns
    ok = rn > bc > 1.0
    _line(7, "end-to-end-ordering", ok, f"rallynet {rn:.4f} > bc {bc:.4f} > 1.0")


@pytest.mark.slow
def test_criterion_8_length_realism(desk_run):
    r = desk_run["reports"]
    rn, rule, rand = r["rallynet"].length_jsd, r["rule"].length_jsd, r["random"].length_jsd
    ok = rn <= rand and abs(rule - rn) <= 0.1
    _line(8, "length-realism", ok, f"rallynet {rn:.3f}, rule {rule:.3f}, random {rand:.3f}")


@pytest.mark.slow
def test_criterion_9_win_rate_consistency(desk_run):
    test = desk_run["test"]
    policy, idx = desk_run["policy"], desk_run["idx"]
    inits = []
    for rally in test.rallies:
        if rally.strokes:
            inits.append(rally_initial_conditions(rally)[0])
    inits = inits[:200]
    agent_a, agent_b = make_agents(policy, idx, mode="sample")
    win_rate, _ = simulate_matchup(agent_a, agent_b, inits, n_per_init=10, seed=0)
    table_ok = (
        abs(win_rate_difference(0.4406, 0.5166) - 0.0760) <= 5e-4
        and win_rate_difference(0.5760, 0.5760) == 0.0
    )
    ok = abs(win_rate - 0.6) <= 0.10 and table_ok
    _line(9, "win-rate-consistency", ok, f"simulated {win_rate:.4f} vs 0.6")


@pytest.mark.slow
def test_criterion_10_reconstruction_sanity(desk_run):
    policy, test = desk_run["policy"], desk_run["test"]
    recon = reconstruction_metrics(policy, test)
    imit = {m: desk_run["rn_raw"].mean(m) for m in recon}
    ok = all(recon[m] < imit[m] for m in recon)
    detail = ", ".join(f"{m} {recon[m]:.3f}<{imit[m]:.3f}" for m in recon)
    _line(10, "reconstruction-sanity", ok, detail)


# -------------------------------------------------------------- criterion 11
@pytest.mark.slow
def test_criterion_11_bit_identical_reruns(anchor_corpus):
    ds, train, test, idx, _, _ = anchor_corpus
    players = sorted(ds.players)

    def run():
        cfg = desk_scale_config(
            seed=7, epochs=2, state_embed_dim=16, context_dim=8, encoder_hidden=16
        )
        policy = RallyNetPolicy(cfg, players)
        log = policy.fit(train, idx)
        traces = []
        for i, rally in enumerate(test.rallies[:10]):
            a, b = make_agents(policy, idx, mode="sample")
            init, init_b = rally_initial_conditions(rally)
            tr = rollout_rally(a, b, init, seed=i, rally_id=rally.rally_id, init_b_pos=init_b)
            traces.append(
                [(pid, s.to_json(), act.to_json()) for pid, s, act in tr.rally.strokes]
            )
        rnd = evaluate_agent(
            lambda r: (RandomAgent(), RandomAgent()), test, "init_only", (0,), name="random"
        )
        rule = RuleAgent(idx)
        rul = evaluate_agent(lambda r: (rule, rule), test, "init_only", (0,), name="rule")
        raw = evaluate_agent(
            lambda r: make_agents(policy, idx, mode="sample"), test, "init_only", (0,),
            name="rallynet",
        )
        report = build_report(raw, rnd, rul, test).to_json()
        state = {k: v.clone() for k, v in policy.state_dict().items()}
        return json.dumps(log), traces, report, state

    log1, traces1, report1, state1 = run()
    log2, traces2, report2, state2 = run()
    same_state = all(torch.equal(state1[k], state2[k]) for k in state1)
    ok = log1 == log2 and traces1 == traces2 and report1 == report2 and same_state
    _line(11, "bit-identical-reruns", ok)
