"""Intent-conditioned latent-SDE policy: training loop and inference agent.

Training is teacher-forced. For every stroke the context encoder embeds the
retrieved experiences (the context space) and the true remaining action
sequence (the target context); the target process drives the shared latent
chain with drift h_theta, while the player process (drift h_phi, fed by the
selected context) is aligned to it through the drift-matching penalty and by
scoring its own one-step action predictions. Only the player process runs at
inference; a player's selected context is held fixed for the whole rally.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from ..data import Action, Dataset, PlayerState, Position
from ..experience import ExperienceIndex, extract_experiences
from .config import ModelConfig
from .losses import ctx_loss, kl_std_normal, pred_loss, sde_loss
from .networks import (
    ACTION_FEATURES,
    ActionHeads,
    ContextDecoder,
    ContextEncoder,
    DiffusionNet,
    DriftNet,
    EmptyExperienceError,
    MixtureParams,
    StateEmbedder,
    UnknownPlayerError,
    action_features,
    mixture_to_numpy,
    sequence_features,
    state_features,
)


@dataclass
class Context:
    """An intent vector, with encoder statistics when it came from sampling."""

    z: np.ndarray
    mu: np.ndarray | None = None
    sigma: np.ndarray | None = None


@dataclass
class RallySession:
    """Per-rally inference state: the shared latent chain and held contexts."""

    z_prev: torch.Tensor | None = None
    step: int = 0
    contexts: dict = field(default_factory=dict)

    def reset(self, latent_dim: int):
        self.z_prev = torch.zeros(1, latent_dim)
        self.step = 0
        self.contexts = {}


def _rng_normal(rng: np.random.Generator, shape) -> torch.Tensor:
    return torch.from_numpy(rng.standard_normal(shape).astype(np.float32))


class RallyNetPolicy(nn.Module):
    def __init__(self, cfg: ModelConfig, players: list[str]):
        super().__init__()
        cfg.validate()
        if len(players) > cfg.n_players:
            raise ValueError(f"{len(players)} players exceed configured n_players={cfg.n_players}")
        self.cfg = cfg
        self.players = list(players)
        self._player_idx = {pid: i for i, pid in enumerate(players)}
        torch.manual_seed(cfg.seed)
        self.embedder = StateEmbedder(cfg)
        self.ctx_encoder = ContextEncoder(cfg)
        self.ctx_decoder = ContextDecoder(cfg)
        self.selector = nn.Linear(cfg.context_dim + cfg.state_dim, cfg.context_dim)
        self.drift_target = DriftNet(cfg)
        self.drift_player = DriftNet(cfg)
        self.diffusion = DiffusionNet(cfg)
        self.heads = ActionHeads(cfg)

    # ---------------------------------------------------------------- players
    def player_index(self, player_id: str, allow_generic: bool = True) -> int:
        idx = self._player_idx.get(player_id)
        if idx is None:
            if allow_generic:
                return self.embedder.generic_player_index
            raise UnknownPlayerError(f"player {player_id!r} not in registry")
        return idx

    # ------------------------------------------------------------ spec ops
    @torch.no_grad()
    def embed_state(self, history, current: PlayerState, player_id: str,
                    allow_generic: bool = True) -> np.ndarray:
        """Player embedding concatenated with the rally encoder output, (state_dim,)."""
        self.eval()
        feats = np.stack([state_features(s) for s in [*history, current]])
        seq = torch.from_numpy(feats)[None]
        lengths = torch.tensor([feats.shape[0]])
        pidx = torch.tensor([self.player_index(player_id, allow_generic)])
        return self.embedder(seq, lengths, pidx)[0].numpy()

    @torch.no_grad()
    def encode_context(self, actions, sample: bool = True, seed: int = 0) -> Context:
        self.eval()
        feats = torch.from_numpy(sequence_features(actions).astype(np.float32))[None]
        mu, sigma = self.ctx_encoder(feats, torch.tensor([len(actions)]))
        if sample:
            eps = _rng_normal(np.random.default_rng(seed), mu.shape)
            z = mu + sigma * eps
        else:
            z = mu
        return Context(z=z[0].numpy(), mu=mu[0].numpy(), sigma=sigma[0].numpy())

    @staticmethod
    def context_centroid(contexts: list[Context]) -> Context:
        if not contexts:
            raise ValueError("context_centroid needs a non-empty list")
        zs = np.stack([c.z for c in contexts])
        return Context(z=zs.mean(axis=0))

    @torch.no_grad()
    def select_context(self, centroid: Context, x: np.ndarray) -> Context:
        self.eval()
        inp = torch.from_numpy(
            np.concatenate([centroid.z, x]).astype(np.float32)
        )[None]
        return Context(z=self.selector(inp)[0].numpy())

    def target_context(self, target_seq, seed: int = 0) -> Context:
        return self.encode_context(target_seq, sample=True, seed=seed)

    @torch.no_grad()
    def decode_context(self, ctx: Context, horizon: int):
        """Per-step (shot distribution, landing mixture, move mixture) for `horizon` steps."""
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.eval()
        z = torch.from_numpy(ctx.z.astype(np.float32))[None]
        steps = self.ctx_decoder.decode(z, horizon)
        out = []
        for probs, land, move in steps:
            out.append(
                (
                    probs[0].numpy().astype(np.float64),
                    mixture_to_numpy(land[0][0], land[1][0], land[2][0]),
                    mixture_to_numpy(move[0][0], move[1][0], move[2][0]),
                )
            )
        return out

    @torch.no_grad()
    def sde_step(self, prev: np.ndarray, z_prime: np.ndarray, process: str,
                 noise_seed: int, t: float = 1.0) -> np.ndarray:
        """One Euler step: prev + h(z', t) dt + sigma(z', t) sqrt(dt) eps."""
        self.eval()
        drift = {"target": self.drift_target, "player": self.drift_player}[process]
        zp = torch.from_numpy(z_prime.astype(np.float32))[None]
        tt = torch.tensor([float(t)])
        h = drift(zp, tt)
        sig = self.diffusion(zp, tt)
        eps = _rng_normal(np.random.default_rng(noise_seed), h.shape)
        dt = self.cfg.sde_dt
        dz = h * dt + sig * math.sqrt(dt) * eps
        return (torch.from_numpy(prev.astype(np.float32))[None] + dz)[0].numpy()

    @torch.no_grad()
    def project_action(self, z: np.ndarray):
        """(shot distribution, landing MixtureParams, move MixtureParams) for a latent position."""
        self.eval()
        zt = torch.from_numpy(z.astype(np.float32))[None]
        shot_logits, land, move = self.heads(zt)
        probs = torch.softmax(shot_logits, dim=-1)[0].numpy().astype(np.float64)
        return (
            probs,
            mixture_to_numpy(land[0][0], land[1][0], land[2][0]),
            mixture_to_numpy(move[0][0], move[1][0], move[2][0]),
        )

    # ------------------------------------------------------------- training
    def _prepare_rally(self, rally, idx: ExperienceIndex):
        own_states: dict[str, list] = {}
        strokes = []
        for t, (pid, state, action) in enumerate(rally.strokes):
            hist = own_states.setdefault(pid, [])
            hist_feats = np.stack([state_features(s) for s in [*hist, state]])
            exp = extract_experiences(idx, state, rally_ctx=(rally, t))
            target = exp.target_seq
            strokes.append(
                {
                    "hist": hist_feats.astype(np.float32),
                    "player": self._player_idx[pid],
                    "step": t + 1,
                    "shot": action.shot,
                    "land": np.array([action.landing.x, action.landing.y], dtype=np.float32),
                    "move": np.array([action.move.x, action.move.y], dtype=np.float32),
                    "exp_seqs": [
                        sequence_features(seq).astype(np.float32)
                        for seq in exp.retrieved
                        if len(seq) > 0
                    ],
                    "target_seq": sequence_features(target).astype(np.float32),
                    "target_shots": np.array([a.shot for a in target], dtype=np.int64),
                    "target_land": np.array(
                        [[a.landing.x, a.landing.y] for a in target], dtype=np.float32
                    ),
                    "target_move": np.array(
                        [[a.move.x, a.move.y] for a in target], dtype=np.float32
                    ),
                }
            )
            hist.append(state)
        return strokes

    @staticmethod
    def _pad(seqs: list[np.ndarray], width: int):
        lengths = torch.tensor([s.shape[0] for s in seqs])
        T = int(lengths.max())
        out = torch.zeros(len(seqs), T, width)
        for i, s in enumerate(seqs):
            out[i, : s.shape[0]] = torch.from_numpy(s)
        return out, lengths

    def _collate(self, rallies: list[list[dict]], rng: np.random.Generator, train: bool):
        strokes = [s for r in rallies for s in r]
        S = len(strokes)
        hist, hist_len = self._pad([s["hist"] for s in strokes], strokes[0]["hist"].shape[1])
        player = torch.tensor([s["player"] for s in strokes])
        if train and self.cfg.generic_player_rate > 0:
            mask = rng.random(S) < self.cfg.generic_player_rate
            player = torch.where(
                torch.from_numpy(mask), torch.tensor(self.embedder.generic_player_index), player
            )
        steps = torch.tensor([float(s["step"]) for s in strokes])
        rally_idx = torch.tensor(
            [i for i, r in enumerate(rallies) for _ in r], dtype=torch.long
        )
        # index of each player's first stroke in their rally: the selected
        # context is held from there for the whole rally, as at inference
        ctx_src = []
        first_seen: dict[tuple[int, int], int] = {}
        for i, (r_i, s) in enumerate(zip(rally_idx.tolist(), strokes)):
            key = (r_i, s["player"])
            first_seen.setdefault(key, i)
            ctx_src.append(first_seen[key])
        step_idx = torch.tensor([s["step"] - 1 for s in strokes], dtype=torch.long)
        shots = torch.tensor([s["shot"] for s in strokes], dtype=torch.long)
        land = torch.stack([torch.from_numpy(s["land"]) for s in strokes])
        move = torch.stack([torch.from_numpy(s["move"]) for s in strokes])

        exp_seqs, exp_owner = [], []
        for i, s in enumerate(strokes):
            for seq in s["exp_seqs"]:
                exp_seqs.append(seq)
                exp_owner.append(i)
        target_seqs = [s["target_seq"] for s in strokes]
        all_seqs, all_len = self._pad(exp_seqs + target_seqs, ACTION_FEATURES)
        tgt_flat_shots = torch.from_numpy(
            np.concatenate([s["target_shots"] for s in strokes])
        )
        tgt_flat_land = torch.from_numpy(np.concatenate([s["target_land"] for s in strokes]))
        tgt_flat_move = torch.from_numpy(np.concatenate([s["target_move"] for s in strokes]))
        return {
            "S": S,
            "n_rallies": len(rallies),
            "hist": hist,
            "hist_len": hist_len,
            "player": player,
            "steps": steps,
            "rally_idx": rally_idx,
            "step_idx": step_idx,
            "ctx_src": torch.tensor(ctx_src, dtype=torch.long),
            "shots": shots,
            "land": land,
            "move": move,
            "all_seqs": all_seqs,
            "all_len": all_len,
            "n_exp": len(exp_seqs),
            "exp_owner": torch.tensor(exp_owner, dtype=torch.long),
            "tgt_shots": tgt_flat_shots,
            "tgt_land": tgt_flat_land,
            "tgt_move": tgt_flat_move,
        }

    def forward_batch(self, batch: dict) -> dict:
        cfg = self.cfg
        S = batch["S"]
        x = self.embedder(batch["hist"], batch["hist_len"], batch["player"])  # (S, ds+dp)

        mu_all, sigma_all = self.ctx_encoder(batch["all_seqs"], batch["all_len"])
        z_all = mu_all + sigma_all * torch.randn_like(sigma_all)
        nE = batch["n_exp"]
        z_exp, z_tgt = z_all[:nE], z_all[nE:]

        centroid = torch.zeros(S, cfg.context_dim)
        counts = torch.zeros(S)
        if nE:
            centroid = centroid.index_add(0, batch["exp_owner"], z_exp)
            counts = counts.index_add(0, batch["exp_owner"], torch.ones(nE))
        centroid = centroid / counts.clamp_min(1.0)[:, None]

        z_ctx = self.selector(torch.cat([centroid, x], dim=-1))[batch["ctx_src"]]
        zt_prime = torch.cat([x, z_tgt], dim=-1)
        zp_prime = torch.cat([x, z_ctx], dim=-1)

        t = batch["steps"]
        h_t = self.drift_target(zt_prime, t)
        h_p = self.drift_player(zp_prime, t)
        sig_t = self.diffusion(zt_prime, t)
        eps = torch.randn(S, cfg.latent_dim)
        sqdt = math.sqrt(cfg.sde_dt)
        dz_target = h_t * cfg.sde_dt + sig_t * sqdt * eps
        dz_player = h_p * cfg.sde_dt + self.diffusion(zp_prime, t) * sqdt * eps

        # latent chain: per-rally cumulative sum of the target displacements
        Tmax = int(batch["step_idx"].max()) + 1
        padded = torch.zeros(batch["n_rallies"], Tmax, cfg.latent_dim)
        padded[batch["rally_idx"], batch["step_idx"]] = dz_target
        z = padded.cumsum(dim=1)[batch["rally_idx"], batch["step_idx"]]
        z_play = z - dz_target + dz_player

        alpha, scale = cfg.reg_weight, cfg.position_nll_scale
        preds_t = pred_loss(
            *self._head_args(z), batch["shots"], batch["land"], batch["move"],
            alpha=alpha, scale=scale,
        )
        preds_p = pred_loss(
            *self._head_args(z_play), batch["shots"], batch["land"], batch["move"],
            alpha=alpha, scale=scale,
        )
        l_pred = 0.5 * (preds_t["total"] + preds_p["total"])

        (rec_logits, rec_land, rec_move), _ = self.ctx_decoder.reconstruct(
            z_tgt, *self._target_seq_tensors(batch)
        )
        recon = pred_loss(
            rec_logits, rec_land, rec_move,
            batch["tgt_shots"], batch["tgt_land"], batch["tgt_move"],
            alpha=alpha, scale=scale,
        )
        l_ctx = ctx_loss(mu_all, sigma_all, recon["total"])

        # Match the player drift at its inference-time input (current state +
        # held selected context) to the target drift, so rollout increments
        # follow the chain the heads were trained on. One-directional (the
        # target side is detached, shaped only by its own prediction losses),
        # and evaluated at the mean target context so the deterministic player
        # drift is not chasing per-batch encoder sampling noise.
        with torch.no_grad():
            h_t_bar = self.drift_target(torch.cat([x, mu_all[nE:]], dim=-1), t)
        l_sde = sde_loss(h_p, h_t_bar, sig_t.detach(), floor=cfg.sigma_floor)

        w1, w2, w3 = cfg.loss_weights
        total = w1 * l_pred + w2 * l_ctx["total"] + w3 * l_sde
        return {
            "total": total,
            "pred": l_pred,
            "ctx": l_ctx["total"],
            "sde": l_sde,
            "type": preds_t["type"],
            "latent": l_ctx["latent"],
            "recon": l_ctx["recon"],
        }

    def _head_args(self, z):
        shot_logits, land, move = self.heads(z)
        return shot_logits, land, move

    def _target_seq_tensors(self, batch):
        seqs = batch["all_seqs"][batch["n_exp"] :]
        lengths = batch["all_len"][batch["n_exp"] :]
        return seqs, lengths

    def fit(
        self,
        train_data: Dataset,
        idx: ExperienceIndex,
        log_path=None,
        progress: bool = False,
    ) -> list[dict]:
        """Teacher-forced training with Adam; returns the per-step loss log."""
        cfg = self.cfg
        if cfg.deterministic:
            torch.set_num_threads(1)
        torch.manual_seed(cfg.seed)
        rng = np.random.default_rng(cfg.seed)
        prepared = [self._prepare_rally(r, idx) for r in train_data.rallies if r.strokes]
        opt = torch.optim.Adam(self.parameters(), lr=cfg.learning_rate)
        log: list[dict] = []
        self.train()
        step = 0
        t0 = time.time()
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(prepared))
            for lo in range(0, len(prepared), cfg.batch_size):
                chunk = [prepared[i] for i in order[lo : lo + cfg.batch_size]]
                batch = self._collate(chunk, rng, train=True)
                losses = self.forward_batch(batch)
                if not torch.isfinite(losses["total"]):
                    raise RuntimeError(
                        f"training diverged at epoch {epoch} step {step}: "
                        + ", ".join(f"{k}={float(v):.4g}" for k, v in losses.items())
                    )
                opt.zero_grad()
                losses["total"].backward()
                opt.step()
                vals = {k: float(v.detach()) for k, v in losses.items()}
                w1, w2, w3 = cfg.loss_weights
                log.append(
                    {
                        "step": step,
                        "epoch": epoch,
                        "pred": vals["pred"],
                        "ctx": vals["ctx"],
                        "sde": vals["sde"],
                        "type": vals["type"],
                        "total": w1 * vals["pred"] + w2 * vals["ctx"] + w3 * vals["sde"],
                    }
                )
                step += 1
            if progress:
                print(
                    f"epoch {epoch + 1}/{cfg.epochs} total={log[-1]['total']:.4f} "
                    f"type={log[-1]['type']:.4f} ({time.time() - t0:.0f}s)"
                )
        self.eval()
        if log_path is not None:
            with open(log_path, "w") as f:
                for entry in log:
                    f.write(json.dumps(entry) + "\n")
        return log

    # ---------------------------------------------------------- persistence
    def save(self, path, dataset_hash: str = ""):
        torch.save(
            {
                "kind": "rallynet",
                "config": self.cfg.to_dict(),
                "players": self.players,
                "dataset_hash": dataset_hash,
                "state_dict": self.state_dict(),
            },
            path,
        )

    @classmethod
    def load(cls, path):
        obj = torch.load(path, weights_only=False)
        policy = cls(ModelConfig.from_dict(obj["config"]), obj["players"])
        policy.load_state_dict(obj["state_dict"])
        policy.eval()
        return policy


class PolicyAgent:
    """AgentInterface adapter around a trained policy.

    A context is selected at each player's first stroke of the rally and held
    for the rally. Agents created through `make_agents` share one latent
    session, so the chain advances on every stroke as in training.
    """

    def __init__(self, policy: RallyNetPolicy, index: ExperienceIndex,
                 mode: str = "sample", session: RallySession | None = None):
        self.policy = policy
        self.index = index
        self.mode = mode
        self.session = session if session is not None else RallySession()
        self._info: dict = {}

    def reset_rally(self):
        self.session.reset(self.policy.cfg.latent_dim)

    def last_act_info(self) -> dict:
        return self._info

    def act(self, history, current: PlayerState, player_id: str, seed: int) -> Action:
        from ..agents.base import emit_action

        policy = self.policy
        sess = self.session
        if sess.z_prev is None:
            sess.reset(policy.cfg.latent_dim)
        rng = np.random.default_rng(seed)
        x = policy.embed_state(history, current, player_id)
        info: dict = {}
        if player_id not in sess.contexts:
            exp = extract_experiences(self.index, current)
            ctxs = [
                policy.encode_context(seq, sample=True, seed=int(rng.integers(2**31)))
                for seq in exp.retrieved
                if len(seq) > 0
            ]
            if ctxs:
                centroid = policy.context_centroid(ctxs)
            else:
                centroid = Context(z=np.zeros(policy.cfg.context_dim, dtype=np.float32))
            sess.contexts[player_id] = policy.select_context(centroid, x)
            info["relaxation_level"] = exp.relaxation_level
            info["context_selected"] = True
        z_ctx = sess.contexts[player_id]
        z_prime = np.concatenate([x, z_ctx.z]).astype(np.float32)
        t = float(sess.step + 1)
        z = policy.sde_step(
            sess.z_prev[0].numpy(), z_prime, "player",
            noise_seed=int(rng.integers(2**31)), t=t,
        )
        sess.z_prev = torch.from_numpy(z.astype(np.float32))[None]
        sess.step += 1
        probs, land, move = policy.project_action(z)
        info["shot_dist"] = probs.tolist()
        self._info = info
        return emit_action(probs, land, move, self.mode, rng)


def make_agents(policy: RallyNetPolicy, index: ExperienceIndex, mode: str = "sample"):
    """Two agent views sharing one rally session (self-play / rally recovery)."""
    session = RallySession()
    return (
        PolicyAgent(policy, index, mode=mode, session=session),
        PolicyAgent(policy, index, mode=mode, session=session),
    )
