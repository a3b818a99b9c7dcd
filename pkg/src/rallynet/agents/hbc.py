"""Behavior cloning baselines.

HBCPolicy conditions the action heads on a discrete per-rally option and
trains by expectation-maximization with an annealed temperature. The E-step
turns the per-rally per-option prediction losses L_o(rally) into
responsibilities via softmax(-L_o / tau), after one Sinkhorn-style column
normalization across the batch so no option starves early (rich-get-richer
collapse). The M-step minimizes the responsibility-weighted prediction loss;
the learned high-level policy pi(o | x_first) over the rally's initial
embedded state is trained by cross-entropy against the detached
responsibilities. With a single option the objective reduces exactly to flat
behavior cloning; BCPolicy is that special case.
"""

from __future__ import annotations

import json

import numpy as np
import torch
import torch.nn as nn

from ..data import Action, Dataset, PlayerState
from ..model.config import ModelConfig
from ..model.losses import position_nll, reg_loss, shot_cross_entropy
from ..model.networks import (
    MLP,
    ActionHeads,
    StateEmbedder,
    mixture_to_numpy,
    state_features,
)
from .base import Agent, emit_action


class HBCPolicy(nn.Module):
    def __init__(self, cfg: ModelConfig, players: list[str], n_options: int = 4):
        super().__init__()
        cfg.validate()
        if n_options < 1:
            raise ValueError("n_options must be >= 1")
        self.cfg = cfg
        self.n_options = n_options
        self.players = list(players)
        self._player_idx = {pid: i for i, pid in enumerate(players)}
        torch.manual_seed(cfg.seed)
        self.embedder = StateEmbedder(cfg)
        self.option_embed = nn.Embedding(n_options, cfg.state_dim)
        self.trunk = MLP(cfg.state_dim, cfg.state_dim, cfg.state_dim)
        self.heads = ActionHeads(cfg, in_dim=cfg.state_dim)
        self.option_net = MLP(cfg.state_dim, n_options, cfg.state_dim)

    def player_index(self, player_id: str) -> int:
        idx = self._player_idx.get(player_id)
        return self.embedder.generic_player_index if idx is None else idx

    def head_outputs(self, x: torch.Tensor, option: torch.Tensor):
        """x (B, state_dim), option (B,) long -> shot logits and mixtures."""
        return self.heads(self.trunk(x + self.option_embed(option)))

    # ------------------------------------------------------------- training
    def _stroke_totals(self, x: torch.Tensor, shots, land, move) -> torch.Tensor:
        """Per-stroke prediction loss for every option, (S, n_options)."""
        cfg = self.cfg
        cols = []
        for o in range(self.n_options):
            opt = torch.full((x.shape[0],), o, dtype=torch.long)
            shot_logits, lm, mm = self.head_outputs(x, opt)
            l_type = shot_cross_entropy(shot_logits, shots)
            l_land = position_nll(land, *lm)
            l_move = position_nll(move, *mm)
            l_reg = reg_loss(lm[0], mm[0])
            a, s = cfg.reg_weight, cfg.position_nll_scale
            cols.append(l_type + (1.0 - a) * s * (l_land + l_move) + a * s * l_reg)
        return torch.stack(cols, dim=1)

    def _prepare_rally(self, rally):
        own_states: dict[str, list] = {}
        out = []
        for pid, state, action in rally.strokes:
            hist = own_states.setdefault(pid, [])
            out.append(
                {
                    "hist": np.stack(
                        [state_features(s) for s in [*hist, state]]
                    ).astype(np.float32),
                    "player": self._player_idx[pid],
                    "shot": action.shot,
                    "land": np.array([action.landing.x, action.landing.y], np.float32),
                    "move": np.array([action.move.x, action.move.y], np.float32),
                }
            )
            hist.append(state)
        return out

    def _collate(self, rallies, rng: np.random.Generator, train: bool):
        strokes = [s for r in rallies for s in r]
        lengths = torch.tensor([s["hist"].shape[0] for s in strokes])
        T = int(lengths.max())
        hist = torch.zeros(len(strokes), T, strokes[0]["hist"].shape[1])
        for i, s in enumerate(strokes):
            hist[i, : s["hist"].shape[0]] = torch.from_numpy(s["hist"])
        player = torch.tensor([s["player"] for s in strokes])
        if train and self.cfg.generic_player_rate > 0:
            mask = rng.random(len(strokes)) < self.cfg.generic_player_rate
            player = torch.where(
                torch.from_numpy(mask),
                torch.tensor(self.embedder.generic_player_index),
                player,
            )
        counts = [len(r) for r in rallies]
        first_idx = torch.tensor(
            np.concatenate([[0], np.cumsum(counts)[:-1]]), dtype=torch.long
        )
        return {
            "hist": hist,
            "hist_len": lengths,
            "player": player,
            "rally_idx": torch.tensor(
                [i for i, r in enumerate(rallies) for _ in r], dtype=torch.long
            ),
            "first_idx": first_idx,
            "n_rallies": len(rallies),
            "shots": torch.tensor([s["shot"] for s in strokes], dtype=torch.long),
            "land": torch.stack([torch.from_numpy(s["land"]) for s in strokes]),
            "move": torch.stack([torch.from_numpy(s["move"]) for s in strokes]),
        }

    def batch_loss(self, batch: dict, tau: float):
        x = self.embedder(batch["hist"], batch["hist_len"], batch["player"])
        totals = self._stroke_totals(x, batch["shots"], batch["land"], batch["move"])
        R = batch["n_rallies"]
        sums = torch.zeros(R, self.n_options).index_add(0, batch["rally_idx"], totals)
        counts = torch.zeros(R).index_add(
            0, batch["rally_idx"], torch.ones(totals.shape[0])
        )
        per_rally = sums / counts[:, None]  # L_o(rally)
        with torch.no_grad():
            # E-step: responsibilities from the per-rally losses, with one
            # Sinkhorn-style column normalization across the batch so no
            # option starves early (rich-get-richer collapse).
            scores = -per_rally / tau
            scores = scores - torch.logsumexp(scores, dim=0, keepdim=True)
            resp = torch.softmax(scores, dim=1)
            entropy = float(-(resp * resp.clamp_min(1e-12).log()).sum(dim=1).mean())
        # M-step: responsibility-weighted prediction loss; with a single
        # option this is exactly the flat behavior-cloning objective.
        loss = (resp * per_rally).sum(dim=1).mean()
        # The high-level policy chases the (detached) responsibilities.
        log_prior = torch.log_softmax(self.option_net(x[batch["first_idx"]]), dim=1)
        prior_loss = -(resp * log_prior).sum(dim=1).mean()
        return loss + prior_loss, entropy

    def fit(self, train_data: Dataset, log_path=None, progress: bool = False) -> list[dict]:
        cfg = self.cfg
        if cfg.deterministic:
            torch.set_num_threads(1)
        torch.manual_seed(cfg.seed)
        rng = np.random.default_rng(cfg.seed)
        prepared = [self._prepare_rally(r) for r in train_data.rallies if r.strokes]
        opt = torch.optim.Adam(self.parameters(), lr=cfg.learning_rate)
        log: list[dict] = []
        self.train()
        step = 0
        # Hard assignments from the start: a low fixed temperature lets the
        # per-option heads specialize before they can symmetrize.
        tau = 0.02
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(prepared))
            for lo in range(0, len(prepared), cfg.batch_size):
                chunk = [prepared[i] for i in order[lo : lo + cfg.batch_size]]
                batch = self._collate(chunk, rng, train=True)
                loss, entropy = self.batch_loss(batch, tau)
                if not torch.isfinite(loss):
                    raise RuntimeError(f"training diverged at epoch {epoch} step {step}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                log.append(
                    {
                        "step": step,
                        "epoch": epoch,
                        "loss": float(loss.detach()),
                        "tau": tau,
                        "option_entropy": entropy,
                    }
                )
                step += 1
            if progress:
                print(f"epoch {epoch + 1}/{cfg.epochs} loss={log[-1]['loss']:.4f} tau={tau:.2f}")
        self.eval()
        if log_path is not None:
            with open(log_path, "w") as f:
                for entry in log:
                    f.write(json.dumps(entry) + "\n")
        return log

    @torch.no_grad()
    def option_posterior(self, data: Dataset, tau: float = 1.0) -> np.ndarray:
        """Per-rally option responsibilities (R, n_options) on a dataset."""
        self.eval()
        prepared = [self._prepare_rally(r) for r in data.rallies if r.strokes]
        rng = np.random.default_rng(0)
        out = []
        for lo in range(0, len(prepared), self.cfg.batch_size):
            batch = self._collate(prepared[lo : lo + self.cfg.batch_size], rng, train=False)
            x = self.embedder(batch["hist"], batch["hist_len"], batch["player"])
            totals = self._stroke_totals(x, batch["shots"], batch["land"], batch["move"])
            R = batch["n_rallies"]
            sums = torch.zeros(R, self.n_options).index_add(0, batch["rally_idx"], totals)
            counts = torch.zeros(R).index_add(
                0, batch["rally_idx"], torch.ones(totals.shape[0])
            )
            log_prior = torch.log_softmax(self.option_net(x[batch["first_idx"]]), dim=1)
            scores = (log_prior - sums / counts[:, None]) / tau
            out.append(torch.softmax(scores, dim=1).numpy())
        return np.concatenate(out, axis=0)

    # ---------------------------------------------------------- persistence
    def save(self, path, dataset_hash: str = ""):
        torch.save(
            {
                "kind": "hbc" if self.n_options > 1 else "bc",
                "config": self.cfg.to_dict(),
                "players": self.players,
                "n_options": self.n_options,
                "dataset_hash": dataset_hash,
                "state_dict": self.state_dict(),
            },
            path,
        )

    @classmethod
    def load(cls, path):
        obj = torch.load(path, weights_only=False)
        policy = cls(
            ModelConfig.from_dict(obj["config"]), obj["players"], obj["n_options"]
        )
        policy.load_state_dict(obj["state_dict"])
        policy.eval()
        return policy


class BCPolicy(HBCPolicy):
    """Flat behavior cloning: the single-option case of HBCPolicy."""

    def __init__(self, cfg: ModelConfig, players: list[str]):
        super().__init__(cfg, players, n_options=1)


class CloneAgent(Agent):
    """Runs a BC or HBC policy; the HBC option is drawn from the learned prior
    at the first stroke of each rally and held for the rally."""

    def __init__(self, policy: HBCPolicy, mode: str = "sample"):
        self.policy = policy
        self.mode = mode
        self._option: int | None = None
        self._info: dict = {}

    def reset_rally(self):
        self._option = None

    def last_act_info(self) -> dict:
        return self._info

    @torch.no_grad()
    def act(self, history, current: PlayerState, player_id: str, seed: int) -> Action:
        policy = self.policy
        policy.eval()
        rng = np.random.default_rng(seed)
        feats = np.stack([state_features(s) for s in [*history, current]])
        seq = torch.from_numpy(feats)[None]
        x = policy.embedder(
            seq, torch.tensor([feats.shape[0]]),
            torch.tensor([policy.player_index(player_id)]),
        )
        if self._option is None:
            prior = torch.softmax(policy.option_net(x), dim=1)[0].numpy().astype(np.float64)
            if self.mode == "sample":
                self._option = int(rng.choice(policy.n_options, p=prior / prior.sum()))
            else:
                self._option = int(np.argmax(prior))
        shot_logits, land, move = policy.head_outputs(
            x, torch.tensor([self._option], dtype=torch.long)
        )
        probs = torch.softmax(shot_logits, dim=-1)[0].numpy().astype(np.float64)
        self._info = {"shot_dist": probs.tolist(), "option": self._option}
        return emit_action(
            probs,
            mixture_to_numpy(land[0][0], land[1][0], land[2][0]),
            mixture_to_numpy(move[0][0], move[1][0], move[2][0]),
            self.mode,
            rng,
        )
