"""Network building blocks: state embedding, context encoder/decoder/selector,
drift and diffusion nets, and the mixture action heads."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from ..data import N_SHOT_TYPES, Action, PlayerState, Position

STATE_FEATURES = 3 + 2 + N_SHOT_TYPES + 2 + 2 + 2  # 23
ACTION_FEATURES = N_SHOT_TYPES + 2 + 2  # 16
_SCORE_SCALE = 21.0


class EmptyExperienceError(ValueError):
    """The context encoder received an empty action sequence."""


class UnknownPlayerError(KeyError):
    """A player id is absent from the registry and no generic row was requested."""


def state_features(s: PlayerState) -> np.ndarray:
    f = np.zeros(STATE_FEATURES, dtype=np.float32)
    f[0] = s.score_info[0] / _SCORE_SCALE
    f[1] = s.score_info[1] / _SCORE_SCALE
    f[2] = s.score_info[2] / 3.0
    f[3] = s.shuttle_pos.x
    f[4] = s.shuttle_pos.y
    f[5 + s.incoming_shot] = 1.0
    base = 5 + N_SHOT_TYPES
    f[base + 0] = s.self_pos.x
    f[base + 1] = s.self_pos.y
    f[base + 2] = s.opp_pos.x
    f[base + 3] = s.opp_pos.y
    f[base + 4] = s.opp_move_vec[0]
    f[base + 5] = s.opp_move_vec[1]
    return f


def action_features(a: Action) -> np.ndarray:
    f = np.zeros(ACTION_FEATURES, dtype=np.float32)
    f[a.shot] = 1.0
    f[N_SHOT_TYPES + 0] = a.landing.x
    f[N_SHOT_TYPES + 1] = a.landing.y
    f[N_SHOT_TYPES + 2] = a.move.x
    f[N_SHOT_TYPES + 3] = a.move.y
    return f


def sequence_features(actions) -> np.ndarray:
    if len(actions) == 0:
        raise EmptyExperienceError("cannot encode an empty action sequence")
    return np.stack([action_features(a) for a in actions])


@dataclass
class MixtureParams:
    """Diagonal bivariate Gaussian mixture: means (G,2), stds (G,2), weights (G,)."""

    means: np.ndarray
    stds: np.ndarray
    weights: np.ndarray

    def top_component_mean(self) -> Position:
        g = int(np.argmax(self.weights))
        return Position(float(self.means[g, 0]), float(self.means[g, 1]))

    def sample(self, rng: np.random.Generator) -> Position:
        g = int(rng.choice(len(self.weights), p=self.weights / self.weights.sum()))
        x, y = rng.normal(self.means[g], self.stds[g])
        return Position(float(x), float(y))


def bounded_std(raw: torch.Tensor, clamp: float, floor: float) -> torch.Tensor:
    """Squash a raw head output into (floor, clamp]."""
    return floor + (clamp - floor) * torch.sigmoid(raw)


def parse_mixture(raw: torch.Tensor, n_mixtures: int, clamp: float, floor: float):
    """Split a (..., 5*G) head output into means, stds in (floor, clamp], simplex weights."""
    parts = raw.reshape(*raw.shape[:-1], n_mixtures, 5)
    means = parts[..., 0:2]
    stds = bounded_std(parts[..., 2:4], clamp, floor)
    weights = torch.softmax(parts[..., 4], dim=-1)
    return means, stds, weights


def mixture_to_numpy(means, stds, weights) -> MixtureParams:
    return MixtureParams(
        means=means.detach().cpu().double().numpy(),
        stds=stds.detach().cpu().double().numpy(),
        weights=weights.detach().cpu().double().numpy(),
    )


class StateEmbedder(nn.Module):
    """Transformer over the acting player's own state history, concatenated
    with a learned per-player embedding (generic row at index n_players)."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.input_proj = nn.Linear(STATE_FEATURES, cfg.state_embed_dim)
        self.pos_embed = nn.Embedding(cfg.max_history, cfg.state_embed_dim)
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.state_embed_dim,
            nhead=cfg.n_heads,
            dim_feedforward=2 * cfg.state_embed_dim,
            dropout=0.0,
            batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=cfg.n_transformer_layers)
        self.player_embed = nn.Embedding(cfg.n_players + 1, cfg.player_embed_dim)

    @property
    def generic_player_index(self) -> int:
        return self.cfg.n_players

    def forward(self, seqs: torch.Tensor, lengths: torch.Tensor, player_idx: torch.Tensor):
        """seqs (B, T, 23) padded, lengths (B,), player_idx (B,) -> (B, player+state dim)."""
        B, T, _ = seqs.shape
        pos = torch.arange(T, device=seqs.device).clamp(max=self.cfg.max_history - 1)
        h = self.input_proj(seqs) + self.pos_embed(pos)[None, :, :]
        causal = torch.triu(torch.ones(T, T, dtype=torch.bool, device=seqs.device), diagonal=1)
        pad = torch.arange(T, device=seqs.device)[None, :] >= lengths[:, None]
        out = self.encoder(h, mask=causal, src_key_padding_mask=pad)
        last = out[torch.arange(B, device=seqs.device), lengths - 1]
        return torch.cat([self.player_embed(player_idx), last], dim=-1)


class ContextEncoder(nn.Module):
    """GRU encoder q(z | action sequence) emitting mean and positive std."""

    def __init__(self, cfg):
        super().__init__()
        self.gru = nn.GRU(ACTION_FEATURES, cfg.encoder_hidden, batch_first=True)
        self.mu_head = nn.Linear(cfg.encoder_hidden, cfg.context_dim)
        self.sigma_head = nn.Linear(cfg.encoder_hidden, cfg.context_dim)

    def forward(self, seqs: torch.Tensor, lengths: torch.Tensor):
        """seqs (B, T, 16) padded -> (mu, sigma), sigma > 0 elementwise."""
        packed = nn.utils.rnn.pack_padded_sequence(
            seqs, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        _, h = self.gru(packed)
        h = h[-1]
        mu = self.mu_head(h)
        sigma = nn.functional.softplus(self.sigma_head(h)) + 1e-4
        return mu, sigma


class ActionHeads(nn.Module):
    """Projection of a latent position into shot logits and two mixtures."""

    def __init__(self, cfg, in_dim: int | None = None):
        super().__init__()
        self.cfg = cfg
        d = in_dim if in_dim is not None else cfg.latent_dim
        self.shot = nn.Linear(d, cfg.n_shot_types)
        self.landing = nn.Linear(d, 5 * cfg.n_mixtures)
        self.move = nn.Linear(d, 5 * cfg.n_mixtures)

    def forward(self, z: torch.Tensor):
        cfg = self.cfg
        shot_logits = self.shot(z)
        land = parse_mixture(self.landing(z), cfg.n_mixtures, cfg.std_clamp, cfg.sigma_floor)
        move = parse_mixture(self.move(z), cfg.n_mixtures, cfg.std_clamp, cfg.sigma_floor)
        return shot_logits, land, move


class ContextDecoder(nn.Module):
    """GRU decoder reconstructing an action sequence from a context vector."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.init_hidden = nn.Linear(cfg.context_dim, cfg.encoder_hidden)
        self.cell = nn.GRUCell(ACTION_FEATURES, cfg.encoder_hidden)
        self.heads = ActionHeads(cfg, in_dim=cfg.encoder_hidden)

    def reconstruct(self, z: torch.Tensor, seqs: torch.Tensor, lengths: torch.Tensor):
        """Teacher-forced pass over true sequences; returns per-step head outputs
        flattened over valid steps, plus the flat valid mask."""
        B, T, _ = seqs.shape
        h = torch.tanh(self.init_hidden(z))
        inp = torch.zeros(B, ACTION_FEATURES, device=z.device, dtype=z.dtype)
        outs = []
        for t in range(T):
            h = self.cell(inp, h)
            outs.append(h)
            inp = seqs[:, t]
        hs = torch.stack(outs, dim=1)  # (B, T, H)
        valid = torch.arange(T, device=z.device)[None, :] < lengths[:, None]
        flat = hs[valid]
        return self.heads(flat), valid

    @torch.no_grad()
    def decode(self, z: torch.Tensor, horizon: int):
        """Autoregressive decode feeding back the modal action at each step."""
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        cfg = self.cfg
        h = torch.tanh(self.init_hidden(z))
        inp = torch.zeros(z.shape[0], ACTION_FEATURES, device=z.device, dtype=z.dtype)
        steps = []
        for _ in range(horizon):
            h = self.cell(inp, h)
            shot_logits, land, move = self.heads(h)
            probs = torch.softmax(shot_logits, dim=-1)
            steps.append((probs, land, move))
            # feed back the modal action
            inp = torch.zeros_like(inp)
            shot_ids = probs.argmax(dim=-1)
            inp[torch.arange(len(shot_ids)), shot_ids] = 1.0
            for offset, (means, _, weights) in ((N_SHOT_TYPES, land), (N_SHOT_TYPES + 2, move)):
                g = weights.argmax(dim=-1)
                top = means[torch.arange(len(g)), g]
                inp[:, offset : offset + 2] = top
        return steps


class MLP(nn.Module):
    """Two-layer perceptron with a smooth nonlinearity."""

    def __init__(self, in_dim: int, out_dim: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden), nn.Tanh(), nn.Linear(hidden, out_dim)
        )

    def forward(self, x):
        return self.net(x)


_STEP_PERIODS = (2.0, 3.0, 4.0, 6.0, 12.0)
N_STEP_FEATURES = 1 + 2 * len(_STEP_PERIODS)


def step_features(t: torch.Tensor) -> torch.Tensor:
    """Step-index features for the drift/diffusion nets: a scaled linear term
    plus sine/cosine pairs at a few short periods, so periodic structure in
    the rally (e.g. alternating servers, tactical cycles) is linearly
    accessible instead of having to be carved out of a raw scalar."""
    cols = [t * 0.1]
    for period in _STEP_PERIODS:
        angle = t * (2.0 * math.pi / period)
        cols.extend([torch.sin(angle), torch.cos(angle)])
    return torch.stack(cols, dim=-1)


class DriftNet(nn.Module):
    """Drift h(z', t): MLP over the latent input with step features appended."""

    def __init__(self, cfg):
        super().__init__()
        d = cfg.latent_dim
        self.mlp = MLP(d + N_STEP_FEATURES, d, d)

    def forward(self, z_prime: torch.Tensor, t: torch.Tensor):
        return self.mlp(torch.cat([z_prime, step_features(t)], dim=-1))


class DiffusionNet(nn.Module):
    """Shared diffusion sigma(z', t) > 0, squashed like the mixture stds."""

    def __init__(self, cfg):
        super().__init__()
        d = cfg.latent_dim
        self.cfg = cfg
        self.mlp = MLP(d + N_STEP_FEATURES, d, d)

    def forward(self, z_prime: torch.Tensor, t: torch.Tensor):
        raw = self.mlp(torch.cat([z_prime, step_features(t)], dim=-1))
        return bounded_std(raw, self.cfg.diffusion_clamp, self.cfg.sigma_floor)
