"""Loss terms: shot cross-entropy, mixture NLL, mean-spread regularizer,
context KL + reconstruction, and the drift-matching SDE penalty.

All terms are reported per stroke (batch means), so the logged total always
equals w1*pred + w2*ctx + w3*sde exactly.
"""

from __future__ import annotations

import math
import warnings

import torch

LOG_2PI = math.log(2.0 * math.pi)


def position_nll(target: torch.Tensor, means, stds, weights, floor: float = 1e-6) -> torch.Tensor:
    """-log sum_g w_g N(target; mu_g, diag(sx^2, sy^2)) per sample.

    target (B, 2); means/stds (B, G, 2); weights (B, G). Stds below the
    numerical floor are clamped (with a warning).
    """
    if bool((stds < floor).any()):
        warnings.warn("mixture std below numerical floor; clamping", RuntimeWarning)
        stds = stds.clamp_min(floor)
    diff = (target[:, None, :] - means) / stds
    log_comp = -0.5 * (diff**2).sum(-1) - stds.log().sum(-1) - LOG_2PI
    log_w = torch.log(weights.clamp_min(1e-12))
    return -torch.logsumexp(log_w + log_comp, dim=-1)


def shot_cross_entropy(shot_logits: torch.Tensor, true_shots: torch.Tensor) -> torch.Tensor:
    """Per-step cross-entropy of the predicted shot distribution, (B,)."""
    logp = torch.log_softmax(shot_logits, dim=-1)
    return -logp.gather(1, true_shots[:, None]).squeeze(1)


def mean_spread(means: torch.Tensor) -> torch.Tensor:
    """Mean over unordered component pairs of -||mu_i - mu_j||, (B,). Never positive."""
    B, G, _ = means.shape
    ii, jj = torch.triu_indices(G, G, offset=1)
    d = torch.linalg.norm(means[:, ii, :] - means[:, jj, :], dim=-1)
    return -d.mean(dim=-1)


def reg_loss(land_means: torch.Tensor, move_means: torch.Tensor) -> torch.Tensor:
    """Average of the two heads' mean-spread penalties, (B,)."""
    return 0.5 * (mean_spread(land_means) + mean_spread(move_means))


def pred_loss(
    shot_logits,
    land,
    move,
    true_shots,
    true_land,
    true_move,
    alpha: float = 0.05,
    scale: float = 0.01,
) -> dict:
    """Per-stroke action prediction loss.

    total = type + (1 - alpha) * scale * (land + move) + alpha * scale * reg,
    each component a batch mean. `land`/`move` are (means, stds, weights).
    """
    l_type = shot_cross_entropy(shot_logits, true_shots).mean()
    l_land = position_nll(true_land, *land).mean()
    l_move = position_nll(true_move, *move).mean()
    l_reg = reg_loss(land[0], move[0]).mean()
    total = l_type + (1.0 - alpha) * scale * (l_land + l_move) + alpha * scale * l_reg
    return {"type": l_type, "land": l_land, "move": l_move, "reg": l_reg, "total": total}


def kl_std_normal(mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """D_KL(N(mu, sigma) || N(0, 1)) summed over dims, (B,). Always >= 0."""
    if bool((sigma <= 0).any()):
        raise ValueError("encoder std must be strictly positive")
    return 0.5 * (mu**2 + sigma**2 - 1.0 - 2.0 * sigma.log()).sum(dim=-1)


def ctx_loss(mu: torch.Tensor, sigma: torch.Tensor, recon_total: torch.Tensor) -> dict:
    """Latent KL (batch mean) plus the decoder reconstruction loss."""
    l_latent = kl_std_normal(mu, sigma).mean()
    total = l_latent + recon_total
    return {"latent": l_latent, "recon": recon_total, "total": total}


def sde_loss(
    h_player: torch.Tensor,
    h_target: torch.Tensor,
    sigma: torch.Tensor,
    floor: float = 1e-6,
) -> torch.Tensor:
    """0.5 * |(h_phi - h_theta) / sigma|^2 summed over dims, averaged over steps.

    Both drifts and sigma are evaluated at the target-process inputs.
    """
    if bool((sigma < floor).any()):
        warnings.warn("SDE diffusion below numerical floor; clamping", RuntimeWarning)
        sigma = sigma.clamp_min(floor)
    return (0.5 * ((h_player - h_target) / sigma) ** 2).sum(dim=-1).mean()
