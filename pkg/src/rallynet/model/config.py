"""Hyperparameter container shared by the policy and the BC/HBC baselines."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field


@dataclass
class ModelConfig:
    n_players: int = 2
    state_embed_dim: int = 80  # rally-embedding width d_s
    player_embed_dim: int = 8
    context_dim: int = 128
    n_mixtures: int = 5
    n_shot_types: int = 12
    n_heads: int = 2
    n_transformer_layers: int = 1
    encoder_hidden: int = 64
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    reg_weight: float = 0.05  # alpha
    position_nll_scale: float = 0.01
    sde_dt: float = 1.0
    std_clamp: float = 0.1
    diffusion_clamp: float = 0.1  # upper bound on the SDE noise scale
    sigma_floor: float = 1e-4
    batch_size: int = 32  # rallies per optimization step
    epochs: int = 100
    learning_rate: float = 1e-4
    generic_player_rate: float = 0.05
    max_history: int = 64
    seed: int = 0
    deterministic: bool = True

    @property
    def state_dim(self) -> int:
        return self.state_embed_dim + self.player_embed_dim

    @property
    def latent_dim(self) -> int:
        return self.state_dim + self.context_dim

    def validate(self):
        for name in (
            "state_embed_dim",
            "player_embed_dim",
            "context_dim",
            "n_mixtures",
            "n_shot_types",
            "n_players",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.reg_weight <= 1.0:
            raise ValueError("reg_weight must be in [0, 1]")
        if self.std_clamp <= 0:
            raise ValueError("std_clamp must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        obj = dict(obj)
        if "loss_weights" in obj:
            obj["loss_weights"] = tuple(obj["loss_weights"])
        return cls(**obj)


def desk_scale_config(n_players: int = 2, seed: int = 0, **overrides) -> ModelConfig:
    """Small CPU-friendly configuration used by the end-to-end acceptance runs."""
    defaults = dict(
        n_players=n_players,
        state_embed_dim=32,
        player_embed_dim=8,
        context_dim=16,
        encoder_hidden=32,
        epochs=40,
        batch_size=64,
        learning_rate=1e-3,
        seed=seed,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)
