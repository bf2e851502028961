"""Hyper-parameter records for the window-attention detector."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from fdibench.errors import ContractViolation

N_CLASSES = 3
CLASS_NAMES = ("clean", "attack1", "attack2")


@dataclass(frozen=True)
class NetConfig:
    """Architecture of the residue-window network.

    All sizes are desk-scale by default: the point is to exercise the
    mechanism end to end, not to chase benchmark leaderboards.
    """

    n_channels: int
    window: int = 32
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 64

    def __post_init__(self):
        if self.n_channels < 1:
            raise ContractViolation("n_channels must be >= 1")
        if self.window < 2:
            raise ContractViolation("window must be >= 2")
        if self.d_model < 1 or self.n_heads < 1 or self.n_layers < 1:
            raise ContractViolation("d_model, n_heads, n_layers must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ContractViolation(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.d_ff < 1:
            raise ContractViolation("d_ff must be >= 1")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**d)


@dataclass(frozen=True)
class LossWeights:
    """Weights of the three loss terms (all must be >= 0)."""

    rec: float = 1.0
    disc: float = 0.1
    cls: float = 1.0

    def __post_init__(self):
        for name in ("rec", "disc", "cls"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"loss weight {name} must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    """Plain mini-batch gradient descent settings.

    No adaptive optimizer on purpose: a fixed step plus gradient-norm
    clipping keeps runs bit-reproducible from the seed alone.
    """

    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 16
    stride: int = 8
    clip_norm: float = 5.0
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    allow_unlabeled_only: bool = False
    allow_labeled_only: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ContractViolation("epochs must be >= 0")
        if self.lr <= 0 or self.batch_size < 1 or self.stride < 1:
            raise ContractViolation("lr, batch_size, stride must be positive")
        if self.clip_norm <= 0:
            raise ContractViolation("clip_norm must be > 0")
