from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass
class GeneratorConfig:
    """Generator hyperparameters.

    Defaults are desk-scale for the model size; masking rates, sequence
    limits, region count and the optimizer follow the full-scale setup
    (``GeneratorConfig.full_scale()`` also restores L=12, D=768).
    """

    vocab_size: int = 0
    layers: int = 2
    hidden: int = 64
    heads: int = 4
    ffn_mult: int = 4
    max_context_len: int = 110
    max_response_len: int = 40
    region_len: int = 36
    d_obj: int = 64
    max_turns: int = 16
    mcp_rate: float = 0.15
    mrp_rate: float = 0.70
    use_mcp: bool = True
    vkb_enabled: bool = True
    vkb_scope: str = "instance"
    dropout: float = 0.0
    lr: float = 3e-5
    batch_size: int = 64
    epochs: int = 20
    max_steps: int = 0
    grad_clip: float = 1.0
    init_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError("hidden must be divisible by heads")
        for name in ("layers", "hidden", "heads", "max_context_len", "max_response_len",
                     "region_len", "d_obj", "max_turns"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("mcp_rate", "mrp_rate"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in (0, 1)")
        if self.vkb_scope not in ("instance", "global"):
            raise ValueError("vkb_scope must be 'instance' or 'global'")

    @property
    def max_positions(self):
        # O + Q + C + [BOS] + response + [EOS]
        return 2 * self.region_len + self.max_context_len + self.max_response_len + 2

    @classmethod
    def full_scale(cls, **overrides):
        kw = dict(layers=12, hidden=768, heads=12, d_obj=2048)
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self):
        return asdict(self)
