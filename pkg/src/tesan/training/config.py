from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

from ..attention import Mode

# (negatives, epochs, window, batch_size)
PRESETS = {
    "mimic-like": dict(negatives=10, epochs=30, window=6, batch_size=64),
    "cms-like": dict(negatives=5, epochs=20, window=7, batch_size=128),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 100
    window: int = 6
    negatives: int = 10
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 3e-3
    seed: int = 0
    mode: str = Mode.TESA.value
    max_interval: int | None = None
    optimizer: str = "adam"
    dtype: str = "float32"
    dual_tables: bool = True
    workers: int = 1
    # fixed gradient chunk; keeps results identical for any worker count
    chunk_size: int = 16

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.dim >= 1, "dim must be >= 1"),
            (self.window >= 1, "window must be >= 1"),
            (self.negatives >= 0, "negatives must be >= 0"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.learning_rate > 0, "learning_rate must be positive"),
            (self.max_interval is None or self.max_interval >= 0, "max_interval must be >= 0"),
            (self.optimizer in ("adam", "sgd"), f"unknown optimizer {self.optimizer!r}"),
            (self.dtype in ("float32", "float64"), f"unknown dtype {self.dtype!r}"),
            (self.workers >= 1, "workers must be >= 1"),
            (self.chunk_size >= 1, "chunk_size must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            Mode(self.mode)
        except ValueError:
            raise ConfigError(f"unknown mode {self.mode!r}") from None

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "TrainConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}")
        return cls(**{**PRESETS[name], **overrides})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)
