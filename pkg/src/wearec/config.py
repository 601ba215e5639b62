"""Run configuration: `key = value` text files, env overrides, validation.

The format is deliberately plain: UTF-8, one ``key = value`` per line,
``#`` starts a comment, unknown keys are rejected.  Every key can be
overridden through the environment as ``WEAREC_<KEY>`` (upper-cased).
The resolved configuration is echoed into every output artifact and must
re-parse to an identical RunConfig.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, fields

from .errors import ConfigError

ENV_PREFIX = "WEAREC_"


@dataclass
class RunConfig:
    dataset: str = ""
    output_dir: str = "runs/default"
    max_len: int = 50
    embed_dim: int = 64
    blocks: int = 2
    heads: int = 2
    alpha: float = 0.3
    dropout: float = 0.5
    vocab_size: int = 0  # 0 = derive from the dataset
    lr: float = 0.001
    batch_size: int = 256
    max_epochs: int = 300
    patience: int = 10
    seed: int = 42
    bands: int = 5
    analysis_k: int = 10
    context_mask: bool = False  # exclude padding rows from the context mean
    history_mask: bool = False  # exclude seen items from candidate ranking
    last_target_only: bool = False

    def validate(self) -> "RunConfig":
        if self.max_len < 2 or self.max_len % 2 != 0:
            raise ConfigError(f"max_len must be even and >= 2, got {self.max_len}")
        if self.embed_dim < 1 or self.heads < 1 or self.embed_dim % self.heads != 0:
            raise ConfigError(
                f"embed_dim ({self.embed_dim}) must be divisible by heads ({self.heads})"
            )
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 0:
            raise ConfigError(f"patience must be >= 0, got {self.patience}")
        if self.vocab_size not in (0,) and self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be 0 (auto) or >= 2, got {self.vocab_size}")
        if self.bands < 1:
            raise ConfigError(f"bands must be >= 1, got {self.bands}")
        if self.analysis_k < 1:
            raise ConfigError(f"analysis_k must be >= 1, got {self.analysis_k}")
        return self

    # -- serialization ---------------------------------------------------

    def to_text(self) -> str:
        lines = [f"{f.name} = {_format(getattr(self, f.name))}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    def to_inline(self) -> str:
        return ";".join(
            f"{f.name}={_format(getattr(self, f.name))}" for f in fields(self)
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:12]

    @classmethod
    def from_pairs(cls, pairs: list[tuple[str, str]], where: str = "config") -> "RunConfig":
        typed = {f.name: f.type for f in fields(cls)}
        values: dict = {}
        for key, raw in pairs:
            if key not in typed:
                raise ConfigError(f"{where}: unknown key {key!r}")
            values[key] = _coerce(key, raw, typed[key])
        return cls(**values)

    @classmethod
    def from_text(cls, text: str, where: str = "config") -> "RunConfig":
        pairs = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{where}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = line.split("=", 1)
            pairs.append((key.strip(), raw.strip()))
        return cls.from_pairs(pairs, where)

    @classmethod
    def from_inline(cls, inline: str) -> "RunConfig":
        pairs = []
        for chunk in inline.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            key, raw = chunk.split("=", 1)
            pairs.append((key.strip(), raw.strip()))
        return cls.from_pairs(pairs, "inline config")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls.from_pairs([(k, _format(v)) for k, v in d.items()], "config dict")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, raw: str, typ) -> object:
    name = typ if isinstance(typ, str) else typ.__name__
    try:
        if name == "bool":
            lowered = raw.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if name == "int":
            return int(raw)
        if name == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r} (expected {name})") from None


def load_config(path: str, env: dict | None = None) -> RunConfig:
    """Read a config file, apply WEAREC_* environment overrides, validate."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    config = RunConfig.from_text(text, where=path)
    env = os.environ if env is None else env
    overrides = []
    for f in fields(RunConfig):
        env_key = ENV_PREFIX + f.name.upper()
        if env_key in env:
            overrides.append((f.name, env[env_key]))
    if overrides:
        merged = config.to_dict()
        typed = {f.name: f.type for f in fields(RunConfig)}
        for key, raw in overrides:
            merged[key] = _coerce(key, raw, typed[key])
        config = RunConfig(**merged)
    return config.validate()
