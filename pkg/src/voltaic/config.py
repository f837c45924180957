"""Flat key=value run configuration.

Lists (layer sizes, learning rates) are comma separated.  Unknown keys are
an error, and so is any required key left out.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from .errors import ConfigError

REQUIRED = ("model", "sizes", "beta", "T", "K", "lr", "decay", "batch_size", "epochs")


@dataclass
class RunConfig:
    model: str
    sizes: tuple[int, ...]
    beta: float
    T: int
    K: int
    lr: tuple[float, ...]
    decay: float
    batch_size: int
    epochs: int
    A: float = 1.0
    gains: tuple[float, ...] = ()
    variant: str = "centered"
    target_amplitude: float = 1.0
    clip_conductances: bool = True
    seed: int = 0
    train_subset: int = 0
    test_subset: int = 0

    def __post_init__(self):
        if self.model not in ("drn", "dhn"):
            raise ConfigError(f"model must be drn or dhn, got {self.model!r}")
        L = len(self.sizes) - 1
        if L < 1:
            raise ConfigError("sizes needs at least two layers")
        if len(self.lr) != L:
            raise ConfigError(f"lr has {len(self.lr)} entries but the model has {L} layers")
        if self.gains and len(self.gains) != L:
            raise ConfigError(f"gains has {len(self.gains)} entries but the model has {L} layers")

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                val = ",".join(repr(v) for v in val)
            elif isinstance(val, bool):
                val = "true" if val else "false"
            lines.append(f"{f.name} = {val}")
        return "\n".join(lines) + "\n"


def _convert(name, raw: str, kind):
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "ints":
            return tuple(int(p) for p in raw.split(",") if p.strip())
        if kind == "floats":
            return tuple(float(p) for p in raw.split(",") if p.strip())
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"key {name!r}: cannot parse {raw!r}") from exc


_KINDS = {"model": str, "sizes": "ints", "beta": float, "T": int, "K": int, "lr": "floats",
          "decay": float, "batch_size": int, "epochs": int, "A": float, "gains": "floats",
          "variant": str, "target_amplitude": float, "clip_conductances": bool, "seed": int,
          "train_subset": int, "test_subset": int}


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in _KINDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw, _KINDS[key])
    for key, raw in (overrides or {}).items():
        if key not in _KINDS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _convert(key, str(raw), _KINDS[key])
    for key in REQUIRED:
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
    return RunConfig(**values)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a config file; a bare name such as ``drn-xs`` resolves to a bundled config."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        bundled = resources.files("voltaic") / "configs" / f"{path}.cfg"
        if bundled.is_file():
            return parse_config(bundled.read_text(), overrides)
    if not p.exists():
        raise ConfigError(f"config file {path} not found")
    return parse_config(p.read_text(), overrides)


def bundled_configs() -> list[str]:
    return sorted(p.name[:-4] for p in (resources.files("voltaic") / "configs").iterdir()
                  if p.name.endswith(".cfg"))
