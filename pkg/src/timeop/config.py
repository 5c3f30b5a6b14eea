"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    interactions: str = ""
    features: dict = field(default_factory=dict)  # modality -> path
    modalities: tuple = ("id", "vision", "text")
    output_dir: str = "out"
    dim: int = 64
    batch_size: int = 2048
    layers: int = 2
    k: int = 3
    tau: tuple = (0.5, 2.0, 8.0)
    kernel: str = "temporal"
    temperature: float = 1.0
    lam: float = 0.01
    gamma: float = 1e-4
    sigma_min: float = 0.1
    lambda_var: float = 1.0
    eps: float = 1e-8
    lr: float = 1e-4
    negatives: int = 1
    window_fraction: float = 0.1
    patience: int = 10
    epochs: int = 300
    hidden: int = 64
    time_unit: float = 86400.0
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("dim", "batch_size", "k", "temperature", "sigma_min", "lambda_var", "eps", "lr",
                     "negatives", "window_fraction", "epochs", "hidden", "time_unit"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name}: must be > 0, got {getattr(self, name)!r}")
        for name in ("layers", "lam", "gamma", "patience", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be >= 0, got {getattr(self, name)!r}")
        if self.window_fraction > 1:
            raise ConfigError("window_fraction: must lie in (0, 1]")
        if self.batch_size < 2:
            raise ConfigError("batch_size: must be >= 2")
        if self.kernel not in ("temporal", "uniform"):
            raise ConfigError(f"kernel: expected 'temporal' or 'uniform', got {self.kernel!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype: expected 'float32' or 'float64', got {self.dtype!r}")
        if len(self.tau) != self.k:
            raise ConfigError(f"tau: has {len(self.tau)} scales but k = {self.k}")
        if any(t <= 0 for t in self.tau):
            raise ConfigError("tau: scales must be > 0")
        if self.kernel == "temporal" and any(b <= a for a, b in zip(self.tau, self.tau[1:])):
            raise ConfigError("tau: scales must be strictly increasing")
        if not self.modalities:
            raise ConfigError("modalities: need at least one")
        if len(set(self.modalities)) != len(self.modalities):
            raise ConfigError("modalities: duplicate names")

    def echo(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            key = "lambda" if f.name == "lam" else f.name
            if isinstance(value, dict):
                text = ",".join(f"{k}:{v}" for k, v in value.items())
            elif isinstance(value, tuple):
                text = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _convert(key: str, name: str, raw: str, base: Path | None):
    kind = _TYPES[name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if name == "tau":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if name == "modalities":
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        if name == "features":
            out = {}
            for item in filter(None, (x.strip() for x in raw.split(","))):
                mod, sep, path = item.partition(":")
                if not sep or not mod.strip() or not path.strip():
                    raise ValueError(f"expected name:path, got {item!r}")
                out[mod.strip()] = _resolve(path.strip(), base)
            return out
        if name in ("interactions", "output_dir"):
            return _resolve(raw, base) if raw else raw
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})") from None


def _resolve(path: str, base: Path | None) -> str:
    p = Path(path)
    if base is not None and not p.is_absolute():
        p = base / p
    return str(p)


def parse_config_text(text: str, base: Path | None = None, **overrides) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        name = "lam" if key == "lambda" else key
        if name not in _TYPES or key == "lam":
            raise ConfigError(f"{key}: unknown key")
        values[name] = _convert(key, name, raw.strip(), base)
    values.update(overrides)
    if "k" not in values and "tau" in values:
        values["k"] = len(values["tau"])
    return RunConfig(**values)


def parse_config(path, **overrides) -> RunConfig:
    """Read a config file; relative paths inside it resolve against its directory."""
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), base=path.parent, **overrides)
