"""Run configuration and its ``key=value`` text format.

Every tunable in the library is addressable by one flat key::

    # comments and blank lines are ignored
    epochs = 30
    learning_rate = 0.01
    w_child = 0.3
    index_kind = levenshtein
    seeds = 0,1,2,3,4

``seed`` sets the training seed, the sampler seed and the split seed at
once. HNSW settings take an ``hnsw_`` prefix.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .losses import LossWeights
from .neighbors import HnswParams
from .selftrain import SamplerConfig
from .trainer import TrainConfig

UNLABELED_MODES = ("strip", "file")


@dataclass(frozen=True)
class ModelConfig:
    d_q: int = 64
    buckets: int = 8192
    d_h: int = 64
    d_g: int = 64
    hash_seed: int = 0
    use_label_hierarchy: bool = True
    mask_root_attention: bool = False


@dataclass(frozen=True)
class RunConfig:
    taxonomy: Path | None = None
    queries: Path | None = None
    embeddings: Path | None = None
    out: Path | None = None
    truth: Path | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    seeds: tuple[int, ...] = (0,)
    # "strip": hold out unlabeled_fraction of train as the pool; "file": pool = unlabeled rows of the queries file
    unlabeled_mode: str = "strip"
    unlabeled_fraction: float = 0.1
    full_grid: bool = False

    def __post_init__(self):
        if self.unlabeled_mode not in UNLABELED_MODES:
            raise ConfigError(f"unlabeled_mode must be one of {UNLABELED_MODES}, got {self.unlabeled_mode!r}")
        if not 0 <= self.unlabeled_fraction < 1:
            raise ConfigError("unlabeled_fraction must lie in [0, 1)")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")

    @property
    def seed(self) -> int:
        return self.train.seed

    @property
    def weights(self) -> LossWeights:
        return self.train.weights

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(
            self,
            train=replace(self.train, seed=seed),
            sampler=replace(self.sampler, seed=seed),
        )

    def with_weights(self, **changes) -> "RunConfig":
        return replace(self, train=replace(self.train, weights=replace(self.train.weights, **changes)))

    def with_sampler(self, **changes) -> "RunConfig":
        return replace(self, sampler=replace(self.sampler, **changes))

    def with_model(self, **changes) -> "RunConfig":
        return replace(self, model=replace(self.model, **changes))

    def to_dict(self) -> dict:
        """Flat key -> value view, the inverse of :func:`parse_config`."""
        out = {}
        for key, (section, name) in KEYS.items():
            out[key] = _get(self, section, name)
        out["seeds"] = ",".join(str(s) for s in self.seeds)
        out["seed"] = self.seed
        for k in ("taxonomy", "queries", "embeddings", "truth"):
            v = getattr(self, k)
            out[k] = str(v) if v is not None else None
        return out


# key -> (section, field); sections are attribute paths from RunConfig
_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "train.weights": LossWeights,
    "sampler": SamplerConfig,
    "sampler.hnsw": HnswParams,
}
_SKIP = {"seed", "weights", "hnsw"}
KEYS: dict[str, tuple[str, str]] = {}
for _section, _cls in _SECTIONS.items():
    for _f in dataclasses.fields(_cls):
        if _f.name in _SKIP:
            continue
        _key = f"hnsw_{_f.name}" if _section == "sampler.hnsw" else _f.name
        KEYS[_key] = (_section, _f.name)
for _f in ("unlabeled_mode", "unlabeled_fraction", "full_grid"):
    KEYS[_f] = ("", _f)
_PATH_KEYS = ("taxonomy", "queries", "embeddings", "out", "truth")


def _get(cfg, section: str, name: str):
    obj = cfg
    for part in filter(None, section.split(".")):
        obj = getattr(obj, part)
    return getattr(obj, name)


def _set(cfg, section: str, name: str, value):
    if not section:
        return replace(cfg, **{name: value})
    head, _, rest = section.partition(".")
    return replace(cfg, **{head: _set(getattr(cfg, head), rest, name, value)})


def _convert(raw: str, like, key: str, line: int | None):
    try:
        if isinstance(like, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {type(like).__name__}", line=line) from None
    return raw


def apply(cfg: RunConfig, key: str, raw: str, line: int | None = None) -> RunConfig:
    """Return ``cfg`` with one ``key=value`` setting applied."""
    key = key.strip()
    raw = raw.strip()
    where = f"line {line}: " if line is not None else ""
    try:
        if key == "seed":
            return cfg.with_seed(_convert(raw, 0, key, line))
        if key == "seeds":
            seeds = tuple(int(s) for s in raw.replace(" ", "").split(",") if s)
            return replace(cfg, seeds=seeds)
        if key in _PATH_KEYS:
            return replace(cfg, **{key: Path(raw) if raw else None})
        if key not in KEYS:
            raise ConfigError(f"{where}unknown key {key!r}", line=line)
        section, name = KEYS[key]
        value = _convert(raw, _get(cfg, section, name), key, line)
        return _set(cfg, section, name, value)
    except ConfigError as exc:
        if exc.line is None and line is not None:
            raise ConfigError(f"{where}{exc}", line=line) from None
        raise
    except ValueError as exc:
        raise ConfigError(f"{where}{key}: {exc}", line=line) from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}", line=lineno)
        key, value = body.split("=", 1)
        cfg = apply(cfg, key, value, lineno)
    return cfg


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, base)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in sorted(cfg.to_dict().items()):
        if value is None:
            continue
        lines.append(f"{key} = {str(value).lower() if isinstance(value, bool) else value}")
    return "\n".join(lines) + "\n"
