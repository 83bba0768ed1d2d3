"""Pipeline configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

INITIAL_CLASSIFIERS = ("dtree", "knn", "gnb", "svm", "adaboost", "bagging")
ENSEMBLES = ("linkclue", "last", "averaging", "voting")
LINKAGES = ("single", "complete", "average")
SIMILARITIES = ("cts",)
REDUCERS = ("tca", "pca")
KERNELS = ("linear", "rbf")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    # manifold feature transformation
    d_tca: int = 128
    q: Optional[int] = None
    reducer: str = "tca"
    tca_kernel: str = "linear"
    tca_regularizer: float = 1.0
    use_manifold: bool = True
    # classifier learning
    kernel: str = "rbf"
    bandwidth: Optional[float] = None
    eta: float = 0.1
    lam: float = 0.4
    rho: float = 1.0
    p: int = 10
    l: int = 10
    fixed_mu: Optional[float] = None
    initial_classifier: str = "dtree"
    knn_k: int = 5
    tree_depth: int = 10
    # ensemble
    ensemble: str = "linkclue"
    similarity: str = "cts"
    linkage: str = "single"
    decay: float = 0.8
    seed: int = 0

    def __post_init__(self):
        checks = [
            (self.d_tca >= 1, "d_tca must be >= 1"),
            (self.q is None or self.q >= 1, "q must be >= 1"),
            (self.reducer in REDUCERS, f"reducer must be one of {REDUCERS}"),
            (self.tca_kernel in KERNELS, f"tca_kernel must be one of {KERNELS}"),
            (self.kernel in KERNELS, f"kernel must be one of {KERNELS}"),
            (self.tca_regularizer > 0, "tca_regularizer must be > 0"),
            (self.bandwidth is None or self.bandwidth > 0, "bandwidth must be > 0"),
            (self.eta > 0, "eta must be > 0"),
            (self.lam >= 0, "lam must be >= 0"),
            (self.rho >= 0, "rho must be >= 0"),
            (self.p >= 1, "p must be >= 1"),
            (self.l >= 1, "l must be >= 1"),
            (self.fixed_mu is None or 0 <= self.fixed_mu <= 1, "fixed_mu must lie in [0, 1]"),
            (self.initial_classifier in INITIAL_CLASSIFIERS,
             f"initial_classifier must be one of {INITIAL_CLASSIFIERS}"),
            (self.knn_k >= 1, "knn_k must be >= 1"),
            (self.tree_depth >= 1, "tree_depth must be >= 1"),
            (self.ensemble in ENSEMBLES, f"ensemble must be one of {ENSEMBLES}"),
            (self.similarity in SIMILARITIES, f"similarity must be one of {SIMILARITIES}"),
            (self.linkage in LINKAGES, f"linkage must be one of {LINKAGES}"),
            (0 < self.decay <= 1, "decay must lie in (0, 1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def stage_seeds(self) -> dict:
        """Independent per-stage seeds derived from the global seed."""
        names = ("weak", "adist", "folds")
        children = np.random.SeedSequence(self.seed).spawn(len(names))
        return {k: int(c.generate_state(1)[0]) for k, c in zip(names, children)}


def _coerce(name: str, raw: str, annotation):
    raw = raw.strip()
    args = typing.get_args(annotation)
    if type(None) in args:
        if raw.lower() in ("none", "auto", ""):
            return None
        annotation = next(a for a in args if a is not type(None))
    try:
        if annotation is bool:
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if annotation in (int, float):
            return annotation(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {annotation.__name__}") from None
    return raw.strip("\"'")


def parse_config(text: str, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    A trailing bracketed unit such as ``eta = 0.1 [1]`` is accepted and
    ignored. Unknown keys are rejected.
    """
    known = typing.get_type_hints(PipelineConfig)
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if raw.endswith("]") and "[" in raw:
            raw = raw[:raw.rindex("[")]
        values[key] = _coerce(key, raw, known[key])
    return dataclasses.replace(base or PipelineConfig(), **values)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such config file: {path}")
    return parse_config(path.read_text())


def format_config(config: PipelineConfig) -> str:
    lines = []
    for k, v in config.as_dict().items():
        lines.append(f"{k} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"
