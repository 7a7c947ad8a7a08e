"""Job descriptions, read from plain ``key = value`` files."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

from ..errors import InvalidArgument, MalformedBody

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class JobSpec:
    model_id: str = "synthetic"
    dataset_id: str = "synthetic"
    n_workers: int = 2
    batch: int = 8                      # per worker
    max_iterations: int = 10
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.001
    lr_policy: str = "poly"
    lr_power: float = 1.0
    checkpoint_every_epoch: bool = True
    dataset_samples: int = 1024
    dataset_bytes: int = 0
    length: int = 1000                  # gradient elements
    element_width: int = 4
    seed: int = 0
    collective: str = "gdraa"
    task: str = "synthetic"
    output_dir: str = ""                # where worker processes leave their results

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidArgument("max_iterations must be >= 1")
        if self.n_workers < 1:
            raise InvalidArgument("n_workers must be >= 1")
        if self.batch < 1 or self.dataset_samples < 1 or self.length < 1:
            raise InvalidArgument("batch, dataset_samples and length must be >= 1")
        if self.collective not in ("gdraa", "ring", "ps"):
            raise InvalidArgument(f"unknown collective {self.collective!r}")

    @property
    def epoch_iterations(self) -> int:
        """Iterations per pass over the dataset, rounded up."""
        return math.ceil(self.dataset_samples / (self.n_workers * self.batch))

    def checkpoint_iterations(self) -> list[int]:
        """Update counts after which a checkpoint is written."""
        if not self.checkpoint_every_epoch:
            return []
        k = self.epoch_iterations
        return list(range(k, self.max_iterations + 1, k))

    def as_body(self) -> dict[str, str]:
        return {f.name: _format(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_mapping(cls, items) -> JobSpec:
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in items.items():
            if key not in known:
                continue
            kwargs[key] = _parse(known[key], str(raw).strip())
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> JobSpec:
        return cls.from_mapping(parse_kv(Path(path).read_text()))

    def replace(self, **changes) -> JobSpec:
        return dataclasses.replace(self, **changes)


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise MalformedBody(f"line {lineno}: expected key = value")
        out[key.strip()] = value.strip()
    return out


def _format(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    return str(value)


def _parse(f: dataclasses.Field, raw: str):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if kind == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise MalformedBody(f"bad value {raw!r} for {f.name}") from None
    return raw
