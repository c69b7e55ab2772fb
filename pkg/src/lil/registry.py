"""Textual index specs such as ``rs:epsilon=32,radix_bits=12`` and blob loading by magic."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from lil._blob import FormatError
from lil.baselines import BinaryBaseline, RbsIndex, SampledIndex, build_binary, build_rbs, build_sampled
from lil.core import ApproximateIndex, SortedDataset
from lil.pgm import PgmIndex, build_pgm
from lil.radix_spline import RsIndex, build_rs
from lil.rmi import RmiConfig, TrainedRmi, train_rmi

# kind -> (parameter defaults, builder)
_KINDS: dict[str, tuple[dict[str, object], Callable[..., ApproximateIndex]]] = {
    "rmi": (
        {"stage1": "linear", "stage2": "linear", "branching": 64},
        lambda d, stage1, stage2, branching: train_rmi(d, RmiConfig(stage1, stage2, branching)),
    ),
    "rs": ({"epsilon": 32, "radix_bits": 12}, lambda d, epsilon, radix_bits: build_rs(d, epsilon, radix_bits)),
    "pgm": ({"epsilon": 32}, lambda d, epsilon: build_pgm(d, epsilon)),
    "rbs": ({"radix_bits": 12}, lambda d, radix_bits: build_rbs(d, radix_bits)),
    "sampled": ({"stride": 16}, lambda d, stride: build_sampled(d, stride)),
    "binary": ({}, lambda d: build_binary(d)),
}

_BY_MAGIC = {
    b"RMI1": TrainedRmi,
    b"RSP1": RsIndex,
    b"PGM1": PgmIndex,
    b"RBS1": RbsIndex,
    b"SMP1": SampledIndex,
    b"BIN1": BinaryBaseline,
}


@dataclass(frozen=True)
class IndexSpec:
    kind: str
    params: dict[str, object] = field(default_factory=dict)

    @classmethod
    def parse(cls, text: str) -> IndexSpec:
        kind, _, rest = text.strip().partition(":")
        kind = kind.strip().lower()
        if kind not in _KINDS:
            raise ValueError(f"unknown index kind {kind!r} (choose from {', '.join(_KINDS)})")
        defaults = _KINDS[kind][0]
        params = dict(defaults)
        for item in filter(None, (p.strip() for p in rest.split(","))):
            name, eq, value = item.partition("=")
            name = name.strip()
            if not eq or name not in defaults:
                raise ValueError(f"bad parameter {item!r} for {kind} (accepted: {', '.join(defaults) or 'none'})")
            want = type(defaults[name])
            try:
                params[name] = want(value.strip())
            except ValueError:
                raise ValueError(f"{kind} parameter {name} expects {want.__name__}, got {value!r}") from None
        return cls(kind, params)

    def __str__(self) -> str:
        if not self.params:
            return self.kind
        return self.kind + ":" + ",".join(f"{k}={v}" for k, v in self.params.items())

    def build(self, d: SortedDataset) -> ApproximateIndex:
        return _KINDS[self.kind][1](d, **self.params)


def build_index(spec: str | IndexSpec, d: SortedDataset) -> ApproximateIndex:
    if isinstance(spec, str):
        spec = IndexSpec.parse(spec)
    return spec.build(d)


def load_index(data: bytes) -> ApproximateIndex:
    cls = _BY_MAGIC.get(bytes(data[:4]))
    if cls is None:
        raise FormatError(f"unrecognised index blob magic {bytes(data[:4])!r}")
    return cls.from_bytes(data)
