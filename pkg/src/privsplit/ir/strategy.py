"""Partition + per-layer compression strategies and their string form.

Canonical string: ``P:<partition>`` followed by ``<index>:<technique>`` tokens
sorted by layer index, e.g. ``P:23 18:C2 22:C1``. Indices always refer to the
flat layer numbering of the uncompressed base model.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Optional, Union

from ..errors import ParseError

TECHNIQUES = ("F1", "F2", "F3", "C1", "C2", "C3", "W1", "W2")
APPLIES_TO = {
    "F1": ("fc",), "F2": ("fc",), "F3": ("fc",),
    "C1": ("conv",), "C2": ("conv",), "C3": ("conv",),
    "W1": ("fc", "conv"), "W2": ("conv",),
}

_TOKEN = re.compile(r"^(P|\d+):([A-Za-z0-9]+)$")


@dataclass(frozen=True)
class Strategy:
    partition: int
    compressions: tuple = ()

    def __post_init__(self):
        items = self.compressions.items() if isinstance(self.compressions, Mapping) else self.compressions
        pairs = tuple(sorted((int(i), str(t)) for i, t in items))
        idx = [i for i, _ in pairs]
        if len(set(idx)) != len(idx):
            raise ParseError(f"duplicate layer index in {pairs}")
        for i, t in pairs:
            if t not in TECHNIQUES:
                raise ParseError(f"unknown technique id {t!r}")
            if i < 0:
                raise ParseError(f"negative layer index {i}")
            if i >= self.partition:
                raise ParseError(f"compression {i}:{t} is not before partition {self.partition}")
        object.__setattr__(self, "compressions", pairs)

    @property
    def mapping(self) -> dict:
        return dict(self.compressions)

    def __str__(self) -> str:
        return encode(self)


def encode(s: Strategy) -> str:
    return " ".join([f"P:{s.partition}"] + [f"{i}:{t}" for i, t in s.compressions])


def decode(text: str, graph=None) -> Strategy:
    """Parse a strategy string; with ``graph`` also check indices and layer kinds."""
    partition: Optional[int] = None
    comps = {}
    for tok in text.split():
        m = _TOKEN.match(tok)
        if not m:
            raise ParseError(f"bad strategy token {tok!r}")
        key, val = m.groups()
        if key == "P":
            if partition is not None or not val.isdigit():
                raise ParseError(f"bad or repeated partition token {tok!r}")
            partition = int(val)
        else:
            if val not in TECHNIQUES:
                raise ParseError(f"unknown technique id {val!r} in {tok!r}")
            if int(key) in comps:
                raise ParseError(f"layer {key} assigned twice")
            comps[int(key)] = val
    if partition is None:
        raise ParseError(f"strategy {text!r} lacks a P:<partition> token")
    s = Strategy(partition, comps)
    if graph is not None:
        check_against(s, graph)
    return s


def check_against(s: Strategy, graph) -> None:
    if s.partition > len(graph.layers):
        raise ParseError(f"partition {s.partition} beyond {len(graph.layers)} layers")
    for i, t in s.compressions:
        if i >= len(graph.layers):
            raise ParseError(f"layer index {i} out of range")
        kind = graph.layers[i].kind
        if kind not in APPLIES_TO[t]:
            raise ParseError(f"{t} cannot target layer {i} of kind {kind}")


def strategy_codec(value: Union[Strategy, str], graph=None) -> Union[str, Strategy]:
    if isinstance(value, Strategy):
        if graph is not None:
            check_against(value, graph)
        return encode(value)
    return decode(value, graph)
