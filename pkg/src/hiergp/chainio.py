"""JSON-lines persistence for posterior chains.

Line 1 is a header (schema version, sampler, basis family, metadata); each
following line is either ``{"type": "state", ...}`` or ``{"type": "adapt", ...}``.
Floats are written with ``repr`` precision, so a round trip is exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .basis import BasisFamily
from .errors import ConfigError
from .model import ChainState, HorseshoeState, PosteriorChain

SCHEMA_VERSION = 1


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_chain(path, chain: PosteriorChain) -> None:
    header = {
        "type": "header",
        "schema_version": SCHEMA_VERSION,
        "sampler": chain.sampler,
        "family": {"kind": chain.family.kind, "normalization": chain.family.normalization},
        "burn_in": chain.burn_in,
        "thinning": chain.thinning,
        "center": chain.center,
        "metadata": _jsonable(chain.metadata),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for ev in chain.events:
            fh.write(json.dumps({"type": "adapt", **_jsonable(ev)}) + "\n")
        for s in chain.states:
            fh.write(json.dumps({"type": "state", **s.to_record()}) + "\n")


def read_chain(path) -> PosteriorChain:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ConfigError(f"{path}: empty chain file")
    header = json.loads(lines[0])
    if header.get("type") != "header":
        raise ConfigError(f"{path}: first line is not a chain header")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported schema version {header.get('schema_version')}")
    state_cls = ChainState if header["sampler"] == "hiergp" else HorseshoeState
    states, events = [], []
    for line in lines[1:]:
        rec = json.loads(line)
        kind = rec.pop("type")
        if kind == "state":
            states.append(state_cls.from_record(rec))
        elif kind == "adapt":
            events.append(rec)
        else:
            raise ConfigError(f"{path}: unknown record type {kind!r}")
    family = BasisFamily(**header["family"])
    return PosteriorChain(states, header["burn_in"], header["thinning"], family, header["sampler"],
                          header["center"], header["metadata"], events)
