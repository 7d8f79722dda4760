from __future__ import annotations

import json

import numpy as np
import pytest

from hiergp.adaptive import AdaptiveConfig
from hiergp.basis import BasisFamily, TruncationVector
from hiergp.chainio import read_chain, write_chain
from hiergp.errors import ConfigError
from hiergp.gibbs import GibbsConfig, run_chain
from hiergp.horseshoe import HorseshoeConfig, hs_run_chain
from hiergp.model import Dataset


def _data():
    rng = np.random.default_rng(0)
    x = rng.random((25, 1))
    return Dataset(x, np.sin(2 * np.pi * x[:, 0]) + 0.1 * rng.standard_normal(25))


def _same(a, b):
    assert len(a.states) == len(b.states)
    assert (a.sampler, a.burn_in, a.thinning, a.center) == (b.sampler, b.burn_in, b.thinning, b.center)
    for s, t in zip(a.states, b.states):
        assert s.to_record() == t.to_record()
    assert a.events == b.events


def test_round_trip_spike_and_slab_with_events(tmp_path):
    cfg = GibbsConfig(iterations=300, burn_in=100, K=TruncationVector((4,)), seed=2,
                      adaptive=AdaptiveConfig(b_bar=50))
    chain = run_chain(_data(), BasisFamily(), cfg)
    write_chain(tmp_path / "c.jsonl", chain)
    back = read_chain(tmp_path / "c.jsonl")
    _same(chain, back)
    assert np.array_equal(back.theta_sq(), chain.theta_sq())


def test_round_trip_global_local(tmp_path):
    chain = hs_run_chain(_data(), BasisFamily(), HorseshoeConfig(iterations=100, K=TruncationVector((3,)), seed=1))
    write_chain(tmp_path / "h.jsonl", chain)
    _same(chain, read_chain(tmp_path / "h.jsonl"))


def test_bad_files_rejected(tmp_path):
    chain = run_chain(_data(), BasisFamily(), GibbsConfig(iterations=20, burn_in=0, K=TruncationVector((2,))))
    p = tmp_path / "c.jsonl"
    write_chain(p, chain)
    lines = p.read_text().splitlines()
    header = json.loads(lines[0])
    header["schema_version"] = 99
    p.write_text("\n".join([json.dumps(header)] + lines[1:]))
    with pytest.raises(ConfigError):
        read_chain(p)
    (tmp_path / "e.jsonl").write_text("")
    with pytest.raises(ConfigError):
        read_chain(tmp_path / "e.jsonl")
