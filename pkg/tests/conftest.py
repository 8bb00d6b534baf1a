from __future__ import annotations

import pytest
from hypothesis import settings

from pamkit.evalharness import generate_benchmark_artifact
from pamkit.keys import KeyRegistry, keypair_from_seed

import helpers

settings.register_profile("suite", max_examples=60, deadline=None)
settings.load_profile("suite")

OPERATOR_SEED = b"\x11" * 32


@pytest.fixture(scope="session")
def op_key():
    return keypair_from_seed(OPERATOR_SEED)


@pytest.fixture(scope="session")
def registry(op_key):
    reg = KeyRegistry()
    reg.add(op_key.public_key, "operator")
    return reg


@pytest.fixture(scope="session")
def signed_sample(op_key):
    """The two-entry worked example, signed."""
    return helpers.sample_artifact(key=op_key)


@pytest.fixture(scope="session")
def bench_artifact(op_key):
    """The 127-entry benchmark fixture (42/35/20/25/5)."""
    artifact = generate_benchmark_artifact(op_key, seed=1234)
    counts = {name: len(entries) for name, entries in artifact.components.items()}
    assert counts == {"episodic": 42, "semantic": 35, "procedural": 20,
                      "working": 25, "identity": 5}
    return artifact
