"""Shared fixtures: a small separable dataset and model-ready examples built from it."""

from __future__ import annotations

import socket

import numpy as np
import pytest

from stancefuse import rng
from stancefuse.cli import cmd_fixture
from stancefuse.config import AblationVariant, RunConfig
from stancefuse.context import ContextClient
from stancefuse.dataset import load_manifest
from stancefuse.fusion import init_model
from stancefuse.pipeline import extract_context, prepare_examples, vocab_corpus
from stancefuse.text import build_vocab

# Lines recorded by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def separable_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("separable")
    cmd_fixture(out, kind="separable", seed=0)
    return out


@pytest.fixture(scope="session")
def tiny_dir(tmp_path_factory):
    """Four examples per class in train, two in dev and test."""
    out = tmp_path_factory.mktemp("tiny")
    cmd_fixture(out, kind="separable", seed=3, train_per_class=4, eval_per_class=2)
    return out


def tiny_config(root, **overrides) -> RunConfig:
    base = dict(manifest=str(root / "manifest.jsonl"), epochs=1, batch_size=8)
    base.update(overrides)
    return RunConfig(**base)


def prepared(root, variant=AblationVariant.FULL, split="train", cfg: RunConfig | None = None, limit=None):
    """(examples, vocab, model_cfg) for one split of a fixture directory."""
    cfg = cfg or tiny_config(root)
    records = [r for r in load_manifest(root / "manifest.jsonl") if r.split == split][:limit]
    ctx = extract_context(records, ContextClient.from_config(cfg), variant, root)
    vocab = build_vocab(vocab_corpus(ctx))
    mc = cfg.model_config()
    return prepare_examples(ctx, vocab, mc, variant, root), vocab, mc


def generic_point(store, std=0.2, seed=1):
    """Move every parameter to a random non-initial point (gammas around 1)."""
    for name, p in store.items():
        g = rng.stream(seed, "generic", name)
        base = 1.0 if name.endswith("gamma") else 0.0
        p.data[...] = base + std * g.standard_normal(p.data.shape)
    return store


@pytest.fixture
def toy_model(tiny_dir):
    examples, vocab, mc = prepared(tiny_dir, limit=4)
    store = init_model(mc, len(vocab), AblationVariant.FULL, seed=0)
    return examples, store, mc


@pytest.fixture
def no_network(monkeypatch):
    """Fail loudly if anything opens a socket."""

    def refuse(*args, **kwargs):
        raise AssertionError("network access attempted")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)
    yield


@pytest.fixture
def gen():
    return np.random.default_rng(1234)
