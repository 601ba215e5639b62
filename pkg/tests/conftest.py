"""Shared fixtures: tiny model configs and synthetic corpora."""

from __future__ import annotations

import numpy as np
import pytest

from wearec.data import five_core_filter, load_sequences, make_splits
from wearec.model import ModelConfig, WEARec


def tiny_config(**overrides) -> ModelConfig:
    base = dict(
        vocab_size=20,
        max_len=8,
        embed_dim=8,
        blocks=2,
        heads=2,
        alpha=0.3,
        dropout=0.0,
        dtype="float64",
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny_model() -> WEARec:
    return WEARec(tiny_config(), seed=1)


def write_corpus(path, lines: list[str]) -> str:
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


def cyclic_corpus_lines(num_users=50, vocab=10, length=12) -> list[str]:
    """User u walks the global cycle i -> i+1 (mod vocab), offset by u."""
    lines = []
    for u in range(num_users):
        items = [f"i{(u + t) % vocab}" for t in range(length)]
        lines.append(" ".join([f"u{u}", *items]))
    return lines


def phase_corpus_lines(num_pairs=40, users_per_pair=3, length=16) -> list[str]:
    """Sequences repeating [a, a, b, b] with a per-user phase offset.

    Predicting the next item requires two steps of history (the last item
    alone is ambiguous), so the useful signal sits at period 4 along the
    time axis rather than in the sequence mean.
    """
    lines = []
    user = 0
    for pair in range(num_pairs):
        a, b = f"a{pair}", f"b{pair}"
        pattern = [a, a, b, b]
        for phase in range(users_per_pair):
            items = [pattern[(t + phase) % 4] for t in range(length)]
            lines.append(" ".join([f"u{user}", *items]))
            user += 1
    return lines


def corpus_splits(tmp_path, lines, max_len, name="corpus.txt"):
    dataset = load_sequences(write_corpus(tmp_path / name, lines))
    train, valid, test = make_splits(dataset, max_len)
    return dataset, train, valid, test


def filtered_corpus_splits(tmp_path, lines, max_len, name="corpus.txt"):
    dataset = five_core_filter(load_sequences(write_corpus(tmp_path / name, lines)))
    train, valid, test = make_splits(dataset, max_len)
    return dataset, train, valid, test
