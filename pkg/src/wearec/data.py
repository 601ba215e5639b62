"""Dataset ingestion, 5-core filtering, leave-one-out splits, batching.

Input format: UTF-8 text, one user per line, whitespace separated:

    user_id item_id item_id ...

with items in chronological order.  Item ids are remapped to dense
internal ids ``1..vocab_size-1`` in first-seen order; 0 is reserved for
padding.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .seeding import sub_rng


@dataclass
class Dataset:
    """Per-user chronological item sequences with raw<->internal id maps."""

    sequences: list[list[int]]  # internal ids, 1-based
    user_ids: list[str]  # raw user key per sequence
    item_ids: list[str]  # internal id -> raw item key; index 0 is padding

    @property
    def num_users(self) -> int:
        return len(self.sequences)

    @property
    def num_items(self) -> int:
        return len(self.item_ids) - 1

    @property
    def vocab_size(self) -> int:
        return len(self.item_ids)

    @property
    def interactions(self) -> int:
        return sum(len(s) for s in self.sequences)

    @property
    def avg_length(self) -> float:
        return self.interactions / self.num_users if self.num_users else 0.0

    @property
    def sparsity(self) -> float:
        cells = self.num_users * self.num_items
        return 1.0 - self.interactions / cells if cells else 0.0

    def stats(self) -> dict:
        return {
            "users": self.num_users,
            "items": self.num_items,
            "interactions": self.interactions,
            "avg_length": round(self.avg_length, 4),
            "sparsity": round(self.sparsity, 6),
            "vocab_size": self.vocab_size,
        }

    def raw_sequence(self, index: int) -> list[str]:
        return [self.item_ids[i] for i in self.sequences[index]]


@dataclass
class Instance:
    """One padded training/eval example."""

    input: np.ndarray  # (max_len,) int64, left-padded with 0
    target: int  # internal item id, never 0
    user: int  # index into Dataset.sequences
    split: str  # train | valid | test


def _build(pairs: list[tuple[str, list[str]]]) -> Dataset:
    """Remap raw (user, items) pairs to dense internal ids, first-seen order."""
    item_map: dict[str, int] = {}
    item_ids = ["<pad>"]
    sequences, user_ids = [], []
    for user, items in pairs:
        seq = []
        for raw in items:
            if raw not in item_map:
                item_map[raw] = len(item_ids)
                item_ids.append(raw)
            seq.append(item_map[raw])
        sequences.append(seq)
        user_ids.append(user)
    return Dataset(sequences, user_ids, item_ids)


def load_sequences(path: str | Path) -> Dataset:
    """Parse a sequence file; blank lines are skipped."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    pairs: list[tuple[str, list[str]]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if len(tokens) < 2:
                raise DataError(
                    f"{path}:{lineno}: expected 'user item ...', got {line!r}"
                )
            pairs.append((tokens[0], tokens[1:]))
    if not pairs:
        raise DataError(f"dataset file is empty: {path}")
    return _build(pairs)


def save_sequences(dataset: Dataset, path: str | Path, header: str | None = None) -> None:
    lines = [] if header is None else [header]
    for idx, user in enumerate(dataset.user_ids):
        lines.append(" ".join([user, *dataset.raw_sequence(idx)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def five_core_filter(dataset: Dataset, min_core: int = 5) -> Dataset:
    """Drop users with < ``min_core`` events and items with < ``min_core``
    occurrences, repeating until a fixpoint; ids are remapped densely."""
    pairs = [
        (dataset.user_ids[i], dataset.raw_sequence(i)) for i in range(dataset.num_users)
    ]
    while True:
        counts = Counter(item for _, items in pairs for item in items)
        filtered = []
        changed = False
        for user, items in pairs:
            kept = [it for it in items if counts[it] >= min_core]
            if len(kept) < min_core:
                changed = True  # user dropped
                continue
            if len(kept) != len(items):
                changed = True  # rare-item events dropped
            filtered.append((user, kept))
        pairs = filtered
        if not pairs:
            raise DataError("5-core filtering removed every user")
        if not changed:
            return _build(pairs)


def make_splits(
    dataset: Dataset, max_len: int, last_target_only: bool = False
) -> tuple[list[Instance], list[Instance], list[Instance]]:
    """Leave-one-out splits with prefix-augmented training instances.

    For a user sequence ``v_1..v_n``: test predicts ``v_n`` from the rest,
    validation predicts ``v_{n-1}``, and training uses every prefix
    ``v_1..v_t -> v_{t+1}`` for ``t <= n-3`` (or only the longest one when
    ``last_target_only``).  Inputs keep the most recent ``max_len`` items
    and are left-padded with 0.
    """
    train, valid, test = [], [], []
    for user, seq in enumerate(dataset.sequences):
        n = len(seq)
        if n < 3:
            raise DataError(
                f"user {dataset.user_ids[user]!r} has only {n} interactions; "
                "run 5-core filtering first"
            )
        test.append(Instance(pad_sequence(seq[: n - 1], max_len), seq[n - 1], user, "test"))
        valid.append(
            Instance(pad_sequence(seq[: n - 2], max_len), seq[n - 2], user, "valid")
        )
        positions = range(n - 3, n - 2) if last_target_only else range(1, n - 2)
        for t in positions:
            if t < 1:
                continue
            train.append(Instance(pad_sequence(seq[:t], max_len), seq[t], user, "train"))
    return train, valid, test


def pad_sequence(items: list[int], max_len: int) -> np.ndarray:
    """Keep the last ``max_len`` items, left-pad with zeros."""
    kept = items[-max_len:]
    out = np.zeros(max_len, dtype=np.int64)
    if kept:
        out[-len(kept) :] = kept
    return out


def batch_iter(
    instances: list[Instance],
    batch_size: int,
    seed: int = 0,
    epoch: int = 0,
    shuffle: bool = False,
):
    """Yield (inputs, targets, users) batches; final partial batch kept.

    The order is a pure function of (seed, epoch) when shuffling.
    """
    order = np.arange(len(instances))
    if shuffle:
        sub_rng(seed, "shuffle", epoch).shuffle(order)
    for start in range(0, len(instances), batch_size):
        chunk = order[start : start + batch_size]
        inputs = np.stack([instances[i].input for i in chunk])
        targets = np.array([instances[i].target for i in chunk], dtype=np.int64)
        users = np.array([instances[i].user for i in chunk], dtype=np.int64)
        yield inputs, targets, users


def write_split_file(instances: list[Instance], dataset: Dataset, path: str | Path) -> None:
    """Audit file: '#split:' header, then 'user input_items... target' lines."""
    if not instances:
        Path(path).write_text("", encoding="utf-8")
        return
    lines = [f"#split: {instances[0].split}"]
    for inst in instances:
        items = [int(i) for i in inst.input if i != 0] + [inst.target]
        raw = [dataset.item_ids[i] for i in items]
        lines.append(" ".join([dataset.user_ids[inst.user], *raw]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
