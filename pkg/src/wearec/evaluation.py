"""Full-ranking metrics, the evaluation loop, and early-stopped training."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Instance, batch_iter
from .errors import InvalidInputError, NumericalError
from .optim import AdamState, adam_step
from .tape import Tape


@dataclass
class RankResult:
    """1-based rank of the ground-truth item among all non-padding items."""

    user: int
    rank: int


@dataclass
class MetricReport:
    hr: dict[int, float]
    ndcg: dict[int, float]
    users: int

    def to_dict(self) -> dict:
        out = {}
        for k in sorted(self.hr):
            out[f"HR@{k}"] = self.hr[k]
        for k in sorted(self.ndcg):
            out[f"NDCG@{k}"] = self.ndcg[k]
        out["users"] = self.users
        return out


def rank_of_target(logits: np.ndarray, target: int) -> int:
    """Pessimistic full ranking: ties count as ranked above the target.

    ``rank = 1 + #{j != target : logits[j] >= logits[target]}``, which makes
    reported metrics a deterministic lower bound.  The caller must have
    masked the padding logit.
    """
    logits = np.asarray(logits)
    if target <= 0 or target >= logits.shape[-1]:
        raise InvalidInputError(f"target {target} is padding or out of range")
    return int(np.sum(logits >= logits[target]))


def ranks_of_targets(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Vectorized :func:`rank_of_target` over a (B, V) batch."""
    rows = np.arange(logits.shape[0])
    pivot = logits[rows, targets]
    return (logits >= pivot[:, None]).sum(axis=1)


def hr_ndcg(ranks: np.ndarray, k: int) -> tuple[float, float]:
    """HR@k and NDCG@k of 1-based ranks; a hit at rank r gains 1/log2(r+1)."""
    ranks = np.asarray(ranks)
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    hits = ranks <= k
    hr = float(hits.mean()) if ranks.size else 0.0
    gains = np.where(hits, 1.0 / np.log2(ranks + 1.0), 0.0)
    return hr, float(gains.mean()) if ranks.size else 0.0


def evaluate(
    model,
    instances: list[Instance],
    ks: tuple[int, ...] = (10, 20),
    batch_size: int = 256,
    mask_history: bool = False,
) -> MetricReport:
    """Deterministic batched full-ranking evaluation (dropout off).

    ``model`` only needs a ``predict_logits(items) -> (B, V)`` method.
    With ``mask_history`` every input item except the target is removed
    from the candidate set before ranking.
    """
    all_ranks = []
    for inputs, targets, _users in batch_iter(instances, batch_size):
        logits = model.predict_logits(inputs)
        if logits.shape[0] != inputs.shape[0]:
            raise InvalidInputError("model returned a mismatched logits batch")
        if mask_history:
            logits = logits.copy()
            floor = logits.min() - 1.0
            for row in range(inputs.shape[0]):
                seen = inputs[row][inputs[row] != 0]
                seen = seen[seen != targets[row]]
                logits[row, seen] = floor
        all_ranks.append(ranks_of_targets(logits, targets))
    ranks = np.concatenate(all_ranks) if all_ranks else np.array([], dtype=np.int64)
    hr, ndcg = {}, {}
    for k in ks:
        hr[k], ndcg[k] = hr_ndcg(ranks, k)
    return MetricReport(hr, ndcg, int(ranks.size))


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_metric: float = -math.inf
    test_report: MetricReport | None = None
    epochs_run: int = 0


def train_loop(
    model,
    train_instances: list[Instance],
    valid_instances: list[Instance],
    test_instances: list[Instance] | None = None,
    *,
    lr: float = 0.001,
    batch_size: int = 256,
    max_epochs: int = 300,
    patience: int = 10,
    seed: int = 0,
    ks: tuple[int, ...] = (10, 20),
    stop_k: int = 20,
    mask_history: bool = False,
    checkpoint_path=None,
    log=None,
) -> TrainResult:
    """Adam training with early stopping on validation NDCG@``stop_k``.

    Stops after ``patience + 1`` consecutive non-improving epochs (so
    ``patience=0`` stops at the first non-improvement).  The best
    validation weights are restored into the model before the final test
    evaluation and, when ``checkpoint_path`` is given, saved there.
    """
    state = AdamState(lr=lr)
    result = TrainResult()
    best_state = None
    stall = 0
    for epoch in range(1, max_epochs + 1):
        total, count = 0.0, 0
        for step, (inputs, targets, _users) in enumerate(
            batch_iter(train_instances, batch_size, seed=seed, epoch=epoch, shuffle=True)
        ):
            tp = Tape()
            try:
                loss = model.loss(tp, inputs, targets, train=True)
            except InvalidInputError as exc:
                # Diverged weights surface as non-finite blocks inside the
                # forward pass before the loss value exists.
                raise NumericalError(
                    f"training diverged at epoch {epoch}, batch {step}: {exc}"
                ) from exc
            value = float(loss.value)
            if not math.isfinite(value):
                raise NumericalError(
                    f"non-finite training loss {value} at epoch {epoch}, batch {step}"
                )
            model.zero_grad()
            tp.backward(loss)
            adam_step(model.parameters(), state)
            total += value * inputs.shape[0]
            count += inputs.shape[0]
        train_loss = total / max(count, 1)

        report = evaluate(
            model, valid_instances, ks=ks, batch_size=batch_size, mask_history=mask_history
        )
        entry = {"epoch": epoch, "train_loss": train_loss, **report.to_dict()}
        result.history.append(entry)
        result.epochs_run = epoch
        if log:
            log(entry)

        metric = report.ndcg.get(stop_k)
        if metric is None:
            raise InvalidInputError(f"stop metric NDCG@{stop_k} not in ks={ks}")
        if metric > result.best_metric:
            result.best_metric = metric
            result.best_epoch = epoch
            best_state = model.state_dict()
            stall = 0
        else:
            stall += 1
            if stall > patience:
                break

    if best_state is not None:
        model.load_state_dict(best_state)
    if checkpoint_path is not None:
        model.save(checkpoint_path, extra={"best_epoch": result.best_epoch})
    if test_instances is not None:
        result.test_report = evaluate(
            model, test_instances, ks=ks, batch_size=batch_size, mask_history=mask_history
        )
    return result
