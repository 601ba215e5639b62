"""Ranking metrics, the evaluation loop, and early-stopped training."""

import math

import numpy as np
import pytest

from wearec.data import Instance, pad_sequence
from wearec.errors import InvalidInputError, NumericalError
from wearec.evaluation import (
    MetricReport,
    evaluate,
    hr_ndcg,
    rank_of_target,
    ranks_of_targets,
    train_loop,
)
from wearec.model import WEARec
from wearec.tape import Tape

from conftest import corpus_splits, cyclic_corpus_lines, tiny_config


class StubModel:
    """Fixed logits per user, independent of the model machinery."""

    def __init__(self, logits_by_user: np.ndarray):
        self.logits = logits_by_user
        self._cursor = 0

    def predict_logits(self, items):
        batch = items.shape[0]
        out = self.logits[self._cursor : self._cursor + batch]
        self._cursor += batch
        return out


def make_instances(targets, max_len=4, inputs=None):
    out = []
    for user, t in enumerate(targets):
        seq = inputs[user] if inputs is not None else [1]
        out.append(Instance(pad_sequence(seq, max_len), int(t), user, "test"))
    return out


class TestRankOfTarget:
    def test_unique_max_is_rank_one(self):
        assert rank_of_target(np.array([-1e9, 0.1, 0.9, 0.5]), 2) == 1

    def test_all_equal_is_pessimistic(self):
        logits = np.zeros(101)
        logits[0] = -1e9
        assert rank_of_target(logits, 17) == 100

    def test_tie_counting_rule(self):
        # Two strictly greater plus one tie puts the target at rank 4.
        assert rank_of_target(np.array([5.0, 3.0, 9.0, 3.0]), 1) == 4

    def test_padding_target_rejected(self):
        with pytest.raises(InvalidInputError):
            rank_of_target(np.zeros(5), 0)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((32, 50))
        logits[:, 0] = -1e9
        targets = rng.integers(1, 50, size=32)
        batch = ranks_of_targets(logits, targets)
        for row in range(32):
            assert batch[row] == rank_of_target(logits[row], int(targets[row]))


class TestHrNdcg:
    def test_rank_one_full_gain(self):
        hr, ndcg = hr_ndcg(np.array([1]), 10)
        assert hr == 1.0 and ndcg == 1.0

    def test_rank_five_discount(self):
        _hr, ndcg = hr_ndcg(np.array([5]), 10)
        assert abs(ndcg - 1.0 / math.log2(6.0)) < 1e-12
        assert abs(ndcg - 0.38685) < 1e-4

    def test_rank_past_cutoff_scores_zero(self):
        hr, ndcg = hr_ndcg(np.array([11]), 10)
        assert hr == 0.0 and ndcg == 0.0

    def test_ndcg_never_exceeds_hr(self):
        rng = np.random.default_rng(1)
        ranks = rng.integers(1, 200, size=500)
        for k in (1, 10, 20):
            hr, ndcg = hr_ndcg(ranks, k)
            assert 0.0 <= ndcg <= hr <= 1.0


class TestEvaluate:
    def test_memorized_stub_is_perfect(self):
        vocab = 30
        targets = np.arange(1, 11)
        logits = np.full((10, vocab), -1.0)
        logits[:, 0] = -1e9
        logits[np.arange(10), targets] = 5.0
        report = evaluate(StubModel(logits), make_instances(targets), ks=(10, 20))
        assert report.hr[10] == 1.0 and report.ndcg[10] == 1.0
        assert report.users == 10

    def test_user_count_matches_instances(self):
        logits = np.random.default_rng(2).standard_normal((7, 20))
        logits[:, 0] = -1e9
        report = evaluate(StubModel(logits), make_instances(np.arange(1, 8)), ks=(10,))
        assert report.users == 7

    def test_order_invariance(self):
        rng = np.random.default_rng(3)
        vocab = 40
        logits = rng.standard_normal((24, vocab))
        logits[:, 0] = -1e9
        targets = rng.integers(1, vocab, size=24)
        instances = make_instances(targets)
        base = evaluate(StubModel(logits), instances, ks=(10, 20)).to_dict()
        perm = rng.permutation(24)
        shuffled = evaluate(
            StubModel(logits[perm]), [instances[i] for i in perm], ks=(10, 20)
        ).to_dict()
        assert base == shuffled

    def test_history_mask_removes_seen_items(self):
        vocab = 10
        logits = np.zeros((1, vocab))
        logits[:, 0] = -1e9
        logits[0, 3] = 3.0  # seen item would outrank the target
        logits[0, 5] = 1.0
        instances = make_instances([5], inputs=[[3, 4]])
        plain = evaluate(StubModel(logits.copy()), instances, ks=(1,))
        masked = evaluate(StubModel(logits.copy()), instances, ks=(1,), mask_history=True)
        assert plain.hr[1] == 0.0
        assert masked.hr[1] == 1.0

    def test_report_serialization_keys(self):
        report = MetricReport(hr={10: 0.5, 20: 0.75}, ndcg={10: 0.3, 20: 0.4}, users=4)
        assert report.to_dict() == {
            "HR@10": 0.5,
            "HR@20": 0.75,
            "NDCG@10": 0.3,
            "NDCG@20": 0.4,
            "users": 4,
        }


class TestTrainLoop:
    def _setup(self, tmp_path, **model_overrides):
        _ds, train, valid, test = corpus_splits(
            tmp_path, cyclic_corpus_lines(num_users=12, vocab=6, length=8), max_len=8
        )
        model = WEARec(
            tiny_config(vocab_size=7, max_len=8, embed_dim=8, dtype="float32",
                        **model_overrides),
            seed=0,
        )
        return model, train, valid, test

    def test_loss_decreases_and_metrics_recorded(self, tmp_path):
        model, train, valid, test = self._setup(tmp_path)
        result = train_loop(
            model, train, valid, test,
            lr=0.02, batch_size=16, max_epochs=12, patience=12, seed=1,
        )
        losses = [e["train_loss"] for e in result.history]
        assert losses[-1] < losses[0]
        assert result.test_report is not None
        assert set(result.history[0]) >= {"epoch", "train_loss", "NDCG@20"}

    def test_patience_zero_stops_on_first_stall(self, tmp_path):
        model, train, valid, _ = self._setup(tmp_path)
        result = train_loop(
            model, train, valid, None,
            lr=1e-9, batch_size=16, max_epochs=50, patience=0, seed=1,
        )
        # Epoch 1 sets the best; the first non-improving epoch stops the run.
        assert result.epochs_run <= 3

    def test_identical_seeds_identical_history(self, tmp_path):
        runs = []
        for _ in range(2):
            model, train, valid, _ = self._setup(tmp_path)
            result = train_loop(
                model, train, valid, None,
                lr=0.02, batch_size=16, max_epochs=5, patience=5, seed=7,
            )
            runs.append(result.history)
        assert runs[0] == runs[1]

    def test_best_checkpoint_restored(self, tmp_path):
        model, train, valid, test = self._setup(tmp_path)
        ckpt = tmp_path / "best.bin"
        result = train_loop(
            model, train, valid, test,
            lr=0.02, batch_size=16, max_epochs=8, patience=8, seed=3,
            checkpoint_path=ckpt,
        )
        restored = WEARec.load(ckpt)
        again = evaluate(restored, test, ks=(10, 20))
        assert again.to_dict() == result.test_report.to_dict()

    def test_nonfinite_loss_aborts(self, tmp_path):
        model, train, valid, _ = self._setup(tmp_path)
        model.params["item_embedding"].value[...] = np.inf
        with np.errstate(invalid="ignore"):
            with pytest.raises(NumericalError, match="epoch 1"):
                train_loop(model, train, valid, None, lr=0.01, batch_size=16,
                           max_epochs=2, patience=1, seed=0)
