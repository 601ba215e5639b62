"""Frequency-band attribution, filter/enhancer exports, scaling benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import Instance, batch_iter
from .errors import InvalidInputError
from .evaluation import ranks_of_targets
from .model import ForwardTrace, ModelConfig, WEARec
from .tape import Node, Tape


@dataclass
class BandSpec:
    """Inclusive frequency-bin range [lo, hi] within the one-sided spectrum."""

    index: int
    lo: int
    hi: int


def equal_bands(m_bins: int, count: int) -> list[BandSpec]:
    """Split bins 0..m_bins-1 into ``count`` contiguous near-equal bands."""
    if not 1 <= count <= m_bins:
        raise InvalidInputError(f"band count must be in [1, {m_bins}], got {count}")
    edges = np.linspace(0, m_bins, count + 1).astype(int)
    return [BandSpec(i, int(edges[i]), int(edges[i + 1] - 1)) for i in range(count)]


def check_partition(bands: list[BandSpec], m_bins: int) -> None:
    """Bands must cover 0..m_bins-1 exactly once."""
    ordered = sorted(bands, key=lambda b: b.lo)
    cursor = 0
    for band in ordered:
        if band.lo != cursor or band.hi < band.lo:
            raise InvalidInputError(
                f"bands do not partition 0..{m_bins - 1}: gap or overlap at bin {cursor}"
            )
        cursor = band.hi + 1
    if cursor != m_bins:
        raise InvalidInputError(
            f"bands do not partition 0..{m_bins - 1}: end at {cursor - 1}"
        )


@dataclass
class FreqDriverReport:
    bands: list[BandSpec]
    hit_counts: list[int]  # users ranked <= k under each band alone
    unique_counts: list[int]  # users hit under exactly one band
    multi: int  # users hit under two or more bands
    none: int  # users hit under no band
    total: int
    k: int


def frequency_driver_analysis(
    model: WEARec,
    instances: list[Instance],
    bands: list[BandSpec],
    k: int = 10,
    batch_size: int = 256,
) -> FreqDriverReport:
    """Attribute users to the frequency bands that alone rank their target.

    For each band, every DFF filter is replaced with a hard band-pass
    (1 on the band's bins, 0 elsewhere, zero bias) and the wavelet branch
    is forced to identity; a user is driven by the band when the test
    target ranks within the top ``k``.
    """
    cfg = model.config
    check_partition(bands, cfg.m_bins)
    hits = np.zeros((len(instances), len(bands)), dtype=bool)
    for b_idx, band in enumerate(bands):
        response = np.zeros(cfg.m_bins)
        response[band.lo : band.hi + 1] = 1.0
        row = 0
        for inputs, targets, _users in batch_iter(instances, batch_size):
            logits = model.predict_logits(
                inputs, filter_override=response, wfe_identity=True
            )
            ranks = ranks_of_targets(logits, targets)
            hits[row : row + len(ranks), b_idx] = ranks <= k
            row += len(ranks)
    per_user = hits.sum(axis=1)
    return FreqDriverReport(
        bands=bands,
        hit_counts=[int(c) for c in hits.sum(axis=0)],
        unique_counts=[
            int(np.sum(hits[:, i] & (per_user == 1))) for i in range(len(bands))
        ],
        multi=int(np.sum(per_user >= 2)),
        none=int(np.sum(per_user == 0)),
        total=len(instances),
        k=k,
    )


def export_spectral_response(
    model: WEARec, instances: list[Instance], batch_size: int = 256, max_users: int = 512
) -> list[dict]:
    """Rows of base and mean modulated filter magnitudes per layer/head/bin.

    The modulated magnitude is averaged over a sample of user sequences;
    bins are annotated with the normalized frequency ``bin / (m_bins - 1)``.
    """
    cfg = model.config
    sums = [np.zeros((cfg.heads, cfg.m_bins)) for _ in range(cfg.blocks)]
    seen = 0
    for inputs, _targets, _users in batch_iter(instances[:max_users], batch_size):
        trace = ForwardTrace()
        model.forward(Tape(grad_enabled=False), inputs, trace=trace)
        for layer in range(cfg.blocks):
            sums[layer] += np.abs(trace.filter_scales[layer]).sum(axis=0)
        seen += inputs.shape[0]
    if seen == 0:
        raise InvalidInputError("spectral response export needs at least one sequence")
    rows = []
    denom = max(cfg.m_bins - 1, 1)
    for layer in range(cfg.blocks):
        base = model.params[f"block{layer}_filter_weight"].value
        mean_mod = sums[layer] / seen
        for head in range(cfg.heads):
            for b in range(cfg.m_bins):
                rows.append(
                    {
                        "layer": layer,
                        "head": head,
                        "bin": b,
                        "frequency": b / denom,
                        "base_magnitude": float(abs(base[head, b])),
                        "modulated_magnitude": float(mean_mod[head, b]),
                    }
                )
    return rows


def export_enhancer(model: WEARec) -> list[dict]:
    """Dump the learned wavelet detail enhancer verbatim."""
    rows = []
    for layer in range(model.config.blocks):
        t = model.params[f"block{layer}_enhancer"].value
        for idx in range(t.shape[0]):
            for ch in range(t.shape[1]):
                rows.append(
                    {
                        "layer": layer,
                        "detail_index": idx,
                        "channel": ch,
                        "value": float(t[idx, ch]),
                    }
                )
    return rows


@dataclass
class BenchResult:
    lengths: list[int]
    mixing_ms: list[float]
    control_ms: list[float]
    mixing_slope: float
    control_slope: float
    rows: list[dict] = field(default_factory=list)


def _median_ms(fn, reps: int, warmup: int = 3) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1000.0)
    return float(np.median(samples))


def _loglog_slope(lengths, times) -> float:
    return float(np.polyfit(np.log(np.asarray(lengths, dtype=float)), np.log(times), 1)[0])


def bench_scaling(
    lengths: tuple[int, ...] = (64, 128, 256, 512, 1024),
    embed_dim: int = 64,
    heads: int = 2,
    batch: int = 32,
    reps: int = 25,
    seed: int = 0,
) -> BenchResult:
    """Median forward time of one mixing block vs sequence length.

    Also times a dense (n, n) @ (n, d) product as a quadratic control so
    the harness itself can be sanity-checked (its slope should sit near 2).
    Reports least-squares slopes of log(time) against log(n).
    """
    if len(lengths) < 4:
        raise InvalidInputError("need at least 4 lengths for a stable slope fit")
    rng = np.random.default_rng(seed)
    mixing_ms, control_ms, rows = [], [], []
    for n in lengths:
        cfg = ModelConfig(
            vocab_size=16,
            max_len=int(n),
            embed_dim=embed_dim,
            blocks=1,
            heads=heads,
            alpha=0.5,
            dropout=0.0,
        )
        model = WEARec(cfg, seed=seed)
        h_value = rng.standard_normal((batch, n, embed_dim)).astype(np.float32)

        def run_mixing():
            model.mix_block(Tape(grad_enabled=False), Node(h_value), layer=0)

        square = rng.standard_normal((n, n)).astype(np.float32)
        tall = rng.standard_normal((n, embed_dim)).astype(np.float32)

        def run_control():
            square @ tall

        m_ms = _median_ms(run_mixing, reps)
        c_ms = _median_ms(run_control, reps)
        mixing_ms.append(m_ms)
        control_ms.append(c_ms)
        rows.append({"n": int(n), "kind": "mixing", "median_ms": m_ms})
        rows.append({"n": int(n), "kind": "control", "median_ms": c_ms})
    return BenchResult(
        lengths=[int(n) for n in lengths],
        mixing_ms=mixing_ms,
        control_ms=control_ms,
        mixing_slope=_loglog_slope(lengths, mixing_ms),
        control_slope=_loglog_slope(lengths, control_ms),
        rows=rows,
    )
