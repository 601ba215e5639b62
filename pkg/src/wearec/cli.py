"""Command-line operator surface.

Subcommands wire the pipeline end to end: ``prepare`` (ingest + 5-core +
splits), ``train``, ``eval``, ``analyze-freq``, ``export-spectra``,
``export-enhancer``, ``gradcheck``, and ``bench``.  Every command is
deterministic given (config, seed); artifacts carry the resolved config
so runs can be audited and replayed.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from . import analysis, data, evaluation, gradcheck
from .checkpoint import load_checkpoint
from .config import RunConfig, load_config
from .errors import ConfigError, DataError, InvalidInputError, NumericalError
from .model import ModelConfig, WEARec
from .seeding import sub_rng


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems map to exit code 1
        raise ConfigError(message)


@contextmanager
def _output_lock(output_dir: Path):
    output_dir.mkdir(parents=True, exist_ok=True)
    lock = output_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(
            f"output directory is locked by another run: {lock}"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _meta_line(config: RunConfig, checkpoint: str = "-") -> str:
    return (
        f"# hash={config.content_hash()} | checkpoint={checkpoint} "
        f"| seed={config.seed} | config={config.to_inline()}"
    )


def _write_csv(path: Path, meta: str, header: list[str], rows: list[dict]) -> None:
    lines = [meta, ",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(row[col]) for col in header))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def _write_json(path: Path, payload: dict) -> str:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    path.write_text(text, encoding="utf-8")
    return text


def _model_config(config: RunConfig, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        max_len=config.max_len,
        embed_dim=config.embed_dim,
        blocks=config.blocks,
        heads=config.heads,
        alpha=config.alpha,
        dropout=config.dropout,
        context_excludes_padding=config.context_mask,
    )


def _load_dataset(config: RunConfig) -> data.Dataset:
    if not config.dataset:
        raise ConfigError("config key 'dataset' is required for this command")
    dataset = data.load_sequences(config.dataset)
    if config.vocab_size and dataset.vocab_size != config.vocab_size:
        raise ConfigError(
            f"config vocab_size={config.vocab_size} but dataset has {dataset.vocab_size}"
        )
    return dataset


def _splits(config: RunConfig, dataset: data.Dataset):
    return data.make_splits(dataset, config.max_len, config.last_target_only)


def _restore(checkpoint: str) -> tuple[WEARec, RunConfig]:
    model = WEARec.load(checkpoint)
    header, _tensors = load_checkpoint(checkpoint)
    try:
        run_config = RunConfig.from_dict(header["extra"]["run_config"]).validate()
    except (KeyError, ConfigError) as exc:
        raise DataError(f"checkpoint is missing a usable run config: {exc}") from exc
    return model, run_config


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------


def cmd_prepare(args) -> int:
    raw = data.load_sequences(args.input)
    filtered = data.five_core_filter(raw, args.min_core)
    out = Path(args.output)
    with _output_lock(out):
        data.save_sequences(filtered, out / "dataset.txt")
        train, valid, test = data.make_splits(filtered, max_len=2**30)
        data.write_split_file(train, filtered, out / "train.txt")
        data.write_split_file(valid, filtered, out / "valid.txt")
        data.write_split_file(test, filtered, out / "test.txt")
        _write_json(out / "stats.json", filtered.stats())
    print(json.dumps(filtered.stats(), sort_keys=True))
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config)
    dataset = _load_dataset(config)
    train, valid, test = _splits(config, dataset)
    out = Path(config.output_dir)
    with _output_lock(out):
        (out / "config.resolved.txt").write_text(config.to_text(), encoding="utf-8")
        model = WEARec(_model_config(config, dataset.vocab_size), seed=config.seed)
        checkpoint = out / "checkpoint.bin"
        result = evaluation.train_loop(
            model,
            train,
            valid,
            test,
            lr=config.lr,
            batch_size=config.batch_size,
            max_epochs=config.max_epochs,
            patience=config.patience,
            seed=config.seed,
            mask_history=config.history_mask,
            checkpoint_path=None,
            log=lambda entry: print(
                f"epoch {entry['epoch']:4d}  loss {entry['train_loss']:.4f}  "
                f"valid NDCG@20 {entry['NDCG@20']:.4f}"
            ),
        )
        model.save(
            checkpoint,
            extra={"best_epoch": result.best_epoch, "run_config": config.to_dict()},
        )
        meta = _meta_line(config, str(checkpoint))
        history_cols = list(result.history[0].keys()) if result.history else ["epoch"]
        _write_csv(out / "history.csv", meta, history_cols, result.history)
        payload = result.test_report.to_dict()
        payload["config"] = config.to_dict()
        payload["best_epoch"] = result.best_epoch
        text = _write_json(out / "metrics.json", payload)
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    model, config = _restore(args.checkpoint)
    dataset = _load_dataset(config)
    train, valid, test = _splits(config, dataset)
    instances = {"train": train, "valid": valid, "test": test}[args.split]
    report = evaluation.evaluate(
        model, instances, batch_size=config.batch_size, mask_history=config.history_mask
    )
    payload = report.to_dict()
    payload["config"] = config.to_dict()
    payload["split"] = args.split
    out = Path(args.output or config.output_dir)
    with _output_lock(out):
        text = _write_json(out / f"metrics.{args.split}.json", payload)
    sys.stdout.write(text)
    return 0


def cmd_analyze_freq(args) -> int:
    model, config = _restore(args.checkpoint)
    dataset = _load_dataset(config)
    _train, _valid, test = _splits(config, dataset)
    bands = analysis.equal_bands(model.config.m_bins, args.bands or config.bands)
    report = analysis.frequency_driver_analysis(
        model, test, bands, k=args.k or config.analysis_k, batch_size=config.batch_size
    )
    rows = [
        {
            "band": band.index,
            "lo_bin": band.lo,
            "hi_bin": band.hi,
            "hit_users": report.hit_counts[i],
            "unique_users": report.unique_counts[i],
        }
        for i, band in enumerate(report.bands)
    ]
    rows.append({"band": "multi", "lo_bin": "", "hi_bin": "", "hit_users": report.multi,
                 "unique_users": ""})
    rows.append({"band": "none", "lo_bin": "", "hi_bin": "", "hit_users": report.none,
                 "unique_users": ""})
    out = Path(args.output or config.output_dir)
    with _output_lock(out):
        _write_csv(
            out / "freqdrivers.csv",
            _meta_line(config, args.checkpoint),
            ["band", "lo_bin", "hi_bin", "hit_users", "unique_users"],
            rows,
        )
    print(
        f"bands={len(bands)} k={report.k} total={report.total} "
        f"unique={sum(report.unique_counts)} multi={report.multi} none={report.none}"
    )
    return 0


def cmd_export_spectra(args) -> int:
    model, config = _restore(args.checkpoint)
    dataset = _load_dataset(config)
    _train, _valid, test = _splits(config, dataset)
    rows = analysis.export_spectral_response(
        model, test, batch_size=config.batch_size, max_users=args.sample
    )
    out = Path(args.output or config.output_dir)
    with _output_lock(out):
        _write_csv(
            out / "spectra.csv",
            _meta_line(config, args.checkpoint),
            ["layer", "head", "bin", "frequency", "base_magnitude", "modulated_magnitude"],
            rows,
        )
    print(f"wrote {len(rows)} spectral response rows")
    return 0


def cmd_export_enhancer(args) -> int:
    model, config = _restore(args.checkpoint)
    rows = analysis.export_enhancer(model)
    out = Path(args.output or config.output_dir)
    with _output_lock(out):
        _write_csv(
            out / "enhancer.csv",
            _meta_line(config, args.checkpoint),
            ["layer", "detail_index", "channel", "value"],
            rows,
        )
    print(f"wrote {len(rows)} enhancer rows")
    return 0


def cmd_gradcheck(args) -> int:
    config = load_config(args.config)
    vocab = config.vocab_size or 20
    model_config = ModelConfig(
        vocab_size=vocab,
        max_len=config.max_len,
        embed_dim=config.embed_dim,
        blocks=config.blocks,
        heads=config.heads,
        alpha=config.alpha,
        dropout=0.0,
        dtype="float64",
        context_excludes_padding=config.context_mask,
    )
    model = WEARec(model_config, seed=config.seed)
    rng = sub_rng(config.seed, "gradcheck")
    batch = 4
    items = rng.integers(1, vocab, size=(batch, config.max_len))
    items[:, : config.max_len // 2] = 0  # realistic left padding
    targets = rng.integers(1, vocab, size=batch)

    worst = gradcheck.grad_check(
        lambda tp: model.loss(tp, items, targets, train=False),
        model.parameters(),
        rng=rng,
    )
    print(f"gradcheck max relative error: {worst:.3e} (threshold 1e-4)")
    if worst > 1e-4:
        raise NumericalError(f"gradient check failed: {worst:.3e} > 1e-4")
    return 0


def cmd_bench(args) -> int:
    config = load_config(args.config)
    result = analysis.bench_scaling(
        embed_dim=config.embed_dim, heads=config.heads, seed=config.seed
    )
    out = Path(config.output_dir)
    with _output_lock(out):
        _write_csv(
            out / "bench.csv",
            _meta_line(config),
            ["n", "kind", "median_ms"],
            result.rows,
        )
    print(f"mixing_slope={result.mixing_slope:.3f} control_slope={result.control_slope:.3f}")
    if result.mixing_slope > 1.3:
        raise NumericalError(
            f"mixing layer slope {result.mixing_slope:.3f} exceeds the 1.3 bound"
        )
    return 0


# ----------------------------------------------------------------------
# wiring
# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wearec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest, 5-core filter, write splits + stats")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--min-core", type=int, default=5)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train and write checkpoint/history/metrics")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze-freq", help="band-pass frequency driver analysis")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bands", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--output")
    p.set_defaults(func=cmd_analyze_freq)

    p = sub.add_parser("export-spectra", help="base vs modulated filter magnitudes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample", type=int, default=512)
    p.add_argument("--output")
    p.set_defaults(func=cmd_export_spectra)

    p = sub.add_parser("export-enhancer", help="dump the wavelet detail enhancer")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_export_enhancer)

    p = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="mixing-layer runtime scaling benchmark")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, InvalidInputError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
