"""Command-line entry point: simulate / train / evaluate / predict / benchmark.

Every command seeds all of its randomness from one --seed (or the config
file's rng_seed) through named substreams, and drops a manifest.json next to
its outputs recording the argv, the fully resolved config, and the seeds, so
any run can be repeated exactly. Exit codes: 0 success, 1 usage error, 2
runtime error. Log verbosity comes from the EVENTWALK_LOG environment
variable (debug / info / warning / error).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from . import __version__
from .autodiff import CheckpointError
from .events import (
    DatasetError,
    read_dataset,
    write_dataset,
)
from .evaluation import (
    _STREAM_PREDICT,
    benchmark_csv_rows,
    benchmark_scaling,
    evaluate_prediction,
    parse_benchmark_grid,
    predict_next,
    prediction_csv_rows,
    reconstruct_network,
    reconstruction_csv_rows,
    score_reconstruction,
)
from .generator import GeneratorError
from .simulate import SimulationConfig, generate_dataset, substream
from .training import (
    TrainingError,
    load_model,
    parse_train_config,
    train,
    train_config_to_dict,
    train_variant_pr,
)

log = logging.getLogger("eventwalk")

_RUNTIME_ERRORS = (DatasetError, GeneratorError, TrainingError, CheckpointError, OSError)

_STREAM_DOC = {
    "simulate": {"network": 1, "cascade": 2},
    "train": {
        "init_generator": 101,
        "init_discriminator": 102,
        "descendant_table": 103,
        "batch_order": 104,
        "rollout": 105,
    },
    "evaluate": {"prediction": _STREAM_PREDICT},
    "predict": {"prediction": _STREAM_PREDICT},
    "benchmark": {"benchmark": 202},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so dispatch owns exit codes."""

    def error(self, message):
        raise UsageError(message)


@dataclass(frozen=True)
class RunManifest:
    command: str
    argv: tuple[str, ...]
    config: dict
    seeds: dict
    inputs: dict
    outputs: dict
    version: str
    wallclock_s: float


def write_manifest(path: Path, manifest: RunManifest) -> None:
    """Atomic write: the manifest appears complete or not at all."""
    payload = json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(payload)
    os.replace(tmp, path)


def read_manifest(path) -> RunManifest:
    payload = json.loads(Path(path).read_text())
    payload["argv"] = tuple(payload["argv"])
    return RunManifest(**payload)


def _sibling_manifest(out_file: Path) -> Path:
    return out_file.with_name(f"{out_file.stem}.manifest.json")


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="eventwalk",
        description=__doc__.splitlines()[0],
        epilog="Set EVENTWALK_LOG=debug|info|warning|error for log verbosity.",
    )
    parser.add_argument("--version", action="version", version=f"eventwalk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample a network and a cascade dataset")
    p.add_argument("--markers", type=int, required=True, help="marker vocabulary size")
    p.add_argument("--edge-prob", type=float, required=True, help="independent edge probability")
    p.add_argument("--window", type=float, default=10.0, help="observation window length")
    p.add_argument("--count", type=int, required=True, help="number of cascades")
    p.add_argument("--seed", type=int, default=0, help="master RNG seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--max-length", type=int, default=128, help="per-sequence event cap")
    p.add_argument("--allow-isolated-sources", action="store_true",
                   help="let degree-0 markers seed cascades")
    p.add_argument("--debug-parents", action="store_true",
                   help="also write parent attributions as parents.jsonl")
    p.add_argument("--threads", type=int, default=1, help="cascade worker cap")

    p = sub.add_parser("train", help="adversarial imitation training")
    p.add_argument("--dataset", required=True, help="JSONL event sequences")
    p.add_argument("--variant", choices=("lantern", "rnn", "pr"), default="lantern")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="metric CSV path")
    p.add_argument("--seed", type=int, help="override the config rng_seed")
    p.add_argument("--threads", type=int, default=1, help="rollout worker cap")

    p = sub.add_parser("evaluate", help="score reconstruction and prediction")
    p.add_argument("--model", required=True, help="trained checkpoint")
    p.add_argument("--dataset", required=True, help="dataset with ground-truth sidecar")
    p.add_argument("--k", type=_int_list, default=(3,), metavar="K1,K2,...",
                   help="edges kept per marker when reconstructing")
    p.add_argument("--ratios", type=_float_list, default=(0.2, 0.4, 0.6, 0.8),
                   metavar="R1,R2,...", help="observed prefix ratios")
    p.add_argument("--samples", type=int, default=200, help="draws per prediction")
    p.add_argument("--seed", type=int, default=0, help="prediction RNG seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="evaluation worker cap")

    p = sub.add_parser("predict", help="emit next-event predictions")
    p.add_argument("--model", required=True, help="trained checkpoint")
    p.add_argument("--dataset", required=True, help="JSONL event sequences")
    p.add_argument("--observed-ratio", type=float, required=True,
                   help="fraction of each sequence revealed")
    p.add_argument("--samples", type=int, default=200, help="draws per prediction")
    p.add_argument("--seed", type=int, default=0, help="prediction RNG seed")
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("benchmark", help="runtime scaling grid")
    p.add_argument("--grid", required=True, help="flat key = value grid file")
    p.add_argument("--out", required=True, help="CSV path")
    return parser


# -- commands -----------------------------------------------------------------


def _cmd_simulate(args, argv) -> int:
    begin = time.perf_counter()
    cfg = SimulationConfig(
        marker_count=args.markers,
        edge_probability=args.edge_prob,
        time_window=args.window,
        sequence_count=args.count,
        rng_seed=args.seed,
        max_sequence_length=args.max_length,
        allow_isolated_sources=args.allow_isolated_sources,
    )
    dataset, debug = generate_dataset(cfg, collect_debug=args.debug_parents,
                                      threads=args.threads)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_path = out_dir / "dataset.jsonl"
    write_dataset(dataset, data_path)
    outputs = {"dataset": str(data_path), "network": str(data_path) + ".network"}
    if debug is not None:
        parents_path = out_dir / "parents.jsonl"
        with open(parents_path, "w") as fh:
            for dbg in debug:
                fh.write(json.dumps({str(k): v for k, v in sorted(dbg.parents.items())}))
                fh.write("\n")
        outputs["parents"] = str(parents_path)
    write_manifest(out_dir / "manifest.json", RunManifest(
        command="simulate",
        argv=tuple(argv),
        config={
            "marker_count": cfg.marker_count,
            "edge_probability": cfg.edge_probability,
            "time_window": cfg.time_window,
            "sequence_count": cfg.sequence_count,
            "rng_seed": cfg.rng_seed,
            "max_sequence_length": cfg.max_sequence_length,
            "allow_isolated_sources": cfg.allow_isolated_sources,
        },
        seeds={"master": args.seed, "streams": _STREAM_DOC["simulate"]},
        inputs={},
        outputs=outputs,
        version=__version__,
        wallclock_s=time.perf_counter() - begin,
    ))
    log.info("wrote %d sequences to %s", len(dataset.sequences), data_path)
    return 0


def _cmd_train(args, argv) -> int:
    begin = time.perf_counter()
    text = Path(args.config).read_text() if args.config else ""
    overrides = {"variant": args.variant}
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    cfg = parse_train_config(text, **overrides)
    dataset = read_dataset(args.dataset)
    runner = train_variant_pr if cfg.variant == "pr" else train
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    result = runner(dataset, cfg, out_path=out_path, log_path=args.log)
    outputs = {"checkpoint": str(out_path)}
    if args.log:
        outputs["metrics"] = str(args.log)
    write_manifest(_sibling_manifest(out_path), RunManifest(
        command="train",
        argv=tuple(argv),
        config=train_config_to_dict(result.config),
        seeds={"master": result.config.rng_seed, "streams": _STREAM_DOC["train"]},
        inputs={"dataset": args.dataset, "config": args.config or ""},
        outputs=outputs,
        version=__version__,
        wallclock_s=time.perf_counter() - begin,
    ))
    log.info("trained %d steps, checkpoint at %s", result.config.steps, out_path)
    return 0


def _cmd_evaluate(args, argv) -> int:
    begin = time.perf_counter()
    model = load_model(args.model)
    dataset = read_dataset(args.dataset, marker_count=model.marker_count)
    if dataset.ground_truth is None:
        raise DatasetError(
            f"{args.dataset} has no ground-truth network sidecar;"
            " reconstruction cannot be scored"
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for k in args.k:
        estimated = reconstruct_network(model.generator_store, k)
        reports.append(score_reconstruction(estimated, dataset.ground_truth, k))
    rec_path = out_dir / "reconstruction.csv"
    _write_csv(rec_path, reconstruction_csv_rows(reports))
    pred_reports = evaluate_prediction(
        model, dataset, ratios=args.ratios, n_samples=args.samples,
        rng_seed=args.seed,
    )
    pred_path = out_dir / "prediction.csv"
    _write_csv(pred_path, prediction_csv_rows(pred_reports))
    write_manifest(out_dir / "manifest.json", RunManifest(
        command="evaluate",
        argv=tuple(argv),
        config={"k": list(args.k), "ratios": list(args.ratios),
                "samples": args.samples, "rng_seed": args.seed},
        seeds={"master": args.seed, "streams": _STREAM_DOC["evaluate"]},
        inputs={"model": args.model, "dataset": args.dataset},
        outputs={"reconstruction": str(rec_path), "prediction": str(pred_path)},
        version=__version__,
        wallclock_s=time.perf_counter() - begin,
    ))
    for rep in reports:
        log.info("k=%d precision=%.4f recall=%.4f f1=%.4f",
                 rep.k, rep.precision, rep.recall, rep.f1)
    return 0


def _cmd_predict(args, argv) -> int:
    begin = time.perf_counter()
    model = load_model(args.model)
    dataset = read_dataset(args.dataset, marker_count=model.marker_count)
    rows = [["sequence", "prefix_events", "pred_time", "pred_marker",
             "true_time", "true_marker"]]
    for idx, seq in enumerate(dataset.sequences):
        n = max(1, math.ceil(args.observed_ratio * len(seq)))
        n = min(n, len(seq))
        t_hat, m_hat = predict_next(
            model, list(seq.prefix(n)), args.samples,
            substream(args.seed, _STREAM_PREDICT, 0, idx),
        )
        if n < len(seq):
            truth_t, truth_m = repr(seq[n].time), seq[n].marker
        else:
            truth_t, truth_m = "", ""
        rows.append([idx, n, repr(t_hat), m_hat, truth_t, truth_m])
    if args.out:
        out_path = Path(args.out)
        _write_csv(out_path, rows)
        write_manifest(_sibling_manifest(out_path), RunManifest(
            command="predict",
            argv=tuple(argv),
            config={"observed_ratio": args.observed_ratio,
                    "samples": args.samples, "rng_seed": args.seed},
            seeds={"master": args.seed, "streams": _STREAM_DOC["predict"]},
            inputs={"model": args.model, "dataset": args.dataset},
            outputs={"predictions": str(out_path)},
            version=__version__,
            wallclock_s=time.perf_counter() - begin,
        ))
    else:
        writer = csv.writer(sys.stdout)
        writer.writerows(rows)
    return 0


def _cmd_benchmark(args, argv) -> int:
    begin = time.perf_counter()
    grid = parse_benchmark_grid(Path(args.grid).read_text())
    result = benchmark_scaling(grid)
    out_path = Path(args.out)
    _write_csv(out_path, benchmark_csv_rows(result))
    config = asdict(grid)
    config["embedding"] = asdict(grid.embedding)
    write_manifest(_sibling_manifest(out_path), RunManifest(
        command="benchmark",
        argv=tuple(argv),
        config=config,
        seeds={"master": grid.rng_seed, "streams": _STREAM_DOC["benchmark"]},
        inputs={"grid": args.grid},
        outputs={"benchmark": str(out_path)},
        version=__version__,
        wallclock_s=time.perf_counter() - begin,
    ))
    for M, r2 in result.length_fit_r2.items():
        log.info("marker_count=%d length-fit R^2=%.4f", M, r2)
    return 0


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


_COMMANDS = {
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "predict": _cmd_predict,
    "benchmark": _cmd_benchmark,
}


def dispatch(argv: Sequence[str]) -> int:
    """Route argv to its subcommand; 0 success, 1 usage error, 2 runtime error."""
    level = os.environ.get("EVENTWALK_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except SystemExit as exit_:  # --help / --version
        return int(exit_.code or 0)
    try:
        return _COMMANDS[args.command](args, argv)
    except _RUNTIME_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
