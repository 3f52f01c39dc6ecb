"""``cinesync`` command line: one subcommand per pipeline stage plus the comparison harnesses.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
Heavy modules are imported after ``--threads`` has set the BLAS thread caps.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")

# subcommand -> (stage function in .stages or .ablate, help)
COMMANDS = {
    "synth": ("run_synth", "generate the synthetic paired dataset"),
    "preprocess": ("run_preprocess", "clean EEG, epoch and z-score both modalities"),
    "train-encoder": ("run_encoder", "train the fusion encoder"),
    "train-decoder": ("run_decoder", "warm up the decoder base and train its LoRA adapters on z_b"),
    "reconstruct": ("run_reconstruct", "sample test-split reconstructions (and the shuffled control)"),
    "evaluate": ("run_evaluate", "score reconstructions and write the metric report"),
    "pipeline": ("run_evaluate", "every stage from synth to evaluate, resuming finished ones"),
    "ablate-fusion": ("ablate_fusion", "the seven fusion-layout rows under matched parameter budgets"),
    "ablate-alignment": ("ablate_alignment", "full alignment loss against each term removed"),
    "modality-compare": ("modality_compare", "fused against fMRI-only and EEG-only encoders"),
}
HARNESSES = ("ablate-fusion", "ablate-alignment", "modality-compare")


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cinesync", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None,
                        help="JSON config file or preset name (desk, complementary, fullscale-shapes); default desk")
    common.add_argument("--seed", type=int, default=None, help="training, sampling and metric seed")
    common.add_argument("--out", default="out", help="artifact root; stages live in OUT/{hash}/{stage}")
    common.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP threads")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return p


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise ValueError("--threads must be positive")
    for v in THREAD_VARS:
        os.environ[v] = str(n)


def _exit_code(exc: BaseException) -> int:
    from ..checkpoint import CheckpointError
    from ..evalkit import ReportError
    from ..mfe import TrainingDiverged
    from ..nld import DecoderDiverged
    from ..numcore.tensor import NonFiniteError
    from ..preproc import FilterConfigError, SynchronizationError
    from ..synthdata import FormatError, ManifestError
    from .config import ConfigError
    from .stages import DataError

    if isinstance(exc, (ConfigError, FilterConfigError)):
        return EXIT_CONFIG
    if isinstance(exc, (NonFiniteError, TrainingDiverged, DecoderDiverged, ReportError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, ManifestError, FormatError, CheckpointError, SynchronizationError, OSError)):
        return EXIT_DATA
    raise exc


def _summary(result) -> dict:
    from pathlib import Path

    from ..evalkit import MetricReport

    if isinstance(result, MetricReport):
        return {"aggregate": result.aggregate, "extra": result.extra, "config_hash": result.config_hash}
    if isinstance(result, Path):
        return {"dir": str(result)}
    return {"dir": result["dir"], "csv": str(Path(result["dir"]) / "table.csv"),
            "guards_passed": all(g["passed"] for g in result["guards"])}


def run(argv=None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        _set_threads(args.threads)
    except ValueError as exc:
        print(f"cinesync: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    from . import ablate, stages
    from .config import ConfigError, load

    try:
        cfg = load(args.config, args.seed)
    except ConfigError as exc:
        print(f"cinesync: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    runlog = stages.RunLog(args.out, args.command)
    fn_name = COMMANDS[args.command][0]
    runlog.write("command", status="started", command=args.command, config=args.config, seed=cfg["seed"])
    try:
        if args.command in HARNESSES:
            result = getattr(ablate, fn_name)(cfg, args.out, runlog)
        else:
            result = getattr(stages, fn_name)(stages.Layout(args.out, cfg, runlog))
    except Exception as exc:   # mapped to an exit code, or re-raised when unexpected
        stage = runlog.current or args.command
        try:
            code = _exit_code(exc)
        except Exception:
            runlog.write("command", status="failed", stage=stage, error=repr(exc))
            runlog.close()
            raise
        kind = {EXIT_CONFIG: "config error", EXIT_DATA: "data error", EXIT_NUMERIC: "numeric failure"}[code]
        runlog.write("command", status="failed", stage=stage, error=repr(exc), exit=code)
        runlog.close()
        if args.verbose:
            traceback.print_exc()
        print(f"cinesync: {kind} in stage {stage}: {exc}", file=sys.stderr)
        return code
    summary = _summary(result)
    runlog.write("command", status="done", **summary)
    runlog.close()
    print(json.dumps(summary, indent=1, default=str))
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
