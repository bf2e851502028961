"""Command-line entry point: simulate | train | detect | benchmark | calibrate.

Everything wide lives in the JSON config (see ``fdibench.config``); flags
are only paths and one-value overrides.  Every artifact is written
atomically and its SHA-256 digest printed to stdout, so two invocations
can be compared line for line.  Progress chatter goes to stderr.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from fdibench.version import __version__

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fdibench",
        description="Sensor-spoofing detection workbench: simulate runs, "
                    "train the window detector, score streams, and run the "
                    "full benchmark grid.")
    p.add_argument("--version", action="version",
                   version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", metavar="PATH", default=None,
                        help="JSON config; omitted = built-in defaults")
        sp.add_argument("--out", metavar="DIR", default=".",
                        help=out_help)
        sp.add_argument("--seed", metavar="U64", type=int, default=None,
                        help="override the config's seed")

    sp = sub.add_parser("simulate",
                        help="roll out one scenario; write run + residues")
    common(sp, "output directory for run.csv/json + residues.csv/json")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train",
                        help="train the window detector on a residue corpus")
    common(sp, "output directory for checkpoint.npz + training_log.csv")
    sp.add_argument("--corpus", metavar="DIR", required=True,
                    help="directory of residue CSVs (labeled + clean)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("detect",
                        help="score one run or residue file, report onset")
    common(sp, "output directory for verdicts.csv")
    sp.add_argument("--input", metavar="PATH", required=True,
                    help="a run CSV or a residue CSV (sidecar JSON expected)")
    sp.add_argument("--checkpoint", metavar="PATH", default=None,
                    help="window-detector checkpoint (transformer only)")
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("benchmark",
                        help="run the full grid; emit tables and figures")
    common(sp, "output directory for the benchmark tree")
    sp.add_argument("--jobs", metavar="N", type=int, default=1,
                    help="worker bound; this build runs cells sequentially "
                         "so any value >= 1 is accepted")
    sp.set_defaults(func=cmd_benchmark)

    sp = sub.add_parser("calibrate",
                        help="pick a detector threshold from a clean corpus")
    common(sp, "output directory for calibration.json")
    sp.add_argument("--corpus", metavar="DIR", required=True,
                    help="directory of clean residue CSVs")
    sp.add_argument("--checkpoint", metavar="PATH", default=None,
                    help="window-detector checkpoint (transformer only)")
    sp.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    from fdibench.errors import (CalibrationInfeasibleError, ConfigError,
                                 ContractViolation, DivergenceError,
                                 InvalidStateError, NumericalError,
                                 TrainingDivergedError)

    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractViolation, InvalidStateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, DivergenceError, TrainingDivergedError,
            CalibrationInfeasibleError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def _note(message: str) -> None:
    print(message, file=sys.stderr)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _announce(digests: dict) -> None:
    for path, digest in digests.items():
        print(f"sha256  {digest}  {path}")


# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    from fdibench.config import build_filter, build_scenario, load_config
    from fdibench.ekf import generate_residues, save_residues
    from fdibench.simulate import save_run, simulate_run

    cfg = load_config(args.config)
    scenario = build_scenario(cfg, seed_override=args.seed)
    _note(f"simulating {scenario.model.name}, t={scenario.t_steps}, "
          f"seed={scenario.seed}")
    record = simulate_run(scenario)
    seq = generate_residues(scenario.model, record, scenario.noise,
                            config=build_filter(cfg))
    out = _out_dir(args)
    digests = save_run(record, out / "run.csv")
    run_digest = digests[str(out / "run.csv")]
    digests.update(save_residues(seq, out / "residues.csv",
                                 source_digest=run_digest))
    _announce(digests)
    return EXIT_OK


def _load_corpus(corpus_dir: str):
    from fdibench.ekf import load_residues
    from fdibench.errors import ConfigError
    from fdibench.storage import read_csv

    corpus = Path(corpus_dir)
    if not corpus.is_dir():
        raise ConfigError(f"corpus directory not found: {corpus}")
    seqs = []
    for path in sorted(corpus.glob("*.csv")):
        header, _ = read_csv(path)
        if len(header) > 1 and header[1] == "warmup":
            seqs.append((path.name, load_residues(path)))
    if not seqs:
        raise ConfigError(f"no residue CSVs under {corpus}")
    dims = {seq.m for _, seq in seqs}
    if len(dims) > 1:
        raise ConfigError(
            f"corpus mixes channel counts {sorted(dims)}; one plant only")
    return seqs


def cmd_train(args) -> int:
    from fdibench.config import build_train_config, load_config
    from fdibench.detectors.transformer import (NetConfig, save_checkpoint,
                                                train)
    from fdibench.storage import float_repr, write_csv

    cfg = load_config(args.config)
    seqs = [seq for _, seq in _load_corpus(args.corpus)]
    labeled = [s for s in seqs if any(lab != "clean" for lab in s.labels)]
    unlabeled = [s for s in seqs if all(lab == "clean" for lab in s.labels)]
    _note(f"corpus: {len(labeled)} labeled + {len(unlabeled)} clean "
          f"sequences")

    net = NetConfig(n_channels=seqs[0].m, **cfg["training"]["network"])
    tc = build_train_config(cfg)
    if args.seed is not None:
        tc = replace(tc, seed=args.seed)
    result = train(labeled, unlabeled, net_config=net, train_config=tc)
    _note(f"trained {result.param_count} parameters, "
          f"{result.n_windows} windows, loss "
          f"{float_repr(result.initial_loss)} -> "
          f"{float_repr(result.final_loss)}")

    out = _out_dir(args)
    ckpt = out / "checkpoint.npz"
    ckpt_digest = save_checkpoint(ckpt, result.config, result.params,
                                  seed=tc.seed)
    log_rows = [[row["epoch"], float_repr(row["rec"]), float_repr(row["disc"]),
                 float_repr(row["cls"]), float_repr(row["total"]),
                 float_repr(row["grad_norm"])] for row in result.log]
    log_digest = write_csv(out / "training_log.csv",
                           ["epoch", "rec", "disc", "cls", "total",
                            "grad_norm"], log_rows)
    _announce({ckpt: ckpt_digest, out / "training_log.csv": log_digest})
    return EXIT_OK


def _load_input(cfg, path: str):
    """A run CSV (residues regenerated per config) or a residue CSV."""
    from fdibench.config import build_filter, build_noise
    from fdibench.benchmark import make_plant
    from fdibench.ekf import generate_residues, load_residues
    from fdibench.errors import ConfigError
    from fdibench.simulate import load_run
    from fdibench.storage import read_csv

    path = Path(path)
    if not path.exists():
        raise ConfigError(f"input file not found: {path}")
    header, _ = read_csv(path)
    if len(header) > 1 and header[1] == "warmup":
        return load_residues(path)
    record = load_run(path)
    model = make_plant(record.model_id)
    noise = build_noise(cfg, model)
    return generate_residues(model, record, noise, config=build_filter(cfg))


def _build_detector(cfg, checkpoint: str | None):
    from fdibench.config import build_classical_detector
    from fdibench.detectors.transformer import TransformerDetector
    from fdibench.errors import ConfigError

    selected = cfg["detectors"]["selected"]
    if selected != "transformer":
        return selected, build_classical_detector(cfg, selected)
    if checkpoint is None:
        raise ConfigError(
            "the transformer detector needs --checkpoint <file> "
            "(train one with `fdibench train`)")
    tcfg = cfg["detectors"]["transformer"]
    threshold = tcfg["threshold"]
    if threshold is None:
        raise ConfigError(
            "detectors.transformer.threshold is null; run "
            "`fdibench calibrate` on a clean corpus and copy the value in")
    det = TransformerDetector.from_checkpoint(
        checkpoint, threshold=threshold, h_run=tcfg["h_run"])
    return selected, det


def cmd_detect(args) -> int:
    from fdibench.config import load_config
    from fdibench.storage import float_repr, write_csv

    cfg = load_config(args.config)
    seq = _load_input(cfg, args.input)
    name, det = _build_detector(cfg, args.checkpoint)
    run = det.run(seq.detector_input())

    out = _out_dir(args)
    rows = [[k, int(run.attacked[k]), run.classes[k] or "",
             float_repr(run.scores[k]), run.detector_id]
            for k in range(len(run.attacked))]
    digest = write_csv(out / "verdicts.csv",
                       ["k", "decision", "class", "score", "detector"], rows)
    _announce({out / "verdicts.csv": digest})

    hits = run.attacked.nonzero()[0]
    if hits.size == 0:
        print("onset=none delay=none class=none")
        return EXIT_OK
    onset = int(hits[0])
    true_onset = seq.onset()
    delay = "none" if (true_onset is None or onset < true_onset) \
        else onset - true_onset
    label = run.classes[onset] or "unknown"
    print(f"onset={onset} delay={delay} class={label}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from fdibench.config import load_config
    from fdibench.detectors import calibrate_threshold
    from fdibench.errors import ConfigError
    from fdibench.storage import float_repr, write_json

    cfg = load_config(args.config)
    seqs = _load_corpus(args.corpus)
    dirty = [name for name, seq in seqs
             if any(lab != "clean" for lab in seq.labels)]
    if dirty:
        raise ConfigError(
            f"calibration corpus must be clean; attack labels in: "
            f"{', '.join(dirty)}")
    name, det = _build_detector(cfg, args.checkpoint)
    target = cfg["detectors"]["fa_target"]
    threshold = calibrate_threshold(
        det, [seq.detector_input() for _, seq in seqs], target=target)

    out = _out_dir(args)
    payload = {
        "detector": name,
        "fa_target": target,
        "threshold": threshold,
        "corpus_files": [fname for fname, _ in seqs],
        "corpus_steps": int(sum(seq.t_steps for _, seq in seqs)),
    }
    digest = write_json(out / "calibration.json", payload)
    _announce({out / "calibration.json": digest})
    print(f"threshold={float_repr(threshold)}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    from fdibench.benchmark import run_benchmark
    from fdibench.config import build_benchmark_spec, load_config
    from fdibench.errors import ConfigError
    from fdibench.report import render_figures

    if args.jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
    cfg = load_config(args.config)
    spec = build_benchmark_spec(cfg, seed_override=args.seed)
    out = _out_dir(args)
    result = run_benchmark(spec, out_dir=out, echo=_note)
    figures = render_figures(result, out)
    _announce({out / rel: digest
               for rel, digest in {**result.digests, **figures}.items()})
    for cell_name, message in result.failures:
        _note(f"cell failed: {cell_name}: {message}")
    _note(f"benchmark finished in {result.elapsed_seconds:.1f}s "
          f"({len(result.cells)} cells, {len(result.failures)} failures)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
