"""Command-line pipeline: plan -> capture -> train -> eval -> run, plus gradcheck and bench.

Every subcommand ends by printing one summary line of space-separated
``key=value`` pairs that starts with ``status=ok`` or ``status=fail``; the
exit code is 0 exactly when the status is ok.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

log = logging.getLogger("ampcap")

DATA_DIR_ENV = "AMPCAP_DATA_DIR"


class CliError(Exception):
    pass


def data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "ampcap-data"))


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return ";".join(_fmt(x) for x in v)
    return str(v)


def summary(status: str = "ok", **fields) -> str:
    parts = [f"status={status}"] + [f"{k}={_fmt(v)}" for k, v in fields.items()]
    line = " ".join(parts)
    print(line, flush=True)
    return line


def _parse_controls(text: str | None, names: list[str]) -> dict[str, float]:
    if not text:
        return {}
    out = {}
    for item in text.split(","):
        if "=" not in item:
            raise CliError(f"control assignment {item!r} is not name=value")
        k, v = item.split("=", 1)
        k = k.strip()
        if k not in names:
            raise CliError(f"unknown control {k!r}; model controls are {names}")
        out[k] = float(v)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_plan(args) -> int:
    from .controls import amp_control_space, parse_control_space
    from .plan import export_session, l1_distance_matrix, plan_session, sample_configs, tour_length

    try:
        specs = parse_control_space(args.controls) if args.controls else amp_control_space()
    except ValueError as exc:
        raise CliError(f"invalid control space: {exc}") from None
    if args.n < 1:
        raise CliError("--n must be at least 1")
    configs = sample_configs(specs, args.n, args.seed)
    session, tour = plan_session(specs, configs)
    out = Path(args.out) if args.out else data_dir() / "session.json"
    export_session(session, out)
    nodes = np.vstack([configs, np.zeros((1, len(specs)))])
    matrix = l1_distance_matrix(nodes)
    rng = np.random.default_rng(args.seed)
    random_mean = float(np.mean([
        tour_length(np.concatenate([[tour.home], rng.permutation(args.n)]), matrix) for _ in range(100)
    ]))
    if args.figure:
        from .plotting import plot_tour

        plot_tour(configs, session.configs, args.figure, seed=args.seed)
    summary(
        steps=len(session.configs),
        tour_length=session.tour_length,
        nn_length=tour.construction_length,
        random_mean=random_mean,
        two_opt_passes=tour.passes,
        per_knob_travel=session.per_knob_travel(),
        session=out,
    )
    return 0


def _corpus(args, sample_rate):
    from .rig import ExcitationCorpus, generate_corpus

    if args.corpus:
        return ExcitationCorpus.from_directory(args.corpus, sample_rate)
    return generate_corpus(sample_rate, seed=args.seed)


def cmd_capture(args) -> int:
    from .dataset import random_split, write_manifest
    from .plan import read_session
    from .rig import capture_session

    session = read_session(args.session or data_dir() / "session.json")
    segment = int(round(args.segment_seconds * args.sample_rate))
    corpus = _corpus(args, args.sample_rate)
    ds = capture_session(session, corpus, segment, args.seed)
    n_train = len(ds) - args.val if args.train is None else args.train
    ds = random_split(ds, n_train, args.val, args.seed)
    out = Path(args.out) if args.out else data_dir() / "dataset" / "manifest.jsonl"
    write_manifest(ds, out)
    summary(examples=len(ds), train=len(ds.train), val=len(ds.val), sample_rate=ds.sample_rate,
            segment_length=ds.segment_length, manifest=out)
    return 0


def cmd_train(args) -> int:
    from .dataset import read_manifest
    from .nn.checkpoint import save_checkpoint
    from .train import TrainConfig, train

    ds = read_manifest(args.manifest or data_dir() / "dataset" / "manifest.jsonl")
    out = Path(args.out) if args.out else data_dir() / "model.npz"
    cfg = TrainConfig(
        hidden_size=args.hidden_size, batch_size=args.batch_size, iterations=args.iterations,
        learning_rate=args.lr, final_learning_rate=args.final_lr, beta1=args.beta1, beta2=args.beta2,
        epsilon=args.eps, loss=args.loss, warmup=args.warmup, truncation=args.truncation, bptt_warmup=args.bptt_warmup,
        seed=args.seed, validate_every=args.validate_every, checkpoint_every=args.checkpoint_every,
        checkpoint_path=str(out), log_every=args.log_every,
    )
    try:
        cfg.validate(ds.segment_length)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    ckpt, report = train(ds, cfg)
    save_checkpoint(ckpt, out)
    report_dir = Path(args.report_dir) if args.report_dir else out.parent / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    report.write_csv(report_dir / "loss_curve.csv")
    from .plotting import plot_training

    plot_training(report.train_loss, report.validation, report_dir / "loss_curve.png")
    esr = report.best_val_esr if report.validation else float("nan")
    summary(esr=esr, best_iteration=report.best_iteration, iterations=len(report.train_loss),
            final_train_loss=report.train_loss[-1], seconds=report.seconds, checkpoint=out)
    return 0


def cmd_eval(args) -> int:
    from .dataset import read_manifest
    from .engine import loudness_match
    from .nn.checkpoint import load_checkpoint
    from .rig import VirtualAmpConfig, _draw_segment, virtual_amp_process
    from .train import control_interpolation_eval, esr_loss, model_output, validate

    ckpt = load_checkpoint(args.checkpoint or data_dir() / "model.npz")
    ds = read_manifest(args.manifest or data_dir() / "dataset" / "manifest.jsonl")
    if ds.control_names != ckpt.control_names:
        raise CliError(f"checkpoint controls {ckpt.control_names} != dataset controls {ds.control_names}")
    examples = ds.split(args.split) if args.split != "all" else ds.examples
    if not examples:
        raise CliError(f"split {args.split!r} is empty")
    w = ckpt.warmup
    if args.loudness_match:
        rows = []
        for e in examples:
            y = loudness_match(model_output(ckpt, e.input, e.controls)[w:], e.target[w:])
            rows.append((e.id, esr_loss(y, e.target[w:])))
        rows.sort(key=lambda r: r[1], reverse=True)
        mean = float(np.mean([r[1] for r in rows]))
    else:
        res = validate(ckpt, examples)
        rows, mean = res.table, res.mean_esr
    out_dir = Path(args.report_dir) if args.report_dir else data_dir() / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "esr_table.csv", "w") as fh:
        fh.write("id,esr\n")
        for rid, e in rows:
            fh.write(f"{rid},{e!r}\n")
    fields = {"esr": mean, "worst_esr": rows[0][1], "examples": len(rows)}

    if args.probes > 0:
        corpus = _corpus(args, ds.sample_rate)
        clips = [c for c in corpus.clips if len(c) >= ds.segment_length]

        def render(cfg, x):
            amp = VirtualAmpConfig.from_controls(ds.control_names, cfg, ds.sample_rate)
            return virtual_amp_process(amp, x)

        rep = control_interpolation_eval(ckpt, ds, render,
                                         lambda rng: _draw_segment(rng, clips, ds.segment_length),
                                         probes=args.probes, seed=args.seed + 7)
        fields.update(seen_esr=rep.seen_mean, unseen_esr=rep.unseen_mean, generalization_ratio=rep.ratio)

    if args.figures:
        from .plotting import plot_control_family, plot_esr_table, plot_model_vs_reference

        fig_dir = Path(args.figures)
        plot_esr_table(rows, fig_dir / "esr_table.png")
        by_id = {e.id: e for e in examples}
        best = by_id[rows[-1][0]]
        plot_model_vs_reference(model_output(ckpt, best.input, best.controls), best.target, ds.sample_rate,
                                fig_dir / "model_vs_reference.png", title=f"{best.id} ESR {rows[-1][1]:.4f}")
        if "tone_cut" in ckpt.control_names:
            k = ckpt.control_names.index("tone_cut")
            family = {}
            for v in (0.0, 0.25, 0.5, 0.75, 1.0):
                cfg = best.controls.copy()
                cfg[k] = v
                family[v] = model_output(ckpt, best.input, cfg)[w:]
            plot_control_family(family, ds.sample_rate, fig_dir / "tone_cut_family.png")
    summary(**fields)
    return 0


def cmd_run(args) -> int:
    from .audio import read_wav, write_wav
    from .engine import CabinetIR, StreamSession, loudness_match, process_file, read_automation
    from .nn.checkpoint import load_checkpoint

    ckpt = load_checkpoint(args.checkpoint or data_dir() / "model.npz")
    x, rate = read_wav(args.input)
    controls = np.full(len(ckpt.control_names), 0.5)
    for name, value in _parse_controls(args.controls, ckpt.control_names).items():
        controls[ckpt.control_names.index(name)] = value
    ir = CabinetIR.from_wav(args.ir) if args.ir else None
    session = StreamSession(ckpt, controls, sample_rate=rate, cabinet=ir, smoothing_ms=args.smoothing_ms)
    events = read_automation(args.automation) if args.automation else []
    for _, name, _ in events:
        if name not in ckpt.control_names:
            raise CliError(f"automation names unknown control {name!r}")
    t0 = time.perf_counter()
    y = process_file(session, x, events, block_size=args.block_size)
    elapsed = time.perf_counter() - t0
    if args.loudness_reference:
        ref, _ = read_wav(args.loudness_reference)
        y = loudness_match(y, ref).astype(np.float32)
    write_wav(args.output, y, rate)
    summary(samples=len(y), seconds=elapsed, rtf=(len(y) / rate) / max(elapsed, 1e-12), output=args.output)
    return 0


def cmd_gradcheck(args) -> int:
    from .nn.gradcheck import gradient_check

    models = ["lstm", "conv"] if args.model == "all" else [args.model]
    t0 = time.perf_counter()
    reports = [gradient_check(m, tolerance=args.tolerance, seed=args.seed) for m in models]
    for r in reports:
        log.info(r.summary())
    worst = max(r.max_rel_error for r in reports)
    ok = all(r.passed for r in reports)
    summary("ok" if ok else "fail", max_grad_rel_err=worst, tolerance=args.tolerance,
            models=",".join(models), seconds=time.perf_counter() - t0)
    return 0 if ok else 1


def cmd_bench(args) -> int:
    from .controls import AMP_CONTROLS
    from .engine import benchmark_throughput
    from .nn.checkpoint import Checkpoint, load_checkpoint

    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
    else:
        ckpt = Checkpoint.fresh(args.hidden_size, list(AMP_CONTROLS), args.reference_rate,
                                np.random.default_rng(args.seed))
    rep = benchmark_throughput(ckpt, duration=args.duration, block_size=args.block_size,
                               reference_rate=args.reference_rate)
    summary(rtf=rep.rtf, samples_per_s=rep.samples_per_second, hidden_size=rep.hidden_size,
            reference_rate=rep.reference_rate)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ampcap",
        description="Plan, capture, train and run conditioned neural amplifier models.",
        epilog=f"Default file locations live under ${DATA_DIR_ENV} (default ./ampcap-data).",
    )
    p.add_argument("--seed", type=int, default=0, help="global random seed (default 0)")
    p.add_argument("--threads", type=int, default=1, help="worker threads; 1 = strict deterministic mode")
    p.add_argument("--config", help="JSON file of flag overrides: top-level keys or per-subcommand sections")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("plan", help="sample control configurations and order them into a session")
    s.add_argument("--controls", help="comma list of control names; name:m for an m-position switch "
                                      "(default: volume,bass,treble,tone_cut,master)")
    s.add_argument("--n", type=int, default=500, help="number of configurations (default 500)")
    s.add_argument("--out", help="session file to write")
    s.add_argument("--figure", help="render random-vs-planned path figure to this image file")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("capture", help="record a session from the virtual amplifier into a dataset")
    s.add_argument("--session", help="session file from 'plan'")
    s.add_argument("--corpus", help="directory of mono WAV excitation clips (default: synthetic corpus)")
    s.add_argument("--sample-rate", type=int, default=8000)
    s.add_argument("--segment-seconds", type=float, default=0.5)
    s.add_argument("--train", type=int, default=None, help="training examples (default: all but --val)")
    s.add_argument("--val", type=int, default=100, help="validation examples (default 100)")
    s.add_argument("--out", help="manifest path to write")
    s.set_defaults(func=cmd_capture)

    s = sub.add_parser("train", help="train the conditioned LSTM")
    s.add_argument("--manifest")
    s.add_argument("--out", help="checkpoint path")
    s.add_argument("--hidden-size", type=int, default=32)
    s.add_argument("--batch-size", type=int, default=4)
    s.add_argument("--iterations", type=int, default=20000)
    s.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate (default 1e-3)")
    s.add_argument("--final-lr", type=float, default=None,
                   help="decay the learning rate exponentially to this value by the last iteration")
    s.add_argument("--beta1", type=float, default=0.9)
    s.add_argument("--beta2", type=float, default=0.999)
    s.add_argument("--eps", type=float, default=1e-8)
    s.add_argument("--loss", choices=("esr", "mse"), default="esr")
    s.add_argument("--warmup", type=int, default=1000, help="leading samples excluded from the loss")
    s.add_argument("--truncation", type=int, default=None, help="truncated-BPTT window in samples")
    s.add_argument("--bptt-warmup", action="store_true", help="also backpropagate through the warm-up samples")
    s.add_argument("--validate-every", type=int, default=1000)
    s.add_argument("--checkpoint-every", type=int, default=None)
    s.add_argument("--log-every", type=int, default=500)
    s.add_argument("--report-dir", help="where to write loss_curve.csv/.png (default: next to checkpoint)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="per-example ESR and control-interpolation probes")
    s.add_argument("--checkpoint")
    s.add_argument("--manifest")
    s.add_argument("--split", default="val", choices=("train", "val", "all"))
    s.add_argument("--probes", type=int, default=50, help="seen/unseen probe pairs (0 disables)")
    s.add_argument("--corpus", help="excitation directory for probes (default: synthetic corpus)")
    s.add_argument("--loudness-match", action="store_true", help="RMS-match model output to the target first")
    s.add_argument("--report-dir", help="where to write esr_table.csv")
    s.add_argument("--figures", help="directory for report figures")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("run", help="process an audio file through a trained model")
    s.add_argument("--checkpoint")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--controls", help="name=value list, e.g. volume=0.7,master=0.5 (others 0.5)")
    s.add_argument("--automation", help="CSV of time_s,control,value events")
    s.add_argument("--ir", help="cabinet impulse response WAV")
    s.add_argument("--smoothing-ms", type=float, default=None, help="one-pole control smoothing time")
    s.add_argument("--block-size", type=int, default=512)
    s.add_argument("--loudness-reference", help="WAV whose RMS the output is scaled to")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("gradcheck", help="finite-difference check of analytic gradients")
    s.add_argument("--model", choices=("lstm", "conv", "all"), default="all")
    s.add_argument("--tolerance", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("bench", help="single-stream real-time factor")
    s.add_argument("--checkpoint", help="model to time (default: random LSTM of --hidden-size)")
    s.add_argument("--hidden-size", type=int, default=32)
    s.add_argument("--duration", type=float, default=2.0, help="seconds of audio at the reference rate")
    s.add_argument("--block-size", type=int, default=512)
    s.add_argument("--reference-rate", type=int, default=48000)
    s.set_defaults(func=cmd_bench)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv, args):
    """Re-parse with config-file values as defaults so explicit flags still win."""
    with open(args.config) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise CliError("config file must hold a JSON object")
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    subparser = sub_action.choices[args.command]
    section = cfg.pop(args.command, {})
    for name in list(cfg):
        if name in sub_action.choices:
            cfg.pop(name)
    global_dests = {a.dest for a in parser._actions}
    sub_dests = {a.dest for a in subparser._actions}
    unknown = [k for k in cfg if k not in global_dests] + [k for k in section if k not in sub_dests]
    if unknown:
        raise CliError(f"unknown config keys: {unknown}")
    parser.set_defaults(**cfg)
    subparser.set_defaults(**section)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            args = _apply_config(parser, argv, args)
        logging.basicConfig(
            level=logging.WARNING - 10 * min(args.verbose, 2),
            format="%(levelname)s %(name)s: %(message)s",
        )
        if args.threads < 1:
            raise CliError("--threads must be >= 1")
        _set_threads(args.threads)
        return args.func(args)
    except (CliError, ValueError, FileNotFoundError, KeyError, RuntimeError) as exc:
        summary("fail", error=str(exc).replace(" ", "_")[:200])
        print(f"ampcap {args.command}: {exc}", file=sys.stderr)
        return 2


def _set_threads(n: int) -> None:
    import numba

    # the kernels are serial; the portable layer avoids probing for TBB/OpenMP
    numba.config.THREADING_LAYER = "workqueue"
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


if __name__ == "__main__":
    sys.exit(main())
