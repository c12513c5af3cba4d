"""``evpk`` command line: conversion, benchmarking, synthesis, training and evaluation.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .representations import KINDS

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
PILLAR_KIND = "eventpillars"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("EVPK_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"EVPK_SEED must be an integer, got {env!r}") from None


def _with_path(path, exc):
    msg = str(exc)
    return DataError(msg if str(path) in msg else f"{path}: {msg}")


def _read_events(path, fmt=None):
    from .events import parse_event_file

    try:
        return parse_event_file(path, fmt)
    except (OSError, ValueError) as exc:
        raise _with_path(path, exc) from None


def _read_config(path):
    from .detector import DetectorConfig, load_config

    if path is None:
        return DetectorConfig()
    try:
        return load_config(path)
    except (OSError, ValueError) as exc:
        raise _with_path(path, exc) from None


def _load_model(ckpt, config_path):
    from .detector import DMANet
    from .nn.checkpoint import CheckpointError, load_checkpoint

    cfg = _read_config(config_path)
    model = DMANet(cfg)
    try:
        model.load_state_dict(load_checkpoint(ckpt))
    except (OSError, CheckpointError) as exc:
        raise _with_path(ckpt, exc) from None
    except (KeyError, ValueError) as exc:
        raise DataError(f"{ckpt}: does not match {config_path or 'default config'}: {exc}") from None
    return model


def _windows(stream, window_ms, t0=None):
    from .events import slice_windows

    return slice_windows(stream, int(round(window_ms * 1000)), t0=t0)


def _ensure_dir(path):
    Path(path).mkdir(parents=True, exist_ok=True)
    return Path(path)


# -- convert -----------------------------------------------------------------

def _convert_one(job):
    window, kind, bins, tau, encoder, batch_stats = job
    if kind == PILLAR_KIND:
        return encoder(window, training=batch_stats).data
    from .representations import ReprConfig, build

    return build(window, ReprConfig(kind, bins, tau)).data


def _pool_map(fn, jobs, n_jobs):
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, jobs))


def cmd_convert(args):
    from .encoder import EventPillars
    from .pillars import PillarConfig
    from .representations import write_grid

    seed = _seed(args)
    stream = _read_events(args.input, args.format)
    windows = _windows(stream, args.window_ms, t0=args.t0)
    encoder, batch_stats = None, False
    if args.repr == PILLAR_KIND:
        if (args.checkpoint is None) != (args.config is None):
            raise UsageError("--checkpoint and --config must be given together")
        if args.checkpoint is not None:
            encoder = _load_model(args.checkpoint, args.config).pillars
            if encoder is None:
                raise UsageError(f"--config {args.config}: model has no eventpillars encoder")
        else:
            pcfg = PillarConfig(args.max_events, args.max_pillars, args.slices, 1, seed)
            encoder = EventPillars(pcfg, args.channels, np.random.default_rng(seed))
            batch_stats = True  # no running statistics yet, so normalize per window
    jobs = [(w, args.repr, args.bins, args.tau_us, encoder, batch_stats) for w in windows]
    grids = _pool_map(_convert_one, jobs, args.jobs)
    out = _ensure_dir(args.out)
    for k, g in enumerate(grids):
        write_grid(g, out / f"window_{k:04d}.gtn")
    print(f"wrote {len(grids)} {args.repr} grids to {out}")
    return EXIT_OK


# -- bench -------------------------------------------------------------------

def _bench_fn(kind, bins):
    from .pillars import PillarConfig, build_pillars
    from .representations import ReprConfig, build

    if kind == "build_pillars":
        pcfg = PillarConfig()
        return lambda w: [build_pillars(w, pcfg, s) for s in (1, -1)]
    rc = ReprConfig(kind, bins)
    return lambda w: build(w, rc)


def _bench_worker(job):
    kind, bins, windows = job
    fn = _bench_fn(kind, bins)
    for w in windows:
        fn(w)


def bench(windows, kinds, repeat=3, jobs=1, bins=5):
    """Rows of (kind, events, best seconds, events per second); first run warms caches."""
    n = sum(len(w) for w in windows)
    rows = []
    for kind in kinds:
        if jobs > 1:
            parts = [(kind, bins, windows[i::jobs]) for i in range(jobs)]
            pool = ProcessPoolExecutor(max_workers=jobs)
            run = lambda: list(pool.map(_bench_worker, parts))  # noqa: E731
        else:
            pool = None
            run = lambda: _bench_worker((kind, bins, windows))  # noqa: E731
        try:
            run()
            best = float("inf")
            for _ in range(max(1, repeat)):
                t = time.perf_counter()
                run()
                best = min(best, time.perf_counter() - t)
        finally:
            if pool is not None:
                pool.shutdown()
        rows.append((kind, n, best, n / best if best > 0 else float("inf")))
    return rows


def cmd_bench(args):
    from .events import SensorGeometry, random_window

    if args.input is not None:
        windows = _windows(_read_events(args.input, args.format), args.window_ms)
        src = str(args.input)
    else:
        if args.events < 1:
            raise UsageError("--events must be >= 1")
        geom = SensorGeometry(args.width, args.height)
        windows = [random_window(geom, args.events, int(args.window_ms * 1000), seed=_seed(args))]
        src = f"{args.events} random events on {args.width}x{args.height}"
    kinds = args.repr or list(KINDS) + ["build_pillars"]
    rows = bench(windows, kinds, args.repeat, args.jobs, args.bins)
    print(f"# {src}, {len(windows)} window(s), best of {args.repeat}, jobs={args.jobs}")
    print(f"{'representation':<18} {'events':>10} {'seconds':>10} {'events/s':>14}")
    for kind, n, sec, rate in rows:
        print(f"{kind:<18} {n:>10d} {sec:>10.4f} {rate:>14.0f}")
    return EXIT_OK


# -- synth -------------------------------------------------------------------

def cmd_synth(args):
    from .detector.data import random_scene
    from .events import EventStream, generate_synthetic, load_scene, save_scene, write_event_file, write_gt_file

    seed = _seed(args)
    if args.scene is not None:
        try:
            spec = load_scene(args.scene)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise _with_path(args.scene, exc) from None
    else:
        spec = random_scene(np.random.default_rng(seed), args.size, args.windows,
                            int(args.window_ms * 1000), seed=seed)
    windows, labels = generate_synthetic(spec, int(args.window_ms * 1000))
    ev = [w.events for w in windows]
    stream = EventStream(*(np.concatenate([getattr(e, k) for e in ev]) for k in "xytp"), spec.geometry)
    out = _ensure_dir(args.out_dir)
    name = "events.evb" if args.format == "bin" else "events.evcsv"
    write_event_file(stream, out / name, args.format)
    write_gt_file([g for ls in labels for g in ls], out / "gt.csv")
    save_scene(spec, out / "scene.json")
    print(f"wrote {len(stream)} events, {len(windows)} windows to {out / name}")
    return EXIT_OK


# -- train -------------------------------------------------------------------

def _write_losses(rows, path):
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "lr", "total", "cls", "box"])
        for r in rows:
            w.writerow([r[0], f"{r[1]:.8g}", f"{r[2]:.8g}", f"{r[3]:.8g}", f"{r[4]:.8g}"])


def cmd_train(args):
    from .detector import DMANet, evaluate, make_anchors, save_config, train_sequences
    from .detector.data import make_benchmark, overfit_scene, prepare
    from .nn.checkpoint import save_checkpoint
    from .plotting import plot_loss

    cfg = _read_config(args.config)
    updates = {}
    if args.seed is not None or "EVPK_SEED" in os.environ:
        updates["seed"] = _seed(args)
    for key in ("epochs", "steps", "memory", "lr"):
        if getattr(args, key) is not None:
            updates[key] = getattr(args, key)
    try:
        cfg = cfg.replace(**updates)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    anchors = make_anchors(cfg)
    if args.data == "overfit":
        train = test = [prepare(overfit_scene(cfg.data_seed, cfg.input_size), cfg, anchors)]
    else:
        train, test = make_benchmark(cfg, anchors)
    model = DMANet(cfg)
    result = train_sequences(model, train)
    out = _ensure_dir(args.out)
    save_checkpoint(out / "model.ckpt", model.state_dict())
    save_config(cfg, out / "config.txt")
    _write_losses(result.losses, out / "loss.csv")
    plot_loss(result.losses, out / "loss.png")
    report = evaluate(model, test)
    (out / "eval.txt").write_text(report.report(), encoding="ascii")
    first, last = result.totals[0], result.totals[-1]
    print(f"{len(result.losses)} steps, loss {first:.4f} -> {last:.4f}, "
          f"mAP@0.5={report.map50:.4f} mAP@0.5:0.95={report.map:.4f}; wrote {out}")
    return EXIT_OK


# -- detect ------------------------------------------------------------------

def cmd_detect(args):
    from .detector import make_anchors, predict_sequence
    from .detector.data import Sequence, attach_inputs
    from .evalmap import write_detections

    model = _load_model(args.checkpoint, args.config)
    cfg = model.config
    windows = _windows(_read_events(args.events, args.format), cfg.window_ms, t0=args.t0)
    seq = attach_inputs(Sequence(windows, [[] for _ in windows]), cfg, make_anchors(cfg))
    dets = [d for ws in predict_sequence(model, seq) for d in ws]
    write_detections(dets, args.out)
    print(f"{len(dets)} detections over {len(windows)} windows -> {args.out}")
    return EXIT_OK


# -- eval --------------------------------------------------------------------

def cmd_eval(args):
    from .evalmap import map_coco, pr_curve, read_detections
    from .events import parse_gt_file

    try:
        dets = read_detections(args.dets)
    except (OSError, ValueError) as exc:
        raise _with_path(args.dets, exc) from None
    try:
        gts = parse_gt_file(args.gt)
    except (OSError, ValueError) as exc:
        raise _with_path(args.gt, exc) from None
    result = map_coco(dets, gts)
    text = result.report()
    if args.out:
        Path(args.out).write_text(text, encoding="ascii")
    sys.stdout.write(text)
    if args.plot:
        from .plotting import plot_pr

        curves = {f"class {c}": pr_curve(dets, gts, c) for c in sorted(result.ap)}
        plot_pr(curves, args.plot)
    return EXIT_OK


# -- gradcheck ---------------------------------------------------------------

def cmd_gradcheck(args):
    from .gradsuite import CASES, run_suite

    cases = args.case or list(CASES)
    res = run_suite(range(args.seeds), cases, base_seed=_seed(args))
    worst = 0.0
    for name, (err, s) in res.items():
        flag = "ok" if err < args.tol else "FAIL"
        print(f"{name:<22} max_rel_err={err:.3e} (seed {s}) {flag}")
        worst = max(worst, err)
    print(f"overall max_rel_err={worst:.3e} over {args.seeds} seeds")
    return EXIT_OK if worst < args.tol else EXIT_NUMERIC


# -- sweep-pillars -----------------------------------------------------------

def cmd_sweep(args):
    from .detector import make_anchors, pillar_sweep, saturation_k
    from .detector.data import make_benchmark

    model = _load_model(args.checkpoint, args.config)
    cfg = model.config
    if cfg.representation != PILLAR_KIND:
        raise UsageError(f"--config {args.config}: model uses {cfg.representation}, not eventpillars")
    n_test = args.sequences if args.sequences is not None else cfg.test_sequences
    _, test = make_benchmark(cfg, make_anchors(cfg), n_test=n_test, test_only=True)
    rows = pillar_sweep(model, test, args.ks)
    ks, maps = [k for k, _ in rows], [r.map50 for _, r in rows]
    sat = saturation_k(ks, maps)
    with open(args.out, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh)
        w.writerow(["max_pillars", "map50", "map"])
        for k, r in rows:
            w.writerow([k, f"{r.map50:.6f}", f"{r.map:.6f}"])
    for k, r in rows:
        print(f"K={k:<8d} mAP@0.5={r.map50:.4f} mAP@0.5:0.95={r.map:.4f}")
    print(f"saturation K={sat}")
    if args.plot:
        from .plotting import plot_sweep

        plot_sweep(ks, maps, args.plot, saturation=sat)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def _int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return vals


def build_parser():
    p = _Parser(prog="evpk", description="Event-camera representations and a recurrent event detector.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def seed_flag(sp):
        sp.add_argument("--seed", type=int, default=None, help="RNG seed (default: $EVPK_SEED or 0)")

    def fmt_flag(sp):
        sp.add_argument("--format", choices=("csv", "bin"), default=None,
                        help="event file format (default: from extension, .evb/.bin are binary)")

    c = sub.add_parser("convert", help="event file -> one GTN1 grid file per window")
    c.add_argument("--in", dest="input", required=True, help="input event file")
    fmt_flag(c)
    c.add_argument("--repr", required=True, choices=KINDS + (PILLAR_KIND,), metavar="KIND",
                   help=f"representation, one of: {', '.join(KINDS + (PILLAR_KIND,))}")
    c.add_argument("--bins", type=_positive_int, default=5, help="voxel_grid bins (default 5)")
    c.add_argument("--tau-us", type=_positive_float, default=None, help="time_surface decay (default: window length)")
    c.add_argument("--window-ms", type=_positive_float, default=50.0, help="window length in ms (default 50)")
    c.add_argument("--t0", type=int, default=None, help="first window start in us (default: first event)")
    c.add_argument("--max-events", type=_positive_int, default=5, help="eventpillars: events per pillar M")
    c.add_argument("--max-pillars", type=_positive_int, default=100_000, help="eventpillars: pillar budget K")
    c.add_argument("--slices", type=_positive_int, default=1, help="eventpillars: temporal slices D")
    c.add_argument("--channels", type=_positive_int, default=16, help="eventpillars: channels per polarity")
    c.add_argument("--checkpoint", default=None, help="eventpillars: trained model (with --config)")
    c.add_argument("--config", default=None, help="eventpillars: config of --checkpoint")
    c.add_argument("--out", required=True, help="output directory")
    c.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")
    seed_flag(c)
    c.set_defaults(func=cmd_convert)

    b = sub.add_parser("bench", help="events/s per representation")
    b.add_argument("--in", dest="input", default=None, help="event file (default: random events)")
    fmt_flag(b)
    b.add_argument("--events", type=int, default=1_000_000, help="random event count (default 1e6)")
    b.add_argument("--width", type=_positive_int, default=640)
    b.add_argument("--height", type=_positive_int, default=480)
    b.add_argument("--repr", action="append", choices=KINDS + ("build_pillars",), metavar="KIND",
                   help="repeatable; default: every kind plus build_pillars")
    b.add_argument("--bins", type=_positive_int, default=5)
    b.add_argument("--window-ms", type=_positive_float, default=50.0)
    b.add_argument("--repeat", type=_positive_int, default=3, help="timed runs, best is reported")
    b.add_argument("--jobs", type=_positive_int, default=1)
    seed_flag(b)
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("synth", help="scene -> event file, gt.csv and scene.json")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene", help="scene JSON file")
    src.add_argument("--random", action="store_true", help="draw a random benchmark scene from --seed")
    s.add_argument("--size", type=_positive_int, default=64, help="random scene sensor side")
    s.add_argument("--windows", type=_positive_int, default=10, help="random scene length in windows")
    s.add_argument("--window-ms", type=_positive_float, default=50.0)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--format", choices=("csv", "bin"), default="csv")
    seed_flag(s)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train on synthetic data; writes checkpoint, config and loss curve")
    t.add_argument("--config", default=None, help="key=value config file (default: built-in defaults)")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--data", choices=("benchmark", "overfit"), default="benchmark",
                   help="benchmark: train/test split; overfit: one sequence used for both")
    t.add_argument("--epochs", type=_positive_int, default=None)
    t.add_argument("--steps", type=_positive_int, default=None)
    t.add_argument("--memory", choices=("full", "lrm", "srm", "none"), default=None)
    t.add_argument("--lr", type=_positive_float, default=None)
    seed_flag(t)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", help="run a trained model over an event file")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--config", required=True)
    d.add_argument("--events", required=True)
    fmt_flag(d)
    d.add_argument("--t0", type=int, default=0, help="first window start in us (default 0)")
    d.add_argument("--out", required=True, help="detections CSV")
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("eval", help="detections CSV + GT file -> mAP report")
    e.add_argument("--dets", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--out", default=None, help="report file (always echoed to stdout)")
    e.add_argument("--plot", default=None, help="precision-recall PNG at IoU 0.5")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--seeds", type=_positive_int, default=20)
    g.add_argument("--case", action="append", choices=sorted(_case_names()), metavar="NAME",
                   help="repeatable; default: every case")
    g.add_argument("--tol", type=_positive_float, default=1e-4)
    seed_flag(g)
    g.set_defaults(func=cmd_gradcheck)

    w = sub.add_parser("sweep-pillars", help="mAP@0.5 against the pillar budget K")
    w.add_argument("--checkpoint", required=True)
    w.add_argument("--config", required=True)
    w.add_argument("--ks", type=_int_list, default=[16, 32, 64, 128, 256, 512, 1024, 2048, 4096],
                   help="comma-separated K values")
    w.add_argument("--sequences", type=_positive_int, default=None, help="test sequences (default: config)")
    w.add_argument("--out", required=True, help="CSV of K, mAP")
    w.add_argument("--plot", default=None, help="PNG of the sweep")
    w.set_defaults(func=cmd_sweep)
    return p


def _case_names():
    from .gradsuite import CASES

    return CASES


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
