"""Command-line entry point: ``s2rc <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .errors import ConfigError, S2RCError

log = logging.getLogger("s2rcgcn")


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="random seed (overrides the config)")
    parser.add_argument("--config", type=Path, default=default, help="JSON file of training options")
    parser.add_argument("--out", type=Path, default=default, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="s2rc", description="Spectral-spatial graph contrastive classifier for hyperspectral cubes.")
    _global_flags(p, suppress=False)
    p.add_argument("-v", "--verbose", action="store_true", help="log every epoch to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        _global_flags(sp, suppress=True)
        return sp

    g = add("gen-synth", "write a synthetic dataset bundle")
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--width", type=int, default=64)
    g.add_argument("--bands", type=int, default=32)
    g.add_argument("--classes", type=int, default=7)
    g.add_argument("--regions", type=int, default=3, help="regions per class")
    g.add_argument("--smoothness", type=int, default=3, help="sinusoids per signature")
    g.add_argument("--sigma", type=float, default=0.05, help="Gaussian noise level")
    g.add_argument("--mix", action="store_true", help="mix spectra at region boundaries")

    t = add("train", "train on a dataset and write checkpoint, log and report")
    t.add_argument("--data", type=Path, required=True, help="dataset bundle directory")
    t.add_argument("--map", action="store_true", help="also render map.ppm")

    e = add("eval", "evaluate a checkpoint on its held-out pixels")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)

    m = add("predict-map", "render a classification map")
    m.add_argument("--checkpoint", type=Path, required=True)
    m.add_argument("--data", type=Path, required=True)

    a = add("ablate", "compare the full model with variants (I), (II), (III)")
    a.add_argument("--data", type=Path, required=True)
    a.add_argument("--runs", type=int, default=5, help="seeds per variant, starting at --seed")

    s = add("sweep", "test OA over a grid of k and w")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--ks", type=int, nargs="+", default=[5, 10, 15, 20, 25, 30])
    s.add_argument("--ws", type=int, nargs="+", default=[5, 7, 9, 11, 13])
    return p


def _config(args):
    from .trainer import TrainConfig

    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    return cfg


def _out(args) -> Path:
    if args.out is None:
        raise ConfigError("--out <dir> is required for this command")
    return args.out


def _report_text(report) -> str:
    d = report.to_dict()
    d.pop("seconds")
    return json.dumps(d, indent=2, sort_keys=True) + "\n"


def cmd_gen_synth(args) -> int:
    from .dataio import save_dataset
    from .render import default_palette
    from .synth import SynthSpec, generate_synthetic

    spec = SynthSpec(
        height=args.height, width=args.width, bands=args.bands, classes=args.classes,
        regions_per_class=args.regions, smoothness=args.smoothness, noise_sigma=args.sigma,
        mix_boundaries=args.mix, seed=args.seed if args.seed is not None else 0,
    )
    out = save_dataset(generate_synthetic(spec), _out(args), palette=default_palette(spec.classes).tolist())
    print(f"wrote {out}")
    return 0


def cmd_train(args) -> int:
    from .dataio import load_dataset
    from .trainer import run_experiment

    out = _out(args)
    result = run_experiment(_config(args), load_dataset(args.data), out_dir=out, render=args.map)
    print(_report_text(result.report), end="")
    log.info("finished in %.1f s", result.report.seconds)
    return 0


def _restore(args):
    from .checkpoint import load_checkpoint
    from .dataio import load_dataset
    from .trainer import prepare_from_state

    state = load_checkpoint(args.checkpoint)
    return state, prepare_from_state(state, load_dataset(args.data))


def cmd_eval(args) -> int:
    from .dataio import atomic_write
    from .trainer import evaluate

    state, prep = _restore(args)
    text = _report_text(evaluate(state, prep))
    if args.out is not None:
        atomic_write(args.out / "report.json", text.encode())
    print(text, end="")
    return 0


def cmd_predict_map(args) -> int:
    from .dataio import atomic_write, load_palette
    from .render import default_palette, render_map
    from .trainer import predict_scene

    state, prep = _restore(args)
    palette = load_palette(args.data) or default_palette(state.n_classes)
    path = _out(args) / "map.ppm"
    atomic_write(path, render_map(predict_scene(state, prep), palette))
    print(f"wrote {path}")
    return 0


def cmd_ablate(args) -> int:
    from .dataio import atomic_write, load_dataset
    from .trainer import format_table, run_ablation

    cfg = _config(args)
    if args.runs < 1:
        raise ConfigError("--runs must be >= 1")
    rows = run_ablation(cfg, load_dataset(args.data), [cfg.seed + i for i in range(args.runs)])
    table = format_table(rows)
    if args.out is not None:
        atomic_write(args.out / "ablation.csv", table.encode())
    print(table, end="")
    return 0


def cmd_sweep(args) -> int:
    from .dataio import atomic_write, load_dataset
    from .trainer import sweep_sensitivity

    cfg = _config(args)
    grid = sweep_sensitivity(cfg, load_dataset(args.data), args.ks, args.ws)
    lines = ["k,w,OA"] + [f"{k},{w},{oa:.6f}" for (k, w), oa in grid.items()]
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        atomic_write(args.out / "sweep.csv", text.encode())
    print(text, end="")
    return 0


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict-map": cmd_predict_map,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except S2RCError as exc:
        print(f"s2rc {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"s2rc {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
