"""Command-line driver: gen-data / train / eval / ablate / stream / grad-check."""

import argparse
import dataclasses
import os
import sys

from .config import RunConfig, load_config
from .data import export_annotations, load_records, save_dataset, synth_generate
from .metrics import format_report
from .model import VARIANTS
from .tensor import ContractError


def _build_parser():
    p = argparse.ArgumentParser(
        prog="pycat4",
        description="Desk-scale coordinate-attentive 3D pose estimation.")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--count", type=int, required=True,
                   help="samples (or sequences with --video)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--video", action="store_true",
                   help="emit smooth sequences instead of stills")
    g.add_argument("--frames", type=int, default=5,
                   help="frames per sequence in video mode")
    g.add_argument("--img-size", type=int, default=112)
    g.add_argument("--out", required=True, help="output directory")

    t = sub.add_parser("train", help="train one variant")
    t.add_argument("--config", help="flat key=value config file")
    t.add_argument("--variant", choices=VARIANTS,
                   help="override the config's variant")
    t.add_argument("--data", required=True,
                   help="dataset .npz or annotations .json")
    t.add_argument("--out", required=True, help="run directory")

    e = sub.add_parser("eval", help="score a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--mode", choices=("2d", "3d"), default="3d")
    e.add_argument("--report", choices=("csv", "txt"), default="txt")
    e.add_argument("--out", help="also write the table here")
    e.add_argument("--oracle", action="store_true",
                   help="score the ground truth against itself (plumbing check)")

    a = sub.add_parser("ablate", help="train and score every variant")
    a.add_argument("--config")
    a.add_argument("--out", required=True)
    a.add_argument("--data", help="training dataset (default: synthesized)")
    a.add_argument("--eval-data", help="evaluation dataset (default: synthesized)")
    a.add_argument("--train-count", type=int, default=16)
    a.add_argument("--eval-count", type=int, default=8)

    s = sub.add_parser("stream", help="rolling-window inference over frames")
    s.add_argument("--frames", required=True, help="directory of image frames")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--window", type=int, default=None, help="temporal window")
    s.add_argument("--out", help="write JSON lines here instead of stdout")

    c = sub.add_parser("grad-check", help="finite-difference gradient audit")
    c.add_argument("--module", default=None,
                   help="restrict to one name prefix, e.g. swin")
    return p


def _load_cfg(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "variant", None):
        cfg = dataclasses.replace(cfg, variant=args.variant)
    cfg.validate()
    return cfg


def cmd_gen_data(args):
    records = synth_generate(args.count, seed=args.seed,
                             img_size=args.img_size, video=args.video,
                             t=args.frames)
    os.makedirs(args.out, exist_ok=True)
    npz = os.path.join(args.out, "dataset.npz")
    save_dataset(records, npz)
    export_annotations(records, args.out)
    print(f"wrote {len(records)} records to {npz} "
          f"(+ images/ and annotations.json)")
    return 0


def cmd_train(args):
    from .training import train
    cfg = _load_cfg(args)
    records = load_records(args.data)
    res = train(cfg, records, out_dir=args.out, log=print)
    print(f"data-order digest: {res.digest}")
    print(f"final loss: {res.curve[-1]['total']:.6f}")
    print(f"checkpoint: {res.ckpt_path}")
    return 0


def cmd_eval(args):
    from .training import evaluate, load_model
    records = load_records(args.data)
    if args.oracle:
        rep = evaluate(None, records, args.mode, oracle=True)
    else:
        model, cfg = load_model(args.ckpt)
        rep = evaluate(model, records, args.mode, cfg)
    table = format_report([rep], kind=args.mode, fmt=args.report)
    print(table)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(table if table.endswith("\n") else table + "\n")
    return 0


def cmd_ablate(args):
    from .training import ablate
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg.validate()
    if args.data:
        train_records = load_records(args.data)
    else:
        train_records = synth_generate(args.train_count, seed=cfg.seed,
                                       img_size=cfg.img_size)
    if args.eval_data:
        eval_records = load_records(args.eval_data)
    else:
        eval_records = synth_generate(args.eval_count, seed=cfg.seed + 1,
                                      img_size=cfg.img_size)
    res = ablate(cfg, train_records, eval_records, out_dir=args.out, log=print)
    print(f"data-order digest (all variants): {res.digest}")
    print()
    print(res.tables["3d_txt"])
    print()
    print(res.tables["2d_txt"])
    print(f"\nelapsed: {res.seconds:.1f}s; tables written to {args.out}")
    return 0


def cmd_stream(args):
    from .stream import stream
    from .training import load_model
    model, cfg = load_model(args.ckpt)
    res = stream(args.frames, model, cfg, window=args.window,
                 out_path=args.out, log=lambda m: print(m, file=sys.stderr))
    if args.out:
        print(f"wrote {res.frames} records to {args.out}", file=sys.stderr)
    else:
        for line in res.lines:
            print(line)
    print(res.report, file=sys.stderr)
    return 0


def cmd_grad_check(args):
    from .gradcheck import format_results, run_checks
    results = run_checks(args.module)
    print(format_results(results))
    return 0 if all(r.passed for r in results) else 1


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "stream": cmd_stream,
    "grad-check": cmd_grad_check,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.cmd](args)
    except ContractError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
