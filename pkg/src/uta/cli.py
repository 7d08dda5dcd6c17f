"""Command line entry point: ``uta {train,eval,predict,rank-depth,ablate,convert-backbone}``.

Every Config key is also a flag (``--lr-head 0.01``, ``--use-gms false``);
flags override values from ``--config``. Failures exit with status 1 and a
single ``error: {json}`` line on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from uta.core import Config, _parse_value


def _add_config_flags(p):
    p.add_argument("--config", help="key = value config file")
    for f in fields(Config):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", metavar="VALUE")


def _config(args) -> Config:
    overrides = {k[4:]: _parse_value(v) for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    for key in ("train_roots", "test_roots", "scales", "gammas", "lambdas", "aspp_rates"):
        if key in overrides and not isinstance(overrides[key], (list, tuple)):
            value = overrides[key]
            overrides[key] = [_parse_value(v) for v in value.split(",")] if isinstance(value, str) else [value]
    if args.config:
        return Config.from_file(args.config, **overrides)
    return Config(**overrides)


def cmd_train(args):
    from uta.harness.train import train

    cfg = _config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    logging.getLogger("uta").info("config: %s", cfg.ablation_string())
    result = train(cfg, variant=args.variant, resume=args.resume, log_every=1)
    print(result.checkpoint)


def cmd_eval(args):
    from uta.data import SplitSpec
    from uta.harness.infer import evaluate

    split = SplitSpec.read(args.split) if args.split else None
    reports = evaluate(args.ckpt, args.datasets, args.out, split, args.resize)
    for r in reports:
        print(json.dumps(r.row()))


def cmd_predict(args):
    from uta.harness.infer import predict, predict_dir

    src = Path(args.input)
    if src.is_dir():
        for p in predict_dir(args.ckpt, src, args.out, resize=args.resize):
            print(p)
    else:
        print(predict(args.ckpt, src, args.out, args.resize))


def cmd_rank(args):
    from uta.data import SplitSpec
    from uta.harness.experiment import depth_consistency_rank
    from uta.harness.train import load_training_samples

    cfg = _config(args)
    samples = load_training_samples(cfg, "dual")
    split = SplitSpec.read(cfg.split_file) if cfg.split_file else None
    ranked, scores, _ = depth_consistency_rank(samples, args.dual, args.depth_only, split, out_dir=args.out)
    for sid in ranked[: args.show]:
        print(f"{sid}\t{scores[sid]:.6f}")


def cmd_ablate(args):
    from uta.harness.experiment import run_ablation

    cfg = _config(args)
    for row in run_ablation(cfg, args.out):
        print(json.dumps(row))


def cmd_convert(args):
    from uta.backbone import convert_torchvision_resnet50

    convert_torchvision_resnet50(args.src, args.dst)
    print(args.dst)


def build_parser():
    parser = argparse.ArgumentParser(prog="uta")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _add_config_flags(p)
    p.add_argument("--variant", default="uta", choices=["uta", "dual", "depth_only"])
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on dataset roots")
    p.add_argument("ckpt")
    p.add_argument("datasets", nargs="+")
    p.add_argument("--out", default="runs/eval")
    p.add_argument("--split")
    p.add_argument("--resize", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="saliency map(s) from RGB only")
    p.add_argument("ckpt")
    p.add_argument("input", help="an image, or a dataset root with rgb/")
    p.add_argument("out", help="output png, or output directory for a dataset root")
    p.add_argument("--resize", type=int)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("rank-depth", help="rank training samples by depth-saliency consistency")
    _add_config_flags(p)
    p.add_argument("--dual", required=True, help="dual-input checkpoint")
    p.add_argument("--depth-only", required=True, help="depth-only checkpoint")
    p.add_argument("--out", default="runs/rank")
    p.add_argument("--show", type=int, default=10)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("ablate", help="train and evaluate every component ablation row")
    _add_config_flags(p)
    p.add_argument("--out", default="runs/ablation")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("convert-backbone", help="repack a torchvision ResNet-50 state_dict")
    p.add_argument("src")
    p.add_argument("dst")
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001
        print("error: " + json.dumps({"type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        if args.verbose:
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
