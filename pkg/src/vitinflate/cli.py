"""``vitinflate`` command line.

Subcommands: ``inflate``, ``predict``, ``evaluate``, ``verify``, ``flops``.
Every flag may also come from a JSON file given with ``--options``; keys are
the long flag names with dashes or underscores, and flags given on the
command line win.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 shape or validation
error, 4 verification failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import checkpoint_io as cio
from .errors import ArchiveError, DegenerateRangeError, MissingTensorError, ShapeError
from .inflation import ChannelMode, InflationSpec, Strategy, inflate_checkpoint
from .metrics import dice_report
from .seg_pipeline import PreprocessSpec, Target, WindowSpec, predict_volume
from .verification import verify_checkpoint
from .vit3d import ViTConfig, config_from_checkpoint, count_flops, random_checkpoint

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INVALID, EXIT_VERIFY = 0, 1, 2, 3, 4

# option defaults per subcommand; None in argparse marks "not given"
DEFAULTS = {
    "inflate": {"strategy": "centering", "depth": 5, "channels": "keep", "seed": 0, "config": None},
    "predict": {"window": None, "stride": 1, "target": "center", "threads": 0, "config": None,
                "clip": None, "mri": False, "no_normalize": False},
    "evaluate": {"classes": None, "out": None},
    "verify": {"config": None, "depth": 5, "inflated": None, "seed": 0, "windows": 3},
    "flops": {"config": None, "compare": None, "preset": None, "head": None},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vitinflate", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("inflate", help="inflate a 2D checkpoint to K-slice windows")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--depth", type=int)
    p.add_argument("--channels", help="keep | collapse | average:C")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="ViT config JSON (default: checkpoint metadata)")

    p = sub.add_parser("predict", help="segment a volume")
    p.add_argument("model")
    p.add_argument("volume")
    p.add_argument("output")
    p.add_argument("--window", type=int, help="slices per window (default: model kernel depth)")
    p.add_argument("--stride", type=int, help="slice spacing inside a window")
    p.add_argument("--target", choices=[t.value for t in Target])
    p.add_argument("--threads", type=int, help="worker threads (0 = all cores)")
    p.add_argument("--config")
    p.add_argument("--clip", help="intensity clip range 'lo,hi'")
    p.add_argument("--mri", action="store_const", const=True, help="normalize by [0, max]")
    p.add_argument("--no-normalize", action="store_const", const=True, help="volume is already in [-1, 1]")

    p = sub.add_parser("evaluate", help="Dice report for a predicted mask")
    p.add_argument("prediction")
    p.add_argument("label")
    p.add_argument("--classes", help="comma-separated class ids (default: foreground present)")
    p.add_argument("--out", help="write the JSON report here instead of stdout")

    p = sub.add_parser("verify", help="check inflation equivalences on a checkpoint")
    p.add_argument("checkpoint", nargs="?", help="2D checkpoint (default: random from --config)")
    p.add_argument("--config")
    p.add_argument("--depth", type=int)
    p.add_argument("--inflated", help="centering-inflated checkpoint to check instead of inflating")
    p.add_argument("--seed", type=int)
    p.add_argument("--windows", type=int, help="random windows per check")

    p = sub.add_parser("flops", help="analytical FLOPs of one or two configs")
    p.add_argument("--config")
    p.add_argument("--compare")
    p.add_argument("--preset", choices=["vit-b16"], help="ViT-B/16 512x512: C=3,K=1 vs C=1,K=5")
    p.add_argument("--head", type=int, help="include a decoder head predicting this many slices")

    for p in sub.choices.values():
        p.add_argument("--options", help="JSON file of flag values")
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    args = build_parser().parse_args(argv)
    defaults = DEFAULTS[args.command]
    overrides = {}
    if args.options:
        try:
            overrides = json.loads(Path(args.options).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"--options {args.options}: invalid JSON ({exc})") from None
        if not isinstance(overrides, dict):
            raise UsageError("--options file must hold a JSON object")
        overrides = {k.replace("-", "_"): v for k, v in overrides.items()}
        unknown = set(overrides) - set(defaults)
        if unknown:
            raise UsageError(f"--options: unknown keys for {args.command}: {sorted(unknown)}")
    for key, default in defaults.items():
        if getattr(args, key) is None:
            setattr(args, key, overrides.get(key, default))
    return args


def _vit_config(path: str | None, ckpt: cio.Checkpoint | None = None) -> ViTConfig:
    if path:
        try:
            return ViTConfig.from_dict(json.loads(Path(path).read_text()))
        except (json.JSONDecodeError, TypeError) as exc:
            raise ValueError(f"bad config {path}: {exc}") from None
    if ckpt is None:
        raise UsageError("a --config is required")
    return config_from_checkpoint(ckpt)


def parse_channels(text: str) -> tuple[ChannelMode, int | None]:
    if text in ("keep", "collapse"):
        return ChannelMode(text), None
    if text.startswith("average:"):
        try:
            return ChannelMode.AVERAGE, int(text.split(":", 1)[1])
        except ValueError:
            pass
    raise UsageError(f"--channels must be keep, collapse or average:C, got {text!r}")


def cmd_inflate(args) -> int:
    ckpt = cio.load_checkpoint(args.input)
    cfg = _vit_config(args.config, ckpt)
    mode, channels = parse_channels(args.channels)
    spec = InflationSpec(Strategy(args.strategy), args.depth, mode, channels, args.seed)
    out = inflate_checkpoint(ckpt, cfg, spec)
    cio.save(out, args.output)
    summary = {
        "tensors_in": len(ckpt.tensors),
        "tensors_out": len(out.tensors),
        "embed_kernel_before": list(ckpt["embed.kernel"].shape),
        "embed_kernel_after": list(out["embed.kernel"].shape),
        "inflation_spec": json.loads(spec.to_json()),
        "output": str(args.output),
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt = cio.load_checkpoint(args.model)
    volume = cio.load_volume(args.volume)
    if not isinstance(volume, cio.Volume):
        raise ValueError(f"{args.volume} holds a mask, not an intensity volume")
    cfg = _vit_config(args.config, ckpt)
    kernel = ckpt["embed.kernel"]
    window = args.window or (kernel.shape[2] if kernel.ndim == 5 else 1)
    w = WindowSpec(window, args.stride, Target(args.target))
    if args.mri:
        pre = PreprocessSpec.mri()
    elif args.clip:
        try:
            lo, hi = (float(x) for x in str(args.clip).split(","))
        except ValueError:
            raise UsageError(f"--clip must be 'lo,hi', got {args.clip!r}") from None
        pre = PreprocessSpec(lo, hi)
    else:
        pre = None
    mask = predict_volume(volume, ckpt, cfg, w, pre, threads=args.threads or None,
                          normalize=not args.no_normalize)
    cio.save(mask, args.output)
    _log(f"wrote {args.output}: mask {list(mask.data.shape)}, {cfg.num_classes} classes")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pred = cio.load_volume(args.prediction)
    label = cio.load_volume(args.label)
    if not (isinstance(pred, cio.SegmentationMask) and isinstance(label, cio.SegmentationMask)):
        raise ValueError("evaluate needs two mask archives")
    classes = None
    if args.classes:
        try:
            classes = [int(c) for c in str(args.classes).split(",")] if isinstance(args.classes, str) else list(args.classes)
        except ValueError:
            raise UsageError(f"--classes must be comma-separated integers, got {args.classes!r}") from None
    report = dice_report(pred, label, classes)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.checkpoint:
        ckpt = cio.load_checkpoint(args.checkpoint)
        cfg = _vit_config(args.config, ckpt)
    else:
        cfg = _vit_config(args.config) if args.config else ViTConfig(
            image_h=8, image_w=8, patch_p=4, in_channels=3, hidden_d=16, layers_l=2, heads=2, num_classes=3
        )
        ckpt = random_checkpoint(cfg, seed=args.seed)
        _log(f"generated random checkpoint (seed {args.seed})")
    inflated = cio.load_checkpoint(args.inflated) if args.inflated else None
    results = verify_checkpoint(ckpt, cfg, args.depth, inflated, seed=args.seed, n_windows=args.windows)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def vit_b16_preset() -> tuple[ViTConfig, ViTConfig]:
    return ViTConfig.base(in_channels=3, window_k=1), ViTConfig.base(in_channels=1, window_k=5)


def cmd_flops(args) -> int:
    if args.preset:
        configs = list(vit_b16_preset())
    else:
        configs = [_vit_config(args.config)]
        if args.compare:
            configs.append(_vit_config(args.compare))
    flops = [count_flops(c, args.head) for c in configs]
    out = {"flops": flops, "gflops": [f / 1e9 for f in flops]}
    if len(flops) == 2:
        out["ratio"] = flops[1] / flops[0]
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "inflate": cmd_inflate,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "verify": cmd_verify,
    "flops": cmd_flops,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except OSError as exc:
        _log(f"error: {exc.strerror or exc}: {exc.filename}" if exc.filename else f"error: {exc}")
        return EXIT_IO
    except (ArchiveError, ShapeError, MissingTensorError, DegenerateRangeError, ValueError, KeyError) as exc:
        _log(f"error: {exc}")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
