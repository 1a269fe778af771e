"""Command-line entry point.

Exit codes: 0 success, 1 usage error (bad arguments or configuration),
2 runtime error. Results go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as D
from .checkpoint import load_checkpoint
from .config import RunConfig, load_run_config
from .errors import ConfigError, ContractError
from .lbp import lbp_histogram, lbp_map, to_gray
from .models import build_model, count_parameters
from .spectral import fft2_array, next_power_of_two
from .tensor import Tensor, precision
from .train import RunSummary, evaluate, report, train

log = logging.getLogger("cmvit")
# every package error derives from ValueError
RUNTIME_ERRORS = (ValueError, OSError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with [model], [train], [data] sections")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable; wins over --config)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cmvit", description="Frequency-fusion ViT deepfake detectors")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="write a synthetic real/fake PPM corpus")
    p.add_argument("--n", type=int, required=True, help="images per class")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint, history and report")
    _add_config_args(p)
    p.add_argument("--data", help="dataset directory or manifest (overrides data.path)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--report", help="also write a report CSV here")

    p = sub.add_parser("infer", help="classify one PPM image")
    p.add_argument("image")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("lbp", help="LBP code plane (PGM) and histogram (CSV) of an image")
    p.add_argument("image")
    p.add_argument("--out", required=True, help="output prefix; writes PREFIX.pgm and PREFIX.csv")

    p = sub.add_parser("spectrum", help="log-scaled FFT magnitude of an image's luminance, as PGM")
    p.add_argument("image")
    p.add_argument("--out", required=True)

    p = sub.add_parser("params", help="print the trainable parameter count for a config")
    _add_config_args(p)

    p = sub.add_parser("gradcheck", help="run the float64 finite-difference suite")
    p.add_argument("--seeds", type=int, default=1, help="random instances per layer")
    p.add_argument("--layers-only", action="store_true")
    return parser


def _gray_from_file(path: str) -> np.ndarray:
    img = D.load_any(Path(path).read_bytes())
    return img if img.ndim == 2 else to_gray(img)


def cmd_gen_synth(args) -> int:
    manifest = D.gen_synthetic(args.n, args.size, args.seed, args.out)
    print(f"wrote {len(manifest)} images and manifest.csv to {args.out}")
    return 0


def _prepare_data(cfg: RunConfig, data_arg: str | None):
    path = data_arg or cfg.data.path
    if not path:
        raise ConfigError("no dataset given (use --data or [data] path)")
    manifest = D.open_dataset(path)
    if cfg.data.balance:
        manifest = D.balance_undersample(manifest, cfg.data.split_seed)
    return D.split(manifest, cfg.data.val_fraction, cfg.data.split_seed)


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_set, val_set = _prepare_data(cfg, args.data)
    D.write_manifest(train_set, out / "train.csv")
    D.write_manifest(val_set, out / "val.csv")
    with precision(cfg.precision):
        store = D.ImageStore(cfg.model.image_size)
        tc = dataclasses.replace(cfg.train, checkpoint=str(out / "model.cmvk"))
        result = train(cfg.model, tc, train_set, val_set, store, history_path=out / "history.csv")
        metrics = evaluate(result.model, val_set, store, tc.batch_size)
    summary = RunSummary.from_run(result.model, result, metrics, tc.batch_size)
    (out / "report.csv").write_text(report({cfg.model.arch: summary}))
    print(f"epochs {len(result.history)} best_epoch {result.best_epoch} "
          f"val_accuracy {metrics.accuracy:.4f} val_loss {metrics.mean_loss:.4f}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    manifest = D.open_dataset(args.data)
    with precision(model.parameters()[0].dtype):
        metrics = evaluate(model, manifest, batch_size=args.batch_size)
    print(f"accuracy {metrics.accuracy:.4f}")
    for c, f1 in enumerate(metrics.f1_per_class):
        print(f"f1_class{c} {f1:.4f}")
    print(f"mean_loss {metrics.mean_loss:.6f}")
    print(f"time_per_file {metrics.time_per_file:.6f}")
    if args.report:
        summary = RunSummary.from_run(model, None, metrics, args.batch_size)
        Path(args.report).write_text(report({model.cfg.arch: summary}))
    return 0


def cmd_infer(args) -> int:
    model = load_checkpoint(args.checkpoint).eval()
    img = D.load_ppm(Path(args.image).read_bytes())
    s = model.cfg.image_size
    if img.shape[:2] != (s, s):
        raise ContractError(f"{args.image}: image is {img.shape[1]}x{img.shape[0]}, model expects {s}x{s}")
    with precision(model.parameters()[0].dtype):
        x = Tensor(D.normalize(img).data[None])
        probs = model(x).data[0].astype(np.float64)
    label = D.CLASS_NAMES[int(probs.argmax())] if len(probs) == 2 else str(int(probs.argmax()))
    print("label,probability_real,probability_fake")
    print(f"{label},{probs[0]:.6f},{probs[1]:.6f}")
    return 0


def cmd_lbp(args) -> int:
    gray = _gray_from_file(args.image)
    codes = lbp_map(gray)
    hist = lbp_histogram(codes, normalize=False).astype(np.int64)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.pgm").write_bytes(D.encode_pgm(codes))
    lines = ["bin,count"] + [f"{b},{n}" for b, n in enumerate(hist)]
    Path(f"{prefix}.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {prefix}.pgm and {prefix}.csv")
    return 0


def cmd_spectrum(args) -> int:
    gray = _gray_from_file(args.image).astype(np.float64)
    h, w = gray.shape
    ph, pw = next_power_of_two(h), next_power_of_two(w)
    padded = np.zeros((ph, pw))
    padded[:h, :w] = gray
    mag = np.abs(fft2_array(padded))
    scaled = np.log1p(mag)
    top = scaled.max()
    pgm = np.zeros_like(scaled) if top == 0 else scaled / top * 255.0
    Path(args.out).write_bytes(D.encode_pgm(np.clip(np.rint(pgm), 0, 255).astype(np.uint8)))
    print(f"wrote {args.out} ({ph}x{pw})")
    return 0


def cmd_params(args) -> int:
    cfg = load_run_config(args.config, args.set)
    print(count_parameters(build_model(cfg.model)))
    return 0


def cmd_gradcheck(args) -> int:
    from .verify import run_suite

    results = run_suite(seeds=range(args.seeds), include_models=not args.layers_only)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 2 if failed else 0


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "lbp": cmd_lbp,
    "spectrum": cmd_spectrum,
    "params": cmd_params,
    "gradcheck": cmd_gradcheck,
}


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    if args.command is None:
        print(parser.format_usage(), file=sys.stderr, end="")
        return 1
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
