"""Command-line entry point.

Exit codes: 0 success, 1 selftest failure, 2 bad input (missing file,
malformed data), 3 model/config mismatch, 4 I/O error while writing.
Machine-readable results go to stdout, messages to stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .config import ModelConfig
from .errors import InputError, IntegrityError, VersionError
from .lvid import load_lvid, save_lvid, to_signed, to_uint8
from .metrics import cost_model, psnr, ssim
from .model import LeanVAE, passthrough_model
from .ntsr import load_ntsr, save_ntsr
from .tiling import frame_chunk_sizes, latent_chunk_sizes, split_frames, stream_decode, stream_encode

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_MODEL, EXIT_IO = 0, 1, 2, 3, 4


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _require(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CLIError(f"no such file: {path}", EXIT_INPUT)
    return p


def _read_toml(path: str) -> dict:
    try:
        with open(_require(path), "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise CLIError(f"{path}: invalid TOML: {exc}", EXIT_INPUT) from exc


def _model_config(path: str | None, seed: int | None) -> ModelConfig:
    data = _read_toml(path).get("model", {}) if path else {}
    try:
        config = ModelConfig.from_dict(data)
    except (VersionError, ValueError, TypeError) as exc:
        raise CLIError(f"bad model config: {exc}", EXIT_MODEL) from exc
    return config.replace(seed=seed) if seed is not None else config


def _load_model(path: str) -> LeanVAE:
    try:
        return LeanVAE.load(_require(path))
    except (VersionError, IntegrityError) as exc:
        raise CLIError(f"{path}: cannot use checkpoint: {exc}", EXIT_MODEL) from exc


def _load_video(path: str, dtype) -> np.ndarray:
    try:
        return to_signed(load_lvid(_require(path)), dtype)
    except (IntegrityError, InputError) as exc:
        raise CLIError(f"{path}: {exc}", EXIT_INPUT) from exc


def _write(fn, path: str, *args) -> None:
    try:
        fn(path, *args)
    except OSError as exc:
        raise CLIError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def _emit(obj) -> None:
    print(json.dumps(obj))


def _encode(model: LeanVAE, video: np.ndarray, chunk: int | None) -> np.ndarray:
    if chunk:
        sizes = frame_chunk_sizes(video.shape[0], chunk)
        return np.concatenate([g.z.data for g in stream_encode(model, split_frames(video, sizes))], axis=0)
    return model.encode(video).z.data


def _decode(model: LeanVAE, z: np.ndarray, chunk: int | None) -> np.ndarray:
    if chunk:
        sizes = np.cumsum([0] + latent_chunk_sizes(z.shape[0], chunk))
        pieces = [z[a:b] for a, b in zip(sizes[:-1], sizes[1:])]
        return np.concatenate(stream_decode(model, pieces), axis=0)
    return model.decode(z).data


# -- commands ------------------------------------------------------------------
def cmd_init(args) -> int:
    if args.passthrough:
        model = passthrough_model()
    else:
        model = LeanVAE(_model_config(args.config, args.seed))
    _write(model.save, args.out)
    _emit({"checkpoint": args.out, "param_count": model.param_count(), "config": model.config.to_dict()})
    return EXIT_OK


def cmd_encode(args) -> int:
    model = _load_model(args.model)
    video = _load_video(args.input, model.dtype)
    try:
        z = _encode(model, video, args.chunk)
    except InputError as exc:
        raise CLIError(str(exc), EXIT_INPUT) from exc
    _write(save_ntsr, args.out, z)
    _emit({"latent": args.out, "latent_shape": list(z.shape)})
    return EXIT_OK


def cmd_decode(args) -> int:
    model = _load_model(args.model)
    try:
        z = load_ntsr(_require(args.input))
    except (IntegrityError, VersionError) as exc:
        raise CLIError(f"{args.input}: {exc}", EXIT_INPUT) from exc
    if z.ndim != 4:
        raise CLIError(f"{args.input}: latent must be (T', H', W', d), got {z.shape}", EXIT_INPUT)
    if z.shape[-1] != model.config.d:
        raise CLIError(f"latent has {z.shape[-1]} channels, model expects {model.config.d}", EXIT_MODEL)
    try:
        video = _decode(model, z.astype(model.dtype), args.chunk)
    except InputError as exc:
        raise CLIError(str(exc), EXIT_INPUT) from exc
    _write(save_lvid, args.out, to_uint8(video))
    _emit({"video": args.out, "shape": list(video.shape)})
    return EXIT_OK


def cmd_roundtrip(args) -> int:
    model = _load_model(args.model)
    video = _load_video(args.input, model.dtype)
    start = time.perf_counter()
    try:
        z = _encode(model, video, args.chunk)
        rec = _decode(model, z, args.chunk)
    except InputError as exc:
        raise CLIError(str(exc), EXIT_INPUT) from exc
    wall_ms = (time.perf_counter() - start) * 1e3
    ref = to_signed(to_uint8(video), np.float64)
    out = to_signed(to_uint8(rec), np.float64)
    value = psnr(ref, out)
    try:
        s = ssim(ref, out)
    except InputError:
        s = None
    report = {"psnr": "inf" if math.isinf(value) else value, "ssim": s,
              "latent_shape": list(z.shape), "wall_time_ms": wall_ms}
    if args.report:
        _write(lambda p, r: Path(p).write_text(json.dumps(r, indent=2)), args.report, report)
    _emit(report)
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import TrainConfig, run_training

    data = _read_toml(args.config)
    if args.seed is not None:
        data.setdefault("train", {})["seed"] = args.seed
        data.setdefault("model", {})["seed"] = args.seed
    try:
        config = TrainConfig.from_mapping(data)
    except (VersionError, ValueError, TypeError) as exc:
        raise CLIError(f"bad training config: {exc}", EXIT_MODEL) from exc
    try:
        final, log_path = run_training(config, args.out,
                                       progress=lambda r: print(json.dumps(r), file=sys.stderr))
    except OSError as exc:
        raise CLIError(f"training I/O failed: {exc}", EXIT_IO) from exc
    _emit({"checkpoint": str(final), "metrics": str(log_path)})
    return EXIT_OK


def cmd_flops(args) -> int:
    config = _model_config(args.config, args.seed)
    try:
        shape = tuple(int(v) for v in args.shape.lower().split("x"))
        if len(shape) != 3:
            raise ValueError
    except ValueError:
        raise CLIError(f"--shape must look like TxHxW, got {args.shape!r}", EXIT_INPUT) from None
    try:
        report = cost_model(config, shape, flops_per_mac=args.flops_per_mac)
    except ValueError as exc:
        raise CLIError(str(exc), EXIT_INPUT) from exc
    print(report.to_json())
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest(seed=args.seed or 0)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name}: {r.detail}", file=sys.stderr)
    _emit({r.name: r.ok for r in results})
    return EXIT_OK if all(r.ok for r in results) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leanvae", description="Lightweight video autoencoder tools.")
    parser.add_argument("--seed", type=int, default=None, help="override config seeds")
    parser.add_argument("--threads", type=int, default=None, help="BLAS thread limit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a freshly initialized checkpoint")
    p.add_argument("--config", help="TOML file with a [model] table")
    p.add_argument("--passthrough", action="store_true", help="identity test build (d = D)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    for name, func, helptext in (("encode", cmd_encode, "LVID video -> NTSR latent"),
                                 ("decode", cmd_decode, "NTSR latent -> LVID video")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--input", required=True)
        p.add_argument("--model", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--chunk", type=int, default=None, help="stream in chunks of N = 1+4k frames")
        p.set_defaults(func=func)

    p = sub.add_parser("roundtrip", help="encode + decode and report PSNR/SSIM")
    p.add_argument("--input", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--chunk", type=int, default=None)
    p.set_defaults(func=cmd_roundtrip)

    p = sub.add_parser("train", help="desk-scale training on the synthetic corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="runs/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("flops", help="print the analytic cost report as JSON")
    p.add_argument("--config", default=None)
    p.add_argument("--shape", required=True, help="TxHxW, e.g. 17x768x768")
    p.add_argument("--flops-per-mac", type=float, default=1.0)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("selftest", help="run the built-in consistency checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("leanvae: --threads must be positive", file=sys.stderr)
        return EXIT_INPUT
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except CLIError as exc:
        print(f"leanvae {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
