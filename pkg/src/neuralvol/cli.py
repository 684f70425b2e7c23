"""Command-line workflows: train, decode, metrics, render, bench, serve.

Every subcommand is deterministic under --seed at a fixed thread count.
Machine-readable output is opt-in via --json and follows the documents
shipped in neuralvol/schemas/.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import fields
from .camera import default_camera, load_camera
from .errors import ConfigError
from .image import save_png, save_ppm
from .macrocell import macrocell_build, macrocell_from_model
from .model import NeuralModel, build_model
from .render import RenderConfig, render
from .sampler import InCoreSampler, OutOfCoreSampler, blockbuffer_init
from .trainer import compression_ratio, decode, load_model, save_model, train
from .transfer import default_tf, load_tf
from .volume import compare, load_raw, load_volume, save_volume, VolumeMeta


class _Parser(argparse.ArgumentParser):
    # usage problems are exit code 1; runtime failures are 2
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"bad size {text!r}; expected WxH like 768x768") from None
    if w < 1 or h < 1:
        raise ConfigError(f"size must be positive, got {text!r}")
    return w, h


class _Synthetic(NamedTuple):
    name: str
    dims: tuple[int, int, int]
    text: str


def _parse_synthetic(text: str) -> _Synthetic:
    name, _, dims = text.partition(":")
    if name not in fields.FIELDS:
        raise ConfigError(f"unknown synthetic field {name!r}; expected one of {sorted(fields.FIELDS)}")
    if not dims:
        d = (64, 64, 64)
    else:
        parts = dims.lower().split("x")
        if len(parts) == 1:
            parts = parts * 3
        try:
            d = tuple(int(p) for p in parts)
        except ValueError:
            d = ()
        if len(d) != 3 or any(p < 2 for p in d):
            raise ConfigError(f"bad synthetic dims {dims!r}; expected N or NxNxN")
    return _Synthetic(name, d, text)


def resolve_threads(flag) -> int:
    """--threads flag, then NEURALVOL_THREADS, then hardware parallelism."""
    if flag is not None:
        n = int(flag)
    else:
        env = os.environ.get("NEURALVOL_THREADS", "")
        n = int(env) if env else (os.cpu_count() or 1)
    if n < 1:
        raise ConfigError(f"thread count must be >= 1, got {n}")
    try:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except (ImportError, ValueError):
        pass
    return n


def _load_field(args):
    if getattr(args, "volume", None):
        return load_volume(args.volume)
    return fields.rasterize(args.synthetic.name, args.synthetic.dims)


def _field_or_model(args):
    if getattr(args, "model", None):
        return load_model(args.model)
    return _load_field(args)


def _emit(payload: dict, as_json: bool, lines) -> None:
    if as_json:
        print(json.dumps(payload, indent=2))
    else:
        for ln in lines:
            print(ln)


# ---------------------------------------------------------------- subcommands

def _cmd_train(args) -> int:
    threads = resolve_threads(args.threads)
    net = json.loads(Path(args.net).read_text()) if args.net else {}
    if args.batch:
        net["batch_size"] = args.batch
    f = None
    if args.sampler == "outofcore":
        if not args.volume:
            raise ConfigError("--sampler outofcore needs --volume (a disk-resident sidecar)")
        buf = blockbuffer_init(args.volume, r=args.resident, s=args.refresh,
                               rng=np.random.default_rng(args.seed + 2))
        sampler = OutOfCoreSampler(buf, seed=args.seed + 1)
        meta = buf.meta
    else:
        f = _load_field(args)
        sampler = InCoreSampler(f, seed=args.seed + 1)
        meta = f.meta
    vrange = meta.value_range
    if vrange is None:
        vrange = (float(f.data.min()), float(f.data.max()))
    model = build_model(net, dims=meta.dims, value_range=vrange, seed=args.seed)
    try:
        history = train(model, sampler, steps=args.steps)
    finally:
        if args.sampler == "outofcore":
            sampler.close()
    out = Path(args.out)
    save_model(model, out)
    hist_path = Path(args.history) if args.history else out.with_suffix(".csv")
    history.to_csv(hist_path)
    payload = {
        "out": str(out),
        "history": str(hist_path),
        "steps": args.steps,
        "final_loss": history.losses[-1],
        "mean_ms_per_step": float(np.mean(history.wall_ms)),
        "model_params": model.n_params,
        "compression_ratio": compression_ratio(model, meta),
        "seed": args.seed,
        "threads": threads,
    }
    _emit(payload, args.json, [
        f"trained {args.steps} steps: loss {payload['final_loss']:.5f}, "
        f"{payload['mean_ms_per_step']:.1f} ms/step",
        f"model: {out} ({payload['model_params']} params, "
        f"{payload['compression_ratio']:.1f}x compression)",
        f"history: {hist_path}",
    ])
    return 0


def _cmd_decode(args) -> int:
    resolve_threads(args.threads)
    model = load_model(args.model)
    f = decode(model)
    out = Path(args.out)
    if out.suffix == ".json":
        save_volume(f, out)
    else:
        f.data.tofile(out)
    payload = {
        "out": str(out),
        "dims": list(f.meta.dims),
        "dtype": f.meta.dtype,
        "value_range": list(f.meta.value_range) if f.meta.value_range else None,
        "model_params": model.n_params,
    }
    _emit(payload, args.json,
          [f"decoded {f.meta.dims} {f.meta.dtype} -> {out}"])
    return 0


def _cmd_metrics(args) -> int:
    meta = VolumeMeta.from_json(json.loads(Path(args.meta).read_text()))
    a = load_raw(meta, args.a)
    b = load_raw(meta, args.b)
    rep = compare(a, b)
    _emit(rep.to_json(), args.json,
          [f"psnr {rep.psnr_db:.2f} dB  mssim {rep.mssim:.4f}  mse {rep.mse:.3e}"])
    return 0


def _render_setup(args, phi, w, h):
    tf = load_tf(args.tf) if args.tf else default_tf()
    if args.camera:
        cam = load_camera(args.camera, width=w, height=h)
    else:
        cam = default_camera(phi.dims if isinstance(phi, NeuralModel) else phi.meta.dims, w, h)
    return tf, cam


def _build_grid(phi, n_g: int):
    if isinstance(phi, NeuralModel):
        return macrocell_from_model(phi, n_g)
    return macrocell_build(phi, n_g)


def _cmd_render(args) -> int:
    threads = resolve_threads(args.threads)
    w, h = args.size
    phi = _field_or_model(args)
    tf, cam = _render_setup(args, phi, w, h)
    cfg = RenderConfig(mode=args.mode, use_macrocells=args.macrocells,
                       frames=args.frames, seed=args.seed,
                       step_size=args.step, max_step=args.max_step)
    grid = _build_grid(phi, args.cell) if args.macrocells else None
    stats = []
    t0 = time.perf_counter()
    img = render(phi, tf, cam, cfg, architecture=args.arch, grid=grid, stats_out=stats)
    dt = time.perf_counter() - t0
    u8 = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    out = Path(args.out)
    if out.suffix.lower() == ".png":
        save_png(out, u8)
    else:
        save_ppm(out, u8)
    payload = {
        "out": str(out),
        "width": w,
        "height": h,
        "mode": args.mode,
        "architecture": args.arch,
        "macrocells": bool(args.macrocells),
        "frames": args.frames,
        "ms": dt * 1e3,
        "fps": args.frames / dt,
        "field_evaluations": sum(s.evals for s in stats),
        "majorant_violations": sum(s.violations for s in stats),
        "seed": args.seed,
        "threads": threads,
    }
    _emit(payload, args.json, [
        f"rendered {args.mode} {w}x{h} x{args.frames} in {dt * 1e3:.0f} ms "
        f"({payload['fps']:.2f} fps, {payload['field_evaluations']} field evals)",
        f"image: {out}",
    ])
    return 0


def _cmd_bench(args) -> int:
    resolve_threads(args.threads)
    w, h = args.size
    phi = _field_or_model(args)
    tf, cam = _render_setup(args, phi, w, h)
    grid = _build_grid(phi, args.cell)
    # warm the kernels first so timings compare architectures, not compiler state
    warm_cam = default_camera(grid.vol_dims, 8, 8)
    for arch in ("reference", "wavefront"):
        for mode in ("raymarch", "raymarch_shadow", "pathtrace"):
            render(phi, tf, warm_cam, RenderConfig(mode=mode, use_macrocells=True),
                   architecture=arch, grid=grid)
    entries = []
    for arch in ("reference", "wavefront"):
        for mode in ("raymarch", "raymarch_shadow", "pathtrace"):
            for mc in (False, True):
                cfg = RenderConfig(mode=mode, use_macrocells=mc,
                                   frames=args.spp, seed=args.seed)
                stats = []
                t0 = time.perf_counter()
                render(phi, tf, cam, cfg, architecture=arch,
                       grid=grid if mc else None, stats_out=stats)
                dt = time.perf_counter() - t0
                entries.append({
                    "architecture": arch,
                    "mode": mode,
                    "macrocells": mc,
                    "ms": dt * 1e3,
                    "fps": args.spp / dt,
                    "field_evaluations": sum(s.evals for s in stats),
                    "majorant_violations": sum(s.violations for s in stats),
                })
    scene = args.model or args.volume or args.synthetic.text
    report = {"scene": scene, "width": w, "height": h, "spp": args.spp,
              "seed": args.seed, "cell": args.cell, "entries": entries}
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _cmd_serve(args) -> int:
    resolve_threads(args.threads)
    from . import service

    service.serve(volume=args.volume, synthetic=args.synthetic.text, net=args.net,
                  host=args.host, port=args.port, sampler=args.sampler,
                  seed=args.seed, size=args.size, steps=args.steps)
    return 0


# --------------------------------------------------------------------- parser

def _add_source_flags(p, with_model: bool = False) -> None:
    p.add_argument("--volume", help="volume sidecar JSON (raw file alongside)")
    p.add_argument("--synthetic", type=_parse_synthetic, default="gauss:64",
                   help="synthetic scene name[:dims], e.g. gauss:64 (default)")
    if with_model:
        p.add_argument("--model", help="trained model file (takes precedence)")


def _add_common(p) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: NEURALVOL_THREADS or all cores)")
    p.add_argument("--json", action="store_true", help="machine-readable stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="neuralvol",
                     description="Neural scalar-volume compression and rendering.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[], help="fit a model to a volume")
    _add_source_flags(p)
    p.add_argument("--net", help="network config JSON")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=0, help="override config batch size")
    p.add_argument("--sampler", choices=("incore", "outofcore"), default="incore")
    p.add_argument("--resident", type=int, default=512, help="out-of-core buffer blocks")
    p.add_argument("--refresh", type=int, default=64, help="blocks refreshed per step")
    p.add_argument("--out", required=True, help="model output path")
    p.add_argument("--history", help="loss history CSV (default: <out>.csv)")
    _add_common(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("decode", help="reconstruct the dense volume from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True,
                   help="raw output; a .json path writes sidecar + raw pair")
    _add_common(p)
    p.set_defaults(fn=_cmd_decode)

    p = sub.add_parser("metrics", help="compare two raw volumes")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--meta", required=True, help="volume sidecar JSON describing both")
    _add_common(p)
    p.set_defaults(fn=_cmd_metrics)

    p = sub.add_parser("render", help="render a model or raw volume")
    _add_source_flags(p, with_model=True)
    p.add_argument("--tf", help="transfer function JSON")
    p.add_argument("--camera", help="camera JSON")
    p.add_argument("--mode", choices=("raymarch", "raymarch_shadow", "pathtrace"),
                   default="raymarch")
    p.add_argument("--frames", "--spp", dest="frames", type=int, default=1)
    p.add_argument("--size", type=_parse_size, default="768x768")
    p.add_argument("--macrocells", action="store_true")
    p.add_argument("--cell", type=int, default=16, help="macro-cell edge length, voxels")
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--max-step", type=float, default=64.0)
    p.add_argument("--arch", choices=("wavefront", "reference"), default="wavefront")
    p.add_argument("--out", required=True, help=".ppm or .png image path")
    _add_common(p)
    p.set_defaults(fn=_cmd_render)

    p = sub.add_parser("bench", help="render-mode benchmark matrix (JSON)")
    _add_source_flags(p, with_model=True)
    p.add_argument("--tf", help="transfer function JSON")
    p.add_argument("--camera", help="camera JSON")
    p.add_argument("--spp", type=int, default=1, help="frames per matrix entry")
    p.add_argument("--size", type=_parse_size, default="64x64")
    p.add_argument("--cell", type=int, default=16)
    p.add_argument("--out", help="also write the report here")
    _add_common(p)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("serve", help="live training session over HTTP/WebSocket")
    _add_source_flags(p)
    p.add_argument("--net", help="network config JSON")
    p.add_argument("--sampler", choices=("incore", "outofcore"), default="incore")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--size", type=_parse_size, default="512x512",
                   help="initial framebuffer size")
    p.add_argument("--steps", type=int, default=0,
                   help="stop training after this many steps (0 = unbounded)")
    _add_common(p)
    p.set_defaults(fn=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        return 130
    except Exception as e:  # runtime failure contract: report and exit 2
        sys.stderr.write(f"neuralvol {args.command}: error: {e}\n")
        return 2
