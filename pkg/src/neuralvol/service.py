"""Live training session served over HTTP and WebSocket.

One engine thread owns the model, the macro-cell grid and the render state.
Each tick it takes at most one optimization step, refreshes the majorants
from the training batch, renders one wavefront frame and broadcasts it.
Request handlers never touch engine state directly: every mutation is
validated, queued, and applied by the engine between ticks, so no frame can
mix parameters from two training steps.
"""
from __future__ import annotations

import asyncio
import hashlib
import json
import os
import queue
import struct
import threading
import time
from collections import deque
from concurrent.futures import Future
from contextlib import asynccontextmanager
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from . import fields
from .camera import Camera, camera_from_json, default_camera
from .errors import ConfigError, FormatError
from .macrocell import MacroCellGrid, macrocell_empty, macrocell_set_tf, macrocell_update_online
from .model import NeuralModel, build_model
from .network import lr_at
from .render import MODES, RenderConfig, Framebuffer, accumulate, render_wavefront
from .sampler import InCoreSampler, OutOfCoreSampler, blockbuffer_init
from .trainer import save_model
from .transfer import TransferFunction, default_tf, tf_from_json
from .volume import VolumeMeta, load_volume

FRAME_HEADER = struct.Struct("<IHHB3x")  # frame_id, width, height, format=0, pad
DEFAULT_CELL = 16
_MIN_TICK_S = 1.0 / 30.0


class ApiError(ValueError):
    """Request rejected before it reached the engine; maps to HTTP 400."""


def _tf_hash(tf: TransferFunction) -> str:
    blob = json.dumps(tf.to_json(), sort_keys=True).encode()
    return hashlib.sha1(blob).hexdigest()[:12]


class Session:
    """Engine loop state. Everything mutable is owned by the loop thread;
    handlers communicate through `control` and read plain attributes."""

    def __init__(self, model: NeuralModel, sampler, meta: VolumeMeta,
                 tf: TransferFunction | None = None, camera: Camera | None = None,
                 mode: str = "raymarch", use_macrocells: bool = True,
                 cell: int = DEFAULT_CELL, seed: int = 0, steps: int = 0,
                 loss_capacity: int = 4096, save_path: str = "session.vnr"):
        self.model = model
        self.sampler = sampler
        self.meta = meta
        self.tf = tf if tf is not None else default_tf()
        self.camera = camera if camera is not None else default_camera(model.dims, 512, 512)
        if mode not in MODES:
            raise ConfigError(f"unknown render mode {mode!r}")
        self.mode = mode
        self.use_macrocells = bool(use_macrocells)
        self.seed = int(seed)
        self.steps_limit = int(steps)
        self.save_path = str(save_path)
        # majorants start empty and widen from training batches only
        self.grid: MacroCellGrid = macrocell_empty(model.dims, cell)
        macrocell_set_tf(self.grid, self.tf)
        self.paused = False
        self.pending_steps = 0
        self.error: str | None = None
        self.losses: deque = deque(maxlen=loss_capacity)  # (step, loss, lr)
        self.last_loss: float | None = None
        self.frame_id = 0
        self.fps = 0.0
        self.tick_ms = 0.0
        self._accum: Framebuffer | None = None
        self._mail: queue.Queue = queue.Queue()
        self._subs: set = set()
        self._subs_lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    # ------------------------------------------------------------- handlers

    def control(self, kind: str, body) -> dict:
        """Validate a mutation request and queue it for the engine.

        Returns the acknowledgment payload.  Raises ApiError on bad input;
        nothing is queued in that case, so state cannot change.
        """
        if not isinstance(body, dict):
            raise ApiError("request body must be a JSON object")
        if kind == "camera":
            cam = self._parse_camera(body)
            self._mail.put(("camera", cam))
            return {"ok": True, "camera": cam.to_json()}
        if kind == "transfer_function":
            try:
                tf = tf_from_json(body)
            except (FormatError, ConfigError) as exc:
                raise ApiError(str(exc)) from exc
            self._mail.put(("tf", tf))
            return {"ok": True, "tf_hash": _tf_hash(tf)}
        if kind == "training":
            action = body.get("action")
            if action not in ("pause", "resume", "step"):
                raise ApiError(f"unknown training action {action!r}")
            count = 0
            if action == "step":
                try:
                    count = int(body.get("count", 1))
                except (TypeError, ValueError):
                    raise ApiError("count must be an integer") from None
                if count < 1:
                    raise ApiError(f"count must be >= 1, got {count}")
            self._mail.put(("training", (action, count)))
            return {"ok": True, "paused": action == "pause" or (action == "step" and self.paused)}
        if kind == "renderer":
            upd = self._parse_renderer(body)
            self._mail.put(("renderer", upd))
            return {"ok": True, **{k: v for k, v in upd.items()}}
        raise ApiError(f"unknown control kind {kind!r}")

    def _parse_camera(self, body: dict) -> Camera:
        try:
            return camera_from_json(body, width=self.camera.width, height=self.camera.height)
        except (FormatError, ConfigError) as exc:
            raise ApiError(str(exc)) from exc

    def _parse_renderer(self, body: dict) -> dict:
        upd = {}
        allowed = {"mode", "macrocells", "size"}
        unknown = set(body) - allowed
        if unknown:
            raise ApiError(f"unknown renderer keys {sorted(unknown)}")
        if "mode" in body:
            if body["mode"] not in MODES:
                raise ApiError(f"unknown render mode {body['mode']!r}; expected one of {sorted(MODES)}")
            upd["mode"] = body["mode"]
        if "macrocells" in body:
            if not isinstance(body["macrocells"], bool):
                raise ApiError("macrocells must be a boolean")
            upd["macrocells"] = body["macrocells"]
        if "size" in body:
            size = body["size"]
            if (not isinstance(size, (list, tuple)) or len(size) != 2
                    or not all(isinstance(v, int) and 1 <= v <= 4096 for v in size)):
                raise ApiError("size must be [width, height] with integers in 1..4096")
            upd["size"] = (size[0], size[1])
        if not upd:
            raise ApiError("renderer update needs at least one of mode, macrocells, size")
        return upd

    def request_save(self, path: str | None = None) -> Future:
        fut: Future = Future()
        self._mail.put(("save", (path or self.save_path, fut)))
        return fut

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=3)
        with self._subs_lock:
            self._subs.add(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._subs_lock:
            self._subs.discard(q)

    def state(self) -> dict:
        t = self.model.opt.t
        return {
            "step": t,
            "loss": self.last_loss,
            "lr": lr_at(self.model.opt, t),
            "paused": self.paused,
            "pending_steps": self.pending_steps,
            "error": self.error,
            "fps": round(self.fps, 2),
            "tick_ms": round(self.tick_ms, 2),
            "frame_id": self.frame_id,
            "accum_frames": self._accum.count if self._accum is not None else 0,
            "model": {
                "params": self.model.n_params,
                "encoding": self.model.encoder.config.kind,
                "batch_size": self.model.batch_size,
            },
            "volume": {
                "dims": list(self.meta.dims),
                "dtype": self.meta.dtype,
                "value_range": list(self.meta.value_range) if self.meta.value_range else None,
            },
            "renderer": {
                "mode": self.mode,
                "macrocells": self.use_macrocells,
                "size": [self.camera.width, self.camera.height],
            },
            "camera": self.camera.to_json(),
            "tf_hash": _tf_hash(self.tf),
        }

    def loss_records(self, since: int = -1) -> list:
        return [[s, l, r] for (s, l, r) in list(self.losses) if s > since]

    # --------------------------------------------------------------- engine

    def _drain(self) -> None:
        while True:
            try:
                kind, payload = self._mail.get_nowait()
            except queue.Empty:
                return
            if kind == "camera":
                self.camera = payload
                self._accum = None
            elif kind == "tf":
                self.tf = payload
                macrocell_set_tf(self.grid, self.tf)
                self._accum = None
            elif kind == "training":
                action, count = payload
                if action == "pause":
                    self.paused = True
                    self.pending_steps = 0
                elif action == "resume":
                    self.paused = False
                    self.pending_steps = 0
                    self.error = None
                else:
                    self.pending_steps += count
            elif kind == "renderer":
                if "mode" in payload:
                    self.mode = payload["mode"]
                if "macrocells" in payload:
                    self.use_macrocells = payload["macrocells"]
                if "size" in payload:
                    w, h = payload["size"]
                    c = self.camera
                    self.camera = Camera(eye=c.eye, center=c.center, up=c.up,
                                         vfov_deg=c.vfov_deg, width=w, height=h)
                self._accum = None
            elif kind == "save":
                path, fut = payload
                try:
                    save_model(self.model, path)
                    fut.set_result({"path": str(path), "step": self.model.opt.t})
                except Exception as exc:
                    fut.set_exception(exc)
            elif kind == "stop":
                self._stop.set()

    def _should_train(self) -> bool:
        if self.error is not None:
            return False
        if self.steps_limit and self.model.opt.t >= self.steps_limit:
            return False
        return (not self.paused) or self.pending_steps > 0

    def tick(self) -> None:
        t0 = time.perf_counter()
        self._drain()
        trained = False
        if self._should_train():
            try:
                step_index = self.model.opt.t
                batch = self.sampler.sample(self.model.batch_size)
                loss = self.model.train_step(batch)
                macrocell_update_online(self.grid, batch)
                macrocell_set_tf(self.grid, self.tf)
                self.losses.append((step_index, float(loss), lr_at(self.model.opt, step_index)))
                self.last_loss = float(loss)
                if self.pending_steps > 0:
                    self.pending_steps -= 1
                trained = True
            except Exception as exc:  # training failure pauses, error readable in state
                self.paused = True
                self.pending_steps = 0
                self.error = f"{type(exc).__name__}: {exc}"
        blob, stats = self._render_frame(trained)
        self._broadcast(blob, stats)
        dt = time.perf_counter() - t0
        self.tick_ms = dt * 1e3
        inst = 1.0 / max(dt, 1e-9)
        self.fps = inst if self.fps == 0.0 else 0.9 * self.fps + 0.1 * inst

    def _render_frame(self, trained: bool) -> tuple[bytes, dict]:
        cam = self.camera
        cfg = RenderConfig(mode=self.mode, use_macrocells=self.use_macrocells,
                           seed=self.seed)
        if trained:
            self._accum = None
        accumulating = self.mode == "pathtrace" and not trained
        stats_out: list = []
        if accumulating:
            if self._accum is None or self._accum.total.shape[:2] != (cam.height, cam.width):
                self._accum = Framebuffer(cam.width, cam.height)
            img = render_wavefront(self.model, self.tf, cam, cfg,
                                   grid=self.grid if self.use_macrocells else None,
                                   frame=self._accum.count, stats_out=stats_out)
            shown = accumulate(self._accum, img)
        else:
            self._accum = None
            img = render_wavefront(self.model, self.tf, cam, cfg,
                                   grid=self.grid if self.use_macrocells else None,
                                   frame=0, stats_out=stats_out)
            shown = img
        u8 = np.floor(np.clip(shown, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        rgba = np.empty((cam.height, cam.width, 4), dtype=np.uint8)
        rgba[..., :3] = u8
        rgba[..., 3] = 255
        self.frame_id += 1
        header = FRAME_HEADER.pack(self.frame_id & 0xFFFFFFFF, cam.width, cam.height, 0)
        st = stats_out[0] if stats_out else None
        stats = {
            "frame_id": self.frame_id,
            "generation": self.model.opt.t,
            "step": self.model.opt.t,
            "loss": self.last_loss,
            "paused": self.paused,
            "mode": self.mode,
            "accum_frames": self._accum.count if self._accum is not None else 1,
            "field_evaluations": st.evals if st else 0,
            "ms": st.ms if st else 0.0,
        }
        return header + rgba.tobytes(), stats

    def _broadcast(self, blob: bytes, stats: dict) -> None:
        with self._subs_lock:
            subs = list(self._subs)
        for q in subs:
            item = (blob, stats)
            try:
                q.put_nowait(item)
            except queue.Full:
                try:
                    q.get_nowait()  # slow subscriber: drop its oldest frame
                except queue.Empty:
                    pass
                try:
                    q.put_nowait(item)
                except queue.Full:
                    pass

    def _run(self) -> None:
        while not self._stop.is_set():
            t0 = time.perf_counter()
            self.tick()
            # idle sessions still stream frames, just not at a busy-loop rate
            rest = _MIN_TICK_S - (time.perf_counter() - t0)
            if rest > 0:
                self._stop.wait(rest)

    def start(self) -> None:
        if self._thread is not None:
            return
        self._stop.clear()
        self._thread = threading.Thread(target=self._run, name="neuralvol-engine", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=10.0)
            self._thread = None
        closer = getattr(self.sampler, "close", None)
        if closer is not None:
            closer()


# ------------------------------------------------------------------ HTTP app

def create_app(session: Session, frontend_dir: str | Path | None = None):
    @asynccontextmanager
    async def lifespan(app):
        session.start()
        try:
            yield
        finally:
            session.stop()

    app = FastAPI(title="neuralvol live session", lifespan=lifespan)

    async def body_of(request: Request):
        try:
            return json.loads(await request.body())
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise HTTPException(status_code=400, detail=f"body is not valid JSON: {exc}") from exc

    def controlled(kind: str, body) -> JSONResponse:
        try:
            return JSONResponse(session.control(kind, body))
        except ApiError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.get("/api/state")
    async def get_state():
        return session.state()

    @app.get("/api/loss")
    async def get_loss(since: int = -1):
        records = session.loss_records(since)
        return {"records": records, "latest_step": session.model.opt.t}

    @app.post("/api/camera")
    async def post_camera(request: Request):
        return controlled("camera", await body_of(request))

    @app.post("/api/transfer_function")
    async def post_tf(request: Request):
        return controlled("transfer_function", await body_of(request))

    @app.post("/api/training")
    async def post_training(request: Request):
        return controlled("training", await body_of(request))

    @app.post("/api/renderer")
    async def post_renderer(request: Request):
        return controlled("renderer", await body_of(request))

    @app.post("/api/save")
    async def post_save(request: Request):
        raw = await request.body()
        body = {}
        if raw and raw.strip():
            try:
                body = json.loads(raw)
            except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                raise HTTPException(status_code=400, detail=f"body is not valid JSON: {exc}") from exc
        if not isinstance(body, dict):
            raise HTTPException(status_code=400, detail="body must be a JSON object")
        path = body.get("path")
        if path is not None and not isinstance(path, str):
            raise HTTPException(status_code=400, detail="path must be a string")
        fut = session.request_save(path)
        try:
            result = await asyncio.get_running_loop().run_in_executor(
                None, lambda: fut.result(timeout=30.0))
        except Exception as exc:
            raise HTTPException(status_code=500, detail=f"save failed: {exc}") from exc
        return {"ok": True, **result}

    @app.websocket("/ws/frames")
    async def ws_frames(ws: WebSocket):
        await ws.accept()
        q = session.subscribe()
        loop = asyncio.get_running_loop()

        async def pump():
            while True:
                try:
                    blob, stats = await loop.run_in_executor(None, q.get, True, 0.5)
                except queue.Empty:
                    continue
                await ws.send_text(json.dumps(stats))
                await ws.send_bytes(blob)

        sender = asyncio.ensure_future(pump())
        try:
            while True:
                text = await ws.receive_text()
                try:
                    msg = json.loads(text)
                    kind = msg.pop("type")
                    await ws.send_text(json.dumps(session.control(kind, msg)))
                except (json.JSONDecodeError, KeyError, ApiError) as exc:
                    await ws.send_text(json.dumps({"ok": False, "error": str(exc)}))
        except WebSocketDisconnect:
            pass
        finally:
            sender.cancel()
            session.unsubscribe(q)

    fdir = _resolve_frontend(frontend_dir)
    if fdir is not None:
        app.mount("/", StaticFiles(directory=str(fdir), html=True), name="frontend")
    else:
        @app.get("/")
        async def index():
            return HTMLResponse(
                "<!doctype html><title>neuralvol</title>"
                "<p>Session is live. Frontend bundle not found; "
                "the API is at <code>/api/state</code>.</p>")

    return app


def _resolve_frontend(explicit) -> Path | None:
    candidates = []
    if explicit:
        candidates.append(Path(explicit))
    env = os.environ.get("NEURALVOL_FRONTEND")
    if env:
        candidates.append(Path(env))
    candidates.append(Path(__file__).resolve().parents[2] / "frontend" / "dist")
    for c in candidates:
        if c.is_dir() and (c / "index.html").exists():
            return c
    return None


# -------------------------------------------------------------------- launch

def build_session(volume: str | None = None, synthetic: str = "gauss:64",
                  net: str | None = None, sampler: str = "incore", seed: int = 0,
                  size: tuple[int, int] = (512, 512), steps: int = 0,
                  **session_kw) -> Session:
    cfg = json.loads(Path(net).read_text()) if net else {}
    if sampler == "outofcore":
        if not volume:
            raise ConfigError("out-of-core serving needs --volume")
        buf = blockbuffer_init(volume, r=512, s=64, rng=np.random.default_rng(seed + 2))
        smp = OutOfCoreSampler(buf, seed=seed + 1)
        meta = buf.meta
    else:
        if volume:
            f = load_volume(volume)
        else:
            name, _, dims_txt = synthetic.partition(":")
            d = tuple(int(p) for p in dims_txt.split("x")) if dims_txt else (64, 64, 64)
            if len(d) == 1:
                d = d * 3
            f = fields.rasterize(name, d)
        smp = InCoreSampler(f, seed=seed + 1)
        meta = f.meta
    model = build_model(cfg, dims=meta.dims, value_range=meta.value_range, seed=seed)
    cam = default_camera(meta.dims, size[0], size[1])
    return Session(model, smp, meta, camera=cam, seed=seed, steps=steps, **session_kw)


def serve(volume=None, synthetic="gauss:64", net=None, host="127.0.0.1",
          port=8080, sampler="incore", seed=0, size=(512, 512), steps=0) -> None:
    import uvicorn

    session = build_session(volume=volume, synthetic=synthetic, net=net,
                            sampler=sampler, seed=seed, size=size, steps=steps)
    app = create_app(session)
    uvicorn.run(app, host=host, port=port, log_level="warning")
