"""HTTP+JSON session service driving the refinement engine.

Endpoints (JSON bodies unless noted):

- ``POST   /sessions``                create from a base64 PPM or PNG image
- ``POST   /sessions/{id}/click``     add a click and refine
- ``POST   /sessions/{id}/stroke``    rasterize stroke points and refine
- ``POST   /sessions/{id}/push``      single-step push (matting / depth)
- ``POST   /sessions/{id}/undo``      restore the pre-click state
- ``GET    /sessions/{id}``           clicks, config, reports so far
- ``GET    /sessions/{id}/snapshot``  binary session snapshot blob
- ``DELETE /sessions/{id}``

Predictions travel as base64 PNG: paletted masks for classification tasks,
16-bit grayscale plus min/max for regression (lossless to ~1.5e-5 relative).

Requests for one session id are serialized FIFO via a per-session lock;
concurrent clients queue rather than receiving 409.  Idle sessions expire
after ``session_ttl`` seconds (purged lazily on any request).
"""

from __future__ import annotations

import base64
import io
import os
import threading
import time
import uuid
from dataclasses import asdict

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from PIL import Image

from .checkpoint import load_checkpoint
from .engine import RefinementConfig, Session, create_session, snapshot_session
from .errors import ContractError, DimensionError, GbrsError, InputError, LoadError, ModeError
from .losses import Click
from .networks import TASKS

# fixed 6-color palette for class masks (background first), RGB triples
CLASS_PALETTE = [
    (30, 30, 30),
    (230, 80, 60),
    (70, 160, 240),
    (90, 200, 120),
    (240, 200, 70),
    (180, 100, 220),
]

PLACEMENTS_BY_LAYERS = {1: ("enc8",), 2: ("enc8", "dec4"), 3: ("enc8", "dec4", "dec2")}


def decode_image(data_b64: str) -> np.ndarray:
    """Accept base64 PPM (P6) or PNG; return [3,H,W] floats in [0,1]."""
    raw = base64.b64decode(data_b64)
    if raw[:2] == b"P6":
        from .shapes import read_ppm

        return read_ppm(raw)
    img = Image.open(io.BytesIO(raw)).convert("RGB")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def _png_b64(img: Image.Image) -> str:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def encode_prediction(task: str, pred: np.ndarray) -> dict:
    """Wire encoding of a [C,H,W] prediction for the UI."""
    if task == "interactive_seg":
        mask = (pred[0] > 0).astype(np.uint8)
        img = Image.fromarray(mask, mode="P")
        img.putpalette([0, 0, 0, 255, 80, 60] + [0] * (256 * 3 - 6))
        return {"format": "png_palette", "data": _png_b64(img), "classes": 2}
    if task == "semantic_seg":
        classes = pred.argmax(axis=0).astype(np.uint8)
        img = Image.fromarray(classes, mode="P")
        palette = [v for rgb in CLASS_PALETTE for v in rgb]
        img.putpalette(palette + [0] * (256 * 3 - len(palette)))
        return {"format": "png_palette", "data": _png_b64(img), "classes": len(CLASS_PALETTE)}
    field = pred[0]
    lo, hi = float(field.min()), float(field.max())
    scale = hi - lo if hi > lo else 1.0
    quantized = np.round((field - lo) / scale * 65535.0).astype(np.uint16)
    img = Image.fromarray(quantized)  # infers 16-bit grayscale
    return {"format": "png_u16", "data": _png_b64(img), "min": lo, "max": hi}


class ApiSession:
    def __init__(self, session: Session):
        self.id = uuid.uuid4().hex
        self.session = session
        self.lock = threading.Lock()
        self.created_at = time.time()
        self.last_access = time.time()


def create_app(checkpoint_dir: str, session_ttl: float = 1800.0,
               frontend_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="gbrs session service")
    networks: dict[str, object] = {}
    sessions: dict[str, ApiSession] = {}
    registry_lock = threading.Lock()

    def network_for(task: str):
        if task not in TASKS:
            raise InputError(f"unknown task {task!r}")
        if task not in networks:
            path = os.path.join(checkpoint_dir, f"{task}.gbrs")
            if not os.path.exists(path):
                raise LoadError(f"no checkpoint for {task} under {checkpoint_dir}")
            networks[task] = load_checkpoint(path)
        return networks[task]

    def purge_idle():
        now = time.time()
        with registry_lock:
            for sid in [s for s, rec in sessions.items()
                        if now - rec.last_access > session_ttl]:
                del sessions[sid]

    def get_session(sid: str) -> ApiSession:
        purge_idle()
        with registry_lock:
            rec = sessions.get(sid)
        if rec is None:
            raise KeyError(sid)
        rec.last_access = time.time()
        return rec

    def error_response(exc: Exception):
        if isinstance(exc, KeyError):
            return JSONResponse({"error": "unknown session"}, status_code=404)
        if isinstance(exc, ModeError):
            return JSONResponse({"error": str(exc)}, status_code=422)
        if isinstance(exc, (InputError, ContractError, DimensionError, LoadError)):
            return JSONResponse({"error": str(exc)}, status_code=400)
        if isinstance(exc, GbrsError):
            return JSONResponse({"error": str(exc)}, status_code=500)
        raise exc

    @app.post("/sessions")
    def create(body: dict):
        purge_idle()
        try:
            task = body.get("task")
            if not isinstance(body.get("image"), str):
                raise InputError("body must include a base64 'image'")
            network = network_for(task)
            image = decode_image(body["image"])
            config_kwargs = body.get("config") or {}
            config = RefinementConfig(**config_kwargs)
            layers = int(body.get("layers", 1))
            if layers not in PLACEMENTS_BY_LAYERS:
                raise InputError("layers must be 1, 2 or 3")
            session = create_session(
                network, image,
                mode=str(body.get("mode", "gbrs")).replace("-", "_"),
                kind=str(body.get("kind", "bmconv")).replace("-", "_"),
                placements=PLACEMENTS_BY_LAYERS[layers],
                config=config,
            )
        except (TypeError, ValueError) as exc:
            return error_response(InputError(str(exc)) if not isinstance(exc, GbrsError) else exc)
        except GbrsError as exc:
            return error_response(exc)
        rec = ApiSession(session)
        with registry_lock:
            sessions[rec.id] = rec
        return {
            "session_id": rec.id,
            "task": task,
            "prediction": encode_prediction(task, session.pred_current),
        }

    def _with_session(sid: str, fn):
        try:
            rec = get_session(sid)
        except KeyError as exc:
            return error_response(exc)
        with rec.lock:  # FIFO per session id
            try:
                return fn(rec.session)
            except GbrsError as exc:
                return error_response(exc)
            except (TypeError, ValueError, KeyError) as exc:
                return error_response(InputError(str(exc)))

    @app.post("/sessions/{sid}/click")
    def click(sid: str, body: dict):
        def run(session: Session):
            label = body["label"]
            if session.task in ("interactive_seg", "semantic_seg"):
                label = int(label)
            else:
                label = float(label)
            click = Click(int(body["u"]), int(body["v"]), float(body.get("r", 5.0)), label)
            report = session.add_click_and_refine(click)
            return {
                "prediction": encode_prediction(session.task, session.pred_current),
                "report": report.to_dict(),
            }

        return _with_session(sid, run)

    @app.post("/sessions/{sid}/stroke")
    def stroke(sid: str, body: dict):
        def run(session: Session):
            points = body.get("points")
            if not isinstance(points, list) or not points:
                raise InputError("stroke body needs a nonempty 'points' list")
            stroke_clicks = [
                Click(int(p["u"]), int(p["v"]), float(p.get("r", 3.0)), int(p["class"]))
                for p in points
            ]
            report = session.apply_stroke(stroke_clicks)
            return {
                "prediction": encode_prediction(session.task, session.pred_current),
                "report": report.to_dict(),
            }

        return _with_session(sid, run)

    @app.post("/sessions/{sid}/push")
    def push(sid: str, body: dict):
        def run(session: Session):
            direction = body.get("direction")
            if direction not in ("up", "down"):
                raise InputError("push direction must be 'up' or 'down'")
            click = Click(int(body["u"]), int(body["v"]), float(body.get("r", 3.0)), direction)
            report = session.push_click(click)
            return {
                "prediction": encode_prediction(session.task, session.pred_current),
                "report": report.to_dict(),
            }

        return _with_session(sid, run)

    @app.post("/sessions/{sid}/undo")
    def undo(sid: str):
        def run(session: Session):
            session.undo()
            return {"prediction": encode_prediction(session.task, session.pred_current)}

        return _with_session(sid, run)

    @app.get("/sessions/{sid}")
    def info(sid: str):
        def run(session: Session):
            return {
                "task": session.task,
                "mode": session.mode,
                "kind": session.kind,
                "config": asdict(session.config),
                "clicks": [
                    {"u": c.u, "v": c.v, "r": c.r, "label": c.label}
                    for c in session.clicks
                ],
                "reports": [r.to_dict() for r in session.reports],
            }

        return _with_session(sid, run)

    @app.get("/sessions/{sid}/snapshot")
    def snapshot(sid: str):
        def run(session: Session):
            return Response(content=snapshot_session(session),
                            media_type="application/octet-stream")

        return _with_session(sid, run)

    @app.delete("/sessions/{sid}")
    def delete(sid: str):
        try:
            get_session(sid)
        except KeyError as exc:
            return error_response(exc)
        with registry_lock:
            sessions.pop(sid, None)
        return {"deleted": sid}

    if frontend_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="ui")

    return app
