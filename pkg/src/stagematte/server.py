"""Annotation HTTP API: browse samples, fetch layers, store scribble PNGs."""

from __future__ import annotations

import io
import os
import tempfile
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image as PILImage

from . import raster
from .stage import DatasetManifest

LAYERS = ("image", "background", "prediction", "diff")


class AnnotationStore:
    """Manifest-backed scribble storage with per-sample write serialization."""

    def __init__(self, manifest_path, predictions_dir=None):
        self.manifest_path = Path(manifest_path)
        self.manifest = DatasetManifest.load(self.manifest_path)
        self.predictions_dir = Path(predictions_dir) if predictions_dir else None
        self._locks: dict = {}
        self._registry_lock = threading.Lock()
        self._manifest_lock = threading.Lock()

    def sample_lock(self, sample_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(sample_id, threading.Lock())

    def listing(self) -> list:
        return [
            {"id": r.sample_id, "role": r.role, "annotated": r.scribbles is not None}
            for r in self.manifest.records
        ]

    def layer_png(self, sample_id: str, layer: str) -> bytes | None:
        rec = self.manifest.by_id(sample_id)
        if layer == "image":
            return self.manifest.resolve(rec.image).read_bytes()
        if layer == "background":
            return self.manifest.resolve(rec.background).read_bytes()
        if layer == "prediction":
            if self.predictions_dir:
                path = self.predictions_dir / f"{sample_id}.png"
                if path.exists():
                    return path.read_bytes()
            return None
        if layer == "diff":
            img = raster.load_image(self.manifest.resolve(rec.image)).data
            bg = raster.load_image(self.manifest.resolve(rec.background)).data
            diff = np.abs(img - bg).mean(axis=2)
            peak = diff.max()
            if peak > 0:
                diff = diff / peak
            buf = io.BytesIO()
            PILImage.fromarray(raster.quantize(diff), mode="L").save(buf, format="PNG")
            return buf.getvalue()
        raise KeyError(layer)

    def scribble_png(self, sample_id: str) -> bytes | None:
        rec = self.manifest.by_id(sample_id)
        if rec.scribbles is None:
            return None
        return self.manifest.resolve(rec.scribbles).read_bytes()

    def put_scribbles(self, sample_id: str, payload: bytes) -> None:
        """Validate and persist atomically (temp file then rename)."""
        rec = self.manifest.by_id(sample_id)
        try:
            with PILImage.open(io.BytesIO(payload)) as decoded:
                decoded.load()
                if decoded.mode == "L":
                    arr = np.asarray(decoded, dtype=np.uint8)
                else:
                    # Canvas exports arrive as RGB(A); accept only true grays.
                    rgba = np.asarray(decoded.convert("RGBA"), dtype=np.uint8)
                    if (rgba[:, :, 3] != 255).any():
                        raise ValueError("scribble PNG must be fully opaque")
                    if (rgba[:, :, 0] != rgba[:, :, 1]).any() or \
                       (rgba[:, :, 0] != rgba[:, :, 2]).any():
                        raise ValueError("scribble PNG must be grayscale")
                    arr = rgba[:, :, 0]
        except ValueError:
            raise
        except Exception as exc:
            raise ValueError(f"not a decodable PNG: {exc}") from None
        expected = raster.load_image(self.manifest.resolve(rec.image)).data.shape[:2]
        if arr.shape != expected:
            raise ValueError(
                f"wrong dimensions: expected {expected[1]}x{expected[0]}, "
                f"received {arr.shape[1]}x{arr.shape[0]}")
        raster.ScribbleMap(arr)  # validates the {0, 128, 255} value set

        rel = f"scribbles/{sample_id}.png"
        target = self.manifest.resolve(rel)
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=target.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(payload)
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        with self._manifest_lock:
            rec.scribbles = rel
            self.manifest.save(self.manifest_path)


def create_app(manifest_path, predictions_dir=None, static_dir=None) -> FastAPI:
    store = AnnotationStore(manifest_path, predictions_dir)
    app = FastAPI(title="stagematte annotation")
    app.state.store = store

    def not_found(detail: str):
        return JSONResponse({"detail": detail}, status_code=404)

    @app.get("/api/samples")
    def list_samples():
        return store.listing()

    @app.get("/api/samples/{sample_id}/layer/{layer}")
    def get_layer(sample_id: str, layer: str):
        if layer not in LAYERS:
            return not_found(f"unknown layer {layer!r}")
        try:
            data = store.layer_png(sample_id, layer)
        except KeyError:
            return not_found(f"unknown sample {sample_id!r}")
        if data is None:
            return not_found(f"no {layer} available for {sample_id!r}")
        return Response(content=data, media_type="image/png")

    @app.get("/api/samples/{sample_id}/scribbles")
    def get_scribbles(sample_id: str):
        try:
            data = store.scribble_png(sample_id)
        except KeyError:
            return not_found(f"unknown sample {sample_id!r}")
        if data is None:
            return not_found(f"no scribbles for {sample_id!r}")
        return Response(content=data, media_type="image/png")

    @app.put("/api/samples/{sample_id}/scribbles")
    async def put_scribbles(sample_id: str, request: Request):
        try:
            store.manifest.by_id(sample_id)
        except KeyError:
            return not_found(f"unknown sample {sample_id!r}")
        payload = await request.body()
        lock = store.sample_lock(sample_id)
        if not lock.acquire(blocking=False):
            return JSONResponse({"detail": "concurrent write in progress"}, status_code=409)
        try:
            store.put_scribbles(sample_id, payload)
        except ValueError as exc:
            return JSONResponse({"detail": str(exc)}, status_code=400)
        finally:
            lock.release()
        return {"id": sample_id, "annotated": True}

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="frontend")
    return app
