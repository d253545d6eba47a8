"""HTTP facade over a live session for human or scripted annotators.

Work items are leased: a batch poll marks samples selected and hands them
out with an expiry, so several annotators never hold the same sample at
once. Expired or orphaned (selected but unleased, e.g. after a restart)
items are re-issued before any new selection happens.

All mutations funnel through one lock into the engine's serialized event
stream; an annotation is acknowledged only after its event is fsynced to
the session log, so every 200 survives a crash-restart.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .engine import AlreadyAnnotatedError, Status, UnknownSampleError
from .session import Session

TOKEN_HEADER = "x-api-token"
DEFAULT_LEASE_SECONDS = 600.0


@dataclass
class Lease:
    sample_id: str
    expires_at: float
    serial: int


class LeaseBoard:
    """Issue-ordered lease registry keyed by sample id."""

    def __init__(self, lease_seconds: float, clock):
        self.lease_seconds = lease_seconds
        self.clock = clock
        self._leases: dict[str, Lease] = {}
        self._serial = 0

    def active(self) -> list[Lease]:
        now = self.clock()
        out = [l for l in self._leases.values() if l.expires_at > now]
        out.sort(key=lambda l: l.serial)
        return out

    def grant(self, sample_id: str) -> Lease:
        self._serial += 1
        lease = Lease(sample_id=sample_id,
                      expires_at=self.clock() + self.lease_seconds,
                      serial=self._serial)
        self._leases[sample_id] = lease
        return lease

    def valid(self, sample_id: str) -> bool:
        lease = self._leases.get(sample_id)
        return lease is not None and lease.expires_at > self.clock()

    def release(self, sample_id: str) -> None:
        self._leases.pop(sample_id, None)


def create_app(session: Session, lease_seconds: float = DEFAULT_LEASE_SECONDS,
               token: str | None = None, clock=time.monotonic) -> FastAPI:
    app = FastAPI(title="annogain annotation service")
    engine = session.engine
    leases = LeaseBoard(lease_seconds, clock)
    lock = threading.Lock()

    def unauthorized(request: Request) -> JSONResponse | None:
        if token is None:
            return None
        if request.headers.get(TOKEN_HEADER) != token:
            return JSONResponse({"error": "invalid or missing token"}, status_code=401)
        return None

    def work_item(sample_id: str, lease: Lease) -> dict:
        rec = engine.record(sample_id)
        return {
            "sample_id": sample_id,
            "payload_uri": rec.payload_uri,
            "predicted_class": rec.state.argmax,
            "predicted_class_name": session.class_names[rec.state.argmax],
            "alpha": rec.state.alpha,
            "gain": rec.gain,
            "class_names": session.class_names,
            "lease_seconds_remaining": max(0.0, lease.expires_at - clock()),
        }

    def stop_body() -> dict:
        diag = engine.should_stop()
        return {
            "stop": diag.stop,
            "max_gain": diag.max_gain,
            "total_gain": diag.total_gain,
            "positive_gain_count": diag.positive_gain_count,
        }

    @app.get("/v1/next-batch")
    def next_batch(request: Request):
        denied = unauthorized(request)
        if denied:
            return denied
        raw = request.query_params.get("size", str(engine.config.batch_size))
        try:
            size = int(raw)
        except ValueError:
            return JSONResponse({"error": f"bad size: {raw!r}"}, status_code=400)
        if size < 1:
            return JSONResponse({"error": f"bad size: {size}"}, status_code=400)
        with lock:
            items: list[dict] = []
            seen: set[str] = set()
            for lease in leases.active():
                rec = engine.record(lease.sample_id)
                if rec.status != Status.SELECTED:
                    leases.release(lease.sample_id)
                    continue
                items.append(work_item(lease.sample_id, lease))
                seen.add(lease.sample_id)
                if len(items) == size:
                    return {"items": items, "stop": stop_body()}
            # Orphaned selections: marked selected but no live lease.
            for sample_id in engine.ids_with_status(Status.SELECTED):
                if sample_id in seen or leases.valid(sample_id):
                    continue
                items.append(work_item(sample_id, leases.grant(sample_id)))
                seen.add(sample_id)
                if len(items) == size:
                    return {"items": items, "stop": stop_body()}
            diag = engine.should_stop()
            if diag.stop:
                if items:
                    return {"items": items, "stop": stop_body()}
                return JSONResponse(stop_body(), status_code=409)
            for sample_id in engine.select_batch(size - len(items)):
                items.append(work_item(sample_id, leases.grant(sample_id)))
            if not items:
                return JSONResponse(stop_body(), status_code=409)
            return {"items": items, "stop": stop_body()}

    @app.post("/v1/annotations")
    async def post_annotation(request: Request):
        denied = unauthorized(request)
        if denied:
            return denied
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "body must be JSON"}, status_code=400)
        if not isinstance(body, dict) or "sample_id" not in body or "label" not in body:
            return JSONResponse({"error": "body needs sample_id and label"},
                                status_code=400)
        sample_id = str(body["sample_id"])
        try:
            label = int(body["label"])
        except (TypeError, ValueError):
            return JSONResponse({"error": f"bad label: {body['label']!r}"},
                                status_code=400)
        if not 0 <= label < engine.config.num_classes:
            return JSONResponse(
                {"error": f"label {label} out of range 0..{engine.config.num_classes - 1}"},
                status_code=400)
        with lock:
            if sample_id not in engine.index:
                return JSONResponse({"error": f"unknown sample {sample_id!r}"},
                                    status_code=404)
            rec = engine.record(sample_id)
            if rec.status == Status.ANNOTATED:
                return JSONResponse(
                    {"error": f"sample {sample_id!r} already annotated",
                     "first_event": rec.annotation_seq}, status_code=409)
            if not leases.valid(sample_id):
                return JSONResponse(
                    {"error": f"no valid lease for {sample_id!r}"}, status_code=410)
            try:
                report = engine.apply_annotation(sample_id, label)
            except AlreadyAnnotatedError as exc:  # pragma: no cover - guarded above
                return JSONResponse({"error": str(exc)}, status_code=409)
            leases.release(sample_id)
            return {
                "sample_id": sample_id,
                "label": label,
                "neighbors_rechecked": report.count,
                "stats": engine.stats(),
                "stop": stop_body(),
            }

    @app.get("/v1/status")
    def status(request: Request):
        denied = unauthorized(request)
        if denied:
            return denied
        with lock:
            return {"stats": engine.stats(), "stop": stop_body(),
                    "class_names": session.class_names}

    @app.get("/v1/samples/{sample_id}")
    def sample_view(sample_id: str, request: Request):
        denied = unauthorized(request)
        if denied:
            return denied
        with lock:
            try:
                rec = engine.record(sample_id)
            except UnknownSampleError:
                return JSONResponse({"error": f"unknown sample {sample_id!r}"},
                                    status_code=404)
            out = {
                "sample_id": rec.id,
                "status": rec.status.name.lower(),
                "alpha": rec.state.alpha,
                "source": rec.state.source.value,
                "predicted_class": rec.state.argmax,
                "probs": [float(p) for p in rec.state.probs],
                "gain": rec.gain,
                "payload_uri": rec.payload_uri,
                "annotation_seq": rec.annotation_seq,
            }
            if request.query_params.get("embedding") == "1":
                out["embedding"] = [float(x) for x in rec.embedding]
            return out

    return app


def serve(session: Session, host: str = "127.0.0.1", port: int = 8100,
          token: str | None = None,
          lease_seconds: float = DEFAULT_LEASE_SECONDS) -> None:
    import uvicorn

    app = create_app(session, lease_seconds=lease_seconds, token=token)
    uvicorn.run(app, host=host, port=port, log_level="warning")
