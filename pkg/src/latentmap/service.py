"""HTTP front of the forced-choice study store.

Endpoints (JSON unless noted):
    GET  /healthz
    POST /studies                      register a study (pairs reference
                                       server-local PNG paths)
    POST /sessions                     {study_id, observer_id}
    GET  /sessions/{sid}               session status snapshot
    GET  /sessions/{sid}/next          pending trial payload or {"done": true}
    GET  /sessions/{sid}/trials/{i}/{side}.png   stimulus image (PNG)
    POST /sessions/{sid}/choices       {trial_index, side, response_time_ms?}
    POST /sessions/{sid}/status        {"status": "paused" | "active"}
    GET  /studies/{study_id}/export    choice matrix as CSV (training excluded)

Trial payloads never disclose model identities; sides are resolved to models
only inside the trial log.
"""

from __future__ import annotations

import io
import os

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, PlainTextResponse
from pydantic import BaseModel, Field

from .errors import ContractViolation
from .study import (
    ConflictError,
    EmptyExportError,
    NotFoundError,
    PairSpec,
    StudyConfig,
    StudyStore,
)

__all__ = ["create_app"]


class PairBody(BaseModel):
    pair_id: str
    model_a: str
    model_b: str
    image_a: str
    image_b: str


class StudyBody(BaseModel):
    study_id: str
    pairs: list[PairBody]
    training_pairs: list[PairBody] = Field(default_factory=list)
    seed: int = 0
    metadata: dict = Field(default_factory=dict)


class SessionBody(BaseModel):
    study_id: str
    observer_id: str


class ChoiceBody(BaseModel):
    trial_index: int
    side: str
    response_time_ms: float = 0.0


class StatusBody(BaseModel):
    status: str


def _session_payload(session) -> dict:
    return {
        "session_id": session.session_id,
        "study_id": session.study_id,
        "observer_id": session.observer_id,
        "status": session.status,
        "cursor": session.cursor,
        "total_trials": len(session.schedule),
    }


def create_app(store: StudyStore) -> FastAPI:
    app = FastAPI(title="latentmap study service")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/studies")
    def create_study(body: StudyBody):
        try:
            config = StudyConfig(
                study_id=body.study_id,
                pairs=[PairSpec(**p.model_dump()) for p in body.pairs],
                training_pairs=[PairSpec(**p.model_dump()) for p in body.training_pairs],
                seed=body.seed,
                metadata=body.metadata,
            )
            store.create_study(config)
        except ConflictError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ContractViolation as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {"study_id": config.study_id, "pairs": len(config.pairs),
                "training_pairs": len(config.training_pairs)}

    @app.post("/sessions")
    def create_session(body: SessionBody):
        try:
            session = store.create_session(body.observer_id, body.study_id)
        except NotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return _session_payload(session)

    @app.get("/sessions/{session_id}")
    def session_info(session_id: str):
        try:
            return _session_payload(store.get_session(session_id))
        except NotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.get("/sessions/{session_id}/next")
    def next_trial(session_id: str):
        try:
            session = store.get_session(session_id)
        except NotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        trial = session.current()
        if trial is None:
            return {"done": True, "status": session.status}
        base = f"/sessions/{session_id}/trials/{trial.index}"
        return {
            "done": False,
            "status": session.status,
            "trial_index": trial.index,
            "total": len(session.schedule),
            "training": trial.training,
            "left_url": f"{base}/left.png",
            "right_url": f"{base}/right.png",
        }

    @app.get("/sessions/{session_id}/trials/{index}/{side}.png")
    def trial_image(session_id: str, index: int, side: str):
        try:
            session = store.get_session(session_id)
        except NotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        if side not in ("left", "right"):
            raise HTTPException(status_code=422, detail="side must be left or right")
        if not 0 <= index < len(session.schedule):
            raise HTTPException(status_code=404, detail=f"no trial {index}")
        trial = session.schedule[index]
        path = trial.left_image if side == "left" else trial.right_image
        if not os.path.exists(path):
            raise HTTPException(status_code=404, detail=f"stimulus file missing: {path}")
        return FileResponse(path, media_type="image/png")

    @app.post("/sessions/{session_id}/choices")
    def record_choice(session_id: str, body: ChoiceBody):
        try:
            nxt = store.record_choice(
                session_id, body.trial_index, body.side, body.response_time_ms
            )
        except NotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ConflictError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ContractViolation as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        session = store.get_session(session_id)
        return {
            "recorded": True,
            "status": session.status,
            "next_index": None if nxt is None else nxt.index,
            "done": nxt is None,
        }

    @app.post("/sessions/{session_id}/status")
    def set_status(session_id: str, body: StatusBody):
        try:
            session = store.set_status(session_id, body.status)
        except NotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ConflictError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ContractViolation as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return _session_payload(session)

    @app.get("/studies/{study_id}/export")
    def export(study_id: str):
        try:
            matrix = store.export_choice_matrix(study_id)
        except NotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except EmptyExportError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        buf = io.StringIO()
        buf.write("model," + ",".join(matrix.models) + "\n")
        for name, row in zip(matrix.models, matrix.wins):
            buf.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")
        return PlainTextResponse(buf.getvalue(), media_type="text/csv")

    return app
