"""Headless task-serving API over a :class:`~crowdscore.qc.Job`.

Endpoints::

    POST /v1/contributors                 register, returns the quiz task
    GET  /v1/contributors/{id}/task       open task, or the next work task
    POST /v1/tasks/{id}/judgments         submit answers for a task
    GET  /v1/job/progress                 queue and contributor counts
    GET  /v1/job/results                  consensus labels of finished images

Errors come back as ``{"error": {"code": ..., "message": ...}}`` with a
4xx status.  Task payloads never reveal which slots are test questions.
"""

from __future__ import annotations

import errno
import logging
import socket
from contextlib import asynccontextmanager
from typing import Any, List, Optional, Union

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .. import errors
from ..aggregate import DEFAULT_WEIGHTS, aggregate, nuclei_label, tally
from ..qc import Job, contributor_seed

log = logging.getLogger(__name__)

STATUS_CODES = {
    errors.NotFoundError: 404,
    errors.StaleTaskError: 404,
    errors.AlreadyRegisteredError: 409,
    errors.NoWorkError: 409,
    errors.NotEligibleError: 403,
    errors.MalformedSubmissionError: 400,
}


class Registration(BaseModel):
    contributor_id: str = Field(min_length=1)
    seed: Optional[int] = None


class Submission(BaseModel):
    answers: List[Union[str, dict]]
    elapsed_seconds: float
    contributor_id: Optional[str] = None


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": {"code": code, "message": message}})


def create_app(job: Job, master_seed: int = 0, method: str = "cv", on_shutdown=None) -> FastAPI:
    """Build the ASGI app; ``on_shutdown`` runs when the server stops."""

    @asynccontextmanager
    async def lifespan(app):
        yield
        if on_shutdown is not None:
            on_shutdown()

    app = FastAPI(title="crowdscore", lifespan=lifespan)
    app.state.job = job

    @app.exception_handler(errors.ValidationError)
    async def _domain_error(request: Request, exc: errors.ValidationError):
        status = next((s for cls, s in STATUS_CODES.items() if isinstance(exc, cls)), 422)
        return _error(status, exc.code, str(exc))

    @app.exception_handler(RequestValidationError)
    async def _bad_body(request: Request, exc: RequestValidationError):
        return _error(400, "malformed_request", "; ".join(str(e.get("msg")) for e in exc.errors()))

    def _state_view(state) -> dict:
        return {"contributor_id": state.contributor_id, "status": state.status.value, "trust": state.trust}

    # handlers are sync so FastAPI runs them in its threadpool; Job serializes access
    @app.post("/v1/contributors", status_code=201)
    def register(body: Registration) -> Any:
        seed = body.seed if body.seed is not None else contributor_seed(master_seed, body.contributor_id)
        state, task = job.start_session(body.contributor_id, seed)
        return {**_state_view(state), "task": task.public()}

    @app.get("/v1/contributors/{contributor_id}/task")
    def fetch_task(contributor_id: str) -> Any:
        task = job.open_task(contributor_id) if contributor_id in job.states else None
        if task is None:
            task = job.next_task(contributor_id)
        return {"task": task.public()}

    @app.post("/v1/tasks/{task_id}/judgments")
    def submit(task_id: str, body: Submission) -> Any:
        state, verdict = job.submit_task(task_id, body.answers, body.elapsed_seconds, body.contributor_id)
        return {**_state_view(state), "verdict": verdict.value}

    @app.get("/v1/job/progress")
    def progress() -> Any:
        return job.progress()

    @app.get("/v1/job/results")
    def results(method: str = method) -> Any:
        lpi = job.config.labels_per_image
        trusts = job.trusts()
        out = []
        for img, votes in job.valid_judgments().items():
            if len(votes) < lpi:
                continue
            if job.kind == "nuclei":
                lab, pidx, flagged = nuclei_label([p for _, p in votes])
                out.append({"image_id": img, "label": lab.letter, "pindex": pidx, "flagged": flagged,
                            "n_judgments": len(votes)})
            else:
                t = tally(votes, trusts)
                out.append({"image_id": img, "label": aggregate(t, method, DEFAULT_WEIGHTS).letter,
                            "n_judgments": len(votes)})
        return {"method": "nuclei" if job.kind == "nuclei" else method, "results": out}

    return app


class StartupError(OSError):
    pass


def check_port(host: str, port: int) -> None:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        try:
            s.bind((host, port))
        except OSError as exc:
            if exc.errno == errno.EADDRINUSE:
                raise StartupError(f"port {port} is already in use") from None
            raise StartupError(f"cannot bind {host}:{port}: {exc}") from None


def serve(job: Job, port: int, host: str = "127.0.0.1", master_seed: int = 0, writer=None) -> None:
    """Run the service until interrupted; ``writer`` (a LogWriter) is closed on shutdown."""
    import uvicorn

    check_port(host, port)
    if writer is not None:
        job.listeners.append(writer)
    app = create_app(job, master_seed, on_shutdown=writer.close if writer is not None else None)
    uvicorn.run(app, host=host, port=port, log_level="info")
