"""REST surface of the DEI, versioned under /api/v1."""

from __future__ import annotations

import json

from fastapi import Depends, FastAPI, File, Form, Header, HTTPException, Query, UploadFile
from fastapi.responses import PlainTextResponse, Response

from resight.dei.core import (
    AuthenticationError,
    AuthorizationError,
    ConflictError,
    DeiCore,
    NotFoundError,
    ValidationError,
)

_ERROR_STATUS = {
    AuthenticationError: 401,
    AuthorizationError: 403,
    NotFoundError: 404,
    ConflictError: 409,
    ValidationError: 400,
}


def _http(exc: Exception) -> HTTPException:
    status = _ERROR_STATUS.get(type(exc), 500)
    return HTTPException(status_code=status, detail=str(exc))


def create_dei_app(core: DeiCore) -> FastAPI:
    app = FastAPI(title="resight DEI", version="1")
    app.state.core = core

    def bearer(authorization: str = Header(default="")) -> str:
        if not authorization.startswith("Bearer "):
            raise HTTPException(status_code=401, detail="missing bearer token")
        return authorization.removeprefix("Bearer ")

    @app.post("/api/v1/auth")
    def auth(body: dict):
        try:
            session = core.authenticate(
                body.get("principal", ""), body.get("secret", ""), body.get("capabilities", [])
            )
        except Exception as exc:
            raise _http(exc)
        return {"token": session["session_id"], "expires": session["expires"], "capabilities": session["capabilities"]}

    @app.post("/api/v1/images")
    def post_image(blob: UploadFile = File(...), metadata: str = Form(default="{}"), species: str = Form(default="default")):
        try:
            meta = json.loads(metadata)
            fiducials = meta.pop("fiducials", None)
            record = core.put_image(blob.file.read(), species=species, metadata=meta, fiducials=fiducials)
        except json.JSONDecodeError as exc:
            raise HTTPException(status_code=400, detail=f"bad metadata JSON: {exc}")
        except Exception as exc:
            raise _http(exc)
        return {"image_id": record["image_id"], "state": record["state"], "blob_ref": record["blob_ref"]}

    @app.get("/api/v1/images")
    def list_images(state: str = Query(default="")):
        return core.list_images(state=state or None)

    @app.post("/api/v1/blobs")
    def post_blob(blob: UploadFile = File(...), token: str = Depends(bearer)):
        try:
            core._session(token)
            ref = core.put_feature_blob(blob.file.read())
        except Exception as exc:
            raise _http(exc)
        return {"blob_ref": ref}

    @app.get("/api/v1/images/{image_id}")
    def get_image(image_id: str):
        try:
            return core.get_image(image_id)
        except Exception as exc:
            raise _http(exc)

    @app.get("/api/v1/images/{image_id}/blob")
    def get_blob(image_id: str):
        try:
            data = core.get_image_blob(image_id)
        except Exception as exc:
            raise _http(exc)
        media = "image/png" if data[:4] == b"\x89PNG" else "image/x-portable-graymap"
        return Response(content=data, media_type=media)

    @app.get("/api/v1/work")
    def poll_work(max: int = Query(default=1, ge=1), token: str = Depends(bearer)):
        try:
            return core.poll_work(token, max)
        except Exception as exc:
            raise _http(exc)

    @app.post("/api/v1/transitions")
    def post_transition(body: dict, token: str = Depends(bearer)):
        try:
            state = core.commit_transition(
                token,
                body["image_id"],
                body["from_state"],
                body["to_state"],
                body.get("payload", {}),
            )
        except KeyError as exc:
            raise HTTPException(status_code=400, detail=f"missing field {exc.args[0]}")
        except Exception as exc:
            raise _http(exc)
        return {"state": state}

    @app.get("/api/v1/rankings/{image_id}")
    def get_rankings(image_id: str, k: int = Query(default=0, ge=0), debug: int = Query(default=0)):
        try:
            return core.get_rankings(image_id, k=k or None, debug=bool(debug))
        except Exception as exc:
            raise _http(exc)

    @app.get("/api/v1/tasks")
    def get_tasks(annotator: str = Query(default=""), max: int = Query(default=20, ge=1)):
        return core.get_tasks(annotator=annotator or None, max_items=max)

    @app.post("/api/v1/tasks/{task_id}/response")
    def respond(task_id: str, body: dict):
        try:
            task = core.respond_task(task_id, body["annotator"], body["label"])
        except KeyError as exc:
            raise HTTPException(status_code=400, detail=f"missing field {exc.args[0]}")
        except Exception as exc:
            raise _http(exc)
        return {"state": task["state"], "responses": len(task["responses"]), "consensus": task["consensus"]}

    @app.post("/api/v1/scores")
    def post_scores(body: dict, token: str = Depends(bearer)):
        try:
            core.put_scores(
                token,
                body["query_id"],
                [(c, s) for c, s in body["ranking"]],
                method_calls=body.get("method_calls"),
                survivor_scores=body.get("survivor_scores"),
            )
        except KeyError as exc:
            raise HTTPException(status_code=400, detail=f"missing field {exc.args[0]}")
        except Exception as exc:
            raise _http(exc)
        return {"ok": True}

    @app.post("/api/v1/tasks")
    def post_task(body: dict, token: str = Depends(bearer)):
        try:
            core._session(token)
            task_id = core.put_task(body)
        except Exception as exc:
            raise _http(exc)
        return {"task_id": task_id}

    @app.post("/api/v1/cohorts")
    def post_cohorts(body: dict, token: str = Depends(bearer)):
        try:
            core._session(token)
            core.put_cohorts(body["cohorts"], body.get("provenance"), body.get("conflicts"))
        except KeyError as exc:
            raise HTTPException(status_code=400, detail=f"missing field {exc.args[0]}")
        except Exception as exc:
            raise _http(exc)
        return {"ok": True}

    @app.get("/api/v1/cohorts")
    def get_cohorts():
        return core.get_cohorts()

    @app.get("/api/v1/metrics")
    def get_metrics(format: str = Query(default="json")):
        if format == "csv":
            return PlainTextResponse(core.metrics_csv(), media_type="text/csv")
        return core.metrics()

    return app
