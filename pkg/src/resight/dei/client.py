"""HTTP client for workers and tooling attaching to a remote DEI."""

from __future__ import annotations

import json

import httpx

from resight.dei.core import (
    AuthenticationError,
    AuthorizationError,
    ConflictError,
    NotFoundError,
    ValidationError,
)

_STATUS_ERROR = {
    401: AuthenticationError,
    403: AuthorizationError,
    404: NotFoundError,
    409: ConflictError,
    400: ValidationError,
}


class DeiClient:
    """Mirrors the DeiCore worker-facing surface over /api/v1."""

    def __init__(self, base_url: str, client: httpx.Client | None = None):
        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=30.0)
        self._token = None

    def _check(self, response: httpx.Response):
        if response.status_code >= 400:
            error = _STATUS_ERROR.get(response.status_code, RuntimeError)
            try:
                detail = response.json().get("detail", response.text)
            except json.JSONDecodeError:
                detail = response.text
            raise error(detail)
        return response

    def _headers(self):
        if self._token is None:
            raise AuthenticationError("client is not authenticated")
        return {"Authorization": f"Bearer {self._token}"}

    # -- session --------------------------------------------------------

    def authenticate(self, principal: str, secret: str, capabilities) -> str:
        response = self._check(
            self._client.post(
                f"{self.base_url}/api/v1/auth",
                json={"principal": principal, "secret": secret, "capabilities": list(capabilities)},
            )
        )
        self._token = response.json()["token"]
        return self._token

    # -- worker surface ---------------------------------------------------

    def poll_work(self, max_items: int) -> list:
        response = self._check(
            self._client.get(f"{self.base_url}/api/v1/work", params={"max": max_items}, headers=self._headers())
        )
        return response.json()

    def get_image(self, image_id: str) -> dict:
        return self._check(self._client.get(f"{self.base_url}/api/v1/images/{image_id}")).json()

    def get_image_blob(self, image_id: str) -> bytes:
        return self._check(self._client.get(f"{self.base_url}/api/v1/images/{image_id}/blob")).content

    def list_images(self, state: str | None = None) -> list:
        params = {"state": state} if state else {}
        return self._check(self._client.get(f"{self.base_url}/api/v1/images", params=params)).json()

    def put_feature_blob(self, data: bytes) -> str:
        response = self._check(
            self._client.post(
                f"{self.base_url}/api/v1/blobs",
                files={"blob": ("features.npz", data, "application/octet-stream")},
                headers=self._headers(),
            )
        )
        return response.json()["blob_ref"]

    def commit_transition(self, image_id: str, from_state: str, to_state: str, payload=None) -> str:
        response = self._check(
            self._client.post(
                f"{self.base_url}/api/v1/transitions",
                json={"image_id": image_id, "from_state": from_state, "to_state": to_state, "payload": payload or {}},
                headers=self._headers(),
            )
        )
        return response.json()["state"]

    def put_scores(self, query_id: str, ranking, method_calls=None, survivor_scores=None) -> None:
        self._check(
            self._client.post(
                f"{self.base_url}/api/v1/scores",
                json={
                    "query_id": query_id,
                    "ranking": [[c, float(s)] for c, s in ranking],
                    "method_calls": method_calls or {},
                    "survivor_scores": survivor_scores or {},
                },
                headers=self._headers(),
            )
        )

    def get_rankings(self, image_id: str, k: int = 0, debug: bool = False) -> dict:
        response = self._check(
            self._client.get(
                f"{self.base_url}/api/v1/rankings/{image_id}", params={"k": k, "debug": int(debug)}
            )
        )
        return response.json()

    # -- tasks / cohorts / metrics -------------------------------------------

    def put_task(self, record: dict) -> str:
        response = self._check(
            self._client.post(f"{self.base_url}/api/v1/tasks", json=record, headers=self._headers())
        )
        return response.json()["task_id"]

    def get_tasks(self, annotator: str = "", max_items: int = 20) -> list:
        response = self._check(
            self._client.get(f"{self.base_url}/api/v1/tasks", params={"annotator": annotator, "max": max_items})
        )
        return response.json()

    def respond_task(self, task_id: str, annotator: str, label: str) -> dict:
        response = self._check(
            self._client.post(
                f"{self.base_url}/api/v1/tasks/{task_id}/response",
                json={"annotator": annotator, "label": label},
            )
        )
        return response.json()

    def get_cohorts(self) -> dict:
        return self._check(self._client.get(f"{self.base_url}/api/v1/cohorts")).json()

    def put_cohorts(self, cohorts: dict, provenance=None, conflicts=None) -> None:
        self._check(
            self._client.post(
                f"{self.base_url}/api/v1/cohorts",
                json={"cohorts": cohorts, "provenance": provenance or {}, "conflicts": conflicts or []},
                headers=self._headers(),
            )
        )

    def metrics(self) -> dict:
        return self._check(self._client.get(f"{self.base_url}/api/v1/metrics")).json()

    def upload_image(self, blob: bytes, species: str, metadata: dict | None = None) -> str:
        response = self._check(
            self._client.post(
                f"{self.base_url}/api/v1/images",
                files={"blob": ("image.pgm", blob, "application/octet-stream")},
                data={"metadata": json.dumps(metadata or {}), "species": species},
            )
        )
        return response.json()["image_id"]

    def close(self):
        self._client.close()
