"""Minimal HTTP name service: DEI registry with heartbeats.

DEIs register their address and supported workflows; workers look one
up before authenticating. Registration is idempotent on identical
descriptors.
"""

from __future__ import annotations

import logging
import threading
import time

import httpx
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

logger = logging.getLogger(__name__)


class Descriptor(BaseModel):
    name: str
    address: str
    workflows: list[str]


class Registry:
    def __init__(self, clock=time.time):
        self._entries: dict[str, dict] = {}
        self._lock = threading.Lock()
        self.clock = clock

    def register(self, descriptor: dict) -> dict:
        for field in ("name", "address", "workflows"):
            if not descriptor.get(field):
                raise ValueError(f"descriptor missing {field}")
        with self._lock:
            entry = dict(descriptor, last_seen=self.clock())
            self._entries[descriptor["name"]] = entry
            return {"ok": True, "entries": len(self._entries)}

    def heartbeat(self, name: str) -> dict:
        with self._lock:
            if name not in self._entries:
                raise KeyError(name)
            self._entries[name]["last_seen"] = self.clock()
            return {"ok": True}

    def listing(self) -> list:
        with self._lock:
            return [dict(e) for e in self._entries.values()]


def create_nameservice_app(registry: Registry | None = None) -> FastAPI:
    registry = registry or Registry()
    app = FastAPI(title="resight name service")
    app.state.registry = registry

    @app.post("/register")
    def register(descriptor: Descriptor):
        try:
            return registry.register(descriptor.model_dump())
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/heartbeat")
    def heartbeat(body: dict):
        try:
            return registry.heartbeat(body["name"])
        except KeyError:
            raise HTTPException(status_code=404, detail="not registered")

    @app.get("/list")
    def listing():
        return registry.listing()

    return app


def register_dei(nameservice_url: str, descriptor: dict, retries: int = 5, base_delay: float = 0.2, client=None) -> dict:
    """Register with exponential backoff.

    Returns the acknowledgment, or a degraded-mode marker after the
    retry budget is exhausted (the DEI keeps serving without a listing).
    """
    own_client = client is None
    client = client or httpx.Client()
    try:
        delay = base_delay
        for attempt in range(retries):
            try:
                response = client.post(f"{nameservice_url}/register", json=descriptor, timeout=5.0)
                if response.status_code == 400:
                    raise ValueError(response.json().get("detail", "invalid descriptor"))
                response.raise_for_status()
                return response.json()
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                logger.warning("name service unreachable (attempt %d/%d): %s", attempt + 1, retries, exc)
                time.sleep(delay)
                delay *= 2
        return {"ok": False, "degraded": True, "reason": "name service unreachable"}
    finally:
        if own_client:
            client.close()
