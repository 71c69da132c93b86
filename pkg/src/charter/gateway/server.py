"""In-memory mock control plane served over JSON/REST with FastAPI.

All mutations go through one lock, so the event log is totally ordered and
gapless. The store can be rebuilt by replaying the log (see ``replay``).
"""

from __future__ import annotations

import contextlib
import json
import logging
import threading
import time
from contextlib import asynccontextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator, Optional

import uvicorn
from fastapi import Body, FastAPI, HTTPException, Query, Response

from charter.gateway.schemas import (
    ApplyResponse,
    ClusterEventModel,
    DeleteResponse,
    EventList,
    ResourceKeyModel,
    ResourceList,
)

log = logging.getLogger(__name__)

CLUSTER_SCOPE = "-"

Key = tuple[str, str, str]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds").replace("+00:00", "Z")


def key_of(body: dict[str, Any]) -> Key:
    if not isinstance(body, dict):
        raise ValueError("resource body must be a JSON object")
    kind = body.get("kind")
    metadata = body.get("metadata")
    if not isinstance(kind, str) or not kind:
        raise ValueError("resource body needs a non-empty kind")
    if not isinstance(metadata, dict) or not isinstance(metadata.get("name"), str) or not metadata["name"]:
        raise ValueError("resource body needs metadata.name")
    namespace = metadata.get("namespace") or ""
    if not isinstance(namespace, str):
        raise ValueError("metadata.namespace must be a string")
    return (kind, namespace, metadata["name"])


def parse_selector(selector: str | None) -> dict[str, str]:
    if not selector:
        return {}
    pairs: dict[str, str] = {}
    for part in selector.split(","):
        k, sep, v = part.partition("=")
        if not sep or not k.strip():
            raise ValueError(f"malformed label selector {selector!r}")
        pairs[k.strip()] = v.strip()
    return pairs


def matches(body: dict[str, Any], selector: dict[str, str]) -> bool:
    labels = (body.get("metadata") or {}).get("labels") or {}
    return all(k in labels and str(labels[k]) == v for k, v in selector.items())


class Conflict(Exception):
    pass


class MockControlPlane:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._resources: dict[Key, dict[str, Any]] = {}
        self._events: list[ClusterEventModel] = []

    def _emit(self, verb: str, key: Key, body: dict[str, Any] | None) -> int:
        seq = len(self._events) + 1
        self._events.append(
            ClusterEventModel(
                sequence=seq,
                verb=verb,
                key=ResourceKeyModel(kind=key[0], namespace=key[1], name=key[2]),
                timestamp=_now(),
                body=body,
            )
        )
        return seq

    def upsert(self, body: dict[str, Any]) -> tuple[str, int]:
        key = key_of(body)
        with self._lock:
            verb = "update" if key in self._resources else "create"
            self._resources[key] = body
            return ("updated" if verb == "update" else "created"), self._emit(verb, key, body)

    def create(self, body: dict[str, Any]) -> int:
        key = key_of(body)
        with self._lock:
            if key in self._resources:
                raise Conflict(f"{key[0]}/{key[2]} already exists")
            self._resources[key] = body
            return self._emit("create", key, body)

    def get(self, key: Key) -> dict[str, Any] | None:
        with self._lock:
            return self._resources.get(key)

    def delete(self, key: Key) -> tuple[str, int | None]:
        with self._lock:
            if key not in self._resources:
                return "absent", None
            del self._resources[key]
            return "deleted", self._emit("delete", key, None)

    def list(self, kind: str | None = None, namespace: str | None = None, selector: dict[str, str] | None = None) -> list[dict[str, Any]]:
        with self._lock:
            items = sorted(self._resources.items())
        out = []
        for (k, ns, _), body in items:
            if kind is not None and k != kind:
                continue
            if namespace is not None and ns != namespace:
                continue
            if selector and not matches(body, selector):
                continue
            out.append(body)
        return out

    def events(self, since: int = 0) -> list[ClusterEventModel]:
        with self._lock:
            return list(self._events[max(since, 0) :])

    def snapshot(self) -> dict[str, Any]:
        with self._lock:
            return {
                "resources": [body for _, body in sorted(self._resources.items())],
                "events": [e.model_dump() for e in self._events],
            }

    def write_snapshot(self, path: str | Path) -> None:
        target = Path(path)
        tmp = target.with_name(target.name + ".tmp")
        tmp.write_text(json.dumps(self.snapshot(), indent=2, sort_keys=True), encoding="utf-8")
        tmp.replace(target)


def replay(events: list[ClusterEventModel]) -> dict[Key, dict[str, Any]]:
    """Fold an event log over an empty store."""
    store: dict[Key, dict[str, Any]] = {}
    for event in events:
        key = (event.key.kind, event.key.namespace, event.key.name)
        if event.verb == "delete":
            store.pop(key, None)
        else:
            store[key] = event.body or {}
    return store


def _path_key(kind: str, namespace: str, name: str) -> Key:
    return (kind, "" if namespace == CLUSTER_SCOPE else namespace, name)


def create_app(plane: MockControlPlane | None = None, snapshot_path: str | Path | None = None) -> FastAPI:
    plane = plane or MockControlPlane()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        if snapshot_path is not None:
            plane.write_snapshot(snapshot_path)
            log.info("wrote snapshot to %s", snapshot_path)

    app = FastAPI(title="charter mock control plane", version="v1", lifespan=lifespan)
    app.state.plane = plane

    @app.post("/api/v1/resources", response_model=ApplyResponse, status_code=201)
    def create_resource(body: dict[str, Any] = Body(...)):
        try:
            seq = plane.create(body)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        except Conflict as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return ApplyResponse(result="created", sequence=seq)

    @app.put("/api/v1/resources/{kind}/{namespace}/{name}", response_model=ApplyResponse)
    def put_resource(kind: str, namespace: str, name: str, response: Response, body: dict[str, Any] = Body(...)):
        try:
            key = key_of(body)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        if key != _path_key(kind, namespace, name):
            raise HTTPException(status_code=400, detail=f"body identifies {'/'.join(key)}, path names {kind}/{namespace}/{name}")
        result, seq = plane.upsert(body)
        response.status_code = 201 if result == "created" else 200
        return ApplyResponse(result=result, sequence=seq)

    @app.get("/api/v1/resources/{kind}/{namespace}/{name}")
    def get_resource(kind: str, namespace: str, name: str) -> dict[str, Any]:
        body = plane.get(_path_key(kind, namespace, name))
        if body is None:
            raise HTTPException(status_code=404, detail=f"{kind}/{namespace}/{name} not found")
        return body

    @app.delete("/api/v1/resources/{kind}/{namespace}/{name}", response_model=DeleteResponse)
    def delete_resource(kind: str, namespace: str, name: str):
        result, seq = plane.delete(_path_key(kind, namespace, name))
        return DeleteResponse(result=result, sequence=seq)

    @app.get("/api/v1/resources", response_model=ResourceList)
    def list_resources(
        kind: Optional[str] = None,
        namespace: Optional[str] = None,
        labelSelector: Optional[str] = None,
    ):
        try:
            selector = parse_selector(labelSelector)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        ns = None if namespace is None else ("" if namespace == CLUSTER_SCOPE else namespace)
        return ResourceList(items=plane.list(kind or None, ns, selector))

    @app.get("/api/v1/events", response_model=EventList)
    def list_events(since: int = Query(0, ge=0)):
        return EventList(events=plane.events(since))

    return app


class BackgroundServer:
    """Run an ASGI app with uvicorn on a daemon thread (port 0 = any free)."""

    def __init__(self, app: Any, host: str = "127.0.0.1", port: int = 0):
        self.config = uvicorn.Config(app, host=host, port=port, log_level="warning", lifespan="on")
        self.server = uvicorn.Server(self.config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    @property
    def port(self) -> int:
        return self.server.servers[0].sockets[0].getsockname()[1]

    @property
    def url(self) -> str:
        return f"http://{self.config.host}:{self.port}"

    def start(self, timeout: float = 10.0) -> BackgroundServer:
        self.thread.start()
        deadline = time.monotonic() + timeout
        while not self.server.started:
            if not self.thread.is_alive() or time.monotonic() > deadline:
                raise RuntimeError("mock control plane failed to start")
            time.sleep(0.01)
        return self

    def stop(self) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=10)

    def __enter__(self) -> BackgroundServer:
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()


@contextlib.contextmanager
def running_mock_cluster(host: str = "127.0.0.1", port: int = 0) -> Iterator[tuple[BackgroundServer, MockControlPlane]]:
    plane = MockControlPlane()
    with BackgroundServer(create_app(plane), host, port) as server:
        yield server, plane


def serve(host: str, port: int, snapshot_path: str | Path | None = None) -> None:
    uvicorn.run(create_app(snapshot_path=snapshot_path), host=host, port=port, log_level="info")
