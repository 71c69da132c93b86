"""HTTP client for the control-plane REST contract."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any
from urllib.parse import quote

import httpx

from charter.errors import NotFound, ServerError, Unreachable
from charter.manifest import ManifestDocument, ResourceKey

log = logging.getLogger(__name__)

DEFAULT_CLUSTER_URL = "http://127.0.0.1:8080"
CLUSTER_SCOPE = "-"


@dataclass(frozen=True)
class ClusterEvent:
    sequence: int
    verb: str
    key: ResourceKey
    timestamp: str
    body: dict[str, Any] | None = None

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> ClusterEvent:
        k = data["key"]
        return cls(
            sequence=data["sequence"],
            verb=data["verb"],
            key=ResourceKey(k["kind"], k.get("namespace", ""), k["name"]),
            timestamp=data["timestamp"],
            body=data.get("body"),
        )


def _resource_path(key: ResourceKey) -> str:
    ns = key.namespace or CLUSTER_SCOPE
    return "/api/v1/resources/" + "/".join(quote(part, safe="") for part in (key.kind, ns, key.name))


class ClusterGateway:
    """Talks JSON over REST to a control plane.

    Pass ``client`` to reuse an existing ``httpx.Client`` (for instance an
    in-process test client); otherwise one is created for ``base_url``.
    """

    def __init__(self, base_url: str = DEFAULT_CLUSTER_URL, client: httpx.Client | None = None, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self._http = client or httpx.Client(base_url=self.base_url, timeout=timeout)

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> ClusterGateway:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def _request(self, method: str, path: str, **kwargs: Any) -> httpx.Response:
        try:
            resp = self._http.request(method, path, **kwargs)
        except httpx.TransportError as exc:
            raise Unreachable(f"control plane at {self.base_url} unreachable: {exc}") from None
        return resp

    @staticmethod
    def _check(resp: httpx.Response) -> httpx.Response:
        if resp.status_code >= 400:
            raise ServerError(resp.status_code, resp.text)
        return resp

    def apply(self, doc: ManifestDocument) -> str:
        """Create-or-replace; returns ``"created"`` or ``"updated"``."""
        resp = self._check(self._request("PUT", _resource_path(doc.key), json=doc.body))
        return resp.json()["result"]

    def create(self, doc: ManifestDocument) -> None:
        """Create, failing with ServerError(409) if the resource exists."""
        self._check(self._request("POST", "/api/v1/resources", json=doc.body))

    def delete(self, key: ResourceKey) -> str:
        """Returns ``"deleted"`` or ``"absent"``."""
        resp = self._check(self._request("DELETE", _resource_path(key)))
        return resp.json()["result"]

    def get(self, key: ResourceKey) -> ManifestDocument:
        resp = self._request("GET", _resource_path(key))
        if resp.status_code == 404:
            raise NotFound(f"{key} not found")
        return ManifestDocument.from_body(self._check(resp).json())

    def list(self, kind: str | None = None, namespace: str | None = None, label_selector: str | None = None) -> list[ManifestDocument]:
        params = {}
        if kind:
            params["kind"] = kind
        if namespace is not None:
            params["namespace"] = namespace or CLUSTER_SCOPE
        if label_selector:
            params["labelSelector"] = label_selector
        resp = self._check(self._request("GET", "/api/v1/resources", params=params))
        return [ManifestDocument.from_body(item) for item in resp.json()["items"]]

    def events(self, since: int = 0) -> list[ClusterEvent]:
        resp = self._check(self._request("GET", "/api/v1/events", params={"since": since}))
        return [ClusterEvent.from_json(e) for e in resp.json()["events"]]
