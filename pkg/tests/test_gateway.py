import json
import threading

import httpx
import pytest
from fastapi.testclient import TestClient

from charter.errors import NotFound, ServerError, Unreachable
from charter.gateway import ClusterGateway
from charter.gateway.server import BackgroundServer, MockControlPlane, create_app, replay
from charter.manifest import ManifestDocument, ResourceKey


def doc(kind="ConfigMap", name="c", namespace="default", labels=None, data=None):
    meta = {"name": name}
    if namespace:
        meta["namespace"] = namespace
    if labels:
        meta["labels"] = labels
    return ManifestDocument.from_body({"apiVersion": "v1", "kind": kind, "metadata": meta, "data": data or {}})


def test_apply_get_delete(gateway):
    d = doc(data={"a": "1"})
    assert gateway.apply(d) == "created"
    assert gateway.get(d.key) == d
    changed = doc(data={"a": "2"})
    assert gateway.apply(changed) == "updated"
    assert gateway.get(d.key).body["data"] == {"a": "2"}
    assert gateway.delete(d.key) == "deleted"
    assert gateway.delete(d.key) == "absent"
    with pytest.raises(NotFound):
        gateway.get(d.key)


def test_cluster_scoped_resources(gateway):
    ns = doc("Namespace", "prod", namespace=None)
    gateway.apply(ns)
    assert gateway.get(ResourceKey("Namespace", "", "prod")) == ns
    assert [d.name for d in gateway.list(namespace="")] == ["prod"]


def test_create_conflict(gateway):
    gateway.create(doc())
    with pytest.raises(ServerError) as info:
        gateway.create(doc())
    assert info.value.status == 409


def test_list_filters(gateway):
    gateway.apply(doc("ConfigMap", "a", labels={"app": "x", "tier": "web"}))
    gateway.apply(doc("ConfigMap", "b", "other", labels={"app": "x"}))
    gateway.apply(doc("Secret", "c", labels={"app": "y"}))
    assert [d.name for d in gateway.list(kind="ConfigMap")] == ["a", "b"]
    assert [d.name for d in gateway.list(namespace="other")] == ["b"]
    assert [d.name for d in gateway.list(label_selector="app=x")] == ["a", "b"]
    assert [d.name for d in gateway.list(label_selector="app=x,tier=web")] == ["a"]
    assert gateway.list(label_selector="missing=1") == []


def test_bad_requests(plane):
    client = TestClient(create_app(plane))
    assert client.put("/api/v1/resources/ConfigMap/default/a", json={"kind": "ConfigMap"}).status_code == 400
    mismatched = {"apiVersion": "v1", "kind": "ConfigMap", "metadata": {"name": "b", "namespace": "default"}}
    assert client.put("/api/v1/resources/ConfigMap/default/a", json=mismatched).status_code == 400
    assert client.get("/api/v1/resources", params={"labelSelector": "novalue"}).status_code == 400
    assert client.get("/api/v1/events", params={"since": -1}).status_code == 422
    assert client.post("/api/v1/resources", json=[1]).status_code in (400, 422)


def test_put_status_codes(plane):
    client = TestClient(create_app(plane))
    body = {"apiVersion": "v1", "kind": "ConfigMap", "metadata": {"name": "a", "namespace": "default"}}
    assert client.put("/api/v1/resources/ConfigMap/default/a", json=body).status_code == 201
    assert client.put("/api/v1/resources/ConfigMap/default/a", json=body).status_code == 200


def test_event_log_sequence_and_since(gateway):
    gateway.apply(doc(name="a"))
    gateway.apply(doc(name="a", data={"x": "1"}))
    gateway.delete(doc(name="a").key)
    events = gateway.events()
    assert [(e.sequence, e.verb) for e in events] == [(1, "create"), (2, "update"), (3, "delete")]
    assert [e.sequence for e in gateway.events(since=2)] == [3]
    assert events[1].body["data"] == {"x": "1"} and events[2].body is None


def test_replay_reproduces_store(plane, gateway):
    for i in range(20):
        gateway.apply(doc(name=f"n{i % 7}", data={"i": str(i)}))
        if i % 3 == 0:
            gateway.delete(doc(name=f"n{(i + 2) % 7}").key)
    snapshot = {ResourceKey(*k): body for k, body in replay(plane.events()).items()}
    live = {d.key: d.body for d in gateway.list()}
    assert snapshot == live


def test_concurrent_writes_keep_log_gapless():
    plane = MockControlPlane()
    with BackgroundServer(create_app(plane)) as server:
        def worker(w):
            with ClusterGateway(server.url) as gw:
                for i in range(15):
                    gw.apply(doc(name=f"w{w}-{i % 5}", data={"i": str(i)}))

        threads = [threading.Thread(target=worker, args=(w,)) for w in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        events = plane.events()
    assert [e.sequence for e in events] == list(range(1, 91))
    assert len(replay(events)) == 30 == len(plane.list())


def test_unreachable():
    with pytest.raises(Unreachable):
        ClusterGateway("http://127.0.0.1:9", timeout=1).list()


def test_snapshot_written_on_shutdown(tmp_path):
    path = tmp_path / "snap.json"
    plane = MockControlPlane()
    with TestClient(create_app(plane, snapshot_path=path)) as client:
        gw = ClusterGateway("http://testserver", client=client)
        gw.apply(doc())
    data = json.loads(path.read_text())
    assert len(data["resources"]) == 1 and data["events"][0]["verb"] == "create"


def test_background_server_serves_http():
    with BackgroundServer(create_app()) as server:
        assert server.port > 0
        resp = httpx.get(server.url + "/api/v1/resources")
        assert resp.status_code == 200 and resp.json() == {"items": []}
