import json
import os
from dataclasses import asdict

import pytest

from charter.cli import main
from charter.gateway import ClusterGateway
from charter.gateway.server import BackgroundServer, MockControlPlane, create_app
from charter.release import ReleaseManager
from charter.repository import RepositoryServer


@pytest.fixture
def cluster(monkeypatch):
    plane = MockControlPlane()
    with BackgroundServer(create_app(plane)) as server:
        monkeypatch.setenv("CHARTER_CLUSTER_URL", server.url)
        yield plane


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def workload(plane):
    return [b for b in plane.list() if not b["metadata"]["name"].startswith("charter.release.")]


def test_help_and_usage_errors(capsys):
    code, out, _ = run(capsys, "--help")
    assert code == 0 and "install" in out
    code, _, err = run(capsys, "install")
    assert code == 2 and "Missing argument" in err and "Usage:" in err
    code, _, err = run(capsys, "frobnicate")
    assert code == 2
    code, _, err = run(capsys, "rollback", "r", "zero")
    assert code == 2


def test_create_lint_package(capsys, workdir):
    assert run(capsys, "create", "web")[0] == 0
    assert run(capsys, "create", "web")[0] == 1
    code, out, _ = run(capsys, "lint", "web")
    assert code == 0 and "0 error(s), 0 warning(s)" in out
    (workdir / "web" / "templates" / "broken.yaml").write_text("{{ if }}")
    code, out, _ = run(capsys, "lint", "web")
    assert code == 1 and "[ERROR] template-parse" in out
    code, _, err = run(capsys, "package", "web")
    assert code == 1 and err.startswith("Error: LintFailed:")
    (workdir / "web" / "templates" / "broken.yaml").unlink()
    code, out, _ = run(capsys, "package", "web", "-d", "dist")
    assert code == 0 and (workdir / "dist" / "web-0.1.0.tgz").is_file()


def test_package_sign_and_verify(capsys, workdir):
    run(capsys, "create", "web")
    assert run(capsys, "keygen", "me")[0] == 0
    assert run(capsys, "package", "web", "--sign")[0] == 2
    assert run(capsys, "package", "web", "--sign", "--key", "me.key")[0] == 0
    assert (workdir / "web-0.1.0.tgz.prov").is_file()
    code, out, _ = run(capsys, "verify", "web-0.1.0.tgz", "--trusted-key", "me.pub", "-o", "json")
    assert code == 0 and json.loads(out)["chart_name"] == "web"
    run(capsys, "keygen", "other")
    code, _, err = run(capsys, "verify", "web-0.1.0.tgz", "--trusted-key", "other.pub")
    assert code == 1 and "SignatureInvalid" in err


def test_repo_flow_and_search(capsys, workdir):
    run(capsys, "create", "web")
    (workdir / "repo").mkdir()
    run(capsys, "package", "web", "-d", "repo")
    code, out, _ = run(capsys, "repo", "index", "repo")
    assert code == 0 and "1 chart version" in out
    with RepositoryServer(workdir / "repo") as server:
        assert run(capsys, "repo", "add", "stable", server.url)[0] == 0
        code, out, _ = run(capsys, "repo", "list", "-o", "json")
        assert json.loads(out) == [{"alias": "stable", "url": server.url}]
        assert run(capsys, "repo", "update")[0] == 0
    code, out, _ = run(capsys, "search", "we", "-o", "json")
    assert code == 0 and [(r["repository"], r["name"]) for r in json.loads(out)] == [("stable", "web")]
    code, _, err = run(capsys, "repo", "add", "dead", "http://127.0.0.1:9")
    assert code == 1 and "Unreachable" in err


def test_install_values_precedence(capsys, workdir, cluster):
    run(capsys, "create", "web")
    (workdir / "v.yaml").write_text("replicaCount: 3\nservice:\n  port: 8080\n")
    code, out, err = run(capsys, "install", "r", "web", "-f", "v.yaml", "--set", "replicaCount=5")
    assert code == 0, err
    deploy = next(b for b in workload(cluster) if b["kind"] == "Deployment")
    assert deploy["spec"]["replicas"] == 5
    assert deploy["spec"]["template"]["spec"]["containers"][0]["ports"][0]["containerPort"] == 8080
    code, _, err = run(capsys, "install", "r", "web")
    assert code == 1 and "ReleaseExists" in err
    code, _, err = run(capsys, "upgrade", "r", "web", "--set", "bad")
    assert code == 1 and "MalformedSetPair" in err


def test_release_commands(capsys, workdir, cluster):
    run(capsys, "create", "web")
    run(capsys, "install", "r", "web", "-n", "team")
    run(capsys, "upgrade", "r", "web", "-n", "team", "--set", "replicaCount=2")
    assert run(capsys, "rollback", "r", "1", "-n", "team")[0] == 0
    code, out, _ = run(capsys, "history", "r", "-n", "team", "-o", "json")
    assert [h["status"] for h in json.loads(out)] == ["superseded", "superseded", "deployed"]
    code, out, _ = run(capsys, "history", "r", "-n", "team")
    assert out.splitlines()[0].split() == ["REVISION", "STATUS", "CHART", "UPDATED", "NOTE"]
    code, out, _ = run(capsys, "list", "-o", "json")
    assert [(r["name"], r["namespace"]) for r in json.loads(out)] == [("r", "team")]
    code, _, err = run(capsys, "history", "r")  # default namespace
    assert code == 1 and "NoSuchRelease" in err
    assert run(capsys, "uninstall", "r", "-n", "team", "--purge")[0] == 0
    assert cluster.list() == []


def test_namespace_from_environment(capsys, workdir, cluster, monkeypatch):
    run(capsys, "create", "web")
    monkeypatch.setenv("CHARTER_NAMESPACE", "envns")
    run(capsys, "install", "r", "web")
    assert {b["metadata"].get("namespace") for b in workload(cluster)} == {"envns"}
    run(capsys, "install", "r2", "web", "-n", "flagns")  # flag wins
    assert "flagns" in {b["metadata"].get("namespace") for b in workload(cluster)}


def test_install_from_archive_with_verify(capsys, workdir, cluster):
    run(capsys, "create", "web")
    run(capsys, "keygen", "me")
    run(capsys, "package", "web", "--sign", "--key", "me.key")
    code, _, err = run(capsys, "install", "r", "web-0.1.0.tgz", "--verify", "--trusted-key", "me.pub")
    assert code == 0, err
    data = bytearray((workdir / "web-0.1.0.tgz").read_bytes())
    data[50] ^= 1
    (workdir / "web-0.1.0.tgz").write_bytes(bytes(data))
    code, _, err = run(capsys, "install", "r2", "web-0.1.0.tgz", "--verify", "--trusted-key", "me.pub")
    assert code == 1 and "VerificationFailed" in err
    assert {b["metadata"]["name"] for b in workload(cluster)} == {"r-web"}


def test_post_render_flag(capsys, workdir, cluster, script):
    run(capsys, "create", "web")
    hook = script("import sys\nsys.stdout.write(sys.stdin.read().replace('ClusterIP', 'NodePort'))\n")
    assert run(capsys, "install", "r", "web", "--post-render", hook)[0] == 0
    svc = next(b for b in workload(cluster) if b["kind"] == "Service")
    assert svc["spec"]["type"] == "NodePort"


def test_unreachable_cluster(capsys, workdir):
    run(capsys, "create", "web")
    code, _, err = run(capsys, "install", "r", "web", "--cluster-url", "http://127.0.0.1:9")
    assert code == 1 and "Unreachable" in err


def test_unknown_chart_reference(capsys, workdir, cluster):
    code, _, err = run(capsys, "install", "r", "nothing-here")
    assert code == 1 and "NotFound" in err


def test_history_json_matches_library(capsys, workdir, cluster):
    run(capsys, "create", "web")
    run(capsys, "install", "web", "web")
    run(capsys, "upgrade", "web", "web", "--set", "replicaCount=2")
    code, out, _ = run(capsys, "history", "web", "--output", "json")
    manager = ReleaseManager(ClusterGateway(os.environ["CHARTER_CLUSTER_URL"]))
    assert json.loads(out) == [asdict(r) for r in manager.history("web")]
    assert len(json.loads(out)) == 2
