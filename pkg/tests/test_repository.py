import hashlib
import os

import pytest
import yaml
from factories import app_chart

from charter import repository
from charter.chart import load_archive, pack
from charter.errors import (
    DigestMismatch,
    HttpStatus,
    MalformedIndex,
    NoMatchingVersion,
    NotFound,
    UnknownRepository,
    Unreachable,
)
from charter.provenance import KeyPair, sign, write_provenance
from charter.repository import RepoRef, RepositoryConfig, RepositoryIndex, RepositoryServer, generate_index


@pytest.fixture
def repo_dir(tmp_path):
    d = tmp_path / "repo"
    d.mkdir()
    for name, version in [("app", "1.0.0"), ("app", "1.2.0"), ("app", "2.0.0"), ("db", "0.3.1")]:
        pack(app_chart(name, version)).write(d)
    return d


@pytest.fixture
def served(repo_dir):
    with RepositoryServer(repo_dir) as server:
        yield server


def test_index_contents(repo_dir):
    index = generate_index(repo_dir)
    raw = yaml.safe_load((repo_dir / "index.yaml").read_text())
    assert raw["apiVersion"] == "v1"
    assert [e["version"] for e in raw["entries"]["app"]] == ["2.0.0", "1.2.0", "1.0.0"]
    entry = raw["entries"]["db"][0]
    assert entry["digest"] == "sha256:" + hashlib.sha256((repo_dir / "db-0.3.1.tgz").read_bytes()).hexdigest()
    assert entry["urls"] == ["db-0.3.1.tgz"]
    assert entry["created"].endswith("Z")
    assert RepositoryIndex.parse((repo_dir / "index.yaml").read_bytes()) == index


def test_index_absolute_urls(repo_dir):
    index = generate_index(repo_dir, base_url="https://charts.example.com/stable")
    assert index.latest("db").urls == ("https://charts.example.com/stable/db-0.3.1.tgz",)


def test_regenerate_changes_only_generated(repo_dir):
    first = generate_index(repo_dir).dump()
    os.utime(repo_dir / "app-1.0.0.tgz", (1, 1))  # mtime moves, digest does not
    second = generate_index(repo_dir).dump()
    a, b = yaml.safe_load(first), yaml.safe_load(second)
    del a["generated"], b["generated"]
    assert a == b


def test_changed_archive_updates_entry(repo_dir):
    generate_index(repo_dir)
    chart = app_chart("db", "0.3.1")
    chart.default_values["tier"] = "changed"
    pack(chart).write(repo_dir)
    entry = generate_index(repo_dir).latest("db")
    assert entry.digest == "sha256:" + hashlib.sha256((repo_dir / "db-0.3.1.tgz").read_bytes()).hexdigest()


def test_bad_archives_are_reported_not_fatal(repo_dir):
    (repo_dir / "broken-0.1.0.tgz").write_bytes(b"garbage")
    index = generate_index(repo_dir)
    assert "broken-0.1.0.tgz" in index.failures
    assert sorted(index.entries) == ["app", "db"]


def test_duplicate_name_version_reported(repo_dir):
    (repo_dir / "copy.tgz").write_bytes((repo_dir / "db-0.3.1.tgz").read_bytes())
    index = generate_index(repo_dir)
    assert len(index.versions("db")) == 1 and len(index.failures) == 1


@pytest.mark.parametrize(
    "text",
    ["not: [yaml", "- a list", "apiVersion: v2\nentries: {}", "apiVersion: v1\nentries: []",
     "apiVersion: v1\nentries:\n  a:\n    - {name: a, version: 1.0.0}",
     "apiVersion: v1\nentries:\n  a:\n    - {name: b, version: 1.0.0, digest: x, urls: [u]}",
     "apiVersion: v1\nentries:\n  a:\n    - {name: a, version: bogus, digest: x, urls: [u]}"],
)
def test_malformed_index(text):
    with pytest.raises(MalformedIndex):
        RepositoryIndex.parse(text)


def test_find_versions(repo_dir):
    index = generate_index(repo_dir)
    assert index.find("app", None).version == "2.0.0"
    assert index.find("app", "^1.0.0").version == "1.2.0"
    assert index.find("app", "1.0.0").version == "1.0.0"
    with pytest.raises(NoMatchingVersion):
        index.find("app", "^3.0.0")
    with pytest.raises(NotFound):
        index.find("nope", None)


def test_fetch_over_http(repo_dir, served):
    generate_index(repo_dir)
    ref = RepoRef("stable", served.url)
    index = repository.fetch_index(ref)
    archive = repository.fetch_chart(ref, "app", "^1.0.0", index)
    assert load_archive(archive).version == "1.2.0"
    assert archive.filename == "app-1.2.0.tgz"


def test_fetch_from_local_directory_and_file_url(repo_dir):
    generate_index(repo_dir)
    for url in (str(repo_dir), repo_dir.as_uri()):
        archive = repository.fetch_chart(RepoRef("local", url), "db")
        assert load_archive(archive).name == "db"


def test_fetch_detects_tampered_archive(repo_dir, served):
    generate_index(repo_dir)
    path = repo_dir / "app-2.0.0.tgz"
    data = bytearray(path.read_bytes())
    data[100] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(DigestMismatch):
        repository.fetch_chart(RepoRef("stable", served.url), "app")


def test_fetch_with_provenance(repo_dir, served):
    generate_index(repo_dir)
    key = KeyPair.generate()
    archive = pack(app_chart("db", "0.3.1"))
    write_provenance(sign(archive, key), repo_dir / "db-0.3.1.tgz")
    ref = RepoRef("stable", served.url)
    got, record = repository.fetch_chart_with_provenance(ref, "db")
    assert record is not None and record.signer_id == key.fingerprint and got.data == archive.data
    _, none = repository.fetch_chart_with_provenance(ref, "app")
    assert none is None


def test_http_errors(served, tmp_path):
    with pytest.raises(HttpStatus) as info:
        repository.fetch_index(RepoRef("x", served.url + "/missing"))
    assert info.value.code == 404
    with pytest.raises(Unreachable):
        repository.fetch_index(RepoRef("x", "http://127.0.0.1:9"))


def test_cached_index_avoids_network(repo_dir):
    generate_index(repo_dir)
    with RepositoryServer(repo_dir) as server:
        ref = RepoRef("stable", server.url)
        repository.fetch_index(ref)
    assert repository.cached_index(ref).latest("app").version == "2.0.0"
    with pytest.raises(Unreachable):
        repository.cached_index(ref, refresh=True)


def test_search(repo_dir):
    index = generate_index(repo_dir)
    other = RepositoryIndex(entries={"app": index.versions("app")[1:]})
    rows = repository.search([("zeta", index), ("alpha", other)], "AP")
    # "AP" also hits db through its description "test app"
    assert [(alias, e.name, e.version) for alias, e in rows] == [
        ("alpha", "app", "1.2.0"), ("zeta", "app", "2.0.0"), ("zeta", "db", "0.3.1"),
    ]
    assert [e.name for _, e in repository.search([("z", index)], "db")] == ["db"]
    assert repository.search([("z", index)], "zzz") == []


def test_repository_config(tmp_path):
    config = RepositoryConfig.load()
    assert config.repositories == []
    config.add(RepoRef("a", "http://one"))
    config.add(RepoRef("b", "http://two"))
    config.add(RepoRef("a", "http://three"))
    config.save()
    again = RepositoryConfig.load()
    assert [(r.alias, r.url) for r in again.repositories] == [("b", "http://two"), ("a", "http://three")]
    assert again.get("a").url == "http://three"
    with pytest.raises(UnknownRepository):
        again.get("zzz")


def test_two_version_repository_caret_zero_minor(tmp_path):
    d = tmp_path / "two"
    d.mkdir()
    pack(app_chart("web", "0.1.0")).write(d)
    pack(app_chart("web", "0.2.0")).write(d)
    generated = generate_index(d)
    with RepositoryServer(d) as server:
        ref = RepoRef("two", server.url)
        served = repository.fetch_index(ref)
        assert served == generated and len(served.versions("web")) == 2
        # brute-force filter: ^0.1 admits >=0.1.0 and <0.2.0
        allowed = [e.version for e in served.versions("web") if e.version.startswith("0.1.")]
        assert allowed == ["0.1.0"]
        assert load_archive(repository.fetch_chart(ref, "web", "^0.1")).version == "0.1.0"
        with pytest.raises(NotFound):
            repository.fetch_chart(ref, "absent")
