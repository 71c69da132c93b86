"""Chart repositories: a flat directory of archives plus ``index.yaml``."""

from __future__ import annotations

import contextlib
import functools
import hashlib
import http.server
import logging
import os
import tempfile
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable
from urllib.parse import urljoin, urlparse
from urllib.request import url2pathname

import httpx

from charter import semver, yamlio
from charter.chart import ChartArchive, archive_filename, load_archive
from charter.errors import (
    CharterError,
    DigestMismatch,
    HttpStatus,
    IoError,
    MalformedIndex,
    MissingProvenance,
    NoMatchingVersion,
    NotFound,
    UnknownRepository,
    Unreachable,
)
from charter.provenance import ProvenanceRecord

log = logging.getLogger(__name__)

INDEX_FILE = "index.yaml"


def rfc3339(ts: float | datetime | None = None) -> str:
    if ts is None:
        dt = datetime.now(timezone.utc)
    elif isinstance(ts, datetime):
        dt = ts.astimezone(timezone.utc)
    else:
        dt = datetime.fromtimestamp(ts, timezone.utc)
    return dt.isoformat(timespec="seconds").replace("+00:00", "Z")


@dataclass(frozen=True)
class IndexEntry:
    name: str
    version: str
    digest: str  # "sha256:<hex>"
    urls: tuple[str, ...]
    created: str
    description: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "version": self.version,
            "description": self.description,
            "digest": self.digest,
            "urls": list(self.urls),
            "created": self.created,
        }

    @classmethod
    def from_dict(cls, raw: Any) -> IndexEntry:
        if not isinstance(raw, dict):
            raise MalformedIndex("index entry must be a mapping")
        try:
            urls = raw["urls"]
            if isinstance(urls, str) or not isinstance(urls, list):
                raise MalformedIndex("entry urls must be a list")
            return cls(
                name=str(raw["name"]),
                version=str(raw["version"]),
                digest=str(raw["digest"]),
                urls=tuple(str(u) for u in urls),
                created=str(raw.get("created", "")),
                description=str(raw.get("description") or ""),
            )
        except KeyError as exc:
            raise MalformedIndex(f"index entry missing {exc.args[0]!r}") from None


def _sorted_desc(entries: Iterable[IndexEntry]) -> list[IndexEntry]:
    return sorted(entries, key=lambda e: semver.Version.parse(e.version), reverse=True)


@dataclass
class RepositoryIndex:
    entries: dict[str, list[IndexEntry]] = field(default_factory=dict)
    generated: str = ""
    api_version: str = "v1"
    # Archives that could not be indexed: filename -> reason. Not serialized.
    failures: dict[str, str] = field(default_factory=dict, compare=False, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "apiVersion": self.api_version,
            "generated": self.generated,
            "entries": {name: [e.to_dict() for e in self.entries[name]] for name in sorted(self.entries)},
        }

    def dump(self) -> str:
        return yamlio.dump(self.to_dict())

    @classmethod
    def parse(cls, text: str | bytes) -> RepositoryIndex:
        if isinstance(text, bytes):
            text = text.decode("utf-8", "replace")
        try:
            raw = yamlio.load(text)
        except yamlio.YAMLError as exc:
            raise MalformedIndex(f"index is not valid YAML: {exc}") from None
        if not isinstance(raw, dict) or raw.get("apiVersion") != "v1":
            raise MalformedIndex("index must be a mapping with apiVersion: v1")
        entries_raw = raw.get("entries")
        if entries_raw is None:
            entries_raw = {}
        if not isinstance(entries_raw, dict):
            raise MalformedIndex("index entries must be a mapping")
        entries: dict[str, list[IndexEntry]] = {}
        for name, versions in entries_raw.items():
            if not isinstance(versions, list):
                raise MalformedIndex(f"entries[{name}] must be a list")
            parsed = [IndexEntry.from_dict(v) for v in versions]
            for e in parsed:
                if e.name != str(name):
                    raise MalformedIndex(f"entry {e.name} listed under {name}")
            try:
                entries[str(name)] = _sorted_desc(parsed)
            except CharterError as exc:
                raise MalformedIndex(f"entries[{name}]: {exc}") from None
        return cls(entries=entries, generated=str(raw.get("generated", "")), api_version="v1")

    def versions(self, name: str) -> list[IndexEntry]:
        return self.entries.get(name, [])

    def latest(self, name: str) -> IndexEntry | None:
        return next(iter(self.versions(name)), None)

    def find(self, name: str, constraint: str | semver.Constraint | None) -> IndexEntry:
        versions = self.versions(name)
        if not versions:
            raise NotFound(f"chart {name!r} not found in repository")
        best = semver.best_match([e.version for e in versions], constraint)
        if best is None:
            raise NoMatchingVersion(f"no version of {name!r} satisfies {constraint}")
        return next(e for e in versions if e.version == best)


# -- generation --------------------------------------------------------------


def generate_index(directory: str | Path, base_url: str | None = None, write: bool = True) -> RepositoryIndex:
    """Scan ``*.tgz`` in ``directory`` and (re)write ``index.yaml``.

    ``created`` is kept from an existing index when the digest is unchanged,
    otherwise taken from the archive's mtime, so regenerating an unchanged
    directory only moves ``generated``.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise IoError(f"{directory}: not a directory")
    previous: dict[tuple[str, str], IndexEntry] = {}
    try:
        old = RepositoryIndex.parse((directory / INDEX_FILE).read_bytes())
        previous = {(e.name, e.version): e for es in old.entries.values() for e in es}
    except (OSError, MalformedIndex):
        pass

    grouped: dict[str, list[IndexEntry]] = {}
    seen: dict[tuple[str, str], str] = {}
    failures: dict[str, str] = {}
    for path in sorted(directory.glob("*.tgz")):
        try:
            archive = ChartArchive.from_path(path)
            meta = load_archive(archive).metadata
            semver.Version.parse(meta.version)
        except CharterError as exc:
            failures[path.name] = f"{exc.name}: {exc}"
            log.warning("skipping %s: %s", path.name, exc)
            continue
        ident = (meta.name, meta.version)
        if ident in seen:
            failures[path.name] = f"duplicate of {seen[ident]} ({meta.name} {meta.version})"
            continue
        seen[ident] = path.name
        digest = "sha256:" + archive.digest
        prior = previous.get(ident)
        created = prior.created if prior and prior.digest == digest else rfc3339(path.stat().st_mtime)
        url = urljoin(base_url.rstrip("/") + "/", path.name) if base_url else path.name
        grouped.setdefault(meta.name, []).append(
            IndexEntry(meta.name, meta.version, digest, (url,), created, meta.description or "")
        )
    index = RepositoryIndex(
        entries={name: _sorted_desc(es) for name, es in grouped.items()},
        generated=rfc3339(),
        failures=failures,
    )
    if write:
        atomic_write(directory / INDEX_FILE, index.dump().encode("utf-8"))
    return index


def atomic_write(target: Path, data: bytes) -> None:
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, target)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


# -- client side -------------------------------------------------------------


@dataclass(frozen=True)
class RepoRef:
    alias: str
    url: str

    def resolve(self, ref: str) -> str:
        """Resolve an index ``urls`` entry against this repository."""
        if urlparse(ref).scheme in ("http", "https", "file"):
            return ref
        if _is_http(self.url) or self.url.startswith("file:"):
            return urljoin(self.url.rstrip("/") + "/", ref)
        return str(Path(self.url) / ref)


def _is_http(url: str) -> bool:
    return urlparse(url).scheme in ("http", "https")


def _read_location(location: str, timeout: float = 10.0) -> bytes:
    if _is_http(location):
        try:
            resp = httpx.get(location, timeout=timeout, follow_redirects=True)
        except httpx.TransportError as exc:
            raise Unreachable(f"{location}: {exc}") from None
        if resp.status_code != 200:
            raise HttpStatus(resp.status_code, location)
        return resp.content
    parsed = urlparse(location)
    path = Path(url2pathname(parsed.path)) if parsed.scheme == "file" else Path(location)
    try:
        return path.read_bytes()
    except FileNotFoundError:
        raise HttpStatus(404, location) from None
    except OSError as exc:
        raise Unreachable(f"{location}: {exc.strerror or exc}") from None


def cache_dir() -> Path:
    env = os.environ.get("CHARTER_CACHE_DIR")
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "charter"


def _cache_path(alias: str) -> Path:
    return cache_dir() / "repository" / f"{alias}-index.yaml"


def fetch_index(repo: RepoRef) -> RepositoryIndex:
    """Download ``<url>/index.yaml`` and refresh the local cache for ``alias``."""
    data = _read_location(repo.resolve(INDEX_FILE))
    index = RepositoryIndex.parse(data)
    atomic_write(_cache_path(repo.alias), data)
    return index


def cached_index(repo: RepoRef, refresh: bool = False) -> RepositoryIndex:
    """Cached index for ``repo``; fetched only when missing or ``refresh``."""
    path = _cache_path(repo.alias)
    if not refresh:
        try:
            return RepositoryIndex.parse(path.read_bytes())
        except (OSError, MalformedIndex):
            pass
    return fetch_index(repo)


def fetch_chart(
    repo: RepoRef,
    name: str,
    version_constraint: str | None = None,
    index: RepositoryIndex | None = None,
) -> ChartArchive:
    """Resolve the highest allowed version, download and digest-check it."""
    index = index if index is not None else cached_index(repo)
    entry = index.find(name, version_constraint)
    archive, _ = _download(repo, entry)
    return archive


def _download(repo: RepoRef, entry: IndexEntry) -> tuple[ChartArchive, str]:
    if not entry.urls:
        raise NotFound(f"index entry {entry.name} {entry.version} lists no download URL")
    location = repo.resolve(entry.urls[0])
    data = _read_location(location)
    actual = "sha256:" + hashlib.sha256(data).hexdigest()
    if actual != entry.digest:
        raise DigestMismatch(f"{location}: downloaded digest {actual} does not match index {entry.digest}")
    return ChartArchive(data, archive_filename(entry.name, entry.version)), location


def fetch_chart_with_provenance(
    repo: RepoRef,
    name: str,
    version_constraint: str | None = None,
    index: RepositoryIndex | None = None,
) -> tuple[ChartArchive, ProvenanceRecord | None]:
    """Like ``fetch_chart`` plus the ``<archive url>.prov`` sidecar, if served."""
    index = index if index is not None else cached_index(repo)
    entry = index.find(name, version_constraint)
    archive, location = _download(repo, entry)
    try:
        record = ProvenanceRecord.parse(_read_location(location + ".prov").decode("utf-8"))
    except HttpStatus as exc:
        if exc.code != 404:
            raise
        record = None
    except UnicodeDecodeError:
        raise MissingProvenance(f"{location}.prov is not text") from None
    return archive, record


def search(indexes: Iterable[tuple[str, RepositoryIndex]], query: str) -> list[tuple[str, IndexEntry]]:
    """Case-insensitive substring match on name and description.

    One row (the newest version) per chart per repository, ordered by
    (name, alias).
    """
    q = query.lower()
    rows = []
    for alias, index in indexes:
        for name in index.entries:
            entry = index.latest(name)
            if entry is None:
                continue
            if q in entry.name.lower() or q in entry.description.lower():
                rows.append((alias, entry))
    return sorted(rows, key=lambda r: (r[1].name, r[0]))


# -- client configuration ----------------------------------------------------


def config_dir() -> Path:
    env = os.environ.get("CHARTER_CONFIG_DIR")
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CONFIG_HOME", Path.home() / ".config")) / "charter"


@dataclass
class RepositoryConfig:
    repositories: list[RepoRef] = field(default_factory=list)

    @property
    def path(self) -> Path:
        return config_dir() / "repositories.yaml"

    @classmethod
    def load(cls) -> RepositoryConfig:
        path = config_dir() / "repositories.yaml"
        try:
            raw = yamlio.load(path.read_text(encoding="utf-8")) or {}
        except FileNotFoundError:
            return cls()
        except (OSError, yamlio.YAMLError) as exc:
            raise IoError(f"{path}: {exc}") from None
        repos = (raw.get("repositories") or []) if isinstance(raw, dict) else []
        return cls([RepoRef(str(r["alias"]), str(r["url"])) for r in repos if isinstance(r, dict)])

    def save(self) -> None:
        data = {"repositories": [{"alias": r.alias, "url": r.url} for r in self.repositories]}
        atomic_write(self.path, yamlio.dump(data).encode("utf-8"))

    def get(self, alias: str) -> RepoRef:
        for repo in self.repositories:
            if repo.alias == alias:
                return repo
        raise UnknownRepository(f"no repository named {alias!r}; add it with 'charter repo add'")

    def add(self, repo: RepoRef) -> None:
        self.repositories = [r for r in self.repositories if r.alias != repo.alias] + [repo]


# -- serving -----------------------------------------------------------------


class _QuietHandler(http.server.SimpleHTTPRequestHandler):
    def log_message(self, format: str, *args: Any) -> None:
        log.debug("repo server: " + format, *args)


class RepositoryServer:
    """Serve a repository directory over plain HTTP (GET only)."""

    def __init__(self, directory: str | Path, host: str = "127.0.0.1", port: int = 0):
        handler = functools.partial(_QuietHandler, directory=str(directory))
        self.httpd = http.server.ThreadingHTTPServer((host, port), handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, args=(0.05,), daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> RepositoryServer:
        self.thread.start()
        return self

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        self.thread.join(timeout=5)

    def __enter__(self) -> RepositoryServer:
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()
