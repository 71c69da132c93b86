"""Release lifecycle against the control plane.

Every revision is persisted as a Secret named
``charter.release.<release>.v<revision>`` in the release namespace, so the
cluster itself holds release state.
"""

from __future__ import annotations

import base64
import contextlib
import copy
import json
import logging
import subprocess
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Any, Iterable, Iterator, Mapping, Sequence

from charter import semver
from charter.chart import CHART_NAME, Chart, ChartArchive, load_archive, render_chart
from charter.errors import (
    ApplyFailed,
    CharterError,
    DependencyUnsatisfied,
    DigestMismatch,
    InvalidReleaseName,
    MissingProvenance,
    NoSuchRelease,
    NoSuchRevision,
    PostRenderFailed,
    PostRenderMalformed,
    ReleaseExists,
    RenderFailed,
    SignatureInvalid,
    VerificationFailed,
)
from charter.gateway.client import ClusterGateway
from charter.manifest import (
    ManifestDocument,
    ResourceKey,
    parse_manifest_stream,
    sort_for_install,
    sort_for_uninstall,
)
from charter import provenance

log = logging.getLogger(__name__)

RECORD_PREFIX = "charter.release."
RECORD_TYPE = "charter.io/release.v1"
OWNER_LABEL = "owner"
OWNER = "charter"

POST_RENDER_TIMEOUT = 30.0
POST_RENDER_MAX_BYTES = 10 * 1024 * 1024

DEPLOYED = "deployed"
SUPERSEDED = "superseded"
FAILED = "failed"
UNINSTALLED = "uninstalled"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds").replace("+00:00", "Z")


def record_name(release: str, number: int) -> str:
    return f"{RECORD_PREFIX}{release}.v{number}"


def is_release_record(key: ResourceKey) -> bool:
    return key.kind == "Secret" and key.name.startswith(RECORD_PREFIX)


@dataclass(frozen=True)
class RevisionSummary:
    revision: int
    status: str
    chart: str
    chart_version: str
    timestamp: str
    note: str | None = None


@dataclass
class Revision:
    number: int
    chart_name: str
    chart_version: str
    values: dict[str, Any]
    manifests: list[ManifestDocument]
    status: str
    timestamp: str = field(default_factory=_now)
    note: str | None = None

    def summary(self) -> RevisionSummary:
        return RevisionSummary(self.number, self.status, self.chart_name, self.chart_version, self.timestamp, self.note)

    def to_json(self) -> dict[str, Any]:
        return {
            "number": self.number,
            "chart_name": self.chart_name,
            "chart_version": self.chart_version,
            "values": self.values,
            "manifests": [d.body for d in self.manifests],
            "status": self.status,
            "timestamp": self.timestamp,
            "note": self.note,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> Revision:
        return cls(
            number=int(data["number"]),
            chart_name=data["chart_name"],
            chart_version=data["chart_version"],
            values=data.get("values") or {},
            manifests=[ManifestDocument.from_body(b) for b in data.get("manifests") or []],
            status=data["status"],
            timestamp=data.get("timestamp", ""),
            note=data.get("note"),
        )


@dataclass
class Release:
    name: str
    namespace: str
    revisions: list[Revision] = field(default_factory=list)

    @property
    def latest(self) -> Revision:
        return self.revisions[-1]

    @property
    def deployed(self) -> Revision | None:
        return next((r for r in reversed(self.revisions) if r.status == DEPLOYED), None)

    @property
    def live(self) -> bool:
        return bool(self.revisions) and self.latest.status != UNINSTALLED

    @property
    def current(self) -> Revision:
        return self.deployed or self.latest

    def revision(self, number: int) -> Revision:
        for rev in self.revisions:
            if rev.number == number:
                return rev
        raise NoSuchRevision(f"release {self.name!r} has no revision {number}")

    @property
    def next_number(self) -> int:
        return self.revisions[-1].number + 1 if self.revisions else 1


@dataclass(frozen=True)
class ReleaseSummary:
    name: str
    namespace: str
    revision: RevisionSummary


@dataclass
class InstallOptions:
    verify: bool = False
    trusted_keys: Sequence[Any] = ()
    provenance: provenance.ProvenanceRecord | None = None
    post_renderer: str | None = None


# -- rendering ---------------------------------------------------------------


def run_post_renderer(
    executable: str,
    stream: str,
    timeout: float = POST_RENDER_TIMEOUT,
    max_bytes: int = POST_RENDER_MAX_BYTES,
) -> str:
    """Pipe ``stream`` through ``executable``; its stdout replaces the stream."""
    try:
        proc = subprocess.Popen([executable], stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.PIPE)
    except OSError as exc:
        raise PostRenderFailed(None, f"cannot run {executable}: {exc.strerror or exc}") from None

    out: list[bytes] = []
    err: list[bytes] = []
    overflow = threading.Event()

    def feed() -> None:
        with contextlib.suppress(BrokenPipeError, OSError):
            proc.stdin.write(stream.encode("utf-8"))
        with contextlib.suppress(BrokenPipeError, OSError):
            proc.stdin.close()

    def drain_stdout() -> None:
        total = 0
        while chunk := proc.stdout.read(65536):
            total += len(chunk)
            if total > max_bytes:
                overflow.set()
                proc.kill()
                return
            out.append(chunk)

    def drain_stderr() -> None:
        while chunk := proc.stderr.read(65536):
            if sum(map(len, err)) < 1 << 20:
                err.append(chunk)

    threads = [threading.Thread(target=f, daemon=True) for f in (feed, drain_stdout, drain_stderr)]
    for t in threads:
        t.start()
    try:
        code = proc.wait(timeout=timeout)
    except subprocess.TimeoutExpired:
        proc.kill()
        proc.wait()
        raise PostRenderFailed(None, f"{executable} timed out after {timeout:g}s") from None
    finally:
        for t in threads:
            t.join(timeout=5)
        for pipe in (proc.stdin, proc.stdout, proc.stderr):
            with contextlib.suppress(OSError):
                pipe.close()
    stderr = b"".join(err).decode("utf-8", "replace")
    if overflow.is_set():
        raise PostRenderFailed(code, f"output exceeds {max_bytes} bytes")
    if code != 0:
        raise PostRenderFailed(code, stderr)
    try:
        return b"".join(out).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise PostRenderMalformed(exc) from None


def rendered_stream(outputs: Mapping[str, str]) -> str:
    parts = []
    for path in sorted(outputs):
        text = outputs[path]
        parts.append(f"---\n# Source: {path}\n{text}")
        if not text.endswith("\n"):
            parts.append("\n")
    return "".join(parts)


def render_release(
    chart: Chart,
    values: Mapping[str, Any],
    release_name: str,
    namespace: str,
    post_renderer: str | None = None,
) -> list[ManifestDocument]:
    try:
        outputs = render_chart(chart, values, release_name, namespace)
        for path, text in outputs.items():
            parse_manifest_stream(text)
    except CharterError as exc:
        raise RenderFailed(exc) from None
    stream = rendered_stream(outputs)
    if post_renderer is None:
        return parse_manifest_stream(stream)
    stream = run_post_renderer(post_renderer, stream)
    try:
        return parse_manifest_stream(stream)
    except CharterError as exc:
        raise PostRenderMalformed(exc) from None


def missing_dependencies(chart: Chart, installed: Iterable[tuple[str, str]]) -> list[str]:
    """Dependencies satisfied neither by a bundled chart nor an installed one."""
    available = [(c.name, c.version) for c in chart.bundled_charts] + list(installed)
    missing = []
    for dep in chart.metadata.dependencies:
        constraint = dep.constraint
        ok = False
        for name, version in available:
            if name != dep.name:
                continue
            try:
                ok = constraint.allows(semver.Version.parse(version))
            except CharterError:
                ok = False
            if ok:
                break
        if not ok:
            missing.append(f"{dep.name} {dep.version}")
    return missing


def verify_source(chart: Chart | ChartArchive, opts: InstallOptions) -> provenance.VerificationResult:
    """Provenance check done before an archive is even unpacked."""
    if not isinstance(chart, ChartArchive):
        raise VerificationFailed(MissingProvenance("verification needs a packaged chart archive"))
    try:
        return provenance.verify(chart, opts.provenance, opts.trusted_keys)
    except (DigestMismatch, SignatureInvalid, MissingProvenance) as exc:
        raise VerificationFailed(exc) from None


# -- manager -----------------------------------------------------------------


class ReleaseManager:
    """Install, upgrade, roll back and remove releases through a gateway.

    ``values`` arguments are the fully merged tree (see
    ``charter.values.merge_values``); ``None`` means the chart defaults.

    One lifecycle operation per (name, namespace) runs at a time within a
    process; distinct releases may proceed concurrently.
    """

    def __init__(self, gateway: ClusterGateway):
        self.gateway = gateway
        self._locks: dict[tuple[str, str], threading.Lock] = {}
        self._guard = threading.Lock()

    @contextlib.contextmanager
    def _locked(self, name: str, namespace: str) -> Iterator[None]:
        with self._guard:
            lock = self._locks.setdefault((name, namespace), threading.Lock())
        with lock:
            yield

    # -- record storage --

    def _record(self, release: Release, rev: Revision) -> ManifestDocument:
        payload = json.dumps(rev.to_json(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        return ManifestDocument.from_body(
            {
                "apiVersion": "v1",
                "kind": "Secret",
                "type": RECORD_TYPE,
                "metadata": {
                    "name": record_name(release.name, rev.number),
                    "namespace": release.namespace,
                    "labels": {
                        OWNER_LABEL: OWNER,
                        "name": release.name,
                        "version": str(rev.number),
                        "status": rev.status,
                    },
                },
                "data": {"release": base64.b64encode(payload).decode("ascii")},
            }
        )

    def _save(self, release: Release, rev: Revision) -> None:
        self.gateway.apply(self._record(release, rev))

    def _load_records(self, namespace: str | None, name: str | None = None) -> list[Release]:
        selector = f"{OWNER_LABEL}={OWNER}" + (f",name={name}" if name else "")
        releases: dict[tuple[str, str], Release] = {}
        for doc in self.gateway.list(kind="Secret", namespace=namespace, label_selector=selector):
            if not doc.name.startswith(RECORD_PREFIX):
                continue
            try:
                data = json.loads(base64.b64decode(doc.body["data"]["release"]))
                rev = Revision.from_json(data)
            except (KeyError, ValueError, TypeError, CharterError) as exc:
                log.warning("ignoring unreadable release record %s: %s", doc.key, exc)
                continue
            rel_name = doc.labels.get("name", "")
            rel = releases.setdefault((doc.namespace or "", rel_name), Release(rel_name, doc.namespace or ""))
            rel.revisions.append(rev)
        for rel in releases.values():
            rel.revisions.sort(key=lambda r: r.number)
        return [releases[k] for k in sorted(releases)]

    def get(self, name: str, namespace: str = "default") -> Release:
        for rel in self._load_records(namespace, name):
            if rel.name == name:
                return rel
        raise NoSuchRelease(f"release {name!r} not found in namespace {namespace!r}")

    # -- helpers --

    def _resolve_chart(self, chart: Chart | ChartArchive, opts: InstallOptions) -> Chart:
        if opts.verify:
            verify_source(chart, opts)
        if isinstance(chart, ChartArchive):
            return load_archive(chart)
        return chart

    def _installed_charts(self, namespace: str, exclude: str | None = None) -> list[tuple[str, str]]:
        out = []
        for rel in self._load_records(namespace):
            if rel.live and rel.name != exclude and rel.deployed is not None:
                out.append((rel.deployed.chart_name, rel.deployed.chart_version))
        return out

    def _prepare(
        self, chart: Chart, values: Mapping[str, Any] | None, name: str, namespace: str, opts: InstallOptions
    ) -> tuple[dict[str, Any], list[ManifestDocument]]:
        missing = missing_dependencies(chart, self._installed_charts(namespace, exclude=name))
        if missing:
            raise DependencyUnsatisfied(missing)
        merged = copy.deepcopy(dict(values) if values is not None else chart.default_values)
        docs = render_release(chart, merged, name, namespace, opts.post_renderer)
        docs = [d.with_namespace(namespace) for d in docs]
        seen: set[ResourceKey] = set()
        for d in docs:
            if d.key in seen:
                raise RenderFailed(ValueError(f"resource {d.key} rendered more than once"))
            seen.add(d.key)
        return merged, sort_for_install(docs)

    def _apply_diff(self, old: list[ManifestDocument], new: list[ManifestDocument]) -> None:
        """Create/update ``new`` in install order, then delete vanished keys."""
        new_keys = {d.key for d in new}
        for doc in sort_for_install(new):
            try:
                self.gateway.apply(doc)
            except CharterError as exc:
                raise ApplyFailed(doc.kind, doc.name, exc) from None
        vanished = [d for d in old if d.key not in new_keys]
        self._delete_all(vanished)

    def _delete_all(self, docs: list[ManifestDocument]) -> None:
        ordered = sort_for_uninstall(docs)
        for i, doc in enumerate(ordered):
            try:
                self.gateway.delete(doc.key)
            except CharterError as exc:
                raise ApplyFailed(doc.kind, doc.name, exc, remaining=[d.key for d in ordered[i:]]) from None

    # -- lifecycle --

    def install(
        self,
        chart: Chart | ChartArchive,
        values: Mapping[str, Any] | None,
        release_name: str,
        namespace: str = "default",
        opts: InstallOptions | None = None,
    ) -> Release:
        opts = opts or InstallOptions()
        if not CHART_NAME.match(release_name):
            raise InvalidReleaseName(f"release name {release_name!r} must match {CHART_NAME.pattern}")
        with self._locked(release_name, namespace):
            chart = self._resolve_chart(chart, opts)
            try:
                release = self.get(release_name, namespace)
            except NoSuchRelease:
                release = Release(release_name, namespace)
            if release.live:
                raise ReleaseExists(f"release {release_name!r} already exists in namespace {namespace!r}")
            merged, docs = self._prepare(chart, values, release_name, namespace, opts)
            rev = Revision(release.next_number, chart.name, chart.version, merged, docs, DEPLOYED)
            release.revisions.append(rev)
            try:
                self._apply_diff([], docs)
            except ApplyFailed:
                rev.status = FAILED
                self._save_quietly(release, rev)
                raise
            self._save(release, rev)
            return release

    def upgrade(
        self,
        release_name: str,
        namespace: str,
        chart: Chart | ChartArchive,
        values: Mapping[str, Any] | None,
        opts: InstallOptions | None = None,
    ) -> Release:
        opts = opts or InstallOptions()
        with self._locked(release_name, namespace):
            release = self.get(release_name, namespace)
            previous = release.deployed
            if not release.live or previous is None:
                raise NoSuchRelease(f"release {release_name!r} has no deployed revision")
            chart = self._resolve_chart(chart, opts)
            merged, docs = self._prepare(chart, values, release_name, namespace, opts)
            rev = Revision(release.next_number, chart.name, chart.version, merged, docs, DEPLOYED)
            return self._transition(release, previous, rev)

    def rollback(self, release_name: str, namespace: str, target_revision: int) -> Release:
        with self._locked(release_name, namespace):
            release = self.get(release_name, namespace)
            target = release.revision(target_revision)
            rev = Revision(
                release.next_number,
                target.chart_name,
                target.chart_version,
                json.loads(json.dumps(target.values)),
                [ManifestDocument.from_body(json.loads(json.dumps(d.body))) for d in target.manifests],
                DEPLOYED,
                note=f"rollback to {target_revision}",
            )
            return self._transition(release, release.deployed, rev)

    def _transition(self, release: Release, previous: Revision | None, rev: Revision) -> Release:
        release.revisions.append(rev)
        try:
            self._apply_diff(previous.manifests if previous else [], rev.manifests)
        except ApplyFailed:
            rev.status = FAILED
            self._save_quietly(release, rev)
            raise
        if previous is not None:
            previous.status = SUPERSEDED
            self._save(release, previous)
        self._save(release, rev)
        return release

    def _save_quietly(self, release: Release, rev: Revision) -> None:
        try:
            self._save(release, rev)
        except CharterError as exc:
            log.error("could not record failed revision %d of %s: %s", rev.number, release.name, exc)

    def uninstall(self, release_name: str, namespace: str = "default") -> Release:
        with self._locked(release_name, namespace):
            release = self.get(release_name, namespace)
            if not release.live:
                raise NoSuchRelease(f"release {release_name!r} is already uninstalled")
            deployed = release.deployed
            # The deployed revision plus any later failed attempts, whose
            # resources may be partially applied.
            start = release.revisions.index(deployed) if deployed else len(release.revisions) - 1
            to_delete: dict[ResourceKey, ManifestDocument] = {}
            for rev in release.revisions[start:]:
                for doc in rev.manifests:
                    to_delete.setdefault(doc.key, doc)
            self._delete_all(list(to_delete.values()))
            latest = release.latest
            if deployed is not None and deployed is not latest:
                deployed.status = SUPERSEDED
                self._save(release, deployed)
            latest.status = UNINSTALLED
            latest.timestamp = _now()
            self._save(release, latest)
            return release

    def purge(self, release_name: str, namespace: str = "default") -> None:
        """Drop the stored history of an uninstalled release."""
        with self._locked(release_name, namespace):
            release = self.get(release_name, namespace)
            if release.live:
                raise ReleaseExists(f"release {release_name!r} is still installed; uninstall it first")
            for rev in release.revisions:
                self.gateway.delete(ResourceKey("Secret", namespace, record_name(release_name, rev.number)))

    def history(self, release_name: str, namespace: str = "default") -> list[RevisionSummary]:
        return [rev.summary() for rev in self.get(release_name, namespace).revisions]

    def list_releases(self, namespace: str | None = None) -> list[ReleaseSummary]:
        rows = [
            ReleaseSummary(rel.name, rel.namespace, rel.current.summary())
            for rel in self._load_records(namespace)
            if rel.live
        ]
        return sorted(rows, key=lambda r: (r.namespace, r.name))


def summary_dict(summary: RevisionSummary | ReleaseSummary) -> dict[str, Any]:
    return asdict(summary)

