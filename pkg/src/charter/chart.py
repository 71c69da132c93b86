"""Charts: metadata, on-disk layout, deterministic archives, rendering and lint."""

from __future__ import annotations

import gzip
import hashlib
import io
import posixpath
import re
import tarfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from charter import semver, yamlio
from charter.errors import (
    AlreadyExists,
    CharterError,
    DuplicateDefine,
    InvalidConstraint,
    IoError,
    LintFailed,
    MalformedMetadata,
    MalformedValuesFile,
    NotAChart,
    TemplateError,
)
from charter.manifest import parse_manifest_stream
from charter.template import RenderContext, is_partial, parse_templates, render_chart_templates
from charter.template.exec import FUNCTION_NAMES
from charter.template.parse import parse_file
from charter.values import deep_merge, parse_values_text

CHART_NAME = re.compile(r"^[a-z0-9]([a-z0-9-]*[a-z0-9])?$")
KINDS = ("application", "library")


@dataclass(frozen=True)
class DependencyRef:
    name: str
    version: str
    repository: str | None = None

    @property
    def constraint(self) -> semver.Constraint:
        return semver.Constraint.parse(self.version)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"name": self.name, "version": self.version}
        if self.repository:
            d["repository"] = self.repository
        return d


@dataclass(frozen=True)
class ChartMetadata:
    name: str
    version: str
    description: str | None = None
    kind: str = "application"
    dependencies: tuple[DependencyRef, ...] = ()

    @property
    def is_library(self) -> bool:
        return self.kind == "library"

    @classmethod
    def from_dict(cls, raw: Any, where: str = "Chart.yaml") -> ChartMetadata:
        if not isinstance(raw, dict):
            raise MalformedMetadata(f"{where}: expected a mapping")
        for key in ("name", "version"):
            if raw.get(key) is None or isinstance(raw[key], (dict, list)):
                raise MalformedMetadata(f"{where}: missing or invalid {key!r}")
        deps = raw.get("dependencies") or []
        if not isinstance(deps, list):
            raise MalformedMetadata(f"{where}: dependencies must be a list")
        refs = []
        for i, dep in enumerate(deps):
            if not isinstance(dep, dict) or "name" not in dep:
                raise MalformedMetadata(f"{where}: dependency {i} needs a name")
            refs.append(
                DependencyRef(
                    name=str(dep["name"]),
                    version=str(dep.get("version", "")),
                    repository=dep.get("repository") or None,
                )
            )
        description = raw.get("description")
        return cls(
            name=str(raw["name"]),
            version=str(raw["version"]),
            description=str(description) if description is not None else None,
            kind=str(raw.get("kind") or "application"),
            dependencies=tuple(refs),
        )

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"name": self.name, "version": self.version}
        if self.description is not None:
            d["description"] = self.description
        d["kind"] = self.kind
        if self.dependencies:
            d["dependencies"] = [dep.to_dict() for dep in self.dependencies]
        return d


@dataclass
class Chart:
    metadata: ChartMetadata
    default_values: dict[str, Any] = field(default_factory=dict)
    templates: dict[str, str] = field(default_factory=dict)
    bundled_charts: list[Chart] = field(default_factory=list)
    extra_files: dict[str, bytes] = field(default_factory=dict)
    # Original values.yaml text, kept so packaging preserves comments.
    values_text: str | None = field(default=None, compare=False, repr=False)

    @property
    def name(self) -> str:
        return self.metadata.name

    @property
    def version(self) -> str:
        return self.metadata.version

    @property
    def libraries(self) -> list[Chart]:
        return [c for c in self.bundled_charts if c.metadata.is_library]

    @property
    def subcharts(self) -> list[Chart]:
        return [c for c in self.bundled_charts if not c.metadata.is_library]


@dataclass(frozen=True)
class ChartArchive:
    data: bytes
    filename: str

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.data).hexdigest()

    @classmethod
    def from_path(cls, path: str | Path) -> ChartArchive:
        path = Path(path)
        try:
            return cls(path.read_bytes(), path.name)
        except OSError as exc:
            raise IoError(f"{path}: {exc.strerror or exc}") from None

    def write(self, directory: str | Path) -> Path:
        target = Path(directory) / self.filename
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(self.data)
        except OSError as exc:
            raise IoError(f"{target}: {exc.strerror or exc}") from None
        return target


def archive_filename(name: str, version: str) -> str:
    return f"{name}-{version}.tgz"


# -- loading -----------------------------------------------------------------


def _chart_from_files(files: Mapping[str, bytes], where: str) -> Chart:
    if "Chart.yaml" not in files:
        raise NotAChart(f"{where}: no Chart.yaml")
    try:
        raw = yamlio.load(files["Chart.yaml"].decode("utf-8"))
    except (yamlio.YAMLError, UnicodeDecodeError) as exc:
        raise MalformedMetadata(f"{where}/Chart.yaml: {exc}") from None
    metadata = ChartMetadata.from_dict(raw, f"{where}/Chart.yaml")

    values_text = None
    values: dict[str, Any] = {}
    if "values.yaml" in files:
        try:
            values_text = files["values.yaml"].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedValuesFile(f"{where}/values.yaml: {exc}") from None
        values = parse_values_text(values_text, f"{where}/values.yaml")

    templates: dict[str, str] = {}
    extra: dict[str, bytes] = {}
    sub_files: dict[str, dict[str, bytes]] = {}
    sub_archives: dict[str, bytes] = {}
    for path, data in files.items():
        if path in ("Chart.yaml", "values.yaml"):
            continue
        if path.startswith("templates/"):
            try:
                templates[path] = data.decode("utf-8")
            except UnicodeDecodeError:
                raise IoError(f"{where}/{path}: template is not UTF-8") from None
        elif path.startswith("charts/"):
            rest = path[len("charts/") :]
            head, sep, tail = rest.partition("/")
            if sep:
                sub_files.setdefault(head, {})[tail] = data
            elif head.endswith(".tgz"):
                sub_archives[head] = data
            else:
                extra[path] = data
        else:
            extra[path] = data

    bundled = [_chart_from_files(sub_files[d], f"{where}/charts/{d}") for d in sorted(sub_files)]
    bundled += [_load_archive_bytes(sub_archives[a], f"{where}/charts/{a}") for a in sorted(sub_archives)]
    return Chart(
        metadata=metadata,
        default_values=values,
        templates=templates,
        bundled_charts=bundled,
        extra_files=extra,
        values_text=values_text,
    )


def _safe_member(name: str) -> bool:
    norm = posixpath.normpath(name)
    return not (norm.startswith("/") or norm == ".." or norm.startswith("../"))


def _load_archive_bytes(data: bytes, where: str) -> Chart:
    files: dict[str, bytes] = {}
    tops: set[str] = set()
    try:
        with tarfile.open(fileobj=io.BytesIO(data), mode="r:gz") as tar:
            for member in tar:
                if not _safe_member(member.name):
                    raise NotAChart(f"{where}: unsafe path {member.name!r} in archive")
                name = posixpath.normpath(member.name)
                top, _, rel = name.partition("/")
                tops.add(top)
                if member.isfile() and rel:
                    fh = tar.extractfile(member)
                    files[rel] = fh.read() if fh is not None else b""
    except (tarfile.TarError, EOFError, zlib.error, OSError) as exc:
        raise IoError(f"{where}: cannot read archive: {exc}") from None
    if len(tops) != 1:
        raise NotAChart(f"{where}: archive must hold a single top-level directory")
    return _chart_from_files(files, where)


def _read_tree(root: Path) -> dict[str, bytes]:
    files: dict[str, bytes] = {}
    try:
        for p in sorted(root.rglob("*")):
            if p.is_file():
                files[p.relative_to(root).as_posix()] = p.read_bytes()
    except OSError as exc:
        raise IoError(f"{root}: {exc.strerror or exc}") from None
    return files


def load(path: str | Path) -> Chart:
    """Load a chart from a directory or a ``.tgz`` archive."""
    path = Path(path)
    if path.is_dir():
        if not (path / "Chart.yaml").is_file():
            raise NotAChart(f"{path}: no Chart.yaml")
        return _chart_from_files(_read_tree(path), str(path))
    if not path.exists():
        raise IoError(f"{path}: no such file or directory")
    return load_archive(ChartArchive.from_path(path))


def load_archive(archive: ChartArchive) -> Chart:
    return _load_archive_bytes(archive.data, archive.filename)


# -- packaging ---------------------------------------------------------------


def _values_bytes(chart: Chart) -> bytes:
    if chart.values_text is not None:
        try:
            if parse_values_text(chart.values_text) == chart.default_values:
                return chart.values_text.encode("utf-8")
        except MalformedValuesFile:
            pass
    return yamlio.dump(chart.default_values).encode("utf-8")


def chart_files(chart: Chart) -> dict[str, bytes]:
    """Flatten a chart to relative path -> bytes, bundled charts included."""
    files: dict[str, bytes] = {
        "Chart.yaml": yamlio.dump(chart.metadata.to_dict()).encode("utf-8"),
        "values.yaml": _values_bytes(chart),
    }
    for path, text in chart.templates.items():
        files[path] = text.encode("utf-8")
    files.update(chart.extra_files)
    for sub in chart.bundled_charts:
        for path, data in chart_files(sub).items():
            files[f"charts/{sub.name}/{path}"] = data
    return files


def _deterministic_tgz(prefix: str, files: Mapping[str, bytes]) -> bytes:
    tar_buf = io.BytesIO()
    with tarfile.open(fileobj=tar_buf, mode="w", format=tarfile.PAX_FORMAT) as tar:
        for rel in sorted(files):
            data = files[rel]
            info = tarfile.TarInfo(f"{prefix}/{rel}")
            info.size = len(data)
            info.mtime = 0
            info.mode = 0o644
            info.uid = info.gid = 0
            info.uname = info.gname = ""
            tar.addfile(info, io.BytesIO(data))
    out = io.BytesIO()
    with gzip.GzipFile(filename="", mode="wb", fileobj=out, mtime=0, compresslevel=9) as gz:
        gz.write(tar_buf.getvalue())
    return out.getvalue()


def pack(chart: Chart) -> ChartArchive:
    report = lint(chart)
    if report.errors:
        raise LintFailed(report)
    data = _deterministic_tgz(chart.name, chart_files(chart))
    return ChartArchive(data, archive_filename(chart.name, chart.version))


def write_chart(chart: Chart, directory: str | Path) -> Path:
    """Write ``chart`` out in directory form under ``directory/<name>``."""
    root = Path(directory) / chart.name
    for rel, data in chart_files(chart).items():
        target = root / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
    (root / "charts").mkdir(exist_ok=True)
    (root / "templates").mkdir(exist_ok=True)
    return root


# -- rendering ---------------------------------------------------------------


def _library_files(chart: Chart, prefix: str) -> dict[str, dict[str, str]]:
    libs: dict[str, dict[str, str]] = {}
    for lib in chart.libraries:
        lib_prefix = f"{prefix}charts/{lib.name}/"
        libs[lib.name] = {lib_prefix + p: t for p, t in lib.templates.items()}
        for inner, files in _library_files(lib, lib_prefix).items():
            libs.setdefault(inner, {}).update(files)
    return libs


def chart_context(chart: Chart, values: Mapping[str, Any], release_name: str, namespace: str, strict: bool = False) -> RenderContext:
    meta = chart.metadata
    return RenderContext(
        values=values,
        chart={"Name": meta.name, "Version": meta.version, "Description": meta.description or "", "Kind": meta.kind},
        release={"Name": release_name, "Namespace": namespace},
        strict=strict,
    )


def render_chart(
    chart: Chart,
    values: Mapping[str, Any],
    release_name: str = "release-name",
    namespace: str = "default",
    strict: bool = False,
    warnings: list[str] | None = None,
    _prefix: str = "",
) -> dict[str, str]:
    """Render a chart and its bundled application charts to path -> text.

    Library charts contribute only their defines. A bundled application
    chart sees its own defaults overlaid with the parent's ``values[<name>]``.
    """
    if chart.metadata.is_library:
        return {}
    files = {_prefix + p: t for p, t in chart.templates.items()}
    tset = parse_templates(files, _library_files(chart, _prefix))
    ctx = chart_context(chart, values, release_name, namespace, strict)
    out = render_chart_templates(tset, ctx, warnings)
    for sub in chart.subcharts:
        scoped = values.get(sub.name)
        sub_values = deep_merge(sub.default_values, scoped if isinstance(scoped, Mapping) else {})
        out.update(
            render_chart(sub, sub_values, release_name, namespace, strict, warnings, f"{_prefix}charts/{sub.name}/")
        )
    return out


# -- lint --------------------------------------------------------------------


@dataclass(frozen=True)
class LintFinding:
    severity: str  # "error" | "warning"
    rule: str
    path: str
    message: str


@dataclass
class LintReport:
    findings: list[LintFinding] = field(default_factory=list)

    @property
    def errors(self) -> list[LintFinding]:
        return [f for f in self.findings if f.severity == "error"]

    @property
    def warnings(self) -> list[LintFinding]:
        return [f for f in self.findings if f.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def error(self, rule: str, path: str, message: str) -> None:
        self.findings.append(LintFinding("error", rule, path, message))

    def warn(self, rule: str, path: str, message: str) -> None:
        self.findings.append(LintFinding("warning", rule, path, message))


def lint(chart: Chart, _prefix: str = "") -> LintReport:
    """Check a loaded chart. Findings are returned, never raised."""
    report = LintReport()
    meta = chart.metadata
    chart_yaml = _prefix + "Chart.yaml"
    if not CHART_NAME.match(meta.name):
        report.error("metadata-name", chart_yaml, f"chart name {meta.name!r} must match {CHART_NAME.pattern}")
    if not semver.is_valid(meta.version):
        report.error("metadata-version", chart_yaml, f"version {meta.version!r} is not a valid semantic version")
    if meta.kind not in KINDS:
        report.error("metadata-kind", chart_yaml, f"kind must be one of {', '.join(KINDS)}, got {meta.kind!r}")
    if not meta.description:
        report.warn("metadata-description", chart_yaml, "chart has no description")
    for dep in meta.dependencies:
        if not dep.name:
            report.error("dependency-constraint", chart_yaml, "dependency with empty name")
        try:
            dep.constraint
        except InvalidConstraint as exc:
            report.error("dependency-constraint", chart_yaml, f"dependency {dep.name!r}: {exc}")

    if meta.is_library:
        for path in sorted(chart.templates):
            if not is_partial(path):
                report.error("library-templates", _prefix + path, "library chart must not render manifests")

    parse_ok = True
    for path in sorted(chart.templates):
        try:
            parse_file(chart.templates[path], _prefix + path, FUNCTION_NAMES)
        except TemplateError as exc:
            parse_ok = False
            report.error("template-parse", _prefix + path, str(exc))

    for sub in chart.bundled_charts:
        report.findings.extend(lint(sub, f"{_prefix}charts/{sub.name}/").findings)

    if parse_ok and not _prefix and report.ok:
        _lint_render(chart, report)
    return report


def _lint_render(chart: Chart, report: LintReport) -> None:
    warnings: list[str] = []
    try:
        outputs = render_chart(chart, chart.default_values, warnings=warnings)
    except DuplicateDefine as exc:
        report.error("template-parse", exc.path or "", str(exc))
        return
    except TemplateError as exc:
        report.error("template-render", exc.path or "", str(exc))
        return
    except CharterError as exc:
        report.error("template-render", "", f"{exc.name}: {exc}")
        return
    for message in warnings:
        report.warn("template-render", message.split(":", 1)[0], message)
    for path, text in sorted(outputs.items()):
        try:
            parse_manifest_stream(text)
        except CharterError as exc:
            report.error("manifest-parse", path, f"{exc.name}: {exc}")


def lint_path(path: str | Path) -> LintReport:
    """Lint a chart directory or archive, reporting load failures as findings."""
    try:
        chart = load(path)
    except NotAChart as exc:
        report = LintReport()
        report.error("chart-yaml", "Chart.yaml", str(exc))
        return report
    except MalformedMetadata as exc:
        report = LintReport()
        report.error("chart-yaml", "Chart.yaml", str(exc))
        return report
    except MalformedValuesFile as exc:
        report = LintReport()
        report.error("values-yaml", "values.yaml", str(exc))
        return report
    except IoError as exc:
        report = LintReport()
        report.error("chart-files", str(path), str(exc))
        return report
    return lint(chart)


# -- scaffold ----------------------------------------------------------------

_VALUES = """\
# Default values for {name}.
replicaCount: 1

image:
  repository: nginx
  tag: "1.25"
  pullPolicy: IfNotPresent

service:
  type: ClusterIP
  port: 80
"""

_HELPERS = """\
{{{{/* Name of the release's resources. */}}}}
{{{{- define "{name}.fullname" -}}}}
{{{{- printf "%s-%s" .Release.Name .Chart.Name -}}}}
{{{{- end }}}}

{{{{- define "{name}.selectorLabels" -}}}}
app.kubernetes.io/name: {{{{ .Chart.Name }}}}
app.kubernetes.io/instance: {{{{ .Release.Name }}}}
{{{{- end }}}}

{{{{- define "{name}.labels" -}}}}
{{{{ include "{name}.selectorLabels" . }}}}
app.kubernetes.io/version: {{{{ .Chart.Version | quote }}}}
app.kubernetes.io/managed-by: charter
{{{{- end }}}}
"""

_DEPLOYMENT = """\
apiVersion: apps/v1
kind: Deployment
metadata:
  name: {{{{ include "{name}.fullname" . }}}}
  labels:
    {{{{- include "{name}.labels" . | nindent 4 }}}}
spec:
  replicas: {{{{ .Values.replicaCount }}}}
  selector:
    matchLabels:
      {{{{- include "{name}.selectorLabels" . | nindent 6 }}}}
  template:
    metadata:
      labels:
        {{{{- include "{name}.selectorLabels" . | nindent 8 }}}}
    spec:
      containers:
        - name: {{{{ .Chart.Name }}}}
          image: {{{{ printf "%s:%s" .Values.image.repository .Values.image.tag | quote }}}}
          imagePullPolicy: {{{{ .Values.image.pullPolicy | default "IfNotPresent" }}}}
          ports:
            - name: http
              containerPort: {{{{ .Values.service.port }}}}
"""

_SERVICE = """\
apiVersion: v1
kind: Service
metadata:
  name: {{{{ include "{name}.fullname" . }}}}
  labels:
    {{{{- include "{name}.labels" . | nindent 4 }}}}
spec:
  type: {{{{ .Values.service.type }}}}
  ports:
    - port: {{{{ .Values.service.port }}}}
      targetPort: http
      name: http
  selector:
    {{{{- include "{name}.selectorLabels" . | nindent 4 }}}}
"""

_README = """\
# {name}

Scaffolded chart. Edit `values.yaml` and the files under `templates/`, then
run `charter lint {name}` and `charter package {name}`.
"""


def scaffold(name: str, target_dir: str | Path) -> Path:
    """Create a new chart directory ``target_dir/name``; returns its path."""
    if not CHART_NAME.match(name):
        raise MalformedMetadata(f"chart name {name!r} must match {CHART_NAME.pattern}")
    root = Path(target_dir) / name
    if root.exists():
        raise AlreadyExists(f"{root} already exists")
    meta = ChartMetadata(name=name, version="0.1.0", description=f"A chart for {name}", kind="application")
    files = {
        "Chart.yaml": yamlio.dump(meta.to_dict()),
        "values.yaml": _VALUES.format(name=name),
        "templates/_helpers.tpl": _HELPERS.format(name=name),
        "templates/deployment.yaml": _DEPLOYMENT.format(name=name),
        "templates/service.yaml": _SERVICE.format(name=name),
        "README.md": _README.format(name=name),
    }
    try:
        (root / "charts").mkdir(parents=True)
        for rel, text in files.items():
            target = root / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"{root}: {exc.strerror or exc}") from None
    return root
