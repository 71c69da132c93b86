"""Exception hierarchy shared by every charter module.

Each class name doubles as the error name surfaced by the CLI, so callers
can match on ``err.name`` without importing the concrete class.
"""

from __future__ import annotations

from typing import Any, Iterable


class CharterError(Exception):
    """Base class for all domain errors."""

    @property
    def name(self) -> str:
        return type(self).__name__

    def __str__(self) -> str:
        return self.args[0] if self.args else self.name


# -- manifests ---------------------------------------------------------------


class MalformedYaml(CharterError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" at line {line}" + (f", column {column}" if column else "") if line else ""
        super().__init__(f"malformed YAML{where}: {message}")


class MissingField(CharterError):
    def __init__(self, doc: int, field: str):
        self.doc = doc
        self.field = field
        super().__init__(f"document {doc} is missing required field {field!r}")


# -- templates ---------------------------------------------------------------


class TemplateError(CharterError):
    """Template failure carrying the originating file and line."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.message = message
        self.path = path
        self.line = line
        super().__init__(message)

    def __str__(self) -> str:
        loc = self.path or "<template>"
        if self.line:
            loc += f":{self.line}"
        return f"{loc}: {self.message}"


class TemplateSyntax(TemplateError):
    pass


class DuplicateDefine(TemplateError):
    def __init__(self, define: str, first: str, second: str):
        self.define = define
        self.first = first
        self.second = second
        super().__init__(f"template {define!r} defined in both {first} and {second}", path=second)


class MissingPath(TemplateError):
    pass


class FieldNotFound(TemplateError):
    pass


class FunctionError(TemplateError):
    pass


# -- charts ------------------------------------------------------------------


class AlreadyExists(CharterError):
    pass


class NotAChart(CharterError):
    pass


class MalformedMetadata(CharterError):
    pass


class IoError(CharterError):
    pass


class LintFailed(CharterError):
    def __init__(self, report: Any):
        self.report = report
        lines = "; ".join(f"{f.path}: {f.message}" for f in report.errors)
        super().__init__(f"chart failed lint: {lines}")


class InvalidVersion(CharterError):
    pass


class InvalidConstraint(CharterError):
    pass


# -- repositories ------------------------------------------------------------


class Unreachable(CharterError):
    pass


class HttpStatus(CharterError):
    def __init__(self, code: int, url: str):
        self.code = code
        self.url = url
        super().__init__(f"HTTP {code} from {url}")


class MalformedIndex(CharterError):
    pass


class NotFound(CharterError):
    pass


class NoMatchingVersion(CharterError):
    pass


class DigestMismatch(CharterError):
    pass


class UnknownRepository(CharterError):
    pass


# -- provenance --------------------------------------------------------------


class KeyUnusable(CharterError):
    pass


class SignatureInvalid(CharterError):
    pass


class MissingProvenance(CharterError):
    pass


class MalformedProvenance(CharterError):
    pass


# -- values and releases -----------------------------------------------------


class MalformedSetPair(CharterError):
    pass


class MalformedValuesFile(CharterError):
    pass


class RenderFailed(CharterError):
    def __init__(self, cause: Exception):
        self.cause = cause
        super().__init__(f"render failed: {cause.name if isinstance(cause, CharterError) else type(cause).__name__}: {cause}")


class DependencyUnsatisfied(CharterError):
    def __init__(self, missing: Iterable[str]):
        self.missing = list(missing)
        super().__init__(f"unsatisfied dependencies: {', '.join(self.missing)}")


class PostRenderFailed(CharterError):
    def __init__(self, exit_code: int | None, stderr: str):
        self.exit_code = exit_code
        self.stderr = stderr
        detail = stderr.strip()
        super().__init__(
            f"post-renderer failed (exit {exit_code})" + (f": {detail}" if detail else "")
        )


class PostRenderMalformed(CharterError):
    def __init__(self, cause: Exception):
        self.cause = cause
        super().__init__(f"post-renderer output is not a manifest stream: {cause}")


class ReleaseExists(CharterError):
    pass


class VerificationFailed(CharterError):
    def __init__(self, cause: Exception):
        self.cause = cause
        super().__init__(f"{getattr(cause, 'name', type(cause).__name__)}: {cause}")


class ApplyFailed(CharterError):
    def __init__(self, kind: str, name: str, cause: Exception, remaining: Iterable[Any] = ()):
        self.kind = kind
        self.resource = name
        self.cause = cause
        self.remaining = list(remaining)
        super().__init__(f"applying {kind}/{name} failed: {cause}")


class NoSuchRelease(CharterError):
    pass


class NoSuchRevision(CharterError):
    pass


# -- cluster gateway ---------------------------------------------------------


class ServerError(CharterError):
    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body
        super().__init__(f"control plane answered {status}: {body}")


class InvalidReleaseName(CharterError):
    pass
