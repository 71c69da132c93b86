"""Multi-document manifest streams: parsing, serialization and apply order."""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, NamedTuple

from charter import yamlio
from charter.errors import MalformedYaml, MissingField

INSTALL_ORDER: tuple[str, ...] = (
    "Namespace",
    "NetworkPolicy",
    "ResourceQuota",
    "LimitRange",
    "PodSecurityPolicy",
    "PodDisruptionBudget",
    "ServiceAccount",
    "Secret",
    "SecretList",
    "ConfigMap",
    "StorageClass",
    "PersistentVolume",
    "PersistentVolumeClaim",
    "CustomResourceDefinition",
    "ClusterRole",
    "ClusterRoleList",
    "ClusterRoleBinding",
    "ClusterRoleBindingList",
    "Role",
    "RoleList",
    "RoleBinding",
    "RoleBindingList",
    "Service",
    "DaemonSet",
    "Pod",
    "ReplicationController",
    "ReplicaSet",
    "Deployment",
    "HorizontalPodAutoscaler",
    "StatefulSet",
    "Job",
    "CronJob",
    "Ingress",
    "APIService",
)

KIND_RANK: dict[str, int] = {kind: i for i, kind in enumerate(INSTALL_ORDER)}

# Kinds that never take a namespace when defaulted at apply time.
CLUSTER_SCOPED_KINDS = frozenset(
    {
        "Namespace",
        "PodSecurityPolicy",
        "StorageClass",
        "PersistentVolume",
        "CustomResourceDefinition",
        "ClusterRole",
        "ClusterRoleList",
        "ClusterRoleBinding",
        "ClusterRoleBindingList",
        "APIService",
    }
)

_SEPARATOR = re.compile(r"^---(?:[ \t].*)?$")


class ResourceKey(NamedTuple):
    kind: str
    namespace: str
    name: str

    def __str__(self) -> str:
        if self.namespace:
            return f"{self.kind}/{self.namespace}/{self.name}"
        return f"{self.kind}/{self.name}"


@dataclass(frozen=True, eq=False)
class ManifestDocument:
    """One resource description. ``body`` is the full document tree."""

    api_version: str
    kind: str
    name: str
    namespace: str | None = None
    labels: dict[str, str] = field(default_factory=dict)
    body: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_body(cls, body: dict[str, Any], index: int = 0) -> ManifestDocument:
        metadata = body.get("metadata")
        if not isinstance(metadata, dict):
            metadata = {}
        for attr, value in (
            ("apiVersion", body.get("apiVersion")),
            ("kind", body.get("kind")),
            ("metadata.name", metadata.get("name")),
        ):
            if value is None or value == "":
                raise MissingField(index, attr)
            if not isinstance(value, str):
                raise MissingField(index, attr)
        namespace = metadata.get("namespace") or None
        labels = metadata.get("labels") or {}
        if not isinstance(labels, dict):
            labels = {}
        return cls(
            api_version=body["apiVersion"],
            kind=body["kind"],
            name=metadata["name"],
            namespace=str(namespace) if namespace is not None else None,
            labels={str(k): str(v) for k, v in labels.items()},
            body=body,
        )

    @property
    def key(self) -> ResourceKey:
        return ResourceKey(self.kind, self.namespace or "", self.name)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ManifestDocument):
            return NotImplemented
        return self.body == other.body

    def __hash__(self) -> int:
        return hash(self.key)

    def canonical(self) -> str:
        """Key-sorted compact JSON; equal documents give identical strings."""
        return json.dumps(self.body, sort_keys=True, separators=(",", ":"), ensure_ascii=False)

    def with_namespace(self, namespace: str) -> ManifestDocument:
        """Fill in ``namespace`` for namespaced kinds that do not name one."""
        if self.namespace or self.kind in CLUSTER_SCOPED_KINDS:
            return self
        body = copy.deepcopy(self.body)
        body.setdefault("metadata", {})["namespace"] = namespace
        return ManifestDocument.from_body(body)

    def with_labels(self, extra: dict[str, str]) -> ManifestDocument:
        body = copy.deepcopy(self.body)
        metadata = body.setdefault("metadata", {})
        labels = metadata.get("labels") or {}
        labels.update(extra)
        metadata["labels"] = labels
        return ManifestDocument.from_body(body)


def _split_documents(text: str) -> list[tuple[int, str]]:
    """Split on column-0 ``---`` lines; returns (first line number, chunk)."""
    chunks: list[tuple[int, str]] = []
    current: list[str] = []
    start = 1
    for lineno, line in enumerate(text.splitlines(keepends=True), start=1):
        if _SEPARATOR.match(line.rstrip("\r\n")):
            chunks.append((start, "".join(current)))
            current = []
            start = lineno + 1
        else:
            current.append(line)
    chunks.append((start, "".join(current)))
    return chunks


def parse_manifest_stream(text: str) -> list[ManifestDocument]:
    docs: list[ManifestDocument] = []
    for start, chunk in _split_documents(text):
        try:
            body = yamlio.load(chunk)
        except yamlio.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = start + mark.line if mark is not None else start
            column = mark.column + 1 if mark is not None else None
            problem = getattr(exc, "problem", None) or str(exc)
            raise MalformedYaml(problem, line=line, column=column) from None
        if body is None:
            continue
        if not isinstance(body, dict):
            raise MalformedYaml(f"document {len(docs)} is a {type(body).__name__}, not a mapping", line=start)
        docs.append(ManifestDocument.from_body(body, index=len(docs)))
    return docs


def serialize_manifest_stream(docs: Iterable[ManifestDocument]) -> str:
    return "".join("---\n" + yamlio.dump(doc.body) for doc in docs)


def kind_rank(kind: str) -> int:
    return KIND_RANK.get(kind, len(INSTALL_ORDER))


def sort_for_install(docs: Iterable[ManifestDocument]) -> list[ManifestDocument]:
    """Stable sort by install order.

    Unknown kinds go after APIService, grouped by kind in order of each
    kind's first appearance.
    """
    docs = list(docs)
    unknown: dict[str, int] = {}
    for doc in docs:
        if doc.kind not in KIND_RANK:
            unknown.setdefault(doc.kind, len(INSTALL_ORDER) + len(unknown))
    return sorted(docs, key=lambda d: KIND_RANK.get(d.kind, unknown.get(d.kind, 0)))


def sort_for_uninstall(docs: Iterable[ManifestDocument]) -> list[ManifestDocument]:
    return list(reversed(sort_for_install(docs)))
