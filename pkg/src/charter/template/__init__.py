"""Chart template language: parsing, named definitions and rendering.

The supported grammar is a subset of Go's text/template: ``{{ }}`` actions
with ``{{-``/``-}}`` trim markers, string/int/bool literals, field chains
rooted at dot (or at ``$``), pipelines, parenthesized sub-pipelines, and the
control actions ``define``, ``if``, ``with``, ``range``, ``else``, ``end`` and
``template``.

>>> tset = parse_templates({"t.yaml": '{{ printf "%s-%d" "app" 3 }}'})
>>> render(tset, "t.yaml", RenderContext())
'app-3'
"""

from __future__ import annotations

import posixpath
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping

from charter.errors import DuplicateDefine, MissingPath, TemplateError
from charter.template.exec import FUNCTION_NAMES, execute, to_text, truthy
from charter.template.parse import Define, parse_file

__all__ = [
    "RenderContext",
    "TemplateSet",
    "is_partial",
    "parse_templates",
    "render",
    "render_chart_templates",
    "to_text",
    "truthy",
]


def is_partial(path: str) -> bool:
    return posixpath.basename(path).startswith("_")


@dataclass(frozen=True)
class TemplateSet:
    files: Mapping[str, str]
    defines: Mapping[str, Define]
    trees: Mapping[str, list] = field(repr=False)
    # path -> owning library chart name, for files contributed by libraries
    library_owners: Mapping[str, str] = field(default_factory=dict)

    def owner_of(self, path: str) -> str | None:
        return self.library_owners.get(path)

    def lookup_define(self, name: str, owner: str | None = None) -> Define | None:
        if owner:
            qualified = self.defines.get(f"{owner}.{name}")
            if qualified is not None:
                return qualified
        return self.defines.get(name)

    def renderable_paths(self) -> list[str]:
        return sorted(p for p in self.files if p not in self.library_owners and not is_partial(p))


@dataclass(frozen=True)
class RenderContext:
    values: Mapping[str, Any] = field(default_factory=dict)
    chart: Mapping[str, Any] = field(default_factory=dict)
    release: Mapping[str, Any] = field(default_factory=dict)
    strict: bool = False

    def root(self) -> Mapping[str, Any]:
        return MappingProxyType({"Values": self.values, "Chart": self.chart, "Release": self.release})


def parse_templates(
    files: Mapping[str, str],
    libraries: Mapping[str, Mapping[str, str]] | None = None,
) -> TemplateSet:
    """Build a TemplateSet from chart files plus library-chart files.

    ``libraries`` maps a library chart name to its template files. Library
    defines are registered under ``<library>.<name>`` unless already so
    prefixed; library files are never rendered on their own.
    """
    all_files: dict[str, str] = dict(files)
    owners: dict[str, str] = {}
    for lib, lib_files in (libraries or {}).items():
        for path, text in lib_files.items():
            all_files[path] = text
            owners[path] = lib

    trees: dict[str, list] = {}
    defines: dict[str, Define] = {}
    for path in sorted(all_files):
        body, found = parse_file(all_files[path], path, FUNCTION_NAMES)
        trees[path] = body
        owner = owners.get(path)
        for define in found:
            name = define.name
            if owner and not name.startswith(owner + "."):
                name = f"{owner}.{name}"
            if name in defines:
                raise DuplicateDefine(name, defines[name].path, path)
            defines[name] = define
    return TemplateSet(
        files=MappingProxyType(all_files),
        defines=MappingProxyType(defines),
        trees=MappingProxyType(trees),
        library_owners=MappingProxyType(owners),
    )


def render(
    tset: TemplateSet,
    path: str,
    ctx: RenderContext,
    warnings: list[str] | None = None,
) -> str:
    if path not in tset.trees:
        raise MissingPath(f"no template file {path!r}", path)
    return execute(tset, path, tset.trees[path], ctx.root(), ctx.strict, warnings if warnings is not None else [])


def render_chart_templates(
    tset: TemplateSet,
    ctx: RenderContext,
    warnings: list[str] | None = None,
) -> dict[str, str]:
    """Render every non-partial, non-library file; drop blank outputs."""
    out: dict[str, str] = {}
    for path in tset.renderable_paths():
        try:
            text = render(tset, path, ctx, warnings)
        except TemplateError as exc:
            if exc.path is None:
                exc.path = path
            raise
        if text.strip():
            out[path] = text
    return out
