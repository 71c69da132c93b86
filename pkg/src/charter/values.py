"""Value layering: chart defaults, then values files, then ``--set`` pairs."""

from __future__ import annotations

import copy
import re
from pathlib import Path
from typing import Any, Iterable, Mapping

from charter import yamlio
from charter.errors import MalformedSetPair, MalformedValuesFile

_INT = re.compile(r"^\d+$")


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> dict[str, Any]:
    """Maps merge recursively; scalars and lists from ``override`` replace."""
    out = copy.deepcopy(dict(base))
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_literal(raw: str) -> Any:
    """Type a ``--set`` value: true/false -> bool, digits -> int, else str.

    Surrounding double or single quotes force a string.
    """
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    if raw in ("true", "false"):
        return raw == "true"
    if _INT.match(raw):
        return int(raw)
    return raw


def _split_unescaped(text: str, sep: str) -> list[str]:
    parts, buf, i = [], [], 0
    while i < len(text):
        c = text[i]
        if c == "\\" and i + 1 < len(text):
            buf.append(text[i + 1])
            i += 2
            continue
        if c == sep:
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(c)
        i += 1
    parts.append("".join(buf))
    return parts


def parse_set_pairs(flag_values: Iterable[str]) -> list[tuple[list[str], Any]]:
    """Parse ``--set`` flag values; each may hold comma-separated pairs."""
    pairs: list[tuple[list[str], Any]] = []
    for flag in flag_values:
        for pair in _split_unescaped(flag, ","):
            key, eq, raw = pair.partition("=")
            key = key.strip()
            if not eq or not key:
                raise MalformedSetPair(f"expected key.path=value, got {pair!r}")
            path = key.split(".")
            if any(not seg for seg in path):
                raise MalformedSetPair(f"empty segment in key {key!r}")
            pairs.append((path, parse_literal(raw)))
    return pairs


def apply_set_pairs(values: dict[str, Any], pairs: Iterable[tuple[list[str], Any]]) -> dict[str, Any]:
    out = copy.deepcopy(values)
    for path, value in pairs:
        node = out
        for seg in path[:-1]:
            if not isinstance(node.get(seg), dict):
                node[seg] = {}
            node = node[seg]
        node[path[-1]] = value
    return out


def load_values_file(path: str | Path) -> dict[str, Any]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedValuesFile(f"{path}: {exc.strerror or exc}") from None
    return parse_values_text(text, str(path))


def parse_values_text(text: str, where: str = "values") -> dict[str, Any]:
    try:
        data = yamlio.load(text)
    except yamlio.YAMLError as exc:
        raise MalformedValuesFile(f"{where}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise MalformedValuesFile(f"{where}: top level must be a mapping, got {type(data).__name__}")
    return data


def merge_values(
    defaults: Mapping[str, Any],
    files: Iterable[Mapping[str, Any] | str | Path] = (),
    set_pairs: Iterable[str] = (),
) -> dict[str, Any]:
    """Layer values lowest to highest: defaults, each file in order, --set."""
    merged = deep_merge({}, defaults)
    for f in files:
        layer = f if isinstance(f, Mapping) else load_values_file(f)
        merged = deep_merge(merged, layer)
    return apply_set_pairs(merged, parse_set_pairs(set_pairs))
