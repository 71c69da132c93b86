"""Semantic versions and the two constraint forms charts may declare.

Constraints are either an exact version (``1.2.3``) or a caret range
(``^1.2``, ``^0.1.4``). Caret ranges admit versions that do not change the
left-most non-zero component among the ones given, so ``^0.1`` admits
``0.1.*`` but not ``0.2.0``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import total_ordering

from charter.errors import InvalidConstraint, InvalidVersion

_VERSION = re.compile(
    r"^(0|[1-9]\d*)\.(0|[1-9]\d*)\.(0|[1-9]\d*)"
    r"(?:-((?:0|[1-9]\d*|\d*[A-Za-z-][0-9A-Za-z-]*)(?:\.(?:0|[1-9]\d*|\d*[A-Za-z-][0-9A-Za-z-]*))*))?"
    r"(?:\+([0-9A-Za-z-]+(?:\.[0-9A-Za-z-]+)*))?$"
)
_PARTIAL = re.compile(r"^(0|[1-9]\d*)(?:\.(0|[1-9]\d*)(?:\.(0|[1-9]\d*))?)?$")


@total_ordering
@dataclass(frozen=True)
class Version:
    major: int
    minor: int
    patch: int
    prerelease: tuple[str, ...] = ()
    build: str = ""

    @classmethod
    def parse(cls, text: str) -> Version:
        m = _VERSION.match(str(text).strip())
        if not m:
            raise InvalidVersion(f"invalid semantic version {text!r}")
        pre = tuple(m.group(4).split(".")) if m.group(4) else ()
        return cls(int(m.group(1)), int(m.group(2)), int(m.group(3)), pre, m.group(5) or "")

    def __str__(self) -> str:
        s = f"{self.major}.{self.minor}.{self.patch}"
        if self.prerelease:
            s += "-" + ".".join(self.prerelease)
        if self.build:
            s += "+" + self.build
        return s

    def _key(self) -> tuple:
        # A release sorts above its prereleases; numeric identifiers sort
        # below alphanumeric ones, and a shorter prefix sorts first.
        pre = tuple((0, int(p), "") if p.isdigit() else (1, 0, p) for p in self.prerelease)
        return (self.major, self.minor, self.patch, not self.prerelease, pre)

    def __lt__(self, other: Version) -> bool:
        if not isinstance(other, Version):
            return NotImplemented
        return self._key() < other._key()

    def __eq__(self, other: object) -> bool:
        # Build metadata does not participate in precedence.
        if not isinstance(other, Version):
            return NotImplemented
        return (self.major, self.minor, self.patch, self.prerelease) == (
            other.major,
            other.minor,
            other.patch,
            other.prerelease,
        )

    def __hash__(self) -> int:
        return hash((self.major, self.minor, self.patch, self.prerelease))


def is_valid(text: object) -> bool:
    if not isinstance(text, str):
        return False
    try:
        Version.parse(text)
    except InvalidVersion:
        return False
    return True


@dataclass(frozen=True)
class Constraint:
    text: str
    lower: Version
    upper: Version | None  # exclusive; None means exact match on ``lower``

    @classmethod
    def parse(cls, text: str) -> Constraint:
        raw = str(text).strip()
        if raw.startswith("^"):
            m = _PARTIAL.match(raw[1:].strip())
            if not m:
                raise InvalidConstraint(f"invalid caret constraint {text!r}")
            parts = [int(g) for g in m.groups() if g is not None]
            major, minor, patch = (parts + [0, 0])[:3]
            lower = Version(major, minor, patch)
            if major > 0 or len(parts) == 1:
                upper = Version(major + 1, 0, 0)
            elif minor > 0 or len(parts) == 2:
                upper = Version(0, minor + 1, 0)
            else:
                upper = Version(0, 0, patch + 1)
            return cls(raw, lower, upper)
        try:
            return cls(raw, Version.parse(raw), None)
        except InvalidVersion:
            raise InvalidConstraint(f"invalid version constraint {text!r}") from None

    def allows(self, version: Version | str) -> bool:
        if isinstance(version, str):
            version = Version.parse(version)
        if self.upper is None:
            return version == self.lower
        if version.prerelease:
            return False
        return self.lower <= version < self.upper

    def __str__(self) -> str:
        return self.text


def best_match(versions, constraint: Constraint | str | None) -> str | None:
    """Highest version string in ``versions`` allowed by ``constraint``."""
    if isinstance(constraint, str):
        constraint = Constraint.parse(constraint)
    candidates = []
    for v in versions:
        try:
            parsed = Version.parse(v)
        except InvalidVersion:
            continue
        if constraint is None:
            if not parsed.prerelease:
                candidates.append((parsed, v))
        elif constraint.allows(parsed):
            candidates.append((parsed, v))
    if not candidates:
        return None
    return max(candidates, key=lambda c: c[0])[1]
