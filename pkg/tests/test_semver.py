import pytest

from charter import semver
from charter.errors import InvalidConstraint, InvalidVersion
from charter.semver import Constraint, Version, best_match


@pytest.mark.parametrize("text", ["0.0.0", "1.2.3", "10.20.30", "1.0.0-alpha.1", "1.0.0+build.5", "1.0.0-rc.1+meta"])
def test_valid_versions(text):
    assert semver.is_valid(text)
    assert str(Version.parse(text)) == text


@pytest.mark.parametrize("text", ["", "1", "1.2", "01.2.3", "1.2.3-", "1.2.3-01", "v1.2.3", "1.2.3.4", "a.b.c"])
def test_invalid_versions(text):
    assert not semver.is_valid(text)
    with pytest.raises(InvalidVersion):
        Version.parse(text)


def test_precedence_chain():
    # Ordering example from the semantic versioning rules.
    chain = ["1.0.0-alpha", "1.0.0-alpha.1", "1.0.0-alpha.beta", "1.0.0-beta", "1.0.0-beta.2",
             "1.0.0-beta.11", "1.0.0-rc.1", "1.0.0"]
    parsed = [Version.parse(v) for v in chain]
    assert sorted(reversed(parsed)) == parsed
    assert Version.parse("1.0.0+a") == Version.parse("1.0.0+b")


@pytest.mark.parametrize(
    "constraint, allowed, rejected",
    [
        ("1.2.3", ["1.2.3"], ["1.2.4", "1.2.2"]),
        ("^1.2.3", ["1.2.3", "1.9.0"], ["2.0.0", "1.2.2", "1.3.0-rc.1"]),
        ("^0.2.3", ["0.2.3", "0.2.9"], ["0.3.0", "0.2.2"]),
        ("^0.0.3", ["0.0.3"], ["0.0.4"]),
        ("^1.2", ["1.2.0", "1.99.0"], ["2.0.0", "1.1.9"]),
        ("^0.1", ["0.1.0", "0.1.7"], ["0.2.0"]),
        ("^1", ["1.0.0", "1.5.5"], ["2.0.0", "0.9.9"]),
    ],
)
def test_constraints(constraint, allowed, rejected):
    c = Constraint.parse(constraint)
    for v in allowed:
        assert c.allows(Version.parse(v)), v
    for v in rejected:
        assert not c.allows(Version.parse(v)), v


@pytest.mark.parametrize("text", ["", "~1.2.3", ">=1.0.0", "^", "^1.x", "1.2.3 || 2.0.0"])
def test_invalid_constraints(text):
    with pytest.raises(InvalidConstraint):
        Constraint.parse(text)


def test_best_match_picks_highest_allowed():
    versions = ["1.0.0", "1.4.2", "1.10.0", "2.0.0", "1.11.0-rc.1"]
    assert str(best_match(versions, Constraint.parse("^1.0.0"))) == "1.10.0"
    assert best_match(versions, Constraint.parse("^3.0.0")) is None
