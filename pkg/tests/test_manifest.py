import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from charter.errors import MalformedYaml, MissingField
from charter.manifest import (
    INSTALL_ORDER,
    ManifestDocument,
    ResourceKey,
    parse_manifest_stream,
    serialize_manifest_stream,
    sort_for_install,
    sort_for_uninstall,
)


def doc(kind, name="x", namespace=None):
    meta = {"name": name}
    if namespace:
        meta["namespace"] = namespace
    return ManifestDocument.from_body({"apiVersion": "v1", "kind": kind, "metadata": meta})


def test_parse_multi_document_stream():
    text = """\
---
# Source: a.yaml
apiVersion: v1
kind: ConfigMap
metadata:
  name: one
  labels: {app: web}
data:
  k: v
---
---
apiVersion: v1
kind: Service
metadata: {name: two, namespace: prod}
"""
    docs = parse_manifest_stream(text)
    assert [d.key for d in docs] == [
        ResourceKey("ConfigMap", "", "one"),
        ResourceKey("Service", "prod", "two"),
    ]
    assert docs[0].labels == {"app": "web"}
    assert docs[0].body["data"] == {"k": "v"}


def test_comment_only_documents_are_skipped():
    assert parse_manifest_stream("# nothing\n---\n\n---\n") == []


def test_separator_inside_block_scalar_is_not_a_boundary():
    text = "apiVersion: v1\nkind: ConfigMap\nmetadata: {name: c}\ndata:\n  f: |\n    ---\n    x\n"
    (d,) = parse_manifest_stream(text)
    assert d.body["data"]["f"] == "---\nx\n"


@pytest.mark.parametrize("missing", ["apiVersion", "kind", "metadata.name"])
def test_missing_required_field(missing):
    body = {"apiVersion": "v1", "kind": "Pod", "metadata": {"name": "p"}}
    if missing == "metadata.name":
        del body["metadata"]["name"]
    else:
        del body[missing]
    with pytest.raises(MissingField) as info:
        ManifestDocument.from_body(body, 3)
    assert info.value.doc == 3
    assert info.value.field == missing


def test_malformed_yaml_reports_position():
    text = "apiVersion: v1\nkind: Pod\nmetadata: {name: a}\n---\nkind: [unclosed\n"
    with pytest.raises(MalformedYaml) as info:
        parse_manifest_stream(text)
    assert info.value.line is not None and info.value.line >= 5


def test_non_mapping_document_rejected():
    with pytest.raises(MalformedYaml):
        parse_manifest_stream("- a\n- b\n")


def test_serialize_round_trip():
    docs = [doc("ConfigMap", "a"), doc("Deployment", "b", "ns")]
    again = parse_manifest_stream(serialize_manifest_stream(docs))
    assert again == docs


def test_sort_full_order_from_reversed_input():
    docs = [doc(k) for k in reversed(INSTALL_ORDER)]
    assert [d.kind for d in sort_for_install(docs)] == list(INSTALL_ORDER)


def test_sort_is_stable_within_kind():
    docs = [doc("Service", "s1"), doc("ConfigMap", "c1"), doc("Service", "s2"), doc("ConfigMap", "c2")]
    assert [d.name for d in sort_for_install(docs)] == ["c1", "c2", "s1", "s2"]


def test_unknown_kinds_go_last_grouped_by_first_appearance():
    docs = [doc("Widget", "w1"), doc("Gadget", "g1"), doc("Namespace"), doc("Widget", "w2"), doc("APIService")]
    assert [(d.kind, d.name) for d in sort_for_install(docs)] == [
        ("Namespace", "x"),
        ("APIService", "x"),
        ("Widget", "w1"),
        ("Widget", "w2"),
        ("Gadget", "g1"),
    ]


def test_uninstall_is_exact_reverse():
    rng = random.Random(7)
    docs = [doc(rng.choice(INSTALL_ORDER + ("Thing",)), f"n{i}") for i in range(60)]
    assert sort_for_uninstall(docs) == list(reversed(sort_for_install(docs)))


def test_with_namespace_skips_cluster_scoped():
    assert not doc("Namespace", "n").with_namespace("prod").namespace
    assert not doc("ClusterRole", "r").with_namespace("prod").namespace
    assert doc("ConfigMap", "c").with_namespace("prod").namespace == "prod"
    assert doc("ConfigMap", "c", "keep").with_namespace("prod").namespace == "keep"


def test_with_labels_merges():
    d = ManifestDocument.from_body(
        {"apiVersion": "v1", "kind": "Pod", "metadata": {"name": "p", "labels": {"a": "1"}}}
    ).with_labels({"b": "2"})
    assert d.labels == {"a": "1", "b": "2"}
    assert d.body["metadata"]["labels"] == {"a": "1", "b": "2"}


def test_equality_is_by_body():
    a = ManifestDocument.from_body({"kind": "Pod", "apiVersion": "v1", "metadata": {"name": "p"}})
    b = ManifestDocument.from_body({"apiVersion": "v1", "metadata": {"name": "p"}, "kind": "Pod"})
    assert a == b and a.canonical() == b.canonical()


@pytest.mark.parametrize(
    "kinds, expected",
    [
        (["Deployment", "Namespace", "Secret"], ["Namespace", "Secret", "Deployment"]),
        (["MyCustomWidget", "Namespace"], ["Namespace", "MyCustomWidget"]),
        ([], []),
    ],
)
def test_sort_examples(kinds, expected):
    assert [d.kind for d in sort_for_install([doc(k) for k in kinds])] == expected


def test_uninstall_examples():
    assert [d.kind for d in sort_for_uninstall([doc(k) for k in ["Namespace", "Service", "Pod"]])] == [
        "Pod", "Service", "Namespace",
    ]
    assert sort_for_uninstall([]) == []
    single = [doc("Pod")]
    assert sort_for_uninstall(single) == single


def _brute_force_order(docs):
    """Selection sort against the literal kind list; unknown kinds by first appearance."""
    known = list(INSTALL_ORDER)
    unknown = []
    for d in docs:
        if d.kind not in known and d.kind not in unknown:
            unknown.append(d.kind)

    def rank(i):
        kind = docs[i].kind
        return (known.index(kind) if kind in known else len(known) + unknown.index(kind), i)

    remaining = list(range(len(docs)))
    out = []
    while remaining:
        best = min(remaining, key=rank)
        remaining.remove(best)
        out.append(docs[best])
    return out


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(list(INSTALL_ORDER[:10]) + ["Widget", "Gadget", "Zed"]), max_size=25))
def test_sort_matches_brute_force(kinds):
    docs = [doc(k, f"n{i}") for i, k in enumerate(kinds)]
    assert [d.name for d in sort_for_install(docs)] == [d.name for d in _brute_force_order(docs)]
