"""Registration, resolution, and suggestion behavior."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from signpipe.errors import DuplicateName, UnknownName
from signpipe.registry import KINDS, Registry


def factory():
    return "made"


def test_register_resolve_roundtrip():
    reg = Registry()
    reg.register("extractor", "synthetic", factory)
    assert reg.resolve("extractor", "synthetic") is factory


def test_duplicate_registration_rejected():
    reg = Registry()
    reg.register("extractor", "synthetic", factory)
    with pytest.raises(DuplicateName):
        reg.register("extractor", "synthetic", lambda: None)


def test_same_name_different_kind_allowed():
    reg = Registry()
    reg.register("extractor", "synthetic", factory)
    reg.register("mediaio", "synthetic", factory)
    assert reg.list("extractor") == ["synthetic"]
    assert reg.list("mediaio") == ["synthetic"]


def test_list_is_sorted_and_duplicate_free():
    reg = Registry()
    for name in ("zeta", "alpha", "mid"):
        reg.register("dataset", name, factory)
    assert reg.list("dataset") == ["alpha", "mid", "zeta"]


def test_list_empty_kind():
    assert Registry().list("exporter") == []


def test_near_miss_suggests_neighbor():
    reg = Registry()
    for name in ("external_command", "none", "synthetic"):
        reg.register("extractor", name, factory)
    with pytest.raises(UnknownName, match="synthetic"):
        reg.resolve("extractor", "syntheti")


def test_unknown_name_empty_registry_has_no_suggestions():
    with pytest.raises(UnknownName) as err:
        Registry().resolve("extractor", "anything")
    assert "closest" not in str(err.value)


def test_suggestions_capped_at_three():
    reg = Registry()
    for name in "abcdefgh":
        reg.register("dataset", name, factory)
    with pytest.raises(UnknownName) as err:
        reg.resolve("dataset", "dd")
    listed = str(err.value).split("closest: ")[1].rstrip(")").split(", ")
    assert len(listed) == 3
    assert all(n in "abcdefgh" for n in listed)


def test_lookups_case_sensitive():
    reg = Registry()
    reg.register("dataset", "How2Sign", factory)
    with pytest.raises(UnknownName):
        reg.resolve("dataset", "how2sign")


def test_invalid_kind_is_programming_error():
    with pytest.raises(ValueError):
        Registry().register("detector", "x", factory)
    with pytest.raises(ValueError):
        Registry().list("detector")


@settings(max_examples=50, deadline=None)
@given(st.sets(st.text(min_size=1, max_size=6), min_size=0, max_size=12),
       st.sampled_from(KINDS))
def test_list_length_matches_registrations(names, kind):
    reg = Registry()
    for name in names:
        reg.register(kind, name, factory)
    assert reg.list(kind) == sorted(names)
    for name in names:
        assert reg.resolve(kind, name) is factory


@settings(max_examples=50, deadline=None)
@given(st.sets(st.text(alphabet="abcdefghij", min_size=1, max_size=6), min_size=1, max_size=12),
       st.text(alphabet="abcdefghij", min_size=1, max_size=6))
def test_suggestions_always_subset_of_registered(names, probe):
    reg = Registry()
    for name in names:
        reg.register("dataset", name, factory)
    if probe in names:
        assert reg.resolve("dataset", probe) is factory
        return
    with pytest.raises(UnknownName) as err:
        reg.resolve("dataset", probe)
    message = str(err.value)
    if "closest" in message:
        listed = message.split("closest: ")[1].rstrip(")").split(", ")
        assert 1 <= len(listed) <= 3
        assert set(listed) <= names
