"""Tests for model-guided decomposition and its validation."""

import pytest

from mgdbg.code_model import build_tree, parse_artifact
from mgdbg.decomposer import (
    decompose,
    decompose_with_fallback,
    natural_tree,
    validate_decomposition,
)
from mgdbg.errors import DecompositionFailed, ReplayMiss
from mgdbg.llm import Gateway, ReplayBackend
from mgdbg.testgen import PublicTestSet

from .conftest import TWO_LEVEL_BUGGY, TWO_LEVEL_CANONICAL, TWO_LEVEL_VISIBLE, FakeModel

MONOLITH = '''import math


def count_evens(numbers):
    return sum(1 for n in numbers if n % 2 == 1)
'''


def _block(code):
    return f"```python\n{code}\n```"


@pytest.fixture
def t_pub():
    return PublicTestSet(TWO_LEVEL_VISIBLE)


def test_identity_decomposition(make_gateway):
    model = FakeModel({"count_evens": TWO_LEVEL_CANONICAL})

    tree = decompose(MONOLITH, "count_evens", make_gateway(model))

    assert tree.post_order() == ["count_evens"]
    assert model.calls == ["decompose"]


def test_decomposition_into_helpers_keeps_imports(make_gateway):
    model = FakeModel(
        {"count_evens": TWO_LEVEL_CANONICAL}, decompositions={"count_evens": TWO_LEVEL_BUGGY}
    )

    tree = decompose(MONOLITH, "count_evens", make_gateway(model))

    assert tree.root == "count_evens"
    assert tree.post_order() == ["is_even", "count_evens"]
    assert "import math" in tree.artifact.preamble


def test_prose_replies_fail_after_three_tries(make_gateway):
    gateway = make_gateway(["Let me think about it."] * 3)

    with pytest.raises(DecompositionFailed):
        decompose(MONOLITH, "count_evens", gateway)
    assert gateway.census() == {"decompose": 3}


def test_signature_change_is_re_requested(make_gateway):
    renamed = "def count_evens(values, start=0):\n    return 0"
    gateway = make_gateway([_block(renamed), _block(TWO_LEVEL_BUGGY)])

    tree = decompose(MONOLITH, "count_evens", gateway)

    assert set(tree.reachable) == {"is_even", "count_evens"}
    assert gateway.census() == {"decompose": 2}


def test_missing_entry_point_is_re_requested(make_gateway):
    gateway = make_gateway([_block("def main(numbers):\n    return 0")] * 3)

    with pytest.raises(DecompositionFailed):
        decompose(MONOLITH, "count_evens", gateway)


def test_validation_of_an_equivalent_decomposition(t_pub, policy):
    tree = build_tree(parse_artifact(TWO_LEVEL_BUGGY, "count_evens"))

    verdict = validate_decomposition(tree, MONOLITH, t_pub, policy, strict=True)

    assert verdict.equivalent and verdict.accepted
    assert verdict.mismatches == ()


def test_validation_flags_an_accidental_fix(t_pub, policy):
    tree = build_tree(parse_artifact(TWO_LEVEL_CANONICAL, "count_evens"))

    lenient = validate_decomposition(tree, MONOLITH, t_pub, policy)
    strict = validate_decomposition(tree, MONOLITH, t_pub, policy, strict=True)

    assert not lenient.equivalent
    assert lenient.accepted
    assert lenient.mismatches == (0,)
    assert "was fail, is pass" in lenient.warnings[0]
    assert not strict.accepted


def test_validation_of_an_unparseable_program(t_pub, policy, monkeypatch):
    tree = build_tree(parse_artifact(TWO_LEVEL_BUGGY, "count_evens"))
    monkeypatch.setattr("mgdbg.decomposer.flatten", lambda tree: "def count_evens(:\n")

    verdict = validate_decomposition(tree, MONOLITH, t_pub, policy)

    assert verdict.fatal
    assert not verdict.accepted


def test_fallback_on_strict_mismatch(t_pub, policy, make_gateway):
    model = FakeModel(
        {"count_evens": TWO_LEVEL_CANONICAL}, decompositions={"count_evens": TWO_LEVEL_CANONICAL}
    )

    result = decompose_with_fallback(
        MONOLITH, "count_evens", t_pub, make_gateway(model), policy, strict=True
    )

    assert not result.decomposed
    assert result.tree.post_order() == natural_tree(MONOLITH, "count_evens").post_order()
    assert any("rejected" in w for w in result.warnings)


def test_fallback_keeps_lenient_decomposition(t_pub, policy, make_gateway):
    model = FakeModel(
        {"count_evens": TWO_LEVEL_CANONICAL}, decompositions={"count_evens": TWO_LEVEL_BUGGY}
    )

    result = decompose_with_fallback(MONOLITH, "count_evens", t_pub, make_gateway(model), policy)

    assert result.decomposed
    assert result.verdict.equivalent
    assert result.tree.post_order() == ["is_even", "count_evens"]


def test_fallback_when_the_model_is_unavailable(t_pub, policy, make_gateway):
    result = decompose_with_fallback(MONOLITH, "count_evens", t_pub, make_gateway([]), policy)

    assert not result.decomposed
    assert result.tree.post_order() == ["count_evens"]


def test_replay_miss_is_not_swallowed(t_pub, policy, llm_cfg, tmp_path):
    gateway = Gateway(llm_cfg, ReplayBackend(tmp_path / "empty.jsonl"))

    with pytest.raises(ReplayMiss):
        decompose_with_fallback(MONOLITH, "count_evens", t_pub, gateway, policy)
