"""Tests for derived subfunction tests."""

import pytest

from mgdbg.code_model import build_tree, parse_artifact, replace_unit
from mgdbg.errors import NoAssertionsFound, TestGenFailed
from mgdbg.testgen import (
    TRUE_MARKER,
    PublicTestSet,
    SubTestCase,
    SubtestCache,
    generate_subtests,
    parse_assertion_line,
    parse_assertions,
)

from .conftest import TWO_LEVEL_BUGGY, TWO_LEVEL_FIXED_HELPER, TWO_LEVEL_VISIBLE


@pytest.fixture
def tree():
    return build_tree(parse_artifact(TWO_LEVEL_BUGGY, "count_evens"))


@pytest.fixture
def t_pub():
    return PublicTestSet(TWO_LEVEL_VISIBLE)


def test_parse_assertion_line():
    assert parse_assertion_line("assert f(1, [2]) == (3, 4)") == ("f(1, [2])", "(3, 4)")
    assert parse_assertion_line("assert is_ok(x)") == ("is_ok(x)", TRUE_MARKER)
    assert parse_assertion_line("assert f(1) < 3") == ("f(1) < 3", TRUE_MARKER)
    assert parse_assertion_line("x = 1") is None
    assert parse_assertion_line("assert f(") is None


def test_parse_assertions_from_code_block():
    reply = (
        "For [2, 4, 5] the helper sees 2, 4 and 5.\n\n"
        "```python\n"
        "assert is_even(2) == True\n"
        "assert is_even(5) == False\n"
        "```\n"
    )

    assert parse_assertions(reply) == [("is_even(2)", "True"), ("is_even(5)", "False")]


def test_parse_assertions_skips_broken_lines():
    reply = "```python\nassert f(1) == 2\nassert f(2) == (\nassert f(3) == 4\n```"

    assert parse_assertions(reply) == [("f(1)", "2"), ("f(3)", "4")]


def test_parse_assertions_without_asserts():
    with pytest.raises(NoAssertionsFound):
        parse_assertions("```python\nprint('hello')\n```")


def test_subtest_render_and_check():
    case = SubTestCase("f", "f(2)", "4")

    assert case.render() == "assert f(2) == 4"
    namespace = {"f": lambda x: x * 3}
    with pytest.raises(AssertionError, match="f\\(2\\) returned 6, expected 4"):
        exec(case.render_check(), namespace)

    truthy = SubTestCase("f", "f(2)", TRUE_MARKER)
    assert truthy.render() == "assert f(2)"
    assert SubTestCase.from_dict(case.to_dict()) == case


def test_public_tests_are_taken_over_verbatim():
    t_pub = PublicTestSet(("assert  solve(1)==2  ", "assert sorted(solve(2)) == [1]"))

    cases = t_pub.as_subtests("solve")

    assert [c.render() for c in cases] == ["assert  solve(1)==2", "assert sorted(solve(2)) == [1]"]
    assert [c.origin_public_test for c in cases] == [0, 1]
    assert cases[0].call_expr == "solve(1)"


def test_public_test_set_rejects_unknown_source():
    with pytest.raises(ValueError):
        PublicTestSet(("assert f()",), source="oracle")


def test_generate_subtests_root_uses_public_tests(tree, t_pub, make_gateway):
    gateway = make_gateway([])

    cases = generate_subtests(tree, "count_evens", t_pub, gateway)

    assert [c.render() for c in cases] == list(TWO_LEVEL_VISIBLE)
    assert gateway.records == []


def test_generate_subtests_for_helper(tree, t_pub, make_gateway, oracle):
    gateway = make_gateway(oracle)

    cases = generate_subtests(tree, "is_even", t_pub, gateway)

    assert [c.render() for c in cases] == [
        "assert is_even(2) == True",
        "assert is_even(4) == True",
        "assert is_even(5) == False",
    ]
    assert all(c.target_unit == "is_even" for c in cases)
    assert gateway.census() == {"testgen": 1}


def test_generate_subtests_drops_asserts_on_other_functions(tree, t_pub, make_gateway):
    reply = "```python\nassert count_evens([2]) == 1\nassert is_even(8) == True\n```"
    gateway = make_gateway([reply])

    cases = generate_subtests(tree, "is_even", t_pub, gateway)

    assert [c.call_expr for c in cases] == ["is_even(8)"]


def test_generate_subtests_gives_up(tree, t_pub, make_gateway):
    gateway = make_gateway(["no tests, sorry"] * 3)

    with pytest.raises(TestGenFailed):
        generate_subtests(tree, "is_even", t_pub, gateway)
    assert gateway.census() == {"testgen": 3}


def test_generate_subtests_unknown_unit(tree, t_pub, make_gateway):
    with pytest.raises(KeyError):
        generate_subtests(tree, "is_odd", t_pub, make_gateway([]))


def test_cache_regenerates_only_on_source_change(tree, t_pub, make_gateway, oracle):
    gateway = make_gateway(oracle)
    cache = SubtestCache()

    first = cache.get(tree, "is_even", t_pub, gateway)
    again = cache.get(tree, "is_even", t_pub, gateway)
    assert first is again
    assert gateway.census() == {"testgen": 1}

    fixed = replace_unit(tree, "is_even", TWO_LEVEL_FIXED_HELPER)
    cache.get(fixed, "is_even", t_pub, gateway)
    assert gateway.census() == {"testgen": 2}
    assert cache.get(fixed, "is_even", t_pub, gateway) is not first
    assert gateway.census() == {"testgen": 2}


def test_cache_remembers_failures(tree, t_pub, make_gateway):
    gateway = make_gateway(["nothing"] * 3)
    cache = SubtestCache()

    assert cache.get(tree, "is_even", t_pub, gateway) == []
    assert cache.get(tree, "is_even", t_pub, gateway) == []
    assert cache.failures == ["is_even"]
    assert len(gateway.records) == 3
