import random

import pytest
from hypothesis import given, strategies as st

from actionqa import lang
from actionqa.lang import (
    Action,
    E,
    ExecutionError,
    ParseError,
    R,
    T,
    TypeCheckError,
    V,
    execute,
    f1,
    parse_sequence,
    serialize_sequence,
    type_check,
)

import oracle
from randgen import oracle_triples, oracle_types, random_graph, random_program, to_oracle

SEL_B = Action("Select", (E("b"), R("r1"), T("Instrument")))


# -- parse / serialize ---------------------------------------------------------------


def test_parse_table6_sequence():
    text = "Select(e:jk, r:pob, t:ate) # Bool(e:pp) # Bool(e:pb)"
    seq = parse_sequence(text)
    assert [a.func for a in seq] == ["Select", "Bool", "Bool"]
    assert seq[0].args == (E("jk"), R("pob"), T("ate"))
    assert serialize_sequence(seq) == text


def test_parse_minimal():
    seq = parse_sequence("Count()")
    assert seq == (Action("Count"),)
    assert serialize_sequence(seq) == "Count()"


def test_parse_arity_error():
    with pytest.raises(ParseError, match="arity"):
        parse_sequence("Select(e:a)")


def test_serialize_constant():
    seq = (Action("SelectAll", (T("a"), R("b"), T("c"))), Action("Around", (V(5),)), Action("Count"))
    assert serialize_sequence(seq) == "SelectAll(t:a, r:b, t:c) # Around(v:5) # Count()"


@pytest.mark.parametrize(
    "text,needle",
    [
        ("", "empty"),
        ("Frobnicate()", "unknown function"),
        ("Count(", "expected argument"),
        ("Select(e:a, r:b, t:c) Count()", "'#'"),
        ("Bool(x:a)", "expected argument"),
        ("AtLeast(v:abc)", "non-negative integer"),
        ("Bool(r:a)", "expects entity"),
    ],
)
def test_parse_errors(text, needle):
    with pytest.raises(ParseError, match=needle):
        parse_sequence(text)


def test_parse_error_has_position():
    with pytest.raises(ParseError) as exc:
        parse_sequence("Count() # Nope()")
    assert exc.value.pos == 10


def test_resolver():
    arts = [E("a", span=(0, 1), label="A"), R("r", span=(2, 3)), T("t", span=(4, 5))]
    seq = parse_sequence("Select(e:a, r:r, t:t)", arts)
    assert seq[0].args[0].label == "A"
    with pytest.raises(ParseError, match="unresolvable"):
        parse_sequence("Bool(e:zz)", arts)


@st.composite
def sequences(draw):
    rng = random.Random(draw(st.integers(0, 2**32)))
    return random_program(rng, random_graph(rng, 8))


@given(sequences())
def test_roundtrip(seq):
    text = serialize_sequence(seq)
    assert parse_sequence(text) == seq
    assert serialize_sequence(parse_sequence(text)) == text


# -- type checking ----------------------------------------------------------------


def test_typecheck_select_count():
    type_check([SEL_B, Action("Count")])


def test_typecheck_underflow():
    with pytest.raises(TypeCheckError, match="underflow"):
        type_check([Action("Count")])


def test_typecheck_map_filter_count():
    type_check([Action("SelectAll", (T("a"), R("b"), T("c"))), Action("Around", (V(5),)), Action("Count")])


def test_typecheck_errors():
    with pytest.raises(TypeCheckError, match="non-singleton"):
        type_check([SEL_B, SEL_B])
    with pytest.raises(TypeCheckError, match="non-singleton"):
        type_check([Action("SelectAll", (T("a"), R("b"), T("c")))])
    with pytest.raises(TypeCheckError, match="mismatch"):
        type_check([Action("SelectAll", (T("a"), R("b"), T("c"))), Action("Count")])
    with pytest.raises(TypeCheckError, match="longer"):
        type_check([SEL_B] * 4 + [Action("Union")] * 3, max_len=4)
    with pytest.raises(TypeCheckError, match="empty"):
        type_check([])


def test_bool_register_counts_as_answer():
    type_check([SEL_B, Action("Bool", (E("x"),)), Action("Bool", (E("y"),))])
    # a register plus one stack value is fine, two stack values are not
    with pytest.raises(TypeCheckError):
        type_check([SEL_B, SEL_B, Action("Bool", (E("x"),))])


# -- execution -----------------------------------------------------------------------


def test_execute_examples(kg0):
    assert execute(kg0, [SEL_B]) == frozenset({"x", "y"})
    assert execute(kg0, [SEL_B, Action("Count")]) == 2
    assert execute(kg0, [SEL_B, Action("Bool", (E("x"),)), Action("Bool", (E("a"),))]) == (True, False)


def test_execute_undeclared(kg0):
    with pytest.raises(ExecutionError, match="undeclared"):
        execute(kg0, [Action("Select", (E("zz"), R("r1"), T("Person")))])


def test_runtime_tag_violation(kg0):
    with pytest.raises(ExecutionError):
        execute(kg0, [Action("Count")])
    assert lang.try_execute(kg0, [Action("Count")]) is None


def test_map_functions(kg0):
    sel_all = Action("SelectAll", (T("Person"), R("r1"), T("Instrument")))
    # a -> {x}, b -> {x, y}
    assert execute(kg0, [sel_all, Action("ArgMax")]) == {"b"}
    assert execute(kg0, [sel_all, Action("ArgMin")]) == {"a"}
    assert execute(kg0, [sel_all, Action("LessThan", (E("b"),))]) == {"a"}
    assert execute(kg0, [sel_all, Action("GreaterThan", (E("b"),))]) == frozenset()
    # the pivot itself is excluded
    assert execute(kg0, [sel_all, Action("EqualTo", (E("b"),))]) == frozenset()
    assert execute(kg0, [sel_all, Action("AtLeast", (V(2),))]) == {"b"}
    assert execute(kg0, [sel_all, Action("AtMost", (V(1),))]) == {"a"}
    assert execute(kg0, [sel_all, Action("Exactly", (V(1),))]) == {"a"}
    # sizes 1 and 2: window [1, 11] holds both, [2, 10] only b
    assert execute(kg0, [sel_all, Action("Around", (V(6),))]) == {"a", "b"}
    assert execute(kg0, [sel_all, Action("Around", (V(6),))], around_tolerance=4) == {"b"}
    # absent pivot counts as 0
    assert execute(kg0, [sel_all, Action("GreaterThan", (E("x"),))]) == {"a", "b"}


def test_implicit_merge(kg0):
    fwd = Action("SelectAll", (T("Person"), R("r1"), T("Instrument")))
    seq = [fwd, fwd, Action("Around", (V(1),)), Action("Count")]
    assert execute(kg0, seq) == 2


def test_executor_deterministic(kg0):
    seq = [Action("SelectAll", (T("Person"), R("r1"), T("Instrument"))), Action("ArgMax")]
    assert execute(kg0, seq) == execute(kg0, seq)


@given(st.integers(0, 2**32))
def test_oracle_equivalence(seed):
    rng = random.Random(seed)
    g = random_graph(rng, 20)
    for _ in range(10):
        seq = random_program(rng, g)
        try:
            expected = oracle.run(oracle_triples(g), oracle_types(g), to_oracle(seq))
        except oracle.OracleError:
            expected = None
        assert lang.try_execute(g, seq) == expected


@given(st.integers(0, 2**32))
def test_set_op_algebra(seed):
    rng = random.Random(seed)
    g = random_graph(rng, 12)
    a = Action("Select", (E(rng.choice(sorted(g.entities))), R(rng.choice(sorted(g.relations))), T(rng.choice(sorted(g.types)))))
    b = Action("Select", (E(rng.choice(sorted(g.entities))), R(rng.choice(sorted(g.relations))), T(rng.choice(sorted(g.types)))))
    assert execute(g, [a, b, Action("Union")]) == execute(g, [b, a, Action("Union")])
    assert execute(g, [a, a, Action("Inter")]) == execute(g, [a])
    assert execute(g, [a, a, Action("Diff")]) == frozenset()


# -- F1 ---------------------------------------------------------------------------------


def test_f1_examples():
    assert f1(frozenset("xy"), frozenset("xy")) == 1.0
    assert f1(frozenset("x"), frozenset("xy")) == pytest.approx(2 * (1 * 0.5) / (1 + 0.5), abs=1e-12)
    assert f1(3, 4) == 0.0
    assert f1(frozenset(), frozenset()) == 1.0
    assert f1(frozenset(), frozenset("x")) == 0.0
    assert f1(None, frozenset("x")) == 0.0


def test_f1_booleans_positional():
    assert f1((True, False), (True, False)) == 1.0
    assert f1((True, False), (False, True)) == 0.0
    assert f1((True,), (True, False)) == pytest.approx(2 / 3, abs=1e-12)


answers = st.one_of(
    st.frozensets(st.sampled_from("abcdefg")),
    st.integers(0, 20),
    st.lists(st.booleans(), min_size=1, max_size=4).map(tuple),
)


@given(answers, answers)
def test_f1_symmetric_and_bounded(a, b):
    assert f1(a, b) == f1(b, a)
    assert 0.0 <= f1(a, b) <= 1.0


@given(answers)
def test_answer_json_roundtrip(a):
    d = lang.answer_to_json(a)
    assert lang.answer_from_json(d) == a
    if d["type"] == "set":
        assert d["value"] == sorted(set(d["value"]))


def test_artifact_validation():
    with pytest.raises(lang.LangError):
        V(-1)
    with pytest.raises(lang.LangError):
        lang.Artifact("thing", "x")
    with pytest.raises(lang.LangError):
        Action("Bool", (R("x"),))
