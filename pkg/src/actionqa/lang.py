"""The action language: typed AST, canonical text form, type checker and executor.

Programs are linear sequences of actions evaluated on a small stack machine.
Values on the stack are tagged by their Python type:

    EntitySet   frozenset[str]
    EntityMap   dict[str, frozenset[str]]   (treated as immutable)
    Number      int
    BooleanList tuple[bool, ...]            (only ever lives in the answer register)
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence, Union

from .kg import KGError, KnowledgeGraph

ENTITY, RELATION, TYPE, CONSTANT = "entity", "relation", "type", "constant"
KIND_PREFIX = {ENTITY: "e", RELATION: "r", TYPE: "t", CONSTANT: "v"}
PREFIX_KIND = {v: k for k, v in KIND_PREFIX.items()}

# Function table order is also the enumeration order used by search.
SIGNATURES: dict[str, tuple[str, ...]] = {
    "Select": (ENTITY, RELATION, TYPE),
    "SelectAll": (TYPE, RELATION, TYPE),
    "Union": (),
    "Inter": (),
    "Diff": (),
    "Bool": (ENTITY,),
    "ArgMin": (),
    "ArgMax": (),
    "GreaterThan": (ENTITY,),
    "LessThan": (ENTITY,),
    "EqualTo": (ENTITY,),
    "AtLeast": (CONSTANT,),
    "AtMost": (CONSTANT,),
    "Around": (CONSTANT,),
    "Exactly": (CONSTANT,),
    "Count": (),
}
FUNCTIONS: tuple[str, ...] = tuple(SIGNATURES)
SET_OPS = ("Union", "Inter", "Diff")
MAP_CONSUMERS = frozenset(
    ["ArgMin", "ArgMax", "GreaterThan", "LessThan", "EqualTo", "AtLeast", "AtMost", "Around", "Exactly"]
)
DEFAULT_MAX_LEN = 4
DEFAULT_AROUND_TOLERANCE = 5

EntitySet = frozenset
Value = Union[frozenset, dict, int]
Answer = Union[frozenset, int, tuple]


class LangError(ValueError):
    pass


class ParseError(LangError):
    def __init__(self, msg: str, pos: int | None = None):
        self.pos = pos
        super().__init__(msg if pos is None else f"{msg} at position {pos}")


class TypeCheckError(LangError):
    def __init__(self, msg: str, index: int | None = None):
        self.index = index
        super().__init__(msg if index is None else f"action {index}: {msg}")


class ExecutionError(LangError):
    pass


@dataclass(frozen=True)
class Artifact:
    kind: str
    id: str | int
    span: tuple[int, int] | None = field(default=None, compare=False)
    label: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KIND_PREFIX:
            raise LangError(f"unknown artifact kind {self.kind!r}")
        if self.kind == CONSTANT:
            if not isinstance(self.id, int) or isinstance(self.id, bool) or self.id < 0:
                raise LangError(f"constant must be a non-negative integer, got {self.id!r}")

    @property
    def token(self) -> str:
        return f"{KIND_PREFIX[self.kind]}:{self.id}"

    def surface(self) -> str:
        return self.label if self.label is not None else str(self.id)


@dataclass(frozen=True)
class Action:
    func: str
    args: tuple[Artifact, ...] = ()

    def __post_init__(self):
        sig = SIGNATURES.get(self.func)
        if sig is None:
            raise LangError(f"unknown function {self.func!r}")
        object.__setattr__(self, "args", tuple(self.args))
        if len(self.args) != len(sig):
            raise LangError(f"{self.func} takes {len(sig)} argument(s), got {len(self.args)}")
        for a, kind in zip(self.args, sig):
            if a.kind != kind:
                raise LangError(f"{self.func} expects {kind} argument, got {a.kind} {a.id!r}")

    def __str__(self):
        return f"{self.func}({', '.join(a.token for a in self.args)})"


ActionSequence = tuple  # tuple[Action, ...]


@dataclass(frozen=True)
class Candidate:
    """A decoded sequence. ``score`` is the beam ranking key (length-normalized)."""

    sequence: tuple[Action, ...]
    log_prob: float
    score: float | None = None

    def __post_init__(self):
        if self.score is None:
            object.__setattr__(self, "score", self.log_prob)


def E(i, **kw) -> Artifact:
    return Artifact(ENTITY, i, **kw)


def R(i, **kw) -> Artifact:
    return Artifact(RELATION, i, **kw)


def T(i, **kw) -> Artifact:
    return Artifact(TYPE, i, **kw)


def V(i, **kw) -> Artifact:
    return Artifact(CONSTANT, i, **kw)


# -- text form --------------------------------------------------------------

SEPARATOR = " # "
_FUNC_RE = re.compile(r"[A-Za-z]+")
_ARG_RE = re.compile(r"([ertv]):([^\s,()#]+)")


def serialize_sequence(seq: Sequence[Action]) -> str:
    return SEPARATOR.join(str(a) for a in seq)


def render_surface(seq: Sequence[Action], kg: KnowledgeGraph | None = None) -> str:
    """Human-readable form with labels in place of ids."""

    def lab(a: Artifact) -> str:
        if a.label is not None:
            return a.label
        if kg is not None and a.kind != CONSTANT:
            return kg.label(a.id)
        return str(a.id)

    return SEPARATOR.join(f"{act.func}({', '.join(lab(a) for a in act.args)})" for act in seq)


def parse_sequence(text: str, resolver: Iterable[Artifact] | None = None) -> tuple[Action, ...]:
    """Parse the canonical text form.

    With a ``resolver`` (the question's argument set), every argument must
    name one of its artifacts and the returned actions carry those objects.
    """
    if not text or not text.strip():
        raise ParseError("empty sequence", 0)
    table = None
    if resolver is not None:
        table = {}
        for a in resolver:
            table.setdefault((a.kind, a.id), a)
    pos = 0
    n = len(text)
    actions = []

    def skip_ws():
        nonlocal pos
        while pos < n and text[pos] == " ":
            pos += 1

    while True:
        skip_ws()
        m = _FUNC_RE.match(text, pos)
        if not m:
            raise ParseError("expected function name", pos)
        func = m.group(0)
        if func not in SIGNATURES:
            raise ParseError(f"unknown function {func!r}", pos)
        pos = m.end()
        if pos >= n or text[pos] != "(":
            raise ParseError("expected '('", pos)
        pos += 1
        args = []
        skip_ws()
        if pos < n and text[pos] == ")":
            pos += 1
        else:
            while True:
                skip_ws()
                am = _ARG_RE.match(text, pos)
                if not am:
                    raise ParseError("expected argument", pos)
                prefix, tok = am.group(1), am.group(2)
                kind = PREFIX_KIND.get(prefix)
                if kind is None:
                    raise ParseError(f"bad argument prefix {prefix!r}", pos)
                ident: str | int = tok
                if kind == CONSTANT:
                    if not tok.isdigit():
                        raise ParseError(f"constant must be a non-negative integer: {tok!r}", pos)
                    ident = int(tok)
                if table is not None:
                    art = table.get((kind, ident))
                    if art is None:
                        raise ParseError(f"unresolvable argument {prefix}:{tok}", pos)
                else:
                    art = Artifact(kind, ident)
                args.append(art)
                pos = am.end()
                skip_ws()
                if pos < n and text[pos] == ",":
                    pos += 1
                    continue
                if pos < n and text[pos] == ")":
                    pos += 1
                    break
                raise ParseError("expected ',' or ')'", pos)
        sig = SIGNATURES[func]
        if len(args) != len(sig):
            raise ParseError(f"arity mismatch: {func} takes {len(sig)} argument(s), got {len(args)}", pos)
        try:
            actions.append(Action(func, tuple(args)))
        except LangError as exc:
            raise ParseError(str(exc), pos) from None
        skip_ws()
        if pos >= n:
            break
        if text[pos] != "#":
            raise ParseError("expected '#' between actions", pos)
        pos += 1
    return tuple(actions)


# -- abstract interpretation (tags only) --------------------------------------

SET, MAP, NUM = "S", "M", "N"
# An abstract state is (stack of tags, register-in-use flag).
AbstractState = tuple
INITIAL_ABSTRACT: AbstractState = ((), False)


def abstract_step(state: AbstractState, func: str) -> AbstractState | None:
    """Tag-level transition; None when ``func`` cannot run in ``state``."""
    stack, reg = state
    if func == "Select":
        return stack + (SET,), reg
    if func == "SelectAll":
        return stack + (MAP,), reg
    if func in SET_OPS:
        if len(stack) < 2 or stack[-1] != stack[-2] or stack[-1] not in (SET, MAP):
            return None
        return stack[:-1], reg
    if func == "Bool":
        if not stack or stack[-1] != SET:
            return None
        return stack, True
    if func in MAP_CONSUMERS:
        if len(stack) >= 2 and stack[-1] == MAP and stack[-2] == MAP:
            stack = stack[:-1]
        if not stack or stack[-1] != MAP:
            return None
        return stack[:-1] + (SET,), reg
    if func == "Count":
        if not stack or stack[-1] != SET:
            return None
        return stack[:-1] + (NUM,), reg
    raise LangError(f"unknown function {func!r}")


def abstract_final(state: AbstractState) -> bool:
    stack, reg = state
    if len(stack) != 1:
        return False
    return reg or stack[0] in (SET, NUM)


@lru_cache(maxsize=None)
def can_finish(state: AbstractState, remaining: int, funcs: frozenset = frozenset(FUNCTIONS)) -> bool:
    """Whether some extension of at most ``remaining`` actions drawn from
    ``funcs`` reaches a final state."""
    if abstract_final(state):
        return True
    if remaining <= 0:
        return False
    for f in FUNCTIONS:
        if f in funcs:
            nxt = abstract_step(state, f)
            if nxt is not None and can_finish(nxt, remaining - 1, funcs):
                return True
    return False


def type_check(seq: Sequence[Action], max_len: int | None = None) -> None:
    """Raise TypeCheckError unless ``seq`` is a well-typed complete program."""
    if not seq:
        raise TypeCheckError("empty sequence")
    if max_len is not None and len(seq) > max_len:
        raise TypeCheckError(f"sequence longer than {max_len}")
    state = INITIAL_ABSTRACT
    for i, act in enumerate(seq):
        nxt = abstract_step(state, act.func)
        if nxt is None:
            stack = state[0]
            if not stack or (act.func in SET_OPS and len(stack) < 2):
                raise TypeCheckError(f"stack underflow in {act.func}", i)
            raise TypeCheckError(f"tag mismatch in {act.func} (stack {''.join(stack)})", i)
        state = nxt
    if not abstract_final(state):
        raise TypeCheckError(f"non-singleton or non-answer final stack {''.join(state[0])!r}")


def is_well_typed(seq: Sequence[Action], max_len: int | None = None) -> bool:
    try:
        type_check(seq, max_len)
    except TypeCheckError:
        return False
    return True


# -- execution ----------------------------------------------------------------

# Concrete state: (stack tuple, register tuple of bools).
State = tuple
INITIAL_STATE: State = ((), ())


def _merge_maps(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out[k] | v if k in out else v
    return out


def _set_op(func: str, a, b):
    if isinstance(a, frozenset):
        if func == "Union":
            return a | b
        if func == "Inter":
            return a & b
        return a - b
    if func == "Union":
        return _merge_maps(a, b)
    out = {}
    if func == "Inter":
        for k, v in a.items():
            if k in b:
                w = v & b[k]
                if w:
                    out[k] = w
    else:
        for k, v in a.items():
            w = v - b.get(k, frozenset())
            if w:
                out[k] = w
    return out


def select_all(kg: KnowledgeGraph, t1: str, r: str, t2: str) -> dict:
    kg.check_relation(r)
    kg.check_type(t2)
    out = {}
    for s in kg.entities_of_type(t1):
        objs = kg.neighbors(s, r, t2)
        if objs:
            out[s] = objs
    return out


def step(
    kg: KnowledgeGraph,
    state: State,
    action: Action,
    around_tolerance: int = DEFAULT_AROUND_TOLERANCE,
) -> State:
    """Execute one action; returns the new state (inputs are not mutated)."""
    stack, reg = state
    f, args = action.func, action.args

    def need(pred, what):
        if not pred:
            raise ExecutionError(f"{f}: expected {what} on stack")

    if f == "Select":
        e, r, t = (a.id for a in args)
        return stack + (kg.neighbors(e, r, t),), reg
    if f == "SelectAll":
        t1, r, t2 = (a.id for a in args)
        return stack + (select_all(kg, t1, r, t2),), reg
    if f in SET_OPS:
        need(len(stack) >= 2, "two values")
        a, b = stack[-2], stack[-1]
        need(type(a) is type(b) and isinstance(a, (frozenset, dict)), "two sets or two maps")
        return stack[:-2] + (_set_op(f, a, b),), reg
    if f == "Bool":
        need(stack and isinstance(stack[-1], frozenset), "an entity set")
        e = args[0].id
        kg.check_entity(e)
        return stack, reg + (e in stack[-1],)
    if f == "Count":
        need(stack and isinstance(stack[-1], frozenset), "an entity set")
        return stack[:-1] + (len(stack[-1]),), reg
    if f in MAP_CONSUMERS:
        if len(stack) >= 2 and isinstance(stack[-1], dict) and isinstance(stack[-2], dict):
            stack = stack[:-2] + (_merge_maps(stack[-2], stack[-1]),)
        need(stack and isinstance(stack[-1], dict), "an entity map")
        m = stack[-1]
        sizes = {k: len(v) for k, v in m.items()}
        if f in ("ArgMin", "ArgMax"):
            if not sizes:
                res = frozenset()
            else:
                best = (min if f == "ArgMin" else max)(sizes.values())
                res = frozenset(k for k, c in sizes.items() if c == best)
        elif f in ("GreaterThan", "LessThan", "EqualTo"):
            e = args[0].id
            kg.check_entity(e)
            pivot = sizes.get(e, 0)
            cmp = {"GreaterThan": int.__gt__, "LessThan": int.__lt__, "EqualTo": int.__eq__}[f]
            res = frozenset(k for k, c in sizes.items() if k != e and cmp(c, pivot))
        else:
            n = args[0].id
            if f == "AtLeast":
                res = frozenset(k for k, c in sizes.items() if c >= n)
            elif f == "AtMost":
                res = frozenset(k for k, c in sizes.items() if c <= n)
            elif f == "Around":
                res = frozenset(k for k, c in sizes.items() if n - around_tolerance <= c <= n + around_tolerance)
            else:
                res = frozenset(k for k, c in sizes.items() if c == n)
        return stack[:-1] + (res,), reg
    raise ExecutionError(f"unknown function {f!r}")


def final_answer(state: State) -> Answer:
    stack, reg = state
    if reg:
        return tuple(reg)
    if len(stack) != 1:
        raise ExecutionError(f"final stack holds {len(stack)} values")
    val = stack[0]
    if isinstance(val, dict):
        raise ExecutionError("final value is an entity map")
    return val


def execute(
    kg: KnowledgeGraph,
    seq: Sequence[Action],
    around_tolerance: int = DEFAULT_AROUND_TOLERANCE,
) -> Answer:
    state = INITIAL_STATE
    try:
        for act in seq:
            state = step(kg, state, act, around_tolerance)
    except KGError as exc:
        raise ExecutionError(str(exc)) from None
    return final_answer(state)


def try_execute(kg, seq, around_tolerance: int = DEFAULT_AROUND_TOLERANCE) -> Answer | None:
    try:
        return execute(kg, seq, around_tolerance)
    except LangError:
        return None


def state_fingerprint(state: State) -> tuple:
    """Hashable canonical form of an execution state."""
    stack, reg = state
    items = []
    for v in stack:
        if isinstance(v, dict):
            items.append(("M", tuple(sorted((k, tuple(sorted(s))) for k, s in v.items()))))
        elif isinstance(v, frozenset):
            items.append(("S", tuple(sorted(v))))
        else:
            items.append(("N", v))
    return tuple(items), tuple(reg)


# -- answers and scoring -------------------------------------------------------


def answer_strings(ans: Answer | None) -> frozenset[str]:
    """Answers viewed as string sets; numbers and booleans become singletons."""
    if ans is None:
        return frozenset()
    if isinstance(ans, frozenset):
        return frozenset(str(x) for x in ans)
    if isinstance(ans, tuple):
        return frozenset(f"{i}:{'true' if b else 'false'}" for i, b in enumerate(ans))
    if isinstance(ans, int):
        return frozenset([str(ans)])
    raise TypeError(f"not an answer: {ans!r}")


def f1(pred: Answer | None, gold: Answer | None) -> float:
    p, g = answer_strings(pred), answer_strings(gold)
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    hit = len(p & g)
    if hit == 0:
        return 0.0
    prec, rec = hit / len(p), hit / len(g)
    return 2 * prec * rec / (prec + rec)


def answer_to_json(ans: Answer | None) -> dict:
    if ans is None or isinstance(ans, frozenset):
        return {"type": "set", "value": sorted(ans or ())}
    if isinstance(ans, tuple):
        return {"type": "bools", "value": list(ans)}
    return {"type": "number", "value": ans}


def answer_from_json(d: dict) -> Answer:
    t = d["type"]
    if t == "set":
        return frozenset(d["value"])
    if t == "bools":
        return tuple(bool(x) for x in d["value"])
    if t == "number":
        return int(d["value"])
    raise LangError(f"unknown answer type {t!r}")
