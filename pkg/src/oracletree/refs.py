"""References tracing every value to the query answers that produced it.

A node reference is the chain of actions leading from a tree root to a node.
A value reference describes how a value was assembled from space elements:
an atom is a single element (a query answer, or a path to a success leaf of
a nested tree), and composites (tuples, lists, options, eithers, unit) are
encoded as lists.  Local values pair a payload with its reference and the
identity of the node that owns it; they can only be combined through the
lift/unlift operations below, and using one at a different node is an error.

Two interchangeable encodings are provided: a compact textual syntax used by
the CLI and inspector (grammar in ``docs/refs.md``) and a JSON form used in
trace files (``docs/trace-format.md``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Sequence
import json
import re


class RefError(Exception):
    """Malformed or unresolvable reference."""


class LocalityError(Exception):
    """A local value was used outside the node that owns it."""


# ---------------------------------------------------------------------------
# Reference types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NodeRef:
    """Path from a tree root: a finite chain of value-reference actions."""

    actions: tuple["ValueRef", ...] = ()

    def child(self, action: "ValueRef") -> "NodeRef":
        return NodeRef(self.actions + (action,))

    @property
    def is_root(self) -> bool:
        return not self.actions

    @property
    def parent(self) -> "NodeRef":
        if self.is_root:
            raise RefError("the root reference has no parent")
        return NodeRef(self.actions[:-1])

    def __iter__(self) -> Iterator["ValueRef"]:
        return iter(self.actions)

    def __len__(self) -> int:
        return len(self.actions)


ROOT = NodeRef()


def make_child_ref(parent: NodeRef, action: "ValueRef") -> NodeRef:
    return parent.child(action)


@dataclass(frozen=True)
class SpaceRef:
    """Names a space of a node: the primary space, or a named parametric one.

    ``MAIN_SPACE`` (``name is None``) denotes the node's primary space with a
    unit parameter.  Nonparametric named spaces use the unit encoding
    (an empty list) as their parameter.
    """

    name: str | None = None
    param: "ValueRef | None" = None

    @property
    def is_main(self) -> bool:
        return self.name is None

    def __post_init__(self) -> None:
        if self.name is None and self.param is not None:
            raise RefError("the main space reference carries no parameter")
        if self.name is not None and self.param is None:
            object.__setattr__(self, "param", ListRef(()))


MAIN_SPACE = SpaceRef()


@dataclass(frozen=True)
class AnswerRef:
    """An element of a query-backed space: the oracle answer, verbatim.

    Answer text is canonicalized by stripping trailing whitespace so that
    demonstration files match byte-stably.
    """

    space: SpaceRef
    answer: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "answer", self.answer.rstrip())


@dataclass(frozen=True)
class ResultRef:
    """An element of a tree-backed space: a path to one of its success leaves."""

    space: SpaceRef
    node: NodeRef


SpaceElementRef = AnswerRef | ResultRef


@dataclass(frozen=True)
class AtomRef:
    elem: SpaceElementRef


@dataclass(frozen=True)
class ListRef:
    items: tuple["ValueRef", ...]


@dataclass(frozen=True)
class ElementRef:
    index: int
    of: "ValueRef"

    def __post_init__(self) -> None:
        if self.index < 0:
            raise RefError("element index must be nonnegative")


ValueRef = AtomRef | ListRef | ElementRef

UNIT_REF = ListRef(())


# ---------------------------------------------------------------------------
# Local values
# ---------------------------------------------------------------------------

_LOCAL_TOKEN = object()  # bars direct construction; use the lift operations

# Type-tag aliases declared via declare_type_alias; resolved to a canonical
# representative before comparison.
_TAG_ALIASES: dict[str, str] = {}


def declare_type_alias(alias: str, target: str) -> None:
    """Declare ``alias`` compatible with ``target`` for cast_local."""
    _TAG_ALIASES[alias] = canonical_tag(target)


def canonical_tag(tag: str) -> str:
    seen = set()
    while tag in _TAG_ALIASES and tag not in seen:
        seen.add(tag)
        tag = _TAG_ALIASES[tag]
    return tag


def tag_of(value: Any) -> str:
    return type(value).__name__


@dataclass(frozen=True)
class LocalValue:
    """A payload valid only within one tree node, plus its provenance.

    Instances are minted by the runtime (space element extraction) or by the
    lift operations; there is no public constructor.
    """

    value: Any
    ref: ValueRef
    node_id: int
    type_tag: str
    # Path of the success leaf this value came from, when it is the value of
    # a nested tree's success leaf (runtime-internal; not serialized).
    origin_node_ref: NodeRef | None = field(default=None, compare=False)
    _token: Any = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self._token is not _LOCAL_TOKEN:
            raise TypeError(
                "LocalValue cannot be constructed directly; "
                "use the lift operations or space element extraction"
            )

    def require_node(self, node_id: int) -> None:
        if self.node_id != node_id:
            raise LocalityError(
                f"local value owned by node {self.node_id} used at node {node_id}"
            )

    def with_tag(self, tag: str) -> "LocalValue":
        return make_local(
            self.value, self.ref, self.node_id, tag, origin=self.origin_node_ref
        )


def make_local(
    value: Any,
    ref: ValueRef,
    node_id: int,
    type_tag: str | None = None,
    *,
    origin: NodeRef | None = None,
) -> LocalValue:
    """Runtime constructor for local values (not part of the public API)."""
    return LocalValue(
        value, ref, node_id, type_tag or tag_of(value), origin, _LOCAL_TOKEN
    )


@dataclass(frozen=True)
class Either:
    """Tagged union payload: side 0 is left, side 1 is right."""

    side: int
    value: Any

    def __post_init__(self) -> None:
        if self.side not in (0, 1):
            raise ValueError("Either side must be 0 (left) or 1 (right)")


COMPOSITE_KINDS = ("unit", "pair", "list", "option", "either")

# An either tag is encoded as an index wrapper over the empty list; it is a
# marker only and is rejected by resolution.
def _either_tag_ref(side: int) -> ValueRef:
    return ElementRef(side, ListRef(()))


def _shared_node(parts: Sequence[LocalValue]) -> int:
    node_ids = {p.node_id for p in parts}
    if len(node_ids) > 1:
        raise LocalityError(f"composite mixes values from nodes {sorted(node_ids)}")
    return next(iter(node_ids))


def lift_composite(kind: str, parts: Sequence[LocalValue], *, side: int | None = None) -> LocalValue:
    """Combine locals sharing one node into a composite local.

    Payload shapes: unit ``()``, pair 2-tuple, list ``list``, option
    ``None``/value, either :class:`Either`.  The reference is always the list
    encoding of the part references.
    """
    parts = list(parts)
    if kind != "either" and side is not None:
        raise RefError("side only applies to either")
    if kind == "unit":
        if parts:
            raise RefError("unit takes no parts")
        raise RefError("unit needs an owning node; use lift_unit(node_id)")
    if kind == "pair":
        if len(parts) != 2:
            raise RefError(f"pair takes exactly 2 parts, got {len(parts)}")
        node = _shared_node(parts)
        return make_local(
            (parts[0].value, parts[1].value),
            ListRef((parts[0].ref, parts[1].ref)),
            node,
            "pair",
        )
    if kind == "list":
        if not parts:
            raise RefError("an empty list has no owner; use lift_list(node_id=...)")
        node = _shared_node(parts)
        return make_local(
            [p.value for p in parts], ListRef(tuple(p.ref for p in parts)), node, "list"
        )
    if kind == "option":
        if len(parts) > 1:
            raise RefError("option takes at most one part")
        if not parts:
            raise RefError("an empty option has no owner; use lift_option(None, node_id=...)")
        part = parts[0]
        if part.value is None:
            raise RefError("option of None is not representable")
        return make_local(part.value, ListRef((part.ref,)), part.node_id, "option")
    if kind == "either":
        if len(parts) != 1 or side is None:
            raise RefError("either takes exactly one part and a side")
        part = parts[0]
        return make_local(
            Either(side, part.value),
            ListRef((_either_tag_ref(side), part.ref)),
            part.node_id,
            "either",
        )
    if kind == "unit":
        raise RefError("unit needs an owning node; use lift_unit(node_id)")
    raise RefError(f"unknown composite kind {kind!r}")


def lift_unit(node_id: int) -> LocalValue:
    return make_local((), UNIT_REF, node_id, "unit")


def lift_pair(a: LocalValue, b: LocalValue) -> LocalValue:
    return lift_composite("pair", (a, b))


def lift_list(parts: Sequence[LocalValue], *, node_id: int | None = None) -> LocalValue:
    if not parts:
        if node_id is None:
            raise RefError("an empty list needs an explicit owning node")
        return make_local([], ListRef(()), node_id, "list")
    return lift_composite("list", parts)


def lift_option(part: LocalValue | None, *, node_id: int | None = None) -> LocalValue:
    if part is None:
        if node_id is None:
            raise RefError("an empty option needs an explicit owning node")
        return make_local(None, ListRef(()), node_id, "option")
    return lift_composite("option", (part,))


def lift_either(part: LocalValue, side: int) -> LocalValue:
    return lift_composite("either", (part,), side=side)


def _part_ref(v: LocalValue, i: int, arity_known: int | None = None) -> ValueRef:
    # When the composite ref is already a list, project its i-th member;
    # otherwise wrap in an element reference.
    if isinstance(v.ref, ListRef):
        items = v.ref.items
        if arity_known is not None and len(items) != arity_known:
            return ElementRef(i, v.ref)
        if i < len(items):
            return items[i]
    return ElementRef(i, v.ref)


def unlift_composite(v: LocalValue, kind: str) -> list[LocalValue]:
    """Inverse of lift_composite; raises on payload shape mismatch."""
    if kind == "unit":
        if v.value != ():
            raise RefError(f"expected unit payload, got {tag_of(v.value)}")
        return []
    if kind == "pair":
        if not isinstance(v.value, tuple) or len(v.value) != 2:
            raise RefError(f"expected pair payload, got {tag_of(v.value)}")
        return [
            make_local(v.value[i], _part_ref(v, i, 2), v.node_id) for i in range(2)
        ]
    if kind == "list":
        if not isinstance(v.value, (list, tuple)):
            raise RefError(f"expected list payload, got {tag_of(v.value)}")
        return [
            make_local(item, _part_ref(v, i), v.node_id)
            for i, item in enumerate(v.value)
        ]
    if kind == "option":
        if v.value is None:
            return []
        return [make_local(v.value, _part_ref(v, 0), v.node_id)]
    if kind == "either":
        if not isinstance(v.value, Either):
            raise RefError(f"expected either payload, got {tag_of(v.value)}")
        return [make_local(v.value.value, _part_ref(v, 1, 2), v.node_id)]
    raise RefError(f"unknown composite kind {kind!r}")


def unlift_pair(v: LocalValue) -> tuple[LocalValue, LocalValue]:
    a, b = unlift_composite(v, "pair")
    return a, b


def cast_local(v: LocalValue, target: str) -> LocalValue | None:
    """Retag ``v`` when the runtime tags are compatible, else ``None``."""
    if canonical_tag(v.type_tag) == canonical_tag(target):
        return v.with_tag(target)
    return None


# ---------------------------------------------------------------------------
# Textual syntax (docs/refs.md)
# ---------------------------------------------------------------------------

def node_ref_text(ref: NodeRef) -> str:
    return "$" + "".join("/" + value_ref_text(a) for a in ref.actions)


def value_ref_text(ref: ValueRef) -> str:
    if isinstance(ref, AtomRef):
        return _elem_text(ref.elem)
    if isinstance(ref, ListRef):
        return "[" + ", ".join(value_ref_text(i) for i in ref.items) + "]"
    if isinstance(ref, ElementRef):
        return f"{value_ref_text(ref.of)}[{ref.index}]"
    raise RefError(f"not a value reference: {ref!r}")


def space_ref_text(ref: SpaceRef) -> str:
    if ref.is_main:
        return "main"
    return f"{ref.name}({value_ref_text(ref.param)})"


def _elem_text(elem: SpaceElementRef) -> str:
    space = space_ref_text(elem.space)
    if isinstance(elem, AnswerRef):
        return f"{space}#{json.dumps(elem.answer)}"
    return f"{space}#{{{node_ref_text(elem.node)}}}"


_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_INT = re.compile(r"\d+")


class _RefParser:
    """Recursive-descent parser for the textual reference syntax."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, msg: str) -> RefError:
        return RefError(f"{msg} at position {self.pos} in {self.text!r}")

    def eof(self) -> bool:
        return self.pos >= len(self.text)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def skip_ws(self) -> None:
        while self.peek() in (" ", "\t"):
            self.pos += 1

    def expect(self, ch: str) -> None:
        if not self.text.startswith(ch, self.pos):
            raise self.error(f"expected {ch!r}")
        self.pos += len(ch)

    def ident(self) -> str:
        m = _IDENT.match(self.text, self.pos)
        if not m:
            raise self.error("expected an identifier")
        self.pos = m.end()
        return m.group()

    def integer(self) -> int:
        m = _INT.match(self.text, self.pos)
        if not m:
            raise self.error("expected an integer")
        self.pos = m.end()
        return int(m.group())

    def json_string(self) -> str:
        if self.peek() != '"':
            raise self.error("expected a quoted string")
        decoder = json.JSONDecoder()
        try:
            value, end = decoder.raw_decode(self.text, self.pos)
        except json.JSONDecodeError as e:
            raise self.error(f"bad string literal: {e.msg}")
        self.pos = end
        return value

    def node_ref(self) -> NodeRef:
        self.expect("$")
        actions: list[ValueRef] = []
        while self.peek() == "/":
            self.pos += 1
            actions.append(self.value_ref())
        return NodeRef(tuple(actions))

    def value_ref(self) -> ValueRef:
        self.skip_ws()
        if self.peek() == "[":
            self.pos += 1
            self.skip_ws()
            items: list[ValueRef] = []
            if self.peek() != "]":
                items.append(self.value_ref())
                self.skip_ws()
                while self.peek() == ",":
                    self.pos += 1
                    items.append(self.value_ref())
                    self.skip_ws()
            self.expect("]")
            ref: ValueRef = ListRef(tuple(items))
        else:
            ref = AtomRef(self.elem_ref())
        # Postfix element projections.
        while self.peek() == "[":
            save = self.pos
            self.pos += 1
            self.skip_ws()
            if not _INT.match(self.text, self.pos):
                self.pos = save
                break
            idx = self.integer()
            self.skip_ws()
            self.expect("]")
            ref = ElementRef(idx, ref)
        return ref

    def space_ref(self) -> SpaceRef:
        name = self.ident()
        if name == "main":
            return MAIN_SPACE
        self.expect("(")
        param = self.value_ref()
        self.skip_ws()
        self.expect(")")
        return SpaceRef(name, param)

    def elem_ref(self) -> SpaceElementRef:
        space = self.space_ref()
        self.expect("#")
        if self.peek() == "{":
            self.pos += 1
            node = self.node_ref()
            self.expect("}")
            return ResultRef(space, node)
        return AnswerRef(space, self.json_string())

    def finish(self) -> None:
        self.skip_ws()
        if not self.eof():
            raise self.error("trailing input")


def parse_node_ref(text: str) -> NodeRef:
    p = _RefParser(text.strip())
    ref = p.node_ref()
    p.finish()
    return ref


def parse_value_ref(text: str) -> ValueRef:
    p = _RefParser(text.strip())
    ref = p.value_ref()
    p.finish()
    return ref


def parse_space_ref(text: str) -> SpaceRef:
    p = _RefParser(text.strip())
    ref = p.space_ref()
    p.finish()
    return ref


# ---------------------------------------------------------------------------
# JSON encoding (docs/trace-format.md)
# ---------------------------------------------------------------------------

def node_ref_json(ref: NodeRef) -> list:
    return [value_ref_json(a) for a in ref.actions]


def value_ref_json(ref: ValueRef) -> dict:
    if isinstance(ref, AtomRef):
        elem = ref.elem
        base = {"space": space_ref_json(elem.space)}
        if isinstance(elem, AnswerRef):
            base["answer"] = elem.answer
        else:
            base["node"] = node_ref_json(elem.node)
        return {"atom": base}
    if isinstance(ref, ListRef):
        return {"list": [value_ref_json(i) for i in ref.items]}
    if isinstance(ref, ElementRef):
        return {"element": {"index": ref.index, "of": value_ref_json(ref.of)}}
    raise RefError(f"not a value reference: {ref!r}")


def space_ref_json(ref: SpaceRef):
    if ref.is_main:
        return "main"
    return {"space": ref.name, "param": value_ref_json(ref.param)}


def node_ref_from_json(data: Any) -> NodeRef:
    if not isinstance(data, list):
        raise RefError(f"bad node reference JSON: {data!r}")
    return NodeRef(tuple(value_ref_from_json(a) for a in data))


def value_ref_from_json(data: Any) -> ValueRef:
    if not isinstance(data, dict) or len(data) != 1:
        raise RefError(f"bad value reference JSON: {data!r}")
    (kind, body), = data.items()
    if kind == "atom":
        space = space_ref_from_json(body["space"])
        if "answer" in body:
            return AtomRef(AnswerRef(space, body["answer"]))
        return AtomRef(ResultRef(space, node_ref_from_json(body["node"])))
    if kind == "list":
        return ListRef(tuple(value_ref_from_json(i) for i in body))
    if kind == "element":
        return ElementRef(body["index"], value_ref_from_json(body["of"]))
    raise RefError(f"bad value reference kind {kind!r}")


def space_ref_from_json(data: Any) -> SpaceRef:
    if data == "main":
        return MAIN_SPACE
    if isinstance(data, dict) and "space" in data:
        return SpaceRef(data["space"], value_ref_from_json(data["param"]))
    raise RefError(f"bad space reference JSON: {data!r}")


def answers_in(ref: ValueRef) -> Iterator[AnswerRef]:
    """All answer atoms mentioned anywhere inside ``ref`` (params included)."""
    if isinstance(ref, AtomRef):
        space = ref.elem.space
        if not space.is_main:
            yield from answers_in(space.param)
        if isinstance(ref.elem, AnswerRef):
            yield ref.elem
        else:
            for action in ref.elem.node.actions:
                yield from answers_in(action)
    elif isinstance(ref, ListRef):
        for item in ref.items:
            yield from answers_in(item)
    elif isinstance(ref, ElementRef):
        yield from answers_in(ref.of)
