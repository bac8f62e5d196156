"""Search trees: effect nodes, opaque and embedded spaces, inner policies.

A tree is a success leaf or an effect node.  Nodes expose named spaces whose
elements index their children; policies never see inside an opaque space —
they only obtain a stream of elements through :func:`get_stream` — while the
demonstration interpreter and trace recorder may inspect sources through the
underscore accessors.

Effect kinds are registered dynamically: a declaration lists the node's
spaces (opaque or embedded, optionally parametric), its navigation function,
and its primary space.  Nodes of unregistered kinds, or arguments outside
that grammar, are rejected when a strategy emits them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Protocol, Sequence

from . import refs as R
from . import streams as S
from .queries import Query, canonical_json
from .recording import current_recorder


class EffectError(Exception):
    """Bad effect declaration or trigger (outside the declared grammar)."""


class UnresolvedSelectorError(Exception):
    """An inner policy has no binding for a space's policy selector."""


class PolicySignatureError(Exception):
    """A search policy was applied to a tree with effects it does not accept."""


class NavigationFailed(Exception):
    """A navigation function could not produce an action (not a crash)."""


class ChoiceRefused(Exception):
    """Raised by choice functions that cannot select a space element.

    Carries enough context for the demonstration interpreter to report a
    stuck outcome.
    """

    def __init__(self, message: str, query: Query | None = None):
        super().__init__(message)
        self.query = query


_node_ids = itertools.count(1)


def fresh_node_id() -> int:
    return next(_node_ids)


# ---------------------------------------------------------------------------
# Global node paths (tree nesting-aware addressing)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GlobalNodePath:
    """Address of a node across nested trees.

    ``segments`` lists, outermost first, the (node, space) pairs that were
    entered to reach the tree containing the node; ``node`` is the path
    within that tree.
    """

    segments: tuple[tuple[R.NodeRef, R.SpaceRef], ...] = ()
    node: R.NodeRef = R.ROOT

    def enter_space(self, space: R.SpaceRef) -> "GlobalNodePath":
        return GlobalNodePath(self.segments + ((self.node, space),), R.ROOT)

    def at(self, node: R.NodeRef) -> "GlobalNodePath":
        return GlobalNodePath(self.segments, node)

    def text(self) -> str:
        parts = [
            f"{R.node_ref_text(n)} @ {R.space_ref_text(s)}" for n, s in self.segments
        ]
        parts.append(R.node_ref_text(self.node))
        return " / ".join(parts)

    def to_json(self) -> dict:
        return {
            "segments": [
                {"node": R.node_ref_json(n), "space": R.space_ref_json(s)}
                for n, s in self.segments
            ],
            "node": R.node_ref_json(self.node),
        }

    @staticmethod
    def from_json(data: dict) -> "GlobalNodePath":
        return GlobalNodePath(
            tuple(
                (R.node_ref_from_json(seg["node"]), R.space_ref_from_json(seg["space"]))
                for seg in data.get("segments", ())
            ),
            R.node_ref_from_json(data["node"]),
        )


def parse_global_path(text: str) -> GlobalNodePath:
    segments = []
    parts = [p.strip() for p in text.split(" / ")]
    for part in parts[:-1]:
        node_text, sep, space_text = part.partition(" @ ")
        if not sep:
            raise R.RefError(f"bad global path segment {part!r}")
        segments.append((R.parse_node_ref(node_text), R.parse_space_ref(space_text)))
    return GlobalNodePath(tuple(segments), R.parse_node_ref(parts[-1]))


# ---------------------------------------------------------------------------
# Effect declarations
# ---------------------------------------------------------------------------

SPACE_ARG_KINDS = ("opaque", "tree")


@dataclass(frozen=True)
class ArgDecl:
    """One named argument of an effect: a space, possibly parametric."""

    space: str  # "opaque" | "tree"
    parametric: bool = False

    def __post_init__(self) -> None:
        if self.space not in SPACE_ARG_KINDS:
            raise EffectError(
                f"effect argument must be an opaque space or an embedded tree, "
                f"got {self.space!r}"
            )


@dataclass
class EffectDecl:
    kind: str
    args: dict[str, ArgDecl]
    navigate: Callable[["EffectNode", "ChoiceFn"], R.LocalValue] | None
    primary_space: str | None = None

    def __post_init__(self) -> None:
        if self.primary_space is not None and self.primary_space not in self.args:
            raise EffectError(
                f"primary space {self.primary_space!r} is not an argument of "
                f"effect {self.kind!r}"
            )


EFFECTS: dict[str, EffectDecl] = {}


def register_effect(decl: EffectDecl) -> EffectDecl:
    if decl.kind in EFFECTS:
        raise EffectError(f"effect kind {decl.kind!r} is already registered")
    EFFECTS[decl.kind] = decl
    return decl


def effect_decl(kind: str) -> EffectDecl:
    decl = EFFECTS.get(kind)
    if decl is None:
        raise EffectError(f"unknown effect kind {kind!r}")
    return decl


# ---------------------------------------------------------------------------
# Spaces
# ---------------------------------------------------------------------------

class PromptingPolicyLike(Protocol):
    def run(self, query: Query, env: "PolicyEnv") -> S.Stream: ...


class SearchPolicyLike(Protocol):
    accepted_effects: frozenset[str]

    def run(self, tree: "Tree", ip: "InnerPolicy", env: "PolicyEnv") -> S.Stream: ...


@dataclass
class InnerPolicy:
    """Per-strategy bundle resolving each selector to a policy.

    A binding is either a prompting policy (for query-backed spaces) or a
    ``(search policy, nested inner policy)`` pair (for tree-backed spaces).
    The ``"*"`` key, when present, is the fallback for unlisted selectors.
    """

    bindings: dict[str, Any] = field(default_factory=dict)
    hyperparams: dict[str, Any] = field(default_factory=dict)

    def resolve(self, selector: str) -> Any:
        if selector in self.bindings:
            return self.bindings[selector]
        if "*" in self.bindings:
            return self.bindings["*"]
        raise UnresolvedSelectorError(
            f"inner policy has no binding for selector {selector!r} "
            f"(available: {sorted(self.bindings)})"
        )


@dataclass
class PolicyEnv:
    """Ambient context threaded through policy runs: the oracle client, the
    few-shot example source, the trace recorder, and shared randomness."""

    oracle: Any = None
    examples: Any = None
    recorder: Any = None
    rng: Any = None
    params: dict[str, Any] = field(default_factory=dict)


class OpaqueSpace:
    """A query or nested strategy, abstracted to a stream of elements.

    Policies may only call :meth:`get_stream` (and read :attr:`tags`);
    the underlying source is runtime-internal.
    """

    def __init__(
        self,
        *,
        source_kind: str,  # "query" | "tree"
        selector: str,
        tags: tuple[str, ...],
        owner_id: int,
        space_ref: R.SpaceRef,
        origin: GlobalNodePath,
        query: Query | None = None,
        make_tree: Callable[[], "Tree"] | None = None,
        signature: frozenset[str] = frozenset(),
    ):
        self._source_kind = source_kind
        self._selector = selector
        self.tags = tags
        self._owner_id = owner_id
        self._space_ref = space_ref
        self._origin = origin
        self._query = query
        self._make_tree = make_tree
        self._signature = signature
        self._tree: Tree | None = None

    @property
    def is_query(self) -> bool:
        return self._source_kind == "query"

    def _source_query(self) -> Query:
        if self._query is None:
            raise EffectError("space is not backed by a query")
        return self._query

    def _source_tree(self) -> "Tree":
        if self._make_tree is None:
            raise EffectError("space is not backed by a nested tree")
        if self._tree is None:
            self._tree = self._make_tree()
        return self._tree

    def get_stream(self, ip: InnerPolicy, env: PolicyEnv) -> S.Stream:
        """The space's elements as local values of the owning node."""
        binding = ip.resolve(self._selector)
        if self.is_query:
            if not hasattr(binding, "run") or isinstance(binding, tuple):
                raise UnresolvedSelectorError(
                    f"selector {self._selector!r} resolves to {binding!r}, "
                    "not a prompting policy"
                )
            query = self._source_query()
            answers = binding.run(query, env)

            def wrap(parsed: Any) -> S.Stream:
                ref = R.AtomRef(R.AnswerRef(self._space_ref, parsed.text))
                if env.recorder is not None:
                    env.recorder.on_answer(
                        self._origin, self._space_ref, query, parsed.text, True
                    )
                local = R.make_local(
                    parsed.value, ref, self._owner_id, query.answer_type
                )
                return S.singleton(local)

            return S.bind(answers, wrap)

        if not (isinstance(binding, tuple) and len(binding) == 2):
            raise UnresolvedSelectorError(
                f"selector {self._selector!r} resolves to {binding!r}, not a "
                "(search policy, inner policy) pair"
            )
        policy, inner_ip = binding
        check_signature(self._signature, policy.accepted_effects)
        tree = self._source_tree()
        inner = policy.run(tree, inner_ip, env)

        def rebase(local: R.LocalValue) -> S.Stream:
            if local.origin_node_ref is None:
                raise NavigationFailed(
                    "nested search yielded a value with no success-leaf origin"
                )
            ref = R.AtomRef(R.ResultRef(self._space_ref, local.origin_node_ref))
            return S.singleton(
                R.make_local(local.value, ref, self._owner_id, local.type_tag)
            )

        return S.bind(inner, rebase)


@dataclass
class EmbeddedTree:
    """A nested tree directly visible to policies (e.g. the sides of a join)."""

    tree: "Tree"
    tags: tuple[str, ...]


Space = OpaqueSpace | EmbeddedTree


ChoiceFn = Callable[[Space], R.LocalValue]


def check_signature(signature: frozenset[str], accepted: frozenset[str]) -> None:
    extra = signature - accepted
    if extra:
        raise PolicySignatureError(
            f"policy accepts {sorted(accepted)} but the tree may contain "
            f"{sorted(extra)}"
        )


# ---------------------------------------------------------------------------
# Trees
# ---------------------------------------------------------------------------

@dataclass
class Success:
    """A success leaf carrying its value and position."""

    value: R.LocalValue
    node_ref: R.NodeRef
    origin: GlobalNodePath

    @property
    def is_success(self) -> bool:
        return True

    @property
    def global_path(self) -> GlobalNodePath:
        return self.origin.at(self.node_ref)


class EffectNode:
    """A non-leaf tree position: named spaces plus a child per action.

    Construction is runtime-internal (the replay engine builds nodes); the
    policy-facing surface is ``kind``, ``tags``, ``space``/``spaces``,
    ``child`` and ``navigate``.
    """

    def __init__(
        self,
        *,
        kind: str,
        tags: tuple[str, ...],
        node_ref: R.NodeRef,
        origin: GlobalNodePath,
        signature: frozenset[str],
        space_builder: Callable[["EffectNode", str, R.LocalValue | None], Space],
        child_builder: Callable[[R.LocalValue], "Tree"],
        space_names: tuple[str, ...],
        parametric_names: frozenset[str],
        primary_space_name: str | None,
    ):
        self.kind = kind
        self.tags = tags
        self.node_ref = node_ref
        self.origin = origin
        self.signature = signature
        self.node_id = fresh_node_id()
        self.primary_space_name = primary_space_name
        self._space_names = space_names
        self._parametric_names = parametric_names
        self._space_builder = space_builder
        self._child_builder = child_builder
        self._space_cache: dict[tuple[str, str | None], Space] = {}
        self._child_cache: dict[str, Tree] = {}

    @property
    def is_success(self) -> bool:
        return False

    @property
    def is_leaf(self) -> bool:
        return effect_decl(self.kind).navigate is None

    @property
    def global_path(self) -> GlobalNodePath:
        return self.origin.at(self.node_ref)

    def space_names(self) -> tuple[str, ...]:
        return self._space_names

    def is_parametric(self, name: str) -> bool:
        return name in self._parametric_names

    def space(self, name: str | None = None, param: R.LocalValue | None = None) -> Space:
        """The named space, instantiated with ``param`` when parametric.

        ``name=None`` selects the primary space.
        """
        if name is None:
            name = self.primary_space_name
            if name is None:
                raise EffectError(f"{self.kind} node has no primary space")
        if name not in self._space_names:
            raise EffectError(f"{self.kind} node has no space named {name!r}")
        if name in self._parametric_names:
            if param is None:
                raise EffectError(f"space {name!r} needs a parameter")
            param.require_node(self.node_id)
            key = (name, R.value_ref_text(param.ref))
        else:
            if param is not None and param.ref != R.UNIT_REF:
                raise EffectError(f"space {name!r} takes no parameter")
            key = (name, None)
        if key not in self._space_cache:
            self._space_cache[key] = self._space_builder(self, name, param)
        return self._space_cache[key]

    def space_ref_for(self, name: str, param: R.LocalValue | None) -> R.SpaceRef:
        """Canonical space reference: the primary space with a unit parameter
        prints as the main space."""
        param_ref = param.ref if param is not None else R.UNIT_REF
        if name == self.primary_space_name and param_ref == R.UNIT_REF:
            return R.MAIN_SPACE
        return R.SpaceRef(name, param_ref)

    def space_from_ref(self, ref: R.SpaceRef) -> Space:
        if ref.is_main:
            return self.space(None)
        param = resolve_value_ref(self, ref.param) if ref.param != R.UNIT_REF else None
        if ref.name in self._parametric_names:
            return self.space(ref.name, param)
        return self.space(ref.name)

    def child(self, action: R.LocalValue) -> "Tree":
        action.require_node(self.node_id)
        if self.is_leaf:
            raise EffectError(f"{self.kind} nodes are leaves and have no children")
        key = R.value_ref_text(action.ref)
        if key not in self._child_cache:
            self._child_cache[key] = self._child_builder(action)
        return self._child_cache[key]

    def navigate(self, choose: ChoiceFn) -> R.LocalValue | None:
        """Apply the effect's canonical navigation function.

        Returns the action selected through ``choose``, or ``None`` for leaf
        effects that cannot be navigated.
        """
        nav = effect_decl(self.kind).navigate
        if nav is None:
            return None
        return nav(self, choose)


Tree = Success | EffectNode


# ---------------------------------------------------------------------------
# Reference resolution against a tree
# ---------------------------------------------------------------------------

def resolve_value_ref(node: EffectNode, ref: R.ValueRef) -> R.LocalValue:
    """Reconstruct the local value a reference denotes at ``node``.

    Answer atoms re-parse the recorded oracle text; result atoms follow the
    nested tree to the referenced success leaf.  List assemblies resolve to
    tuples (the unit encoding resolves to the empty tuple).
    """
    if isinstance(ref, R.AtomRef):
        elem = ref.elem
        space = node.space_from_ref(elem.space)
        if isinstance(elem, R.AnswerRef):
            if not isinstance(space, OpaqueSpace) or not space.is_query:
                raise R.RefError(
                    f"answer reference into a non-query space: {R.value_ref_text(ref)}"
                )
            parsed = space._source_query().parse(elem.answer)
            return R.make_local(
                parsed.value, ref, node.node_id, space._source_query().answer_type
            )
        if isinstance(space, OpaqueSpace):
            if space.is_query:
                raise R.RefError(
                    f"result reference into a query space: {R.value_ref_text(ref)}"
                )
            inner = space._source_tree()
        else:
            inner = space.tree
        found = success_value(inner, elem.node)
        if found is None:
            raise R.RefError(
                f"no success leaf at {R.node_ref_text(elem.node)} for "
                f"{R.value_ref_text(ref)}"
            )
        return R.make_local(found.value, ref, node.node_id, found.type_tag)
    if isinstance(ref, R.ListRef):
        parts = [resolve_value_ref(node, item) for item in ref.items]
        return R.make_local(tuple(p.value for p in parts), ref, node.node_id)
    if isinstance(ref, R.ElementRef):
        base = resolve_value_ref(node, ref.of)
        try:
            value = base.value[ref.index]
        except (TypeError, IndexError, KeyError):
            raise R.RefError(
                f"cannot project element {ref.index} out of "
                f"{R.value_ref_text(ref.of)}"
            ) from None
        return R.make_local(value, ref, node.node_id)
    raise R.RefError(f"not a value reference: {ref!r}")


def success_value(
    tree: Tree, ref: R.NodeRef, diagnostics: list[str] | None = None
) -> R.LocalValue | None:
    """Follow ``ref``'s action chain from the root of ``tree``.

    Returns the success payload when the path ends at a success leaf, and
    ``None`` otherwise; when a component fails to resolve, the reason is
    appended to ``diagnostics`` if given.
    """
    from .queries import AnswerParseError

    def note(msg: str) -> None:
        if diagnostics is not None:
            diagnostics.append(msg)

    current = tree
    for i, action_ref in enumerate(ref.actions):
        if not isinstance(current, EffectNode) or current.is_leaf:
            note(f"path component {i} descends below a leaf")
            return None
        try:
            action = resolve_value_ref(current, action_ref)
            current = current.child(action)
        except (R.RefError, R.LocalityError, EffectError, AnswerParseError) as e:
            note(f"path component {i} does not resolve: {e}")
            return None
    if isinstance(current, Success):
        return current.value
    note("path ends at a non-success node")
    return None
