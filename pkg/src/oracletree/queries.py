"""Typed queries, answer parsing, and prompt rendering.

A query is a serializable question for an oracle, stratified by type name.
Two queries are equal when their type and canonicalized payloads are equal.
By convention a completion's structured answer lives in its final fenced code
block as a YAML value (individual query types may override the extraction);
the expected shape is named by the query's ``answer_type`` and decoded by a
registered coercer.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import jinja2
import yaml


class AnswerParseError(Exception):
    """A completion could not be parsed as an answer; carries the raw text."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class MissingTemplateError(Exception):
    pass


def canonical_json(obj: Any) -> str:
    """Deterministic serialization: sorted record keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# ---------------------------------------------------------------------------
# Answer types
# ---------------------------------------------------------------------------

def _as_int(v: Any) -> int:
    if isinstance(v, bool):
        raise AnswerParseError(f"expected an integer, got a bool", repr(v))
    if isinstance(v, int):
        return v
    if isinstance(v, str):
        return int(v.strip())
    raise ValueError(f"expected an integer, got {type(v).__name__}")


def _as_float(v: Any) -> float:
    if isinstance(v, bool):
        raise ValueError("expected a number, got a bool")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        return float(v.strip())
    raise ValueError(f"expected a number, got {type(v).__name__}")


def _as_str(v: Any) -> str:
    return v if isinstance(v, str) else canonical_json(v)


def _as_bool(v: Any) -> bool:
    if isinstance(v, bool):
        return v
    raise ValueError(f"expected a boolean, got {type(v).__name__}")


def _as_int_list(v: Any) -> list[int]:
    if not isinstance(v, (list, tuple)):
        raise ValueError(f"expected a list, got {type(v).__name__}")
    return [_as_int(x) for x in v]


def _as_str_list(v: Any) -> list[str]:
    if not isinstance(v, (list, tuple)):
        raise ValueError(f"expected a list, got {type(v).__name__}")
    return [_as_str(x) for x in v]


def _as_pair_list(v: Any) -> list[tuple[str, str]]:
    """A list of (name, value) pairs, e.g. labeled suggestion batches."""
    if not isinstance(v, (list, tuple)):
        raise ValueError(f"expected a list of pairs, got {type(v).__name__}")
    out = []
    for item in v:
        if isinstance(item, dict) and len(item) == 1:
            ((k, val),) = item.items()
            out.append((_as_str(k), _as_str(val)))
        elif isinstance(item, (list, tuple)) and len(item) == 2:
            out.append((_as_str(item[0]), _as_str(item[1])))
        else:
            raise ValueError(f"expected a pair, got {item!r}")
    return out


ANSWER_TYPES: dict[str, Callable[[Any], Any]] = {
    "int": _as_int,
    "float": _as_float,
    "str": _as_str,
    "bool": _as_bool,
    "yaml": lambda v: v,
    "int_list": _as_int_list,
    "str_list": _as_str_list,
    "pair_list": _as_pair_list,
}


def register_answer_type(name: str, coerce: Callable[[Any], Any]) -> None:
    ANSWER_TYPES[name] = coerce


_FENCED = re.compile(r"```[ \t]*[\w-]*[ \t]*\n(.*?)```", re.DOTALL)


def extract_final_block(raw: str) -> str:
    """The contents of the last triple-backquoted block in ``raw``."""
    blocks = _FENCED.findall(raw)
    if not blocks:
        raise AnswerParseError("no fenced answer block found", raw)
    return blocks[-1]


@dataclass(frozen=True, eq=False)
class Query:
    """A question for an oracle: a type name plus a serializable payload."""

    type_name: str
    payload: dict
    answer_type: str = "yaml"
    tags: tuple[str, ...] = ()
    # "fenced": answer in the final code block; "raw": whole completion.
    extraction: str = "fenced"

    def __post_init__(self) -> None:
        if not self.tags:
            object.__setattr__(self, "tags", (self.type_name,))

    def canonical(self) -> str:
        return canonical_json({"type": self.type_name, "args": self.payload})

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Query):
            return NotImplemented
        return self.canonical() == other.canonical()

    def __hash__(self) -> int:
        return hash(self.canonical())

    def parse(self, raw: str) -> "ParsedAnswer":
        """Decode a raw completion into a value of this query's answer type."""
        if self.extraction == "raw":
            text = raw
        else:
            text = extract_final_block(raw)
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise AnswerParseError(f"bad YAML in answer block: {e}", raw) from None
        coerce = ANSWER_TYPES.get(self.answer_type)
        if coerce is None:
            raise AnswerParseError(f"unknown answer type {self.answer_type!r}", raw)
        try:
            value = coerce(loaded)
        except AnswerParseError:
            raise
        except (ValueError, TypeError) as e:
            raise AnswerParseError(str(e), raw) from None
        return ParsedAnswer(value, raw.rstrip())


@dataclass(frozen=True)
class ParsedAnswer:
    value: Any
    text: str  # the raw completion, trailing whitespace trimmed


UNIVERSAL_QUERY = "UniversalQuery"


def universal_query(
    strategy_name: str,
    variable: str,
    context: Sequence[Any] | dict[str, Any],
    answer_type: str,
) -> Query:
    """The single query type behind ``guess``: asks an oracle to pick a value
    for a named nondeterministic assignment given explicit local context."""
    if isinstance(context, dict):
        items = [{"label": k, "value": v} for k, v in context.items()]
    else:
        items = [{"label": str(i), "value": v} for i, v in enumerate(context)]
    return Query(
        UNIVERSAL_QUERY,
        {
            "strategy": strategy_name,
            "variable": variable,
            "context": items,
            "answer_type": answer_type,
        },
        answer_type=answer_type,
    )


# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------

@dataclass
class PromptTemplate:
    system: str
    user: str = "{{ payload_yaml }}"


_GENERIC_SYSTEM = (
    "You are answering {{ type_name }} requests issued by a running program. "
    "Each user message contains one request as YAML. Reply with your "
    "reasoning if useful, then terminate your answer with a code block "
    "(delimited by triple backquotes) containing a YAML value of type "
    "{{ answer_type }}."
)

_UNIVERSAL_SYSTEM = (
    "A nondeterministic program is running and has stopped at an assignment "
    "it cannot resolve on its own. You will be given the program's name, the "
    "variable being assigned, and the values of selected local variables. "
    "Pick a value for the variable that lets the program continue without "
    "failing any of its checks. Terminate your answer with a code block "
    "(delimited by triple backquotes) containing a YAML value of type "
    "{{ answer_type }}."
)


class TemplateRegistry:
    def __init__(self) -> None:
        self._templates: dict[str, PromptTemplate] = {}
        self._env = jinja2.Environment(undefined=jinja2.StrictUndefined)

    def register(self, type_name: str, system: str, user: str | None = None) -> None:
        tpl = PromptTemplate(system=system)
        if user is not None:
            tpl.user = user
        self._templates[type_name] = tpl

    def lookup(self, type_name: str) -> PromptTemplate:
        tpl = self._templates.get(type_name) or self._templates.get("*")
        if tpl is None:
            raise MissingTemplateError(f"no prompt template for {type_name!r}")
        return tpl

    def _render(self, text: str, q: Query) -> str:
        ctx = {
            "type_name": q.type_name,
            "answer_type": q.answer_type,
            "payload": q.payload,
            "payload_yaml": yaml.safe_dump(q.payload, sort_keys=True).rstrip(),
        }
        return self._env.from_string(text).render(**ctx)

    def render_system(self, q: Query) -> str:
        return self._render(self.lookup(q.type_name).system, q)

    def render_user(self, q: Query) -> str:
        return self._render(self.lookup(q.type_name).user, q)


TEMPLATES = TemplateRegistry()
TEMPLATES.register("*", _GENERIC_SYSTEM)
TEMPLATES.register(UNIVERSAL_QUERY, _UNIVERSAL_SYSTEM)


def render_prompt(
    q: Query,
    examples: Sequence[tuple[Query, str]] = (),
    templates: TemplateRegistry | None = None,
) -> tuple[str, list[dict[str, str]]]:
    """System prompt plus chat turns: examples as user/assistant pairs, then
    the query itself as the final user turn."""
    reg = templates or TEMPLATES
    for ex_query, _ in examples:
        if ex_query.type_name != q.type_name:
            raise ValueError(
                f"example of type {ex_query.type_name!r} cannot illustrate "
                f"{q.type_name!r}"
            )
    system = reg.render_system(q)
    messages: list[dict[str, str]] = []
    for ex_query, answer_text in examples:
        messages.append({"role": "user", "content": reg.render_user(ex_query)})
        messages.append({"role": "assistant", "content": answer_text})
    messages.append({"role": "user", "content": reg.render_user(q)})
    return system, messages
