"""Annotation categories, per-category field schemas, and the token text format.

An annotation is a category plus a payload tree of field -> value entries.
Payloads are validated against the registered schema for their category,
serialized to delimiter-token text for the sequence parser, and flattened to
(path, value) pairs for evaluation. JSON is the at-rest format; token text is
the model-facing format.
"""

from __future__ import annotations

import copy
import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterator, Optional, Union


class SchemaConfigError(Exception):
    """Raised for registry misuse: duplicate registration, unknown category lookups."""


class SerializationError(Exception):
    """Raised when an annotation cannot be serialized to token text."""


class Category(Enum):
    GDT = "gdt"
    GENERAL_TOLERANCES = "general_tolerances"
    MEASURES = "measures"
    MATERIALS = "materials"
    NOTES = "notes"
    RADII = "radii"
    SURFACE_ROUGHNESS = "surface_roughness"
    THREADS = "threads"
    TITLE_BLOCK = "title_block"

    @property
    def code(self) -> str:
        return self.value

    @classmethod
    def from_code(cls, code: str) -> "Category":
        try:
            return cls(code)
        except ValueError:
            raise SchemaConfigError(f"unknown category code: {code!r}") from None


CATEGORY_CODES = tuple(c.code for c in Category)


class FieldKind(Enum):
    SCALAR = "scalar"          # single string value
    STR_LIST = "str_list"      # list of string values
    GROUP_LIST = "group_list"  # list of nested field maps


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: FieldKind = FieldKind.SCALAR
    required: bool = False
    children: tuple["FieldSpec", ...] = ()

    def __post_init__(self):
        if not re.fullmatch(r"[a-z][a-z0-9_]*", self.name):
            raise SchemaConfigError(f"bad field name: {self.name!r}")
        if self.kind is FieldKind.GROUP_LIST and not self.children:
            raise SchemaConfigError(f"group field {self.name!r} needs child specs")
        if self.kind is not FieldKind.GROUP_LIST and self.children:
            raise SchemaConfigError(f"non-group field {self.name!r} cannot have children")


@dataclass(frozen=True)
class CategorySchema:
    category: Category
    fields: tuple[FieldSpec, ...]

    def field_map(self) -> dict[str, FieldSpec]:
        return {f.name: f for f in self.fields}


class SchemaRegistry:
    """Immutable-after-construction mapping of Category -> CategorySchema."""

    def __init__(self):
        self._schemas: dict[Category, CategorySchema] = {}
        self._frozen = False

    def register(self, schema: CategorySchema) -> None:
        if self._frozen:
            raise SchemaConfigError("registry is frozen")
        if schema.category in self._schemas:
            raise SchemaConfigError(f"duplicate registration for {schema.category.code}")
        self._schemas[schema.category] = schema

    def freeze(self) -> "SchemaRegistry":
        self._frozen = True
        return self

    def schema_for(self, category: Category) -> CategorySchema:
        try:
            return self._schemas[category]
        except KeyError:
            raise SchemaConfigError(f"no schema registered for {category.code}") from None

    def categories(self) -> tuple[Category, ...]:
        return tuple(self._schemas)

    def __len__(self) -> int:
        return len(self._schemas)


def _f(name, kind=FieldKind.SCALAR, required=False, children=()):
    return FieldSpec(name, kind, required, tuple(children))


def register_schemas() -> SchemaRegistry:
    """Build the registry for the nine drawing-annotation categories.

    Field inventories are the package's fixed contract; all leaf values are
    strings so downstream consumers decide how to interpret numbers and units.
    """
    reg = SchemaRegistry()
    reg.register(CategorySchema(Category.GDT, (
        _f("frames", FieldKind.GROUP_LIST, required=True, children=(
            _f("symbol", required=True),
            _f("tolerance_value", required=True),
            _f("modifiers", FieldKind.STR_LIST),
            _f("datums", FieldKind.STR_LIST),
        )),
    )))
    reg.register(CategorySchema(Category.GENERAL_TOLERANCES, (
        _f("standard", required=True),
        _f("class", required=True),
    )))
    reg.register(CategorySchema(Category.MEASURES, (
        _f("prefix"),
        _f("nominal", required=True),
        _f("upper_deviation"),
        _f("lower_deviation"),
        _f("unit"),
    )))
    reg.register(CategorySchema(Category.MATERIALS, (
        _f("name", required=True),
        _f("standard"),
    )))
    reg.register(CategorySchema(Category.NOTES, (
        _f("text", required=True),
    )))
    reg.register(CategorySchema(Category.RADII, (
        _f("value", required=True),
        _f("unit"),
    )))
    reg.register(CategorySchema(Category.SURFACE_ROUGHNESS, (
        _f("parameter", required=True),
        _f("value", required=True),
        _f("unit"),
        _f("process_note"),
    )))
    reg.register(CategorySchema(Category.THREADS, (
        _f("designation", required=True),
        _f("tolerance_class"),
        _f("depth"),
    )))
    reg.register(CategorySchema(Category.TITLE_BLOCK, (
        _f("part_name"),
        _f("drawing_number"),
        _f("revision"),
        _f("scale"),
        _f("author"),
        _f("date"),
        _f("material"),
        _f("units"),
    )))
    return reg.freeze()


_DEFAULT_REGISTRY: Optional[SchemaRegistry] = None


def default_registry() -> SchemaRegistry:
    global _DEFAULT_REGISTRY
    if _DEFAULT_REGISTRY is None:
        _DEFAULT_REGISTRY = register_schemas()
    return _DEFAULT_REGISTRY


# ---------------------------------------------------------------------------
# Annotations and validation
# ---------------------------------------------------------------------------

@dataclass
class StructuredAnnotation:
    category: Category
    payload: dict

    def copy(self) -> "StructuredAnnotation":
        return StructuredAnnotation(self.category, copy.deepcopy(self.payload))


@dataclass
class ValidationResult:
    valid: bool
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


# Symbol canonicalization applied before NFKC. Diameter look-alikes collapse to
# U+2300; ring-above stands in for the degree sign often enough to map it.
_SYMBOL_MAP = {
    "Ø": "⌀",  # Ø
    "ø": "⌀",  # ø
    "∅": "⌀",  # ∅
    "˚": "°",  # ˚
}


def normalize_value(value: str) -> str:
    """Canonical form used for field comparison: symbol map, NFKC, squeezed whitespace."""
    value = "".join(_SYMBOL_MAP.get(ch, ch) for ch in value)
    value = unicodedata.normalize("NFKC", value)
    return " ".join(value.split())


def _check_leaf(name: str, value, problems: list[str]) -> None:
    if not isinstance(value, str):
        problems.append(f"{name}: expected string, got {type(value).__name__}")
        return
    if normalize_value(value) == "":
        problems.append(f"{name}: empty after normalization")
    if "<" in value or ">" in value:
        problems.append(f"{name}: angle brackets are reserved for delimiter tokens")


def _validate_fields(payload, specs: tuple[FieldSpec, ...], prefix: str,
                     problems: list[str]) -> None:
    if not isinstance(payload, dict):
        problems.append(f"{prefix or 'payload'}: expected object, got {type(payload).__name__}")
        return
    known = {s.name: s for s in specs}
    for spec in specs:
        label = f"{prefix}{spec.name}"
        if spec.name not in payload:
            if spec.required:
                problems.append(f"{label}: required field missing")
            continue
        value = payload[spec.name]
        if spec.kind is FieldKind.SCALAR:
            _check_leaf(label, value, problems)
        elif spec.kind is FieldKind.STR_LIST:
            if not isinstance(value, list) or not value:
                problems.append(f"{label}: expected non-empty list of strings")
            else:
                for i, item in enumerate(value):
                    _check_leaf(f"{label}.{i}", item, problems)
        else:  # GROUP_LIST
            if not isinstance(value, list) or not value:
                problems.append(f"{label}: expected non-empty list of groups")
            else:
                for i, group in enumerate(value):
                    _validate_fields(group, spec.children, f"{label}.{i}.", problems)
    for key in payload:
        if key not in known:
            problems.append(f"{prefix}{key}: unknown field")


def validate(ann: StructuredAnnotation, mode: str = "strict",
             registry: Optional[SchemaRegistry] = None) -> ValidationResult:
    """Check ann against its category schema.

    strict: every problem is a violation and the result is invalid.
    lenient: every problem becomes a warning, nothing is dropped, result is valid.
    """
    if mode not in ("strict", "lenient"):
        raise ValueError(f"mode must be 'strict' or 'lenient', got {mode!r}")
    reg = registry or default_registry()
    schema = reg.schema_for(ann.category)
    problems: list[str] = []
    _validate_fields(ann.payload, schema.fields, "", problems)
    if mode == "strict":
        return ValidationResult(valid=not problems, violations=problems)
    return ValidationResult(valid=True, warnings=problems)


# ---------------------------------------------------------------------------
# Token text serialization
# ---------------------------------------------------------------------------

SEP_TOKEN = "<sep/>"


def open_token(name: str) -> str:
    return f"<s_{name}>"


def close_token(name: str) -> str:
    return f"</s_{name}>"


def delimiter_tokens(category: Category,
                     registry: Optional[SchemaRegistry] = None) -> list[str]:
    """All delimiter tokens serialize_tokens can emit for one category."""
    reg = registry or default_registry()
    tokens = [open_token(category.code), close_token(category.code), SEP_TOKEN]

    def add(specs):
        for spec in specs:
            tokens.append(open_token(spec.name))
            tokens.append(close_token(spec.name))
            add(spec.children)

    add(reg.schema_for(category).fields)
    return tokens


def _serialize_fields(payload: dict, specs: tuple[FieldSpec, ...]) -> str:
    parts = []
    for spec in specs:
        if spec.name not in payload:
            continue
        value = payload[spec.name]
        if spec.kind is FieldKind.SCALAR:
            body = value
        elif spec.kind is FieldKind.STR_LIST:
            body = SEP_TOKEN.join(value)
        else:
            body = SEP_TOKEN.join(_serialize_fields(g, spec.children) for g in value)
        parts.append(f"{open_token(spec.name)}{body}{close_token(spec.name)}")
    return "".join(parts)


def serialize_tokens(ann: StructuredAnnotation,
                     registry: Optional[SchemaRegistry] = None) -> str:
    """Emit the flat delimiter-token text for a strictly valid annotation.

    Fields appear in canonical schema order regardless of payload key order,
    so equal annotations always produce byte-equal text.
    """
    reg = registry or default_registry()
    result = validate(ann, "strict", reg)
    if not result.valid:
        raise SerializationError(
            "annotation is not strictly valid: " + "; ".join(result.violations))
    schema = reg.schema_for(ann.category)
    body = _serialize_fields(ann.payload, schema.fields)
    return f"{open_token(ann.category.code)}{body}{close_token(ann.category.code)}"


# ---------------------------------------------------------------------------
# Token text parsing (total: returns ParseFailure, never raises on garbage)
# ---------------------------------------------------------------------------

@dataclass
class ParseFailure:
    reason: str
    raw_text: str
    detail: str = ""


_TOKEN_RE = re.compile(r"<s_([a-z][a-z0-9_]*)>|</s_([a-z][a-z0-9_]*)>|<sep/>")

_OPEN, _CLOSE, _SEP, _TEXT = "open", "close", "sep", "text"


def lex_tokens(text: str) -> list[tuple[str, str]]:
    """Split text into delimiter tokens and literal runs: (kind, value) items.

    kind is "open"/"close" (value = tag name), "sep", or "text" (value = the
    literal). Used by the parser below and by model vocabularies.
    """
    items = []
    pos = 0
    for m in _TOKEN_RE.finditer(text):
        if m.start() > pos:
            items.append((_TEXT, text[pos:m.start()]))
        if m.group(1) is not None:
            items.append((_OPEN, m.group(1)))
        elif m.group(2) is not None:
            items.append((_CLOSE, m.group(2)))
        else:
            items.append((_SEP, ""))
        pos = m.end()
    if pos < len(text):
        items.append((_TEXT, text[pos:]))
    return items


class _TokenCursor:
    def __init__(self, items):
        self.items = items
        self.i = 0

    def peek(self):
        return self.items[self.i] if self.i < len(self.items) else None

    def next(self):
        item = self.items[self.i]
        self.i += 1
        return item


class _ParseError(Exception):
    def __init__(self, reason, detail=""):
        super().__init__(detail or reason)
        self.reason = reason
        self.detail = detail


def _parse_field(cur: _TokenCursor, name: str, spec: Optional[FieldSpec]):
    """Parse everything between <s_name> (consumed) and </s_name>."""
    literals: list[str] = [""]
    groups: list[dict] = [{}]
    saw_nested = False
    saw_text = False
    while True:
        item = cur.peek()
        if item is None:
            raise _ParseError("unbalanced", f"field {name!r} never closed")
        kind, value = cur.next()
        if kind == _TEXT:
            if saw_nested and value.strip():
                raise _ParseError("mixed_content",
                                  f"field {name!r} mixes text and nested fields")
            if not saw_nested:
                literals[-1] += value
                saw_text = saw_text or bool(value)
        elif kind == _SEP:
            literals.append("")
            groups.append({})
        elif kind == _OPEN:
            if saw_text and any(s.strip() for s in literals):
                raise _ParseError("mixed_content",
                                  f"field {name!r} mixes text and nested fields")
            saw_nested = True
            child_spec = None
            if spec is not None and spec.kind is FieldKind.GROUP_LIST:
                child_spec = {c.name: c for c in spec.children}.get(value)
            _add_field(groups[-1], value, _parse_field(cur, value, child_spec))
        else:  # _CLOSE
            if value != name:
                raise _ParseError("unbalanced",
                                  f"field {name!r} closed by </s_{value}>")
            break
    if saw_nested:
        result: Any = groups
        if spec is not None and spec.kind is not FieldKind.GROUP_LIST:
            pass  # shape mismatch kept as parsed; lenient validation flags it
        elif spec is None and len(groups) == 1:
            result = groups[0]
        return result
    if len(literals) > 1:
        return literals
    value = literals[0]
    if spec is not None and spec.kind is FieldKind.STR_LIST:
        return [value]
    if spec is not None and spec.kind is FieldKind.GROUP_LIST:
        return value  # wrong shape, surfaced by lenient validation
    return value


def _add_field(payload: dict, name: str, value) -> None:
    # Repeated field tags merge into a list; canonical output never repeats tags.
    if name not in payload:
        payload[name] = value
        return
    existing = payload[name]
    if not isinstance(existing, list):
        existing = [existing]
    if isinstance(value, list):
        existing.extend(value)
    else:
        existing.append(value)
    payload[name] = existing


def deserialize_tokens(text: str, expected: Optional[Category] = None,
                       registry: Optional[SchemaRegistry] = None
                       ) -> Union[StructuredAnnotation, ParseFailure]:
    """Parse model-emitted token text back into an annotation.

    Total over arbitrary input: malformed text yields a ParseFailure value
    carrying the raw text so the caller can count it instead of crashing.
    """
    reg = registry or default_registry()
    items = lex_tokens(text)
    cur = _TokenCursor(items)

    while cur.peek() is not None and cur.peek()[0] == _TEXT and not cur.peek()[1].strip():
        cur.next()
    head = cur.peek()
    if head is None:
        return ParseFailure("missing_category", text, "no tokens found")
    if head[0] != _OPEN:
        return ParseFailure("missing_category", text,
                            "text does not start with a category token")
    code = head[1]
    if code not in CATEGORY_CODES:
        return ParseFailure("unknown_category", text, f"<s_{code}> is not a category")
    category = Category(code)
    if expected is not None and category is not expected:
        return ParseFailure("category_mismatch", text,
                            f"expected {expected.code}, got {code}")
    cur.next()

    field_specs = {s.name: s for s in reg.schema_for(category).fields}
    payload: dict = {}
    try:
        while True:
            item = cur.peek()
            if item is None:
                raise _ParseError("unbalanced", f"<s_{code}> never closed")
            kind, value = cur.next()
            if kind == _TEXT:
                if value.strip():
                    raise _ParseError("stray_text",
                                      f"unexpected text {value.strip()[:40]!r} between fields")
            elif kind == _SEP:
                raise _ParseError("unexpected_token", "<sep/> outside a field")
            elif kind == _OPEN:
                _add_field(payload, value,
                           _parse_field(cur, value, field_specs.get(value)))
            else:  # _CLOSE
                if value != code:
                    raise _ParseError("unbalanced", f"</s_{value}> does not match <s_{code}>")
                break
        while cur.peek() is not None:
            kind, value = cur.next()
            if kind != _TEXT or value.strip():
                raise _ParseError("trailing_text", "content after the category close token")
    except _ParseError as err:
        return ParseFailure(err.reason, text, err.detail)
    return StructuredAnnotation(category, payload)


# ---------------------------------------------------------------------------
# Flattening for evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldPath:
    path: tuple[str, ...]
    value: str

    def dotted(self) -> str:
        return ".".join(self.path)


def _walk(node, path: tuple[str, ...]) -> Iterator[FieldPath]:
    if isinstance(node, dict):
        for key, value in node.items():
            yield from _walk(value, path + (str(key),))
    elif isinstance(node, list):
        for i, item in enumerate(node):
            yield from _walk(item, path + (str(i),))
    else:
        yield FieldPath(path, normalize_value(node if isinstance(node, str) else str(node)))


def flatten(ann: StructuredAnnotation) -> Counter:
    """Multiset of (path, normalized value) leaves; list entries get numeric segments."""
    return Counter(_walk(ann.payload, ()))


# ---------------------------------------------------------------------------
# Canonical JSON (the at-rest format)
# ---------------------------------------------------------------------------

def _ordered_payload(payload: dict, specs: tuple[FieldSpec, ...]) -> dict:
    if not isinstance(payload, dict):
        return payload
    known = {s.name: s for s in specs}
    ordered = {}
    for spec in specs:
        if spec.name in payload:
            value = payload[spec.name]
            if spec.kind is FieldKind.GROUP_LIST and isinstance(value, list):
                value = [_ordered_payload(g, spec.children) for g in value]
            ordered[spec.name] = value
    for key, value in payload.items():
        if key not in known:
            ordered[key] = value
    return ordered


def annotation_to_json_dict(ann: StructuredAnnotation,
                            registry: Optional[SchemaRegistry] = None) -> dict:
    reg = registry or default_registry()
    schema = reg.schema_for(ann.category)
    return {"category": ann.category.code,
            "payload": _ordered_payload(ann.payload, schema.fields)}


def annotation_to_json(ann: StructuredAnnotation,
                       registry: Optional[SchemaRegistry] = None) -> str:
    return json.dumps(annotation_to_json_dict(ann, registry), ensure_ascii=False)


def annotation_from_json_dict(obj: dict) -> StructuredAnnotation:
    if not isinstance(obj, dict) or "category" not in obj or "payload" not in obj:
        raise ValueError("annotation JSON must be an object with category and payload")
    return StructuredAnnotation(Category.from_code(obj["category"]), obj["payload"])


def annotation_from_json(text: str) -> StructuredAnnotation:
    return annotation_from_json_dict(json.loads(text))
