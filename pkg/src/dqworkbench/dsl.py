"""Workspace files: text grammar, JSON mirror, loading, and serialization.

A workspace bundles named schemas, instances, dependencies, procedures,
queries, and procedure sequences. The text format is line-oriented with
`#` comments:

    schema S {
      rel EVisits(facility, patInsur, timestp);
    }

    instance I : S {
      EVisits: (1234, 33, "070916 12:00"), (2087, 91, "090916 03:10");
    }

    tgd copy_visits : EVisits(facility: x, patInsur: y, timestp: z)
      -> LocVisits(facility: x, patInsur: y, timestp: z)
    egd one_age : R(id: x, age: y) and R(id: x, age: z) -> y = z
    struct has_age : LocVisits[age]

    proc migrate {
      scope { LocVisits[*]; }
      pre { struct EVisits[facility, patInsur, timestp]; }
      post { tgd EVisits(facility: x, patInsur: y, timestp: z)
               -> LocVisits(facility: x, patInsur: y, timestp: z); }
      safe { total LocVisits; }
    }
    proc alter_age = template alter_table(LocVisits; age)

    query q_visit : exists z . LocVisits(facility: 2087, patInsur: 91, timestp: z)
    query ages(x) : exists y . LocVisits(patInsur: y, age: x)

    seq fix = migrate, alter_age

Instance tuples list values in the relation's canonical (sorted) attribute
order. Inside queries and dependencies bare identifiers are variables;
constants must be numbers or quoted strings. Inside instance tuples bare
identifiers are constants. Nulls are written ?name. `true` is the empty
conjunction, `nonnull(x)` constrains a variable to an ordinary constant,
and names starting with @ are rejected (reserved for generated values).
Every name must be declared before it is used. The closing dot of an
`exists` list must be separated from a following dotted variable name by
whitespace.

The JSON mirror (`.dq.json`) carries the same constructs one-to-one;
`load_workspace` picks the format by file extension.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

from .constraints import (
    And,
    Atom,
    BooleanCondition,
    Comparison,
    ConjunctiveQuery,
    Constraint,
    ConstantAtom,
    Egd,
    FilteredTotalQuery,
    NamedAtom,
    Not,
    Or,
    Query,
    StructureConstraint,
    Tgd,
    TotalConjQuery,
    TotalQuery,
    Var,
)
from .errors import (
    DomainMismatch,
    MalformedParams,
    ResolutionError,
    SchemaConformance,
    WorkspaceSyntaxError,
)
from .model import Instance, Row, Schema, Value, const, null_marker
from .procedures import Procedure, instantiate_template

TOP_KEYWORDS = ("schema", "instance", "tgd", "egd", "struct", "proc", "query", "seq")
RESERVED_WORDS = frozenset(
    TOP_KEYWORDS
    + ("rel", "scope", "pre", "post", "safe", "total", "filtered", "cq", "where",
       "exists", "and", "or", "not", "true", "template", "nonnull")
)


@dataclass(frozen=True)
class Workspace:
    """Named declarations with all cross-references resolved."""

    schemas: dict[str, Schema] = field(default_factory=dict)
    instances: dict[str, Instance] = field(default_factory=dict)
    instance_schema: dict[str, str] = field(default_factory=dict)
    constraints: dict[str, Constraint] = field(default_factory=dict)
    procedures: dict[str, Procedure] = field(default_factory=dict)
    queries: dict[str, Query] = field(default_factory=dict)
    sequences: dict[str, tuple[str, ...]] = field(default_factory=dict)


# --- tokenizer ---------------------------------------------------------------

_PUNCT = ("->", "!=", "{", "}", "(", ")", "[", "]", ",", ";", ":", ".", "*", "=")


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    col: int


def _is_ident_start(ch: str) -> bool:
    return ch.isalpha() or ch == "_"


def _is_ident_char(ch: str) -> bool:
    return ch.isalnum() or ch == "_"


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    pos = 0
    n = len(text)
    while pos < n:
        ch = text[pos]
        if ch == "\n":
            pos, line, col = pos + 1, line + 1, 1
            continue
        if ch in " \t\r":
            pos, col = pos + 1, col + 1
            continue
        if ch == "#":
            while pos < n and text[pos] != "\n":
                pos += 1
            continue
        start_line, start_col = line, col
        if ch == '"':
            pos += 1
            col += 1
            out = []
            while True:
                if pos >= n or text[pos] == "\n":
                    raise WorkspaceSyntaxError(start_line, start_col, "unterminated string")
                c = text[pos]
                if c == "\\":
                    if pos + 1 >= n:
                        raise WorkspaceSyntaxError(start_line, start_col, "unterminated string")
                    nxt = text[pos + 1]
                    if nxt not in ('"', "\\"):
                        raise WorkspaceSyntaxError(
                            line, col, f"unknown escape \\{nxt} (only \\\" and \\\\)"
                        )
                    out.append(nxt)
                    pos += 2
                    col += 2
                    continue
                if c == '"':
                    pos += 1
                    col += 1
                    break
                out.append(c)
                pos += 1
                col += 1
            tokens.append(_Token("string", "".join(out), start_line, start_col))
            continue
        if ch == "?":
            pos += 1
            col += 1
            name = []
            while pos < n and _is_ident_char(text[pos]):
                name.append(text[pos])
                pos += 1
                col += 1
            if not name:
                raise WorkspaceSyntaxError(start_line, start_col, "? must start a null name")
            tokens.append(_Token("null", "".join(name), start_line, start_col))
            continue
        if ch.isdigit() or (ch == "-" and pos + 1 < n and text[pos + 1].isdigit()):
            num = [ch]
            pos += 1
            col += 1
            seen_dot = False
            while pos < n and (text[pos].isdigit() or (text[pos] == "." and not seen_dot
                               and pos + 1 < n and text[pos + 1].isdigit())):
                seen_dot = seen_dot or text[pos] == "."
                num.append(text[pos])
                pos += 1
                col += 1
            tokens.append(_Token("number", "".join(num), start_line, start_col))
            continue
        if _is_ident_start(ch) or ch == "@":
            name = [ch]
            pos += 1
            col += 1
            while pos < n:
                c = text[pos]
                if _is_ident_char(c) or c == "@":
                    name.append(c)
                    pos += 1
                    col += 1
                elif c == "." and pos + 1 < n and (_is_ident_char(text[pos + 1]) or text[pos + 1] == "@"):
                    name.append(c)
                    pos += 1
                    col += 1
                else:
                    break
            word = "".join(name)
            if word.startswith("@") or "@" in word:
                raise WorkspaceSyntaxError(
                    start_line, start_col, "names containing @ are reserved for generated values"
                )
            tokens.append(_Token("ident", word, start_line, start_col))
            continue
        matched = None
        for p in _PUNCT:
            if text.startswith(p, pos):
                matched = p
                break
        if matched is None:
            raise WorkspaceSyntaxError(start_line, start_col, f"unexpected character {ch!r}")
        tokens.append(_Token("punct", matched, start_line, start_col))
        pos += len(matched)
        col += len(matched)
    return tokens


# --- parser ------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.ws = Workspace()

    # token plumbing

    def _peek(self) -> _Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _next(self, expected: str) -> _Token:
        tok = self._peek()
        if tok is None:
            last = self.tokens[-1] if self.tokens else _Token("punct", "", 1, 1)
            raise WorkspaceSyntaxError(last.line, last.col, f"expected {expected}, found end of file")
        self.pos += 1
        return tok

    def _fail(self, tok: _Token, expected: str):
        shown = tok.text if tok.kind != "string" else f'"{tok.text}"'
        raise WorkspaceSyntaxError(tok.line, tok.col, f"expected {expected}, found {shown!r}")

    def _punct(self, p: str) -> _Token:
        tok = self._next(f"{p!r}")
        if tok.kind != "punct" or tok.text != p:
            self._fail(tok, f"{p!r}")
        return tok

    def _ident(self, what: str) -> _Token:
        tok = self._next(what)
        if tok.kind != "ident":
            self._fail(tok, what)
        return tok

    def _name(self, what: str) -> _Token:
        tok = self._ident(what)
        if tok.text in RESERVED_WORDS:
            raise WorkspaceSyntaxError(tok.line, tok.col, f"{tok.text!r} is a reserved word")
        return tok

    def _at_punct(self, p: str) -> bool:
        tok = self._peek()
        return tok is not None and tok.kind == "punct" and tok.text == p

    def _at_word(self, w: str) -> bool:
        tok = self._peek()
        return tok is not None and tok.kind == "ident" and tok.text == w

    def _word(self, w: str) -> _Token:
        tok = self._next(f"{w!r}")
        if tok.kind != "ident" or tok.text != w:
            self._fail(tok, f"{w!r}")
        return tok

    def _declare(self, table: dict, tok: _Token, kind: str):
        if tok.text in table:
            raise WorkspaceSyntaxError(tok.line, tok.col, f"duplicate {kind} {tok.text!r}")

    # entry point

    def parse(self) -> Workspace:
        while self._peek() is not None:
            tok = self._next("a declaration")
            if tok.kind != "ident" or tok.text not in TOP_KEYWORDS:
                self._fail(tok, f"one of {', '.join(TOP_KEYWORDS)}")
            getattr(self, f"_parse_{tok.text}")()
        return self.ws

    # declarations

    def _parse_schema(self):
        name = self._name("schema name")
        self._declare(self.ws.schemas, name, "schema")
        self._punct("{")
        rels: dict[str, list[str]] = {}
        while not self._at_punct("}"):
            self._word("rel")
            rel = self._name("relation name")
            if rel.text in rels:
                raise WorkspaceSyntaxError(rel.line, rel.col, f"duplicate relation {rel.text!r}")
            self._punct("(")
            attrs = [self._name("attribute name").text]
            while self._at_punct(","):
                self._punct(",")
                attrs.append(self._name("attribute name").text)
            self._punct(")")
            self._punct(";")
            if len(set(attrs)) != len(attrs):
                raise WorkspaceSyntaxError(rel.line, rel.col, f"duplicate attribute in {rel.text!r}")
            rels[rel.text] = attrs
        self._punct("}")
        self.ws.schemas[name.text] = Schema.of(rels)

    def _parse_instance(self):
        name = self._name("instance name")
        self._declare(self.ws.instances, name, "instance")
        self._punct(":")
        schema_name = self._name("schema name")
        if schema_name.text not in self.ws.schemas:
            raise ResolutionError(f"instance {name.text!r} references unknown schema {schema_name.text!r}")
        schema = self.ws.schemas[schema_name.text]
        self._punct("{")
        data: dict[str, set[Row]] = {}
        while not self._at_punct("}"):
            rel = self._name("relation name")
            if not schema.defines(rel.text):
                raise ResolutionError(
                    f"instance {name.text!r} lists relation {rel.text!r} missing from schema {schema_name.text!r}"
                )
            if rel.text in data:
                raise WorkspaceSyntaxError(rel.line, rel.col, f"duplicate relation section {rel.text!r}")
            self._punct(":")
            attrs = sorted(schema.attrs(rel.text))
            rows: set[Row] = set()
            idx = 0
            while self._at_punct("("):
                values = self._parse_tuple()
                if len(values) != len(attrs):
                    raise SchemaConformance(
                        f"relation {rel.text}, tuple {idx}: expected {len(attrs)} values, got {len(values)}"
                    )
                rows.add(Row.of(dict(zip(attrs, values))))
                idx += 1
                if self._at_punct(","):
                    self._punct(",")
            self._punct(";")
            data[rel.text] = rows
        self._punct("}")
        self.ws.instances[name.text] = Instance.of(schema, data)
        self.ws.instance_schema[name.text] = schema_name.text

    def _parse_tuple(self) -> list[Value]:
        self._punct("(")
        tok = self._peek()
        if tok is not None and tok.kind == "punct" and tok.text == ")":
            raise WorkspaceSyntaxError(tok.line, tok.col, "tuples need at least one value")
        values = [self._parse_value()]
        while self._at_punct(","):
            self._punct(",")
            values.append(self._parse_value())
        self._punct(")")
        return values

    def _parse_value(self) -> Value:
        tok = self._next("a value")
        if tok.kind == "number":
            return const(tok.text)
        if tok.kind == "string":
            if "@" in tok.text:
                raise WorkspaceSyntaxError(tok.line, tok.col, "values containing @ are reserved")
            return const(tok.text)
        if tok.kind == "null":
            return null_marker(tok.text)
        if tok.kind == "ident":
            # Value positions never hold variables or keywords, so even
            # reserved words read as constants here.
            return const(tok.text)
        self._fail(tok, "a value")

    def _parse_tgd(self):
        name = self._name("dependency name")
        self._declare(self.ws.constraints, name, "constraint")
        self._punct(":")
        self.ws.constraints[name.text] = self._parse_tgd_body(name)

    def _parse_tgd_body(self, at: _Token) -> Tgd:
        body_atoms = self._parse_atom_list()
        self._punct("->")
        head_atoms = self._parse_atom_list()
        return self._build_tgd(body_atoms, head_atoms, at)

    def _build_tgd(self, body_atoms: list[Atom], head_atoms: list[Atom], at: _Token) -> Tgd:
        body_vars = frozenset(v for a in body_atoms for v in a.vars)
        head_vars = frozenset(v for a in head_atoms for v in a.vars)
        body = ConjunctiveQuery(tuple(body_atoms), tuple(sorted(body_vars)), frozenset())
        head = ConjunctiveQuery(
            tuple(head_atoms), tuple(sorted(head_vars & body_vars)), head_vars - body_vars
        )
        try:
            return Tgd(body, head)
        except DomainMismatch as e:
            raise WorkspaceSyntaxError(at.line, at.col, str(e))

    def _parse_egd(self):
        name = self._name("dependency name")
        self._declare(self.ws.constraints, name, "constraint")
        self._punct(":")
        self.ws.constraints[name.text] = self._parse_egd_body(name)

    def _parse_egd_body(self, at: _Token) -> Egd:
        body_atoms = self._parse_atom_list()
        self._punct("->")
        x = self._name("a variable")
        self._punct("=")
        y = self._name("a variable")
        body_vars = frozenset(v for a in body_atoms for v in a.vars)
        body = ConjunctiveQuery(tuple(body_atoms), tuple(sorted(body_vars)), frozenset())
        try:
            return Egd(body, (Var(x.text), Var(y.text)))
        except DomainMismatch as e:
            raise WorkspaceSyntaxError(at.line, at.col, str(e))

    def _parse_struct(self):
        name = self._name("constraint name")
        self._declare(self.ws.constraints, name, "constraint")
        self._punct(":")
        self.ws.constraints[name.text] = self._parse_struct_body()

    def _parse_struct_body(self) -> StructureConstraint:
        rel = self._name("relation name")
        if not self._at_punct("["):
            return StructureConstraint.of(rel.text)
        self._punct("[")
        if self._at_punct("*"):
            self._punct("*")
            self._punct("]")
            return StructureConstraint.of(rel.text)
        if self._at_punct("]"):
            self._punct("]")
            return StructureConstraint(rel.text, ())
        attrs = [self._name("attribute name").text]
        while self._at_punct(","):
            self._punct(",")
            attrs.append(self._name("attribute name").text)
        closing = self._punct("]")
        if len(set(attrs)) != len(attrs):
            raise WorkspaceSyntaxError(closing.line, closing.col, "duplicate attribute in structure constraint")
        return StructureConstraint.of(rel.text, attrs)

    # queries and atoms

    def _parse_atom_list(self) -> list[Atom]:
        if self._at_word("true"):
            self._word("true")
            return []
        atoms = [self._parse_atom()]
        while self._at_word("and"):
            self._word("and")
            atoms.append(self._parse_atom())
        return atoms

    def _parse_atom(self) -> Atom:
        if self._at_word("nonnull"):
            self._word("nonnull")
            self._punct("(")
            v = self._name("a variable")
            self._punct(")")
            return ConstantAtom(Var(v.text))
        rel = self._name("relation name")
        self._punct("(")
        bindings: dict[str, object] = {}
        while True:
            attr = self._name("attribute name")
            if attr.text in bindings:
                raise WorkspaceSyntaxError(attr.line, attr.col, f"duplicate attribute {attr.text!r}")
            self._punct(":")
            bindings[attr.text] = self._parse_term()
            if self._at_punct(","):
                self._punct(",")
                continue
            break
        self._punct(")")
        return NamedAtom.of(rel.text, bindings)

    def _parse_term(self):
        tok = self._peek()
        if tok is not None and tok.kind == "ident" and tok.text not in RESERVED_WORDS:
            self._next("a term")
            return Var(tok.text)
        return self._parse_value()

    def _parse_cq(self, free_names: list[_Token] | None, at: _Token) -> ConjunctiveQuery:
        existential: list[Var] = []
        if self._at_word("exists"):
            self._word("exists")
            existential.append(Var(self._name("a variable").text))
            while self._at_punct(","):
                self._punct(",")
                existential.append(Var(self._name("a variable").text))
            self._punct(".")
        atoms = self._parse_atom_list()
        occurring = frozenset(v for a in atoms for v in a.vars)
        if free_names is None:
            free = tuple(sorted(occurring - frozenset(existential)))
        else:
            free = tuple(Var(t.text) for t in free_names)
        try:
            return ConjunctiveQuery(tuple(atoms), free, occurring - frozenset(free))
        except DomainMismatch as e:
            raise WorkspaceSyntaxError(at.line, at.col, str(e))

    def _parse_query(self):
        name = self._name("query name")
        self._declare(self.ws.queries, name, "query")
        free_names: list[_Token] | None = None
        if self._at_punct("("):
            self._punct("(")
            free_names = [self._name("a variable")]
            while self._at_punct(","):
                self._punct(",")
                free_names.append(self._name("a variable"))
            self._punct(")")
        colon = self._punct(":")
        if self._at_word("total") or self._at_word("filtered"):
            if free_names is not None:
                raise WorkspaceSyntaxError(
                    colon.line, colon.col, "total and filtered queries take no variable list"
                )
            self.ws.queries[name.text] = self._parse_total_or_filtered()
            return
        self.ws.queries[name.text] = self._parse_cq(free_names, name)

    def _parse_total_or_filtered(self) -> Query:
        if self._at_word("filtered"):
            self._word("filtered")
            rel = self._name("relation name")
            self._word("where")
            return FilteredTotalQuery(rel.text, self._parse_condition())
        self._word("total")
        rels = [self._name("relation name").text]
        while self._at_punct(","):
            self._punct(",")
            rels.append(self._name("relation name").text)
        if len(rels) == 1:
            return TotalQuery(rels[0])
        return TotalConjQuery(tuple(rels))

    # boolean conditions over attribute names

    def _parse_condition(self) -> BooleanCondition:
        terms = [self._parse_condition_and()]
        while self._at_word("or"):
            self._word("or")
            terms.append(self._parse_condition_and())
        return terms[0] if len(terms) == 1 else Or(tuple(terms))

    def _parse_condition_and(self) -> BooleanCondition:
        terms = [self._parse_condition_unary()]
        while self._at_word("and"):
            self._word("and")
            terms.append(self._parse_condition_unary())
        return terms[0] if len(terms) == 1 else And(tuple(terms))

    def _parse_condition_unary(self) -> BooleanCondition:
        if self._at_word("not"):
            self._word("not")
            return Not(self._parse_condition_unary())
        if self._at_punct("("):
            self._punct("(")
            inner = self._parse_condition()
            self._punct(")")
            return inner
        lhs = self._name("attribute name")
        op_tok = self._next("'=' or '!='")
        if op_tok.kind != "punct" or op_tok.text not in ("=", "!="):
            self._fail(op_tok, "'=' or '!='")
        tok = self._peek()
        if tok is not None and tok.kind == "ident" and tok.text not in RESERVED_WORDS:
            self._next("an attribute")
            rhs: Union[str, Value] = tok.text
        else:
            rhs = self._parse_value()
        return Comparison(lhs.text, op_tok.text, rhs)

    # procedures

    def _parse_proc(self):
        name = self._name("procedure name")
        self._declare(self.ws.procedures, name, "procedure")
        if self._at_punct("="):
            self._punct("=")
            self._word("template")
            self.ws.procedures[name.text] = self._parse_template(name)
            return
        self._punct("{")
        sections: dict[str, list] = {}
        while not self._at_punct("}"):
            section = self._next("scope, pre, post, or safe")
            if section.kind != "ident" or section.text not in ("scope", "pre", "post", "safe"):
                self._fail(section, "scope, pre, post, or safe")
            if section.text in sections:
                raise WorkspaceSyntaxError(section.line, section.col, f"duplicate {section.text} section")
            sections[section.text] = self._parse_proc_section(section.text)
        self._punct("}")
        self.ws.procedures[name.text] = Procedure.of(
            scope=sections.get("scope", ()),
            pre=sections.get("pre", ()),
            post=sections.get("post", ()),
            safe=sections.get("safe", ()),
            name=name.text,
        )

    def _parse_proc_section(self, kind: str) -> list:
        self._punct("{")
        entries: list = []
        while not self._at_punct("}"):
            if kind == "scope":
                entries.append(self._parse_struct_body())
            elif kind == "safe":
                entries.append(self._parse_safe_entry())
            else:
                entries.append(self._parse_constraint_entry())
            self._punct(";")
        self._punct("}")
        return entries

    def _parse_constraint_entry(self) -> Constraint:
        tok = self._next("tgd, egd, or struct")
        if tok.kind != "ident" or tok.text not in ("tgd", "egd", "struct"):
            self._fail(tok, "tgd, egd, or struct")
        if tok.text == "tgd":
            return self._parse_tgd_body(tok)
        if tok.text == "egd":
            return self._parse_egd_body(tok)
        return self._parse_struct_body()

    def _parse_safe_entry(self) -> Query:
        if self._at_word("total") or self._at_word("filtered"):
            return self._parse_total_or_filtered()
        tok = self._word("cq")
        free_names: list[_Token] | None = None
        if self._at_punct("("):
            self._punct("(")
            free_names = [self._name("a variable")]
            while self._at_punct(","):
                self._punct(",")
                free_names.append(self._name("a variable"))
            self._punct(")")
        return self._parse_cq(free_names, tok)

    # templates

    def _parse_template(self, name: _Token) -> Procedure:
        kind = self._name("template kind")
        self._punct("(")
        groups: list[list[_Token]] = [[]]
        depth = 0
        while True:
            tok = self._peek()
            if tok is None:
                raise WorkspaceSyntaxError(name.line, name.col, "unterminated template call")
            if tok.kind == "punct" and tok.text == "(":
                depth += 1
            if tok.kind == "punct" and tok.text == ")":
                if depth == 0:
                    self._punct(")")
                    break
                depth -= 1
            if tok.kind == "punct" and tok.text == ";" and depth == 0:
                self._punct(";")
                groups.append([])
                continue
            groups[-1].append(self._next("template arguments"))
        try:
            params = self._template_params(kind, groups, name)
            return instantiate_template(kind.text, {**params, "name": name.text})
        except MalformedParams as e:
            raise WorkspaceSyntaxError(name.line, name.col, f"template {kind.text}: {e}")

    def _template_params(self, kind: _Token, groups: list[list[_Token]], name: _Token) -> dict:
        def idents(group: list[_Token], what: str) -> list[str]:
            out = []
            expect_comma = False
            for tok in group:
                if expect_comma:
                    if tok.kind != "punct" or tok.text != ",":
                        self._fail(tok, "','")
                    expect_comma = False
                    continue
                if tok.kind != "ident" or tok.text in RESERVED_WORDS:
                    self._fail(tok, what)
                out.append(tok.text)
                expect_comma = True
            if not out or not expect_comma:
                raise WorkspaceSyntaxError(name.line, name.col, f"expected {what} in template call")
            return out

        def single(group: list[_Token], what: str) -> str:
            items = idents(group, what)
            if len(items) != 1:
                raise WorkspaceSyntaxError(name.line, name.col, f"expected exactly one {what}")
            return items[0]

        def group_count(expected: str, *counts: int):
            if len(groups) not in counts:
                raise WorkspaceSyntaxError(
                    name.line, name.col,
                    f"template {kind.text} takes {expected}, got {len(groups)} argument groups",
                )

        if kind.text == "alter_table":
            group_count("(relation; attributes)", 2)
            return {"relation": single(groups[0], "a relation"), "attributes": idents(groups[1], "an attribute")}
        if kind.text == "data_exchange":
            group_count("(dependency names)", 1)
            deps = []
            for dep_name in idents(groups[0], "a dependency name"):
                if dep_name not in self.ws.constraints:
                    raise ResolutionError(f"template references unknown dependency {dep_name!r}")
                deps.append(self.ws.constraints[dep_name])
            return {"dependencies": deps}
        if kind.text == "attribute_copy":
            group_count("(target, source; keys; attribute)", 3)
            pair = idents(groups[0], "target and source relations")
            if len(pair) != 2:
                raise WorkspaceSyntaxError(name.line, name.col, "expected target and source relations")
            return {
                "target": pair[0],
                "source": pair[1],
                "keys": idents(groups[1], "a key attribute"),
                "attribute": single(groups[2], "an attribute"),
            }
        if kind.text == "null_scrub":
            group_count("(relation; attribute) or (relation; attribute; kept attributes)", 2, 3)
            params = {
                "relation": single(groups[0], "a relation"),
                "attribute": single(groups[1], "an attribute"),
            }
            if len(groups) == 3:
                params["keep"] = idents(groups[2], "a kept attribute")
            return params
        if kind.text == "sql_insert":
            group_count("(relation; columns; values or query reference)", 3)
            params = {
                "relation": single(groups[0], "a relation"),
                "columns": idents(groups[1], "a column"),
            }
            last = groups[2]
            if last and last[0].kind == "ident" and last[0].text == "query":
                if len(last) != 2 or last[1].kind != "ident":
                    raise WorkspaceSyntaxError(name.line, name.col, "expected query <name>")
                qname = last[1].text
                if qname not in self.ws.queries:
                    raise ResolutionError(f"template references unknown query {qname!r}")
                q = self.ws.queries[qname]
                if not isinstance(q, ConjunctiveQuery):
                    raise WorkspaceSyntaxError(
                        name.line, name.col, f"query {qname!r} must be a conjunctive query"
                    )
                params["query"] = q
                return params
            sub = _Parser("")
            sub.tokens = last
            values = [sub._parse_value()]
            while sub._at_punct(","):
                sub._punct(",")
                values.append(sub._parse_value())
            if sub._peek() is not None:
                self._fail(sub._peek(), "','")
            params["values"] = values
            return params
        if kind.text == "sql_delete":
            group_count("(relation; condition)", 2)
            sub = _Parser("")
            sub.tokens = groups[1]
            condition = sub._parse_condition()
            if sub._peek() is not None:
                self._fail(sub._peek(), "end of condition")
            return {"relation": single(groups[0], "a relation"), "condition": condition}
        raise WorkspaceSyntaxError(kind.line, kind.col, f"unknown template kind {kind.text!r}")

    # sequences

    def _parse_seq(self):
        name = self._name("sequence name")
        self._declare(self.ws.sequences, name, "sequence")
        self._punct("=")
        names = [self._name("a procedure name")]
        while self._at_punct(","):
            self._punct(",")
            names.append(self._name("a procedure name"))
        for tok in names:
            if tok.text not in self.ws.procedures:
                raise ResolutionError(f"sequence {name.text!r} references unknown procedure {tok.text!r}")
        self.ws.sequences[name.text] = tuple(t.text for t in names)


def parse_workspace(text: str) -> Workspace:
    """Parse workspace text, resolving every cross-reference."""
    return _Parser(text).parse()


# --- serialization to text ----------------------------------------------------


def _guarded_value(v: Value) -> str:
    # Bare identifier-shaped constants would reparse as variables (in
    # atoms) or attribute names (in conditions), so force quotes there.
    if v.is_constant and v.token.isidentifier():
        return f'"{v.token}"'
    return v.render()


def _render_term(t) -> str:
    if isinstance(t, Var):
        return t.name
    return _guarded_value(t)


def _render_atom(a: Atom) -> str:
    if isinstance(a, ConstantAtom):
        return f"nonnull({a.variable.name})"
    inner = ", ".join(f"{attr}: {_render_term(t)}" for attr, t in a.bindings)
    return f"{a.relation}({inner})"


def _render_atoms(atoms: Sequence[Atom]) -> str:
    if not atoms:
        return "true"
    return " and ".join(_render_atom(a) for a in atoms)


def _render_cq(q: ConjunctiveQuery) -> str:
    prefix = ""
    if q.existential:
        names = ", ".join(v.name for v in sorted(q.existential))
        prefix = f"exists {names} . "
    return prefix + _render_atoms(q.atoms)


def _render_struct(c: StructureConstraint) -> str:
    if c.attributes is None:
        return f"{c.relation}[*]"
    if not c.attributes:
        return f"{c.relation}[]"
    return f"{c.relation}[{', '.join(c.attributes)}]"


def _render_constraint(c: Constraint) -> str:
    if isinstance(c, Tgd):
        return f"tgd {_render_atoms(c.body.atoms)} -> {_render_atoms(c.head.atoms)}"
    if isinstance(c, Egd):
        x, y = c.equated
        return f"egd {_render_atoms(c.body.atoms)} -> {x.name} = {y.name}"
    return f"struct {_render_struct(c)}"


def _render_condition(c: BooleanCondition, *, parenthesize: bool = False) -> str:
    if isinstance(c, Comparison):
        rhs = c.rhs if isinstance(c.rhs, str) else _guarded_value(c.rhs)
        return f"{c.lhs} {c.op} {rhs}"
    if isinstance(c, Not):
        return f"not ({_render_condition(c.item)})"
    joiner = " and " if isinstance(c, And) else " or "
    body = joiner.join(_render_condition(item, parenthesize=True) for item in c.items)
    return f"({body})" if parenthesize else body


def _render_query(q: Query) -> str:
    if isinstance(q, TotalQuery):
        return f"total {q.relation}"
    if isinstance(q, TotalConjQuery):
        return f"total {', '.join(q.relations)}"
    if isinstance(q, FilteredTotalQuery):
        return f"filtered {q.relation} where {_render_condition(q.condition)}"
    free = f"({', '.join(v.name for v in q.free)}) " if q.free else ""
    return f"cq {free}{_render_cq(q)}"


def serialize_workspace(ws: Workspace) -> str:
    """Workspace back to text; parse(serialize(ws)) reproduces ws.

    Attribute lists and dependency variables come out in canonical sorted
    order, so the text is normalized rather than byte-identical to any
    original source file.  One structural normalization applies: a
    totality conjunction over a single relation shares its text form with
    the plain totality check and reparses as the plain form.  The JSON
    mirror keeps the two apart.
    """
    lines: list[str] = []
    for name, schema in ws.schemas.items():
        lines.append(f"schema {name} {{")
        for rel, attrs in schema.rels:
            lines.append(f"  rel {rel}({', '.join(sorted(attrs))});")
        lines.append("}")
        lines.append("")
    for name, instance in ws.instances.items():
        lines.append(f"instance {name} : {ws.instance_schema[name]} {{")
        for rel in instance.schema.names:
            rows = sorted(instance.rows(rel))
            rendered = ", ".join(
                "(" + ", ".join(v.render() for v in row.values_in_order()) + ")"
                for row in rows
            )
            lines.append(f"  {rel}: {rendered};")
        lines.append("}")
        lines.append("")
    for name, c in ws.constraints.items():
        kind = {Tgd: "tgd", Egd: "egd", StructureConstraint: "struct"}[type(c)]
        body = _render_constraint(c)
        body = body[len(kind) + 1 :]
        lines.append(f"{kind} {name} : {body}")
    if ws.constraints:
        lines.append("")
    for name, q in ws.queries.items():
        if isinstance(q, ConjunctiveQuery):
            free = f"({', '.join(v.name for v in q.free)})" if q.free else ""
            lines.append(f"query {name}{free} : {_render_cq(q)}")
        else:
            lines.append(f"query {name} : {_render_query(q)}")
    if ws.queries:
        lines.append("")
    for name, p in ws.procedures.items():
        lines.append(f"proc {name} {{")
        if p.scope:
            lines.append("  scope { " + " ".join(f"{_render_struct(c)};" for c in p.scope) + " }")
        for kind, items in (("pre", p.pre), ("post", p.post)):
            if items:
                lines.append(
                    f"  {kind} {{ " + " ".join(f"{_render_constraint(c)};" for c in items) + " }"
                )
        if p.safe:
            lines.append("  safe { " + " ".join(f"{_render_query(q)};" for q in p.safe) + " }")
        lines.append("}")
        lines.append("")
    for name, steps in ws.sequences.items():
        lines.append(f"seq {name} = {', '.join(steps)}")
    return "\n".join(lines).strip() + "\n"


# --- JSON mirror ---------------------------------------------------------------


def _value_to_json(v: Value) -> dict:
    return {"const": v.token} if v.is_constant else {"null": v.token}


def _value_from_json(obj) -> Value:
    if isinstance(obj, Mapping) and set(obj) == {"const"}:
        return const(obj["const"])
    if isinstance(obj, Mapping) and set(obj) == {"null"}:
        return null_marker(obj["null"])
    raise WorkspaceSyntaxError(1, 1, f"json: bad value {obj!r}")


def _term_to_json(t) -> dict:
    if isinstance(t, Var):
        return {"var": t.name}
    return _value_to_json(t)


def _term_from_json(obj):
    if isinstance(obj, Mapping) and set(obj) == {"var"}:
        return Var(obj["var"])
    return _value_from_json(obj)


def _atom_to_json(a: Atom) -> dict:
    if isinstance(a, ConstantAtom):
        return {"nonnull": a.variable.name}
    return {
        "relation": a.relation,
        "bindings": {attr: _term_to_json(t) for attr, t in a.bindings},
    }


def _atom_from_json(obj) -> Atom:
    if "nonnull" in obj:
        return ConstantAtom(Var(obj["nonnull"]))
    return NamedAtom.of(
        obj["relation"], {attr: _term_from_json(t) for attr, t in obj["bindings"].items()}
    )


def _cq_to_json(q: ConjunctiveQuery) -> dict:
    return {
        "atoms": [_atom_to_json(a) for a in q.atoms],
        "free": [v.name for v in q.free],
        "existential": sorted(v.name for v in q.existential),
    }


def _cq_from_json(obj) -> ConjunctiveQuery:
    return ConjunctiveQuery(
        tuple(_atom_from_json(a) for a in obj["atoms"]),
        tuple(Var(n) for n in obj["free"]),
        frozenset(Var(n) for n in obj["existential"]),
    )


def _condition_to_json(c: BooleanCondition) -> dict:
    if isinstance(c, Comparison):
        rhs = {"attr": c.rhs} if isinstance(c.rhs, str) else _value_to_json(c.rhs)
        return {"kind": "cmp", "lhs": c.lhs, "op": c.op, "rhs": rhs}
    if isinstance(c, Not):
        return {"kind": "not", "item": _condition_to_json(c.item)}
    kind = "and" if isinstance(c, And) else "or"
    return {"kind": kind, "items": [_condition_to_json(item) for item in c.items]}


def _condition_from_json(obj) -> BooleanCondition:
    kind = obj["kind"]
    if kind == "cmp":
        rhs = obj["rhs"]
        rhs_val = rhs["attr"] if isinstance(rhs, Mapping) and set(rhs) == {"attr"} else _value_from_json(rhs)
        return Comparison(obj["lhs"], obj["op"], rhs_val)
    if kind == "not":
        return Not(_condition_from_json(obj["item"]))
    items = tuple(_condition_from_json(item) for item in obj["items"])
    return And(items) if kind == "and" else Or(items)


def _constraint_to_json(c: Constraint) -> dict:
    if isinstance(c, Tgd):
        return {"kind": "tgd", "body": _cq_to_json(c.body), "head": _cq_to_json(c.head)}
    if isinstance(c, Egd):
        return {
            "kind": "egd",
            "body": _cq_to_json(c.body),
            "equated": [c.equated[0].name, c.equated[1].name],
        }
    return {
        "kind": "struct",
        "relation": c.relation,
        "attributes": None if c.attributes is None else list(c.attributes),
    }


def _constraint_from_json(obj) -> Constraint:
    kind = obj["kind"]
    if kind == "tgd":
        return Tgd(_cq_from_json(obj["body"]), _cq_from_json(obj["head"]))
    if kind == "egd":
        x, y = obj["equated"]
        return Egd(_cq_from_json(obj["body"]), (Var(x), Var(y)))
    if kind == "struct":
        attrs = obj["attributes"]
        return StructureConstraint(obj["relation"], None if attrs is None else tuple(attrs))
    raise WorkspaceSyntaxError(1, 1, f"json: unknown constraint kind {kind!r}")


def _query_to_json(q: Query) -> dict:
    if isinstance(q, ConjunctiveQuery):
        return {"kind": "cq", **_cq_to_json(q)}
    if isinstance(q, TotalQuery):
        return {"kind": "total", "relation": q.relation}
    if isinstance(q, TotalConjQuery):
        return {"kind": "total_conj", "relations": list(q.relations)}
    return {
        "kind": "filtered",
        "relation": q.relation,
        "condition": _condition_to_json(q.condition),
    }


def _query_from_json(obj) -> Query:
    kind = obj["kind"]
    if kind == "cq":
        return _cq_from_json(obj)
    if kind == "total":
        return TotalQuery(obj["relation"])
    if kind == "total_conj":
        return TotalConjQuery(tuple(obj["relations"]))
    if kind == "filtered":
        return FilteredTotalQuery(obj["relation"], _condition_from_json(obj["condition"]))
    raise WorkspaceSyntaxError(1, 1, f"json: unknown query kind {kind!r}")


def workspace_to_json(ws: Workspace) -> dict:
    """One-to-one JSON image of the workspace."""
    return {
        "schemas": {
            name: {rel: sorted(attrs) for rel, attrs in schema.rels}
            for name, schema in ws.schemas.items()
        },
        "instances": {
            name: {
                "schema": ws.instance_schema[name],
                "rows": {
                    rel: [
                        [_value_to_json(v) for v in row.values_in_order()]
                        for row in sorted(instance.rows(rel))
                    ]
                    for rel in instance.schema.names
                },
            }
            for name, instance in ws.instances.items()
        },
        "constraints": {name: _constraint_to_json(c) for name, c in ws.constraints.items()},
        "queries": {name: _query_to_json(q) for name, q in ws.queries.items()},
        "procedures": {
            name: {
                "scope": [_constraint_to_json(c) for c in p.scope],
                "pre": [_constraint_to_json(c) for c in p.pre],
                "post": [_constraint_to_json(c) for c in p.post],
                "safe": [_query_to_json(q) for q in p.safe],
            }
            for name, p in ws.procedures.items()
        },
        "sequences": {name: list(steps) for name, steps in ws.sequences.items()},
    }


def workspace_from_json(obj: Mapping) -> Workspace:
    """Rebuild a workspace from its JSON image, revalidating references."""
    ws = Workspace()
    for name, rels in obj.get("schemas", {}).items():
        ws.schemas[name] = Schema.of(rels)
    for name, spec in obj.get("instances", {}).items():
        schema_name = spec["schema"]
        if schema_name not in ws.schemas:
            raise ResolutionError(f"instance {name!r} references unknown schema {schema_name!r}")
        schema = ws.schemas[schema_name]
        data: dict[str, set[Row]] = {}
        for rel, rows in spec["rows"].items():
            if not schema.defines(rel):
                raise ResolutionError(
                    f"instance {name!r} lists relation {rel!r} missing from schema {schema_name!r}"
                )
            attrs = sorted(schema.attrs(rel))
            out = set()
            for idx, row in enumerate(rows):
                if len(row) != len(attrs):
                    raise SchemaConformance(
                        f"relation {rel}, tuple {idx}: expected {len(attrs)} values, got {len(row)}"
                    )
                out.add(Row.of(dict(zip(attrs, (_value_from_json(v) for v in row)))))
            data[rel] = out
        ws.instances[name] = Instance.of(schema, data)
        ws.instance_schema[name] = schema_name
    for name, c in obj.get("constraints", {}).items():
        ws.constraints[name] = _constraint_from_json(c)
    for name, q in obj.get("queries", {}).items():
        ws.queries[name] = _query_from_json(q)
    for name, spec in obj.get("procedures", {}).items():
        scope = [_constraint_from_json(c) for c in spec.get("scope", [])]
        if not all(isinstance(c, StructureConstraint) for c in scope):
            raise WorkspaceSyntaxError(1, 1, f"json: procedure {name!r} scope must be structural")
        ws.procedures[name] = Procedure.of(
            scope=scope,
            pre=[_constraint_from_json(c) for c in spec.get("pre", [])],
            post=[_constraint_from_json(c) for c in spec.get("post", [])],
            safe=[_query_from_json(q) for q in spec.get("safe", [])],
            name=name,
        )
    for name, steps in obj.get("sequences", {}).items():
        for step in steps:
            if step not in ws.procedures:
                raise ResolutionError(f"sequence {name!r} references unknown procedure {step!r}")
        ws.sequences[name] = tuple(steps)
    return ws


def load_workspace(path: str) -> Workspace:
    """Read a workspace file; .dq.json is JSON, anything else is the DSL."""
    with open(path, encoding="utf-8") as f:
        text = f.read()
    if path.endswith(".json"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise WorkspaceSyntaxError(e.lineno, e.colno, f"json: {e.msg}")
        return workspace_from_json(obj)
    return parse_workspace(text)


__all__ = [
    "Workspace",
    "load_workspace",
    "parse_workspace",
    "serialize_workspace",
    "workspace_from_json",
    "workspace_to_json",
]
