"""Recursive-descent parser producing raw declarations.

Names inside annotations stay textual here; the resolver binds them against
the merged declaration set. Statements parse directly into the shared
syntactic statement forms. The parser is total per file: the first error
aborts the file with a positioned SyntaxIssue.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional, Union

from .lexer import LexError, Token, tokenize
from .model import (
    AssignStmt, BlockStmt, CallExpr, Expr, ExprStmt, FieldAccessExpr,
    LiteralExpr, NameExpr, NewExpr, Pos, ProtectStmt, Query, QueryStmt,
    ReturnStmt, Stmt, SuperExpr, ThisExpr, UniquenessKind, VarDeclStmt,
)

UNIQUENESS_KEYWORDS = {
    "maintain": UniquenessKind.MAINTAIN,
    "maintainr": UniquenessKind.MAINTAIN_RETAINS,
    "unique": UniquenessKind.UNIQUE,
    "uniquer": UniquenessKind.UNIQUE_RETAINS,
}


class SyntaxIssue(Exception):
    def __init__(self, message: str, pos: Pos):
        super().__init__(message)
        self.message = message
        self.pos = pos


# -- raw declaration forms ----------------------------------------------------

@dataclass
class RawCondition:
    kind: str  # "invariant-label" | "invariant-state" | "add" | "transition"
    name: str  # label or protocol reference text (possibly qualified)
    source: str = ""
    target: str = ""
    residence: list[list[str]] = dc_field(default_factory=list)
    pos: Pos = Pos()


@dataclass
class RawConjunct:
    subject: str
    conditions: list[RawCondition]
    pos: Pos = Pos()


@dataclass
class RawTarget:
    root: str  # "this" | "any" | "name"
    name: str  # type name for any, variable/field name otherwise
    path: list[str] = dc_field(default_factory=list)
    pos: Pos = Pos()


@dataclass
class RawArg:
    uniqueness: UniquenessKind
    type: str
    name: str


@dataclass
class RawMethod:
    name: str
    return_type: Optional[str]  # None for constructors
    args: list[RawArg]
    is_abstract: bool = False
    is_static: bool = False
    return_uniqueness: UniquenessKind = UniquenessKind.NORMAL
    result_labels: list[str] = dc_field(default_factory=list)
    local_mutations: list[list[str]] = dc_field(default_factory=list)
    mutates: list[RawTarget] = dc_field(default_factory=list)
    conjuncts: list[RawConjunct] = dc_field(default_factory=list)
    optional_groups: list[list[RawConjunct]] = dc_field(default_factory=list)
    body: Optional[list[Stmt]] = None
    pos: Pos = Pos()


@dataclass
class RawField:
    name: str
    type: str
    uniqueness: UniquenessKind = UniquenessKind.NORMAL
    managed: bool = False
    managed_resource: Optional[list[str]] = None
    is_static: bool = False
    is_final: bool = False
    labels: list[str] = dc_field(default_factory=list)
    initializer: Optional[Expr] = None
    pos: Pos = Pos()


@dataclass
class RawLabels:
    carriers: list[str]
    names: list[str]
    pos: Pos = Pos()


@dataclass
class RawProtocols:
    carriers: list[str]
    names: list[str]
    pos: Pos = Pos()


@dataclass
class RawResource:
    name: str
    children: list["RawResource"] = dc_field(default_factory=list)


@dataclass
class RawExternal:
    target_type: str
    method: RawMethod
    is_constructor: bool = False
    pos: Pos = Pos()


@dataclass
class RawClass:
    name: str
    superclass: Optional[str] = None
    interfaces: list[str] = dc_field(default_factory=list)
    is_interface: bool = False
    is_abstract: bool = False
    precedence: int = 0
    fields: list[RawField] = dc_field(default_factory=list)
    methods: list[RawMethod] = dc_field(default_factory=list)
    labels: list[RawLabels] = dc_field(default_factory=list)
    protocols: list[RawProtocols] = dc_field(default_factory=list)
    resources: list[RawResource] = dc_field(default_factory=list)
    externals: list[RawExternal] = dc_field(default_factory=list)
    pos: Pos = Pos()


class Parser:
    def __init__(self, text: str):
        try:
            self.tokens = tokenize(text)
        except LexError as e:
            raise SyntaxIssue(e.message, e.pos) from e
        self.i = 0

    # -- token plumbing ----------------------------------------------------

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.i + ahead, len(self.tokens) - 1)]

    def next(self) -> Token:
        t = self.peek()
        if t.kind != "eof":
            self.i += 1
        return t

    def at(self, kind: str, text: Optional[str] = None) -> bool:
        t = self.peek()
        return t.kind == kind and (text is None or t.text == text)

    def at_keyword(self, word: str) -> bool:
        return self.at("keyword", word)

    def expect(self, kind: str, text: Optional[str] = None) -> Token:
        t = self.peek()
        if t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            got = t.text or t.kind
            raise SyntaxIssue(f"expected '{want}', found '{got}'", t.pos)
        return self.next()

    def expect_ident(self) -> Token:
        t = self.peek()
        if t.kind != "ident":
            raise SyntaxIssue(f"expected identifier, found '{t.text or t.kind}'", t.pos)
        return self.next()

    def accept(self, kind: str, text: Optional[str] = None) -> Optional[Token]:
        if self.at(kind, text):
            return self.next()
        return None

    # -- entry ---------------------------------------------------------------

    def parse_program(self) -> list[RawClass]:
        decls = []
        while not self.at("eof"):
            decls.append(self.parse_type_decl())
        return decls

    def parse_type_decl(self) -> RawClass:
        pos = self.peek().pos
        is_abstract = self.accept("keyword", "abstract") is not None
        if self.accept("keyword", "interface"):
            is_interface = True
        else:
            self.expect("keyword", "class")
            is_interface = False
        name = self.expect_ident().text
        superclass = None
        interfaces: list[str] = []
        if self.accept("keyword", "extends"):
            if is_interface:
                interfaces.append(self.expect_ident().text)
                while self.accept(","):
                    interfaces.append(self.expect_ident().text)
            else:
                superclass = self.expect_ident().text
        if self.accept("keyword", "implements"):
            interfaces.append(self.expect_ident().text)
            while self.accept(","):
                interfaces.append(self.expect_ident().text)
        decl = RawClass(name, superclass, interfaces, is_interface, is_abstract, pos=pos)
        self.expect("{")
        while not self.accept("}"):
            self.parse_member(decl)
        return decl

    # -- members ---------------------------------------------------------------

    def parse_member(self, decl: RawClass) -> None:
        t = self.peek()
        if self.at_keyword("labels"):
            decl.labels.append(self.parse_labels())
            return
        if self.at_keyword("protocols"):
            decl.protocols.append(self.parse_protocols())
            return
        if self.at_keyword("resources"):
            decl.resources.extend(self.parse_resources())
            return
        if self.at_keyword("external"):
            decl.externals.append(self.parse_external())
            return
        if self.at_keyword("precedence"):
            self.next()
            decl.precedence = int(self.expect("int").text)
            self.expect(";")
            return
        if t.kind == "keyword" and t.text not in (
            "static", "final", "abstract", "managed", *UNIQUENESS_KEYWORDS,
        ):
            raise SyntaxIssue(f"unknown annotation keyword '{t.text}'", t.pos)
        self.parse_field_or_method(decl)
        return

    def parse_labels(self) -> RawLabels:
        pos = self.expect("keyword", "labels").pos
        carriers = self.parse_carrier_list()
        names = [self.expect_ident().text]
        while self.accept(","):
            names.append(self.expect_ident().text)
        self.expect(";")
        return RawLabels(carriers, names, pos)

    def parse_protocols(self) -> RawProtocols:
        pos = self.expect("keyword", "protocols").pos
        carriers = self.parse_carrier_list()
        names = [self.expect_ident().text]
        while self.accept(","):
            names.append(self.expect_ident().text)
        self.expect(";")
        return RawProtocols(carriers, names, pos)

    def parse_carrier_list(self) -> list[str]:
        carriers: list[str] = []
        if self.accept("("):
            carriers.append(self.parse_type_name())
            while self.accept(","):
                carriers.append(self.parse_type_name())
            self.expect(")")
        return carriers

    def parse_type_name(self) -> str:
        t = self.peek()
        if t.kind == "ident":
            return self.next().text
        raise SyntaxIssue(f"expected type name, found '{t.text or t.kind}'", t.pos)

    def parse_resources(self) -> list[RawResource]:
        self.expect("keyword", "resources")
        out = [self.parse_resource_def()]
        while self.accept(","):
            out.append(self.parse_resource_def())
        self.expect(";")
        return out

    def parse_resource_def(self) -> RawResource:
        name = self.expect_ident().text
        node = RawResource(name)
        if self.accept("{"):
            node.children.append(self.parse_resource_def())
            while self.accept(","):
                node.children.append(self.parse_resource_def())
            self.expect("}")
        return node

    def parse_external(self) -> RawExternal:
        pos = self.expect("keyword", "external").pos
        target = self.expect_ident().text
        if self.accept("."):
            name = self.expect_ident().text
            is_ctor = False
        else:
            name = target
            is_ctor = True
        method = RawMethod(name, None if is_ctor else "", [], pos=pos)
        self.expect("(")
        method.args = self.parse_params()
        self.expect(")")
        self.parse_method_annotations(method)
        self.expect(";")
        return RawExternal(target, method, is_ctor, pos)

    def parse_params(self) -> list[RawArg]:
        args: list[RawArg] = []
        if self.at(")"):
            return args
        while True:
            kind = UniquenessKind.NORMAL
            t = self.peek()
            if t.kind == "keyword" and t.text in UNIQUENESS_KEYWORDS:
                kind = UNIQUENESS_KEYWORDS[self.next().text]
            ty = self.parse_type_name()
            name = self.expect_ident().text
            args.append(RawArg(kind, ty, name))
            if not self.accept(","):
                break
        return args

    def parse_field_or_method(self, decl: RawClass) -> None:
        pos = self.peek().pos
        is_static = is_final = is_abstract = False
        managed = False
        managed_resource: Optional[list[str]] = None
        kind = UniquenessKind.NORMAL
        while True:
            t = self.peek()
            if t.kind != "keyword":
                break
            if t.text == "static":
                self.next()
                is_static = True
            elif t.text == "final":
                self.next()
                is_final = True
            elif t.text == "abstract":
                self.next()
                is_abstract = True
            elif t.text == "managed":
                self.next()
                managed = True
                if self.accept("("):
                    managed_resource = self.parse_dotted_path()
                    self.expect(")")
            elif t.text in UNIQUENESS_KEYWORDS:
                self.next()
                kind = UNIQUENESS_KEYWORDS[t.text]
            else:
                break
        result_labels: list[str] = []
        if self.accept("+"):
            result_labels.append(self.parse_dotted_name())
            while self.accept(","):
                result_labels.append(self.parse_dotted_name())
        first = self.parse_type_name()
        if self.at("(") and first == decl.name and not result_labels:
            # Constructor: the bare class name followed by a parameter list.
            method = RawMethod(first, None, [], is_abstract, is_static,
                               kind, result_labels, pos=pos)
            self.parse_method_tail(method)
            decl.methods.append(method)
            return
        name = self.expect_ident().text
        if self.at("("):
            method = RawMethod(name, first, [], is_abstract, is_static,
                               kind, result_labels, pos=pos)
            self.parse_method_tail(method)
            decl.methods.append(method)
            return
        fld = RawField(name, first, kind, managed, managed_resource,
                       is_static, is_final, pos=pos)
        if self.accept("+"):
            fld.labels.append(self.parse_dotted_name())
            while self.accept(","):
                fld.labels.append(self.parse_dotted_name())
        if self.accept("="):
            fld.initializer = self.parse_expr()
        self.expect(";")
        decl.fields.append(fld)

    def parse_method_tail(self, method: RawMethod) -> None:
        self.expect("(")
        method.args = self.parse_params()
        self.expect(")")
        self.parse_method_annotations(method)
        if self.accept(";"):
            method.body = None
            return
        self.expect("{")
        method.body = self.parse_statements()

    # -- annotations -------------------------------------------------------------

    def parse_method_annotations(self, method: RawMethod) -> None:
        while True:
            t = self.peek()
            if t.kind in ("{", ";", "eof"):
                return
            if t.kind == ",":
                self.next()
                continue
            if t.kind == "[":
                self.next()
                self.expect("!")
                method.local_mutations.append(self.parse_dotted_path())
                while self.accept(","):
                    self.accept("!")  # a repeated bang is tolerated
                    method.local_mutations.append(self.parse_dotted_path())
                self.expect("]")
                continue
            if self.at_keyword("mutates"):
                self.next()
                method.mutates.append(self.parse_target())
                while self.accept(","):
                    method.mutates.append(self.parse_target())
                self.expect(":")
                continue
            if t.kind == "(":
                self.next()
                group = [self.parse_conjunct()]
                while self.accept(","):
                    group.append(self.parse_conjunct())
                self.expect(")")
                self.expect("?")
                method.optional_groups.append(group)
                continue
            if self._at_conjunct_start():
                method.conjuncts.append(self.parse_conjunct())
                continue
            raise SyntaxIssue(
                f"unknown annotation keyword '{t.text or t.kind}'", t.pos)

    def _at_conjunct_start(self) -> bool:
        t = self.peek()
        if t.kind == "ident" or (t.kind == "keyword" and t.text in ("this", "result")):
            return self.peek(1).kind == ":"
        return False

    def parse_conjunct(self) -> RawConjunct:
        t = self.peek()
        if t.kind == "keyword" and t.text in ("this", "result"):
            subject = self.next().text
        else:
            subject = self.expect_ident().text
        pos = t.pos
        self.expect(":")
        conditions = [self.parse_condition()]
        while self.at(","):
            # A comma either continues this conjunct or starts the next
            # clause; a following `name:` or `(` belongs to the caller.
            nxt = self.peek(1)
            if nxt.kind == "(":
                break
            if (nxt.kind == "ident" or (nxt.kind == "keyword" and nxt.text in ("this", "result"))) \
                    and self.peek(2).kind == ":":
                break
            self.next()
            conditions.append(self.parse_condition())
        return RawConjunct(subject, conditions, pos)

    def parse_condition(self) -> RawCondition:
        t = self.peek()
        if self.accept("+"):
            name = self.parse_dotted_name()
            cond = RawCondition("add", name, pos=t.pos)
            if self.accept("@"):
                cond.source = self.parse_state_name()
            cond.residence = self.parse_residence()
            return cond
        name = self.parse_dotted_name()
        if self.accept("@"):
            source = self.parse_state_name()
            if self.accept("->"):
                target = self.parse_state_name()
                cond = RawCondition("transition", name, source, target, pos=t.pos)
                cond.residence = self.parse_residence()
                return cond
            return RawCondition("invariant-state", name, source, pos=t.pos)
        return RawCondition("invariant-label", name, pos=t.pos)

    def parse_state_name(self) -> str:
        t = self.peek()
        if t.kind in ("ident", "int"):
            return self.next().text
        raise SyntaxIssue(f"expected protocol state, found '{t.text or t.kind}'", t.pos)

    def parse_residence(self) -> list[list[str]]:
        if not (self.at("[") and self.peek(1).kind == "*"):
            return []
        self.next()
        self.next()
        paths = [self.parse_dotted_path()]
        while self.accept(","):
            paths.append(self.parse_dotted_path())
        self.expect("]")
        return paths

    def parse_target(self) -> RawTarget:
        t = self.peek()
        if self.accept("keyword", "this"):
            self.expect(".")
            return RawTarget("this", "", self.parse_dotted_path(), t.pos)
        if self.accept("keyword", "any"):
            self.expect("(")
            ty = self.parse_type_name()
            self.expect(")")
            self.expect(".")
            return RawTarget("any", ty, self.parse_dotted_path(), t.pos)
        name = self.expect_ident().text
        path: list[str] = []
        if self.accept("."):
            path = self.parse_dotted_path()
        return RawTarget("name", name, path, t.pos)

    def parse_dotted_path(self) -> list[str]:
        parts = [self.expect_ident().text]
        while self.accept("."):
            parts.append(self.expect_ident().text)
        return parts

    def parse_dotted_name(self) -> str:
        return ".".join(self.parse_dotted_path())

    # -- statements -----------------------------------------------------------

    def parse_statements(self) -> list[Stmt]:
        out: list[Stmt] = []
        while not self.accept("}"):
            out.append(self.parse_statement())
        return out

    def parse_statement(self) -> Stmt:
        t = self.peek()
        if t.kind == "{":
            self.next()
            return BlockStmt(self.parse_statements(), pos=t.pos)
        if self.at_keyword("protect"):
            self.next()
            var = self.expect_ident().text
            self.expect(".")
            path = tuple(self.parse_dotted_path())
            self.expect("{")
            body = self.parse_statements()
            return ProtectStmt(var, path, body, pos=t.pos)
        if self.at_keyword("return"):
            self.next()
            value = None if self.at(";") else self.parse_expr()
            self.expect(";")
            return ReturnStmt(value, pos=t.pos)
        if t.kind == "#":
            query = self.parse_query()
            span = self.parse_optional_span()
            return QueryStmt(query, span, pos=t.pos)
        # Local declaration: two identifiers in a row.
        if t.kind == "ident" and self.peek(1).kind == "ident":
            ty = self.next().text
            name = self.expect_ident().text
            init: Union[Expr, Query, None] = None
            span = None
            if self.accept("="):
                if self.at("#"):
                    init = self.parse_query()
                    span = self.parse_optional_span()
                    return VarDeclStmt(ty, name, init, span, pos=t.pos)
                init = self.parse_expr()
            self.expect(";")
            return VarDeclStmt(ty, name, init, None, pos=t.pos)
        expr = self.parse_expr()
        if self.accept("="):
            if not isinstance(expr, (NameExpr, FieldAccessExpr)):
                raise SyntaxIssue("assignment target must be a variable or field", t.pos)
            if self.at("#"):
                value: Union[Expr, Query] = self.parse_query()
            else:
                value = self.parse_expr()
            self.expect(";")
            return AssignStmt(expr, value, pos=t.pos)
        if not isinstance(expr, (CallExpr, NewExpr, FieldAccessExpr)):
            raise SyntaxIssue("expression statement must be a call or field access", t.pos)
        self.expect(";")
        return ExprStmt(expr, pos=t.pos)

    def parse_optional_span(self) -> Optional[list[Stmt]]:
        if self.accept(";"):
            return None
        if self.accept("{"):
            return self.parse_statements()
        self.expect(";")
        return None

    def parse_query(self) -> Query:
        pos = self.expect("#").pos
        kw = self.expect_ident().text
        if kw not in ("produce", "transform"):
            raise SyntaxIssue(f"unknown query kind '#{kw}'", pos)
        self.expect("(")
        produce_type = None
        target_var = None
        if kw == "produce":
            produce_type = self.parse_type_name()
        else:
            target_var = self.expect_ident().text
        self.expect(",")
        goal = self.parse_goal_text()
        self.expect(")")
        with_names: tuple[str, ...] = ()
        if self.accept("keyword", "with"):
            names = [self.parse_dotted_name()]
            while self.accept(","):
                names.append(self.parse_dotted_name())
            with_names = tuple(names)
        return Query(kw, produce_type, target_var, goal, with_names, pos)

    def parse_goal_text(self) -> str:
        text = self.expect_ident().text
        while True:
            if self.accept("."):
                text += "." + self.parse_state_name()
            elif self.accept("@"):
                text += "@" + self.parse_state_name()
            else:
                return text

    # -- expressions -----------------------------------------------------------

    def parse_expr(self) -> Expr:
        return self.parse_postfix(self.parse_primary())

    def parse_primary(self) -> Expr:
        t = self.peek()
        if t.kind == "int":
            self.next()
            return LiteralExpr("int", int(t.text), t.pos)
        if t.kind == "string":
            self.next()
            return LiteralExpr("string", t.text, t.pos)
        if self.accept("keyword", "true"):
            return LiteralExpr("bool", True, t.pos)
        if self.accept("keyword", "false"):
            return LiteralExpr("bool", False, t.pos)
        if self.accept("keyword", "null"):
            return LiteralExpr("null", None, t.pos)
        if self.accept("keyword", "new"):
            ty = self.parse_type_name()
            self.expect("(")
            args = self.parse_args()
            self.expect(")")
            return NewExpr(ty, args, t.pos)
        if self.accept("keyword", "this"):
            return ThisExpr(t.pos)
        if self.accept("keyword", "super"):
            return SuperExpr(t.pos)
        if t.kind == "ident":
            self.next()
            if self.at("("):
                self.next()
                args = self.parse_args()
                self.expect(")")
                return CallExpr(None, t.text, args, t.pos)
            return NameExpr(t.text, t.pos)
        raise SyntaxIssue(f"expected expression, found '{t.text or t.kind}'", t.pos)

    def parse_postfix(self, expr: Expr) -> Expr:
        while self.at("."):
            self.next()
            name = self.expect_ident().text
            if self.accept("("):
                args = self.parse_args()
                self.expect(")")
                expr = CallExpr(expr, name, args, self.peek().pos)
            else:
                expr = FieldAccessExpr(expr, name, self.peek().pos)
        return expr

    def parse_args(self) -> list[Expr]:
        args: list[Expr] = []
        if self.at(")"):
            return args
        args.append(self.parse_expr())
        while self.accept(","):
            args.append(self.parse_expr())
        return args


def parse_unit(text: str) -> list[RawClass]:
    """Parse one source unit into raw type declarations."""
    return Parser(text).parse_program()
