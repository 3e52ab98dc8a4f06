"""Static disciplines over resolved programs.

Four checkers share one forward body walk: mutation-summary soundness,
uniqueness flow (including destructive reads), protection spans, and
override conformance. The walk also produces the planning context that the
planner seeds itself with at each query site.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .diagnostics import E_SPAN, E_SUM, E_UNIQ, E_OVR
from .model import (
    AddLabel, AssignStmt, Atom, BlockStmt, CallExpr, ClassModel, Conjunct,
    Expr, ExprStmt, FieldAccessExpr, FieldDecl, Invariant, LabelAtom,
    LiteralExpr, MethodSpec, MutationTarget, NameExpr, NewExpr, Pos,
    PRIMITIVES, Program, ProtectStmt, ProtocolDecl, Query, QueryStmt,
    ResourcePath, ReturnStmt, StateAtom, Stmt, SuperExpr, ThisExpr,
    Transition, UniquenessKind, VarDeclStmt, any_target, can_flow,
    can_override_arg, can_override_return, flow_consumes, this_target,
    var_target,
)

KIND = UniquenessKind


@dataclass(frozen=True)
class Violation:
    code: str
    rule: str
    message: str
    pos: Pos
    unit: str = ""

    def text(self) -> str:
        return f"{self.rule}: {self.message}"


@dataclass
class ValueState:
    """Tracked facts about one in-scope value."""

    variable: str
    type: str
    kind: UniquenessKind = KIND.NORMAL
    fresh: bool = False        # created by `new` inside this method
    is_field: bool = False
    field_path: Optional[ResourcePath] = None  # managed field provenance
    labels: set[Atom] = field(default_factory=set)
    residence: dict[Atom, tuple[ResourcePath, ...]] = field(default_factory=dict)
    consumed: bool = False
    declared_order: int = 0


@dataclass
class SpanObligation:
    protected_variable: str
    protected_resource: ResourcePath
    pos: Pos


@dataclass
class QueryContext:
    """Everything the planner needs at one query site."""

    query: Query
    method: MethodSpec
    unit: str
    values: dict[str, ValueState]
    spans: list[SpanObligation]
    pos: Pos
    stmt: Stmt


class MissingCalleeSummary(Exception):
    def __init__(self, name: str):
        super().__init__(name)
        self.callee = name


# ---------------------------------------------------------------------------
# Label bookkeeping helpers
# ---------------------------------------------------------------------------

def result_atoms(method: MethodSpec, group: Optional[int] = None) -> list[tuple[Atom, tuple[ResourcePath, ...]]]:
    """Atoms the method establishes on its returned value. Invariants on
    `result` count as carried labels."""
    out: list[tuple[Atom, tuple[ResourcePath, ...]]] = []
    for atom in method.result_labels:
        out.append((atom, ()))
    for cj in method.all_conjuncts(group):
        if cj.subject != "result":
            continue
        for cond in cj.conditions:
            if isinstance(cond, AddLabel):
                out.append((cond.atom, cond.residence))
            elif isinstance(cond, Invariant):
                out.append((cond.atom, ()))
            elif isinstance(cond, Transition):
                out.append((cond.target_atom(), cond.residence))
    return out


def subject_preconditions(method: MethodSpec, group: Optional[int] = None) -> list[tuple[str, Atom]]:
    """(subject, atom) pairs that must hold before invocation."""
    out = []
    for cj in method.all_conjuncts(group):
        if cj.subject == "result":
            continue
        for cond in cj.conditions:
            if isinstance(cond, Invariant):
                out.append((cj.subject, cond.atom))
            elif isinstance(cond, Transition):
                out.append((cj.subject, cond.source_atom()))
    return out


def subject_effects(method: MethodSpec, group: Optional[int] = None) -> list[tuple[str, Atom, tuple[ResourcePath, ...], Optional[Atom]]]:
    """(subject, atom-added, residence, atom-removed) for non-result subjects."""
    out = []
    for cj in method.all_conjuncts(group):
        if cj.subject == "result":
            continue
        for cond in cj.conditions:
            if isinstance(cond, AddLabel):
                out.append((cj.subject, cond.atom, cond.residence, None))
            elif isinstance(cond, Transition):
                out.append((cj.subject, cond.target_atom(), cond.residence, cond.source_atom()))
    return out


def goal_residence(program: Program, goal: Atom) -> tuple[ResourcePath, ...]:
    """Residence of a goal established by unknown means: the union of the
    residences declared on corpus effects that achieve the goal."""
    paths: list[ResourcePath] = []

    def note(residence: tuple[ResourcePath, ...]) -> None:
        for p in residence:
            if p not in paths:
                paths.append(p)

    for cname in sorted(program.units):
        for m in program.units[cname].methods:
            groups: list[Optional[int]] = [None]
            groups.extend(range(len(m.optional_groups)))
            for g in groups:
                for atom, residence in result_atoms(m, g):
                    if atom == goal:
                        note(residence)
                for _, atom, residence, _ in subject_effects(m, g):
                    if atom == goal:
                        note(residence)
    return tuple(paths)


def paths_comparable(program: Program, root_type: str, a: ResourcePath, b: ResourcePath) -> bool:
    """Whether two resource paths on the same object overlap (one is an
    ancestor-or-equal of the other in the unified tree)."""
    ta = this_target(a)
    tb = this_target(b)
    a_up = {t.path for t in program.target_ancestors(ta, root_type)}
    if tb.path in a_up:
        return True
    b_up = {t.path for t in program.target_ancestors(tb, root_type)}
    return ta.path in b_up


# ---------------------------------------------------------------------------
# Summary generalization
# ---------------------------------------------------------------------------

def generalize_summary(program: Program,
                       summary: frozenset[MutationTarget],
                       bindings: dict[str, tuple[str, str, UniquenessKind]],
                       ) -> frozenset[MutationTarget]:
    """Rewrite a callee summary for a call site.

    `bindings` maps formal argument names to (actual name, formal type,
    tracked kind of the actual). Targets rooted at a Normal-tracked actual
    lose their identity and become any(T); maintained and unique actuals
    keep the named target.
    """
    out: set[MutationTarget] = set()
    for t in summary:
        if t.root_kind != "var" or t.root_name not in bindings:
            out.add(t)
            continue
        actual, formal_type, kind = bindings[t.root_name]
        if kind is KIND.NORMAL:
            out.add(any_target(formal_type, t.path))
        else:
            out.add(var_target(actual, t.path))
    return frozenset(out)


# ---------------------------------------------------------------------------
# The shared body walk
# ---------------------------------------------------------------------------

class BodyAnalyzer:
    """Forward pass over a method body.

    Collects uniqueness violations, span violations, the inferred mutation
    summary, and per-query planning contexts. The object language has no
    loops in checked regions, so a single pass suffices.
    """

    def __init__(self, program: Program, unit: ClassModel, method: MethodSpec):
        self.program = program
        self.unit = unit
        self.method = method
        self.violations: list[Violation] = []
        self.inferred: set[MutationTarget] = set()
        self.query_contexts: list[QueryContext] = []
        self.values: dict[str, ValueState] = {}
        self.spans: list[SpanObligation] = []
        self._order = 0
        self._summary_cache: dict[int, frozenset[MutationTarget]] = {}
        self._inference_stack: set[int] = set()
        self._init_env()

    # -- environment -------------------------------------------------------

    def _next_order(self) -> int:
        self._order += 1
        return self._order

    def _init_env(self) -> None:
        m = self.method
        this = ValueState("this", self.unit.name, KIND.MAINTAIN,
                          fresh=m.is_constructor, declared_order=self._next_order())
        self.values["this"] = this
        for subject, atom in subject_preconditions(m):
            if subject == "this":
                this.labels.add(atom)
        for a in m.args:
            v = ValueState(a.name, a.type, a.uniqueness, declared_order=self._next_order())
            for subject, atom in subject_preconditions(m):
                if subject == a.name:
                    v.labels.add(atom)
            self.values[a.name] = v
        for fname, fld in sorted(self.program.managed_fields(self.unit.name).items()):
            if fname in self.values:
                continue
            v = ValueState(fname, fld.type, fld.uniqueness, is_field=True,
                           field_path=(fname,), declared_order=self._next_order())
            v.labels.update(fld.labels)
            self.values[fname] = v

    # -- callee summaries -----------------------------------------------------

    def callee_summary(self, callee: MethodSpec) -> frozenset[MutationTarget]:
        """Declared summary if the method carries annotations; otherwise an
        inferred one for local bodies. Bare declarations are trusted pure."""
        key = id(callee)
        if key in self._summary_cache:
            return self._summary_cache[key]
        declared = self.program.effective_summary(callee)
        if declared or callee.body is None:
            self._summary_cache[key] = declared
            return declared
        if key in self._inference_stack:
            raise MissingCalleeSummary(f"{callee.declared_in}.{callee.name}")
        self._inference_stack.add(key)
        try:
            unit = self.program.units.get(callee.declared_in)
            if unit is None:
                return frozenset()
            sub = BodyAnalyzer(self.program, unit, callee)
            sub._inference_stack = self._inference_stack
            # Walk directly so an unresolvable callee propagates upward.
            sub._walk(callee.body)
            result = frozenset(sub.inferred)
        finally:
            self._inference_stack.discard(key)
        self._summary_cache[key] = result
        return result

    # -- entry ----------------------------------------------------------------

    def run(self) -> "BodyAnalyzer":
        if self.method.body is not None:
            try:
                self._walk(self.method.body)
            except MissingCalleeSummary as e:
                self._violate(E_SUM, "MissingCalleeSummary",
                              f"callee '{e.callee}' has no declared or inferable summary",
                              self.method.pos)
        return self

    def _violate(self, code: str, rule: str, message: str, pos: Pos) -> None:
        self.violations.append(Violation(code, rule, message, pos, self.unit.name))

    # -- statements -------------------------------------------------------------

    def _walk(self, stmts: list[Stmt]) -> None:
        for s in stmts:
            self._statement(s)

    def _statement(self, s: Stmt) -> None:
        if isinstance(s, VarDeclStmt):
            if isinstance(s.init, Query):
                self._query(s.init, s.pos, s, result_name=s.name, result_type=s.type,
                            span=s.span)
            else:
                value = self._eval(s.init, s.pos) if s.init is not None else None
                st = self._bind_local(s.name, s.type, value, s.pos)
        elif isinstance(s, AssignStmt):
            self._assign(s)
        elif isinstance(s, ExprStmt):
            self._eval(s.expr, s.pos)
        elif isinstance(s, ReturnStmt):
            self._return(s)
        elif isinstance(s, QueryStmt):
            self._query(s.query, s.pos, s, span=s.span)
        elif isinstance(s, ProtectStmt):
            self._with_span(SpanObligation(s.var, s.resource, s.pos), s.body)
        elif isinstance(s, BlockStmt):
            self._walk(s.body)
        else:
            raise TypeError(f"unknown statement {s!r}")

    def _bind_local(self, name: str, type_name: str, value: Optional[ValueState],
                    pos: Pos) -> ValueState:
        st = ValueState(name, type_name, declared_order=self._next_order())
        if value is not None:
            st.kind = value.kind
            st.fresh = value.fresh and value.variable.startswith("<")
            st.is_field = False
            st.field_path = value.field_path
            st.labels = set(value.labels)
            st.residence = dict(value.residence)
        self.values[name] = st
        return st

    def _assign(self, s: AssignStmt) -> None:
        if isinstance(s.value, Query):
            # x = #produce(...) rebinding an existing local.
            target = s.target
            if isinstance(target, NameExpr):
                existing = self.values.get(target.name)
                ty = existing.type if existing else "Object"
                self._query(s.value, s.pos, s, result_name=target.name, result_type=ty)
            return
        value = self._eval(s.value, s.pos)
        target = s.target
        if isinstance(target, NameExpr) and target.name in self.values \
                and not self.values[target.name].is_field:
            st = self.values[target.name]
            # Rebinding a local revives it; nulling out a consumed local is
            # the idiomatic end of a destructive read.
            self._bind_local(target.name, st.type, value if not _is_null(s.value) else None, s.pos)
            return
        # Field store: this.f = v or bare f = v where f is a field.
        fld = self._field_of(target)
        if fld is None:
            self._violate(E_UNIQ, "IllegalFlow",
                          "assignment target is neither a local nor a field", s.pos)
            return
        self._check_store(fld, s.value, value, s.pos)
        # Assigning a managed field is a mutation of the field itself; its
        # owning resource covers it. Unmanaged fields stay invisible.
        if fld.managed:
            t = this_target((fld.name,))
            self._check_spans(t, s.pos)
            self.inferred.add(t)
        if isinstance(target, NameExpr) or (isinstance(target, FieldAccessExpr)
                                            and isinstance(target.receiver, ThisExpr)):
            # The field now holds the assigned object; track it.
            if fld.managed:
                st = ValueState(fld.name, fld.type, fld.uniqueness, is_field=True,
                                field_path=(fld.name,),
                                declared_order=self.values.get(fld.name, ValueState(fld.name, fld.type)).declared_order
                                or self._next_order())
                if value is not None:
                    st.labels = set(value.labels)
                    st.residence = dict(value.residence)
                self.values[fld.name] = st

    def _field_of(self, target: Expr) -> Optional[FieldDecl]:
        if isinstance(target, NameExpr):
            return self.program.find_field(self.unit.name, target.name)
        if isinstance(target, FieldAccessExpr) and isinstance(target.receiver, ThisExpr):
            return self.program.find_field(self.unit.name, target.field)
        return None

    def _check_store(self, fld: FieldDecl, value_expr: Expr,
                     value: Optional[ValueState], pos: Pos) -> None:
        if value is None or fld.type in PRIMITIVES:
            return
        if _is_null(value_expr):
            return
        if isinstance(value_expr, NewExpr):
            return  # fresh objects take any field kind
        kind = value.kind
        if kind in (KIND.MAINTAIN, KIND.UNIQUE):
            self._violate(E_UNIQ, "HeapAliasOfMaintained",
                          f"storing {kind.keyword} value '{value.variable}' into field "
                          f"'{fld.name}' creates a heap alias", pos)
            return
        if kind in (KIND.MAINTAIN_RETAINS, KIND.UNIQUE_RETAINS):
            if fld.uniqueness.unshared and kind is KIND.MAINTAIN_RETAINS:
                self._violate(E_UNIQ, "IllegalFlow",
                              f"maintainr value '{value.variable}' may be shared; field "
                              f"'{fld.name}' requires an unshared value", pos)
                return
            self._consume(value, pos)
            return
        if kind is KIND.NORMAL and fld.uniqueness is not KIND.NORMAL:
            self._violate(E_UNIQ, "IllegalFlow",
                          f"normal value '{value.variable}' cannot be stored into "
                          f"{fld.uniqueness.keyword} field '{fld.name}'", pos)

    def _consume(self, value: ValueState, pos: Pos) -> None:
        if value.is_field:
            self._violate(E_UNIQ, "IllegalFlow",
                          f"destructive read of field '{value.variable}' is not allowed", pos)
            return
        if value.variable in self.values:
            self.values[value.variable].consumed = True

    def _return(self, s: ReturnStmt) -> None:
        if s.value is None:
            return
        value = self._eval(s.value, s.pos)
        if value is None:
            return
        declared = self.method.return_uniqueness
        if declared is KIND.NORMAL:
            ok = value.kind is KIND.NORMAL or value.fresh
        else:
            # Returning hands out a dynamic alias; no destructive read needed.
            ok = value.fresh or value.kind is declared or \
                can_flow(value.kind, declared) or \
                (value.kind, declared) in ((KIND.UNIQUE, KIND.MAINTAIN_RETAINS),
                                           (KIND.UNIQUE, KIND.UNIQUE_RETAINS))
            ok = ok or can_override_return(declared, value.kind)
        if not ok:
            self._violate(E_UNIQ, "IllegalFlow",
                          f"cannot return {value.kind.keyword} value as "
                          f"{declared.keyword}", s.pos)

    # -- queries and spans ------------------------------------------------------

    def _query(self, query: Query, pos: Pos, stmt: Stmt,
               result_name: Optional[str] = None, result_type: Optional[str] = None,
               span: Optional[list[Stmt]] = None) -> None:
        snapshot = {k: _copy_state(v) for k, v in self.values.items()}
        self.query_contexts.append(QueryContext(
            query, self.method, self.unit.name, snapshot, list(self.spans), pos, stmt))
        goal: Optional[Atom] = None
        subject_type = query.produce_type
        if query.kind == "transform":
            tv = self.values.get(query.target_var or "")
            subject_type = tv.type if tv else None
        try:
            goal = self.program.normalize_goal(query.goal_text, subject_type, self.unit.name)
        except Exception:
            goal = None
        residence: tuple[ResourcePath, ...] = ()
        if goal is not None:
            residence = goal_residence(self.program, goal)
        if query.kind == "produce" and result_name is not None:
            st = self._bind_local(result_name, result_type or query.produce_type or "Object",
                                  None, pos)
            st.fresh = True
            st.kind = KIND.NORMAL  # a plain declaration site carries no kind
            if goal is not None:
                st.labels.add(goal)
                st.residence[goal] = residence
            holder = result_name
        elif query.kind == "transform" and query.target_var in self.values:
            st = self.values[query.target_var]
            if goal is not None:
                if isinstance(goal, StateAtom):
                    st.labels = {a for a in st.labels
                                 if not (isinstance(a, StateAtom)
                                         and (a.owner, a.protocol) == (goal.owner, goal.protocol))}
                st.labels.add(goal)
                st.residence[goal] = residence
            holder = query.target_var
        else:
            holder = result_name or query.target_var or ""
        if span is not None:
            obligations = [SpanObligation(holder, p, pos) for p in residence] \
                or [SpanObligation(holder, (), pos)]
            self._with_spans(obligations, span)

    def _with_span(self, obligation: SpanObligation, body: list[Stmt]) -> None:
        self._with_spans([obligation], body)

    def _with_spans(self, obligations: list[SpanObligation], body: list[Stmt]) -> None:
        self.spans.extend(obligations)
        try:
            self._walk(body)
        finally:
            for _ in obligations:
                self.spans.pop()

    # -- expressions ---------------------------------------------------------

    def _eval(self, e: Expr, pos: Pos) -> Optional[ValueState]:
        if isinstance(e, LiteralExpr):
            t = {"int": "int", "bool": "boolean", "string": "String", "null": "null"}[e.kind]
            return ValueState("<literal>", t)
        if isinstance(e, ThisExpr):
            return self.values.get("this")
        if isinstance(e, SuperExpr):
            return self.values.get("this")
        if isinstance(e, NameExpr):
            st = self.values.get(e.name)
            if st is not None:
                self._check_use(st, pos)
                return st
            fld = self.program.find_field(self.unit.name, e.name)
            if fld is not None:
                return self._field_value(fld)
            if e.name in self.program.units:
                return ValueState(e.name, f"<class {e.name}>")
            self._violate(E_UNIQ, "IllegalFlow", f"unknown name '{e.name}'", pos)
            return None
        if isinstance(e, FieldAccessExpr):
            return self._field_access(e, pos)
        if isinstance(e, NewExpr):
            return self._new(e, pos)
        if isinstance(e, CallExpr):
            return self._call(e, pos)
        raise TypeError(f"unknown expression {e!r}")

    def _check_use(self, st: ValueState, pos: Pos) -> None:
        if st.consumed:
            self._violate(E_UNIQ, "UseAfterConsume",
                          f"'{st.variable}' was passed by destructive read and may "
                          f"not be used again", pos)

    def _field_value(self, fld: FieldDecl) -> ValueState:
        st = ValueState(fld.name, fld.type, fld.uniqueness, is_field=True,
                        field_path=(fld.name,) if fld.managed else None)
        st.labels.update(fld.labels)
        return st

    def _field_access(self, e: FieldAccessExpr, pos: Pos) -> Optional[ValueState]:
        recv = e.receiver
        if isinstance(recv, ThisExpr):
            fld = self.program.find_field(self.unit.name, e.field)
            if fld is None:
                self._violate(E_UNIQ, "IllegalFlow",
                              f"unknown field 'this.{e.field}'", pos)
                return None
            tracked = self.values.get(e.field)
            return tracked if tracked is not None else self._field_value(fld)
        if isinstance(recv, NameExpr) and recv.name in self.program.units \
                and recv.name not in self.values:
            # Static read through the class name.
            fld = self.program.find_field(recv.name, e.field)
            if fld is None or not fld.is_static:
                self._violate(E_UNIQ, "IllegalFlow",
                              f"unknown static field '{recv.name}.{e.field}'", pos)
                return None
            st = ValueState(f"{recv.name}.{e.field}", fld.type)
            st.labels.update(fld.labels)
            return st
        recv_state = self._eval(recv, pos)
        if recv_state is None:
            return None
        fld = self.program.find_field(recv_state.type, e.field)
        if fld is None:
            self._violate(E_UNIQ, "IllegalFlow",
                          f"type '{recv_state.type}' has no field '{e.field}'", pos)
            return None
        st = ValueState(f"{recv_state.variable}.{e.field}", fld.type, fld.uniqueness)
        st.labels.update(fld.labels)
        return st

    def _new(self, e: NewExpr, pos: Pos) -> Optional[ValueState]:
        ctor = self.program.find_constructor(e.type, len(e.args))
        if ctor is None and e.type in self.program.units:
            ctor = self.program.find_constructor(e.type)
        st = ValueState("<new>", e.type, KIND.UNIQUE, fresh=True)
        if ctor is None:
            if e.type not in self.program.units:
                self._violate(E_UNIQ, "IllegalFlow", f"unknown type '{e.type}'", pos)
            for a in e.args:
                self._eval(a, pos)
            return st
        self._invoke(ctor, None, e.args, pos, fresh_receiver=True)
        for atom, residence in result_atoms(ctor):
            st.labels.add(atom)
            st.residence[atom] = residence
        return st

    def _call(self, e: CallExpr, pos: Pos) -> Optional[ValueState]:
        recv_state: Optional[ValueState]
        callee: Optional[MethodSpec]
        if e.receiver is None:
            recv_state = self.values.get("this")
            callee = self.program.find_method(self.unit.name, e.method, len(e.args))
        elif isinstance(e.receiver, SuperExpr):
            recv_state = self.values.get("this")
            sup = self.unit.superclass or "Object"
            callee = self.program.find_method(sup, e.method, len(e.args))
        elif isinstance(e.receiver, NameExpr) and e.receiver.name in self.program.units \
                and e.receiver.name not in self.values:
            recv_state = None
            callee = self.program.find_method(e.receiver.name, e.method, len(e.args))
            if callee is not None and not callee.is_static:
                self._violate(E_UNIQ, "IllegalFlow",
                              f"instance method '{e.method}' called without a receiver", pos)
        else:
            recv_state = self._eval(e.receiver, pos)
            if recv_state is None:
                return None
            callee = self.program.find_method(recv_state.type, e.method, len(e.args))
        if callee is None:
            target = recv_state.type if recv_state else "<unknown>"
            self._violate(E_UNIQ, "IllegalFlow",
                          f"no method '{e.method}/{len(e.args)}' on '{target}'", pos)
            return None
        return self._invoke(callee, recv_state, e.args, pos)

    # -- invocation: flow checks, summary mapping, label updates ------------------

    def _invoke(self, callee: MethodSpec, recv: Optional[ValueState],
                args: list[Expr], pos: Pos,
                fresh_receiver: bool = False) -> Optional[ValueState]:
        arg_states: list[Optional[ValueState]] = []
        for formal, actual in zip(callee.args, args):
            st = self._eval(actual, pos)
            arg_states.append(st)
            if st is None:
                continue
            self._flow_check(st, actual, formal.uniqueness, formal.name, pos)
        if recv is not None and not fresh_receiver:
            self._check_use(recv, pos)
        self._map_callee_summary(callee, recv, args, arg_states, pos, fresh_receiver)
        self._apply_callee_effects(callee, recv, args, arg_states)
        result = ValueState("<call>", callee.return_type, callee.return_uniqueness)
        for atom, residence in result_atoms(callee):
            result.labels.add(atom)
            result.residence[atom] = residence
        return result

    def _flow_check(self, st: ValueState, actual: Expr, param_kind: UniquenessKind,
                    param_name: str, pos: Pos) -> None:
        if isinstance(actual, NewExpr):
            return  # a fresh temporary adopts whatever kind the parameter wants
        if st.fresh and param_kind in (KIND.NORMAL, KIND.MAINTAIN):
            return
        if st.fresh and param_kind in (KIND.MAINTAIN_RETAINS, KIND.UNIQUE_RETAINS,
                                       KIND.UNIQUE):
            if param_kind is not KIND.UNIQUE:
                self._consume(st, pos)
            return
        if st.type in PRIMITIVES or st.type in ("null", "String"):
            return
        if not can_flow(st.kind, param_kind):
            self._violate(E_UNIQ, "IllegalFlow",
                          f"{st.kind.keyword} value '{st.variable}' cannot flow to "
                          f"{param_kind.keyword} parameter '{param_name}'", pos)
            return
        if flow_consumes(st.kind, param_kind):
            self._consume(st, pos)

    def _map_callee_summary(self, callee: MethodSpec, recv: Optional[ValueState],
                            args: list[Expr], arg_states: list[Optional[ValueState]],
                            pos: Pos, fresh_receiver: bool) -> None:
        summary = self.callee_summary(callee)
        if not summary:
            return
        by_name = {a.name: i for i, a in enumerate(callee.args)}
        for t in sorted(summary, key=lambda x: x.text()):
            mapped: Optional[MutationTarget]
            local: Optional[MutationTarget]
            if t.root_kind == "this":
                if fresh_receiver or recv is None:
                    mapped = local = None
                else:
                    mapped = self._object_target(recv, t.path)
                    local = self._object_target(recv, t.path, for_span=True)
            elif t.root_kind == "var" and t.root_name in by_name:
                idx = by_name[t.root_name]
                st = arg_states[idx] if idx < len(arg_states) else None
                formal = callee.args[idx]
                if st is None:
                    mapped = local = any_target(formal.type, t.path)
                else:
                    mapped = self._object_target(st, t.path, formal.type)
                    local = self._object_target(st, t.path, formal.type, for_span=True)
            else:
                mapped = local = t
            if local is not None:
                self._check_spans(local, pos)
            if mapped is not None:
                self.inferred.add(mapped)

    def _object_target(self, st: ValueState, path: ResourcePath,
                       formal_type: Optional[str] = None,
                       for_span: bool = False) -> Optional[MutationTarget]:
        """Name a mutation of `st`'s object from this method's point of view.

        The caller-visible form hides fresh objects (a caller cannot observe
        them); the span-level form keeps named locals, because a protection
        span guards exactly those.
        """
        if st.variable == "this":
            if st.fresh and not for_span:
                return None  # constructing: this has no external aliases yet
            return this_target(path)
        if st.fresh:
            if not for_span:
                return None
            if st.variable.startswith("<"):
                return None  # unnamed temporary: aliases nothing protected
            return var_target(st.variable, path)
        if st.is_field or st.field_path is not None:
            if st.field_path is None:
                return None  # unmanaged field: hidden implementation state
            return this_target(st.field_path + path)
        if self.method.arg_named(st.variable) is not None or for_span:
            if st.kind is KIND.NORMAL:
                return any_target(formal_type or st.type, path)
            return var_target(st.variable, path)
        # Locals of unknown origin and call results: attribute to any(T).
        return any_target(formal_type or st.type, path)

    def _check_spans(self, target: MutationTarget, pos: Pos) -> None:
        for span in self.spans:
            if not span.protected_resource:
                continue
            protected = self.values.get(span.protected_variable)
            if protected is None:
                continue
            path = target.path
            if target.root_kind == "any":
                # Mutating any aliasable object of an assignable type.
                if protected.kind.unshared:
                    continue
                if not self.program.is_subtype(protected.type, target.root_name):
                    continue
            elif target.root_kind == "var":
                if target.root_name != span.protected_variable:
                    # A different variable may still alias the protected one
                    # unless one of the two is known unshared.
                    other = self.values.get(target.root_name)
                    if other is None or other.kind.unshared:
                        continue
                    if protected.kind.unshared:
                        continue
                    if not _alias_compatible(self.program, other.type, protected.type):
                        continue
            else:
                # this-rooted: a normal-kind field may alias the protected
                # variable; unshared fields and plain resources cannot.
                if not path:
                    continue
                fld = self.program.find_field(self.unit.name, path[0])
                if fld is None or fld.uniqueness.unshared:
                    continue
                if protected.kind.unshared:
                    continue
                if not _alias_compatible(self.program, fld.type, protected.type):
                    continue
                path = path[1:]
            if paths_comparable(self.program, protected.type, path,
                                span.protected_resource):
                self._violate(E_SPAN, "SpanViolation",
                              f"statement may mutate protected resource "
                              f"'{span.protected_variable}."
                              f"{'.'.join(span.protected_resource)}' "
                              f"(summary hits '{target.text()}')", pos)

    def _apply_callee_effects(self, callee: MethodSpec, recv: Optional[ValueState],
                              args: list[Expr], arg_states: list[Optional[ValueState]]) -> None:
        by_name = {a.name: i for i, a in enumerate(callee.args)}
        for subject, atom, residence, removed in subject_effects(callee):
            st: Optional[ValueState] = None
            if subject == "this":
                st = recv
            elif subject in by_name:
                st = arg_states[by_name[subject]]
            if st is None:
                continue
            holder = self.values.get(st.variable)
            target = holder if holder is not None else st
            if removed is not None:
                target.labels.discard(removed)
            target.labels.add(atom)
            target.residence[atom] = residence


def _alias_compatible(program: Program, a: str, b: str) -> bool:
    return program.is_subtype(a, b) or program.is_subtype(b, a)


def _copy_state(v: ValueState) -> ValueState:
    return ValueState(v.variable, v.type, v.kind, v.fresh, v.is_field,
                      v.field_path, set(v.labels), dict(v.residence),
                      v.consumed, v.declared_order)


def _is_null(e: Union[Expr, Query, None]) -> bool:
    return isinstance(e, LiteralExpr) and e.kind == "null"


# ---------------------------------------------------------------------------
# Checker entry points
# ---------------------------------------------------------------------------

def analyze_method(program: Program, unit: ClassModel, method: MethodSpec) -> BodyAnalyzer:
    return BodyAnalyzer(program, unit, method).run()


def infer_summary(program: Program, unit: ClassModel, method: MethodSpec) -> frozenset[MutationTarget]:
    analyzer = analyze_method(program, unit, method)
    for v in analyzer.violations:
        if v.rule == "MissingCalleeSummary":
            raise MissingCalleeSummary(v.message)
    return frozenset(analyzer.inferred)


def verify_summary(program: Program, unit: ClassModel, method: MethodSpec) -> list[Violation]:
    """Declared summary must be a superset of the inferred one."""
    if method.body is None:
        return []
    analyzer = analyze_method(program, unit, method)
    out = [v for v in analyzer.violations if v.rule == "MissingCalleeSummary"]
    declared = program.effective_summary(method)
    var_types = {a.name: a.type for a in method.args}
    missing = program.summary_covers(declared, frozenset(analyzer.inferred),
                                     unit.name, var_types)
    for t in missing:
        out.append(Violation(E_SUM, "SummaryTooNarrow",
                             f"'{unit.name}.{method.name}' mutates '{t.text()}' "
                             f"but does not declare it", method.pos, unit.name))
    return out


def check_uniqueness(program: Program, unit: ClassModel, method: MethodSpec) -> list[Violation]:
    if method.body is None:
        return []
    analyzer = analyze_method(program, unit, method)
    return [v for v in analyzer.violations if v.code == E_UNIQ]


def check_spans(program: Program, unit: ClassModel, method: MethodSpec) -> list[Violation]:
    if method.body is None:
        return []
    analyzer = analyze_method(program, unit, method)
    return [v for v in analyzer.violations if v.code == E_SPAN]


def query_contexts(program: Program, unit: ClassModel, method: MethodSpec) -> list[QueryContext]:
    return analyze_method(program, unit, method).query_contexts


# ---------------------------------------------------------------------------
# Subprotocols and override conformance
# ---------------------------------------------------------------------------

def is_subprotocol(sub_transitions: frozenset[tuple[str, str]],
                   super_transitions: frozenset[tuple[str, str]]) -> bool:
    """Every transition of the overridden machine must survive; the refined
    machine may add transitions and states."""
    return super_transitions <= sub_transitions


def class_protocol_machine(program: Program, class_name: str,
                           proto: ProtocolDecl) -> frozenset[tuple[str, str]]:
    """The protocol's transitions as visible from `class_name`: most-derived
    method versions only."""
    slots: dict[tuple[str, int], MethodSpec] = {}
    for t in program.supertype_chain(class_name):
        u = program.units.get(t)
        if u is None:
            continue
        for m in u.methods:
            key = (m.name, len(m.args)) if not m.is_constructor else ("<init>", len(m.args))
            slots.setdefault(key, m)
    transitions: set[tuple[str, str]] = set()
    for m in slots.values():
        transitions.update(program._method_transitions(m, proto))
    return frozenset(transitions)


def check_override(program: Program, sub: MethodSpec, sup: MethodSpec) -> list[Violation]:
    """All per-method subclassing rules, one violation per failed bullet."""
    out: list[Violation] = []
    unit = sub.declared_in

    def violate(bullet: str, message: str) -> None:
        out.append(Violation(E_OVR, bullet,
                             f"{unit}.{sub.name} vs {sup.declared_in}.{sup.name}: "
                             f"{message}", sub.pos, unit))

    rename = {sa.name: pa.name for sa, pa in zip(sub.args, sup.args)}

    def norm(pairs):
        return {(rename.get(s, s), a) for s, a in pairs}

    # B1: weaker-or-equal preconditions, stronger-or-equal postconditions.
    sub_pre = norm(subject_preconditions(sub))
    sup_pre = norm(subject_preconditions(sup))
    extra_pre = sub_pre - sup_pre
    if extra_pre:
        names = ", ".join(sorted(f"{s}: {a.text()}" for s, a in extra_pre))
        violate("B1", f"override strengthens preconditions ({names})")
    sub_post = _postconditions(sub, rename)
    sup_post = _postconditions(sup, rename)
    lost_post = sup_post - sub_post
    if lost_post:
        names = ", ".join(sorted(f"{s}: {a.text()}" for s, a in lost_post))
        violate("B1", f"override weakens postconditions ({names})")
    _check_groups(program, sub, sup, rename, violate)

    # B2: mutation summary containment. Mutations routed through fields the
    # subclass itself introduces are acceptable only when those fields are
    # strictly unique; resource-level coverage from above cannot whitelist
    # them, since a shared field is an alias channel.
    sub_summary = program.effective_summary(sub)
    sup_summary = program.effective_summary(sup)
    sub_unit = program.units.get(sub.declared_in)
    var_types = {rename.get(a.name, a.name): a.type for a in sub.args}
    renamed_summary = {_rename_target(t, rename) for t in sub_summary}
    for t in sorted(renamed_summary, key=lambda x: x.text()):
        own_field = _own_field_head(sub_unit, t)
        if own_field is not None:
            if not own_field.uniqueness.unshared:
                violate("B2", f"override mutates '{t.text()}' through field "
                              f"'{own_field.name}', which is not strictly unique")
            continue
        if not any(program.target_covers(d, t, sub.declared_in, var_types)
                   for d in sup_summary):
            violate("B2", f"override adds mutation '{t.text()}' not declared above")

    # B2 (residence): effects declared above must reside in the same or
    # smaller/fewer resources below.
    sup_effects = {(rename.get(s, s), a): r for s, a, r, _ in subject_effects(sup)}
    sub_effects = {(rename.get(s, s), a): r for s, a, r, _ in subject_effects(sub)}
    for key, sup_res in sorted(sup_effects.items(), key=lambda kv: str(kv[0])):
        if key not in sub_effects:
            continue  # reported as B1 if genuinely lost
        sub_res = sub_effects[key]
        subject, atom = key
        subject_ty = _subject_type(program, sub, rename, subject)
        if not sup_res:
            if sub_res:
                violate("B2", f"effect '{atom.text()}' gained a residence "
                              f"restriction it did not have above")
            continue
        for r in sub_res:
            if not any(_path_within(program, subject_ty, r, sr) for sr in sup_res):
                violate("B2", f"effect '{atom.text()}' resides in "
                              f"'{'.'.join(r)}', not within the declared resources")

    # B4: uniqueness kind overriding.
    for sa, pa in zip(sub.args, sup.args):
        if not can_override_arg(pa.uniqueness, sa.uniqueness):
            violate("B4", f"argument '{pa.name}': {sa.uniqueness.keyword} may not "
                          f"override {pa.uniqueness.keyword}")
    if not can_override_return(sup.return_uniqueness, sub.return_uniqueness):
        violate("B4", f"return kind {sub.return_uniqueness.keyword} may not "
                      f"override {sup.return_uniqueness.keyword}")

    # B6: new [!r] on inherited resources.
    sup_locals = set(sup.local_mutations)
    for p in sub.local_mutations:
        if p in sup_locals:
            continue
        owner = _resource_owner(program, sub.declared_in, p)
        if owner is not None and owner != sub.declared_in:
            violate("B6", f"override adds local mutation [!{'.'.join(p)}] on a "
                          f"resource inherited from '{owner}'")
    return out


def _postconditions(m: MethodSpec, rename: dict[str, str]) -> set[tuple[str, Atom]]:
    out: set[tuple[str, Atom]] = set()
    for cj in m.conjuncts:
        subject = rename.get(cj.subject, cj.subject)
        for cond in cj.conditions:
            if isinstance(cond, Invariant):
                out.add((subject, cond.atom))
            elif isinstance(cond, AddLabel):
                out.add((subject, cond.atom))
            elif isinstance(cond, Transition):
                out.add((subject, cond.target_atom()))
    for atom in m.result_labels:
        out.add(("result", atom))
    return out


def _check_groups(program: Program, sub: MethodSpec, sup: MethodSpec,
                  rename: dict[str, str], violate) -> None:
    """Each optional group declared above needs a counterpart below."""
    for gi, group in enumerate(sup.optional_groups):
        sup_pre = {(rename.get(s, s), a) for s, a in _group_pre(sup, gi)}
        sup_post = {(rename.get(s, s), a) for s, a in _group_post(sup, gi)}
        ok = False
        for gj in range(len(sub.optional_groups)):
            sub_pre = {(rename.get(s, s), a) for s, a in _group_pre(sub, gj)}
            sub_post = {(rename.get(s, s), a) for s, a in _group_post(sub, gj)}
            if sub_pre <= sup_pre and sub_post >= sup_post:
                ok = True
                break
        if not ok:
            violate("B1", f"optional group {gi + 1} has no conforming counterpart")


def _group_pre(m: MethodSpec, group: int) -> set[tuple[str, Atom]]:
    out = set()
    for cj in m.optional_groups[group]:
        if cj.subject == "result":
            continue
        for cond in cj.conditions:
            if isinstance(cond, Invariant):
                out.add((cj.subject, cond.atom))
            elif isinstance(cond, Transition):
                out.add((cj.subject, cond.source_atom()))
    return out


def _group_post(m: MethodSpec, group: int) -> set[tuple[str, Atom]]:
    out = set()
    for cj in m.optional_groups[group]:
        for cond in cj.conditions:
            if isinstance(cond, AddLabel):
                out.add((cj.subject, cond.atom))
            elif isinstance(cond, Transition):
                out.add((cj.subject, cond.target_atom()))
            elif isinstance(cond, Invariant) and cj.subject == "result":
                out.add((cj.subject, cond.atom))
    return out


def _rename_target(t: MutationTarget, rename: dict[str, str]) -> MutationTarget:
    if t.root_kind == "var" and t.root_name in rename:
        return MutationTarget("var", rename[t.root_name], t.path)
    return t


def _own_field_head(unit: Optional[ClassModel],
                    t: MutationTarget) -> Optional[FieldDecl]:
    """The field a this-rooted target runs through, when that field is
    declared by `unit` itself (not inherited)."""
    if unit is None or t.root_kind != "this" or not t.path:
        return None
    for f in unit.fields:
        if f.name == t.path[0]:
            return f
    return None


def _subject_type(program: Program, m: MethodSpec, rename: dict[str, str],
                  subject: str) -> str:
    if subject == "this":
        return m.declared_in
    if subject == "result":
        return m.return_type
    inverse = {v: k for k, v in rename.items()}
    name = inverse.get(subject, subject)
    arg = m.arg_named(name)
    return arg.type if arg else m.declared_in


def _path_within(program: Program, root_type: str, path: ResourcePath,
                 outer: ResourcePath) -> bool:
    """`path` equal to or below `outer` in the unified per-object tree."""
    t = this_target(path)
    return any(anc.path == outer for anc in program.target_ancestors(t, root_type))


def _resource_owner(program: Program, class_name: str, path: ResourcePath) -> Optional[str]:
    """The type that declares the first segment of a resource path."""
    if not path:
        return None
    head = path[0]
    for t in program.supertype_chain(class_name):
        u = program.units.get(t)
        if u is None:
            continue
        if any(n.name == head for n in u.resources):
            return t
        if any(f.name == head for f in u.fields):
            return t
    return None


def check_class_conformance(program: Program, unit: ClassModel) -> list[Violation]:
    """Class-level subclassing rules plus per-override method rules."""
    out: list[Violation] = []
    if unit.superclass is None:
        sup_chain: list[str] = []
    else:
        sup_chain = program.supertype_chain(unit.superclass)

    def violate(bullet: str, message: str, pos: Pos) -> None:
        out.append(Violation(E_OVR, bullet, message, pos, unit.name))

    inherited_resources = set()
    inherited_fields = set()
    for t in sup_chain:
        u = program.units.get(t)
        if u is None:
            continue
        for node in u.resources:
            inherited_resources.add(node.name)
        for f in u.fields:
            inherited_fields.add(f.name)

    # B5: no shadowing of inherited resource names.
    for node in unit.resources:
        if node.name in inherited_resources:
            violate("B5", f"resource '{node.name}' redeclares an inherited resource",
                    unit.pos)

    # B7: no redeclaration of inherited fields.
    for f in unit.fields:
        if f.name in inherited_fields:
            violate("B7", f"field '{f.name}' redeclares an inherited field", f.pos)

    # B3: protocols visible above must stay subprotocols below.
    if sup_chain:
        seen: set[tuple[str, str]] = set()
        for t in sup_chain + sorted(program.all_supertypes(unit.superclass or unit.name)):
            u = program.units.get(t)
            if u is None:
                continue
            for proto in u.protocols:
                if (proto.owner, proto.name) in seen:
                    continue
                seen.add((proto.owner, proto.name))
                sup_machine = class_protocol_machine(program, sup_chain[0], proto)
                sub_machine = class_protocol_machine(program, unit.name, proto)
                if not is_subprotocol(sub_machine, sup_machine):
                    missing = sorted(sup_machine - sub_machine)
                    violate("B3", f"protocol '{proto.name}' loses transitions "
                                  f"{missing} in '{unit.name}'", unit.pos)

    # Per-method override rules.
    for m in unit.methods:
        sup_m = program.overridden_method(m)
        if sup_m is not None:
            out.extend(check_override(program, m, sup_m))
    return out


def check_program(program: Program) -> list[Violation]:
    """Run every checker over every unit; deterministic order."""
    out: list[Violation] = []
    for cname in sorted(program.units):
        unit = program.units[cname]
        out.extend(check_class_conformance(program, unit))
        for m in unit.methods:
            if m.body is None:
                continue
            analyzer = analyze_method(program, unit, m)
            out.extend(analyzer.violations)
            declared = program.effective_summary(m)
            var_types = {a.name: a.type for a in m.args}
            for t in program.summary_covers(declared, frozenset(analyzer.inferred),
                                            cname, var_types):
                out.append(Violation(E_SUM, "SummaryTooNarrow",
                                     f"'{cname}.{m.name}' mutates '{t.text()}' "
                                     f"but does not declare it", m.pos, cname))
    return out
