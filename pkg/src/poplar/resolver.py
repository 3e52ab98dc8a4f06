"""Name resolution: raw declarations to a bound Program, plus the external
overlay pass that merges interclass annotations onto their target methods.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

from . import parser as P
from .diagnostics import DiagnosticSink, E_RES, E_SYN
from .model import (
    AddLabel, ArgDecl, Atom, ClassModel, Condition, Conjunct, ExternalDecl,
    FieldDecl, Invariant, LabelAtom, LabelDecl, MethodSpec, MutationTarget,
    Pos, PRIMITIVES, Program, ProtocolDecl, Query, QueryStmt, ResourceNode,
    OBJECT, STRING, StateAtom, Stmt, Transition, UniquenessKind, VarDeclStmt,
    any_target, this_target, var_target,
)


def _builtin_units() -> dict[str, ClassModel]:
    return {
        OBJECT: ClassModel(OBJECT),
        STRING: ClassModel(STRING, superclass=OBJECT),
    }


class Resolver:
    def __init__(self, units: list[tuple[str, list[P.RawClass]]], sink: DiagnosticSink):
        self.units = units
        self.sink = sink
        self.program = Program(diagnostics=sink)

    def error(self, path: str, pos: Pos, message: str) -> None:
        self.sink.error(path, pos.line, pos.col, E_RES, message)

    # -- pass 1: skeletons ----------------------------------------------------

    def resolve(self) -> Program:
        prog = self.program
        prog.units.update(_builtin_units())
        raw_of: dict[str, tuple[str, P.RawClass]] = {}
        for path, decls in self.units:
            for raw in decls:
                if raw.name in prog.units:
                    self.error(path, raw.pos, f"duplicate type name '{raw.name}'")
                    continue
                prog.units[raw.name] = self._skeleton(raw)
                prog.unit_paths[raw.name] = path
                raw_of[raw.name] = (path, raw)
        for name, (path, raw) in raw_of.items():
            self._check_supertypes(path, raw)
        self._promote_summary_fields(raw_of)
        for name, (path, raw) in raw_of.items():
            self._resolve_class(path, raw, prog.units[name])
        return prog

    def _skeleton(self, raw: P.RawClass) -> ClassModel:
        model = ClassModel(
            name=raw.name,
            superclass=raw.superclass,
            interfaces=tuple(raw.interfaces),
            is_interface=raw.is_interface,
            is_abstract=raw.is_abstract or any(m.is_abstract for m in raw.methods),
            precedence=raw.precedence,
            pos=raw.pos,
        )
        model.resources = tuple(self._resource_node(r) for r in raw.resources)
        for ld in raw.labels:
            model.labels.append(LabelDecl(raw.name, tuple(ld.carriers), tuple(ld.names), ld.pos))
        for pd in raw.protocols:
            for pname in pd.names:
                model.protocols.append(ProtocolDecl(raw.name, tuple(pd.carriers), pname, (), pd.pos))
        for f in raw.fields:
            model.fields.append(FieldDecl(
                name=f.name, type=f.type, declared_in=raw.name,
                uniqueness=f.uniqueness, managed=f.managed,
                managed_resource=tuple(f.managed_resource) if f.managed_resource else None,
                is_static=f.is_static, is_final=f.is_final,
                initializer=f.initializer, pos=f.pos))
        return model

    def _resource_node(self, raw: P.RawResource) -> ResourceNode:
        return ResourceNode(raw.name, tuple(self._resource_node(c) for c in raw.children))

    def _check_supertypes(self, path: str, raw: P.RawClass) -> None:
        if raw.superclass and raw.superclass not in self.program.units:
            self.error(path, raw.pos, f"unknown superclass '{raw.superclass}'")
        for i in raw.interfaces:
            u = self.program.units.get(i)
            if u is None:
                self.error(path, raw.pos, f"unknown interface '{i}'")
            elif not u.is_interface:
                self.error(path, raw.pos, f"'{i}' is not an interface")

    def _promote_summary_fields(self, raw_of: dict[str, tuple[str, P.RawClass]]) -> None:
        """A field mentioned in a declared summary of its class is managed."""
        for name, (path, raw) in raw_of.items():
            model = self.program.units[name]
            mentioned: set[str] = set()
            for m in raw.methods:
                for t in m.mutates:
                    if t.root == "name":
                        mentioned.add(t.name)
            for i, f in enumerate(model.fields):
                if not f.managed and f.name in mentioned:
                    model.fields[i] = replace(f, managed=True)

    # -- pass 2: annotations ----------------------------------------------------

    def _resolve_class(self, path: str, raw: P.RawClass, model: ClassModel) -> None:
        for i, f in enumerate(model.fields):
            if f.managed and f.managed_resource is not None:
                if not self.program.resolve_resource_path(model.name, f.managed_resource):
                    self.error(path, f.pos,
                               f"managed field '{f.name}' names unknown resource "
                               f"'{'.'.join(f.managed_resource)}'")
            raw_field = raw.fields[i] if i < len(raw.fields) else None
            if raw_field is not None and raw_field.labels:
                atoms = []
                for lbl in raw_field.labels:
                    atom = self._resolve_label_ref(path, f.pos, lbl, model.name, f.type)
                    if atom is not None:
                        atoms.append(atom)
                model.fields[i] = replace(model.fields[i], labels=tuple(atoms))
        for rm in raw.methods:
            model.methods.append(self._resolve_method(path, rm, model.name, model.name, raw.name))
        for re_ in raw.externals:
            method = self._resolve_method(path, re_.method, raw.name, re_.target_type, raw.name,
                                          is_external=True, is_ctor=re_.is_constructor)
            model.externals.append(ExternalDecl(re_.target_type, method, raw.name, re_.pos))

    def _resolve_method(self, path: str, rm: P.RawMethod, scope: str, this_type: str,
                        declared_in: str, is_external: bool = False,
                        is_ctor: Optional[bool] = None) -> MethodSpec:
        ctor = rm.return_type is None if is_ctor is None else is_ctor
        args = tuple(ArgDecl(a.uniqueness, a.type, a.name) for a in rm.args)
        for a in args:
            if a.type not in PRIMITIVES and a.type not in self.program.units \
                    and not a.type.endswith("[]"):
                self.error(path, rm.pos, f"unknown type '{a.type}' in parameter '{a.name}'")
        arg_types = {a.name: a.type for a in args}
        return_type = this_type if ctor else (rm.return_type or "void")
        result_labels = []
        for lbl in rm.result_labels:
            atom = self._resolve_label_ref(path, rm.pos, lbl, scope, return_type)
            if atom is not None:
                result_labels.append(atom)

        def subject_type(subject: str) -> Optional[str]:
            if subject == "this":
                return this_type
            if subject == "result":
                return return_type
            return arg_types.get(subject)

        conjuncts = tuple(self._resolve_conjunct(path, cj, scope, subject_type, rm.pos)
                          for cj in rm.conjuncts)
        groups = tuple(tuple(self._resolve_conjunct(path, cj, scope, subject_type, rm.pos)
                             for cj in group)
                       for group in rm.optional_groups)
        local_mutations = []
        for lm in rm.local_mutations:
            p = tuple(lm)
            if not self.program.resolve_resource_path(this_type, p):
                self.error(path, rm.pos, f"unknown resource '{'.'.join(p)}' in [!] list")
            local_mutations.append(p)
        mutates = tuple(t for t in
                        (self._resolve_target(path, rt, this_type, arg_types, rm.pos)
                         for rt in rm.mutates)
                        if t is not None)
        if is_external:
            mutates = ()
            local_mutations = []
        return MethodSpec(
            name=rm.name, declared_in=declared_in, return_type=return_type,
            args=args, is_constructor=ctor, is_abstract=rm.is_abstract,
            is_static=rm.is_static, return_uniqueness=rm.return_uniqueness,
            result_labels=tuple(result_labels),
            local_mutations=tuple(local_mutations), mutates=mutates,
            conjuncts=conjuncts, optional_groups=groups, body=rm.body, pos=rm.pos)

    def _resolve_conjunct(self, path: str, cj: P.RawConjunct, scope: str,
                          subject_type, pos: Pos) -> Conjunct:
        sub_type = subject_type(cj.subject)
        if sub_type is None and cj.subject not in ("this", "result"):
            self.error(path, cj.pos, f"unknown condition subject '{cj.subject}'")
        conditions = []
        for rc in cj.conditions:
            cond = self._resolve_condition(path, rc, scope, sub_type)
            if cond is not None:
                conditions.append(cond)
        return Conjunct(cj.subject, tuple(conditions))

    def _resolve_condition(self, path: str, rc: P.RawCondition, scope: str,
                           sub_type: Optional[str]) -> Optional[Condition]:
        if rc.kind == "invariant-label":
            atom = self._resolve_label_ref(path, rc.pos, rc.name, scope, sub_type)
            return Invariant(atom) if atom is not None else None
        if rc.kind == "invariant-state":
            proto = self._resolve_protocol_ref(path, rc.pos, rc.name, scope, sub_type)
            if proto is None:
                return None
            return Invariant(StateAtom(proto.owner, proto.name, rc.source))
        residence = tuple(tuple(p) for p in rc.residence)
        if residence and sub_type is not None:
            for p in residence:
                if not self.program.resolve_resource_path(sub_type, p):
                    self.error(path, rc.pos,
                               f"unknown residence resource '{'.'.join(p)}' on type '{sub_type}'")
        if rc.kind == "add":
            if "@" in rc.name or rc.source:
                # +p@s: a state established on a fresh value.
                proto = self._resolve_protocol_ref(path, rc.pos, rc.name, scope, sub_type)
                if proto is None:
                    return None
                return AddLabel(StateAtom(proto.owner, proto.name, rc.source), residence)
            atom = self._resolve_label_ref(path, rc.pos, rc.name, scope, sub_type)
            if atom is None:
                return None
            return AddLabel(atom, residence)
        if rc.kind == "transition":
            proto = self._resolve_protocol_ref(path, rc.pos, rc.name, scope, sub_type)
            if proto is None:
                return None
            return Transition(proto.owner, proto.name, rc.source, rc.target, residence)
        raise AssertionError(rc.kind)

    def _resolve_label_ref(self, path: str, pos: Pos, name: str, scope: str,
                           sub_type: Optional[str]) -> Optional[LabelAtom]:
        candidates = self.program.resolve_label(name, scope)
        if not candidates and sub_type is not None:
            candidates = self.program.resolve_label(name, sub_type)
        if not candidates and "." not in name:
            candidates = self.program.resolve_label(name, None)
        if not candidates:
            self.error(path, pos, f"unresolved label '{name}'")
            return None
        if len(candidates) > 1:
            self.error(path, pos, "ambiguous label '" + name + "': " +
                       ", ".join(a.text() for a in sorted(candidates, key=lambda a: a.owner)))
            return None
        atom = candidates[0]
        if sub_type is not None:
            self._check_carrier(path, pos, atom, sub_type)
        return atom

    def _check_carrier(self, path: str, pos: Pos, atom: LabelAtom, sub_type: str) -> None:
        decl_carriers: Optional[tuple[str, ...]] = None
        u = self.program.units.get(atom.owner)
        if u is None:
            return
        for ld in u.labels:
            if atom.name in ld.names:
                decl_carriers = ld.carriers or (atom.owner,)
                break
        if decl_carriers is None:
            return
        if not any(self.program.is_subtype(sub_type, c) for c in decl_carriers):
            self.error(path, pos,
                       f"label '{atom.text()}' does not apply to type '{sub_type}' "
                       f"(carriers: {', '.join(decl_carriers)})")

    def _resolve_protocol_ref(self, path: str, pos: Pos, name: str, scope: str,
                              sub_type: Optional[str]) -> Optional[ProtocolDecl]:
        candidates = self.program.resolve_protocol(name, scope)
        if not candidates and sub_type is not None:
            candidates = self.program.resolve_protocol(name, sub_type)
        if not candidates and "." not in name:
            candidates = self.program.resolve_protocol(name, None)
        if not candidates:
            self.error(path, pos, f"unresolved protocol '{name}'")
            return None
        firsts = {(p.owner, p.name) for p in candidates}
        if len(firsts) > 1:
            self.error(path, pos, f"ambiguous protocol '{name}'")
            return None
        return candidates[0]

    def _resolve_target(self, path: str, rt: P.RawTarget, this_type: str,
                        arg_types: dict[str, str], pos: Pos) -> Optional[MutationTarget]:
        if rt.root == "this":
            t = this_target(tuple(rt.path))
            if not self.program.resolve_resource_path(this_type, t.path):
                self.error(path, rt.pos, f"unknown resource '{t.text()}'")
                return None
            return t
        if rt.root == "any":
            if rt.name not in self.program.units:
                self.error(path, rt.pos, f"unknown type '{rt.name}' in any(...) target")
                return None
            t = any_target(rt.name, tuple(rt.path))
            if not self.program.resolve_resource_path(rt.name, t.path):
                self.error(path, rt.pos, f"unknown resource '{t.text()}'")
            return t
        if rt.name in arg_types:
            t = var_target(rt.name, tuple(rt.path))
            if not self.program.resolve_resource_path(arg_types[rt.name], t.path):
                self.error(path, rt.pos, f"unknown resource '{t.text()}'")
            return t
        fld = self.program.find_field(this_type, rt.name)
        if fld is not None:
            t = this_target((rt.name,) + tuple(rt.path))
            if rt.path and not self.program.resolve_resource_path(fld.type, tuple(rt.path)):
                self.error(path, rt.pos, f"unknown resource '{'.'.join(rt.path)}' on '{fld.type}'")
            return t
        # A bare resource of the declaring class.
        t = this_target((rt.name,) + tuple(rt.path))
        if self.program.resolve_resource_path(this_type, t.path):
            return t
        self.error(path, rt.pos, f"unresolved mutation target '{rt.name}'")
        return None


# -- external overlay ----------------------------------------------------------


def overlay_externals(program: Program) -> Program:
    """Merge every external declaration onto its target method."""
    sink = program.diagnostics
    for cname in sorted(program.units):
        unit = program.units[cname]
        for ex in unit.externals:
            path = program.unit_paths.get(cname, "<unknown>")
            target_unit = program.units.get(ex.target_type)
            if target_unit is None:
                sink.error(path, ex.pos.line, ex.pos.col, E_RES,
                           f"external names unknown type '{ex.target_type}'")
                continue
            target = _find_target_method(program, ex)
            if target is None:
                sink.error(path, ex.pos.line, ex.pos.col, E_RES,
                           f"dangling external: no method matches "
                           f"'{ex.target_type}.{ex.method.name}"
                           f"({', '.join(a.type for a in ex.method.args)})'")
                continue
            conflict = _overlay_conflict(program, ex)
            if conflict:
                sink.error(path, ex.pos.line, ex.pos.col, E_RES, conflict)
                continue
            _merge_external(target, ex)
    _collect_protocol_states(program)
    _validate_queries(program)
    return program


def _find_target_method(program: Program, ex: ExternalDecl) -> Optional[MethodSpec]:
    unit = program.units[ex.target_type]
    want = [a.type for a in ex.method.args]
    pool = [m for m in unit.methods
            if m.is_constructor == ex.method.is_constructor
            and (m.is_constructor or m.name == ex.method.name)]
    for m in pool:
        if [a.type for a in m.args] == want:
            return m
    return None


def _overlay_conflict(program: Program, ex: ExternalDecl) -> Optional[str]:
    """A transition on a protocol whose carriers exclude the subject type."""
    arg_types = {a.name: a.type for a in ex.method.args}
    for cj in ex.method.conjuncts + tuple(c for g in ex.method.optional_groups for c in g):
        if cj.subject == "this":
            sub_type: Optional[str] = ex.target_type
        elif cj.subject == "result":
            sub_type = ex.method.return_type
        else:
            sub_type = arg_types.get(cj.subject)
        for cond in cj.conditions:
            proto: Optional[tuple[str, str]] = None
            if isinstance(cond, Transition):
                proto = (cond.owner, cond.protocol)
            elif isinstance(cond, (Invariant, AddLabel)) and isinstance(cond.atom, StateAtom):
                proto = (cond.atom.owner, cond.atom.protocol)
            if proto is None or sub_type is None:
                continue
            owner_unit = program.units.get(proto[0])
            if owner_unit is None:
                continue
            for pd in owner_unit.protocols:
                if pd.name == proto[1]:
                    carriers = pd.carriers or (pd.owner,)
                    if not any(program.is_subtype(sub_type, c) for c in carriers):
                        return (f"conflicting overlay: protocol '{proto[1]}' cannot be "
                                f"carried by '{sub_type}' (carriers: {', '.join(carriers)})")
    return None


def _merge_external(target: MethodSpec, ex: ExternalDecl) -> None:
    rename = {ea.name: ta.name for ea, ta in zip(ex.method.args, target.args)}

    def rn(cj: Conjunct) -> Conjunct:
        return Conjunct(rename.get(cj.subject, cj.subject), cj.conditions)

    merged = [rn(cj) for cj in ex.method.conjuncts
              if rn(cj) not in target.conjuncts]
    target.conjuncts = target.conjuncts + tuple(merged)
    target.optional_groups = target.optional_groups + tuple(
        tuple(rn(cj) for cj in g) for g in ex.method.optional_groups)
    target.merged_externals = target.merged_externals + (ex.declared_in,)


def _collect_protocol_states(program: Program) -> None:
    """Fill each protocol's state list from usage, in first-seen order."""
    for pname in sorted(program.units):
        unit = program.units[pname]
        for pd in unit.protocols:
            states: list[str] = []

            def note(s: str) -> None:
                if s not in states:
                    states.append(s)

            for cname in sorted(program.units):
                for m in program.units[cname].methods:
                    for cj in m.conjuncts + tuple(c for g in m.optional_groups for c in g):
                        for cond in cj.conditions:
                            if isinstance(cond, Transition) and \
                                    (cond.owner, cond.protocol) == (pd.owner, pd.name):
                                note(cond.source)
                                note(cond.target)
                            elif isinstance(cond, (Invariant, AddLabel)) and \
                                    isinstance(cond.atom, StateAtom) and \
                                    (cond.atom.owner, cond.atom.protocol) == (pd.owner, pd.name):
                                note(cond.atom.state)
            pd.states = tuple(states)


def _validate_queries(program: Program) -> None:
    """Check every query goal resolves; positions flow into diagnostics."""
    from .model import UnknownGoal

    for cname in sorted(program.units):
        unit = program.units[cname]
        path = program.unit_paths.get(cname, "<unknown>")
        for m in unit.methods:
            if m.body is None:
                continue
            env = {a.name: a.type for a in m.args}
            for query, pos in iter_queries(m.body, env):
                subject = query.produce_type if query.kind == "produce" \
                    else env.get(query.target_var or "")
                if query.kind == "produce" and subject not in program.units \
                        and subject not in PRIMITIVES:
                    program.diagnostics.error(path, pos.line, pos.col, E_RES,
                                              f"unknown type '{subject}' in #produce")
                    continue
                if query.kind == "transform" and subject is None:
                    fld = program.find_field(cname, query.target_var or "")
                    if fld is None:
                        program.diagnostics.error(
                            path, pos.line, pos.col, E_RES,
                            f"#transform names unknown variable '{query.target_var}'")
                        continue
                    subject = fld.type
                try:
                    program.normalize_goal(query.goal_text, subject, cname)
                except UnknownGoal as e:
                    program.diagnostics.error(path, pos.line, pos.col, E_RES, str(e))


def iter_queries(stmts: list[Stmt], env: dict[str, str]):
    """Yield (query, pos) in statement order, tracking local declarations."""
    for s in stmts:
        if isinstance(s, VarDeclStmt):
            if isinstance(s.init, Query):
                yield s.init, s.pos
            env[s.name] = s.type
            if s.span:
                yield from iter_queries(s.span, env)
        elif isinstance(s, QueryStmt):
            yield s.query, s.pos
            if s.span:
                yield from iter_queries(s.span, env)
        elif hasattr(s, "body"):
            yield from iter_queries(s.body, env)
        elif hasattr(s, "value") and isinstance(getattr(s, "value"), Query):
            yield s.value, s.pos


def parse_sources(sources: list[tuple[str, str]], sink: DiagnosticSink) -> list[tuple[str, list[P.RawClass]]]:
    """Parse (path, text) pairs, reporting syntax errors to the sink."""
    parsed = []
    for path, text in sources:
        try:
            parsed.append((path, P.parse_unit(text)))
        except P.SyntaxIssue as e:
            sink.error(path, e.pos.line, e.pos.col, E_SYN, e.message)
    return parsed


def load_program(sources: list[tuple[str, str]],
                 sink: Optional[DiagnosticSink] = None) -> Program:
    """Parse, resolve and overlay a set of sources."""
    sink = sink if sink is not None else DiagnosticSink()
    parsed = parse_sources(sources, sink)
    program = Resolver(parsed, sink).resolve()
    if not sink.has_errors:
        overlay_externals(program)
    return program
