"""Backward partial-order planning over corpus operations.

A plan is refined from the pair of pseudo-actions start/finish by repeatedly
picking an open precondition, enumerating achievers (existing values first,
then in-plan effects, then fresh corpus actions), adding causal links and
ordering constraints, and resolving threats by promotion or demotion.
Iterative deepening over the real-action count makes the first solution a
shortest one; all tie-breaks are total orders, so planning is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

from .config import SearchConfig
from .effects import (
    QueryContext, paths_comparable, result_atoms, subject_effects,
    subject_preconditions,
)
from .model import (
    Atom, FieldDecl, MethodSpec, MutationTarget, PRIMITIVES, Program,
    ResourcePath, StateAtom, UniquenessKind, any_target, this_target,
    var_target,
)

KIND = UniquenessKind

START = 0
FINISH = 1


class PlanFailure(Exception):
    def __init__(self, message: str, explored: int = 0):
        super().__init__(message)
        self.message = message
        self.explored = explored


class NoSolution(PlanFailure):
    pass


class BudgetExhausted(PlanFailure):
    pass


class WithUnsatisfiable(PlanFailure):
    pass


class AmbiguousSolution(PlanFailure):
    pass


class CyclicOrder(Exception):
    """Internal invariant breach: the ordering relation acquired a cycle."""


@dataclass(frozen=True)
class ActionSpec:
    kind: str  # "ctor" | "invoke" | "fieldread"
    owner: str
    member: str
    group: Optional[int]
    method: Optional[MethodSpec] = field(default=None, compare=False)
    fld: Optional[FieldDecl] = field(default=None, compare=False)

    @property
    def key(self) -> tuple:
        return (self.owner, self.member, self.kind, -1 if self.group is None else self.group)

    def label(self) -> str:
        g = f" (option {self.group + 1})" if self.group is not None else ""
        if self.kind == "ctor":
            return f"new {self.owner}(){g}"
        if self.kind == "fieldread":
            return f"read {self.owner}.{self.member}"
        return f"{self.owner}.{self.member}(){g}"


@dataclass
class PlanObject:
    oid: int
    need_type: str
    ctx_name: Optional[str] = None
    producer: Optional[int] = None  # aid of the creating action
    actual_type: Optional[str] = None
    kind: UniquenessKind = KIND.UNIQUE
    fresh: bool = True

    @property
    def bound(self) -> bool:
        return self.ctx_name is not None or self.producer is not None

    @property
    def type(self) -> str:
        return self.actual_type or self.need_type


@dataclass(frozen=True)
class PCond:
    oid: int
    atom: Optional[Atom]

    def text(self) -> str:
        return self.atom.text() if self.atom is not None else "<exists>"


@dataclass(frozen=True)
class CausalLink:
    producer: int
    cond: PCond
    consumer: int
    residence: tuple[ResourcePath, ...] = ()


@dataclass
class PlanAction:
    aid: int
    spec: Optional[ActionSpec]
    receiver: Optional[int] = None
    args: tuple[int, ...] = ()
    result: Optional[int] = None


@dataclass
class Plan:
    actions: dict[int, PlanAction] = field(default_factory=dict)
    objects: dict[int, PlanObject] = field(default_factory=dict)
    orderings: set = field(default_factory=set)
    links: list[CausalLink] = field(default_factory=list)
    open_conds: list[tuple[PCond, int]] = field(default_factory=list)
    next_oid: int = 0
    next_aid: int = 2
    goal_oid: int = -1

    def clone(self) -> "Plan":
        p = Plan(
            actions={k: replace(v) for k, v in self.actions.items()},
            objects={k: replace(v) for k, v in self.objects.items()},
            orderings=set(self.orderings),
            links=list(self.links),
            open_conds=list(self.open_conds),
            next_oid=self.next_oid,
            next_aid=self.next_aid,
            goal_oid=self.goal_oid,
        )
        return p

    def real_actions(self) -> list[PlanAction]:
        return [a for aid, a in sorted(self.actions.items())
                if aid not in (START, FINISH)]

    def new_object(self, need_type: str) -> PlanObject:
        obj = PlanObject(self.next_oid, need_type)
        self.objects[self.next_oid] = obj
        self.next_oid += 1
        return obj

    def add_ordering(self, before: int, after: int) -> bool:
        """Insert a strict ordering; False when it would close a cycle."""
        if before == after:
            return False
        if (after, before) in self.orderings:
            return False
        self.orderings.add((before, after))
        if self._cyclic():
            self.orderings.discard((before, after))
            return False
        return True

    def ordered(self, before: int, after: int) -> bool:
        """Whether `before` must precede `after` (transitively)."""
        seen = set()
        stack = [before]
        succ: dict[int, list[int]] = {}
        for a, b in self.orderings:
            succ.setdefault(a, []).append(b)
        while stack:
            n = stack.pop()
            if n == after:
                return True
            if n in seen:
                continue
            seen.add(n)
            stack.extend(succ.get(n, ()))
        return False

    def _cyclic(self) -> bool:
        succ: dict[int, list[int]] = {}
        for a, b in self.orderings:
            succ.setdefault(a, []).append(b)
        color: dict[int, int] = {}

        def visit(n: int) -> bool:
            color[n] = 1
            for nb in succ.get(n, ()):
                c = color.get(nb)
                if c == 1:
                    return True
                if c is None and visit(nb):
                    return True
            color[n] = 2
            return False

        return any(visit(n) for n in list(succ) if n not in color)

    def linearize(self) -> list[int]:
        """Topological order, lexicographically least by action id."""
        aids = sorted(self.actions)
        preds: dict[int, set[int]] = {aid: set() for aid in aids}
        for a, b in self.orderings:
            if a in preds and b in preds:
                preds[b].add(a)
        out: list[int] = []
        ready = [aid for aid in aids if not preds[aid]]
        while ready:
            ready.sort()
            n = ready.pop(0)
            out.append(n)
            for aid in aids:
                if n in preds[aid]:
                    preds[aid].discard(n)
                    if not preds[aid] and aid not in out and aid not in ready:
                        ready.append(aid)
        if len(out) != len(aids):
            raise CyclicOrder("ordering constraints contain a cycle")
        return out

    def fingerprint(self) -> tuple:
        """Search-progress signature: which operations are in the plan and
        which conditions are still open (with multiplicity)."""
        specs = frozenset(a.spec.key for a in self.real_actions() if a.spec)
        opens = tuple(sorted((c.text(), self.objects[c.oid].need_type)
                             for c, _ in self.open_conds))
        return (specs, opens)


@dataclass
class PlanResult:
    plan: Plan
    program: Program
    ctx: QueryContext
    goal: Atom
    explored: int
    rejected_threats: int
    chosen_groups: dict[int, int]
    solution_targets: frozenset = frozenset()

    def action_count(self) -> int:
        return len(self.plan.real_actions())


# ---------------------------------------------------------------------------
# Achiever enumeration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Candidate:
    kind: str  # "ctx" | "link" | "merge" | "new"
    ctx_name: str = ""
    producer: int = -1
    spec: Optional[ActionSpec] = field(default=None, compare=False)
    via: str = "result"  # how a new action achieves: "result" | "this" | arg name
    spec_key: tuple = ()
    sort_key: tuple = ()


def action_universe(program: Program) -> list[ActionSpec]:
    out: list[ActionSpec] = []
    for cname in sorted(program.units):
        unit = program.units[cname]
        for m in unit.methods:
            groups: list[Optional[int]] = [None]
            groups.extend(range(len(m.optional_groups)))
            for g in groups:
                if m.is_constructor:
                    if not unit.is_abstract and not unit.is_interface:
                        out.append(ActionSpec("ctor", cname, cname, g, method=m))
                else:
                    # Abstract methods stay callable through a receiver.
                    out.append(ActionSpec("invoke", cname, m.name, g, method=m))
        for f in unit.fields:
            if f.is_static:
                out.append(ActionSpec("fieldread", cname, f.name, None, fld=f))
    return out


def spec_result_type(spec: ActionSpec) -> Optional[str]:
    if spec.kind == "fieldread":
        return spec.fld.type
    if spec.method.is_constructor:
        return spec.method.declared_in
    rt = spec.method.return_type
    return None if rt == "void" else rt


def spec_result_atoms(spec: ActionSpec) -> list[tuple[Atom, tuple[ResourcePath, ...]]]:
    if spec.kind == "fieldread":
        return [(a, ()) for a in spec.fld.labels]
    return result_atoms(spec.method, spec.group)


def spec_subject_effects(spec: ActionSpec):
    if spec.kind == "fieldread":
        return []
    return subject_effects(spec.method, spec.group)


def spec_preconditions(spec: ActionSpec) -> list[tuple[str, Atom]]:
    if spec.kind == "fieldread":
        return []
    return subject_preconditions(spec.method, spec.group)


def spec_summary(program: Program, spec: ActionSpec) -> frozenset[MutationTarget]:
    if spec.kind == "fieldread" or spec.method is None:
        return frozenset()
    return program.effective_summary(spec.method)


def can_substitute(program: Program, value_type: str, value_labels: set,
                   need_type: str, need_labels: set) -> bool:
    """An existing value stands in for a requirement when its type is a
    subtype and its labels are a superset."""
    return program.is_subtype(value_type, need_type) and need_labels <= set(value_labels)


def useful(program: Program, candidate: tuple[str, frozenset, UniquenessKind, frozenset],
           existing: list[tuple[str, frozenset, UniquenessKind, frozenset]]) -> bool:
    """Whether a new value offers anything over the existing ones: a new
    type, a new type/label combination, a stronger uniqueness kind, or a
    smaller/new residence set for some combination."""
    ctype, clabels, ckind, cres = candidate
    if not any(e[0] == ctype for e in existing):
        return True
    strength = {KIND.NORMAL: 0, KIND.MAINTAIN_RETAINS: 1, KIND.MAINTAIN: 2,
                KIND.UNIQUE_RETAINS: 3, KIND.UNIQUE: 4}
    for etype, elabels, ekind, eres in existing:
        if etype == ctype and clabels <= elabels:
            if strength[ckind] > strength[ekind]:
                return True  # stronger kind for an existing combination
            if cres and (not eres or (set(cres) < set(eres))):
                return True  # smaller or new residence set
            if cres and eres and not set(cres) <= set(eres) and set(cres) != set(eres):
                return True  # a different residence set is new information
            return False
    return True  # new type/label combination


# ---------------------------------------------------------------------------
# The planner
# ---------------------------------------------------------------------------

class Planner:
    def __init__(self, program: Program, ctx: QueryContext, cfg: SearchConfig):
        self.program = program
        self.ctx = ctx
        self.cfg = cfg
        self.universe = action_universe(program)
        self.explored = 0
        self.rejected_threats = 0
        self.enclosing_summary = program.effective_summary(ctx.method)
        self.enclosing_var_types = {a.name: a.type for a in ctx.method.args}
        self.spans = [s for s in ctx.spans if s.protected_resource]
        query = ctx.query
        subject_type = query.produce_type
        if query.kind == "transform":
            tv = ctx.values.get(query.target_var or "")
            subject_type = tv.type if tv else None
        self.goal = program.normalize_goal(query.goal_text, subject_type, ctx.unit)
        self._check_with_names()

    # -- setup -------------------------------------------------------------

    def _check_with_names(self) -> None:
        for name in self.ctx.query.with_names:
            if self._universe_mentions(name):
                continue
            raise WithUnsatisfiable(
                f"with-clause element '{name}' matches nothing in the corpus")

    def _universe_mentions(self, name: str) -> bool:
        if name in self.program.units:
            return True
        for spec in self.universe:
            if spec.member == name or spec.owner == name:
                return True
            for atom, _ in spec_result_atoms(spec):
                if getattr(atom, "name", None) == name:
                    return True
            for _, atom, _, _ in spec_subject_effects(spec):
                if getattr(atom, "name", None) == name:
                    return True
        return False

    def initial_plan(self) -> Plan:
        plan = Plan()
        plan.actions[START] = PlanAction(START, None)
        plan.actions[FINISH] = PlanAction(FINISH, None)
        plan.orderings.add((START, FINISH))
        query = self.ctx.query
        if query.kind == "produce":
            goal_obj = plan.new_object(query.produce_type or "Object")
        else:
            goal_obj = plan.new_object("Object")
            self._bind_ctx(plan, goal_obj, query.target_var or "")
        plan.goal_oid = goal_obj.oid
        plan.open_conds.append((PCond(goal_obj.oid, self.goal), FINISH))
        return plan

    def _bind_ctx(self, plan: Plan, obj: PlanObject, name: str) -> None:
        st = self.ctx.values.get(name)
        obj.ctx_name = name
        obj.actual_type = st.type if st else obj.need_type
        obj.kind = st.kind if st else KIND.NORMAL
        obj.fresh = False

    # -- public entry -----------------------------------------------------------

    def plan(self) -> PlanResult:
        solutions = self._solve(want=2 if self.cfg.require_unique_solution else 1)
        if not solutions:
            raise NoSolution(
                f"no solution within length {self.cfg.max_plan_length} "
                f"(explored {self.explored} plans)", self.explored)
        if self.cfg.require_unique_solution and len(solutions) > 1:
            raise AmbiguousSolution(
                f"{len(solutions)} distinct minimal solutions", self.explored)
        plan = solutions[0]
        groups = {a.aid: a.spec.group for a in plan.real_actions()
                  if a.spec and a.spec.group is not None}
        return PlanResult(plan, self.program, self.ctx, self.goal,
                          self.explored, self.rejected_threats, groups,
                          frozenset(self.visible_targets(plan)))

    def _solve(self, want: int) -> list[Plan]:
        found: list[Plan] = []
        signatures: set = set()
        for depth in range(0, self.cfg.max_plan_length + 1):
            for solution in self._dfs(self.initial_plan(), depth, frozenset()):
                sig = self._solution_signature(solution)
                if sig in signatures:
                    continue
                signatures.add(sig)
                found.append(solution)
                if len(found) >= want:
                    return found
            if found:
                return found
        return found

    def _solution_signature(self, plan: Plan) -> tuple:
        parts = []
        for aid in plan.linearize():
            a = plan.actions[aid]
            if a.spec is None:
                continue
            parts.append((a.spec.key,
                          self._obj_sig(plan, a.receiver),
                          tuple(self._obj_sig(plan, o) for o in a.args)))
        return tuple(parts)

    def _obj_sig(self, plan: Plan, oid: Optional[int]):
        if oid is None:
            return None
        obj = plan.objects[oid]
        return obj.ctx_name if obj.ctx_name else ("#", obj.producer)

    # -- search ------------------------------------------------------------------

    def choose_precondition(self, plan: Plan, depth_left: int):
        """Pick the open precondition to work on: zero-candidate conditions
        first (to fail fast), then fewest candidates, ties broken by the
        deterministic condition ordering."""
        per_cond = []
        for i, (cond, consumer) in enumerate(plan.open_conds):
            cands = self._candidates(plan, cond, consumer, depth_left)
            per_cond.append((len(cands), cond.text(), cond.oid, consumer, i, cands))
        per_cond.sort(key=lambda t: (t[0] != 0, t[0], t[1], t[2], t[3]))
        _, _, _, _, idx, cands = per_cond[0]
        return idx, cands

    def _dfs(self, plan: Plan, depth_left: int, branch: frozenset) -> Iterator[Plan]:
        if not plan.open_conds:
            if self._solution_ok(plan):
                yield plan
            return
        idx, cands = self.choose_precondition(plan, depth_left)
        if not cands:
            return  # fail quickly and backtrack
        cond, consumer = plan.open_conds[idx]
        for cand in cands:
            if self.explored >= self.cfg.plan_budget:
                raise BudgetExhausted(
                    f"budget of {self.cfg.plan_budget} explored plans exhausted",
                    self.explored)
            successor = self._apply(plan, idx, cond, consumer, cand)
            if successor is None:
                continue
            self.explored += 1
            fp = successor.fingerprint()
            if detect_stagnation(branch, fp):
                continue
            spent = 1 if cand.kind == "new" else 0
            yield from self._dfs(successor, depth_left - spent, branch | {fp})

    # -- candidate enumeration ---------------------------------------------------

    def _candidates(self, plan: Plan, cond: PCond, consumer: int,
                    depth_left: int) -> list[Candidate]:
        obj = plan.objects[cond.oid]
        out: list[Candidate] = []
        need_labels = {cond.atom} if cond.atom is not None else set()

        if obj.ctx_name is not None:
            st = self.ctx.values.get(obj.ctx_name)
            have = set(st.labels) if st else set()
            if cond.atom is None or cond.atom in have:
                out.append(self._mk(plan, cond, Candidate("ctx", ctx_name=obj.ctx_name)))
        elif obj.producer is not None:
            producer = plan.actions[obj.producer]
            atoms = {a for a, _ in spec_result_atoms(producer.spec)}
            if cond.atom is None or cond.atom in atoms:
                out.append(self._mk(plan, cond, Candidate("link", producer=obj.producer)))
        else:
            # Reuse an existing context value.
            offered: list[tuple[str, frozenset]] = []
            for name, st in sorted(self.ctx.values.items(),
                                   key=lambda kv: kv[1].declared_order):
                if st.consumed or (st.variable == "this" and st.fresh):
                    continue
                if not can_substitute(self.program, st.type, st.labels,
                                      obj.need_type, need_labels):
                    continue
                sig = (st.type, frozenset(st.labels))
                if sig in offered:
                    continue  # equivalent values: earliest declaration wins
                offered.append(sig)
                out.append(self._mk(plan, cond, Candidate("ctx", ctx_name=name)))
            # Reuse a value the plan already creates.
            for aid in sorted(plan.actions):
                a = plan.actions[aid]
                if a.spec is None or a.result is None:
                    continue
                rt = spec_result_type(a.spec)
                atoms = {x for x, _ in spec_result_atoms(a.spec)}
                if rt is None or not self.program.is_subtype(rt, obj.need_type):
                    continue
                if cond.atom is not None and cond.atom not in atoms:
                    continue
                out.append(self._mk(plan, cond, Candidate("merge", producer=aid)))

        # In-plan actions adding the atom to this very object.
        if cond.atom is not None:
            for aid in sorted(plan.actions):
                a = plan.actions[aid]
                if a.spec is None:
                    continue
                for subject, atom, _, _ in spec_subject_effects(a.spec):
                    if atom != cond.atom:
                        continue
                    soid = a.receiver if subject == "this" else self._arg_oid(a, subject)
                    if soid == cond.oid:
                        out.append(self._mk(plan, cond, Candidate("link", producer=aid)))

        # Fresh corpus actions.
        if depth_left > 0:
            for spec in self.universe:
                for via in self._achieves(spec, cond, plan):
                    if not self._span_admits(spec):
                        continue
                    if not self._policy_admits(spec):
                        continue
                    out.append(self._mk(plan, cond,
                                        Candidate("new", spec=spec, via=via,
                                                  spec_key=spec.key)))

        out = self._filter_precedence(out)
        out.sort(key=lambda c: c.sort_key)
        return out

    def _arg_oid(self, action: PlanAction, subject: str) -> Optional[int]:
        if action.spec is None or action.spec.method is None:
            return None
        for i, a in enumerate(action.spec.method.args):
            if a.name == subject and i < len(action.args):
                return action.args[i]
        return None

    def _achieves(self, spec: ActionSpec, cond: PCond, plan: Plan) -> list[str]:
        obj = plan.objects[cond.oid]
        ways: list[str] = []
        rt = spec_result_type(spec)
        if not obj.bound and rt is not None \
                and self.program.is_subtype(rt, obj.need_type):
            atoms = {a for a, _ in spec_result_atoms(spec)}
            if cond.atom is None or cond.atom in atoms:
                if self._useful_result(spec, rt):
                    ways.append("result")
        if cond.atom is not None and spec.method is not None:
            recv_type = spec.method.declared_in
            for subject, atom, _, _ in spec_subject_effects(spec):
                if atom != cond.atom:
                    continue
                if subject == "this":
                    if self.program.is_subtype(obj.type, recv_type) \
                            or self.program.is_subtype(recv_type, obj.type):
                        ways.append("this")
                else:
                    arg = spec.method.arg_named(subject)
                    if arg is not None and (
                            self.program.is_subtype(obj.type, arg.type)
                            or self.program.is_subtype(arg.type, obj.type)):
                        ways.append(subject)
        return ways

    def _useful_result(self, spec: ActionSpec, rt: str) -> bool:
        atoms = frozenset(a for a, _ in spec_result_atoms(spec))
        residence: list[ResourcePath] = []
        for _, res in spec_result_atoms(spec):
            residence.extend(res)
        existing = []
        for name, st in self.ctx.values.items():
            if st.consumed:
                continue
            res: list[ResourcePath] = []
            for paths in st.residence.values():
                res.extend(paths)
            existing.append((st.type, frozenset(st.labels), st.kind, frozenset(res)))
        return useful(self.program, (rt, atoms, KIND.UNIQUE, frozenset(residence)),
                      existing)

    def _filter_precedence(self, cands: list[Candidate]) -> list[Candidate]:
        def prec(c: Candidate) -> int:
            unit = self.program.units.get(c.spec.owner) if c.spec else None
            corpus = unit.precedence if unit else 0
            return max(corpus, self.cfg.api_precedence.get(c.spec.owner, 0)) if c.spec else 0

        new_precs = [prec(c) for c in cands if c.kind == "new"]
        if not new_precs:
            return cands
        top = max(new_precs)
        return [c for c in cands if c.kind != "new" or prec(c) == top]

    def _mk(self, plan: Plan, cond: PCond, c: Candidate) -> Candidate:
        with_names = self.ctx.query.with_names
        mentions = 1
        if with_names and c.spec is not None:
            names = {c.spec.owner, c.spec.member}
            names.update(a.name for a, _ in spec_result_atoms(c.spec)
                         if hasattr(a, "name"))
            if any(n in names for n in with_names):
                mentions = 0
        kind_rank = {"ctx": 0, "link": 0, "merge": 1, "new": 2}[c.kind]
        if c.kind == "new":
            locality = self._locality(c.spec)
            detail = (locality, c.spec.key, c.via)
        elif c.kind == "ctx":
            st = self.ctx.values.get(c.ctx_name)
            detail = (st.declared_order if st else 0, c.ctx_name, "")
        else:
            detail = (c.producer, "", "")
        return replace(c, sort_key=(mentions, kind_rank, detail))

    def _locality(self, spec: ActionSpec) -> int:
        if spec.owner == self.ctx.unit:
            return 0 if spec.kind == "fieldread" else 1
        return 2

    # -- span and summary-policy filters (candidate level) --------------------------

    def _span_admits(self, spec: ActionSpec) -> bool:
        if not self.spans:
            return True
        summary = spec_summary(self.program, spec)
        for t in summary:
            if t.root_kind != "any":
                continue
            for span in self.spans:
                protected = self.ctx.values.get(span.protected_variable)
                if protected is None or protected.kind.unshared:
                    continue
                if not self.program.is_subtype(protected.type, t.root_name):
                    continue
                if paths_comparable(self.program, protected.type, t.path,
                                    span.protected_resource):
                    return False
        return True

    def _policy_admits(self, spec: ActionSpec) -> bool:
        if self.cfg.summary_rewrite_policy == "rewrite":
            return True
        summary = spec_summary(self.program, spec)
        for t in summary:
            if t.root_kind != "any":
                continue
            if not any(self.program.target_covers(d, t, self.ctx.unit,
                                                  self.enclosing_var_types)
                       for d in self.enclosing_summary):
                return False
        return True

    # -- successor construction ------------------------------------------------------

    def _apply(self, plan: Plan, open_idx: int, cond: PCond, consumer: int,
               cand: Candidate) -> Optional[Plan]:
        p = plan.clone()
        del p.open_conds[open_idx]
        if cand.kind == "ctx":
            obj = p.objects[cond.oid]
            if obj.ctx_name is None:
                self._bind_ctx(p, obj, cand.ctx_name)
            st = self.ctx.values.get(cand.ctx_name)
            residence = tuple(st.residence.get(cond.atom, ())) if st and cond.atom else ()
            return self._commit_link(p, CausalLink(START, cond, consumer, residence))
        if cand.kind == "link":
            residence = self._effect_residence(p.actions[cand.producer].spec, cond.atom)
            if not p.add_ordering(cand.producer, consumer):
                return None
            return self._commit_link(p, CausalLink(cand.producer, cond, consumer, residence))
        if cand.kind == "merge":
            producer = p.actions[cand.producer]
            keep = producer.result
            self._merge_objects(p, cond.oid, keep)
            cond = PCond(keep, cond.atom)
            residence = self._effect_residence(producer.spec, cond.atom)
            if not p.add_ordering(cand.producer, consumer):
                return None
            return self._commit_link(p, CausalLink(cand.producer, cond, consumer, residence))
        return self._add_action(p, cond, consumer, cand)

    def _effect_residence(self, spec: Optional[ActionSpec],
                          atom: Optional[Atom]) -> tuple[ResourcePath, ...]:
        if spec is None or atom is None:
            return ()
        for a, res in spec_result_atoms(spec):
            if a == atom:
                return tuple(res)
        for _, a, res, _ in spec_subject_effects(spec):
            if a == atom:
                return tuple(res)
        return ()

    def _merge_objects(self, p: Plan, old: int, keep: int) -> None:
        def swap(oid: Optional[int]) -> Optional[int]:
            return keep if oid == old else oid

        for a in p.actions.values():
            a.receiver = swap(a.receiver)
            a.args = tuple(swap(o) for o in a.args)
            a.result = swap(a.result)
        p.links = [CausalLink(l.producer, PCond(swap(l.cond.oid), l.cond.atom),
                              l.consumer, l.residence) for l in p.links]
        p.open_conds = [(PCond(swap(c.oid), c.atom), consumer)
                        for c, consumer in p.open_conds]
        if p.goal_oid == old:
            p.goal_oid = keep
        del p.objects[old]

    def _add_action(self, p: Plan, cond: PCond, consumer: int,
                    cand: Candidate) -> Optional[Plan]:
        spec = cand.spec
        aid = p.next_aid
        p.next_aid += 1
        action = PlanAction(aid, spec)
        p.actions[aid] = action
        if not (p.add_ordering(START, aid) and p.add_ordering(aid, FINISH)):
            return None

        m = spec.method
        if spec.kind == "fieldread":
            result_obj = p.objects[cond.oid]
            result_obj.producer = aid
            result_obj.actual_type = spec.fld.type
            result_obj.kind = KIND.NORMAL
            result_obj.fresh = False
            action.result = cond.oid
        else:
            # Slot objects: receiver, args, result.
            recv_obj: Optional[PlanObject] = None
            if not m.is_constructor and not m.is_static:
                if cand.via == "this":
                    recv_obj = p.objects[cond.oid]
                    if self.program.is_subtype(m.declared_in, recv_obj.need_type):
                        recv_obj.need_type = m.declared_in
                else:
                    recv_obj = p.new_object(m.declared_in)
                action.receiver = recv_obj.oid
            arg_objs: list[PlanObject] = []
            for a in m.args:
                if cand.via == a.name:
                    obj = p.objects[cond.oid]
                    if self.program.is_subtype(a.type, obj.need_type):
                        obj.need_type = a.type
                    arg_objs.append(obj)
                else:
                    arg_objs.append(p.new_object(a.type))
            action.args = tuple(o.oid for o in arg_objs)
            rt = spec_result_type(spec)
            if rt is not None:
                if cand.via == "result":
                    result_obj = p.objects[cond.oid]
                    result_obj.producer = aid
                    result_obj.actual_type = rt
                    result_obj.kind = KIND.UNIQUE
                    result_obj.fresh = True
                    action.result = result_obj.oid
                else:
                    result_obj = p.new_object(rt)
                    result_obj.producer = aid
                    result_obj.actual_type = rt
                    action.result = result_obj.oid
            # New open preconditions: existence plus invariant atoms.
            if recv_obj is not None:
                p.open_conds.append((PCond(recv_obj.oid, None), aid))
            for obj in arg_objs:
                p.open_conds.append((PCond(obj.oid, None), aid))
            by_name = {a.name: i for i, a in enumerate(m.args)}
            for subject, atom in spec_preconditions(spec):
                if subject == "this" and recv_obj is not None:
                    p.open_conds.append((PCond(recv_obj.oid, atom), aid))
                elif subject in by_name:
                    p.open_conds.append((PCond(arg_objs[by_name[subject]].oid, atom), aid))

        if not p.add_ordering(aid, consumer):
            return None
        residence = self._effect_residence(spec, cond.atom)
        return self._commit_link(p, CausalLink(aid, cond, consumer, residence),
                                 new_action=aid)

    # -- threats -----------------------------------------------------------------

    def _commit_link(self, p: Plan, link: CausalLink,
                     new_action: Optional[int] = None) -> Optional[Plan]:
        p.links.append(link)
        # The new link against every action, and the new action (if any)
        # against every link.
        for a in p.actions.values():
            if a.spec is None:
                continue
            if not self._resolve_threat(p, a, link):
                self.rejected_threats += 1
                return None
        if new_action is not None:
            b = p.actions[new_action]
            for other in list(p.links):
                if not self._resolve_threat(p, b, other):
                    self.rejected_threats += 1
                    return None
        return p

    def _resolve_threat(self, p: Plan, b: PlanAction, link: CausalLink) -> bool:
        if b.aid in (link.producer, link.consumer):
            return True
        if not self._threatens(p, b, link):
            return True
        # Promotion: B before the producer; demotion: B after the consumer.
        trial = set(p.orderings)
        if p.add_ordering(b.aid, link.producer):
            return True
        p.orderings = set(trial)
        if p.add_ordering(link.consumer, b.aid):
            return True
        p.orderings = set(trial)
        return False

    def _threatens(self, p: Plan, b: PlanAction, link: CausalLink) -> bool:
        spec = b.spec
        cond = link.cond
        # State removal: a transition out of the condition's state on the
        # same object.
        if isinstance(cond.atom, StateAtom):
            for subject, _, _, removed in spec_subject_effects(spec):
                if removed != cond.atom:
                    continue
                soid = b.receiver if subject == "this" else self._arg_oid(b, subject)
                if soid == cond.oid:
                    return True
        # Residence mutation.
        if not link.residence:
            return False
        holder = p.objects.get(cond.oid)
        if holder is None:
            return False
        for t in spec_summary(self.program, spec):
            toid: Optional[int] = None
            if t.root_kind == "this":
                toid = b.receiver
            elif t.root_kind == "var":
                toid = self._arg_oid(b, t.root_name)
            if toid is None and t.root_kind != "any":
                continue
            if t.root_kind == "any":
                if holder.fresh or holder.kind.unshared:
                    continue
                if not self.program.is_subtype(holder.type, t.root_name):
                    continue
            elif toid != cond.oid:
                tobj = p.objects.get(toid)
                if tobj is None:
                    continue
                if tobj.fresh or tobj.kind.unshared or holder.fresh or holder.kind.unshared:
                    continue
                if not (self.program.is_subtype(tobj.type, holder.type)
                        or self.program.is_subtype(holder.type, tobj.type)):
                    continue
            for res in link.residence:
                if paths_comparable(self.program, holder.type, t.path, res):
                    return True
        return False

    # -- solution validation -------------------------------------------------------

    def _solution_ok(self, plan: Plan) -> bool:
        for obj in plan.objects.values():
            if not obj.bound:
                return False
        if not self._with_satisfied(plan):
            return False
        visible = self.visible_targets(plan)
        if self.cfg.summary_rewrite_policy == "reject":
            var_types = dict(self.enclosing_var_types)
            missing = self.program.summary_covers(
                self.enclosing_summary, frozenset(visible), self.ctx.unit, var_types)
            if missing:
                return False
        for action in plan.real_actions():
            for t in self._action_span_targets(plan, action):
                if self._target_hits_span(t):
                    return False
        try:
            plan.linearize()
        except CyclicOrder:
            return False
        return True

    def _with_satisfied(self, plan: Plan) -> bool:
        wanted = set(self.ctx.query.with_names)
        if not wanted:
            return True
        seen: set[str] = set()
        for a in plan.real_actions():
            seen.add(a.spec.owner)
            seen.add(a.spec.member)
            for atom, _ in spec_result_atoms(a.spec):
                if hasattr(atom, "name"):
                    seen.add(atom.name)
            for _, atom, _, _ in spec_subject_effects(a.spec):
                if hasattr(atom, "name"):
                    seen.add(atom.name)
        return wanted <= seen

    def visible_targets(self, plan: Plan) -> set[MutationTarget]:
        out: set[MutationTarget] = set()
        for action in plan.real_actions():
            out.update(self._action_visible_targets(plan, action))
        return out

    def _action_visible_targets(self, plan: Plan, action: PlanAction) -> set[MutationTarget]:
        """Mutations of one plan step as the enclosing method's caller sees
        them: plan-created values are invisible, context values keep their
        names or generalize by kind."""
        out: set[MutationTarget] = set()
        spec = action.spec
        if spec is None:
            return out
        m = spec.method
        by_index = {a.name: i for i, a in enumerate(m.args)} if m else {}
        for t in spec_summary(self.program, spec):
            if t.root_kind == "this":
                oid = action.receiver
                formal_type = m.declared_in if m else None
            elif t.root_kind == "var" and t.root_name in by_index:
                idx = by_index[t.root_name]
                oid = action.args[idx] if idx < len(action.args) else None
                formal_type = m.args[idx].type if m else None
            else:
                out.add(t)
                continue
            if oid is None:
                continue
            obj = plan.objects.get(oid)
            if obj is None or obj.fresh:
                continue
            if obj.ctx_name is None:
                continue
            st = self.ctx.values.get(obj.ctx_name)
            if st is None or st.fresh:
                continue
            if st.variable == "this":
                out.add(this_target(t.path))
            elif st.field_path is not None:
                out.add(this_target(st.field_path + t.path))
            elif st.is_field:
                continue  # unmanaged field: hidden state
            elif st.kind is KIND.NORMAL:
                out.add(any_target(formal_type or st.type, t.path))
            else:
                out.add(var_target(st.variable, t.path))
        return out

    def _action_span_targets(self, plan: Plan, action: PlanAction) -> set[MutationTarget]:
        """Mutations of one plan step for protection checking: named context
        values keep their identity even when freshly produced, since spans
        protect exactly those variables."""
        out: set[MutationTarget] = set()
        spec = action.spec
        if spec is None:
            return out
        m = spec.method
        by_index = {a.name: i for i, a in enumerate(m.args)} if m else {}
        for t in spec_summary(self.program, spec):
            if t.root_kind == "this":
                oid = action.receiver
                formal_type = m.declared_in if m else None
            elif t.root_kind == "var" and t.root_name in by_index:
                idx = by_index[t.root_name]
                oid = action.args[idx] if idx < len(action.args) else None
                formal_type = m.args[idx].type if m else None
            else:
                out.add(t)
                continue
            if oid is None:
                continue
            obj = plan.objects.get(oid)
            if obj is None:
                continue
            if obj.ctx_name is None:
                continue  # plan-created: brand new, aliases nothing protected
            st = self.ctx.values.get(obj.ctx_name)
            if st is None:
                continue
            if st.variable == "this":
                out.add(this_target(t.path))
            elif st.field_path is not None:
                out.add(this_target(st.field_path + t.path))
            elif st.is_field:
                continue
            else:
                out.add(var_target(st.variable, t.path))
        return out

    def _target_hits_span(self, t: MutationTarget) -> bool:
        for span in self.spans:
            protected = self.ctx.values.get(span.protected_variable)
            if protected is None:
                continue
            path = t.path
            if t.root_kind == "any":
                if protected.kind.unshared:
                    continue
                if not self.program.is_subtype(protected.type, t.root_name):
                    continue
            elif t.root_kind == "var":
                if t.root_name != span.protected_variable:
                    other = self.ctx.values.get(t.root_name)
                    if other is None or other.kind.unshared:
                        continue
                    if protected.kind.unshared:
                        continue
                    if not (self.program.is_subtype(other.type, protected.type)
                            or self.program.is_subtype(protected.type, other.type)):
                        continue
            else:
                # this-rooted: only a shareable field may alias the variable.
                if not path:
                    continue
                fld = self.program.find_field(self.ctx.unit, path[0])
                if fld is None or fld.uniqueness.unshared:
                    continue
                if protected.kind.unshared:
                    continue
                if not (self.program.is_subtype(fld.type, protected.type)
                        or self.program.is_subtype(protected.type, fld.type)):
                    continue
                path = path[1:]
            if paths_comparable(self.program, protected.type, path,
                                span.protected_resource):
                return True
        return False


def detect_stagnation(branch: frozenset, fingerprint: tuple) -> bool:
    """A repeat of an earlier fingerprint on the same branch means the search
    is re-creating conditions without progress."""
    return fingerprint in branch


def plan_query(program: Program, ctx: QueryContext, cfg: SearchConfig) -> PlanResult:
    return Planner(program, ctx, cfg).plan()


def candidate_actions(program: Program, ctx: QueryContext, cfg: SearchConfig):
    """Ranked achievers for a query's goal condition against a fresh plan."""
    planner = Planner(program, ctx, cfg)
    plan = planner.initial_plan()
    cond, consumer = plan.open_conds[0]
    return planner._candidates(plan, cond, consumer, cfg.max_plan_length)


# ---------------------------------------------------------------------------
# Plan explanation
# ---------------------------------------------------------------------------

def object_name(result: PlanResult, oid: Optional[int]) -> str:
    if oid is None:
        return "-"
    obj = result.plan.objects[oid]
    if obj.ctx_name:
        return obj.ctx_name
    return f"o{obj.oid}:{obj.type}"


def action_title(result: PlanResult, aid: int) -> str:
    if aid == START:
        return "start"
    if aid == FINISH:
        return "finish"
    a = result.plan.actions[aid]
    return a.spec.label()


def render_plan(result: PlanResult) -> str:
    plan = result.plan
    lines = [f"goal: {result.goal.text()}"]
    lines.append(f"actions ({len(plan.real_actions())}):")
    for aid in plan.linearize():
        if aid in (START, FINISH):
            continue
        a = plan.actions[aid]
        recv = object_name(result, a.receiver)
        args = ", ".join(object_name(result, o) for o in a.args)
        res = object_name(result, a.result)
        extra = f" -> {res}" if a.result is not None else ""
        grp = ""
        if a.spec.group is not None:
            grp = f" [option {a.spec.group + 1}]"
        lines.append(f"  [{aid}] {a.spec.label()}{grp} recv={recv} args=({args}){extra}")
    lines.append("causal links:")
    for l in sorted(plan.links, key=lambda l: (l.producer, l.consumer, l.cond.text())):
        lines.append(f"  {action_title(result, l.producer)} --{l.cond.text()}--> "
                     f"{action_title(result, l.consumer)}")
    lines.append("orderings:")
    for a, b in sorted(plan.orderings):
        lines.append(f"  {action_title(result, a)} < {action_title(result, b)}")
    lines.append(f"explored plans: {result.explored}")
    lines.append(f"rejected threats: {result.rejected_threats}")
    return "\n".join(lines)


def render_dot(result: PlanResult) -> str:
    """Graph description: square action nodes, rounded condition nodes,
    dashed edges for the sequential constraints."""
    plan = result.plan
    lines = ["digraph plan {"]
    for aid in sorted(plan.actions):
        lines.append(f'  a{aid} [shape=box label="{action_title(result, aid)}"];')
    cond_ids: dict[str, str] = {}
    for l in sorted(plan.links,
                    key=lambda l: (l.producer, l.consumer, l.cond.text())):
        label = f"{l.cond.text()} @ {object_name(result, l.cond.oid)}"
        cond_ids.setdefault(label, f"c{len(cond_ids)}")
    for label, cid in cond_ids.items():
        lines.append(f'  {cid} [shape=box style=rounded label="{label}"];')
    for l in sorted(plan.links, key=lambda l: (l.producer, l.consumer, l.cond.text())):
        label = f"{l.cond.text()} @ {object_name(result, l.cond.oid)}"
        cid = cond_ids[label]
        lines.append(f"  a{l.producer} -> {cid};")
        lines.append(f"  {cid} -> a{l.consumer};")
    for a, b in sorted(plan.orderings):
        lines.append(f"  a{a} -> a{b} [style=dashed];")
    lines.append("}")
    return "\n".join(lines)
