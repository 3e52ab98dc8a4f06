"""Batch driver: check, synthesize, verify upgrades, explain plans.

Exit codes: 0 clean, 1 violations or planning failures, 2 usage errors.
Diagnostics print one per line as `path:line:col: severity: code: message`.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional

from . import synth
from .config import SearchConfig, config_from_tree
from .diagnostics import Diagnostic, DiagnosticSink, E_PLAN
from .effects import QueryContext, check_program, query_contexts
from .model import AssignStmt, NameExpr, Program, VarDeclStmt
from .planner import PlanFailure, plan_query, render_dot, render_plan
from .resolver import load_program


def _collect_sources(paths: list[str]) -> list[tuple[str, str]]:
    sources = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            for f in sorted(p.rglob("*.pop")):
                sources.append((str(f), f.read_text()))
        elif p.is_file():
            sources.append((str(p), p.read_text()))
        else:
            raise FileNotFoundError(raw)
    if not sources:
        raise FileNotFoundError("no .pop sources found")
    return sources


def _tree_root(paths: list[str]) -> Path:
    first = Path(paths[0])
    return first if first.is_dir() else first.parent


def _config(args, paths: list[str]) -> SearchConfig:
    overrides: dict = {}
    if args.budget is not None:
        overrides["plan_budget"] = args.budget
    if args.max_len is not None:
        overrides["max_plan_length"] = args.max_len
    if args.rewrite_summaries:
        overrides["summary_rewrite_policy"] = "rewrite"
    if args.precedence:
        prec = {}
        for entry in args.precedence:
            name, _, num = entry.partition("=")
            if not num:
                raise ValueError(f"bad --precedence entry '{entry}'")
            prec[name] = int(num)
        overrides["api_precedence"] = prec
    return config_from_tree(_tree_root(paths), overrides)


def _load_or_fail(sources: list[tuple[str, str]]) -> tuple[Program, bool]:
    program = load_program(sources)
    return program, program.diagnostics.has_errors


def _all_query_contexts(program: Program):
    """(unit, method, context) triples in deterministic order."""
    for cname in sorted(program.units):
        unit = program.units[cname]
        for m in unit.methods:
            if m.body is None:
                continue
            contexts = query_contexts(program, unit, m)
            if contexts:
                yield unit, m, contexts


def cmd_check(args) -> int:
    sources = _collect_sources(args.paths)
    program, had_errors = _load_or_fail(sources)
    if had_errors:
        print(program.diagnostics.render())
        return 1
    violations = check_program(program)
    sink = DiagnosticSink()
    for v in violations:
        path = program.unit_paths.get(v.unit, "<unknown>")
        sink.error(path, v.pos.line, v.pos.col, v.code, v.text())
    if sink.items:
        print(sink.render())
        return 1
    return 0


def _query_id(program: Program, ctx: QueryContext) -> str:
    path = program.unit_paths.get(ctx.unit, ctx.unit)
    return f"{path}:{ctx.pos.line}"


def _solve_tree(program: Program, cfg: SearchConfig):
    """Plan every query; returns (solutions by stmt id, assumptions, failures)."""
    solutions: dict[int, synth.Solution] = {}
    assumptions: dict[str, list] = {}
    failures: list[Diagnostic] = []
    for unit, method, contexts in _all_query_contexts(program):
        pool = synth.NamePool(synth.method_declared_names(method))
        for ctx in contexts:
            path = program.unit_paths.get(ctx.unit, "<unknown>")
            try:
                result = plan_query(program, ctx, cfg)
            except PlanFailure as e:
                failures.append(Diagnostic(path, ctx.pos.line, ctx.pos.col,
                                           "error", E_PLAN,
                                           f"{type(e).__name__}: {e.message}"))
                continue
            site_name = site_type = None
            declare = True
            if isinstance(ctx.stmt, VarDeclStmt):
                site_name, site_type = ctx.stmt.name, ctx.stmt.type
            elif isinstance(ctx.stmt, AssignStmt) and \
                    isinstance(ctx.stmt.target, NameExpr):
                site_name = ctx.stmt.target.name
                declare = False
            stmts = synth.emit_statements(result, pool, site_name, site_type,
                                          declare=declare)
            solutions[id(ctx.stmt)] = synth.Solution(result, stmts)
            assumptions.setdefault(path, []).append((ctx, result))
    return solutions, assumptions, failures


def cmd_synth(args) -> int:
    sources = _collect_sources(args.paths)
    cfg = _config(args, args.paths)
    program, had_errors = _load_or_fail(sources)
    if had_errors:
        print(program.diagnostics.render())
        return 1
    solutions, per_path, failures = _solve_tree(program, cfg)
    if failures:
        sink = DiagnosticSink(failures)
        print(sink.render())
        return 1
    spliced = synth.splice_program(program, solutions)
    plain = synth.render_plain(spliced)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = synth.fingerprint_sources(sources)
    for path, text in sorted(plain.items()):
        (out_dir / (Path(path).stem + ".pop")).write_text(text)
    for path in sorted(per_path):
        items = []
        for ctx, result in per_path[path]:
            items.append(synth.emit_assumptions(result, _query_id(program, ctx),
                                                corpus, program))
        name = Path(path).stem + ".assume"
        (out_dir / name).write_text(synth.serialize_assumptions(items))
    return 0


def cmd_verify_upgrade(args) -> int:
    assume_dir = Path(args.assumptions)
    if not assume_dir.is_dir():
        raise FileNotFoundError(args.assumptions)
    sources = _collect_sources(args.paths)
    program, had_errors = _load_or_fail(sources)
    if had_errors:
        print(program.diagnostics.render())
        return 1
    failed = False
    for f in sorted(assume_dir.glob("*.assume")):
        for assumed in synth.parse_assumptions(f.read_text()):
            problems = synth.check_compat(assumed, program)
            if not problems:
                print(f"ok {assumed.query_id}")
            else:
                failed = True
                for p in problems:
                    print(f"incompatible {assumed.query_id}: {p.member}: "
                          f"{p.rule}: {p.message}")
    return 1 if failed else 0


def cmd_explain(args) -> int:
    sources = _collect_sources(args.paths)
    cfg = _config(args, args.paths)
    program, had_errors = _load_or_fail(sources)
    if had_errors:
        print(program.diagnostics.render())
        return 1
    wanted = args.explain
    target: Optional[QueryContext] = None
    for unit, method, contexts in _all_query_contexts(program):
        for ctx in contexts:
            qid = _query_id(program, ctx)
            if qid == wanted or qid.endswith(wanted) or \
                    f"{Path(program.unit_paths.get(ctx.unit, '')).name}:{ctx.pos.line}" == wanted:
                target = ctx
                break
        if target:
            break
    if target is None:
        print(f"no query matches id '{wanted}'", file=sys.stderr)
        return 2
    try:
        result = plan_query(program, target, cfg)
    except PlanFailure as e:
        path = program.unit_paths.get(target.unit, "<unknown>")
        print(Diagnostic(path, target.pos.line, target.pos.col, "error",
                         E_PLAN, f"{type(e).__name__}: {e.message}").render())
        return 1
    print(render_plan(result))
    if args.dot:
        Path(args.dot).write_text(render_dot(result))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poplar",
        description="Check, synthesize and verify integration queries.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, with_paths: bool = True) -> None:
        if with_paths:
            p.add_argument("paths", nargs="+", help="source files or directories")
        p.add_argument("--budget", type=int, default=None,
                       help="explored-plan budget")
        p.add_argument("--max-len", type=int, default=None,
                       help="maximum plan length")
        p.add_argument("--rewrite-summaries", action="store_true",
                       help="widen enclosing summaries instead of rejecting")
        p.add_argument("--precedence", action="append", default=[],
                       metavar="Type=N", help="API precedence (repeatable)")

    p_check = sub.add_parser("check", help="run all static checks")
    common(p_check)
    p_check.set_defaults(func=cmd_check)

    p_synth = sub.add_parser("synth", help="solve queries and emit plain sources")
    common(p_synth)
    p_synth.add_argument("--out", default="out", help="output directory")
    p_synth.set_defaults(func=cmd_synth)

    p_up = sub.add_parser("verify-upgrade",
                          help="check stored assumptions against new sources")
    p_up.add_argument("--assumptions", required=True,
                      help="directory holding .assume files")
    common(p_up)
    p_up.set_defaults(func=cmd_verify_upgrade)

    p_explain = sub.add_parser("explain", help="print the plan for one query")
    common(p_explain)
    p_explain.add_argument("--explain", required=True, metavar="FILE:LINE",
                           help="query id")
    p_explain.add_argument("--dot", default=None,
                           help="also write a graph description file")
    p_explain.set_defaults(func=cmd_explain)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: missing input: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
