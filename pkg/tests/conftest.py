import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from poplar.config import SearchConfig
from poplar.effects import query_contexts
from poplar.resolver import load_program

CORPUS = Path(__file__).parent / "corpus"

TD14 = ["common/timeanddate.pop", "timedate14/date.pop", "client/timeutils.pop"]
TD15 = ["common/timeanddate.pop", "timedate15/calendar.pop", "client/timeutils.pop"]
TD_BOTH = ["common/timeanddate.pop", "timedate14/date.pop",
           "timedate15/calendar.pop", "client/timeutils.pop"]
SOCKET = ["socket/socket.pop", "socket/server.pop"]
SWING = ["swing/toolkit.pop", "swing/widgets.pop", "swing/frames.pop"]
SWING_QUERY = ["swing/toolkit.pop", "swing/widgets.pop", "swing_query/frames.pop"]
RECORDSET = ["recordset/records.pop"]


def corpus_sources(files):
    return [(str(CORPUS / f), (CORPUS / f).read_text()) for f in files]


def load(files, extra=None):
    """Load corpus files plus optional (name, text) extras; assert clean."""
    sources = corpus_sources(files)
    if extra:
        sources.extend(extra)
    program = load_program(sources)
    assert not program.diagnostics.has_errors, program.diagnostics.render()
    return program


def load_raw(files, extra=None):
    """Load without asserting; returns the program with its diagnostics."""
    sources = corpus_sources(files)
    if extra:
        sources.extend(extra)
    return load_program(sources)


def query_in(program, unit_name, method_name, index=0):
    unit = program.units[unit_name]
    for m in unit.methods:
        if m.name == method_name and m.body is not None:
            contexts = query_contexts(program, unit, m)
            return contexts[index]
    raise AssertionError(f"no query in {unit_name}.{method_name}")


def all_query_contexts(program):
    out = []
    for cname in sorted(program.units):
        unit = program.units[cname]
        for m in unit.methods:
            if m.body is None:
                continue
            out.extend(query_contexts(program, unit, m))
    return out


@pytest.fixture
def cfg():
    return SearchConfig()
