"""Python access to the multi-turn text-to-SQL engine."""

import json

from . import _core
from ._core import (
    Catalog,
    DemoPool,
    EngineError,
    bm25_scores,
    bm25_tokenize,
    extract_tables,
    keyword_signature,
    normalize_sql,
    tokenize_sql,
)

__all__ = [
    "Catalog",
    "DemoPool",
    "Engine",
    "EngineError",
    "bm25_scores",
    "bm25_tokenize",
    "compare_results",
    "execute",
    "extract_tables",
    "keyword_signature",
    "normalize_sql",
    "retrieve",
    "run_cli",
    "tokenize_sql",
]


def execute(catalog, db_id, sql, row_cap=10000, time_cap_ms=5000):
    """Runs a read-only statement; returns {columns, rows, truncated[, error]}."""
    return json.loads(catalog.execute(db_id, sql, row_cap, time_cap_ms))


def compare_results(pred, gold, ordered=None, rel_tol=1e-6):
    """Execution-match between two results as returned by execute()."""
    return _core.compare_results(json.dumps(pred), json.dumps(gold), ordered, rel_tol)


def retrieve(catalog, query, rewrites=(), beam_width=4, max_hops=3, tables_per_hop=4):
    """Multi-hop database retrieval with scripted rewrite replies ("<DONE>" stops a beam)."""
    return json.loads(catalog.retrieve(query, list(rewrites), beam_width, max_hops, tables_per_hop))


def run_cli(*args):
    """Runs the command-line front end in-process; returns (exit_code, stdout, stderr)."""
    return _core.run_cli([str(a) for a in args])


class Engine:
    """One conversation. Give `replies` for a scripted model or `config` for a live endpoint."""

    def __init__(self, catalog, pool=None, replies=None, config=None, pipeline=None):
        self._engine = _core.Engine(
            catalog,
            pool,
            list(replies) if replies is not None else None,
            str(config) if config is not None else None,
            json.dumps(pipeline) if pipeline else "",
        )

    def ask(self, question):
        return json.loads(self._engine.ask(question))

    def pin(self, db_id):
        self._engine.pin(db_id)

    @property
    def db_id(self):
        return self._engine.db_id

    @property
    def turn_count(self):
        return self._engine.turn_count

    @property
    def llm_calls(self):
        return self._engine.llm_calls
