import json
import math
from pathlib import Path

import pytest

import abacus_sql as ab

ROOT = Path(__file__).resolve().parents[2]
DATA = ROOT / "data"
FIXTURES = ROOT / "tests" / "fixtures"


def sql_reply(sql):
    return "```sql\n" + sql + "\n```"


@pytest.fixture()
def catalog(tmp_path):
    c = ab.Catalog(str(tmp_path / "catalog"))
    assert c.ingest_dir(str(DATA)) == 4
    return c


def test_sqlkit_basics():
    assert ab.tokenize_sql("SELECT count(*) FROM singer")[0] == ("keyword", "SELECT")
    assert ab.extract_tables("SELECT T1.name FROM singer AS T1 JOIN concert AS T2 ON T1.id = T2.sid") == [
        "concert",
        "singer",
    ]
    assert ab.normalize_sql("select  name from singer;") == "SELECT name FROM singer"
    sig = ab.keyword_signature("SELECT count(*) FROM t WHERE x = 1")
    assert len(sig) == 11 and sig[1] == 1


def test_bm25_two_document_example():
    # ln 2 * 2.2 / (1 + 1.2 * (0.25 + 0.75 * 3 / 2.5))
    scores = ab.bm25_scores(["singer"], [["singer", "name", "age"], ["concert", "year"]])
    expected = math.log(2) * 2.2 / (1 + 1.2 * (0.25 + 0.75 * 3 / 2.5))
    assert scores[0] == pytest.approx(expected, abs=1e-12)
    assert scores[1] == 0.0


def test_catalog_and_execute(catalog):
    assert catalog.ids() == ["city_cn", "concert_singer", "employee_hire", "pets"]
    assert "singer" in catalog.tables("concert_singer")
    assert "CREATE TABLE singer" in catalog.schema("concert_singer", ["singer"])
    r = ab.execute(catalog, "concert_singer", "SELECT count(*) FROM singer")
    assert r["rows"] == [[5]]
    bad = ab.execute(catalog, "concert_singer", "DROP TABLE singer")
    assert "error" in bad and bad["error"]
    assert ab.compare_results(r, ab.execute(catalog, "concert_singer", "SELECT count(*) FROM singer"))
    with pytest.raises(ab.EngineError, match="unknown_database"):
        catalog.tables("nowhere")


def test_demo_selection(catalog):
    pool = ab.DemoPool.load(str(FIXTURES / "pool10.json"))
    assert len(pool) == 10
    assert pool.select("How many singers are older than 40?", k=3)[0] == "seed-cs-01"


def test_retrieval_picks_concert_singer(catalog):
    result = ab.retrieve(catalog, "Which singers performed in concerts in 2014?", rewrites=["<DONE>"] * 4)
    assert result["databases"][0]["db_id"] == "concert_singer"


def test_engine_turns_with_scripted_model(catalog):
    pool = ab.DemoPool.load(str(DATA / "demos" / "default_pool.json"), catalog)
    replies = ["<DONE>"] * 4 + [
        sql_reply("SELECT name FROM singer"),
        sql_reply("SELECT count(*) FROM singer"),
        sql_reply("SELECT name FROM singer"),
        sql_reply("SELECT count(*) FROM singer WHERE country = 'France'"),
    ]
    engine = ab.Engine(catalog, pool, replies=replies)
    first = engine.ask("How many singers are there?")
    assert engine.db_id == "concert_singer"
    assert first["final_sql"] == "SELECT count(*) FROM singer"
    assert first["result"]["rows"] == [[5]]
    second = engine.ask("How many of them are from France?")
    assert second["error"] is None
    assert second["result"]["rows"] == [[3]]
    assert engine.turn_count == 2
    assert engine.llm_calls == len(replies)


def test_pre_sql_toggle_costs_one_call(catalog):
    counts = []
    for enabled in (False, True):
        replies = [sql_reply("SELECT name FROM singer")] * (2 if enabled else 1)
        engine = ab.Engine(catalog, replies=replies, pipeline={"enable_pre_sql": enabled})
        engine.pin("concert_singer")
        engine.ask("List singer names")
        counts.append(engine.llm_calls)
    assert counts[1] == counts[0] + 1


def test_cli_eval(tmp_path):
    eval_dir = FIXTURES / "eval"
    out = tmp_path / "report.json"
    code, stdout, stderr = ab.run_cli(
        "eval", "--format", "native", "--data", eval_dir, "--mock", eval_dir / "mock.json",
        "--databases", DATA, "--pool", DATA / "demos" / "default_pool.json", "--out", out,
    )
    assert code == 0, stderr
    report = json.loads(out.read_text())
    assert report["qex"] == pytest.approx(0.8)
    assert report["iex"] == pytest.approx(0.5)
    assert ab.run_cli("eval")[0] == 2
