// Thin bindings over the engine. Structured results cross the boundary as JSON
// text; the Python package decodes them.

#include "abacus/bm25.hpp"
#include "abacus/catalog.hpp"
#include "abacus/cli.hpp"
#include "abacus/config.hpp"
#include "abacus/demopool.hpp"
#include "abacus/error.hpp"
#include "abacus/evalharness.hpp"
#include "abacus/executor.hpp"
#include "abacus/pipeline.hpp"
#include "abacus/prompts.hpp"
#include "abacus/retrieval.hpp"
#include "abacus/sqlkit.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace abacus;

namespace {

std::string dump(const nlohmann::json& j) { return j.dump(); }

nlohmann::json parse_or_empty(const std::string& text) {
    return text.empty() ? nlohmann::json::object() : nlohmann::json::parse(text);
}

std::shared_ptr<llm::Client> client_for(const std::optional<std::vector<std::string>>& replies,
                                        const std::optional<std::string>& config_file) {
    if (replies) return std::make_shared<llm::ScriptedMock>(llm::ScriptedMock::from_strings(*replies));
    if (config_file) {
        auto cfg = AppConfig::load(*config_file);
        apply_environment(cfg);
        return make_client(cfg);
    }
    throw Error(Errc::invalid_argument, "give either scripted replies or a config file");
}

// One conversation against a fixed catalog, pool and client.
class Engine {
public:
    Engine(std::shared_ptr<Catalog> catalog, std::shared_ptr<DemoPool> pool, std::shared_ptr<llm::Client> client,
           const std::string& pipeline_json)
        : catalog_(std::move(catalog)), pool_(std::move(pool)), client_(std::move(client)) {
        deps_.catalog = catalog_.get();
        deps_.pool = pool_.get();
        deps_.client = client_.get();
        deps_.scorer = &scorer_;
        deps_.cfg = PipelineConfig::from_json(parse_or_empty(pipeline_json));
        deps_.cfg.validate();
    }

    std::string ask(const std::string& question) {
        Turn turn;
        {
            py::gil_scoped_release release;
            turn = process_turn(session_, question, deps_);
        }
        return dump(turn.to_json());
    }

    std::optional<std::string> db_id() const { return session_.db_id; }
    void pin(const std::string& db_id) {
        catalog_->at(db_id);
        session_.db_id = db_id;
    }
    std::size_t turn_count() const { return session_.turns.size(); }
    std::size_t llm_calls() const {
        auto* mock = dynamic_cast<const llm::ScriptedMock*>(client_.get());
        return mock ? mock->call_count() : 0;
    }

private:
    std::shared_ptr<Catalog> catalog_;
    std::shared_ptr<DemoPool> pool_;
    std::shared_ptr<llm::Client> client_;
    Bm25TableScorer scorer_;
    PipelineDeps deps_;
    SessionState session_;
};

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Multi-turn text-to-SQL engine";

    static py::exception<Error> engine_error(m, "EngineError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            engine_error((std::string(to_string(e.code())) + ": " + e.what()).c_str());
        }
    });

    m.def("tokenize_sql", [](const std::string& sql_text) {
        std::vector<std::pair<std::string, std::string>> out;
        static const char* kinds[] = {"keyword", "identifier", "literal", "op", "punctuation"};
        for (const auto& t : sql::tokenize(sql_text)) out.emplace_back(kinds[static_cast<int>(t.kind)], t.text);
        return out;
    });
    m.def("normalize_sql", [](const std::string& s) { return sql::normalize_sql(s); });
    m.def("extract_tables", [](const std::string& s) {
        auto refs = sql::extract_table_refs(s);
        return std::vector<std::string>(refs.begin(), refs.end());
    });
    m.def("keyword_signature", [](const std::string& s) {
        auto a = sql::keyword_signature(s).as_array();
        return std::vector<int>(a.begin(), a.end());
    });
    m.def("bm25_tokenize", [](const std::string& text) { return bm25::tokenize(text); });
    m.def("bm25_scores", [](const std::vector<std::string>& query, const std::vector<std::vector<std::string>>& docs) {
        auto stats = bm25::CorpusStats::build(docs);
        std::vector<double> out;
        for (const auto& d : docs) out.push_back(bm25::score(query, d, stats));
        return out;
    });

    py::class_<Catalog, std::shared_ptr<Catalog>>(m, "Catalog")
        .def(py::init([](std::optional<std::string> storage) {
                 return storage ? std::make_shared<Catalog>(*storage) : std::make_shared<Catalog>();
             }),
             py::arg("storage_dir") = py::none())
        .def_static("open", [](const std::string& dir) { return std::shared_ptr<Catalog>(Catalog::open(dir)); })
        .def("ingest_script",
             [](Catalog& c, const std::string& script, const std::string& db_id, const std::string& name, bool replace) {
                 return c.ingest_script(script, db_id, name, replace)->db_id;
             },
             py::arg("script"), py::arg("db_id"), py::arg("display_name") = "", py::arg("replace") = false)
        .def("ingest_database",
             [](Catalog& c, const std::string& file, const std::string& db_id, const std::string& name, bool replace) {
                 return c.ingest_database(file, db_id, name, replace)->db_id;
             },
             py::arg("file"), py::arg("db_id"), py::arg("display_name") = "", py::arg("replace") = false)
        .def("ingest_dir", [](Catalog& c, const std::string& dir) { return ingest_database_dir(c, dir); })
        .def("ids",
             [](const Catalog& c) {
                 std::vector<std::string> ids;
                 for (const auto& e : c.entries()) ids.push_back(e->db_id);
                 return ids;
             })
        .def("tables", [](const Catalog& c, const std::string& db_id) { return c.at(db_id)->table_names(); })
        .def("schema",
             [](const Catalog& c, const std::string& db_id, std::optional<std::vector<std::string>> subset) {
                 return serialize_schema(*c.at(db_id), subset);
             },
             py::arg("db_id"), py::arg("tables") = py::none())
        .def("execute",
             [](const Catalog& c, const std::string& db_id, const std::string& sql_text, std::size_t row_cap,
                int time_cap_ms) {
                 ExecuteOptions opts;
                 opts.row_cap = row_cap;
                 opts.time_cap = std::chrono::milliseconds(time_cap_ms);
                 auto entry = c.at(db_id);
                 ExecutionResult r;
                 {
                     py::gil_scoped_release release;
                     r = execute(*entry, sql_text, opts);
                 }
                 return dump(to_json(r));
             },
             py::arg("db_id"), py::arg("sql"), py::arg("row_cap") = 10000, py::arg("time_cap_ms") = 5000)
        .def("retrieve",
             [](const Catalog& c, const std::string& query, const std::vector<std::string>& rewrites, int beam,
                int hops, int per_hop) {
                 auto mock = llm::ScriptedMock::from_strings(rewrites);
                 RetrievalConfig cfg{beam, hops, per_hop};
                 cfg.validate();
                 Bm25TableScorer scorer;
                 return dump(murre_retrieve(query, c, cfg, mock, scorer, PromptTemplates::defaults().rewrite).to_json());
             },
             py::arg("query"), py::arg("rewrites") = std::vector<std::string>{}, py::arg("beam_width") = 4,
             py::arg("max_hops") = 3, py::arg("tables_per_hop") = 4)
        .def("__len__", &Catalog::size)
        .def("__contains__", [](const Catalog& c, const std::string& id) { return c.contains(id); });

    m.def("compare_results",
          [](const std::string& pred, const std::string& gold, std::optional<bool> ordered, double tol) {
              auto p = execution_result_from_json(nlohmann::json::parse(pred));
              auto g = execution_result_from_json(nlohmann::json::parse(gold));
              return compare_results(p, g, {ordered.value_or(false), tol});
          },
          py::arg("pred"), py::arg("gold"), py::arg("ordered") = py::none(), py::arg("rel_tol") = 1e-6);

    py::class_<DemoPool, std::shared_ptr<DemoPool>>(m, "DemoPool")
        .def_static("load",
                    [](const std::string& path, std::shared_ptr<Catalog> catalog) {
                        return std::make_shared<DemoPool>(load_pool(path, catalog.get()));
                    },
                    py::arg("path"), py::arg("catalog") = nullptr)
        .def_static("parse",
                    [](const std::string& text) { return std::make_shared<DemoPool>(DemoPool::build(parse_pool(text))); })
        .def("select",
             [](const DemoPool& p, const std::string& question, const std::vector<std::string>& history, int k) {
                 std::vector<std::string> ids;
                 for (const auto& d : select_demos(question, history, p, k)) ids.push_back(d.demo_id);
                 return ids;
             },
             py::arg("question"), py::arg("history") = std::vector<std::string>{}, py::arg("k") = 3)
        .def("save", [](const DemoPool& p, const std::string& path) { save_pool(p, path); })
        .def("to_json", [](const DemoPool& p) { return dump(pool_to_json(p)); })
        .def("__len__", &DemoPool::size);

    py::class_<Engine>(m, "Engine")
        .def(py::init([](std::shared_ptr<Catalog> catalog, std::shared_ptr<DemoPool> pool,
                         std::optional<std::vector<std::string>> replies, std::optional<std::string> config,
                         const std::string& pipeline) {
                 if (!catalog) throw Error(Errc::invalid_argument, "a catalog is required");
                 if (!pool) pool = std::make_shared<DemoPool>();
                 return std::make_unique<Engine>(std::move(catalog), std::move(pool), client_for(replies, config),
                                                 pipeline);
             }),
             py::arg("catalog"), py::arg("pool") = nullptr, py::arg("replies") = py::none(),
             py::arg("config") = py::none(), py::arg("pipeline") = "")
        .def("ask", &Engine::ask)
        .def("pin", &Engine::pin)
        .def_property_readonly("db_id", &Engine::db_id)
        .def_property_readonly("turn_count", &Engine::turn_count)
        .def_property_readonly("llm_calls", &Engine::llm_calls);

    m.def("run_cli", [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
            py::gil_scoped_release release;
            code = cli_main(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
    });
}
