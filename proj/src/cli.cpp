#include "abacus/cli.hpp"

#include "abacus/config.hpp"
#include "abacus/error.hpp"
#include "abacus/evalharness.hpp"
#include "abacus/service.hpp"
#include "abacus/util.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <iostream>

namespace abacus {

namespace {

struct EvalArgs {
    std::string data, format = "native", databases, mock, pool, out = "eval_report.json", summary, transcripts;
    std::optional<int> n_shot, max_debug_iters;
    bool no_pre_sql = false, no_self_debug = false, use_retrieval = false;
    int jobs = 1;
};

struct AugmentArgs {
    std::string pool, out, databases, mock;
    std::optional<int> rounds, arity, cap;
    std::optional<std::uint64_t> seed;
};

struct IngestArgs {
    std::vector<std::string> files;
    std::string data_dir, id, name;
    bool sql = false, replace = false;
};

struct ServeArgs {
    std::string data_dir, host, mock, pool;
    std::optional<int> port;
};

AppConfig base_config(const std::string& config_file) {
    auto cfg = config_file.empty() ? AppConfig{} : AppConfig::load(config_file);
    apply_environment(cfg);
    return cfg;
}

PromptTemplates prompts_for(const AppConfig& cfg) {
    return cfg.prompts_dir ? PromptTemplates::load(*cfg.prompts_dir) : PromptTemplates::defaults();
}

// Demos may belong to databases outside `catalog`; their documents then carry questions only.
DemoPool pool_from_file(const std::string& path, const Catalog& catalog) {
    return DemoPool::build(parse_pool(read_file(path)), &catalog);
}

int run_eval(const EvalArgs& a, const std::string& config_file, std::ostream& out) {
    auto cfg = base_config(config_file);
    if (!a.mock.empty()) cfg.mock_script = a.mock;
    if (a.n_shot) cfg.pipeline.n_shot = *a.n_shot;
    if (a.max_debug_iters) cfg.pipeline.max_debug_iters = *a.max_debug_iters;
    if (a.no_pre_sql) cfg.pipeline.enable_pre_sql = false;
    if (a.no_self_debug) cfg.pipeline.enable_self_debug = false;
    cfg.pipeline.validate();

    auto format = dataset_format_from_string(a.format);
    std::filesystem::path data(a.data);
    std::filesystem::path db_root = !a.databases.empty()          ? std::filesystem::path(a.databases)
                                    : std::filesystem::is_directory(data) ? data
                                                                          : data.parent_path();
    Catalog catalog;
    ingest_database_dir(catalog, db_root);
    auto interactions = load_dataset(data, format, &catalog);

    auto client = make_client(cfg);
    auto scorer = make_scorer(cfg);
    DemoPool pool;
    if (!a.pool.empty()) {
        pool = pool_from_file(a.pool, catalog);
    } else if (cfg.pool_file) {
        pool = pool_from_file(cfg.pool_file->string(), catalog);
    }

    PipelineDeps deps;
    deps.catalog = &catalog;
    deps.pool = &pool;
    deps.client = client.get();
    deps.scorer = scorer.get();
    deps.cfg = cfg.pipeline;
    deps.retrieval = cfg.retrieval;
    deps.generation = cfg.generation;
    deps.prompts = prompts_for(cfg);

    std::optional<SessionStore> store;
    if (!a.transcripts.empty()) store.emplace(a.transcripts, [] { return std::int64_t{0}; });

    EvalConfig ecfg;
    ecfg.use_retrieval = a.use_retrieval;
    ecfg.jobs = a.jobs;
    ecfg.dataset_name = data.filename().empty() ? data.parent_path().filename().string() : data.filename().string();
    auto report = evaluate(interactions, deps, ecfg, store ? &*store : nullptr);
    report.config["format"] = a.format;

    write_file_atomic(a.out, report.to_json().dump(2) + "\n");
    auto summary = report.summary(ecfg.dataset_name);
    auto summary_path = a.summary.empty() ? std::filesystem::path(a.out).replace_extension(".txt")
                                          : std::filesystem::path(a.summary);
    write_file_atomic(summary_path, summary);
    out << summary;
    return 0;
}

int run_augment(const AugmentArgs& a, const std::string& config_file, std::ostream& out) {
    auto cfg = base_config(config_file);
    if (!a.mock.empty()) cfg.mock_script = a.mock;
    if (a.rounds) cfg.fused.rounds = *a.rounds;
    if (a.arity) cfg.fused.fusion_arity = *a.arity;
    if (a.cap) cfg.fused.additions_cap = *a.cap;
    if (a.seed) cfg.fused.random_seed = *a.seed;
    if (cfg.fused.rounds < 0) throw Error(Errc::invalid_argument, "--rounds must be >= 0");

    std::unique_ptr<Catalog> catalog;
    if (!a.databases.empty()) {
        catalog = std::make_unique<Catalog>();
        ingest_database_dir(*catalog, a.databases);
    } else {
        catalog = Catalog::open(cfg.data_dir / "catalog");
    }
    auto pool = pool_from_file(a.pool, *catalog);
    auto out_path = a.out.empty() ? a.pool : a.out;

    AugmentSummary summary;
    DemoPool result = pool;
    if (cfg.fused.rounds > 0) {
        auto client = make_client(cfg);
        std::tie(result, summary) = augment_pool(pool, *catalog, *client, cfg.fused, prompts_for(cfg).fusion);
    }
    // an unchanged pool is left byte-for-byte alone
    if (summary.accepted > 0 || out_path != a.pool) save_pool(result, out_path);
    auto j = summary.to_json();
    j["pool_size"] = result.size();
    out << j.dump(2) << "\n";
    return 0;
}

int run_ingest(const IngestArgs& a, const std::string& config_file, std::ostream& out) {
    auto cfg = base_config(config_file);
    if (!a.data_dir.empty()) cfg.data_dir = a.data_dir;
    if (!a.id.empty() && a.files.size() != 1) throw Error(Errc::invalid_argument, "--id needs exactly one file");
    std::filesystem::create_directories(cfg.data_dir / "catalog");
    auto catalog = Catalog::open(cfg.data_dir / "catalog");
    for (const auto& f : a.files) {
        std::filesystem::path path(f);
        auto id = a.id.empty() ? path.stem().string() : a.id;
        auto entry = a.sql ? catalog->ingest_script(read_file(path), id, a.name, a.replace)
                           : catalog->ingest_database(path, id, a.name, a.replace);
        out << entry->db_id << ": " << entry->tables.size() << " tables\n";
    }
    return 0;
}

std::atomic<Service*> g_running{nullptr};

extern "C" void handle_stop_signal(int) {
    if (auto* s = g_running.load()) s->stop();
}

int run_serve(const ServeArgs& a, const std::string& config_file, std::ostream& out) {
    auto cfg = base_config(config_file);
    if (!a.data_dir.empty()) cfg.data_dir = a.data_dir;
    if (!a.host.empty()) cfg.host = a.host;
    if (a.port) cfg.port = *a.port;
    if (!a.mock.empty()) cfg.mock_script = a.mock;
    if (!a.pool.empty()) cfg.pool_file = a.pool;

    std::filesystem::create_directories(cfg.data_dir / "catalog");
    std::shared_ptr<Catalog> catalog = Catalog::open(cfg.data_dir / "catalog");
    auto stored_pool = cfg.data_dir / "pool.json";
    DemoPool pool;
    if (std::filesystem::exists(stored_pool)) {
        pool = pool_from_file(stored_pool.string(), *catalog);
    } else if (cfg.pool_file) {
        pool = pool_from_file(cfg.pool_file->string(), *catalog);
    }

    ServiceOptions opt;
    opt.data_dir = cfg.data_dir;
    opt.pipeline = cfg.pipeline;
    opt.retrieval = cfg.retrieval;
    opt.generation = cfg.generation;
    opt.prompts = prompts_for(cfg);
    opt.fused = cfg.fused;
    opt.pbkdf2_iterations = cfg.pbkdf2_iterations;
    auto log = [](std::string_view line) { std::cerr << line << "\n"; };
    Service service(opt, catalog, make_client(cfg, log), make_scorer(cfg), std::move(pool));
    int port = service.bind(cfg.host, cfg.port);
    out << "listening on http://" << cfg.host << ":" << port << std::endl;
    g_running = &service;
    std::signal(SIGINT, handle_stop_signal);
    std::signal(SIGTERM, handle_stop_signal);
    service.run();
    g_running = nullptr;
    return 0;
}

} // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-turn text-to-SQL engine", "abacus-sql"};
    app.require_subcommand(1);
    std::string config_file;
    app.add_option("--config", config_file, "JSON config file")->check(CLI::ExistingFile);

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "Evaluate QEX/IEX over a dataset");
    eval->add_option("--data", ev.data, "Dataset file or directory")->required()->check(CLI::ExistingPath);
    eval->add_option("--format", ev.format, "native, sparc, cosql or chase")
        ->check(CLI::IsMember({"native", "sparc", "cosql", "chase"}));
    eval->add_option("--databases", ev.databases, "Directory with database/ or databases/ (default: the data dir)")
        ->check(CLI::ExistingDirectory);
    eval->add_option("--mock", ev.mock, "Scripted LLM replies (JSON)")->check(CLI::ExistingFile);
    eval->add_option("--pool", ev.pool, "Demonstration pool file")->check(CLI::ExistingFile);
    eval->add_option("--out", ev.out, "Report JSON path");
    eval->add_option("--summary", ev.summary, "Text summary path (default: report path with .txt)");
    eval->add_option("--transcripts", ev.transcripts, "Directory for per-interaction session transcripts");
    eval->add_option("--n-shot", ev.n_shot)->check(CLI::NonNegativeNumber);
    eval->add_option("--max-debug-iters", ev.max_debug_iters)->check(CLI::NonNegativeNumber);
    eval->add_flag("--no-pre-sql", ev.no_pre_sql);
    eval->add_flag("--no-self-debug", ev.no_self_debug);
    eval->add_flag("--retrieval", ev.use_retrieval, "Select databases by retrieval instead of the gold db_id");
    eval->add_option("--jobs", ev.jobs, "Interactions evaluated concurrently")->check(CLI::PositiveNumber);

    AugmentArgs au;
    auto* augment = app.add_subcommand("augment", "Grow a demonstration pool with fused examples");
    augment->add_option("--pool", au.pool, "Pool file")->required()->check(CLI::ExistingFile);
    augment->add_option("--out", au.out, "Output pool (default: overwrite --pool)");
    augment->add_option("--databases", au.databases, "Directory with database/ or databases/")
        ->check(CLI::ExistingDirectory);
    augment->add_option("--mock", au.mock, "Scripted LLM replies (JSON)")->check(CLI::ExistingFile);
    augment->add_option("--rounds", au.rounds)->check(CLI::NonNegativeNumber);
    augment->add_option("--arity", au.arity)->check(CLI::PositiveNumber);
    augment->add_option("--cap", au.cap)->check(CLI::NonNegativeNumber);
    augment->add_option("--seed", au.seed);

    IngestArgs in;
    auto* ingest = app.add_subcommand("ingest", "Register database files in the catalog");
    ingest->add_option("files", in.files, "SQLite files, or SQL scripts with --sql")->required()->check(CLI::ExistingFile);
    ingest->add_option("--data-dir", in.data_dir, "Data directory (catalog lives in <dir>/catalog)");
    ingest->add_option("--id", in.id, "Database id (single file only)");
    ingest->add_option("--name", in.name, "Display name");
    ingest->add_flag("--sql", in.sql, "Inputs are SQL scripts to materialize");
    ingest->add_flag("--replace", in.replace, "Replace an existing id");

    ServeArgs sv;
    auto* serve = app.add_subcommand("serve", "Start the HTTP service");
    serve->add_option("--data-dir", sv.data_dir);
    serve->add_option("--host", sv.host);
    serve->add_option("--port", sv.port)->check(CLI::Range(0, 65535));
    serve->add_option("--mock", sv.mock, "Scripted LLM replies (JSON)")->check(CLI::ExistingFile);
    serve->add_option("--pool", sv.pool, "Seed demonstration pool")->check(CLI::ExistingFile);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    try {
        if (*eval) return run_eval(ev, config_file, out);
        if (*augment) return run_augment(au, config_file, out);
        if (*ingest) return run_ingest(in, config_file, out);
        if (*serve) return run_serve(sv, config_file, out);
    } catch (const Error& e) {
        err << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

int cli_main(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return cli_main(args, std::cout, std::cerr);
}

} // namespace abacus
