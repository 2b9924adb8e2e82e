#include "falsify/cli.hpp"

#include "falsify/config.hpp"
#include "falsify/error.hpp"
#include "falsify/eval.hpp"
#include "falsify/log.hpp"
#include "falsify/text.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <optional>

namespace falsify::cli {

namespace {

int exit_code_for(Errc c) {
    switch (c) {
        case Errc::ConfigError:
        case Errc::FileMissing:
        case Errc::FixtureMissing:
        case Errc::SchemaError:
        case Errc::Misalignment:
        case Errc::MissingGtFindings:
            return kExitConfig;
        default:
            return kExitRuntime;
    }
}

struct Overrides {
    std::optional<int> t_max;
    std::optional<double> theta_attack;
    std::optional<double> theta_sim;
    std::optional<double> tau;
    std::optional<std::size_t> top_k;

    void attach(CLI::App& cmd) {
        cmd.add_option("--t-max", t_max, "maximum dialectic turns");
        cmd.add_option("--theta-attack", theta_attack, "attack-strength gate");
        cmd.add_option("--theta-sim", theta_sim, "semantic duplicate threshold");
        cmd.add_option("--tau", tau, "attention temperature");
        cmd.add_option("--top-k", top_k, "regions averaged into the attack strength");
    }

    void apply(DebateConfig& d) const {
        if (t_max) d.t_max = *t_max;
        if (theta_attack) d.theta_attack = *theta_attack;
        if (theta_sim) d.theta_sim = *theta_sim;
        if (tau) d.tau = *tau;
        if (top_k) d.top_k = *top_k;
    }
};

AppConfig load_with_overrides(const std::string& path, const Overrides& o) {
    auto cfg = load_config(path);
    o.apply(cfg.debate);
    cfg.validate();
    return cfg;
}

nlohmann::json report_line(const EvalReport& r) {
    auto j = r.to_json();
    j.erase("per_case");
    return j;
}

std::string trail_target(const std::string& out, const std::string& case_id) {
    const std::filesystem::path p(out);
    if (std::filesystem::is_directory(p) || out.ends_with('/')) return (p / (case_id + ".trail.json")).string();
    return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out) {
    CLI::App app{"Falsification-driven multi-agent diagnosis debates"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "only log warnings and errors");

    // run
    auto* run_cmd = app.add_subcommand("run", "run one debate");
    std::string config_path, case_path, out_path;
    Overrides run_over;
    run_cmd->add_option("--config", config_path, "config file")->required();
    run_cmd->add_option("--case", case_path, "JSONL file holding one record")->required();
    run_cmd->add_option("--out", out_path, "trail path (file or directory)")->required();
    run_over.attach(*run_cmd);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a dataset");
    std::string dataset_path, lexicon_path, report_dir;
    long long parallelism = 1;
    bool strict = false;
    Overrides eval_over;
    for (auto* cmd : {eval_cmd}) {
        cmd->add_option("--config", config_path, "config file")->required();
        cmd->add_option("--dataset", dataset_path, "JSONL dataset")->required();
        cmd->add_option("--lexicon", lexicon_path, "finding lexicon (overrides eval.lexicon_path)");
        cmd->add_option("--report-dir", report_dir, "output directory")->required();
        cmd->add_option("--parallelism", parallelism, "concurrent debates");
        cmd->add_flag("--strict", strict, "abort on the first malformed dataset line");
    }
    eval_over.attach(*eval_cmd);

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "threshold sensitivity sweep");
    std::string attack_grid, sim_grid;
    Overrides sweep_over;
    sweep_cmd->add_option("--config", config_path, "config file")->required();
    sweep_cmd->add_option("--dataset", dataset_path, "JSONL dataset")->required();
    sweep_cmd->add_option("--lexicon", lexicon_path, "finding lexicon");
    sweep_cmd->add_option("--report-dir", report_dir, "output directory")->required();
    sweep_cmd->add_option("--parallelism", parallelism, "concurrent debates");
    sweep_cmd->add_option("--theta-attack-grid", attack_grid, "comma-separated values in (0,1)");
    sweep_cmd->add_option("--theta-sim-grid", sim_grid, "comma-separated values in (0,1)");
    sweep_cmd->add_flag("--strict", strict, "abort on the first malformed dataset line");
    sweep_over.attach(*sweep_cmd);

    // validate-fixture
    auto* fixture_cmd = app.add_subcommand("validate-fixture", "check a scripted fixture file");
    std::string fixture_path;
    fixture_cmd->add_option("--fixture", fixture_path, "fixture JSON")->required();
    fixture_cmd->add_option("--dataset", dataset_path, "check coverage of these cases");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        log().error("{}", e.what());
        return kExitConfig;
    }
    log().set_level(quiet ? spdlog::level::warn : spdlog::level::info);

    try {
        if (*run_cmd) {
            const auto cfg = load_with_overrides(config_path, run_over);
            const auto data = load_dataset(case_path, true);
            require(data.records.size() == 1,
                    fmt::format("{} holds {} records, expected exactly one", case_path, data.records.size()),
                    Errc::SchemaError);
            const auto res = build_resources(cfg);
            const auto outcome = run_debate(data.records.front().to_input(), cfg.debate, res);
            const auto target = trail_target(out_path, outcome.case_id);
            if (auto parent = std::filesystem::path(target).parent_path(); !parent.empty())
                std::filesystem::create_directories(parent);
            fsutil::write_file_atomic(target, outcome.trail_document().dump(2) + "\n");
            out << outcome.summary_json().dump() << "\n";
            if (outcome.termination_reason == TerminationReason::AgentError) {
                log().error("{}: debate ended with agent_error; partial trail at {}", outcome.case_id, target);
                return kExitRuntime;
            }
            return kExitOk;
        }

        if (*eval_cmd || *sweep_cmd) {
            require(parallelism >= 1, "--parallelism must be >= 1", Errc::ConfigError);
            const auto cfg = load_with_overrides(config_path, *eval_cmd ? eval_over : sweep_over);
            SweepGrid grid;
            if (*sweep_cmd) {
                if (!attack_grid.empty()) grid.theta_attack = parse_grid(attack_grid);
                if (!sim_grid.empty()) grid.theta_sim = parse_grid(sim_grid);
                require(!grid.theta_attack.empty() || !grid.theta_sim.empty(),
                        "sweep needs --theta-attack-grid and/or --theta-sim-grid", Errc::ConfigError);
            }
            const auto data = load_dataset(dataset_path, strict);
            const auto lex_path = lexicon_path.empty() ? cfg.lexicon_path : lexicon_path;
            std::optional<FindingLexicon> lexicon;
            if (!lex_path.empty()) lexicon = FindingLexicon::load(lex_path);
            const auto res = build_resources(cfg);

            BatchOptions opts;
            opts.parallelism = static_cast<std::size_t>(parallelism);
            opts.trail_dir = (std::filesystem::path(report_dir) / "trails").string();
            opts.lexicon = lexicon ? &*lexicon : nullptr;

            std::vector<EvalReport> reports;
            if (*eval_cmd)
                reports.push_back(run_batch(data.records, cfg.debate, res, opts).report);
            else
                reports = threshold_sweep(data.records, cfg.debate, res, grid, opts);
            write_reports(reports, report_dir);
            for (const auto& r : reports) out << report_line(r).dump() << "\n";
            if (!data.skipped.empty()) log().warn("{} malformed dataset lines skipped", data.skipped.size());
            return kExitOk;
        }

        if (*fixture_cmd) {
            auto fixture = ScriptedBackend::from_file(fixture_path);
            nlohmann::json report{{"fixture", fixture_path}, {"keys", fixture->size()}};
            std::vector<std::string> missing;
            if (!dataset_path.empty()) {
                const auto data = load_dataset(dataset_path, true);
                for (const auto& r : data.records) {
                    for (const auto& [role, action, turn] :
                         {std::tuple{Role::Proponent, "generate", "0"}, std::tuple{Role::Opponent, "probe", "1"},
                          std::tuple{Role::Mediator, "adjudicate", "final"}}) {
                        ChatRequest req{r.case_id, role, action, turn, 1, {}};
                        try {
                            (void)fixture->complete(req);
                        } catch (const Error&) {
                            missing.push_back(request_tag(req));
                        }
                    }
                }
                report["cases_checked"] = data.records.size();
            }
            report["missing"] = missing;
            out << report.dump() << "\n";
            return missing.empty() ? kExitOk : kExitConfig;
        }
    } catch (const Error& e) {
        log().error("{}", e.what());
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        log().error("{}", e.what());
        return kExitRuntime;
    }
    return kExitConfig;
}

}  // namespace falsify::cli
