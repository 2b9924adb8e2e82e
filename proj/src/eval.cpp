#include "falsify/eval.hpp"

#include "falsify/error.hpp"
#include "falsify/log.hpp"
#include "falsify/text.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_map>

namespace falsify {

namespace {

std::vector<std::string> string_list(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return {};
    const auto& v = j.at(key);
    if (!v.is_array()) throw Error(Errc::SchemaError, std::string(key) + " must be a list of strings");
    std::vector<std::string> out;
    for (const auto& x : v) {
        if (!x.is_string()) throw Error(Errc::SchemaError, std::string(key) + " must be a list of strings");
        out.push_back(x.get<std::string>());
    }
    return out;
}

std::string opt_string(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return {};
    if (!j.at(key).is_string()) throw Error(Errc::SchemaError, std::string(key) + " must be a string");
    return j.at(key).get<std::string>();
}

}  // namespace

DebateInput DatasetRecord::to_input() const {
    DebateInput in;
    in.case_id = case_id;
    in.query = question;
    in.image_ref = image_ref;
    in.caption = caption;
    in.ground_truth = answer;
    if (gt_findings) in.gt_findings = *gt_findings;
    return in;
}

DatasetRecord record_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(Errc::SchemaError, "record is not a JSON object");
    DatasetRecord r;
    r.case_id = opt_string(j, "case_id");
    r.image_ref = opt_string(j, "image_ref");
    r.question = opt_string(j, "question");
    r.answer = opt_string(j, "answer");
    r.caption = opt_string(j, "caption");
    if (r.case_id.empty()) throw Error(Errc::SchemaError, "missing case_id");
    if (text::trim(r.answer).empty()) throw Error(Errc::SchemaError, "case " + r.case_id + ": missing answer");
    if (r.case_id.find_first_of("/\\") != std::string::npos)
        throw Error(Errc::SchemaError, "case_id " + r.case_id + " contains a path separator");
    if (j.contains("gt_findings") && !j.at("gt_findings").is_null()) r.gt_findings = string_list(j, "gt_findings");
    r.negative_findings = string_list(j, "negative_findings");
    return r;
}

DatasetLoad load_dataset(const std::string& path, bool strict) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::FileMissing, "dataset not found: " + path);

    DatasetLoad out;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        DatasetRecord r;
        try {
            r = record_from_json(nlohmann::json::parse(line));
            // image refs are relative to the dataset file when they name a file there
            if (!r.image_ref.empty() && std::filesystem::path(r.image_ref).is_relative()) {
                const auto local = std::filesystem::path(path).parent_path() / r.image_ref;
                if (std::filesystem::exists(local)) r.image_ref = local.lexically_normal().string();
            }
        } catch (const std::exception& e) {
            auto msg = fmt::format("line {}: {}", lineno, e.what());
            if (strict) throw Error(Errc::SchemaError, path + ": " + msg);
            log().warn("{}: skipping {}", path, msg);
            out.skipped.push_back(std::move(msg));
            continue;
        }
        if (!seen.insert(r.case_id).second)
            throw Error(Errc::SchemaError, fmt::format("{}: line {}: duplicate case_id {}", path, lineno, r.case_id));
        out.records.push_back(std::move(r));
    }
    return out;
}

double accuracy(const std::vector<DebateOutcome>& outcomes, const std::vector<DatasetRecord>& records) {
    require(!outcomes.empty(), "accuracy of an empty outcome set", Errc::Misalignment);
    require(outcomes.size() == records.size(),
            fmt::format("{} outcomes for {} records", outcomes.size(), records.size()), Errc::Misalignment);
    std::unordered_map<std::string, const DatasetRecord*> by_id;
    for (const auto& r : records) by_id.emplace(r.case_id, &r);

    std::size_t correct = 0;
    std::set<std::string> used;
    for (const auto& o : outcomes) {
        auto it = by_id.find(o.case_id);
        require(it != by_id.end(), "no record for outcome " + o.case_id, Errc::Misalignment);
        require(used.insert(o.case_id).second, "outcome " + o.case_id + " appears twice", Errc::Misalignment);
        if (o.termination_reason == TerminationReason::AgentError) continue;
        if (text::normalize_label(o.diagnosis) == text::normalize_label(it->second->answer)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(outcomes.size());
}

// ---------------------------------------------------------------------------
// CHAIR

FindingLexicon::FindingLexicon(std::map<std::string, std::vector<std::string>> entries)
    : entries_(std::move(entries)) {
    std::map<std::vector<std::string>, std::string> owner;
    for (const auto& [id, forms] : entries_) {
        require(!id.empty(), "lexicon finding id is empty", Errc::SchemaError);
        require(!forms.empty(), "lexicon entry " + id + " has no surface forms", Errc::SchemaError);
        for (const auto& s : forms) {
            auto toks = text::tokenize(s);
            require(!toks.empty(), "lexicon entry " + id + " has an empty surface form", Errc::SchemaError);
            auto [it, fresh] = owner.emplace(toks, id);
            require(fresh || it->second == id,
                    "surface form '" + s + "' belongs to both " + it->second + " and " + id, Errc::SchemaError);
            if (fresh) forms_.push_back({std::move(toks), id, text::to_lower(s)});
        }
    }
    std::stable_sort(forms_.begin(), forms_.end(),
                     [](const Form& a, const Form& b) { return a.tokens.size() > b.tokens.size(); });
}

FindingLexicon FindingLexicon::from_json(const nlohmann::json& j) {
    require(j.is_object(), "lexicon must be a JSON object", Errc::SchemaError);
    std::map<std::string, std::vector<std::string>> entries;
    for (const auto& [id, forms] : j.items()) {
        require(forms.is_array(), "lexicon entry " + id + " must be a list", Errc::SchemaError);
        for (const auto& f : forms) {
            require(f.is_string(), "lexicon entry " + id + " must list strings", Errc::SchemaError);
            entries[id].push_back(f.get<std::string>());
        }
        entries[id];
    }
    return FindingLexicon(std::move(entries));
}

FindingLexicon FindingLexicon::load(const std::string& path) {
    const auto raw = fsutil::read_file(path);
    try {
        return from_json(nlohmann::json::parse(raw));
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::SchemaError, path + ": " + e.what());
    }
}

std::vector<FindingLexicon::Mention> FindingLexicon::find_mentions(std::string_view sentence) const {
    const auto toks = text::tokenize(sentence);
    std::vector<Mention> out;
    std::size_t i = 0;
    while (i < toks.size()) {
        const Form* hit = nullptr;
        for (const auto& f : forms_) {
            if (f.tokens.size() > toks.size() - i) continue;
            if (std::equal(f.tokens.begin(), f.tokens.end(), toks.begin() + static_cast<std::ptrdiff_t>(i))) {
                hit = &f;
                break;
            }
        }
        if (hit) {
            out.push_back({hit->id, hit->surface});
            i += hit->tokens.size();
        } else {
            ++i;
        }
    }
    return out;
}

std::vector<std::string> split_sentences(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == '.' || s[i] == '?' || s[i] == '!') {
            auto piece = text::trim(s.substr(start, i - start));
            if (!piece.empty()) out.push_back(std::move(piece));
            start = i + 1;
        }
    }
    return out;
}

ChairCounts& ChairCounts::operator+=(const ChairCounts& o) {
    sentences += o.sentences;
    hallucinated_sentences += o.hallucinated_sentences;
    mentions += o.mentions;
    hallucinated_mentions += o.hallucinated_mentions;
    return *this;
}

ChairCounts chair_counts(std::string_view explanation, const std::vector<std::string>& gt_findings,
                         const FindingLexicon& lexicon) {
    require(!lexicon.empty(), "lexicon is empty", Errc::SchemaError);
    const std::set<std::string> gt(gt_findings.begin(), gt_findings.end());
    ChairCounts c;
    for (const auto& sentence : split_sentences(explanation)) {
        ++c.sentences;
        bool bad = false;
        for (const auto& m : lexicon.find_mentions(sentence)) {
            ++c.mentions;
            if (!gt.contains(m.finding_id)) {
                ++c.hallucinated_mentions;
                bad = true;
            }
        }
        if (bad) ++c.hallucinated_sentences;
    }
    return c;
}

ChairMetrics chair_from_counts(const ChairCounts& c) {
    ChairMetrics m;
    m.counts = c;
    m.chair_s = c.sentences ? static_cast<double>(c.hallucinated_sentences) / static_cast<double>(c.sentences) : 0.0;
    m.chair_i_undefined = c.mentions == 0;
    m.chair_i = c.mentions ? static_cast<double>(c.hallucinated_mentions) / static_cast<double>(c.mentions) : 0.0;
    return m;
}

ChairMetrics chair_metrics(const std::vector<std::string>& explanations, const std::vector<DatasetRecord>& records,
                           const FindingLexicon& lexicon) {
    require(explanations.size() == records.size(),
            fmt::format("{} explanations for {} records", explanations.size(), records.size()), Errc::Misalignment);
    ChairCounts total;
    for (std::size_t i = 0; i < records.size(); ++i) {
        require(records[i].gt_findings.has_value(), "case " + records[i].case_id + " has no gt_findings",
                Errc::MissingGtFindings);
        total += chair_counts(explanations[i], *records[i].gt_findings, lexicon);
    }
    return chair_from_counts(total);
}

// ---------------------------------------------------------------------------
// Reports

nlohmann::json EvalReport::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : per_case) {
        rows.push_back({{"case_id", r.case_id},
                        {"diagnosis", r.diagnosis},
                        {"answer", r.answer},
                        {"correct", r.correct},
                        {"confidence", r.confidence},
                        {"turns_used", r.turns_used},
                        {"termination_reason", r.termination_reason},
                        {"tokens", r.tokens},
                        {"agent_calls", r.agent_calls}});
    }
    nlohmann::json j{{"theta_attack", theta_attack},
                     {"theta_sim", theta_sim},
                     {"n_cases", n_cases},
                     {"n_agent_error", n_agent_error},
                     {"accuracy", accuracy},
                     {"mean_turns", mean_turns},
                     {"total_tokens", total_tokens},
                     {"per_case", std::move(rows)}};
    if (chair) {
        j["chair_s"] = chair->chair_s;
        j["chair_i"] = chair->chair_i;
        j["chair_i_undefined"] = chair->chair_i_undefined;
        j["chair_counts"] = {{"sentences", chair->counts.sentences},
                             {"hallucinated_sentences", chair->counts.hallucinated_sentences},
                             {"mentions", chair->counts.mentions},
                             {"hallucinated_mentions", chair->counts.hallucinated_mentions}};
    } else {
        j["chair_s"] = nullptr;
        j["chair_i"] = nullptr;
    }
    return j;
}

BatchResult run_batch(const std::vector<DatasetRecord>& records, const DebateConfig& cfg,
                      const DebateResources& res, const BatchOptions& opts) {
    require(opts.parallelism >= 1, "parallelism must be >= 1", Errc::ConfigError);
    require(!records.empty(), "dataset is empty", Errc::SchemaError);
    cfg.validate();
    if (opts.lexicon) {
        for (const auto& r : records)
            require(r.gt_findings.has_value(), "case " + r.case_id + " has no gt_findings", Errc::MissingGtFindings);
    }
    if (opts.trail_dir) std::filesystem::create_directories(*opts.trail_dir);

    BatchResult out;
    out.outcomes.resize(records.size());
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr io_error;

    auto worker = [&] {
        for (std::size_t i = next++; i < records.size(); i = next++) {
            const auto& rec = records[i];
            DebateOutcome o;
            try {
                o = run_debate(rec.to_input(), cfg, res);
            } catch (const std::exception& e) {
                o.case_id = rec.case_id;
                o.termination_reason = TerminationReason::AgentError;
                o.error = e.what();
                log().error("{}: {}", rec.case_id, e.what());
            }
            if (opts.trail_dir) {
                try {
                    write_trail(o, *opts.trail_dir);
                } catch (...) {
                    std::lock_guard lk(err_mu);
                    if (!io_error) io_error = std::current_exception();
                }
            }
            out.outcomes[i] = std::move(o);
        }
    };

    const auto n_threads = std::min(opts.parallelism, records.size());
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
        worker();
    }
    if (io_error) std::rethrow_exception(io_error);

    auto& rep = out.report;
    rep.theta_attack = cfg.theta_attack;
    rep.theta_sim = cfg.theta_sim;
    rep.n_cases = records.size();
    rep.accuracy = accuracy(out.outcomes, records);
    double turns = 0.0;
    ChairCounts counts;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& o = out.outcomes[i];
        const auto& r = records[i];
        CaseRow row;
        row.case_id = r.case_id;
        row.diagnosis = o.diagnosis;
        row.answer = r.answer;
        row.correct = o.termination_reason != TerminationReason::AgentError &&
                      text::normalize_label(o.diagnosis) == text::normalize_label(r.answer);
        row.confidence = o.confidence;
        row.turns_used = o.turns_used;
        row.termination_reason = std::string(to_string(o.termination_reason));
        row.tokens = o.usage().total();
        row.agent_calls = o.trail.agent_calls();
        if (o.termination_reason == TerminationReason::AgentError) ++rep.n_agent_error;
        turns += o.turns_used;
        rep.total_tokens += row.tokens;
        if (opts.lexicon) counts += chair_counts(o.explanation, *r.gt_findings, *opts.lexicon);
        rep.per_case.push_back(std::move(row));
    }
    rep.mean_turns = turns / static_cast<double>(records.size());
    if (opts.lexicon) rep.chair = chair_from_counts(counts);
    return out;
}

std::vector<EvalReport> threshold_sweep(const std::vector<DatasetRecord>& records, const DebateConfig& cfg,
                                        const DebateResources& res, const SweepGrid& grid, const BatchOptions& opts) {
    require(!grid.theta_attack.empty() || !grid.theta_sim.empty(), "sweep grid is empty", Errc::ConfigError);
    for (double v : grid.theta_attack)
        require(v > 0.0 && v < 1.0, fmt::format("theta_attack grid value {} outside (0,1)", v), Errc::ConfigError);
    for (double v : grid.theta_sim)
        require(v > 0.0 && v < 1.0, fmt::format("theta_sim grid value {} outside (0,1)", v), Errc::ConfigError);

    const auto attacks = grid.theta_attack.empty() ? std::vector<double>{cfg.theta_attack} : grid.theta_attack;
    const auto sims = grid.theta_sim.empty() ? std::vector<double>{cfg.theta_sim} : grid.theta_sim;

    std::vector<EvalReport> reports;
    for (double a : attacks) {
        for (double s : sims) {
            auto point = cfg;
            point.theta_attack = a;
            point.theta_sim = s;
            auto point_opts = opts;
            if (opts.trail_dir)
                point_opts.trail_dir = (std::filesystem::path(*opts.trail_dir) / fmt::format("ta{}_ts{}", a, s)).string();
            reports.push_back(run_batch(records, point, res, point_opts).report);
            log().info("sweep theta_attack={} theta_sim={}: accuracy {:.1f}% mean_turns {:.3f}", a, s,
                       100.0 * reports.back().accuracy, reports.back().mean_turns);
        }
    }
    return reports;
}

std::vector<double> parse_grid(std::string_view s) {
    std::vector<double> out;
    for (const auto& piece : text::split(s, ',')) {
        const auto t = text::trim(piece);
        double v = 0.0;
        const auto* end = t.data() + t.size();
        auto [p, ec] = std::from_chars(t.data(), end, v);
        require(!t.empty() && ec == std::errc{} && p == end, "malformed grid value '" + t + "'", Errc::ConfigError);
        require(v > 0.0 && v < 1.0, "grid value " + t + " outside (0,1)", Errc::ConfigError);
        out.push_back(v);
    }
    require(!out.empty(), "grid is empty", Errc::ConfigError);
    return out;
}

std::string reports_csv(const std::vector<EvalReport>& reports) {
    std::string csv = "theta_attack,theta_sim,accuracy,chair_s,chair_i,mean_turns,total_tokens\n";
    for (const auto& r : reports) {
        const auto chair = [&](bool s) -> std::string {
            if (!r.chair) return "";
            return fmt::format("{}", s ? r.chair->chair_s : r.chair->chair_i);
        };
        csv += fmt::format("{},{},{},{},{},{},{}\n", r.theta_attack, r.theta_sim, r.accuracy, chair(true), chair(false),
                           r.mean_turns, r.total_tokens);
    }
    return csv;
}

void write_reports(const std::vector<EvalReport>& reports, const std::string& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : reports) j.push_back(r.to_json());
    fsutil::write_file_atomic(std::filesystem::path(dir) / "report.json",
                              nlohmann::json{{"reports", std::move(j)}}.dump(2) + "\n");
    fsutil::write_file_atomic(std::filesystem::path(dir) / "report.csv", reports_csv(reports));
}

}  // namespace falsify
