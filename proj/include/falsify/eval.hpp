#pragma once

// Batch evaluation: dataset ingestion, accuracy, CHAIR, sweeps.

#include "falsify/orchestrator.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace falsify {

struct DatasetRecord {
    std::string case_id;
    std::string image_ref;
    std::string question;
    std::string answer;
    std::string caption;
    std::optional<std::vector<std::string>> gt_findings;
    std::vector<std::string> negative_findings;

    [[nodiscard]] DebateInput to_input() const;
};

DatasetRecord record_from_json(const nlohmann::json& j);

struct DatasetLoad {
    std::vector<DatasetRecord> records;
    std::vector<std::string> skipped;  // "line N: reason"
};

/// JSONL reader. Malformed lines are skipped and reported unless strict, in
/// which case the first one raises SchemaError. Duplicate case ids always raise.
DatasetLoad load_dataset(const std::string& path, bool strict = false);

/// Fraction of cases whose normalized diagnosis equals the normalized answer.
/// Outcomes are matched to records by case_id; agent_error outcomes count as wrong.
double accuracy(const std::vector<DebateOutcome>& outcomes, const std::vector<DatasetRecord>& records);

class FindingLexicon {
public:
    FindingLexicon() = default;
    explicit FindingLexicon(std::map<std::string, std::vector<std::string>> entries);

    static FindingLexicon from_json(const nlohmann::json& j);
    static FindingLexicon load(const std::string& path);

    struct Mention {
        std::string finding_id;
        std::string surface;
    };
    /// Whole-word, case-insensitive matches; leftmost-longest, non-overlapping.
    [[nodiscard]] std::vector<Mention> find_mentions(std::string_view sentence) const;

    [[nodiscard]] const std::map<std::string, std::vector<std::string>>& entries() const noexcept { return entries_; }
    [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }

private:
    struct Form {
        std::vector<std::string> tokens;
        std::string id;
        std::string surface;
    };
    std::map<std::string, std::vector<std::string>> entries_;
    std::vector<Form> forms_;  // longest first
};

/// Sentences split on '.', '?' and '!'; whitespace-only pieces are dropped.
std::vector<std::string> split_sentences(std::string_view text);

/// Pooled counts; merge is associative and commutative.
struct ChairCounts {
    std::size_t sentences = 0;
    std::size_t hallucinated_sentences = 0;
    std::size_t mentions = 0;
    std::size_t hallucinated_mentions = 0;

    ChairCounts& operator+=(const ChairCounts& o);
};

ChairCounts chair_counts(std::string_view explanation, const std::vector<std::string>& gt_findings,
                         const FindingLexicon& lexicon);

struct ChairMetrics {
    double chair_s = 0.0;
    double chair_i = 0.0;
    bool chair_i_undefined = false;  // no finding mentioned anywhere; chair_i reported as 0
    ChairCounts counts;
};

ChairMetrics chair_from_counts(const ChairCounts& c);

/// explanations[i] belongs to records[i]. Every record needs gt_findings.
ChairMetrics chair_metrics(const std::vector<std::string>& explanations, const std::vector<DatasetRecord>& records,
                           const FindingLexicon& lexicon);

struct CaseRow {
    std::string case_id;
    std::string diagnosis;
    std::string answer;
    bool correct = false;
    double confidence = 0.0;
    int turns_used = 0;
    std::string termination_reason;
    std::uint64_t tokens = 0;
    std::size_t agent_calls = 0;
};

struct EvalReport {
    double theta_attack = 0.0;
    double theta_sim = 0.0;
    std::size_t n_cases = 0;
    std::size_t n_agent_error = 0;
    double accuracy = 0.0;
    std::optional<ChairMetrics> chair;  // absent without a lexicon
    double mean_turns = 0.0;
    std::uint64_t total_tokens = 0;
    std::vector<CaseRow> per_case;

    [[nodiscard]] nlohmann::json to_json() const;
};

struct BatchOptions {
    std::size_t parallelism = 1;
    std::optional<std::string> trail_dir;
    const FindingLexicon* lexicon = nullptr;
};

struct BatchResult {
    std::vector<DebateOutcome> outcomes;  // in record order
    EvalReport report;
};

BatchResult run_batch(const std::vector<DatasetRecord>& records, const DebateConfig& cfg,
                      const DebateResources& res, const BatchOptions& opts);

/// An empty axis falls back to the value in cfg; both empty is an error.
struct SweepGrid {
    std::vector<double> theta_attack;
    std::vector<double> theta_sim;
};

/// Cartesian product, theta_attack outer.
std::vector<EvalReport> threshold_sweep(const std::vector<DatasetRecord>& records, const DebateConfig& cfg,
                                        const DebateResources& res, const SweepGrid& grid, const BatchOptions& opts);

/// "0.1,0.3,0.6" -> values; ConfigError on anything else.
std::vector<double> parse_grid(std::string_view s);

std::string reports_csv(const std::vector<EvalReport>& reports);

/// Writes report.json and report.csv into dir atomically.
void write_reports(const std::vector<EvalReport>& reports, const std::string& dir);

}  // namespace falsify
