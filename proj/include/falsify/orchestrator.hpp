#pragma once

// The falsify / mediate / revise loop over a consensus graph.

#include "falsify/agents.hpp"
#include "falsify/consensus_graph.hpp"
#include "falsify/embedding.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace falsify {

enum class TerminationReason { WeakAttack, MaxTurns, DuplicateStall, AgentError };

std::string_view to_string(TerminationReason r) noexcept;

struct DebateConfig {
    int t_max = 3;
    double theta_attack = kDefaultAttackThreshold;
    double theta_sim = kDefaultSimilarityThreshold;
    double tau = kDefaultTemperature;
    std::size_t top_k = 1;

    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
};

struct DebateInput {
    std::string case_id;
    std::string query;
    std::string image_ref;
    std::optional<PatchGrid> patch_grid;  // bypasses the embedding provider when set
    std::string caption;
    std::optional<std::string> ground_truth;
    std::vector<std::string> gt_findings;
};

struct DebateResources {
    RoleBackends backends;
    std::shared_ptr<EmbeddingProvider> embedder;
    std::string knowledge;  // domain knowledge handed to every agent
};

struct EdgeWeightRecord {
    NodeId src;
    NodeId dst;
    EdgeKind kind = EdgeKind::Falsification;
    double weight = 0.0;
};

/// One audit-trail entry: an agent call, a VFM measurement or a graph update.
struct AgentTurn {
    std::size_t seq = 0;
    int turn = 0;
    std::string role;  // proponent | opponent | mediator | vfm | graph
    std::string action;
    int attempt = 1;
    std::string system_prompt;
    std::string prompt;
    std::string completion;
    std::optional<std::string> probe;
    std::vector<std::pair<std::size_t, double>> alphas_summary;  // top-k (index, alpha)
    std::optional<double> attack_strength;
    std::vector<EdgeWeightRecord> edge_weights;
    std::optional<TokenUsage> token_usage;
    std::string note;
    nlohmann::json extra;  // structured payload, e.g. a parsed verdict
    std::string timestamp;

    [[nodiscard]] nlohmann::json to_json() const;
};

struct AuditTrail {
    std::vector<AgentTurn> turns;
    nlohmann::json config;
    std::string started_at;
    std::string finished_at;

    AgentTurn& append(AgentTurn t);
    [[nodiscard]] TokenUsage total_usage() const;
    /// Number of backend round trips, reprompts included.
    [[nodiscard]] std::size_t agent_calls() const;
    [[nodiscard]] nlohmann::json to_json() const;
};

struct DebateOutcome {
    std::string case_id;
    std::string diagnosis;  // winning hypothesis text
    std::string label;      // normalized diagnosis
    double confidence = 0.0;
    std::string explanation;
    bool explanation_fallback = false;
    nlohmann::json graph;
    AuditTrail trail;
    int turns_used = 0;
    TerminationReason termination_reason = TerminationReason::MaxTurns;
    std::vector<NodeId> winning_path;
    std::string error;

    [[nodiscard]] TokenUsage usage() const { return trail.total_usage(); }
    /// {diagnosis, label, confidence, explanation, ...} without the trail.
    [[nodiscard]] nlohmann::json summary_json() const;
    /// The persisted document: {case_id, config, turns, graph, outcome}.
    [[nodiscard]] nlohmann::json trail_document() const;
};

/// Mutable state of one debate, exposed for step-by-step driving.
class DebateState {
public:
    DebateState(DebateInput input, DebateConfig cfg, const DebateResources& res);

    DebateState(const DebateState&) = delete;
    DebateState& operator=(const DebateState&) = delete;

    [[nodiscard]] bool terminated() const noexcept { return terminated_; }
    [[nodiscard]] TerminationReason termination_reason() const noexcept { return reason_; }
    [[nodiscard]] int turns_used() const noexcept { return turns_used_; }
    [[nodiscard]] int next_turn() const noexcept { return next_turn_; }
    [[nodiscard]] const std::optional<ConsensusGraph>& graph() const noexcept { return graph_; }
    [[nodiscard]] const NodeId& current_hypothesis() const noexcept { return current_; }
    [[nodiscard]] const AuditTrail& trail() const noexcept { return *trail_; }
    [[nodiscard]] const DebateConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const std::string& error() const noexcept { return error_; }

private:
    friend void run_single_turn(DebateState& state);
    friend DebateOutcome finish_debate(DebateState& state);

    void fail(const std::string& why);
    double similarity(std::string_view a, std::string_view b);
    Embedding unit_text_embedding(std::string_view text);
    void record(AgentTurn t);

    DebateInput input_;
    DebateConfig cfg_;
    DebateResources res_;
    std::shared_ptr<AuditTrail> trail_;
    std::unique_ptr<AgentSession> session_;
    std::optional<ConsensusGraph> graph_;
    PatchGrid grid_;
    NodeId current_;
    int next_turn_ = 1;
    int turns_used_ = 0;
    bool terminated_ = false;
    bool last_was_duplicate_ = false;
    TerminationReason reason_ = TerminationReason::MaxTurns;
    std::string error_;
    std::map<std::string, Embedding, std::less<>> embed_cache_;
};

/// One loop iteration: probe, attend, gate, argue, mediate, revise, expand.
void run_single_turn(DebateState& state);

/// Aggregates the graph, asks the mediator to summarize the winning path and assembles the outcome.
DebateOutcome finish_debate(DebateState& state);

DebateOutcome run_debate(const DebateInput& input, const DebateConfig& cfg, const DebateResources& res);

/// Mediator summary of the winning path; falls back to the concatenated path texts on failure.
struct Explanation {
    std::string text;
    bool fallback = false;
    std::optional<MediatorVerdict> verdict;
};
Explanation summarize_explanation(const ConsensusGraph& graph, const std::vector<NodeId>& path, AgentSession& mediator);

std::string fallback_explanation(const ConsensusGraph& graph, const std::vector<NodeId>& path);

/// Writes <dir>/<case_id>.trail.json atomically and returns the path.
std::string write_trail(const DebateOutcome& outcome, const std::string& dir);

}  // namespace falsify
