#include "falsify/orchestrator.hpp"

#include "falsify/error.hpp"
#include "falsify/log.hpp"
#include "falsify/text.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>

namespace falsify {

namespace {

std::string utc_now() {
    using namespace std::chrono;
    const auto now = system_clock::now();
    const auto t = system_clock::to_time_t(now);
    const auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    return fmt::format("{}.{:03d}Z", buf, static_cast<int>(ms));
}

nlohmann::json usage_json(const TokenUsage& u) {
    return {{"prompt", u.prompt}, {"completion", u.completion}, {"total", u.total()}};
}

std::string describe_regions(const PatchGrid& grid, const FalsificationAttentionMap& m,
                             const std::vector<std::size_t>& regions) {
    std::string out;
    for (auto i : regions) {
        if (!out.empty()) out += "; ";
        out += fmt::format("patch {} (row {}, col {}): attention {:.4f}", i, i / grid.cols, i % grid.cols, m.alphas[i]);
    }
    return out;
}

}  // namespace

std::string_view to_string(TerminationReason r) noexcept {
    switch (r) {
        case TerminationReason::WeakAttack: return "weak_attack";
        case TerminationReason::MaxTurns: return "max_turns";
        case TerminationReason::DuplicateStall: return "duplicate_stall";
        case TerminationReason::AgentError: return "agent_error";
    }
    return "unknown";
}

void DebateConfig::validate() const {
    require(t_max >= 1, "t_max must be >= 1", Errc::ConfigError);
    require(theta_attack > 0.0 && theta_attack < 1.0, "theta_attack must lie in (0,1)", Errc::ConfigError);
    require(theta_sim > 0.0 && theta_sim < 1.0, "theta_sim must lie in (0,1)", Errc::ConfigError);
    require(tau > 0.0, "tau must be > 0", Errc::ConfigError);
    require(top_k >= 1, "top_k must be >= 1", Errc::ConfigError);
}

nlohmann::json DebateConfig::to_json() const {
    return {{"t_max", t_max}, {"theta_attack", theta_attack}, {"theta_sim", theta_sim}, {"tau", tau}, {"top_k", top_k}};
}

nlohmann::json AgentTurn::to_json() const {
    nlohmann::json j{{"seq", seq}, {"turn", turn}, {"role", role}, {"action", action}};
    if (!prompt.empty() || !completion.empty()) {
        j["attempt"] = attempt;
        j["system_prompt"] = system_prompt;
        j["prompt"] = prompt;
        j["completion"] = completion;
    }
    if (probe) j["probe"] = *probe;
    if (!alphas_summary.empty()) {
        auto arr = nlohmann::json::array();
        for (const auto& [i, a] : alphas_summary) arr.push_back({{"index", i}, {"alpha", a}});
        j["alphas_summary"] = std::move(arr);
    }
    if (attack_strength) j["attack_strength"] = *attack_strength;
    if (!edge_weights.empty()) {
        auto arr = nlohmann::json::array();
        for (const auto& e : edge_weights)
            arr.push_back({{"src", e.src}, {"dst", e.dst}, {"kind", to_string(e.kind)}, {"weight", e.weight}});
        j["edge_weights"] = std::move(arr);
    }
    if (token_usage) j["token_usage"] = usage_json(*token_usage);
    if (!note.empty()) j["note"] = note;
    if (!extra.is_null()) j["extra"] = extra;
    j["timestamp"] = timestamp;
    return j;
}

AgentTurn& AuditTrail::append(AgentTurn t) {
    t.seq = turns.size();
    if (t.timestamp.empty()) t.timestamp = utc_now();
    turns.push_back(std::move(t));
    return turns.back();
}

TokenUsage AuditTrail::total_usage() const {
    TokenUsage u;
    for (const auto& t : turns)
        if (t.token_usage) u += *t.token_usage;
    return u;
}

std::size_t AuditTrail::agent_calls() const {
    std::size_t n = 0;
    for (const auto& t : turns)
        if (t.role == "proponent" || t.role == "opponent" || t.role == "mediator")
            if (!t.prompt.empty()) ++n;
    return n;
}

nlohmann::json AuditTrail::to_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& t : turns) arr.push_back(t.to_json());
    return arr;
}

nlohmann::json DebateOutcome::summary_json() const {
    nlohmann::json j{{"case_id", case_id},
                     {"diagnosis", diagnosis},
                     {"label", label},
                     {"confidence", confidence},
                     {"explanation", explanation},
                     {"explanation_fallback", explanation_fallback},
                     {"turns_used", turns_used},
                     {"termination_reason", to_string(termination_reason)},
                     {"winning_path", winning_path},
                     {"token_usage", usage_json(usage())},
                     {"agent_calls", trail.agent_calls()}};
    if (!error.empty()) j["error"] = error;
    return j;
}

nlohmann::json DebateOutcome::trail_document() const {
    return {{"case_id", case_id},
            {"config", trail.config},
            {"started_at", trail.started_at},
            {"finished_at", trail.finished_at},
            {"turns", trail.to_json()},
            {"graph", graph},
            {"outcome", summary_json()}};
}

// ---------------------------------------------------------------------------

DebateState::DebateState(DebateInput input, DebateConfig cfg, const DebateResources& res)
    : input_(std::move(input)), cfg_(cfg), res_(res), trail_(std::make_shared<AuditTrail>()) {
    cfg_.validate();
    require(res_.embedder != nullptr || input_.patch_grid.has_value(), "no embedding provider configured",
            Errc::ConfigError);
    trail_->config = cfg_.to_json();
    trail_->config["backends"] = {
        {"proponent", res_.backends.proponent ? res_.backends.proponent->name() : "none"},
        {"opponent", res_.backends.opponent ? res_.backends.opponent->name() : "none"},
        {"mediator", res_.backends.mediator ? res_.backends.mediator->name() : "none"}};
    trail_->config["encoder"] = res_.embedder ? res_.embedder->name() : "inline";
    trail_->started_at = utc_now();

    std::weak_ptr<AuditTrail> sink = trail_;
    session_ = std::make_unique<AgentSession>(
        input_.case_id, res_.backends, res_.knowledge, [sink, this](const CallRecord& c) {
            auto trail = sink.lock();
            if (!trail) return;
            AgentTurn t;
            t.turn = c.turn == "final" ? next_turn_ : std::stoi(c.turn);
            t.role = std::string(to_string(c.role));
            t.action = c.action;
            t.attempt = c.attempt;
            t.system_prompt = c.messages.empty() ? "" : c.messages.front().content;
            t.prompt = c.messages.back().content;
            t.completion = c.completion;
            t.token_usage = c.usage;
            t.note = c.error;
            trail->append(std::move(t));
        });

    try {
        grid_ = input_.patch_grid ? *input_.patch_grid : res_.embedder->embed_image(input_.image_ref);
        grid_.validate();

        const auto& desc = input_.caption.empty() ? input_.query : input_.caption;
        auto h0 = session_->proponent_generate(desc, input_.query);
        HypothesisNode root{"h0", h0.hypothesis, {}, 0, unit_text_embedding(h0.hypothesis)};
        graph_.emplace(std::move(root), cfg_.theta_attack);
        current_ = "h0";
    } catch (const Error& e) {
        fail(e.what());
    }
}

void DebateState::fail(const std::string& why) {
    log().error("{}: debate aborted: {}", input_.case_id, why);
    terminated_ = true;
    reason_ = TerminationReason::AgentError;
    error_ = why;
    AgentTurn t;
    t.turn = next_turn_;
    t.role = "graph";
    t.action = "abort";
    t.note = why;
    record(std::move(t));
}

void DebateState::record(AgentTurn t) { trail_->append(std::move(t)); }

Embedding DebateState::unit_text_embedding(std::string_view text) {
    if (auto it = embed_cache_.find(text); it != embed_cache_.end()) return it->second;
    require(res_.embedder != nullptr, "no embedding provider for text", Errc::EmbeddingError);
    auto v = res_.embedder->embed_text(text);
    double sq = 0.0;
    for (double x : v) sq += x * x;
    const double n = std::sqrt(sq);
    require(n > 0.0, "text embedding has zero norm", Errc::EmbeddingError);
    for (double& x : v) x /= n;
    embed_cache_.emplace(std::string(text), v);
    return v;
}

double DebateState::similarity(std::string_view a, std::string_view b) {
    return cosine(unit_text_embedding(a), unit_text_embedding(b));
}

void run_single_turn(DebateState& s) {
    require(!s.terminated_, "debate already terminated");
    const int t = s.next_turn_;
    auto& graph = *s.graph_;
    const auto h_cur = graph.hypothesis(s.current_);

    try {
        // 1. visual falsification
        auto probe = s.session_->opponent_gen_probe(t, h_cur.text, h_cur.id);
        const auto q = s.unit_text_embedding(probe.text);
        const auto attn = falsification_attention(q, s.grid_, s.cfg_.tau, probe.text);
        const auto k = std::min(s.cfg_.top_k, attn.size());
        const auto regions = top_k_regions(attn, k);
        const double strength = attack_strength(attn, regions);

        std::vector<std::pair<std::size_t, double>> top;
        for (auto i : regions) top.emplace_back(i, attn.alphas[i]);
        AgentTurn vfm;
        vfm.turn = t;
        vfm.role = "vfm";
        vfm.action = "attend";
        vfm.probe = probe.text;
        vfm.alphas_summary = top;
        vfm.attack_strength = strength;
        s.record(std::move(vfm));

        if (strength < s.cfg_.theta_attack) {
            AgentTurn stop;
            stop.turn = t;
            stop.role = "graph";
            stop.action = "stop";
            stop.note = fmt::format("attack strength {:.6f} below threshold {}", strength, s.cfg_.theta_attack);
            s.record(std::move(stop));
            s.terminated_ = true;
            s.reason_ = TerminationReason::WeakAttack;
            return;
        }

        // 2. counter-evidence
        const auto regions_text = describe_regions(s.grid_, attn, regions);
        auto argument = s.session_->opponent_argue(t, h_cur.text, probe.text, top, regions_text);

        // 3. mediated revision
        auto feedback = s.session_->mediator_evaluate(t, h_cur.text, argument.text);

        std::optional<ProponentOutput> revision;
        try {
            revision = s.session_->proponent_revise(t, h_cur.text, argument.text, regions_text, feedback);
        } catch (const Error& e) {
            if (e.code() != Errc::ParseFailure) throw;
            AgentTurn skip;
            skip.turn = t;
            skip.role = "graph";
            skip.action = "revision_failed";
            skip.note = std::string("revision unparseable, keeping ") + h_cur.id + ": " + e.what();
            s.record(std::move(skip));
        }

        if (revision) {
            const bool duplicate = graph.is_semantic_duplicate(
                revision->hypothesis, s.cfg_.theta_sim,
                [&s](std::string_view a, std::string_view b) { return s.similarity(a, b); });
            s.last_was_duplicate_ = duplicate;
            if (duplicate) {
                AgentTurn skip;
                skip.turn = t;
                skip.role = "graph";
                skip.action = "prune_duplicate";
                skip.note = "revision '" + revision->hypothesis + "' duplicates an existing hypothesis";
                s.record(std::move(skip));
            } else {
                double w_rect = revision->confidence;
                if (w_rect < kMinEdgeWeight) {
                    log().warn("{}: rectification confidence {} raised to {}", s.input_.case_id, w_rect, kMinEdgeWeight);
                    w_rect = kMinEdgeWeight;
                }
                EvidenceNode e{"e" + std::to_string(t), argument.text, regions, strength, t};
                HypothesisNode h{"h" + std::to_string(t), revision->hypothesis, {}, t,
                                 s.unit_text_embedding(revision->hypothesis)};
                graph.expand(s.current_, std::move(e), std::move(h), w_rect);
                s.current_ = "h" + std::to_string(t);

                AgentTurn upd;
                upd.turn = t;
                upd.role = "graph";
                upd.action = "expand";
                const auto& edges = graph.edges();
                for (auto it = edges.end() - 2; it != edges.end(); ++it)
                    upd.edge_weights.push_back({it->src, it->dst, it->kind, it->weight});
                if (argument.strength_label) upd.extra = {{"strength_label", *argument.strength_label}};
                s.record(std::move(upd));
            }
        } else {
            s.last_was_duplicate_ = false;
        }

        ++s.turns_used_;
        ++s.next_turn_;
        if (s.next_turn_ > s.cfg_.t_max) {
            s.terminated_ = true;
            s.reason_ = s.last_was_duplicate_ ? TerminationReason::DuplicateStall : TerminationReason::MaxTurns;
        }
    } catch (const Error& e) {
        s.fail(e.what());
    }
}

std::string fallback_explanation(const ConsensusGraph& graph, const std::vector<NodeId>& path) {
    std::string out;
    for (const auto& id : path) {
        if (!out.empty()) out += "\n";
        out += node_text(graph.node(id));
    }
    return out;
}

Explanation summarize_explanation(const ConsensusGraph& graph, const std::vector<NodeId>& path,
                                  AgentSession& mediator) {
    std::vector<TranscriptStep> steps;
    if (path.size() == 1) {
        steps.push_back({graph.hypothesis(path[0]).text, {}, {}});
    } else {
        for (std::size_t i = 0; i + 2 < path.size(); i += 2) {
            const auto& e = graph.evidence(path[i + 1]);
            std::string ev = e.text;
            ev += fmt::format(" [regions:");
            for (auto r : e.region_indices) ev += fmt::format(" {}", r);
            ev += fmt::format("; attack strength {:.4f}]", e.attack_strength);
            steps.push_back({graph.hypothesis(path[i]).text, std::move(ev), graph.hypothesis(path[i + 2]).text});
        }
    }
    try {
        auto verdict = mediator.mediator_adjudicate("final", steps);
        auto text = text::trim(verdict.explanation);
        if (text.empty()) return {fallback_explanation(graph, path), true, std::move(verdict)};
        return {std::move(text), false, std::move(verdict)};
    } catch (const Error& e) {
        log().warn("mediator summary failed, using path text: {}", e.what());
        return {fallback_explanation(graph, path), true, std::nullopt};
    }
}

DebateOutcome finish_debate(DebateState& s) {
    DebateOutcome out;
    out.case_id = s.input_.case_id;
    out.turns_used = s.turns_used_;
    out.termination_reason = s.reason_;
    out.error = s.error_;

    if (s.graph_) {
        const auto& graph = *s.graph_;
        const auto diag = graph.final_diagnosis();
        const auto& winner = graph.hypothesis(diag.winner);
        out.diagnosis = winner.text;
        out.label = winner.label;
        out.confidence = diag.confidence;
        out.winning_path = graph.winning_path(diag.winner);
        out.graph = graph.to_json();

        if (s.reason_ == TerminationReason::AgentError) {
            out.explanation = fallback_explanation(graph, out.winning_path);
            out.explanation_fallback = true;
        } else {
            auto ex = summarize_explanation(graph, out.winning_path, *s.session_);
            out.explanation = std::move(ex.text);
            out.explanation_fallback = ex.fallback;
            AgentTurn fin;
            fin.turn = s.next_turn_;
            fin.role = "mediator";
            fin.action = "summary";
            if (ex.verdict) {
                fin.extra = {{"status", to_string(ex.verdict->status)},
                             {"winner", to_string(ex.verdict->winner)},
                             {"current_best_diagnosis", ex.verdict->current_best_diagnosis},
                             {"confidence_score", ex.verdict->confidence_score}};
            }
            if (ex.fallback) fin.note = "explanation fallback: concatenated winning path";
            s.record(std::move(fin));
        }
    } else {
        out.graph = nlohmann::json::object();
    }

    s.trail_->finished_at = utc_now();
    out.trail = *s.trail_;
    return out;
}

DebateOutcome run_debate(const DebateInput& input, const DebateConfig& cfg, const DebateResources& res) {
    DebateState state(input, cfg, res);
    while (!state.terminated()) run_single_turn(state);
    return finish_debate(state);
}

std::string write_trail(const DebateOutcome& outcome, const std::string& dir) {
    const auto path = std::filesystem::path(dir) / (outcome.case_id + ".trail.json");
    fsutil::write_file_atomic(path, outcome.trail_document().dump(2) + "\n");
    return path.string();
}

}  // namespace falsify
