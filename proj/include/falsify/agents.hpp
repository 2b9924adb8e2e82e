#pragma once

#include "falsify/backend.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace falsify {

// ---------------------------------------------------------------------------
// Typed agent outputs

struct ProponentOutput {
    std::string reasoning;
    std::string hypothesis;
    double confidence = 0.0;  // [0,1]
    bool confidence_clamped = false;
};

struct CounterfactualProbe {
    std::string text;
    std::string target_hypothesis;  // node id
};

struct OpponentArgument {
    std::string text;
    std::optional<std::string> strength_label;  // High / Medium / Low, metadata only
};

enum class VerdictStatus { Continue, Consensus };
enum class VerdictWinner { Proponent, Opponent };

struct MediatorVerdict {
    VerdictStatus status = VerdictStatus::Continue;
    VerdictWinner winner = VerdictWinner::Proponent;
    std::string current_best_diagnosis;
    double confidence_score = 0.0;
    std::string explanation;
};

std::string_view to_string(VerdictStatus s) noexcept;
std::string_view to_string(VerdictWinner w) noexcept;

/// One step of debate history as the mediator sees it.
struct TranscriptStep {
    std::string old_hypothesis;
    std::string opponent_argument;
    std::string proponent_response;
};

// ---------------------------------------------------------------------------
// Prompt templates

namespace prompts {

extern const std::string_view kProponentSystem;
extern const std::string_view kProponentInit;
extern const std::string_view kProponentRevise;
extern const std::string_view kOpponentSystem;
extern const std::string_view kOpponentProbe;
extern const std::string_view kOpponentArgue;
extern const std::string_view kMediatorSystem;
extern const std::string_view kMediatorEvaluate;
extern const std::string_view kMediatorAdjudicate;
extern const std::string_view kMediatorHistoryStep;
extern const std::string_view kReprompt;

/// Replaces every {{NAME}} in tmpl. Throws if a slot has no value; values
/// are inserted verbatim and never rescanned.
std::string render(std::string_view tmpl, const std::map<std::string, std::string>& slots);

/// Empty slot values are rendered as "none".
std::string or_none(std::string_view s);

}  // namespace prompts

// ---------------------------------------------------------------------------
// Parsers. Every input yields a value or Error(ParseFailure); none of them crash.

/// "85%", "85", "0.85" -> 0.85; values outside [0,1] are clamped and flagged.
std::pair<double, bool> parse_confidence(std::string_view raw);

ProponentOutput parse_proponent(std::string_view completion);
std::string parse_probe(std::string_view completion);
OpponentArgument parse_argument(std::string_view completion);
std::string parse_feedback(std::string_view completion);
/// Strips code fences, parses the first JSON object, validates enums and ranges.
MediatorVerdict parse_verdict(std::string_view completion);

// ---------------------------------------------------------------------------
// Agent contexts and the per-debate session

struct AgentContext {
    Role role = Role::Proponent;
    std::string system_prompt;
    std::string knowledge;
    std::vector<ChatMessage> history;  // chronological prompt/completion pairs
};

AgentContext make_context(Role role, std::string knowledge = {});

struct RoleBackends {
    std::shared_ptr<ChatBackend> proponent;
    std::shared_ptr<ChatBackend> opponent;
    std::shared_ptr<ChatBackend> mediator;

    [[nodiscard]] ChatBackend& for_role(Role r) const;
};

struct CallRecord {
    Role role = Role::Proponent;
    std::string action;
    std::string turn;
    int attempt = 1;
    std::vector<ChatMessage> messages;
    std::string completion;
    TokenUsage usage;
    std::string error;  // parse or transport failure, empty on success
};

/// Runs the three agents for one debate. Not shared across debates.
class AgentSession {
public:
    using Observer = std::function<void(const CallRecord&)>;

    AgentSession(std::string case_id, RoleBackends backends, std::string knowledge = {}, Observer observer = {});

    ProponentOutput proponent_generate(std::string_view image_description, std::string_view query);
    ProponentOutput proponent_revise(int turn, std::string_view h_prev, std::string_view evidence,
                                     std::string_view local_features, std::string_view feedback);
    CounterfactualProbe opponent_gen_probe(int turn, std::string_view hypothesis, std::string target_id);
    OpponentArgument opponent_argue(int turn, std::string_view hypothesis, std::string_view probe,
                                    const std::vector<std::pair<std::size_t, double>>& top_regions,
                                    std::string_view region_descriptions);
    std::string mediator_evaluate(int turn, std::string_view h_prev, std::string_view evidence);
    MediatorVerdict mediator_adjudicate(const std::string& turn, const std::vector<TranscriptStep>& transcript);

    [[nodiscard]] const AgentContext& context(Role r) const;
    [[nodiscard]] std::size_t call_count() const noexcept { return calls_; }
    [[nodiscard]] const TokenUsage& usage() const noexcept { return usage_; }

private:
    template <class Parse>
    auto ask(Role role, std::string action, std::string turn, std::string user_prompt, Parse&& parse)
        -> decltype(parse(std::string_view{}));

    AgentContext& context_mut(Role r);

    std::string case_id_;
    RoleBackends backends_;
    Observer observer_;
    AgentContext proponent_;
    AgentContext opponent_;
    AgentContext mediator_;
    std::size_t calls_ = 0;
    TokenUsage usage_;
};

}  // namespace falsify
