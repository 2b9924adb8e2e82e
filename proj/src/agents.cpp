#include "falsify/agents.hpp"

#include "falsify/error.hpp"
#include "falsify/log.hpp"
#include "falsify/text.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <regex>
#include <sstream>

namespace falsify {

std::string_view to_string(VerdictStatus s) noexcept { return s == VerdictStatus::Continue ? "CONTINUE" : "CONSENSUS"; }
std::string_view to_string(VerdictWinner w) noexcept { return w == VerdictWinner::Proponent ? "PROPONENT" : "OPPONENT"; }

namespace {

[[noreturn]] void parse_fail(const std::string& why) { throw Error(Errc::ParseFailure, why); }

// Drops list bullets and markdown emphasis so "- **Hypothesis:** X" reads as "Hypothesis: X".
std::string clean_line(std::string_view raw) {
    std::string s;
    s.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] == '*' || raw[i] == '`') continue;
        s.push_back(raw[i]);
    }
    s = text::trim(s);
    while (!s.empty() && (s.front() == '-' || s.front() == '>' || s.front() == '#')) s = text::trim(s.substr(1));
    return s;
}

std::string strip_wrapping(std::string s) {
    s = text::trim(s);
    auto strip_pair = [&](char open, char close) {
        if (s.size() >= 2 && s.front() == open && s.back() == close) s = text::trim(s.substr(1, s.size() - 2));
    };
    strip_pair('"', '"');
    strip_pair('[', ']');
    strip_pair('\'', '\'');
    return s;
}

struct Field {
    std::string value;
    bool found = false;
};

// Text after "<label>:" or "<label> (annotation):", or nullopt when line is not that label.
std::optional<std::string> label_value(std::string_view line, std::string_view label) {
    if (!text::starts_with_ci(line, label)) return std::nullopt;
    auto rest = text::trim(line.substr(label.size()));
    if (!rest.empty() && rest.front() == '(') {
        const auto close = rest.find(')');
        if (close == std::string::npos) return std::nullopt;
        rest = text::trim(std::string_view(rest).substr(close + 1));
    }
    if (rest.empty() || rest.front() != ':') return std::nullopt;
    return text::trim(std::string_view(rest).substr(1));
}

// Returns the text following "<label>:" on its line, plus continuation lines
// up to the next recognised label when multiline is set.
Field find_field(const std::vector<std::string>& lines, const std::vector<std::string_view>& labels,
                 const std::vector<std::string_view>& stop_labels, bool multiline) {
    Field f;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto line = clean_line(lines[i]);
        for (auto label : labels) {
            auto value = label_value(line, label);
            if (!value) continue;
            f.found = true;
            f.value = std::move(*value);
            if (multiline) {
                for (std::size_t k = i + 1; k < lines.size(); ++k) {
                    const auto next = clean_line(lines[k]);
                    bool stop = false;
                    for (auto sl : stop_labels) stop = stop || label_value(next, sl).has_value();
                    if (stop) break;
                    if (!next.empty()) f.value += (f.value.empty() ? "" : " ") + next;
                }
            }
            return f;
        }
    }
    return f;
}

std::vector<std::string> lines_of(std::string_view s) {
    std::vector<std::string> out;
    for (auto& l : text::split(s, '\n')) {
        if (!l.empty() && l.back() == '\r') l.pop_back();
        out.push_back(std::move(l));
    }
    return out;
}

}  // namespace

std::pair<double, bool> parse_confidence(std::string_view raw) {
    static const std::regex number(R"(([-+]?(?:\d+\.?\d*|\.\d+))\s*(%)?)");
    std::cmatch m;
    const std::string s(raw);
    if (!std::regex_search(s.c_str(), m, number)) parse_fail("no numeric confidence in '" + s + "'");
    double v = std::stod(m[1].str());
    if (m[2].matched || v > 1.0) v /= 100.0;
    if (!std::isfinite(v)) parse_fail("confidence is not finite");
    if (v < 0.0 || v > 1.0) {
        log().warn("confidence '{}' clamped to [0,1]", s);
        return {std::clamp(v, 0.0, 1.0), true};
    }
    return {v, false};
}

ProponentOutput parse_proponent(std::string_view completion) {
    const auto lines = lines_of(completion);
    const std::vector<std::string_view> all{"reasoning", "hypothesis", "revised hypothesis", "confidence"};
    auto hyp = find_field(lines, {"revised hypothesis", "hypothesis"}, all, false);
    if (!hyp.found) parse_fail("missing 'Hypothesis:' line");
    auto conf = find_field(lines, {"confidence"}, all, false);
    if (!conf.found) parse_fail("missing 'Confidence:' line");

    ProponentOutput out;
    out.hypothesis = hyp.value;
    while (!out.hypothesis.empty() && out.hypothesis.back() == '.') out.hypothesis.pop_back();
    out.hypothesis = strip_wrapping(out.hypothesis);
    while (!out.hypothesis.empty() && out.hypothesis.back() == '.') out.hypothesis.pop_back();
    if (out.hypothesis.empty()) parse_fail("empty hypothesis");
    std::tie(out.confidence, out.confidence_clamped) = parse_confidence(conf.value);
    out.reasoning = find_field(lines, {"reasoning"}, all, true).value;
    return out;
}

std::string parse_probe(std::string_view completion) {
    auto f = find_field(lines_of(completion), {"probe", "visual probe"}, {}, false);
    if (!f.found) parse_fail("missing 'Probe:' line");
    auto v = strip_wrapping(f.value);
    if (v.empty()) parse_fail("empty probe");
    return v;
}

OpponentArgument parse_argument(std::string_view completion) {
    OpponentArgument out;
    std::vector<std::string> kept;
    for (const auto& line : lines_of(completion)) {
        const auto c = clean_line(line);
        if (text::starts_with_ci(c, "counter-evidence strength") || text::starts_with_ci(c, "counter evidence strength")) {
            const auto colon = c.find(':');
            if (colon != std::string::npos) out.strength_label = strip_wrapping(c.substr(colon + 1));
            continue;
        }
        kept.push_back(line);
    }
    std::ostringstream ss;
    for (std::size_t i = 0; i < kept.size(); ++i) ss << (i ? "\n" : "") << kept[i];
    out.text = text::trim(ss.str());
    if (out.text.empty()) parse_fail("empty counter-argument");
    return out;
}

std::string parse_feedback(std::string_view completion) {
    const auto lines = lines_of(completion);
    auto f = find_field(lines, {"feedback"}, {}, true);
    auto v = text::trim(f.found ? f.value : std::string(completion));
    if (v.empty()) parse_fail("empty mediator feedback");
    return v;
}

MediatorVerdict parse_verdict(std::string_view completion) {
    std::string body(completion);
    if (auto fence = body.find("```"); fence != std::string::npos) {
        auto start = body.find('\n', fence);
        auto end = start == std::string::npos ? std::string::npos : body.find("```", start);
        if (start != std::string::npos && end != std::string::npos) body = body.substr(start + 1, end - start - 1);
    }
    const auto open = body.find('{');
    const auto close = body.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open) parse_fail("no JSON object in verdict");

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body.substr(open, close - open + 1));
    } catch (const nlohmann::json::exception& e) {
        parse_fail(std::string("verdict is not valid JSON: ") + e.what());
    }

    auto get_string = [&](const char* key) {
        if (!j.contains(key)) parse_fail(std::string("verdict missing '") + key + "'");
        if (!j[key].is_string()) parse_fail(std::string("verdict field '") + key + "' is not a string");
        return j[key].get<std::string>();
    };

    MediatorVerdict v;
    const auto status = get_string("status");
    if (status == "CONTINUE") v.status = VerdictStatus::Continue;
    else if (status == "CONSENSUS") v.status = VerdictStatus::Consensus;
    else parse_fail("verdict status '" + status + "' is not CONTINUE or CONSENSUS");

    const auto winner = get_string("winner");
    if (winner == "PROPONENT") v.winner = VerdictWinner::Proponent;
    else if (winner == "OPPONENT") v.winner = VerdictWinner::Opponent;
    else parse_fail("verdict winner '" + winner + "' is not PROPONENT or OPPONENT");

    v.current_best_diagnosis = get_string("current_best_diagnosis");
    v.explanation = get_string("explanation");
    if (!j.contains("confidence_score") || !j["confidence_score"].is_number())
        parse_fail("verdict confidence_score missing or not a number");
    v.confidence_score = j["confidence_score"].get<double>();
    if (!(v.confidence_score >= 0.0 && v.confidence_score <= 1.0))
        parse_fail("verdict confidence_score outside [0,1]");
    return v;
}

AgentContext make_context(Role role, std::string knowledge) {
    AgentContext ctx;
    ctx.role = role;
    ctx.knowledge = std::move(knowledge);
    switch (role) {
        case Role::Proponent: ctx.system_prompt = prompts::kProponentSystem; break;
        case Role::Opponent: ctx.system_prompt = prompts::kOpponentSystem; break;
        case Role::Mediator: ctx.system_prompt = prompts::kMediatorSystem; break;
    }
    return ctx;
}

ChatBackend& RoleBackends::for_role(Role r) const {
    const auto& p = r == Role::Proponent ? proponent : r == Role::Opponent ? opponent : mediator;
    require(p != nullptr, "no backend configured for " + std::string(to_string(r)), Errc::ConfigError);
    return *p;
}

AgentSession::AgentSession(std::string case_id, RoleBackends backends, std::string knowledge, Observer observer)
    : case_id_(std::move(case_id)),
      backends_(std::move(backends)),
      observer_(std::move(observer)),
      proponent_(make_context(Role::Proponent, knowledge)),
      opponent_(make_context(Role::Opponent, knowledge)),
      mediator_(make_context(Role::Mediator, knowledge)) {}

AgentContext& AgentSession::context_mut(Role r) {
    return r == Role::Proponent ? proponent_ : r == Role::Opponent ? opponent_ : mediator_;
}

const AgentContext& AgentSession::context(Role r) const {
    return r == Role::Proponent ? proponent_ : r == Role::Opponent ? opponent_ : mediator_;
}

template <class Parse>
auto AgentSession::ask(Role role, std::string action, std::string turn, std::string user_prompt, Parse&& parse)
    -> decltype(parse(std::string_view{})) {
    auto& ctx = context_mut(role);
    ChatRequest req{case_id_, role, std::move(action), std::move(turn), 1,
                    {{"system", ctx.system_prompt}, {"user", user_prompt}}};

    // One reprompt on a parse failure; transport errors propagate immediately.
    for (int attempt = 1;; ++attempt) {
        req.attempt = attempt;
        CallRecord rec{role, req.action, req.turn, attempt, req.messages, {}, {}, {}};
        ChatCompletion completion;
        try {
            completion = backends_.for_role(role).complete(req);
        } catch (const Error& e) {
            ++calls_;
            rec.error = e.what();
            if (observer_) observer_(rec);
            throw;
        }
        ++calls_;
        usage_ += completion.usage;
        rec.completion = completion.text;
        rec.usage = completion.usage;
        try {
            auto out = parse(std::string_view(completion.text));
            if (observer_) observer_(rec);
            ctx.history.push_back({"user", user_prompt});
            ctx.history.push_back({"assistant", completion.text});
            return out;
        } catch (const Error& e) {
            if (e.code() != Errc::ParseFailure) throw;
            rec.error = e.what();
            if (observer_) observer_(rec);
            if (attempt >= 2) throw;
            req.messages.push_back({"assistant", completion.text});
            req.messages.push_back({"user", prompts::render(prompts::kReprompt, {{"REASON", e.what()}})});
        }
    }
}

ProponentOutput AgentSession::proponent_generate(std::string_view image_description, std::string_view query) {
    auto prompt = prompts::render(prompts::kProponentInit, {{"GLOBAL_FEATURES_DESCRIPTION", prompts::or_none(image_description)},
                                                            {"USER_QUERY", prompts::or_none(query)}});
    return ask(Role::Proponent, "generate", "0", std::move(prompt), parse_proponent);
}

ProponentOutput AgentSession::proponent_revise(int turn, std::string_view h_prev, std::string_view evidence,
                                               std::string_view local_features, std::string_view feedback) {
    require(!text::trim(h_prev).empty(), "revision needs the current hypothesis");
    auto prompt = prompts::render(prompts::kProponentRevise, {{"CURRENT_HYPOTHESIS", std::string(h_prev)},
                                                              {"OPPONENT_ARGUMENT", prompts::or_none(evidence)},
                                                              {"LOCAL_VISUAL_FEATURES", prompts::or_none(local_features)},
                                                              {"MEDIATOR_FEEDBACK", prompts::or_none(feedback)}});
    return ask(Role::Proponent, "revise", std::to_string(turn), std::move(prompt), parse_proponent);
}

CounterfactualProbe AgentSession::opponent_gen_probe(int turn, std::string_view hypothesis, std::string target_id) {
    require(!text::trim(hypothesis).empty(), "probe generation needs a non-empty hypothesis");
    auto prompt = prompts::render(prompts::kOpponentProbe, {{"CURRENT_HYPOTHESIS", std::string(hypothesis)},
                                                            {"DOMAIN_KNOWLEDGE", prompts::or_none(opponent_.knowledge)}});
    auto text = ask(Role::Opponent, "probe", std::to_string(turn), std::move(prompt), parse_probe);
    return {std::move(text), std::move(target_id)};
}

OpponentArgument AgentSession::opponent_argue(int turn, std::string_view hypothesis, std::string_view probe,
                                              const std::vector<std::pair<std::size_t, double>>& top_regions,
                                              std::string_view region_descriptions) {
    require(!top_regions.empty(), "counter-argument needs at least one region");
    auto prompt = prompts::render(prompts::kOpponentArgue, {{"CURRENT_HYPOTHESIS", std::string(hypothesis)},
                                                            {"ROI_NAME", prompts::or_none(probe)},
                                                            {"LOCAL_FEATURES_DESCRIPTION", prompts::or_none(region_descriptions)}});
    return ask(Role::Opponent, "argue", std::to_string(turn), std::move(prompt), parse_argument);
}

std::string AgentSession::mediator_evaluate(int turn, std::string_view h_prev, std::string_view evidence) {
    require(!text::trim(evidence).empty(), "mediator evaluation needs counter-evidence");
    auto prompt = prompts::render(prompts::kMediatorEvaluate,
                                  {{"OLD_HYPOTHESIS", prompts::or_none(h_prev)}, {"OPPONENT_ARGUMENT", std::string(evidence)}});
    return ask(Role::Mediator, "evaluate", std::to_string(turn), std::move(prompt), parse_feedback);
}

MediatorVerdict AgentSession::mediator_adjudicate(const std::string& turn, const std::vector<TranscriptStep>& transcript) {
    require(!transcript.empty(), "adjudication needs at least one debate step");
    std::string history;
    for (std::size_t i = 0; i < transcript.size(); ++i) {
        if (transcript.size() > 1) history += "Turn " + std::to_string(i + 1) + ":\n";
        history += prompts::render(prompts::kMediatorHistoryStep,
                                   {{"OLD_HYPOTHESIS", prompts::or_none(transcript[i].old_hypothesis)},
                                    {"OPPONENT_ARGUMENT", prompts::or_none(transcript[i].opponent_argument)},
                                    {"PROPONENT_RESPONSE", prompts::or_none(transcript[i].proponent_response)}});
        if (i + 1 < transcript.size()) history += "\n";
    }
    auto prompt = prompts::render(prompts::kMediatorAdjudicate, {{"DEBATE_HISTORY", history}});
    return ask(Role::Mediator, "adjudicate", turn, std::move(prompt), parse_verdict);
}

}  // namespace falsify
