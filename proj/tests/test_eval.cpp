#include "falsify/config.hpp"
#include "falsify/eval.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace falsify;
using namespace falsify::testing;

namespace {

DebateOutcome outcome(const std::string& id, const std::string& diagnosis,
                      TerminationReason r = TerminationReason::MaxTurns) {
    DebateOutcome o;
    o.case_id = id;
    o.diagnosis = diagnosis;
    o.termination_reason = r;
    return o;
}

DatasetRecord record(const std::string& id, const std::string& answer,
                     std::optional<std::vector<std::string>> gt = std::nullopt) {
    DatasetRecord r;
    r.case_id = id;
    r.answer = answer;
    r.gt_findings = std::move(gt);
    return r;
}

std::vector<DatasetRecord> corpus() { return load_dataset(data_path("corpus.jsonl"), true).records; }

}  // namespace

TEST(Dataset, LoadsCorpusAndResolvesImages) {
    const auto d = load_dataset(data_path("corpus.jsonl"), true);
    ASSERT_EQ(d.records.size(), 4u);
    EXPECT_TRUE(d.skipped.empty());
    EXPECT_EQ(d.records[0].case_id, "fig2");
    EXPECT_TRUE(std::filesystem::exists(d.records[0].image_ref));
    EXPECT_EQ(d.records[3].gt_findings->size(), 3u);
    const auto in = d.records[0].to_input();
    EXPECT_EQ(in.query, d.records[0].question);
    EXPECT_EQ(in.ground_truth, "Atelectasis");
}

TEST(Dataset, MalformedLinesAreSkippedOrFatal) {
    TempDir tmp("ds");
    fsutil::write_file_atomic(tmp.str("d.jsonl"),
                              "{\"case_id\":\"a\",\"image_ref\":\"x.png\",\"question\":\"q\",\"answer\":\"A\"}\n"
                              "\n"
                              "{\"case_id\":\"b\",\"image_ref\":\"x.png\",\"question\":\"q\"}\n"
                              "not json\n"
                              "{\"case_id\":\"c\",\"image_ref\":\"x.png\",\"question\":\"q\",\"answer\":\"C\"}\n");
    const auto d = load_dataset(tmp.str("d.jsonl"));
    ASSERT_EQ(d.records.size(), 2u);
    EXPECT_EQ(d.records[1].case_id, "c");
    EXPECT_EQ(d.skipped.size(), 2u);
    EXPECT_ERRC(load_dataset(tmp.str("d.jsonl"), true), Errc::SchemaError);

    fsutil::write_file_atomic(tmp.str("dup.jsonl"), "{\"case_id\":\"a\",\"answer\":\"A\"}\n{\"case_id\":\"a\",\"answer\":\"B\"}\n");
    EXPECT_ERRC(load_dataset(tmp.str("dup.jsonl")), Errc::SchemaError);
    EXPECT_ERRC(load_dataset(tmp.str("missing.jsonl")), Errc::FileMissing);
    EXPECT_ERRC(record_from_json({{"case_id", "../x"}, {"answer", "A"}}), Errc::SchemaError);
}

TEST(Accuracy, NormalizedMatchByCaseId) {
    const std::vector<DatasetRecord> recs{record("a", "Atelectasis"), record("b", "Pneumonia"),
                                          record("c", "Cardiomegaly"), record("d", "Normal")};
    // order of outcomes does not matter; 2 of 4 correct
    const std::vector<DebateOutcome> outs{outcome("d", "Pneumothorax"), outcome("a", "Atelectasis."),
                                          outcome("c", "  cardiomegaly"), outcome("b", "Effusion")};
    EXPECT_DOUBLE_EQ(accuracy(outs, recs), 0.5);

    auto with_error = outs;
    with_error[1] = outcome("a", "Atelectasis", TerminationReason::AgentError);
    EXPECT_DOUBLE_EQ(accuracy(with_error, recs), 0.25);
}

TEST(Accuracy, RejectsMisalignedInput) {
    const std::vector<DatasetRecord> recs{record("a", "A"), record("b", "B")};
    EXPECT_ERRC(accuracy({}, {}), Errc::Misalignment);
    EXPECT_ERRC(accuracy({outcome("a", "A")}, recs), Errc::Misalignment);
    EXPECT_ERRC(accuracy({outcome("a", "A"), outcome("z", "B")}, recs), Errc::Misalignment);
    EXPECT_ERRC(accuracy({outcome("a", "A"), outcome("a", "B")}, recs), Errc::Misalignment);
}

TEST(Lexicon, LongestMatchWholeWords) {
    const auto lex = FindingLexicon::load(data_path("lexicon.json"));
    auto ids = [&](std::string_view s) {
        std::vector<std::string> out;
        for (const auto& m : lex.find_mentions(s)) out.push_back(m.finding_id);
        return out;
    };
    EXPECT_EQ(ids("Congestive heart failure and heart failure"),
              (std::vector<std::string>{"congestive_heart_failure", "congestive_heart_failure"}));
    EXPECT_EQ(ids("pleural effusion, then effusion"), (std::vector<std::string>{"pleural_effusion", "pleural_effusion"}));
    EXPECT_TRUE(ids("nodules and pneumonias").empty());  // whole words only
    EXPECT_EQ(ids("Left-sided ATELECTASIS"), (std::vector<std::string>{"atelectasis"}));
    EXPECT_ERRC(FindingLexicon::from_json({{"a", {"x y"}}, {"b", {"X  Y"}}}), Errc::SchemaError);
    EXPECT_ERRC(FindingLexicon::from_json({{"a", nlohmann::json::array()}}), Errc::SchemaError);
}

TEST(Chair, SentenceSplitting) {
    EXPECT_EQ(split_sentences("One. Two?  Three! "), (std::vector<std::string>{"One", "Two", "Three"}));
    EXPECT_EQ(split_sentences("...  "), std::vector<std::string>{});
    EXPECT_EQ(split_sentences("No terminator"), std::vector<std::string>{"No terminator"});
}

TEST(Chair, TwoSentencesOneHallucinatedMention) {
    const auto lex = FindingLexicon::load(data_path("lexicon.json"));
    const auto m = chair_from_counts(chair_counts("The lungs are clear. There is a pneumothorax.", {"atelectasis"}, lex));
    EXPECT_DOUBLE_EQ(m.chair_s, 0.5);
    EXPECT_DOUBLE_EQ(m.chair_i, 1.0);
    EXPECT_FALSE(m.chair_i_undefined);
}

TEST(Chair, EdgeCases) {
    const auto lex = FindingLexicon::load(data_path("lexicon.json"));
    const auto clean = chair_from_counts(chair_counts("Atelectasis with volume loss.", {"atelectasis", "volume_loss"}, lex));
    EXPECT_EQ(clean.chair_s, 0.0);
    EXPECT_EQ(clean.chair_i, 0.0);
    const auto none = chair_from_counts(chair_counts("The study is unremarkable.", {"atelectasis"}, lex));
    EXPECT_TRUE(none.chair_i_undefined);
    EXPECT_EQ(none.chair_i, 0.0);
    EXPECT_EQ(chair_from_counts({}).chair_s, 0.0);
    EXPECT_ERRC(chair_counts("x", {}, FindingLexicon{}), Errc::SchemaError);
    EXPECT_ERRC(chair_metrics({"a"}, {}, lex), Errc::Misalignment);
    EXPECT_ERRC(chair_metrics({"a"}, {record("a", "A")}, lex), Errc::MissingGtFindings);
}

TEST(Chair, HandCountedCorpus) {
    // Counted by hand, sentence by sentence:
    //   chair_a 3 sentences, 4 mentions, 1 bad mention (pneumothorax), 1 bad sentence
    //   chair_b 2 sentences, 3 mentions, none bad
    //   chair_c 3 sentences, 4 mentions, 2 bad (consolidation, pulmonary edema), 2 bad sentences
    //   chair_d 3 sentences, 2 mentions, 1 bad (collapse), 1 bad sentence
    const auto lex = FindingLexicon::load(data_path("lexicon.json"));
    std::ifstream in(data_path("chair/hand_counted.jsonl"));
    std::vector<std::string> explanations;
    std::vector<DatasetRecord> recs;
    for (std::string line; std::getline(in, line);) {
        const auto j = nlohmann::json::parse(line);
        explanations.push_back(j.at("explanation"));
        recs.push_back(record(j.at("case_id"), "x", j.at("gt_findings").get<std::vector<std::string>>()));
    }
    ASSERT_EQ(recs.size(), 4u);
    const std::vector<ChairCounts> per_case{{3, 1, 4, 1}, {2, 0, 3, 0}, {3, 2, 4, 2}, {3, 1, 2, 1}};
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto c = chair_counts(explanations[i], *recs[i].gt_findings, lex);
        EXPECT_EQ(c.sentences, per_case[i].sentences) << recs[i].case_id;
        EXPECT_EQ(c.hallucinated_sentences, per_case[i].hallucinated_sentences) << recs[i].case_id;
        EXPECT_EQ(c.mentions, per_case[i].mentions) << recs[i].case_id;
        EXPECT_EQ(c.hallucinated_mentions, per_case[i].hallucinated_mentions) << recs[i].case_id;
    }
    const auto m = chair_metrics(explanations, recs, lex);
    EXPECT_EQ(m.chair_s, 4.0 / 11.0);
    EXPECT_EQ(m.chair_i, 4.0 / 13.0);
}

TEST(Batch, ReportOnBundledCorpus) {
    const auto cfg = bundled_config();
    const auto res = build_resources(cfg);
    const auto lex = FindingLexicon::load(cfg.lexicon_path);
    const auto r = run_batch(corpus(), cfg.debate, res, {1, std::nullopt, &lex});
    EXPECT_EQ(r.report.n_cases, 4u);
    EXPECT_EQ(r.report.n_agent_error, 0u);
    EXPECT_DOUBLE_EQ(r.report.accuracy, 1.0);
    EXPECT_DOUBLE_EQ(r.report.mean_turns, 1.75);
    ASSERT_TRUE(r.report.chair.has_value());
    std::int64_t tokens = 0;
    for (const auto& o : r.outcomes) tokens += o.usage().total();
    EXPECT_EQ(r.report.total_tokens, static_cast<std::uint64_t>(tokens));
    EXPECT_EQ(r.report.to_json().at("per_case").size(), 4u);
}

TEST(Batch, ParallelismDoesNotChangeResults) {
    const auto cfg = bundled_config();
    const auto res = build_resources(cfg);
    const auto lex = FindingLexicon::load(cfg.lexicon_path);
    const auto a = run_batch(corpus(), cfg.debate, res, {1, std::nullopt, &lex});
    const auto b = run_batch(corpus(), cfg.debate, res, {4, std::nullopt, &lex});
    EXPECT_EQ(a.report.to_json(), b.report.to_json());
    for (std::size_t i = 0; i < a.outcomes.size(); ++i)
        EXPECT_EQ(strip_timestamps(a.outcomes[i].trail_document()), strip_timestamps(b.outcomes[i].trail_document()));
}

TEST(Batch, FixtureGapCountsAsWrongAndWritesTrails) {
    auto j = nlohmann::json::parse(fsutil::read_file(data_path("fixtures/scripted.json")));
    j.erase("normal_nodule/proponent.generate/0");
    auto script = ScriptedBackend::from_json(j);
    DebateResources res{{script, script, script}, std::make_shared<StubEncoder>(), {}};
    TempDir tmp("batch");
    const auto r = run_batch(corpus(), bundled_config().debate, res, {2, tmp.str("trails"), nullptr});
    EXPECT_EQ(r.report.n_cases, 4u);
    EXPECT_EQ(r.report.n_agent_error, 1u);
    EXPECT_DOUBLE_EQ(r.report.accuracy, 0.75);
    EXPECT_FALSE(r.report.chair.has_value());
    EXPECT_TRUE(r.report.to_json().at("chair_s").is_null());
    for (const auto& rec : corpus())
        EXPECT_TRUE(std::filesystem::exists(tmp.path() / "trails" / (rec.case_id + ".trail.json")));
}

TEST(Batch, RejectsBadOptions) {
    const auto cfg = bundled_config();
    const auto res = build_resources(cfg);
    const auto lex = FindingLexicon::load(cfg.lexicon_path);
    EXPECT_ERRC(run_batch(corpus(), cfg.debate, res, {0, std::nullopt, nullptr}), Errc::ConfigError);
    EXPECT_ERRC(run_batch({}, cfg.debate, res, {1, std::nullopt, nullptr}), Errc::SchemaError);
    const auto adv = load_dataset(data_path("adversarial.jsonl")).records;
    EXPECT_ERRC(run_batch(adv, cfg.debate, res, {1, std::nullopt, &lex}), Errc::MissingGtFindings);
}

TEST(Sweep, OneRowPerGridPointWithFewerTurnsAtHigherThresholds) {
    const auto cfg = bundled_config();
    const auto res = build_resources(cfg);
    const auto reports = threshold_sweep(corpus(), cfg.debate, res, {{0.1, 0.3, 0.6}, {}}, {2, std::nullopt, nullptr});
    ASSERT_EQ(reports.size(), 3u);
    const std::vector<double> turns{3.0, 1.75, 1.0}, acc{1.0, 1.0, 0.75};
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_DOUBLE_EQ(reports[i].theta_sim, cfg.debate.theta_sim);
        EXPECT_DOUBLE_EQ(reports[i].mean_turns, turns[i]);
        EXPECT_DOUBLE_EQ(reports[i].accuracy, acc[i]);
        if (i) EXPECT_LE(reports[i].mean_turns, reports[i - 1].mean_turns);
    }

    const auto grid = threshold_sweep(corpus(), cfg.debate, res, {{0.1, 0.6}, {0.5, 0.9}}, {4, std::nullopt, nullptr});
    ASSERT_EQ(grid.size(), 4u);
    EXPECT_DOUBLE_EQ(grid[1].theta_attack, 0.1);
    EXPECT_DOUBLE_EQ(grid[1].theta_sim, 0.9);
    EXPECT_DOUBLE_EQ(grid[2].theta_attack, 0.6);
    EXPECT_ERRC(threshold_sweep(corpus(), cfg.debate, res, {}, {}), Errc::ConfigError);
    EXPECT_ERRC(threshold_sweep(corpus(), cfg.debate, res, {{1.2}, {}}, {}), Errc::ConfigError);
}

TEST(Sweep, ReportsAsCsvAndJson) {
    EvalReport r;
    r.theta_attack = 0.3;
    r.theta_sim = 0.8;
    r.accuracy = 0.75;
    r.mean_turns = 1.5;
    r.total_tokens = 42;
    const auto csv = reports_csv({r});
    EXPECT_TRUE(csv.starts_with("theta_attack,theta_sim,accuracy,chair_s,chair_i,mean_turns,total_tokens\n"));
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
    TempDir tmp("rep");
    write_reports({r, r}, tmp.str());
    const auto j = nlohmann::json::parse(fsutil::read_file(tmp.path() / "report.json"));
    EXPECT_EQ(j.at("reports").size(), 2u);
    EXPECT_TRUE(std::filesystem::exists(tmp.path() / "report.csv"));
}

TEST(Sweep, ParseGrid) {
    EXPECT_EQ(parse_grid("0.1, 0.3,0.6"), (std::vector<double>{0.1, 0.3, 0.6}));
    EXPECT_ERRC(parse_grid(""), Errc::ConfigError);
    EXPECT_ERRC(parse_grid("0.1,,0.2"), Errc::ConfigError);
    EXPECT_ERRC(parse_grid("0.1;0.2"), Errc::ConfigError);
    EXPECT_ERRC(parse_grid("1.0"), Errc::ConfigError);
    EXPECT_ERRC(parse_grid("abc"), Errc::ConfigError);
}
