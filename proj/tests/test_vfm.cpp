#include "falsify/vfm.hpp"

#include "oracles.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace falsify;
using namespace falsify::testing;

namespace {

PatchGrid random_grid(std::mt19937_64& rng, std::size_t n, std::size_t d) {
    PatchGrid g{1, n, {}};
    for (std::size_t i = 0; i < n; ++i) g.patches.push_back(random_vector(rng, d));
    return g;
}

}  // namespace

TEST(Attention, TwoPatchHandValue) {
    // q = e1, v0 = e1, v1 = e2, d = 2: s = (1/sqrt2, 0); alpha0 = 1 / (1 + exp(-1/(sqrt2 * tau)))
    PatchGrid g{1, 2, {{1.0, 0.0}, {0.0, 1.0}}};
    const std::vector<double> q{1.0, 0.0};
    const auto m = falsification_attention(q, g, 0.5);
    EXPECT_NEAR(m.alphas[0], 1.0 / (1.0 + std::exp(-std::sqrt(2.0))), 1e-15);
    EXPECT_NEAR(m.scores[0], 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_DOUBLE_EQ(m.scores[1], 0.0);
}

TEST(Attention, MatchesDirectEvaluationOnRandomInstances) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
        const auto d = std::uniform_int_distribution<std::size_t>(1, 32)(rng);
        const double tau = std::uniform_real_distribution<double>(0.02, 2.0)(rng);
        const auto g = random_grid(rng, n, d);
        const auto q = random_vector(rng, d);
        const auto m = falsification_attention(q, g, tau);
        const auto ref = oracle::direct_attention(q, g.patches, tau);
        ASSERT_EQ(m.size(), n);
        double sum = 0;
        for (std::size_t i = 0; i < n; ++i) {
            EXPECT_GT(m.alphas[i], 0.0);
            EXPECT_NEAR(m.alphas[i], ref[i], 1e-12);
            sum += m.alphas[i];
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
    }
}

TEST(Attention, InvariantToProbeAndPatchScale) {
    std::mt19937_64 rng(11);
    auto g = random_grid(rng, 9, 5);
    auto q = random_vector(rng, 5);
    const auto a = falsification_attention(q, g, 0.1);
    for (auto& x : q) x *= 37.5;
    for (auto& p : g.patches)
        for (auto& x : p) x *= 0.01;
    const auto b = falsification_attention(q, g, 0.1);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(a.alphas[i], b.alphas[i], 1e-13);
}

TEST(Attention, TinyTemperatureStaysFinite) {
    PatchGrid g{1, 3, {{1, 0}, {0, 1}, {-1, 0}}};
    const std::vector<double> q{1, 0};
    const auto m = falsification_attention(q, g, 1e-6);
    for (double a : m.alphas) EXPECT_TRUE(std::isfinite(a));
    EXPECT_NEAR(m.alphas[0], 1.0, 1e-12);
}

TEST(Attention, RejectsBadInput) {
    PatchGrid g{1, 2, {{1, 0}, {0, 1}}};
    const std::vector<double> q3{1, 0, 0}, zero{0, 0}, q{1, 0};
    EXPECT_ERRC(falsification_attention(q3, g, 0.1), Errc::DimensionMismatch);
    EXPECT_ERRC(falsification_attention(zero, g, 0.1), Errc::ZeroNormVector);
    EXPECT_ERRC(falsification_attention(q, g, 0.0), Errc::NonPositiveTemperature);
    PatchGrid zero_patch{1, 2, {{1, 0}, {0, 0}}};
    EXPECT_ERRC(falsification_attention(q, zero_patch, 0.1), Errc::ZeroNormVector);
    PatchGrid wrong_shape{2, 2, {{1, 0}, {0, 1}}};
    EXPECT_THROW(wrong_shape.validate(), Error);
}

TEST(TopK, OrdersByWeightAndBreaksTiesByIndex) {
    const auto m = FalsificationAttentionMap::from_alphas({0.1, 0.3, 0.2, 0.3, 0.1});
    EXPECT_EQ(top_k_regions(m, 1), (std::vector<std::size_t>{1}));
    EXPECT_EQ(top_k_regions(m, 3), (std::vector<std::size_t>{1, 3, 2}));
    EXPECT_EQ(top_k_regions(m, 5), (std::vector<std::size_t>{1, 3, 2, 0, 4}));
    EXPECT_ERRC(top_k_regions(m, 0), Errc::KOutOfRange);
    EXPECT_ERRC(top_k_regions(m, 6), Errc::KOutOfRange);
}

TEST(TopK, KEqualsNGivesUniformMeanOfOneOverN) {
    std::mt19937_64 rng(3);
    const auto m = falsification_attention(random_vector(rng, 4), random_grid(rng, 8, 4), 0.3);
    EXPECT_NEAR(attack_strength(m, top_k_regions(m, 8)), 1.0 / 8.0, 1e-15);
}

TEST(AttackStrength, EqualsBruteForceMean) {
    std::mt19937_64 rng(5);
    const auto m = falsification_attention(random_vector(rng, 6), random_grid(rng, 16, 6), 0.2);
    for (int trial = 0; trial < 50; ++trial) {
        const auto k = std::uniform_int_distribution<std::size_t>(1, 16)(rng);
        std::vector<std::size_t> idx(16);
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(k);
        EXPECT_EQ(attack_strength(m, idx), oracle::brute_mean(m.alphas, idx));
    }
    EXPECT_ERRC(attack_strength(m, std::vector<std::size_t>{}), Errc::EmptyRegion);
}

TEST(AttackStrength, TopOneBoundForUniformCosines) {
    // all cosines equal -> uniform attention regardless of temperature
    PatchGrid g{2, 2, {{1, 1}, {1, 1}, {2, 2}, {3, 3}}};
    const std::vector<double> q{1, 0};
    const auto m = falsification_attention(q, g, 0.01);
    EXPECT_NEAR(attack_strength(m, top_k_regions(m, 1)), 0.25, 1e-14);
}

TEST(RegionSum, CountsOverlapsOnce) {
    const auto m = FalsificationAttentionMap::from_alphas({0.1, 0.2, 0.3, 0.4});
    EXPECT_NEAR(region_attention_sum(m, {{0, 1}, {1, 2}}), 0.6, 1e-15);
    EXPECT_ERRC(region_attention_sum(m, {{}}), Errc::EmptyRegion);
    EXPECT_THROW(region_attention_sum(m, {{7}}), Error);
}

TEST(FromAlphas, ValidatesDistribution) {
    EXPECT_THROW(FalsificationAttentionMap::from_alphas({0.5, 0.6}), Error);
    EXPECT_THROW(FalsificationAttentionMap::from_alphas({1.0, 0.0}), Error);
    EXPECT_NO_THROW(FalsificationAttentionMap::from_alphas({0.25, 0.25, 0.5}));
}

TEST(CfgLoss, SymmetricPointIsWeightedLogTwo) {
    const auto uni = FalsificationAttentionMap::from_alphas({0.25, 0.25, 0.25, 0.25});
    for (auto [lp, lo] : {std::pair{1.0, 1.0}, std::pair{0.3, 2.0}, std::pair{0.0, 1.5}}) {
        CfgLossInputs in{uni, uni, {{0}}, {{3}}, 0.7, lp, lo};
        EXPECT_NEAR(cfg_loss(in).l_cfg, (lp + lo) * std::log(2.0), 1e-12);
    }
}

TEST(CfgLoss, HandComputedValue) {
    // S+ = 0.7, S- = 0.1 for the standard probe; S_F+ = 0.5, S_F- = 0.2; tau = 0.5
    CfgLossInputs in{FalsificationAttentionMap::from_alphas({0.7, 0.1, 0.1, 0.1}),
                     FalsificationAttentionMap::from_alphas({0.2, 0.5, 0.2, 0.1}), {{0}}, {{1}}, 0.5, 1.0, 2.0};
    const auto l = cfg_loss(in);
    EXPECT_NEAR(l.l_p, std::log(1.0 + std::exp(-1.2)), 1e-15);
    EXPECT_NEAR(l.l_o, std::log(1.0 + std::exp(-0.6)), 1e-15);
    EXPECT_NEAR(l.l_cfg, l.l_p + 2.0 * l.l_o, 1e-15);
    EXPECT_NEAR(l.l_cfg, oracle::cfg_loss_reference(in.m_p.alphas, in.m_f.alphas, in.b_p, in.b_o, 0.5, 1.0, 2.0),
                1e-12);
}

TEST(CfgLoss, GradientMatchesCentralDifferences) {
    std::mt19937_64 rng(17);
    const double h = 1e-5;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(3, 12)(rng);
        const double t_att = std::uniform_real_distribution<double>(0.3, 2.0)(rng);
        const double tau = std::uniform_real_distribution<double>(0.2, 2.0)(rng);
        auto sp = random_vector(rng, n), sf = random_vector(rng, n);
        CfgLossInputs in{attention_from_scores(sp, t_att), attention_from_scores(sf, t_att), {{0, 1}}, {{2}}, tau,
                         0.7, 1.3};
        const auto g = cfg_loss_with_gradient(in);
        for (std::size_t i = 0; i < n; ++i) {
            for (int which = 0; which < 2; ++which) {
                auto plus = in, minus = in;
                auto s_plus = which == 0 ? sp : sf, s_minus = s_plus;
                s_plus[i] += h;
                s_minus[i] -= h;
                (which == 0 ? plus.m_p : plus.m_f) = attention_from_scores(s_plus, t_att);
                (which == 0 ? minus.m_p : minus.m_f) = attention_from_scores(s_minus, t_att);
                const double fd = (cfg_loss(plus).l_cfg - cfg_loss(minus).l_cfg) / (2 * h);
                const double an = which == 0 ? g.d_scores_p[i] : g.d_scores_f[i];
                EXPECT_NEAR(an, fd, 1e-4 * std::max(1.0, std::abs(fd)));
            }
        }
    }
}

TEST(CfgLoss, RejectsOverlapAndBadTemperature) {
    const auto uni = FalsificationAttentionMap::from_alphas({0.25, 0.25, 0.25, 0.25});
    EXPECT_THROW(cfg_loss({uni, uni, {{0, 1}}, {{1}}, 1.0, 1.0, 1.0}), Error);
    EXPECT_ERRC(cfg_loss({uni, uni, {{0}}, {{1}}, 0.0, 1.0, 1.0}), Errc::NonPositiveTemperature);
    const auto three = FalsificationAttentionMap::from_alphas({0.5, 0.25, 0.25});
    EXPECT_ERRC(cfg_loss({uni, three, {{0}}, {{1}}, 1.0, 1.0, 1.0}), Errc::DimensionMismatch);
}

TEST(CfgLoss, FixtureFileRoundTrip) {
    const auto in = load_cfg_fixture(data_path("fixtures/cfg_symmetric.json"));
    EXPECT_NEAR(cfg_loss(in).l_cfg, (in.lambda_p + in.lambda_o) * std::log(2.0), 1e-9);
    TempDir tmp("cfg");
    fsutil::write_file_atomic(tmp.str("bad.json"), "{\"alphas_p\": [1.0]}");
    EXPECT_ERRC(load_cfg_fixture(tmp.str("bad.json")), Errc::SchemaError);
}
