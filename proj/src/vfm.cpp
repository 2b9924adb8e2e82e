#include "falsify/vfm.hpp"

#include "falsify/error.hpp"
#include "falsify/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace falsify {

namespace {

double norm(std::span<const double> v) {
    return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::set<std::size_t> box_union(const RegionBoxes& boxes, std::size_t n) {
    std::set<std::size_t> idx;
    for (const auto& box : boxes) {
        require(!box.empty(), "region box is empty", Errc::EmptyRegion);
        for (auto i : box) {
            require(i < n, "region index " + std::to_string(i) + " out of range for " + std::to_string(n) +
                               " patches");
            idx.insert(i);
        }
    }
    require(!idx.empty(), "region boxes cover no patches", Errc::EmptyRegion);
    return idx;
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

void check_inputs(const CfgLossInputs& inp) {
    require(inp.tau > 0, "loss temperature must be positive", Errc::NonPositiveTemperature);
    require(inp.lambda_p >= 0 && inp.lambda_o >= 0, "loss weights must be non-negative");
    require(inp.m_p.size() == inp.m_f.size() && inp.m_p.size() > 0, "attention maps differ in patch count",
            Errc::DimensionMismatch);
    auto bp = box_union(inp.b_p, inp.m_p.size());
    auto bo = box_union(inp.b_o, inp.m_p.size());
    for (auto i : bp) require(!bo.contains(i), "b_p and b_o overlap at index " + std::to_string(i));
}

}  // namespace

void PatchGrid::validate() const {
    require(!patches.empty(), "patch grid is empty");
    require(rows * cols == patches.size(),
            "grid shape " + std::to_string(rows) + "x" + std::to_string(cols) + " does not match " +
                std::to_string(patches.size()) + " patches");
    const auto d = patches.front().size();
    require(d >= 1, "patch dimension must be >= 1", Errc::DimensionMismatch);
    for (const auto& p : patches) {
        require(p.size() == d, "patches differ in dimension", Errc::DimensionMismatch);
        require(all_finite(p), "patch embedding has non-finite entries");
    }
}

FalsificationAttentionMap FalsificationAttentionMap::from_alphas(std::vector<double> alphas, double temperature,
                                                                 std::string probe_text) {
    require(!alphas.empty(), "attention map is empty");
    require(temperature > 0, "temperature must be positive", Errc::NonPositiveTemperature);
    double sum = 0.0;
    for (double a : alphas) {
        require(std::isfinite(a) && a > 0.0 && a <= 1.0, "attention weight outside (0,1]");
        sum += a;
    }
    require(std::abs(sum - 1.0) <= 1e-9, "attention weights sum to " + std::to_string(sum));
    FalsificationAttentionMap m;
    m.alphas = std::move(alphas);
    m.temperature = temperature;
    m.probe_text = std::move(probe_text);
    return m;
}

std::vector<double> softmax_scaled(std::span<const double> scores, double tau) {
    require(tau > 0, "temperature must be positive", Errc::NonPositiveTemperature);
    require(!scores.empty(), "no scores");
    double mx = -std::numeric_limits<double>::infinity();
    for (double s : scores) mx = std::max(mx, s / tau);
    std::vector<double> out(scores.size());
    double z = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp(scores[i] / tau - mx);
        z += out[i];
    }
    for (double& a : out) a /= z;
    return out;
}

FalsificationAttentionMap falsification_attention(std::span<const double> probe, const PatchGrid& grid, double tau,
                                                  std::string probe_text) {
    require(tau > 0, "temperature must be positive", Errc::NonPositiveTemperature);
    grid.validate();
    const auto d = grid.dim();
    require(probe.size() == d,
            "probe dim " + std::to_string(probe.size()) + " != patch dim " + std::to_string(d),
            Errc::DimensionMismatch);
    require(all_finite(probe), "probe embedding has non-finite entries");
    const double qn = norm(probe);
    require(qn > 0.0, "probe embedding has zero norm", Errc::ZeroNormVector);

    const double sqrt_d = std::sqrt(static_cast<double>(d));
    std::vector<double> scores;
    scores.reserve(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto& v = grid.patches[i];
        const double vn = norm(v);
        require(vn > 0.0, "patch " + std::to_string(i) + " has zero norm", Errc::ZeroNormVector);
        const double dot = std::inner_product(probe.begin(), probe.end(), v.begin(), 0.0);
        scores.push_back(dot / (qn * vn * sqrt_d));
    }
    auto m = attention_from_scores(std::move(scores), tau);
    m.probe_text = std::move(probe_text);
    return m;
}

FalsificationAttentionMap attention_from_scores(std::vector<double> scores, double temperature) {
    FalsificationAttentionMap m;
    m.alphas = softmax_scaled(scores, temperature);
    m.scores = std::move(scores);
    m.temperature = temperature;
    return m;
}

std::vector<std::size_t> top_k_regions(const FalsificationAttentionMap& m, std::size_t k) {
    require(k >= 1 && k <= m.size(),
            "k=" + std::to_string(k) + " outside [1," + std::to_string(m.size()) + "]", Errc::KOutOfRange);
    std::vector<std::size_t> idx(m.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return m.alphas[a] > m.alphas[b]; });
    idx.resize(k);
    return idx;
}

double attack_strength(const FalsificationAttentionMap& m, std::span<const std::size_t> regions) {
    require(!regions.empty(), "attack strength needs at least one region", Errc::EmptyRegion);
    double sum = 0.0;
    for (auto r : regions) {
        require(r < m.size(), "region index " + std::to_string(r) + " out of range");
        sum += m.alphas[r];
    }
    return sum / static_cast<double>(regions.size());
}

double region_attention_sum(const FalsificationAttentionMap& m, const RegionBoxes& boxes) {
    double sum = 0.0;
    for (auto i : box_union(boxes, m.size())) sum += m.alphas[i];
    return sum;
}

CfgLoss cfg_loss(const CfgLossInputs& inp) {
    check_inputs(inp);
    const double s_pos = region_attention_sum(inp.m_p, inp.b_p);
    const double s_neg = region_attention_sum(inp.m_p, inp.b_o);
    const double sf_pos = region_attention_sum(inp.m_f, inp.b_o);
    const double sf_neg = region_attention_sum(inp.m_f, inp.b_p);

    CfgLoss out;
    // -log(e^{a/t} / (e^{a/t} + e^{b/t})) == softplus((b - a) / t)
    out.l_p = softplus((s_neg - s_pos) / inp.tau);
    out.l_o = softplus((sf_neg - sf_pos) / inp.tau);
    out.l_cfg = inp.lambda_p * out.l_p + inp.lambda_o * out.l_o;
    return out;
}

CfgLossGradient cfg_loss_with_gradient(const CfgLossInputs& inp) {
    require(inp.m_p.scores.size() == inp.m_p.size() && inp.m_f.scores.size() == inp.m_f.size(),
            "gradient needs raw scores on both maps");
    CfgLossGradient g;
    g.loss = cfg_loss(inp);
    const auto n = inp.m_p.size();
    const auto bp = box_union(inp.b_p, n);
    const auto bo = box_union(inp.b_o, n);

    // dL/dalpha per map, then back through the softmax Jacobian.
    auto backprop = [&](const FalsificationAttentionMap& m, const std::set<std::size_t>& plus,
                        const std::set<std::size_t>& minus, double weight) {
        double s_plus = 0.0;
        double s_minus = 0.0;
        for (auto i : plus) s_plus += m.alphas[i];
        for (auto i : minus) s_minus += m.alphas[i];
        const double p = sigmoid((s_minus - s_plus) / inp.tau);
        std::vector<double> d_alpha(n, 0.0);
        for (auto i : plus) d_alpha[i] -= weight * p / inp.tau;
        for (auto i : minus) d_alpha[i] += weight * p / inp.tau;
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += m.alphas[j] * d_alpha[j];
        std::vector<double> d_scores(n);
        for (std::size_t i = 0; i < n; ++i) d_scores[i] = m.alphas[i] * (d_alpha[i] - mean) / m.temperature;
        return d_scores;
    };
    g.d_scores_p = backprop(inp.m_p, bp, bo, inp.lambda_p);
    g.d_scores_f = backprop(inp.m_f, bo, bp, inp.lambda_o);
    return g;
}

CfgLossInputs load_cfg_fixture(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(fsutil::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::SchemaError, path + ": " + e.what());
    }
    try {
        CfgLossInputs inp;
        inp.m_p = FalsificationAttentionMap::from_alphas(j.at("alphas_p").get<std::vector<double>>());
        inp.m_f = FalsificationAttentionMap::from_alphas(j.at("alphas_f").get<std::vector<double>>());
        inp.b_p = j.at("b_p").get<RegionBoxes>();
        inp.b_o = j.at("b_o").get<RegionBoxes>();
        inp.tau = j.at("tau").get<double>();
        inp.lambda_p = j.value("lambda_p", 1.0);
        inp.lambda_o = j.value("lambda_o", 1.0);
        return inp;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::SchemaError, path + ": " + e.what());
    }
}

}  // namespace falsify
