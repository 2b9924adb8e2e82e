#pragma once

// Numeric core of visual falsification: probe-to-patch attention, region
// selection, attack strength and the counterfactual grounding loss.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace falsify {

using Embedding = std::vector<double>;

/// N spatial patch embeddings in row-major order. The [CLS] token is never part of a grid.
struct PatchGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<Embedding> patches;

    [[nodiscard]] std::size_t size() const noexcept { return patches.size(); }
    [[nodiscard]] std::size_t dim() const noexcept { return patches.empty() ? 0 : patches.front().size(); }

    /// Throws unless rows*cols == N >= 1, every patch shares one dimension and all entries are finite.
    void validate() const;
};

struct FalsificationAttentionMap {
    std::vector<double> alphas;
    /// Raw scaled-cosine relevance scores; empty when the map was built from alphas directly.
    std::vector<double> scores;
    double temperature = 1.0;
    std::string probe_text;

    [[nodiscard]] std::size_t size() const noexcept { return alphas.size(); }

    /// Builds a map from externally supplied weights (fixtures); checks positivity and normalization.
    static FalsificationAttentionMap from_alphas(std::vector<double> alphas, double temperature = 1.0,
                                                 std::string probe_text = {});
};

/// Each inner vector is one box flattened to grid indices.
using RegionBoxes = std::vector<std::vector<std::size_t>>;

struct CfgLossInputs {
    FalsificationAttentionMap m_p;  // standard probe
    FalsificationAttentionMap m_f;  // counterfactual probe
    RegionBoxes b_p;
    RegionBoxes b_o;
    double tau = 1.0;
    double lambda_p = 1.0;
    double lambda_o = 1.0;
};

struct CfgLoss {
    double l_cfg = 0.0;
    double l_p = 0.0;
    double l_o = 0.0;
};

struct CfgLossGradient {
    CfgLoss loss;
    std::vector<double> d_scores_p;
    std::vector<double> d_scores_f;
};

inline constexpr double kDefaultTemperature = 0.07;

/// s_i = cos(q, v_i) / sqrt(d); alpha = softmax(s / tau), max-subtracted.
FalsificationAttentionMap falsification_attention(std::span<const double> probe, const PatchGrid& grid,
                                                  double tau, std::string probe_text = {});

/// Softmax of scores/tau with max subtraction.
std::vector<double> softmax_scaled(std::span<const double> scores, double tau);

/// Indices of the k largest weights in descending weight order; equal weights keep ascending index.
std::vector<std::size_t> top_k_regions(const FalsificationAttentionMap& m, std::size_t k);

/// Mean attention over the referenced patches.
double attack_strength(const FalsificationAttentionMap& m, std::span<const std::size_t> regions);

/// Attention mass over the union of all box indices (overlaps counted once).
double region_attention_sum(const FalsificationAttentionMap& m, const RegionBoxes& boxes);

CfgLoss cfg_loss(const CfgLossInputs& inp);

/// Loss and its analytic gradient with respect to the raw relevance scores of both maps.
/// Both maps must carry scores (i.e. come from falsification_attention or from logits).
CfgLossGradient cfg_loss_with_gradient(const CfgLossInputs& inp);

/// Rebuilds a map from raw scores, keeping the map temperature; used for gradient checks.
FalsificationAttentionMap attention_from_scores(std::vector<double> scores, double temperature);

/// Reads {"alphas_p", "alphas_f", "b_p", "b_o", "tau"} with optional "lambda_p"/"lambda_o".
CfgLossInputs load_cfg_fixture(const std::string& path);

}  // namespace falsify
