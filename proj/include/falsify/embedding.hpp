#pragma once

#include "falsify/vfm.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>

namespace falsify {

/// Source of probe-text and image-patch embeddings. Implementations must be
/// safe to call from several debates at once.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;

    /// Unit-norm embedding of a text.
    virtual Embedding embed_text(std::string_view text) = 0;
    /// Row-major patch embeddings for an image reference.
    virtual PatchGrid embed_image(const std::string& image_ref) = 0;
    [[nodiscard]] virtual std::string name() const = 0;
};

double cosine(std::span<const double> a, std::span<const double> b);

/// Deterministic offline encoder.
///
/// Text: every lowercase alphanumeric token is hashed (seeded) to a vector
/// with entries in [-1, 1]; the token vectors are summed and normalized, so
/// identical texts embed identically and texts sharing words are correlated.
///
/// Images: a reference to an existing `.json` file is read as a grid
/// description (see load_grid_file); anything else is hashed to a
/// rows x cols grid of unit vectors.
class StubEncoder final : public EmbeddingProvider {
public:
    explicit StubEncoder(std::size_t dim = 64, std::uint64_t seed = 0x5eedULL, std::size_t rows = 4,
                         std::size_t cols = 4);

    Embedding embed_text(std::string_view text) override;
    PatchGrid embed_image(const std::string& image_ref) override;
    [[nodiscard]] std::string name() const override { return "stub"; }
    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }

    /// Grid description file:
    ///   {"rows": r, "cols": c, "anchors": ["text", ...],
    ///    "patches": [{"cos": [c_1, ...]} | {"text": "..."} | {"vector": [...]}, ...]}
    /// A "cos" patch is the unit vector whose cosine with the stub embedding of
    /// anchor j is exactly c_j; the remaining mass lies along a seeded direction
    /// orthogonal to every anchor.
    PatchGrid load_grid_file(const std::string& path);

private:
    Embedding hashed_unit_vector(std::string_view key) const;

    std::size_t dim_;
    std::uint64_t seed_;
    std::size_t rows_;
    std::size_t cols_;
};

/// Client for the embedding microservice (POST /v1/embed, GET /v1/health).
class RemoteEncoder final : public EmbeddingProvider {
public:
    explicit RemoteEncoder(std::string base_url, double timeout_s = 30.0);

    Embedding embed_text(std::string_view text) override;
    PatchGrid embed_image(const std::string& image_ref) override;
    [[nodiscard]] std::string name() const override { return "remote"; }

    struct Health {
        std::string status;
        std::string model_name;
        std::size_t dim = 0;
    };
    Health health();

private:
    std::string base_url_;
    double timeout_s_;
};

}  // namespace falsify
