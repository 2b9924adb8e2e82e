// Eigen comes first: httplib pulls in <resolv.h>, whose _res macro collides with Eigen internals.
#include <Eigen/Dense>

#include "falsify/embedding.hpp"

#include "falsify/error.hpp"
#include "falsify/text.hpp"
#include "http_util.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <numeric>

namespace falsify {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void normalize_in_place(Embedding& v, const std::string& what) {
    const double n = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (!(n > 0.0) || !std::isfinite(n)) throw Error(Errc::EmbeddingError, what + " has zero norm");
    for (double& x : v) x /= n;
}

Eigen::VectorXd to_eigen(const Embedding& v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()); }

}  // namespace

double cosine(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "cosine of vectors with different dimensions", Errc::DimensionMismatch);
    const double dot = std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
    const double na = std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0));
    const double nb = std::sqrt(std::inner_product(b.begin(), b.end(), b.begin(), 0.0));
    require(na > 0 && nb > 0, "cosine of a zero vector", Errc::ZeroNormVector);
    return dot / (na * nb);
}

StubEncoder::StubEncoder(std::size_t dim, std::uint64_t seed, std::size_t rows, std::size_t cols)
    : dim_(dim), seed_(seed), rows_(rows), cols_(cols) {
    require(dim >= 1, "stub encoder dimension must be >= 1", Errc::ConfigError);
    require(rows >= 1 && cols >= 1, "stub grid shape must be positive", Errc::ConfigError);
}

Embedding StubEncoder::hashed_unit_vector(std::string_view key) const {
    std::uint64_t state = fnv1a(key, seed_);
    Embedding v(dim_);
    for (double& x : v) x = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53 * 2.0 - 1.0;
    normalize_in_place(v, "hashed vector");
    return v;
}

Embedding StubEncoder::embed_text(std::string_view text) {
    const auto tokens = text::tokenize(text);
    if (tokens.empty()) throw Error(Errc::EmbeddingError, "text has no tokens to embed");
    Embedding sum(dim_, 0.0);
    for (const auto& tok : tokens) {
        const auto v = hashed_unit_vector("tok:" + tok);
        for (std::size_t i = 0; i < dim_; ++i) sum[i] += v[i];
    }
    normalize_in_place(sum, "text embedding");
    return sum;
}

PatchGrid StubEncoder::embed_image(const std::string& image_ref) {
    namespace fs = std::filesystem;
    if (image_ref.ends_with(".json") && fs::exists(image_ref)) return load_grid_file(image_ref);
    PatchGrid grid{rows_, cols_, {}};
    for (std::size_t i = 0; i < rows_ * cols_; ++i)
        grid.patches.push_back(hashed_unit_vector("img:" + image_ref + "#" + std::to_string(i)));
    return grid;
}

PatchGrid StubEncoder::load_grid_file(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(fsutil::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::EmbeddingError, path + ": " + e.what());
    }

    try {
        PatchGrid grid{j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(), {}};
        std::vector<Embedding> anchors;
        for (const auto& a : j.value("anchors", nlohmann::json::array()))
            anchors.push_back(embed_text(a.get<std::string>()));

        Eigen::MatrixXd basis(dim_, anchors.size());
        for (std::size_t k = 0; k < anchors.size(); ++k) basis.col(static_cast<Eigen::Index>(k)) = to_eigen(anchors[k]);
        const Eigen::MatrixXd gram = basis.transpose() * basis;
        Eigen::MatrixXd ortho;
        if (!anchors.empty()) {
            Eigen::HouseholderQR<Eigen::MatrixXd> qr(basis);
            ortho = qr.householderQ() * Eigen::MatrixXd::Identity(dim_, anchors.size());
        }

        const auto& patches = j.at("patches");
        for (std::size_t i = 0; i < patches.size(); ++i) {
            const auto& p = patches[i];
            const std::string where = path + " patch " + std::to_string(i);
            if (p.contains("vector")) {
                auto v = p.at("vector").get<Embedding>();
                require(v.size() == dim_, where + " has dimension " + std::to_string(v.size()), Errc::EmbeddingError);
                grid.patches.push_back(std::move(v));
            } else if (p.contains("text")) {
                grid.patches.push_back(embed_text(p.at("text").get<std::string>()));
            } else {
                const auto c = p.at("cos").get<std::vector<double>>();
                require(c.size() == anchors.size(), where + ": one cosine per anchor required", Errc::EmbeddingError);
                const Eigen::VectorXd target = Eigen::Map<const Eigen::VectorXd>(c.data(), c.size());
                const Eigen::VectorXd coeff = gram.ldlt().solve(target);
                Eigen::VectorXd v = basis * coeff;
                const double residual = 1.0 - v.squaredNorm();
                require(residual >= -1e-12, where + ": cosines are not jointly attainable", Errc::EmbeddingError);
                Eigen::VectorXd w = to_eigen(hashed_unit_vector("grid:" + std::filesystem::path(path).filename().string() + "#" + std::to_string(i)));
                if (ortho.cols() > 0) w -= ortho * (ortho.transpose() * w);
                w.normalize();
                v += std::sqrt(std::max(residual, 0.0)) * w;
                grid.patches.emplace_back(v.data(), v.data() + v.size());
            }
        }
        grid.validate();
        return grid;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::EmbeddingError, path + ": " + e.what());
    } catch (const Error& e) {
        if (e.code() == Errc::EmbeddingError) throw;
        throw Error(Errc::EmbeddingError, path + ": " + e.what());
    }
}

RemoteEncoder::RemoteEncoder(std::string base_url, double timeout_s)
    : base_url_(std::move(base_url)), timeout_s_(timeout_s) {
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
    require(timeout_s > 0, "encoder timeout must be positive", Errc::ConfigError);
}

namespace {

nlohmann::json post_embed(const std::string& base_url, double timeout_s, const nlohmann::json& body) {
    const auto url = detail::split_url(base_url);
    auto client = detail::make_client(url.origin, timeout_s);
    const std::string prefix = url.path == "/" ? "" : url.path;
    auto res = client->Post(prefix + "/v1/embed", body.dump(), "application/json");
    if (!res) throw Error(Errc::EmbeddingError, "embed service unreachable at " + base_url);
    if (res->status != 200)
        throw Error(Errc::EmbeddingError, "embed service returned " + std::to_string(res->status) + ": " + res->body);
    try {
        auto j = nlohmann::json::parse(res->body);
        const auto dim = j.at("dim").get<std::size_t>();
        for (const auto& v : j.at("vectors"))
            require(v.size() == dim, "embed response vector length differs from dim", Errc::EmbeddingError);
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::EmbeddingError, std::string("malformed embed response: ") + e.what());
    }
}

}  // namespace

Embedding RemoteEncoder::embed_text(std::string_view text) {
    auto j = post_embed(base_url_, timeout_s_, {{"kind", "text"}, {"content", std::string(text)}});
    const auto& vs = j.at("vectors");
    require(vs.size() == 1, "text embed must return one vector", Errc::EmbeddingError);
    return vs[0].get<Embedding>();
}

PatchGrid RemoteEncoder::embed_image(const std::string& image_ref) {
    auto j = post_embed(base_url_, timeout_s_, {{"kind", "image_patches"}, {"content", image_ref}});
    PatchGrid grid;
    grid.patches = j.at("vectors").get<std::vector<Embedding>>();
    if (j.contains("grid")) {
        const auto shape = j.at("grid").get<std::vector<std::size_t>>();
        require(shape.size() == 2, "grid must be [rows, cols]", Errc::EmbeddingError);
        grid.rows = shape[0];
        grid.cols = shape[1];
    } else {
        const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(grid.patches.size()))));
        grid.rows = side;
        grid.cols = side;
    }
    try {
        grid.validate();
    } catch (const Error& e) {
        throw Error(Errc::EmbeddingError, e.what());
    }
    return grid;
}

RemoteEncoder::Health RemoteEncoder::health() {
    const auto url = detail::split_url(base_url_);
    auto client = detail::make_client(url.origin, timeout_s_);
    const std::string prefix = url.path == "/" ? "" : url.path;
    auto res = client->Get(prefix + "/v1/health");
    if (!res) throw Error(Errc::EmbeddingError, "embed service unreachable at " + base_url_);
    if (res->status != 200) throw Error(Errc::EmbeddingError, "embed service not ready (" + std::to_string(res->status) + ")");
    try {
        auto j = nlohmann::json::parse(res->body);
        return {j.at("status").get<std::string>(), j.value("model_name", ""), j.at("dim").get<std::size_t>()};
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::EmbeddingError, std::string("malformed health response: ") + e.what());
    }
}

}  // namespace falsify
