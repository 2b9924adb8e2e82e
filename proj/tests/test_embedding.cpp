#include "falsify/embedding.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace falsify;
using namespace falsify::testing;

namespace {

double l2(const Embedding& v) { return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0)); }

/// Behaviour every provider must show, whichever side of the wire it lives on.
void provider_conformance(EmbeddingProvider& p, const std::string& image_ref) {
    const auto a = p.embed_text("sharp costophrenic angles");
    const auto b = p.embed_text("sharp costophrenic angles");
    ASSERT_FALSE(a.empty());
    EXPECT_EQ(a, b);
    EXPECT_NEAR(l2(a), 1.0, 1e-5);

    const auto g1 = p.embed_image(image_ref);
    const auto g2 = p.embed_image(image_ref);
    ASSERT_NO_THROW(g1.validate());
    EXPECT_EQ(g1.rows * g1.cols, g1.size());
    EXPECT_EQ(g1.dim(), a.size());
    EXPECT_EQ(g1.patches, g2.patches);
    for (const auto& v : g1.patches) EXPECT_NEAR(l2(v), 1.0, 1e-5);
}

/// Embed service stand-in backed by a stub encoder.
class MockEmbedService {
public:
    explicit MockEmbedService(bool send_grid = true) : stub_(64, 0x5eed, 3, 5), send_grid_(send_grid) {
        mock_.server().Post("/v1/embed", [this](const httplib::Request& req, httplib::Response& res) {
            ++requests_;
            const auto j = nlohmann::json::parse(req.body);
            if (ready_ == false) {
                res.status = 503;
                return;
            }
            nlohmann::json out{{"dim", 64}, {"normalized", true}};
            if (j.at("kind") == "text") {
                out["vectors"] = {stub_.embed_text(j.at("content").get<std::string>())};
            } else if (j.at("kind") == "image_patches") {
                const auto g = stub_.embed_image(j.at("content").get<std::string>());
                out["vectors"] = g.patches;
                if (send_grid_) out["grid"] = {g.rows, g.cols};
            } else {
                res.status = 400;
                return;
            }
            res.set_content(out.dump(), "application/json");
        });
        mock_.server().Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
            if (!ready_) {
                res.status = 503;
                return;
            }
            res.set_content(R"({"status":"ok","model_name":"stub-clip","dim":64})", "application/json");
        });
        mock_.start();
    }

    std::string url() const { return mock_.url(); }
    StubEncoder& stub() { return stub_; }
    std::atomic<bool> ready_{true};
    std::atomic<int> requests_{0};

private:
    StubEncoder stub_;
    bool send_grid_;
    MockServer mock_;
};

}  // namespace

TEST(Cosine, BasicValuesAndErrors) {
    const std::vector<double> a{1, 0}, b{0, 2}, c{-3, 0};
    EXPECT_DOUBLE_EQ(cosine(a, b), 0.0);
    EXPECT_DOUBLE_EQ(cosine(a, c), -1.0);
    const std::vector<double> z{0, 0}, three{1, 2, 3};
    EXPECT_ERRC(cosine(a, z), Errc::ZeroNormVector);
    EXPECT_ERRC(cosine(a, three), Errc::DimensionMismatch);
}

TEST(StubEncoder, TextIsDeterministicUnitAndTokenBased) {
    StubEncoder s;
    const auto a = s.embed_text("Pneumonia");
    EXPECT_EQ(a, s.embed_text("  pneumonia. "));
    EXPECT_NEAR(l2(a), 1.0, 1e-12);
    EXPECT_EQ(a.size(), 64u);
    // sharing two of three tokens correlates strongly; disjoint texts do not
    const double shared = cosine(s.embed_text("left lower lobe"), s.embed_text("left lower zone"));
    const double disjoint = cosine(s.embed_text("left lower lobe"), s.embed_text("cardiac silhouette"));
    EXPECT_GT(shared, 0.5);
    EXPECT_LT(std::abs(disjoint), 0.5);
    EXPECT_NE(StubEncoder(64, 1).embed_text("x"), StubEncoder(64, 2).embed_text("x"));
    EXPECT_ERRC(s.embed_text("  ...  "), Errc::EmbeddingError);
}

TEST(StubEncoder, HashedImageGrid) {
    StubEncoder s(16, 9, 4, 4);
    const auto g = s.embed_image("not-a-file.png");
    EXPECT_EQ(g.rows, 4u);
    EXPECT_EQ(g.cols, 4u);
    EXPECT_EQ(g.dim(), 16u);
    EXPECT_NE(g.patches[0], g.patches[1]);
}

TEST(StubEncoder, GridFileHitsRequestedCosinesExactly) {
    StubEncoder s;
    const auto g = s.embed_image(data_path("grids/cardiomegaly_chain.json"));
    const auto spec = nlohmann::json::parse(fsutil::read_file(data_path("grids/cardiomegaly_chain.json")));
    ASSERT_EQ(g.size(), spec.at("patches").size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        EXPECT_NEAR(l2(g.patches[i]), 1.0, 1e-12);
        const auto want = spec.at("patches")[i].at("cos").get<std::vector<double>>();
        for (std::size_t k = 0; k < want.size(); ++k)
            EXPECT_NEAR(cosine(g.patches[i], s.embed_text(spec.at("anchors")[k].get<std::string>())), want[k], 1e-12);
    }
}

TEST(StubEncoder, GridFileErrors) {
    StubEncoder s;
    TempDir tmp("grid");
    fsutil::write_file_atomic(tmp.str("bad.json"),
                              R"({"rows":1,"cols":1,"anchors":["a"],"patches":[{"cos":[1.5]}]})");
    EXPECT_ERRC(s.embed_image(tmp.str("bad.json")), Errc::EmbeddingError);
    fsutil::write_file_atomic(tmp.str("count.json"), R"({"rows":2,"cols":1,"anchors":["a"],"patches":[{"cos":[0.5]}]})");
    EXPECT_THROW(s.embed_image(tmp.str("count.json")), Error);
    fsutil::write_file_atomic(tmp.str("text.json"), R"({"rows":1,"cols":2,"patches":[{"text":"a"},{"text":"b"}]})");
    const auto g = s.embed_image(tmp.str("text.json"));
    EXPECT_EQ(g.patches[0], s.embed_text("a"));
}

TEST(StubEncoder, PassesProviderConformance) {
    StubEncoder s;
    provider_conformance(s, "study-17.png");
    provider_conformance(s, data_path("grids/fig2_cxr.json"));
}

TEST(RemoteEncoder, PassesProviderConformanceAgainstService) {
    MockEmbedService svc;
    RemoteEncoder r(svc.url());
    provider_conformance(r, "study-17.png");
    // identical numbers to the encoder behind the service
    EXPECT_EQ(r.embed_text("volume loss"), svc.stub().embed_text("volume loss"));
    const auto g = r.embed_image("study-17.png");
    EXPECT_EQ(g.rows, 3u);
    EXPECT_EQ(g.cols, 5u);
}

TEST(RemoteEncoder, HealthReportsDimension) {
    MockEmbedService svc;
    RemoteEncoder r(svc.url() + "/");
    const auto h = r.health();
    EXPECT_EQ(h.status, "ok");
    EXPECT_EQ(h.model_name, "stub-clip");
    EXPECT_EQ(h.dim, r.embed_text("probe").size());
}

TEST(RemoteEncoder, InfersSquareGridWhenShapeMissing) {
    MockEmbedService svc(false);
    StubEncoder square(64, 0x5eed, 3, 3);
    RemoteEncoder r(svc.url());
    // 15 patches cannot form a square grid
    EXPECT_ERRC(r.embed_image("x.png"), Errc::EmbeddingError);
}

TEST(RemoteEncoder, ErrorsSurfaceAsEmbeddingError) {
    MockEmbedService svc;
    svc.ready_ = false;
    RemoteEncoder r(svc.url());
    EXPECT_ERRC(r.health(), Errc::EmbeddingError);
    EXPECT_ERRC(r.embed_text("x"), Errc::EmbeddingError);

    RemoteEncoder dead("http://127.0.0.1:1", 0.5);
    EXPECT_ERRC(dead.embed_text("x"), Errc::EmbeddingError);
    EXPECT_ERRC(RemoteEncoder("http://127.0.0.1:1", 0.0), Errc::ConfigError);
}

TEST(RemoteEncoder, RejectsMalformedResponses) {
    MockServer m;
    m.server().Post("/v1/embed", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"dim":3,"vectors":[[1,0]]})", "application/json");
    });
    m.start();
    RemoteEncoder r(m.url());
    EXPECT_ERRC(r.embed_text("x"), Errc::EmbeddingError);
}
