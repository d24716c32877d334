#include <gtest/gtest.h>

#include <future>

#include "httplib.h"
#include "json.hpp"

#include "beautyrec/checkpoint.hpp"
#include "beautyrec/service.hpp"
#include "support.hpp"

using namespace beautyrec;
using beautyrec::fixtures::TempDir;
using nlohmann::json;

namespace {

constexpr int64_t kSize = 32;

std::filesystem::path make_checkpoint(const TempDir& dir, const std::string& name, uint64_t seed) {
    torch::manual_seed(seed);
    CheckpointSource src;
    src.generator = Generator(GeneratorConfig{});
    src.step = static_cast<int64_t>(seed);
    src.extra = {{"image_size", kSize}};
    auto path = dir / name;
    save_checkpoint(path, src);
    return path;
}

std::string seg_bytes(const TempDir& dir, const ParsingMap& p, const std::string& name) {
    write_parsing_png(p, dir / name);
    return read_file(dir / name);
}

struct Fixture {
    std::string source, reference, source_seg, reference_seg;
};

Fixture fixture(const TempDir& dir, int64_t size = kSize) {
    auto pair = fixtures::fixture_pair(size, 0);
    return {encode_png(pair.source.image), encode_png(pair.reference.image),
            seg_bytes(dir, pair.source.parsing, "s.png"), seg_bytes(dir, pair.reference.parsing, "r.png")};
}

httplib::MultipartFormDataItems form(const Fixture& f) {
    return {{"source", f.source, "s.png", "image/png"},
            {"reference", f.reference, "r.png", "image/png"},
            {"source_seg", f.source_seg, "ss.png", "image/png"},
            {"reference_seg", f.reference_seg, "rs.png", "image/png"}};
}

class ServiceTest : public ::testing::Test {
protected:
    void SetUp() override {
        ServiceConfig config;
        config.threads = 4;
        service_ = std::make_unique<TransferService>(config);
        port_ = service_->start_background("127.0.0.1");
        client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
        client_->set_read_timeout(120, 0);
    }
    void TearDown() override { service_->stop(); }

    TempDir dir_{"service"};
    std::unique_ptr<TransferService> service_;
    std::unique_ptr<httplib::Client> client_;
    int port_ = 0;
};

}  // namespace

TEST(ParseFlag, AcceptedSpellings) {
    EXPECT_EQ(parse_flag("TRUE"), true);
    EXPECT_EQ(parse_flag("0"), false);
    EXPECT_EQ(parse_flag("off"), false);
    EXPECT_FALSE(parse_flag("maybe").has_value());
    EXPECT_FALSE(parse_flag("").has_value());
}

TEST_F(ServiceTest, UnavailableBeforeLoad) {
    auto h = client_->Get("/api/v1/health");
    ASSERT_TRUE(h);
    EXPECT_EQ(h->status, 503);
    auto t = client_->Post("/api/v1/transfer", form(fixture(dir_)));
    ASSERT_TRUE(t);
    EXPECT_EQ(t->status, 503);
}

TEST_F(ServiceTest, HealthReportsCheckpoint) {
    service_->load_checkpoint(make_checkpoint(dir_, "a.ckpt", 3));
    auto h = client_->Get("/api/v1/health");
    ASSERT_TRUE(h);
    EXPECT_EQ(h->status, 200);
    auto body = json::parse(h->body);
    EXPECT_EQ(body["status"], "ok");
    EXPECT_EQ(body["model_version"], std::string(kModelVersion));
    EXPECT_EQ(body["checkpoint_id"], read_checkpoint(dir_ / "a.ckpt").id);
    EXPECT_EQ(body["step"], 3);
}

TEST_F(ServiceTest, TransferReturnsPngAtSourceSizeAndIsDeterministic) {
    service_->load_checkpoint(make_checkpoint(dir_, "a.ckpt", 3));
    auto f = fixture(dir_);
    auto a = client_->Post("/api/v1/transfer", form(f));
    ASSERT_TRUE(a);
    ASSERT_EQ(a->status, 200) << a->body;
    EXPECT_EQ(a->get_header_value("Content-Type"), "image/png");
    EXPECT_EQ(image_dimensions(a->body), (std::pair<int64_t, int64_t>{kSize, kSize}));
    auto b = client_->Post("/api/v1/transfer", form(f));
    ASSERT_TRUE(b);
    EXPECT_EQ(a->body, b->body);

    // same bytes as the in-process path
    auto model = load_model(dir_ / "a.ckpt");
    EXPECT_EQ(a->body, run_transfer(*model, {f.source, f.reference, f.source_seg, f.reference_seg}, kSize));
}

TEST_F(ServiceTest, LargerInputsAreResizedBackToTheirOwnSize) {
    service_->load_checkpoint(make_checkpoint(dir_, "a.ckpt", 3));
    auto f = fixture(dir_, 64);
    auto r = client_->Post("/api/v1/transfer", form(f));
    ASSERT_TRUE(r);
    ASSERT_EQ(r->status, 200) << r->body;
    EXPECT_EQ(image_dimensions(r->body), (std::pair<int64_t, int64_t>{64, 64}));
}

TEST_F(ServiceTest, RemovalSwapsRoles) {
    service_->load_checkpoint(make_checkpoint(dir_, "a.ckpt", 3));
    auto f = fixture(dir_);
    auto items = form(f);
    items.push_back({"removal", "true", "", ""});
    auto removal = client_->Post("/api/v1/transfer", items);
    auto swapped = client_->Post("/api/v1/transfer", form({f.reference, f.source, f.reference_seg, f.source_seg}));
    ASSERT_TRUE(removal && swapped);
    ASSERT_EQ(removal->status, 200);
    EXPECT_EQ(removal->body, swapped->body);
}

TEST_F(ServiceTest, ComponentSelectionChangesOutput) {
    service_->load_checkpoint(make_checkpoint(dir_, "a.ckpt", 3));
    auto f = fixture(dir_);
    auto all = client_->Post("/api/v1/transfer", form(f));
    auto items = form(f);
    items.push_back({"components", "lips", "", ""});
    items.push_back({"global", "false", "", ""});
    auto lips = client_->Post("/api/v1/transfer", items);
    ASSERT_TRUE(all && lips);
    ASSERT_EQ(lips->status, 200) << lips->body;
    EXPECT_NE(all->body, lips->body);
}

TEST_F(ServiceTest, BadRequests) {
    service_->load_checkpoint(make_checkpoint(dir_, "a.ckpt", 3));
    auto f = fixture(dir_);

    auto missing = form(f);
    missing.pop_back();
    auto r = client_->Post("/api/v1/transfer", missing);
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 400);
    EXPECT_NE(r->body.find("reference_seg"), std::string::npos);

    r = client_->Post("/api/v1/transfer", form({"not a png", f.reference, f.source_seg, f.reference_seg}));
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 400);

    auto big = fixture(dir_, 64);
    r = client_->Post("/api/v1/transfer", form({big.source, f.reference, f.source_seg, f.reference_seg}));
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 400);
    EXPECT_NE(r->body.find("parsing map"), std::string::npos);

    auto flag = form(f);
    flag.push_back({"global", "sometimes", "", ""});
    r = client_->Post("/api/v1/transfer", flag);
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 400);

    auto comps = form(f);
    comps.push_back({"components", "lips,nose", "", ""});
    r = client_->Post("/api/v1/transfer", comps);
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 400);

    r = client_->Post("/api/v1/transfer", "{}", "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 400);
}

TEST_F(ServiceTest, UnknownLabelsAre422WithOffendingValues) {
    service_->load_checkpoint(make_checkpoint(dir_, "a.ckpt", 3));
    auto f = fixture(dir_);
    auto labels = torch::zeros({kSize, kSize});
    labels[3][3] = 200.0 / 255.0;
    labels[4][4] = 77.0 / 255.0;
    auto r = client_->Post("/api/v1/transfer", form({f.source, f.reference, encode_gray_png(labels), f.reference_seg}));
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 422);
    auto body = json::parse(r->body);
    EXPECT_EQ(body["offending_labels"], json::array({77, 200}));
}

TEST_F(ServiceTest, RequestIdEchoedOrAssigned) {
    auto r = client_->Get("/api/v1/health", {{"X-Request-Id", "abc-123"}});
    ASSERT_TRUE(r);
    EXPECT_EQ(r->get_header_value("X-Request-Id"), "abc-123");
    r = client_->Get("/api/v1/health");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->get_header_value("X-Request-Id").rfind("req-", 0), 0u);
    auto o = client_->Options("/api/v1/transfer");
    ASSERT_TRUE(o);
    EXPECT_EQ(o->status, 204);
    EXPECT_EQ(o->get_header_value("Access-Control-Allow-Origin"), "*");
}

TEST_F(ServiceTest, ConcurrentRequestsAgree) {
    service_->load_checkpoint(make_checkpoint(dir_, "a.ckpt", 3));
    auto f = fixture(dir_);
    std::vector<std::future<std::string>> results;
    for (int i = 0; i < 4; ++i) {
        results.push_back(std::async(std::launch::async, [&] {
            httplib::Client c("127.0.0.1", port_);
            c.set_read_timeout(120, 0);
            auto r = c.Post("/api/v1/transfer", form(f));
            return r && r->status == 200 ? r->body : std::string();
        }));
    }
    std::vector<std::string> bodies;
    for (auto& r : results) bodies.push_back(r.get());
    for (const auto& b : bodies) {
        EXPECT_FALSE(b.empty());
        EXPECT_EQ(b, bodies[0]);
    }
}

TEST_F(ServiceTest, HotSwapChangesCheckpoint) {
    service_->load_checkpoint(make_checkpoint(dir_, "a.ckpt", 3));
    auto f = fixture(dir_);
    auto before = client_->Post("/api/v1/transfer", form(f));
    service_->load_checkpoint(make_checkpoint(dir_, "b.ckpt", 4));
    auto h = client_->Get("/api/v1/health");
    auto after = client_->Post("/api/v1/transfer", form(f));
    ASSERT_TRUE(before && h && after);
    EXPECT_EQ(json::parse(h->body)["checkpoint_id"], read_checkpoint(dir_ / "b.ckpt").id);
    EXPECT_NE(before->body, after->body);
}

TEST(ServiceLimits, OversizedImageIs413) {
    TempDir dir("service-limit");
    ServiceConfig config;
    config.max_image_bytes = 256;
    TransferService service(config);
    service.load_checkpoint(make_checkpoint(dir, "a.ckpt", 3));
    auto f = fixture(dir);
    ASSERT_GT(f.source.size(), 256u);
    auto r = service.transfer({f.source, f.reference, f.source_seg, f.reference_seg});
    EXPECT_EQ(r.status, 413);

    const int port = service.start_background("127.0.0.1");
    httplib::Client c("127.0.0.1", port);
    auto h = c.Post("/api/v1/transfer", form(f));
    ASSERT_TRUE(h);
    EXPECT_EQ(h->status, 413);
    service.stop();
}
