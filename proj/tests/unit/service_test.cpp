#include <unistd.h>

#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <thread>

#include <httplib.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "compose/errors.hpp"
#include "compose/service.hpp"
#include "compose/synth.hpp"

namespace compose {
namespace {

namespace fs = std::filesystem;

std::string encode(const cv::Mat& image, const std::string& ext) {
  std::vector<std::uint8_t> buf;
  cv::imencode(ext, image, buf);
  return {buf.begin(), buf.end()};
}

cv::Mat decode(const std::string& bytes, int flags = cv::IMREAD_UNCHANGED) {
  const std::vector<std::uint8_t> buf(bytes.begin(), bytes.end());
  return cv::imdecode(buf, flags);
}

PixelBox box_from(const nlohmann::json& j) {
  return PixelBox::from_xywh(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("compose_service_test_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    SynthOptions opts;
    opts.images = 14;
    opts.seed = 8;
    write_synthetic_coco(root_ / "coco", opts);
    const auto ds = CocoDataset::load(root_ / "coco" / "annotations.json");
    const auto ex = make_extractor("histogram");
    pool_ = std::make_shared<const CandidatePool>(build_pool(ds, root_ / "coco" / "images", *ex, {}));
    SceneOptions scene;
    scene.input_resolution = NetworkConfig::compact().input_resolution;
    model_ = std::make_shared<const PlacementModel>(
        PlacementModel{PlacementNet(NetworkConfig::compact(), 5), Palette(0, {kPersonCategory, kCarCategory, kBenchCategory}), scene});

    std::mt19937_64 rng(99);
    SynthOptions bg;
    bg.width = 640;
    bg.height = 480;
    bg.with_person = false;
    background_ = generate_scene(rng, bg).image;
  }

  static void TearDownTestSuite() {
    pool_.reset();
    model_.reset();
    fs::remove_all(root_);
  }

  void SetUp() override { start({}); }
  void TearDown() override { stop(); }

  void start(ServiceOptions options) {
    stop();
    service_ = std::make_unique<ComposeService>(model_, pool_, std::move(options));
    server_ = std::make_unique<HttpServer>(*service_);
    port_ = server_->start("127.0.0.1", 0);
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(60, 0);
  }

  void stop() {
    client_.reset();
    if (server_) server_->stop();
    server_.reset();
    service_.reset();
  }

  std::string upload(const cv::Mat& image) {
    const auto res = client_->Post("/sessions", encode(image, ".png"), "image/png");
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, 201) << res->body;
    return nlohmann::json::parse(res->body).at("id").get<std::string>();
  }

  nlohmann::json post(const std::string& path, const nlohmann::json& body, int expect = 200) {
    const auto res = client_->Post(path, body.dump(), "application/json");
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, expect) << path << " " << res->body;
    return nlohmann::json::parse(res->body);
  }

  nlohmann::json get(const std::string& path, int expect = 200) {
    const auto res = client_->Get(path);
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, expect) << path << " " << res->body;
    return nlohmann::json::parse(res->body);
  }

  std::string get_bytes(const std::string& path) {
    const auto res = client_->Get(path);
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, 200) << path;
    return res->body;
  }

  static inline fs::path root_;
  static inline std::shared_ptr<const CandidatePool> pool_;
  static inline std::shared_ptr<const PlacementModel> model_;
  static inline cv::Mat background_;

  std::unique_ptr<ComposeService> service_;
  std::unique_ptr<HttpServer> server_;
  std::unique_ptr<httplib::Client> client_;
  int port_ = 0;
};

TEST(ImageSniff, ReadsHeadersWithoutDecoding) {
  const cv::Mat img(37, 53, CV_8UC3, cv::Scalar(1, 2, 3));
  EXPECT_EQ(sniff_image_size(encode(img, ".png")), cv::Size(53, 37));
  EXPECT_EQ(sniff_image_size(encode(img, ".jpg")), cv::Size(53, 37));
  EXPECT_FALSE(sniff_image_size("GIF89a...."));
  EXPECT_FALSE(sniff_image_size(""));
  EXPECT_TRUE(image_is_complete(encode(img, ".png")));
  EXPECT_TRUE(image_is_complete(encode(img, ".jpg")));
  const std::string jpg = encode(img, ".jpg");
  EXPECT_FALSE(image_is_complete(jpg.substr(0, jpg.size() / 2)));
  const std::string png = encode(img, ".png");
  EXPECT_FALSE(image_is_complete(png.substr(0, png.size() - 20)));
}

TEST_F(ServiceTest, UploadJpegCreatesSession) {
  const auto res = client_->Post("/sessions", encode(background_, ".jpg"), "image/jpeg");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 201);
  const auto j = nlohmann::json::parse(res->body);
  EXPECT_FALSE(j.at("id").get<std::string>().empty());
  EXPECT_EQ(j["width"], 640);
  EXPECT_EQ(j["height"], 480);
  EXPECT_EQ(j["boxes"].size(), 0u);
  const cv::Mat bg = decode(get_bytes(j["background_url"].get<std::string>()), cv::IMREAD_COLOR);
  EXPECT_EQ(bg.size(), cv::Size(640, 480));
}

TEST_F(ServiceTest, RejectsTruncatedAndGarbageUploads) {
  const std::string jpg = encode(background_, ".jpg");
  const auto truncated = client_->Post("/sessions", jpg.substr(0, jpg.size() / 2), "image/jpeg");
  ASSERT_TRUE(truncated);
  EXPECT_EQ(truncated->status, 400);
  const auto garbage = client_->Post("/sessions", "definitely not an image", "image/png");
  EXPECT_EQ(garbage->status, 400);
  EXPECT_EQ(service_->session_count(), 0u);
}

TEST_F(ServiceTest, OversizeImageIs413) {
  // A PNG whose header claims 10000 x 10000 (100 MP) against the default 20 MP limit.
  std::string png = encode(cv::Mat(1, 1, CV_8UC3, cv::Scalar::all(0)), ".png");
  const char dims[8] = {0, 0, 0x27, 0x10, 0, 0, 0x27, 0x10};
  png.replace(16, 8, dims, 8);
  ASSERT_EQ(sniff_image_size(png), cv::Size(10000, 10000));
  const auto res = client_->Post("/sessions", png, "image/png");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 413);

  ServiceOptions small;
  small.max_pixels = 640 * 480 - 1;
  start(small);
  EXPECT_EQ(client_->Post("/sessions", encode(background_, ".png"), "image/png")->status, 413);
  small.max_pixels = 640 * 480;
  start(small);
  EXPECT_EQ(client_->Post("/sessions", encode(background_, ".png"), "image/png")->status, 201);

  ServiceOptions bytes;
  bytes.max_upload_bytes = 1000;
  start(bytes);
  EXPECT_EQ(client_->Post("/sessions", encode(background_, ".png"), "image/png")->status, 413);
}

TEST_F(ServiceTest, UnknownSessionIs404Everywhere) {
  get("/sessions/424242", 404);
  post("/sessions/424242/predict", {{"n_people", 1}}, 404);
  get("/sessions/424242/candidates?box=0", 404);
  post("/sessions/424242/placements", {{"box", 0}}, 404);
  EXPECT_EQ(client_->Get("/sessions/424242/background.png")->status, 404);
}

TEST_F(ServiceTest, CandidatesAndPlacementsNeedPredictFirst) {
  const std::string id = upload(background_);
  get("/sessions/" + id + "/candidates?box=0", 409);
  post("/sessions/" + id + "/placements", {{"box", 0}, {"dx", 1}}, 409);
  EXPECT_EQ(client_->Get("/sessions/" + id + "/composite.png")->status, 409);
}

TEST_F(ServiceTest, PredictMirrorsPredictMulti) {
  const std::string id = upload(background_);
  for (int n : {1, 2, 3}) {
    const auto j = post("/sessions/" + id + "/predict", {{"n_people", n}});
    const ScenePrediction direct = predict_scene(*model_, background_, {}, n);
    ASSERT_EQ(j["boxes"].size(), static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const auto& b = j["boxes"][i];
      EXPECT_EQ(b["location"]["index"], direct.people[i].location.index);
      EXPECT_EQ(b["size"]["index"], direct.people[i].size.index);
      EXPECT_EQ(box_from(b["predicted_box"]), direct.boxes[i]);
      EXPECT_TRUE(pool_->find(b["segment_id"].get<std::int64_t>()));
    }
    EXPECT_EQ(j["n_people"], n);
    EXPECT_EQ(j["provenance"]["placements"].size(), static_cast<std::size_t>(n));
  }
  post("/sessions/" + id + "/predict", {{"n_people", 0}}, 422);
  post("/sessions/" + id + "/predict", {{"n_people", "two"}}, 400);
  const cv::Mat heat = decode(get_bytes("/sessions/" + id + "/heatmap.png"));
  EXPECT_EQ(heat.size(), background_.size());
}

TEST_F(ServiceTest, CandidatesPassThroughRetrieval) {
  const std::string id = upload(background_);
  const auto p = post("/sessions/" + id + "/predict", {{"n_people", 2}});
  for (int box = 0; box < 2; ++box) {
    const auto j = get("/sessions/" + id + "/candidates?box=" + std::to_string(box));
    const PixelBox query = box_from(p["boxes"][box]["box"]);
    const auto ex = pool_extractor(*pool_);
    const UiCandidates direct = candidates_for_box(*pool_, *ex, background_, query, 9);
    ASSERT_EQ(j["candidates"].size(), direct.matches.size());
    EXPECT_EQ(j["candidates"].size(), std::min<std::size_t>(9, pool_->size()));
    for (std::size_t i = 0; i < direct.matches.size(); ++i) {
      EXPECT_EQ(j["candidates"][i]["segment_id"], direct.matches[i].record->id);
      EXPECT_DOUBLE_EQ(j["candidates"][i]["distance"].get<double>(), direct.matches[i].distance);
    }
    EXPECT_EQ(j["padded"], direct.padded);
    // the automatic composite uses the top candidate of the first box
    if (box == 0) EXPECT_EQ(p["boxes"][0]["segment_id"], direct.matches.front().record->id);
    const cv::Mat thumb = decode(get_bytes(j["candidates"][0]["thumbnail_url"].get<std::string>()));
    EXPECT_EQ(thumb.channels(), 4);
  }
  get("/sessions/" + id + "/candidates?box=2", 404);
  get("/sessions/" + id + "/candidates?box=x", 400);
  EXPECT_EQ(client_->Get("/segments/987654/thumbnail.png")->status, 404);
}

TEST_F(ServiceTest, IdentityEditIsByteIdentical) {
  const std::string id = upload(background_);
  post("/sessions/" + id + "/predict", {{"n_people", 1}});
  const std::string before = get_bytes("/sessions/" + id + "/composite.png");
  const auto j = post("/sessions/" + id + "/placements", {{"box", 0}, {"dx", 0}, {"dy", 0}, {"scale", 1}});
  EXPECT_EQ(get_bytes(j["composite_url"].get<std::string>()), before);
  EXPECT_EQ(j["revision"], 2);
}

TEST_F(ServiceTest, ScaleTranslateReplace) {
  const std::string id = upload(background_);
  const auto p = post("/sessions/" + id + "/predict", {{"n_people", 1}});
  const PixelBox b0 = box_from(p["provenance"]["placements"][0]["box"]);
  const double s0 = p["provenance"]["placements"][0]["scale"].get<double>();

  const auto half = post("/sessions/" + id + "/placements", {{"box", 0}, {"scale", 0.5}});
  const PixelBox b1 = box_from(half["provenance"]["placements"][0]["box"]);
  EXPECT_NEAR(b1.height(), b0.height() / 2, 1e-9);
  EXPECT_NEAR(b1.center_x(), b0.center_x(), 1e-9);
  EXPECT_NEAR(b1.center_y(), b0.center_y(), 1e-9);

  const auto twice = post("/sessions/" + id + "/placements", {{"box", 0}, {"scale", 2}});
  const PixelBox b2 = box_from(twice["provenance"]["placements"][0]["box"]);
  EXPECT_NEAR(b2.height(), 2 * b1.height(), 1e-9);
  EXPECT_NEAR(twice["provenance"]["placements"][0]["scale"].get<double>(),
              2 * half["provenance"]["placements"][0]["scale"].get<double>(), 1e-9);
  EXPECT_NEAR(twice["provenance"]["placements"][0]["scale"].get<double>(), s0, 1e-9);

  // shrink again so the box has room on every side, then nudge it toward the image center
  const auto again = post("/sessions/" + id + "/placements", {{"box", 0}, {"scale", 0.5}});
  const PixelBox b3 = box_from(again["provenance"]["placements"][0]["box"]);
  const double dx = b3.center_x() < 320 ? 3 : -3, dy = b3.center_y() < 240 ? 2 : -2;
  const auto moved = post("/sessions/" + id + "/placements", {{"box", 0}, {"dx", dx}, {"dy", dy}});
  const PixelBox b4 = box_from(moved["provenance"]["placements"][0]["box"]);
  EXPECT_NEAR(b4.x_min, b3.x_min + dx, 1e-9);
  EXPECT_NEAR(b4.y_max, b3.y_max + dy, 1e-9);
  EXPECT_NEAR(b4.height(), b3.height(), 1e-9);

  const std::int64_t old_id = moved["boxes"][0]["segment_id"];
  std::int64_t other = 0;
  for (const auto& r : pool_->records()) {
    if (r.id != old_id) other = r.id;
  }
  const auto replaced = post("/sessions/" + id + "/placements", {{"box", 0}, {"segment_id", other}});
  EXPECT_EQ(replaced["provenance"]["placements"][0]["segment_id"], other);
  EXPECT_EQ(box_from(replaced["provenance"]["placements"][0]["box"]), b4);
}

TEST_F(ServiceTest, RejectedEditsLeaveStateUntouched) {
  const std::string id = upload(background_);
  post("/sessions/" + id + "/predict", {{"n_people", 1}});
  const auto before = get("/sessions/" + id);
  post("/sessions/" + id + "/placements", {{"box", 0}, {"segment_id", 987654}}, 404);
  post("/sessions/" + id + "/placements", {{"box", 3}}, 404);
  post("/sessions/" + id + "/placements", {{"box", 0}, {"scale", 0}}, 422);
  post("/sessions/" + id + "/placements", {{"box", 0}, {"scale", -2}}, 422);
  post("/sessions/" + id + "/placements", {{"box", 0}, {"dx", 5000}}, 422);
  post("/sessions/" + id + "/placements", {{"box", 0}, {"scale", 1e-4}}, 422);
  post("/sessions/" + id + "/placements", {{"dx", 1}}, 400);
  EXPECT_EQ(get("/sessions/" + id), before);
}

TEST_F(ServiceTest, CompositeReproducibleFromProvenance) {
  const std::string id = upload(background_);
  post("/sessions/" + id + "/predict", {{"n_people", 2}});
  const auto j = post("/sessions/" + id + "/placements", {{"box", 1}, {"dx", 7}, {"scale", 0.8}});
  const cv::Mat served = decode(get_bytes(j["composite_url"].get<std::string>()), cv::IMREAD_COLOR);
  const cv::Mat offline = recompose(background_, j["provenance"].get<Provenance>(), *pool_).image;
  EXPECT_EQ(image_hash(served), image_hash(offline));
}

TEST_F(ServiceTest, SessionsAreIsolatedUnderConcurrency) {
  constexpr int kThreads = 6;
  std::vector<std::string> ids;
  for (int i = 0; i < kThreads; ++i) ids.push_back(upload(background_));
  std::vector<nlohmann::json> results(kThreads);
  std::vector<std::thread> threads;
  for (int t = 0; t < kThreads; ++t) {
    threads.emplace_back([&, t] {
      httplib::Client c("127.0.0.1", port_);
      c.set_read_timeout(60, 0);
      c.Post("/sessions/" + ids[t] + "/predict", nlohmann::json{{"n_people", 1 + t % 3}}.dump(), "application/json");
      const auto r = c.Post("/sessions/" + ids[t] + "/placements", nlohmann::json{{"box", 0}, {"dx", t}}.dump(),
                            "application/json");
      results[t] = nlohmann::json::parse(r->body);
    });
  }
  for (auto& th : threads) th.join();
  for (int t = 0; t < kThreads; ++t) {
    const std::string fresh = upload(background_);
    post("/sessions/" + fresh + "/predict", {{"n_people", 1 + t % 3}});
    const auto expect = post("/sessions/" + fresh + "/placements", {{"box", 0}, {"dx", t}});
    EXPECT_EQ(results[t]["provenance"], expect["provenance"]) << t;
  }
}

TEST_F(ServiceTest, ConcurrentEditsToOneSessionAreSerialized) {
  const std::string id = upload(background_);
  const auto p = post("/sessions/" + id + "/predict", {{"n_people", 1}});
  const PixelBox b0 = box_from(p["boxes"][0]["box"]);
  const double step = b0.x_min >= 16 ? -1.0 : 1.0;
  constexpr int kThreads = 4, kEdits = 4;
  std::vector<std::thread> threads;
  for (int t = 0; t < kThreads; ++t) {
    threads.emplace_back([&] {
      httplib::Client c("127.0.0.1", port_);
      c.set_read_timeout(60, 0);
      for (int e = 0; e < kEdits; ++e) {
        c.Post("/sessions/" + id + "/placements", nlohmann::json{{"box", 0}, {"dx", step}}.dump(), "application/json");
      }
    });
  }
  for (auto& th : threads) th.join();
  const auto j = get("/sessions/" + id);
  EXPECT_EQ(j["revision"], 1 + kThreads * kEdits);
  EXPECT_NEAR(box_from(j["boxes"][0]["box"]).x_min, b0.x_min + step * kThreads * kEdits, 1e-9);
}

TEST_F(ServiceTest, MultipartUploadCarriesDetections) {
  const std::vector<Detection> dets{{kBenchCategory, PixelBox::from_xywh(100, 300, 120, 60), 0.9}};
  httplib::MultipartFormDataItems items{{"image", encode(background_, ".png"), "bg.png", "image/png"},
                                        {"detections", nlohmann::json(dets).dump(), "d.json", "application/json"}};
  const auto res = client_->Post("/sessions", items);
  ASSERT_EQ(res->status, 201) << res->body;
  const std::string id = nlohmann::json::parse(res->body)["id"];
  const auto j = post("/sessions/" + id + "/predict", {{"n_people", 1}});
  const ScenePrediction direct = predict_scene(*model_, background_, dets, 1);
  EXPECT_EQ(box_from(j["boxes"][0]["predicted_box"]), direct.boxes[0]);
}

TEST_F(ServiceTest, PersistedSessionsSurviveRestart) {
  const fs::path dir = root_ / "persist";
  fs::remove_all(dir);
  ServiceOptions opts;
  opts.persist_dir = dir;
  start(opts);
  const std::string id = upload(background_);
  post("/sessions/" + id + "/predict", {{"n_people", 2}});
  post("/sessions/" + id + "/placements", {{"box", 1}, {"dx", -3}, {"scale", 0.9}});
  const auto state = get("/sessions/" + id);
  const std::string composite = get_bytes("/sessions/" + id + "/composite.png");
  EXPECT_TRUE(fs::exists(dir / id / "state.json"));

  start(opts);
  auto restored = get("/sessions/" + id);
  EXPECT_EQ(restored["boxes"], state["boxes"]);
  EXPECT_EQ(restored["provenance"], state["provenance"]);
  EXPECT_EQ(get_bytes("/sessions/" + id + "/composite.png"), composite);
  EXPECT_NE(upload(background_), id);
}

TEST(Pipeline, StandingCellsExcludePadding) {
  // 640 x 480 pads 80 px above and below: rows whose centers fall in (80, 560) are rows 2..12.
  const auto ok = standing_cells(pad_to_square(640, 480));
  for (int i = 0; i < 225; ++i) {
    const int row = i / 15;
    EXPECT_EQ(ok[static_cast<std::size_t>(i)] != 0, row >= 2 && row <= 12) << i;
  }
  const auto tall = standing_cells(pad_to_square(300, 600));
  for (int i = 0; i < 225; ++i) {
    const int col = i % 15;
    // offset 150 of 600: centers (col + 0.5) * 40 in (150, 450) are cols 4..10
    EXPECT_EQ(tall[static_cast<std::size_t>(i)] != 0, col >= 4 && col <= 10) << i;
  }
}

TEST(ServiceWithoutModel, PredictIsUnavailable) {
  ComposeService svc(nullptr, nullptr);
  const auto created = svc.create_session(encode(cv::Mat(40, 40, CV_8UC3, cv::Scalar::all(9)), ".png"));
  try {
    svc.predict(created["id"], 1);
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status(), 503);
  }
}

}  // namespace
}  // namespace compose
