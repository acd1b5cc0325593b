#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "compose/cli.hpp"

namespace compose::cli {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = 0;
  std::string out;
  std::string err;
  std::string log;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err, log;
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(log);
  auto logger = std::make_shared<spdlog::logger>("cli_test", sink);
  auto previous = spdlog::default_logger();
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  Result r;
  r.code = run(std::move(args), out, err);
  spdlog::set_default_logger(previous);
  spdlog::set_level(spdlog::level::info);
  r.out = out.str();
  r.err = err.str();
  r.log = log.str();
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("compose_cli_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::size_t image_count(const std::string& corpus) const {
    std::size_t n = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir_ / corpus / "images")) ++n;
    return n;
  }

  fs::path dir_;
};

TEST_F(CliTest, HelpExitsZero) {
  const Result r = invoke({"compose", "--help"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("Subcommands"), std::string::npos);
  for (const char* cmd : {"data", "net", "pool", "run", "render", "eval", "serve", "synth"}) {
    EXPECT_NE(r.out.find(cmd), std::string::npos) << cmd;
  }
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(invoke({"compose", "--no-such-flag"}).code, kExitUsage);
  EXPECT_EQ(invoke({"compose", "frobnicate"}).code, kExitUsage);
  EXPECT_EQ(invoke({"compose"}).code, kExitUsage);
  EXPECT_EQ(invoke({"compose", "synth"}).code, kExitUsage);  // --out is required
  const Result r = invoke({"compose", "synth", "--out", path("x"), "--images", "many"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("images"), std::string::npos);
  EXPECT_EQ(invoke({"compose", "pool", "query", "--pool", path("none"), "--image", "x", "--box", "1,2,3,4"}).code,
            kExitUsage);
}

TEST_F(CliTest, ProgramNameSelectsTheCommand) {
  const Result r = invoke({"/usr/local/bin/compose-pool", "--help"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("query"), std::string::npos);
  EXPECT_NE(r.out.find("build"), std::string::npos);
  EXPECT_EQ(invoke({"compose-pool"}).code, kExitUsage);  // pool needs build or query
}

TEST_F(CliTest, CommandFailureExitsOne) {
  std::ofstream(path("broken.json")) << "{not json";
  std::ofstream(path("bg.png")) << "not a png";
  fs::create_directories(dir_ / "pool");
  const Result r = invoke({"compose", "render", "--pool", path("pool"), "--image", path("bg.png"), "--provenance",
                           path("broken.json"), "--out", path("o.png")});
  EXPECT_EQ(r.code, kExitFailure);
  EXPECT_NE(r.err.find("error"), std::string::npos);
  EXPECT_TRUE(r.out.empty());
}

TEST_F(CliTest, JsonConfigMergesUnderExplicitFlags) {
  std::ofstream(path("cfg.json")) << R"({"synth": {"images": 3, "seed": 5, "width": 128, "height": 96}})";
  Result r = invoke({"compose", "--config", path("cfg.json"), "synth", "--out", path("a")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(image_count("a"), 3u);
  EXPECT_EQ(nlohmann::json::parse(r.out)["images"], 3);
  EXPECT_NE(r.log.find("seed=5"), std::string::npos);

  r = invoke({"compose", "--config", path("cfg.json"), "synth", "--out", path("b"), "--images", "2"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(image_count("b"), 2u);
  EXPECT_NE(r.log.find("images=2"), std::string::npos);
}

TEST_F(CliTest, TomlConfigSections) {
  std::ofstream(path("cfg.toml")) << "[synth]\nimages = 4\nwidth = 128\nheight = 96\n";
  const Result r = invoke({"compose", "--config", path("cfg.toml"), "synth", "--out", path("c")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(image_count("c"), 4u);
}

TEST_F(CliTest, UnknownConfigKeyIsAUsageError) {
  std::ofstream(path("cfg.json")) << R"({"synth": {"imagez": 4}})";
  EXPECT_EQ(invoke({"compose", "--config", path("cfg.json"), "synth", "--out", path("d")}).code, kExitUsage);
  std::ofstream(path("bad.json")) << "{\"synth\": ";
  EXPECT_EQ(invoke({"compose", "--config", path("bad.json"), "synth", "--out", path("d")}).code, kExitUsage);
}

TEST_F(CliTest, DefaultsAreThePaperConstantsAndOverridesAreLogged) {
  const Result help = invoke({"compose", "data", "build", "--help"});
  for (const char* text : {"[0.3]", "[18]", "[2500]", "[3.2]", "[480]"}) {
    EXPECT_NE(help.out.find(text), std::string::npos) << text;
  }
  EXPECT_NE(invoke({"compose", "pool", "query", "--help"}).out.find("[0.4]"), std::string::npos);

  ASSERT_EQ(invoke({"compose", "synth", "--out", path("s"), "--images", "3"}).code, kExitOk);
  const Result r = invoke({"compose", "data", "build", "--annotations", path("s/annotations.json"), "--images",
                           path("s/images"), "--out", path("d"), "--resolution", "60", "--min-area", "1234",
                           "--blur-sigma", "2.5"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  for (const char* text : {"min-area=1234", "blur-sigma=2.5", "max-overlap-iou=0.3", "min-edge-distance=18",
                           "resolution=60"}) {
    EXPECT_NE(r.log.find(text), std::string::npos) << text;
  }
  const auto build = nlohmann::json::parse(std::ifstream(dir_ / "d" / "build.json"));
  EXPECT_EQ(build["config"]["filters"]["min_area"], 1234.0);
  EXPECT_EQ(build["config"]["scene"]["blur_sigma"], 2.5);
}

TEST_F(CliTest, EndToEndThroughEveryCommand) {
  ASSERT_EQ(invoke({"compose", "synth", "--out", path("syn"), "--images", "16", "--seed", "2"}).code, kExitOk);
  ASSERT_EQ(invoke({"compose", "data", "build", "--annotations", path("syn/annotations.json"), "--images",
                    path("syn/images"), "--out", path("data"), "--resolution", "60"})
                .code,
            kExitOk);
  Result r = invoke({"compose", "net", "train", "--data", path("data"), "--out", path("net.ckpt"), "--network",
                     "compact", "--epochs", "1", "--batch-size", "8", "--metrics", path("metrics.jsonl")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "metrics.jsonl"));
  EXPECT_EQ(invoke({"compose", "net", "train", "--data", path("data"), "--out", path("x.ckpt"), "--network", "reference"})
                .code,
            kExitFailure);  // 60 px training set against the 480 px network

  r = invoke({"compose", "eval", "--ckpt", path("net.ckpt"), "--data", path("data"), "--out", path("report")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto report = nlohmann::json::parse(r.out);
  for (const char* key : {"position_correlation", "size_correlation", "n_samples", "uniform_baseline"}) {
    EXPECT_TRUE(report.contains(key)) << key;
  }
  EXPECT_EQ(report["n_samples"], 16);
  EXPECT_TRUE(fs::exists(dir_ / "report" / "position.png"));

  ASSERT_EQ(invoke({"compose", "pool", "build", "--annotations", path("syn/annotations.json"), "--images",
                    path("syn/images"), "--out", path("pool")})
                .code,
            kExitOk);
  r = invoke({"compose", "pool", "query", "--pool", path("pool"), "--image", path("syn/images/synth_000001.png"),
              "--box", "100,60,40,110", "--k", "4"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out)["matches"].size(), 4u);
  EXPECT_EQ(invoke({"compose", "pool", "query", "--pool", path("pool"), "--image",
                    path("syn/images/synth_000001.png"), "--box", "1,2,3"})
                .code,
            kExitFailure);

  r = invoke({"compose", "net", "predict", "--ckpt", path("net.ckpt"), "--image", path("syn/images/synth_000001.png"),
              "--k", "2", "--heatmap", path("heat.png")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out)["people"][0]["hypotheses"].size(), 2u);
  EXPECT_TRUE(fs::exists(dir_ / "heat.png"));

  r = invoke({"compose-run", "--ckpt", path("net.ckpt"), "--pool", path("pool"), "--image",
              path("syn/images/synth_000002.png"), "--n", "2", "--out", path("comp.png"), "--provenance",
              path("prov.json")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto run_out = nlohmann::json::parse(r.out);
  EXPECT_EQ(run_out["provenance"]["placements"].size(), 2u);
  r = invoke({"compose", "render", "--pool", path("pool"), "--image", path("syn/images/synth_000002.png"),
              "--provenance", path("prov.json"), "--out", path("again.png")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out)["hash"], run_out["hash"]);
}

}  // namespace
}  // namespace compose::cli
