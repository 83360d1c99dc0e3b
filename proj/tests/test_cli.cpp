#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drm/cli.hpp"
#include "drm/common.hpp"

namespace fs = std::filesystem;
using drm::cli::dispatch;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("drm_cli_" + std::to_string(std::rand()) + "_" +
                                        std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

json load(const std::string& path) { return json::parse(drm::read_file(path)); }

}  // namespace

TEST_CASE("usage errors") {
  CHECK(dispatch(std::vector<std::string>{}) == drm::cli::kExitUsage);
  CHECK(dispatch({"bogus"}) == drm::cli::kExitUsage);
  CHECK(dispatch({"score", "--no-such-flag"}) == drm::cli::kExitUsage);
  CHECK(dispatch({"score", "--weights", "w.csv"}) == drm::cli::kExitUsage);  // --out missing
  CHECK(dispatch({"predict", "--model", "m.json", "--price", "0.2", "--hour", "24"}) ==
        drm::cli::kExitUsage);
}

TEST_CASE("config file parsing") {
  const auto cfg = drm::cli::parse_config_text("# comment\n\ndraws = 10\n--seed=3\n  chains =2 \n");
  CHECK(cfg.size() == 3);
  CHECK(cfg.at("draws") == "10");
  CHECK(cfg.at("seed") == "3");
  CHECK(cfg.at("chains") == "2");
  CHECK_THROWS_AS(drm::cli::parse_config_text("draws 10\n"), std::invalid_argument);
  CHECK_THROWS_AS(drm::cli::parse_config_text("draws = 1\ndraws = 2\n"), std::invalid_argument);
  CHECK_THROWS_AS(drm::cli::parse_config_text(" = 2\n"), std::invalid_argument);
}

TEST_CASE("missing input is a data error with a manifest") {
  TempDir dir;
  const std::string out = dir / "score.json";
  CHECK(dispatch({"score", "--weights", dir / "absent.csv", "--out", out}) == drm::cli::kExitData);
  CHECK_FALSE(fs::exists(out));
  const auto m = load(out + ".manifest.json");
  CHECK(m["exit_code"] == drm::cli::kExitData);
  CHECK(m["error"].is_string());
}

TEST_CASE("usage errors write no manifest") {
  TempDir dir;
  CHECK(dispatch({"score", "--weights", dir / "w.csv", "--out", dir / "s.json", "--mode", "x"}) ==
        drm::cli::kExitUsage);
  CHECK(fs::is_empty(dir.path));
}

TEST_CASE("end-to-end pipeline") {
  TempDir dir;
  const std::string data = dir / "data";
  REQUIRE(dispatch({"synth", "--consumers", "2", "--weeks", "1", "--noise-sd", "0.02", "--seed", "4",
                    "--out-dir", data}) == 0);
  for (const char* f : {"meter.csv", "weather.csv", "truth.json", "manifest.json"})
    CHECK(fs::exists(fs::path(data) / f));

  const std::string ds = dir / "dataset.json";
  REQUIRE(dispatch({"ingest", "--meter", data + "/meter.csv", "--weather", data + "/weather.csv",
                    "--out", ds}) == 0);
  auto manifest = load(ds + ".manifest.json");
  CHECK(manifest["schema_version"] == drm::cli::kManifestSchemaVersion);
  CHECK(manifest["subcommand"] == "ingest");
  CHECK(manifest["exit_code"] == 0);
  REQUIRE(manifest["inputs"].size() == 2);
  CHECK(manifest["inputs"][0]["crc32"].get<std::string>().size() == 8);
  CHECK(manifest["versions"].contains("eigen"));
  CHECK(manifest["sampler_defaults"].contains("score"));
  CHECK(manifest["sampler_defaults"].contains("fit-glm"));

  const std::string causal = dir / "causal.json";
  const std::string weights = dir / "weights";
  REQUIRE(dispatch({"causal", "--dataset", ds, "--regression", "exact", "--out", causal,
                    "--weights-dir", weights, "--pooled-price", "0.672"}) == 0);
  CHECK(fs::exists(weights + "/weights_S001.csv"));
  CHECK(fs::exists(weights + "/weights_pooled_0.672.csv"));

  // Config values apply unless a flag overrides them.
  const std::string cfg = dir / "score.cfg";
  drm::write_file_atomic(cfg, "# score settings\ndraws = 300\ntune = 200\nchains = 2\nseed = 99\n");
  const std::string score = dir / "score.json";
  REQUIRE(dispatch({"--config", cfg, "score", "--weights", weights + "/weights_S001.csv", "--mode",
                    "per-consumer", "--seed", "7", "--out", score, "--trace-out",
                    dir / "trace.csv"}) == 0);
  manifest = load(score + ".manifest.json");
  CHECK(manifest["sampler"]["draws"] == 300);
  CHECK(manifest["sampler"]["chains"] == 2);
  CHECK(manifest["sampler"]["seed"] == 7);
  CHECK(manifest["seed"] == 7);
  CHECK(manifest["config_file"] == cfg);
  const auto score_json = load(score);
  CHECK(score_json["subject"] == "S001");

  // Defaults apply when neither is given.
  const std::string pooled = dir / "pooled.json";
  REQUIRE(dispatch({"score", "--weights", weights + "/weights_pooled_0.672.csv", "--mode", "pooled",
                    "--method", "conjugate", "--draws", "200", "--out", pooled}) == 0);
  manifest = load(pooled + ".manifest.json");
  CHECK(manifest["sampler"]["tune"] == manifest["sampler_defaults"]["score"]["tune"]);

  drm::write_file_atomic(cfg, "draws = 1\nno-such-key = 2\n");
  CHECK(dispatch({"--config", cfg, "score", "--weights", weights + "/weights_S001.csv", "--out",
                  dir / "x.json"}) == drm::cli::kExitUsage);

  const std::string model = dir / "glm.json";
  REQUIRE(dispatch({"fit-glm", "--dataset", ds, "--causal", causal, "--consumer", "S001", "--draws",
                    "150", "--tune", "150", "--chains", "2", "--seed", "3", "--out", model}) == 0);
  CHECK(fs::exists(model + ".trace.csv"));
  CHECK(dispatch({"fit-glm", "--dataset", ds, "--causal", causal, "--consumer", "X9", "--out",
                  dir / "none.json"}) == drm::cli::kExitData);

  const std::string pred = dir / "pred.json";
  REQUIRE(dispatch({"predict", "--model", model, "--price", "0.25", "--hour", "10", "--out", pred}) ==
          0);
  const auto p = load(pred);
  CHECK(p.contains("mean"));
  manifest = load(pred + ".manifest.json");
  CHECK(manifest["inputs"].size() == 2);  // model and its trace

  const std::string figs = dir / "figs";
  REQUIRE(dispatch({"report", "--score", score, "--trace", dir / "trace.csv", "--kde-points", "32",
                    "--out-dir", figs}) == 0);
  CHECK(fs::exists(figs + "/manifest.json"));
  REQUIRE(dispatch({"report", "--model", model, "--price", "0.3", "--hour", "18", "--n-lines", "5",
                    "--kde-points", "32", "--out-dir", figs + "/glm"}) == 0);
  CHECK(std::distance(fs::directory_iterator(figs + "/glm"), fs::directory_iterator()) > 3);
  CHECK(dispatch({"report", "--score", score, "--model", model, "--out-dir", figs}) ==
        drm::cli::kExitUsage);

  const std::string cmp = dir / "compare";
  REQUIRE(dispatch({"synth", "--truth", data + "/truth.json", "--causal", causal, "--dataset", ds,
                    "--score", score, "--out-dir", cmp}) == 0);
  CHECK(load(cmp + "/recovery.json").size() == 2);
}

TEST_CASE("binary exit codes") {
  const char* bin = std::getenv("DRM_BIN");
  if (!bin) return;
  TempDir dir;
  const std::string b = std::string(bin);
  auto run = [&](const std::string& args) {
    const int status = std::system((b + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
  };
  CHECK(run("") == drm::cli::kExitUsage);
  CHECK(run("--help") == 0);
  CHECK(run("score --weights " + (dir / "missing.csv") + " --out " + (dir / "s.json")) ==
        drm::cli::kExitData);
  CHECK(run("synth --consumers 1 --weeks 1 --out-dir " + (dir / "d")) == 0);
}
