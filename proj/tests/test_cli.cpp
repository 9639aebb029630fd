#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sscf/cli.hpp"

using namespace sscf;
using namespace sscf::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("sscf_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

RunConfig tiny() {
  RunConfig c;
  c.variant = "scnn";
  c.resolution = 16;
  c.channel_divisor = 16;
  c.compact_channels = 8;
  c.hidden_channels = 4;
  c.synthetic_classes = 8;
  c.synthetic_per_class = 6;
  c.train_classes = 5;
  c.test_classes = 3;
  c.n_way = 3;
  c.q_query = 1;
  c.episodes = 2;
  c.eval_episodes = 3;
  c.probe_episodes = 1;
  c.log_every = 1;
  return c;
}

}  // namespace

TEST_CASE("config round trip") {
  RunConfig c = tiny();
  c.lambda = 0.35;
  c.noise_queries_only = true;
  c.seed = 123456789012345ull;
  CHECK(parse(serialize(c)) == c);
  CHECK(parse(serialize(RunConfig{})) == RunConfig{});
  CHECK(serialize(parse(serialize(c))) == serialize(c));
  // partial files keep defaults
  CHECK(parse(R"({"lambda": 1.0})").lambda == 1.0);
}

TEST_CASE("overrides") {
  RunConfig c;
  apply_override(c, "lambda=1.0");
  apply_override(c, "k_shot=5");
  apply_override(c, "use_sfe=false");
  apply_override(c, "variant=scnn");
  CHECK(c.lambda == 1.0);
  CHECK(c.k_shot == 5);
  CHECK_FALSE(c.use_sfe);
  CHECK(c.variant == "scnn");
  CHECK_THROWS_AS(apply_override(c, "nope=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "k_shot=abc"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "k_shot"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "use_cfc=maybe"), ConfigError);
}

TEST_CASE("validation lists every violation") {
  RunConfig c;
  c.lambda = 2.0;
  c.tau = 0.0;
  c.variant = "resnet";
  const auto v = violations(c);
  CHECK(v.size() >= 3);
  try {
    parse(R"({"lambda": 2.0, "tau": 0.0, "mystery": 1, "k_shot": "x"})");
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    const std::string m = e.what();
    CHECK(m.find("lambda") != std::string::npos);
    CHECK(m.find("tau") != std::string::npos);
    CHECK(m.find("mystery") != std::string::npos);
    CHECK(m.find("k_shot") != std::string::npos);
  }
  CHECK(violations(RunConfig{}).empty());
}

TEST_CASE("content hash follows the blob convention") {
  CHECK(git_blob_sha1("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("make-synthetic writes the tree deterministically") {
  fs::path a = scratch("synth_a"), b = scratch("synth_b");
  cmd_make_synthetic(a, 40, 20, 32, 5);
  cmd_make_synthetic(b, 40, 20, 32, 5);
  std::size_t files = 0, dirs = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_directory()) {
      ++dirs;
    } else {
      ++files;
      CHECK(slurp(e.path()) == slurp(b / fs::relative(e.path(), a)));
    }
  }
  CHECK(files == 800);
  CHECK(dirs == 40);
  fs::path c = scratch("synth_c");
  CHECK_NOTHROW(cmd_make_synthetic(c, 2, 1, 16, 1));
  CHECK_THROWS_AS(cmd_make_synthetic(c, 2, 1, 15, 1), ConfigError);
}

TEST_CASE("train, eval, profile and export") {
  fs::path out = scratch("run");
  RunConfig c = tiny();
  std::ostringstream log;
  RunRecord rec = cmd_train(c, out, log);
  for (const char* f : {"config.json", "metrics.jsonl", "model.ckpt", "run.json"}) CHECK(fs::exists(out / f));
  CHECK(rec.weights_sha1 == git_blob_sha1(slurp(out / "model.ckpt")));
  CHECK(parse(slurp(out / "config.json")) == c);
  CHECK(log.str().find("episode 2/2") != std::string::npos);
  std::istringstream lines(slurp(out / "metrics.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j["episode"] == n);
    ++n;
  }
  CHECK(n == 2);

  // identical snapshot and seed: identical metrics bytes
  fs::path again = scratch("run_again");
  cmd_train(c, again, log);
  CHECK(slurp(out / "metrics.jsonl") == slurp(again / "metrics.jsonl"));

  auto r = cmd_eval(c, out / "model.ckpt", out, log);
  CHECK(r.accuracies.size() == 3);
  auto ej = nlohmann::json::parse(slurp(out / "eval.json"));
  CHECK(ej["mean"].get<double>() == doctest::Approx(r.mean));

  auto rep = cmd_profile_energy(c, out / "model.ckpt", out, log);
  CHECK(fs::exists(out / "energy.json"));
  CHECK(log.str().find(energy::kCountingConvention) != std::string::npos);
  std::uint64_t s = 0;
  for (const auto& l : rep.layers) s += l.sops;
  CHECK(rep.total_sops == s);

  CHECK(export_embeddings(c, out / "model.ckpt", out) == 3 * 6);
  std::istringstream csv(slurp(out / "embeddings.csv"));
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 1 + 18);

  // T x LIF layers: four backbone blocks and the feature enhancer
  fs::path raster = out / "raster";
  fs::create_directories(raster);
  const std::size_t files = export_spike_raster(c, out / "model.ckpt", raster, 3);
  CHECK(files == c.timesteps * 5);
  std::size_t pgm = 0;
  for (const auto& e : fs::directory_iterator(raster)) pgm += e.path().extension() == ".pgm";
  CHECK(pgm == files);

  RunConfig wrong = c;
  wrong.channel_divisor = 8;
  CHECK_THROWS_AS(cmd_eval(wrong, out / "model.ckpt", out, log), ShapeError);
}

TEST_CASE("sweep arguments") {
  CHECK(parse_sweep_param("lambda") == SweepParam::lambda);
  CHECK(to_string(SweepParam::timesteps) == "timesteps");
  CHECK_THROWS_AS(parse_sweep_param("gamma"), ConfigError);
  std::ostringstream log;
  CHECK_THROWS_AS(run_sweep(tiny(), SweepParam::lambda, {}, 1, log), ConfigError);
  CHECK(value_seed(0.7, 1) != value_seed(0.8, 1));
  CHECK(value_seed(0.7, 1) != value_seed(0.7, 2));
  auto pts = run_sweep(tiny(), SweepParam::noise, {0.0, 0.8}, 1, log);
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].accuracy.size() == 1);
  CHECK(sweep_table(SweepParam::noise, pts).find("0.8") != std::string::npos);
  auto j = nlohmann::json::parse(sweep_json(SweepParam::noise, pts));
  CHECK(j.dump().find("noise") != std::string::npos);
}

TEST_CASE("error records") {
  auto j = nlohmann::json::parse(error_json(ConfigError("bad lambda")));
  CHECK(j["error"] == "config");
  CHECK(j["message"] == "bad lambda");
  CHECK(nlohmann::json::parse(error_json(ShapeError("x")))["error"] == "shape");
  CHECK(nlohmann::json::parse(error_json(std::runtime_error("x")))["error"] == "error");
}
