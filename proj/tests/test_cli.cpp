#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "cdl/cli.hpp"

using namespace cdl;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cdl_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

int run(const std::vector<std::string>& args) { return cdl::cli::run_cli(args); }

}  // namespace

TEST_CASE("synth with zero pairs writes an empty manifest", "[cli_cmd]") {
  const auto dir = fresh_dir("synth_empty");
  REQUIRE(run({"synth", "--out", dir.string(), "--n_pairs", "0", "--n_train", "0"}) == 0);
  const CsvTable manifest = read_csv((dir / "manifest.csv").string());
  CHECK(manifest.rows.empty());
  CHECK(fs::exists(dir / "synth_config.txt"));
}

TEST_CASE("synth is byte-deterministic for a fixed seed", "[cli_cmd]") {
  const auto d1 = fresh_dir("synth_det1");
  const auto d2 = fresh_dir("synth_det2");
  const std::vector<std::string> common = {"synth",      "--n_pairs", "1",  "--n_train", "1",
                                           "--dims",     "20 20 20",  "--seed", "7",
                                           "--phantom_noise", "0.01"};
  auto args1 = common;
  args1.insert(args1.end(), {"--out", d1.string()});
  auto args2 = common;
  args2.insert(args2.end(), {"--out", d2.string()});
  REQUIRE(run(args1) == 0);
  REQUIRE(run(args2) == 0);
  CHECK(file_bytes(d1 / "manifest.csv") == file_bytes(d2 / "manifest.csv"));
  CHECK(file_bytes(d1 / "case_0_target.cdlv") == file_bytes(d2 / "case_0_target.cdlv"));
  CHECK(file_bytes(d1 / "case_0_truth.txt") == file_bytes(d2 / "case_0_truth.txt"));
}

TEST_CASE("synth mr-ct emits the full quadruple per pair", "[cli_cmd]") {
  const auto dir = fresh_dir("synth_mrct");
  REQUIRE(run({"synth", "--out", dir.string(), "--n_pairs", "5", "--n_train", "0",
               "--preset", "mr-ct", "--dims", "16 16 16"}) == 0);
  for (int i = 0; i < 5; ++i) {
    const std::string base = "case_" + std::to_string(i);
    CHECK(fs::exists(dir / (base + "_target.cdlv")));
    CHECK(fs::exists(dir / (base + "_source.cdlv")));
    CHECK(fs::exists(dir / (base + "_target_mask.cdlm")));
    CHECK(fs::exists(dir / (base + "_source_mask.cdlm")));
    CHECK(fs::exists(dir / (base + "_truth.txt")));
  }
  const CsvTable manifest = read_csv((dir / "manifest.csv").string());
  CHECK(manifest.rows.size() == 5);
}

TEST_CASE("unknown config keys are rejected with exit 2", "[cli_cmd]") {
  const auto dir = fresh_dir("badkey");
  const auto cfg_path = dir / "run.cfg";
  {
    std::ofstream cfg(cfg_path);
    cfg << "n_pairs = 1\nnot_a_key = 5\n";
  }
  CHECK(run({"synth", "--out", dir.string(), "--config", cfg_path.string()}) == 2);
}

TEST_CASE("config file values apply and flags override them", "[cli_cmd]") {
  const auto dir = fresh_dir("cfg_merge");
  const auto cfg_path = dir / "run.cfg";
  {
    std::ofstream cfg(cfg_path);
    cfg << "n_pairs = 2\nn_train = 0\ndims = 16 16 16\n";
  }
  REQUIRE(run({"synth", "--out", dir.string(), "--config", cfg_path.string(), "--n_pairs",
               "1"}) == 0);
  const CsvTable manifest = read_csv((dir / "manifest.csv").string());
  CHECK(manifest.rows.size() == 1);  // flag wins
  // resolved config persisted with the effective values
  const std::string resolved = file_bytes(dir / "synth_config.txt");
  CHECK(resolved.find("n_pairs = 1") != std::string::npos);
  CHECK(resolved.find("dims = 16 16 16") != std::string::npos);
}

namespace {

struct Pipeline {
  fs::path data, train, reg;
};

// small end-to-end synth -> train fixture shared by the command tests
Pipeline run_small_pipeline(const std::string& tag, int train_iters) {
  Pipeline p;
  p.data = fresh_dir(tag + "_data");
  REQUIRE(run({"synth", "--out", p.data.string(), "--n_pairs", "1", "--n_train", "2",
               "--dims", "24 24 24", "--seed", "11", "--max_rot_deg", "4",
               "--max_trans_mm", "2"}) == 0);
  p.train = fresh_dir(tag + "_train");
  const int rc = run({"train", "--out", p.train.string(), "--manifest",
                      (p.data / "manifest.csv").string(), "--max_iters",
                      std::to_string(train_iters), "--beta", "0.02", "--learning_rate",
                      "0.5", "--n_samples", "4000", "--arch", "8 4", "--eps", "1e-10"});
  REQUIRE((rc == 0 || rc == 1));
  return p;
}

}  // namespace

TEST_CASE("train writes one history row per iteration", "[cli_cmd]") {
  const Pipeline p = run_small_pipeline("train_k1", 1);
  const CsvTable hist = read_csv((p.train / "train_history.csv").string());
  REQUIRE(hist.rows.size() == 1);
  CHECK(fs::exists(p.train / "model.json"));
}

TEST_CASE("train is deterministic and improves the cost", "[cli_cmd]") {
  const Pipeline p1 = run_small_pipeline("train_det_a", 40);
  const Pipeline p2 = run_small_pipeline("train_det_b", 40);
  CHECK(file_bytes(p1.train / "model.json") == file_bytes(p2.train / "model.json"));
  const CsvTable hist = read_csv((p1.train / "train_history.csv").string());
  REQUIRE(hist.rows.size() >= 2);
  const double first = parse_double(hist.rows.front()[1], "cost");
  const double last = parse_double(hist.rows.back()[1], "cost");
  CHECK(last > first);
}

TEST_CASE("register with zero iterations emits the identity transform", "[cli_cmd]") {
  const Pipeline p = run_small_pipeline("reg0", 15);
  const auto reg = fresh_dir("reg0_out");
  REQUIRE(run({"register", "--out", reg.string(), "--target",
               (p.data / "case_0_target.cdlv").string(), "--source",
               (p.data / "case_0_source.cdlv").string(), "--model",
               (p.train / "model.json").string(), "--max_iters", "0", "--n_samples",
               "800"}) == 0);
  const AffineParams mu = load_transform((reg / "transform.txt").string());
  using namespace cdl::mu_index;
  CHECK(mu.mu[rx] == 0.0);
  CHECK(mu.mu[tx] == 0.0);
  CHECK(mu.mu[sx] == 1.0);
  const CsvTable trace = read_csv((reg / "trace.csv").string());
  CHECK(trace.rows.size() == 1);
}

TEST_CASE("cdl and hist-mi traces share the schema; evaluate consumes them", "[cli_cmd]") {
  const Pipeline p = run_small_pipeline("evalflow", 25);
  const auto reg_cdl = fresh_dir("evalflow_cdl") / "case_0";
  const auto reg_mi = fresh_dir("evalflow_mi") / "case_0";
  const std::vector<std::string> shared = {
      "--target", (p.data / "case_0_target.cdlv").string(),
      "--source", (p.data / "case_0_source.cdlv").string(),
      "--truth_target_mask", (p.data / "case_0_target_mask.cdlm").string(),
      "--truth_source_mask", (p.data / "case_0_source_mask.cdlm").string(),
      "--max_iters", "10", "--n_samples", "1500", "--base_step", "1.0", "--seed", "3"};
  auto args_cdl = std::vector<std::string>{"register", "--out", reg_cdl.string(), "--model",
                                           (p.train / "model.json").string()};
  args_cdl.insert(args_cdl.end(), shared.begin(), shared.end());
  REQUIRE(run(args_cdl) == 0);
  auto args_mi = std::vector<std::string>{"register", "--out", reg_mi.string(), "--metric",
                                          "hist-mi"};
  args_mi.insert(args_mi.end(), shared.begin(), shared.end());
  REQUIRE(run(args_mi) == 0);

  const CsvTable t1 = read_csv((reg_cdl / "trace.csv").string());
  const CsvTable t2 = read_csv((reg_mi / "trace.csv").string());
  REQUIRE(t1.header == t2.header);
  REQUIRE(t1.rows.size() == 11);
  REQUIRE(t2.rows.size() == 11);
  CHECK_FALSE(t1.rows[0][15].empty());  // dice tracked

  const auto eval = fresh_dir("evalflow_eval");
  REQUIRE(run({"evaluate", "--out", eval.string(), "--manifest",
               (p.data / "manifest.csv").string(), "--runs",
               "cdl=" + reg_cdl.parent_path().string() +
                   ",hist-mi=" + reg_mi.parent_path().string(),
               "--svg", "true"}) == 0);
  CHECK(fs::exists(eval / "report.csv"));
  CHECK(fs::exists(eval / "summary.txt"));
  CHECK(fs::exists(eval / "scatter.csv"));
  CHECK(fs::exists(eval / "gain_cdl.csv"));
  CHECK(fs::exists(eval / "scatter.svg"));
  const CsvTable report = read_csv((eval / "report.csv").string());
  REQUIRE(report.rows.size() == 2);  // one case x two methods
  CHECK(report.header == std::vector<std::string>{"case", "method", "initial_dice",
                                                  "final_dice", "initial_hd_mm",
                                                  "final_hd_mm"});
}

TEST_CASE("register propagates metric failures with exit 3", "[cli_cmd]") {
  const Pipeline p = run_small_pipeline("regfail", 5);
  const auto reg = fresh_dir("regfail_out");
  // constant target: percentile normalization collapses it, sampling fails
  const auto const_target = reg / "flat.cdlv";
  {
    ImageVolume flat({24, 24, 24}, {2, 2, 2}, 0.5f);
    save_volume(const_target.string(), flat);
  }
  const int rc = run({"register", "--out", reg.string(), "--target", const_target.string(),
                      "--source", (p.data / "case_0_source.cdlv").string(), "--model",
                      (p.train / "model.json").string(), "--max_iters", "1"});
  CHECK((rc == 2 || rc == 3));
}

TEST_CASE("densitycheck emits the expected grid", "[cli_cmd]") {
  const auto dir = fresh_dir("density");
  REQUIRE(run({"densitycheck", "--out", dir.string(), "--n_samples", "20000"}) == 0);
  const CsvTable t = read_csv((dir / "density.csv").string());
  CHECK(t.header == std::vector<std::string>{"mu", "sigma", "act", "skew", "kurtosis",
                                             "ks_closed_form", "ks_gaussian"});
  CHECK(t.rows.size() == 24);  // 3 mu x 4 sigma x 2 activations
}

TEST_CASE("missing inputs exit with the io code", "[cli_cmd]") {
  const auto dir = fresh_dir("missing");
  CHECK(run({"train", "--out", dir.string(), "--manifest",
             (dir / "nope.csv").string()}) == 4);
}
