#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "mac/data.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("mac_cli_" + std::to_string(::getpid()) + "_" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  RunResult run(const std::string& args, const std::string& env = "") {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = "cd '" + dir_.string() + "' && " + env + " '" + MAC_CLI_PATH + "' " + args + " > '" +
                            out.string() + "' 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  // Synthetic suite plus its preprocessed directory.
  void prepare(const std::string& synth_args = "--samples 80", std::uint64_t seed = 3) {
    const auto s = run("synth --out s --seed " + std::to_string(seed) + " " + synth_args);
    ASSERT_EQ(s.code, 0) << s.err;
    const auto p = run("preprocess --schema s/schema.json --input s/data.csv --out p --seed " + std::to_string(seed));
    ASSERT_EQ(p.code, 0) << p.err;
  }

  fs::path path(const std::string& rel) const { return dir_ / rel; }
  mac::Json json(const std::string& rel) const { return mac::read_json_file(dir_ / rel); }

  fs::path dir_;
};

const std::string kTiny = " --embed-dim 8 -N 2 -L 1 -H 2 ";

}  // namespace

TEST_F(Cli, NoSubcommandIsUsageError) {
  const auto r = run("");
  EXPECT_NE(r.code, 0);
  const auto h = run("--help");
  EXPECT_EQ(h.code, 0);
  EXPECT_NE(h.out.find("export-attention"), std::string::npos);
}

TEST_F(Cli, PreprocessWritesSplitsAndLogsRemovals) {
  ASSERT_EQ(run("synth --out s --samples 100 --seed 4").code, 0);
  // Append one absurd score so the cleaner has something to remove.
  std::string csv = slurp(path("s/data.csv"));
  std::istringstream lines(csv);
  std::string header, first;
  std::getline(lines, header);
  std::getline(lines, first);
  const auto cells = mac::csv::split_record(first);
  std::string outlier;
  for (std::size_t i = 0; i + 1 < cells.size(); ++i) outlier += mac::csv::quote(cells[i]) + ",";
  outlier += "100000\n";
  std::ofstream(path("s/data.csv"), std::ios::app) << outlier;

  const auto r = run("preprocess --schema s/schema.json --input s/data.csv --out p --seed 1");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto removed = json("p/removed.json");
  ASSERT_EQ(removed["removed"].size(), 1u);
  EXPECT_EQ(removed["removed"][0]["row"], 101);
  EXPECT_NE(r.out.find("removed row 101"), std::string::npos);
  for (const char* f : {"train.csv", "validation.csv", "test.csv", "transform.json", "run_config.json",
                        "train.encoded.json"}) {
    EXPECT_TRUE(fs::exists(path(std::string("p/") + f))) << f;
  }
  // 100 kept rows: test 20, validation 16, train 64.
  EXPECT_NE(r.out.find("64/16/20"), std::string::npos) << r.out;

  const auto none = run("preprocess --schema s/schema.json --input s/data.csv --out q --seed 1 --z-threshold 1e9");
  ASSERT_EQ(none.code, 0) << none.err;
  EXPECT_TRUE(json("q/removed.json")["removed"].empty());
}

TEST_F(Cli, SameSeedGivesByteIdenticalOutputs) {
  ASSERT_EQ(run("synth --out s --samples 60 --seed 9").code, 0);
  for (const char* out : {"a", "b"}) {
    ASSERT_EQ(run(std::string("preprocess --schema s/schema.json --input s/data.csv --seed 2 --out ") + out).code, 0);
    ASSERT_EQ(run(std::string("train --data a --epochs 2 --seed 5") + kTiny + "--out t" + out).code, 0);
  }
  for (const char* f : {"train.csv", "validation.csv", "test.csv", "transform.json", "removed.json"}) {
    EXPECT_EQ(slurp(path(std::string("a/") + f)), slurp(path(std::string("b/") + f))) << f;
  }
  EXPECT_EQ(slurp(path("ta/checkpoint.json")), slurp(path("tb/checkpoint.json")));
  EXPECT_EQ(slurp(path("ta/history.json")), slurp(path("tb/history.json")));
}

TEST_F(Cli, SchemaMismatchNamesColumn) {
  const std::string data = MAC_TEST_DATA_DIR;
  const auto r =
      run("preprocess --schema " + data + "/small_schema.json --input " + data + "/missing_column.csv --out p");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("base_ghz"), std::string::npos) << r.err;
  const auto bad = run("preprocess --schema " + data + "/small_schema.json --input " + data + "/bad_cell.csv --out p");
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.err.find("cores"), std::string::npos) << bad.err;
}

TEST_F(Cli, TrainEvaluatePredict) {
  prepare();
  const auto t = run("train --data p --out t --epochs 3 --seed 1" + kTiny);
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_NE(t.out.find("MAPE"), std::string::npos);
  for (const char* f : {"checkpoint.json", "history.json", "metrics_test.json", "run_config.json"}) {
    EXPECT_TRUE(fs::exists(path(std::string("t/") + f))) << f;
  }
  EXPECT_EQ(json("t/history.json")["epochs"].size(), 3u);
  const auto rc = json("t/run_config.json");
  EXPECT_EQ(rc["command"], "train");
  EXPECT_EQ(rc["model"]["embed_dim"], 8);
  EXPECT_EQ(rc["train"]["epochs"], 3);

  const auto e1 = run("evaluate --checkpoint t/checkpoint.json --data p");
  const auto e2 = run("evaluate --checkpoint t/checkpoint.json --data p");
  ASSERT_EQ(e1.code, 0) << e1.err;
  EXPECT_EQ(e1.out, e2.out);
  EXPECT_NE(e1.out.find("MedianSE"), std::string::npos);
  EXPECT_NE(e1.out.find("SE p95"), std::string::npos);
  // evaluate agrees with the test metrics recorded by train.
  ASSERT_EQ(run("evaluate --checkpoint t/checkpoint.json --data p --out e").code, 0);
  EXPECT_EQ(json("e/metrics_test.json"), json("t/metrics_test.json"));

  const auto missing = run("evaluate --checkpoint nowhere.json --data p");
  EXPECT_NE(missing.code, 0);
  EXPECT_NE(missing.err.find("checkpoint"), std::string::npos);

  // Predict on a copy of the test split with the output column removed.
  std::istringstream in(slurp(path("p/test.csv")));
  std::ofstream stripped(path("unlabeled.csv"));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    stripped << line.substr(0, line.rfind(',')) << "\n";
    ++rows;
  }
  stripped.close();
  const auto pr = run("predict --checkpoint t/checkpoint.json --input unlabeled.csv --out pr");
  ASSERT_EQ(pr.code, 0) << pr.err;
  const std::string preds = slurp(path("pr/predictions.csv"));
  EXPECT_EQ(preds.substr(0, preds.find('\n')), "row,score_0_pred");
  EXPECT_EQ(static_cast<std::size_t>(std::count(preds.begin(), preds.end(), '\n')), rows);

  const auto labeled = run("predict --checkpoint t/checkpoint.json --input p/test.csv --out pl");
  ASSERT_EQ(labeled.code, 0) << labeled.err;
  EXPECT_NE(labeled.out.find("MAE"), std::string::npos);
}

TEST_F(Cli, CrossValidationWritesFiveFoldsAndAverage) {
  prepare();
  const auto r = run("cv --data p --out c --epochs 1 --seed 2" + kTiny);
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t reports = 0;
  for (const auto& e : fs::directory_iterator(path("c"))) {
    const auto name = e.path().filename().string();
    if (name.rfind("fold_", 0) == 0) ++reports;
  }
  EXPECT_EQ(reports, 5u);
  EXPECT_TRUE(fs::exists(path("c/average.json")));
  EXPECT_TRUE(fs::exists(path("c/run_config.json")));
}

TEST_F(Cli, ExportAttentionShapesAndRowSums) {
  prepare("--samples 60");
  ASSERT_EQ(run("train --data p --out t --epochs 1 --seed 1 --embed-dim 8 -N 2 -L 2 -H 2").code, 0);
  const auto r = run("export-attention --checkpoint t/checkpoint.json --data p --sample 1 --out x --csv");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto doc = json("x/attention.json");
  std::size_t cpu = 0, inter = 0;
  for (const auto& m : doc["matrices"]) {
    const auto& rows = m["matrix"];
    if (m["group"] == "CPU") {
      ++cpu;
      EXPECT_EQ(rows.size(), 20u);
    }
    if (m["group"] == "inter") {
      ++inter;
      EXPECT_EQ(rows.size(), 4u);
    }
    for (const auto& row : rows) {
      EXPECT_EQ(row.size(), rows.size());
      double sum = 0.0;
      for (double v : row) {
        EXPECT_GE(v, 0.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
  }
  EXPECT_EQ(cpu, 4u);  // 2 layers × 2 heads
  EXPECT_EQ(inter, 4u);
  EXPECT_TRUE(fs::exists(path("x/intra_CPU_l1_h1.csv")));
  EXPECT_TRUE(fs::exists(path("x/inter_l0_h0.csv")));

  const auto range = run("export-attention --checkpoint t/checkpoint.json --data p --sample 9999 --out y");
  EXPECT_NE(range.code, 0);

  // A CSV with a different feature set is rejected.
  const std::string data = MAC_TEST_DATA_DIR;
  const auto wrong = run("export-attention --checkpoint t/checkpoint.json --input " + data + "/small.csv --out z");
  EXPECT_NE(wrong.code, 0);
}

TEST_F(Cli, AblationVariants) {
  prepare("--samples 60");
  const auto bad = run("ablate --data p --out a --variant w/o-gpu");
  EXPECT_NE(bad.code, 0);
  for (const char* v : {"mamba-only", "mamba+intra", "w/o-char", "w/o-mem", "w/o-cpu", "w/o-other"}) {
    EXPECT_NE(bad.err.find(v), std::string::npos) << v;
  }
  const auto r = run("ablate --data p --out a --epochs 1 --variant all --seed 1" + kTiny);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = json("a/ablation.json")["rows"];
  ASSERT_EQ(rows.size(), 7u);
  std::map<std::string, std::size_t> params;
  for (const auto& row : rows) params[row["variant"]] = row["parameters"];
  EXPECT_LT(params["mamba-only"], params["full"]);
  EXPECT_LT(params["mamba+intra"], params["full"]);
  EXPECT_LT(params["w/o-cpu"], params["full"]);
}

TEST_F(Cli, DroppingSilentCpuGroupCostsLittle) {
  // The target ignores every CPU feature, so losing that group should not
  // cost more than a factor of two in MAPE.
  prepare("--samples 200 --silent CPU --noise 0.2");
  const auto r = run("ablate --data p --out a --epochs 15 --lr 0.003 --variant w/o-cpu --seed 4" + kTiny);
  ASSERT_EQ(r.code, 0) << r.err;
  double full = 0, without = 0;
  const auto doc = json("a/ablation.json");
  for (const auto& row : doc["rows"]) {
    const double mape = row["test"]["aggregate"]["mape"];
    (row["variant"] == "full" ? full : without) = mape;
  }
  EXPECT_GT(full, 0.0);
  EXPECT_LT(without, 2.0 * full);
}

TEST_F(Cli, BaselinesAndSweep) {
  prepare();
  const auto b = run("baseline --data p --out b --kind all");
  ASSERT_EQ(b.code, 0) << b.err;
  for (const char* k : {"ridge", "lasso", "elasticnet"}) {
    const auto doc = json(std::string("b/baseline_") + k + ".json");
    EXPECT_EQ(doc["grid"].size(), 7u);
    EXPECT_TRUE(doc["test"]["aggregate"]["mae"].is_number());
  }
  const auto fixed = run("baseline --data p --out f --kind ridge --lambda 0.5");
  ASSERT_EQ(fixed.code, 0);
  EXPECT_EQ(json("f/baseline_ridge.json")["lambda"], 0.5);

  const auto s = run("sweep --data p --out w --epochs 1 --grid \"H=1,3;delta=0.1,10\" --seed 1 --embed-dim 8 -N 2 -L 1");
  ASSERT_EQ(s.code, 0) << s.err;
  const auto rows = json("w/sweep.json")["rows"];
  ASSERT_EQ(rows.size(), 4u);
  std::size_t skipped = 0;
  for (const auto& row : rows) skipped += row.contains("skipped");
  EXPECT_EQ(skipped, 2u);  // 8 is not divisible by 3
  EXPECT_NE(run("sweep --data p --out w --grid \"Q=1\"").code, 0);
}

TEST_F(Cli, SeedFallbackAndConfigOverride) {
  prepare("--samples 60");
  ASSERT_EQ(run("train --data p --out a --epochs 2 --seed 7" + kTiny).code, 0);
  ASSERT_EQ(run("train --data p --out b --epochs 2" + kTiny, "MAC_SEED=7").code, 0);
  EXPECT_EQ(slurp(path("a/checkpoint.json")), slurp(path("b/checkpoint.json")));
  EXPECT_EQ(json("b/run_config.json")["seed"], 7);
  EXPECT_NE(run("train --data p --out c --epochs 1" + kTiny, "MAC_SEED=seven").code, 0);

  std::ofstream(path("cfg.json")) << R"({"seed": 7, "train": {"epochs": 3}, "model": {"attn_heads": 4}})";
  ASSERT_EQ(run("train --data p --out d --epochs 1 --seed 1 --config cfg.json" + kTiny).code, 0);
  EXPECT_EQ(json("d/history.json")["epochs"].size(), 3u);
  const auto rc = json("d/run_config.json");
  EXPECT_EQ(rc["seed"], 7);
  EXPECT_EQ(rc["model"]["attn_heads"], 4);
  EXPECT_EQ(rc["model"]["embed_dim"], 8);
}
