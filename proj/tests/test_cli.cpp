#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "roadseq/cli.hpp"
#include "support/tmpdir.hpp"

namespace fs = std::filesystem;
using roadseq::cli::run_cli;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  EXPECT_TRUE(in.good()) << "missing file: " << p;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Small but non-degenerate run: two attributes, a few hundred segments,
// narrow models. Keeps the whole pipeline under a few seconds.
std::string tiny_config() {
  return R"({
  "seed": 7,
  "generator": {
    "num_sections": 6,
    "segments_per_section": 40,
    "h": 2, "w": 2, "c_f": 3,
    "noise_std": 0.1,
    "leakage_decay": 0.0,
    "split_fractions": [0.5, 0.25, 0.25],
    "attributes": [
      {"name": "evt", "kind": "single_peak", "classes": ["none", "hit"],
       "default_class": 0, "event_rate": 0.15},
      {"name": "zone", "kind": "smooth", "classes": ["a", "b", "c"],
       "stay_prob": 0.9, "prior": [0.5, 0.3, 0.2]}
    ]
  },
  "local_model": {"spp_grids": [2, 1], "frames": "single", "head_hidden": 8},
  "seq_model": {"half_window": 2, "num_layers": 1, "hidden": 6},
  "train_local": {"lr": 0.01, "epochs": 2, "batch_size": 8, "loss": "recall-mt"},
  "train_seq": {"lr": 0.01, "epochs": 1, "batch_size": 16, "loss": "recall-mt"}
})";
}

TEST(Cli, FullPipelineRoundTrip) {
  const fs::path dir = roadseq::testing::fresh_dir("cli_pipeline");
  const auto cfg = dir / "run.json";
  write_file(cfg, tiny_config());

  ASSERT_EQ(0, run_cli({"generate", "--config", cfg.string(), "--out",
                        (dir / "data").string()}));
  ASSERT_TRUE(fs::exists(dir / "data" / "manifest.json"));
  ASSERT_TRUE(fs::exists(dir / "data" / "records.jsonl"));
  ASSERT_TRUE(fs::exists(dir / "data" / "features.bin"));

  const auto manifest = (dir / "data" / "manifest.json").string();
  ASSERT_EQ(0, run_cli({"train-local", "--config", cfg.string(), "--dataset",
                        manifest, "--out", (dir / "local").string()}));
  ASSERT_TRUE(fs::exists(dir / "local" / "local.sqap"));
  ASSERT_TRUE(fs::exists(dir / "local" / "local.json"));
  ASSERT_TRUE(fs::exists(dir / "local" / "train.log"));
  ASSERT_TRUE(fs::exists(dir / "local" / "stream.jsonl"));
  const auto arch = nlohmann::json::parse(read_file(dir / "local" / "local.json"));
  EXPECT_EQ(arch.at("h").get<int>(), 2);
  EXPECT_EQ(arch.at("c_f").get<int>(), 3);
  EXPECT_EQ(arch.at("frames").get<std::string>(), "single");

  ASSERT_EQ(0, run_cli({"train-seq", "--config", cfg.string(), "--dataset",
                        manifest, "--stream", (dir / "local" / "stream.jsonl").string(),
                        "--out", (dir / "seq").string()}));
  ASSERT_TRUE(fs::exists(dir / "seq" / "seq_evt.sqap"));
  ASSERT_TRUE(fs::exists(dir / "seq" / "seq_zone.sqap"));
  ASSERT_TRUE(fs::exists(dir / "seq" / "stream.jsonl"));

  // Merged stream keeps the canonical section -> index -> attribute order
  // and carries the enhancer stage tag.
  {
    const auto recs =
        roadseq::stream::read_stream((dir / "seq" / "stream.jsonl").string());
    ASSERT_EQ(recs.size(), 6u * 40u * 2u);
    EXPECT_EQ(recs[0].attribute, "evt");
    EXPECT_EQ(recs[1].attribute, "zone");
    EXPECT_EQ(recs[0].index, recs[1].index);
    for (const auto& r : recs) EXPECT_EQ(r.stage, "seq");
  }

  ASSERT_EQ(0, run_cli({"eval", "--dataset", manifest, "--stream",
                        (dir / "seq" / "stream.jsonl").string(), "--split",
                        "test", "--out", (dir / "eval").string()}));
  const auto report = nlohmann::json::parse(read_file(dir / "eval" / "report.json"));
  ASSERT_EQ(report.at("attributes").size(), 2u);
  EXPECT_TRUE(report.contains("mean_macro_f1"));
  EXPECT_TRUE(fs::exists(dir / "eval" / "report.txt"));
  EXPECT_TRUE(fs::exists(dir / "eval" / "cooc_evt_gt.csv"));
  EXPECT_TRUE(fs::exists(dir / "eval" / "gt_stream.jsonl"));

  ASSERT_EQ(0, run_cli({"analyze", "--dataset", manifest, "--gt",
                        (dir / "eval" / "gt_stream.jsonl").string(), "--pred",
                        (dir / "seq" / "stream.jsonl").string(), "--out",
                        (dir / "diag").string()}));
  const auto diag =
      nlohmann::json::parse(read_file(dir / "diag" / "diagnostics.json"));
  ASSERT_EQ(diag.at("attributes").size(), 2u);
  bool saw_peak = false, saw_smooth = false;
  for (const auto& a : diag.at("attributes")) {
    if (a.at("name") == "evt") {
      saw_peak = a.contains("duplicated_peak_mass");
    } else if (a.at("name") == "zone") {
      saw_smooth = a.contains("spurious_transition_excess");
    }
  }
  EXPECT_TRUE(saw_peak);
  EXPECT_TRUE(saw_smooth);
}

TEST(Cli, GenerateIsByteIdenticalAcrossReruns) {
  const fs::path dir = roadseq::testing::fresh_dir("cli_regen");
  const auto cfg = dir / "run.json";
  write_file(cfg, tiny_config());
  ASSERT_EQ(0, run_cli({"generate", "--config", cfg.string(), "--out",
                        (dir / "a").string()}));
  ASSERT_EQ(0, run_cli({"generate", "--config", cfg.string(), "--out",
                        (dir / "b").string()}));
  for (const char* name : {"manifest.json", "records.jsonl", "features.bin"})
    EXPECT_EQ(read_file(dir / "a" / name), read_file(dir / "b" / name))
        << name;
}

TEST(Cli, SeedFlagOverridesConfig) {
  const fs::path dir = roadseq::testing::fresh_dir("cli_seed");
  const auto cfg = dir / "run.json";
  write_file(cfg, tiny_config());
  ASSERT_EQ(0, run_cli({"generate", "--config", cfg.string(), "--out",
                        (dir / "a").string(), "--seed", "7"}));
  ASSERT_EQ(0, run_cli({"generate", "--config", cfg.string(), "--out",
                        (dir / "b").string(), "--seed", "8"}));
  ASSERT_EQ(0, run_cli({"generate", "--config", cfg.string(), "--out",
                        (dir / "c").string()}));
  // Explicit --seed 7 matches the config seed; --seed 8 diverges.
  EXPECT_EQ(read_file(dir / "a" / "records.jsonl"),
            read_file(dir / "c" / "records.jsonl"));
  EXPECT_NE(read_file(dir / "a" / "records.jsonl"),
            read_file(dir / "b" / "records.jsonl"));
}

TEST(Cli, TrainSeqAttrFilterTrainsOnlyThatAttribute) {
  const fs::path dir = roadseq::testing::fresh_dir("cli_attr_filter");
  const auto cfg = dir / "run.json";
  write_file(cfg, tiny_config());
  ASSERT_EQ(0, run_cli({"generate", "--config", cfg.string(), "--out",
                        (dir / "data").string()}));
  const auto manifest = (dir / "data" / "manifest.json").string();
  ASSERT_EQ(0, run_cli({"train-local", "--config", cfg.string(), "--dataset",
                        manifest, "--out", (dir / "local").string(),
                        "--epochs", "1"}));
  ASSERT_EQ(0, run_cli({"train-seq", "--config", cfg.string(), "--dataset",
                        manifest, "--stream",
                        (dir / "local" / "stream.jsonl").string(), "--out",
                        (dir / "seq").string(), "--attr", "zone"}));
  EXPECT_TRUE(fs::exists(dir / "seq" / "seq_zone.sqap"));
  EXPECT_FALSE(fs::exists(dir / "seq" / "seq_evt.sqap"));
  const auto recs =
      roadseq::stream::read_stream((dir / "seq" / "stream.jsonl").string());
  for (const auto& r : recs) EXPECT_EQ(r.attribute, "zone");
  EXPECT_EQ(recs.size(), 6u * 40u);

  // Eval on a single-attribute stream reports just that attribute.
  ASSERT_EQ(0, run_cli({"eval", "--dataset", manifest, "--stream",
                        (dir / "seq" / "stream.jsonl").string(), "--out",
                        (dir / "eval").string()}));
  const auto report = nlohmann::json::parse(read_file(dir / "eval" / "report.json"));
  ASSERT_EQ(report.at("attributes").size(), 1u);
  EXPECT_EQ(report.at("attributes")[0].at("name"), "zone");
}

TEST(Cli, ValidationFailuresExitOne) {
  const fs::path dir = roadseq::testing::fresh_dir("cli_errors");
  // Missing dataset file.
  EXPECT_EQ(1, run_cli({"train-local", "--dataset",
                        (dir / "nope" / "manifest.json").string(), "--out",
                        (dir / "out").string()}));
  // Config that fails generator validation.
  const auto bad = dir / "bad.json";
  write_file(bad, R"({"generator": {"attributes": [
    {"name": "evt", "kind": "single_peak", "classes": ["none", "hit"],
     "default_class": 0, "event_rate": 0.9}]}})");
  EXPECT_EQ(1, run_cli({"generate", "--config", bad.string(), "--out",
                        (dir / "out").string()}));
  // Malformed JSON.
  const auto broken = dir / "broken.json";
  write_file(broken, "{not json");
  EXPECT_EQ(1, run_cli({"generate", "--config", broken.string(), "--out",
                        (dir / "out").string()}));
  // Unknown subcommand is a parse error, reported by the CLI layer.
  EXPECT_NE(0, run_cli({"frobnicate"}));
}

TEST(Cli, LossAndEpochOverridesReachTraining) {
  const fs::path dir = roadseq::testing::fresh_dir("cli_overrides");
  const auto cfg = dir / "run.json";
  write_file(cfg, tiny_config());
  ASSERT_EQ(0, run_cli({"generate", "--config", cfg.string(), "--out",
                        (dir / "data").string()}));
  const auto manifest = (dir / "data" / "manifest.json").string();
  ASSERT_EQ(0, run_cli({"train-local", "--config", cfg.string(), "--dataset",
                        manifest, "--out", (dir / "local").string(), "--loss",
                        "ce", "--epochs", "1", "--lr", "0.005"}));
  const auto log = read_file(dir / "local" / "train.log");
  EXPECT_NE(log.find("stage=local epoch=1"), std::string::npos);
  EXPECT_EQ(log.find("epoch=2"), std::string::npos);
  EXPECT_NE(log.find("lr=5.00000000e-03"), std::string::npos);
  // CE mode weights are uniform: every logged class weight is 1.
  EXPECT_NE(log.find("w=1.00000000e+00"), std::string::npos);
  EXPECT_EQ(log.find("w=1.00010000e+01"), std::string::npos);
}

}  // namespace
