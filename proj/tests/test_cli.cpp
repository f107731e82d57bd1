#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "benthic/detector/config.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "benthic_cli_test";

int run(const std::string& args, const std::string& tag) {
  const auto log = kRoot / (tag + ".log");
  const std::string cmd = std::string(BENTHIC_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(2); }

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);)
    if (!l.empty()) out.push_back(l);
  return out;
}

// Small profile: 64x64 frames, 20 s videos, one per split.
nlohmann::json profile() {
  return {{"scene",
           {{"width", 64},
            {"height", 64},
            {"duration", 20},
            {"species_rate", std::vector<double>(10, 0.2)},
            {"size_range", std::vector<std::vector<double>>(10, {8, 14})}}},
          {"train_videos", 1},
          {"val_videos", 1},
          {"test_videos", 1},
          {"withhold", 0.0}};
}

nlohmann::json tiny_detector() {
  return {{"input_width", 64},    {"input_height", 64},     {"backbone_channels", {4, 8}},
          {"backbone_strides", {2, 2}}, {"backbone_kernels", {3, 3}}, {"rpn_channels", 8},
          {"anchor_sizes", {8, 16}}, {"box_feature_dim", 32}, {"roi_pool_size", 2},
          {"max_epochs", 1}};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    write(kRoot / "profile.json", profile());
    ASSERT_EQ(run("--config " + (kRoot / "profile.json").string() + " --seed 5 --out " + (kRoot / "data").string() +
                      " gen",
                  "gen"),
              0)
        << slurp(kRoot / "gen.log");
  }
  static fs::path data() { return kRoot / "data"; }
};

std::map<std::string, std::uint64_t> checksums(const fs::path& root) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = benthic::fnv1a64(slurp(e.path()));
  return out;
}

}  // namespace

TEST_F(Cli, GenIsDeterministic) {
  ASSERT_EQ(run("--config " + (kRoot / "profile.json").string() + " --seed 5 --out " + (kRoot / "data2").string() +
                    " gen",
                "gen2"),
            0);
  const auto a = checksums(data()), b = checksums(kRoot / "data2");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, b);
  EXPECT_TRUE(fs::exists(data() / "dataset.json"));
}

TEST_F(Cli, PipelineWithMaximalThresholdCountsNothing) {
  const auto out = kRoot / "pipe_tau1";
  ASSERT_EQ(run("--out " + out.string() + " pipeline --data " + data().string() +
                    " --gt-detections --split test --tau 1 --gamma 0",
                "pipe_tau1"),
            0)
      << slurp(kRoot / "pipe_tau1.log");
  const auto counts = lines(slurp(out / "counts.csv"));
  ASSERT_EQ(counts.size(), 11u);
  long truth = 0;
  for (std::size_t i = 1; i < counts.size(); ++i) {
    std::stringstream ss(counts[i]);
    std::string name, pred, gt;
    std::getline(ss, name, ',');
    std::getline(ss, pred, ',');
    std::getline(ss, gt, ',');
    EXPECT_EQ(pred, "0") << counts[i];
    truth += std::stol(gt);
  }
  EXPECT_GT(truth, 0);
  const auto errors = slurp(out / "counting_errors.csv");
  EXPECT_NE(errors.find("-1"), std::string::npos);
}

TEST_F(Cli, PipelineOnGroundTruthIsExact) {
  const auto out = kRoot / "pipe_gt";
  ASSERT_EQ(run("--out " + out.string() + " pipeline --data " + data().string() +
                    " --gt-detections --split test --tau 0.5 --gamma 0",
                "pipe_gt"),
            0)
      << slurp(kRoot / "pipe_gt.log");
  for (const auto& l : lines(slurp(out / "counts.csv"))) {
    if (l.rfind("species", 0) == 0) continue;
    const auto a = l.find(','), b = l.rfind(',');
    EXPECT_EQ(l.substr(a + 1, b - a - 1), l.substr(b + 1)) << l;
  }
}

TEST_F(Cli, EvalOnGroundTruthBoxesIsPerfect) {
  const auto out = kRoot / "eval_gt";
  ASSERT_EQ(run("--out " + out.string() + " eval-det --data " + data().string() + " --gt-detections --split val",
                "eval_gt"),
            0)
      << slurp(kRoot / "eval_gt.log");
  const auto j = nlohmann::json::parse(slurp(out / "eval.json"));
  EXPECT_EQ(j.at("map50").get<double>(), 1.0);
  EXPECT_EQ(j.at("interpolation"), "all-points");
  EXPECT_EQ(slurp(out / "per_class_ap.csv").rfind("interpolation,", 0), 0u);
}

TEST_F(Cli, SweepRowsAndCacheReuse) {
  const auto out = kRoot / "sweep";
  write(kRoot / "grid1.json", {{"detector", tiny_detector()}, {"repeat", 1}, {"tau", {0.5}}, {"gamma", {0}}});
  ASSERT_EQ(run("--out " + out.string() + " --workers 2 sweep --data " + data().string() + " --grid " +
                    (kRoot / "grid1.json").string(),
                "sweep1"),
            0)
      << slurp(kRoot / "sweep1.log");
  EXPECT_EQ(lines(slurp(out / "sweep.csv")).size(), 2u);
  EXPECT_NE(slurp(kRoot / "sweep1.log").find("trained 1, reused 0"), std::string::npos) << slurp(kRoot / "sweep1.log");

  // Changing only the tracking grid must reuse the checkpoint and the cached detections.
  write(kRoot / "grid2.json",
        {{"detector", tiny_detector()}, {"repeat", 1}, {"tau", {0.3, 0.5}}, {"gamma", {0, 2}}});
  ASSERT_EQ(run("--out " + out.string() + " --workers 2 sweep --data " + data().string() + " --grid " +
                    (kRoot / "grid2.json").string(),
                "sweep2"),
            0)
      << slurp(kRoot / "sweep2.log");
  EXPECT_EQ(lines(slurp(out / "sweep.csv")).size(), 5u);
  const auto log = slurp(kRoot / "sweep2.log");
  EXPECT_NE(log.find("trained 0, reused 1"), std::string::npos) << log;
  EXPECT_NE(log.find("inferred 0 videos"), std::string::npos) << log;
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("", "no_sub"), 1);
  EXPECT_EQ(run("pipeline --data " + data().string() + " --tau 2", "bad_tau"), 1);
  EXPECT_EQ(run("eval-det --data " + (kRoot / "missing").string() + " --gt-detections", "missing"), 2);
  write(kRoot / "bad.json", {{"detector", {{"rho", 3}}}});
  EXPECT_EQ(run("--config " + (kRoot / "bad.json").string() + " train-detector --data " + data().string(), "bad_rho"),
            2);
  EXPECT_EQ(run("--help", "help"), 0);
}
