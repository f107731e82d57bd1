// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when any
// criterion fails. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ap_fixtures.hpp"
#include "benthic/annotations.hpp"
#include "benthic/detector/dataset.hpp"
#include "benthic/evaluate.hpp"
#include "benthic/synthgen.hpp"
#include "benthic/tracker/byte.hpp"
#include "error_tables.hpp"
#include "reference_detector.hpp"
#include "tracking_fixtures.hpp"

using namespace benthic;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << std::fixed << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << v;
  return os.str();
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::vector<Example<float>> keyframe_examples(const SceneConfig& sc, std::uint64_t seq_seed, double withhold,
                                              std::uint64_t withhold_seed) {
  const auto seq = generate_sequence(sc, seq_seed);
  const auto part = emit_partial_training_set(seq, withhold, withhold_seed);
  return examples_from_keyframes<float>(part.keyframes, seq.intervals, sc.fps,
                                        [&](long f) { return seq.render(f); });
}

EvalSet<float> validation_frames(const SceneConfig& sc, std::uint64_t seed) {
  const auto seq = generate_sequence(sc, seed);
  const auto part = emit_partial_training_set(seq, 0.0, 1);
  std::vector<FrameGroundTruth> gt;
  for (const auto& g : part.eval_frames)
    if (g.frame % 15 == 0) gt.push_back(g);
  return eval_set_from_frames<float>(gt, [&](long f) { return seq.render(f); });
}

DetectorConfig scene_detector(int side) {
  DetectorConfig c;
  c.input_width = c.input_height = side;
  c.box_feature_dim = 128;
  c.anchor_sizes = {12, 24};
  c.lr = 1e-3;
  c.batch_size = 2;
  return c;
}

// ---- 1 --------------------------------------------------------------------------

Outcome error_tables() {
  const auto rows = fixtures::load_error_rows(std::string(BENTHIC_TEST_DATA) + "/counting_error_tables.csv");
  int filtered = 0, filtered_ok = 0, unfiltered = 0, unfiltered_within_display = 0;
  double worst = 0;
  std::string failures;
  for (const auto& r : rows) {
    const double m = mean_absolute(r.per_class);
    const double d = std::abs(m - r.printed_mean);
    if (r.gamma > 0) {
      ++filtered;
      worst = std::max(worst, d);
      if (d <= 0.005) ++filtered_ok;
      else failures += " " + r.table + "/" + r.split + "/g" + std::to_string(r.gamma) + "/t" + fmt(r.tau, 1);
    } else {
      ++unfiltered;
      unfiltered_within_display += d <= fixtures::display_half_unit(r.printed_mean_text) + 0.005;
    }
  }
  double val_row = -1;
  for (const auto& r : rows)
    if (r.table == "best" && r.split == "val" && r.gamma == 20 && r.tau == 0.5) val_row = mean_absolute(r.per_class);
  const bool ok = filtered > 0 && filtered_ok == filtered && std::abs(val_row - 0.4401) < 5e-5 &&
                  std::abs(val_row - 0.439) <= 0.005 && unfiltered_within_display == unfiltered;
  return {ok, std::to_string(filtered_ok) + "/" + std::to_string(filtered) + " filtered rows within 0.005 (worst " +
                  fmt(worst) + "), best val g20 t0.5 = " + fmt(val_row) + " vs 0.439; " +
                  std::to_string(unfiltered_within_display) + "/" + std::to_string(unfiltered) +
                  " unfiltered rows within display rounding" + failures};
}

// ---- 2 --------------------------------------------------------------------------

Outcome improvements() {
  const auto g = improvement_report(0.391, std::vector<double>{0.420, 0.439, 0.447});
  const double want[] = {7.4, 12.3, 14.3};
  bool ok = true;
  std::string d;
  for (int i = 0; i < 3; ++i) {
    ok = ok && std::abs(100 * g[i] - want[i]) <= 0.1;
    d += (i ? ", +" : "+") + fmt(100 * g[i], 2) + "%";
  }
  return {ok, d};
}

// ---- 3 --------------------------------------------------------------------------

Outcome baseline_reduction() {
  auto sc = SceneConfig::defaults();
  sc.width = sc.height = 96;
  sc.duration = 10;
  sc.species_rate.fill(0.3);
  for (auto& r : sc.size_range) r = {10, 20};
  const auto seq = generate_sequence(sc, 21);
  const auto part = emit_partial_training_set(seq, 0.0, 1);
  const auto examples = examples_from_keyframes<double>(part.keyframes, seq.intervals, sc.fps,
                                                        [&](long f) { return seq.render(f); });
  if (examples.size() < 2) return {false, "fixture has fewer than two annotated frames"};

  DetectorConfig cfg;
  cfg.input_width = cfg.input_height = 96;
  Detector<double> model(cfg);
  const long params = model.num_params(), expected = fixtures::vanilla_param_count(cfg);
  fixtures::ReferenceVanilla ref(model);

  std::mt19937_64 rng(4);
  double lib = 0, oracle = 0, worst_rel = 0;
  for (int i = 0; i < 2; ++i) {
    ImagePlan plan;
    const auto lb = model.loss(examples[i], rng, nullptr, 0.5, false, &plan);
    const auto r = ref.loss(fixtures::to_tensor(examples[i].pixels), plan);
    lib += 0.5 * lb.total;
    oracle += 0.5 * r.total();
    for (auto [a, b] : {std::pair{lb.l_p, r.l_p}, std::pair{lb.l_d, r.l_d}})
      worst_rel = std::max(worst_rel, std::abs(a - b) / std::max(std::abs(b), 1e-300));
  }
  const double rel = std::abs(lib - oracle) / std::abs(oracle);
  const bool ok = params == expected && !model.has_context_branch() && !model.has_global_branch() && rel <= 1e-6 &&
                  worst_rel <= 1e-6;
  return {ok, "params " + std::to_string(params) + " vs " + std::to_string(expected) + ", batch loss " +
                  fmt(lib, 6) + " vs " + fmt(oracle, 6) + " (rel " + sci(rel) + ")"};
}

// ---- 4 --------------------------------------------------------------------------

Outcome negative_dropping() {
  auto sc = SceneConfig::defaults();
  sc.width = sc.height = 64;
  sc.duration = 20;
  sc.species_rate.fill(0.3);
  for (auto& r : sc.size_range) r = {8, 16};
  const auto train = keyframe_examples(sc, 31, 0.0, 1);
  // rho = num / den, so the expected count is exact integer arithmetic.
  const std::vector<std::pair<long, long>> rhos{{0, 1}, {1, 2}, {3, 4}, {9, 10}, {1, 1}};
  long steps = 0, violations = 0, rho1_terms = 0;
  for (auto [num, den] : rhos) {
    DetectorConfig c;
    c.input_width = c.input_height = 64;
    c.backbone_channels = {8, 16};
    c.backbone_strides = {2, 2};
    c.backbone_kernels = {3, 3};
    c.rpn_channels = 16;
    c.box_feature_dim = 64;
    c.anchor_sizes = {8, 16};
    c.max_epochs = 2;
    c.rho = static_cast<double>(num) / static_cast<double>(den);
    TrainHooks hooks;
    hooks.on_image = [&](int, const LossBreakdown& lb) {
      ++steps;
      const long expect = (den - num) * lb.rpn_negative_sampled / den;
      if (lb.rpn_negative_kept != expect || lb.rpn_negative_terms != lb.rpn_negative_kept) ++violations;
      if (num == den) rho1_terms += lb.rpn_negative_terms;
    };
    train_detector<float>(c, train, EvalSet<float>{}, hooks);
  }
  return {steps > 0 && violations == 0 && rho1_terms == 0,
          std::to_string(steps) + " steps over 5 rho values, " + std::to_string(violations) +
              " count violations, " + std::to_string(rho1_terms) + " negative terms at rho=1"};
}

// ---- 5 --------------------------------------------------------------------------

Outcome dropping_effect() {
  auto sc = SceneConfig::defaults();
  sc.width = sc.height = 128;
  for (auto& r : sc.size_range) r = {12, 22};
  sc.duration = 60;
  sc.object_speed = 1.5;
  sc.species_rate.fill(0.25);
  std::vector<Example<float>> train;
  for (int v = 0; v < 3; ++v) {
    auto ex = keyframe_examples(sc, 100 + v, 0.5, 5 + v);
    std::move(ex.begin(), ex.end(), std::back_inserter(train));
  }
  const auto val = validation_frames(sc, 200);
  std::vector<double> with, without;
  for (std::uint64_t seed = 0; seed < 4; ++seed)
    for (double rho : {0.0, 0.75}) {
      auto c = scene_detector(128);
      c.max_epochs = 10;
      c.rho = rho;
      c.seed = seed;
      const auto r = train_detector<float>(c, train, val);
      (rho > 0 ? with : without).push_back(r.best_val_map);
    }
  std::string d = "mean val mAP rho=0.75 " + fmt(mean(with)) + " vs rho=0 " + fmt(mean(without)) + " (per seed:";
  for (std::size_t i = 0; i < with.size(); ++i) d += " " + fmt(with[i], 3) + "/" + fmt(without[i], 3);
  return {mean(with) > mean(without), d + ")"};
}

// ---- 6 --------------------------------------------------------------------------

SceneConfig ambiguity_scene() {
  auto sc = SceneConfig::defaults();
  sc.width = sc.height = 128;
  for (auto& r : sc.size_range) r = {12, 20};
  sc.duration = 90;
  sc.object_speed = 1.5;
  sc.species_rate.fill(0.06);
  sc.substrate_overlap_prob = 0;
  sc.substrate_segment_length = 15;
  sc.substrate_frequency = {0, 0, 1, 1};
  sc.halo = 16;
  sc.max_tilt = 50;
  sc.ambiguity_pairs = {{Species::WSSC, Species::WSpSC}};
  sc.species_rate[index(Species::WSSC)] = sc.species_rate[index(Species::WSpSC)] = 0.15;
  for (int s = 0; s < kNumSubstrates; ++s) {
    sc.species_substrate_prior[s][index(Species::WSSC)] = s == index(Substrate::Mud);
    sc.species_substrate_prior[s][index(Species::WSpSC)] = s == index(Substrate::Rock);
  }
  return sc;
}

/// Balanced accuracy of telling the pair apart on gt boxes of a held-out sequence.
double pair_accuracy(Detector<float>& model, const SceneConfig& sc, std::uint64_t seed) {
  auto tsc = sc;
  tsc.duration = 300;
  const auto seq = generate_sequence(tsc, seed);
  const int a = 1 + index(Species::WSSC), b = 1 + index(Species::WSpSC);
  long n[2] = {0, 0}, ok[2] = {0, 0};
  for (long f = 0; f < seq.num_frames; f += 10) {
    std::vector<Box> rois;
    std::vector<int> cls;
    for (const auto& lb : seq.boxes_at(f)) {
      if (lb.species != Species::WSSC && lb.species != Species::WSpSC) continue;
      if (lb.box.height() < 6) continue;  // slivers entering or leaving the frame
      rois.push_back(lb.box);
      cls.push_back(lb.species == Species::WSSC ? 0 : 1);
    }
    if (rois.empty()) continue;
    const auto p = model.classify_rois(to_input<float>(seq.render(f)), rois);
    for (std::size_t i = 0; i < rois.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const int pred = p(r, a) >= p(r, b) ? 0 : 1;
      ++n[cls[i]];
      ok[cls[i]] += pred == cls[i];
    }
  }
  if (n[0] == 0 || n[1] == 0) return 0;
  return 0.5 * (static_cast<double>(ok[0]) / n[0] + static_cast<double>(ok[1]) / n[1]);
}

Outcome context_separation() {
  const auto sc = ambiguity_scene();
  std::vector<double> cdd, vanilla;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    std::vector<Example<float>> train;
    for (int v = 0; v < 3; ++v) {
      auto ex = keyframe_examples(sc, 300 + v + 10 * seed, 0.0, 5 + v);
      std::move(ex.begin(), ex.end(), std::back_inserter(train));
    }
    const auto val = validation_frames(sc, 400 + seed);
    for (double beta : {0.01, 0.0}) {
      auto c = scene_detector(128);
      c.max_epochs = 12;
      c.beta = beta;
      c.seed = seed;
      auto r = train_detector<float>(c, train, val);
      (beta > 0 ? cdd : vanilla).push_back(pair_accuracy(*r.model, sc, 500 + seed));
    }
  }
  const bool ok = *std::min_element(cdd.begin(), cdd.end()) > 0.8 &&
                  *std::max_element(vanilla.begin(), vanilla.end()) <= 0.6;
  std::string d = "pair accuracy CDD(beta=0.01)/vanilla per seed:";
  for (std::size_t i = 0; i < cdd.size(); ++i) d += " " + fmt(cdd[i], 3) + "/" + fmt(vanilla[i], 3);
  return {ok, d};
}

// ---- 7 --------------------------------------------------------------------------

Outcome gradient_check() {
  DetectorConfig c;
  c.alpha = 0.5;
  c.beta = 0.5;
  c.rho = 0.5;
  c.input_width = c.input_height = 32;
  c.backbone_channels = {4, 4};
  c.backbone_strides = {2, 2};
  c.backbone_kernels = {3, 3};
  c.anchor_sizes = {8, 16};
  c.anchor_ratios = {0.5, 1.0};
  c.rpn_channels = 4;
  c.rpn_sample_size = 64;
  c.roi_pool_size = 2;
  c.roi_sample_size = 16;
  c.box_feature_dim = 16;
  c.global_feature_dim = 16;
  c.context_pos_weight = {1.0, 2.0, 0.5, 3.0};
  c.seed = 11;
  Detector<double> model(c);
  const long n_params = model.num_params();

  std::mt19937_64 rng(12);
  std::normal_distribution<double> normal(0, 1);
  Example<double> ex;
  ex.pixels = FeatureMap<double>(3, 32, 32);
  for (Eigen::Index i = 0; i < ex.pixels.data.size(); ++i) ex.pixels.data.data()[i] = normal(rng);
  ex.boxes = {{Species::GG, {4, 4, 20, 20}}, {Species::BS, {14, 10, 30, 28}}};
  ex.substrates = SubstrateSet("0101");

  ImagePlan plan;
  model.loss(ex, rng, nullptr, 1.0, false, &plan);
  const auto ps = model.params();
  nn::zero_grad(ps);
  model.loss(ex, rng, &plan, 1.0, true);
  std::vector<nn::Mat<double>> grads;
  for (auto* p : ps) grads.push_back(p->grad);

  const double h = 1e-5;
  double worst = 0;
  int nonzero = 0;
  for (int k = 0; k < 100; ++k) {
    const auto pi = std::uniform_int_distribution<std::size_t>(0, ps.size() - 1)(rng);
    auto* p = ps[pi];
    const auto idx = std::uniform_int_distribution<Eigen::Index>(0, p->value.size() - 1)(rng);
    double& w = p->value.data()[idx];
    const double saved = w;
    w = saved + h;
    const double up = model.loss(ex, rng, &plan, 1.0, false).total;
    w = saved - h;
    const double down = model.loss(ex, rng, &plan, 1.0, false).total;
    w = saved;
    const double numeric = (up - down) / (2 * h);
    const double analytic = grads[pi].data()[idx];
    nonzero += std::abs(analytic) > 1e-10;
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, rel);
  }
  return {n_params <= 10000 && worst < 1e-3,
          std::to_string(n_params) + " params, 100 coordinates (" + std::to_string(nonzero) +
              " non-zero), max relative error " + sci(worst)};
}

// ---- 8 --------------------------------------------------------------------------

Outcome tracking_oracle() {
  int exact = 0;
  std::string d;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto seq = generate_sequence(SceneConfig::defaults(), seed);
    std::vector<Detection> stream;
    for (long f = 0; f < seq.num_frames; ++f)
      for (const auto& b : seq.boxes_at(f)) stream.push_back({seq.video_id, f, b.species, b.box, 1.0});
    PipelineParams p;
    p.tau = 0;
    p.gamma = 1;
    auto tracks = run_pipeline(stream, p);
    const auto counts = count_cabof(tracks, seq.config.height);
    const auto ledger = cabof_totals(seq.cabofs);
    long total = 0;
    for (long c : ledger) total += c;
    exact += counts == ledger;
    d += " " + std::to_string(total);
  }

  std::mt19937_64 rng(8);
  const PipelineParams p;
  int checked = 0, agree = 0;
  for (int t = 0; t < 500; ++t) {
    const auto fx = fixtures::random_step_fixture(rng);
    TrackerState st;
    st.species = Species::GG;
    std::vector<Detection> f0, f1;
    for (const auto& b : fx.tracked) f0.push_back(fixtures::det(b, 0));
    for (const auto& b : fx.observed) f1.push_back(fixtures::det(b, 1));
    byte_step(st, 0, f0, p);
    std::array<std::array<double, 3>, 3> w{};
    for (int i = 0; i < 3; ++i) {
      const Box pred = from_xyah(kalman_predict(st.tracks[i].state, p.kalman).mean);
      for (int j = 0; j < 3; ++j) w[i][j] = iou(pred, fx.observed[j]);
    }
    const auto oracle = fixtures::brute_force_3x3(w, p.first_iou);
    if (oracle.value - oracle.runner_up < 1e-9) continue;  // tied optimum
    byte_step(st, 1, f1, p);
    std::vector<std::pair<int, int>> got;
    for (int i = 0; i < 3; ++i) {
      const auto& tr = st.tracks[i];
      if (tr.history.size() < 2) continue;
      for (int j = 0; j < 3; ++j)
        if (tr.history[1].box == fx.observed[j]) got.emplace_back(i, j);
    }
    ++checked;
    agree += got == oracle.pairs;
  }
  return {exact == 5 && checked > 0 && agree == checked,
          std::to_string(exact) + "/5 sequences exact (ledger totals" + d + "), " + std::to_string(agree) + "/" +
              std::to_string(checked) + " 3x3 fixtures match brute force"};
}

// ---- 9 --------------------------------------------------------------------------

Outcome ap_oracle() {
  const auto fx = fixtures::ap_fixtures();
  int ok = 0, zero_gt = 0, zero_det = 0;
  for (const auto& f : fx) {
    const auto ap = average_precision(f.images);
    bool match = ap.has_value() == f.expected.has_value() && (!ap || std::abs(*ap - *f.expected) < 1e-12);
    ok += match;
    bool any_gt = false, any_det = false;
    for (const auto& im : f.images) any_gt |= !im.ground_truth.empty(), any_det |= !im.detections.empty();
    zero_gt += !any_gt;
    zero_det += !any_det;
  }
  const Box a{0, 0, 10, 10}, b{5, 5, 15, 15};
  const bool exact = iou(a, b) == 25.0 / 175.0 && iou(b, a) == iou(a, b);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 50), s(0.1, 30);
  bool symmetric = true;
  for (int i = 0; i < 10000; ++i) {
    const double x = u(rng), y = u(rng), x2 = u(rng), y2 = u(rng);
    const Box p{x, y, x + s(rng), y + s(rng)}, q{x2, y2, x2 + s(rng), y2 + s(rng)};
    symmetric = symmetric && iou(p, q) == iou(q, p) && iou(p, p) == 1.0;
  }
  const bool pass = fx.size() >= 10 && ok == static_cast<int>(fx.size()) && zero_gt > 0 && zero_det > 0 && exact &&
                    symmetric;
  return {pass, std::to_string(ok) + "/" + std::to_string(fx.size()) + " fixtures (" + std::to_string(zero_gt) +
                    " zero-gt, " + std::to_string(zero_det) + " zero-detection), iou 25/175 " +
                    (exact ? "exact" : "inexact") + ", symmetry " + (symmetric ? "holds" : "violated")};
}

// ---- 10 -------------------------------------------------------------------------

Outcome cooccurrence() {
  // Fast-switching substrate timeline so a 10-minute video visits every
  // substrate combination the prior needs; small fast objects so thousands of
  // individuals fit without crowding.
  auto sc = SceneConfig::defaults();
  sc.duration = 600;
  sc.substrate_segment_length = 2;
  sc.substrate_overlap_prob = 0.7;
  sc.max_tilt = 20;
  sc.species_rate.fill(4.0);
  sc.object_speed = 16;
  for (auto& r : sc.size_range) r = {2, 4};
  double worst = 0;
  bool recount_ok = true;
  long min_n = 1L << 40;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto seq = generate_sequence(sc, seed);
    const auto va = seq.video_annotations();
    const auto t = cooccurrence_table(std::span<const VideoAnnotations>(&va, 1));
    std::array<std::array<long, kNumSpecies>, kNumSubstrates> num{};
    std::array<long, kNumSpecies> den{};
    for (const auto& c : seq.cabofs) {
      den[index(c.species)] += c.count;
      for (const auto& iv : seq.intervals)
        if (iv.begin <= c.at && c.at <= iv.end) num[index(iv.substrate)][index(c.species)] += c.count;
    }
    recount_ok = recount_ok && num == t.individuals && den == t.totals;
    for (int sp = 0; sp < kNumSpecies; ++sp) {
      min_n = std::min(min_n, t.totals[sp]);
      for (int s = 0; s < kNumSubstrates; ++s) {
        const auto f = t.fraction(substrate_at(s), species_at(sp));
        worst = std::max(worst, f ? std::abs(*f - sc.species_substrate_prior[s][sp]) : 1.0);
      }
    }
  }
  return {worst <= 0.05 && recount_ok,
          "3 ten-minute sequences, max |observed - prior| " + fmt(worst) + " (min " + std::to_string(min_n) +
              " individuals per species), brute-force recount " + (recount_ok ? "exact" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "error-table arithmetic", 1, error_tables},
      {2, "improvement arithmetic", 1, improvements},
      {3, "baseline reduction", 60, baseline_reduction},
      {4, "negative dropping invariants", 60, negative_dropping},
      {5, "negative dropping effect", 1800, dropping_effect},
      {6, "context separation", 1800, context_separation},
      {7, "gradient correctness", 300, gradient_check},
      {8, "tracking oracle", 120, tracking_oracle},
      {9, "AP oracle", 10, ap_oracle},
      {10, "co-occurrence consistency", 120, cooccurrence},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << "  criterion " << c.id << " (" << c.name << "): " << o.detail << " ["
              << fmt(secs, 2) << " s of " << c.budget_s << " s" << (in_time ? "" : ", over budget") << "]"
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
