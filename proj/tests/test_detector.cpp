#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>

#include "benthic/detector/boxes.hpp"
#include "benthic/detector/dataset.hpp"
#include "benthic/detector/train.hpp"
#include "benthic/synthgen.hpp"
#include "reference_detector.hpp"

using namespace benthic;

namespace {

DetectorConfig tiny(double alpha = 0, double beta = 0, double rho = 0) {
  DetectorConfig c;
  c.alpha = alpha;
  c.beta = beta;
  c.rho = rho;
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
  c.seed = 3;
  return c;
}

Example<double> toy_example(std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  Example<double> ex;
  ex.pixels = FeatureMap<double>(3, 32, 32);
  for (Eigen::Index i = 0; i < ex.pixels.data.size(); ++i) ex.pixels.data.data()[i] = n(rng);
  ex.boxes = {{Species::GG, {4, 4, 20, 20}}, {Species::BS, {14, 10, 30, 28}}};
  ex.substrates = SubstrateSet("0101");
  return ex;
}

}  // namespace

TEST(NegativeDropping, KeepsFloorOfRemainingFraction) {
  std::mt19937_64 rng(1);
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  EXPECT_EQ(nrd_filter(v, 0.75, rng).size(), 25u);
  EXPECT_EQ(nrd_filter(v, 0.9, rng).size(), 10u);
  EXPECT_EQ(nrd_filter(v, 0.0, rng), v);
  EXPECT_TRUE(nrd_filter(v, 1.0, rng).empty());
  EXPECT_THROW(nrd_filter(v, 1.5, rng), DataError);
}

TEST(NegativeDropping, MatchesExactRationalFloor) {
  std::mt19937_64 rng(2);
  for (int n = 0; n <= 200; n += 7)
    for (int k = 0; k <= 20; ++k) {
      std::vector<int> v(n);
      std::iota(v.begin(), v.end(), 0);
      const auto kept = nrd_filter(v, k / 20.0, rng);
      ASSERT_EQ(static_cast<long>(kept.size()), (20L - k) * n / 20) << "n=" << n << " k=" << k;
      ASSERT_TRUE(std::is_sorted(kept.begin(), kept.end()));
      ASSERT_EQ(std::adjacent_find(kept.begin(), kept.end()), kept.end());
    }
}

TEST(ContextBranch, ZeroLayerGivesBias) {
  Detector<double> m(tiny(0.5));
  auto& layer = m.context_layer();
  layer.weight().value.setZero();
  layer.bias().value << 0.1, -0.2, 0.3, -0.4;
  const auto [c, h, w] = m.feature_shape();
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1);
  FeatureMap<double> f(c, h, w);
  for (Eigen::Index i = 0; i < f.data.size(); ++i) f.data.data()[i] = n(rng);
  const auto z = m.context_logits(f);
  ASSERT_EQ(z.rows(), 1);
  ASSERT_EQ(z.cols(), 4);
  for (int s = 0; s < 4; ++s) EXPECT_DOUBLE_EQ(z(0, s), layer.bias().value(0, s));

  // And with a live layer, a zero feature map still yields the bias.
  Detector<double> m2(tiny(0.5));
  const auto z0 = m2.context_logits(FeatureMap<double>(c, h, w));
  for (int s = 0; s < 4; ++s) EXPECT_DOUBLE_EQ(z0(0, s), m2.context_layer().bias().value(0, s));

  Detector<double> off(tiny(0));
  EXPECT_FALSE(off.has_context_branch());
  EXPECT_THROW(off.context_logits(f), DataError);
}

TEST(ContextBranch, BinaryCrossEntropyClosedForm) {
  EXPECT_NEAR(detail::bce_logits(0, 1), std::log(2.0), 1e-15);
  EXPECT_NEAR(detail::bce_logits(2, 0), std::log(1 + std::exp(2.0)), 1e-12);
  EXPECT_NEAR(detail::bce_logits(-3, 1), std::log(1 + std::exp(3.0)), 1e-12);
  // Two samples, p = sigmoid(1): -(log p + log(1 - p)) / 2.
  const double p = 1 / (1 + std::exp(-1.0));
  EXPECT_NEAR(0.5 * (detail::bce_logits(1, 1) + detail::bce_logits(1, 0)),
              -0.5 * (std::log(p) + std::log(1 - p)), 1e-12);
  EXPECT_TRUE(std::isfinite(detail::bce_logits(800, 0)));
}

TEST(GlobalReduction, MatchesSlidingWindow) {
  const long N = 48;
  const int D = 6, K = 8;
  nn::Conv1dReduce<double> layer("g", N, D, false);
  ASSERT_EQ(layer.kernel(), K);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 1);
  for (int k = 0; k < K; ++k) layer.weight().value(0, k) = n(rng);
  nn::Mat<double> x(1, N), y(1, N);
  for (long i = 0; i < N; ++i) x(0, i) = n(rng), y(0, i) = n(rng);

  const auto out = layer.forward(x);
  ASSERT_EQ(out.cols(), D);
  for (int d = 0; d < D; ++d) {
    double s = 0;
    for (int k = 0; k < K; ++k) s += layer.weight().value(0, k) * x(0, d * K + k);
    EXPECT_NEAR(out(0, d), s, 1e-12);
  }
  // Bias-free reduction is linear.
  const auto lin = layer.forward(2.0 * x + y);
  const auto expect = (2.0 * layer.forward(x) + layer.forward(y)).eval();
  for (int d = 0; d < D; ++d) EXPECT_NEAR(lin(0, d), expect(0, d), 1e-12);

  EXPECT_THROW(nn::Conv1dReduce<double>("g", 50, 6), DataError);
}

TEST(GlobalReduction, FuseScalesAndConcatenates) {
  nn::Mat<double> box(3, 2), g(1, 2);
  box << 1, 2, 3, 4, 5, 6;
  g << 10, -20;
  EXPECT_EQ(Detector<double>::fuse_global(box, g, 0), box);
  const auto one = Detector<double>::fuse_global(box, g, 1);
  ASSERT_EQ(one.cols(), 4);
  for (int r = 0; r < 3; ++r) {
    EXPECT_EQ(one(r, 0), box(r, 0));
    EXPECT_EQ(one(r, 2), 10);
    EXPECT_EQ(one(r, 3), -20);
  }
  const auto small = Detector<double>::fuse_global(box, g, 0.01);
  EXPECT_DOUBLE_EQ(small(2, 2), 0.1);
  EXPECT_DOUBLE_EQ(small(2, 3), -0.2);
}

TEST(DetectorModel, HeadWidthFollowsBeta) {
  EXPECT_EQ(Detector<double>(tiny()).box_head_input_width(), 16);
  auto c = tiny(0, 0.5);
  c.global_feature_dim = 32;
  Detector<double> m(c);
  EXPECT_EQ(m.box_head_input_width(), 16 + 32);
  EXPECT_TRUE(m.has_global_branch());
  const auto [ch, h, w] = m.feature_shape();
  EXPECT_EQ(m.global_layer().kernel(), ch * h * w / 32);
}

TEST(DetectorModel, RejectsWrongFrameSize) {
  Detector<double> m(tiny());
  EXPECT_THROW(m.backbone_forward(FeatureMap<double>(3, 40, 32)), DataError);
  auto ex = toy_example();
  ex.pixels = FeatureMap<double>(3, 32, 31);
  std::mt19937_64 rng(1);
  EXPECT_THROW(m.loss(ex, rng), DataError);
}

TEST(DetectorLoss, TotalIsWeightedSum) {
  const auto ex = toy_example();
  Detector<double> plain(tiny(0)), ctx(tiny(1e-4));
  std::mt19937_64 r1(9);
  ImagePlan plan;
  const auto a = plain.loss(ex, r1, nullptr, 1.0, false, &plan);
  EXPECT_DOUBLE_EQ(a.total, a.l_d + a.l_p);
  EXPECT_EQ(a.l_c, 0.0);

  // Shared weights are initialised identically, so only the context term differs.
  std::mt19937_64 r2(9);
  const auto b = ctx.loss(ex, r2, &plan, 1.0, false);
  EXPECT_DOUBLE_EQ(b.l_d, a.l_d);
  EXPECT_DOUBLE_EQ(b.l_p, a.l_p);
  EXPECT_GT(b.l_c, 0);
  EXPECT_NEAR(b.total - a.total, 1e-4 * b.l_c, 1e-15);

  Detector<double> ctx2(tiny(2e-4));
  const auto c = ctx2.loss(ex, r2, &plan, 1.0, false);
  EXPECT_NEAR(c.total - a.total, 2e-4 * c.l_c, 1e-15);
}

TEST(DetectorLoss, ContextNeedsLabels) {
  auto ex = toy_example();
  ex.substrates.reset();
  Detector<double> m(tiny(0.1));
  std::mt19937_64 rng(1);
  EXPECT_THROW(m.loss(ex, rng), DataError);
}

TEST(DetectorLoss, DroppingAllNegativesLeavesNoTerms) {
  const auto ex = toy_example();
  for (double rho : {0.0, 0.5, 1.0}) {
    Detector<double> m(tiny(0, 0, rho));
    std::mt19937_64 rng(2);
    const auto lb = m.loss(ex, rng, nullptr, 1.0, false);
    EXPECT_GT(lb.rpn_positive, 0);
    EXPECT_GT(lb.rpn_negative_sampled, 0);
    EXPECT_EQ(lb.rpn_negative_terms,
              static_cast<long>(std::floor((1 - rho) * static_cast<double>(lb.rpn_negative_sampled) + 1e-9)));
    if (rho == 1.0) EXPECT_EQ(lb.rpn_negative_terms, 0);
    if (rho == 0.0) EXPECT_EQ(lb.rpn_negative_terms, lb.rpn_negative_sampled);
  }
}

TEST(DetectorLoss, Deterministic) {
  const auto ex = toy_example();
  Detector<double> a(tiny(0.2, 0.1, 0.5)), b(tiny(0.2, 0.1, 0.5));
  std::mt19937_64 r1(7), r2(7);
  const auto la = a.loss(ex, r1), lb = b.loss(ex, r2);
  EXPECT_EQ(la.total, lb.total);
  EXPECT_EQ(la.rpn_negative_kept, lb.rpn_negative_kept);
}

TEST(Baseline, ZeroSettingsReduceToPlainDetector) {
  const auto cfg = tiny();
  Detector<double> m(cfg);
  EXPECT_FALSE(m.has_context_branch());
  EXPECT_FALSE(m.has_global_branch());
  EXPECT_EQ(m.num_params(), fixtures::vanilla_param_count(cfg));

  fixtures::ReferenceVanilla ref(m);
  for (std::uint64_t s : {1u, 2u, 3u}) {
    const auto ex = toy_example(s);
    std::mt19937_64 rng(s);
    ImagePlan plan;
    const auto lb = m.loss(ex, rng, nullptr, 1.0, false, &plan);
    ASSERT_FALSE(plan.rois.empty());
    const auto r = ref.loss(fixtures::to_tensor(ex.pixels), plan);
    EXPECT_NEAR(lb.l_p, r.l_p, 1e-9);
    EXPECT_NEAR(lb.l_d, r.l_d, 1e-9);
    EXPECT_NEAR(lb.total, r.total(), 1e-9);
  }
}

TEST(Records, DetectionJsonRoundTrip) {
  const Detection d{"vid-1", 42, Species::WSpSC, {1.5, 2, 30.25, 40}, 0.875};
  EXPECT_EQ(detection_from_json(to_json(d)), d);
  auto bad = to_json(d);
  bad["score"] = 1.5;
  EXPECT_THROW(detection_from_json(bad), DataError);
}

TEST(Inference, BlankFramesYieldNoDetections) {
  auto c = tiny();
  c.score_thresh = 0.5;
  Detector<double> m(c);
  // An untrained head spreads probability over eleven classes.
  EXPECT_TRUE(m.detect(FeatureMap<double>(3, 32, 32), "v", 0).empty());
  EvalSet<double> empty;
  EXPECT_TRUE(detect_all(m, empty).empty());
}

TEST(Inference, DetectionsSortedByScore) {
  auto c = tiny();
  c.score_thresh = 0.0;
  Detector<double> m(c);
  const auto d = m.detect(toy_example().pixels, "v", 3);
  for (std::size_t i = 1; i < d.size(); ++i) EXPECT_GE(d[i - 1].score, d[i].score);
  for (const auto& x : d) {
    EXPECT_EQ(x.frame, 3);
    EXPECT_TRUE(x.box.valid());
  }
}

TEST(Checkpoint, RoundTripPreservesOutputs) {
  const auto path = (std::filesystem::temp_directory_path() / "benthic_ckpt_test.bin").string();
  Detector<double> m(tiny(0.1, 0.2));
  save_checkpoint(path, m);
  std::string hash;
  auto back = load_checkpoint<double>(path, &hash);
  EXPECT_EQ(hash, config_hash(m.config()));
  const auto ex = toy_example();
  std::mt19937_64 r1(1), r2(1);
  EXPECT_EQ(m.loss(ex, r1, nullptr, 1, false).total, back->loss(ex, r2, nullptr, 1, false).total);
  std::remove(path.c_str());
  EXPECT_THROW(load_checkpoint<double>(path), DataError);
}

TEST(DetectorConfigJson, RejectsUnknownKeys) {
  EXPECT_THROW(detector_config_from_json({{"alpah", 1}}), DataError);
  const auto c = detector_config_from_json({{"alpha", 0.25}, {"rho", 0.5}});
  EXPECT_EQ(c.alpha, 0.25);
  EXPECT_EQ(c.rho, 0.5);
  EXPECT_THROW(detector_config_from_json({{"rho", 2}}), DataError);
}

TEST(Dataset, KeyframesBecomeExamples) {
  auto sc = SceneConfig::defaults();
  sc.width = sc.height = 64;
  sc.duration = 20;
  sc.species_rate.fill(0.3);
  for (auto& r : sc.size_range) r = {8, 14};
  const auto seq = generate_sequence(sc, 2);
  const auto p = emit_partial_training_set(seq, 0.0, 1);
  ASSERT_FALSE(p.keyframes.empty());
  const auto ex = examples_from_keyframes<float>(p.keyframes, seq.intervals, seq.config.fps,
                                                 [&](long f) { return seq.render(f); });
  std::size_t boxes = 0;
  for (const auto& e : ex) {
    boxes += e.boxes.size();
    EXPECT_EQ(e.pixels.width, 64);
    ASSERT_TRUE(e.substrates);
  }
  EXPECT_EQ(boxes, p.keyframes.size());
}
