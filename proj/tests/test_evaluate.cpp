#include <gtest/gtest.h>

#include <random>

#include "ap_fixtures.hpp"
#include "benthic/evaluate.hpp"
#include "error_tables.hpp"

using namespace benthic;

TEST(Iou, GeometricFixtures) {
  const Box a{0, 0, 10, 10}, b{5, 5, 15, 15};
  EXPECT_DOUBLE_EQ(iou(a, b), 25.0 / 175.0);
  EXPECT_NEAR(iou(a, b), 0.142857, 1e-6);
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, Box{20, 20, 30, 30}), 0.0);
  EXPECT_EQ(iou(a, Box{10, 0, 20, 10}), 0.0);  // shared edge only
  EXPECT_THROW(iou(a, Box{3, 3, 3, 9}), DataError);
}

TEST(Iou, Symmetric) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 50), s(0.1, 30);
  for (int i = 0; i < 1000; ++i) {
    const Box a{u(rng), u(rng), 0, 0}, b{u(rng), u(rng), 0, 0};
    const Box A{a.x1, a.y1, a.x1 + s(rng), a.y1 + s(rng)}, B{b.x1, b.y1, b.x1 + s(rng), b.y1 + s(rng)};
    ASSERT_EQ(iou(A, B), iou(B, A));
    ASSERT_EQ(iou(A, A), 1.0);
    ASSERT_GE(iou(A, B), 0.0);
    ASSERT_LE(iou(A, B), 1.0);
  }
}

TEST(AveragePrecision, HandEnumeratedFixtures) {
  const auto fx = fixtures::ap_fixtures();
  ASSERT_GE(fx.size(), 10u);
  for (const auto& f : fx) {
    const auto ap = average_precision(f.images);
    SCOPED_TRACE(f.name);
    ASSERT_EQ(ap.has_value(), f.expected.has_value());
    if (ap) EXPECT_NEAR(*ap, *f.expected, 1e-12);
  }
}

TEST(AveragePrecision, RankedHitsTieOrderIsStable) {
  // Equal scores keep input order: TP then FP gives 1.0, FP then TP 0.5.
  EXPECT_EQ(average_precision_ranked({{0.5, true}, {0.5, false}}, 1), 1.0);
  EXPECT_EQ(average_precision_ranked({{0.5, false}, {0.5, true}}, 1), 0.5);
  EXPECT_FALSE(average_precision_ranked({{0.5, false}}, 0));
}

TEST(AveragePrecision, Monotonicity) {
  std::mt19937_64 rng(9);
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<RankedHit> hits;
    long tp = 0;
    const int n = 1 + static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) {
      hits.push_back({u(rng), coin(rng)});
      tp += hits.back().true_positive;
    }
    const long gt = tp + static_cast<long>(rng() % 4) + 1;
    const double base = *average_precision_ranked(hits, gt);

    auto top = hits;
    top.push_back({2.0, true});
    EXPECT_GE(*average_precision_ranked(top, gt + 1), base - 1e-12);
    auto bottom = hits;
    bottom.push_back({-1.0, false});
    EXPECT_LE(*average_precision_ranked(bottom, gt), base + 1e-12);
  }
}

namespace {

FrameGroundTruth frame(std::string video, long f, std::vector<LabeledBox> boxes) {
  return {std::move(video), f, 100, 100, std::move(boxes), true};
}

}  // namespace

TEST(MapBottomHalf, TopHalfDetectionsAreDiscarded) {
  const std::vector<FrameGroundTruth> frames{frame("v", 0, {{Species::GG, {10, 60, 30, 80}}})};
  std::vector<Detection> dets{{"v", 0, Species::GG, {10, 60, 30, 80}, 0.5},
                              {"v", 0, Species::GG, {10, 5, 30, 25}, 0.9},
                              {"v", 0, Species::GG, {50, 10, 70, 49.9}, 0.8}};
  const auto e = map_bottom_half(dets, frames);
  EXPECT_EQ(e.discarded_detections, 2);
  EXPECT_EQ(e.map50, 1.0);
  EXPECT_EQ(e.classes_present, 1);
}

TEST(MapBottomHalf, StraddlingDetectionIsKept) {
  const std::vector<FrameGroundTruth> frames{frame("v", 0, {{Species::BS, {10, 60, 30, 80}}})};
  // Straddles the midline and overlaps nothing: a retained false positive.
  std::vector<Detection> dets{{"v", 0, Species::BS, {60, 40, 80, 60}, 0.9},
                              {"v", 0, Species::BS, {10, 60, 30, 80}, 0.5}};
  const auto e = map_bottom_half(dets, frames);
  EXPECT_EQ(e.discarded_detections, 0);
  EXPECT_DOUBLE_EQ(e.map50, 0.5);
}

TEST(MapBottomHalf, RejectsUnflaggedFrames) {
  auto f = frame("v", 0, {});
  f.fully_annotated_bottom_half = false;
  EXPECT_THROW(map_bottom_half({}, std::vector<FrameGroundTruth>{f}), DataError);
}

TEST(MapBottomHalf, EqualsFilterThenAverage) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> pos(0, 85), sz(5, 15), sc(0, 1);
  std::uniform_int_distribution<int> sp(0, 3);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<FrameGroundTruth> frames;
    std::vector<Detection> dets;
    for (long f = 0; f < 4; ++f) {
      std::vector<LabeledBox> gts;
      for (int k = 0; k < 3; ++k) {
        const double x = pos(rng), y = 50 + 0.4 * pos(rng);
        gts.push_back({species_at(sp(rng)), {x, y, x + sz(rng), y + sz(rng)}});
      }
      for (const auto& g : gts) {
        const double j = sc(rng) * 6;
        dets.push_back({"v", f, g.species, {g.box.x1 + j, g.box.y1, g.box.x2 + j, g.box.y2}, sc(rng)});
      }
      for (int k = 0; k < 4; ++k) {
        const double x = pos(rng), y = pos(rng);
        dets.push_back({"v", f, species_at(sp(rng)), {x, y, x + sz(rng), y + sz(rng)}, sc(rng)});
      }
      frames.push_back(frame("v", f, gts));
    }
    const auto e = map_bottom_half(dets, frames);

    double sum = 0;
    int present = 0;
    for (int c = 0; c < 4; ++c) {
      std::vector<ImageInstances> imgs(frames.size());
      for (std::size_t i = 0; i < frames.size(); ++i) {
        for (const auto& g : frames[i].boxes)
          if (index(g.species) == c) imgs[i].ground_truth.push_back(g.box);
        for (const auto& d : dets)
          if (d.frame == frames[i].frame && index(d.species) == c && d.box.y2 >= 50) {
            imgs[i].detections.push_back(d.box);
            imgs[i].scores.push_back(d.score);
          }
      }
      const auto ap = average_precision(imgs);
      ASSERT_EQ(ap.has_value(), e.per_class_ap[c].has_value());
      if (ap) {
        EXPECT_DOUBLE_EQ(*ap, *e.per_class_ap[c]);
        sum += *ap;
        ++present;
      }
    }
    EXPECT_DOUBLE_EQ(e.map50, sum / present);
  }
}

TEST(SubstrateAp, ThresholdFree) {
  const std::vector<std::array<double, kNumSubstrates>> scores{{0.9, 0.1, 0.5, 0.2}, {0.2, 0.8, 0.4, 0.1}};
  const std::vector<SubstrateSet> labels{SubstrateSet("0001"), SubstrateSet("0010")};
  const auto e = substrate_ap(scores, labels);
  EXPECT_EQ(e.per_class_ap[0], 1.0);
  EXPECT_EQ(e.per_class_ap[1], 1.0);
  EXPECT_FALSE(e.per_class_ap[2]);
  EXPECT_EQ(e.map, 1.0);
}

TEST(RelativeErrors, Basics) {
  std::array<long, kNumSpecies> pred{}, gt{};
  pred.fill(9);
  gt.fill(10);
  gt[3] = 0;
  const auto e = relative_errors(pred, gt);
  EXPECT_DOUBLE_EQ(*e.per_species[0], -0.1);
  EXPECT_FALSE(e.per_species[3]);
  ASSERT_EQ(e.excluded.size(), 1u);
  EXPECT_EQ(e.excluded[0], Species::LLS);
  EXPECT_NEAR(e.mean_abs, 0.1, 1e-12);

  const auto same = relative_errors(gt, gt);
  EXPECT_EQ(same.mean_abs, 0.0);
}

TEST(RelativeErrors, PublishedValidationRow) {
  const std::vector<double> row{-0.18, -0.091, -0.34, 1.13, -0.11, -0.50, -0.90, -0.88, -0.27, 0.00};
  EXPECT_NEAR(mean_absolute(row), 0.4401, 1e-12);
  EXPECT_NEAR(mean_absolute(row), 0.439, 0.005);
}

TEST(RelativeErrors, PublishedTablesWithinDisplayRounding) {
  const auto rows = fixtures::load_error_rows(std::string(BENTHIC_TEST_DATA) + "/counting_error_tables.csv");
  EXPECT_EQ(rows.size(), 58u);
  for (const auto& r : rows) {
    const double m = mean_absolute(r.per_class);
    SCOPED_TRACE(r.table + " " + r.split + " gamma=" + std::to_string(r.gamma) + " tau=" + std::to_string(r.tau));
    if (r.gamma > 0)
      EXPECT_NEAR(m, r.printed_mean, 0.005);
    else
      EXPECT_NEAR(m, r.printed_mean, fixtures::display_half_unit(r.printed_mean_text) + 0.005);
  }
}

TEST(Improvement, PublishedGains) {
  const std::vector<double> v{0.420, 0.439, 0.447};
  const auto g = improvement_report(0.391, v);
  EXPECT_NEAR(100 * g[0], 7.42, 0.01);
  EXPECT_NEAR(100 * g[1], 12.28, 0.01);
  EXPECT_NEAR(100 * g[2], 14.32, 0.01);
  EXPECT_THROW(improvement_report(0.0, v), DataError);
}

TEST(Reports, TableHeaders) {
  DetectionEval e;
  e.per_class_ap[0] = 0.5;
  const auto csv = per_class_ap_csv(e);
  EXPECT_EQ(csv.rfind("interpolation,", 0), 0u);
  EXPECT_NE(csv.find("all-points"), std::string::npos);
  EXPECT_EQ(substrate_table_csv({}).rfind("method,val mAP,test mAP,B,C,M,R,test_wv mAP", 0), 0u);
}
