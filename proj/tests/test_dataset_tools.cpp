#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fluidanim/dataset_tools.hpp"
#include "support.hpp"

using namespace fluidanim;

namespace {

// Vertical stripes 0..regions-1 with their own constant flow.
FlowField piecewise_flow(int w, int h, const std::vector<Vec2>& flows) {
  FlowField f(w, h);
  const int n = static_cast<int>(flows.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) f.at(x, y) = flows[static_cast<std::size_t>(std::min(n - 1, x * n / w))];
  return f;
}

double mean_psnr(const std::vector<FlowField>& fields, int k) {
  std::vector<DatasetItem> items;
  for (std::size_t i = 0; i < fields.size(); ++i)
    items.push_back({"e" + std::to_string(i), FlowDatasetEntry{"e" + std::to_string(i), {}, fields[i], {}}, {}});
  const MetricReport r = evaluate_pipeline(items, k);
  EXPECT_EQ(r.failed, 0u);
  return r.mean_psnr;
}

}  // namespace

TEST(GenerateMask, UniformFlowKeepsEverything) {
  const GeneratedMask m = generate_mask(FlowField(7, 5, FlowKind::dense, {0.3, -0.7}), 1.0);
  EXPECT_TRUE(m.warning.empty());
  EXPECT_EQ(m.mask.count_nonzero(), 35u);
}

TEST(GenerateMask, SinglePixelAboveMean) {
  FlowField f(10, 10);
  f.at(6, 2) = {1.0, 0.0};
  const GeneratedMask m = generate_mask(f, 1.0);
  EXPECT_EQ(m.mask.count_nonzero(), 1u);
  EXPECT_EQ(m.mask.get(6, 2), 1.0f);
}

TEST(GenerateMask, ZeroFlowGivesEmptyMaskWithWarning) {
  const GeneratedMask m = generate_mask(FlowField(4, 4), kDefaultMaskFactor);
  EXPECT_EQ(m.mask.count_nonzero(), 0u);
  EXPECT_FALSE(m.warning.empty());
}

TEST(GenerateMask, ScaleInvariant) {
  std::mt19937_64 rng(1);
  const FlowField f = fa_test::random_flow(rng, 30, 20, 2.0);
  for (double m_factor : {kDefaultMaskFactor, 1.0, kLiteralMaskFactor * 0.2}) {
    const MaskMap base = generate_mask(f, m_factor).mask;
    for (double s : {0.5, 2.0, 8.0}) {
      const MaskMap scaled = generate_mask(scale(f, s), m_factor).mask;
      for (std::size_t i = 0; i < base.size(); ++i) EXPECT_EQ(base[i], scaled[i]);
    }
  }
}

TEST(GenerateMask, LiteralFactorKeepsOnlyOutliers) {
  FlowField f(10, 10, FlowKind::dense, {0.1, 0.0});
  f.at(0, 0) = {10.0, 0.0};
  EXPECT_EQ(generate_mask(f, kLiteralMaskFactor).mask.count_nonzero(), 1u);
  EXPECT_EQ(generate_mask(f, kDefaultMaskFactor).mask.count_nonzero(), 1u);
  EXPECT_EQ(generate_mask(FlowField(10, 10, FlowKind::dense, {0.1, 0.0}), kDefaultMaskFactor).mask.count_nonzero(), 100u);
}

TEST(ExtractHints, MaskOfExactlyKPixels) {
  std::mt19937_64 rng(2);
  const FlowField f = fa_test::random_flow(rng, 12, 12, 1.0);
  MaskMap mask(12, 12);
  const std::vector<std::pair<int, int>> px{{2, 3}, {9, 9}, {5, 6}};
  for (auto [x, y] : px) mask.set(x, y, 1.0f);
  const auto hints = extract_hints(f, mask, 3);
  std::set<std::pair<int, int>> got;
  for (const Hint& h : hints) {
    got.insert({static_cast<int>(h.start.x), static_cast<int>(h.start.y)});
    const Vec2 flow = h.flow();
    const Vec2 expect = f.at(static_cast<int>(h.start.x), static_cast<int>(h.start.y));
    EXPECT_NEAR(flow.x, expect.x, 1e-12);
    EXPECT_NEAR(flow.y, expect.y, 1e-12);
  }
  EXPECT_EQ(got, (std::set<std::pair<int, int>>(px.begin(), px.end())));
}

TEST(ExtractHints, TwoSeparatedBlobs) {
  FlowField f(40, 20);
  MaskMap mask(40, 20);
  for (int y = 5; y < 12; ++y)
    for (int x = 3; x < 10; ++x) {
      f.at(x, y) = {2.0, 0.0};
      mask.set(x, y, 1.0f);
    }
  for (int y = 8; y < 15; ++y)
    for (int x = 28; x < 35; ++x) {
      f.at(x, y) = {0.0, -1.5};
      mask.set(x, y, 1.0f);
    }
  const auto hints = extract_hints(f, mask, 2);
  ASSERT_EQ(hints.size(), 2u);
  int left = 0, right = 0;
  for (const Hint& h : hints) {
    if (h.start.x < 20) {
      ++left;
      EXPECT_EQ(h.flow(), (Vec2{2.0, 0.0}));
    } else {
      ++right;
      EXPECT_EQ(h.flow(), (Vec2{0.0, -1.5}));
    }
  }
  EXPECT_EQ(left, 1);
  EXPECT_EQ(right, 1);
}

TEST(ExtractHints, SingleClusterSitsAtCentroid) {
  const Vec2 u{0.8, 0.4};
  FlowField f(30, 30, FlowKind::dense, u);
  MaskMap mask(30, 30);
  for (int y = 4; y < 13; ++y)
    for (int x = 10; x < 21; ++x) mask.set(x, y, 1.0f);
  const auto hints = extract_hints(f, mask, 1);
  ASSERT_EQ(hints.size(), 1u);
  EXPECT_EQ(hints[0].start, (Vec2{15.0, 8.0}));
  EXPECT_NEAR(hints[0].flow().x, u.x, 1e-12);
  EXPECT_NEAR(hints[0].flow().y, u.y, 1e-12);
}

TEST(ExtractHints, DeterministicForFixedSeed) {
  std::mt19937_64 rng(3);
  const FlowField f = fa_test::random_flow(rng, 25, 25, 2.0);
  const MaskMap mask = generate_mask(f).mask;
  const auto a = extract_hints(f, mask, 5);
  const auto b = extract_hints(f, mask, 5);
  ASSERT_EQ(a.size(), 5u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].start, b[i].start);
    EXPECT_EQ(a[i].end, b[i].end);
    EXPECT_EQ(a[i].speed, b[i].speed);
  }
}

TEST(ExtractHints, EndpointsStayInsideImage) {
  FlowField f(10, 10, FlowKind::dense, {5.0, 0.0});
  const MaskMap mask(10, 10, 1.0f);
  for (int k : {1, 3, 5}) {
    const auto hints = extract_hints(f, mask, k);
    EXPECT_NO_THROW(validate_hints(hints, 10, 10));
    for (const Hint& h : hints) EXPECT_NEAR(h.flow().x, 5.0, 1e-9);
  }
}

TEST(ExtractHints, TooFewPixels) {
  MaskMap mask(5, 5);
  mask.set(1, 1, 1.0f);
  EXPECT_THROW(extract_hints(FlowField(5, 5), mask, 3), ValidationError);
}

TEST(Psnr, IdenticalIsCapped) {
  std::mt19937_64 rng(4);
  const FlowField f = fa_test::random_flow(rng, 8, 8, 2.0);
  EXPECT_EQ(flow_psnr(f, f), kPsnrCap);
  const ImageBuffer img = fa_test::random_image(rng, 8, 8);
  EXPECT_EQ(frame_psnr(img, img), kPsnrCap);
}

TEST(Psnr, OneGrayLevelEverywhere) {
  ImageBuffer a(16, 16, 3), b(16, 16, 3);
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    a.values()[i] = static_cast<float>((i % 200) / 255.0);
    b.values()[i] = static_cast<float>((i % 200 + 1) / 255.0);
  }
  EXPECT_NEAR(frame_psnr(a, b), 48.1308036086791, 1e-4);
}

TEST(Psnr, HalfThePixelsOffByTwo) {
  ImageBuffer a(10, 10, 1, 0.5f), b(10, 10, 1, 0.5f);
  for (std::size_t i = 0; i < 50; ++i) b.values()[i] = static_cast<float>(0.5 + 2.0 / 255.0);
  EXPECT_NEAR(frame_psnr(a, b), 45.12050365203929, 1e-4);
}

TEST(Psnr, FlowPsnrSymmetricWithJointPeak) {
  std::mt19937_64 rng(5);
  const FlowField a = fa_test::random_flow(rng, 9, 9, 1.0), b = fa_test::random_flow(rng, 9, 9, 3.0);
  EXPECT_EQ(flow_psnr(a, b), flow_psnr(b, a));
  const double peak = joint_flow_peak(a, b);
  EXPECT_DOUBLE_EQ(flow_psnr(a, b), 10.0 * std::log10(peak * peak / flow_mse(a, b)));
}

TEST(Psnr, EndpointError) {
  const FlowField a(2, 1), b(2, 1, FlowKind::dense, {3.0, 4.0});
  EXPECT_DOUBLE_EQ(endpoint_error(a, b), 5.0);
  EXPECT_DOUBLE_EQ(flow_mse(a, b), 12.5);
}

TEST(Evaluate, UniformEntryHitsSentinelWithOneHint) {
  const std::vector<FlowField> fields{FlowField(20, 12, FlowKind::dense, {1.25, -0.5})};
  EXPECT_EQ(mean_psnr(fields, 1), kPsnrCap);
}

TEST(Evaluate, MoreHintsHelpOnTwoRegions) {
  const std::vector<FlowField> fields{piecewise_flow(40, 24, {{2.0, 0.0}, {0.0, 1.5}})};
  EXPECT_GT(mean_psnr(fields, 3), mean_psnr(fields, 1));
}

TEST(Evaluate, EmptyDatasetRejected) {
  EXPECT_THROW(evaluate_pipeline(std::span<const DatasetItem>{}, 1), ValidationError);
}

TEST(Evaluate, FailedEntriesAreRecorded) {
  std::vector<DatasetItem> items;
  items.push_back({"good", FlowDatasetEntry{"good", {}, FlowField(8, 8, FlowKind::dense, {1, 0}), {}}, {}});
  items.push_back({"broken", std::nullopt, "bad magic"});
  items.push_back({"still", FlowDatasetEntry{"still", {}, FlowField(8, 8), {}}, {}});
  const MetricReport r = evaluate_pipeline(items, 1);
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_TRUE(r.rows[0].ok);
  EXPECT_FALSE(r.rows[1].ok);
  EXPECT_EQ(r.rows[1].error, "bad magic");
  EXPECT_FALSE(r.rows[2].ok);
  EXPECT_EQ(r.failed, 2u);
  EXPECT_EQ(r.mean_psnr, kPsnrCap);
  EXPECT_EQ(r.seed, HintExtractionOptions{}.seed);
}

TEST(Evaluate, WorkersDoNotChangeReport) {
  std::vector<FlowField> fields;
  for (int i = 0; i < 5; ++i) fields.push_back(piecewise_flow(30, 20, {{1.0 + i, 0.0}, {0.0, 1.0}, {-1.0, 0.5}}));
  std::vector<DatasetItem> items;
  for (std::size_t i = 0; i < fields.size(); ++i) items.push_back({"e", FlowDatasetEntry{"e", {}, fields[i], {}}, {}});
  EvaluationOptions par;
  par.workers = 3;
  const MetricReport a = evaluate_pipeline(items, 3), b = evaluate_pipeline(items, 3, par);
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].psnr, b.rows[i].psnr);
}
