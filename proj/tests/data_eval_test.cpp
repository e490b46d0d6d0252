#include "refseg/io.hpp"
#include "refseg/language.hpp"
#include "refseg/metrics.hpp"
#include "refseg/scene.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace refseg {
namespace {

namespace fs = std::filesystem;
using TF = Tensor<float>;

TF block_mask(Index h, Index w, Index y0, Index x0, Index bh, Index bw) {
  Buffer<float> v = Buffer<float>::Zero(h * w);
  for (Index y = y0; y < y0 + bh; ++y)
    for (Index x = x0; x < x0 + bw; ++x) v(y * w + x) = 1.0f;
  return TF({h, w}, std::move(v));
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("refseg_test_" + name);
  fs::remove_all(dir);
  return dir;
}

TEST(IouTest, Conventions) {
  const TF a = block_mask(6, 6, 1, 1, 2, 2);
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, block_mask(6, 6, 4, 4, 2, 2)), 0.0);
  EXPECT_EQ(iou(TF::zeros({6, 6}), TF::zeros({6, 6})), 1.0);
  EXPECT_EQ(iou(a, TF::zeros({6, 6})), 0.0);
  EXPECT_THROW(iou(a, TF::zeros({6, 5})), ShapeError);
}

TEST(IouTest, AdjacentBlocksShareAColumn) {
  const TF pred = block_mask(4, 4, 0, 0, 2, 2);
  const TF gt = block_mask(4, 4, 0, 1, 2, 2);
  EXPECT_DOUBLE_EQ(iou(pred, gt), 2.0 / 6.0);
}

TEST(IouTest, MatchesCountingOracle) {
  std::mt19937_64 rng(11);
  std::bernoulli_distribution bit(0.4);
  for (int n = 0; n < 50; ++n) {
    Buffer<float> a(64), b(64);
    int inter = 0, uni = 0;
    for (Index i = 0; i < 64; ++i) {
      a(i) = bit(rng) ? 1.0f : 0.0f;
      b(i) = bit(rng) ? 1.0f : 0.0f;
      inter += (a(i) > 0 && b(i) > 0);
      uni += (a(i) > 0 || b(i) > 0);
    }
    const double want = uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
    EXPECT_EQ(iou(TF({8, 8}, a), TF({8, 8}, b)), want);
  }
}

TEST(PrecisionTest, Examples) {
  EXPECT_EQ(prec_at({1.0, 1.0, 1.0}, 0.9), 1.0);
  EXPECT_EQ(prec_at({0.4, 0.6}, 0.5), 0.5);
  // Strictly greater.
  EXPECT_EQ(prec_at({0.5, 0.5}, 0.5), 0.0);
  EXPECT_THROW(prec_at({}, 0.5), std::invalid_argument);
}

TEST(PrecisionTest, MatchesCountingOracle) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> ious(137);
  for (auto& v : ious) v = u(rng);
  for (double x : kPrecisionThresholds) {
    const auto n = std::count_if(ious.begin(), ious.end(), [&](double v) { return v > x; });
    EXPECT_EQ(prec_at(ious, x), static_cast<double>(n) / ious.size());
  }
}

TEST(ReportTest, BucketsAndMonotonePrecision) {
  EXPECT_EQ(length_bucket(1), 0);
  EXPECT_EQ(length_bucket(5), 0);
  EXPECT_EQ(length_bucket(6), 1);
  EXPECT_EQ(length_bucket(10), 2);
  EXPECT_EQ(length_bucket(11), 3);
  EXPECT_EQ(length_bucket(20), 3);
  const auto r = make_report({0.95, 0.55, 0.72, 0.1}, {3, 6, 9, 9});
  EXPECT_EQ(r.count, 4);
  EXPECT_DOUBLE_EQ(r.mean_iou, (0.95 + 0.55 + 0.72 + 0.1) / 4);
  for (std::size_t i = 1; i < r.precision.size(); ++i) EXPECT_LE(r.precision[i], r.precision[i - 1]);
  EXPECT_EQ(r.buckets[2].count, 2);
  EXPECT_DOUBLE_EQ(r.buckets[2].mean_iou, 0.41);
  EXPECT_EQ(r.buckets[3].count, 0);
  EXPECT_NE(r.to_json().find("\"length_buckets\""), std::string::npos);
  EXPECT_NE(r.to_table().find("11-20"), std::string::npos);
}

TEST(ReportTest, OracleMasksScorePerfectly) {
  const auto r = make_report({1.0, 1.0, 1.0}, {2, 7, 12});
  EXPECT_EQ(r.mean_iou, 1.0);
  for (double p : r.precision) EXPECT_EQ(p, 1.0);
}

TEST(SceneTest, SingleShapeIsKindOnly) {
  SceneMeta meta;
  meta.objects.push_back({ShapeKind::triangle, Color::blue, SizeClass::large, 10, 10, 18});
  std::mt19937_64 rng(1);
  EXPECT_EQ(describe_target(meta, rng, SceneConfig{}), "triangle");
}

TEST(SceneTest, TwinShapesNeedSpatialWord) {
  SceneMeta meta;
  meta.objects.push_back({ShapeKind::circle, Color::red, SizeClass::small, 5, 30, 12});
  meta.objects.push_back({ShapeKind::circle, Color::red, SizeClass::small, 40, 30, 12});
  meta.target = 1;
  SceneConfig config;
  config.relation_prob = 0.0;
  std::mt19937_64 rng(2);
  const auto expr = describe_target(meta, rng, config);
  ASSERT_TRUE(expr.has_value());
  const std::set<std::string> spatial{"left", "right", "top", "bottom", "leftmost", "rightmost", "topmost",
                                      "bottommost"};
  const auto words = tokenize(*expr);
  EXPECT_TRUE(std::any_of(words.begin(), words.end(), [&](const std::string& w) { return spatial.contains(w); }))
      << *expr;
  EXPECT_EQ(resolve_expression(*expr, meta), std::vector<int>{1});
}

TEST(SceneTest, GeneratedExpressionsResolveUniquely) {
  const SceneConfig config;
  const auto samples = gen_samples(2024, 1000, config);
  for (const auto& s : samples) {
    ASSERT_EQ(resolve_expression(s.expression, s.meta), std::vector<int>{s.meta.target}) << s.expression;
    ASSERT_LE(static_cast<int>(tokenize(s.expression).size()), config.max_tokens);
    const int n = static_cast<int>(s.meta.objects.size());
    ASSERT_GE(n, config.min_shapes);
    ASSERT_LE(n, config.max_shapes);
    const TF want = render_mask(s.meta, s.meta.target);
    ASSERT_TRUE((s.mask.values() == want.values()).all());
    ASSERT_TRUE((s.image.values() >= 0.0f).all() && (s.image.values() <= 1.0f).all());
  }
}

TEST(SceneTest, BoundingBoxesDoNotOverlap) {
  for (const auto& s : gen_samples(7, 200, SceneConfig{})) {
    const auto& o = s.meta.objects;
    for (std::size_t i = 0; i < o.size(); ++i)
      for (std::size_t j = i + 1; j < o.size(); ++j) {
        const int ix = std::max(0, std::min(o[i].x0 + o[i].extent, o[j].x0 + o[j].extent) - std::max(o[i].x0, o[j].x0));
        const int iy = std::max(0, std::min(o[i].y0 + o[i].extent, o[j].y0 + o[j].extent) - std::max(o[i].y0, o[j].y0));
        EXPECT_EQ(ix * iy, 0);
      }
  }
}

TEST(SceneTest, SamplesAreReproducibleAlone) {
  const auto all = gen_samples(99, 6, SceneConfig{});
  const auto one = gen_samples(99, 1, SceneConfig{}, 0);
  EXPECT_EQ(one[0].expression, all[0].expression);
  EXPECT_TRUE((one[0].image.values() == all[0].image.values()).all());
}

TEST(SceneTest, LengthBucketsPopulated) {
  std::array<int, 4> counts{};
  for (const auto& s : gen_samples(5, 500, SceneConfig{})) {
    ++counts[static_cast<std::size_t>(length_bucket(static_cast<int>(tokenize(s.expression).size())))];
  }
  EXPECT_GT(counts[0], 0);
  EXPECT_GT(counts[1], 0);
  EXPECT_GT(counts[2], 0);
}

TEST(DatasetIoTest, RoundTrip) {
  const fs::path dir = scratch_dir("roundtrip");
  const auto samples = gen_samples(3, 10, SceneConfig{}, 40);
  write_dataset(dir, samples, {true});
  EXPECT_TRUE(fs::exists(dir / "previews"));
  const auto back = read_dataset(dir);
  ASSERT_EQ(back.size(), samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(back[i].id, samples[i].id);
    EXPECT_EQ(back[i].expression, samples[i].expression);
    EXPECT_TRUE((back[i].image.values() == samples[i].image.values()).all());
    EXPECT_TRUE((back[i].mask.values() == samples[i].mask.values()).all());
    EXPECT_EQ(back[i].meta.target, samples[i].meta.target);
    ASSERT_EQ(back[i].meta.objects.size(), samples[i].meta.objects.size());
    EXPECT_EQ(back[i].meta.objects[0].x0, samples[i].meta.objects[0].x0);
  }
  fs::remove_all(dir);
}

TEST(DatasetIoTest, CorruptTensorNamesSample) {
  const fs::path dir = scratch_dir("corrupt");
  const auto samples = gen_samples(4, 3, SceneConfig{}, 100);
  write_dataset(dir, samples);
  {
    std::fstream f(dir / "tensors" / "000101_image.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  try {
    read_dataset(dir);
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.sample_id(), 101);
    EXPECT_NE(std::string(e.what()).find("sample 101"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(DatasetIoTest, UnknownFieldWarnsOnce) {
  const fs::path dir = scratch_dir("unknown");
  write_dataset(dir, gen_samples(5, 3, SceneConfig{}));
  std::ifstream in(dir / kManifestName);
  std::stringstream patched;
  std::string line;
  while (std::getline(in, line)) patched << line.substr(0, line.size() - 1) << ",\"annotator\":\"x\"}\n";
  in.close();
  std::ofstream(dir / kManifestName) << patched.str();
  std::ostringstream warnings;
  const auto back = read_dataset(dir, &warnings);
  EXPECT_EQ(back.size(), 3u);
  const std::string w = warnings.str();
  EXPECT_NE(w.find("annotator"), std::string::npos);
  EXPECT_EQ(w.find("annotator"), w.rfind("annotator"));
  fs::remove_all(dir);
}

TEST(TensorIoTest, DoubleRoundTripAndTruncation) {
  std::stringstream ss;
  const Tensor<double> t = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6.5});
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  std::stringstream in(bytes);
  const auto back = read_tensor<double>(in);
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_TRUE((back.values() == t.values()).all());
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_tensor<double>(cut), FormatError);
}

}  // namespace
}  // namespace refseg
