#include "refseg/calibrate.hpp"
#include "refseg/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace refseg {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("refseg_train_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SceneConfig small_scenes() {
  SceneConfig c;
  c.canvas = 32;
  c.small_min = 5;
  c.small_max = 6;
  c.large_min = 8;
  c.large_max = 10;
  return c;
}

template <typename T>
Checkpoint<T> fresh(const std::vector<Sample>& data, int max_iters) {
  std::vector<std::string> corpus;
  for (const auto& s : data) corpus.push_back(s.expression);
  Checkpoint<T> c;
  c.vocab = Vocabulary::build(corpus);
  c.dims = ModelDims::toy();
  c.dims.vocab_size = c.vocab.size();
  c.train.max_iters = max_iters;
  c.train.profile = "toy";
  c.train.eval_every = 5;
  c.train.checkpoint_every = 0;
  c.train.seed = 3;
  c.params = ModelParams<T>::init(c.dims, c.train.seed);
  return c;
}

TEST(PolyLrTest, Examples) {
  TrainConfig c;
  EXPECT_EQ(poly_lr(0, c), 0.00025);
  EXPECT_EQ(poly_lr(c.max_iters, c), 0.0);
  EXPECT_NEAR(poly_lr(c.max_iters / 2, c), 0.00025 * std::pow(0.5, 0.9), 1e-18);
  EXPECT_NEAR(poly_lr(c.max_iters / 2, c), 1.3397e-4, 1e-8);
  EXPECT_THROW(poly_lr(c.max_iters + 1, c), std::out_of_range);
  c.max_iters = 0;
  EXPECT_THROW(poly_lr(0, c), std::invalid_argument);
}

TEST(AdamTest, ZeroGradientNoDecayIsIdentity) {
  std::vector<Tensor<double>> params{Tensor<double>::from({3}, {1.0, -2.0, 0.5})};
  const std::vector<Tensor<double>> grads{Tensor<double>::zeros({3})};
  const std::vector<std::string> names{"w"};
  auto state = AdamState<double>::zeros_like(params);
  AdamHyper h;
  h.weight_decay = 0.0;
  adam_step<double>(params, grads, names, state, 0.01, h);
  EXPECT_EQ(params[0][0], 1.0);
  EXPECT_EQ(params[0][1], -2.0);
  EXPECT_EQ(state.t, 1);
}

TEST(AdamTest, FirstStepMovesByLr) {
  std::vector<Tensor<double>> params{Tensor<double>::from({2}, {0.3, -0.7})};
  const std::vector<Tensor<double>> grads{Tensor<double>::constant({2}, 1.0)};
  const std::vector<std::string> names{"w"};
  auto state = AdamState<double>::zeros_like(params);
  AdamHyper h;
  h.weight_decay = 0.0;
  const double lr = 0.00025;
  adam_step<double>(params, grads, names, state, lr, h);
  EXPECT_NEAR(params[0][0], 0.3 - lr / (1.0 + 1e-8), 1e-17);
  EXPECT_NEAR(params[0][1], -0.7 - lr, 1e-11);
}

TEST(AdamTest, TwoStepsMatchRecurrences) {
  const double g = 0.4, w0 = 1.5, lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8, decay = 0.0005;
  std::vector<Tensor<double>> params{Tensor<double>::from({1}, {w0})};
  const std::vector<Tensor<double>> grads{Tensor<double>::from({1}, {g})};
  const std::vector<std::string> names{"w"};
  auto state = AdamState<double>::zeros_like(params);
  double w = w0, m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    adam_step<double>(params, grads, names, state, lr, AdamHyper{});
    const double gt = g + decay * w;
    m = b1 * m + (1 - b1) * gt;
    v = b2 * v + (1 - b2) * gt * gt;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    w -= lr * mh / (std::sqrt(vh) + eps);
    EXPECT_NEAR(params[0][0], w, 1e-15);
  }
}

TEST(AdamTest, NonFiniteGradientNamesParameter) {
  std::vector<Tensor<double>> params{Tensor<double>::zeros({2}), Tensor<double>::zeros({1})};
  const std::vector<Tensor<double>> grads{Tensor<double>::zeros({2}),
                                          Tensor<double>::scalar(std::numeric_limits<double>::quiet_NaN())};
  const std::vector<std::string> names{"a", "b"};
  auto state = AdamState<double>::zeros_like(params);
  try {
    adam_step<double>(params, grads, names, state, 0.1);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_EQ(e.parameter(), "b");
  }
  EXPECT_EQ(params[0][0], 0.0);
  EXPECT_EQ(state.t, 0);
}

TEST(BatchIndexTest, PermutationPerEpoch) {
  std::vector<int> seen(7, 0);
  for (int it = 0; it < 7; ++it) ++seen[batch_index(5, it, 0, 1, 7)];
  for (int c : seen) EXPECT_EQ(c, 1);
  EXPECT_EQ(batch_index(5, 3, 1, 2, 7), batch_index(5, 3, 1, 2, 7));
}

std::string swap_horizontal_words(const std::string& text) {
  std::string out;
  for (const auto& w : tokenize(text)) {
    std::string m = w == "left" ? "right" : w == "right" ? "left" : w == "leftmost" ? "rightmost" : w == "rightmost" ? "leftmost" : w;
    out += (out.empty() ? "" : " ") + m;
  }
  return out;
}

TEST(MirrorTest, PreservesTheReferent) {
  SceneConfig config;
  config.relation_prob = 0.5;
  const auto samples = gen_samples(31, 150, config);
  std::vector<std::string> corpus;
  for (const auto& s : samples) corpus.push_back(s.expression);
  const Vocabulary vocab = Vocabulary::build(corpus);
  const auto examples = prepare<double>(samples, vocab, 12);
  int horizontal = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    SceneMeta flipped = samples[i].meta;
    for (auto& o : flipped.objects) o.x0 = flipped.canvas - o.x0 - o.extent;
    const std::string expr = swap_horizontal_words(samples[i].expression);
    horizontal += expr != samples[i].expression;
    ASSERT_EQ(resolve_expression(expr, flipped), std::vector<int>{flipped.target}) << expr;

    const Example<double> m = mirror(examples[i], vocab);
    EXPECT_EQ(m.tokens.ids, vocab.encode(expr, 12).ids);
    EXPECT_TRUE((m.mask.values() == render_mask(flipped, flipped.target).values()).all()) << samples[i].expression;
    EXPECT_TRUE((m.target.values() == m.mask.values().cast<double>()).all());
    const Index w = samples[i].image.dim(2);
    EXPECT_EQ(m.image.values()(5 * w + 0), examples[i].image.values()(5 * w + w - 1));
    const Example<double> back = mirror(m, vocab);
    EXPECT_EQ(back.tokens.ids, examples[i].tokens.ids);
    EXPECT_TRUE((back.image.values() == examples[i].image.values()).all());
  }
  EXPECT_GT(horizontal, 10);
}

TEST(CalibrateTest, HeadEndsAtUnitSpreadAndPriorBias) {
  SceneConfig scenes = small_scenes();
  const auto samples = gen_samples(8, 6, scenes);
  auto ckpt = fresh<double>(samples, 1);
  const auto examples = prepare<double>(samples, ckpt.vocab, ckpt.dims.max_length);
  const std::span<const Example<double>> span(examples);
  auto params = ckpt.params;
  calibrate(params, ckpt.dims, span);

  double fg = 0, total = 0, sum = 0, sum_sq = 0, n = 0;
  for (const auto& ex : examples) {
    fg += ex.mask.values().cast<double>().sum();
    total += static_cast<double>(ex.mask.size());
    const auto f = forward(params, ckpt.dims, ex.image, ex.tokens);
    const auto logits = conv2d(f.decoded.final_hidden, params.head.kernel, Tensor<double>::zeros({1}), 0);
    sum += logits.values().sum();
    sum_sq += logits.values().square().sum();
    n += static_cast<double>(logits.size());
  }
  const double prior = fg / total;
  EXPECT_NEAR(params.head.bias[0], std::log(prior / (1 - prior)), 1e-12);
  EXPECT_NEAR(std::sqrt(sum_sq / n - (sum / n) * (sum / n)), 1.0, 1e-9);

  auto again = ckpt.params;
  calibrate(again, ckpt.dims, span);
  const auto a = flatten(params), b = flatten(again);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_TRUE((a[i].values() == b[i].values()).all());
  EXPECT_THROW(calibrate(again, ckpt.dims, std::span<const Example<double>>()), std::invalid_argument);
}

class TrainLoopTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data = new std::vector<Sample>(gen_samples(17, 12, small_scenes()));
    held = new std::vector<Sample>(gen_samples(18, 4, small_scenes(), 1000));
  }
  static void TearDownTestSuite() {
    delete data;
    delete held;
  }
  static std::vector<Sample>* data;
  static std::vector<Sample>* held;
};
std::vector<Sample>* TrainLoopTest::data = nullptr;
std::vector<Sample>* TrainLoopTest::held = nullptr;

TEST_F(TrainLoopTest, ZeroItersWritesInitialCheckpointOnly) {
  const fs::path dir = scratch_dir("zero");
  const auto start = fresh<double>(*data, 0);
  const auto end = train(start, *data, *held, TrainPaths{dir});
  EXPECT_EQ(end.iteration, 0);
  EXPECT_TRUE(fs::exists(dir / "latest.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "checkpoint-000000.ckpt"));
  const auto loaded = load_checkpoint<double>(dir / "latest.ckpt");
  const auto a = flatten(start.params), b = flatten(loaded.params);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_TRUE((a[i].values() == b[i].values()).all());
  fs::remove_all(dir);
}

TEST_F(TrainLoopTest, SameSeedSameLog) {
  const fs::path d1 = scratch_dir("det1"), d2 = scratch_dir("det2");
  auto start = fresh<float>(*data, 10);
  start.train.batch_size = 2;
  train(start, *data, *held, TrainPaths{d1});
  start.train.threads = 2;
  train(start, *data, *held, TrainPaths{d2});
  const std::string log = slurp(d1 / "metrics.jsonl");
  EXPECT_FALSE(log.empty());
  EXPECT_EQ(log, slurp(d2 / "metrics.jsonl"));
  EXPECT_EQ(slurp(d1 / "latest.ckpt"), slurp(d2 / "latest.ckpt"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_F(TrainLoopTest, ResumeFollowsSameTrajectory) {
  const fs::path full = scratch_dir("full"), part = scratch_dir("part");
  auto start = fresh<double>(*data, 8);
  start.train.checkpoint_every = 4;
  const auto straight = train(start, *data, *held, TrainPaths{full});
  train(start, *data, *held, TrainPaths{part});
  auto mid = load_checkpoint<double>(part / "checkpoint-000004.ckpt");
  EXPECT_EQ(mid.iteration, 4);
  const auto resumed = train(mid, *data, *held, TrainPaths{part});
  const auto a = flatten(straight.params), b = flatten(resumed.params);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_TRUE((a[i].values() == b[i].values()).all());
  fs::remove_all(full);
  fs::remove_all(part);
}

TEST_F(TrainLoopTest, MirroredPoolKeepsDeterminism) {
  const fs::path d1 = scratch_dir("mir1"), d2 = scratch_dir("mir2");
  auto start = fresh<float>(*data, 6);
  start.train.batch_size = 3;
  start.train.mirror = true;
  train(start, *data, *held, TrainPaths{d1});
  start.train.threads = 3;
  train(start, *data, *held, TrainPaths{d2});
  EXPECT_EQ(slurp(d1 / "metrics.jsonl"), slurp(d2 / "metrics.jsonl"));
  EXPECT_TRUE(load_checkpoint<float>(d1 / "latest.ckpt").train.mirror);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_F(TrainLoopTest, CheckpointRoundTripReproducesEvalLoss) {
  const fs::path dir = scratch_dir("ckpt");
  auto start = fresh<float>(*data, 3);
  const auto end = train(start, *data, *held, TrainPaths{dir});
  const auto loaded = load_checkpoint<float>(dir / "latest.ckpt");
  EXPECT_EQ(loaded.iteration, 3);
  EXPECT_EQ(loaded.adam.t, end.adam.t);
  EXPECT_EQ(loaded.vocab.words(), end.vocab.words());
  const auto examples = prepare<float>(*held, loaded.vocab, loaded.dims.max_length);
  const auto e1 = evaluate(end.params, end.dims, std::span<const Example<float>>(examples));
  const auto e2 = evaluate(loaded.params, loaded.dims, std::span<const Example<float>>(examples));
  EXPECT_EQ(e1.mean_loss, e2.mean_loss);
  EXPECT_EQ(e1.losses, e2.losses);
  fs::remove_all(dir);
}

TEST_F(TrainLoopTest, CheckpointFailures) {
  const fs::path dir = scratch_dir("bad");
  save_checkpoint(dir / "f64.ckpt", fresh<double>(*data, 1));
  EXPECT_EQ(checkpoint_precision(dir / "f64.ckpt"), Precision::f64);
  EXPECT_THROW(load_checkpoint<float>(dir / "f64.ckpt"), CheckpointError);

  const std::string bytes = slurp(dir / "f64.ckpt");
  std::ofstream(dir / "cut.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  EXPECT_THROW(load_checkpoint<double>(dir / "cut.ckpt"), CheckpointError);
  std::ofstream(dir / "junk.ckpt", std::ios::binary) << "not a checkpoint";
  EXPECT_THROW(load_checkpoint<double>(dir / "junk.ckpt"), CheckpointError);
  EXPECT_THROW(load_checkpoint<double>(dir / "missing.ckpt"), FormatError);
  fs::remove_all(dir);
}

TEST_F(TrainLoopTest, NanAbortsAndKeepsCheckpoint) {
  const fs::path dir = scratch_dir("nan");
  auto start = fresh<double>(*data, 5);
  start.params.head.bias = Tensor<double>::scalar(std::numeric_limits<double>::quiet_NaN());
  try {
    train(start, *data, *held, TrainPaths{dir});
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    EXPECT_EQ(e.iteration(), 0);
  }
  EXPECT_TRUE(fs::exists(dir / "latest.ckpt"));
  fs::remove_all(dir);
}

}  // namespace
}  // namespace refseg
