#include "refseg/verify.hpp"

#include "refseg/grad_check.hpp"
#include "refseg/metrics.hpp"
#include "refseg/model.hpp"
#include "refseg/ops.hpp"
#include "refseg/scene.hpp"
#include "refseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace refseg {

bool SuiteReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::string SuiteReport::to_text() const {
  std::ostringstream os;
  int failures = 0;
  for (const auto& c : checks) {
    char line[256];
    std::snprintf(line, sizeof line, "[%s] %-44s %.3e (bound %.1e)", c.passed ? "PASS" : "FAIL", c.name.c_str(),
                  c.value, c.bound);
    os << line;
    if (!c.detail.empty()) os << "  " << c.detail;
    os << '\n';
    failures += !c.passed;
  }
  os << suite << ": " << (checks.size() - static_cast<std::size_t>(failures)) << "/" << checks.size()
     << " checks passed\n";
  return os.str();
}

namespace {

using D = double;
using TD = Tensor<double>;

TD normal(Shape shape, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Buffer<double> values(element_count(shape));
  for (Index i = 0; i < values.size(); ++i) values(i) = dist(rng);
  return TD(std::move(shape), std::move(values));
}

TD uniform(Shape shape, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Buffer<double> values(element_count(shape));
  for (Index i = 0; i < values.size(); ++i) values(i) = dist(rng);
  return TD(std::move(shape), std::move(values));
}

TD binary(Shape shape, Rng& rng) {
  std::bernoulli_distribution dist(0.5);
  Buffer<double> values(element_count(shape));
  for (Index i = 0; i < values.size(); ++i) values(i) = dist(rng) ? 1.0 : 0.0;
  return TD(std::move(shape), std::move(values));
}

// Keeps ReLU inputs away from the kink so central differences stay valid.
TD away_from_zero(const TD& x) {
  Buffer<double> v = x.values();
  for (Index i = 0; i < v.size(); ++i) {
    if (std::abs(v(i)) < 0.05) v(i) = v(i) < 0 ? -0.5 : 0.5;
  }
  return TD(x.shape(), std::move(v));
}

double max_abs_diff(const TD& a, const TD& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  return (a.values() - b.values()).abs().maxCoeff();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

CheckResult bounded(std::string name, double value, double bound, std::string detail = {}) {
  return {std::move(name), std::isfinite(value) && value <= bound, value, bound, std::move(detail)};
}

// A differentiable case: inputs drawn per seed and a map to any-shaped output.
struct GradCase {
  std::string name;
  std::vector<std::string> input_names;
  std::function<std::vector<TD>(Rng&)> inputs;
  std::function<TD(const std::vector<TD>&)> output;
  Index max_elements = 0;
  int seeds = 0;  // 0 = options.seeds
  double floor = 1e-8;
};

CheckResult run_grad_case(const GradCase& c, const VerifyOptions& options) {
  double worst = 0.0;
  std::string where;
  const int seeds = c.seeds > 0 ? c.seeds : options.seeds;
  try {
    for (int s = 0; s < seeds; ++s) {
      Rng rng(options.seed * 1000003u + static_cast<std::uint64_t>(s) * 7919u + std::hash<std::string>{}(c.name));
      const auto inputs = c.inputs(rng);
      const TD probe = c.output(inputs);
      const TD projection = normal(probe.shape(), rng);
      auto f = [&](const std::vector<TD>& xs) { return sum(mul(c.output(xs), projection)); };
      GradCheckOptions gopts;
      gopts.step = kGradStep;
      gopts.max_elements = c.max_elements;
      gopts.seed = static_cast<std::uint64_t>(s);
      gopts.floor = c.floor;
      const GradCheckReport report = grad_check(f, inputs, c.input_names, gopts);
      for (const auto& e : report.entries) {
        if (e.max_rel_error > worst) {
          worst = e.max_rel_error;
          where = e.name + " (seed " + std::to_string(s) + ", analytic " + fmt(e.analytic) + ", numeric " +
                  fmt(e.numeric) + ")";
        }
      }
    }
  } catch (const std::exception& e) {
    return {"grad " + c.name, false, std::numeric_limits<double>::infinity(), kGradTolerance, e.what()};
  }
  return bounded("grad " + c.name, worst, kGradTolerance, worst > 0 ? "worst at " + where : "");
}

LstmParams<D> lstm_from(const std::vector<TD>& xs, std::size_t at) { return {xs[at], xs[at + 1], xs[at + 2]}; }

std::vector<TD> lstm_inputs(Index in, Index hidden, Rng& rng) {
  return {normal({4 * hidden, in}, rng, 0.5), normal({4 * hidden, hidden}, rng, 0.5), normal({4 * hidden}, rng, 0.5)};
}

// Assigns tensors to the parameter slots in visit order without detaching.
void bind(ModelParams<D>& params, const std::vector<TD>& values) {
  std::size_t i = 0;
  params.visit([&](const std::string&, TD& t) { t = values.at(i++); });
}

std::vector<GradCase> grad_cases() {
  std::vector<GradCase> cases;
  auto add_case = [&](GradCase c) { cases.push_back(std::move(c)); };

  add_case({"matmul", {"a", "b"}, [](Rng& r) { return std::vector<TD>{normal({3, 4}, r), normal({4, 2}, r)}; },
            [](const std::vector<TD>& x) { return matmul(x[0], x[1]); }});
  add_case({"transpose", {"x"}, [](Rng& r) { return std::vector<TD>{normal({3, 4}, r)}; },
            [](const std::vector<TD>& x) { return transpose(x[0]); }});
  add_case({"add", {"a", "b"}, [](Rng& r) { return std::vector<TD>{normal({2, 3, 4}, r), normal({2, 3, 4}, r)}; },
            [](const std::vector<TD>& x) { return add(x[0], x[1]); }});
  add_case({"sub", {"a", "b"}, [](Rng& r) { return std::vector<TD>{normal({2, 3, 4}, r), normal({2, 3, 4}, r)}; },
            [](const std::vector<TD>& x) { return sub(x[0], x[1]); }});
  add_case({"mul", {"a", "b"}, [](Rng& r) { return std::vector<TD>{normal({2, 3, 4}, r), normal({2, 3, 4}, r)}; },
            [](const std::vector<TD>& x) { return mul(x[0], x[1]); }});
  add_case({"affine", {"x"}, [](Rng& r) { return std::vector<TD>{normal({5}, r)}; },
            [](const std::vector<TD>& x) { return affine(x[0], 1.7, -0.3); }});
  add_case({"scale", {"x"}, [](Rng& r) { return std::vector<TD>{normal({5}, r)}; },
            [](const std::vector<TD>& x) { return scale(x[0], 2.5); }});
  add_case({"scale_by", {"x", "factor"}, [](Rng& r) { return std::vector<TD>{normal({2, 3}, r), normal({1}, r)}; },
            [](const std::vector<TD>& x) { return scale_by(x[0], x[1]); }});
  add_case({"scale_rows", {"x", "factors"},
            [](Rng& r) { return std::vector<TD>{normal({4, 3}, r), normal({4}, r)}; },
            [](const std::vector<TD>& x) { return scale_rows(x[0], x[1]); }});
  add_case({"sigmoid", {"x"}, [](Rng& r) { return std::vector<TD>{normal({6}, r)}; },
            [](const std::vector<TD>& x) { return sigmoid(x[0]); }});
  add_case({"tanh", {"x"}, [](Rng& r) { return std::vector<TD>{normal({6}, r)}; },
            [](const std::vector<TD>& x) { return tanh(x[0]); }});
  add_case({"relu", {"x"}, [](Rng& r) { return std::vector<TD>{away_from_zero(normal({8}, r))}; },
            [](const std::vector<TD>& x) { return relu(x[0]); }});
  add_case({"softmax", {"v"}, [](Rng& r) { return std::vector<TD>{normal({5}, r)}; },
            [](const std::vector<TD>& x) { return softmax(x[0]); }});
  add_case({"sum", {"x"}, [](Rng& r) { return std::vector<TD>{normal({3, 4}, r)}; },
            [](const std::vector<TD>& x) { return sum(x[0]); }});
  add_case({"mean", {"x"}, [](Rng& r) { return std::vector<TD>{normal({3, 4}, r)}; },
            [](const std::vector<TD>& x) { return mean(x[0]); }});
  add_case({"reshape", {"x"}, [](Rng& r) { return std::vector<TD>{normal({2, 6}, r)}; },
            [](const std::vector<TD>& x) { return reshape(x[0], {3, 4}); }});
  add_case({"concat axis 0", {"a", "b"}, [](Rng& r) { return std::vector<TD>{normal({2, 3}, r), normal({1, 3}, r)}; },
            [](const std::vector<TD>& x) { return concat({x[0], x[1]}, 0); }});
  add_case({"concat axis 1", {"a", "b"},
            [](Rng& r) { return std::vector<TD>{normal({2, 2, 3}, r), normal({2, 1, 3}, r)}; },
            [](const std::vector<TD>& x) { return concat({x[0], x[1]}, 1); }});
  add_case({"slice", {"x"}, [](Rng& r) { return std::vector<TD>{normal({3, 5, 2}, r)}; },
            [](const std::vector<TD>& x) { return slice(x[0], 1, 1, 3); }});
  add_case({"gather_rows", {"table"}, [](Rng& r) { return std::vector<TD>{normal({5, 3}, r)}; },
            [](const std::vector<TD>& x) {
              const std::vector<int> ids{4, 0, 4, 2};
              return gather_rows(x[0], std::span<const int>(ids));
            }});
  add_case({"tile_spatial", {"v"}, [](Rng& r) { return std::vector<TD>{normal({3}, r)}; },
            [](const std::vector<TD>& x) { return tile_spatial(x[0], 2, 4); }});
  add_case({"mul_channels", {"gate", "x"},
            [](Rng& r) { return std::vector<TD>{normal({1, 3, 4}, r), normal({2, 3, 4}, r)}; },
            [](const std::vector<TD>& x) { return mul_channels(x[0], x[1]); }});
  add_case({"conv2d 3x3", {"input", "kernel", "bias"},
            [](Rng& r) { return std::vector<TD>{normal({2, 5, 6}, r), normal({3, 2, 3, 3}, r), normal({3}, r)}; },
            [](const std::vector<TD>& x) { return conv2d(x[0], x[1], x[2], 1); }});
  add_case({"conv2d stride 2", {"input", "kernel", "bias"},
            [](Rng& r) { return std::vector<TD>{normal({2, 6, 6}, r), normal({3, 2, 3, 3}, r), normal({3}, r)}; },
            [](const std::vector<TD>& x) { return conv2d(x[0], x[1], x[2], 1, 2); }});
  add_case({"conv2d 1x1", {"input", "kernel", "bias"},
            [](Rng& r) { return std::vector<TD>{normal({2, 4, 3}, r), normal({3, 2, 1, 1}, r), normal({3}, r)}; },
            [](const std::vector<TD>& x) { return conv2d(x[0], x[1], x[2], 0); }});
  add_case({"upsample_bilinear", {"input"}, [](Rng& r) { return std::vector<TD>{normal({2, 3, 4}, r)}; },
            [](const std::vector<TD>& x) { return upsample_bilinear(x[0], 7, 9); }});
  add_case({"bce_loss", {"prob"}, [](Rng& r) { return std::vector<TD>{uniform({3, 4}, r, 0.05, 0.95)}; },
            [](const std::vector<TD>& x) {
              static const TD target = TD::from({3, 4}, {1, 0, 0, 1, 1, 1, 0, 0, 1, 0, 1, 0});
              return bce_loss(x[0], target);
            }});

  add_case({"lstm_step", {"x", "h", "c", "w_input", "w_hidden", "bias"},
            [](Rng& r) {
              std::vector<TD> v{normal({3}, r), normal({2}, r), normal({2}, r)};
              for (auto& t : lstm_inputs(3, 2, r)) v.push_back(t);
              return v;
            },
            [](const std::vector<TD>& x) {
              auto s = lstm_step(x[0], RecurrentState<D>{x[1], x[2]}, lstm_from(x, 3));
              return concat({s.hidden, s.cell}, 0);
            }});
  add_case({"bilstm_run", {"embeds", "fwd.w_input", "fwd.w_hidden", "fwd.bias", "bwd.w_input", "bwd.w_hidden",
                           "bwd.bias"},
            [](Rng& r) {
              std::vector<TD> v{normal({3, 3}, r)};
              for (auto& t : lstm_inputs(3, 2, r)) v.push_back(t);
              for (auto& t : lstm_inputs(3, 2, r)) v.push_back(t);
              return v;
            },
            [](const std::vector<TD>& x) { return bilstm_run(x[0], lstm_from(x, 1), lstm_from(x, 4)); }});
  add_case({"convlstm_step", {"x", "h", "c", "kernel", "bias"},
            [](Rng& r) {
              return std::vector<TD>{normal({2, 4, 4}, r), normal({3, 4, 4}, r), normal({3, 4, 4}, r),
                                     normal({12, 5, 3, 3}, r, 0.3), normal({12}, r, 0.3)};
            },
            [](const std::vector<TD>& x) {
              auto s = convlstm_step(x[0], RecurrentState<D>{x[1], x[2]}, ConvLstmParams<D>{x[3], x[4]});
              return concat({s.hidden, s.cell}, 0);
            }});
  add_case({"word_attention", {"h", "w_b", "w_a"},
            [](Rng& r) { return std::vector<TD>{normal({4, 4}, r), normal({3, 4}, r), normal({3}, r)}; },
            [](const std::vector<TD>& x) { return word_attention(x[0], AttentionHead<D>{x[1], x[2]}); }});
  add_case({"modulated_convlstm_step", {"multimodal", "attention", "h", "c", "kernel", "bias"},
            [](Rng& r) {
              return std::vector<TD>{normal({3, 4, 4}, r), uniform({1}, r, 0.1, 0.9), normal({2, 4, 4}, r),
                                     normal({2, 4, 4}, r), normal({8, 5, 3, 3}, r, 0.3), normal({8}, r, 0.3)};
            },
            [](const std::vector<TD>& x) {
              auto s = modulated_convlstm_step(x[0], x[1], RecurrentState<D>{x[2], x[3]},
                                               ConvLstmParams<D>{x[4], x[5]});
              return concat({s.hidden, s.cell}, 0);
            }});
  add_case({"spatial_attention", {"features", "kernel", "bias"},
            [](Rng& r) {
              return std::vector<TD>{normal({3, 8, 8}, r), normal({1, 3, 7, 7}, r, 0.2), normal({1}, r)};
            },
            [](const std::vector<TD>& x) {
              return spatial_attention(x[0], SpatialAttentionParams<D>{x[1], x[2]});
            }});
  add_case({"decode", {"level0", "level1", "kernel", "bias"},
            [](Rng& r) {
              return std::vector<TD>{normal({3, 4, 4}, r), normal({3, 4, 4}, r), normal({8, 5, 3, 3}, r, 0.3),
                                     normal({8}, r, 0.3)};
            },
            [](const std::vector<TD>& x) {
              std::vector<TD> levels{x[0], x[1]};
              return decode(std::span<const TD>(levels), ConvLstmParams<D>{x[2], x[3]}).final_hidden;
            }});
  add_case({"predict_mask", {"hidden", "kernel", "bias"},
            [](Rng& r) {
              return std::vector<TD>{normal({2, 4, 4}, r), normal({1, 2, 1, 1}, r), normal({1}, r)};
            },
            [](const std::vector<TD>& x) { return predict_mask(x[0], MaskHead<D>{x[1], x[2]}, 8, 8).prob; }});

  // Language encoder and the full pipeline at toy sizes.
  static const ModelDims toy = [] {
    ModelDims d = ModelDims::toy();
    d.vocab_size = 6;
    return d;
  }();
  add_case({"encode_expression",
            {"embedding", "fwd.w_input", "fwd.w_hidden", "fwd.bias", "bwd.w_input", "bwd.w_hidden", "bwd.bias",
             "w_b", "w_a"},
            [](Rng& r) {
              std::vector<TD> v;
              LanguageParams<D>::init(toy.vocab_size, toy.embed, toy.lstm_hidden, toy.attention, r)
                  .visit("", [&](const std::string&, const TD& t) { v.push_back(t); });
              return v;
            },
            [](const std::vector<TD>& x) {
              LanguageParams<D> p{x[0], lstm_from(x, 1), lstm_from(x, 4), AttentionHead<D>{x[7], x[8]}};
              const TokenSequence tokens({1, 3, 2}, toy.max_length);
              auto w = encode_expression(tokens, p);
              return concat({reshape(w.r, {w.r.size()}), w.a}, 0);
            }});

  std::vector<std::string> names;
  {
    const auto p = ModelParams<D>::init(toy, 0);
    names = parameter_names(p);
  }
  add_case({"full pipeline (toy)", names,
            [](Rng& r) {
              std::vector<TD> v;
              const auto p = ModelParams<D>::init(toy, 0);
              p.visit([&](const std::string&, const TD& t) { v.push_back(scale(normal(t.shape(), r), 0.5)); });
              return v;
            },
            [](const std::vector<TD>& x) {
              static const TD image = [] {
                Rng rng(99);
                return uniform({3, toy.image_size, toy.image_size}, rng, 0.0, 1.0);
              }();
              static const TD target = [] {
                Rng rng(98);
                return binary({1, toy.image_size, toy.image_size}, rng);
              }();
              ModelParams<D> p = ModelParams<D>::init(toy, 0);
              bind(p, x);
              const TokenSequence tokens({2, 5, 1}, toy.max_length);
              auto fwd = forward(p, toy, image, tokens);
              return bce_loss(fwd.output.prob, target);
            },
            48, 4, 1e-6});
  return cases;
}

RecurrentState<D> random_state(Shape shape, Rng& rng) { return {normal(shape, rng), normal(shape, rng)}; }

}  // namespace

SuiteReport run_grad_suite(const VerifyOptions& options) {
  SuiteReport report{"grad", {}};
  for (const auto& c : grad_cases()) report.checks.push_back(run_grad_case(c, options));
  return report;
}

SuiteReport run_invariants_suite(const VerifyOptions& options) {
  SuiteReport report{"invariants", {}};
  auto& out = report.checks;

  {
    // Word attention over 100 random expressions.
    Rng rng(options.seed + 1);
    const auto lang = LanguageParams<D>::init(20, 8, 4, 6, rng);
    double worst_sum = 0.0, min_weight = 1.0;
    std::uniform_int_distribution<int> length(1, 12), word(0, 19);
    for (int e = 0; e < 100; ++e) {
      std::vector<int> ids(static_cast<std::size_t>(length(rng)));
      for (auto& id : ids) id = word(rng);
      const auto w = encode_expression(TokenSequence(ids, 12), lang);
      worst_sum = std::max(worst_sum, std::abs(w.a.values().sum() - 1.0));
      min_weight = std::min(min_weight, w.a.values().minCoeff());
    }
    out.push_back(bounded("attention sums to one (100 expressions)", worst_sum, 1e-6));
    out.push_back({"attention weights positive", min_weight > 0.0, min_weight, 0.0, ""});
    const auto single = encode_expression(TokenSequence({7}, 12), lang);
    out.push_back({"single-word attention is exactly 1", single.a.size() == 1 && single.a[0] == 1.0,
                   single.a.size() == 1 ? std::abs(single.a[0] - 1.0) : 1.0, 0.0, ""});
  }

  {
    // Degenerate attention values of the modulated cell.
    double d1 = 0.0, d0 = 0.0, dh = 0.0;
    for (int s = 0; s < options.seeds; ++s) {
      Rng rng(options.seed + 100 + static_cast<std::uint64_t>(s));
      const TD m = normal({3, 5, 4}, rng);
      const auto state = random_state({2, 5, 4}, rng);
      const ConvLstmParams<D> p{normal({8, 5, 3, 3}, rng, 0.3), normal({8}, rng, 0.3)};
      const auto g = convlstm_gates(m, state, p);
      const TD ig = mul(g.input, g.cell), fc = mul(g.forget, state.cell);
      d1 = std::max(d1, max_abs_diff(modulated_convlstm_step(m, TD::scalar(1.0), state, p).cell, ig));
      d0 = std::max(d0, max_abs_diff(modulated_convlstm_step(m, TD::scalar(0.0), state, p).cell, fc));
      dh = std::max(dh, max_abs_diff(modulated_convlstm_step(m, TD::scalar(0.5), state, p).cell,
                                     scale(add(ig, fc), 0.5)));
    }
    out.push_back({"modulated cell a=1 equals i*g bitwise", d1 == 0.0, d1, 0.0, ""});
    out.push_back({"modulated cell a=0 equals f*C bitwise", d0 == 0.0, d0, 0.0, ""});
    out.push_back(bounded("modulated cell a=0.5 is half the update", dh, 1e-12));
  }

  {
    // IoU and Prec@X properties.
    Rng rng(options.seed + 200);
    bool symmetric = true, self = true, range = true, monotone = true;
    std::vector<double> ious;
    for (int k = 0; k < 50; ++k) {
      const TD a = binary({6, 7}, rng), b = binary({6, 7}, rng);
      const Tensor<float> fa = a.cast<float>(), fb = b.cast<float>();
      const double ab = iou(fa, fb);
      symmetric &= ab == iou(fb, fa);
      range &= ab >= 0.0 && ab <= 1.0;
      if (fa.values().sum() > 0) self &= iou(fa, fa) == 1.0;
      ious.push_back(ab);
    }
    for (std::size_t t = 1; t < kPrecisionThresholds.size(); ++t) {
      monotone &= prec_at(ious, kPrecisionThresholds[t]) <= prec_at(ious, kPrecisionThresholds[t - 1]);
    }
    const Tensor<float> empty = Tensor<float>::zeros({4, 4});
    const Tensor<float> one = Tensor<float>::constant({4, 4}, 1.0f);
    out.push_back({"iou symmetric", symmetric, 0.0, 0.0, ""});
    out.push_back({"iou(a, a) = 1 for non-empty a", self, 0.0, 0.0, ""});
    out.push_back({"iou within [0, 1]", range, 0.0, 0.0, ""});
    out.push_back({"iou empty conventions", iou(empty, empty) == 1.0 && iou(empty, one) == 0.0, 0.0, 0.0, ""});
    out.push_back({"Prec@X non-increasing in X", monotone, 0.0, 0.0, ""});
  }

  {
    TrainConfig cfg;
    cfg.max_iters = 1000;
    bool decreasing = true;
    for (int it = 1; it <= cfg.max_iters; ++it) decreasing &= poly_lr(it, cfg) < poly_lr(it - 1, cfg);
    out.push_back({"poly_lr strictly decreasing", decreasing, 0.0, 0.0, ""});

    Rng rng(options.seed + 300);
    std::vector<TD> params{normal({3, 2}, rng), normal({4}, rng)};
    const std::vector<TD> before = params;
    const std::vector<TD> grads{normal({3, 2}, rng), normal({4}, rng)};
    const std::vector<std::string> names{"a", "b"};
    AdamState<D> state;
    adam_step(std::span<TD>(params), std::span<const TD>(grads), std::span<const std::string>(names), state, 0.0);
    const double moved = std::max(max_abs_diff(params[0], before[0]), max_abs_diff(params[1], before[1]));
    out.push_back({"adam_step with lr 0 is the identity", moved == 0.0, moved, 0.0, ""});
  }

  {
    const TD coords = spatial_coords<D>(5, 3);
    const double lo = coords.values().minCoeff(), hi = coords.values().maxCoeff();
    out.push_back({"spatial coordinates within [-1, 1]", lo >= -1.0 && hi <= 1.0, std::max(-lo, hi), 1.0, ""});
  }

  {
    const SceneConfig cfg;
    const auto samples = gen_samples(options.seed + 400, 200, cfg);
    int bad = 0;
    for (const auto& s : samples) {
      const auto hits = resolve_expression(s.expression, s.meta);
      const bool unique = hits.size() == 1 && hits.front() == s.meta.target;
      const bool mask_ok = max_abs_diff(s.mask.cast<double>(), render_mask(s.meta, s.meta.target).cast<double>()) == 0;
      bad += !(unique && mask_ok);
    }
    out.push_back({"generated expressions resolve uniquely (200)", bad == 0, static_cast<double>(bad), 0.0, ""});
  }
  return report;
}

namespace {

TD direct_conv(const TD& x, const TD& k, const TD& b, int pad, int stride) {
  const Index cin = x.dim(0), h = x.dim(1), w = x.dim(2), cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const Index oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  Buffer<double> out(cout * oh * ow);
  for (Index o = 0; o < cout; ++o) {
    for (Index y = 0; y < oh; ++y) {
      for (Index xx = 0; xx < ow; ++xx) {
        double acc = b[o];
        for (Index c = 0; c < cin; ++c) {
          for (Index i = 0; i < kh; ++i) {
            for (Index j = 0; j < kw; ++j) {
              const Index sy = y * stride + i - pad, sx = xx * stride + j - pad;
              if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
              acc += k.at({o, c, i, j}) * x.at({c, sy, sx});
            }
          }
        }
        out((o * oh + y) * ow + xx) = acc;
      }
    }
  }
  return TD({cout, oh, ow}, std::move(out));
}

TD integers(Shape shape, Rng& rng) {
  std::uniform_int_distribution<int> dist(-4, 4);
  Buffer<double> values(element_count(shape));
  for (Index i = 0; i < values.size(); ++i) values(i) = dist(rng);
  return TD(std::move(shape), std::move(values));
}

TD direct_upsample(const TD& x, Index oh, Index ow) {
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Buffer<double> out(c * oh * ow);
  auto source = [](Index o, Index in, Index out_size, Index& i0, Index& i1, double& t) {
    double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out_size) - 0.5;
    s = std::max(s, 0.0);
    i0 = std::min(static_cast<Index>(std::floor(s)), in - 1);
    i1 = std::min(i0 + 1, in - 1);
    t = s - static_cast<double>(i0);
  };
  for (Index ch = 0; ch < c; ++ch) {
    for (Index y = 0; y < oh; ++y) {
      Index y0, y1;
      double ty;
      source(y, h, oh, y0, y1, ty);
      for (Index xx = 0; xx < ow; ++xx) {
        Index x0, x1;
        double tx;
        source(xx, w, ow, x0, x1, tx);
        const double top = (1 - tx) * x.at({ch, y0, x0}) + tx * x.at({ch, y0, x1});
        const double bottom = (1 - tx) * x.at({ch, y1, x0}) + tx * x.at({ch, y1, x1});
        out((ch * oh + y) * ow + xx) = (1 - ty) * top + ty * bottom;
      }
    }
  }
  return TD({c, oh, ow}, std::move(out));
}

}  // namespace

SuiteReport run_oracle_suite(const VerifyOptions& options) {
  SuiteReport report{"oracle", {}};
  auto& out = report.checks;

  {
    double worst = 0.0;
    for (int s = 0; s < 20; ++s) {
      Rng rng(options.seed + 500 + static_cast<std::uint64_t>(s));
      const Index in = 3, hid = 4;
      const ConvLstmParams<D> conv{normal({4 * hid, in + hid, 1, 1}, rng, 0.5), normal({4 * hid}, rng, 0.5)};
      const LstmParams<D> dense{slice(conv.kernel.reshaped({4 * hid, in + hid}), 1, 0, in),
                                slice(conv.kernel.reshaped({4 * hid, in + hid}), 1, in, hid), conv.bias};
      const TD x = normal({in}, rng);
      const auto state = random_state({hid}, rng);
      const auto a = convlstm_step(x.reshaped({in, 1, 1}),
                                   RecurrentState<D>{state.hidden.reshaped({hid, 1, 1}), state.cell.reshaped({hid, 1, 1})},
                                   conv);
      const auto b = lstm_step(x, state, dense);
      worst = std::max({worst, max_abs_diff(a.hidden.reshaped({hid}), b.hidden),
                        max_abs_diff(a.cell.reshaped({hid}), b.cell)});
    }
    out.push_back(bounded("1x1 ConvLSTM equals LSTM (20 seeds)", worst, 1e-12));
  }

  {
    // The encoder's block-split convolution against word-by-word steps over
    // the concatenated multimodal map.
    double worst = 0.0;
    for (int s = 0; s < 10; ++s) {
      Rng rng(options.seed + 700 + static_cast<std::uint64_t>(s));
      const Index cv = 4, cr = 6, hid = 3, side = 5 + s % 3;
      const Index length = 1 + s % 4;
      const int k = s % 2 == 0 ? 3 : 5;
      const ConvLstmParams<D> p{normal({4 * hid, cv + kSpatialChannels + cr + hid, k, k}, rng, 0.5),
                                normal({4 * hid}, rng, 0.5)};
      const TD visual = normal({cv, side, side + 1}, rng);
      const TD att = softmax(normal({length}, rng));
      const WordFeatures<D> words{TD(), att, normal({length, cr}, rng)};
      const TD spatial = spatial_coords<D>(side + 1, side);
      auto state = RecurrentState<D>::zeros({hid, side, side + 1});
      for (Index l = 0; l < length; ++l) {
        const TD m = build_word_multimodal(visual, spatial, slice(words.r, 0, l, 1).reshaped({cr}));
        state = modulated_convlstm_step(m, slice(words.a, 0, l, 1), state, p);
      }
      worst = std::max(worst, max_abs_diff(encode(visual, words, p).final_hidden, state.hidden));
    }
    out.push_back(bounded("encoder equals word-by-word steps", worst, 1e-12));
  }

  {
    double exact = 0.0, real = 0.0;
    for (int s = 0; s < options.seeds; ++s) {
      Rng rng(options.seed + 600 + static_cast<std::uint64_t>(s));
      for (int stride : {1, 2}) {
        const TD xi = integers({3, 7, 6}, rng), ki = integers({4, 3, 3, 3}, rng), bi = integers({4}, rng);
        exact = std::max(exact, max_abs_diff(conv2d(xi, ki, bi, 1, stride), direct_conv(xi, ki, bi, 1, stride)));
        const TD xr = normal({3, 7, 6}, rng), kr = normal({4, 3, 3, 3}, rng), br = normal({4}, rng);
        real = std::max(real, max_abs_diff(conv2d(xr, kr, br, 1, stride), direct_conv(xr, kr, br, 1, stride)));
      }
    }
    out.push_back({"conv2d equals direct loop (integer inputs)", exact == 0.0, exact, 0.0, ""});
    out.push_back(bounded("conv2d equals direct loop (real inputs)", real, 1e-12));
  }

  {
    double worst = 0.0;
    for (int s = 0; s < options.seeds; ++s) {
      Rng rng(options.seed + 700 + static_cast<std::uint64_t>(s));
      const TD x = normal({2, 3, 5}, rng);
      worst = std::max({worst, max_abs_diff(upsample_bilinear(x, 7, 11), direct_upsample(x, 7, 11)),
                        max_abs_diff(upsample_bilinear(x, 12, 20), direct_upsample(x, 12, 20))});
    }
    out.push_back(bounded("bilinear upsampling equals direct formula", worst, 1e-12));
  }

  {
    // Palindromic sequence with shared directions: the two halves swap under reversal.
    double worst = 0.0;
    for (int s = 0; s < options.seeds; ++s) {
      Rng rng(options.seed + 800 + static_cast<std::uint64_t>(s));
      const auto p = LstmParams<D>::init(3, 2, rng);
      const TD e0 = normal({1, 3}, rng), e1 = normal({1, 3}, rng);
      const TD seq = concat({e0, e1, e0}, 0);
      const TD h = bilstm_run(seq, p, p);
      for (Index l = 0; l < 3; ++l) {
        const TD fwd = slice(slice(h, 0, l, 1), 1, 0, 2), bwd = slice(slice(h, 0, 2 - l, 1), 1, 2, 2);
        worst = std::max(worst, max_abs_diff(fwd, bwd));
      }
    }
    out.push_back(bounded("palindrome bi-LSTM halves swap", worst, 1e-12));
  }

  {
    Rng rng(options.seed + 900);
    bool iou_ok = true, prec_ok = true;
    std::vector<double> ious;
    for (int k = 0; k < 50; ++k) {
      const Tensor<float> a = binary({9, 8}, rng).cast<float>(), b = binary({9, 8}, rng).cast<float>();
      int inter = 0, uni = 0;
      for (Index i = 0; i < a.size(); ++i) {
        inter += a[i] > 0 && b[i] > 0;
        uni += a[i] > 0 || b[i] > 0;
      }
      const double expected = uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
      const double got = iou(a, b);
      iou_ok &= got == expected;
      ious.push_back(got);
    }
    for (double x : kPrecisionThresholds) {
      const double count = static_cast<double>(std::count_if(ious.begin(), ious.end(), [&](double v) { return v > x; }));
      prec_ok &= prec_at(ious, x) == count / static_cast<double>(ious.size());
    }
    out.push_back({"iou equals counting oracle (50 pairs)", iou_ok, 0.0, 0.0, ""});
    out.push_back({"Prec@X equals counting oracle", prec_ok, 0.0, 0.0, ""});

    Tensor<float> pred = Tensor<float>::zeros({4, 4}), gt = Tensor<float>::zeros({4, 4});
    Buffer<float> pv = pred.values(), gv = gt.values();
    for (Index y : {1, 2}) {
      pv(y * 4 + 0) = pv(y * 4 + 1) = 1;
      gv(y * 4 + 1) = gv(y * 4 + 2) = 1;
    }
    const double hand = iou(Tensor<float>({4, 4}, pv), Tensor<float>({4, 4}, gv));
    out.push_back(bounded("hand case 2/6", std::abs(hand - 2.0 / 6.0), 1e-15));
  }

  {
    // Two Adam steps with constant gradient against the scalar recurrences.
    const double lr = 0.01, g = 0.3, p0 = 0.7;
    AdamHyper hyper;
    hyper.weight_decay = 0.0;
    std::vector<TD> params{TD::scalar(p0)};
    const std::vector<TD> grads{TD::scalar(g)};
    const std::vector<std::string> names{"p"};
    AdamState<D> state;
    double p = p0, m = 0, v = 0;
    for (int t = 1; t <= 2; ++t) {
      adam_step(std::span<TD>(params), std::span<const TD>(grads), std::span<const std::string>(names), state, lr,
                hyper);
      m = hyper.beta1 * m + (1 - hyper.beta1) * g;
      v = hyper.beta2 * v + (1 - hyper.beta2) * g * g;
      const double mh = m / (1 - std::pow(hyper.beta1, t)), vh = v / (1 - std::pow(hyper.beta2, t));
      p -= lr * mh / (std::sqrt(vh) + hyper.epsilon);
    }
    out.push_back(bounded("adam two steps equal scalar recurrences", std::abs(params[0].item() - p), 1e-15));

    TrainConfig cfg;
    cfg.max_iters = 1000;
    out.push_back(bounded("poly_lr midpoint", std::abs(poly_lr(500, cfg) - 0.00025 * std::pow(0.5, 0.9)), 1e-18));
  }
  return report;
}

SuiteReport run_suite(std::string_view name, const VerifyOptions& options) {
  if (name == "grad") return run_grad_suite(options);
  if (name == "invariants") return run_invariants_suite(options);
  if (name == "oracle") return run_oracle_suite(options);
  throw std::invalid_argument("unknown suite '" + std::string(name) + "' (expected grad, invariants or oracle)");
}

}  // namespace refseg
