#include "refseg/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace refseg {

namespace {

double evaluate(const MultiScalarFunction& f, const std::vector<Tensor<double>>& inputs) {
  Tensor<double> out = f(inputs);
  if (out.size() != 1) throw std::invalid_argument("grad_check: function must be scalar-valued");
  const double v = out[0];
  if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite function value");
  return v;
}

std::vector<Index> pick_elements(Index size, Index limit, std::mt19937_64& rng) {
  std::vector<Index> idx(static_cast<std::size_t>(size));
  std::iota(idx.begin(), idx.end(), Index{0});
  if (limit > 0 && limit < size) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(limit));
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

}  // namespace

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
  return worst;
}

double grad_check(const ScalarFunction& f, const Tensor<double>& x, const GradCheckOptions& options) {
  MultiScalarFunction wrapped = [&f](const std::vector<Tensor<double>>& in) { return f(in[0]); };
  return grad_check(wrapped, {x}, {"x"}, options).max_rel_error();
}

GradCheckReport grad_check(const MultiScalarFunction& f, const std::vector<Tensor<double>>& inputs,
                           const std::vector<std::string>& names, const GradCheckOptions& options) {
  if (names.size() != inputs.size()) throw std::invalid_argument("grad_check: one name per input");

  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Tensor<double>> watched;
    for (const auto& x : inputs) watched.push_back(tape.watch(x));
    Tensor<double> loss = f(watched);
    if (loss.size() != 1) throw std::invalid_argument("grad_check: function must be scalar-valued");
    if (!std::isfinite(loss[0])) throw std::domain_error("grad_check: non-finite function value");
    tape.backward(loss);
    for (const auto& w : watched) analytic.push_back(tape.grad(w));
  }

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  std::vector<Tensor<double>> probe(inputs.begin(), inputs.end());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    GradCheckEntry entry;
    entry.name = names[k];
    const Tensor<double>& x = inputs[k];
    for (Index i : pick_elements(x.size(), options.max_elements, rng)) {
      Buffer<double> plus = x.values(), minus = x.values();
      plus(i) += options.step;
      minus(i) -= options.step;
      probe[k] = Tensor<double>(x.shape(), std::move(plus));
      const double fp = evaluate(f, probe);
      probe[k] = Tensor<double>(x.shape(), std::move(minus));
      const double fm = evaluate(f, probe);
      const double numeric = (fp - fm) / (2.0 * options.step);
      const double exact = analytic[k][i];
      if (!std::isfinite(exact)) throw std::domain_error("grad_check: non-finite analytic gradient");
      const double denom = std::max({std::abs(exact), std::abs(numeric), options.floor});
      const double rel = std::abs(exact - numeric) / denom;
      if (entry.worst_index < 0 || rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = i;
        entry.analytic = exact;
        entry.numeric = numeric;
      }
      ++entry.inspected;
    }
    probe[k] = x;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace refseg
