#pragma once

#include "refseg/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace refseg {

/// Central finite-difference verification of reverse-mode gradients.
///
/// The relative error of one element is
///   |g_analytic - g_fd| / max(|g_analytic|, |g_fd|, 1e-8)
/// and a check reports the maximum over all inspected elements. Checks run in
/// double precision only; any non-finite value raises std::domain_error.
struct GradCheckOptions {
  double step = 1e-5;
  double floor = 1e-8;
  /// Inspect at most this many elements per input (0 = all), chosen
  /// deterministically from `seed`.
  Index max_elements = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  Index inspected = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error() const;
};

using ScalarFunction = std::function<Tensor<double>(const Tensor<double>&)>;
using MultiScalarFunction = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

double grad_check(const ScalarFunction& f, const Tensor<double>& x,
                  const GradCheckOptions& options = {});

GradCheckReport grad_check(const MultiScalarFunction& f, const std::vector<Tensor<double>>& inputs,
                           const std::vector<std::string>& names,
                           const GradCheckOptions& options = {});

}  // namespace refseg
