#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace refseg {

struct CheckResult {
  std::string name;
  bool passed = false;
  /// Measured quantity (an error, a count, ...) and the bound it is held to.
  double value = 0.0;
  double bound = 0.0;
  std::string detail;
};

struct SuiteReport {
  std::string suite;
  std::vector<CheckResult> checks;

  bool passed() const;
  std::string to_text() const;
};

struct VerifyOptions {
  std::uint64_t seed = 20240;
  /// Random trials per check where a check repeats over seeds.
  int seeds = 10;
};

inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kGradStep = 1e-5;

/// Finite-difference checks of every differentiable operation, the composite
/// cells, and the full pipeline at toy sizes (double precision).
SuiteReport run_grad_suite(const VerifyOptions& options = {});

/// Attention normalization, modulated-cell degenerate cases, IoU and
/// Prec@X properties, schedule and optimizer identities, generator
/// uniqueness.
SuiteReport run_invariants_suite(const VerifyOptions& options = {});

/// Independent-oracle equivalences: 1x1 ConvLSTM against the dense LSTM,
/// convolution against a direct loop, mask metrics against counting.
SuiteReport run_oracle_suite(const VerifyOptions& options = {});

/// Dispatches on "grad", "invariants" or "oracle"; throws
/// std::invalid_argument on any other name.
SuiteReport run_suite(std::string_view name, const VerifyOptions& options = {});

}  // namespace refseg
