#pragma once

#include "refseg/io.hpp"
#include "refseg/metrics.hpp"
#include "refseg/model.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace refseg {

enum class Precision { f32, f64 };

std::string_view name(Precision p);
Precision parse_precision(std::string_view s);

/// uniform: the per-module uniform draws of ModelParams::init.
/// calibrated: the same draws rescaled by calibrate() on the first
/// `calibration_samples` training examples.
enum class InitScheme { uniform, calibrated };

std::string_view name(InitScheme s);
InitScheme parse_init_scheme(std::string_view s);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0005;
};

struct TrainConfig {
  double base_lr = 0.00025;
  double power = 0.9;
  int max_iters = 5000;
  /// Samples whose gradients are averaged per optimizer step.
  int batch_size = 1;
  std::uint64_t seed = 1;
  Precision precision = Precision::f32;
  std::string profile = "desk";
  AdamHyper adam;
  /// Held-out evaluation period in iterations (0 = only at the end).
  int eval_every = 500;
  /// Held-out samples used by periodic evaluation (0 = all).
  int eval_limit = 0;
  /// Checkpoint period in iterations (0 = initial and final only).
  int checkpoint_every = 1000;
  /// Worker threads for the per-sample passes of one batch (0 = REFSEG_THREADS or 1).
  int threads = 0;
  /// Adds a mirrored copy of every training example to the sampling pool.
  bool mirror = false;
  InitScheme init = InitScheme::uniform;
  int calibration_samples = 16;

  /// Checks every field; max_iters may be 0 (initial checkpoint only).
  void validate() const;
};

/// base_lr * (1 - iter / max_iters)^power. Requires max_iters >= 1.
double poly_lr(int iter, const TrainConfig& config);

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::string what, std::string parameter)
      : std::runtime_error(std::move(what)), parameter_(std::move(parameter)) {}
  const std::string& parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

template <typename T>
struct AdamState {
  std::vector<Buffer<T>> m;
  std::vector<Buffer<T>> v;
  std::int64_t t = 0;

  static AdamState zeros_like(std::span<const Tensor<T>> params);
};

/// One Adam update with L2 decay folded into the gradient. `names` label the
/// parameters in diagnostics.
template <typename T>
void adam_step(std::span<Tensor<T>> params, std::span<const Tensor<T>> grads, std::span<const std::string> names,
               AdamState<T>& state, double lr, const AdamHyper& hyper = {});

/// Model tensors in visit order, and back.
template <typename T>
std::vector<Tensor<T>> flatten(const ModelParams<T>& params);
template <typename T>
void unflatten(ModelParams<T>& params, std::span<const Tensor<T>> values);

/// A sample converted for the network: image in T, target [1, H, W].
template <typename T>
struct Example {
  int id = 0;
  Tensor<T> image;
  Tensor<T> target;
  Tensor<float> mask;
  TokenSequence tokens;
};

template <typename T>
std::vector<Example<T>> prepare(const std::vector<Sample>& samples, const Vocabulary& vocab, int max_length,
                                std::ostream* warnings = nullptr);

/// Left-right mirror of an example: image, target and mask flipped along the
/// width, and the horizontal direction words swapped (left <-> right,
/// leftmost <-> rightmost) so the expression still names the same object.
template <typename T>
Example<T> mirror(const Example<T>& ex, const Vocabulary& vocab);

/// Loss and parameter gradients of one example.
template <typename T>
struct SampleGrad {
  double loss = 0.0;
  std::vector<Tensor<T>> grads;
};

template <typename T>
SampleGrad<T> sample_gradient(const ModelParams<T>& params, const ModelDims& dims, const Example<T>& ex);

struct EvalResult {
  MetricReport report;
  double mean_loss = 0.0;
  std::vector<double> ious;
  std::vector<double> losses;
};

template <typename T>
EvalResult evaluate(const ModelParams<T>& params, const ModelDims& dims, std::span<const Example<T>> examples,
                    int threads = 1);

/// Everything a run needs to resume or evaluate.
template <typename T>
struct Checkpoint {
  ModelDims dims;
  Vocabulary vocab;
  TrainConfig train;
  ModelParams<T> params;
  AdamState<T> adam;
  int iteration = 0;
};

class CheckpointError : public FormatError {
 public:
  using FormatError::FormatError;
};

inline constexpr char kCheckpointMagic[8] = {'R', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ckpt);
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

/// Precision recorded in a checkpoint header.
Precision checkpoint_precision(const std::filesystem::path& path);

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, int iteration) : std::runtime_error(what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

struct TrainPaths {
  std::filesystem::path out;
  std::filesystem::path log() const { return out / "metrics.jsonl"; }
  std::filesystem::path latest() const { return out / "latest.ckpt"; }
  std::filesystem::path at(int iteration) const;
};

/// Index of the sample fed at (iteration, slot); a fixed function of the seed.
std::size_t batch_index(std::uint64_t seed, int iteration, int slot, int batch_size, std::size_t dataset_size);

/// Runs the training loop from `start` (a fresh or loaded checkpoint),
/// writing checkpoints and the metrics log under `paths.out`. Throws
/// TrainingAborted on a non-finite loss or gradient; the last written
/// checkpoint is left in place.
template <typename T>
Checkpoint<T> train(Checkpoint<T> start, const std::vector<Sample>& train_set, const std::vector<Sample>& eval_set,
                    const TrainPaths& paths, std::ostream* progress = nullptr);

/// Worker count from REFSEG_THREADS, falling back to `fallback`.
int env_threads(int fallback = 1);

}  // namespace refseg
