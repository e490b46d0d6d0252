#pragma once

#include "refseg/tensor.hpp"

#include <array>
#include <string>
#include <vector>

namespace refseg {

inline constexpr std::array<double, 5> kPrecisionThresholds{0.5, 0.6, 0.7, 0.8, 0.9};

struct LengthBucket {
  int lo;
  int hi;
};
inline constexpr std::array<LengthBucket, 4> kLengthBuckets{{{1, 5}, {6, 7}, {8, 10}, {11, 20}}};

/// Intersection over union of two binary masks (nonzero = foreground).
/// Both empty gives 1, exactly one empty gives 0.
double iou(const Tensor<float>& pred, const Tensor<float>& gt);

/// Fraction of `ious` strictly greater than `threshold`.
double prec_at(const std::vector<double>& ious, double threshold);

/// Bucket index of an expression length, or -1 outside every bucket.
int length_bucket(int length);

struct BucketStats {
  LengthBucket range;
  int count = 0;
  double mean_iou = 0.0;
};

struct MetricReport {
  int count = 0;
  double mean_iou = 0.0;
  std::array<double, kPrecisionThresholds.size()> precision{};
  std::array<BucketStats, kLengthBuckets.size()> buckets{};

  std::string to_json() const;
  std::string to_table() const;
};

MetricReport make_report(const std::vector<double>& ious, const std::vector<int>& lengths);

}  // namespace refseg
