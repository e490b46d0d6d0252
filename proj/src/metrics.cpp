#include "refseg/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace refseg {

double iou(const Tensor<float>& pred, const Tensor<float>& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("iou", 0, "mask shapes differ: " + to_string(pred.shape()) + " vs " + to_string(gt.shape()));
  }
  const auto& p = pred.values();
  const auto& g = gt.values();
  Index inter = 0, uni = 0;
  for (Index i = 0; i < p.size(); ++i) {
    const bool a = p(i) != 0.0f, b = g(i) != 0.0f;
    inter += a && b;
    uni += a || b;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double prec_at(const std::vector<double>& ious, double threshold) {
  if (ious.empty()) throw std::invalid_argument("prec_at: empty IoU list");
  const auto hits = std::count_if(ious.begin(), ious.end(), [&](double v) { return v > threshold; });
  return static_cast<double>(hits) / static_cast<double>(ious.size());
}

int length_bucket(int length) {
  for (std::size_t b = 0; b < kLengthBuckets.size(); ++b) {
    if (length >= kLengthBuckets[b].lo && length <= kLengthBuckets[b].hi) return static_cast<int>(b);
  }
  return -1;
}

MetricReport make_report(const std::vector<double>& ious, const std::vector<int>& lengths) {
  if (ious.size() != lengths.size()) throw std::invalid_argument("make_report: ious and lengths differ in size");
  if (ious.empty()) throw std::invalid_argument("make_report: no samples");
  MetricReport r;
  r.count = static_cast<int>(ious.size());
  r.mean_iou = std::accumulate(ious.begin(), ious.end(), 0.0) / static_cast<double>(ious.size());
  for (std::size_t t = 0; t < kPrecisionThresholds.size(); ++t) r.precision[t] = prec_at(ious, kPrecisionThresholds[t]);
  std::array<double, kLengthBuckets.size()> sums{};
  for (std::size_t b = 0; b < kLengthBuckets.size(); ++b) r.buckets[b].range = kLengthBuckets[b];
  for (std::size_t i = 0; i < ious.size(); ++i) {
    const int b = length_bucket(lengths[i]);
    if (b < 0) continue;
    r.buckets[static_cast<std::size_t>(b)].count++;
    sums[static_cast<std::size_t>(b)] += ious[i];
  }
  for (std::size_t b = 0; b < kLengthBuckets.size(); ++b) {
    if (r.buckets[b].count > 0) r.buckets[b].mean_iou = sums[b] / r.buckets[b].count;
  }
  return r;
}

namespace {

std::string threshold_key(double t) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.1f", t);
  return buf;
}

std::string bucket_key(const LengthBucket& b) { return std::to_string(b.lo) + "-" + std::to_string(b.hi); }

}  // namespace

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["count"] = count;
  j["mean_iou"] = mean_iou;
  nlohmann::ordered_json prec;
  for (std::size_t t = 0; t < precision.size(); ++t) prec[threshold_key(kPrecisionThresholds[t])] = precision[t];
  j["precision"] = prec;
  nlohmann::ordered_json bucket_list = nlohmann::ordered_json::array();
  for (const auto& b : buckets) {
    nlohmann::ordered_json entry;
    entry["range"] = bucket_key(b.range);
    entry["count"] = b.count;
    entry["mean_iou"] = b.count > 0 ? nlohmann::ordered_json(b.mean_iou) : nlohmann::ordered_json(nullptr);
    bucket_list.push_back(entry);
  }
  j["length_buckets"] = bucket_list;
  return j.dump();
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  char line[96];
  std::snprintf(line, sizeof line, "samples     %d\nmean IoU    %.4f\n", count, mean_iou);
  os << line;
  for (std::size_t t = 0; t < precision.size(); ++t) {
    std::snprintf(line, sizeof line, "Prec@%.1f    %.4f\n", kPrecisionThresholds[t], precision[t]);
    os << line;
  }
  os << "length      count   mean IoU\n";
  for (const auto& b : buckets) {
    if (b.count > 0) {
      std::snprintf(line, sizeof line, "%-10s  %5d   %.4f\n", bucket_key(b.range).c_str(), b.count, b.mean_iou);
    } else {
      std::snprintf(line, sizeof line, "%-10s  %5d   -\n", bucket_key(b.range).c_str(), b.count);
    }
    os << line;
  }
  return os.str();
}

}  // namespace refseg
