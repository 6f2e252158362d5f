#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace vimo::metrics {

/// Fraction of rows whose argmax equals the label; ties go to the lowest index.
double top1_accuracy(std::span<const std::vector<double>> predictions,
                     std::span<const std::size_t> labels);

/// Average precision of one class: videos ranked by score descending, equal
/// scores ordered by video index. Returns NaN when there are no positives.
double average_precision(std::span<const std::vector<double>> scores,
                         std::span<const std::size_t> labels, std::size_t cls);

/// Unweighted mean of per-class AP over classes with at least one positive.
double mean_average_precision(std::span<const std::vector<double>> scores,
                              std::span<const std::size_t> labels);

double frame_rate(double frames_mean, double basis = 120.0);

/// Per-video compute trace of one evaluated episode.
struct EpisodeTrace {
  std::size_t frames = 0;
  std::size_t decisions = 0;
  std::size_t units = 0;
};

/// Analytic per-event FLOPs of a model.
struct CostModel {
  double spatial_per_frame = 0.0;
  std::uint64_t temporal_per_frame = 0;
  std::uint64_t policy_per_decision = 0;
  /// Integration FLOPs keyed by unit count.
  std::map<std::size_t, std::uint64_t> integration_by_units;
  std::uint64_t classifier = 0;
};

struct CostReport {
  double top1 = 0.0;
  double mAP = 0.0;
  double frame_rate = 0.0;
  double frames_mean = 0.0;
  double flops_total = 0.0;
  double flops_spatial = 0.0;
  double flops_temporal = 0.0;
  double flops_policy = 0.0;
  double flops_integration = 0.0;
  double flops_classifier = 0.0;

  bool operator==(const CostReport&) const = default;
};

/// Mean per-video FLOPs by component; flops_total is their sum.
CostReport flops_ledger(std::span<const EpisodeTrace> traces, const CostModel& model);

/// Fixed-key "key=value" lines, reals at 6 significant digits, preceded by
/// '#' comments documenting the cost constants.
std::string serialize(const CostReport& report);
/// Throws std::runtime_error on a missing or malformed key.
CostReport parse_cost_report(const std::string& text);

}  // namespace vimo::metrics
