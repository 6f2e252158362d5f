#include "vimo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace vimo::metrics {

namespace {

void check_lengths(std::size_t rows, std::size_t labels) {
  if (rows == 0) throw std::invalid_argument("no predictions");
  if (rows != labels) throw std::invalid_argument("predictions and labels differ in length");
}

}  // namespace

double top1_accuracy(std::span<const std::vector<double>> predictions,
                     std::span<const std::size_t> labels) {
  check_lengths(predictions.size(), labels.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    if (p.empty()) throw std::invalid_argument("empty prediction row");
    // max_element returns the first maximum.
    const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    correct += best == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

double average_precision(std::span<const std::vector<double>> scores,
                         std::span<const std::size_t> labels, std::size_t cls) {
  check_lengths(scores.size(), labels.size());
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a].at(cls) > scores[b].at(cls);
  });
  std::size_t hits = 0;
  double total = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] != cls) continue;
    ++hits;
    total += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  if (hits == 0) return std::numeric_limits<double>::quiet_NaN();
  return total / static_cast<double>(hits);
}

double mean_average_precision(std::span<const std::vector<double>> scores,
                              std::span<const std::size_t> labels) {
  check_lengths(scores.size(), labels.size());
  const std::size_t classes = scores.front().size();
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double ap = average_precision(scores, labels, c);
    if (std::isnan(ap)) continue;
    total += ap;
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("no class has a positive sample");
  return total / static_cast<double>(counted);
}

double frame_rate(double frames_mean, double basis) {
  if (!(basis > 0.0)) throw std::invalid_argument("frame-rate basis must be positive");
  return frames_mean / basis;
}

CostReport flops_ledger(std::span<const EpisodeTrace> traces, const CostModel& model) {
  CostReport r;
  if (traces.empty()) return r;
  double frames = 0, spatial = 0, temporal = 0, policy = 0, integration = 0, classifier = 0;
  for (const auto& t : traces) {
    frames += static_cast<double>(t.frames);
    spatial += model.spatial_per_frame * static_cast<double>(t.frames);
    temporal += static_cast<double>(model.temporal_per_frame * t.frames);
    policy += static_cast<double>(model.policy_per_decision * t.decisions);
    auto it = model.integration_by_units.find(t.units);
    if (it == model.integration_by_units.end())
      throw std::invalid_argument("no integration cost for " + std::to_string(t.units) + " units");
    integration += static_cast<double>(it->second);
    classifier += static_cast<double>(model.classifier);
  }
  const double n = static_cast<double>(traces.size());
  r.frames_mean = frames / n;
  r.flops_spatial = spatial / n;
  r.flops_temporal = temporal / n;
  r.flops_policy = policy / n;
  r.flops_integration = integration / n;
  r.flops_classifier = classifier / n;
  r.flops_total = r.flops_spatial + r.flops_temporal + r.flops_policy + r.flops_integration +
                  r.flops_classifier;
  return r;
}

namespace {

struct Field {
  const char* key;
  double CostReport::*member;
};

constexpr Field kFields[] = {
    {"top1", &CostReport::top1},
    {"mAP", &CostReport::mAP},
    {"frame_rate", &CostReport::frame_rate},
    {"frames_mean", &CostReport::frames_mean},
    {"flops_total", &CostReport::flops_total},
    {"flops_spatial", &CostReport::flops_spatial},
    {"flops_temporal", &CostReport::flops_temporal},
    {"flops_policy", &CostReport::flops_policy},
    {"flops_integration", &CostReport::flops_integration},
    {"flops_classifier", &CostReport::flops_classifier},
};

}  // namespace

std::string serialize(const CostReport& report) {
  std::string out =
      "# FLOPs are modeled per video (mean); the spatial term uses a calibrated\n"
      "# per-frame constant, linear layers count 2*in*out, activations 1 per element.\n";
  char buf[64];
  for (const auto& f : kFields) {
    std::snprintf(buf, sizeof buf, "%.6g", report.*f.member);
    out += std::string(f.key) + "=" + buf + "\n";
  }
  return out;
}

CostReport parse_cost_report(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("malformed report line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  CostReport r;
  for (const auto& f : kFields) {
    auto it = kv.find(f.key);
    if (it == kv.end()) throw std::runtime_error(std::string("report missing key ") + f.key);
    try {
      std::size_t used = 0;
      r.*f.member = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument(it->second);
    } catch (const std::exception&) {
      throw std::runtime_error(std::string("bad value for ") + f.key + ": " + it->second);
    }
  }
  return r;
}

}  // namespace vimo::metrics
