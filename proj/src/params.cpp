#include "vimo/params.hpp"

#include <cmath>
#include <cstring>
#include <unordered_map>

namespace vimo {

ParamList prefixed(const std::string& prefix, ParamList params) {
  for (auto& p : params) p.name = prefix + "." + p.name;
  return params;
}

void append(ParamList& into, ParamList more) {
  for (auto& p : more) into.push_back(std::move(p));
}

std::uint64_t checksum(const ParamList& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& p : params) {
    mix(p.name.data(), p.name.size());
    for (std::size_t d : p.tensor.shape()) {
      const std::uint64_t d64 = d;
      mix(&d64, sizeof d64);
    }
    mix(p.tensor.values().data(), p.tensor.size() * sizeof(double));
  }
  return h;
}

void zero_grad(ParamList& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

void assign_values(ParamList& target, const ParamList& source) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& p : source) by_name.emplace(p.name, &p.tensor);
  for (auto& p : target) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw NumericError("missing parameter '" + p.name + "'");
    }
    if (it->second->shape() != p.tensor.shape()) {
      throw NumericError("shape mismatch for parameter '" + p.name + "'");
    }
    auto dst = p.tensor.mutable_values();
    auto src = it->second->values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

std::vector<double> uniform_init(std::size_t count, std::size_t fan_in,
                                 std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(count);
  for (double& x : v) x = dist(rng);
  return v;
}

}  // namespace vimo
