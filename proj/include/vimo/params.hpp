#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "vimo/tensor.hpp"

namespace vimo {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

/// Prepends `prefix` + "." to every name.
ParamList prefixed(const std::string& prefix, ParamList params);
void append(ParamList& into, ParamList more);

/// FNV-1a over names, shapes and value bytes. Used to enforce freeze
/// contracts between training stages.
std::uint64_t checksum(const ParamList& params);

void zero_grad(ParamList& params);

/// Copies values by name from `source` into `target`; names must match
/// exactly and shapes must agree.
void assign_values(ParamList& target, const ParamList& source);

/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
std::vector<double> uniform_init(std::size_t count, std::size_t fan_in,
                                 std::mt19937_64& rng);

}  // namespace vimo
