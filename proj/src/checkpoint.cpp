#include "vimo/checkpoint.hpp"

#include <fstream>
#include <limits>

#include "vimo/binary_io.hpp"

namespace vimo {

using binio::get_le;
using binio::put_le;

void save_checkpoint(const std::filesystem::path& path, const ParamList& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
  os.write("VIMC", 4);
  put_le<std::uint32_t>(os, kCheckpointVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    if (p.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw FormatError("parameter name too long: " + p.name);
    }
    put_le<std::uint16_t>(os, static_cast<std::uint16_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_le<std::uint8_t>(os, static_cast<std::uint8_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) {
      put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    }
    for (double v : p.tensor.values()) put_le<double>(os, v);
  }
  if (!os) throw FormatError("write failed for '" + path.string() + "'");
}

ParamList load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path.string() + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "VIMC") {
    throw FormatError("bad magic in checkpoint '" + path.string() + "'");
  }
  std::uint32_t version = 0, count = 0;
  if (!get_le(is, version) || !get_le(is, count)) {
    throw FormatError("truncated checkpoint header");
  }
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  ParamList params;
  params.reserve(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    std::uint16_t name_len = 0;
    if (!get_le(is, name_len)) throw FormatError("truncated checkpoint record");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw FormatError("truncated checkpoint name");
    std::uint8_t rank = 0;
    if (!get_le(is, rank)) throw FormatError("truncated checkpoint rank");
    Shape shape(rank);
    for (auto& d : shape) {
      std::uint32_t d32 = 0;
      if (!get_le(is, d32)) throw FormatError("truncated checkpoint dims");
      d = d32;
    }
    std::vector<double> values(shape_size(shape));
    for (double& v : values) {
      if (!get_le(is, v)) throw FormatError("truncated checkpoint payload");
    }
    params.push_back({std::move(name), Tensor::parameter(std::move(shape), std::move(values))});
  }
  return params;
}

}  // namespace vimo
