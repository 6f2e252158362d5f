#include "vimo/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "vimo/binary_io.hpp"

namespace vimo::data {

namespace {

using binio::get_le;
using binio::put_le;

constexpr std::uint64_t kDirectionStream = 0x6d6f74696full;
constexpr std::uint64_t kLabelStream = 0x6c6162656cull;
constexpr std::uint64_t kVideoStream = 0x766964656full;

// All K-tuples over [0, M) grouped by (sum mod C).
std::vector<std::vector<std::vector<std::size_t>>> tuples_by_label(std::size_t units,
                                                                   std::size_t motifs,
                                                                   std::size_t classes) {
  std::vector<std::vector<std::vector<std::size_t>>> out(classes);
  std::vector<std::size_t> tuple(units, 0);
  while (true) {
    const std::size_t s = std::accumulate(tuple.begin(), tuple.end(), std::size_t{0});
    out[s % classes].push_back(tuple);
    std::size_t k = 0;
    while (k < units && ++tuple[k] == motifs) tuple[k++] = 0;
    if (k == units) break;
  }
  return out;
}

std::vector<std::size_t> balanced_labels(std::size_t n, std::size_t classes,
                                         std::mt19937_64& rng) {
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % classes;
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

VideoSample make_video(const SyntheticSpec& spec,
                       const std::vector<std::vector<double>>& directions,
                       const std::vector<std::size_t>& motifs, std::size_t label,
                       std::mt19937_64& rng) {
  const std::size_t T = spec.frames, d = spec.feature_dim, K = spec.units;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit01(0.0, 1.0);

  // Unit boundaries: i·T/K shifted by up to ±jitter, keeping every span at
  // least two frames long.
  std::vector<std::size_t> bounds(K + 1);
  bounds[0] = 0;
  bounds[K] = T;
  for (std::size_t k = 1; k < K; ++k) {
    long b = static_cast<long>(k * T / K);
    if (spec.boundary_jitter > 0) {
      std::uniform_int_distribution<long> shift(-static_cast<long>(spec.boundary_jitter),
                                                static_cast<long>(spec.boundary_jitter));
      b += shift(rng);
    }
    const long lo = static_cast<long>(bounds[k - 1]) + 2;
    const long hi = static_cast<long>(T) - 2 * static_cast<long>(K - k);
    bounds[k] = static_cast<std::size_t>(std::clamp(b, lo, hi));
  }

  std::vector<double> features(T * d, 0.0);
  std::vector<UnitSpec> units;
  for (std::size_t k = 0; k < K; ++k) {
    UnitSpec u;
    u.start = bounds[k];
    u.end = bounds[k + 1];
    u.motif_id = motifs[k];
    const std::size_t len = u.end - u.start;
    std::vector<std::size_t> positions(len);
    std::iota(positions.begin(), positions.end(), u.start);
    std::shuffle(positions.begin(), positions.end(), rng);
    const std::size_t n_salient = std::min(spec.salient_per_unit, len);
    u.salient_frames.assign(positions.begin(), positions.begin() + n_salient);
    std::sort(u.salient_frames.begin(), u.salient_frames.end());

    const auto& dir = directions[u.motif_id];
    std::vector<double> first(d);
    for (std::size_t t = u.start; t < u.end; ++t) {
      double* f = features.data() + t * d;
      const bool salient = std::binary_search(u.salient_frames.begin(),
                                              u.salient_frames.end(), t);
      if (salient) {
        for (std::size_t j = 0; j < d; ++j) {
          f[j] = spec.salient_gain * dir[j] + spec.noise_std * noise(rng);
        }
      } else if (t != u.start && unit01(rng) < spec.distractor_fraction) {
        for (std::size_t j = 0; j < d; ++j) f[j] = spec.noise_std * noise(rng);
      } else if (t == u.start) {
        // Opening frame: a weak view of the motif that the rest of the span repeats.
        for (std::size_t j = 0; j < d; ++j) {
          f[j] = spec.context_gain * dir[j] + spec.noise_std * noise(rng);
        }
      } else {
        for (std::size_t j = 0; j < d; ++j) f[j] = first[j] + spec.noise_std * noise(rng);
      }
      if (t == u.start) std::copy(f, f + d, first.begin());
    }
    units.push_back(std::move(u));
  }
  for (double& v : features) v = to_f32(v);

  VideoSample sample;
  sample.features = Tensor::from({T, d}, std::move(features));
  sample.label = label;
  sample.units = std::move(units);
  return sample;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  // splitmix64 finalizer over the combined value.
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

Tensor VideoSample::frame(std::size_t t) const {
  const std::size_t d = feature_dim();
  if (t >= num_frames()) throw NumericError("frame index out of range");
  auto v = features.values().subspan(t * d, d);
  return Tensor::vector(std::vector<double>(v.begin(), v.end()));
}

std::size_t motif_count(std::size_t units, std::size_t classes) {
  if (units == 0) throw std::invalid_argument("motif_count: zero units");
  return (classes - 1 + units - 1) / units + 1;
}

std::vector<std::vector<double>> motif_directions(const SyntheticSpec& spec) {
  const std::size_t M = motif_count(spec.units, spec.num_classes);
  std::mt19937_64 rng(derive_seed(spec.seed, kDirectionStream));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> dirs(M, std::vector<double>(spec.feature_dim));
  for (auto& dir : dirs) {
    double norm = 0.0;
    for (double& v : dir) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : dir) v /= norm;
  }
  return dirs;
}

DatasetSplit generate_synthetic(const SyntheticSpec& spec) {
  if (spec.units == 0 || spec.units * 2 > spec.frames) {
    throw std::invalid_argument("generate_synthetic: " + std::to_string(spec.units) +
                                " units do not fit in " + std::to_string(spec.frames) +
                                " frames");
  }
  if (spec.salient_per_unit < 1) {
    throw std::invalid_argument("generate_synthetic: salient_per_unit must be >= 1");
  }
  if (spec.num_classes < 1 || spec.feature_dim < spec.num_classes) {
    throw std::invalid_argument("generate_synthetic: need feature_dim >= num_classes >= 1");
  }
  if (spec.n_train == 0 || spec.n_test == 0) {
    throw std::invalid_argument("generate_synthetic: empty split");
  }
  if (spec.noise_std < 0.0 || spec.distractor_fraction < 0.0 ||
      spec.distractor_fraction > 1.0) {
    throw std::invalid_argument("generate_synthetic: invalid noise settings");
  }

  const auto directions = motif_directions(spec);
  const auto tuples = tuples_by_label(spec.units, directions.size(), spec.num_classes);

  DatasetSplit split;
  split.num_classes = spec.num_classes;
  split.seed = spec.seed;
  std::mt19937_64 label_rng(derive_seed(spec.seed, kLabelStream));
  const auto train_labels = balanced_labels(spec.n_train, spec.num_classes, label_rng);
  const auto test_labels = balanced_labels(spec.n_test, spec.num_classes, label_rng);

  auto build = [&](const std::vector<std::size_t>& labels, std::size_t offset,
                   std::vector<VideoSample>& out) {
    out.reserve(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      std::mt19937_64 rng(derive_seed(spec.seed, kVideoStream + offset + i));
      const auto& options = tuples[labels[i]];
      std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
      out.push_back(make_video(spec, directions, options[pick(rng)], labels[i], rng));
    }
  };
  build(train_labels, 0, split.train);
  build(test_labels, spec.n_train, split.test);
  return split;
}

// ---------------------------------------------------------------------------
// VIMF
// ---------------------------------------------------------------------------

void write_feature_file(const std::filesystem::path& path, const VideoSample& sample,
                        std::size_t num_classes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
  os.write("VIMF", 4);
  put_le<std::uint32_t>(os, kFeatureFileVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(sample.num_frames()));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(sample.feature_dim()));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(sample.label));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(num_classes));
  for (double v : sample.features.values()) put_le<float>(os, static_cast<float>(v));
  if (!os) throw FormatError("write failed for '" + path.string() + "'");
}

FeatureFile load_feature_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path.string() + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "VIMF") {
    throw FormatError("bad magic in '" + path.string() + "'");
  }
  std::uint32_t version = 0, T = 0, d = 0, label = 0, classes = 0;
  if (!get_le(is, version)) throw FormatError("truncated header in '" + path.string() + "'");
  if (version != kFeatureFileVersion) {
    throw FormatError("unsupported VIMF version " + std::to_string(version));
  }
  if (!get_le(is, T) || !get_le(is, d) || !get_le(is, label) || !get_le(is, classes)) {
    throw FormatError("truncated header in '" + path.string() + "'");
  }
  if (T == 0 || d == 0 || classes == 0) {
    throw FormatError("malformed header in '" + path.string() + "': zero dimension");
  }
  if (label >= classes) {
    throw FormatError("label " + std::to_string(label) + " >= num_classes " +
                      std::to_string(classes) + " in '" + path.string() + "'");
  }
  std::vector<double> values(static_cast<std::size_t>(T) * d);
  for (double& v : values) {
    float f = 0.0f;
    if (!get_le(is, f)) throw FormatError("truncated payload in '" + path.string() + "'");
    if (!std::isfinite(f)) throw FormatError("non-finite feature in '" + path.string() + "'");
    v = f;
  }
  FeatureFile out;
  out.sample.features = Tensor::from({T, d}, std::move(values));
  out.sample.label = label;
  out.num_classes = classes;
  return out;
}

std::vector<FeatureFile> load_feature_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".vimf") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<FeatureFile> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_feature_file(f));
  return out;
}

void write_split(const std::filesystem::path& dir, const DatasetSplit& split) {
  auto write_all = [&](const std::string& name, const std::vector<VideoSample>& samples) {
    const auto sub = dir / name;
    std::filesystem::create_directories(sub);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      char file[32];
      std::snprintf(file, sizeof file, "%06zu.vimf", i);
      write_feature_file(sub / file, samples[i], split.num_classes);
    }
  };
  write_all("train", split.train);
  write_all("test", split.test);
}

DatasetSplit load_split(const std::filesystem::path& dir) {
  DatasetSplit split;
  auto read_all = [&](const std::string& name, std::vector<VideoSample>& out) {
    for (auto& f : load_feature_dir(dir / name)) {
      if (split.num_classes == 0) split.num_classes = f.num_classes;
      if (f.num_classes != split.num_classes) {
        throw FormatError("inconsistent num_classes across feature files");
      }
      out.push_back(std::move(f.sample));
    }
  };
  read_all("train", split.train);
  read_all("test", split.test);
  if (split.train.empty() || split.test.empty()) {
    throw FormatError("feature directory '" + dir.string() + "' lacks train/ or test/ files");
  }
  return split;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

BatchIterator::BatchIterator(std::size_t num_samples, std::size_t batch_size,
                             std::uint64_t seed, bool shuffle)
    : num_samples_(num_samples), batch_size_(batch_size), seed_(seed), shuffle_(shuffle) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (num_samples == 0) throw std::invalid_argument("cannot batch an empty split");
}

std::vector<std::vector<std::size_t>> BatchIterator::epoch(std::size_t epoch_index) const {
  std::vector<std::size_t> order(num_samples_);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle_) {
    std::mt19937_64 rng(derive_seed(seed_, epoch_index));
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size_) {
    const std::size_t end = std::min(order.size(), i + batch_size_);
    batches.emplace_back(order.begin() + static_cast<long>(i),
                         order.begin() + static_cast<long>(end));
  }
  return batches;
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t num_samples,
                                                 std::size_t batch_size,
                                                 std::uint64_t seed, bool shuffle,
                                                 std::size_t epoch_index) {
  return BatchIterator(num_samples, batch_size, seed, shuffle).epoch(epoch_index);
}

}  // namespace vimo::data
