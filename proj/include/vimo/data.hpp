#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include "vimo/checkpoint.hpp"
#include "vimo/tensor.hpp"

namespace vimo::data {

/// One semantic unit of a synthetic video: a contiguous frame span showing
/// a single motif.
struct UnitSpec {
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // exclusive
  std::size_t motif_id = 0;
  std::vector<std::size_t> salient_frames;  // sorted, within [start, end)
};

struct VideoSample {
  Tensor features;  // [T x d]
  std::size_t label = 0;
  std::optional<std::vector<UnitSpec>> units;

  std::size_t num_frames() const { return features.dim(0); }
  std::size_t feature_dim() const { return features.dim(1); }
  /// Copy of frame `t` as a [d] vector.
  Tensor frame(std::size_t t) const;
};

struct DatasetSplit {
  std::vector<VideoSample> train;
  std::vector<VideoSample> test;
  std::size_t num_classes = 0;
  std::uint64_t seed = 0;
};

struct SyntheticSpec {
  std::size_t frames = 120;
  std::size_t feature_dim = 64;
  std::size_t num_classes = 10;
  std::size_t units = 3;
  std::size_t salient_per_unit = 2;
  double noise_std = 0.1;
  /// Fraction of non-salient frames replaced by pure noise.
  double distractor_fraction = 0.25;
  /// Magnitude of the motif direction in salient frames.
  double salient_gain = 1.0;
  /// Motif magnitude in a span's opening frame, which non-salient frames repeat.
  double context_gain = 1.0;
  /// Maximum shift of each interior unit boundary away from i·T/K.
  std::size_t boundary_jitter = 0;
  std::size_t n_train = 2000;
  std::size_t n_test = 500;
  std::uint64_t seed = 1;
};

/// Number of distinct motifs so that sums of `units` motif ids reach every
/// class: smallest M with units·(M-1) >= classes-1.
std::size_t motif_count(std::size_t units, std::size_t classes);

/// Fixed unit-norm motif directions for a dataset seed.
std::vector<std::vector<double>> motif_directions(const SyntheticSpec& spec);

/// Deterministic unit-structured dataset. Labels are (sum of motif ids)
/// mod C; salient frames carry the unit's motif direction, other frames of
/// a span repeat the span's (weakly informative) first frame plus noise, and a fraction are pure
/// noise distractors. Throws std::invalid_argument on infeasible geometry.
DatasetSplit generate_synthetic(const SyntheticSpec& spec);

// ---------------------------------------------------------------------------
// VIMF feature files: "VIMF", u32 version=1, u32 T, u32 d, u32 label,
// u32 num_classes, then T·d little-endian f32 row-major.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kFeatureFileVersion = 1;

struct FeatureFile {
  VideoSample sample;
  std::size_t num_classes = 0;
};

void write_feature_file(const std::filesystem::path& path, const VideoSample& sample,
                        std::size_t num_classes);
FeatureFile load_feature_file(const std::filesystem::path& path);

/// Loads every *.vimf in `dir` in filename order.
std::vector<FeatureFile> load_feature_dir(const std::filesystem::path& dir);

/// Writes train/ and test/ subdirectories of zero-padded VIMF files.
void write_split(const std::filesystem::path& dir, const DatasetSplit& split);
/// Reads a directory produced by write_split.
DatasetSplit load_split(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Partitions sample indices into batches. Each epoch is a permutation of
/// [0, n); with shuffling the order depends only on (seed, epoch).
class BatchIterator {
 public:
  BatchIterator(std::size_t num_samples, std::size_t batch_size, std::uint64_t seed,
                bool shuffle);

  std::vector<std::vector<std::size_t>> epoch(std::size_t epoch_index) const;

 private:
  std::size_t num_samples_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
};

std::vector<std::vector<std::size_t>> batch_iter(std::size_t num_samples,
                                                 std::size_t batch_size,
                                                 std::uint64_t seed, bool shuffle,
                                                 std::size_t epoch_index = 0);

/// Mixes a base seed with a stream tag; used wherever an independent RNG
/// stream is derived from the run seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace vimo::data
