#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "doctest.h"
#include "vimo/data.hpp"

using namespace vimo;
using namespace vimo::data;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.n_train = 60;
  s.n_test = 20;
  return s;
}

bool same_samples(const std::vector<VideoSample>& a, const std::vector<VideoSample>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto va = a[i].features.values(), vb = b[i].features.values();
    if (a[i].label != b[i].label || va.size() != vb.size()) return false;
    if (std::memcmp(va.data(), vb.data(), va.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

// Reads only the latent salient frames: nearest motif direction per unit,
// then the label rule.
std::size_t latent_oracle(const VideoSample& v, const std::vector<std::vector<double>>& dirs,
                          std::size_t classes) {
  std::size_t total = 0;
  for (const auto& u : *v.units) {
    const std::size_t t = u.salient_frames.front();
    std::size_t best = 0;
    double best_score = -1e300;
    for (std::size_t m = 0; m < dirs.size(); ++m) {
      double dot = 0;
      for (std::size_t j = 0; j < dirs[m].size(); ++j) dot += dirs[m][j] * v.features.at(t, j);
      if (dot > best_score) {
        best_score = dot;
        best = m;
      }
    }
    total += best;
  }
  return total % classes;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("vimo_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("generate_synthetic is deterministic per seed") {
  auto a = generate_synthetic(small_spec());
  auto b = generate_synthetic(small_spec());
  CHECK(same_samples(a.train, b.train));
  CHECK(same_samples(a.test, b.test));

  auto other = small_spec();
  other.seed = 2;
  CHECK_FALSE(same_samples(a.train, generate_synthetic(other).train));
}

TEST_CASE("noise-free latent oracle recovers every label") {
  auto spec = small_spec();
  spec.noise_std = 0.0;
  auto split = generate_synthetic(spec);
  const auto dirs = motif_directions(spec);
  std::size_t correct = 0, total = 0;
  for (const auto* part : {&split.train, &split.test})
    for (const auto& v : *part) {
      correct += latent_oracle(v, dirs, spec.num_classes) == v.label;
      ++total;
    }
  CHECK(correct == total);
}

TEST_CASE("synthetic structure invariants") {
  auto spec = small_spec();
  spec.boundary_jitter = 6;
  auto split = generate_synthetic(spec);
  std::vector<std::size_t> counts(spec.num_classes, 0);
  for (const auto& v : split.train) ++counts[v.label];
  CHECK(*std::max_element(counts.begin(), counts.end()) -
            *std::min_element(counts.begin(), counts.end()) <=
        1);
  for (const auto* part : {&split.train, &split.test})
    for (const auto& v : *part) {
      CHECK(v.label < spec.num_classes);
      CHECK(v.features.shape() == Shape{spec.frames, spec.feature_dim});
      REQUIRE(v.units);
      REQUIRE(v.units->size() == spec.units);
      std::size_t cursor = 0;
      for (const auto& u : *v.units) {
        CHECK(u.start == cursor);
        CHECK(u.end > u.start);
        CHECK(!u.salient_frames.empty());
        CHECK(std::is_sorted(u.salient_frames.begin(), u.salient_frames.end()));
        for (auto t : u.salient_frames) CHECK((t >= u.start && t < u.end));
        cursor = u.end;
      }
      CHECK(cursor == spec.frames);
    }
  CHECK(motif_count(3, 10) == 4);
}

TEST_CASE("generate_synthetic rejects infeasible geometry") {
  auto spec = small_spec();
  spec.frames = 5;
  CHECK_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
  spec = small_spec();
  spec.salient_per_unit = 0;
  CHECK_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
  spec = small_spec();
  spec.feature_dim = 4;
  CHECK_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
}

TEST_CASE("feature file round trip and errors") {
  auto dir = temp_dir("vimf");
  auto split = generate_synthetic(small_spec());
  const auto& v = split.train[3];
  write_feature_file(dir / "a.vimf", v, 10);
  auto loaded = load_feature_file(dir / "a.vimf");
  CHECK(loaded.num_classes == 10);
  CHECK(loaded.sample.label == v.label);
  CHECK_FALSE(loaded.sample.units.has_value());
  CHECK(same_samples({loaded.sample}, {v}));

  auto corrupt = [&](const std::string& name, auto mutate) {
    std::ifstream in(dir / "a.vimf", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    mutate(bytes);
    std::ofstream(dir / name, std::ios::binary) << bytes;
    return dir / name;
  };
  auto bad_magic = corrupt("m.vimf", [](std::string& b) { b.replace(0, 4, "XXXX"); });
  CHECK_THROWS_WITH_AS(load_feature_file(bad_magic), doctest::Contains("bad magic"), FormatError);
  auto bad_version = corrupt("v.vimf", [](std::string& b) { b[4] = 7; });
  CHECK_THROWS_AS(load_feature_file(bad_version), FormatError);
  auto zero_t = corrupt("t.vimf", [](std::string& b) { std::memset(&b[8], 0, 4); });
  CHECK_THROWS_WITH_AS(load_feature_file(zero_t), doctest::Contains("malformed header"),
                       FormatError);
  auto truncated = corrupt("x.vimf", [](std::string& b) { b.resize(b.size() - 3); });
  CHECK_THROWS_WITH_AS(load_feature_file(truncated), doctest::Contains("truncated"),
                       FormatError);
  auto bad_label = corrupt("l.vimf", [](std::string& b) { b[16] = 12; });
  CHECK_THROWS_AS(load_feature_file(bad_label), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("split directories round trip") {
  auto dir = temp_dir("split");
  auto spec = small_spec();
  spec.n_train = 12;
  spec.n_test = 5;
  auto split = generate_synthetic(spec);
  write_split(dir, split);
  auto back = load_split(dir);
  CHECK(back.num_classes == split.num_classes);
  CHECK(same_samples(back.train, split.train));
  CHECK(same_samples(back.test, split.test));
  std::filesystem::remove_all(dir);
}

TEST_CASE("batch iteration") {
  auto sizes = [](const std::vector<std::vector<std::size_t>>& b) {
    std::vector<std::size_t> s;
    for (const auto& x : b) s.push_back(x.size());
    return s;
  };
  auto plain = batch_iter(10, 3, 1, false);
  CHECK(sizes(plain) == std::vector<std::size_t>{3, 3, 3, 1});
  std::vector<std::size_t> flat;
  for (const auto& b : plain) flat.insert(flat.end(), b.begin(), b.end());
  std::vector<std::size_t> order(10);
  std::iota(order.begin(), order.end(), 0);
  CHECK(flat == order);

  BatchIterator it(50, 8, 9, true);
  auto flatten = [](const std::vector<std::vector<std::size_t>>& b) {
    std::vector<std::size_t> f;
    for (const auto& x : b) f.insert(f.end(), x.begin(), x.end());
    return f;
  };
  auto e0 = flatten(it.epoch(0)), e1 = flatten(it.epoch(1));
  CHECK(e0 != e1);
  for (auto e : {e0, e1}) {
    std::sort(e.begin(), e.end());
    CHECK(e == std::vector<std::size_t>([] {
            std::vector<std::size_t> v(50);
            std::iota(v.begin(), v.end(), 0);
            return v;
          }()));
  }
  CHECK(flatten(BatchIterator(50, 8, 9, true).epoch(1)) == e1);
  CHECK_THROWS_AS(batch_iter(0, 3, 1, false), std::invalid_argument);
  CHECK_THROWS_AS(batch_iter(5, 0, 1, false), std::invalid_argument);
}
