#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "vimo/checkpoint.hpp"
#include "vimo/optim.hpp"
#include "vimo/tensor.hpp"

using namespace vimo;
using vimo::testing::gradcheck;
using vimo::testing::project;
using vimo::testing::random_tensor;

namespace {

// Naive triple loop kept separate from the kernel under test.
std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) out[i * n + j] += a.at(i, p) * b.at(p, j);
  return out;
}

}  // namespace

TEST_CASE("matmul examples") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(matmul(eye, m).to_vector() == std::vector<double>{1, 2, 3, 4});

  Tensor r = Tensor::from({1, 2}, {1, 0});
  Tensor c = Tensor::from({2, 1}, {0, 5});
  CHECK(matmul(r, c).to_vector() == std::vector<double>{0});

  std::mt19937_64 rng(7);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  auto got = matmul(a, b).to_vector();
  auto want = naive_matmul(a, b);
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));

  CHECK_THROWS_AS(matmul(a, a), NumericError);
}

TEST_CASE("elementwise examples and errors") {
  Tensor z = Tensor::zeros({3});
  CHECK(tanh(z).to_vector() == std::vector<double>{0, 0, 0});
  CHECK(sigmoid(z).to_vector() == std::vector<double>{0.5, 0.5, 0.5});
  CHECK(relu(Tensor::vector({-1, 2})).to_vector() == std::vector<double>{0, 2});

  std::vector<Tensor> pair{Tensor::vector({1, 2}), Tensor::vector({3, 5})};
  CHECK(elementwise(ElementwiseOp::sub, pair).to_vector() == std::vector<double>{-2, -3});
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), NumericError);
  CHECK_THROWS_AS(log(Tensor::vector({1.0, 0.0})), NumericError);
  CHECK_THROWS_AS(log(Tensor::vector({-2.0})), NumericError);
  CHECK_THROWS_AS(exp(Tensor::vector({1000.0})), NumericError);
}

TEST_CASE("softmax examples and invariants") {
  CHECK(softmax(Tensor::vector({0, 0})).to_vector() == std::vector<double>{0.5, 0.5});
  auto big = softmax(Tensor::vector({1000, 1000, 1000})).to_vector();
  for (double p : big) CHECK(p == doctest::Approx(1.0 / 3).epsilon(1e-12));
  auto closed = softmax(Tensor::vector({std::log(1.0), std::log(3.0)})).to_vector();
  CHECK(closed[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(closed[1] == doctest::Approx(0.75).epsilon(1e-12));

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> shift(-50, 50);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + trial % 9;
    Tensor x = random_tensor({n}, rng, -20, 20, false);
    auto p = softmax(x).to_vector();
    double total = 0;
    for (double v : p) {
      CHECK(v > 0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
    auto q = softmax(add_scalar(x, shift(rng))).to_vector();
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(p[i] - q[i]) < 1e-9);
  }
}

TEST_CASE("cross entropy examples") {
  CHECK(cross_entropy(Tensor::zeros({4}), 2).item() == doctest::Approx(std::log(4.0)));
  CHECK(cross_entropy(Tensor::vector({100, 0}), 0).item() < 1e-40);
  // Direct scalar evaluation of -log softmax.
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  const double want = -std::log(std::exp(3.0) / z);
  CHECK(cross_entropy(Tensor::vector({1, 2, 3}), 2).item() == doctest::Approx(want).epsilon(1e-12));
  CHECK_THROWS_AS(cross_entropy(Tensor::vector({1, 2}), 2), NumericError);
}

TEST_CASE("backward examples") {
  Tensor x = Tensor::parameter({2, 3}, {1, 2, 3, 4, 5, 6});
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(x));
  }
  CHECK(x.grad() == std::vector<double>(6, 1.0));

  Tensor s = Tensor::parameter({1}, {3.0});
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(mul(s, s));
  }
  CHECK(s.grad()[0] == doctest::Approx(6.0));

  Tape empty;
  CHECK_NOTHROW(empty.backward(Tensor::scalar(1.0)));
  CHECK_THROWS_AS(empty.backward(Tensor::zeros({2})), NumericError);
}

TEST_CASE("tape replays in reverse recording order") {
  Tensor x = Tensor::parameter({3}, {0.1, 0.2, 0.3});
  Tape tape;
  TapeScope scope(tape);
  Tensor y = tanh(x);
  Tensor z = mul(y, y);
  Tensor loss = sum(z);
  REQUIRE(tape.size() == 3);
  CHECK(tape.nodes()[0].output == y.impl());
  CHECK(tape.nodes()[2].output == loss.impl());
  // Every node's inputs were produced earlier (or are leaves).
  for (std::size_t i = 0; i < tape.size(); ++i) {
    for (const auto& in : tape.nodes()[i].inputs) {
      for (std::size_t j = i; j < tape.size(); ++j) CHECK(tape.nodes()[j].output != in);
    }
  }
}

TEST_CASE("no recording outside a tape scope") {
  Tensor x = Tensor::parameter({2}, {1, 2});
  Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("finite-difference check of every differentiable primitive") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> dim(1, 4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    Tensor a = random_tensor({m, k}, rng);
    Tensor b = random_tensor({k, n}, rng);
    Tensor c = random_tensor({m, k}, rng);
    Tensor v = random_tensor({k}, rng);
    Tensor w = random_tensor({n, k}, rng);
    Tensor bias = random_tensor({n}, rng);
    Tensor pos = random_tensor({m, k}, rng, 0.5, 2.0);
    Tensor s = random_tensor({1}, rng);
    Tensor gamma = random_tensor({k}, rng);
    Tensor beta = random_tensor({k}, rng);
    const auto seed = static_cast<std::uint64_t>(trial);

    CHECK(gradcheck([&] { return project(matmul(a, b), seed); }, {a, b}) < 1e-4);
    CHECK(gradcheck([&] { return project(add(a, c), seed); }, {a, c}) < 1e-4);
    CHECK(gradcheck([&] { return project(sub(a, c), seed); }, {a, c}) < 1e-4);
    CHECK(gradcheck([&] { return project(mul(a, c), seed); }, {a, c}) < 1e-4);
    CHECK(gradcheck([&] { return project(tanh(a), seed); }, {a}) < 1e-4);
    CHECK(gradcheck([&] { return project(sigmoid(a), seed); }, {a}) < 1e-4);
    CHECK(gradcheck([&] { return project(exp(a), seed); }, {a}) < 1e-4);
    CHECK(gradcheck([&] { return project(log(pos), seed); }, {pos}) < 1e-4);
    CHECK(gradcheck([&] { return project(softmax(a), seed); }, {a}) < 1e-4);
    CHECK(gradcheck([&] { return project(log_softmax(a), seed); }, {a}) < 1e-4);
    CHECK(gradcheck([&] { return project(linear(a, w, bias), seed); }, {a, w, bias}) < 1e-4);
    CHECK(gradcheck([&] { return project(linear(v, w, bias), seed); }, {v, w, bias}) < 1e-4);
    CHECK(gradcheck([&] { return project(transpose(a), seed); }, {a}) < 1e-4);
    CHECK(gradcheck([&] { return project(scale_by(a, s), seed); }, {a, s}) < 1e-4);
    CHECK(gradcheck([&] { return cross_entropy(v, trial % k); }, {v}) < 1e-4);
    CHECK(gradcheck([&] { return project(mean_rows(a), seed); }, {a}) < 1e-4);
    CHECK(gradcheck([&] { return project(slice_cols(a, 0, k), seed); }, {a}) < 1e-4);
    CHECK(gradcheck([&] { return project(concat({v, v}), seed); }, {v}) < 1e-4);
    if (k > 1) {
      CHECK(gradcheck([&] { return project(layer_norm(a, gamma, beta, 1e-5), seed); },
                      {a, gamma, beta}) < 1e-4);
    }
  }
}

TEST_CASE("relu and max have piecewise gradients away from kinks") {
  Tensor x = Tensor::parameter({4}, {-1.5, -0.3, 0.4, 2.0});
  CHECK(gradcheck([&] { return project(relu(x), 3); }, {x}) < 1e-4);
  Tensor m = Tensor::parameter({3, 2}, {0.1, 0.9, 0.5, -0.2, 0.3, 0.4});
  CHECK(gradcheck([&] { return project(max_rows(m), 4); }, {m}) < 1e-4);
}

TEST_CASE("gradients are additive across losses") {
  std::mt19937_64 rng(5);
  Tensor w = random_tensor({3, 3}, rng);
  Tensor x = random_tensor({3}, rng, -1, 1, false);
  auto loss1 = [&] { return sum(tanh(linear(x, w, Tensor::zeros({3})))); };
  auto loss2 = [&] { return dot(sigmoid(linear(x, w, Tensor::zeros({3}))), x); };

  w.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(add(loss1(), loss2()));
  }
  auto joint = w.grad();

  w.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(loss1());
  }
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(loss2());
  }
  auto separate = w.grad();
  for (std::size_t i = 0; i < joint.size(); ++i) CHECK(joint[i] == doctest::Approx(separate[i]).epsilon(1e-12));
}

TEST_CASE("adam examples") {
  AdamOptions opts;
  opts.lr = 0.01;
  std::vector<double> p{1.0, -2.0};
  std::vector<double> g{0.5, -3.0};
  AdamState st;
  adam_update(p, g, st, opts);
  CHECK(p[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));

  std::vector<double> q{3.0};
  std::vector<double> zero{0.0};
  AdamState st2;
  adam_update(q, zero, st2, opts);
  CHECK(q[0] == 3.0);

  // f(x) = x², three steps from 1 with lr 0.1.
  Tensor x = Tensor::parameter({1}, {1.0});
  Adam adam({{"x", x}}, {.lr = 0.1});
  double prev = std::abs(x[0]);
  for (int i = 0; i < 3; ++i) {
    adam.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    tape.backward(mul(x, x));
    adam.step();
    CHECK(std::abs(x[0]) < prev);
    prev = std::abs(x[0]);
  }

  std::vector<double> short_grad{1.0};
  CHECK_THROWS_AS(adam_update(p, short_grad, st, opts), NumericError);
}

TEST_CASE("arithmetic is deterministic") {
  auto run = [] {
    std::mt19937_64 rng(99);
    Tensor a = random_tensor({5, 6}, rng);
    Tensor b = random_tensor({6, 4}, rng);
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(softmax(matmul(a, b)));
    tape.backward(project(tanh(matmul(a, b)), 1));
    auto out = matmul(a, b).to_vector();
    auto g = a.grad();
    out.insert(out.end(), g.begin(), g.end());
    return out;
  };
  auto r1 = run(), r2 = run();
  CHECK(std::memcmp(r1.data(), r2.data(), r1.size() * sizeof(double)) == 0);
}

TEST_CASE("checkpoint round trip and rejection") {
  auto dir = std::filesystem::temp_directory_path() / "vimo_ckpt_test";
  std::filesystem::create_directories(dir);
  ParamList params{{"a.weight", Tensor::parameter({2, 3}, {1, 2, 3, 4, 5, 6.5})},
                   {"b", Tensor::parameter({1}, {-0.125})}};
  save_checkpoint(dir / "x.vimc", params);
  ParamList back = load_checkpoint(dir / "x.vimc");
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "a.weight");
  CHECK(back[0].tensor.shape() == Shape{2, 3});
  CHECK(checksum(back) == checksum(params));

  {
    std::ofstream bad(dir / "bad.vimc", std::ios::binary);
    bad << "XXXX";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.vimc"), FormatError);

  // Truncated payload.
  std::filesystem::resize_file(dir / "x.vimc", std::filesystem::file_size(dir / "x.vimc") - 4);
  CHECK_THROWS_AS(load_checkpoint(dir / "x.vimc"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("header layout of a checkpoint is bit-exact") {
  auto path = std::filesystem::temp_directory_path() / "vimo_ckpt_layout.vimc";
  save_checkpoint(path, {{"w", Tensor::parameter({1}, {1.0})}});
  std::ifstream is(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), {});
  const std::vector<unsigned char> want{
      'V', 'I', 'M', 'C', 1, 0, 0, 0, 1, 0, 0, 0,  // version, count
      1, 0, 'w',                                     // name
      1, 1, 0, 0, 0,                                 // rank, dim
      0, 0, 0, 0, 0, 0, 0xF0, 0x3F};                 // 1.0 little-endian
  CHECK(bytes == want);
  std::filesystem::remove(path);
}
