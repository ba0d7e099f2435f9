#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "mno/autodiff.hpp"
#include "mno/fft.hpp"
#include "mno/rng.hpp"

using namespace mno;

namespace {

// Central finite differences of a scalar graph against the tape's reverse
// sweep, entry by entry on every input tensor.
double fd_check(const std::vector<Tensor>& inputs,
                const std::function<int(Tape&, const std::vector<int>&)>& build, double h = 1e-6) {
  Tape tape;
  std::vector<int> ids;
  for (const auto& t : inputs) ids.push_back(tape.leaf(t, true));
  int loss = build(tape, ids);
  tape.backward(loss);

  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape t2;
    std::vector<int> id2;
    for (const auto& x : xs) id2.push_back(t2.leaf(x, false));
    int l = build(t2, id2);
    return t2.val(l)[0];
  };

  double worst = 0.0;
  for (size_t p = 0; p < inputs.size(); ++p) {
    for (int64_t i = 0; i < inputs[p].numel(); ++i) {
      std::vector<Tensor> xs = inputs;
      xs[p][i] += h;
      double up = eval(xs);
      xs[p][i] -= 2 * h;
      double dn = eval(xs);
      double fd = (up - dn) / (2 * h);
      double an = tape.grad(ids[p])[i];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}));
    }
  }
  return worst;
}

Tensor randn(Shape s, uint64_t seed, double scale = 1.0) {
  RngStream rng = make_stream(seed, 0x7777);
  return rng.gauss_tensor(std::move(s), scale);
}

}  // namespace

TEST_CASE("gradient of a plain sum is all ones") {
  Tape tape;
  Tensor p = randn(Shape{5}, 1);
  int id = tape.leaf(p, true);
  tape.backward(tape.sum_all(id));
  for (int64_t i = 0; i < 5; ++i) REQUIRE(tape.grad(id)[i] == 1.0);
}

TEST_CASE("gradient of sum of squares is twice the input") {
  Tape tape;
  Tensor p(Shape{3}, std::vector<double>{1.0, 2.0, 3.0});
  int id = tape.leaf(p, true);
  tape.backward(tape.sum_all(tape.square(id)));
  REQUIRE(tape.grad(id)[0] == 2.0);
  REQUIRE(tape.grad(id)[1] == 4.0);
  REQUIRE(tape.grad(id)[2] == 6.0);
}

TEST_CASE("unused leaves keep exactly zero gradients") {
  Tape tape;
  int used = tape.leaf(randn(Shape{4}, 2), true);
  int unused = tape.leaf(randn(Shape{4}, 3), true);
  tape.backward(tape.mean_all(tape.square(used)));
  for (int64_t i = 0; i < 4; ++i) REQUIRE(tape.grad(unused)[i] == 0.0);
}

TEST_CASE("a tape replays backward exactly once") {
  Tape tape;
  int id = tape.leaf(randn(Shape{3}, 4), true);
  int loss = tape.sum_all(tape.square(id));
  tape.backward(loss);
  REQUIRE_THROWS_AS(tape.backward(loss), Error);
}

TEST_CASE("backward rejects non-scalar losses") {
  Tape tape;
  int id = tape.leaf(randn(Shape{3}, 5), true);
  int sq = tape.square(id);
  REQUIRE_THROWS_AS(tape.backward(sq), Error);
}

TEST_CASE("elementwise primitives match finite differences") {
  auto check = [&](const char* name, std::vector<Tensor> inputs,
                   std::function<int(Tape&, const std::vector<int>&)> build) {
    double err = fd_check(inputs, build);
    INFO(name);
    REQUIRE(err < 1e-6);
  };

  Tensor a = randn(Shape{2, 6}, 10, 0.8);
  Tensor b = randn(Shape{2, 6}, 11, 0.8);
  check("add", {a, b}, [](Tape& t, const std::vector<int>& in) {
    return t.mean_all(t.square(t.add(in[0], in[1])));
  });
  check("sub", {a, b}, [](Tape& t, const std::vector<int>& in) {
    return t.mean_all(t.square(t.sub(in[0], in[1])));
  });
  check("mul", {a, b}, [](Tape& t, const std::vector<int>& in) {
    return t.mean_all(t.mul(in[0], in[1]));
  });

  Tensor denom = randn(Shape{2, 6}, 12, 0.3);
  for (auto& v : denom.data) v = 0.5 + std::abs(v);  // keep clear of the floor
  check("div_floored", {a, denom}, [](Tape& t, const std::vector<int>& in) {
    return t.mean_all(t.div_floored(in[0], in[1], 1e-8));
  });

  check("exp", {a}, [](Tape& t, const std::vector<int>& in) { return t.mean_all(t.exp_(in[0])); });

  Tensor pos = denom;
  check("log", {pos}, [](Tape& t, const std::vector<int>& in) { return t.mean_all(t.log_(in[0])); });
  check("sqrt", {pos}, [](Tape& t, const std::vector<int>& in) { return t.mean_all(t.sqrt_(in[0])); });
  check("pow", {pos}, [](Tape& t, const std::vector<int>& in) {
    return t.mean_all(t.pow_scalar(in[0], 1.7));
  });
  check("square", {a}, [](Tape& t, const std::vector<int>& in) { return t.mean_all(t.square(in[0])); });
  check("abs", {a}, [](Tape& t, const std::vector<int>& in) { return t.mean_all(t.abs_(in[0])); });
  check("gelu", {a}, [](Tape& t, const std::vector<int>& in) { return t.mean_all(t.gelu(in[0])); });
  check("scalar ops", {a}, [](Tape& t, const std::vector<int>& in) {
    return t.mean_all(t.add_scalar(t.mul_scalar(in[0], 1.3), -0.2));
  });

  Tensor s = randn(Shape{1}, 13, 0.5);
  check("scale_by", {a, s}, [](Tape& t, const std::vector<int>& in) {
    return t.mean_all(t.square(t.scale_by(in[0], in[1])));
  });
}

TEST_CASE("clamp passes gradients inside and kills them outside") {
  Tensor x(Shape{4}, std::vector<double>{-2.0, 0.3, 0.7, 3.0});
  Tape tape;
  int id = tape.leaf(x, true);
  tape.backward(tape.sum_all(tape.clamp(id, 0.0, 1.0)));
  REQUIRE(tape.grad(id)[0] == 0.0);
  REQUIRE(tape.grad(id)[1] == 1.0);
  REQUIRE(tape.grad(id)[2] == 1.0);
  REQUIRE(tape.grad(id)[3] == 0.0);

  Tensor interior(Shape{3}, std::vector<double>{0.2, 0.5, 0.8});
  double err = fd_check({interior}, [](Tape& t, const std::vector<int>& in) {
    return t.mean_all(t.square(t.clamp(in[0], 0.0, 1.0)));
  });
  REQUIRE(err < 1e-6);
}

TEST_CASE("structured primitives match finite differences") {
  Tensor x = randn(Shape{2, 3, 8}, 20, 0.7);
  Tensor w = randn(Shape{4, 3}, 21, 0.5);
  Tensor bias = randn(Shape{4}, 22, 0.2);
  double err = fd_check({x, w, bias}, [](Tape& t, const std::vector<int>& in) {
    return t.mean_all(t.square(t.linear_channels(in[0], in[1], in[2])));
  });
  REQUIRE(err < 1e-6);

  Tensor sw = randn(Shape{2, 3, 4, 2}, 23, 0.4);
  err = fd_check({x, sw}, [](Tape& t, const std::vector<int>& in) {
    return t.mean_all(t.square(t.spectral_conv(in[0], in[1])));
  });
  REQUIRE(err < 1e-6);

  err = fd_check({x}, [](Tape& t, const std::vector<int>& in) {
    int rep = t.repeat_ensemble(in[0], 3);
    return t.mean_all(t.square(t.mean_ensemble(t.square(rep))));
  });
  REQUIRE(err < 1e-6);

  Tensor f = randn(Shape{2, 3, 2, 4}, 24, 0.6);
  err = fd_check({f}, [](Tape& t, const std::vector<int>& in) {
    return t.mean_all(t.square(t.sum_rank_axis(t.square(in[0]))));
  });
  REQUIRE(err < 1e-6);

  err = fd_check({x}, [](Tape& t, const std::vector<int>& in) {
    return t.mean_all(t.sqrt_(t.sum_per_item(t.square(in[0]))));
  });
  REQUIRE(err < 1e-6);

  err = fd_check({x}, [](Tape& t, const std::vector<int>& in) {
    return t.sum_all(t.square(t.reshape(in[0], Shape{6, 8})));
  });
  REQUIRE(err < 1e-6);
}

TEST_CASE("spectral conv with identity weights is a low-pass filter") {
  const int64_t n = 16, m = 5;
  Tensor x = randn(Shape{1, 1, n}, 31);
  Tensor w(Shape{1, 1, m, 2});
  for (int64_t k = 0; k < m; ++k) w.at4(0, 0, k, 0) = 1.0;

  Tape tape;
  int out = tape.spectral_conv(tape.leaf(x, false), tape.leaf(w, false));
  const Tensor& y = tape.val(out);

  // reference: keep modes < m of the transform, invert
  std::vector<double> sig(x.data.begin(), x.data.end());
  ComplexSpectrum s = fft_forward(sig);
  for (int64_t k = m; k < s.n_modes(); ++k) s.modes[static_cast<size_t>(k)] = cd(0, 0);
  std::vector<double> ref = fft_inverse(s);
  for (int64_t j = 0; j < n; ++j) REQUIRE(y[j] == Catch::Approx(ref[static_cast<size_t>(j)]).margin(1e-12));
}

TEST_CASE("spectral conv covers the Nyquist mode when retained") {
  const int64_t n = 8, m = 5;  // m = n/2 + 1 includes Nyquist
  Tensor x = randn(Shape{1, 1, n}, 37);
  Tensor w(Shape{1, 1, m, 2});
  for (int64_t k = 0; k < m; ++k) w.at4(0, 0, k, 0) = 1.0;
  Tape tape;
  int out = tape.spectral_conv(tape.leaf(x, false), tape.leaf(w, false));
  const Tensor& y = tape.val(out);
  for (int64_t j = 0; j < n; ++j) REQUIRE(y[j] == Catch::Approx(x[j]).margin(1e-12));

  Tensor w_over(Shape{1, 1, m + 1, 2});
  Tape t2;
  REQUIRE_THROWS_AS(t2.spectral_conv(t2.leaf(x, false), t2.leaf(w_over, false)), Error);
}

TEST_CASE("mode retention is independent of the grid size") {
  // one trained weight tensor applied at two resolutions keeps the same
  // low-mode response
  const int64_t m = 3;
  Tensor w = randn(Shape{1, 1, m, 2}, 40, 0.5);
  auto apply = [&](int64_t n) {
    Tensor x(Shape{1, 1, n});
    for (int64_t j = 0; j < n; ++j)
      x.at3(0, 0, j) = std::cos(2.0 * M_PI * 2.0 * j / static_cast<double>(n));
    Tape tape;
    int out = tape.spectral_conv(tape.leaf(x, false), tape.leaf(w, false));
    Tensor y = tape.val(out);
    std::vector<double> sig(y.data.begin(), y.data.end());
    ComplexSpectrum s = fft_forward(sig);
    // normalized mode-2 response
    return s.modes[2] / static_cast<double>(n);
  };
  cd r32 = apply(32), r64 = apply(64);
  REQUIRE(std::abs(r32 - r64) < 1e-12);
}
