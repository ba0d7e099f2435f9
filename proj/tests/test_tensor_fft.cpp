#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include "mno/fft.hpp"
#include "mno/rng.hpp"
#include "mno/tensor.hpp"

using namespace mno;

TEST_CASE("tensor shape and data stay consistent") {
  Tensor t(Shape{2, 3});
  REQUIRE(t.numel() == 6);
  t.at2(1, 2) = 5.0;
  REQUIRE(t[5] == 5.0);
  REQUIRE_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1.0}), Error);
}

TEST_CASE("finite-value guard trips on NaN and Inf") {
  Tensor t(Shape{3});
  t[1] = std::nan("");
  REQUIRE_THROWS_AS(ensure_finite(t, "test"), NumericError);
  t[1] = 0.0;
  t[2] = INFINITY;
  REQUIRE_THROWS_AS(ensure_finite(t, "test"), NumericError);
}

TEST_CASE("constant field transforms to a pure DC mode") {
  const int n = 16;
  const double c = 0.7;
  std::vector<double> x(n, c);
  ComplexSpectrum s = fft_forward(x);
  REQUIRE(s.n_modes() == n / 2 + 1);
  REQUIRE(std::abs(s.modes[0] - cd(n * c, 0.0)) < 1e-12);
  for (int k = 1; k < s.n_modes(); ++k) REQUIRE(std::abs(s.modes[k]) < 1e-12);
}

TEST_CASE("single-frequency input concentrates in one mode") {
  const int n = 32;
  std::vector<double> x(n);
  for (int j = 0; j < n; ++j) x[j] = std::sin(2.0 * M_PI * j / n);
  ComplexSpectrum s = fft_forward(x);
  for (int k = 0; k < s.n_modes(); ++k) {
    double mag = std::abs(s.modes[k]);
    if (k == 1)
      REQUIRE(mag == Catch::Approx(n / 2.0).margin(1e-10));
    else
      REQUIRE(mag < 1e-10);
  }
}

TEST_CASE("round trip recovers the signal, power-of-two and not") {
  for (int n : {8, 32, 64, 128, 12, 17, 100}) {
    RngStream rng = make_stream(11, n);
    std::vector<double> x(n);
    for (auto& v : x) v = rng.gauss();
    std::vector<double> back = fft_inverse(fft_forward(x));
    double err = 0.0;
    for (int j = 0; j < n; ++j) err = std::max(err, std::abs(back[j] - x[j]));
    INFO("length " << n);
    REQUIRE(err < 1e-12);
  }
}

TEST_CASE("Parseval identity holds on the half spectrum") {
  for (int n : {8, 32, 64, 128}) {
    RngStream rng = make_stream(5, n);
    std::vector<double> x(n);
    for (auto& v : x) v = rng.gauss();
    double time_energy = 0.0;
    for (double v : x) time_energy += v * v;
    ComplexSpectrum s = fft_forward(x);
    double spec_energy = std::norm(s.modes[0]);
    for (int k = 1; k < s.n_modes(); ++k) {
      double w = (n % 2 == 0 && k == n / 2) ? 1.0 : 2.0;
      spec_energy += w * std::norm(s.modes[k]);
    }
    spec_energy /= n;
    REQUIRE(std::abs(spec_energy - time_energy) / time_energy < 1e-10);
  }
}

TEST_CASE("fft rejects degenerate and non-finite input") {
  std::vector<double> empty;
  REQUIRE_THROWS_AS(fft_forward(empty), Error);
  std::vector<double> one{1.0};
  REQUIRE_THROWS_AS(fft_forward(one), Error);
  std::vector<double> bad{1.0, std::nan(""), 0.0, 0.0};
  REQUIRE_THROWS_AS(fft_forward(bad), NumericError);
}

TEST_CASE("counter streams are deterministic and independent") {
  RngStream a = make_stream(9, 1, 2);
  RngStream b = make_stream(9, 1, 2);
  RngStream c = make_stream(9, 1, 3);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
  bool differs = false;
  RngStream a2 = make_stream(9, 1, 2);
  for (int i = 0; i < 100; ++i) differs |= (a2.next_u64() != c.next_u64());
  REQUIRE(differs);
}

TEST_CASE("gaussian draws have first and second moments near standard") {
  RngStream rng = make_stream(123);
  const int n = 200000;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = rng.gauss();
    s1 += z;
    s2 += z * z;
  }
  REQUIRE(std::abs(s1 / n) < 0.01);
  REQUIRE(std::abs(s2 / n - 1.0) < 0.01);
}
