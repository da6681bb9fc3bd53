#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "doctest.h"
#include "freediff/error.hpp"
#include "freediff/latent_io.hpp"
#include "freediff/spectrum.hpp"
#include "test_support.hpp"

using namespace freediff;
using freediff::testing::random_tensor;

namespace {

double spectrum_energy(const Spectrum& s, std::size_t c) {
  double e = 0.0;
  for (const auto& z : s.channel(c)) e += std::norm(z);
  return e;
}

double channel_energy(const LatentTensor& x, std::size_t c) {
  double e = 0.0;
  for (double v : x.channel(c)) e += v * v;
  return e;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::Numerical;
}

std::string field_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.field();
  }
  FAIL("expected an Error");
  return {};
}

void put_u32(std::string& s, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s[at + i] = static_cast<char>((v >> (8 * i)) & 0xff);
}

// Header written byte by byte, independent of the encoder.
std::string hand_header(std::uint32_t c, std::uint32_t h, std::uint32_t w) {
  std::string s(24, '\0');
  s[0] = 'F';
  s[1] = 'D';
  s[2] = 'L';
  s[3] = 'T';
  put_u32(s, 4, 1);
  put_u32(s, 8, c);
  put_u32(s, 12, h);
  put_u32(s, 16, w);
  return s;
}

}  // namespace

TEST_CASE("dft2 of a constant puts everything at DC") {
  const auto x = LatentTensor::filled({1, 4, 4}, 1.0);
  const Spectrum s = dft2(x);
  CHECK(std::abs(s.at_frequency(0, 0, 0) - Complex(16.0, 0.0)) < 1e-12);
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t xx = 0; xx < 4; ++xx) {
      if (y == 2 && xx == 2) continue;
      CHECK(std::abs(s(0, y, xx)) < 1e-12);
    }
  }
}

TEST_CASE("dft2 of an impulse at the origin is flat") {
  auto x = LatentTensor::generate({1, 4, 4}, [](auto, auto y, auto xx) { return y == 0 && xx == 0 ? 1.0 : 0.0; });
  const Spectrum s = dft2(x);
  for (const auto& z : s.bins()) CHECK(std::abs(std::abs(z) - 1.0) < 1e-12);
}

TEST_CASE("dft2 matches the direct DFT on even and odd sizes") {
  std::mt19937_64 rng(11);
  for (Shape shape : {Shape{1, 8, 8}, Shape{2, 5, 7}, Shape{1, 6, 3}, Shape{3, 1, 9}}) {
    const LatentTensor x = random_tensor(shape, rng);
    const auto oracle = freediff::testing::naive_dft2(x);
    const Spectrum s = dft2(x);
    double worst = 0.0;
    for (std::size_t i = 0; i < oracle.size(); ++i) worst = std::max(worst, std::abs(s.bins()[i] - oracle[i]));
    CHECK_MESSAGE(worst < 1e-10 * std::sqrt(freediff::testing::energy(oracle)), shape.str());
  }
}

TEST_CASE("Parseval holds per channel") {
  std::mt19937_64 rng(12);
  for (Shape shape : {Shape{1, 8, 8}, Shape{4, 64, 64}, Shape{2, 17, 10}}) {
    const LatentTensor x = random_tensor(shape, rng);
    const Spectrum s = dft2(x);
    for (std::size_t c = 0; c < shape.channels; ++c) {
      const double lhs = channel_energy(x, c);
      const double rhs = spectrum_energy(s, c) / static_cast<double>(shape.plane());
      CHECK(std::abs(lhs - rhs) <= 1e-8 * lhs);
    }
  }
}

TEST_CASE("idft2 inverts dft2 for shapes up to 4x128x128") {
  std::mt19937_64 rng(13);
  for (Shape shape : {Shape{2, 8, 8}, Shape{1, 1, 1}, Shape{3, 9, 4}, Shape{4, 64, 64}, Shape{4, 128, 128}}) {
    const LatentTensor x = random_tensor(shape, rng);
    CHECK(relative_error(idft2(dft2(x)), x) <= 1e-10);
  }
}

TEST_CASE("DC-only spectrum inverts to a constant") {
  std::vector<Complex> bins(16, 0.0);
  Spectrum s({1, 4, 4}, bins);
  s.at_frequency(0, 0, 0) = 16.0;
  const LatentTensor x = idft2(s);
  for (double v : x.values()) CHECK(std::abs(v - 1.0) < 1e-12);
}

TEST_CASE("conjugate-symmetric spectra invert to real tensors") {
  std::mt19937_64 rng(14);
  std::normal_distribution<double> n;
  for (Shape shape : {Shape{1, 8, 8}, Shape{2, 7, 6}}) {
    Spectrum raw(shape, std::vector<Complex>(shape.size()));
    for (auto& z : raw.mutable_bins()) z = {n(rng), n(rng)};
    Spectrum sym = raw;
    const long H = static_cast<long>(shape.height), W = static_cast<long>(shape.width);
    auto wrap = [](long f, long len) {
      // Negated frequency mapped back into -floor(len/2) .. ceil(len/2)-1.
      long v = -f;
      const long lo = -(len / 2);
      while (v < lo) v += len;
      while (v > lo + len - 1) v -= len;
      return v;
    };
    for (std::size_t c = 0; c < shape.channels; ++c) {
      for (long fy = -(H / 2); fy < H - H / 2; ++fy) {
        for (long fx = -(W / 2); fx < W - W / 2; ++fx) {
          sym.at_frequency(c, fy, fx) =
              0.5 * (raw.at_frequency(c, fy, fx) + std::conj(raw.at_frequency(c, wrap(fy, H), wrap(fx, W))));
        }
      }
    }
    const InverseResult r = idft2_with_residue(sym);
    CHECK(r.imaginary_residue < 1e-13);
  }
}

TEST_CASE("idft2 rejects spectra with a large imaginary residue") {
  std::vector<Complex> bins(16, 0.0);
  bins[5] = Complex(0.0, 1.0);
  CHECK(kind_of([&] { idft2(Spectrum({1, 4, 4}, bins)); }) == ErrorKind::Numerical);
}

TEST_CASE("non-finite input is rejected") {
  std::vector<double> v(16, 0.0);
  v[3] = std::nan("");
  CHECK(kind_of([&] { dft2(Shape{1, 4, 4}, v); }) == ErrorKind::DataIntegrity);
  v[3] = INFINITY;
  CHECK(kind_of([&] { LatentTensor({1, 4, 4}, v); }) == ErrorKind::DataIntegrity);
}

TEST_CASE("dft2 is linear") {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Shape shape{2, 1 + rng() % 12, 1 + rng() % 12};
    const auto x = random_tensor(shape, rng), y = random_tensor(shape, rng);
    const double a = u(rng), b = u(rng);
    const Spectrum lhs = dft2(lincomb(a, x, b, y));
    const Spectrum sx = dft2(x), sy = dft2(y);
    double err = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      const Complex rhs = a * sx.bins()[i] + b * sy.bins()[i];
      err += std::norm(lhs.bins()[i] - rhs);
      ref += std::norm(rhs);
    }
    CHECK(std::sqrt(err) <= 1e-10 * std::sqrt(ref) + 1e-14);
  }
}

TEST_CASE("radial grid geometry") {
  CHECK(radial_grid(64, 64).max_radius() == 32.0);

  const FreqGrid g4 = radial_grid(4, 4);
  std::set<double> radii(g4.radii().begin(), g4.radii().end());
  CHECK(radii == std::set<double>{0.0, 1.0, 2.0});
  CHECK(std::count(g4.radii().begin(), g4.radii().end(), 0.0) == 1);
  // Enumerated by hand: 1 cell at r=0, 8 at r=1, 7 at r=2.
  CHECK(std::count(g4.radii().begin(), g4.radii().end(), 1.0) == 8);
  CHECK(std::count(g4.radii().begin(), g4.radii().end(), 2.0) == 7);

  const FreqGrid g1 = radial_grid(1, 1);
  REQUIRE(g1.radii().size() == 1);
  CHECK(g1.radii()[0] == 0.0);

  const FreqGrid e = radial_grid(64, 64, RadiusMetric::Euclidean);
  CHECK(e.max_radius() == doctest::Approx(std::sqrt(2.0) * 32.0));
}

TEST_CASE("radial grid is symmetric under frequency negation") {
  for (auto [h, w] : {std::pair{8, 8}, std::pair{7, 5}, std::pair{64, 64}}) {
    for (auto metric : {RadiusMetric::Chebyshev, RadiusMetric::Euclidean}) {
      const FreqGrid g = radial_grid(h, w, metric);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const long fy = centered_frequency(y, h), fx = centered_frequency(x, w);
          // Negation within range only; the unpaired Nyquist row/column maps to itself.
          if (-fy < -(h / 2) || -fy > h - h / 2 - 1 || -fx < -(w / 2) || -fx > w - w / 2 - 1) continue;
          CHECK(g(y, x) == g(static_cast<std::size_t>(-fy + h / 2), static_cast<std::size_t>(-fx + w / 2)));
        }
      }
    }
  }
}

TEST_CASE("latent file round trip is bit-exact") {
  std::mt19937_64 rng(16);
  const LatentTensor x = random_tensor({4, 64, 64}, rng);
  const auto dir = freediff::testing::fresh_dir("io");
  write_latent_file(x, dir / "x.fdlt");
  const LatentTensor back = read_latent_file(dir / "x.fdlt");
  REQUIRE(back.shape() == x.shape());
  for (std::size_t i = 0; i < x.values().size(); ++i) {
    CHECK(back.values()[i] == static_cast<double>(static_cast<float>(x.values()[i])));
  }
  // Second write reproduces the file exactly.
  write_latent_file(back, dir / "y.fdlt");
  std::ifstream a(dir / "x.fdlt", std::ios::binary), b(dir / "y.fdlt", std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
  CHECK(sa.size() == 24 + 4 * 4 * 64 * 64);
}

TEST_CASE("encoder matches the hand-built layout") {
  const LatentTensor x({1, 1, 2}, {1.5, -2.0});
  std::string expected = hand_header(1, 1, 2);
  const float vals[2] = {1.5f, -2.0f};
  expected.append(reinterpret_cast<const char*>(vals), sizeof(vals));  // host is little-endian
  CHECK(encode_latent(x) == expected);
  CHECK(decode_latent(expected) == x);
}

TEST_CASE("malformed latent files name the offending field") {
  const std::string good = encode_latent(LatentTensor::filled({4, 64, 64}, 0.25));

  std::string bad = good;
  bad.replace(0, 4, "XXXX");
  CHECK(field_of([&] { decode_latent(bad); }) == "magic");
  CHECK(kind_of([&] { decode_latent(bad); }) == ErrorKind::Format);

  CHECK(field_of([&] { decode_latent(good.substr(0, good.size() - 4)); }) == "payload length");
  CHECK(field_of([&] { decode_latent(good.substr(0, 10)); }) == "header");

  bad = good;
  put_u32(bad, 4, 2);
  CHECK(field_of([&] { decode_latent(bad); }) == "version");

  bad = good;
  bad[20] = 1;
  CHECK(field_of([&] { decode_latent(bad); }) == "dtype");

  bad = good;
  bad[22] = 7;
  CHECK(field_of([&] { decode_latent(bad); }) == "reserved");

  std::string zero_dim = hand_header(4, 0, 64);
  CHECK(field_of([&] { decode_latent(zero_dim); }) == "dimensions");

  std::string huge = hand_header(0xffffffffu, 0xffffffffu, 0xffffffffu);
  CHECK(field_of([&] { decode_latent(huge); }) == "dimensions");

  std::string nan_payload = hand_header(1, 1, 1);
  const float nan_value = std::nanf("");
  nan_payload.append(reinterpret_cast<const char*>(&nan_value), 4);
  CHECK(kind_of([&] { decode_latent(nan_payload); }) == ErrorKind::Format);
}

TEST_CASE("missing latent files are reported as not found") {
  CHECK(kind_of([] { read_latent_file("/nonexistent/definitely/x.fdlt"); }) == ErrorKind::NotFound);
}
