// Procedural digit images with MNIST geometry. Each class is a set of
// strokes in the unit square; every sample gets its own variant choice,
// elastic wobble, affine pose, pen width and ink level, then is rendered
// with antialiased distance-to-segment shading.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "bnn/data.hpp"

namespace bnn {

namespace {

struct Pt {
  double x, y;
};
using Stroke = std::vector<Pt>;

constexpr double kPi = std::numbers::pi;

// Angles in degrees, measured clockwise from +x because y grows downward.
Stroke arc(double cx, double cy, double rx, double ry, double from_deg, double to_deg,
           int pieces = 18) {
  Stroke s;
  for (int i = 0; i <= pieces; ++i) {
    const double t = (from_deg + (to_deg - from_deg) * i / pieces) * kPi / 180.0;
    s.push_back({cx + rx * std::cos(t), cy + ry * std::sin(t)});
  }
  return s;
}

void append(Stroke& a, const Stroke& b) { a.insert(a.end(), b.begin(), b.end()); }

std::vector<Stroke> glyph(int digit, Rng& rng) {
  const bool alt = rng.coin();
  const double u = rng.uniform();
  switch (digit) {
    case 0:
      return {arc(0.5, 0.5, 0.26 + 0.06 * u, 0.4, 0, 360, 28)};
    case 1: {
      std::vector<Stroke> s{{{0.52, 0.1}, {0.48, 0.9}}};
      if (alt) s.push_back({{0.34, 0.26}, {0.52, 0.1}});
      if (u < 0.3) s.push_back({{0.34, 0.9}, {0.64, 0.9}});
      return s;
    }
    case 2: {
      Stroke s = arc(0.5, 0.32, 0.24, 0.22, 180 + 20 * u, 360 + 30, 14);
      append(s, {{0.22, 0.88}, {0.8, 0.88 - 0.04 * u}});
      if (alt) s[s.size() - 2] = {0.26, 0.84};
      return {s};
    }
    case 3: {
      Stroke s = arc(0.48, 0.3, 0.22, 0.2, 200, 450, 14);
      append(s, arc(0.48, 0.7, 0.25, 0.2, 270, 520, 14));
      if (alt) return {arc(0.48, 0.3, 0.22, 0.2, 200, 450, 14), arc(0.48, 0.7, 0.25, 0.2, 270, 520, 14)};
      return {s};
    }
    case 4:
      if (alt) return {{{0.62, 0.92}, {0.62, 0.1}, {0.2, 0.64}, {0.82, 0.64}}};
      return {{{0.3, 0.1}, {0.24, 0.6}, {0.8, 0.6}}, {{0.64, 0.3}, {0.62, 0.92}}};
    case 5: {
      Stroke s{{0.76, 0.12}, {0.32, 0.12}, {0.29, 0.46}};
      append(s, arc(0.48, 0.66, 0.26, 0.22, 230, 500 + 20 * u, 16));
      return {s};
    }
    case 6: {
      Stroke s{{0.68, 0.1}, {0.4, 0.38 + 0.06 * u}};
      append(s, arc(0.5, 0.66, 0.22, 0.23, 180, 540, 24));
      return {s};
    }
    case 7: {
      std::vector<Stroke> s{{{0.2, 0.12}, {0.8, 0.12}, {0.42 + 0.08 * u, 0.9}}};
      if (alt) s.push_back({{0.38, 0.52}, {0.74, 0.52}});
      return s;
    }
    case 8:
      return {arc(0.5, 0.3, 0.19 + 0.03 * u, 0.19, 0, 360, 22), arc(0.5, 0.7, 0.23, 0.21, 0, 360, 22)};
    case 9: {
      Stroke s = arc(0.5, 0.32, 0.21, 0.21, 0, 360, 22);
      if (alt) {
        append(s, {{0.68, 0.56}, {0.58, 0.9}});
      } else {
        append(s, arc(0.45, 0.6, 0.26, 0.3, 0, 110, 10));
      }
      return {s};
    }
    default:
      fail(ErrorKind::config, "digit out of range");
  }
}

double segment_distance(Pt p, Pt a, Pt b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double wx = p.x - a.x, wy = p.y - a.y;
  const double len2 = vx * vx + vy * vy;
  const double t = len2 > 0.0 ? std::clamp((wx * vx + wy * vy) / len2, 0.0, 1.0) : 0.0;
  const double dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

void render(std::span<std::uint8_t> out, int digit, Rng& rng) {
  constexpr int side = 28;
  auto strokes = glyph(digit, rng);

  // Smooth elastic wobble in glyph space.
  const double ax = 0.035 * rng.normal(), ay = 0.035 * rng.normal();
  const double fx = 1.0 + 2.0 * rng.uniform(), fy = 1.0 + 2.0 * rng.uniform();
  const double px = 2 * kPi * rng.uniform(), py = 2 * kPi * rng.uniform();
  // Affine pose.
  const double theta = 0.2 * rng.normal();
  const double scale = 0.78 + 0.25 * rng.uniform();
  const double aspect = 0.82 + 0.3 * rng.uniform();
  const double shear = 0.18 * rng.normal();
  const double tx = 0.07 * rng.normal(), ty = 0.06 * rng.normal();
  const double c = std::cos(theta), s = std::sin(theta);
  for (auto& stroke : strokes) {
    for (auto& p : stroke) {
      const double ex = p.x + ax * std::sin(fx * kPi * p.y + px);
      const double ey = p.y + ay * std::sin(fy * kPi * p.x + py);
      const double x0 = (ex - 0.5) * scale * aspect + shear * (ey - 0.5);
      const double y0 = (ey - 0.5) * scale;
      // Into pixel coordinates: the glyph box spans 20 pixels, centred.
      p.x = 14.0 + 20.0 * (c * x0 - s * y0 + tx);
      p.y = 14.0 + 20.0 * (s * x0 + c * y0 + ty);
    }
  }
  const double radius = 0.85 + 1.1 * rng.uniform();
  const double ink = 0.75 + 0.25 * rng.uniform();
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const Pt q{x + 0.5, y + 0.5};
      double d = 1e9;
      for (const auto& stroke : strokes) {
        for (std::size_t i = 0; i + 1 < stroke.size(); ++i) {
          d = std::min(d, segment_distance(q, stroke[i], stroke[i + 1]));
        }
      }
      double v = ink * std::clamp(radius + 0.5 - d, 0.0, 1.0);
      v += 0.04 * rng.normal();
      out[static_cast<std::size_t>(y * side + x)] =
          static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
    }
  }
}

}  // namespace

SynthDigits synth_digits(std::size_t n, std::uint64_t seed) {
  SynthDigits out;
  out.pixels.resize(n * 784);
  out.labels.resize(n);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const int digit = static_cast<int>(rng.below(10));
    out.labels[i] = static_cast<std::uint8_t>(digit);
    render(std::span<std::uint8_t>(out.pixels).subspan(i * 784, 784), digit, rng);
  }
  return out;
}

void write_synth_mnist(const std::string& dir, std::size_t n_train, std::size_t n_test,
                       std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto train = synth_digits(n_train, derive_seed(seed, 0));
  const auto test = synth_digits(n_test, derive_seed(seed, 1));
  const fs::path root(dir);
  write_idx_images((root / "train-images-idx3-ubyte").string(), train.pixels, n_train, 28, 28);
  write_idx_labels((root / "train-labels-idx1-ubyte").string(), train.labels);
  write_idx_images((root / "t10k-images-idx3-ubyte").string(), test.pixels, n_test, 28, 28);
  write_idx_labels((root / "t10k-labels-idx1-ubyte").string(), test.labels);
}

}  // namespace bnn
