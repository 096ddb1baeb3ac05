#pragma once

// Shared helpers for the unit tests.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include "bnn/error.hpp"
#include "bnn/rng.hpp"
#include "bnn/tensor.hpp"

namespace bnn::test {

template <class T>
BasicTensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  BasicTensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(lo + (hi - lo) * rng.uniform());
  return t;
}

// |a - b| / max(|a|, |b|, floor)
inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central difference of f with respect to the value `ref` returns. `ref` is
// re-evaluated around every call of f, which may reallocate the storage.
inline double central_difference_at(const std::function<double&()>& ref, double h,
                                    const std::function<double()>& f) {
  const double saved = ref();
  ref() = saved + h;
  const double up = f();
  ref() = saved - h;
  const double down = f();
  ref() = saved;
  return (up - down) / (2.0 * h);
}

// Central difference of f with respect to x[i].
template <class T>
double central_difference(std::span<T> x, std::size_t i, double h, const std::function<double()>& f) {
  const T saved = x[i];
  x[i] = static_cast<T>(saved + h);
  const double up = f();
  x[i] = static_cast<T>(saved - h);
  const double down = f();
  x[i] = saved;
  return (up - down) / (2.0 * h);
}

// Kind of the bnn::Error thrown by f; throws std::logic_error when f returns.
inline ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  throw std::logic_error("expected a bnn::Error");
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() /
                 ("bnn_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace bnn::test
