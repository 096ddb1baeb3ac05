#include "bnn/tensor.hpp"

#include <Eigen/Core>
#include <bit>
#include <cmath>
#include <functional>
#include <numeric>

#include "bnn/parallel.hpp"

namespace bnn {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::bank_not_warm: return "bank_not_warm";
    case ErrorKind::checkpoint: return "checkpoint";
  }
  return "unknown";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::data:
    case ErrorKind::checkpoint: return 3;
    case ErrorKind::numeric: return 4;
    default: return 1;
  }
}

// ---------------------------------------------------------------- BasicTensor

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(shape_size(shape_) == data_.size(), ErrorKind::dimension,
          "tensor shape " + shape_string(shape_) + " does not match " +
              std::to_string(data_.size()) + " elements");
}

template <class T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  return BasicTensor<T>(std::move(shape), data_);
}

template <class T>
bool BasicTensor<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

// ------------------------------------------------------------------ BitTensor

BitTensor::BitTensor(Shape shape) : shape_(std::move(shape)) {
  require(!shape_.empty(), ErrorKind::dimension, "bit tensor needs at least one dimension");
  cols_ = shape_.back();
  rows_ = shape_size(Shape(shape_.begin(), shape_.end() - 1));
  words_per_row_ = (cols_ + 63) / 64;
  words_.assign(rows_ * words_per_row_, 0);
}

void BitTensor::set(std::size_t r, std::size_t c, bool positive) {
  std::uint64_t& w = words_[r * words_per_row_ + c / 64];
  const std::uint64_t bit = std::uint64_t{1} << (c % 64);
  w = positive ? (w | bit) : (w & ~bit);
}

bool BitTensor::padding_clear() const {
  if (cols_ % 64 == 0) return true;
  const std::uint64_t pad = ~((std::uint64_t{1} << (cols_ % 64)) - 1);
  for (std::size_t r = 0; r < rows_; ++r) {
    if (words_[r * words_per_row_ + words_per_row_ - 1] & pad) return false;
  }
  return true;
}

template <class T>
BitTensor sign_binarize(const BasicTensor<T>& x) {
  Shape shape = x.shape();
  if (shape.empty()) shape = {x.size()};
  BitTensor out(shape);
  const std::size_t cols = out.cols();
  const auto data = x.data();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto words = out.row_words(r);
    const T* src = data.data() + r * cols;
    for (std::size_t w = 0; w < words.size(); ++w) {
      std::uint64_t word = 0;
      const std::size_t begin = w * 64;
      const std::size_t end = std::min(cols, begin + 64);
      for (std::size_t c = begin; c < end; ++c) {
        word |= static_cast<std::uint64_t>(src[c] >= T{0}) << (c - begin);
      }
      words[w] = word;
    }
  }
  return out;
}

template BitTensor sign_binarize(const BasicTensor<float>&);
template BitTensor sign_binarize(const BasicTensor<double>&);

template <class T>
BasicTensor<T> unpack(const BitTensor& bits) {
  BasicTensor<T> out(bits.shape());
  for (std::size_t r = 0; r < bits.rows(); ++r) {
    for (std::size_t c = 0; c < bits.cols(); ++c) {
      out[r * bits.cols() + c] = static_cast<T>(bits.get(r, c));
    }
  }
  return out;
}

template BasicTensor<float> unpack(const BitTensor&);
template BasicTensor<double> unpack(const BitTensor&);

namespace {

inline std::uint64_t tail_mask(std::size_t length) {
  const std::size_t rem = length % 64;
  return rem == 0 ? ~std::uint64_t{0} : (std::uint64_t{1} << rem) - 1;
}

// Matching bits between two packed rows of `length` elements.
inline std::int32_t xnor_matches(const std::uint64_t* a, const std::uint64_t* b,
                                 std::size_t words, std::uint64_t mask) {
  std::int32_t matches = 0;
  for (std::size_t w = 0; w + 1 < words; ++w) matches += std::popcount(~(a[w] ^ b[w]));
  if (words > 0) matches += std::popcount(~(a[words - 1] ^ b[words - 1]) & mask);
  return matches;
}

BitTensor transpose_bits(const BitTensor& a) {
  BitTensor t(Shape{a.cols(), a.rows()});
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) {
      if (a.get(r, c) > 0) t.set(c, r, true);
    }
  }
  return t;
}

}  // namespace

std::int32_t xnor_dot(BitRow a, BitRow b) {
  require(a.length == b.length, ErrorKind::dimension,
          "xnor_dot length mismatch: " + std::to_string(a.length) + " vs " +
              std::to_string(b.length));
  const std::size_t words = (a.length + 63) / 64;
  require(a.words.size() >= words && b.words.size() >= words, ErrorKind::dimension,
          "xnor_dot row shorter than its length");
  const std::int32_t matches =
      xnor_matches(a.words.data(), b.words.data(), words, tail_mask(a.length));
  return 2 * matches - static_cast<std::int32_t>(a.length);
}

template <class T>
BasicTensor<T> xnor_matmul_nt(const BitTensor& x, const BitTensor& w) {
  require(x.cols() == w.cols(), ErrorKind::dimension,
          "xnor_matmul inner dimension mismatch: " + std::to_string(x.cols()) + " vs " +
              std::to_string(w.cols()));
  const std::size_t b = x.rows();
  const std::size_t m = w.rows();
  const std::size_t n = x.cols();
  const std::size_t words = x.words_per_row();
  const std::uint64_t mask = tail_mask(n);
  BasicTensor<T> out(Shape{b, m});
  auto data = out.data();
  const auto xw = x.words();
  const auto ww = w.words();
  parallel_for(
      b,
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
          const std::uint64_t* xi = xw.data() + i * words;
          T* dst = data.data() + i * m;
          for (std::size_t j = 0; j < m; ++j) {
            const std::int32_t matches = xnor_matches(xi, ww.data() + j * words, words, mask);
            dst[j] = static_cast<T>(2 * matches - static_cast<std::int32_t>(n));
          }
        }
      },
      4);
  return out;
}

template BasicTensor<float> xnor_matmul_nt(const BitTensor&, const BitTensor&);
template BasicTensor<double> xnor_matmul_nt(const BitTensor&, const BitTensor&);

FpTensor xnor_matmul(const BitTensor& w, const BitTensor& a) {
  require(w.cols() == a.rows(), ErrorKind::dimension,
          "xnor_matmul inner dimension mismatch: " + shape_string(w.shape()) + " * " +
              shape_string(a.shape()));
  // [m x n] * [n x b] = ([b x n] * [m x n]^T)^T
  return transpose(xnor_matmul_nt<float>(transpose_bits(a), w));
}

// ------------------------------------------------------------------ dense ops

namespace {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
Eigen::Map<const RowMatrix<T>> as_matrix(const BasicTensor<T>& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()),
          static_cast<Eigen::Index>(t.cols())};
}

template <class T>
Eigen::Map<RowMatrix<T>> as_matrix(BasicTensor<T>& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()),
          static_cast<Eigen::Index>(t.cols())};
}

template <class T>
void require_rank2(const BasicTensor<T>& t, const char* what) {
  require(t.rank() == 2, ErrorKind::dimension,
          std::string(what) + " expects a rank-2 tensor, got " + shape_string(t.shape()));
}

}  // namespace

template <class T>
BasicTensor<T> fp_matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank2(a, "fp_matmul");
  require_rank2(b, "fp_matmul");
  require(a.dim(1) == b.dim(0), ErrorKind::dimension,
          "fp_matmul mismatch " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  BasicTensor<T> out(Shape{a.dim(0), b.dim(1)});
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
  return out;
}

template <class T>
BasicTensor<T> fp_matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank2(a, "fp_matmul_nt");
  require_rank2(b, "fp_matmul_nt");
  require(a.dim(1) == b.dim(1), ErrorKind::dimension,
          "fp_matmul_nt mismatch " + shape_string(a.shape()) + " * " +
              shape_string(b.shape()) + "^T");
  BasicTensor<T> out(Shape{a.dim(0), b.dim(0)});
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b).transpose();
  return out;
}

template <class T>
BasicTensor<T> fp_matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank2(a, "fp_matmul_tn");
  require_rank2(b, "fp_matmul_tn");
  require(a.dim(0) == b.dim(0), ErrorKind::dimension,
          "fp_matmul_tn mismatch " + shape_string(a.shape()) + "^T * " +
              shape_string(b.shape()));
  BasicTensor<T> out(Shape{a.dim(1), b.dim(1)});
  as_matrix(out).noalias() = as_matrix(a).transpose() * as_matrix(b);
  return out;
}

template <class T>
BasicTensor<T> fp_add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(), ErrorKind::dimension,
          "fp_add mismatch " + shape_string(a.shape()) + " + " + shape_string(b.shape()));
  BasicTensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <class T>
BasicTensor<T> fp_scale(const BasicTensor<T>& a, T factor) {
  BasicTensor<T> out = a;
  for (auto& v : out.data()) v *= factor;
  return out;
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require_rank2(a, "transpose");
  BasicTensor<T> out(Shape{a.dim(1), a.dim(0)});
  for (std::size_t r = 0; r < a.dim(0); ++r) {
    for (std::size_t c = 0; c < a.dim(1); ++c) out(c, r) = a(r, c);
  }
  return out;
}

#define BNN_INSTANTIATE_DENSE(T)                                               \
  template BasicTensor<T> fp_matmul(const BasicTensor<T>&, const BasicTensor<T>&);    \
  template BasicTensor<T> fp_matmul_nt(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> fp_matmul_tn(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> fp_add(const BasicTensor<T>&, const BasicTensor<T>&);       \
  template BasicTensor<T> fp_scale(const BasicTensor<T>&, T);                         \
  template BasicTensor<T> transpose(const BasicTensor<T>&);

BNN_INSTANTIATE_DENSE(float)
BNN_INSTANTIATE_DENSE(double)

#undef BNN_INSTANTIATE_DENSE

}  // namespace bnn
