#pragma once

// Dense row-major tensors, bit-packed sign tensors and the xnor-popcount
// kernels used by the binary layers.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bnn/error.hpp"

namespace bnn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, std::vector<T> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Leading dimension and the product of the remaining ones.
  std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const noexcept { return rows() == 0 ? 0 : data_.size() / rows(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols(), cols()); }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * cols(), cols());
  }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  BasicTensor reshaped(Shape shape) const;
  bool all_finite() const;

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using FpTensor = BasicTensor<float>;

// Read-only view of one packed row: `length` logical elements.
struct BitRow {
  std::span<const std::uint64_t> words;
  std::size_t length = 0;
};

// Sign tensor packed along the innermost dimension, LSB first, one bit per
// element (1 <-> +1, 0 <-> -1). Each row starts on a word boundary and the
// padding bits of its last word are zero.
class BitTensor {
 public:
  BitTensor() = default;
  explicit BitTensor(Shape shape);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t words_per_row() const noexcept { return words_per_row_; }

  std::span<const std::uint64_t> words() const noexcept { return words_; }
  std::span<std::uint64_t> row_words(std::size_t r) {
    return std::span<std::uint64_t>(words_).subspan(r * words_per_row_, words_per_row_);
  }
  BitRow row(std::size_t r) const {
    return {std::span<const std::uint64_t>(words_).subspan(r * words_per_row_, words_per_row_),
            cols_};
  }

  int get(std::size_t r, std::size_t c) const {
    return ((words_[r * words_per_row_ + c / 64] >> (c % 64)) & 1u) ? 1 : -1;
  }
  void set(std::size_t r, std::size_t c, bool positive);

  bool padding_clear() const;

  friend bool operator==(const BitTensor& a, const BitTensor& b) {
    return a.shape_ == b.shape_ && a.words_ == b.words_;
  }

 private:
  Shape shape_;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t words_per_row_ = 0;
  std::vector<std::uint64_t> words_;
};

// Element i becomes +1 when x_i >= 0, otherwise -1.
template <class T>
BitTensor sign_binarize(const BasicTensor<T>& x);

// Expands a packed tensor back to +-1 values.
template <class T = float>
BasicTensor<T> unpack(const BitTensor& bits);

// 2 * popcount(xnor(a, b)) - n, the dot product of the two +-1 vectors.
std::int32_t xnor_dot(BitRow a, BitRow b);

// W [m x n] times A [n x b]; every entry is an xnor_dot of a row of W with a
// column of A.
FpTensor xnor_matmul(const BitTensor& w, const BitTensor& a);

// X [b x n] times W^T for W [m x n]; both operands packed along n. This is
// the layout the binary layers use. Result is [b x m].
template <class T = float>
BasicTensor<T> xnor_matmul_nt(const BitTensor& x, const BitTensor& w);

// Dense ops. All row-major; rank-2 operands.
template <class T>
BasicTensor<T> fp_matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
// a [m x k] * b^T for b [n x k].
template <class T>
BasicTensor<T> fp_matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b);
// a^T * b for a [k x m], b [k x n].
template <class T>
BasicTensor<T> fp_matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> fp_add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> fp_scale(const BasicTensor<T>& a, T factor);
template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a);

}  // namespace bnn
