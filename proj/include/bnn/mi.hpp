#pragma once

// Discrete mutual information, the NCE lower-bound check, the per-epoch
// binary/full-precision activation MI diagnostic and class-sorted cosine
// similarity matrices. All quantities are in nats.

#include <cstdint>
#include <vector>

#include "bnn/network.hpp"
#include "bnn/rng.hpp"

namespace bnn {

class JointHistogram {
 public:
  JointHistogram(std::size_t nx, std::size_t ny);
  static JointHistogram from_counts(std::size_t nx, std::size_t ny, std::vector<double> counts);

  void add(std::size_t x, std::size_t y, double weight = 1.0);

  std::size_t nx() const { return nx_; }
  std::size_t ny() const { return ny_; }
  double count(std::size_t x, std::size_t y) const { return counts_[x * ny_ + y]; }
  double total() const;
  std::vector<double> marginal_x() const;
  std::vector<double> marginal_y() const;
  const std::vector<double>& counts() const { return counts_; }

 private:
  std::size_t nx_, ny_;
  std::vector<double> counts_;
};

double mutual_information(const JointHistogram& j);

struct EntropyDecomposition {
  double h_x = 0.0;
  double h_y = 0.0;
  double mi = 0.0;
  double h_x_given_y = 0.0;
};
EntropyDecomposition entropy_decomposition(const JointHistogram& j);

inline double nats_to_bits(double nats) { return nats / 0.69314718055994530942; }

struct NceBoundCheck {
  double exact_mi = 0.0;
  double bound_estimate = 0.0;  // Monte-Carlo mean of E[log q] + log(N - 1)
  double std_error = 0.0;
  bool holds = false;           // exact_mi >= bound_estimate - 3 * std_error
};

// Draws `n_samples` contrastive sets of one positive pair (x, y) ~ P_XY and
// n_negatives - 1 pairs from P_X P_Y, and scores the positive with the exact
// posterior q = P / (P + (N - 1) P_X P_Y).
NceBoundCheck verify_nce_bound(const JointHistogram& j, std::size_t n_negatives,
                               std::size_t n_samples, Rng& rng);

// Per-unit MI between sign(a_fp) and a_fp quantized into `bins` equal-mass
// bins, averaged over the units of layer k (1-based, k < K).
template <class T>
double binarized_activation_mi(const ForwardCache<T>& cache, std::size_t k, std::size_t bins);
template <class T>
double binarized_activation_mi(const BasicTensor<T>& a_fp, std::size_t bins);

struct CorrelationMatrix {
  std::vector<double> values;        // n x n, rows and columns in `order`
  std::size_t n = 0;
  std::vector<std::size_t> order;    // sample index of each row
  std::vector<int> sorted_labels;
  std::vector<std::size_t> class_boundaries;  // row where each class starts
  std::vector<int> classes;                   // classes present, ascending
  std::vector<double> class_mean;    // classes x classes, cosine of class means
  double intra_mean = 0.0;           // off-diagonal same-class pairs
  double inter_mean = 0.0;

  double at(std::size_t r, std::size_t c) const { return values[r * n + c]; }
};

// Cosine similarity of every pair of rows, ordered by label (stable). A pair
// involving a zero-norm row has similarity 0.
template <class T>
CorrelationMatrix correlation_matrix(const BasicTensor<T>& embeddings, std::span<const int> labels);

}  // namespace bnn
