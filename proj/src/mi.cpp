#include "bnn/mi.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bnn {

namespace {

double entropy(const std::vector<double>& p, double total) {
  double h = 0.0;
  for (double c : p) {
    if (c > 0.0) {
      const double q = c / total;
      h -= q * std::log(q);
    }
  }
  return h;
}

void require_nonempty(const JointHistogram& j) {
  require(j.total() > 0.0, ErrorKind::data, "joint histogram is empty");
}

}  // namespace

JointHistogram::JointHistogram(std::size_t nx, std::size_t ny)
    : nx_(nx), ny_(ny), counts_(nx * ny, 0.0) {
  require(nx > 0 && ny > 0, ErrorKind::dimension, "histogram alphabets must be non-empty");
}

JointHistogram JointHistogram::from_counts(std::size_t nx, std::size_t ny,
                                           std::vector<double> counts) {
  require(counts.size() == nx * ny, ErrorKind::dimension, "count table does not match alphabets");
  JointHistogram j(nx, ny);
  for (double c : counts) {
    require(c >= 0.0 && std::isfinite(c), ErrorKind::data, "histogram counts must be >= 0");
  }
  j.counts_ = std::move(counts);
  return j;
}

void JointHistogram::add(std::size_t x, std::size_t y, double weight) {
  require(x < nx_ && y < ny_, ErrorKind::dimension, "histogram symbol out of range");
  counts_[x * ny_ + y] += weight;
}

double JointHistogram::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), 0.0);
}

std::vector<double> JointHistogram::marginal_x() const {
  std::vector<double> m(nx_, 0.0);
  for (std::size_t x = 0; x < nx_; ++x) {
    for (std::size_t y = 0; y < ny_; ++y) m[x] += count(x, y);
  }
  return m;
}

std::vector<double> JointHistogram::marginal_y() const {
  std::vector<double> m(ny_, 0.0);
  for (std::size_t x = 0; x < nx_; ++x) {
    for (std::size_t y = 0; y < ny_; ++y) m[y] += count(x, y);
  }
  return m;
}

double mutual_information(const JointHistogram& j) {
  require_nonempty(j);
  const double total = j.total();
  const auto px = j.marginal_x();
  const auto py = j.marginal_y();
  double mi = 0.0;
  for (std::size_t x = 0; x < j.nx(); ++x) {
    for (std::size_t y = 0; y < j.ny(); ++y) {
      const double c = j.count(x, y);
      if (c > 0.0) mi += (c / total) * std::log(c * total / (px[x] * py[y]));
    }
  }
  return std::max(mi, 0.0);
}

EntropyDecomposition entropy_decomposition(const JointHistogram& j) {
  require_nonempty(j);
  const double total = j.total();
  EntropyDecomposition e;
  e.h_x = entropy(j.marginal_x(), total);
  e.h_y = entropy(j.marginal_y(), total);
  const double h_xy = entropy(j.counts(), total);
  e.h_x_given_y = h_xy - e.h_y;
  e.mi = e.h_x - e.h_x_given_y;
  return e;
}

NceBoundCheck verify_nce_bound(const JointHistogram& j, std::size_t n_negatives,
                               std::size_t n_samples, Rng& rng) {
  require_nonempty(j);
  require(j.nx() <= 16 && j.ny() <= 16, ErrorKind::config,
          "bound check supports alphabets of at most 16 symbols");
  require(n_negatives >= 2, ErrorKind::config, "bound check needs N >= 2");
  require(n_samples >= 2, ErrorKind::config, "bound check needs at least 2 samples");
  const double total = j.total();
  const auto mx = j.marginal_x();
  const auto my = j.marginal_y();
  for (double m : mx) require(m > 0.0, ErrorKind::data, "degenerate joint: zero X marginal");
  for (double m : my) require(m > 0.0, ErrorKind::data, "degenerate joint: zero Y marginal");

  // Inverse-CDF sampling of positive pairs from the joint.
  std::vector<double> cdf(j.counts().size());
  std::partial_sum(j.counts().begin(), j.counts().end(), cdf.begin());
  const double log_nm1 = std::log(static_cast<double>(n_negatives - 1));

  double sum = 0.0, sq = 0.0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    const double u = rng.uniform() * total;
    std::size_t cell = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    cell = std::min(cell, cdf.size() - 1);
    while (j.counts()[cell] == 0.0) --cell;  // u landed on a zero-width step
    const std::size_t x = cell / j.ny(), y = cell % j.ny();
    const double p = j.count(x, y) / total;
    const double pxpy = (mx[x] / total) * (my[y] / total);
    // log q(D=1 | x, y) with q = P / (P + (N-1) Px Py)
    const double log_q = std::log(p) - std::log(p + static_cast<double>(n_negatives - 1) * pxpy);
    const double v = log_q + log_nm1;
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(n_samples);
  NceBoundCheck out;
  out.exact_mi = mutual_information(j);
  out.bound_estimate = sum / n;
  const double var = std::max(sq / n - out.bound_estimate * out.bound_estimate, 0.0) * n / (n - 1);
  out.std_error = std::sqrt(var / n);
  out.holds = out.exact_mi >= out.bound_estimate - 3.0 * out.std_error;
  return out;
}

template <class T>
double binarized_activation_mi(const BasicTensor<T>& a_fp, std::size_t bins) {
  require(bins >= 2, ErrorKind::config, "MI diagnostic needs at least 2 bins");
  require(a_fp.rank() == 2 && a_fp.rows() > 0 && a_fp.cols() > 0, ErrorKind::dimension,
          "MI diagnostic needs a non-empty [batch x units] activation");
  const std::size_t batch = a_fp.rows();
  const std::size_t units = a_fp.cols();
  std::vector<T> column(batch), sorted(batch), edges(bins - 1);
  double total = 0.0;
  for (std::size_t u = 0; u < units; ++u) {
    for (std::size_t b = 0; b < batch; ++b) column[b] = a_fp(b, u);
    sorted = column;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t t = 1; t < bins; ++t) edges[t - 1] = sorted[std::min(batch - 1, t * batch / bins)];
    JointHistogram j(2, bins);
    for (T v : column) {
      const auto bin = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin());
      j.add(v >= T(0) ? 1 : 0, bin);
    }
    total += mutual_information(j);
  }
  return total / static_cast<double>(units);
}

template <class T>
double binarized_activation_mi(const ForwardCache<T>& cache, std::size_t k, std::size_t bins) {
  require(k >= 1 && k < cache.layers.size(), ErrorKind::config,
          "MI diagnostic layer " + std::to_string(k) + " is not a hidden layer");
  return binarized_activation_mi(cache.layers[k - 1].a_fp, bins);
}

template <class T>
CorrelationMatrix correlation_matrix(const BasicTensor<T>& embeddings, std::span<const int> labels) {
  require(embeddings.rank() == 2 && embeddings.rows() == labels.size(), ErrorKind::dimension,
          "one label per embedding row required");
  const std::size_t n = labels.size();
  const std::size_t dim = embeddings.cols();
  CorrelationMatrix cm;
  cm.n = n;
  cm.order.resize(n);
  std::iota(cm.order.begin(), cm.order.end(), std::size_t{0});
  std::stable_sort(cm.order.begin(), cm.order.end(),
                   [&](std::size_t a, std::size_t b) { return labels[a] < labels[b]; });
  for (std::size_t r = 0; r < n; ++r) {
    cm.sorted_labels.push_back(labels[cm.order[r]]);
    if (r == 0 || cm.sorted_labels[r] != cm.sorted_labels[r - 1]) {
      cm.class_boundaries.push_back(r);
      cm.classes.push_back(cm.sorted_labels[r]);
    }
  }

  auto cosine = [](std::span<const double> a, std::span<const double> b, double na, double nb) {
    if (na == 0.0 || nb == 0.0) return 0.0;
    double dot = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) dot += a[d] * b[d];
    return std::clamp(dot / (na * nb), -1.0, 1.0);
  };

  std::vector<double> rows(n * dim);
  std::vector<double> norms(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto src = embeddings.row(cm.order[r]);
    double sq = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      rows[r * dim + d] = src[d];
      sq += static_cast<double>(src[d]) * src[d];
    }
    norms[r] = std::sqrt(sq);
  }
  auto row = [&](const std::vector<double>& m, std::size_t r) {
    return std::span<const double>(m).subspan(r * dim, dim);
  };

  cm.values.assign(n * n, 0.0);
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t r = 0; r < n; ++r) {
    cm.values[r * n + r] = norms[r] == 0.0 ? 0.0 : 1.0;
    for (std::size_t c = r + 1; c < n; ++c) {
      const double v = cosine(row(rows, r), row(rows, c), norms[r], norms[c]);
      cm.values[r * n + c] = cm.values[c * n + r] = v;
      if (cm.sorted_labels[r] == cm.sorted_labels[c]) {
        intra += v;
        ++n_intra;
      } else {
        inter += v;
        ++n_inter;
      }
    }
  }
  cm.intra_mean = n_intra ? intra / static_cast<double>(n_intra) : 0.0;
  cm.inter_mean = n_inter ? inter / static_cast<double>(n_inter) : 0.0;

  const std::size_t n_cls = cm.classes.size();
  std::vector<double> means(n_cls * dim, 0.0), mean_norms(n_cls);
  for (std::size_t k = 0; k < n_cls; ++k) {
    const std::size_t begin = cm.class_boundaries[k];
    const std::size_t end = k + 1 < n_cls ? cm.class_boundaries[k + 1] : n;
    for (std::size_t r = begin; r < end; ++r) {
      for (std::size_t d = 0; d < dim; ++d) means[k * dim + d] += rows[r * dim + d];
    }
    double sq = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      means[k * dim + d] /= static_cast<double>(end - begin);
      sq += means[k * dim + d] * means[k * dim + d];
    }
    mean_norms[k] = std::sqrt(sq);
  }
  cm.class_mean.assign(n_cls * n_cls, 0.0);
  for (std::size_t a = 0; a < n_cls; ++a) {
    for (std::size_t b = 0; b < n_cls; ++b) {
      cm.class_mean[a * n_cls + b] =
          a == b ? (mean_norms[a] == 0.0 ? 0.0 : 1.0)
                 : cosine(row(means, a), row(means, b), mean_norms[a], mean_norms[b]);
    }
  }
  return cm;
}

template double binarized_activation_mi(const BasicTensor<float>&, std::size_t);
template double binarized_activation_mi(const BasicTensor<double>&, std::size_t);
template double binarized_activation_mi(const ForwardCache<float>&, std::size_t, std::size_t);
template double binarized_activation_mi(const ForwardCache<double>&, std::size_t, std::size_t);
template CorrelationMatrix correlation_matrix(const BasicTensor<float>&, std::span<const int>);
template CorrelationMatrix correlation_matrix(const BasicTensor<double>&, std::span<const int>);

}  // namespace bnn
