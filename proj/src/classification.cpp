#include "bnn/classification.hpp"

#include <cmath>

namespace bnn {

template <class T>
std::size_t argmax_row(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c) {
    if (row[c] > row[best]) best = c;
  }
  return best;
}

template <class T>
CrossEntropy<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  require(logits.rank() == 2 && logits.rows() == labels.size(), ErrorKind::dimension,
          "cross-entropy expects one label per logits row");
  const std::size_t batch = logits.rows();
  const std::size_t classes = logits.cols();
  require(batch > 0, ErrorKind::dimension, "cross-entropy on an empty batch");
  CrossEntropy<T> out;
  out.grad = BasicTensor<T>(logits.shape());
  double total = 0.0;
  std::vector<double> p(classes);
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    require(y >= 0 && static_cast<std::size_t>(y) < classes, ErrorKind::data,
            "label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    const auto row = logits.row(b);
    double mx = row[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max<double>(mx, row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      p[c] = std::exp(static_cast<double>(row[c]) - mx);
      z += p[c];
    }
    const double log_z = mx + std::log(z);
    total += log_z - row[y];
    for (std::size_t c = 0; c < classes; ++c) {
      const double prob = p[c] / z;
      out.grad(b, c) = static_cast<T>((prob - (static_cast<int>(c) == y ? 1.0 : 0.0)) /
                                      static_cast<double>(batch));
    }
    if (argmax_row(row) == static_cast<std::size_t>(y)) ++out.correct;
  }
  out.loss = total / static_cast<double>(batch);
  require(std::isfinite(out.loss), ErrorKind::numeric, "cross-entropy is not finite");
  return out;
}

template <class T>
StepResult<T> classification_step(Network<T>& net, const BasicTensor<T>& x,
                                  std::span<const int> labels) {
  auto fwd = forward(net, x, Mode::train);
  auto ce = softmax_cross_entropy(fwd.logits, labels);
  StepResult<T> out;
  out.cls_loss = ce.loss;
  out.correct = ce.correct;
  out.grads = backward(net, fwd.cache, ce.grad);
  return out;
}

template std::size_t argmax_row(std::span<const float>);
template std::size_t argmax_row(std::span<const double>);
template CrossEntropy<float> softmax_cross_entropy(const BasicTensor<float>&, std::span<const int>);
template CrossEntropy<double> softmax_cross_entropy(const BasicTensor<double>&,
                                                    std::span<const int>);
template StepResult<float> classification_step(Network<float>&, const BasicTensor<float>&,
                                               std::span<const int>);
template StepResult<double> classification_step(Network<double>&, const BasicTensor<double>&,
                                                std::span<const int>);

}  // namespace bnn
