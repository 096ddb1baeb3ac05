#pragma once

#include <span>

#include "bnn/network.hpp"

namespace bnn {

template <class T>
struct CrossEntropy {
  double loss = 0.0;     // mean negative log-likelihood
  BasicTensor<T> grad;   // (softmax - onehot) / batch
  std::size_t correct = 0;
};

template <class T>
CrossEntropy<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

template <class T>
std::size_t argmax_row(std::span<const T> row);

// Forward in train mode, cross-entropy, backward. The whole training step
// when no auxiliary objective is active.
template <class T>
struct StepResult {
  double cls_loss = 0.0;
  std::size_t correct = 0;
  Gradients<T> grads;
};

template <class T>
StepResult<T> classification_step(Network<T>& net, const BasicTensor<T>& x,
                                  std::span<const int> labels);

}  // namespace bnn
