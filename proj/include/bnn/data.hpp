#pragma once

// Dataset loading (IDX and CIFAR binary), normalization, augmentation and
// seeded minibatching. Sample indices travel with every batch so per-sample
// state such as the memory banks stays addressable.

#include <cstdint>
#include <string>
#include <vector>

#include "bnn/rng.hpp"
#include "bnn/tensor.hpp"

namespace bnn {

// Per-channel affine normalization: x_norm = (x - mean) / std.
struct Normalization {
  std::vector<float> mean;
  std::vector<float> std;
};

struct Dataset {
  FpTensor images;            // [n x channels*height*width], channel-planar
  std::vector<int> labels;
  std::size_t n_classes = 0;
  Shape sample_shape;         // {channels, height, width}
  Normalization norm;

  std::size_t size() const { return labels.size(); }
  std::size_t features() const { return images.cols(); }
  std::size_t channels() const { return sample_shape.at(0); }
  void validate() const;
};

// Raw bytes scaled to [0, 1], before normalization.
Dataset read_idx(const std::string& images_path, const std::string& labels_path);
Dataset read_cifar_binary(const std::vector<std::string>& paths, std::size_t n_classes = 10);

// Computes per-channel statistics of `ds` (when `norm` is null) or applies the
// given ones, and records them in ds.norm.
void normalize(Dataset& ds, const Normalization* norm = nullptr);
void denormalize(Dataset& ds);

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const Normalization* norm = nullptr);
Dataset load_cifar_binary(const std::vector<std::string>& paths, std::size_t n_classes = 10,
                          const Normalization* norm = nullptr);

// Standard file names inside a data directory:
//   idx:   train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-...
//   cifar: data_batch_1.bin ... data_batch_5.bin, test_batch.bin
enum class DataFormat { idx, cifar };
DataFormat parse_data_format(const std::string& name);

struct DataSplits {
  Dataset train;
  Dataset test;
};

// Loads both splits; test is normalized with the training statistics. A
// nonzero per-class cap keeps the first `cap` samples of each class.
DataSplits load_splits(const std::string& dir, DataFormat format, std::size_t train_per_class = 0,
                       std::size_t test_per_class = 0);

Dataset subset_per_class(const Dataset& ds, std::size_t per_class);

// Zero-pad by `pad`, crop back to native size at offset (dx, dy) in
// [0, 2*pad], optionally mirror horizontally. Works on one channel-planar image.
void augment_with(std::span<float> image, std::size_t channels, std::size_t height,
                  std::size_t width, std::size_t pad, std::size_t dx, std::size_t dy, bool flip);
// Random crop and flip with p = 0.5.
void augment(std::span<float> image, std::size_t channels, std::size_t height, std::size_t width,
             Rng& rng, std::size_t pad = 4);

struct Batch {
  FpTensor x;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

Batch gather(const Dataset& ds, std::span<const std::size_t> indices);

// Seed-determined minibatch order. Train mode shuffles and drops the final
// partial batch; eval mode keeps dataset order and every sample.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, bool train, std::uint64_t seed = 0);

  const std::vector<std::vector<std::size_t>>& batches() const { return batches_; }
  std::size_t size() const { return batches_.size(); }

 private:
  std::vector<std::vector<std::size_t>> batches_;
};

// IDX writers for raw 8-bit images (n x rows x cols) and labels.
void write_idx_images(const std::string& path, const std::vector<std::uint8_t>& pixels,
                      std::size_t n, std::size_t rows, std::size_t cols);
void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

// Procedural handwritten-style digits in MNIST geometry (28 x 28, 10 classes).
struct SynthDigits {
  std::vector<std::uint8_t> pixels;  // n * 784
  std::vector<std::uint8_t> labels;
};
SynthDigits synth_digits(std::size_t n, std::uint64_t seed);

// Writes a train and test split in the IDX layout expected by load_splits.
void write_synth_mnist(const std::string& dir, std::size_t n_train, std::size_t n_test,
                       std::uint64_t seed);

}  // namespace bnn
