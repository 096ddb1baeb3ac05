#include "bnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>

namespace bnn {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::data, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                        const std::string& path) {
  require(bytes.size() >= offset + 4, ErrorKind::data, path + ": truncated IDX header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace

void Dataset::validate() const {
  require(images.rows() == labels.size(), ErrorKind::data,
          std::to_string(images.rows()) + " images but " + std::to_string(labels.size()) +
              " labels");
  require(shape_size(sample_shape) == images.cols() || labels.empty(), ErrorKind::data,
          "sample shape " + shape_string(sample_shape) + " does not match image width");
  for (int y : labels) {
    require(y >= 0 && static_cast<std::size_t>(y) < n_classes, ErrorKind::data,
            "label " + std::to_string(y) + " outside [0, " + std::to_string(n_classes) + ")");
  }
  require(images.all_finite(), ErrorKind::data, "non-finite pixel values");
}

Dataset read_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  const std::uint32_t img_magic = read_be32(img, 0, images_path);
  require(img_magic == 2051, ErrorKind::data,
          images_path + ": bad magic " + std::to_string(img_magic) + " (expected 2051)");
  const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
  require(lab_magic == 2049, ErrorKind::data,
          labels_path + ": bad magic " + std::to_string(lab_magic) + " (expected 2049)");

  const std::size_t n = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  const std::size_t n_labels = read_be32(lab, 4, labels_path);
  require(rows > 0 && cols > 0, ErrorKind::data, images_path + ": zero image dimension");
  require(n == n_labels, ErrorKind::data,
          "image/label count mismatch: " + std::to_string(n) + " vs " + std::to_string(n_labels));
  const std::size_t pixels = rows * cols;
  require(img.size() == 16 + n * pixels, ErrorKind::data,
          images_path + ": payload has " + std::to_string(img.size() - 16) + " bytes, expected " +
              std::to_string(n * pixels));
  require(lab.size() == 8 + n, ErrorKind::data,
          labels_path + ": payload has " + std::to_string(lab.size() - 8) + " bytes, expected " +
              std::to_string(n));

  Dataset ds;
  ds.sample_shape = {1, rows, cols};
  ds.images = FpTensor(Shape{n, pixels});
  for (std::size_t i = 0; i < n * pixels; ++i) ds.images[i] = img[16 + i] / 255.0f;
  ds.labels.resize(n);
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.n_classes = std::max<std::size_t>(10, static_cast<std::size_t>(max_label + 1));
  return ds;
}

Dataset read_cifar_binary(const std::vector<std::string>& paths, std::size_t n_classes) {
  constexpr std::size_t record = 3073;
  constexpr std::size_t pixels = 3072;
  require(!paths.empty(), ErrorKind::data, "no CIFAR batch files given");
  std::vector<std::vector<std::uint8_t>> files;
  std::size_t n = 0;
  for (const auto& p : paths) {
    files.push_back(read_file(p));
    require(!files.back().empty() && files.back().size() % record == 0, ErrorKind::data,
            p + ": length " + std::to_string(files.back().size()) +
                " is not a multiple of 3073");
    n += files.back().size() / record;
  }
  Dataset ds;
  ds.n_classes = n_classes;
  ds.sample_shape = {3, 32, 32};
  ds.images = FpTensor(Shape{n, pixels});
  ds.labels.resize(n);
  std::size_t i = 0;
  for (std::size_t f = 0; f < files.size(); ++f) {
    const auto& bytes = files[f];
    for (std::size_t r = 0; r < bytes.size() / record; ++r, ++i) {
      const std::uint8_t* rec = bytes.data() + r * record;
      require(rec[0] < n_classes, ErrorKind::data,
              paths[f] + ": record " + std::to_string(r) + " has label " +
                  std::to_string(rec[0]) + " >= " + std::to_string(n_classes));
      ds.labels[i] = rec[0];
      auto row = ds.images.row(i);
      for (std::size_t p = 0; p < pixels; ++p) row[p] = rec[1 + p] / 255.0f;
    }
  }
  return ds;
}

void normalize(Dataset& ds, const Normalization* norm) {
  const std::size_t channels = ds.channels();
  const std::size_t plane = ds.features() / channels;
  Normalization stats;
  if (norm) {
    require(norm->mean.size() == channels && norm->std.size() == channels, ErrorKind::config,
            "normalization constants need one mean/std per channel");
    stats = *norm;
  } else {
    require(ds.size() > 0, ErrorKind::data, "cannot compute statistics of an empty dataset");
    stats.mean.resize(channels);
    stats.std.resize(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      double sum = 0.0, sq = 0.0;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto row = ds.images.row(i);
        for (std::size_t p = 0; p < plane; ++p) {
          const double v = row[c * plane + p];
          sum += v;
          sq += v * v;
        }
      }
      const double count = static_cast<double>(ds.size() * plane);
      const double mean = sum / count;
      const double var = std::max(sq / count - mean * mean, 0.0);
      stats.mean[c] = static_cast<float>(mean);
      stats.std[c] = static_cast<float>(std::max(std::sqrt(var), 1e-6));
    }
  }
  for (float s : stats.std) require(s > 0.0f, ErrorKind::config, "normalization std must be > 0");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto row = ds.images.row(i);
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        float& v = row[c * plane + p];
        v = (v - stats.mean[c]) / stats.std[c];
      }
    }
  }
  ds.norm = std::move(stats);
}

void denormalize(Dataset& ds) {
  const std::size_t channels = ds.channels();
  const std::size_t plane = ds.features() / channels;
  require(ds.norm.mean.size() == channels, ErrorKind::config, "dataset is not normalized");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto row = ds.images.row(i);
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        float& v = row[c * plane + p];
        v = v * ds.norm.std[c] + ds.norm.mean[c];
      }
    }
  }
  ds.norm = {};
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const Normalization* norm) {
  Dataset ds = read_idx(images_path, labels_path);
  normalize(ds, norm);
  ds.validate();
  return ds;
}

Dataset load_cifar_binary(const std::vector<std::string>& paths, std::size_t n_classes,
                          const Normalization* norm) {
  Dataset ds = read_cifar_binary(paths, n_classes);
  normalize(ds, norm);
  ds.validate();
  return ds;
}

DataFormat parse_data_format(const std::string& name) {
  if (name == "idx") return DataFormat::idx;
  if (name == "cifar") return DataFormat::cifar;
  fail(ErrorKind::config, "unknown data format '" + name + "' (expected idx or cifar)");
}

Dataset subset_per_class(const Dataset& ds, std::size_t per_class) {
  if (per_class == 0) return ds;
  std::vector<std::size_t> taken(ds.n_classes, 0);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto& t = taken[static_cast<std::size_t>(ds.labels[i])];
    if (t < per_class) {
      ++t;
      keep.push_back(i);
    }
  }
  Dataset out;
  out.n_classes = ds.n_classes;
  out.sample_shape = ds.sample_shape;
  out.norm = ds.norm;
  out.images = FpTensor(Shape{keep.size(), ds.features()});
  out.labels.reserve(keep.size());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const auto src = ds.images.row(keep[r]);
    std::copy(src.begin(), src.end(), out.images.row(r).begin());
    out.labels.push_back(ds.labels[keep[r]]);
  }
  return out;
}

DataSplits load_splits(const std::string& dir, DataFormat format, std::size_t train_per_class,
                       std::size_t test_per_class) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  DataSplits s;
  if (format == DataFormat::idx) {
    s.train = read_idx((root / "train-images-idx3-ubyte").string(),
                       (root / "train-labels-idx1-ubyte").string());
    s.test = read_idx((root / "t10k-images-idx3-ubyte").string(),
                      (root / "t10k-labels-idx1-ubyte").string());
    s.test.n_classes = s.train.n_classes = std::max(s.train.n_classes, s.test.n_classes);
  } else {
    std::vector<std::string> train_files;
    for (int b = 1; b <= 5; ++b) {
      train_files.push_back((root / ("data_batch_" + std::to_string(b) + ".bin")).string());
    }
    s.train = read_cifar_binary(train_files);
    s.test = read_cifar_binary({(root / "test_batch.bin").string()});
  }
  s.train = subset_per_class(s.train, train_per_class);
  s.test = subset_per_class(s.test, test_per_class);
  normalize(s.train);
  normalize(s.test, &s.train.norm);
  s.train.validate();
  s.test.validate();
  return s;
}

void augment_with(std::span<float> image, std::size_t channels, std::size_t height,
                  std::size_t width, std::size_t pad, std::size_t dx, std::size_t dy, bool flip) {
  require(image.size() == channels * height * width, ErrorKind::dimension,
          "augment: image size does not match its geometry");
  require(dx <= 2 * pad && dy <= 2 * pad, ErrorKind::dimension, "augment: crop offset too large");
  std::vector<float> out(image.size(), 0.0f);
  for (std::size_t c = 0; c < channels; ++c) {
    const float* src = image.data() + c * height * width;
    float* dst = out.data() + c * height * width;
    for (std::size_t y = 0; y < height; ++y) {
      // Row y of the crop is row y + dy - pad of the source.
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(pad);
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) continue;
      for (std::size_t x = 0; x < width; ++x) {
        const std::ptrdiff_t sx =
            static_cast<std::ptrdiff_t>(x + dx) - static_cast<std::ptrdiff_t>(pad);
        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(width)) continue;
        const std::size_t ox = flip ? width - 1 - x : x;
        dst[y * width + ox] = src[static_cast<std::size_t>(sy) * width + static_cast<std::size_t>(sx)];
      }
    }
  }
  std::copy(out.begin(), out.end(), image.begin());
}

void augment(std::span<float> image, std::size_t channels, std::size_t height, std::size_t width,
             Rng& rng, std::size_t pad) {
  const std::size_t dx = static_cast<std::size_t>(rng.below(2 * pad + 1));
  const std::size_t dy = static_cast<std::size_t>(rng.below(2 * pad + 1));
  const bool flip = rng.coin();
  augment_with(image, channels, height, width, pad, dx, dy, flip);
}

Batch gather(const Dataset& ds, std::span<const std::size_t> indices) {
  Batch b;
  b.x = FpTensor(Shape{indices.size(), ds.features()});
  b.labels.reserve(indices.size());
  b.indices.assign(indices.begin(), indices.end());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    require(indices[r] < ds.size(), ErrorKind::dimension, "sample index out of range");
    const auto src = ds.images.row(indices[r]);
    std::copy(src.begin(), src.end(), b.x.row(r).begin());
    b.labels.push_back(ds.labels[indices[r]]);
  }
  return b;
}

BatchSampler::BatchSampler(std::size_t n, std::size_t batch_size, bool train, std::uint64_t seed) {
  require(batch_size >= 1, ErrorKind::config, "batch size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (train) {
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
    }
  }
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (train && end - start < batch_size) break;
    batches_.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                          order.begin() + static_cast<std::ptrdiff_t>(end));
  }
}

void write_idx_images(const std::string& path, const std::vector<std::uint8_t>& pixels,
                      std::size_t n, std::size_t rows, std::size_t cols) {
  require(pixels.size() == n * rows * cols, ErrorKind::dimension, "IDX image payload size");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::data, "cannot write " + path);
  put_be32(out, 2051);
  put_be32(out, static_cast<std::uint32_t>(n));
  put_be32(out, static_cast<std::uint32_t>(rows));
  put_be32(out, static_cast<std::uint32_t>(cols));
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  require(out.good(), ErrorKind::data, "write failed: " + path);
}

void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::data, "cannot write " + path);
  put_be32(out, 2049);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  require(out.good(), ErrorKind::data, "write failed: " + path);
}

}  // namespace bnn
