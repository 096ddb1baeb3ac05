#pragma once

// Versioned binary container of named tensors:
//
//   "BNNC" | u32 version | u32 record count | records...
//   record: u32 name length | name | u8 dtype | u32 rank | u64 dims[rank]
//           | u64 payload bytes | payload (little-endian)
//
// dtype tags: 0 f32, 1 f64, 2 u8, 3 u64. Text is stored as u8.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bnn/tensor.hpp"

namespace bnn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1, u8 = 2, u64 = 3 };

struct Record {
  std::string name;
  DType dtype = DType::u8;
  Shape shape;
  std::vector<std::uint8_t> payload;
};

class CheckpointWriter {
 public:
  void add(const std::string& name, std::span<const float> values, Shape shape);
  void add(const std::string& name, std::span<const double> values, Shape shape);
  void add(const std::string& name, std::span<const std::uint8_t> values, Shape shape);
  void add(const std::string& name, std::span<const std::uint64_t> values, Shape shape);
  void add_text(const std::string& name, const std::string& text);
  void add_u64(const std::string& name, std::uint64_t value);

  std::vector<std::uint8_t> bytes() const;
  void save(const std::string& path) const;

 private:
  std::vector<Record> records_;
};

class CheckpointReader {
 public:
  explicit CheckpointReader(std::vector<std::uint8_t> bytes);
  static CheckpointReader open(const std::string& path);

  std::uint32_t version() const { return version_; }
  bool has(const std::string& name) const;
  const Record& record(const std::string& name) const;
  const std::vector<Record>& records() const { return records_; }

  std::vector<float> f32(const std::string& name, const Shape& expected) const;
  std::vector<float> f32(const std::string& name) const;
  std::vector<double> f64(const std::string& name, Shape* shape = nullptr) const;
  std::vector<std::uint8_t> u8(const std::string& name, const Shape& expected) const;
  std::string text(const std::string& name) const;
  std::uint64_t u64(const std::string& name) const;

 private:
  std::uint32_t version_ = 0;
  std::vector<Record> records_;
};

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
// Write-then-rename so an interrupted save never leaves a torn file.
void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace bnn
