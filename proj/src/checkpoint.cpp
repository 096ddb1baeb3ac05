#include "bnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace bnn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in native order, which must be little-endian");

namespace {

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::f32:
      return 4;
    case DType::f64:
    case DType::u64:
      return 8;
    case DType::u8:
      return 1;
  }
  fail(ErrorKind::checkpoint, "unknown dtype tag " + std::to_string(static_cast<int>(t)));
}

template <class V>
Record make_record(const std::string& name, DType dtype, std::span<const V> values, Shape shape) {
  require(shape_size(shape) == values.size(), ErrorKind::dimension,
          "checkpoint record '" + name + "' shape does not match its data");
  Record r{name, dtype, std::move(shape), {}};
  r.payload.resize(values.size_bytes());
  if (!values.empty()) std::memcpy(r.payload.data(), values.data(), values.size_bytes());
  return r;
}

template <class V>
void put(std::vector<std::uint8_t>& out, V v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(V));
}

class Cursor {
 public:
  explicit Cursor(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <class V>
  V take() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::vector<std::uint8_t> take_bytes(std::uint64_t n) {
    need(n);
    std::vector<std::uint8_t> v(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    require(n <= bytes_.size() - pos_, ErrorKind::checkpoint,
            "checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

template <class V>
std::vector<V> decode(const Record& r, DType expected) {
  require(r.dtype == expected, ErrorKind::checkpoint,
          "checkpoint record '" + r.name + "' has an unexpected dtype");
  std::vector<V> out(r.payload.size() / sizeof(V));
  if (!out.empty()) std::memcpy(out.data(), r.payload.data(), r.payload.size());
  return out;
}

}  // namespace

void CheckpointWriter::add(const std::string& name, std::span<const float> values, Shape shape) {
  records_.push_back(make_record(name, DType::f32, values, std::move(shape)));
}
void CheckpointWriter::add(const std::string& name, std::span<const double> values, Shape shape) {
  records_.push_back(make_record(name, DType::f64, values, std::move(shape)));
}
void CheckpointWriter::add(const std::string& name, std::span<const std::uint8_t> values,
                           Shape shape) {
  records_.push_back(make_record(name, DType::u8, values, std::move(shape)));
}
void CheckpointWriter::add(const std::string& name, std::span<const std::uint64_t> values,
                           Shape shape) {
  records_.push_back(make_record(name, DType::u64, values, std::move(shape)));
}
void CheckpointWriter::add_text(const std::string& name, const std::string& text) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(text.data());
  add(name, std::span<const std::uint8_t>(p, text.size()), Shape{text.size()});
}
void CheckpointWriter::add_u64(const std::string& name, std::uint64_t value) {
  add(name, std::span<const std::uint64_t>(&value, 1), Shape{1});
}

std::vector<std::uint8_t> CheckpointWriter::bytes() const {
  std::vector<std::uint8_t> out{'B', 'N', 'N', 'C'};
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint32_t>(records_.size()));
  for (const auto& r : records_) {
    put(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put(out, static_cast<std::uint8_t>(r.dtype));
    put(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) put(out, static_cast<std::uint64_t>(d));
    put(out, static_cast<std::uint64_t>(r.payload.size()));
    out.insert(out.end(), r.payload.begin(), r.payload.end());
  }
  return out;
}

void CheckpointWriter::save(const std::string& path) const { write_file_atomic(path, bytes()); }

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::checkpoint, "cannot open checkpoint " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    require(out.good(), ErrorKind::checkpoint, "cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorKind::checkpoint, "write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

CheckpointReader::CheckpointReader(std::vector<std::uint8_t> bytes) {
  Cursor c(bytes);
  const auto magic = c.take_bytes(4);
  require(magic == std::vector<std::uint8_t>{'B', 'N', 'N', 'C'}, ErrorKind::checkpoint,
          "not a checkpoint (bad magic)");
  version_ = c.take<std::uint32_t>();
  require(version_ == kCheckpointVersion, ErrorKind::checkpoint,
          "checkpoint version " + std::to_string(version_) + " is not supported (expected " +
              std::to_string(kCheckpointVersion) + ")");
  const auto count = c.take<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    Record r;
    const auto name_len = c.take<std::uint32_t>();
    const auto name = c.take_bytes(name_len);
    r.name.assign(name.begin(), name.end());
    r.dtype = static_cast<DType>(c.take<std::uint8_t>());
    const std::size_t width = dtype_size(r.dtype);
    const auto rank = c.take<std::uint32_t>();
    require(rank <= 8, ErrorKind::checkpoint, "checkpoint record '" + r.name + "' has rank > 8");
    for (std::uint32_t d = 0; d < rank; ++d) r.shape.push_back(c.take<std::uint64_t>());
    const auto n_bytes = c.take<std::uint64_t>();
    require(n_bytes == shape_size(r.shape) * width, ErrorKind::checkpoint,
            "checkpoint record '" + r.name + "' payload does not match its shape");
    r.payload = c.take_bytes(n_bytes);
    records_.push_back(std::move(r));
  }
  require(c.done(), ErrorKind::checkpoint, "trailing bytes after the last checkpoint record");
}

CheckpointReader CheckpointReader::open(const std::string& path) {
  return CheckpointReader(read_file_bytes(path));
}

bool CheckpointReader::has(const std::string& name) const {
  for (const auto& r : records_) {
    if (r.name == name) return true;
  }
  return false;
}

const Record& CheckpointReader::record(const std::string& name) const {
  for (const auto& r : records_) {
    if (r.name == name) return r;
  }
  fail(ErrorKind::checkpoint, "checkpoint has no record '" + name + "'");
}

std::vector<float> CheckpointReader::f32(const std::string& name, const Shape& expected) const {
  const Record& r = record(name);
  require(r.shape == expected, ErrorKind::checkpoint,
          "checkpoint record '" + name + "' has shape " + shape_string(r.shape) + ", expected " +
              shape_string(expected));
  return decode<float>(r, DType::f32);
}

std::vector<float> CheckpointReader::f32(const std::string& name) const {
  return decode<float>(record(name), DType::f32);
}

std::vector<double> CheckpointReader::f64(const std::string& name, Shape* shape) const {
  const Record& r = record(name);
  if (shape) *shape = r.shape;
  return decode<double>(r, DType::f64);
}

std::vector<std::uint8_t> CheckpointReader::u8(const std::string& name, const Shape& expected) const {
  const Record& r = record(name);
  require(r.shape == expected, ErrorKind::checkpoint,
          "checkpoint record '" + name + "' has shape " + shape_string(r.shape) + ", expected " +
              shape_string(expected));
  return decode<std::uint8_t>(r, DType::u8);
}

std::string CheckpointReader::text(const std::string& name) const {
  const auto bytes = decode<std::uint8_t>(record(name), DType::u8);
  return {bytes.begin(), bytes.end()};
}

std::uint64_t CheckpointReader::u64(const std::string& name) const {
  const auto v = decode<std::uint64_t>(record(name), DType::u64);
  require(v.size() == 1, ErrorKind::checkpoint, "checkpoint record '" + name + "' is not scalar");
  return v[0];
}

}  // namespace bnn
