#include "stsr/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "stsr/errors.hpp"

namespace stsr {

namespace {

static_assert(std::endian::native == std::endian::little, "container encoding assumes a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& buf, T v) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.insert(buf.end(), bytes, bytes + sizeof(T));
}

constexpr std::size_t kMaxRank = 8;

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  offset += sizeof(T);
  return v;
}

}  // namespace

void ByteWriter::u8(std::uint8_t v) { buffer_.push_back(v); }
void ByteWriter::u16(std::uint16_t v) { put(buffer_, v); }
void ByteWriter::u32(std::uint32_t v) { put(buffer_, v); }
void ByteWriter::u64(std::uint64_t v) { put(buffer_, v); }
void ByteWriter::i32(std::int32_t v) { put(buffer_, v); }
void ByteWriter::f32(float v) { put(buffer_, v); }
void ByteWriter::f64(double v) { put(buffer_, v); }

void ByteWriter::raw(std::span<const std::uint8_t> bytes) { buffer_.insert(buffer_.end(), bytes.begin(), bytes.end()); }

void ByteWriter::string(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buffer_.insert(buffer_.end(), s.begin(), s.end());
}

void ByteWriter::tensor(const Tensor& t) {
  u8(static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) {
    u32(static_cast<std::uint32_t>(e));
  }
  const auto d = t.data();
  const auto* p = reinterpret_cast<const std::uint8_t*>(d.data());
  buffer_.insert(buffer_.end(), p, p + d.size() * sizeof(float));
}

void ByteReader::require(std::size_t n, const char* what) const {
  if (n > bytes_.size() - offset_) {
    throw TruncationError(offset_ + n, bytes_.size(), what);
  }
}

std::uint8_t ByteReader::u8(const char* what) {
  require(1, what);
  return bytes_[offset_++];
}

std::uint16_t ByteReader::u16(const char* what) {
  require(2, what);
  return get<std::uint16_t>(bytes_, offset_);
}

std::uint32_t ByteReader::u32(const char* what) {
  require(4, what);
  return get<std::uint32_t>(bytes_, offset_);
}

std::uint64_t ByteReader::u64(const char* what) {
  require(8, what);
  return get<std::uint64_t>(bytes_, offset_);
}

std::int32_t ByteReader::i32(const char* what) {
  require(4, what);
  return get<std::int32_t>(bytes_, offset_);
}

float ByteReader::f32(const char* what) {
  require(4, what);
  return get<float>(bytes_, offset_);
}

double ByteReader::f64(const char* what) {
  require(8, what);
  return get<double>(bytes_, offset_);
}

std::span<const std::uint8_t> ByteReader::raw(std::size_t n, const char* what) {
  require(n, what);
  auto s = bytes_.subspan(offset_, n);
  offset_ += n;
  return s;
}

std::string ByteReader::string(const char* what) {
  const auto n = u32(what);
  const auto s = raw(n, what);
  return {s.begin(), s.end()};
}

Tensor ByteReader::tensor(const char* what) {
  const auto rank = u8(what);
  if (rank > kMaxRank) {
    throw FormatError(std::string("implausible tensor rank ") + std::to_string(rank) + " in " + what);
  }
  Shape shape(rank);
  for (auto& e : shape) {
    e = u32(what);
  }
  const std::size_t n = shape_numel(shape);
  const auto bytes = raw(n * sizeof(float), what);
  std::vector<float> values(n);
  std::memcpy(values.data(), bytes.data(), bytes.size());
  return Tensor::from_data(std::move(shape), std::move(values));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string() + " for reading");
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) {
    throw IoError("read failure on " + path.string());
  }
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("write failure on " + path.string());
  }
}

}  // namespace stsr
