#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stsr/tensor.hpp"

namespace stsr {

/// Little-endian encoder for the dataset and checkpoint containers.
class ByteWriter {
 public:
  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i32(std::int32_t v);
  void f32(float v);
  void f64(double v);
  void raw(std::span<const std::uint8_t> bytes);
  /// u32 length followed by the bytes.
  void string(const std::string& s);
  /// u8 rank, u32 extents, then float32 values.
  void tensor(const Tensor& t);

  const std::vector<std::uint8_t>& bytes() const { return buffer_; }

 private:
  std::vector<std::uint8_t> buffer_;
};

/// Bounds-checked decoder. Running past the end raises TruncationError with the
/// byte count the read needed and the byte count available.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8(const char* what);
  std::uint16_t u16(const char* what);
  std::uint32_t u32(const char* what);
  std::uint64_t u64(const char* what);
  std::int32_t i32(const char* what);
  float f32(const char* what);
  double f64(const char* what);
  std::span<const std::uint8_t> raw(std::size_t n, const char* what);
  std::string string(const char* what);
  Tensor tensor(const char* what);

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return bytes_.size() - offset_; }

 private:
  void require(std::size_t n, const char* what) const;

  std::span<const std::uint8_t> bytes_;
  std::size_t offset_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace stsr
