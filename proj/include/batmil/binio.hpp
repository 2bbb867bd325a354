#pragma once

// Little-endian byte buffers with CRC32 framing, shared by the checkpoint
// and feature-bag formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "batmil/error.hpp"

namespace batmil::binio {

std::uint32_t crc32(const std::uint8_t* data, std::size_t n);

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <class T>
  void put(T v) {
    static_assert(std::endian::native == std::endian::little, "little-endian host required");
    bytes(&v, sizeof(T));
  }
  void str16(std::string_view s) {
    if (s.size() > 0xFFFF) throw FormatError("string too long for u16 length prefix");
    put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  /// Append CRC32 of everything written so far.
  void finish_crc() { put<std::uint32_t>(crc32(buf_.data(), buf_.size())); }
  const std::vector<std::uint8_t>& buffer() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t n, std::string context) : p_(data), n_(n), ctx_(std::move(context)) {}

  void bytes(void* out, std::size_t n) {
    if (n > n_ - pos_) throw FormatError(ctx_ + ": truncated at byte " + std::to_string(pos_));
    std::memcpy(out, p_ + pos_, n);
    pos_ += n;
  }
  template <class T>
  T get() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::string str16() {
    const auto len = get<std::uint16_t>();
    std::string s(len, '\0');
    bytes(s.data(), len);
    return s;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return n_ - pos_; }
  const std::string& context() const { return ctx_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
  std::string ctx_;
};

/// Verify the trailing CRC32 and return the payload length (bytes before it).
std::size_t check_crc(const std::vector<std::uint8_t>& file, const std::string& context);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Write via a temporary sibling and rename into place.
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace batmil::binio
