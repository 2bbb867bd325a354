#include "batmil/binio.hpp"

#include <zlib.h>

#include <fstream>
#include <iterator>

namespace batmil::binio {

std::uint32_t crc32(const std::uint8_t* data, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = n > 0x40000000 ? 0x40000000 : static_cast<uInt>(n);
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::size_t check_crc(const std::vector<std::uint8_t>& file, const std::string& context) {
  if (file.size() < 4) throw FormatError(context + ": file too short");
  const std::size_t body = file.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, file.data() + body, 4);
  if (crc32(file.data(), body) != stored) throw FormatError(context + ": CRC32 mismatch (file corrupted)");
  return body;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace batmil::binio
