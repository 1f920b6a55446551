#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>

namespace itnet {

enum class FormatError { Io, BadMagic, BadVersion, Truncated, ExtentOverflow, BadValue };

inline const char* to_string(FormatError e) {
  switch (e) {
    case FormatError::Io: return "io error";
    case FormatError::BadMagic: return "bad magic";
    case FormatError::BadVersion: return "unsupported version";
    case FormatError::Truncated: return "truncated";
    case FormatError::ExtentOverflow: return "extent overflow";
    case FormatError::BadValue: return "bad value";
  }
  return "unknown";
}

class FormatException : public std::runtime_error {
 public:
  FormatException(FormatError code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}
  FormatError code() const noexcept { return code_; }

 private:
  FormatError code_;
};

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

// Little-endian encoder into an in-memory buffer.
class ByteWriter {
 public:
  template <typename V>
    requires std::is_arithmetic_v<V>
  void put(V value) {
    unsigned char bytes[sizeof(V)];
    std::memcpy(bytes, &value, sizeof(V));
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t i = 0; i < sizeof(V) / 2; ++i) std::swap(bytes[i], bytes[sizeof(V) - 1 - i]);
    }
    buffer_.append(reinterpret_cast<const char*>(bytes), sizeof(V));
  }

  void put_raw(std::string_view bytes) { buffer_.append(bytes); }

  // u16 length prefix followed by UTF-8 bytes.
  void put_string(std::string_view s) {
    if (s.size() > 0xFFFF) throw std::invalid_argument("string longer than 65535 bytes: " + std::string(s.substr(0, 32)));
    put(static_cast<std::uint16_t>(s.size()));
    buffer_.append(s);
  }

  const std::string& bytes() const noexcept { return buffer_; }

 private:
  std::string buffer_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string context) : bytes_(bytes), context_(std::move(context)) {}

  template <typename V>
    requires std::is_arithmetic_v<V>
  V get() {
    need(sizeof(V));
    unsigned char raw[sizeof(V)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(V));
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t i = 0; i < sizeof(V) / 2; ++i) std::swap(raw[i], raw[sizeof(V) - 1 - i]);
    }
    pos_ += sizeof(V);
    V v;
    std::memcpy(&v, raw, sizeof(V));
    return v;
  }

  std::string_view get_raw(std::size_t n) {
    need(n);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::string get_string() {
    const auto n = get<std::uint16_t>();
    return std::string(get_raw(n));
  }

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }

  void need(std::size_t n) const {
    if (remaining() < n) {
      throw FormatException(FormatError::Truncated, context_ + ": needs " + std::to_string(n) +
                                                        " more bytes at offset " + std::to_string(pos_) +
                                                        ", " + std::to_string(remaining()) + " left");
    }
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
  std::string context_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatException(FormatError::Io, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Writes through a sibling temporary file and renames it over the target, so a
// reader never observes a partially written file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatException(FormatError::Io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatException(FormatError::Io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw FormatException(FormatError::Io, "cannot rename " + tmp.string() + " to " + path.string());
}

}  // namespace itnet
