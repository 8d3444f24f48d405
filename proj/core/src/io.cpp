#include "psae/io.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace psae {

std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> bytes) {
  std::array<std::uint8_t, 32> out{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != 32) {
    throw Error("sha256: digest computation failed");
  }
  return out;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char hex[] = "0123456789abcdef";
  std::string s;
  for (std::uint8_t b : sha256(bytes)) {
    s.push_back(hex[b >> 4]);
    s.push_back(hex[b & 0xF]);
  }
  return s;
}

std::string sha256_file(const std::string& path) { return sha256_hex(read_file(path)); }

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing '" + path + "'");
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

void ByteWriter::f32_array(std::span<const float> v) {
  if constexpr (std::endian::native == std::endian::little) {
    bytes({reinterpret_cast<const std::uint8_t*>(v.data()), v.size() * sizeof(float)});
  } else {
    for (float x : v) f32(x);
  }
}

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  if (n > remaining()) {
    throw FormatError(what_ + ": truncated (wanted " + std::to_string(n) + " bytes at offset " +
                      std::to_string(pos_) + ", " + std::to_string(remaining()) + " left)");
  }
  auto s = data_.subspan(pos_, n);
  pos_ += n;
  return s;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  const auto b = bytes(n);
  return std::string(b.begin(), b.end());
}

void ByteReader::f32_array(std::span<float> out) {
  if constexpr (std::endian::native == std::endian::little) {
    const auto b = bytes(out.size() * sizeof(float));
    std::memcpy(out.data(), b.data(), b.size());
  } else {
    for (float& x : out) x = f32();
  }
}

}  // namespace psae
