#include "detrack/tensor.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace detrack {

namespace {

constexpr char kMagic[4] = {'D', 'T', 'T', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f64(std::string& out, double v) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<double>(bits);
}

}  // namespace

void write_dtt1(const std::filesystem::path& path, const FeatureMap& m) {
  if (m.height <= 0 || m.width <= 0 || m.channels <= 0) {
    throw std::invalid_argument("write_dtt1: empty tensor");
  }
  std::string buf;
  buf.reserve(16 + m.size() * 8);
  buf.append(kMagic, 4);
  put_u32(buf, static_cast<std::uint32_t>(m.height));
  put_u32(buf, static_cast<std::uint32_t>(m.width));
  put_u32(buf, static_cast<std::uint32_t>(m.channels));
  for (double v : m.data) put_f64(buf, v);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_dtt1: cannot open " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write_dtt1: short write to " + path.string());
}

FeatureMap read_dtt1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_dtt1: cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw std::runtime_error("read_dtt1: bad magic in " + path.string());
  }
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  const std::uint32_t h = get_u32(p + 4);
  const std::uint32_t w = get_u32(p + 8);
  const std::uint32_t d = get_u32(p + 12);
  const std::size_t count = static_cast<std::size_t>(h) * w * d;
  if (h == 0 || w == 0 || d == 0) throw std::runtime_error("read_dtt1: zero dimension in " + path.string());
  if (buf.size() != 16 + count * 8) {
    throw std::runtime_error("read_dtt1: truncated payload in " + path.string());
  }
  FeatureMap m(static_cast<int>(h), static_cast<int>(w), static_cast<int>(d));
  for (std::size_t i = 0; i < count; ++i) m.data[i] = get_f64(p + 16 + i * 8);
  return m;
}

}  // namespace detrack
