#include "ditcache/io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ditcache/errors.hpp"
#include "ditcache/rng.hpp"

namespace ditcache {

namespace {

constexpr char kMagic[4] = {'D', 'T', 'E', 'N'};
constexpr uint8_t kVersion = 1;
constexpr uint32_t kMaxRank = 8;

void put_u32_le(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32_le(const std::string& s, size_t off) {
  return static_cast<uint32_t>(static_cast<unsigned char>(s[off])) |
         static_cast<uint32_t>(static_cast<unsigned char>(s[off + 1])) << 8 |
         static_cast<uint32_t>(static_cast<unsigned char>(s[off + 2])) << 16 |
         static_cast<uint32_t>(static_cast<unsigned char>(s[off + 3])) << 24;
}

}  // namespace

std::string dten_encode(const Tensor& t) {
  std::string out;
  out.reserve(9 + 4 * t.shape.size() + 4 * t.data.size());
  out.append(kMagic, 4);
  out.push_back(static_cast<char>(kVersion));
  put_u32_le(out, static_cast<uint32_t>(t.shape.size()));
  for (int d : t.shape) put_u32_le(out, static_cast<uint32_t>(d));
  for (float v : t.data) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32_le(out, bits);
  }
  return out;
}

Tensor dten_decode(const std::string& bytes) {
  if (bytes.size() < 9 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IoError("DTEN: bad magic");
  }
  const uint8_t version = static_cast<uint8_t>(bytes[4]);
  if (version != kVersion) {
    throw IoError("DTEN: unsupported version " + std::to_string(version));
  }
  const uint32_t rank = get_u32_le(bytes, 5);
  if (rank == 0 || rank > kMaxRank) {
    throw IoError("DTEN: rank " + std::to_string(rank) + " out of range");
  }
  if (bytes.size() < 9 + 4ull * rank) throw IoError("DTEN: truncated header");
  std::vector<int> shape(rank);
  size_t numel = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    const uint32_t d = get_u32_le(bytes, 9 + 4ull * i);
    if (d == 0 || d > (1u << 24)) throw IoError("DTEN: invalid dim " + std::to_string(d));
    shape[i] = static_cast<int>(d);
    numel *= d;
  }
  const size_t payload_off = 9 + 4ull * rank;
  if (bytes.size() != payload_off + 4 * numel) {
    throw IoError("DTEN: payload size mismatch (" +
                  std::to_string(bytes.size() - payload_off) + " bytes for " +
                  std::to_string(numel) + " elements)");
  }
  std::vector<float> data(numel);
  for (size_t i = 0; i < numel; ++i) {
    const uint32_t bits = get_u32_le(bytes, payload_off + 4 * i);
    std::memcpy(&data[i], &bits, 4);
  }
  Tensor t(std::move(shape), std::move(data));
  check_finite(t, "DTEN load");
  return t;
}

void dten_write(const std::filesystem::path& path, const Tensor& t) {
  atomic_write_file(path, dten_encode(t));
}

Tensor dten_read(const std::filesystem::path& path) {
  try {
    return dten_decode(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void atomic_write_file(const std::filesystem::path& path, const std::string& contents) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!f) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::string bytes_checksum(const std::string& bytes) {
  const uint64_t h = fnv1a64(bytes.data(), bytes.size());
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_checksum(const std::filesystem::path& path) {
  return bytes_checksum(read_file(path));
}

}  // namespace ditcache
