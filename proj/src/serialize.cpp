#include "picnet/serialize.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "picnet/common.hpp"

namespace picnet::io {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

uint32_t get_u32(std::istream& is, const std::string& what) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw IoError("truncated container while reading " + what);
  return v;
}

}  // namespace

const Tensor& Container::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a.tensor;
  throw IoError("container is missing array '" + name + "'");
}

bool Container::has(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

void write_container(const std::string& path, const char magic[8], uint32_t version,
                     const std::string& header, const std::vector<NamedArray>& arrays) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(magic, 8);
  put_u32(os, version);
  put_u32(os, static_cast<uint32_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  put_u32(os, static_cast<uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    put_u32(os, static_cast<uint32_t>(a.name.size()));
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put_u32(os, static_cast<uint32_t>(a.tensor.rank()));
    for (int d = 0; d < a.tensor.rank(); ++d)
      put_u32(os, static_cast<uint32_t>(a.tensor.dim(d)));
    os.write(reinterpret_cast<const char*>(a.tensor.data()),
             static_cast<std::streamsize>(a.tensor.numel() * sizeof(double)));
  }
  if (!os) throw IoError("write failed for '" + path + "'");
}

Container read_container(const std::string& path, const char magic[8],
                         uint32_t expected_version) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  char got[8];
  if (!is.read(got, 8)) throw IoError("'" + path + "' is too short to be a container");
  if (std::memcmp(got, magic, 8) != 0)
    throw IoError("'" + path + "' has the wrong file signature");
  Container c;
  c.version = get_u32(is, "format version");
  if (c.version != expected_version)
    throw CompatibilityError("'" + path + "' uses format version " +
                             std::to_string(c.version) + ", expected " +
                             std::to_string(expected_version));
  const uint32_t header_len = get_u32(is, "header length");
  c.header.resize(header_len);
  if (header_len > 0 && !is.read(c.header.data(), header_len))
    throw IoError("truncated container header in '" + path + "'");
  const uint32_t count = get_u32(is, "array count");
  c.arrays.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const uint32_t name_len = get_u32(is, "array name length");
    a.name.resize(name_len);
    if (!is.read(a.name.data(), name_len))
      throw IoError("truncated array name in '" + path + "'");
    const uint32_t rank = get_u32(is, "array rank");
    if (rank > 8) throw IoError("implausible array rank in '" + path + "'");
    std::vector<int> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) {
      const uint32_t dim = get_u32(is, "array dim");
      if (dim == 0 || dim > (1u << 28)) throw IoError("implausible array dim in '" + path + "'");
      shape[d] = static_cast<int>(dim);
    }
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(double))))
      throw IoError("truncated array payload for '" + a.name + "' in '" + path + "'");
    a.tensor = std::move(t);
    c.arrays.push_back(std::move(a));
  }
  return c;
}

uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 1469598103934665603ull;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t file_checksum(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for checksum");
  std::ostringstream buf;
  buf << is.rdbuf();
  const std::string bytes = buf.str();
  return fnv1a64(bytes.data(), bytes.size());
}

std::string checksum_hex(uint64_t value) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << value;
  return os.str();
}

}  // namespace picnet::io
