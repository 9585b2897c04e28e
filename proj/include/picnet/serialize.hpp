#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "picnet/tensor.hpp"

namespace picnet::io {

// On-disk container: 8-byte magic, u32 format version, u32 header length,
// canonical JSON header, u32 array count, then per array a length-prefixed
// name, u32 rank, u32 dims, and the raw little-endian float64 payload.
struct NamedArray {
  std::string name;
  Tensor tensor;
};

struct Container {
  uint32_t version = 0;
  std::string header;
  std::vector<NamedArray> arrays;

  const Tensor& find(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_container(const std::string& path, const char magic[8], uint32_t version,
                     const std::string& header, const std::vector<NamedArray>& arrays);

// Throws IoError on missing/corrupt files and CompatibilityError when the
// stored format version is not the expected one.
Container read_container(const std::string& path, const char magic[8],
                         uint32_t expected_version);

uint64_t fnv1a64(const void* data, size_t len);
uint64_t file_checksum(const std::string& path);
std::string checksum_hex(uint64_t value);

inline constexpr char kModelMagic[8] = {'P', 'I', 'C', 'M', 'O', 'D', 'L', '\0'};
inline constexpr char kDatasetMagic[8] = {'P', 'I', 'C', 'D', 'S', 'E', 'T', '\0'};
inline constexpr char kOptMagic[8] = {'P', 'I', 'C', 'O', 'P', 'T', 'S', '\0'};

}  // namespace picnet::io
