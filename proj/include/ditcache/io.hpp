#pragma once

#include <filesystem>
#include <string>

#include "ditcache/tensor.hpp"

namespace ditcache {

// "DTEN" binary tensor file: magic 'DTEN', u8 version=1, u32 rank,
// rank x u32 dims, little-endian f32 payload.
void dten_write(const std::filesystem::path& path, const Tensor& t);
Tensor dten_read(const std::filesystem::path& path);

// Serializes into the exact byte layout dten_write produces.
std::string dten_encode(const Tensor& t);
Tensor dten_decode(const std::string& bytes);

// Writes via a temp file in the same directory plus rename, so readers
// never observe a partial artifact.
void atomic_write_file(const std::filesystem::path& path, const std::string& contents);

std::string read_file(const std::filesystem::path& path);

// "fnv1a64:<16 hex digits>" over the file bytes.
std::string file_checksum(const std::filesystem::path& path);
std::string bytes_checksum(const std::string& bytes);

}  // namespace ditcache
