#pragma once

// Flat ustar archive I/O for checkpoints and frozen-encoder weight files.
// Plain POSIX tar, uncompressed, fixed zero mtime, so archives are
// byte-reproducible and readable from any language's tar library.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace salm2 {

struct ArchiveMember {
  std::string name;
  std::string bytes;
};

// Writes atomically: temp file in the same directory, then rename.
void write_archive(const std::string& path, const std::vector<ArchiveMember>& members);

// Throws CheckpointError on missing, truncated, or malformed archives.
std::map<std::string, std::string> read_archive(const std::string& path);

// Atomic small-file write used for JSON/PNG outputs as well.
void atomic_write_file(const std::string& path, const std::string& bytes);

// Little-endian float32 blob helpers.
std::string floats_to_le_bytes(const std::vector<float>& v);
std::vector<float> le_bytes_to_floats(const std::string& bytes);

}  // namespace salm2
