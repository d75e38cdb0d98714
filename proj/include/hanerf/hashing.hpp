#pragma once

#include <string>

namespace hanerf {

// Lowercase hex SHA-256 digests, used for run provenance records.
std::string sha256_bytes(const void* data, size_t n);
std::string sha256_file(const std::string& path);

}  // namespace hanerf
