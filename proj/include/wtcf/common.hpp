#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace wtcf {

// Error taxonomy mirrored by the CLI exit codes.
enum class ErrorKind : int {
  usage = 1,    // bad configuration, invalid arguments, contract violations
  data = 2,     // malformed or inconsistent input data
  numeric = 3,  // NaN/Inf during training, failed gradient verification
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

inline Error usage_error(const std::string& msg) { return Error(ErrorKind::usage, msg); }
inline Error data_error(const std::string& msg) { return Error(ErrorKind::data, msg); }
inline Error numeric_error(const std::string& msg) { return Error(ErrorKind::numeric, msg); }

// FNV-1a, used for input provenance records in output documents.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t hash_file(const std::filesystem::path& path);
std::string to_hex(std::uint64_t v);

// Format version stamped into every persisted artifact (reports, caches, weights).
inline constexpr int kArtifactFormatVersion = 1;

}  // namespace wtcf
