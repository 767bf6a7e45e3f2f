#pragma once

#include "dmsr/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace dmsr::data {

/// Any failure to obtain usable input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file that exists but cannot be decoded.
class FormatError : public DataError {
 public:
  enum class Kind { unsupported_magic, malformed_header, truncated_payload };

  FormatError(Kind kind, std::uint64_t offset, const std::string& what)
      : DataError(what + " (byte offset " + std::to_string(offset) + ")"), kind_(kind), offset_(offset) {}

  Kind kind() const { return kind_; }
  std::uint64_t offset() const { return offset_; }

 private:
  Kind kind_;
  std::uint64_t offset_;
};

// Scaling conventions:
//   PGM (P5): depth in [0,1] stored as round(v * 65535), 16-bit big-endian.
//             8-bit files (maxval < 256) are accepted and scaled by maxval.
//   PPM (P6): RGB in [0,1] stored as round(v * 255).
//   PFM (Pf/PF): raw float32, little-endian (negative scale), rows stored
//             bottom-to-top as the format requires.
// Images are [C,H,W] float tensors. Writers go through a temporary file and a
// rename, so a reader never sees a partial file.

Tensor<float> read_pgm(const std::filesystem::path& path);
void write_pgm16(const std::filesystem::path& path, const Tensor<float>& image);

Tensor<float> read_ppm(const std::filesystem::path& path);
void write_ppm8(const std::filesystem::path& path, const Tensor<float>& image);

Tensor<float> read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const Tensor<float>& image);

/// Dispatches on the file's magic bytes.
Tensor<float> read_image(const std::filesystem::path& path);

/// Write `bytes` to `path` via a temporary sibling and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace dmsr::data
