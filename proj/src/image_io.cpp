#include "dmsr/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dmsr::data {

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Cursor over a PNM/PFM header.
class HeaderReader {
 public:
  HeaderReader(const std::string& bytes, const fs::path& path) : bytes_(bytes), path_(path) {}

  std::string magic() {
    if (bytes_.size() < 2)
      throw FormatError(FormatError::Kind::unsupported_magic, 0, "'" + path_.string() + "' is too short to hold a magic number");
    pos_ = 2;
    return bytes_.substr(0, 2);
  }

  long integer(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (pos_ == start || pos_ - start > 9)
      throw FormatError(FormatError::Kind::malformed_header, start,
                        "'" + path_.string() + "': expected " + what);
    return std::stol(bytes_.substr(start, pos_ - start));
  }

  double real(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    try {
      std::size_t used = 0;
      const std::string token = bytes_.substr(start, pos_ - start);
      const double v = std::stod(token, &used);
      if (used != token.size()) throw std::invalid_argument(token);
      return v;
    } catch (const std::exception&) {
      throw FormatError(FormatError::Kind::malformed_header, start, "'" + path_.string() + "': expected " + what);
    }
  }

  /// The single whitespace byte separating header and payload.
  std::size_t end_of_header() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_])))
      throw FormatError(FormatError::Kind::malformed_header, pos_,
                        "'" + path_.string() + "': missing whitespace after header");
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& bytes_;
  const fs::path& path_;
  std::size_t pos_ = 0;
};

void require_payload(const std::string& bytes, std::size_t offset, std::size_t needed, const fs::path& path) {
  const std::size_t have = bytes.size() > offset ? bytes.size() - offset : 0;
  if (have < needed)
    throw FormatError(FormatError::Kind::truncated_payload, bytes.size(),
                      "'" + path.string() + "': payload truncated, expected " + std::to_string(needed) +
                          " bytes but found " + std::to_string(have));
}

void check_extents(long width, long height, const fs::path& path) {
  if (width < 1 || height < 1)
    throw FormatError(FormatError::Kind::malformed_header, 0, "'" + path.string() + "': image extents must be positive");
}

struct Pnm {
  long width, height, maxval;
  std::size_t payload;
};

Pnm read_pnm_header(HeaderReader& reader, const fs::path& path) {
  Pnm h{};
  h.width = reader.integer("width");
  h.height = reader.integer("height");
  h.maxval = reader.integer("maxval");
  check_extents(h.width, h.height, path);
  if (h.maxval < 1 || h.maxval > 65535)
    throw FormatError(FormatError::Kind::malformed_header, 0, "'" + path.string() + "': maxval out of range");
  h.payload = reader.end_of_header();
  return h;
}

Tensor<float> decode_pnm(const std::string& bytes, const Pnm& h, long channels, const fs::path& path) {
  const std::size_t sample_bytes = h.maxval < 256 ? 1 : 2;
  const std::size_t count = static_cast<std::size_t>(h.width * h.height * channels);
  require_payload(bytes, h.payload, count * sample_bytes, path);
  Tensor<float> out({channels, h.height, h.width});
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + h.payload);
  const float inv = 1.0f / static_cast<float>(h.maxval);
  const Index plane = h.height * h.width;
  for (Index i = 0; i < plane; ++i)
    for (Index c = 0; c < channels; ++c) {
      const std::size_t s = static_cast<std::size_t>(i * channels + c);
      const unsigned v = sample_bytes == 1 ? p[s] : (static_cast<unsigned>(p[2 * s]) << 8) | p[2 * s + 1];
      out[c * plane + i] = static_cast<float>(v) * inv;
    }
  return out;
}

std::string encode_pnm(const char* magic, const Tensor<float>& image, long channels, long maxval, const char* comment) {
  const Index h = image.dim(-2), w = image.dim(-1);
  std::ostringstream os;
  os << magic << "\n# " << comment << "\n" << w << ' ' << h << "\n" << maxval << "\n";
  std::string out = os.str();
  const Index plane = h * w;
  for (Index i = 0; i < plane; ++i)
    for (Index c = 0; c < channels; ++c) {
      const float v = std::clamp(image[c * plane + i], 0.0f, 1.0f);
      const auto q = static_cast<unsigned>(std::lround(static_cast<double>(v) * maxval));
      if (maxval > 255) out.push_back(static_cast<char>(q >> 8));
      out.push_back(static_cast<char>(q & 0xff));
    }
  return out;
}

Tensor<float> as_chw(const Tensor<float>& image, long channels, const char* what) {
  if (image.rank() == 2 && channels == 1) return image.reshaped({1, image.dim(0), image.dim(1)});
  if (image.rank() == 4 && image.dim(0) == 1) return image.reshaped({image.dim(1), image.dim(2), image.dim(3)});
  if (image.rank() != 3 || image.dim(0) != channels)
    throw ShapeError(std::string(what) + " needs a " + std::to_string(channels) + "-channel image, got " +
                     to_string(image.shape()));
  return image;
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

Tensor<float> read_pgm(const fs::path& path) {
  const std::string bytes = slurp(path);
  HeaderReader reader(bytes, path);
  if (reader.magic() != "P5")
    throw FormatError(FormatError::Kind::unsupported_magic, 0, "'" + path.string() + "' is not a binary PGM (P5)");
  return decode_pnm(bytes, read_pnm_header(reader, path), 1, path);
}

void write_pgm16(const fs::path& path, const Tensor<float>& image) {
  write_file_atomic(path, encode_pnm("P5", as_chw(image, 1, "write_pgm16"), 1, 65535, "depth = sample / 65535"));
}

Tensor<float> read_ppm(const fs::path& path) {
  const std::string bytes = slurp(path);
  HeaderReader reader(bytes, path);
  if (reader.magic() != "P6")
    throw FormatError(FormatError::Kind::unsupported_magic, 0, "'" + path.string() + "' is not a binary PPM (P6)");
  return decode_pnm(bytes, read_pnm_header(reader, path), 3, path);
}

void write_ppm8(const fs::path& path, const Tensor<float>& image) {
  write_file_atomic(path, encode_pnm("P6", as_chw(image, 3, "write_ppm8"), 3, 255, "rgb = sample / 255"));
}

Tensor<float> read_pfm(const fs::path& path) {
  const std::string bytes = slurp(path);
  HeaderReader reader(bytes, path);
  const std::string magic = reader.magic();
  long channels;
  if (magic == "Pf")
    channels = 1;
  else if (magic == "PF")
    channels = 3;
  else
    throw FormatError(FormatError::Kind::unsupported_magic, 0, "'" + path.string() + "' is not a PFM file");
  const long width = reader.integer("width");
  const long height = reader.integer("height");
  const double scale = reader.real("scale");
  check_extents(width, height, path);
  if (scale == 0.0 || !std::isfinite(scale))
    throw FormatError(FormatError::Kind::malformed_header, 0, "'" + path.string() + "': invalid PFM scale");
  const std::size_t payload = reader.end_of_header();
  const std::size_t count = static_cast<std::size_t>(width * height * channels);
  require_payload(bytes, payload, count * 4, path);

  const bool little = scale < 0;
  Tensor<float> out({channels, height, width});
  const Index plane = height * width;
  for (long row = 0; row < height; ++row) {
    const long y = height - 1 - row;
    for (long x = 0; x < width; ++x)
      for (long c = 0; c < channels; ++c) {
        const std::size_t s = static_cast<std::size_t>((row * width + x) * channels + c);
        std::uint32_t bits;
        std::memcpy(&bits, bytes.data() + payload + 4 * s, 4);
        const bool host_little = std::endian::native == std::endian::little;
        if (little != host_little) bits = __builtin_bswap32(bits);
        float v;
        std::memcpy(&v, &bits, 4);
        out[c * plane + y * width + x] = v;
      }
  }
  return out;
}

void write_pfm(const fs::path& path, const Tensor<float>& image) {
  const long channels = image.rank() >= 3 ? static_cast<long>(image.dim(-3)) : 1;
  const Tensor<float> chw = as_chw(image, channels == 3 ? 3 : 1, "write_pfm");
  const Index h = chw.dim(1), w = chw.dim(2), plane = h * w;
  std::ostringstream os;
  os << (channels == 3 ? "PF" : "Pf") << "\n" << w << ' ' << h << "\n-1.0\n";
  std::string out = os.str();
  for (Index row = 0; row < h; ++row) {
    const Index y = h - 1 - row;
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < chw.dim(0); ++c) {
        std::uint32_t bits;
        const float v = chw[c * plane + y * w + x];
        std::memcpy(&bits, &v, 4);
        if constexpr (std::endian::native != std::endian::little) bits = __builtin_bswap32(bits);
        char b[4];
        std::memcpy(b, &bits, 4);
        out.append(b, 4);
      }
  }
  write_file_atomic(path, out);
}

Tensor<float> read_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  char magic[2] = {0, 0};
  in.read(magic, 2);
  const std::string m(magic, 2);
  if (m == "P5") return read_pgm(path);
  if (m == "P6") return read_ppm(path);
  if (m == "Pf" || m == "PF") return read_pfm(path);
  throw FormatError(FormatError::Kind::unsupported_magic, 0, "'" + path.string() + "' has unsupported magic '" + m + "'");
}

}  // namespace dmsr::data
