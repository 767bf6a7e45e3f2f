#pragma once

#include <stdexcept>
#include <string>

namespace dmsr {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Backbone { swin, naf };

std::string to_string(Backbone b);
Backbone parse_backbone(const std::string& s);

/// Architecture hyperparameters shared by both feature extractors.
struct ModelConfig {
  Backbone backbone = Backbone::swin;
  int blocks = 4;          // RSTBs (swin) or NAF blocks (naf)
  int embed_dim = 32;
  int window = 4;
  int heads = 2;
  int mlp_ratio = 2;
  int stls_per_block = 2;
  int k = 3;               // filter size; k*k taps per output pixel
  int scale = 8;           // super-resolution factor
  int resample_factor = 4; // space-to-depth factor of the input resampling
  bool relative_position_bias = false;

  /// Default block count: 4 RSTBs for swin, 6 NAF blocks for naf.
  static int default_blocks(Backbone b) { return b == Backbone::swin ? 4 : 6; }
  static ModelConfig defaults(Backbone b);

  int taps() const { return k * k; }
  int subpixels() const { return resample_factor * resample_factor; }

  void validate() const;
  /// Checks an HR extent pair against the scale and window divisibility rules.
  void validate_extents(long height, long width) const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace dmsr
