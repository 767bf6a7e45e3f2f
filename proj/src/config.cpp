#include "dmsr/config.hpp"

namespace dmsr {

std::string to_string(Backbone b) { return b == Backbone::swin ? "swin" : "naf"; }

Backbone parse_backbone(const std::string& s) {
  if (s == "swin") return Backbone::swin;
  if (s == "naf") return Backbone::naf;
  throw ConfigError("unknown backbone '" + s + "' (expected swin or naf)");
}

ModelConfig ModelConfig::defaults(Backbone b) {
  ModelConfig cfg;
  cfg.backbone = b;
  cfg.blocks = default_blocks(b);
  return cfg;
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(blocks >= 1, "model.blocks must be >= 1");
  require(embed_dim >= 1, "model.embed_dim must be >= 1");
  require(window >= 1, "model.window must be >= 1");
  require(heads >= 1 && embed_dim % heads == 0, "model.embed_dim must be divisible by model.heads");
  require(mlp_ratio >= 1, "model.mlp_ratio must be >= 1");
  require(stls_per_block >= 1, "model.stls_per_block must be >= 1");
  require(k >= 1 && k % 2 == 1, "model.k must be odd and positive");
  require(scale == 4 || scale == 8 || scale == 16, "model.scale must be one of 4, 8, 16");
  require(resample_factor == 4, "model.resample_factor is fixed at 4");
}

void ModelConfig::validate_extents(long height, long width) const {
  validate();
  const long unit = static_cast<long>(resample_factor) * window;
  if (height % scale != 0 || width % scale != 0)
    throw ConfigError("extents " + std::to_string(height) + "x" + std::to_string(width) +
                      " are not divisible by scale " + std::to_string(scale));
  if (height % unit != 0 || width % unit != 0)
    throw ConfigError("extents " + std::to_string(height) + "x" + std::to_string(width) +
                      " are not divisible by resample_factor*window = " + std::to_string(unit));
}

}  // namespace dmsr
