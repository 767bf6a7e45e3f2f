#pragma once

#include "dmsr/image_io.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dmsr::data {

/// Aligned guidance RGB, ground-truth depth and its degraded LR version.
struct ScenePair {
  std::string id;
  Tensor<float> guidance;  // [3,H,W] in [0,1]
  Tensor<float> depth_hr;  // [1,H,W] in [0,1]
  Tensor<float> depth_lr;  // [1,H/s,W/s]
  double noise_sigma = 0.0;
};

/// Indices into a pair list. Disjoint.
struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
  std::uint64_t seed = 0;
};

/// Fraction of pairs assigned to training (1000 of 1449).
inline constexpr double kTrainFraction = 1000.0 / 1449.0;

std::uint64_t splitmix64(std::uint64_t x);
/// Per-pair RNG seed derived from the pair id and a run seed.
std::uint64_t pair_seed(const std::string& pair_id, std::uint64_t seed);

/// Snap to the 16-bit grid used by PGM depth files.
Tensor<float> quantize16(const Tensor<float>& x);
/// Snap to the 8-bit grid used by PPM colour files.
Tensor<float> quantize8(const Tensor<float>& x);

/// Bicubic downsample by `scale`, add N(0, sigma^2) noise, clamp to [0,1].
Tensor<float> degrade(const Tensor<float>& depth_hr, int scale, double noise_sigma, std::uint64_t rng_seed);

/// The LR input every command uses: degrade, then 16-bit quantisation so a
/// pair written to disk and read back feeds the network the same values.
Tensor<float> make_lr(const Tensor<float>& depth_hr, int scale, double noise_sigma, std::uint64_t rng_seed);

/// Piecewise-planar scene of overlapping rectangles and ellipses with a
/// colour rendering of the same geometry. Depth and colour are stored at
/// file precision (16 and 8 bit).
ScenePair synth_scene(std::uint64_t seed, Index height, Index width, int scale = 8, double noise_sigma = 0.0,
                      const std::string& id = "synth");

/// Fraction of depth-edge pixels with a guidance edge within one pixel.
double edge_alignment_score(const Tensor<float>& guidance, const Tensor<float>& depth,
                            double depth_threshold = 0.02, double guidance_threshold = 0.05);

/// `count` scenes named synth_0000, synth_0001, ...
std::vector<ScenePair> synthetic_dataset(std::size_t count, std::uint64_t seed, Index height, Index width,
                                         int scale, double noise_sigma);

DatasetSplit split_dataset(std::size_t count, std::uint64_t seed, double train_fraction = kTrainFraction);

// Manifest: one `pair_id guidance_path depth_path` triple per line, `#`
// starts a comment. Relative paths resolve against the manifest directory.
struct ManifestEntry {
  std::string id;
  std::filesystem::path guidance;
  std::filesystem::path depth;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// One sub-directory per scene holding guidance.ppm and depth.pgm.
std::vector<ManifestEntry> scan_scene_dirs(const std::filesystem::path& root);

/// Every listed file that does not exist, in manifest order.
std::vector<std::filesystem::path> missing_files(const std::vector<ManifestEntry>& entries);

/// Reads guidance and ground truth and derives the LR input.
ScenePair load_pair(const ManifestEntry& entry, int scale, double noise_sigma, std::uint64_t seed);

/// Writes guidance.ppm, depth.pgm and depth_lr.pgm under dir/<id>/.
ManifestEntry save_pair(const std::filesystem::path& dir, const ScenePair& pair);

}  // namespace dmsr::data
