#pragma once

#include "dmsr/dataset.hpp"
#include "dmsr/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace dmsr::train {

/// Raised when the training loss stops being finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
struct TrainState {
  std::int64_t step = 0;
  AdamOptions adam;
  std::map<std::string, Tensor<S>> m;  // first moments
  std::map<std::string, Tensor<S>> v;  // second moments
};

/// One bias-corrected Adam update over every parameter in `grads`.
template <typename S>
void adam_step(ParamStore<S>& params, const std::map<std::string, Tensor<S>>& grads, TrainState<S>& state);

/// Mean absolute error. Subgradient 0 at ties.
template <typename S>
Var<S> l1_loss(Var<S> pred, Var<S> gt);

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// 20 log10(x_max / RMSE); +inf when the images are identical.
template <typename S>
double psnr(const Tensor<S>& pred, const Tensor<S>& gt, double x_max = 1.0);

/// Decibels with "inf" for the identical-image sentinel.
std::string format_db(double db);

/// Arithmetic mean; +inf if any entry is +inf.
double mean_db(const std::vector<double>& values);

// Reference results on NYU v2 (noisy x8), kept for comparison with a
// full-scale run. Not asserted anywhere.
struct ReferenceResult {
  const char* method;
  double ms_per_image;
  double psnr_db;
};
inline constexpr ReferenceResult kReferenceResults[] = {
    {"FDKN", 53.0, 22.73},
    {"DKN", 217.0, 23.88},
    {"Swin-DMSR", 55.0, 24.29},
    {"NAF-DMSR", 54.0, 24.01},
};

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  ModelConfig config;
  ParamStore<float> params;
  TrainState<float> state;
  int epochs_done = 0;
  std::map<std::string, std::string> metadata;  // sorted, written verbatim
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// model.* key/value pairs describing a config, and the inverse.
std::map<std::string, std::string> config_to_metadata(const ModelConfig& cfg);
ModelConfig config_from_metadata(const std::map<std::string, std::string>& meta);

// ---------------------------------------------------------------------------
// Inference and evaluation

/// SR depth [1,H,W] for one guidance [3,H,W] and LR depth [1,H/s,W/s].
Tensor<float> infer(const ParamStore<float>& params, const ModelConfig& cfg, const Tensor<float>& guidance,
                    const Tensor<float>& depth_lr, bool identity_head = false);

struct EvalResult {
  std::vector<std::string> ids;  // sorted by pair id
  std::vector<double> psnr_db;
  double mean_psnr_db = 0.0;
  double ms_per_image = 0.0;  // wall time, informational
};

/// Per-pair PSNR over `pairs`, reported in pair-id order. `workers` <= 0
/// reads DMSR_THREADS (default 1).
EvalResult evaluate(const ParamStore<float>& params, const ModelConfig& cfg,
                    const std::vector<const data::ScenePair*>& pairs, double x_max = 1.0, int workers = 0,
                    bool identity_head = false);

/// Worker count from DMSR_THREADS, at least 1.
int worker_count();

/// PSNR of the bicubic-upsampled LR input against ground truth.
double bicubic_baseline_psnr(const std::vector<const data::ScenePair*>& pairs, double x_max = 1.0);

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  int epochs = 20;
  std::uint64_t seed = 0;
  AdamOptions adam;
  double x_max = 1.0;
  /// Directory for checkpoints and CSV logs; empty keeps everything in memory.
  std::filesystem::path out_dir;
  std::map<std::string, std::string> metadata;  // merged into checkpoints
  /// Optional per-step observer (step, loss).
  std::function<void(std::int64_t, double)> on_step;
};

struct EpochMetrics {
  int epoch = 0;
  double psnr_db = 0.0;
  double ms_per_image = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> step_losses;
  std::vector<EpochMetrics> epochs;
};

/// Fresh checkpoint holding initial parameters and an empty optimiser state.
Checkpoint initial_checkpoint(const ModelConfig& cfg, std::uint64_t seed, const AdamOptions& adam = {});

/// Runs epochs [start.epochs_done, options.epochs). Batch size 1; the
/// visiting order of each epoch depends only on (seed, epoch).
TrainResult train(Checkpoint start, const std::vector<data::ScenePair>& pairs, const data::DatasetSplit& split,
                  const TrainOptions& options);

/// One optimisation step on one pair; returns the loss.
double train_step(Checkpoint& ckpt, const data::ScenePair& pair);

// ---------------------------------------------------------------------------
// Benchmark

struct BenchReport {
  std::vector<double> samples_ms;
  double min_ms = 0, median_ms = 0, mean_ms = 0;
  std::string host;
};

std::string host_description();

/// One discarded warm-up, then `repeats` timed forward passes on random
/// inputs of the given HR extents.
BenchReport bench(const ParamStore<float>& params, const ModelConfig& cfg, Index height, Index width, int repeats,
                  std::uint64_t seed = 0);

}  // namespace dmsr::train
