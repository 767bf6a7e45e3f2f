#include "dmsr/cli.hpp"

#include "dmsr/run_config.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

namespace dmsr::cli {

namespace fs = std::filesystem;

namespace {

// Flags that map one-to-one onto settings keys.
class SettingFlags {
 public:
  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto slot = std::make_unique<std::string>();
    CLI::Option* opt = app->add_option(flag, *slot, help + " [" + key + "]");
    entries_.push_back({opt, key, std::move(slot)});
  }

  std::vector<std::pair<std::string, std::string>> given() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : entries_)
      if (e.option->count() > 0) out.emplace_back(e.key, *e.value);
    return out;
  }

 private:
  struct Entry {
    CLI::Option* option;
    std::string key;
    std::unique_ptr<std::string> value;
  };
  std::vector<Entry> entries_;
};

void add_model_flags(SettingFlags& f, CLI::App* app) {
  f.add(app, "--backbone", "model.backbone", "feature extractor: swin or naf");
  f.add(app, "--blocks", "model.blocks", "RSTB or NAF block count (default 4 for swin, 6 for naf)");
  f.add(app, "--embed-dim", "model.embed_dim", "feature channels");
  f.add(app, "--window", "model.window", "attention window size");
  f.add(app, "--heads", "model.heads", "attention heads");
  f.add(app, "--k", "model.k", "filter size (k x k taps)");
  f.add(app, "--scale", "model.scale", "upsampling factor: 4, 8 or 16");
}

Settings resolve(const std::string& config_path, const SettingFlags& flags) {
  Settings s;
  if (!config_path.empty())
    for (const auto& [k, v] : read_config_file(config_path)) s.set(k, v);
  for (const auto& [k, v] : flags.given()) s.set(k, v);
  return s;
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  data::write_file_atomic(path, text);
}

fs::path sidecar(const fs::path& artifact) {
  fs::path p = artifact;
  p += ".config";
  return p;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<data::ManifestEntry> manifest_from(const Settings& s) {
  if (!s.manifest.empty()) return data::read_manifest(s.manifest);
  return data::scan_scene_dirs(s.data_dir);
}

void require_present(const std::vector<data::ManifestEntry>& entries) {
  const auto missing = data::missing_files(entries);
  if (missing.empty()) return;
  std::string msg = std::to_string(missing.size()) + " missing file(s):";
  for (const auto& m : missing) msg += " " + m.string();
  throw data::DataError(msg);
}

std::string manifest_digest(const std::vector<data::ManifestEntry>& entries) {
  std::string text;
  for (const auto& e : entries) text += e.id + ' ' + e.guidance.string() + ' ' + e.depth.string() + '\n';
  return hex(fnv1a(text));
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, out = "run", resume;
};

int cmd_train(const Settings& s, const TrainArgs& a, std::ostream& out) {
  const int sources = (s.synthetic > 0) + !s.manifest.empty() + !s.data_dir.empty();
  if (sources != 1) throw ConfigError("train needs exactly one of --synthetic, --manifest or --data");

  train::Checkpoint start;
  if (!a.resume.empty()) {
    start = train::load_checkpoint(a.resume);
  } else {
    start = train::initial_checkpoint(s.resolved_model(), s.seed, s.adam);
  }
  const ModelConfig cfg = start.config;
  cfg.validate();

  std::vector<data::ScenePair> pairs;
  std::map<std::string, std::string> meta;
  if (s.synthetic > 0) {
    cfg.validate_extents(s.height, s.width);
    pairs = data::synthetic_dataset(static_cast<std::size_t>(s.synthetic), s.seed, s.height, s.width, cfg.scale,
                                    s.noise_sigma);
    meta["data.source"] = "synthetic";
    meta["data.manifest_hash"] = hex(fnv1a("synthetic " + std::to_string(s.synthetic) + " " +
                                           std::to_string(s.height) + "x" + std::to_string(s.width)));
  } else {
    const auto entries = manifest_from(s);
    if (entries.empty()) throw data::DataError("no scene pairs found");
    require_present(entries);
    for (const auto& e : entries) pairs.push_back(data::load_pair(e, cfg.scale, s.noise_sigma, s.seed));
    meta["data.source"] = s.manifest.empty() ? "dir" : "manifest";
    meta["data.manifest_hash"] = manifest_digest(entries);
  }
  meta["data.noise_sigma"] = train::format_db(s.noise_sigma);
  meta["data.pairs"] = std::to_string(pairs.size());

  const auto split = data::split_dataset(pairs.size(), s.seed);
  train::TrainOptions opts;
  opts.epochs = s.epochs;
  opts.seed = s.seed;
  opts.adam = start.state.adam;
  opts.x_max = s.x_max;
  opts.out_dir = a.out;
  opts.metadata = meta;

  fs::create_directories(a.out);
  auto echo = s.echo();
  for (const auto& [k, v] : train::config_to_metadata(cfg)) echo[k] = v;
  write_text(fs::path(a.out) / "config.txt", format_echo(echo));

  const auto result = train::train(std::move(start), pairs, split, opts);
  out << "backbone=" << to_string(cfg.backbone) << " blocks=" << cfg.blocks << " k=" << cfg.k
      << " scale=" << cfg.scale << "\n";
  out << "train_pairs=" << split.train.size() << " eval_pairs=" << split.eval.size() << "\n";
  for (const auto& e : result.epochs)
    out << "epoch=" << e.epoch << " psnr_db=" << train::format_db(e.psnr_db) << "\n";
  out << "checkpoint=" << (fs::path(a.out) / "checkpoint.dmsr").string() << "\n";
  return kOk;
}

struct InferArgs {
  std::string checkpoint, guidance, depth_lr, out, preview, gt;
  bool identity_head = false;
  double x_max = 1.0;
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
  const auto ckpt = train::load_checkpoint(a.checkpoint);
  const auto guidance = data::read_ppm(a.guidance);
  const auto depth_lr = data::read_pgm(a.depth_lr);
  const auto sr = train::infer(ckpt.params, ckpt.config, guidance, depth_lr, a.identity_head);
  data::write_pfm(a.out, sr);
  if (!a.preview.empty()) data::write_pgm16(a.preview, sr);
  auto echo = train::config_to_metadata(ckpt.config);
  echo["infer.identity_head"] = a.identity_head ? "true" : "false";
  write_text(sidecar(a.out), format_echo(echo));
  out << "output=" << a.out << " height=" << sr.dim(1) << " width=" << sr.dim(2) << "\n";
  if (!a.gt.empty()) {
    const auto gt = data::read_pgm(a.gt);
    if (gt.shape() != sr.shape())
      throw ShapeError("ground truth is " + to_string(gt.shape()) + " but output is " + to_string(sr.shape()));
    out << "psnr_db=" << train::format_db(train::psnr(sr, gt, a.x_max)) << "\n";
  }
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, manifest, data_dir, csv;
  double noise_sigma = 0.04;
  std::uint64_t seed = 0;
  double x_max = 1.0;
  bool identity_head = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.manifest.empty() == a.data_dir.empty()) throw ConfigError("eval needs exactly one of --manifest or --data");
  if (a.noise_sigma < 0) throw ConfigError("--noise-sigma must be >= 0");
  const auto ckpt = train::load_checkpoint(a.checkpoint);
  const auto entries = a.manifest.empty() ? data::scan_scene_dirs(a.data_dir) : data::read_manifest(a.manifest);
  require_present(entries);
  std::vector<data::ScenePair> pairs;
  for (const auto& e : entries) pairs.push_back(data::load_pair(e, ckpt.config.scale, a.noise_sigma, a.seed));
  std::vector<const data::ScenePair*> ptrs;
  for (const auto& p : pairs) ptrs.push_back(&p);
  const auto result = train::evaluate(ckpt.params, ckpt.config, ptrs, a.x_max, 0, a.identity_head);

  std::string csv = "pair_id,psnr_db\n";
  for (std::size_t i = 0; i < result.ids.size(); ++i)
    csv += result.ids[i] + "," + train::format_db(result.psnr_db[i]) + "\n";
  if (!a.csv.empty()) {
    write_text(a.csv, csv);
    auto echo = train::config_to_metadata(ckpt.config);
    echo["eval.noise_sigma"] = train::format_db(a.noise_sigma);
    echo["eval.seed"] = std::to_string(a.seed);
    echo["eval.manifest_hash"] = manifest_digest(entries);
    write_text(sidecar(a.csv), format_echo(echo));
  } else {
    out << csv;
  }
  out << "pairs=" << result.ids.size() << "\n";
  out << "mean_psnr_db=" << train::format_db(result.mean_psnr_db) << "\n";
  return kOk;
}

struct BenchArgs {
  std::string config, checkpoint, csv;
  long width = 640, height = 480;
  int repeats = 5;
};

int cmd_bench(const Settings& s, const BenchArgs& a, std::ostream& out) {
  train::Checkpoint ckpt;
  if (!a.checkpoint.empty()) {
    ckpt = train::load_checkpoint(a.checkpoint);
  } else {
    ckpt.config = s.resolved_model();
    ckpt.params = model::init_params<float>(ckpt.config, s.seed);
  }
  const auto& cfg = ckpt.config;
  const auto report = train::bench(ckpt.params, cfg, a.height, a.width, a.repeats, s.seed);

  out << "host=" << report.host << "\n";
  out << "backbone=" << to_string(cfg.backbone) << " blocks=" << cfg.blocks << " k=" << cfg.k
      << " scale=" << cfg.scale << " embed_dim=" << cfg.embed_dim << "\n";
  out << "extents=" << a.width << "x" << a.height << " repeats=" << report.samples_ms.size() << " warmup=1\n";
  char buf[160];
  std::snprintf(buf, sizeof buf, "min_ms=%.3f median_ms=%.3f mean_ms=%.3f\n", report.min_ms, report.median_ms,
                report.mean_ms);
  out << buf;
  for (const auto& r : train::kReferenceResults) {
    std::snprintf(buf, sizeof buf, "reference %s: %.0f ms, %.2f dB (NYU v2, GPU)\n", r.method, r.ms_per_image,
                  r.psnr_db);
    out << buf;
  }
  std::string csv = "repeat,ms\n";
  for (std::size_t i = 0; i < report.samples_ms.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.3f\n", i + 1, report.samples_ms[i]);
    csv += buf;
  }
  if (!a.csv.empty()) {
    write_text(a.csv, csv);
    auto echo = train::config_to_metadata(cfg);
    echo["bench.host"] = report.host;
    echo["bench.extents"] = std::to_string(a.width) + "x" + std::to_string(a.height);
    write_text(sidecar(a.csv), format_echo(echo));
  } else {
    out << csv;
  }
  return kOk;
}

struct SynthArgs {
  std::string out = "synth";
  int count = 8;
};

int cmd_synth(const Settings& s, const SynthArgs& a, std::ostream& out) {
  if (a.count < 1) throw ConfigError("--count must be >= 1");
  const ModelConfig cfg = s.resolved_model();
  cfg.validate_extents(s.height, s.width);
  const auto pairs = data::synthetic_dataset(static_cast<std::size_t>(a.count), s.seed, s.height, s.width,
                                             cfg.scale, s.noise_sigma);
  fs::create_directories(a.out);
  std::vector<data::ManifestEntry> entries;
  for (const auto& p : pairs) entries.push_back(data::save_pair(a.out, p));
  const fs::path manifest = fs::path(a.out) / "manifest.txt";
  data::write_manifest(manifest, entries);
  write_text(fs::path(a.out) / "config.txt", format_echo(s.echo()));
  out << "pairs=" << pairs.size() << "\n";
  out << "manifest=" << manifest.string() << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Guided depth map super-resolution", "dmsr"};
  app.require_subcommand(1);
  app.fallthrough(false);

  // train
  TrainArgs train_args;
  SettingFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoints and CSV logs");
  train_cmd->add_option("--config", train_args.config, "config file of key = value lines");
  train_cmd->add_option("--out", train_args.out, "output directory")->capture_default_str();
  train_cmd->add_option("--resume", train_args.resume, "continue from a checkpoint");
  add_model_flags(train_flags, train_cmd);
  train_flags.add(train_cmd, "--epochs", "train.epochs", "epochs (default 20)");
  train_flags.add(train_cmd, "--seed", "train.seed", "seed for initialisation, data and ordering");
  train_flags.add(train_cmd, "--lr", "train.lr", "Adam learning rate");
  train_flags.add(train_cmd, "--noise-sigma", "data.noise_sigma", "std of Gaussian noise on the LR depth");
  train_flags.add(train_cmd, "--synthetic", "data.synthetic", "train on N generated scenes");
  train_flags.add(train_cmd, "--height", "data.height", "synthetic scene height");
  train_flags.add(train_cmd, "--width", "data.width", "synthetic scene width");
  train_flags.add(train_cmd, "--manifest", "data.manifest", "pair manifest");
  train_flags.add(train_cmd, "--data", "data.dir", "directory of scene sub-directories");

  // infer
  InferArgs infer_args;
  auto* infer_cmd = app.add_subcommand("infer", "super-resolve one depth map");
  infer_cmd->add_option("--checkpoint", infer_args.checkpoint, "trained checkpoint")->required();
  infer_cmd->add_option("--guidance", infer_args.guidance, "RGB guidance (PPM)")->required();
  infer_cmd->add_option("--depth-lr", infer_args.depth_lr, "low-resolution depth (PGM)")->required();
  infer_cmd->add_option("--out", infer_args.out, "SR depth output (PFM)")->required();
  infer_cmd->add_option("--out-preview", infer_args.preview, "16-bit PGM preview of the output");
  infer_cmd->add_option("--gt", infer_args.gt, "ground-truth depth (PGM); prints PSNR");
  infer_cmd->add_option("--x-max", infer_args.x_max, "PSNR peak value");
  infer_cmd->add_flag("--identity-head", infer_args.identity_head, "use the delta kernel instead of the network");

  // eval
  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "per-pair and mean PSNR over a manifest");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "trained checkpoint")->required();
  eval_cmd->add_option("--manifest", eval_args.manifest, "pair manifest");
  eval_cmd->add_option("--data", eval_args.data_dir, "directory of scene sub-directories");
  eval_cmd->add_option("--noise-sigma", eval_args.noise_sigma, "std of Gaussian noise on the LR depth")
      ->capture_default_str();
  eval_cmd->add_option("--seed", eval_args.seed, "noise seed")->capture_default_str();
  eval_cmd->add_option("--x-max", eval_args.x_max, "PSNR peak value");
  eval_cmd->add_option("--csv", eval_args.csv, "write the per-pair CSV here instead of stdout");
  eval_cmd->add_flag("--identity-head", eval_args.identity_head, "use the delta kernel instead of the network");

  // bench
  BenchArgs bench_args;
  SettingFlags bench_flags;
  auto* bench_cmd = app.add_subcommand("bench", "time single-image inference");
  bench_cmd->add_option("--config", bench_args.config, "config file of key = value lines");
  bench_cmd->add_option("--checkpoint", bench_args.checkpoint, "benchmark a trained checkpoint");
  bench_cmd->add_option("--width", bench_args.width, "HR width")->capture_default_str();
  bench_cmd->add_option("--height", bench_args.height, "HR height")->capture_default_str();
  bench_cmd->add_option("--repeats", bench_args.repeats, "timed repeats after one warm-up")->capture_default_str();
  bench_cmd->add_option("--csv", bench_args.csv, "write repeat,ms rows here instead of stdout");
  add_model_flags(bench_flags, bench_cmd);
  bench_flags.add(bench_cmd, "--seed", "train.seed", "seed for random parameters and inputs");

  // synth
  SynthArgs synth_args;
  SettingFlags synth_flags;
  auto* synth_cmd = app.add_subcommand("synth", "write synthetic scene pairs and a manifest");
  synth_cmd->add_option("--config", train_args.config, "config file of key = value lines");
  synth_cmd->add_option("--out", synth_args.out, "output directory")->capture_default_str();
  synth_cmd->add_option("--count", synth_args.count, "number of pairs")->capture_default_str();
  synth_flags.add(synth_cmd, "--seed", "train.seed", "generator seed");
  synth_flags.add(synth_cmd, "--height", "data.height", "scene height");
  synth_flags.add(synth_cmd, "--width", "data.width", "scene width");
  synth_flags.add(synth_cmd, "--scale", "model.scale", "downsampling factor of depth_lr.pgm");
  synth_flags.add(synth_cmd, "--noise-sigma", "data.noise_sigma", "std of Gaussian noise on depth_lr.pgm");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << one_line(e.what()) << "\n";
    return kConfigError;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(resolve(train_args.config, train_flags), train_args, out);
    if (infer_cmd->parsed()) return cmd_infer(infer_args, out);
    if (eval_cmd->parsed()) return cmd_eval(eval_args, out);
    if (bench_cmd->parsed()) return cmd_bench(resolve(bench_args.config, bench_flags), bench_args, out);
    if (synth_cmd->parsed()) return cmd_synth(resolve(train_args.config, synth_flags), synth_args, out);
  } catch (const ConfigError& e) {
    err << "error: config: " << one_line(e.what()) << "\n";
    return kConfigError;
  } catch (const train::DivergenceError& e) {
    err << "error: divergence: " << one_line(e.what()) << "\n";
    return kDivergence;
  } catch (const data::DataError& e) {
    err << "error: data: " << one_line(e.what()) << "\n";
    return kDataError;
  } catch (const ShapeError& e) {
    err << "error: data: " << one_line(e.what()) << "\n";
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "error: data: " << one_line(e.what()) << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: internal: " << one_line(e.what()) << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace dmsr::cli
