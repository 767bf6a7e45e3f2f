#include "dmsr/train.hpp"

#include "dmsr/resample.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace dmsr::train {

namespace fs = std::filesystem;
using data::DataError;
using data::FormatError;

template <typename S>
void adam_step(ParamStore<S>& params, const std::map<std::string, Tensor<S>>& grads, TrainState<S>& state) {
  for (const auto& [name, g] : grads)
    if (params.at(name).shape() != g.shape())
      throw ShapeError("gradient for '" + name + "' has shape " + to_string(g.shape()) + ", parameter has " +
                       to_string(params.at(name).shape()));
  state.step += 1;
  const auto& o = state.adam;
  const double t = static_cast<double>(state.step);
  const S c1 = static_cast<S>(1.0 - std::pow(o.beta1, t));
  const S c2 = static_cast<S>(1.0 - std::pow(o.beta2, t));
  const S b1 = static_cast<S>(o.beta1), b2 = static_cast<S>(o.beta2);
  const S lr = static_cast<S>(o.lr), eps = static_cast<S>(o.eps);
  for (const auto& [name, g] : grads) {
    auto& p = params.at(name);
    auto& m = state.m.try_emplace(name, Tensor<S>::zeros(p.shape())).first->second;
    auto& v = state.v.try_emplace(name, Tensor<S>::zeros(p.shape())).first->second;
    m.array() = b1 * m.array() + (S(1) - b1) * g.array();
    v.array() = b2 * v.array() + (S(1) - b2) * g.array().square();
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

template <typename S>
Var<S> l1_loss(Var<S> pred, Var<S> gt) {
  if (pred.shape() != gt.shape())
    throw ShapeError("l1_loss shapes differ: " + to_string(pred.shape()) + " vs " + to_string(gt.shape()));
  return mean(abs(pred - gt));
}

template <typename S>
double psnr(const Tensor<S>& pred, const Tensor<S>& gt, double x_max) {
  if (pred.shape() != gt.shape())
    throw ShapeError("psnr shapes differ: " + to_string(pred.shape()) + " vs " + to_string(gt.shape()));
  if (!(x_max > 0)) throw std::invalid_argument("psnr needs x_max > 0");
  double sq = 0;
  for (Index i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
    sq += d * d;
  }
  if (sq == 0) return kInfinity;
  const double rmse = std::sqrt(sq / static_cast<double>(pred.size()));
  return 20.0 * std::log10(x_max / rmse);
}

template void adam_step(ParamStore<float>&, const std::map<std::string, Tensor<float>>&, TrainState<float>&);
template void adam_step(ParamStore<double>&, const std::map<std::string, Tensor<double>>&, TrainState<double>&);
template Var<float> l1_loss(Var<float>, Var<float>);
template Var<double> l1_loss(Var<double>, Var<double>);
template double psnr(const Tensor<float>&, const Tensor<float>&, double);
template double psnr(const Tensor<double>&, const Tensor<double>&, double);

namespace {

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_number(const std::string& s, const std::string& key) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw DataError("checkpoint metadata '" + key + "' is not a number: '" + s + "'");
  return v;
}

}  // namespace

std::string format_db(double db) {
  if (std::isinf(db) && db > 0) return "inf";
  return format_number(db);
}

double mean_db(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double s = 0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

// ---------------------------------------------------------------------------
// Checkpoint format

std::map<std::string, std::string> config_to_metadata(const ModelConfig& cfg) {
  return {
      {"model.backbone", to_string(cfg.backbone)},
      {"model.blocks", std::to_string(cfg.blocks)},
      {"model.embed_dim", std::to_string(cfg.embed_dim)},
      {"model.window", std::to_string(cfg.window)},
      {"model.heads", std::to_string(cfg.heads)},
      {"model.mlp_ratio", std::to_string(cfg.mlp_ratio)},
      {"model.stls_per_block", std::to_string(cfg.stls_per_block)},
      {"model.k", std::to_string(cfg.k)},
      {"model.scale", std::to_string(cfg.scale)},
      {"model.resample_factor", std::to_string(cfg.resample_factor)},
      {"model.relative_position_bias", cfg.relative_position_bias ? "true" : "false"},
  };
}

ModelConfig config_from_metadata(const std::map<std::string, std::string>& meta) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw DataError("checkpoint metadata lacks '" + key + "'");
    return it->second;
  };
  auto integer = [&](const std::string& key) { return static_cast<int>(parse_number(get(key), key)); };
  ModelConfig cfg;
  cfg.backbone = parse_backbone(get("model.backbone"));
  cfg.blocks = integer("model.blocks");
  cfg.embed_dim = integer("model.embed_dim");
  cfg.window = integer("model.window");
  cfg.heads = integer("model.heads");
  cfg.mlp_ratio = integer("model.mlp_ratio");
  cfg.stls_per_block = integer("model.stls_per_block");
  cfg.k = integer("model.k");
  cfg.scale = integer("model.scale");
  cfg.resample_factor = integer("model.resample_factor");
  cfg.relative_position_bias = get("model.relative_position_bias") == "true";
  return cfg;
}

namespace {

class Writer {
 public:
  template <typename T>
  void put(T v) {
    if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.append(b, sizeof(T));
  }
  void bytes(const std::string& s) { out += s; }
  std::string out;

 private:
  template <typename T>
  static T byteswap(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
};

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    char b[sizeof(T)];
    std::memcpy(b, s_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return s_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (s_.size() - pos_ < n)
      throw FormatError(FormatError::Kind::truncated_payload, pos_,
                        "checkpoint truncated: expected " + std::to_string(n) + " more bytes but found " +
                            std::to_string(s_.size() - pos_));
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

void write_tensor(Writer& w, const std::string& name, const Tensor<float>& t) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
  w.bytes(name);
  w.put<std::uint8_t>(0);  // float32
  w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
  for (Index d : t.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  for (Index i = 0; i < t.size(); ++i) w.put<float>(t[i]);
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes("DMSR");
  w.put<std::uint16_t>(kCheckpointVersion);
  const auto& names = ckpt.params.names();
  std::uint32_t count = static_cast<std::uint32_t>(names.size());
  for (const auto& n : names) count += (ckpt.state.m.count(n) ? 1 : 0) + (ckpt.state.v.count(n) ? 1 : 0);
  w.put<std::uint32_t>(count);
  for (const auto& n : names) write_tensor(w, n, ckpt.params.at(n));
  for (const auto& n : names)
    if (auto it = ckpt.state.m.find(n); it != ckpt.state.m.end()) write_tensor(w, "adam.m/" + n, it->second);
  for (const auto& n : names)
    if (auto it = ckpt.state.v.find(n); it != ckpt.state.v.end()) write_tensor(w, "adam.v/" + n, it->second);

  auto meta = ckpt.metadata;
  for (auto& [k, v] : config_to_metadata(ckpt.config)) meta[k] = v;
  meta["train.step"] = std::to_string(ckpt.state.step);
  meta["train.epochs_done"] = std::to_string(ckpt.epochs_done);
  meta["adam.lr"] = format_number(ckpt.state.adam.lr);
  meta["adam.beta1"] = format_number(ckpt.state.adam.beta1);
  meta["adam.beta2"] = format_number(ckpt.state.adam.beta2);
  meta["adam.eps"] = format_number(ckpt.state.adam.eps);
  std::string text;
  for (const auto& [k, v] : meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw std::invalid_argument("metadata entry '" + k + "' cannot be encoded");
    text += k + "=" + v + "\n";
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  return w.out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || bytes.compare(0, 4, "DMSR") != 0)
    throw FormatError(FormatError::Kind::unsupported_magic, 0, "not a DMSR checkpoint");
  r.bytes(4);
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion)
    throw FormatError(FormatError::Kind::malformed_header, 4,
                      "unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.pos();
    const auto len = r.get<std::uint32_t>();
    std::string name = r.bytes(len);
    const auto dtype = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint8_t>();
    if (dtype != 0 && dtype != 1)
      throw FormatError(FormatError::Kind::malformed_header, at, "tensor '" + name + "' has unknown dtype");
    Shape shape;
    for (int d = 0; d < rank; ++d) shape.push_back(r.get<std::uint32_t>());
    Tensor<float> t(shape);
    for (Index j = 0; j < t.size(); ++j) t[j] = dtype == 0 ? r.get<float>() : static_cast<float>(r.get<double>());
    tensors.emplace_back(std::move(name), std::move(t));
  }
  const auto meta_len = r.get<std::uint32_t>();
  const std::string text = r.bytes(meta_len);

  Checkpoint ckpt;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(FormatError::Kind::malformed_header, r.pos(), "bad metadata line");
    ckpt.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  ckpt.config = config_from_metadata(ckpt.metadata);
  auto number = [&](const std::string& key) {
    auto it = ckpt.metadata.find(key);
    if (it == ckpt.metadata.end()) throw DataError("checkpoint metadata lacks '" + key + "'");
    return parse_number(it->second, key);
  };
  ckpt.state.step = static_cast<std::int64_t>(number("train.step"));
  ckpt.epochs_done = static_cast<int>(number("train.epochs_done"));
  ckpt.state.adam = {number("adam.lr"), number("adam.beta1"), number("adam.beta2"), number("adam.eps")};
  for (auto& [name, t] : tensors) {
    if (name.rfind("adam.m/", 0) == 0)
      ckpt.state.m.emplace(name.substr(7), std::move(t));
    else if (name.rfind("adam.v/", 0) == 0)
      ckpt.state.v.emplace(name.substr(7), std::move(t));
    else
      ckpt.params.add(name, std::move(t));
  }
  return ckpt;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  data::write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return deserialize_checkpoint(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), e.offset(), "'" + path.string() + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Inference and evaluation

Tensor<float> infer(const ParamStore<float>& params, const ModelConfig& cfg, const Tensor<float>& guidance,
                    const Tensor<float>& depth_lr, bool identity_head) {
  if (guidance.rank() != 3 || guidance.dim(0) != 3)
    throw ShapeError("guidance must be [3,H,W], got " + to_string(guidance.shape()));
  if (depth_lr.rank() != 3 || depth_lr.dim(0) != 1)
    throw ShapeError("depth must be [1,h,w], got " + to_string(depth_lr.shape()));
  const Index H = guidance.dim(1), W = guidance.dim(2);
  if (depth_lr.dim(1) * cfg.scale != H || depth_lr.dim(2) * cfg.scale != W)
    throw ShapeError("extent mismatch: guidance " + std::to_string(H) + "x" + std::to_string(W) + " at scale " +
                     std::to_string(cfg.scale) + " expects low-resolution depth " + std::to_string(H / cfg.scale) +
                     "x" + std::to_string(W / cfg.scale) + ", got " + std::to_string(depth_lr.dim(1)) + "x" +
                     std::to_string(depth_lr.dim(2)));
  Tape<float> tape;
  Binding<float> bind(tape, params, false);
  auto g = tape.constant(guidance.reshaped({1, 3, H, W}));
  auto d = tape.constant(depth_lr.reshaped({1, 1, depth_lr.dim(1), depth_lr.dim(2)}));
  auto out = model::dmsr_forward(bind, g, d, cfg, {identity_head});
  return out.value().reshaped({1, H, W});
}

int worker_count() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("DMSR_THREADS")) {
    int cap = 0;
    const std::string s(env);
    auto res = std::from_chars(s.data(), s.data() + s.size(), cap);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || cap < 1)
      throw ConfigError("DMSR_THREADS must be a positive integer, got '" + s + "'");
    n = std::min(n, cap);
  }
  return n;
}

namespace {

std::vector<const data::ScenePair*> sorted_by_id(std::vector<const data::ScenePair*> pairs) {
  std::sort(pairs.begin(), pairs.end(), [](auto* a, auto* b) { return a->id < b->id; });
  return pairs;
}

}  // namespace

EvalResult evaluate(const ParamStore<float>& params, const ModelConfig& cfg,
                    const std::vector<const data::ScenePair*>& pairs, double x_max, int workers,
                    bool identity_head) {
  const auto sorted = sorted_by_id(pairs);
  const std::size_t n = sorted.size();
  EvalResult result;
  result.psnr_db.assign(n, 0.0);
  for (auto* p : sorted) result.ids.push_back(p->id);
  if (n == 0) return result;
  if (workers <= 0) workers = worker_count();
  workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), n));

  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  auto run = [&](int w) {
    try {
      for (std::size_t i = static_cast<std::size_t>(w); i < n; i += static_cast<std::size_t>(workers)) {
        const auto* p = sorted[i];
        result.psnr_db[i] = psnr(infer(params, cfg, p->guidance, p->depth_lr, identity_head), p->depth_hr, x_max);
      }
    } catch (...) {
      errors[static_cast<std::size_t>(w)] = std::current_exception();
    }
  };
  const auto t0 = std::chrono::steady_clock::now();
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }
  const auto t1 = std::chrono::steady_clock::now();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  result.mean_psnr_db = mean_db(result.psnr_db);
  result.ms_per_image = std::chrono::duration<double, std::milli>(t1 - t0).count() / static_cast<double>(n);
  return result;
}

double bicubic_baseline_psnr(const std::vector<const data::ScenePair*>& pairs, double x_max) {
  std::vector<double> values;
  for (const auto* p : sorted_by_id(pairs)) {
    const auto up = bicubic_resize(p->depth_lr, p->depth_hr.dim(1), p->depth_hr.dim(2));
    values.push_back(psnr(up, p->depth_hr, x_max));
  }
  return mean_db(values);
}

// ---------------------------------------------------------------------------
// Training

Checkpoint initial_checkpoint(const ModelConfig& cfg, std::uint64_t seed, const AdamOptions& adam) {
  cfg.validate();
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.params = model::init_params<float>(cfg, seed);
  ckpt.state.adam = adam;
  for (const auto& n : ckpt.params.names()) {
    ckpt.state.m.emplace(n, Tensor<float>::zeros(ckpt.params.at(n).shape()));
    ckpt.state.v.emplace(n, Tensor<float>::zeros(ckpt.params.at(n).shape()));
  }
  return ckpt;
}

double train_step(Checkpoint& ckpt, const data::ScenePair& pair) {
  Tape<float> tape;
  Binding<float> bind(tape, ckpt.params, true);
  const Index H = pair.guidance.dim(1), W = pair.guidance.dim(2);
  auto g = tape.constant(pair.guidance.reshaped({1, 3, H, W}));
  auto d = tape.constant(pair.depth_lr.reshaped({1, 1, pair.depth_lr.dim(1), pair.depth_lr.dim(2)}));
  auto gt = tape.constant(pair.depth_hr.reshaped({1, 1, H, W}));
  const auto where = [&] { return " at step " + std::to_string(ckpt.state.step + 1) + " (pair '" + pair.id + "')"; };
  Var<float> loss;
  try {
    loss = l1_loss(model::dmsr_forward(bind, g, d, ckpt.config), gt);
  } catch (const std::domain_error& e) {
    // Huge parameters can overflow intermediate maps before the loss does.
    throw DivergenceError(std::string(e.what()) + where());
  }
  const double value = loss.value().item();
  if (!std::isfinite(value)) throw DivergenceError("non-finite loss" + where());
  tape.backward(loss);
  adam_step(ckpt.params, bind.gradients(), ckpt.state);
  for (const auto& n : ckpt.params.names())
    if (!ckpt.params.at(n).all_finite()) throw DivergenceError("parameter '" + n + "' became non-finite" + where());
  return value;
}

namespace {

// Rows of an existing CSV whose first column is <= limit, header dropped.
std::vector<std::string> kept_rows(const fs::path& path, double limit) {
  std::vector<std::string> rows;
  std::ifstream in(path);
  std::string line;
  if (!std::getline(in, line)) return rows;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    if (std::stod(line.substr(0, comma)) <= limit) rows.push_back(line);
  }
  return rows;
}

void write_csv(const fs::path& path, const std::string& header, const std::vector<std::string>& rows) {
  std::string text = header + "\n";
  for (const auto& r : rows) text += r + "\n";
  data::write_file_atomic(path, text);
}

std::string epoch_checkpoint_name(int epoch) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "checkpoint_epoch%03d.dmsr", epoch);
  return buf;
}

}  // namespace

TrainResult train(Checkpoint start, const std::vector<data::ScenePair>& pairs, const data::DatasetSplit& split,
                  const TrainOptions& options) {
  const ModelConfig& cfg = start.config;
  cfg.validate();
  if (split.train.empty()) throw DataError("training split is empty");
  for (const auto& p : pairs) {
    try {
      cfg.validate_extents(p.guidance.dim(1), p.guidance.dim(2));
    } catch (const ConfigError& e) {
      throw DataError("pair '" + p.id + "': " + e.what());
    }
    if (p.depth_lr.dim(1) * cfg.scale != p.guidance.dim(1) || p.depth_lr.dim(2) * cfg.scale != p.guidance.dim(2))
      throw DataError("pair '" + p.id + "': low-resolution depth does not match scale " + std::to_string(cfg.scale));
  }
  for (std::size_t i : split.train)
    if (i >= pairs.size()) throw DataError("split index out of range");

  std::vector<const data::ScenePair*> eval_pairs;
  for (std::size_t i : split.eval.empty() ? split.train : split.eval) eval_pairs.push_back(&pairs.at(i));

  TrainResult result;
  result.checkpoint = std::move(start);
  Checkpoint& ckpt = result.checkpoint;
  for (const auto& [k, v] : options.metadata) ckpt.metadata[k] = v;
  ckpt.metadata["train.seed"] = std::to_string(options.seed);
  ckpt.metadata["train.epochs"] = std::to_string(options.epochs);
  ckpt.metadata["train.loss"] = "l1";
  ckpt.metadata["train.batch_size"] = "1";

  std::vector<std::string> loss_rows, metric_rows;
  const bool logging = !options.out_dir.empty();
  if (logging) {
    fs::create_directories(options.out_dir);
    if (ckpt.epochs_done > 0) {
      loss_rows = kept_rows(options.out_dir / "loss.csv", static_cast<double>(ckpt.state.step));
      metric_rows = kept_rows(options.out_dir / "metrics.csv", ckpt.epochs_done);
    }
  }

  for (int epoch = ckpt.epochs_done; epoch < options.epochs; ++epoch) {
    std::vector<std::size_t> order = split.train;
    std::mt19937_64 rng(data::splitmix64(options.seed ^ (0x65706f6368ULL + static_cast<std::uint64_t>(epoch))));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      const double loss = train_step(ckpt, pairs[i]);
      result.step_losses.push_back(loss);
      if (options.on_step) options.on_step(ckpt.state.step, loss);
      char row[64];
      std::snprintf(row, sizeof row, "%lld,%.9g", static_cast<long long>(ckpt.state.step), loss);
      loss_rows.emplace_back(row);
    }
    ckpt.epochs_done = epoch + 1;

    EvalResult eval;
    try {
      eval = evaluate(ckpt.params, cfg, eval_pairs, options.x_max);
    } catch (const std::domain_error& e) {
      throw DivergenceError(std::string(e.what()) + " in evaluation after epoch " + std::to_string(epoch + 1));
    }
    result.epochs.push_back({epoch + 1, eval.mean_psnr_db, eval.ms_per_image});
    char row[96];
    std::snprintf(row, sizeof row, "%d,%s,%.3f", epoch + 1, format_db(eval.mean_psnr_db).c_str(), eval.ms_per_image);
    metric_rows.emplace_back(row);

    if (logging) {
      save_checkpoint(options.out_dir / epoch_checkpoint_name(epoch + 1), ckpt);
      save_checkpoint(options.out_dir / "checkpoint.dmsr", ckpt);
      write_csv(options.out_dir / "loss.csv", "step,loss", loss_rows);
      write_csv(options.out_dir / "metrics.csv", "epoch,psnr_db,ms_per_image", metric_rows);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Benchmark

std::string host_description() {
  std::ostringstream os;
  utsname u{};
  if (uname(&u) == 0) os << u.sysname << ' ' << u.release << ' ' << u.machine;
  else os << "unknown-os";
  os << ", " << std::thread::hardware_concurrency() << " hardware threads";
#ifdef __VERSION__
  os << ", compiler " << __VERSION__;
#endif
  return os.str();
}

BenchReport bench(const ParamStore<float>& params, const ModelConfig& cfg, Index height, Index width, int repeats,
                  std::uint64_t seed) {
  if (repeats < 3) throw ConfigError("bench needs at least 3 repeats, got " + std::to_string(repeats));
  cfg.validate_extents(height, width);
  std::mt19937_64 rng(seed);
  const auto guidance = Tensor<float>::uniform({3, height, width}, rng, 0.0f, 1.0f);
  const auto depth = Tensor<float>::uniform({1, height / cfg.scale, width / cfg.scale}, rng, 0.0f, 1.0f);

  BenchReport report;
  report.host = host_description();
  for (int r = -1; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto out = infer(params, cfg, guidance, depth);
    const auto t1 = std::chrono::steady_clock::now();
    if (r >= 0) report.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  auto sorted = report.samples_ms;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  report.min_ms = sorted.front();
  report.median_ms = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  report.mean_ms = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(n);
  return report;
}

}  // namespace dmsr::train
