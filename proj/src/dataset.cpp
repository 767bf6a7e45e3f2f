#include "dmsr/dataset.hpp"

#include "dmsr/config.hpp"
#include "dmsr/resample.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace dmsr::data {

namespace fs = std::filesystem;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t pair_seed(const std::string& pair_id, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : pair_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(h ^ splitmix64(seed));
}

namespace {

Tensor<float> quantize(const Tensor<float>& x, unsigned levels) {
  Tensor<float> out(x.shape());
  const float inv = 1.0f / static_cast<float>(levels);  // same expression the PNM reader uses
  for (Index i = 0; i < x.size(); ++i) {
    const double v = std::clamp(static_cast<double>(x[i]), 0.0, 1.0);
    out[i] = static_cast<float>(std::lround(v * levels)) * inv;
  }
  return out;
}

}  // namespace

Tensor<float> quantize16(const Tensor<float>& x) { return quantize(x, 65535); }
Tensor<float> quantize8(const Tensor<float>& x) { return quantize(x, 255); }

Tensor<float> degrade(const Tensor<float>& depth_hr, int scale, double noise_sigma, std::uint64_t rng_seed) {
  if (depth_hr.rank() != 3) throw ShapeError("degrade expects [C,H,W], got " + to_string(depth_hr.shape()));
  if (scale < 1) throw ConfigError("scale must be positive");
  const Index h = depth_hr.dim(1), w = depth_hr.dim(2);
  if (h % scale != 0 || w % scale != 0)
    throw ShapeError("extents " + std::to_string(h) + "x" + std::to_string(w) + " are not divisible by scale " +
                     std::to_string(scale));
  Tensor<float> lr = bicubic_resize(depth_hr, h / scale, w / scale);
  if (noise_sigma > 0.0) {
    std::mt19937_64 rng(rng_seed);
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (Index i = 0; i < lr.size(); ++i) lr[i] = static_cast<float>(lr[i] + noise(rng));
  }
  lr.array() = lr.array().max(0.0f).min(1.0f);
  return lr;
}

Tensor<float> make_lr(const Tensor<float>& depth_hr, int scale, double noise_sigma, std::uint64_t rng_seed) {
  return quantize16(degrade(depth_hr, scale, noise_sigma, rng_seed));
}

namespace {

struct Shape2d {
  bool ellipse;
  double cy, cx, hy, hx;
  double depth;
  std::array<double, 3> color;

  // Fractional coverage of the pixel centred at (y, x), soft over one pixel.
  double coverage(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    double sd;
    if (ellipse) {
      const double r = std::sqrt((dy * dy) / (hy * hy) + (dx * dx) / (hx * hx));
      sd = (r - 1.0) * std::min(hy, hx);
    } else {
      sd = std::max(std::abs(dy) - hy, std::abs(dx) - hx);
    }
    return std::clamp(0.5 - sd, 0.0, 1.0);
  }
};

double color_distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double s = 0;
  for (int c = 0; c < 3; ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
  return std::sqrt(s);
}

}  // namespace

ScenePair synth_scene(std::uint64_t seed, Index height, Index width, int scale, double noise_sigma,
                      const std::string& id) {
  if (height < 8 || width < 8) throw ShapeError("synthetic scenes need extents >= 8");
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  // Background: a gently sloped plane in [0.6, 0.95].
  const double d0 = uniform(0.7, 0.85), gy = uniform(-0.05, 0.05), gx = uniform(-0.05, 0.05);

  std::vector<std::array<double, 3>> colors;
  auto pick_color = [&] {
    std::array<double, 3> best{};
    double best_gap = -1;
    for (int attempt = 0; attempt < 2000; ++attempt) {
      std::array<double, 3> c{uniform(0.1, 0.9), uniform(0.1, 0.9), uniform(0.1, 0.9)};
      double gap = 1e9;
      for (const auto& o : colors) gap = std::min(gap, color_distance(c, o));
      if (gap > best_gap) {
        best = c;
        best_gap = gap;
      }
      if (gap >= 0.3) break;
    }
    colors.push_back(best);
    return best;
  };
  const auto background = pick_color();

  const int count = std::uniform_int_distribution<int>(3, 6)(rng);
  // Sorted uniforms spread over the slack, plus a fixed 0.06 gap per rank.
  // Rejection sampling can jam once a few planes fence off the whole range.
  constexpr double kDepthLo = 0.05, kDepthHi = 0.5, kDepthGap = 0.06;
  std::vector<double> depths(static_cast<std::size_t>(count));
  const double slack = (kDepthHi - kDepthLo) - kDepthGap * (count - 1);
  for (auto& d : depths) d = uniform(0.0, slack);
  std::sort(depths.begin(), depths.end());
  for (int i = 0; i < count; ++i) depths[static_cast<std::size_t>(i)] += kDepthLo + kDepthGap * i;
  std::shuffle(depths.begin(), depths.end(), rng);

  std::vector<Shape2d> shapes;
  const double H = static_cast<double>(height), W = static_cast<double>(width);
  for (int i = 0; i < count; ++i) {
    Shape2d s{};
    s.ellipse = uniform(0, 1) < 0.5;
    s.cy = uniform(0.1, 0.9) * H;
    s.cx = uniform(0.1, 0.9) * W;
    s.hy = std::max(3.0, uniform(0.1, 0.3) * H);
    s.hx = std::max(3.0, uniform(0.1, 0.3) * W);
    s.depth = depths[static_cast<std::size_t>(i)];
    s.color = pick_color();
    shapes.push_back(s);
  }
  // Painter's order: far to near.
  std::sort(shapes.begin(), shapes.end(), [](const Shape2d& a, const Shape2d& b) { return a.depth > b.depth; });

  std::array<double, 3> period{}, phase{};
  for (int c = 0; c < 3; ++c) {
    period[c] = uniform(7.0, 13.0);
    phase[c] = uniform(0.0, 6.283185307179586);
  }

  Tensor<float> depth({1, height, width});
  Tensor<float> rgb({3, height, width});
  const Index plane = height * width;
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
      double d = d0 + gy * (py / H - 0.5) * 2.0 + gx * (px / W - 0.5) * 2.0;
      std::array<double, 3> col = background;
      for (const auto& s : shapes) {
        const double a = s.coverage(py, px);
        if (a <= 0.0) continue;
        d = a * s.depth + (1.0 - a) * d;
        for (int c = 0; c < 3; ++c) col[c] = a * s.color[c] + (1.0 - a) * col[c];
      }
      depth[y * width + x] = static_cast<float>(d);
      for (int c = 0; c < 3; ++c) {
        const double texture = 0.02 * std::sin(6.283185307179586 * (px + 0.7 * py) / period[c] + phase[c]);
        rgb[c * plane + y * width + x] = static_cast<float>(std::clamp(col[c] + texture, 0.0, 1.0));
      }
    }
  }

  ScenePair pair;
  pair.id = id;
  pair.guidance = quantize8(rgb);
  pair.depth_hr = quantize16(depth);
  pair.noise_sigma = noise_sigma;
  pair.depth_lr = make_lr(pair.depth_hr, scale, noise_sigma, splitmix64(seed ^ 0x6c72ULL));
  return pair;
}

namespace {

// Central-difference gradient magnitude, one-sided at the border, summed in
// quadrature over channels.
std::vector<double> gradient_magnitude(const Tensor<float>& img) {
  const Index C = img.dim(0), H = img.dim(1), W = img.dim(2);
  std::vector<double> mag(static_cast<std::size_t>(H * W), 0.0);
  for (Index c = 0; c < C; ++c) {
    const float* p = img.data() + c * H * W;
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const Index x0 = std::max<Index>(x - 1, 0), x1 = std::min<Index>(x + 1, W - 1);
        const Index y0 = std::max<Index>(y - 1, 0), y1 = std::min<Index>(y + 1, H - 1);
        const double gx = (p[y * W + x1] - p[y * W + x0]) / static_cast<double>(x1 - x0);
        const double gy = (p[y1 * W + x] - p[y0 * W + x]) / static_cast<double>(y1 - y0);
        mag[static_cast<std::size_t>(y * W + x)] += gx * gx + gy * gy;
      }
  }
  for (auto& m : mag) m = std::sqrt(m);
  return mag;
}

}  // namespace

double edge_alignment_score(const Tensor<float>& guidance, const Tensor<float>& depth, double depth_threshold,
                            double guidance_threshold) {
  if (guidance.rank() != 3 || depth.rank() != 3 || guidance.dim(1) != depth.dim(1) || guidance.dim(2) != depth.dim(2))
    throw ShapeError("edge_alignment_score needs [C,H,W] images of equal extents");
  const Index H = depth.dim(1), W = depth.dim(2);
  const auto dg = gradient_magnitude(depth);
  const auto gg = gradient_magnitude(guidance);
  std::size_t edges = 0, matched = 0;
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      if (dg[static_cast<std::size_t>(y * W + x)] <= depth_threshold) continue;
      ++edges;
      bool hit = false;
      for (Index yy = std::max<Index>(y - 1, 0); yy <= std::min<Index>(y + 1, H - 1) && !hit; ++yy)
        for (Index xx = std::max<Index>(x - 1, 0); xx <= std::min<Index>(x + 1, W - 1) && !hit; ++xx)
          hit = gg[static_cast<std::size_t>(yy * W + xx)] > guidance_threshold;
      matched += hit ? 1 : 0;
    }
  return edges == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(edges);
}

std::vector<ScenePair> synthetic_dataset(std::size_t count, std::uint64_t seed, Index height, Index width, int scale,
                                         double noise_sigma) {
  std::vector<ScenePair> pairs;
  pairs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04zu", i);
    ScenePair p = synth_scene(pair_seed(id, seed), height, width, scale, 0.0, id);
    p.noise_sigma = noise_sigma;
    p.depth_lr = make_lr(p.depth_hr, scale, noise_sigma, pair_seed(id, seed));
    pairs.push_back(std::move(p));
  }
  return pairs;
}

DatasetSplit split_dataset(std::size_t count, std::uint64_t seed, double train_fraction) {
  DatasetSplit split;
  split.seed = seed;
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(splitmix64(seed));
  std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(count)));
  if (count >= 2) n_train = std::clamp<std::size_t>(n_train, 1, count - 1);
  else n_train = count;
  split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.eval.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.eval.begin(), split.eval.end());
  return split;
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
  const fs::path base = path.parent_path();
  std::vector<ManifestEntry> entries;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::vector<std::string> tok;
    for (std::string t; ss >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() != 3)
      throw DataError("manifest '" + path.string() + "' line " + std::to_string(lineno) +
                      ": expected 'pair_id guidance_path depth_path'");
    if (!seen.insert(tok[0]).second)
      throw DataError("manifest '" + path.string() + "' line " + std::to_string(lineno) + ": duplicate pair id '" +
                      tok[0] + "'");
    auto resolve = [&](const std::string& p) {
      fs::path q(p);
      return q.is_absolute() ? q : base / q;
    };
    entries.push_back({tok[0], resolve(tok[1]), resolve(tok[2])});
  }
  return entries;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ostringstream os;
  os << "# pair_id guidance_path depth_path\n";
  const fs::path base = path.parent_path();
  for (const auto& e : entries) {
    auto rel = [&](const fs::path& p) { return p.is_absolute() ? p.lexically_relative(fs::absolute(base)) : p; };
    os << e.id << ' ' << rel(e.guidance).generic_string() << ' ' << rel(e.depth).generic_string() << '\n';
  }
  write_file_atomic(path, os.str());
}

std::vector<ManifestEntry> scan_scene_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("'" + root.string() + "' is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& d : fs::directory_iterator(root))
    if (d.is_directory()) dirs.push_back(d.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<ManifestEntry> entries;
  for (const auto& d : dirs) {
    const fs::path g = d / "guidance.ppm", z = d / "depth.pgm";
    if (fs::exists(g) && fs::exists(z)) entries.push_back({d.filename().string(), g, z});
  }
  return entries;
}

std::vector<fs::path> missing_files(const std::vector<ManifestEntry>& entries) {
  std::vector<fs::path> missing;
  for (const auto& e : entries) {
    if (!fs::exists(e.guidance)) missing.push_back(e.guidance);
    if (!fs::exists(e.depth)) missing.push_back(e.depth);
  }
  return missing;
}

ScenePair load_pair(const ManifestEntry& entry, int scale, double noise_sigma, std::uint64_t seed) {
  ScenePair p;
  p.id = entry.id;
  p.guidance = read_ppm(entry.guidance);
  p.depth_hr = read_pgm(entry.depth);
  if (p.guidance.dim(1) != p.depth_hr.dim(1) || p.guidance.dim(2) != p.depth_hr.dim(2))
    throw DataError("pair '" + entry.id + "': guidance is " + std::to_string(p.guidance.dim(1)) + "x" +
                    std::to_string(p.guidance.dim(2)) + " but depth is " + std::to_string(p.depth_hr.dim(1)) + "x" +
                    std::to_string(p.depth_hr.dim(2)));
  if (p.depth_hr.dim(1) % scale != 0 || p.depth_hr.dim(2) % scale != 0)
    throw DataError("pair '" + entry.id + "': extents not divisible by scale " + std::to_string(scale));
  p.noise_sigma = noise_sigma;
  p.depth_lr = make_lr(p.depth_hr, scale, noise_sigma, pair_seed(entry.id, seed));
  return p;
}

ManifestEntry save_pair(const fs::path& dir, const ScenePair& pair) {
  const fs::path scene = dir / pair.id;
  fs::create_directories(scene);
  write_ppm8(scene / "guidance.ppm", pair.guidance);
  write_pgm16(scene / "depth.pgm", pair.depth_hr);
  write_pgm16(scene / "depth_lr.pgm", pair.depth_lr);
  return {pair.id, fs::path(pair.id) / "guidance.ppm", fs::path(pair.id) / "depth.pgm"};
}

}  // namespace dmsr::data
