#include "dmsr/dataset.hpp"
#include "dmsr/image_io.hpp"
#include "dmsr/resample.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

using namespace dmsr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += (c == '\'') ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

// Small model settings so each invocation takes milliseconds.
const std::vector<std::string> kTinyNaf = {"--backbone", "naf", "--blocks", "1", "--embed-dim", "8"};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("dmsr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override {
    if (!HasFailure()) fs::remove_all(dir_);
  }

  Outcome run(const std::vector<std::string>& args) const {
    std::string cmd = "cd " + quote(dir_.string()) + " && " + quote(DMSR_CLI_PATH);
    for (const auto& a : args) cmd += " " + quote(a);
    cmd += " >" + quote((dir_ / ".stdout").string()) + " 2>" + quote((dir_ / ".stderr").string());
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = slurp(dir_ / ".stdout");
    o.err = slurp(dir_ / ".stderr");
    return o;
  }

  Outcome run(std::vector<std::string> args, const std::vector<std::string>& extra) const {
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  }

  fs::path path(const std::string& name) const { return dir_ / name; }

  void write(const std::string& name, const std::string& text) const { std::ofstream(path(name)) << text; }

  // Trains a tiny NAF model on two 32x32 scenes and returns the checkpoint path.
  fs::path tiny_checkpoint() const {
    auto o = run({"train", "--synthetic", "2", "--height", "32", "--width", "32", "--epochs", "1", "--out", "tiny"},
                 kTinyNaf);
    EXPECT_EQ(o.code, 0) << o.err;
    return path("tiny/checkpoint.dmsr");
  }

  fs::path synth(const std::string& out, int count, long extent, double sigma = 0.04) const {
    auto o = run({"synth", "--out", out, "--count", std::to_string(count), "--height", std::to_string(extent),
                  "--width", std::to_string(extent), "--noise-sigma", std::to_string(sigma), "--seed", "3"});
    EXPECT_EQ(o.code, 0) << o.err;
    return path(out + "/manifest.txt");
  }

  fs::path dir_;
};

std::string value_of(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string tok;
  while (in >> tok)
    if (tok.rfind(key + "=", 0) == 0) return tok.substr(key.size() + 1);
  return {};
}

std::map<std::string, std::string> read_echo(const fs::path& p) {
  std::map<std::string, std::string> m;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) m[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return m;
}

std::vector<std::pair<std::string, std::string>> csv_rows(const std::string& text, const std::string& header) {
  std::vector<std::pair<std::string, std::string>> rows;
  std::istringstream in(text);
  std::string line;
  bool inside = false;
  while (std::getline(in, line)) {
    if (line == header) {
      inside = true;
      continue;
    }
    const auto comma = line.find(',');
    if (!inside || comma == std::string::npos) continue;
    rows.emplace_back(line.substr(0, comma), line.substr(comma + 1));
  }
  return rows;
}

bool single_error_line(const std::string& err, const std::string& kind) {
  return err.rfind("error: " + kind + ": ", 0) == 0 && err.find('\n') == err.size() - 1;
}

}  // namespace

TEST_F(Cli, UnknownFlagIsUsageError) {
  auto o = run({"train", "--synthetic", "2", "--bogus-flag", "1"});
  EXPECT_EQ(o.code, 2);
  EXPECT_TRUE(single_error_line(o.err, "usage")) << o.err;
  EXPECT_NE(o.err.find("--bogus-flag"), std::string::npos) << o.err;
  EXPECT_EQ(run({}).code, 2);
}

TEST_F(Cli, UnknownConfigKeyIsConfigError) {
  write("bad.cfg", "model.k = 3\nmodel.bogus = 1\n");
  auto o = run({"train", "--config", "bad.cfg", "--synthetic", "2"});
  EXPECT_EQ(o.code, 2);
  EXPECT_TRUE(single_error_line(o.err, "config")) << o.err;
  EXPECT_NE(o.err.find("model.bogus"), std::string::npos) << o.err;

  o = run({"train", "--synthetic", "2", "--k", "4"});
  EXPECT_EQ(o.code, 2) << o.err;
  o = run({"train", "--synthetic", "2", "--manifest", "m.txt"});
  EXPECT_EQ(o.code, 2) << o.err;
}

TEST_F(Cli, ConfigPrecedenceAndEcho) {
  write("run.cfg", "# tiny run\nmodel.backbone = naf\nmodel.blocks = 1\nmodel.embed_dim = 8\n"
                   "train.epochs = 3\ntrain.lr = 0.002\n");
  auto o = run({"train", "--config", "run.cfg", "--epochs", "1", "--synthetic", "2", "--height", "32", "--width",
                "32", "--out", "r"});
  ASSERT_EQ(o.code, 0) << o.err;
  auto echo = read_echo(path("r/config.txt"));
  EXPECT_EQ(echo["train.epochs"], "1");     // flag beats file
  EXPECT_EQ(echo["train.lr"], "0.002");     // file beats default
  EXPECT_EQ(echo["model.k"], "3");          // default
  EXPECT_EQ(echo["model.embed_dim"], "8");
  EXPECT_EQ(echo["model.backbone"], "naf");
  EXPECT_NE(o.out.find("backbone=naf blocks=1 k=3 scale=8"), std::string::npos) << o.out;
  EXPECT_NE(o.out.find("epoch=1 psnr_db="), std::string::npos);
  EXPECT_EQ(o.out.find("epoch=2"), std::string::npos);
}

TEST_F(Cli, DefaultBlockCountsFollowBackbone) {
  auto swin = run({"bench", "--backbone", "swin", "--width", "64", "--height", "64", "--repeats", "3"});
  ASSERT_EQ(swin.code, 0) << swin.err;
  EXPECT_NE(swin.out.find("backbone=swin blocks=4 "), std::string::npos) << swin.out;
  auto naf = run({"bench", "--backbone", "naf", "--width", "64", "--height", "64", "--repeats", "3"});
  ASSERT_EQ(naf.code, 0) << naf.err;
  EXPECT_NE(naf.out.find("backbone=naf blocks=6 "), std::string::npos) << naf.out;
}

TEST_F(Cli, DivergenceExitsFour) {
  auto o = run({"train", "--synthetic", "2", "--height", "32", "--width", "32", "--epochs", "1", "--lr", "1e30"},
               kTinyNaf);
  EXPECT_EQ(o.code, 4) << o.out << o.err;
  EXPECT_TRUE(single_error_line(o.err, "divergence")) << o.err;
}

TEST_F(Cli, BadImageMagicIsDataError) {
  synth("s", 1, 32);
  write("junk.ppm", "XX\n1 1\n255\n\0");
  auto o = run({"infer", "--checkpoint", tiny_checkpoint().string(), "--guidance", "junk.ppm", "--depth-lr",
                "s/synth_0000/depth_lr.pgm", "--out", "o.pfm"});
  EXPECT_EQ(o.code, 3);
  EXPECT_TRUE(single_error_line(o.err, "data")) << o.err;
  EXPECT_NE(o.err.find("offset"), std::string::npos) << o.err;
}

TEST_F(Cli, ExtentMismatchNamesBothSides) {
  synth("small", 1, 32);
  synth("big", 1, 64);
  auto o = run({"infer", "--checkpoint", tiny_checkpoint().string(), "--guidance", "small/synth_0000/guidance.ppm",
                "--depth-lr", "big/synth_0000/depth_lr.pgm", "--out", "o.pfm"});
  EXPECT_EQ(o.code, 3);
  EXPECT_TRUE(single_error_line(o.err, "data")) << o.err;
  EXPECT_NE(o.err.find("32x32"), std::string::npos) << o.err;
  EXPECT_NE(o.err.find("8x8"), std::string::npos) << o.err;
  EXPECT_FALSE(fs::exists(path("o.pfm")));
}

TEST_F(Cli, MissingFilesListedExhaustively) {
  write("m.txt", "a a/g.ppm a/d.pgm\nb b/g.ppm b/d.pgm\n");
  auto o = run({"eval", "--checkpoint", tiny_checkpoint().string(), "--manifest", "m.txt"});
  EXPECT_EQ(o.code, 3);
  EXPECT_TRUE(single_error_line(o.err, "data")) << o.err;
  EXPECT_NE(o.err.find("4 missing"), std::string::npos) << o.err;
  for (const char* f : {"a/g.ppm", "a/d.pgm", "b/g.ppm", "b/d.pgm"})
    EXPECT_NE(o.err.find(f), std::string::npos) << f << " not in " << o.err;
}

TEST_F(Cli, InferMatchesEvalPerPair) {
  const auto manifest = synth("s", 3, 32);
  const auto ckpt = tiny_checkpoint();
  auto ev = run({"eval", "--checkpoint", ckpt.string(), "--manifest", manifest.string(), "--seed", "3"});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto rows = csv_rows(ev.out, "pair_id,psnr_db");
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& [id, db] : rows) {
    const std::string scene = "s/" + id + "/";
    auto o = run({"infer", "--checkpoint", ckpt.string(), "--guidance", scene + "guidance.ppm", "--depth-lr",
                  scene + "depth_lr.pgm", "--gt", scene + "depth.pgm", "--out", id + ".pfm", "--out-preview",
                  id + ".pgm"});
    ASSERT_EQ(o.code, 0) << o.err;
    EXPECT_NEAR(std::stod(value_of(o.out, "psnr_db")), std::stod(db), 1e-9) << id;
    auto sr = data::read_pfm(path(id + ".pfm"));
    auto g = data::read_ppm(path(scene + "guidance.ppm"));
    EXPECT_EQ(sr.dim(1), g.dim(1));
    EXPECT_EQ(sr.dim(2), g.dim(2));
    EXPECT_EQ(value_of(o.out, "height"), "32");
    EXPECT_TRUE(fs::exists(path(id + ".pgm")));
    EXPECT_TRUE(fs::exists(path(id + ".pfm.config")));
  }
}

TEST_F(Cli, IdentityHeadIsBicubic) {
  synth("s", 1, 64);
  auto o = run({"infer", "--checkpoint", tiny_checkpoint().string(), "--guidance", "s/synth_0000/guidance.ppm",
                "--depth-lr", "s/synth_0000/depth_lr.pgm", "--out", "id.pfm", "--identity-head"});
  ASSERT_EQ(o.code, 0) << o.err;
  auto sr = data::read_pfm(path("id.pfm"));
  auto lr = data::read_pgm(path("s/synth_0000/depth_lr.pgm"));
  auto up = bicubic_resize(lr, 64, 64);
  ASSERT_EQ(sr.shape(), up.shape());
  EXPECT_LT((sr.array() - up.array()).abs().maxCoeff(), 1e-6f);
}

TEST_F(Cli, EvalInfSentinelAndMean) {
  // Zero depth stays exactly zero through resampling, so the identity head is perfect there.
  fs::create_directories(path("flat"));
  Tensor<float> depth({1, 32, 32}, 0.0f);
  Tensor<float> rgb({3, 32, 32}, 0.5f);
  data::write_pgm16(path("flat/depth.pgm"), depth);
  data::write_ppm8(path("flat/guidance.ppm"), rgb);
  synth("s", 2, 32);
  write("m.txt",
        "zz_flat flat/guidance.ppm flat/depth.pgm\n"
        "b s/synth_0001/guidance.ppm s/synth_0001/depth.pgm\n"
        "a s/synth_0000/guidance.ppm s/synth_0000/depth.pgm\n");
  const auto ckpt = tiny_checkpoint();

  auto o = run({"eval", "--checkpoint", ckpt.string(), "--manifest", "m.txt", "--noise-sigma", "0",
                "--identity-head"});
  ASSERT_EQ(o.code, 0) << o.err;
  auto rows = csv_rows(o.out, "pair_id,psnr_db");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].first, "a");
  EXPECT_EQ(rows[1].first, "b");
  EXPECT_EQ(rows[2].first, "zz_flat");
  EXPECT_EQ(rows[2].second, "inf");
  EXPECT_EQ(value_of(o.out, "mean_psnr_db"), "inf");

  write("m2.txt", "b s/synth_0001/guidance.ppm s/synth_0001/depth.pgm\n"
                  "a s/synth_0000/guidance.ppm s/synth_0000/depth.pgm\n");
  o = run({"eval", "--checkpoint", ckpt.string(), "--manifest", "m2.txt", "--csv", "out/eval.csv"});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(o.out.find("pair_id,psnr_db"), std::string::npos);
  rows = csv_rows(slurp(path("out/eval.csv")), "pair_id,psnr_db");
  ASSERT_EQ(rows.size(), 2u);
  const double mean = (std::stod(rows[0].second) + std::stod(rows[1].second)) / 2;
  EXPECT_NEAR(std::stod(value_of(o.out, "mean_psnr_db")), mean, 1e-9);
  EXPECT_EQ(value_of(o.out, "pairs"), "2");
  auto echo = read_echo(path("out/eval.csv.config"));
  EXPECT_EQ(echo["eval.noise_sigma"], "0.04");
  EXPECT_EQ(echo["model.backbone"], "naf");
}

TEST_F(Cli, CleanEvalBeatsNoisyEval) {
  const auto manifest = synth("s", 4, 32, 0.0);
  const auto ckpt = tiny_checkpoint();
  auto clean = run({"eval", "--checkpoint", ckpt.string(), "--manifest", manifest.string(), "--noise-sigma", "0"});
  auto noisy = run({"eval", "--checkpoint", ckpt.string(), "--manifest", manifest.string(), "--noise-sigma", "0.04"});
  ASSERT_EQ(clean.code, 0) << clean.err;
  ASSERT_EQ(noisy.code, 0) << noisy.err;
  EXPECT_GE(std::stod(value_of(clean.out, "mean_psnr_db")), std::stod(value_of(noisy.out, "mean_psnr_db")));
}

TEST_F(Cli, BenchFromConfigAlone) {
  for (const std::string backbone : {"swin", "naf"}) {
    write("b.cfg", "model.backbone = " + backbone + "\nmodel.blocks = 1\nmodel.embed_dim = 8\n");
    auto o = run({"bench", "--config", "b.cfg", "--width", "32", "--height", "32", "--repeats", "3"});
    ASSERT_EQ(o.code, 0) << o.err;
    EXPECT_NE(o.out.find("backbone=" + backbone + " blocks=1 k=3 scale=8"), std::string::npos) << o.out;
    EXPECT_NE(o.out.find("extents=32x32 repeats=3"), std::string::npos) << o.out;
    EXPECT_NE(o.out.find("host="), std::string::npos);
    const auto rows = csv_rows(o.out, "repeat,ms");
    ASSERT_EQ(rows.size(), 3u);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      EXPECT_EQ(rows[i].first, std::to_string(i + 1));
      EXPECT_GT(std::stod(rows[i].second), 0.0);
    }
  }
  auto o = run({"bench", "--checkpoint", tiny_checkpoint().string(), "--width", "32", "--height", "32",
                "--repeats", "4", "--csv", "bench.csv"});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(csv_rows(slurp(path("bench.csv")), "repeat,ms").size(), 4u);
  EXPECT_EQ(read_echo(path("bench.csv.config"))["bench.extents"], "32x32");
}

TEST_F(Cli, TrainIsDeterministic) {
  const std::vector<std::string> args = {"train", "--synthetic", "4", "--height", "32", "--width", "32",
                                         "--epochs", "2", "--seed", "7"};
  auto a = run(args, {"--out", "a", "--backbone", "naf", "--blocks", "1", "--embed-dim", "8"});
  auto b = run(args, {"--out", "b", "--backbone", "naf", "--blocks", "1", "--embed-dim", "8"});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(path("a/checkpoint.dmsr")), slurp(path("b/checkpoint.dmsr")));
  EXPECT_EQ(slurp(path("a/loss.csv")), slurp(path("b/loss.csv")));
  // metrics.csv also carries wall-clock ms_per_image; compare the PSNR column only.
  auto psnr_column = [&](const std::string& run) {
    std::string col;
    for (const auto& [epoch, rest] : csv_rows(slurp(path(run + "/metrics.csv")), "epoch,psnr_db,ms_per_image"))
      col += epoch + "," + rest.substr(0, rest.find(',')) + "\n";
    return col;
  };
  EXPECT_EQ(psnr_column("a"), psnr_column("b"));
  EXPECT_FALSE(psnr_column("a").empty());
  EXPECT_EQ(a.out.substr(0, a.out.find("checkpoint=")), b.out.substr(0, b.out.find("checkpoint=")));
}

TEST_F(Cli, SynthWritesManifest) {
  auto o = run({"synth", "--out", "d", "--count", "3", "--height", "32", "--width", "32"});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(value_of(o.out, "pairs"), "3");
  auto entries = data::read_manifest(path("d/manifest.txt"));
  ASSERT_EQ(entries.size(), 3u);
  EXPECT_TRUE(data::missing_files(entries).empty());
  EXPECT_TRUE(fs::exists(path("d/synth_0002/depth_lr.pgm")));
  EXPECT_EQ(data::read_pgm(path("d/synth_0002/depth_lr.pgm")).dim(1), 4);

  auto t = run({"train", "--data", "d", "--epochs", "1", "--out", "r"}, kTinyNaf);
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_EQ(read_echo(path("r/config.txt"))["data.dir"], "d");
  EXPECT_NE(t.out.find("train_pairs=2 eval_pairs=1"), std::string::npos) << t.out;
}
