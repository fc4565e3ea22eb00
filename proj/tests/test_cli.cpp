#include <gtest/gtest.h>

#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "canerv/cli.hpp"
#include "support.hpp"

using namespace canerv;
using namespace canerv::testing;
using json = nlohmann::json;

namespace {

const std::string kSmall = " --synthetic moving_square --frames 3 --width 32 --height 32 --epochs 3 --qat-epochs 1";

int run(const std::string& args) {
  const std::string cmd = std::string(CANERV_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const std::filesystem::path& p) { return json::parse(slurp(p)); }

VideoSequence small_source() {
  SyntheticSpec s;
  s.kind = SyntheticKind::moving_square;
  s.frames = 3;
  s.height = s.width = 32;
  return generate_synthetic(s);
}

}  // namespace

TEST(CliEncode, DeterministicRunsAreByteIdentical) {
  TempDir dir("det");
  for (const char* name : {"a", "b"}) {
    ASSERT_EQ(run("encode" + kSmall + " --deterministic --emit-search-trace --output " + dir.str("s.cnrv")), 0);
    std::filesystem::rename(dir.path() / "s.cnrv", dir.path() / (std::string(name) + ".cnrv"));
    std::filesystem::rename(dir.path() / "s.cnrv.manifest.json", dir.path() / (std::string(name) + ".cnrv.manifest.json"));
  }
  EXPECT_EQ(slurp(dir.path() / "a.cnrv"), slurp(dir.path() / "b.cnrv"));
  const json a = read_json(dir.path() / "a.cnrv.manifest.json");
  const json b = read_json(dir.path() / "b.cnrv.manifest.json");
  EXPECT_FALSE(a.contains("timings"));
  EXPECT_EQ(a["results"], b["results"]);
  EXPECT_EQ(a["search"], b["search"]);
  EXPECT_EQ(slurp(dir.path() / "a.cnrv.manifest.json"), slurp(dir.path() / "b.cnrv.manifest.json"));
  EXPECT_TRUE(a["search"].contains("trace"));
}

TEST(CliEncode, ManifestMetricsMatchLibraryDecode) {
  TempDir dir("metrics");
  ASSERT_EQ(run("encode" + kSmall + " --output " + dir.str("s.cnrv") + " --loss-csv " + dir.str("loss.csv")), 0);
  const json m = read_json(dir.path() / "s.cnrv.manifest.json");
  EXPECT_TRUE(m.contains("timings"));
  const auto bytes = read_binary_file(dir.str("s.cnrv"));
  const VideoSequence src = small_source(), dec = deserialize_and_decode(bytes);
  EXPECT_EQ(m["input"]["hash"], cli::sequence_hash(src));
  EXPECT_DOUBLE_EQ(m["results"]["psnr"].get<double>(), psnr(dec, src));
  EXPECT_DOUBLE_EQ(m["results"]["msssim"].get<double>(), ms_ssim(dec, src));
  EXPECT_EQ(m["results"]["bits"].get<std::size_t>(), bytes.size() * 8);
  EXPECT_DOUBLE_EQ(m["results"]["bpp"].get<double>(), bytes.size() * 8.0 / (3 * 32 * 32));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "loss.csv"));
}

TEST(CliEncode, BaselineFlagsDisableEveryComponent) {
  TempDir dir("base");
  ASSERT_EQ(run("encode" + kSmall + " --no-dsa --no-dfa --no-hsa --output " + dir.str("b.cnrv")), 0);
  const json m = read_json(dir.path() / "b.cnrv.manifest.json");
  EXPECT_EQ(m["features"], json({{"dsa", false}, {"dfa", false}, {"hsa", false}}));
  EXPECT_EQ(m["search"]["extra_depths"], json({0, 0, 0, 0}));
  const TrainedModel model = rebuild_model(deserialize(read_binary_file(dir.str("b.cnrv"))));
  for (const auto& p : model.params) {
    EXPECT_EQ(p.name.find("dfa"), std::string::npos) << p.name;
    EXPECT_EQ(p.name.find("hsa"), std::string::npos) << p.name;
    EXPECT_EQ(p.name.find("extra"), std::string::npos) << p.name;
  }
}

TEST(CliEncode, ConfigFileOverridesFlagsAndRejectsUnknownKeys) {
  TempDir dir("cfg");
  std::ofstream(dir.str("run.cfg")) << "# override\ntrain.epochs = 2\ncodec.dsa = 0\n";
  ASSERT_EQ(run("encode" + kSmall + " --deterministic --config " + dir.str("run.cfg") + " --output " +
                dir.str("c.cnrv")),
            0);
  const json m = read_json(dir.path() / "c.cnrv.manifest.json");
  EXPECT_EQ(m["config"]["train.epochs"], "2");
  EXPECT_EQ(m["features"]["dsa"], false);

  std::ofstream(dir.str("bad.cfg")) << "train.epoch = 2\n";
  EXPECT_EQ(run("encode" + kSmall + " --config " + dir.str("bad.cfg") + " --output " + dir.str("d.cnrv")), 1);
  EXPECT_FALSE(std::filesystem::exists(dir.path() / "d.cnrv"));
}

TEST(CliSettings, Precedence) {
  const VideoSequence seq = small_source();
  cli::EncodeFlags f;
  EXPECT_EQ(cli::resolve_settings(f, seq).lambda, cli::kDefaultLambda);
  f.preset = "q1";
  EXPECT_EQ(cli::resolve_settings(f, seq).lambda, 1e7);
  EXPECT_EQ(cli::resolve_settings(f, seq).arch.base_channels, 16);
  f.lambda = 5.0;
  EXPECT_EQ(cli::resolve_settings(f, seq).lambda, 5.0);
  f.preset = "q9";
  EXPECT_THROW(cli::resolve_settings(f, seq), ConfigError);
  f.preset.clear();
  f.lambda = -1.0;
  EXPECT_THROW(cli::resolve_settings(f, seq), ConfigError);
}

TEST(CliDecode, SingleFrameMatchesFullDecode) {
  TempDir dir("frame");
  ASSERT_EQ(run("encode" + kSmall + " --no-dsa --output " + dir.str("s.cnrv")), 0);
  ASSERT_EQ(run("decode --input " + dir.str("s.cnrv") + " --output " + dir.str("all")), 0);
  ASSERT_EQ(run("decode --input " + dir.str("s.cnrv") + " --output " + dir.str("one") + " --frame 1"), 0);
  std::vector<std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dir.path() / "one")) files.push_back(e.path().filename());
  EXPECT_EQ(files, std::vector<std::string>{"frame_0001.png"});
  EXPECT_EQ(slurp(dir.path() / "one" / "frame_0001.png"), slurp(dir.path() / "all" / "frame_0001.png"));
  EXPECT_EQ(run("decode --input " + dir.str("s.cnrv") + " --output " + dir.str("bad") + " --frame 3"), 1);
}

TEST(CliDecode, CorruptStreamWritesNothing) {
  TempDir dir("corrupt");
  ASSERT_EQ(run("encode" + kSmall + " --no-dsa --output " + dir.str("s.cnrv")), 0);
  auto bytes = read_binary_file(dir.str("s.cnrv"));
  bytes[bytes.size() / 2] ^= 0x10;
  write_binary_file(dir.str("x.cnrv"), bytes);
  EXPECT_EQ(run("decode --input " + dir.str("x.cnrv") + " --output " + dir.str("out")), 3);
  EXPECT_FALSE(std::filesystem::exists(dir.path() / "out"));
  EXPECT_EQ(run("decode --input " + dir.str("missing.cnrv") + " --output " + dir.str("out")), 2);
}

TEST(CliEval, IdenticalSequences) {
  TempDir dir("eval");
  ASSERT_EQ(run("synth --kind text_overlay --frames 2 --output " + dir.str("seq")), 0);
  ASSERT_EQ(run("eval --original " + dir.str("seq") + " --decoded " + dir.str("seq") + " --bits 4096 --csv " +
                dir.str("e.csv")),
            0);
  std::ifstream in(dir.str("e.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "frame,psnr,msssim,bpp");
  std::vector<std::string> rows;
  while (std::getline(in, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[2], "all,99.000000,1.00000000,0.50000000");
}

TEST(CliSynth, ReproducibleForSeed) {
  TempDir dir("synth");
  for (const char* name : {"a", "b"})
    ASSERT_EQ(run("synth --kind brightness_drift --seed 4 --frames 3 --output " + dir.str(name)), 0);
  ASSERT_EQ(run("synth --kind brightness_drift --seed 5 --frames 3 --output " + dir.str("c")), 0);
  EXPECT_EQ(slurp(dir.path() / "a" / "frame_0002.png"), slurp(dir.path() / "b" / "frame_0002.png"));
  const json a = read_json(dir.path() / "a.manifest.json"), c = read_json(dir.path() / "c.manifest.json");
  EXPECT_NE(a["hash"], c["hash"]);
  SyntheticSpec s;
  s.kind = SyntheticKind::brightness_drift;
  s.seed = 4;
  s.frames = 3;
  EXPECT_EQ(a["hash"], cli::sequence_hash(generate_synthetic(s)));
  EXPECT_EQ(run("synth --kind fireworks --output " + dir.str("d")), 1);
}

TEST(CliRd, PresetSweepGivesIncreasingRate) {
  TempDir dir("rd");
  std::string streams;
  for (const char* q : {"q4", "q1", "q3", "q2"}) {
    ASSERT_EQ(run("encode" + kSmall + " --no-dsa --preset " + q + " --output " + dir.str(q) + ".cnrv"), 0);
    streams += " " + dir.str(q) + ".cnrv";
  }
  ASSERT_EQ(run("rd" + streams + " --synthetic moving_square --frames 3 --width 32 --height 32 --csv " +
                dir.str("rd.csv") + " --plot " + dir.str("rd.png")),
            0);
  const RDCurve c = read_rd_csv(dir.str("rd.csv"));
  ASSERT_EQ(c.size(), 4u);
  for (std::size_t i = 1; i < c.size(); ++i) EXPECT_GT(c[i].bpp, c[i - 1].bpp);
  const FeatureMap plot = detail::read_png(dir.path() / "rd.png");
  EXPECT_EQ(plot.w, 640);
  EXPECT_EQ(plot.h, 480);

  ASSERT_EQ(run("rd" + streams + " --synthetic moving_square --frames 3 --width 32 --height 32 --csv " +
                dir.str("rd2.csv") + " --anchor " + dir.str("rd.csv")),
            0);
}
