#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <dsnerv/cli.hpp>

using namespace dsnerv;
namespace stdfs = std::filesystem;

namespace {

struct TempDir {
  stdfs::path path;
  explicit TempDir(const std::string& tag) {
    path = stdfs::temp_directory_path() / ("dsnerv_cli_" + tag);
    stdfs::remove_all(path);
    stdfs::create_directories(path);
  }
  ~TempDir() { stdfs::remove_all(path); }
  std::string str() const { return path.string(); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

struct Capture {
  std::ostringstream out, err;
  std::streambuf* old_out;
  std::streambuf* old_err;
  Capture() : old_out(std::cout.rdbuf(out.rdbuf())), old_err(std::cerr.rdbuf(err.rdbuf())) {}
  ~Capture() {
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
  }
};

// Value of `key=` in a summary line, up to the next space or newline.
std::string field(const std::string& text, const std::string& key) {
  const size_t at = text.find(key + "=");
  REQUIRE(at != std::string::npos);
  const size_t start = at + key.size() + 1;
  size_t end = text.find_first_of(" \n", start);
  if (end == std::string::npos) end = text.size();
  return text.substr(start, end - start);
}

std::string first_line(const std::string& text) {
  return text.substr(0, text.find('\n'));
}

// Run config on the 8-frame 32x64 moving-square clip; epochs kept small so
// each training run stays fractions of a second.
std::string write_config(const TempDir& dir, const std::string& name, const std::string& out,
                         const std::string& task, int epochs, int h = 32, int w = 64) {
  std::ostringstream os;
  os << "{\n"
     << "  \"seed\": 3,\n"
     << "  \"output\": \"" << out << "\",\n"
     << "  \"data\": {\"kind\": \"synthetic\", \"synthetic\": {\n"
     << "    \"name\": \"static_plus_moving_square\", \"frames\": 8, \"h\": " << h
     << ", \"w\": " << w << "}},\n"
     << "  \"model\": {\"static_count\": 3, \"dynamic_count\": 4,\n"
     << "    \"static_shape\": {\"h\": 2, \"w\": 4, \"dim\": 8},\n"
     << "    \"dynamic_shape\": {\"h\": 4, \"w\": 8, \"dim\": 2},\n"
     << "    \"c1\": 6, \"ch_min\": 4, \"strides\": [2, 2, 4]},\n"
     << "  \"train\": {\"epochs\": " << epochs << "},\n"
     << "  \"task\": {\"kind\": \"" << task << "\"}\n"
     << "}\n";
  const std::string path = dir.file(name);
  write_text_file(path, os.str());
  return path;
}

int count_ppm(const stdfs::path& dir) {
  if (!stdfs::is_directory(dir)) return 0;
  int n = 0;
  for (const auto& e : stdfs::directory_iterator(dir))
    if (e.path().extension() == ".ppm") ++n;
  return n;
}

}  // namespace

TEST_CASE("flag plumbing: thread resolution and bits lists") {
  REQUIRE(cli::detail::resolve_threads(3) == 3);
  setenv("DSNERV_THREADS", "2", 1);
  REQUIRE(cli::detail::resolve_threads(0) == 2);
  unsetenv("DSNERV_THREADS");
  REQUIRE(cli::detail::resolve_threads(0) == 1);

  REQUIRE(cli::detail::parse_bits_list("4,6,8") == std::vector<int>{4, 6, 8});
  REQUIRE(cli::detail::parse_bits_list("8") == std::vector<int>{8});
  REQUIRE_THROWS_AS(cli::detail::parse_bits_list("4,x"), ConfigError);
  REQUIRE_THROWS_AS(cli::detail::parse_bits_list(""), ConfigError);
}

TEST_CASE("train writes its outputs and reruns reproduce the summary") {
  TempDir dir("train");
  const std::string out = dir.file("run");
  const std::string cfg = write_config(dir, "run.json", out, "reconstruction", 6);

  std::string line1, line2;
  {
    Capture cap;
    REQUIRE(cli::run({"train", "--config", cfg}) == 0);
    line1 = first_line(cap.out.str());
  }
  REQUIRE(stdfs::exists(stdfs::path(out) / "checkpoint.dsnc"));
  REQUIRE(stdfs::exists(stdfs::path(out) / "train_log.csv"));
  const std::vector<uint8_t> ckpt1 = read_file(out + "/checkpoint.dsnc");

  {
    Capture cap;
    REQUIRE(cli::run({"train", "--config", cfg}) == 0);
    line2 = first_line(cap.out.str());
  }
  REQUIRE(line1 == line2);  // wall time lives on its own line
  REQUIRE(read_file(out + "/checkpoint.dsnc") == ckpt1);

  // A different seed produces a different model.
  {
    Capture cap;
    REQUIRE(cli::run({"train", "--config", cfg, "--seed", "99"}) == 0);
    REQUIRE(field(first_line(cap.out.str()), "eval_psnr") != field(line1, "eval_psnr"));
  }
}

TEST_CASE("reconstruct emits every frame and matches the train log score") {
  TempDir dir("reconstruct");
  const std::string out = dir.file("run");
  const std::string cfg = write_config(dir, "run.json", out, "reconstruction", 6);

  std::string train_psnr;
  {
    Capture cap;
    REQUIRE(cli::run({"train", "--config", cfg}) == 0);
    train_psnr = field(first_line(cap.out.str()), "eval_psnr");
  }

  const std::string rec = dir.file("rec");
  {
    Capture cap;
    REQUIRE(cli::run({"reconstruct", "--checkpoint", out + "/checkpoint.dsnc", "--out", rec,
                      "--config", cfg}) == 0);
    const std::string line = first_line(cap.out.str());
    REQUIRE(field(line, "frames") == "8");
    // Same decode, same targets, same mean: the printed digits agree exactly.
    REQUIRE(field(line, "mean_psnr") == train_psnr);
  }
  REQUIRE(count_ppm(stdfs::path(rec) / "frames") == 8);
  REQUIRE(stdfs::exists(stdfs::path(rec) / "report.csv"));

  const std::string ev = dir.file("ev");
  {
    Capture cap;
    REQUIRE(cli::run({"eval", "--checkpoint", out + "/checkpoint.dsnc", "--config", cfg, "--out",
                      ev}) == 0);
    REQUIRE(field(first_line(cap.out.str()), "mean_psnr") == train_psnr);
  }
}

TEST_CASE("interpolate decodes only the held-out odd frames") {
  TempDir dir("interp");
  const std::string out = dir.file("run");
  const std::string cfg = write_config(dir, "run.json", out, "interpolation", 6);
  {
    Capture cap;
    REQUIRE(cli::run({"train", "--config", cfg}) == 0);
  }
  const std::string rec = dir.file("odd");
  {
    Capture cap;
    REQUIRE(cli::run({"interpolate", "--checkpoint", out + "/checkpoint.dsnc", "--out", rec}) == 0);
    REQUIRE(field(first_line(cap.out.str()), "frames") == "4");
  }
  for (const int t : {1, 3, 5, 7})
    REQUIRE(stdfs::exists(stdfs::path(rec) / "frames" / cli::detail::frame_name(t)));
  for (const int t : {0, 2, 4, 6})
    REQUIRE_FALSE(stdfs::exists(stdfs::path(rec) / "frames" / cli::detail::frame_name(t)));
}

TEST_CASE("inpaint scores full frames against the unmasked source") {
  TempDir dir("inpaint");
  const std::string out = dir.file("run");
  std::string cfg;
  {
    // reconstruction config with task swapped to a central-mask inpaint
    std::ostringstream os;
    os << "{\"seed\": 3, \"output\": \"" << out << "\",\n"
       << " \"data\": {\"kind\": \"synthetic\", \"synthetic\": {\"name\":"
       << " \"static_plus_moving_square\", \"frames\": 8, \"h\": 32, \"w\": 64}},\n"
       << " \"model\": {\"static_count\": 3, \"dynamic_count\": 4,\n"
       << "   \"static_shape\": {\"h\": 2, \"w\": 4, \"dim\": 8},\n"
       << "   \"dynamic_shape\": {\"h\": 4, \"w\": 8, \"dim\": 2},\n"
       << "   \"c1\": 6, \"ch_min\": 4, \"strides\": [2, 2, 4]},\n"
       << " \"train\": {\"epochs\": 6},\n"
       << " \"task\": {\"kind\": \"inpainting\", \"mask\": {\"kind\": \"central\"}}}\n";
    cfg = dir.file("run.json");
    write_text_file(cfg, os.str());
  }
  {
    Capture cap;
    REQUIRE(cli::run({"train", "--config", cfg}) == 0);
  }
  const std::string rec = dir.file("filled");
  {
    Capture cap;
    REQUIRE(cli::run({"inpaint", "--checkpoint", out + "/checkpoint.dsnc", "--out", rec,
                      "--config", cfg}) == 0);
    REQUIRE(field(first_line(cap.out.str()), "frames") == "8");
  }
  // Full-frame report: header, one row per frame, and a mean row.
  const std::vector<uint8_t> csv = read_file(rec + "/report.csv");
  const std::string text(csv.begin(), csv.end());
  REQUIRE(std::count(text.begin(), text.end(), '\n') == 10);
  REQUIRE(text.rfind("frame,psnr,ms_ssim\n", 0) == 0);
}

TEST_CASE("invalid stride chains fail before any training happens") {
  TempDir dir("badspec");
  const std::string out = dir.file("run");
  // 16x32 frames cannot come out of a (2,2,4)-stride chain fed by 4x8 codes.
  const std::string cfg = write_config(dir, "bad.json", out, "reconstruction", 6, 16, 32);
  Capture cap;
  REQUIRE(cli::run({"train", "--config", cfg}) == 1);
  REQUIRE_FALSE(stdfs::exists(stdfs::path(out) / "checkpoint.dsnc"));
  REQUIRE(cap.err.str().find("error:") != std::string::npos);
  // the violated invariant, by name
  REQUIRE(cap.err.str().find("must equal output resolution") != std::string::npos);
}

TEST_CASE("failed commands clean up partial outputs") {
  TempDir dir("cleanup");
  const std::string out = dir.file("run");
  const std::string cfg = write_config(dir, "run.json", out, "reconstruction", 4);
  {
    Capture cap;
    REQUIRE(cli::run({"train", "--config", cfg}) == 0);
  }
  // A wrong-geometry scoring dataset is only detected after frames are
  // written; the guard must remove them on the way out.
  const std::string wrong = dir.file("wrong_frames");
  {
    FrameSequence tiny = synth_video(SynthKind::TexturedPan, [] {
      SynthParams p;
      p.frames = 2;
      p.h = 8;
      p.w = 8;
      return p;
    }());
    save_frames(wrong, tiny);
  }
  const std::string rec = dir.file("rec");
  Capture cap;
  REQUIRE(cli::run({"reconstruct", "--checkpoint", out + "/checkpoint.dsnc", "--out", rec,
                    "--data", wrong}) == 1);
  REQUIRE(cap.err.str().find("error:") != std::string::npos);
  REQUIRE(count_ppm(stdfs::path(rec) / "frames") == 0);
  REQUIRE_FALSE(stdfs::exists(stdfs::path(rec) / "report.csv"));
}

TEST_CASE("compress, decompress, and info cover the bitstream lifecycle") {
  TempDir dir("compress");
  const std::string out = dir.file("run");
  const std::string cfg = write_config(dir, "run.json", out, "reconstruction", 6);
  {
    Capture cap;
    REQUIRE(cli::run({"train", "--config", cfg}) == 0);
  }

  const std::string cmp = dir.file("cmp");
  std::string stdout_text;
  {
    Capture cap;
    REQUIRE(cli::run({"compress", "--checkpoint", out + "/checkpoint.dsnc", "--out", cmp,
                      "--bits", "4,6,8", "--config", cfg}) == 0);
    stdout_text = cap.out.str();
  }
  for (const int b : {4, 6, 8})
    REQUIRE(stdfs::exists(stdfs::path(cmp) / ("model_b" + std::to_string(b) + ".dsnv")));
  const std::vector<uint8_t> csv = read_file(cmp + "/rate_distortion.csv");
  const std::string table(csv.begin(), csv.end());
  REQUIRE(table.rfind("bits,sparsity,bytes,bpp,psnr\n", 0) == 0);
  REQUIRE(std::count(table.begin(), table.end(), '\n') == 4);

  // bpp printed must equal bytes*8 / (T*H*W) for the 8-frame 32x64 clip.
  std::istringstream lines(stdout_text);
  std::string line;
  while (std::getline(lines, line)) {
    const double bytes = std::stod(field(line, "bytes"));
    const double bpp = std::stod(field(line, "bpp"));
    REQUIRE(bpp == Catch::Approx(bytes * 8.0 / (8.0 * 32.0 * 64.0)).margin(5e-7));
  }

  const std::string dec = dir.file("dec");
  {
    Capture cap;
    REQUIRE(cli::run({"decompress", "--bitstream", cmp + "/model_b8.dsnv", "--out", dec}) == 0);
  }
  // The restored checkpoint decodes on its own, no dataset or original needed.
  const std::string rec = dir.file("rec");
  {
    Capture cap;
    REQUIRE(cli::run({"reconstruct", "--checkpoint", dec + "/checkpoint.dsnc", "--out", rec}) == 0);
  }
  REQUIRE(count_ppm(stdfs::path(rec) / "frames") == 8);
  REQUIRE_FALSE(stdfs::exists(stdfs::path(rec) / "report.csv"));

  {
    Capture cap;
    REQUIRE(cli::run({"info", "--input", out + "/checkpoint.dsnc"}) == 0);
    REQUIRE(cap.out.str().find("params=") != std::string::npos);
    REQUIRE(cap.out.str().find("grid_share=") != std::string::npos);
  }
  {
    Capture cap;
    REQUIRE(cli::run({"info", "--input", cmp + "/model_b8.dsnv"}) == 0);
    REQUIRE(cap.out.str().find("total_bytes=") != std::string::npos);
    REQUIRE(cap.out.str().find("codes.static") != std::string::npos);
  }
  {
    Capture cap;
    REQUIRE(cli::run({"info", "--input", cfg}) == 1);  // json is neither container
    REQUIRE(cap.err.str().find("error:") != std::string::npos);
  }
}
