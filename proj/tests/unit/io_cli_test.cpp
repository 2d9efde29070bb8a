#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "common.hpp"
#include "doctest.h"
#include "ulm/io.hpp"
#include "ulm/kernels.hpp"
#include "ulm/pipeline.hpp"

using namespace ulm;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ulm_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::Numerical;
}

struct RunResult {
  int rc = -1;
  std::string out;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(ULM_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[512];
  while (fgets(buf, sizeof buf, p)) r.out += buf;
  const int st = pclose(p);
  r.rc = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

}  // namespace

TEST_CASE("SHA-256") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("container round trip and tamper detection") {
  const fs::path dir = scratch("container") / "seq";
  ImageSequence seq;
  seq.grid = {8, 6, -0.3, 19.0, 0.1, 0.1};
  seq.frame_rate = 305.0;
  for (int k = 0; k < 3; ++k) seq.frames.push_back(testutil::texture(8, 6, 10 + k));
  seq.frame_index = {0, 2, 5};
  write_container(dir, sequence_to_container(seq));
  const ImageSequence back = sequence_from_container(read_container(dir));
  CHECK(back.grid == seq.grid);
  CHECK(back.frame_rate == seq.frame_rate);
  CHECK(back.frame_index == seq.frame_index);
  REQUIRE(back.frames.size() == 3);
  for (int k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < seq.frames[k].size(); ++i)
      CHECK(back.frames[k][i] == doctest::Approx(seq.frames[k][i]).epsilon(1e-6));
  const std::string prov = container_provenance(dir);
  CHECK(prov.size() == 64);

  SUBCASE("flipped byte") {
    fs::path arr;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().filename() != "meta.json") arr = e.path();
    REQUIRE_FALSE(arr.empty());
    {
      std::fstream f(arr, std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(5);
      f.put('\x7f');
    }
    const ErrorCode c = code_of([&] { read_container(dir); });
    CHECK(c == ErrorCode::HashMismatch);
    CHECK(exit_code(c) == 4);
  }
  SUBCASE("missing container") {
    const ErrorCode c = code_of([&] { read_container(dir.parent_path() / "absent"); });
    CHECK(c == ErrorCode::MissingInput);
    CHECK(exit_code(c) == 3);
  }
}

TEST_CASE("configuration errors") {
  CHECK(exit_code(ErrorCode::ConfigInvalid) == 2);
  CHECK(exit_code(ErrorCode::Numerical) == 5);
  CHECK(code_of([] { parse_config({{"localize", {{"psf_min_snr", -1.0}}}}); }) == ErrorCode::ConfigInvalid);
  CHECK(code_of([] { parse_config({{"acquisition", {{"duration_s", "long"}}}}); }) == ErrorCode::ConfigInvalid);
  CHECK(code_of([] { parse_config({{"moco", {{"order", {"inter", "intra"}}}}}); }) == ErrorCode::ConfigInvalid);
  CHECK(code_of([] { load_config("/nonexistent/ulm.json"); }) == ErrorCode::MissingInput);
  // defaults survive a round trip
  const PipelineConfig a = parse_config(json::object());
  const PipelineConfig b = parse_config(config_to_json(a));
  CHECK(config_to_json(a) == config_to_json(b));
  CHECK(a.frame_rate() == 305.0);
}

TEST_CASE("serial and parallel kernels agree") {
  const ImageD img = testutil::texture(37, 41, 20, 1.5);
  const ImageD k = testutil::texture(7, 5, 21, 1.0);
  const ImageD t = testutil::texture(9, 9, 22, 1.5);
  const ImageD a = kernels::serial::convolve2d(img, k), b = kernels::parallel::convolve2d(img, k);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-12));
  const ImageD n1 = kernels::serial::ncc_map(img, t), n2 = kernels::parallel::ncc_map(img, t);
  for (std::size_t i = 0; i < n1.size(); ++i) CHECK(n2[i] == doctest::Approx(n1[i]).epsilon(1e-9));
  ImageD sr(37, 41), sc(37, 41);
  for (int r = 0; r < 37; ++r)
    for (int c = 0; c < 41; ++c) {
      sr(r, c) = 0.8 * std::sin(c / 7.0);
      sc(r, c) = -1.3 * std::cos(r / 5.0);
    }
  const SplineImage<double> sp(img);
  const ImageD w1 = kernels::serial::warp(sp, sr, sc), w2 = kernels::parallel::warp(sp, sr, sc);
  for (std::size_t i = 0; i < w1.size(); ++i) CHECK(w2[i] == doctest::Approx(w1[i]).epsilon(1e-12));
  // separable pass equals the outer-product kernel
  const std::vector<double> kr{0.25, 0.5, 0.25}, kc{1.0, 2.0, 0.5, -1.0, 0.3};
  ImageD outer(3, 5);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 5; ++c) outer(r, c) = kr[r] * kc[c];
  const ImageD s1 = kernels::parallel::separable_convolve(img, kr, kc), s2 = kernels::serial::convolve2d(img, outer);
  for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s1[i] == doctest::Approx(s2[i]).epsilon(1e-12));
}

TEST_CASE("command line") {
  const fs::path dir = scratch("cli");
  json cfg = json::parse(read_file(fs::path(ULM_SOURCE_DIR) / "configs" / "two_vessel.json"));
  cfg["acquisition"]["duration_s"] = 1.0;
  atomic_write(dir / "cfg.json", cfg.dump());
  const std::string base = "--config " + (dir / "cfg.json").string() + " --out " + (dir / "out").string();

  const RunResult first = run_cli("pipeline " + base);
  INFO(first.out);
  REQUIRE(first.rc == 0);
  CHECK(first.out.find("cached") == std::string::npos);
  for (const char* f : {"track/tracks.csv", "render/density.pgm", "quantify/speed_fit.json"}) CHECK(fs::exists(dir / "out" / f));

  const RunResult second = run_cli("pipeline " + base);
  CHECK(second.rc == 0);
  int cached = 0;
  std::istringstream lines(second.out);
  for (std::string l; std::getline(lines, l);) cached += l.find(" cached ") != std::string::npos;
  CHECK(cached == 7);

  CHECK(run_cli("track " + base + " --no-cache").out.find("track done") != std::string::npos);
  CHECK(run_cli("frobnicate " + base).rc == 2);
  CHECK(run_cli("pipeline --config " + (dir / "absent.json").string()).rc == 3);
  atomic_write(dir / "bad.json", R"({"track": {"v_max_mms": -5}})");
  CHECK(run_cli("pipeline --config " + (dir / "bad.json").string() + " --out " + (dir / "bad").string()).rc == 2);

  // a cached output edited behind the cache's back
  {
    std::ofstream f(dir / "out" / "track" / "tracks.csv", std::ios::app);
    f << "999,0,0,0,0,0,1\n";
  }
  CHECK(run_cli("pipeline " + base).rc == 4);
}
