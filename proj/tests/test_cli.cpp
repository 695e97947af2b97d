#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const std::string cli = WTCF_CLI_PATH;

struct Sandbox {
  fs::path dir;
  Sandbox() {
    dir = fs::temp_directory_path() / "wtcf_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Sandbox() { fs::remove_all(dir); }
  fs::path operator/(const std::string& name) const { return dir / name; }
};

int run(const std::string& args) {
  const int rc = std::system((cli + " " + args).c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

void make_corpus(const Sandbox& sb, const std::string& name, int files = 4, int points = 400) {
  write_text(sb / (name + ".spec.json"),
             "{\"num_files\": " + std::to_string(files) +
                 ", \"points_per_file\": " + std::to_string(points) + ", \"seed\": 7}");
  REQUIRE(run("synth --spec " + (sb / (name + ".spec.json")).string() + " --out " +
              (sb / name).string() + " > /dev/null") == 0);
}

}  // namespace

TEST_CASE("synth then stats round-trips the corpus counts") {
  Sandbox sb;
  make_corpus(sb, "corpus");
  const auto out = sb / "stats.json";
  REQUIRE(run("stats " + (sb / "corpus").string() + " > " + out.string()) == 0);
  const std::string doc = slurp(out);
  CHECK(doc.find("\"num_files\": 4") != std::string::npos);
  CHECK(doc.find("\"total_points\": 1600") != std::string::npos);
  CHECK(doc.find("\"format_version\"") != std::string::npos);
  CHECK(doc.find("\"inputs\"") != std::string::npos);
}

TEST_CASE("train then eval twice with one seed produces byte-identical artifacts") {
  Sandbox sb;
  make_corpus(sb, "corpus");
  const std::string data = (sb / "corpus").string();

  // identical invocations: same paths, same seeds
  const std::string w = (sb / "model.bin").string();
  const std::string h = (sb / "hist.json").string();
  const std::string e = (sb / "eval.json").string();
  auto round = [&](std::uint64_t seed) {
    REQUIRE(run("train --data " + data + " --out " + w + " --history " + h +
                " --epochs 2 --batch-size 128 --seed " + std::to_string(seed) +
                " --split-seed 9 > /dev/null") == 0);
    REQUIRE(run("eval --data " + data + " --weights " + w + " --subset test --split-seed 9 --out " +
                e + " > /dev/null") == 0);
    return std::tuple{slurp(w), slurp(h), slurp(e)};
  };
  const auto [w1, h1, e1] = round(5);
  const auto [w2, h2, e2] = round(5);
  CHECK(w1 == w2);
  CHECK(h1 == h2);
  CHECK(e1 == e2);

  const auto [w3, h3, e3] = round(6);
  CHECK(w1 != w3);
}

TEST_CASE("eval rejects a weight file whose window length mismatches the pipeline") {
  Sandbox sb;
  make_corpus(sb, "corpus");
  const std::string data = (sb / "corpus").string();
  const std::string w = (sb / "model.bin").string();
  REQUIRE(run("train --data " + data + " --out " + w +
              " --epochs 1 --batch-size 128 --window-length 40 > /dev/null") == 0);
  const std::string err = (sb / "err.txt").string();
  CHECK(run("eval --data " + data + " --weights " + w + " --window-length 60 2> " + err +
            " > /dev/null") == 1);
  const std::string msg = slurp(err);
  CHECK(msg.find("40") != std::string::npos);
  CHECK(msg.find("60") != std::string::npos);
  CHECK(msg.find("\"code\":1") != std::string::npos);
}

TEST_CASE("unknown config keys are rejected with exit code 1") {
  Sandbox sb;
  make_corpus(sb, "corpus");
  write_text(sb / "bad.json", "{\"train\": {\"epochz\": 3}}");
  const std::string err = (sb / "err.txt").string();
  CHECK(run("train --data " + (sb / "corpus").string() + " --out " + (sb / "w.bin").string() +
            " --config " + (sb / "bad.json").string() + " 2> " + err + " > /dev/null") == 1);
  CHECK(slurp(err).find("epochz") != std::string::npos);
}

TEST_CASE("malformed corpus data exits with code 2") {
  Sandbox sb;
  fs::create_directories(sb / "broken");
  write_text(sb / "broken" / "x.csv", "timestamp,value,is_anomaly\n1,oops,0\n");
  const std::string err = (sb / "err.txt").string();
  CHECK(run("stats " + (sb / "broken").string() + " 2> " + err + " > /dev/null") == 2);
  CHECK(slurp(err).find("\"kind\":\"data\"") != std::string::npos);
}

TEST_CASE("cv and ablate emit well-formed reports on a small corpus") {
  Sandbox sb;
  make_corpus(sb, "corpus", 3, 300);
  const std::string data = (sb / "corpus").string();
  const auto cv_out = sb / "cv.json";
  REQUIRE(run("cv --data " + data + " --k 2 --epochs 1 --batch-size 128 --out " +
              cv_out.string() + " > /dev/null") == 0);
  const std::string cv_doc = slurp(cv_out);
  CHECK(cv_doc.find("\"folds\"") != std::string::npos);
  CHECK(cv_doc.find("\"mean\"") != std::string::npos);

  const auto ab_out = sb / "ablate.json";
  REQUIRE(run("ablate --data " + data + " --epochs 1 --batch-size 128 --out " + ab_out.string() +
              " > /dev/null") == 0);
  const std::string ab_doc = slurp(ab_out);
  CHECK(ab_doc.find("cnn_only") != std::string::npos);
  CHECK(ab_doc.find("transformer_only") != std::string::npos);
  CHECK(ab_doc.find("\"variant\": \"full\"") != std::string::npos);
}

TEST_CASE("gradcheck command passes on a fresh build") {
  Sandbox sb;
  const auto out = sb / "gradcheck.txt";
  CHECK(run("gradcheck --pretty > " + out.string()) == 0);
  const std::string doc = slurp(out);
  CHECK(doc.find("FAIL") == std::string::npos);
  CHECK(doc.find("full_model") != std::string::npos);
}
