#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "toa/cli.hpp"
#include "toa/io.hpp"
#include "toa/matrix.hpp"
#include "toa/svg.hpp"
#include "toa/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "toa");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = toa::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("toa_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

std::size_t line_count(const fs::path& p) {
  const std::string s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

// Minimal XML checker: balanced tags, quoted attributes, one root element.
struct XmlNode {
  std::string name;
  std::vector<std::pair<std::string, std::string>> attrs;
  std::vector<XmlNode> children;
};

class XmlParser {
 public:
  explicit XmlParser(std::string text) : s_(std::move(text)) {}

  XmlNode document() {
    skip_space();
    if (s_.compare(i_, 5, "<?xml") == 0) {
      const auto end = s_.find("?>", i_);
      if (end == std::string::npos) throw std::runtime_error("unterminated declaration");
      i_ = end + 2;
    }
    skip_space();
    XmlNode root = element();
    skip_space();
    if (i_ != s_.size()) throw std::runtime_error("content after the root element");
    return root;
  }

 private:
  std::string s_;
  std::size_t i_ = 0;

  void skip_space() {
    while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
  }
  void expect(char c) {
    if (i_ >= s_.size() || s_[i_] != c) throw std::runtime_error(std::string("expected ") + c);
    ++i_;
  }
  std::string name() {
    const std::size_t start = i_;
    while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '-' ||
                              s_[i_] == ':' || s_[i_] == '_'))
      ++i_;
    if (i_ == start) throw std::runtime_error("expected a name");
    return s_.substr(start, i_ - start);
  }
  void text() {
    while (i_ < s_.size() && s_[i_] != '<') {
      if (s_[i_] == '&') {
        const auto end = s_.find(';', i_);
        if (end == std::string::npos || end - i_ > 6) throw std::runtime_error("bad entity");
        i_ = end;
      }
      ++i_;
    }
  }
  XmlNode element() {
    expect('<');
    XmlNode node;
    node.name = name();
    for (;;) {
      skip_space();
      if (i_ < s_.size() && s_[i_] == '/') {
        ++i_;
        expect('>');
        return node;
      }
      if (i_ < s_.size() && s_[i_] == '>') {
        ++i_;
        break;
      }
      std::string key = name();
      expect('=');
      expect('"');
      const auto end = s_.find('"', i_);
      if (end == std::string::npos) throw std::runtime_error("unterminated attribute");
      const std::string value = s_.substr(i_, end - i_);
      if (value.find('<') != std::string::npos) throw std::runtime_error("'<' in attribute");
      node.attrs.emplace_back(std::move(key), value);
      i_ = end + 1;
    }
    for (;;) {
      text();
      if (s_.compare(i_, 2, "</") == 0) {
        i_ += 2;
        if (name() != node.name) throw std::runtime_error("mismatched closing tag");
        skip_space();
        expect('>');
        return node;
      }
      node.children.push_back(element());
    }
  }
};

void collect(const XmlNode& n, const std::string& tag, std::vector<const XmlNode*>& out) {
  if (n.name == tag) out.push_back(&n);
  for (const auto& c : n.children) collect(c, tag, out);
}

std::string attr(const XmlNode& n, const std::string& key) {
  for (const auto& [k, v] : n.attrs)
    if (k == key) return v;
  return {};
}

// Cell rectangles, without the white background.
std::vector<const XmlNode*> cells(const XmlNode& root) {
  std::vector<const XmlNode*> rects, out;
  collect(root, "rect", rects);
  for (const XmlNode* r : rects)
    if (attr(*r, "fill") != "#ffffff") out.push_back(r);
  return out;
}

const std::vector<std::string> kTinyModel = {"--short", "--d-model", "8", "--mlp-hidden", "8",
                                             "--batch-size", "2", "--eval-samples", "4", "--quiet"};

std::vector<std::string> train_args(const std::string& variant, const fs::path& out,
                                    std::size_t steps) {
  std::vector<std::string> a = {"train", "--variant", variant, "--steps", std::to_string(steps),
                                "--out", out.string()};
  a.insert(a.end(), kTinyModel.begin(), kTinyModel.end());
  return a;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"bogus"}).code == 2);
  CHECK(run({"generate", "--count", "0"}).code == 2);
  CHECK(run({"generate", "--regime", "5"}).code == 2);
  CHECK(run({"train", "--short", "--steps", "1"}).code == 2);  // no variant
  CHECK(run({"train", "--variant", "nope", "--steps", "1"}).code == 2);
  CHECK(run({"theory", "--which", "caseZ"}).code == 2);
  CHECK(run({"inspect"}).code == 2);
  const Result help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("generate") != std::string::npos);
  CHECK(run({"--version"}).code == 0);
}

TEST_CASE("generate writes a readable dataset and a manifest") {
  const fs::path dir = fresh_dir("generate");
  const Result r = run({"generate", "--short", "--count", "6", "--seed", "4", "--out", dir.string()});
  REQUIRE(r.code == 0);
  const auto samples = toa::synthetic::read_dataset_csv(dir / "dataset.csv");
  CHECK(samples.size() == 6);
  CHECK(samples.front().noisy.cols() == 96);
  const json m = load(dir / "manifest.json");
  CHECK(m["command"] == "generate");
  CHECK(m["seeds"]["data_seed"] == 4);
  CHECK(m["config"]["count"] == 6);

  // Regenerating from the manifest reproduces the file byte for byte.
  const fs::path again = fresh_dir("generate_again");
  REQUIRE(run({"generate", "--config", (dir / "manifest.json").string(), "--out", again.string()}).code == 0);
  CHECK(slurp(dir / "dataset.csv") == slurp(again / "dataset.csv"));

  // A flag overrides the config file.
  const fs::path over = fresh_dir("generate_override");
  REQUIRE(run({"generate", "--config", (dir / "manifest.json").string(), "--count", "2", "--out",
               over.string()})
              .code == 0);
  CHECK(toa::synthetic::read_dataset_csv(over / "dataset.csv").size() == 2);
}

TEST_CASE("the output directory falls back to the environment") {
  const fs::path dir = fresh_dir("env");
  setenv("TOA_OUT_DIR", dir.string().c_str(), 1);
  const Result r = run({"generate", "--short", "--count", "1"});
  unsetenv("TOA_OUT_DIR");
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "dataset.csv"));
}

TEST_CASE("corrupt inputs exit with 4") {
  const fs::path dir = fresh_dir("corrupt");
  fs::create_directories(dir);
  {
    std::ofstream(dir / "broken.json") << "{\"format\": \"toa-checkpoint-v1\", ";
  }
  CHECK(run({"inspect", "--checkpoint", (dir / "broken.json").string(), "--out", dir.string()}).code == 4);
  {
    std::ofstream(dir / "other.json") << "{\"hello\": 1}";
  }
  CHECK(run({"inspect", "--checkpoint", (dir / "other.json").string(), "--out", dir.string()}).code == 4);
  CHECK(run({"inspect", "--checkpoint", (dir / "missing.json").string()}).code == 4);
  CHECK(run({"train", "--config", (dir / "broken.json").string(), "--variant", "softmax"}).code == 4);
}

TEST_CASE("train, reproduce from the manifest, then inspect") {
  const fs::path dir = fresh_dir("train");
  const Result r = run(train_args("toa-gated", dir, 4));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("toa-gated") != std::string::npos);
  const json m = load(dir / "manifest.json");
  CHECK(m["command"] == "train");
  CHECK(m["config"]["model"]["sor"]["enabled"] == true);
  CHECK(m["metrics"]["threads"] == 1);
  for (const char* key : {"data_seed", "eval_seed", "init_seed", "sor_seed"})
    CHECK(m["seeds"].contains(key));
  CHECK(line_count(dir / "metrics.csv") == 5);

  const fs::path again = fresh_dir("train_again");
  REQUIRE(run({"train", "--config", (dir / "manifest.json").string(), "--out", again.string(), "--quiet"})
              .code == 0);
  CHECK(load(again / "manifest.json")["metrics"]["final_eval_mse"] == m["metrics"]["final_eval_mse"]);
  CHECK(slurp(again / "checkpoint.json") == slurp(dir / "checkpoint.json"));

  const fs::path ins = fresh_dir("inspect");
  REQUIRE(run({"inspect", "--checkpoint", (dir / "checkpoint.json").string(), "--out", ins.string()}).code == 0);
  for (int z = 0; z < 3; ++z) {
    const fs::path rec = ins / ("reconstruction_z" + std::to_string(z) + ".csv");
    CHECK(line_count(rec) == 97);
    CHECK(slurp(rec).rfind("t,noisy,clean,predicted\n", 0) == 0);
  }
  const json im = load(ins / "manifest.json");
  CHECK(im["metrics"]["operators"].size() == 4);
  for (const char* stem : {"layer0_head0", "layer0_head1", "layer1_head0", "layer1_head1"}) {
    const toa::Matrix op = toa::io::read_matrix_csv(ins / "operators" / (std::string(stem) + ".csv"));
    CHECK(op.rows() == 96);
    CHECK(op.cols() == 96);
    CHECK(toa::io::read_matrix_csv(ins / "spectra" / (std::string(stem) + ".csv")).rows() == 96);
    const XmlNode svg = XmlParser(slurp(ins / "heatmaps" / (std::string(stem) + ".svg"))).document();
    CHECK(svg.name == "svg");
    // Offsets give the gated operator mixed-sign weights: both hues appear.
    bool red = false, blue = false;
    for (const XmlNode* c : cells(svg)) {
      const std::string fill = attr(*c, "fill");
      const int rr = std::stoi(fill.substr(1, 2), nullptr, 16);
      const int bb = std::stoi(fill.substr(5, 2), nullptr, 16);
      red = red || rr > bb;
      blue = blue || bb > rr;
    }
    CHECK(red);
    CHECK(blue);
  }
}

TEST_CASE("divergence exits with 3 and records the step") {
  const fs::path dir = fresh_dir("diverge");
  auto args = train_args("toa-relu", dir, 3);
  args.insert(args.end(), {"--amplitudes", "1e200", "1e200"});
  const Result r = run(args);
  CHECK(r.code == 3);
  CHECK(r.err.find("step 0") != std::string::npos);
  const json m = load(dir / "manifest.json");
  CHECK(m["metrics"]["diverged"] == true);
  CHECK(m["metrics"]["divergence_step"] == 0);
}

TEST_CASE("theory writes a report and exports operators") {
  const fs::path dir = fresh_dir("theory");
  const Result r = run({"theory", "--which", "caseA", "--export-operators", "--out", dir.string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("PASS") != std::string::npos);
  const json report = load(dir / "theory_caseA.json");
  CHECK(report["pass"] == true);
  CHECK(load(dir / "manifest.json")["metrics"]["pass"] == true);
  CHECK(fs::is_directory(dir / "operators"));
  CHECK(!fs::is_empty(dir / "operators"));
}

TEST_CASE("identity heatmap is a diagonal stripe on white") {
  const XmlNode svg = XmlParser(toa::svg::heatmap(toa::Matrix::identity(12), "identity <I>")).document();
  std::vector<const XmlNode*> titles;
  collect(svg, "title", titles);
  CHECK(titles.size() == 1);
  const auto painted = cells(svg);
  REQUIRE(painted.size() == 12);
  for (const XmlNode* c : painted) {
    CHECK(attr(*c, "x") == attr(*c, "y"));
    CHECK(attr(*c, "fill") == toa::svg::diverging_color(1.0, 1.0));
  }
}

TEST_CASE("diverging colors") {
  CHECK(toa::svg::diverging_color(0.0, 1.0) == "#ffffff");
  CHECK(toa::svg::diverging_color(0.5, 0.0) == "#ffffff");
  CHECK(toa::svg::diverging_color(1.0, 1.0) != toa::svg::diverging_color(-1.0, 1.0));
  CHECK(toa::svg::diverging_color(3.0, 1.0) == toa::svg::diverging_color(1.0, 1.0));
  CHECK(toa::svg::diverging_color(-3.0, 1.0) == toa::svg::diverging_color(-1.0, 1.0));
}

TEST_CASE("downsampling keeps the extreme of each block") {
  toa::Matrix m(6, 6, 0.1);
  m(1, 1) = -5.0;
  m(4, 5) = 3.0;
  const toa::Matrix d = toa::svg::downsample_extremes(m, 3);
  REQUIRE(d.rows() == 3);
  CHECK(d(0, 0) == -5.0);
  CHECK(d(2, 2) == 3.0);
  CHECK(d(1, 1) == 0.1);
  CHECK(toa::svg::downsample_extremes(m, 6) == m);
  const XmlNode svg = XmlParser(toa::svg::heatmap(toa::Matrix::identity(500), "big", 100)).document();
  CHECK(cells(svg).size() == 100);
  CHECK_THROWS(XmlParser("<svg><g></svg>").document());
}
