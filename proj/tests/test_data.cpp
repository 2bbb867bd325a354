#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <numeric>

#include "batmil/binio.hpp"
#include "batmil/data.hpp"
#include "batmil/error.hpp"
#include "batmil/metrics.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace batmil;
using namespace batmil::data;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("batmil_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Tensor float_tensor(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t = testsupport::random_tensor(r, c, rng);
  round_to_float(t);
  return t;
}

std::vector<double> bag_mean(const Tensor& x) {
  std::vector<double> m(x.cols, 0.0);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < x.cols; ++c) m[c] += x(r, c) / static_cast<double>(x.rows);
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

std::vector<double> witness_direction(const SynthSet& s) {
  std::vector<double> u(s.benign_center.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = s.malignant_center[i] - s.benign_center[i];
  return u;
}

}  // namespace

TEST_CASE("feature bag files") {
  Rng rng = make_rng(71);
  const Tensor x = float_tensor(5, 3, rng);
  const auto bytes = encode_fbag(x, 1);
  REQUIRE(bytes.size() == 4 + 4 + 4 + 4 + 4 + 4 * 15 + 4);
  CHECK(std::memcmp(bytes.data(), "FBAG", 4) == 0);

  SUBCASE("round trip is bit exact") {
    const model::BagFeatures b = decode_fbag(bytes);
    CHECK(b.features == x);
    CHECK(b.label == 1);
    CHECK(encode_fbag(b.features, b.label) == bytes);
    const fs::path dir = fresh_dir("fbag");
    write_fbag(dir / "slide_7.fbag", x, -1);
    const model::BagFeatures c = read_fbag(dir / "slide_7.fbag");
    CHECK(c.features == x);
    CHECK(c.label == -1);
    CHECK(c.bag_id == "slide_7");
    fs::remove_all(dir);
  }
  SUBCASE("property: random shapes round trip") {
    for (int t = 0; t < 50; ++t) {
      const Tensor y = float_tensor(1 + t % 7, 1 + t % 5, rng);
      CHECK(decode_fbag(encode_fbag(y, t % 3 - 1)).features == y);
    }
  }
  SUBCASE("every corrupted byte is rejected") {
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      for (std::uint8_t flip : {0x01, 0x80}) {
        auto bad = bytes;
        bad[i] ^= flip;
        CHECK_THROWS_AS(decode_fbag(bad), FormatError);
      }
    }
  }
  SUBCASE("truncation and structural errors") {
    for (std::size_t len = 0; len < bytes.size(); len += 7) {
      CHECK_THROWS_AS(decode_fbag(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + len)), FormatError);
    }
    // Valid CRC but an unknown version.
    std::vector<std::uint8_t> bad(bytes.begin(), bytes.end() - 4);
    bad[4] = 9;
    const std::uint32_t crc = binio::crc32(bad.data(), bad.size());
    for (int k = 0; k < 4; ++k) bad.push_back(static_cast<std::uint8_t>(crc >> (8 * k)));
    CHECK_THROWS_WITH_AS(decode_fbag(bad), doctest::Contains("version"), FormatError);
  }
}

TEST_CASE("manifest") {
  const std::string text =
      "# bags\n"
      "a.fbag\t0\ttrain\n"
      "\n"
      "/abs/b.fbag\t1\tfold3\n"
      "c.fbag\t-1\ttest\n";
  const Manifest m = parse_manifest(text, "/data/set");
  REQUIRE(m.entries.size() == 3);
  CHECK(m.entries[1].label == 1);
  CHECK(m.entries[1].split == "fold3");
  CHECK(m.resolve(m.entries[0]) == fs::path("/data/set/a.fbag"));
  CHECK(m.resolve(m.entries[1]) == fs::path("/abs/b.fbag"));
  CHECK(m.indices_with_split("test") == std::vector<std::size_t>{2});
  CHECK(m.indices_without_split("test") == std::vector<std::size_t>{0, 1});
  CHECK(parse_manifest(format_manifest(m), "/data/set").entries.size() == 3);
  CHECK_THROWS_AS(require_labels(m, 2), ConfigError);

  for (const std::string& s : {"train", "val", "test", "fold0", "fold4"}) CHECK(valid_split(s));
  for (const std::string& s : {"fold5", "Train", "", "dev"}) CHECK_FALSE(valid_split(s));

  auto fails = [](const std::string& bad, const std::string& what) {
    CHECK_THROWS_WITH_AS(parse_manifest("ok.fbag\t0\ttrain\n" + bad, ".", "m.tsv"),
                         doctest::Contains(("m.tsv:2: " + what).c_str()), FormatError);
  };
  fails("x.fbag\t0\n", "expected 3");
  fails("x.fbag\tone\ttrain\n", "label is not an integer");
  fails("x.fbag\t1.5\ttrain\n", "label is not an integer");
  fails("x.fbag\t-2\ttrain\n", "label must be");
  fails("x.fbag\t0\tholdout\n", "unknown split");
  fails("ok.fbag\t1\ttest\n", "duplicate path");
  CHECK_THROWS_AS(read_manifest("/nonexistent/manifest.tsv"), std::runtime_error);
}

TEST_CASE("load_bags checks labels against the manifest") {
  Rng rng = make_rng(72);
  const fs::path dir = fresh_dir("load");
  write_fbag(dir / "a.fbag", float_tensor(3, 2, rng), 0);
  write_fbag(dir / "b.fbag", float_tensor(4, 2, rng), 1);
  Manifest m = parse_manifest("a.fbag\t0\ttrain\nb.fbag\t1\tval\n", dir);
  const auto bags = load_bags(m, {1, 0});
  CHECK(bags[0].features.rows == 4);
  CHECK(bags[1].bag_id == "a");
  m.entries[1].label = 0;
  CHECK_THROWS_AS(load_bags(m, {1}), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("synthetic bags") {
  SynthConfig cfg;
  cfg.n_bags = 40;
  cfg.bag_size = 20;
  cfg.dim = 8;
  cfg.seed = 5;

  SUBCASE("deterministic per seed") {
    const SynthSet a = synth_bags(cfg), b = synth_bags(cfg);
    for (std::size_t i = 0; i < a.bags.size(); ++i) {
      CHECK(encode_fbag(a.bags[i].features, a.bags[i].label) == encode_fbag(b.bags[i].features, b.bags[i].label));
    }
    cfg.seed = 6;
    CHECK_FALSE(synth_bags(cfg).bags[0].features == a.bags[0].features);
  }
  SUBCASE("shape, balance and planted witnesses") {
    const SynthSet s = synth_bags(cfg);
    REQUIRE(s.bags.size() == 40);
    int positives = 0;
    for (std::size_t i = 0; i < s.bags.size(); ++i) {
      const auto& b = s.bags[i];
      CHECK(b.features.rows == 20);
      CHECK(b.features.cols == 8);
      for (double v : b.features.data) CHECK(static_cast<double>(static_cast<float>(v)) == v);
      const auto w = std::count(s.witness[i].begin(), s.witness[i].end(), 1);
      if (b.label == 1) {
        ++positives;
        CHECK(w == 2);  // ceil(0.1 * 20)
      } else {
        CHECK(b.label == 0);
        CHECK(w == 0);
      }
    }
    CHECK(positives == 20);
    CHECK(s.bags[3].bag_id == "bag_0003");
  }
  SUBCASE("tree offsets shrink by half per level") {
    const SynthSet s = synth_bags(cfg);
    CHECK(s.benign_leaves.size() == std::size_t{1} << (cfg.depth - 1));
    CHECK(s.malignant_leaves.size() == s.benign_leaves.size());
    const auto u = witness_direction(s);
    CHECK(std::sqrt(dot(u, u)) > 0.0);
    for (const auto& leaf : s.benign_leaves) {
      std::vector<double> off(leaf.size());
      for (std::size_t i = 0; i < off.size(); ++i) off[i] = leaf[i] - s.benign_center[i];
      // Levels 2..depth add offsets of norm s/2 and s/4.
      CHECK(std::sqrt(dot(off, off)) <= cfg.separation * (0.5 + 0.25) + 1e-9);
    }
  }
  SUBCASE("witness counts") {
    CHECK(witness_count(0.1, 64) == 7);
    CHECK(witness_count(0.1, 20) == 2);
    CHECK(witness_count(0.05, 128) == 7);
    CHECK(witness_count(1.0, 9) == 9);
    CHECK(witness_count(0.3, 10) == 3);
  }
  SUBCASE("invalid settings") {
    for (double r : {0.0, -0.1, 1.5}) {
      cfg.witness_rate = r;
      CHECK_THROWS_AS(synth_bags(cfg), ConfigError);
    }
    cfg.witness_rate = 0.1;
    cfg.separation = 0.0;
    CHECK_THROWS_AS(synth_bags(cfg), ConfigError);
  }
}

TEST_CASE("synthetic task: full witnesses are linearly separable by bag mean") {
  SynthConfig cfg;
  cfg.witness_rate = 1.0;
  cfg.separation = 10.0;
  cfg.seed = 8;
  const SynthSet s = synth_bags(cfg);
  // Logistic regression on bag means, trained on even bags, scored on odd ones.
  const std::size_t d = cfg.dim;
  std::vector<std::vector<double>> means;
  for (const auto& b : s.bags) means.push_back(bag_mean(b.features));
  std::vector<double> w(d, 0.0);
  double bias = 0.0;
  for (int it = 0; it < 500; ++it) {
    std::vector<double> gw(d, 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < means.size(); i += 2) {
      const double p = 1.0 / (1.0 + std::exp(-(dot(w, means[i]) + bias)));
      const double e = p - s.bags[i].label;
      for (std::size_t c = 0; c < d; ++c) gw[c] += e * means[i][c];
      gb += e;
    }
    for (std::size_t c = 0; c < d; ++c) w[c] -= 0.05 * gw[c] / 100.0;
    bias -= 0.05 * gb / 100.0;
  }
  int correct = 0, total = 0;
  for (std::size_t i = 1; i < means.size(); i += 2, ++total) {
    correct += ((dot(w, means[i]) + bias) > 0.0) == (s.bags[i].label == 1);
  }
  const double acc = static_cast<double>(correct) / total;
  MESSAGE("logistic probe accuracy " << acc);
  CHECK(acc >= 0.99);
}

TEST_CASE("synthetic task: sparse witnesses favour max pooling") {
  SynthConfig cfg;
  cfg.witness_rate = 0.05;
  cfg.separation = 4.0;
  cfg.bag_size = 128;
  cfg.dim = 32;
  cfg.seed = 9;
  const SynthSet s = synth_bags(cfg);
  const auto u = witness_direction(s);
  std::vector<double> mean_score, max_score;
  std::vector<int> labels;
  for (const auto& b : s.bags) {
    double mx = -INFINITY, sum = 0.0;
    for (std::size_t r = 0; r < b.features.rows; ++r) {
      const double p = dot(b.features.row(r), u);
      mx = std::max(mx, p);
      sum += p;
    }
    mean_score.push_back(sum / static_cast<double>(b.features.rows));
    max_score.push_back(mx);
    labels.push_back(b.label);
  }
  const double a_mean = metrics::auroc(mean_score, labels), a_max = metrics::auroc(max_score, labels);
  MESSAGE("bag-mean AUROC " << a_mean << ", max-pool oracle AUROC " << a_max);
  CHECK(a_mean < a_max);
}

TEST_CASE("property: label sets from disjoint seeds are independent") {
  // 2x2 contingency of labels at the same bag index; chi-square critical value 6.635 at 0.01, 1 dof.
  SynthConfig cfg;
  cfg.n_bags = 400;
  cfg.bag_size = 4;
  cfg.dim = 2;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    cfg.seed = 2 * seed;
    const SynthSet a = synth_bags(cfg);
    cfg.seed = 2 * seed + 1;
    const SynthSet b = synth_bags(cfg);
    double table[2][2] = {{0, 0}, {0, 0}};
    for (std::size_t i = 0; i < a.bags.size(); ++i) table[a.bags[i].label][b.bags[i].label] += 1;
    double chi = 0.0;
    const double n = static_cast<double>(a.bags.size());
    for (int r = 0; r < 2; ++r) {
      for (int c = 0; c < 2; ++c) {
        const double expect = (table[r][0] + table[r][1]) * (table[0][c] + table[1][c]) / n;
        chi += (table[r][c] - expect) * (table[r][c] - expect) / expect;
      }
    }
    CHECK(chi < 6.635);
  }
}

TEST_CASE("write_synth produces a readable manifest") {
  SynthConfig cfg;
  cfg.n_bags = 6;
  cfg.bag_size = 5;
  cfg.dim = 3;
  const SynthSet s = synth_bags(cfg);
  const fs::path dir = fresh_dir("synth");
  write_synth(s, dir);
  const Manifest m = read_manifest(dir / "manifest.tsv");
  REQUIRE(m.entries.size() == 6);
  std::vector<std::size_t> all(6);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto bags = load_bags(m, all);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(bags[i].features == s.bags[i].features);
    CHECK(m.entries[i].split == "train");
  }
  fs::remove_all(dir);
}

TEST_CASE("kfold_split") {
  auto manifest_with = [](const std::vector<int>& labels) {
    Manifest m;
    for (std::size_t i = 0; i < labels.size(); ++i) m.entries.push_back({"b" + std::to_string(i), labels[i], "train"});
    return m;
  };
  SUBCASE("balanced ten bags") {
    const Manifest m = manifest_with({0, 1, 0, 1, 0, 1, 0, 1, 0, 1});
    const auto a = kfold_split(m, 5, 3);
    for (std::size_t f = 0; f < 5; ++f) {
      std::map<int, int> per_label;
      for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] == f) ++per_label[m.entries[i].label];
      CHECK(per_label[0] == 1);
      CHECK(per_label[1] == 1);
    }
    CHECK(kfold_split(m, 5, 3) == a);
    const Manifest f = with_folds(m, a);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(f.entries[i].split == "fold" + std::to_string(a[i]));
  }
  SUBCASE("remainder goes to the first folds") {
    const auto a = kfold_split(manifest_with(std::vector<int>(7, 1)), 5, 4);
    std::vector<int> sizes(5, 0);
    for (std::size_t f : a) ++sizes[f];
    CHECK(sizes == std::vector<int>{2, 2, 1, 1, 1});
  }
  SUBCASE("property: sizes differ by at most one per class") {
    Rng rng = make_rng(73);
    for (int t = 0; t < 100; ++t) {
      std::vector<int> labels(5 + t % 40);
      for (int& l : labels) l = static_cast<int>(rng() % 3);
      const Manifest m = manifest_with(labels);
      const auto a = kfold_split(m, 5, t);
      for (int l = 0; l < 3; ++l) {
        std::vector<int> sizes(5, 0);
        for (std::size_t i = 0; i < a.size(); ++i)
          if (labels[i] == l) ++sizes[a[i]];
        CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);
      }
    }
  }
  CHECK_THROWS_AS(kfold_split(manifest_with({0, 1, 0}), 5, 0), ConfigError);
}
