#include "batmil/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "batmil/binio.hpp"

namespace batmil::data {

std::vector<std::uint8_t> encode_fbag(const Tensor& features, int label) {
  binio::ByteWriter w;
  w.bytes("FBAG", 4);
  w.put<std::uint32_t>(kFbagVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(features.rows));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(features.cols));
  w.put<std::int32_t>(label);
  for (double v : features.data) w.put<float>(static_cast<float>(v));
  w.finish_crc();
  return w.buffer();
}

model::BagFeatures decode_fbag(const std::vector<std::uint8_t>& bytes, const std::string& context) {
  const std::size_t body = binio::check_crc(bytes, context);
  binio::ByteReader r(bytes.data(), body, context);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "FBAG", 4) != 0) throw FormatError(context + ": bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kFbagVersion) throw FormatError(context + ": unsupported version " + std::to_string(version));
  const std::size_t n = r.get<std::uint32_t>();
  const std::size_t d = r.get<std::uint32_t>();
  model::BagFeatures bag;
  bag.label = r.get<std::int32_t>();
  if (r.remaining() != 4 * n * d) throw FormatError(context + ": payload length does not match N x D");
  bag.features = Tensor(n, d);
  for (double& v : bag.features.data) v = static_cast<double>(r.get<float>());
  return bag;
}

void write_fbag(const std::filesystem::path& path, const Tensor& features, int label) {
  binio::write_file_atomic(path, encode_fbag(features, label));
}

model::BagFeatures read_fbag(const std::filesystem::path& path) {
  model::BagFeatures bag = decode_fbag(binio::read_file(path), path.string());
  bag.bag_id = path.stem().string();
  return bag;
}

// --- manifest ---------------------------------------------------------------

bool valid_split(const std::string& split) {
  static const std::set<std::string> ok = {"train", "val", "test", "fold0", "fold1", "fold2", "fold3", "fold4"};
  return ok.count(split) > 0;
}

std::filesystem::path Manifest::resolve(const ManifestEntry& e) const {
  std::filesystem::path p(e.path);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<std::size_t> Manifest::indices_with_split(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == split) out.push_back(i);
  return out;
}

std::vector<std::size_t> Manifest::indices_without_split(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split != split) out.push_back(i);
  return out;
}

Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir, const std::string& source) {
  Manifest m;
  m.base_dir = base_dir;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (;;) {
      const std::size_t tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 3) throw FormatError(where + "expected 3 tab-separated fields, got " + std::to_string(cols.size()));
    ManifestEntry e;
    e.path = cols[0];
    if (e.path.empty()) throw FormatError(where + "empty path");
    try {
      std::size_t used = 0;
      e.label = std::stoi(cols[1], &used);
      if (used != cols[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError(where + "label is not an integer: '" + cols[1] + "'");
    }
    if (e.label < -1) throw FormatError(where + "label must be >= -1");
    e.split = cols[2];
    if (!valid_split(e.split)) throw FormatError(where + "unknown split '" + e.split + "'");
    if (!seen.insert(e.path).second) throw FormatError(where + "duplicate path " + e.path);
    m.entries.push_back(std::move(e));
  }
  return m;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path(), path.string());
}

std::string format_manifest(const Manifest& m) {
  std::string out;
  for (const auto& e : m.entries) out += e.path + "\t" + std::to_string(e.label) + "\t" + e.split + "\n";
  return out;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  binio::write_text_atomic(path, format_manifest(m));
}

void require_labels(const Manifest& m, std::size_t n_classes) {
  for (const auto& e : m.entries) {
    if (e.label < 0 || static_cast<std::size_t>(e.label) >= n_classes) {
      throw ConfigError("manifest entry " + e.path + " has label " + std::to_string(e.label) + " outside [0, " +
                        std::to_string(n_classes) + ")");
    }
  }
}

std::vector<model::BagFeatures> load_bags(const Manifest& m, const std::vector<std::size_t>& indices) {
  std::vector<model::BagFeatures> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const auto& e = m.entries.at(i);
    model::BagFeatures bag = read_fbag(m.resolve(e));
    if (e.label != bag.label) {
      throw FormatError(m.resolve(e).string() + ": label " + std::to_string(bag.label) + " differs from manifest label " +
                        std::to_string(e.label));
    }
    out.push_back(std::move(bag));
  }
  return out;
}

// --- synthetic task -----------------------------------------------------------

void SynthConfig::validate() const {
  if (!(witness_rate > 0.0 && witness_rate <= 1.0)) throw ConfigError("witness_rate must be in (0, 1]");
  if (!(separation > 0.0) || !std::isfinite(separation)) throw ConfigError("separation must be > 0");
  if (depth < 1) throw ConfigError("depth must be >= 1");
  if (depth > 16) throw ConfigError("depth must be <= 16");
  if (n_bags == 0 || bag_size == 0 || dim == 0) throw ConfigError("n_bags, bag_size and dim must be positive");
}

std::size_t witness_count(double witness_rate, std::size_t bag_size) {
  const double raw = witness_rate * static_cast<double>(bag_size);
  // Guard against 0.1*70 = 7.000000000000001 style round-up.
  const double nearest = std::round(raw);
  const double w = std::abs(raw - nearest) < 1e-9 ? nearest : std::ceil(raw);
  return std::min(bag_size, static_cast<std::size_t>(w));
}

namespace {

std::vector<double> random_offset(std::size_t dim, double norm, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(dim);
  double s = 0.0;
  do {
    s = 0.0;
    for (double& x : v) {
      x = nd(rng);
      s += x * x;
    }
  } while (s == 0.0);
  const double k = norm / std::sqrt(s);
  for (double& x : v) x *= k;
  return v;
}

void grow(const std::vector<double>& mean, std::size_t level, std::size_t depth, double s, Rng& rng,
          std::vector<std::vector<double>>& leaves) {
  if (level == depth) {
    leaves.push_back(mean);
    return;
  }
  const double norm = s * std::ldexp(1.0, -static_cast<int>(level));  // child level l = level+1: s*2^-(l-1)
  for (int child = 0; child < 2; ++child) {
    auto off = random_offset(mean.size(), norm, rng);
    std::vector<double> m(mean);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += off[i];
    grow(m, level + 1, depth, s, rng, leaves);
  }
}

}  // namespace

SynthSet synth_bags(const SynthConfig& config) {
  config.validate();
  Rng tree_rng = make_rng(config.seed, 0x7472656555ULL);
  const std::size_t D = config.dim;
  SynthSet set;

  std::vector<double> root(D, 0.0);
  for (int side = 0; side < 2; ++side) {
    auto center = random_offset(D, config.separation, tree_rng);
    auto& leaves = side == 0 ? set.benign_leaves : set.malignant_leaves;
    grow(center, 1, config.depth, config.separation, tree_rng, leaves);
    (side == 0 ? set.benign_center : set.malignant_center) = std::move(center);
  }

  std::vector<int> labels(config.n_bags, 0);
  for (std::size_t i = 0; i < config.n_bags / 2; ++i) labels[i] = 1;
  Rng label_rng = make_rng(config.seed, 0x6c6162656cULL);
  std::shuffle(labels.begin(), labels.end(), label_rng);

  const std::size_t n_wit = witness_count(config.witness_rate, config.bag_size);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t b = 0; b < config.n_bags; ++b) {
    Rng rng = make_rng(config.seed, 0x626167ULL, b);
    model::BagFeatures bag;
    bag.label = labels[b];
    bag.features = Tensor(config.bag_size, D);
    std::vector<std::uint8_t> mask(config.bag_size, 0);
    if (bag.label == 1) {
      std::vector<std::size_t> pos(config.bag_size);
      for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
      std::shuffle(pos.begin(), pos.end(), rng);
      for (std::size_t i = 0; i < n_wit; ++i) mask[pos[i]] = 1;
    }
    std::uniform_int_distribution<std::size_t> pick_benign(0, set.benign_leaves.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_malignant(0, set.malignant_leaves.size() - 1);
    for (std::size_t i = 0; i < config.bag_size; ++i) {
      const auto& leaf = mask[i] ? set.malignant_leaves[pick_malignant(rng)] : set.benign_leaves[pick_benign(rng)];
      auto row = bag.features.row(i);
      for (std::size_t j = 0; j < D; ++j) row[j] = leaf[j] + noise(rng);
    }
    round_to_float(bag.features);
    char id[32];
    std::snprintf(id, sizeof id, "bag_%04zu", b);
    bag.bag_id = id;
    set.bags.push_back(std::move(bag));
    set.witness.push_back(std::move(mask));
  }
  return set;
}

Manifest write_synth(const SynthSet& set, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  Manifest m;
  m.base_dir = dir;
  for (const auto& bag : set.bags) {
    const std::string file = bag.bag_id + ".fbag";
    write_fbag(dir / file, bag.features, bag.label);
    m.entries.push_back({file, bag.label, "train"});
  }
  write_manifest(dir / "manifest.tsv", m);
  return m;
}

// --- folds ------------------------------------------------------------------------

std::vector<std::size_t> kfold_split(const Manifest& m, std::size_t folds, std::uint64_t seed) {
  if (folds == 0) throw ConfigError("kfold_split: folds must be positive");
  if (m.entries.size() < folds) {
    throw ConfigError("kfold_split: " + std::to_string(m.entries.size()) + " bags is fewer than " + std::to_string(folds) +
                      " folds");
  }
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < m.entries.size(); ++i) by_label[m.entries[i].label].push_back(i);
  std::vector<std::size_t> assignment(m.entries.size(), 0);
  for (auto& [label, idx] : by_label) {
    Rng rng = make_rng(seed, 0x666f6c64ULL, static_cast<std::uint64_t>(label + 1));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t j = 0; j < idx.size(); ++j) assignment[idx[j]] = j % folds;
  }
  return assignment;
}

Manifest with_folds(const Manifest& m, const std::vector<std::size_t>& assignment) {
  if (assignment.size() != m.entries.size()) throw ShapeError("with_folds: assignment size mismatch");
  Manifest out = m;
  for (std::size_t i = 0; i < out.entries.size(); ++i) {
    if (assignment[i] > 4) throw ConfigError("with_folds: manifest splits only name fold0..fold4");
    out.entries[i].split = "fold" + std::to_string(assignment[i]);
  }
  return out;
}

}  // namespace batmil::data
