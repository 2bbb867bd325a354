#pragma once

// Feature-bag files, manifests, the synthetic hierarchical bag generator
// and stratified k-fold assignment.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "batmil/model.hpp"

namespace batmil::data {

inline constexpr std::uint32_t kFbagVersion = 1;

// "FBAG" | u32 version | u32 N | u32 D | i32 label | f32 N×D | u32 CRC32
std::vector<std::uint8_t> encode_fbag(const Tensor& features, int label);
model::BagFeatures decode_fbag(const std::vector<std::uint8_t>& bytes, const std::string& context = "fbag");
void write_fbag(const std::filesystem::path& path, const Tensor& features, int label);
model::BagFeatures read_fbag(const std::filesystem::path& path);

struct ManifestEntry {
  std::string path;  // as written; relative paths resolve against the manifest directory
  int label = -1;
  std::string split;
};

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestEntry> entries;

  std::filesystem::path resolve(const ManifestEntry& e) const;
  std::vector<std::size_t> indices_with_split(const std::string& split) const;
  std::vector<std::size_t> indices_without_split(const std::string& split) const;
};

bool valid_split(const std::string& split);

/// Parse "path<TAB>label<TAB>split" lines. Blank lines and lines starting
/// with '#' are skipped. Errors carry "file:line:" context.
Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                        const std::string& source = "manifest");
Manifest read_manifest(const std::filesystem::path& path);
std::string format_manifest(const Manifest& m);
void write_manifest(const std::filesystem::path& path, const Manifest& m);

/// Throws ConfigError when a label is outside [0, n_classes).
void require_labels(const Manifest& m, std::size_t n_classes);

std::vector<model::BagFeatures> load_bags(const Manifest& m, const std::vector<std::size_t>& indices);

// --- synthetic task -------------------------------------------------------

struct SynthConfig {
  std::size_t n_bags = 200;
  std::size_t bag_size = 64;
  std::size_t dim = 32;
  double witness_rate = 0.1;
  double separation = 4.0;
  std::size_t depth = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthSet {
  std::vector<model::BagFeatures> bags;
  std::vector<std::vector<std::uint8_t>> witness;  // per bag, 1 = witness instance
  std::vector<double> benign_center;               // level-1 subtree means
  std::vector<double> malignant_center;
  std::vector<std::vector<double>> benign_leaves;
  std::vector<std::vector<double>> malignant_leaves;
};

SynthSet synth_bags(const SynthConfig& config);

/// Number of witness instances in a positive bag: ceil(rate·N).
std::size_t witness_count(double witness_rate, std::size_t bag_size);

/// Writes bag_XXXX.fbag files and manifest.tsv (split "train") into dir.
Manifest write_synth(const SynthSet& set, const std::filesystem::path& dir);

// --- folds ----------------------------------------------------------------

/// Stratified assignment: per label, a seeded shuffle dealt round-robin
/// starting at fold 0. Throws ConfigError when there are fewer entries than
/// folds.
std::vector<std::size_t> kfold_split(const Manifest& m, std::size_t folds, std::uint64_t seed);

/// Copy of m with split = "fold<i>" taken from the assignment.
Manifest with_folds(const Manifest& m, const std::vector<std::size_t>& assignment);

}  // namespace batmil::data
