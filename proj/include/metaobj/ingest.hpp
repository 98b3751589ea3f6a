#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "metaobj/core.hpp"

namespace metaobj {

inline constexpr std::uint32_t kFormatVersion = 1;
// Bytes before the first feature value in the binary companion file:
// magic, version, d, C (4 bytes each), patch count, image count (8 bytes each).
inline constexpr std::size_t kBinaryHeaderBytes = 32;

// Loads a manifest and its companion binary. Features are L2-normalized on load.
Dataset load_dataset(const std::filesystem::path& manifest_path);

// Writes `manifest_path` and `manifest_path` with extension ".bin". Output is
// byte-stable for identical inputs.
void save_dataset(const Dataset& ds, const std::filesystem::path& manifest_path);

std::filesystem::path binary_path_for(const std::filesystem::path& manifest_path);

// ---------------------------------------------------------------------------
// Synthetic datasets with planted meta objects.

struct SynthSpec {
  int num_classes = 5;
  int discriminative_objects_per_class = 2;
  int shared_objects = 1;
  double outlier_fraction = 0.1;
  int patches_per_image = 16;
  int images_per_class = 20;
  int feature_dim = 32;
  double blob_sigma = 0.05;
  std::uint64_t seed = 1;
  // Number of region levels (1: bottom only, 2: bottom and top). Each level
  // gets its own objects and `patches_per_image` patches per image.
  int levels = 2;
  double test_fraction = 0.25;
  // Per-dimension Gaussian noise added to the mean patch feature before the
  // holistic vector is normalized.
  double holistic_noise = 0.1;

  void validate() const;
};

enum class PatchKind : std::uint8_t { discriminative = 0, shared = 1, outlier = 2 };

// Per-patch planted truth. Sidecar only: pipeline stages never read it.
struct GroundTruth {
  std::vector<PatchKind> kind;
  // Globally unique object id, or -1 for outliers.
  std::vector<int> object_id;
  // Owning class of each object id, -1 for shared objects.
  std::vector<int> object_class;
  // Planted unit centers, one row per object id.
  RowMatrix centers;

  void save(const std::filesystem::path& path) const;
  static GroundTruth load(const std::filesystem::path& path);
};

struct SynthResult {
  Dataset dataset;
  GroundTruth truth;
};

SynthResult generate_synthetic(const SynthSpec& spec);

// ---------------------------------------------------------------------------
// Stage cache: named real matrices and integer lists, keyed by config hash.

struct StaleCacheError : Error {
  using Error::Error;
};
struct ChecksumError : Error {
  using Error::Error;
};

struct CachePayload {
  std::map<std::string, Matrix> reals;
  std::map<std::string, std::vector<std::int64_t>> ints;

  const Matrix& real(const std::string& key) const;
  const std::vector<std::int64_t>& integers(const std::string& key) const;
  double scalar(const std::string& key) const { return real(key)(0, 0); }
  void set_scalar(const std::string& key, double v) { reals[key] = Matrix::Constant(1, 1, v); }
  std::vector<Index> indices(const std::string& key) const;
  void set_indices(const std::string& key, const std::vector<Index>& ids);
  void set_labels(const std::string& key, const std::vector<int>& labels);
  std::vector<int> labels(const std::string& key) const;
  bool has(const std::string& key) const { return reals.count(key) != 0 || ints.count(key) != 0; }
};

std::filesystem::path stage_cache_path(const std::filesystem::path& dir, const std::string& stage_name);

void write_stage_cache(const std::filesystem::path& dir, const std::string& stage_name, std::uint64_t config_hash,
                       const CachePayload& payload);

// Throws StaleCacheError on hash mismatch, ChecksumError on corruption,
// IoError when the file does not exist.
CachePayload read_stage_cache(const std::filesystem::path& dir, const std::string& stage_name,
                              std::uint64_t config_hash);

// True when a cache file exists and carries `config_hash`; never throws on a
// corrupt or stale file.
bool stage_cache_valid(const std::filesystem::path& dir, const std::string& stage_name, std::uint64_t config_hash);

std::uint64_t hash_bytes(const std::string& bytes);

}  // namespace metaobj
