#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metaobj/classifier.hpp"
#include "metaobj/ingest.hpp"

namespace metaobj {

enum class Stage : int { ingest = 0, cascade, screen, cluster, train_meta, pool, train, eval };
inline constexpr std::array<Stage, 8> kAllStages = {Stage::ingest, Stage::cascade,    Stage::screen, Stage::cluster,
                                                    Stage::train_meta, Stage::pool, Stage::train,  Stage::eval};

const char* stage_name(Stage s);
Stage parse_stage(const std::string& name);

// Flat key/value configuration. Every key belongs to the first stage whose
// output it changes; a stage's hash covers its own keys and all upstream ones.
class PipelineConfig {
 public:
  PipelineConfig();

  static PipelineConfig parse(const std::string& text);
  static PipelineConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  // "key=value" override, as passed on the command line.
  void apply_override(const std::string& assignment);
  const std::string& get(const std::string& key) const;
  double real(const std::string& key) const;
  long long integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> real_list(const std::string& key) const;

  // Sorted "key = value" lines; identical for any field order in the source.
  std::string canonical() const;
  std::uint64_t hash() const;
  std::uint64_t stage_hash(Stage s) const;
  void validate() const;

  static Stage stage_of(const std::string& key);
  static std::vector<std::string> keys();

  SynthSpec synth_spec() const;
  std::vector<Level> levels() const;

 private:
  std::map<std::string, std::string> values_;
};

SynthSpec load_synth_spec(const std::filesystem::path& path);

struct StageOutcome {
  Stage stage = Stage::ingest;
  bool cached = false;
  double seconds = 0.0;
  std::string detail;
};

class Pipeline {
 public:
  // Caches live in run_dir/cache; generated datasets in data_root (defaults
  // to run_dir/data) under a directory named by the ingest hash.
  Pipeline(PipelineConfig config, std::filesystem::path run_dir, std::filesystem::path data_root = {});

  const PipelineConfig& config() const { return config_; }
  const std::filesystem::path& run_dir() const { return run_dir_; }
  std::filesystem::path cache_dir() const { return run_dir_ / "cache"; }
  std::filesystem::path dataset_manifest() const;

  // Runs one stage; every upstream stage must already hold a valid cache.
  StageOutcome run_stage(Stage s);
  // Runs the chain up to and including `s`, reusing valid caches.
  std::vector<StageOutcome> run_through(Stage s);

  bool stage_is_cached(Stage s) const;
  // Copies valid caches (matching this config's stage hashes) from other run directories.
  void adopt_caches_from(const std::vector<std::filesystem::path>& dirs);

  EvalReport eval_report() const;
  const Dataset& dataset();

 private:
  CachePayload compute(Stage s, std::string& detail);
  CachePayload read(Stage s) const;
  CachePayload do_ingest(std::string& detail);
  CachePayload do_cascade(std::string& detail);
  CachePayload do_screen(std::string& detail);
  CachePayload do_cluster(std::string& detail);
  CachePayload do_train_meta(std::string& detail);
  CachePayload do_pool(std::string& detail);
  CachePayload do_train(std::string& detail);
  CachePayload do_eval(std::string& detail);
  void log(const std::string& line) const;

  PipelineConfig config_;
  std::filesystem::path run_dir_;
  std::filesystem::path data_root_;
  std::optional<Dataset> dataset_;
};

inline constexpr std::array<const char*, 6> kAblations = {"no-screen", "no-cascade", "no-knn",
                                                          "no-cluster", "rim-direct", "global-only"};

// Config with the named component bypassed. Throws ConfigError for unknown names.
PipelineConfig ablation_config(const PipelineConfig& base, const std::string& name);

struct AblationResult {
  EvalReport full;
  EvalReport ablated;
  int full_dim = 0;
  int ablated_dim = 0;
};

// Runs the full pipeline in run_dir and the ablation in run_dir/ablate_<name>,
// sharing every cache the two configurations have in common.
AblationResult run_ablation(const std::string& name, const PipelineConfig& base, const std::filesystem::path& run_dir);

// Maps a total screening ratio onto cascade and kNN settings.
PipelineConfig with_total_screening_ratio(const PipelineConfig& base, double ratio);

struct SweepPoint {
  double value = 0.0;
  double accuracy = 0.0;
};

// axis: "screening_ratio" or "num_clusters". Writes run_dir/sweep_<axis>.csv
// sorted by value.
std::vector<SweepPoint> run_sweep(const std::string& axis, std::vector<double> values, const PipelineConfig& base,
                                  const std::filesystem::path& run_dir);

int representation_dim(const std::filesystem::path& run_dir, const PipelineConfig& config);

}  // namespace metaobj
