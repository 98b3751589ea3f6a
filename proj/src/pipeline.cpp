#include "metaobj/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include "metaobj/metaclassifier.hpp"
#include "metaobj/ocsvm.hpp"
#include "metaobj/pooling.hpp"
#include "metaobj/rim.hpp"
#include "metaobj/screening.hpp"

namespace metaobj {

namespace fs = std::filesystem;

namespace {

constexpr std::array<const char*, 8> kStageNames = {"ingest", "cascade", "screen", "cluster",
                                                    "train-meta", "pool", "train", "eval"};

struct KeySpec {
  const char* key;
  const char* fallback;
  Stage stage;
};

// synth.* describes the synthetic benchmark used when no dataset path is given.
const KeySpec kKeys[] = {
    {"dataset", "", Stage::ingest},
    {"synth.num_classes", "10", Stage::ingest},
    {"synth.objects_per_class", "3", Stage::ingest},
    {"synth.shared_objects", "2", Stage::ingest},
    {"synth.outlier_fraction", "0.3", Stage::ingest},
    {"synth.patches_per_image", "16", Stage::ingest},
    {"synth.images_per_class", "40", Stage::ingest},
    {"synth.feature_dim", "64", Stage::ingest},
    {"synth.blob_sigma", "0.05", Stage::ingest},
    {"synth.seed", "1", Stage::ingest},
    {"synth.levels", "2", Stage::ingest},
    {"synth.test_fraction", "0.25", Stage::ingest},
    {"synth.holistic_noise", "0.1", Stage::ingest},

    {"levels", "2", Stage::cascade},
    {"cascade.enabled", "true", Stage::cascade},
    {"cascade.stages", "3", Stage::cascade},
    {"cascade.fraction", "0.15", Stage::cascade},
    {"cascade.nu", "0.15", Stage::cascade},
    {"cascade.kernel", "linear", Stage::cascade},
    {"cascade.gamma", "0", Stage::cascade},

    {"screen.enabled", "true", Stage::screen},
    {"screen.k", "100", Stage::screen},
    {"screen.discard_ratio", "0.16", Stage::screen},
    {"screen.per_class", "false", Stage::screen},
    {"screen.hist_bins", "20", Stage::screen},

    {"seed", "0", Stage::cluster},
    {"cluster.enabled", "true", Stage::cluster},
    {"cluster.bottom", "120", Stage::cluster},
    {"cluster.top", "40", Stage::cluster},
    {"cluster.lambda", "0.001", Stage::cluster},
    {"cluster.restarts", "5", Stage::cluster},
    {"cluster.max_iters", "2000", Stage::cluster},
    {"cluster.augment_copies", "0", Stage::cluster},
    {"cluster.augment_sigma", "0.01", Stage::cluster},

    {"meta.mode", "classifier", Stage::train_meta},
    {"meta.background_ratio", "0.25", Stage::train_meta},
    {"meta.hidden", "256", Stage::train_meta},
    {"meta.epochs", "30", Stage::train_meta},
    {"meta.step", "0.05", Stage::train_meta},
    {"meta.batch", "64", Stage::train_meta},
    {"meta.label_smoothing", "0.05", Stage::train_meta},
    {"meta.rim_threshold", "0", Stage::train_meta},

    {"pool.mode", "vlad", Stage::pool},
    {"pool.global_only", "false", Stage::pool},

    {"classifier.hidden", "200", Stage::train},
    {"classifier.epochs", "200", Stage::train},
    {"classifier.step", "0.01", Stage::train},
    {"classifier.batch", "32", Stage::train},
    {"classifier.weight_decay", "0.0001", Stage::train},
    {"classifier.beta_grid", "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", Stage::train},
};

const KeySpec* find_key(const std::string& key) {
  for (const auto& k : kKeys)
    if (key == k.key) return &k;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string level_prefix(std::size_t li) { return "L" + std::to_string(li) + "."; }

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t salt) { return seed * 0x9E3779B97F4A7C15ULL + salt; }

EvalReport report_from_confusion(const std::vector<std::vector<std::size_t>>& confusion) {
  std::vector<int> truth, pred;
  for (std::size_t r = 0; r < confusion.size(); ++r)
    for (std::size_t c = 0; c < confusion[r].size(); ++c)
      for (std::size_t k = 0; k < confusion[r][c]; ++k) {
        truth.push_back(static_cast<int>(r));
        pred.push_back(static_cast<int>(c));
      }
  return make_report(truth, pred, static_cast<int>(confusion.size()));
}

}  // namespace

const char* stage_name(Stage s) { return kStageNames[static_cast<std::size_t>(s)]; }

Stage parse_stage(const std::string& name) {
  for (std::size_t i = 0; i < kStageNames.size(); ++i)
    if (name == kStageNames[i]) return static_cast<Stage>(i);
  throw ConfigError("unknown stage '" + name + "'");
}

// ---------------------------------------------------------------------------
// PipelineConfig

PipelineConfig::PipelineConfig() {
  for (const auto& k : kKeys) values_[k.key] = k.fallback;
}

PipelineConfig PipelineConfig::parse(const std::string& text) {
  PipelineConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse(os.str());
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
  if (!find_key(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

void PipelineConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& PipelineConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double PipelineConfig::real(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  }
}

long long PipelineConfig::integer(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
  }
}

bool PipelineConfig::flag(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<double> PipelineConfig::real_list(const std::string& key) const {
  std::vector<double> out;
  std::istringstream in(get(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': bad list entry '" + item + "'");
    }
  }
  return out;
}

std::string PipelineConfig::canonical() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
  return os.str();
}

std::uint64_t PipelineConfig::hash() const { return hash_bytes(canonical()); }

std::uint64_t PipelineConfig::stage_hash(Stage s) const {
  std::ostringstream os;
  os << "stage " << stage_name(s) << '\n';
  for (const auto& [k, v] : values_)
    if (static_cast<int>(stage_of(k)) <= static_cast<int>(s)) os << k << " = " << v << '\n';
  return hash_bytes(os.str());
}

Stage PipelineConfig::stage_of(const std::string& key) {
  const KeySpec* k = find_key(key);
  if (!k) throw ConfigError("unknown config key '" + key + "'");
  return k->stage;
}

std::vector<std::string> PipelineConfig::keys() {
  std::vector<std::string> out;
  for (const auto& k : kKeys) out.emplace_back(k.key);
  return out;
}

void PipelineConfig::validate() const {
  auto in_unit = [&](const std::string& key, bool allow_zero, bool allow_one) {
    const double v = real(key);
    if (v < 0.0 || v > 1.0 || (!allow_zero && v == 0.0) || (!allow_one && v == 1.0))
      throw ConfigError("config key '" + key + "' out of range: " + get(key));
  };
  if (get("dataset").empty()) synth_spec().validate();
  const auto lv = integer("levels");
  if (lv != 1 && lv != 2) throw ConfigError("levels must be 1 or 2");
  flag("cascade.enabled");
  flag("screen.enabled");
  flag("screen.per_class");
  flag("cluster.enabled");
  flag("pool.global_only");
  if (integer("cascade.stages") < 1) throw ConfigError("cascade.stages must be >= 1");
  in_unit("cascade.fraction", false, false);
  in_unit("cascade.nu", false, true);
  if (get("cascade.kernel") != "linear" && get("cascade.kernel") != "rbf")
    throw ConfigError("cascade.kernel must be linear or rbf");
  if (real("cascade.gamma") < 0.0) throw ConfigError("cascade.gamma must be >= 0 (0 selects the median heuristic)");
  if (integer("screen.k") < 1) throw ConfigError("screen.k must be >= 1");
  in_unit("screen.discard_ratio", true, false);
  if (integer("screen.hist_bins") < 1) throw ConfigError("screen.hist_bins must be >= 1");
  if (integer("cluster.bottom") < 2 || integer("cluster.top") < 2) throw ConfigError("cluster counts must be >= 2");
  if (real("cluster.lambda") < 0.0) throw ConfigError("cluster.lambda must be >= 0");
  if (integer("cluster.restarts") < 1 || integer("cluster.max_iters") < 0) throw ConfigError("bad cluster iteration settings");
  if (integer("cluster.augment_copies") < 0 || real("cluster.augment_sigma") < 0.0)
    throw ConfigError("bad augmentation settings");
  if (get("meta.mode") != "classifier" && get("meta.mode") != "rim-direct")
    throw ConfigError("meta.mode must be classifier or rim-direct");
  if (real("meta.background_ratio") < 0.0) throw ConfigError("meta.background_ratio must be >= 0");
  in_unit("meta.label_smoothing", true, false);
  if (integer("meta.hidden") < 1 || integer("meta.epochs") < 0 || integer("meta.batch") < 1 || real("meta.step") <= 0.0)
    throw ConfigError("bad meta classifier training settings");
  const std::string& mode = get("pool.mode");
  if (mode != "vlad" && mode != "spm" && mode != "both") throw ConfigError("pool.mode must be vlad, spm or both");
  if (integer("classifier.hidden") < 1 || integer("classifier.epochs") < 0 || integer("classifier.batch") < 1 ||
      real("classifier.step") <= 0.0 || real("classifier.weight_decay") < 0.0)
    throw ConfigError("bad classifier training settings");
  const auto grid = real_list("classifier.beta_grid");
  if (grid.empty()) throw ConfigError("classifier.beta_grid must not be empty");
  for (double b : grid)
    if (b < 0.0 || b > 1.0) throw ConfigError("classifier.beta_grid entries must lie in [0,1]");
  if (!flag("cluster.enabled") && get("meta.mode") == "rim-direct")
    throw ConfigError("meta.mode=rim-direct needs clustering enabled");
}

SynthSpec PipelineConfig::synth_spec() const {
  SynthSpec s;
  s.num_classes = static_cast<int>(integer("synth.num_classes"));
  s.discriminative_objects_per_class = static_cast<int>(integer("synth.objects_per_class"));
  s.shared_objects = static_cast<int>(integer("synth.shared_objects"));
  s.outlier_fraction = real("synth.outlier_fraction");
  s.patches_per_image = static_cast<int>(integer("synth.patches_per_image"));
  s.images_per_class = static_cast<int>(integer("synth.images_per_class"));
  s.feature_dim = static_cast<int>(integer("synth.feature_dim"));
  s.blob_sigma = real("synth.blob_sigma");
  s.seed = static_cast<std::uint64_t>(integer("synth.seed"));
  s.levels = static_cast<int>(integer("synth.levels"));
  s.test_fraction = real("synth.test_fraction");
  s.holistic_noise = real("synth.holistic_noise");
  return s;
}

std::vector<Level> PipelineConfig::levels() const {
  if (integer("levels") == 1) return {Level::bottom};
  return {Level::bottom, Level::top};
}

SynthSpec load_synth_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open synth spec " + path.string());
  PipelineConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("synth spec line " + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (key.rfind("synth.", 0) != 0) key = "synth." + key;
    cfg.set(key, trim(line.substr(eq + 1)));
  }
  SynthSpec spec = cfg.synth_spec();
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(PipelineConfig config, fs::path run_dir, fs::path data_root)
    : config_(std::move(config)), run_dir_(std::move(run_dir)), data_root_(std::move(data_root)) {
  config_.validate();
  if (data_root_.empty()) data_root_ = run_dir_ / "data";
  fs::create_directories(cache_dir());
  std::ofstream snapshot(run_dir_ / "config.txt", std::ios::trunc);
  snapshot << config_.canonical();
}

fs::path Pipeline::dataset_manifest() const {
  const std::string& path = config_.get("dataset");
  if (!path.empty()) return path;
  return data_root_ / hex(config_.stage_hash(Stage::ingest)) / "dataset.manifest";
}

const Dataset& Pipeline::dataset() {
  if (!dataset_) dataset_ = load_dataset(dataset_manifest());
  return *dataset_;
}

bool Pipeline::stage_is_cached(Stage s) const {
  if (s == Stage::ingest && !fs::exists(dataset_manifest())) return false;
  return stage_cache_valid(cache_dir(), stage_name(s), config_.stage_hash(s));
}

void Pipeline::adopt_caches_from(const std::vector<fs::path>& dirs) {
  for (Stage s : kAllStages) {
    if (stage_is_cached(s)) continue;
    for (const auto& dir : dirs) {
      const fs::path other = dir / "cache";
      if (other == cache_dir()) continue;
      if (stage_cache_valid(other, stage_name(s), config_.stage_hash(s))) {
        fs::copy_file(stage_cache_path(other, stage_name(s)), stage_cache_path(cache_dir(), stage_name(s)),
                      fs::copy_options::overwrite_existing);
        break;
      }
    }
  }
}

void Pipeline::log(const std::string& line) const {
  std::ofstream out(run_dir_ / "pipeline.log", std::ios::app);
  out << line << '\n';
}

CachePayload Pipeline::read(Stage s) const {
  return read_stage_cache(cache_dir(), stage_name(s), config_.stage_hash(s));
}

StageOutcome Pipeline::run_stage(Stage s) {
  for (Stage up : kAllStages) {
    if (static_cast<int>(up) >= static_cast<int>(s)) break;
    if (!stage_is_cached(up))
      throw ConfigError(std::string("stage '") + stage_name(s) + "' needs stage '" + stage_name(up) +
                        "' to be run first with the current config");
  }
  StageOutcome outcome;
  outcome.stage = s;
  if (stage_is_cached(s)) {
    outcome.cached = true;
    log(std::string("stage ") + stage_name(s) + ": cached");
    return outcome;
  }
  const auto start = std::chrono::steady_clock::now();
  const CachePayload payload = compute(s, outcome.detail);
  write_stage_cache(cache_dir(), stage_name(s), config_.stage_hash(s), payload);
  outcome.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ostringstream line;
  line << "stage " << stage_name(s) << ": computed in " << std::fixed << std::setprecision(2) << outcome.seconds << " s";
  if (!outcome.detail.empty()) line << "; " << outcome.detail;
  log(line.str());
  return outcome;
}

std::vector<StageOutcome> Pipeline::run_through(Stage s) {
  std::vector<StageOutcome> out;
  for (Stage st : kAllStages) {
    out.push_back(run_stage(st));
    if (st == s) break;
  }
  return out;
}

CachePayload Pipeline::compute(Stage s, std::string& detail) {
  switch (s) {
    case Stage::ingest: return do_ingest(detail);
    case Stage::cascade: return do_cascade(detail);
    case Stage::screen: return do_screen(detail);
    case Stage::cluster: return do_cluster(detail);
    case Stage::train_meta: return do_train_meta(detail);
    case Stage::pool: return do_pool(detail);
    case Stage::train: return do_train(detail);
    case Stage::eval: return do_eval(detail);
  }
  throw ConfigError("unknown stage");
}

CachePayload Pipeline::do_ingest(std::string& detail) {
  const fs::path manifest = dataset_manifest();
  if (config_.get("dataset").empty() && !fs::exists(manifest)) {
    const SynthResult synth = generate_synthetic(config_.synth_spec());
    save_dataset(synth.dataset, manifest);
    synth.truth.save(manifest.parent_path() / "ground_truth.txt");
  }
  dataset_.reset();
  const Dataset& ds = dataset();
  if (static_cast<long long>(config_.levels().size()) > 1) {
    bool has_top = std::any_of(ds.patches.begin(), ds.patches.end(), [](const PatchRecord& p) { return p.level == Level::top; });
    if (!has_top) throw ConfigError("levels = 2 but the dataset has no top-level patches");
  }
  CachePayload payload;
  payload.ints["counts"] = {static_cast<std::int64_t>(ds.images.size()), static_cast<std::int64_t>(ds.patches.size()),
                            ds.feature_dim, ds.num_classes};
  detail = std::to_string(ds.images.size()) + " images, " + std::to_string(ds.patches.size()) + " proposals";
  return payload;
}

CachePayload Pipeline::do_cascade(std::string& detail) {
  const Dataset& ds = dataset();
  const auto levels = config_.levels();
  const bool enabled = config_.flag("cascade.enabled");
  CascadeOptions opts;
  opts.stages = static_cast<int>(config_.integer("cascade.stages"));
  opts.per_stage_fraction = config_.real("cascade.fraction");
  opts.nu = config_.real("cascade.nu");
  const bool rbf = config_.get("cascade.kernel") == "rbf";

  CachePayload payload;
  std::ostringstream msg;
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const std::string pre = level_prefix(li);
    const auto ids = ds.patch_ids(Split::train, levels[li]);
    std::vector<Index> kept, removed;
    if (!enabled) {
      kept = ids;
    } else {
      std::map<int, std::vector<Index>> by_class;
      for (Index id : ids) by_class[ds.label_of_patch(id)].push_back(id);
      for (const auto& [label, class_ids] : by_class) {
        const RowMatrix X = ds.features(class_ids);
        CascadeOptions o = opts;
        if (rbf) {
          const double g = config_.real("cascade.gamma");
          o.kernel = KernelSpec::rbf(g > 0.0 ? g : median_heuristic_gamma(X));
        }
        const CascadeResult res = cascade_screen(class_ids, X, o);
        kept.insert(kept.end(), res.kept.begin(), res.kept.end());
        for (std::size_t s = 0; s < res.removed_per_stage.size(); ++s) {
          const auto& r = res.removed_per_stage[s];
          removed.insert(removed.end(), r.begin(), r.end());
          payload.set_indices(pre + "c" + std::to_string(label) + ".s" + std::to_string(s) + ".removed", r);
        }
        for (std::size_t s = 0; s < res.models.size(); ++s)
          res.models[s].to_payload(payload, pre + "c" + std::to_string(label) + ".s" + std::to_string(s) + ".model.");
      }
      std::sort(kept.begin(), kept.end());
      std::sort(removed.begin(), removed.end());
    }
    payload.set_indices(pre + "kept", kept);
    payload.set_indices(pre + "removed", removed);
    msg << to_string(levels[li]) << ": " << ids.size() << " -> " << kept.size() << " kept; ";
  }
  detail = msg.str();
  return payload;
}

CachePayload Pipeline::do_screen(std::string& detail) {
  const Dataset& ds = dataset();
  const CachePayload cascade = read(Stage::cascade);
  const auto levels = config_.levels();
  CachePayload payload;
  std::ostringstream msg;
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const std::string pre = level_prefix(li);
    const auto kept_in = cascade.indices(pre + "kept");
    const auto removed = cascade.indices(pre + "removed");
    std::vector<Index> kept = kept_in, discarded = removed;
    double ratio = 0.0;
    if (config_.flag("screen.enabled")) {
      const ScreeningInput input = ScreeningInput::from_dataset(ds, kept_in);
      const PatchWeights weights = compute_patch_weights(input, static_cast<int>(config_.integer("screen.k")));
      const ScreenedSet screened = soft_screen(weights, config_.real("screen.discard_ratio"),
                                               config_.flag("screen.per_class"), kept_in.size() + removed.size());
      kept = screened.kept;
      discarded.insert(discarded.end(), screened.discarded.begin(), screened.discarded.end());
      std::sort(discarded.begin(), discarded.end());
      ratio = screened.total_screening_ratio;
      payload.set_indices(pre + "weight_ids", weights.patch_ids);
      payload.set_labels(pre + "weight_counts", weights.same_label_counts);
      const auto hist = weight_histogram(weights, static_cast<int>(config_.integer("screen.hist_bins")));
      write_histogram_csv(hist, run_dir_ / (levels[li] == Level::bottom ? "weights_hist.csv" : "weights_hist_top.csv"));
    } else {
      const std::size_t total = kept_in.size() + removed.size();
      ratio = total == 0 ? 0.0 : static_cast<double>(removed.size()) / static_cast<double>(total);
    }
    payload.set_indices(pre + "kept", kept);
    payload.set_indices(pre + "discarded", discarded);
    payload.set_scalar(pre + "total_screening_ratio", ratio);
    msg << to_string(levels[li]) << ": " << kept.size() << " kept, total screening ratio " << std::setprecision(3)
        << ratio << "; ";
  }
  detail = msg.str();
  return payload;
}

CachePayload Pipeline::do_cluster(std::string& detail) {
  const Dataset& ds = dataset();
  const CachePayload screen = read(Stage::screen);
  const auto levels = config_.levels();
  const auto seed = static_cast<std::uint64_t>(config_.integer("seed"));
  CachePayload payload;
  std::ostringstream msg;
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const std::string pre = level_prefix(li);
    const auto kept = screen.indices(pre + "kept");
    const RowMatrix X = ds.features(kept);
    const int N = static_cast<int>(config_.integer(levels[li] == Level::bottom ? "cluster.bottom" : "cluster.top"));
    if (N > X.rows())
      throw ConfigError("cluster: " + std::to_string(N) + " clusters requested but only " + std::to_string(X.rows()) +
                        " patches survived screening at the " + to_string(levels[li]) + " level");
    ClusterAssignment assignment;
    if (config_.flag("cluster.enabled")) {
      RimOptions opts;
      opts.clusters = N;
      opts.lambda = config_.real("cluster.lambda");
      opts.restarts = static_cast<int>(config_.integer("cluster.restarts"));
      opts.max_iterations = static_cast<int>(config_.integer("cluster.max_iters"));
      opts.seed = sub_seed(seed, 1 + li);
      const RowMatrix train_x = augment_features(X, static_cast<int>(config_.integer("cluster.augment_copies")),
                                                 config_.real("cluster.augment_sigma"), sub_seed(seed, 11 + li));
      const RimModel model = train_rim(train_x, opts);
      assignment = assign_clusters(model, X);
      model.to_payload(payload, pre + "rim.");
      payload.set_scalar(pre + "objective", rim_objective(model, X));
    } else {
      // Exemplar codebook: N screened patches drawn uniformly, each patch
      // labeled by its nearest exemplar.
      std::vector<Index> rows(static_cast<std::size_t>(X.rows()));
      std::iota(rows.begin(), rows.end(), Index{0});
      std::mt19937_64 rng(sub_seed(seed, 21 + li));
      for (int k = 0; k < N; ++k) {
        std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), rows.size() - 1);
        std::swap(rows[static_cast<std::size_t>(k)], rows[pick(rng)]);
      }
      VladCodebook book;
      book.centers.resize(N, X.cols());
      for (int k = 0; k < N; ++k) book.centers.row(k) = X.row(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(k)]));
      book.active.assign(static_cast<std::size_t>(N), true);
      const auto labels = nearest_centers(X, book);
      assignment = assignment_from_labels(X, labels, N);
      assignment.centers = book.centers;
    }
    payload.set_labels(pre + "hard_label", assignment.hard_label);
    payload.reals[pre + "centers"] = assignment.centers;
    std::vector<int> empty(assignment.empty.begin(), assignment.empty.end());
    payload.set_labels(pre + "empty", empty);
    const auto n_empty = std::count(empty.begin(), empty.end(), 1);
    msg << to_string(levels[li]) << ": " << N << " meta objects (" << n_empty << " empty); ";
  }
  detail = msg.str();
  return payload;
}

CachePayload Pipeline::do_train_meta(std::string& detail) {
  const Dataset& ds = dataset();
  const CachePayload screen = read(Stage::screen);
  const CachePayload cluster = read(Stage::cluster);
  const auto levels = config_.levels();
  const auto seed = static_cast<std::uint64_t>(config_.integer("seed"));
  CachePayload payload;
  std::ostringstream msg;
  const bool rim_direct = config_.get("meta.mode") == "rim-direct";
  payload.set_scalar("rim_direct", rim_direct ? 1.0 : 0.0);
  for (std::size_t li = 0; li < levels.size(); ++li) {
    if (rim_direct) {
      msg << to_string(levels[li]) << ": rim-direct; ";
      continue;
    }
    const std::string pre = level_prefix(li);
    ClusterAssignment assignment;
    assignment.hard_label = cluster.labels(pre + "hard_label");
    assignment.centers = cluster.real(pre + "centers");
    const MetaTrainingSet ts =
        build_meta_training_set(ds, screen.indices(pre + "kept"), screen.indices(pre + "discarded"), assignment,
                                config_.real("meta.background_ratio"), sub_seed(seed, 31 + li));
    MetaClassifierOptions opts;
    opts.hidden = static_cast<int>(config_.integer("meta.hidden"));
    opts.epochs = static_cast<int>(config_.integer("meta.epochs"));
    opts.step = config_.real("meta.step");
    opts.batch = static_cast<int>(config_.integer("meta.batch"));
    opts.label_smoothing = config_.real("meta.label_smoothing");
    opts.seed = sub_seed(seed, 41 + li);
    const MetaClassifier model = train_meta_classifier(ts, opts);
    model.to_payload(payload, pre + "meta.");
    const auto predicted = classify_regions(model, ts.features);
    std::size_t hit = 0;
    for (std::size_t r = 0; r < predicted.size(); ++r) hit += predicted[r] == ts.labels[r] ? 1 : 0;
    const double acc = static_cast<double>(hit) / static_cast<double>(predicted.size());
    payload.set_scalar(pre + "train_accuracy", acc);
    msg << to_string(levels[li]) << ": " << ts.labels.size() << " rows (" << ts.background_count
        << " background), train acc " << std::setprecision(3) << acc << (ts.background_missing ? ", no background" : "")
        << "; ";
  }
  detail = msg.str();
  return payload;
}

CachePayload Pipeline::do_pool(std::string& detail) {
  const Dataset& ds = dataset();
  const auto levels = config_.levels();
  const std::size_t n_images = ds.images.size();
  CachePayload payload;
  RepresentationLayout layout;
  layout.holistic_dim = ds.feature_dim;
  std::vector<std::vector<Vector>> per_image(n_images);
  std::ostringstream msg;

  if (!config_.flag("pool.global_only")) {
    const CachePayload cluster = read(Stage::cluster);
    const CachePayload meta = read(Stage::train_meta);
    const bool rim_direct = meta.scalar("rim_direct") != 0.0;
    const std::string& mode = config_.get("pool.mode");
    for (std::size_t li = 0; li < levels.size(); ++li) {
      const std::string pre = level_prefix(li);
      VladCodebook book;
      book.centers = cluster.real(pre + "centers");
      for (int e : cluster.labels(pre + "empty")) book.active.push_back(e == 0);
      const int N = book.size();

      std::optional<MetaClassifier> classifier;
      std::optional<RimModel> rim;
      if (rim_direct)
        rim = RimModel::from_payload(cluster, pre + "rim.");
      else
        classifier = MetaClassifier::from_payload(meta, pre + "meta.");

      // Region labels and the surviving (non-background) regions per image.
      std::vector<RowMatrix> regions(n_images);
      std::vector<std::vector<SpmRegion>> spm_regions(n_images);
      std::size_t total = 0, background = 0;
      for (std::size_t i = 0; i < n_images; ++i) {
        std::vector<Index> ids;
        for (Index pid : ds.images[i].patches)
          if (ds.patches[pid].level == levels[li]) ids.push_back(pid);
        const RowMatrix X = ds.features(ids);
        const auto labels = rim_direct ? rim_direct_labels(*rim, X, config_.real("meta.rim_threshold"))
                                       : classify_regions(*classifier, X);
        std::vector<Eigen::Index> keep;
        for (std::size_t r = 0; r < ids.size(); ++r) {
          ++total;
          if (labels[r] == 0) {
            ++background;
            continue;
          }
          keep.push_back(static_cast<Eigen::Index>(r));
          const auto& b = ds.patches[ids[r]].bbox;
          spm_regions[i].push_back({b.cx, b.cy, labels[r]});
        }
        regions[i] = X(keep, Eigen::all);
      }

      int dim = 0;
      if (mode == "spm" || mode == "both") {
        for (std::size_t i = 0; i < n_images; ++i) per_image[i].push_back(spm_encode(spm_regions[i], N));
        dim += kSpmCells * N;
      }
      if (mode == "vlad" || mode == "both") {
        std::vector<RowMatrix> train_regions;
        for (std::size_t i = 0; i < n_images; ++i)
          if (ds.images[i].split == Split::train) train_regions.push_back(regions[i]);
        const PcaModel pca = fit_vlad_pca(train_regions, book);
        pca.to_payload(payload, pre + "pca.");
        for (std::size_t i = 0; i < n_images; ++i) per_image[i].push_back(vlad_encode(regions[i], book, pca));
        dim += pca.output_dim();
      }
      // Both blocks of one level are stored as a single level vector.
      if (mode == "both")
        for (auto& blocks : per_image) {
          Vector joined(blocks[blocks.size() - 2].size() + blocks.back().size());
          joined << blocks[blocks.size() - 2], blocks.back();
          blocks.pop_back();
          blocks.back() = std::move(joined);
        }
      layout.level_dims.push_back(dim);
      msg << to_string(levels[li]) << ": " << background << "/" << total << " regions background; ";
    }
  }

  RowMatrix blocks(static_cast<Eigen::Index>(n_images), layout.total_dim());
  std::vector<int> labels, split;
  for (std::size_t i = 0; i < n_images; ++i) {
    const ImageRepresentation rep = build_image_representation(per_image[i], ds.images[i].holistic, 0.5, layout);
    blocks.row(static_cast<Eigen::Index>(i)) = rep.unweighted().transpose();
    labels.push_back(ds.images[i].scene_label);
    split.push_back(static_cast<int>(ds.images[i].split));
  }
  payload.reals["blocks"] = blocks;
  payload.ints["level_dims"] = std::vector<std::int64_t>(layout.level_dims.begin(), layout.level_dims.end());
  payload.ints["holistic_dim"] = {layout.holistic_dim};
  payload.set_labels("labels", labels);
  payload.set_labels("split", split);
  msg << "representation dim " << layout.total_dim();
  detail = msg.str();
  return payload;
}

namespace {

struct PooledData {
  RowMatrix blocks;
  std::vector<int> labels;
  std::vector<int> split;
  RepresentationLayout layout;

  void select(Split which, RowMatrix& X, std::vector<int>& y) const {
    std::vector<Eigen::Index> rows;
    y.clear();
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (split[i] == static_cast<int>(which)) {
        rows.push_back(static_cast<Eigen::Index>(i));
        y.push_back(labels[i]);
      }
    X = blocks(rows, Eigen::all);
  }
};

PooledData pooled_from(const CachePayload& pool) {
  PooledData d;
  d.blocks = pool.real("blocks");
  d.labels = pool.labels("labels");
  d.split = pool.labels("split");
  const auto& dims = pool.integers("level_dims");
  d.layout.level_dims.assign(dims.begin(), dims.end());
  d.layout.holistic_dim = static_cast<int>(pool.integers("holistic_dim").at(0));
  return d;
}

}  // namespace

CachePayload Pipeline::do_train(std::string& detail) {
  const PooledData pooled = pooled_from(read(Stage::pool));
  const int C = dataset().num_classes;
  RowMatrix X;
  std::vector<int> y;
  pooled.select(Split::train, X, y);
  const auto seed = static_cast<std::uint64_t>(config_.integer("seed"));
  SceneClassifierOptions opts;
  opts.hidden = static_cast<int>(config_.integer("classifier.hidden"));
  opts.epochs = static_cast<int>(config_.integer("classifier.epochs"));
  opts.step = config_.real("classifier.step");
  opts.batch = static_cast<int>(config_.integer("classifier.batch"));
  opts.weight_decay = config_.real("classifier.weight_decay");
  opts.seed = sub_seed(seed, 51);

  std::vector<double> grid = config_.real_list("classifier.beta_grid");
  // Without pooled blocks beta only scales the holistic block.
  if (pooled.layout.pooled_dim() == 0) grid = {0.0};
  const BetaSelection sel = cross_validate_beta(X, y, C, pooled.layout, grid, opts, sub_seed(seed, 61));
  SceneClassifier model = train_scene_classifier(X, y, C, pooled.layout, sel.beta, opts);
  model.config_hash = config_.stage_hash(Stage::train);

  CachePayload payload;
  model.to_payload(payload, "scene.");
  payload.reals["beta_grid"] = Eigen::Map<const Vector>(sel.grid.data(), static_cast<Eigen::Index>(sel.grid.size()));
  if (!sel.heldout_accuracy.empty())
    payload.reals["beta_heldout_accuracy"] =
        Eigen::Map<const Vector>(sel.heldout_accuracy.data(), static_cast<Eigen::Index>(sel.heldout_accuracy.size()));
  std::ostringstream msg;
  msg << "beta " << sel.beta << ", final loss " << std::setprecision(4) << model.final_loss;
  detail = msg.str();
  return payload;
}

CachePayload Pipeline::do_eval(std::string& detail) {
  const PooledData pooled = pooled_from(read(Stage::pool));
  const SceneClassifier model = SceneClassifier::from_payload(read(Stage::train), "scene.");
  RowMatrix X;
  std::vector<int> y;
  pooled.select(Split::test, X, y);
  const EvalReport report = evaluate(model, X, y);
  report.write_csv(run_dir_ / "eval.csv", run_dir_ / "confusion.csv");
  {
    std::ofstream summary(run_dir_ / "eval.txt");
    summary << report.summary();
  }
  CachePayload payload;
  std::vector<std::int64_t> flat;
  for (const auto& row : report.confusion)
    for (auto v : row) flat.push_back(static_cast<std::int64_t>(v));
  payload.ints["confusion"] = flat;
  payload.ints["classes"] = {static_cast<std::int64_t>(report.confusion.size())};
  payload.set_scalar("accuracy", report.overall_accuracy);
  std::ostringstream msg;
  msg << "accuracy " << std::setprecision(4) << report.overall_accuracy << " on " << report.total << " test images";
  detail = msg.str();
  return payload;
}

EvalReport Pipeline::eval_report() const {
  const CachePayload payload = read(Stage::eval);
  const auto C = static_cast<std::size_t>(payload.integers("classes").at(0));
  const auto& flat = payload.integers("confusion");
  std::vector<std::vector<std::size_t>> confusion(C, std::vector<std::size_t>(C));
  for (std::size_t r = 0; r < C; ++r)
    for (std::size_t c = 0; c < C; ++c) confusion[r][c] = static_cast<std::size_t>(flat[r * C + c]);
  return report_from_confusion(confusion);
}

int representation_dim(const fs::path& run_dir, const PipelineConfig& config) {
  const CachePayload pool = read_stage_cache(run_dir / "cache", stage_name(Stage::pool), config.stage_hash(Stage::pool));
  return static_cast<int>(pool.real("blocks").cols());
}

// ---------------------------------------------------------------------------
// Ablations and sweeps

PipelineConfig ablation_config(const PipelineConfig& base, const std::string& name) {
  PipelineConfig cfg = base;
  if (name == "no-screen") {
    cfg.set("cascade.enabled", "false");
    cfg.set("screen.enabled", "false");
  } else if (name == "no-cascade") {
    cfg.set("cascade.enabled", "false");
  } else if (name == "no-knn") {
    cfg.set("screen.enabled", "false");
  } else if (name == "no-cluster") {
    cfg.set("cluster.enabled", "false");
  } else if (name == "rim-direct") {
    cfg.set("meta.mode", "rim-direct");
  } else if (name == "global-only") {
    cfg.set("pool.global_only", "true");
  } else {
    throw ConfigError("unknown ablation '" + name + "'");
  }
  cfg.validate();
  return cfg;
}

AblationResult run_ablation(const std::string& name, const PipelineConfig& base, const fs::path& run_dir) {
  const PipelineConfig ablated_cfg = ablation_config(base, name);
  Pipeline full(base, run_dir);
  full.run_through(Stage::eval);
  const fs::path ablated_dir = run_dir / ("ablate_" + name);
  Pipeline ablated(ablated_cfg, ablated_dir, run_dir / "data");
  ablated.adopt_caches_from({run_dir});
  ablated.run_through(Stage::eval);

  AblationResult result;
  result.full = full.eval_report();
  result.ablated = ablated.eval_report();
  result.full_dim = representation_dim(run_dir, base);
  result.ablated_dim = representation_dim(ablated_dir, ablated_cfg);
  std::ofstream out(run_dir / ("ablation_" + name + ".csv"));
  out << std::setprecision(17);
  out << "config,accuracy,representation_dim\n";
  out << "full," << result.full.overall_accuracy << ',' << result.full_dim << '\n';
  out << name << ',' << result.ablated.overall_accuracy << ',' << result.ablated_dim << '\n';
  return result;
}

PipelineConfig with_total_screening_ratio(const PipelineConfig& base, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("total screening ratio must lie in [0,1)");
  PipelineConfig cfg = base;
  const auto stages = static_cast<double>(base.integer("cascade.stages"));
  const double fraction = base.real("cascade.fraction");
  const double cascade_total = 1.0 - std::pow(1.0 - fraction, stages);
  std::ostringstream v;
  v << std::setprecision(17);
  if (ratio == 0.0) {
    cfg.set("cascade.enabled", "false");
    cfg.set("screen.enabled", "false");
  } else if (ratio <= cascade_total) {
    v << 1.0 - std::pow(1.0 - ratio, 1.0 / stages);
    cfg.set("cascade.enabled", "true");
    cfg.set("cascade.fraction", v.str());
    cfg.set("screen.enabled", "false");
  } else {
    v << 1.0 - (1.0 - ratio) / (1.0 - cascade_total);
    cfg.set("cascade.enabled", "true");
    cfg.set("screen.enabled", "true");
    cfg.set("screen.discard_ratio", v.str());
  }
  cfg.validate();
  return cfg;
}

std::vector<SweepPoint> run_sweep(const std::string& axis, std::vector<double> values, const PipelineConfig& base,
                                  const fs::path& run_dir) {
  if (values.empty()) throw ConfigError("sweep: no values given");
  if (axis != "screening_ratio" && axis != "num_clusters") throw ConfigError("unknown sweep axis '" + axis + "'");
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());

  std::vector<fs::path> dirs = {run_dir};
  std::vector<SweepPoint> points;
  for (std::size_t k = 0; k < values.size(); ++k) {
    PipelineConfig cfg = base;
    if (axis == "screening_ratio") {
      cfg = with_total_screening_ratio(base, values[k]);
    } else {
      const double n = values[k];
      if (n < 2 || n != std::floor(n)) throw ConfigError("num_clusters sweep values must be integers >= 2");
      cfg.set("cluster.bottom", std::to_string(static_cast<long long>(n)));
    }
    const fs::path dir = run_dir / ("sweep_" + axis) / ("v" + std::to_string(k));
    Pipeline p(cfg, dir, run_dir / "data");
    p.adopt_caches_from(dirs);
    p.run_through(Stage::eval);
    points.push_back({values[k], p.eval_report().overall_accuracy});
    dirs.push_back(dir);
  }
  fs::create_directories(run_dir);
  std::ofstream out(run_dir / ("sweep_" + axis + ".csv"));
  out << std::setprecision(17);
  out << axis << ",accuracy\n";
  for (const auto& pt : points) out << pt.value << ',' << pt.accuracy << '\n';
  return points;
}

}  // namespace metaobj
