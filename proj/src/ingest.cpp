#include "metaobj/ingest.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <locale>
#include <random>
#include <sstream>

#include <zlib.h>

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace metaobj {

namespace fs = std::filesystem;

namespace {

constexpr char kDatasetMagic[4] = {'M', 'O', 'B', 'J'};
constexpr char kCacheMagic[4] = {'M', 'O', 'C', 'A'};

template <typename T>
void put(std::string& buf, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  buf.append(bytes, sizeof(T));
}

template <typename T>
T get(const std::string& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw ParseError("unexpected end of data at byte " + std::to_string(pos));
  T value;
  std::memcpy(&value, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::uint32_t crc_of(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

std::string format_real(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(17) << v;
  return os.str();
}

Level parse_level(const std::string& s, std::size_t line_no) {
  if (s == "top") return Level::top;
  if (s == "bottom") return Level::bottom;
  throw ParseError("manifest line " + std::to_string(line_no) + ": unknown level '" + s + "'");
}

Split parse_split(const std::string& s, std::size_t line_no) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ParseError("manifest line " + std::to_string(line_no) + ": unknown split '" + s + "'");
}

}  // namespace

fs::path binary_path_for(const fs::path& manifest_path) {
  fs::path p = manifest_path;
  p.replace_extension(".bin");
  return p;
}

// ---------------------------------------------------------------------------
// Manifest + binary I/O

void save_dataset(const Dataset& ds, const fs::path& manifest_path) {
  const auto report = validate_dataset(ds);
  if (!report.ok()) throw ValidationError("save_dataset: invalid dataset\n" + report.summary());

  const fs::path bin_path = binary_path_for(manifest_path);
  const auto d = static_cast<std::size_t>(ds.feature_dim);

  std::ostringstream man;
  man.imbue(std::locale::classic());
  man << "# metaobj dataset manifest\n";
  man << "format " << kFormatVersion << '\n';
  man << "dim " << ds.feature_dim << '\n';
  man << "classes " << ds.num_classes << '\n';
  man << "images " << ds.images.size() << '\n';
  man << "patches " << ds.patches.size() << '\n';
  man << "binary " << bin_path.filename().string() << '\n';

  std::string bin;
  bin.reserve(kBinaryHeaderBytes + 4 * d * (ds.images.size() + ds.patches.size()));
  bin.append(kDatasetMagic, 4);
  put<std::uint32_t>(bin, kFormatVersion);
  put<std::uint32_t>(bin, static_cast<std::uint32_t>(ds.feature_dim));
  put<std::uint32_t>(bin, static_cast<std::uint32_t>(ds.num_classes));
  put<std::uint64_t>(bin, ds.patches.size());
  put<std::uint64_t>(bin, ds.images.size());

  std::uint64_t offset = 0;
  auto put_record = [&](const Vector& v) {
    for (Eigen::Index k = 0; k < v.size(); ++k) put<float>(bin, static_cast<float>(v(k)));
    offset += d;
  };
  for (const auto& im : ds.images) {
    man << "image " << im.image_id << ' ' << im.scene_label << ' ' << to_string(im.split) << ' ' << offset << '\n';
    put_record(im.holistic);
  }
  for (const auto& p : ds.patches) {
    man << "patch " << p.patch_id << ' ' << p.image_id << ' ' << format_real(p.bbox.cx) << ' '
        << format_real(p.bbox.cy) << ' ' << format_real(p.bbox.w) << ' ' << format_real(p.bbox.h) << ' '
        << to_string(p.level) << ' ' << offset << '\n';
    put_record(p.feature);
  }

  if (manifest_path.has_parent_path()) fs::create_directories(manifest_path.parent_path());
  write_file(manifest_path, man.str());
  write_file(bin_path, bin);
}

Dataset load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path.string());

  struct PendingRecord {
    std::uint64_t offset;
    std::size_t line;
  };
  Dataset ds;
  long long header_images = -1, header_patches = -1;
  int version = -1;
  std::string binary_name;
  std::vector<PendingRecord> image_offsets, patch_offsets;
  std::uint64_t last_offset = 0;
  bool any_offset = false;

  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError("manifest line " + std::to_string(line_no) + ": " + what);
  };
  auto check_offset = [&](std::uint64_t off) {
    if (any_offset && off < last_offset + static_cast<std::uint64_t>(ds.feature_dim))
      throw fail("offsets must be strictly increasing and records may not overlap");
    last_offset = off;
    any_offset = true;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    ls.imbue(std::locale::classic());
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "format") {
      if (!(ls >> version)) throw fail("malformed header 'format'");
      if (version != static_cast<int>(kFormatVersion)) throw fail("unsupported format version " + std::to_string(version));
    } else if (key == "dim") {
      if (!(ls >> ds.feature_dim) || ds.feature_dim <= 0) throw fail("malformed header 'dim'");
    } else if (key == "classes") {
      if (!(ls >> ds.num_classes) || ds.num_classes <= 0) throw fail("malformed header 'classes'");
    } else if (key == "images") {
      if (!(ls >> header_images) || header_images < 0) throw fail("malformed header 'images'");
    } else if (key == "patches") {
      if (!(ls >> header_patches) || header_patches < 0) throw fail("malformed header 'patches'");
    } else if (key == "binary") {
      if (!(ls >> binary_name)) throw fail("malformed header 'binary'");
    } else if (key == "image") {
      if (version < 0 || ds.feature_dim <= 0 || header_images < 0 || header_patches < 0)
        throw fail("record before complete header");
      ImageRecord im;
      std::string split;
      std::uint64_t off = 0;
      if (!(ls >> im.image_id >> im.scene_label >> split >> off)) throw fail("malformed image record");
      if (im.image_id != ds.images.size()) throw fail("image ids must be dense and ascending");
      im.split = parse_split(split, line_no);
      check_offset(off);
      image_offsets.push_back({off, line_no});
      ds.images.push_back(std::move(im));
    } else if (key == "patch") {
      if (version < 0 || ds.feature_dim <= 0 || header_images < 0 || header_patches < 0)
        throw fail("record before complete header");
      PatchRecord p;
      std::string level;
      std::uint64_t off = 0;
      if (!(ls >> p.patch_id >> p.image_id >> p.bbox.cx >> p.bbox.cy >> p.bbox.w >> p.bbox.h >> level >> off))
        throw fail("malformed patch record");
      if (p.patch_id != ds.patches.size()) throw fail("patch ids must be dense and ascending");
      p.level = parse_level(level, line_no);
      check_offset(off);
      patch_offsets.push_back({off, line_no});
      ds.patches.push_back(std::move(p));
    } else {
      throw fail("unknown key '" + key + "'");
    }
  }

  if (version < 0) throw ParseError("manifest: missing 'format' header");
  if (header_images < 0 || header_patches < 0 || ds.feature_dim <= 0 || ds.num_classes <= 0 || binary_name.empty())
    throw ParseError("manifest: incomplete header");
  if (header_images == 0 || ds.images.empty()) throw ParseError("empty dataset");
  if (static_cast<long long>(ds.images.size()) != header_images)
    throw ParseError("manifest: header declares " + std::to_string(header_images) + " images, found " +
                     std::to_string(ds.images.size()));
  if (static_cast<long long>(ds.patches.size()) != header_patches)
    throw ParseError("manifest: header declares " + std::to_string(header_patches) + " patches, found " +
                     std::to_string(ds.patches.size()));

  for (std::size_t j = 0; j < ds.patches.size(); ++j) {
    auto& p = ds.patches[j];
    if (p.image_id >= ds.images.size())
      throw ParseError("manifest line " + std::to_string(patch_offsets[j].line) + ": patch " +
                       std::to_string(p.patch_id) + " references missing image " + std::to_string(p.image_id));
    ds.images[p.image_id].patches.push_back(p.patch_id);
  }

  const fs::path bin_path = manifest_path.parent_path() / binary_name;
  const std::string bin = read_file(bin_path);
  std::size_t pos = 0;
  if (bin.size() < kBinaryHeaderBytes || std::memcmp(bin.data(), kDatasetMagic, 4) != 0)
    throw ParseError(bin_path.string() + ": bad magic");
  pos = 4;
  const auto bversion = get<std::uint32_t>(bin, pos);
  const auto bd = get<std::uint32_t>(bin, pos);
  const auto bc = get<std::uint32_t>(bin, pos);
  const auto bpatches = get<std::uint64_t>(bin, pos);
  const auto bimages = get<std::uint64_t>(bin, pos);
  if (bversion != kFormatVersion) throw ParseError(bin_path.string() + ": unsupported version");
  if (bd != static_cast<std::uint32_t>(ds.feature_dim) || bc != static_cast<std::uint32_t>(ds.num_classes) ||
      bpatches != ds.patches.size() || bimages != ds.images.size())
    throw ParseError(bin_path.string() + ": header disagrees with manifest");

  const std::size_t d = static_cast<std::size_t>(ds.feature_dim);
  const std::size_t available = (bin.size() - kBinaryHeaderBytes) / sizeof(float);
  auto read_record = [&](std::uint64_t off, const std::string& who) {
    if (off + d > available)
      throw ParseError(bin_path.string() + ": truncated binary: " + who + " at offset " + std::to_string(off) +
                       " needs " + std::to_string(d) + " values, file holds " + std::to_string(available));
    Vector v(static_cast<Eigen::Index>(d));
    const char* base = bin.data() + kBinaryHeaderBytes + off * sizeof(float);
    for (std::size_t k = 0; k < d; ++k) {
      float f;
      std::memcpy(&f, base + k * sizeof(float), sizeof(float));
      v(static_cast<Eigen::Index>(k)) = f;
    }
    if (!v.allFinite()) throw ParseError(bin_path.string() + ": non-finite value in " + who);
    return l2_normalize(v);
  };
  for (std::size_t i = 0; i < ds.images.size(); ++i)
    ds.images[i].holistic = read_record(image_offsets[i].offset, "image " + std::to_string(i));
  for (std::size_t j = 0; j < ds.patches.size(); ++j)
    ds.patches[j].feature = read_record(patch_offsets[j].offset, "patch " + std::to_string(j));

  const auto report = validate_dataset(ds);
  if (!report.ok()) throw ParseError(manifest_path.string() + ": invalid dataset\n" + report.summary());
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SynthSpec::validate() const {
  if (num_classes < 1 || discriminative_objects_per_class < 1 || patches_per_image < 1 || images_per_class < 1 ||
      feature_dim < 1)
    throw ConfigError("synth: counts must be >= 1");
  if (shared_objects < 0) throw ConfigError("synth: shared_objects must be >= 0");
  if (!(outlier_fraction >= 0.0 && outlier_fraction < 1.0)) throw ConfigError("synth: outlier_fraction must be in [0,1)");
  if (!(blob_sigma > 0.0)) throw ConfigError("synth: blob_sigma must be > 0");
  if (levels != 1 && levels != 2) throw ConfigError("synth: levels must be 1 or 2");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("synth: test_fraction must be in [0,1)");
  if (!(holistic_noise >= 0.0)) throw ConfigError("synth: holistic_noise must be >= 0");
}

namespace {

struct ObjectPrior {
  double mx, my;
};

Vector random_unit(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(d);
  for (int k = 0; k < d; ++k) v(k) = normal(rng);
  return l2_normalize(v);
}

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

}  // namespace

SynthResult generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const int C = spec.num_classes;
  const int D = spec.discriminative_objects_per_class;
  const int S = spec.shared_objects;
  const int per_level = C * D + S;
  const int n_objects = per_level * spec.levels;
  const int d = spec.feature_dim;

  // Object layout per level: C*D class objects (class-major), then S shared.
  GroundTruth truth;
  truth.object_class.resize(static_cast<std::size_t>(n_objects));
  for (int lv = 0; lv < spec.levels; ++lv)
    for (int o = 0; o < per_level; ++o)
      truth.object_class[static_cast<std::size_t>(lv * per_level + o)] = o < C * D ? o / D : -1;

  // Regenerate centers until planted blobs are well separated.
  const double min_sep = 6.0 * spec.blob_sigma;
  RowMatrix centers(n_objects, d);
  bool separated = false;
  for (int attempt = 0; attempt < 100 && !separated; ++attempt) {
    for (int o = 0; o < n_objects; ++o) centers.row(o) = random_unit(rng, d).transpose();
    separated = true;
    for (int a = 0; a < n_objects && separated; ++a)
      for (int b = a + 1; b < n_objects; ++b)
        if (std::sqrt(squared_distance(centers.row(a), centers.row(b))) <= min_sep) {
          separated = false;
          break;
        }
  }
  if (!separated) throw ConfigError("synth: cannot place well-separated centers; increase feature_dim or reduce blob_sigma");
  truth.centers = centers;

  std::vector<ObjectPrior> priors(static_cast<std::size_t>(n_objects));
  for (auto& pr : priors) pr = {0.2 + 0.6 * unif(rng), 0.2 + 0.6 * unif(rng)};
  constexpr double kSpatialSpread = 0.08;

  Dataset ds;
  ds.num_classes = C;
  ds.feature_dim = d;
  const int n_test = static_cast<int>(fraction_count(spec.test_fraction, static_cast<std::size_t>(spec.images_per_class)));

  auto sample_size = [&](Level level) {
    return level == Level::bottom ? 0.05 + 0.2 * unif(rng) : 0.25 + 0.35 * unif(rng);
  };

  for (int i = 0; i < spec.images_per_class; ++i) {
    for (int c = 0; c < C; ++c) {
      ImageRecord im;
      im.image_id = ds.images.size();
      im.scene_label = c;
      im.split = i >= spec.images_per_class - n_test ? Split::test : Split::train;
      Vector mean = Vector::Zero(d);
      for (int lv = 0; lv < spec.levels; ++lv) {
        const Level level = lv == 0 ? Level::bottom : Level::top;
        for (int k = 0; k < spec.patches_per_image; ++k) {
          PatchRecord p;
          p.patch_id = ds.patches.size();
          p.image_id = im.image_id;
          p.level = level;
          PatchKind kind;
          int object = -1;
          if (unif(rng) < spec.outlier_fraction) {
            kind = PatchKind::outlier;
            p.feature = random_unit(rng, d);
            p.bbox.cx = unif(rng);
            p.bbox.cy = unif(rng);
          } else {
            const int pick = static_cast<int>(unif(rng) * (D + S)) % (D + S);
            const int local = pick < D ? c * D + pick : C * D + (pick - D);
            kind = pick < D ? PatchKind::discriminative : PatchKind::shared;
            object = lv * per_level + local;
            Vector f = centers.row(object).transpose();
            for (int q = 0; q < d; ++q) f(q) += spec.blob_sigma * normal(rng);
            p.feature = l2_normalize(f);
            const auto& pr = priors[static_cast<std::size_t>(object)];
            p.bbox.cx = clamp01(pr.mx + kSpatialSpread * normal(rng));
            p.bbox.cy = clamp01(pr.my + kSpatialSpread * normal(rng));
          }
          p.bbox.w = sample_size(level);
          p.bbox.h = sample_size(level);
          mean += p.feature;
          im.patches.push_back(p.patch_id);
          truth.kind.push_back(kind);
          truth.object_id.push_back(object);
          ds.patches.push_back(std::move(p));
        }
      }
      mean /= static_cast<double>(im.patches.size());
      for (int q = 0; q < d; ++q) mean(q) += spec.holistic_noise * normal(rng);
      im.holistic = l2_normalize(mean);
      ds.images.push_back(std::move(im));
    }
  }
  return {std::move(ds), std::move(truth)};
}

void GroundTruth::save(const fs::path& path) const {
  std::ostringstream os;
  os << "# metaobj ground truth sidecar\n";
  for (std::size_t o = 0; o < object_class.size(); ++o) os << "object " << o << ' ' << object_class[o] << '\n';
  static constexpr const char* kNames[] = {"discriminative", "shared", "outlier"};
  for (std::size_t j = 0; j < kind.size(); ++j)
    os << "patch " << j << ' ' << kNames[static_cast<int>(kind[j])] << ' ' << object_id[j] << '\n';
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path, os.str());
}

GroundTruth GroundTruth::load(const fs::path& path) {
  std::istringstream in(read_file(path));
  GroundTruth gt;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key, kind;
    std::size_t idx = 0;
    if (!(ls >> key >> idx)) throw ParseError("ground truth: malformed line '" + line + "'");
    if (key == "object") {
      int cls = 0;
      ls >> cls;
      gt.object_class.push_back(cls);
    } else if (key == "patch") {
      int obj = -1;
      ls >> kind >> obj;
      gt.kind.push_back(kind == "discriminative" ? PatchKind::discriminative
                        : kind == "shared"       ? PatchKind::shared
                                                 : PatchKind::outlier);
      gt.object_id.push_back(obj);
    }
  }
  return gt;
}

// ---------------------------------------------------------------------------
// Stage cache

const Matrix& CachePayload::real(const std::string& key) const {
  const auto it = reals.find(key);
  if (it == reals.end()) throw ParseError("cache payload missing real entry '" + key + "'");
  return it->second;
}

const std::vector<std::int64_t>& CachePayload::integers(const std::string& key) const {
  const auto it = ints.find(key);
  if (it == ints.end()) throw ParseError("cache payload missing integer entry '" + key + "'");
  return it->second;
}

std::vector<Index> CachePayload::indices(const std::string& key) const {
  const auto& v = integers(key);
  return {v.begin(), v.end()};
}

void CachePayload::set_indices(const std::string& key, const std::vector<Index>& ids) {
  ints[key] = std::vector<std::int64_t>(ids.begin(), ids.end());
}

void CachePayload::set_labels(const std::string& key, const std::vector<int>& labels) {
  ints[key] = std::vector<std::int64_t>(labels.begin(), labels.end());
}

std::vector<int> CachePayload::labels(const std::string& key) const {
  const auto& v = integers(key);
  std::vector<int> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](std::int64_t x) { return static_cast<int>(x); });
  return out;
}

std::uint64_t hash_bytes(const std::string& bytes) {
  const auto* data = reinterpret_cast<const Bytef*>(bytes.data());
  const auto n = static_cast<uInt>(bytes.size());
  const std::uint64_t hi = crc32(0L, data, n);
  const std::uint64_t lo = adler32(1L, data, n);
  return (hi << 32) | lo;
}

fs::path stage_cache_path(const fs::path& dir, const std::string& stage_name) {
  return dir / (stage_name + ".cache");
}

void write_stage_cache(const fs::path& dir, const std::string& stage_name, std::uint64_t config_hash,
                       const CachePayload& payload) {
  std::string buf;
  buf.append(kCacheMagic, 4);
  put<std::uint32_t>(buf, kFormatVersion);
  put<std::uint64_t>(buf, config_hash);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(payload.reals.size()));
  for (const auto& [key, m] : payload.reals) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(key.size()));
    buf.append(key);
    put<std::uint64_t>(buf, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(buf, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index k = 0; k < m.size(); ++k) put<double>(buf, m.data()[k]);
  }
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(payload.ints.size()));
  for (const auto& [key, v] : payload.ints) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(key.size()));
    buf.append(key);
    put<std::uint64_t>(buf, v.size());
    for (auto x : v) put<std::int64_t>(buf, x);
  }
  put<std::uint32_t>(buf, crc_of(buf.data(), buf.size()));
  fs::create_directories(dir);
  write_file(stage_cache_path(dir, stage_name), buf);
}

namespace {

// Returns the stored config hash after verifying magic and checksum.
std::uint64_t check_cache_header(const std::string& buf, const fs::path& path) {
  if (buf.size() < 4 + 4 + 8 + 4 + 4 || std::memcmp(buf.data(), kCacheMagic, 4) != 0)
    throw ChecksumError("stage cache " + path.string() + ": bad magic or truncated file");
  std::size_t tail = buf.size() - 4;
  const auto stored_crc = get<std::uint32_t>(buf, tail);
  if (stored_crc != crc_of(buf.data(), buf.size() - 4))
    throw ChecksumError("stage cache " + path.string() + ": checksum mismatch");
  std::size_t pos = 4;
  if (get<std::uint32_t>(buf, pos) != kFormatVersion)
    throw ParseError("stage cache " + path.string() + ": unsupported version");
  return get<std::uint64_t>(buf, pos);
}

}  // namespace

CachePayload read_stage_cache(const fs::path& dir, const std::string& stage_name, std::uint64_t config_hash) {
  const fs::path path = stage_cache_path(dir, stage_name);
  if (!fs::exists(path)) throw IoError("stage cache " + path.string() + " does not exist");
  const std::string buf = read_file(path);
  const std::uint64_t stored = check_cache_header(buf, path);
  if (stored != config_hash)
    throw StaleCacheError("stale cache for stage '" + stage_name + "': config hash changed");

  std::size_t pos = 4 + 4 + 8;
  CachePayload payload;
  auto read_key = [&] {
    const auto len = get<std::uint32_t>(buf, pos);
    if (pos + len > buf.size()) throw ParseError("stage cache: key overruns file");
    std::string key = buf.substr(pos, len);
    pos += len;
    return key;
  };
  const auto n_reals = get<std::uint32_t>(buf, pos);
  for (std::uint32_t e = 0; e < n_reals; ++e) {
    std::string key = read_key();
    const auto rows = get<std::uint64_t>(buf, pos);
    const auto cols = get<std::uint64_t>(buf, pos);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = get<double>(buf, pos);
    payload.reals.emplace(std::move(key), std::move(m));
  }
  const auto n_ints = get<std::uint32_t>(buf, pos);
  for (std::uint32_t e = 0; e < n_ints; ++e) {
    std::string key = read_key();
    const auto count = get<std::uint64_t>(buf, pos);
    std::vector<std::int64_t> v(count);
    for (auto& x : v) x = get<std::int64_t>(buf, pos);
    payload.ints.emplace(std::move(key), std::move(v));
  }
  return payload;
}

bool stage_cache_valid(const fs::path& dir, const std::string& stage_name, std::uint64_t config_hash) {
  const fs::path path = stage_cache_path(dir, stage_name);
  if (!fs::exists(path)) return false;
  try {
    return check_cache_header(read_file(path), path) == config_hash;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace metaobj
