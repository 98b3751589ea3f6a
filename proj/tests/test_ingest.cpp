#include <doctest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "fixtures.hpp"
#include "metaobj/ingest.hpp"
#include "metaobj/pipeline.hpp"

using namespace metaobj;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

SynthSpec small_spec(std::uint64_t seed = 7) {
  SynthSpec spec;
  spec.seed = seed;
  spec.num_classes = 4;
  spec.images_per_class = 5;
  spec.patches_per_image = 6;
  return spec;
}

std::string replace_line(const std::string& text, const std::string& prefix, const std::string& line) {
  std::istringstream in(text);
  std::ostringstream out;
  std::string l;
  while (std::getline(in, l)) out << (l.rfind(prefix, 0) == 0 ? line : l) << '\n';
  return out.str();
}

}  // namespace

TEST_CASE("save then load round-trips a dataset up to normalization") {
  fixtures::TempDir dir("roundtrip");
  const Dataset ds = generate_synthetic(small_spec()).dataset;
  save_dataset(ds, dir / "ds.manifest");
  const Dataset back = load_dataset(dir / "ds.manifest");
  CHECK(validate_dataset(back).ok());
  REQUIRE(back.images.size() == ds.images.size());
  REQUIRE(back.patches.size() == ds.patches.size());
  CHECK(back.num_classes == ds.num_classes);
  CHECK(back.feature_dim == ds.feature_dim);
  for (std::size_t j = 0; j < ds.patches.size(); ++j) {
    CHECK(back.patches[j].image_id == ds.patches[j].image_id);
    CHECK(back.patches[j].level == ds.patches[j].level);
    CHECK(back.patches[j].bbox.cx == ds.patches[j].bbox.cx);
    CHECK(back.patches[j].bbox.h == ds.patches[j].bbox.h);
    // Stored as 32-bit values, then renormalized.
    CHECK((back.patches[j].feature - ds.patches[j].feature).cwiseAbs().maxCoeff() < 1e-6);
  }
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    CHECK(back.images[i].scene_label == ds.images[i].scene_label);
    CHECK(back.images[i].split == ds.images[i].split);
    CHECK(back.images[i].patches == ds.images[i].patches);
    CHECK((back.images[i].holistic - ds.images[i].holistic).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("loading normalizes raw features") {
  fixtures::TempDir dir("normalize");
  Dataset ds = fixtures::tiny_dataset();
  ds.patches[0].feature *= 5.0;
  save_dataset(ds, dir / "ds.manifest");
  const Dataset back = load_dataset(dir / "ds.manifest");
  CHECK(back.patches[0].feature.norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("saving twice gives identical bytes") {
  fixtures::TempDir dir("stable");
  const Dataset ds = generate_synthetic(small_spec()).dataset;
  save_dataset(ds, dir / "a.manifest");
  save_dataset(ds, dir / "b.manifest");
  CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
  const std::string a = slurp(dir / "a.manifest");
  const std::string b = slurp(dir / "b.manifest");
  CHECK(replace_line(a, "binary ", "") == replace_line(b, "binary ", ""));
}

TEST_CASE("binary size counts one record per patch and image") {
  fixtures::TempDir dir("size");
  SynthSpec spec = small_spec();
  spec.num_classes = 10;
  const Dataset ds = generate_synthetic(spec).dataset;
  save_dataset(ds, dir / "ds.manifest");
  const auto expected = 4u * static_cast<std::uintmax_t>(ds.feature_dim) * (ds.patches.size() + ds.images.size()) +
                        kBinaryHeaderBytes;
  CHECK(fs::file_size(dir / "ds.bin") == expected);
}

TEST_CASE("a manifest with zero images is an empty dataset") {
  fixtures::TempDir dir("empty");
  spit(dir / "e.manifest", "format 1\ndim 4\nclasses 2\nimages 0\npatches 0\nbinary e.bin\n");
  try {
    load_dataset(dir / "e.manifest");
    FAIL("expected an error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("empty dataset") != std::string::npos);
  }
}

TEST_CASE("a binary file one value short names the final patch") {
  fixtures::TempDir dir("truncated");
  const Dataset ds = generate_synthetic(small_spec()).dataset;
  save_dataset(ds, dir / "ds.manifest");
  std::string bin = slurp(dir / "ds.bin");
  bin.resize(bin.size() - 4);
  spit(dir / "ds.bin", bin);
  try {
    load_dataset(dir / "ds.manifest");
    FAIL("expected an error");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("truncated") != std::string::npos);
    CHECK(msg.find("patch " + std::to_string(ds.patches.size() - 1)) != std::string::npos);
  }
}

TEST_CASE("malformed manifests give parse errors with line numbers") {
  fixtures::TempDir dir("malformed");
  const Dataset ds = fixtures::tiny_dataset();
  save_dataset(ds, dir / "ds.manifest");
  const std::string good = slurp(dir / "ds.manifest");

  SUBCASE("bad header value") {
    spit(dir / "ds.manifest", replace_line(good, "dim ", "dim minus-one"));
    CHECK_THROWS_WITH_AS(load_dataset(dir / "ds.manifest"), doctest::Contains("malformed header 'dim'"), ParseError);
  }
  SUBCASE("unknown level") {
    spit(dir / "ds.manifest", replace_line(good, "patch 2 ", "patch 2 1 0.5 0.5 0.2 0.3 middle 16"));
    CHECK_THROWS_WITH_AS(load_dataset(dir / "ds.manifest"), doctest::Contains("line"), ParseError);
  }
  SUBCASE("dangling image reference") {
    spit(dir / "ds.manifest", replace_line(good, "patch 3 ", "patch 3 9 0.75 0.5 0.2 0.3 bottom 20"));
    CHECK_THROWS_AS(load_dataset(dir / "ds.manifest"), ParseError);
  }
  SUBCASE("unsupported version") {
    spit(dir / "ds.manifest", replace_line(good, "format ", "format 9"));
    CHECK_THROWS_WITH_AS(load_dataset(dir / "ds.manifest"), doctest::Contains("version"), ParseError);
  }
  SUBCASE("bad binary magic") {
    std::string bin = slurp(dir / "ds.bin");
    bin[0] = 'X';
    spit(dir / "ds.bin", bin);
    CHECK_THROWS_WITH_AS(load_dataset(dir / "ds.manifest"), doctest::Contains("magic"), ParseError);
  }
  SUBCASE("missing files") {
    CHECK_THROWS_AS(load_dataset(dir / "nope.manifest"), IoError);
  }
}

TEST_CASE("save_dataset refuses an invalid dataset") {
  fixtures::TempDir dir("invalid");
  Dataset ds = fixtures::tiny_dataset();
  ds.patches[0].image_id = 5;
  CHECK_THROWS_AS(save_dataset(ds, dir / "x.manifest"), ValidationError);
}

TEST_CASE("generator is deterministic per seed") {
  fixtures::TempDir dir("determinism");
  save_dataset(generate_synthetic(small_spec(7)).dataset, dir / "a.manifest");
  save_dataset(generate_synthetic(small_spec(7)).dataset, dir / "b.manifest");
  save_dataset(generate_synthetic(small_spec(8)).dataset, dir / "c.manifest");
  CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
  CHECK(slurp(dir / "a.bin") != slurp(dir / "c.bin"));
}

TEST_CASE("without outliers or shared objects every object is class-unique") {
  SynthSpec spec = small_spec();
  spec.outlier_fraction = 0.0;
  spec.shared_objects = 0;
  const SynthResult r = generate_synthetic(spec);
  for (std::size_t j = 0; j < r.dataset.patches.size(); ++j) {
    CHECK(r.truth.kind[j] == PatchKind::discriminative);
    const int obj = r.truth.object_id[j];
    REQUIRE(obj >= 0);
    CHECK(r.truth.object_class[static_cast<std::size_t>(obj)] == r.dataset.label_of_patch(j));
  }
}

TEST_CASE("tight blobs are recovered by nearest planted center") {
  SynthSpec spec;
  spec.num_classes = 5;
  spec.discriminative_objects_per_class = 2;
  spec.blob_sigma = 0.01;
  spec.seed = 3;
  const SynthResult r = generate_synthetic(spec);
  std::size_t agree = 0, total = 0;
  for (std::size_t j = 0; j < r.dataset.patches.size(); ++j) {
    if (r.truth.object_id[j] < 0) continue;
    Eigen::Index best = 0;
    double best_d = 1e300;
    for (Eigen::Index o = 0; o < r.truth.centers.rows(); ++o) {
      const double dist = (r.truth.centers.row(o).transpose() - r.dataset.patches[j].feature).squaredNorm();
      if (dist < best_d) {
        best_d = dist;
        best = o;
      }
    }
    agree += best == r.truth.object_id[j] ? 1 : 0;
    ++total;
  }
  CHECK(static_cast<double>(agree) / static_cast<double>(total) >= 0.99);
}

TEST_CASE("planted centers are separated by more than six sigma") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SynthSpec spec = small_spec(seed);
    spec.feature_dim = 32;
    spec.blob_sigma = 0.05;
    const auto truth = generate_synthetic(spec).truth;
    double min_d = 1e300;
    for (Eigen::Index a = 0; a < truth.centers.rows(); ++a)
      for (Eigen::Index b = a + 1; b < truth.centers.rows(); ++b)
        min_d = std::min(min_d, (truth.centers.row(a) - truth.centers.row(b)).norm());
    CHECK(min_d > 6.0 * spec.blob_sigma);
  }
}

TEST_CASE("generator places patch boxes inside the image") {
  const SynthResult r = generate_synthetic(small_spec());
  for (const auto& p : r.dataset.patches) {
    CHECK(p.bbox.cx >= 0.0);
    CHECK(p.bbox.cx <= 1.0);
    CHECK(p.bbox.w > 0.0);
    CHECK(p.bbox.w <= 1.0);
  }
  const auto test_images = r.dataset.image_ids(Split::test).size();
  CHECK(test_images == static_cast<std::size_t>(r.dataset.num_classes));  // floor(0.25 * 5) = 1 per class
}

TEST_CASE("ground truth sidecar round-trips") {
  fixtures::TempDir dir("truth");
  const SynthResult r = generate_synthetic(small_spec());
  r.truth.save(dir / "gt.txt");
  const GroundTruth back = GroundTruth::load(dir / "gt.txt");
  CHECK(back.kind == r.truth.kind);
  CHECK(back.object_id == r.truth.object_id);
  CHECK(back.object_class == r.truth.object_class);
}

TEST_CASE("invalid synthetic specs are rejected") {
  SynthSpec spec;
  spec.blob_sigma = 0.0;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
  spec = SynthSpec{};
  spec.outlier_fraction = 1.0;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
  spec = SynthSpec{};
  spec.num_classes = 0;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
}

// ---------------------------------------------------------------------------
// Stage cache

TEST_CASE("stage cache round-trips weights and indices") {
  fixtures::TempDir dir("cache");
  CachePayload p;
  p.reals["w"] = Matrix::Random(7, 3);
  p.set_indices("kept", {1, 5, 9});
  p.set_labels("labels", {-1, 0, 4});
  write_stage_cache(dir.path, "screen", 42, p);
  const CachePayload back = read_stage_cache(dir.path, "screen", 42);
  CHECK((back.real("w") - p.real("w")).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(back.indices("kept") == std::vector<Index>{1, 5, 9});
  CHECK(back.labels("labels") == std::vector<int>{-1, 0, 4});
  CHECK(stage_cache_valid(dir.path, "screen", 42));
}

TEST_CASE("stage cache written under a different screening K is stale") {
  fixtures::TempDir dir("stale");
  PipelineConfig cfg;
  write_stage_cache(dir.path, "screen", cfg.stage_hash(Stage::screen), CachePayload{});
  cfg.set("screen.k", "50");
  CHECK_THROWS_AS(read_stage_cache(dir.path, "screen", cfg.stage_hash(Stage::screen)), StaleCacheError);
  CHECK_FALSE(stage_cache_valid(dir.path, "screen", cfg.stage_hash(Stage::screen)));
}

TEST_CASE("a flipped byte in a cache file is a checksum error") {
  fixtures::TempDir dir("corrupt");
  CachePayload p;
  p.reals["w"] = Matrix::Constant(4, 4, 0.25);
  write_stage_cache(dir.path, "cluster", 7, p);
  const fs::path file = stage_cache_path(dir.path, "cluster");
  std::string bytes = slurp(file);
  for (std::size_t pos : {std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    std::string bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x5a);
    spit(file, bad);
    CHECK_THROWS_AS(read_stage_cache(dir.path, "cluster", 7), ChecksumError);
    CHECK_FALSE(stage_cache_valid(dir.path, "cluster", 7));
  }
}

TEST_CASE("a missing cache file is an I/O error") {
  fixtures::TempDir dir("missing");
  CHECK_THROWS_AS(read_stage_cache(dir.path, "pool", 1), IoError);
  CHECK_FALSE(stage_cache_valid(dir.path, "pool", 1));
}

TEST_CASE("payload lookups of absent keys fail loudly") {
  CachePayload p;
  CHECK_THROWS_AS(p.real("nothing"), ParseError);
  CHECK_THROWS_AS(p.integers("nothing"), ParseError);
}
