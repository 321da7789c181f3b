#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "salm2/dataset.hpp"
#include "testutil.hpp"

using namespace salm2;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// filename -> bytes for every regular file under root
std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

}  // namespace

TEST_CASE("synthetic generation is byte-identical under a fixed seed") {
  testutil::TempDir a("gen_a"), b("gen_b");
  generate_synthetic(4, 0, a.str());
  generate_synthetic(4, 0, b.str());
  auto ta = tree_bytes(a.path()), tb = tree_bytes(b.path());
  REQUIRE(ta.size() == tb.size());
  CHECK(ta.size() == 3 * 4 + 1);  // images + salmaps + fixmaps + manifest.json
  for (const auto& [name, bytes] : ta) {
    INFO("file ", name);
    CHECK(bytes == tb.at(name));
  }
}

TEST_CASE("synthetic maps satisfy the value contracts") {
  testutil::TempDir tmp("gen_c");
  generate_synthetic(3, 7, tmp.str());
  auto ds = load_dataset(tmp.str(), "train");
  REQUIRE(ds.samples.size() == 3);
  CHECK(ds.has_fixmaps());
  for (const auto& s : ds.samples) {
    float mx = 0;
    for (float v : s.saliency_gt) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
      mx = std::max(mx, v);
    }
    CHECK(mx == 1.0f);  // max-normalized
    REQUIRE(s.has_fixation());
    int64_t fix_count = 0;
    for (size_t i = 0; i < s.fixation.size(); ++i)
      if (s.fixation[i]) {
        ++fix_count;
        // fixations sit on blob centers, i.e. at the saliency peaks
        CHECK(s.saliency_gt[i] >= 0.99f);
      }
    CHECK(fix_count >= 1);
    CHECK(fix_count <= 3);
  }
}

TEST_CASE("load_dataset is id-sorted and flags fixation absence") {
  testutil::TempDir tmp("load");
  generate_synthetic(3, 1, tmp.str());
  auto ds = load_dataset(tmp.str(), "train");
  CHECK(ds.manifest.ids == std::vector<std::string>{"000000", "000001", "000002"});
  for (size_t i = 0; i < ds.samples.size(); ++i) CHECK(ds.samples[i].id == ds.manifest.ids[i]);

  fs::remove_all(fs::path(tmp.str()) / "train" / "fixmaps");
  auto no_fix = load_dataset(tmp.str(), "train");
  CHECK_FALSE(no_fix.has_fixmaps());
  for (const auto& s : no_fix.samples) CHECK_FALSE(s.has_fixation());
}

TEST_CASE("load_dataset fails fast on broken layouts") {
  testutil::TempDir tmp("broken");
  generate_synthetic(2, 2, tmp.str());
  const fs::path base = fs::path(tmp.str()) / "train";

  SUBCASE("missing salmap lists the id") {
    fs::remove(base / "salmaps" / "000001.png");
    try {
      load_dataset(tmp.str(), "train");
      FAIL("expected a dataset error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("000001") != std::string::npos);
    }
  }
  SUBCASE("corrupt image names the file") {
    std::ofstream((base / "images" / "000000.png").string(), std::ios::binary) << "not a png";
    try {
      load_dataset(tmp.str(), "train");
      FAIL("expected a dataset error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("000000") != std::string::npos);
    }
  }
  SUBCASE("missing split directory") {
    CHECK_THROWS_AS(load_dataset(tmp.str(), "nope"), DataError);
  }
}

TEST_CASE("preprocess: resize, scale, standardize") {
  RawImage img;
  img.height = 512;
  img.width = 512;
  img.rgb.assign(3 * 512 * 512, 0.5f);  // uniform mid-gray
  auto out = preprocess(img, 256);
  CHECK(out.size() == 3u * 256 * 256);
  for (float v : out) CHECK(v == doctest::Approx(0.0f).epsilon(1e-6));

  // 2x2 checkerboard -> 1x1 mid-gray under half-pixel bilinear
  auto one = resize_map({0.f, 1.f, 1.f, 0.f}, 2, 2, 1, 1);
  CHECK(one.size() == 1);
  CHECK(one[0] == doctest::Approx(0.5f).epsilon(1e-6));
}

TEST_CASE("blur_fixations: normalization, superposition, narrow-kernel limit") {
  const int64_t n = 64;
  std::vector<uint8_t> mask(n * n, 0);
  mask[32 * n + 32] = 1;
  auto map = blur_fixations(mask, n, n, 10.0);
  CHECK(map[32 * n + 32] == doctest::Approx(1.0f).epsilon(1e-6));
  float mx = 0;
  for (float v : map) mx = std::max(mx, v);
  CHECK(mx == doctest::Approx(1.0f).epsilon(1e-6));

  mask[8 * n + 8] = 1;  // two distant fixations
  auto two = blur_fixations(mask, n, n, 3.0);
  CHECK(two[32 * n + 32] == doctest::Approx(1.0f).epsilon(1e-4));
  CHECK(two[8 * n + 8] == doctest::Approx(1.0f).epsilon(1e-4));
  for (float v : two) CHECK(v <= 1.0f + 1e-6f);

  // sigma -> 0: the map collapses onto the mask
  std::vector<uint8_t> point(n * n, 0);
  point[5 * n + 9] = 1;
  auto narrow = blur_fixations(point, n, n, 0.1);
  double off_mass = 0;
  for (int64_t i = 0; i < n * n; ++i)
    if (!point[i]) off_mass += narrow[i];
  CHECK(off_mass < 1e-6);
  CHECK(narrow[5 * n + 9] == doctest::Approx(1.0f).epsilon(1e-9));

  std::vector<uint8_t> empty(n * n, 0);
  CHECK_THROWS_AS(blur_fixations(empty, n, n, 10.0), DataError);
}

TEST_CASE("heat lut matches its defining formula") {
  const auto& lut = heat_lut();
  REQUIRE(lut.size() == 256);
  // v = 1: r = clamp(1.5 - 1) = 0.5, g = b = 0
  CHECK(lut[255] == std::array<uint8_t, 3>{128, 0, 0});
  // v = 0: r = g = 0, b = 0.5
  CHECK(lut[0] == std::array<uint8_t, 3>{0, 0, 128});
  // v = 0.75 is the red peak
  CHECK(lut[191][0] > 250);
}
