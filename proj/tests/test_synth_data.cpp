#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "m2mrf/errors.hpp"
#include "m2mrf/synth_data.hpp"
#include "test_util.hpp"

using namespace m2mrf;
using test_util::components;
using test_util::plane;

namespace {

bool samples_equal(const Sample& a, const Sample& b) {
  return test_util::bits_equal(a.image, b.image) && test_util::bits_equal(a.masks, b.masks) &&
         a.seed == b.seed;
}

std::filesystem::path fresh_dir(const char* leaf) {
  auto dir = std::filesystem::temp_directory_path() / "m2mrf-data-tests" / leaf;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir.parent_path());
  return dir;
}

double median(std::vector<double> v) {
  REQUIRE(!v.empty());
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// Nearest-neighbor distance between component centroids, pooled over every
// class plane of every sample.
std::vector<double> nn_distances(const std::vector<Sample>& samples) {
  std::vector<double> out;
  for (const Sample& s : samples) {
    std::vector<test_util::Component> all;
    for (int64_t c = 0; c < kNumLesionClasses; ++c) {
      auto comps = components(plane(s.masks, c));
      all.insert(all.end(), comps.begin(), comps.end());
    }
    for (size_t i = 0; i < all.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (size_t j = 0; j < all.size(); ++j) {
        if (i == j) continue;
        const double dy = all[i].cy - all[j].cy;
        const double dx = all[i].cx - all[j].cx;
        best = std::min(best, std::sqrt(dy * dy + dx * dx));
      }
      if (std::isfinite(best)) out.push_back(best);
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("synth-data") {
  TEST_CASE("generation is deterministic and seed-sensitive") {
    auto a = generate_dataset(3, 32, 32, default_lesion_specs(), 7);
    auto b = generate_dataset(3, 32, 32, default_lesion_specs(), 7);
    auto c = generate_dataset(3, 32, 32, default_lesion_specs(), 8);
    REQUIRE(a.size() == 3);
    for (size_t i = 0; i < 3; ++i) CHECK(samples_equal(a[i], b[i]));
    CHECK(!test_util::bits_equal(a[0].image, c[0].image));
  }

  TEST_CASE("per-sample streams make generation order-independent") {
    auto big = generate_dataset(8, 32, 32, default_lesion_specs(), 5);
    auto small = generate_dataset(4, 32, 32, default_lesion_specs(), 5);
    for (size_t i = 0; i < 4; ++i) CHECK(samples_equal(big[i], small[i]));
  }

  TEST_CASE("samples have the advertised shapes and value ranges") {
    auto ds = generate_dataset(2, 32, 48, default_lesion_specs(), 1);
    for (const Sample& s : ds) {
      CHECK(s.image.shape() == Shape{32, 48, 3});
      CHECK(s.masks.shape() == Shape{32, 48, 4});
      for (int64_t i = 0; i < s.image.numel(); ++i) {
        CHECK(s.image[i] >= 0.0);
        CHECK(s.image[i] <= 1.0);
      }
      for (int64_t i = 0; i < s.masks.numel(); ++i)
        CHECK((s.masks[i] == 0.0 || s.masks[i] == 1.0));
    }
  }

  TEST_CASE("generation rejects invalid geometry and specs") {
    CHECK_THROWS_AS(generate_dataset(1, 30, 32, default_lesion_specs(), 0), ContractError);
    CHECK_THROWS_AS(generate_dataset(1, 12, 12, default_lesion_specs(), 0), ContractError);
    CHECK_THROWS_AS(generate_dataset(1, 32, 32, {}, 0), ContractError);
    auto bad = default_lesion_specs();
    bad[0].radius_min = 5.0;
    bad[0].radius_max = 2.0;
    CHECK_THROWS_AS(generate_dataset(1, 32, 32, bad, 0), ConfigError);
  }

  TEST_CASE("component counts per class stay inside the configured ranges") {
    const auto specs = default_lesion_specs();
    auto ds = generate_dataset(8, 64, 64, specs, 3);
    for (const Sample& s : ds) {
      for (size_t c = 0; c < specs.size(); ++c) {
        const auto comps = components(plane(s.masks, static_cast<int64_t>(c)));
        const int64_t n = static_cast<int64_t>(comps.size());
        CHECK(n >= specs[c].count_min);
        CHECK(n <= specs[c].count_max);
      }
    }
  }

  TEST_CASE("classes never overlap: each pixel belongs to at most one mask") {
    auto ds = generate_dataset(4, 64, 64, default_lesion_specs(), 11);
    for (const Sample& s : ds) {
      const int64_t px = s.masks.dim(0) * s.masks.dim(1);
      for (int64_t i = 0; i < px; ++i) {
        double sum = 0.0;
        for (int64_t c = 0; c < 4; ++c) sum += s.masks[i * 4 + c];
        CHECK(sum <= 1.0);
      }
    }
  }

  TEST_CASE("at least 40% of components are tiny (area < 16 px)") {
    auto ds = generate_dataset(16, 64, 64, default_lesion_specs(), 0);
    int64_t tiny = 0, total = 0;
    for (const Sample& s : ds)
      for (int64_t c = 0; c < 4; ++c)
        for (const auto& comp : components(plane(s.masks, c))) {
          ++total;
          tiny += comp.area < 16;
        }
    REQUIRE(total > 0);
    CHECK(static_cast<double>(tiny) >= 0.4 * static_cast<double>(total));
  }

  TEST_CASE("microaneurysm spec stays in the tiny-dot regime") {
    const auto specs = default_lesion_specs();
    const auto& ma = specs.back();
    CHECK(ma.class_name == "MA");
    CHECK(ma.radius_min >= 1.0);
    CHECK(ma.radius_max <= 3.0);
    // EX/HE/SE radius ranges overlap pairwise (scale-variance challenge).
    for (size_t i = 0; i + 1 < 3; ++i)
      for (size_t j = i + 1; j < 3; ++j) {
        CHECK(specs[i].radius_min <= specs[j].radius_max);
        CHECK(specs[j].radius_min <= specs[i].radius_max);
      }
  }

  TEST_CASE("clustering pulls components closer than independent placement") {
    auto unclustered_specs = default_lesion_specs();
    for (auto& s : unclustered_specs) s.cluster_probability = 0.0;
    std::vector<double> clustered, spread;
    for (uint64_t seed = 0; seed < 10; ++seed) {
      auto c = nn_distances(generate_dataset(1, 64, 64, default_lesion_specs(), seed));
      auto u = nn_distances(generate_dataset(1, 64, 64, unclustered_specs, seed));
      clustered.insert(clustered.end(), c.begin(), c.end());
      spread.insert(spread.end(), u.begin(), u.end());
    }
    CHECK(median(spread) > median(clustered));
  }

  TEST_CASE("augmentations are the advertised isometries") {
    auto ds = generate_dataset(1, 32, 48, default_lesion_specs(), 9);
    const Sample& s = ds[0];

    Sample hh = augment(augment(s, AugmentOp::HFlip), AugmentOp::HFlip);
    CHECK(samples_equal(hh, s));
    Sample vv = augment(augment(s, AugmentOp::VFlip), AugmentOp::VFlip);
    CHECK(samples_equal(vv, s));

    Sample r = s;
    for (int k = 0; k < 4; ++k) r = augment(r, AugmentOp::Rot90);
    CHECK(samples_equal(r, s));

    Sample r90 = augment(s, AugmentOp::Rot90);
    CHECK(r90.image.shape() == Shape{48, 32, 3});  // non-square sizes swap
    Sample r180a = augment(r90, AugmentOp::Rot90);
    Sample r180b = augment(s, AugmentOp::Rot180);
    CHECK(samples_equal(r180a, r180b));
    Sample r270a = augment(r180b, AugmentOp::Rot90);
    Sample r270b = augment(s, AugmentOp::Rot270);
    CHECK(samples_equal(r270a, r270b));
  }

  TEST_CASE("augmentation preserves mask area and component count") {
    auto ds = generate_dataset(2, 64, 64, default_lesion_specs(), 13);
    for (const Sample& s : ds) {
      for (AugmentOp op : {AugmentOp::HFlip, AugmentOp::VFlip, AugmentOp::Rot90, AugmentOp::Rot180,
                           AugmentOp::Rot270}) {
        Sample t = augment(s, op);
        for (int64_t c = 0; c < 4; ++c) {
          const auto before = components(plane(s.masks, c));
          const auto after = components(plane(t.masks, c));
          CHECK(before.size() == after.size());
          int64_t area_before = 0, area_after = 0;
          for (const auto& comp : before) area_before += comp.area;
          for (const auto& comp : after) area_after += comp.area;
          CHECK(area_before == area_after);
        }
      }
    }
  }

  TEST_CASE("augmentation names round-trip") {
    for (AugmentOp op : {AugmentOp::HFlip, AugmentOp::VFlip, AugmentOp::Rot90, AugmentOp::Rot180,
                         AugmentOp::Rot270})
      CHECK(augment_from_str(augment_str(op)) == op);
    CHECK_THROWS_AS(augment_from_str("transpose"), ConfigError);
  }

  TEST_CASE("sample save/load round-trips bit-exactly") {
    auto ds = generate_dataset(1, 32, 32, default_lesion_specs(), 15);
    auto dir = fresh_dir("sample");
    save_sample(ds[0], dir.string());
    Sample back = load_sample(dir.string());
    CHECK(samples_equal(back, ds[0]));
    // Eyeball artifacts exist alongside the tensors.
    CHECK(std::filesystem::exists(dir / "image.ppm"));
    CHECK(std::filesystem::exists(dir / "mask_EX.pgm"));
  }

  TEST_CASE("pgm of an empty mask is all zero bytes after the header") {
    Sample s;
    s.image = Tensor::zeros({16, 16, 3});
    s.masks = Tensor::zeros({16, 16, 4});
    auto dir = fresh_dir("empty");
    save_sample(s, dir.string());
    std::ifstream f(dir / "mask_MA.pgm", std::ios::binary);
    REQUIRE(f.good());
    std::string header;
    std::getline(f, header);
    CHECK(header == "P5");
    std::string dims, maxval;
    std::getline(f, dims);
    std::getline(f, maxval);
    CHECK(dims == "16 16");
    CHECK(maxval == "255");
    std::vector<char> payload(16 * 16 + 1);
    f.read(payload.data(), static_cast<std::streamsize>(payload.size()));
    CHECK(f.gcount() == 256);  // exactly H*W bytes, then EOF
    for (int i = 0; i < 256; ++i) CHECK(payload[static_cast<size_t>(i)] == 0);
  }

  TEST_CASE("truncated tensors fail loudly instead of loading partially") {
    auto ds = generate_dataset(1, 32, 32, default_lesion_specs(), 17);
    auto dir = fresh_dir("truncated");
    save_sample(ds[0], dir.string());
    const auto path = dir / "image.m2mt";
    const auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full / 2);
    CHECK_THROWS_AS(load_sample(dir.string()), FormatError);
  }

  TEST_CASE("dataset save/load round-trips manifest and samples") {
    Dataset ds = make_dataset(3, 32, 32, default_lesion_specs(), 19);
    CHECK(ds.H == 32);
    CHECK(ds.seed == 19);
    REQUIRE(ds.samples.size() == 3);
    auto dir = fresh_dir("dataset");
    save_dataset(ds, dir.string());
    Dataset back = load_dataset(dir.string());
    CHECK(back.H == ds.H);
    CHECK(back.W == ds.W);
    CHECK(back.seed == ds.seed);
    REQUIRE(back.samples.size() == ds.samples.size());
    for (size_t i = 0; i < ds.samples.size(); ++i)
      CHECK(samples_equal(back.samples[i], ds.samples[i]));
    REQUIRE(back.specs.size() == ds.specs.size());
    for (size_t i = 0; i < ds.specs.size(); ++i) {
      CHECK(back.specs[i].class_name == ds.specs[i].class_name);
      CHECK(back.specs[i].radius_max == ds.specs[i].radius_max);
      CHECK(back.specs[i].cluster_probability == ds.specs[i].cluster_probability);
    }
  }

  TEST_CASE("corrupted dataset manifests are rejected") {
    Dataset ds = make_dataset(1, 32, 32, default_lesion_specs(), 23);
    auto dir = fresh_dir("badmanifest");
    save_dataset(ds, dir.string());
    std::ofstream f(dir / "manifest.json", std::ios::trunc);
    f << "{ \"n\": ";
    f.close();
    CHECK_THROWS_AS(load_dataset(dir.string()), FormatError);
    CHECK_THROWS_AS(load_dataset((dir / "nowhere").string()), IoError);
  }
}
