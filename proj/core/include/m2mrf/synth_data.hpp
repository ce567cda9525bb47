#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "m2mrf/tensor.hpp"

namespace m2mrf {

inline constexpr int64_t kNumLesionClasses = 4;

// Class order everywhere: EX, HE, SE, MA (mask channel = index here).
const std::vector<std::string>& lesion_class_names();

// Recipe for one lesion class: disc-like soft blobs with a color tint.
struct LesionSpec {
  std::string class_name;
  double radius_min = 1.0;
  double radius_max = 2.0;
  int64_t count_min = 0;
  int64_t count_max = 1;
  double cluster_probability = 0.0;  // chance a blob is planted next to an existing one
  double softness = 1.0;             // edge falloff width relative to radius
  std::array<double, 3> tint{0.5, 0.5, 0.5};
};

// The profile the tests freeze: microaneurysms are numerous tiny dots
// (radius <= 2.2 px, under 16 px area), the other classes overlap in size,
// reds are confusable, and most classes cluster.
std::vector<LesionSpec> default_lesion_specs();

struct Sample {
  Tensor image;   // (H, W, 3) in [0, 1]
  Tensor masks;   // (H, W, 4) binary, channel per class
  uint64_t seed = 0;
};

// Deterministic given (specs, seed); sample i draws from an RNG stream
// forked at index i, so order of generation is immaterial. H and W must be
// multiples of 4 and at least 16. Blobs never overlap (separation is kept
// above the 4-connectivity merge distance), so per-class component counts
// equal the draw counts whenever the geometry fits — always the case at
// 64x64 and up with the default profile; tiny images shrink radii to cope.
std::vector<Sample> generate_dataset(int64_t n, int64_t H, int64_t W,
                                     const std::vector<LesionSpec>& specs, uint64_t seed);

enum class AugmentOp { HFlip, VFlip, Rot90, Rot180, Rot270 };

std::string augment_str(AugmentOp op);
AugmentOp augment_from_str(const std::string& s);

// Applies the same isometry to image and masks. Rotations are clockwise;
// non-square samples swap H and W under rot90/rot270.
Sample augment(const Sample& s, AugmentOp op);

// Per-sample directory: image and masks as tensor containers (bit-exact
// round trip), plus a PPM of the image and one PGM per class mask for
// eyeballing, plus the sample's seed.
void save_sample(const Sample& s, const std::string& dir);
Sample load_sample(const std::string& dir);

struct Dataset {
  int64_t H = 0;
  int64_t W = 0;
  uint64_t seed = 0;
  std::vector<LesionSpec> specs;
  std::vector<Sample> samples;
};

Dataset make_dataset(int64_t n, int64_t H, int64_t W, const std::vector<LesionSpec>& specs,
                     uint64_t seed);

// Directory layout: manifest.json {n, H, W, seed, specs[], files[]} plus
// one subdirectory per sample.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace m2mrf
