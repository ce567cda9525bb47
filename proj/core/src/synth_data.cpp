#include "m2mrf/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "m2mrf/errors.hpp"
#include "m2mrf/ops.hpp"
#include "m2mrf/rng.hpp"
#include "m2mrf/tensor_io.hpp"

namespace m2mrf {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kTwoPi = 6.283185307179586476925286766559;
// sigma = softness * radius / sqrt(2 ln 2), so a softness-1 blob's alpha
// crosses 0.5 exactly at the mask boundary.
const double kSigmaPerRadius = 1.0 / std::sqrt(2.0 * std::log(2.0));

struct Blob {
  double cy, cx, r, sigma;
  int64_t cls;
  std::array<double, 3> tint;
};

int64_t class_index(const std::string& name) {
  const auto& names = lesion_class_names();
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int64_t>(i);
  throw ConfigError("unknown lesion class \"" + name + "\"");
}

Sample generate_sample(int64_t H, int64_t W, const std::vector<LesionSpec>& specs, Rng rng,
                       uint64_t sample_seed) {
  // Background: fundus-orange base plus smooth low-frequency noise.
  const std::array<double, 3> base{0.80, 0.45, 0.22};
  const double amp = 0.06;
  Tensor grid = Tensor::zeros({8, 8, 3});
  for (int64_t i = 0; i < grid.numel(); ++i) grid[i] = rng.uniform(-amp, amp);
  Tensor noise = ops::bilinear_resize(grid, H, W);

  Tensor image = Tensor::zeros({H, W, 3});
  for (int64_t px = 0; px < H * W; ++px)
    for (int64_t c = 0; c < 3; ++c)
      image[px * 3 + c] = std::clamp(base[static_cast<size_t>(c)] + noise[px * 3 + c], 0.0, 1.0);
  Tensor masks = Tensor::zeros({H, W, kNumLesionClasses});

  // Place blobs by rejection. Separation keeps masks disjoint and, at
  // 4-connectivity, unmergeable, so component counts stay exact.
  //
  // Radii are capped by image size so the full draw always fits at the
  // default 64x64 and above (the cap is 7 there, at or above every default
  // radius_max, so large images are unaffected).
  const double side = static_cast<double>(std::min(H, W));
  const double max_r = std::max(0.8, std::min((side - 4.0) / 2.0, side / 8.0 - 1.0));
  std::vector<Blob> blobs;

  // Deterministic last resort when rejection sampling cannot find a spot:
  // scan integer centers row-major, shrinking the radius if needed, and
  // take the first clear position. Consumes no randomness.
  const auto scan_place = [&](double r, const LesionSpec& spec, int64_t cls) {
    for (const double shrink : {1.0, 0.75, 0.5}) {
      const double rr = std::max(0.5, r * shrink);
      for (int64_t cy = 0; cy < H; ++cy) {
        if (cy < rr + 1.0 || cy > static_cast<double>(H) - 2.0 - rr) continue;
        for (int64_t cx = 0; cx < W; ++cx) {
          if (cx < rr + 1.0 || cx > static_cast<double>(W) - 2.0 - rr) continue;
          bool clear = true;
          for (const Blob& b : blobs) {
            const double dy = static_cast<double>(cy) - b.cy;
            const double dx = static_cast<double>(cx) - b.cx;
            const double sep = rr + b.r + 1.5;
            if (dy * dy + dx * dx <= sep * sep) {
              clear = false;
              break;
            }
          }
          if (clear) {
            blobs.push_back({static_cast<double>(cy), static_cast<double>(cx), rr,
                             spec.softness * rr * kSigmaPerRadius, cls, spec.tint});
            return true;
          }
        }
      }
    }
    return false;  // geometrically infeasible; the blob is dropped
  };

  for (const LesionSpec& spec : specs) {
    const int64_t cls = class_index(spec.class_name);
    const int64_t count = rng.uniform_int(spec.count_min, spec.count_max);
    for (int64_t k = 0; k < count; ++k) {
      const double r =
          rng.uniform(std::min(spec.radius_min, max_r), std::min(spec.radius_max, max_r));
      bool placed = false;
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        const bool clustered = rng.uniform() < spec.cluster_probability && !blobs.empty();
        double cy, cx;
        if (clustered) {
          const Blob& anchor = blobs[static_cast<size_t>(
              rng.uniform_int(0, static_cast<int64_t>(blobs.size()) - 1))];
          const double rsum = r + anchor.r;
          const double d = rng.uniform(rsum + 2.0, rsum + 7.0);
          const double th = rng.uniform(0.0, kTwoPi);
          cy = anchor.cy + d * std::sin(th);
          cx = anchor.cx + d * std::cos(th);
          if (cy < r + 1.0 || cy > H - 2.0 - r || cx < r + 1.0 || cx > W - 2.0 - r) continue;
        } else {
          cy = rng.uniform(r + 1.0, H - 2.0 - r);
          cx = rng.uniform(r + 1.0, W - 2.0 - r);
        }
        bool clear = true;
        for (const Blob& b : blobs) {
          const double dy = cy - b.cy, dx = cx - b.cx;
          const double sep = r + b.r + 1.5;
          if (dy * dy + dx * dx <= sep * sep) {
            clear = false;
            break;
          }
        }
        if (!clear) continue;
        blobs.push_back({cy, cx, r, spec.softness * r * kSigmaPerRadius, cls, spec.tint});
        placed = true;
      }
      if (!placed) scan_place(r, spec, cls);
    }
  }

  for (const Blob& b : blobs) {
    const double ext = std::max(b.r, 3.0 * b.sigma);
    const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(b.cy - ext)));
    const int64_t y1 = std::min<int64_t>(H - 1, static_cast<int64_t>(std::ceil(b.cy + ext)));
    const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(b.cx - ext)));
    const int64_t x1 = std::min<int64_t>(W - 1, static_cast<int64_t>(std::ceil(b.cx + ext)));
    for (int64_t y = y0; y <= y1; ++y) {
      for (int64_t x = x0; x <= x1; ++x) {
        const double dy = static_cast<double>(y) - b.cy;
        const double dx = static_cast<double>(x) - b.cx;
        const double d2 = dy * dy + dx * dx;
        const double a = std::exp(-d2 / (2.0 * b.sigma * b.sigma));
        const int64_t px = y * W + x;
        for (int64_t c = 0; c < 3; ++c) {
          const double v = (1.0 - a) * image[px * 3 + c] + a * b.tint[static_cast<size_t>(c)];
          image[px * 3 + c] = std::clamp(v, 0.0, 1.0);
        }
        if (d2 <= b.r * b.r) masks[px * kNumLesionClasses + b.cls] = 1.0;
      }
    }
  }

  return Sample{std::move(image), std::move(masks), sample_seed};
}

Tensor remap_hw(const Tensor& t, AugmentOp op) {
  const int64_t H = t.dim(0), W = t.dim(1), C = t.dim(2);
  const bool swap = op == AugmentOp::Rot90 || op == AugmentOp::Rot270;
  const int64_t Ho = swap ? W : H, Wo = swap ? H : W;
  Tensor out = Tensor::zeros({Ho, Wo, C});
  for (int64_t y = 0; y < Ho; ++y) {
    for (int64_t x = 0; x < Wo; ++x) {
      int64_t sy = 0, sx = 0;
      switch (op) {
        case AugmentOp::HFlip: sy = y; sx = W - 1 - x; break;
        case AugmentOp::VFlip: sy = H - 1 - y; sx = x; break;
        case AugmentOp::Rot90: sy = H - 1 - x; sx = y; break;   // clockwise
        case AugmentOp::Rot180: sy = H - 1 - y; sx = W - 1 - x; break;
        case AugmentOp::Rot270: sy = x; sx = W - 1 - y; break;  // counterclockwise
      }
      for (int64_t c = 0; c < C; ++c) out[(y * Wo + x) * C + c] = t[(sy * W + sx) * C + c];
    }
  }
  return out;
}

json spec_to_json(const LesionSpec& s) {
  return json{{"class", s.class_name},
              {"radius_range", {s.radius_min, s.radius_max}},
              {"count_range", {s.count_min, s.count_max}},
              {"cluster_probability", s.cluster_probability},
              {"softness", s.softness},
              {"tint", {s.tint[0], s.tint[1], s.tint[2]}}};
}

LesionSpec spec_from_json(const json& j) {
  LesionSpec s;
  s.class_name = j.at("class").get<std::string>();
  s.radius_min = j.at("radius_range").at(0).get<double>();
  s.radius_max = j.at("radius_range").at(1).get<double>();
  s.count_min = j.at("count_range").at(0).get<int64_t>();
  s.count_max = j.at("count_range").at(1).get<int64_t>();
  s.cluster_probability = j.at("cluster_probability").get<double>();
  s.softness = j.at("softness").get<double>();
  for (size_t i = 0; i < 3; ++i) s.tint[i] = j.at("tint").at(i).get<double>();
  return s;
}

}  // namespace

const std::vector<std::string>& lesion_class_names() {
  static const std::vector<std::string> names{"EX", "HE", "SE", "MA"};
  return names;
}

std::vector<LesionSpec> default_lesion_specs() {
  // MA stays under 16 px area (radius <= 2.2) and is numerous enough that
  // tiny components dominate; HE overlaps both MA (size, red tint) and EX
  // (size), which is the confusability the generator is after.
  std::vector<LesionSpec> specs(4);
  specs[0] = {"EX", 2.0, 5.0, 2, 4, 0.5, 0.9, {0.98, 0.92, 0.35}};
  specs[1] = {"HE", 1.2, 6.0, 2, 5, 0.5, 1.1, {0.45, 0.05, 0.05}};
  specs[2] = {"SE", 3.0, 7.0, 0, 2, 0.2, 1.4, {0.95, 0.93, 0.80}};
  specs[3] = {"MA", 1.0, 2.2, 8, 14, 0.7, 0.8, {0.55, 0.10, 0.12}};
  return specs;
}

std::vector<Sample> generate_dataset(int64_t n, int64_t H, int64_t W,
                                     const std::vector<LesionSpec>& specs, uint64_t seed) {
  if (n < 0) throw ContractError("generate_dataset: negative sample count");
  if (H % 4 != 0 || W % 4 != 0 || H < 16 || W < 16)
    throw ContractError("generate_dataset: H and W must be multiples of 4 and >= 16, got " +
                        std::to_string(H) + "x" + std::to_string(W));
  if (specs.empty()) throw ContractError("generate_dataset: no lesion specs");
  for (const LesionSpec& s : specs) {
    class_index(s.class_name);
    if (s.radius_min < 0.5 || s.radius_max < s.radius_min)
      throw ConfigError("bad radius range for " + s.class_name);
    if (s.count_min < 0 || s.count_max < s.count_min)
      throw ConfigError("bad count range for " + s.class_name);
    if (s.cluster_probability < 0.0 || s.cluster_probability > 1.0)
      throw ConfigError("bad cluster probability for " + s.class_name);
  }

  const Rng base(seed);
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    out.push_back(generate_sample(H, W, specs, base.fork(static_cast<uint64_t>(i)),
                                  seed ^ static_cast<uint64_t>(i)));
  return out;
}

std::string augment_str(AugmentOp op) {
  switch (op) {
    case AugmentOp::HFlip: return "hflip";
    case AugmentOp::VFlip: return "vflip";
    case AugmentOp::Rot90: return "rot90";
    case AugmentOp::Rot180: return "rot180";
    case AugmentOp::Rot270: return "rot270";
  }
  throw ContractError("augment_str: bad enum value");
}

AugmentOp augment_from_str(const std::string& s) {
  if (s == "hflip") return AugmentOp::HFlip;
  if (s == "vflip") return AugmentOp::VFlip;
  if (s == "rot90") return AugmentOp::Rot90;
  if (s == "rot180") return AugmentOp::Rot180;
  if (s == "rot270") return AugmentOp::Rot270;
  throw ConfigError("unknown augmentation \"" + s + "\"");
}

Sample augment(const Sample& s, AugmentOp op) {
  if (s.image.rank() != 3 || s.masks.rank() != 3)
    throw ShapeError("augment: sample tensors must be rank 3");
  return Sample{remap_hw(s.image, op), remap_hw(s.masks, op), s.seed};
}

void save_sample(const Sample& s, const std::string& dir) {
  if (s.image.rank() != 3 || s.image.dim(2) != 3)
    throw ShapeError("save_sample: image must be (H, W, 3), got " + shape_str(s.image.shape()));
  if (s.masks.rank() != 3 || s.masks.dim(2) != kNumLesionClasses)
    throw ShapeError("save_sample: masks must be (H, W, 4), got " + shape_str(s.masks.shape()));
  fs::create_directories(dir);
  io::write_m2mt((fs::path(dir) / "image.m2mt").string(), s.image);
  io::write_m2mt((fs::path(dir) / "masks.m2mt").string(), s.masks);
  {
    std::ofstream f(fs::path(dir) / "sample.json");
    if (!f) throw IoError("cannot open " + dir + "/sample.json for writing");
    f << json{{"seed", s.seed}}.dump() << "\n";
  }
  io::write_ppm((fs::path(dir) / "image.ppm").string(), s.image);
  const int64_t H = s.masks.dim(0), W = s.masks.dim(1);
  for (int64_t k = 0; k < kNumLesionClasses; ++k) {
    Tensor plane = Tensor::zeros({H, W});
    for (int64_t px = 0; px < H * W; ++px) plane[px] = s.masks[px * kNumLesionClasses + k];
    io::write_pgm((fs::path(dir) / ("mask_" + lesion_class_names()[static_cast<size_t>(k)] + ".pgm"))
                      .string(),
                  plane);
  }
}

Sample load_sample(const std::string& dir) {
  Sample s;
  s.image = io::read_m2mt((fs::path(dir) / "image.m2mt").string());
  s.masks = io::read_m2mt((fs::path(dir) / "masks.m2mt").string());
  if (s.image.rank() != 3 || s.image.dim(2) != 3)
    throw FormatError(dir + "/image.m2mt: expected (H, W, 3), got " + shape_str(s.image.shape()));
  if (s.masks.rank() != 3 || s.masks.dim(2) != kNumLesionClasses ||
      s.masks.dim(0) != s.image.dim(0) || s.masks.dim(1) != s.image.dim(1))
    throw FormatError(dir + "/masks.m2mt: expected masks matching image " +
                      shape_str(s.image.shape()) + ", got " + shape_str(s.masks.shape()));
  std::ifstream f(fs::path(dir) / "sample.json");
  if (!f) throw IoError("cannot open " + dir + "/sample.json for reading");
  try {
    json j = json::parse(f);
    s.seed = j.at("seed").get<uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError(dir + "/sample.json: " + e.what());
  }
  return s;
}

Dataset make_dataset(int64_t n, int64_t H, int64_t W, const std::vector<LesionSpec>& specs,
                     uint64_t seed) {
  Dataset ds;
  ds.H = H;
  ds.W = W;
  ds.seed = seed;
  ds.specs = specs;
  ds.samples = generate_dataset(n, H, W, specs, seed);
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["n"] = ds.samples.size();
  manifest["H"] = ds.H;
  manifest["W"] = ds.W;
  manifest["seed"] = ds.seed;
  manifest["specs"] = json::array();
  for (const LesionSpec& s : ds.specs) manifest["specs"].push_back(spec_to_json(s));
  manifest["files"] = json::array();
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03zu", i);
    manifest["files"].push_back(std::string(name));
    save_sample(ds.samples[i], (fs::path(dir) / name).string());
  }
  std::ofstream f(fs::path(dir) / "manifest.json");
  if (!f) throw IoError("cannot open " + dir + "/manifest.json for writing");
  f << manifest.dump(2) << "\n";
  if (!f) throw IoError("short write to " + dir + "/manifest.json");
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream f(fs::path(dir) / "manifest.json");
  if (!f) throw IoError("cannot open " + dir + "/manifest.json for reading");
  Dataset ds;
  try {
    json manifest = json::parse(f);
    ds.H = manifest.at("H").get<int64_t>();
    ds.W = manifest.at("W").get<int64_t>();
    ds.seed = manifest.at("seed").get<uint64_t>();
    for (const json& j : manifest.at("specs")) ds.specs.push_back(spec_from_json(j));
    const auto n = manifest.at("n").get<size_t>();
    const auto& files = manifest.at("files");
    if (files.size() != n)
      throw FormatError(dir + "/manifest.json: n=" + std::to_string(n) + " but " +
                        std::to_string(files.size()) + " files listed");
    for (const json& name : files)
      ds.samples.push_back(load_sample((fs::path(dir) / name.get<std::string>()).string()));
  } catch (const json::exception& e) {
    throw FormatError(dir + "/manifest.json: " + e.what());
  }
  for (const Sample& s : ds.samples)
    if (s.image.dim(0) != ds.H || s.image.dim(1) != ds.W)
      throw FormatError(dir + ": sample size " + shape_str(s.image.shape()) +
                        " does not match manifest " + std::to_string(ds.H) + "x" + std::to_string(ds.W));
  return ds;
}

}  // namespace m2mrf
