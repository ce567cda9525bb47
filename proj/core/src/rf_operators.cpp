#include "m2mrf/rf_operators.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <utility>

#include <json.hpp>

#include "m2mrf/errors.hpp"
#include "m2mrf/tensor_io.hpp"

namespace m2mrf {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

Rational overall_rate(Direction dir, int64_t t) {
  const int64_t f = int64_t{1} << t;
  return dir == Direction::Down ? Rational{1, f} : Rational{f, 1};
}

Rational stage_rate(Direction dir) { return dir == Direction::Down ? Rational{1, 2} : Rational{2, 1}; }

// Kaiming fan-in init for the plain conv baselines.
Tensor conv_init(Shape shape, Rng& rng) {
  const double fan_in = static_cast<double>(shape[0] * shape[1] * shape[2]);
  return Tensor::randn(std::move(shape), rng, 0.0, std::sqrt(2.0 / fan_in));
}

M2MRFConfig with_rate(M2MRFConfig cfg, Rational rate) {
  cfg.rate = rate;
  return cfg;
}

}  // namespace

std::string kind_str(RFKind kind) {
  switch (kind) {
    case RFKind::M2MRFOneStep: return "M2MRF-one-step";
    case RFKind::M2MRFCascade: return "M2MRF-cascade";
    case RFKind::StrideConv: return "StrideConv";
    case RFKind::MaxPool: return "MaxPool";
    case RFKind::Bilinear: return "Bilinear";
    case RFKind::Deconv: return "Deconv";
    case RFKind::Unpool: return "Unpool";
  }
  throw ContractError("kind_str: bad enum value");
}

RFKind kind_from_str(const std::string& s) {
  if (s == "M2MRF-one-step") return RFKind::M2MRFOneStep;
  if (s == "M2MRF-cascade") return RFKind::M2MRFCascade;
  if (s == "StrideConv") return RFKind::StrideConv;
  if (s == "MaxPool") return RFKind::MaxPool;
  if (s == "Bilinear") return RFKind::Bilinear;
  if (s == "Deconv") return RFKind::Deconv;
  if (s == "Unpool") return RFKind::Unpool;
  throw ConfigError("unknown operator kind \"" + s + "\"");
}

std::string direction_str(Direction dir) { return dir == Direction::Down ? "downsample" : "upsample"; }

Direction direction_from_str(const std::string& s) {
  if (s == "downsample") return Direction::Down;
  if (s == "upsample") return Direction::Up;
  throw ConfigError("unknown direction \"" + s + "\"");
}

RFOperator::RFOperator(RFKind kind, Direction dir, int64_t t, Rational rate, int64_t channels)
    : kind_(kind), dir_(dir), t_(t), rate_(rate), channels_(channels) {
  if (t < 1) throw ConfigError("operator steps must be >= 1, got " + std::to_string(t));
  if (channels < 1) throw ConfigError("operator channels must be >= 1, got " + std::to_string(channels));
}

int64_t RFOperator::param_count() const {
  int64_t total = 0;
  for (const ParamPtr& p : parameters()) total += p->numel();
  return total;
}

// ---- M2MRF one-step ---------------------------------------------------------

M2MRFOneStepOp::M2MRFOneStepOp(Direction dir, int64_t t, M2MRFConfig base, Rng& rng)
    : RFOperator(RFKind::M2MRFOneStep, dir, t, overall_rate(dir, t), base.channels) {
  stages_.emplace_back(with_rate(base, overall_rate(dir, t)), rng);
}

M2MRFOneStepOp::M2MRFOneStepOp(Direction dir, int64_t t, M2MRFOperator stage)
    : RFOperator(RFKind::M2MRFOneStep, dir, t, overall_rate(dir, t), stage.config().channels) {
  if (!(stage.config().rate == overall_rate(dir, t)))
    throw ConfigError("one-step stage rate " + stage.config().rate.str() + " does not match " +
                      direction_str(dir) + " t=" + std::to_string(t));
  stages_.push_back(std::move(stage));
}

Tensor M2MRFOneStepOp::apply(Tape* tape, const Tensor& x) const { return stages_.front().apply(tape, x); }

std::vector<ParamPtr> M2MRFOneStepOp::parameters() const { return stages_.front().parameters(); }

// ---- M2MRF cascade ----------------------------------------------------------

M2MRFCascadeOp::M2MRFCascadeOp(Direction dir, int64_t t, M2MRFConfig base, Rng& rng)
    : RFOperator(RFKind::M2MRFCascade, dir, t, overall_rate(dir, t), base.channels) {
  stages_.reserve(static_cast<size_t>(t));
  for (int64_t i = 0; i < t; ++i) stages_.emplace_back(with_rate(base, stage_rate(dir)), rng);
}

M2MRFCascadeOp::M2MRFCascadeOp(Direction dir, int64_t t, std::vector<M2MRFOperator> stages)
    : RFOperator(RFKind::M2MRFCascade, dir, t, overall_rate(dir, t),
                 stages.empty() ? 0 : stages.front().config().channels) {
  if (static_cast<int64_t>(stages.size()) != t)
    throw ConfigError("cascade of t=" + std::to_string(t) + " needs " + std::to_string(t) +
                      " stages, got " + std::to_string(stages.size()));
  for (const M2MRFOperator& s : stages) {
    if (!(s.config().rate == stage_rate(dir)))
      throw ConfigError("cascade stage rate " + s.config().rate.str() + " must be " +
                        stage_rate(dir).str());
    if (s.config().channels != channels())
      throw ConfigError("cascade stages disagree on channels");
  }
  stages_ = std::move(stages);
}

Tensor M2MRFCascadeOp::apply(Tape* tape, const Tensor& x) const {
  Tensor y = x;
  for (const M2MRFOperator& s : stages_) y = s.apply(tape, y);
  return y;
}

std::vector<ParamPtr> M2MRFCascadeOp::parameters() const {
  std::vector<ParamPtr> all;
  for (const M2MRFOperator& s : stages_)
    for (ParamPtr& p : s.parameters()) all.push_back(std::move(p));
  return all;
}

// ---- StrideConv -------------------------------------------------------------

StrideConvOp::StrideConvOp(int64_t t, int64_t channels, Rng& rng)
    : RFOperator(RFKind::StrideConv, Direction::Down, t, overall_rate(Direction::Down, t), channels) {
  for (int64_t i = 0; i < t; ++i)
    kernels_.push_back(std::make_shared<Parameter>(conv_init({3, 3, channels, channels}, rng)));
}

StrideConvOp::StrideConvOp(int64_t t, int64_t channels, std::vector<Tensor> kernels)
    : RFOperator(RFKind::StrideConv, Direction::Down, t, overall_rate(Direction::Down, t), channels) {
  if (static_cast<int64_t>(kernels.size()) != t)
    throw ConfigError("StrideConv t=" + std::to_string(t) + " needs " + std::to_string(t) + " kernels");
  for (Tensor& k : kernels) {
    if (k.shape() != Shape{3, 3, channels, channels})
      throw ConfigError("StrideConv kernel must be (3, 3, C, C), got " + shape_str(k.shape()));
    kernels_.push_back(std::make_shared<Parameter>(std::move(k)));
  }
}

Tensor StrideConvOp::apply(Tape* tape, const Tensor& x) const {
  Tensor y = x;
  for (const ParamPtr& k : kernels_) y = ops::conv2d(y, tape ? tape->watch(k) : k->value, 2, 1);
  return y;
}

std::vector<ParamPtr> StrideConvOp::parameters() const { return kernels_; }

// ---- MaxPool ----------------------------------------------------------------

MaxPoolOp::MaxPoolOp(int64_t t, int64_t channels)
    : RFOperator(RFKind::MaxPool, Direction::Down, t, overall_rate(Direction::Down, t), channels) {}

Tensor MaxPoolOp::apply(Tape* tape, const Tensor& x) const {
  (void)tape;  // pooling records its own backward through the input's tape
  Tensor y = x;
  for (int64_t i = 0; i < steps(); ++i) y = ops::maxpool2d_argmax(y, 3, 3, 2, 1).first;
  return y;
}

Tensor MaxPoolOp::apply_argmax(Tape* tape, const Tensor& x,
                               std::vector<ops::MaxPoolIndices>& indices) const {
  (void)tape;
  indices.clear();
  Tensor y = x;
  for (int64_t i = 0; i < steps(); ++i) {
    auto [pooled, idx] = ops::maxpool2d_argmax(y, 3, 3, 2, 1);
    y = std::move(pooled);
    indices.push_back(std::move(idx));
  }
  return y;
}

// ---- Bilinear ---------------------------------------------------------------

BilinearOp::BilinearOp(int64_t t, int64_t channels)
    : RFOperator(RFKind::Bilinear, Direction::Up, t, overall_rate(Direction::Up, t), channels) {}

Tensor BilinearOp::apply(Tape* tape, const Tensor& x) const {
  (void)tape;
  if (x.rank() != 3) throw ShapeError("Bilinear: expected (H, W, C), got " + shape_str(x.shape()));
  const int64_t f = int64_t{1} << steps();
  return ops::bilinear_resize(x, x.dim(0) * f, x.dim(1) * f);
}

// ---- Deconv -----------------------------------------------------------------

DeconvOp::DeconvOp(int64_t t, int64_t channels, Rng& rng)
    : RFOperator(RFKind::Deconv, Direction::Up, t, overall_rate(Direction::Up, t), channels) {
  for (int64_t i = 0; i < t; ++i)
    kernels_.push_back(std::make_shared<Parameter>(conv_init({4, 4, channels, channels}, rng)));
}

DeconvOp::DeconvOp(int64_t t, int64_t channels, std::vector<Tensor> kernels)
    : RFOperator(RFKind::Deconv, Direction::Up, t, overall_rate(Direction::Up, t), channels) {
  if (static_cast<int64_t>(kernels.size()) != t)
    throw ConfigError("Deconv t=" + std::to_string(t) + " needs " + std::to_string(t) + " kernels");
  for (Tensor& k : kernels) {
    if (k.shape() != Shape{4, 4, channels, channels})
      throw ConfigError("Deconv kernel must be (4, 4, C, C), got " + shape_str(k.shape()));
    kernels_.push_back(std::make_shared<Parameter>(std::move(k)));
  }
}

Tensor DeconvOp::apply(Tape* tape, const Tensor& x) const {
  Tensor y = x;
  for (const ParamPtr& k : kernels_)
    y = ops::conv2d_transpose(y, tape ? tape->watch(k) : k->value, 2, 1);
  return y;
}

std::vector<ParamPtr> DeconvOp::parameters() const { return kernels_; }

// ---- Unpool -----------------------------------------------------------------

UnpoolOp::UnpoolOp(int64_t t, int64_t channels)
    : RFOperator(RFKind::Unpool, Direction::Up, t, overall_rate(Direction::Up, t), channels) {}

Tensor UnpoolOp::apply(Tape*, const Tensor&) const {
  throw ContractError("Unpool has no standalone forward; pair it with a MaxPool via apply_with_indices");
}

Tensor UnpoolOp::apply_with_indices(Tape* tape, const Tensor& x,
                                    const std::vector<ops::MaxPoolIndices>& indices) const {
  (void)tape;
  if (static_cast<int64_t>(indices.size()) != steps())
    throw ContractError("Unpool t=" + std::to_string(steps()) + " needs " + std::to_string(steps()) +
                        " index sets, got " + std::to_string(indices.size()));
  Tensor y = x;
  for (auto it = indices.rbegin(); it != indices.rend(); ++it) y = ops::max_unpool2d(y, *it);
  return y;
}

// ---- builders ----------------------------------------------------------

std::unique_ptr<RFOperator> build_one_step(Direction dir, int64_t t, const M2MRFConfig& base, Rng& rng) {
  return std::make_unique<M2MRFOneStepOp>(dir, t, base, rng);
}

std::unique_ptr<RFOperator> build_cascade(Direction dir, int64_t t, const M2MRFConfig& base, Rng& rng) {
  return std::make_unique<M2MRFCascadeOp>(dir, t, base, rng);
}

std::unique_ptr<RFOperator> build_baseline(RFKind kind, Direction dir, int64_t t, int64_t channels,
                                           Rng& rng) {
  switch (kind) {
    case RFKind::StrideConv:
      if (dir != Direction::Down) throw ConfigError("StrideConv only downsamples");
      return std::make_unique<StrideConvOp>(t, channels, rng);
    case RFKind::MaxPool:
      if (dir != Direction::Down) throw ConfigError("MaxPool only downsamples");
      return std::make_unique<MaxPoolOp>(t, channels);
    case RFKind::Bilinear:
      if (dir != Direction::Up) throw ConfigError("Bilinear only upsamples");
      return std::make_unique<BilinearOp>(t, channels);
    case RFKind::Deconv:
      if (dir != Direction::Up) throw ConfigError("Deconv only upsamples");
      return std::make_unique<DeconvOp>(t, channels, rng);
    case RFKind::Unpool:
      if (dir != Direction::Up) throw ConfigError("Unpool only upsamples");
      return std::make_unique<UnpoolOp>(t, channels);
    case RFKind::M2MRFOneStep:
    case RFKind::M2MRFCascade:
      throw ConfigError("build_baseline does not build " + kind_str(kind) + "; use the M2MRF builders");
  }
  throw ContractError("build_baseline: bad kind enum");
}

// ---- linear-map oracle -------------------------------------------------

Tensor materialize_linear_map(const std::function<Tensor(const Tensor&)>& f, int64_t H, int64_t W,
                              int64_t C) {
  const int64_t n = H * W * C;
  Tensor basis = Tensor::zeros({H, W, C});
  Tensor first = f(basis);
  const int64_t m = first.numel();
  Tensor mat = Tensor::zeros({m, n});
  for (int64_t j = 0; j < n; ++j) {
    basis[j] = 1.0;
    Tensor y = f(basis);
    basis[j] = 0.0;
    if (y.numel() != m)
      throw ContractError("materialize_linear_map: output size changed across basis vectors");
    for (int64_t i = 0; i < m; ++i) mat[i * n + j] = y[i];
  }
  return mat;
}

Tensor materialize_linear_map(const RFOperator& op, int64_t H, int64_t W, int64_t C) {
  if (!op.is_linear())
    throw ContractError("materialize_linear_map: " + kind_str(op.kind()) + " is not a linear map");
  if (H * W * C > 4096)
    throw ContractError("materialize_linear_map: input size " + std::to_string(H * W * C) +
                        " exceeds the 4096-element oracle limit");
  return materialize_linear_map([&op](const Tensor& x) { return op.apply(nullptr, x); }, H, W, C);
}

// ---- serialization ---------------------------------------------------------

namespace {

const M2MRFConfig* base_config(const RFOperator& op) {
  if (const auto* one = dynamic_cast<const M2MRFOneStepOp*>(&op)) return &one->stage().config();
  if (const auto* cas = dynamic_cast<const M2MRFCascadeOp*>(&op)) return &cas->stages().front().config();
  return nullptr;
}

void save_m2mrf_stage(const M2MRFOperator& stage, const fs::path& dir, int64_t i) {
  const std::string p = "stage" + std::to_string(i) + "_";
  io::write_m2mt((dir / (p + "compressor.m2mt")).string(), stage.compressor()->value);
  io::write_m2mt((dir / (p + "proj_in.m2mt")).string(), stage.proj_in()->value);
  io::write_m2mt((dir / (p + "proj_out.m2mt")).string(), stage.proj_out()->value);
  io::write_m2mt((dir / (p + "recover.m2mt")).string(), stage.recover()->value);
}

M2MRFOperator load_m2mrf_stage(const M2MRFConfig& cfg, const fs::path& dir, int64_t i) {
  const std::string p = "stage" + std::to_string(i) + "_";
  return M2MRFOperator(cfg, io::read_m2mt((dir / (p + "compressor.m2mt")).string()),
                       io::read_m2mt((dir / (p + "proj_in.m2mt")).string()),
                       io::read_m2mt((dir / (p + "proj_out.m2mt")).string()),
                       io::read_m2mt((dir / (p + "recover.m2mt")).string()));
}

}  // namespace

void save_rf_operator(const RFOperator& op, const std::string& dir) {
  fs::create_directories(dir);
  const M2MRFConfig* cfg = base_config(op);
  json desc = {
      {"kind", kind_str(op.kind())},
      {"direction", direction_str(op.direction())},
      {"t", op.steps()},
      {"S_h", cfg ? cfg->patch_h : 0},
      {"S_w", cfg ? cfg->patch_w : 0},
      {"r", cfg ? cfg->reduction : 0},
      {"alpha", cfg ? cfg->bottleneck : 0},
      {"C", op.channels()},
  };
  {
    std::ofstream f(fs::path(dir) / "descriptor.json");
    if (!f) throw IoError("cannot open " + dir + "/descriptor.json for writing");
    f << desc.dump(2) << "\n";
    if (!f) throw IoError("short write to " + dir + "/descriptor.json");
  }

  if (const auto* one = dynamic_cast<const M2MRFOneStepOp*>(&op)) {
    save_m2mrf_stage(one->stage(), dir, 0);
  } else if (const auto* cas = dynamic_cast<const M2MRFCascadeOp*>(&op)) {
    for (size_t i = 0; i < cas->stages().size(); ++i)
      save_m2mrf_stage(cas->stages()[i], dir, static_cast<int64_t>(i));
  } else {
    const std::vector<ParamPtr> ps = op.parameters();
    for (size_t i = 0; i < ps.size(); ++i)
      io::write_m2mt((fs::path(dir) / ("stage" + std::to_string(i) + "_kernel.m2mt")).string(),
                     ps[i]->value);
  }
}

std::unique_ptr<RFOperator> load_rf_operator(const std::string& dir) {
  const fs::path desc_path = fs::path(dir) / "descriptor.json";
  std::ifstream f(desc_path);
  if (!f) throw IoError("cannot open " + desc_path.string() + " for reading");
  json desc;
  try {
    desc = json::parse(f);
  } catch (const json::exception& e) {
    throw FormatError(desc_path.string() + ": " + e.what());
  }

  RFKind kind;
  Direction dir_;
  int64_t t, channels;
  M2MRFConfig base;
  try {
    kind = kind_from_str(desc.at("kind").get<std::string>());
    dir_ = direction_from_str(desc.at("direction").get<std::string>());
    t = desc.at("t").get<int64_t>();
    channels = desc.at("C").get<int64_t>();
    base.patch_h = desc.at("S_h").get<int64_t>();
    base.patch_w = desc.at("S_w").get<int64_t>();
    base.reduction = desc.at("r").get<int64_t>();
    base.bottleneck = desc.at("alpha").get<int64_t>();
    base.channels = channels;
  } catch (const json::exception& e) {
    throw FormatError(desc_path.string() + ": " + e.what());
  }

  switch (kind) {
    case RFKind::M2MRFOneStep:
      return std::make_unique<M2MRFOneStepOp>(
          dir_, t, load_m2mrf_stage(with_rate(base, overall_rate(dir_, t)), dir, 0));
    case RFKind::M2MRFCascade: {
      std::vector<M2MRFOperator> stages;
      for (int64_t i = 0; i < t; ++i)
        stages.push_back(load_m2mrf_stage(with_rate(base, stage_rate(dir_)), dir, i));
      return std::make_unique<M2MRFCascadeOp>(dir_, t, std::move(stages));
    }
    case RFKind::StrideConv:
    case RFKind::Deconv: {
      std::vector<Tensor> kernels;
      for (int64_t i = 0; i < t; ++i)
        kernels.push_back(
            io::read_m2mt((fs::path(dir) / ("stage" + std::to_string(i) + "_kernel.m2mt")).string()));
      if (kind == RFKind::StrideConv)
        return std::make_unique<StrideConvOp>(t, channels, std::move(kernels));
      return std::make_unique<DeconvOp>(t, channels, std::move(kernels));
    }
    case RFKind::MaxPool: return std::make_unique<MaxPoolOp>(t, channels);
    case RFKind::Bilinear: return std::make_unique<BilinearOp>(t, channels);
    case RFKind::Unpool: return std::make_unique<UnpoolOp>(t, channels);
  }
  throw ContractError("load_rf_operator: bad kind enum");
}

}  // namespace m2mrf
