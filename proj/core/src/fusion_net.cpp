#include "m2mrf/fusion_net.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <utility>

#include "json.hpp"

#include "m2mrf/errors.hpp"
#include "m2mrf/ops.hpp"
#include "m2mrf/optim.hpp"
#include "m2mrf/tensor_io.hpp"

namespace m2mrf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kDiceEps = 1.0;

ParamPtr make_param(Tensor t) { return std::make_shared<Parameter>(std::move(t)); }

// Fan-in scaling for the plumbing convs; the head and the reassembly
// operators use the small fixed std instead.  The gain (3x the classic
// ReLU value) compensates for the absence of normalization layers: with
// the plain sqrt(2/fan) draw, mid-net activations are too weak for the
// overlap loss to move the head within a short training budget.
ParamPtr kaiming_conv(int64_t kh, int64_t kw, int64_t cin, int64_t cout, Rng& rng) {
  const double stddev = std::sqrt(18.0 / static_cast<double>(kh * kw * cin));
  return make_param(Tensor::randn({kh, kw, cin, cout}, rng, 0.0, stddev));
}

std::unique_ptr<RFOperator> make_fusion_op(const NetConfig& cfg, Direction dir, int64_t t,
                                           Rng& rng) {
  M2MRFConfig base = cfg.m2mrf;
  base.channels = cfg.stem_channels;
  const bool down = dir == Direction::Down;
  switch (cfg.variant) {
    case Variant::A: return build_one_step(dir, t, base, rng);
    case Variant::B:
      return down ? build_one_step(dir, t, base, rng) : build_cascade(dir, t, base, rng);
    case Variant::C:
      return down ? build_cascade(dir, t, base, rng) : build_one_step(dir, t, base, rng);
    case Variant::D: return build_cascade(dir, t, base, rng);
    case Variant::BaselineScBl:
      return build_baseline(down ? RFKind::StrideConv : RFKind::Bilinear, dir, t,
                            cfg.stem_channels, rng);
    case Variant::BaselineMp:
      return build_baseline(down ? RFKind::MaxPool : RFKind::Bilinear, dir, t, cfg.stem_channels,
                            rng);
  }
  throw ContractError("make_fusion_op: bad variant enum");
}

std::string block_conv_file(int64_t b, int64_t i) {
  return "block" + std::to_string(b) + "_stream" + std::to_string(i) + ".m2mt";
}

std::string fusion_subdir(int64_t i, int64_t j) {
  return "fusion/" + std::to_string(i) + "to" + std::to_string(j);
}

void assign_weight(const ParamPtr& p, const std::string& path) {
  Tensor loaded = io::read_m2mt(path);
  if (loaded.shape() != p->value.shape())
    throw FormatError(path + ": stored shape " + shape_str(loaded.shape()) +
                      " does not match the net descriptor's architecture (expected " +
                      shape_str(p->value.shape()) + ")");
  p->value = std::move(loaded);
}

}  // namespace

std::string variant_str(Variant v) {
  switch (v) {
    case Variant::A: return "A";
    case Variant::B: return "B";
    case Variant::C: return "C";
    case Variant::D: return "D";
    case Variant::BaselineScBl: return "baseline-sc-bl";
    case Variant::BaselineMp: return "baseline-mp";
  }
  throw ContractError("variant_str: bad enum value");
}

Variant variant_from_str(const std::string& s) {
  if (s == "A") return Variant::A;
  if (s == "B") return Variant::B;
  if (s == "C") return Variant::C;
  if (s == "D") return Variant::D;
  if (s == "baseline-sc-bl") return Variant::BaselineScBl;
  if (s == "baseline-mp") return Variant::BaselineMp;
  throw ConfigError("unknown variant '" + s + "' (expected A, B, C, D, baseline-sc-bl or baseline-mp)");
}

void NetConfig::validate() const {
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
  if (stem_channels < 1) throw ConfigError("stem_channels must be positive");
  if (num_streams < 2) throw ConfigError("num_streams must be at least 2");
  if (num_streams > 16) throw ConfigError("num_streams is implausibly large");
  if (num_fusion_blocks < 1) throw ConfigError("num_fusion_blocks must be positive");
  if (m2mrf.patch_h < 1 || m2mrf.patch_w < 1 || m2mrf.reduction < 1 || m2mrf.bottleneck < 1)
    throw ConfigError("reassembly template fields must be positive");
}

MiniFusionNet::MiniFusionNet(NetConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  build_structure(rng);
}

MiniFusionNet::MiniFusionNet(NetConfig cfg) : MiniFusionNet(std::move(cfg), 0) {}

// Weight draw order is frozen: stem, every block's stream convs, head, then
// the fusion operators in (from, to) order. Operators come last so that
// nets differing only in `variant` share stem/head weights bit for bit.
void MiniFusionNet::build_structure(Rng& rng) {
  stem_ = kaiming_conv(3, 3, 3, cfg_.stem_channels, rng);

  stream_convs_.clear();
  for (int64_t b = 0; b < cfg_.num_fusion_blocks; ++b) {
    const int64_t live = b == 0 ? 1 : cfg_.num_streams;
    std::vector<ParamPtr> convs;
    for (int64_t i = 0; i < live; ++i)
      convs.push_back(kaiming_conv(3, 3, cfg_.stem_channels, cfg_.stem_channels, rng));
    stream_convs_.push_back(std::move(convs));
  }

  head_ = make_param(Tensor::randn({1, 1, cfg_.stem_channels, cfg_.num_classes}, rng, 0.0, 0.01));

  fusion_.clear();
  fusion_.resize(static_cast<size_t>(cfg_.num_streams));
  for (auto& row : fusion_) row.resize(static_cast<size_t>(cfg_.num_streams));
  for (int64_t i = 0; i < cfg_.num_streams; ++i) {
    for (int64_t j = 0; j < cfg_.num_streams; ++j) {
      if (i == j) continue;
      const Direction dir = i < j ? Direction::Down : Direction::Up;
      fusion_[static_cast<size_t>(i)][static_cast<size_t>(j)] =
          make_fusion_op(cfg_, dir, std::llabs(i - j), rng);
    }
  }
}

Tensor MiniFusionNet::forward(Tape* tape, const Tensor& image) const {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw ShapeError("forward expects an (H, W, 3) image, got " + shape_str(image.shape()));
  const int64_t H = image.dim(0);
  const int64_t W = image.dim(1);
  const int64_t align = cfg_.alignment();
  if (H % align != 0 || W % align != 0)
    throw ShapeError("image size " + std::to_string(H) + "x" + std::to_string(W) +
                     " is not a multiple of the stream alignment " + std::to_string(align));

  auto w = [tape](const ParamPtr& p) { return tape ? tape->watch(p) : p->value; };

  // Streams live at scales 1, 1/2, ..., starting from just the full scale.
  std::vector<Tensor> streams;
  streams.push_back(ops::relu(ops::conv2d(image, w(stem_), 1, 1)));

  for (int64_t b = 0; b < cfg_.num_fusion_blocks; ++b) {
    const auto& convs = stream_convs_[static_cast<size_t>(b)];
    std::vector<Tensor> refined;
    for (size_t i = 0; i < streams.size(); ++i)
      refined.push_back(ops::relu(ops::conv2d(streams[i], w(convs[i]), 1, 1)));

    // Every target resolution is the sum of all source streams, each
    // reassembled by the (source, target) operator; the diagonal passes
    // through unchanged.
    std::vector<Tensor> next;
    for (int64_t j = 0; j < cfg_.num_streams; ++j) {
      Tensor acc;
      bool have = false;
      for (size_t i = 0; i < refined.size(); ++i) {
        const int64_t si = static_cast<int64_t>(i);
        Tensor part = si == j
                          ? refined[i]
                          : fusion_[i][static_cast<size_t>(j)]->apply(tape, refined[i]);
        acc = have ? ops::add(acc, part) : std::move(part);
        have = true;
      }
      next.push_back(std::move(acc));
    }
    streams = std::move(next);
  }

  return ops::conv2d(streams.front(), w(head_), 1, 0);
}

Tensor MiniFusionNet::predict(const Tensor& image) const {
  return ops::sigmoid(forward(nullptr, image));
}

std::vector<ParamPtr> MiniFusionNet::parameters() const {
  std::vector<ParamPtr> out{stem_};
  for (const auto& block : stream_convs_) out.insert(out.end(), block.begin(), block.end());
  out.push_back(head_);
  for (const auto& row : fusion_) {
    for (const auto& op : row) {
      if (!op) continue;
      const std::vector<ParamPtr> ps = op->parameters();
      out.insert(out.end(), ps.begin(), ps.end());
    }
  }
  return out;
}

int64_t MiniFusionNet::param_count() const {
  int64_t total = 0;
  for (const ParamPtr& p : parameters()) total += p->numel();
  return total;
}

const RFOperator& MiniFusionNet::fusion_op(int64_t from, int64_t to) const {
  if (from < 0 || from >= cfg_.num_streams || to < 0 || to >= cfg_.num_streams || from == to)
    throw ContractError("fusion_op: no operator for stream pair (" + std::to_string(from) + ", " +
                        std::to_string(to) + ")");
  return *fusion_[static_cast<size_t>(from)][static_cast<size_t>(to)];
}

void MiniFusionNet::save(const std::string& dir) const {
  fs::create_directories(dir);
  json desc = {
      {"num_classes", cfg_.num_classes},
      {"stem_channels", cfg_.stem_channels},
      {"num_streams", cfg_.num_streams},
      {"num_fusion_blocks", cfg_.num_fusion_blocks},
      {"variant", variant_str(cfg_.variant)},
      {"m2mrf",
       {{"S_h", cfg_.m2mrf.patch_h},
        {"S_w", cfg_.m2mrf.patch_w},
        {"r", cfg_.m2mrf.reduction},
        {"alpha", cfg_.m2mrf.bottleneck}}},
  };
  {
    std::ofstream f(fs::path(dir) / "net.json");
    if (!f) throw IoError("cannot open " + dir + "/net.json for writing");
    f << desc.dump(2) << "\n";
    if (!f) throw IoError("short write to " + dir + "/net.json");
  }

  io::write_m2mt((fs::path(dir) / "stem.m2mt").string(), stem_->value);
  for (size_t b = 0; b < stream_convs_.size(); ++b)
    for (size_t i = 0; i < stream_convs_[b].size(); ++i)
      io::write_m2mt(
          (fs::path(dir) / block_conv_file(static_cast<int64_t>(b), static_cast<int64_t>(i)))
              .string(),
          stream_convs_[b][i]->value);
  io::write_m2mt((fs::path(dir) / "head.m2mt").string(), head_->value);

  for (int64_t i = 0; i < cfg_.num_streams; ++i)
    for (int64_t j = 0; j < cfg_.num_streams; ++j)
      if (i != j)
        save_rf_operator(fusion_op(i, j), (fs::path(dir) / fusion_subdir(i, j)).string());
}

MiniFusionNet MiniFusionNet::load(const std::string& dir) {
  const fs::path desc_path = fs::path(dir) / "net.json";
  std::ifstream f(desc_path);
  if (!f) throw IoError("cannot open " + desc_path.string() + " for reading");
  json desc;
  try {
    desc = json::parse(f);
  } catch (const json::exception& e) {
    throw FormatError(desc_path.string() + ": " + e.what());
  }

  NetConfig cfg;
  try {
    cfg.num_classes = desc.at("num_classes").get<int64_t>();
    cfg.stem_channels = desc.at("stem_channels").get<int64_t>();
    cfg.num_streams = desc.at("num_streams").get<int64_t>();
    cfg.num_fusion_blocks = desc.at("num_fusion_blocks").get<int64_t>();
    cfg.variant = variant_from_str(desc.at("variant").get<std::string>());
    const json& m = desc.at("m2mrf");
    cfg.m2mrf.patch_h = m.at("S_h").get<int64_t>();
    cfg.m2mrf.patch_w = m.at("S_w").get<int64_t>();
    cfg.m2mrf.reduction = m.at("r").get<int64_t>();
    cfg.m2mrf.bottleneck = m.at("alpha").get<int64_t>();
  } catch (const json::exception& e) {
    throw FormatError(desc_path.string() + ": " + e.what());
  }

  // Build the architecture (throwaway weights), then overwrite every weight
  // from disk, validating shapes against the descriptor-derived structure.
  MiniFusionNet net(cfg);
  assign_weight(net.stem_, (fs::path(dir) / "stem.m2mt").string());
  for (size_t b = 0; b < net.stream_convs_.size(); ++b)
    for (size_t i = 0; i < net.stream_convs_[b].size(); ++i)
      assign_weight(
          net.stream_convs_[b][i],
          (fs::path(dir) / block_conv_file(static_cast<int64_t>(b), static_cast<int64_t>(i)))
              .string());
  assign_weight(net.head_, (fs::path(dir) / "head.m2mt").string());

  for (int64_t i = 0; i < cfg.num_streams; ++i) {
    for (int64_t j = 0; j < cfg.num_streams; ++j) {
      if (i == j) continue;
      const std::string sub = (fs::path(dir) / fusion_subdir(i, j)).string();
      std::unique_ptr<RFOperator> op = load_rf_operator(sub);
      const RFOperator& want = net.fusion_op(i, j);
      if (op->kind() != want.kind() || op->direction() != want.direction() ||
          op->steps() != want.steps() || op->channels() != want.channels())
        throw FormatError(sub + ": stored operator does not match the net descriptor");
      net.fusion_[static_cast<size_t>(i)][static_cast<size_t>(j)] = std::move(op);
    }
  }
  return net;
}

Tensor dice_loss(const Tensor& probs, const Tensor& gt) {
  if (probs.rank() != 3)
    throw ShapeError("dice_loss expects (H, W, K) maps, got " + shape_str(probs.shape()));
  if (probs.shape() != gt.shape())
    throw ShapeError("dice_loss shape mismatch: " + shape_str(probs.shape()) + " vs " +
                     shape_str(gt.shape()));

  const int64_t K = probs.dim(2);
  Tensor acc;
  bool have = false;
  for (int64_t k = 0; k < K; ++k) {
    Tensor p = ops::channel(probs, k);
    Tensor g = ops::channel(gt, k);
    Tensor num = ops::add_scalar(ops::scale(ops::sum(ops::mul(p, g)), 2.0), kDiceEps);
    Tensor den = ops::add_scalar(ops::add(ops::sum(p), ops::sum(g)), kDiceEps);
    Tensor term = ops::sub(Tensor::scalar(1.0), ops::div(num, den));
    acc = have ? ops::add(acc, term) : std::move(term);
    have = true;
  }
  return ops::scale(acc, 1.0 / static_cast<double>(K));
}

std::vector<TrainRecord> train(MiniFusionNet& net, const std::vector<Sample>& data,
                               const TrainOptions& opt, uint64_t seed) {
  if (data.empty()) throw ContractError("train: dataset is empty");
  if (opt.iters < 0) throw ContractError("train: iters must be non-negative");
  if (opt.batch < 1) throw ContractError("train: batch must be positive");

  const std::vector<ParamPtr> params = net.parameters();
  Rng rng(seed);

  std::vector<int64_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
  size_t cursor = order.size();  // forces a shuffle before the first draw

  std::vector<TrainRecord> history;
  history.reserve(static_cast<size_t>(opt.iters));
  for (int64_t iter = 0; iter < opt.iters; ++iter) {
    const double lr = poly_lr(opt.base_lr, iter, opt.iters, opt.poly_power);

    Tape tape;
    Tensor batch_loss;
    bool have = false;
    for (int64_t b = 0; b < opt.batch; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      const Sample& picked = data[static_cast<size_t>(order[cursor++])];
      Sample sample = picked;  // shallow: shares buffers until augmented
      if (opt.augment) {
        // Uniform over identity + the five isometries.
        const int64_t a = rng.uniform_int(0, 5);
        if (a > 0) sample = augment(picked, static_cast<AugmentOp>(a - 1));
      }
      Tensor probs = ops::sigmoid(net.forward(&tape, sample.image));
      Tensor loss = dice_loss(probs, sample.masks);
      batch_loss = have ? ops::add(batch_loss, loss) : std::move(loss);
      have = true;
    }
    Tensor mean_loss = ops::scale(batch_loss, 1.0 / static_cast<double>(opt.batch));
    const double loss_value = mean_loss.scalar_value();
    tape.backward(mean_loss);
    sgd_update(params, lr, opt.momentum, opt.weight_decay);
    history.push_back({iter, lr, loss_value});
  }
  return history;
}

}  // namespace m2mrf
