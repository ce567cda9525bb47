#pragma once

#include <memory>
#include <string>
#include <vector>

#include "m2mrf/m2mrf_op.hpp"
#include "m2mrf/rf_operators.hpp"
#include "m2mrf/synth_data.hpp"

namespace m2mrf {

// Which operator pair fuses across resolutions: the four many-to-many
// combinations (down/up composition style) and the two classical pairings.
enum class Variant { A, B, C, D, BaselineScBl, BaselineMp };

std::string variant_str(Variant v);
Variant variant_from_str(const std::string& s);

struct NetConfig {
  int64_t num_classes = 4;
  int64_t stem_channels = 16;
  int64_t num_streams = 3;       // resolutions 1, 1/2, ..., 1/2^(num_streams-1)
  int64_t num_fusion_blocks = 2;
  Variant variant = Variant::A;
  // Patch/reduction/bottleneck template for the reassembly operators; its
  // channels and rate fields are overridden per operator.
  M2MRFConfig m2mrf;

  void validate() const;
  int64_t alignment() const { return int64_t{1} << (num_streams - 1); }
};

// Multi-resolution fusion network: a stem conv, then fusion blocks that
// convolve each live stream and re-aggregate every target resolution as a
// sum of reassembled streams. One operator per ordered stream pair (i, j),
// with t = |i - j|, shared by all blocks. Head is a 1x1 conv on the
// full-resolution stream.
class MiniFusionNet {
 public:
  MiniFusionNet(NetConfig cfg, uint64_t seed);

  // (H, W, 3) -> logits (H, W, num_classes); H and W must be multiples of
  // alignment(). Differentiable when a tape is given.
  Tensor forward(Tape* tape, const Tensor& image) const;

  // sigmoid(forward), detached.
  Tensor predict(const Tensor& image) const;

  // Fixed order: stem, per-block stream convs, head, fusion operators.
  std::vector<ParamPtr> parameters() const;
  int64_t param_count() const;

  const NetConfig& config() const { return cfg_; }
  const RFOperator& fusion_op(int64_t from, int64_t to) const;

  // Directory of tensor containers plus net.json. load() rejects files
  // that disagree with the descriptor's architecture.
  void save(const std::string& dir) const;
  static MiniFusionNet load(const std::string& dir);

 private:
  explicit MiniFusionNet(NetConfig cfg);  // structure only, weights filled by load()
  void build_structure(Rng& rng);

  NetConfig cfg_;
  ParamPtr stem_;                                    // (3, 3, 3, stem_channels)
  std::vector<std::vector<ParamPtr>> stream_convs_;  // [block][live stream], (3, 3, ch, ch)
  ParamPtr head_;                                    // (1, 1, ch, num_classes)
  std::vector<std::vector<std::unique_ptr<RFOperator>>> fusion_;  // [from][to], null diagonal
};

// Mean over classes of 1 - (2*sum(p*g) + 1) / (sum(p) + sum(g) + 1) on
// (H, W, K) maps. Zero exactly when every class matches perfectly or is
// empty on both sides.
Tensor dice_loss(const Tensor& probs, const Tensor& gt);

struct TrainRecord {
  int64_t iter;
  double lr;
  double loss;
};

struct TrainOptions {
  int64_t iters = 200;
  int64_t batch = 4;
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double poly_power = 0.9;
  bool augment = true;  // uniform draw over identity + flips + rotations
};

// SGD with the poly schedule over epoch-style shuffled batches. Purely a
// function of (net weights, data, options, seed); reruns are bit-identical.
std::vector<TrainRecord> train(MiniFusionNet& net, const std::vector<Sample>& data,
                               const TrainOptions& opt, uint64_t seed);

}  // namespace m2mrf
