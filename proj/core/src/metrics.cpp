#include "m2mrf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "m2mrf/errors.hpp"

namespace m2mrf {

namespace {

void require_binary(const char* op, const Tensor& t) {
  for (int64_t i = 0; i < t.numel(); ++i)
    if (t[i] != 0.0 && t[i] != 1.0)
      throw ContractError(std::string(op) + ": expected a strictly 0/1 tensor, found " +
                          std::to_string(t[i]));
}

struct Counts {
  int64_t tp = 0, fp = 0, fn = 0;
};

std::pair<double, double> f_iou_from_counts(const Counts& c) {
  if (c.tp + c.fp + c.fn == 0) return {1.0, 1.0};  // both empty
  const double f = 2.0 * c.tp / static_cast<double>(2 * c.tp + c.fp + c.fn);
  const double iou = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp + c.fn);
  return {f, iou};
}

PRCurve pr_curve_pooled(const std::vector<double>& scores, const std::vector<uint8_t>& pos) {
  int64_t total_pos = 0;
  for (uint8_t p : pos) total_pos += p;
  if (total_pos == 0)
    throw ContractError("pr_curve: ground truth has no positives, recall is undefined");

  std::vector<int64_t> order(scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
  std::sort(order.begin(), order.end(), [&scores](int64_t a, int64_t b) {
    return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
  });

  PRCurve curve;
  int64_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    const double tau = scores[static_cast<size_t>(order[i])];
    // consume the whole tie group; the point describes "score >= tau"
    while (i < order.size() && scores[static_cast<size_t>(order[i])] == tau) {
      if (pos[static_cast<size_t>(order[i])]) ++tp; else ++fp;
      ++i;
    }
    curve.points.push_back({tau, static_cast<double>(tp) / static_cast<double>(tp + fp),
                            static_cast<double>(tp) / static_cast<double>(total_pos)});
  }
  return curve;
}

}  // namespace

PRCurve pr_curve(const Tensor& scores, const Tensor& gt) {
  if (scores.shape() != gt.shape())
    throw ShapeError("pr_curve: shape mismatch, " + shape_str(scores.shape()) + " vs " +
                     shape_str(gt.shape()));
  require_binary("pr_curve", gt);
  std::vector<uint8_t> pos(static_cast<size_t>(gt.numel()));
  for (int64_t i = 0; i < gt.numel(); ++i) pos[static_cast<size_t>(i)] = gt[i] == 1.0 ? 1 : 0;
  return pr_curve_pooled(scores.data(), pos);
}

double aupr(const PRCurve& curve) {
  if (curve.points.empty()) throw ContractError("aupr: empty curve");
  double area = 0.0;
  double prev_recall = 0.0;
  for (const PRPoint& p : curve.points) {
    area += (p.recall - prev_recall) * p.precision;
    prev_recall = p.recall;
  }
  return area;
}

std::pair<double, double> f_and_iou(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape())
    throw ShapeError("f_and_iou: shape mismatch, " + shape_str(pred.shape()) + " vs " +
                     shape_str(gt.shape()));
  require_binary("f_and_iou", pred);
  require_binary("f_and_iou", gt);
  Counts c;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const bool p = pred[i] == 1.0, g = gt[i] == 1.0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
  }
  return f_iou_from_counts(c);
}

MetricsReport evaluate(const std::vector<Tensor>& probs, const std::vector<Tensor>& gts,
                       const std::vector<std::string>& class_names) {
  if (probs.empty()) throw ContractError("evaluate: empty dataset");
  if (probs.size() != gts.size())
    throw ContractError("evaluate: " + std::to_string(probs.size()) + " predictions vs " +
                        std::to_string(gts.size()) + " ground truths");
  const int64_t K = static_cast<int64_t>(class_names.size());
  if (K < 1) throw ContractError("evaluate: no classes named");
  for (size_t i = 0; i < probs.size(); ++i) {
    if (probs[i].shape() != gts[i].shape())
      throw ShapeError("evaluate: sample " + std::to_string(i) + " shapes differ, " +
                       shape_str(probs[i].shape()) + " vs " + shape_str(gts[i].shape()));
    if (probs[i].rank() != 3 || probs[i].dim(2) != K)
      throw ShapeError("evaluate: sample " + std::to_string(i) + " must be (H, W, " +
                       std::to_string(K) + "), got " + shape_str(probs[i].shape()));
  }

  MetricsReport report;
  report.classes = class_names;
  double sum_aupr = 0.0, sum_f = 0.0, sum_iou = 0.0;
  int64_t included = 0;

  for (int64_t k = 0; k < K; ++k) {
    std::vector<double> scores;
    std::vector<uint8_t> pos;
    Counts counts;
    for (size_t s = 0; s < probs.size(); ++s) {
      const Tensor& pr = probs[s];
      const Tensor& gt = gts[s];
      const int64_t n = pr.dim(0) * pr.dim(1);
      for (int64_t px = 0; px < n; ++px) {
        const double score = pr[px * K + k];
        const double g = gt[px * K + k];
        if (g != 0.0 && g != 1.0)
          throw ContractError("evaluate: ground truth must be 0/1, found " + std::to_string(g));
        scores.push_back(score);
        pos.push_back(g == 1.0 ? 1 : 0);
        const bool predicted = score >= 0.5;
        if (predicted && g == 1.0) ++counts.tp;
        else if (predicted) ++counts.fp;
        else if (g == 1.0) ++counts.fn;
      }
    }

    ClassMetrics cm;
    const auto [f, iou] = f_iou_from_counts(counts);
    cm.f = f;
    cm.iou = iou;
    cm.has_positives = std::find(pos.begin(), pos.end(), uint8_t{1}) != pos.end();
    if (cm.has_positives) {
      cm.aupr = aupr(pr_curve_pooled(scores, pos));
      sum_aupr += cm.aupr;
      sum_f += cm.f;
      sum_iou += cm.iou;
      ++included;
    } else {
      cm.aupr = std::numeric_limits<double>::quiet_NaN();
      report.excluded.push_back(class_names[static_cast<size_t>(k)]);
    }
    report.per_class.push_back(cm);
  }

  const double denom = included > 0 ? static_cast<double>(included)
                                    : std::numeric_limits<double>::quiet_NaN();
  report.mean_aupr = sum_aupr / denom;
  report.mean_f = sum_f / denom;
  report.mean_iou = sum_iou / denom;
  return report;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "class,AUPR,F,IoU\n";
  for (size_t k = 0; k < classes.size(); ++k) {
    const ClassMetrics& cm = per_class[k];
    out << classes[k] << "," << cm.aupr << "," << cm.f << "," << cm.iou << "\n";
  }
  out << "mean," << mean_aupr << "," << mean_f << "," << mean_iou << "\n";
  return out.str();
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  for (size_t k = 0; k < classes.size(); ++k) {
    const ClassMetrics& cm = per_class[k];
    j["per_class"][classes[k]] = {{"aupr", cm.aupr}, {"f", cm.f}, {"iou", cm.iou}};
  }
  j["means"] = {{"mAUPR", mean_aupr}, {"mF", mean_f}, {"mIoU", mean_iou}};
  j["excluded"] = excluded;
  return j.dump(2) + "\n";
}

}  // namespace m2mrf
