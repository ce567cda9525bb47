#pragma once

#include <string>
#include <utility>
#include <vector>

#include "m2mrf/tensor.hpp"

namespace m2mrf {

struct PRPoint {
  double threshold;
  double precision;
  double recall;
};

// One point per unique score, thresholds descending; recall is
// non-decreasing along the list.
struct PRCurve {
  std::vector<PRPoint> points;
};

// Decision rule "positive iff score >= threshold". gt must be strictly
// 0/1 and contain at least one positive (recall is undefined otherwise).
PRCurve pr_curve(const Tensor& scores, const Tensor& gt);

// Step integration sum (R_i - R_{i-1}) * P_i with R_0 = 0.
double aupr(const PRCurve& curve);

// (F, IoU) from binary maps: F = 2TP/(2TP+FP+FN), IoU = TP/(TP+FP+FN);
// both define to 1 when pred and gt are both empty.
std::pair<double, double> f_and_iou(const Tensor& pred, const Tensor& gt);

struct ClassMetrics {
  double aupr = 0.0;  // NaN when the class has no ground-truth positives
  double f = 0.0;
  double iou = 0.0;
  bool has_positives = true;
};

struct MetricsReport {
  std::vector<std::string> classes;
  std::vector<ClassMetrics> per_class;  // aligned with classes
  double mean_aupr = 0.0;
  double mean_f = 0.0;
  double mean_iou = 0.0;
  std::vector<std::string> excluded;  // classes without gt positives, left out of the means

  // rows = classes + "mean", columns = AUPR,F,IoU.
  std::string to_csv() const;
  std::string to_json() const;
};

// Micro aggregation: pixels are pooled across the whole set per class, the
// PR curve runs on raw scores, F/IoU binarize at 0.5. Means are unweighted
// over classes that have ground-truth positives.
MetricsReport evaluate(const std::vector<Tensor>& probs, const std::vector<Tensor>& gts,
                       const std::vector<std::string>& class_names);

}  // namespace m2mrf
