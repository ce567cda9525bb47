#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "m2mrf/errors.hpp"
#include "m2mrf/metrics.hpp"
#include "m2mrf/rng.hpp"
#include "m2mrf/synth_data.hpp"
#include "test_util.hpp"

using namespace m2mrf;

namespace {

// Brute-force reference: walk every unique score as a threshold (descending)
// and count the confusion entries literally.
struct RefPoint {
  double threshold, precision, recall;
};

std::vector<RefPoint> ref_curve(const std::vector<double>& s, const std::vector<double>& g) {
  std::set<double, std::greater<double>> thresholds(s.begin(), s.end());
  std::vector<RefPoint> out;
  for (double tau : thresholds) {
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < s.size(); ++i) {
      const bool pos = s[i] >= tau;
      if (pos && g[i] == 1.0) ++tp;
      if (pos && g[i] == 0.0) ++fp;
      if (!pos && g[i] == 1.0) ++fn;
    }
    out.push_back({tau, static_cast<double>(tp) / static_cast<double>(tp + fp),
                   static_cast<double>(tp) / static_cast<double>(tp + fn)});
  }
  return out;
}

double ref_aupr(const std::vector<RefPoint>& pts) {
  double area = 0.0, prev_r = 0.0;
  for (const RefPoint& p : pts) {
    area += (p.recall - prev_r) * p.precision;
    prev_r = p.recall;
  }
  return area;
}

Tensor vec(const std::vector<double>& v) {
  return Tensor({static_cast<int64_t>(v.size())}, std::vector<double>(v));
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("pr curve on the pinned four-point example") {
    PRCurve c = pr_curve(vec({0.9, 0.8, 0.4, 0.2}), vec({1, 0, 1, 0}));
    REQUIRE(c.points.size() == 4);
    const double wantP[4] = {1.0, 0.5, 2.0 / 3.0, 0.5};
    const double wantR[4] = {0.5, 0.5, 1.0, 1.0};
    for (int i = 0; i < 4; ++i) {
      CHECK(c.points[static_cast<size_t>(i)].precision == doctest::Approx(wantP[i]).epsilon(1e-12));
      CHECK(c.points[static_cast<size_t>(i)].recall == doctest::Approx(wantR[i]).epsilon(1e-12));
    }
    CHECK(c.points[0].threshold == 0.9);
    CHECK(aupr(c) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  }

  TEST_CASE("perfect separation reaches precision 1 at recall 1") {
    PRCurve c = pr_curve(vec({0.9, 0.8, 0.1, 0.05}), vec({1, 1, 0, 0}));
    bool has_perfect = false;
    for (const auto& p : c.points) has_perfect |= (p.precision == 1.0 && p.recall == 1.0);
    CHECK(has_perfect);
    CHECK(aupr(c) == 1.0);
  }

  TEST_CASE("constant scores collapse to one point at prevalence") {
    PRCurve c = pr_curve(vec({0.3, 0.3, 0.3, 0.3}), vec({1, 0, 0, 0}));
    REQUIRE(c.points.size() == 1);
    CHECK(c.points[0].precision == 0.25);
    CHECK(c.points[0].recall == 1.0);
    CHECK(aupr(c) == 0.25);
  }

  TEST_CASE("curve matches the brute-force oracle on random cases with ties") {
    Rng rng(101);
    for (int trial = 0; trial < 50; ++trial) {
      const int64_t n = rng.uniform_int(2, 64);
      std::vector<double> s, g;
      int64_t positives = 0;
      for (int64_t i = 0; i < n; ++i) {
        s.push_back(static_cast<double>(rng.uniform_int(0, 9)) / 10.0);  // deliberate ties
        const double bit = rng.uniform() < 0.4 ? 1.0 : 0.0;
        positives += bit == 1.0;
        g.push_back(bit);
      }
      if (positives == 0) {
        g[static_cast<size_t>(rng.uniform_int(0, n - 1))] = 1.0;
      }
      PRCurve c = pr_curve(vec(s), vec(g));
      auto want = ref_curve(s, g);
      REQUIRE(c.points.size() == want.size());
      for (size_t i = 0; i < want.size(); ++i) {
        CHECK(c.points[i].threshold == want[i].threshold);
        CHECK(c.points[i].precision == doctest::Approx(want[i].precision).epsilon(1e-12));
        CHECK(c.points[i].recall == doctest::Approx(want[i].recall).epsilon(1e-12));
      }
      CHECK(aupr(c) == doctest::Approx(ref_aupr(want)).epsilon(1e-12));
      // Documented invariants: recall non-decreasing, everything in [0, 1].
      double prev = 0.0;
      for (const auto& p : c.points) {
        CHECK(p.recall >= prev);
        prev = p.recall;
        CHECK(p.precision >= 0.0);
        CHECK(p.precision <= 1.0);
      }
    }
  }

  TEST_CASE("aupr is invariant under strictly increasing transforms") {
    Rng rng(102);
    for (int trial = 0; trial < 30; ++trial) {
      const int64_t n = rng.uniform_int(3, 40);
      std::vector<double> s, g;
      for (int64_t i = 0; i < n; ++i) {
        s.push_back(rng.uniform(-2.0, 2.0));
        g.push_back(rng.uniform() < 0.5 ? 1.0 : 0.0);
      }
      g[0] = 1.0;
      const double base = aupr(pr_curve(vec(s), vec(g)));
      std::vector<double> affine(s), logistic(s), cubed(s);
      for (auto& v : affine) v = 3.0 * v + 11.0;
      for (auto& v : logistic) v = 1.0 / (1.0 + std::exp(-v));
      for (auto& v : cubed) v = v * v * v;
      CHECK(aupr(pr_curve(vec(affine), vec(g))) == doctest::Approx(base).epsilon(1e-12));
      CHECK(aupr(pr_curve(vec(logistic), vec(g))) == doctest::Approx(base).epsilon(1e-12));
      CHECK(aupr(pr_curve(vec(cubed), vec(g))) == doctest::Approx(base).epsilon(1e-12));
    }
  }

  TEST_CASE("pr curve rejects bad input") {
    CHECK_THROWS_AS(pr_curve(vec({0.5, 0.6}), vec({0, 0})), ContractError);   // no positives
    CHECK_THROWS_AS(pr_curve(vec({0.5}), vec({1, 0})), ShapeError);           // shapes differ
    CHECK_THROWS_AS(pr_curve(vec({0.5, 0.6}), vec({1, 0.5})), ContractError); // non-binary gt
  }

  TEST_CASE("f and iou on the pinned counting example") {
    // |pred| = 5, |gt| = 4, overlap 3 -> F = 6/9, IoU = 3/6.
    Tensor pred = Tensor::zeros({9});
    Tensor gt = Tensor::zeros({9});
    for (int64_t i = 0; i < 5; ++i) pred[i] = 1.0;  // cells 0..4
    for (int64_t i = 2; i < 6; ++i) gt[i] = 1.0;    // cells 2..5, overlap {2,3,4}
    auto [f, iou] = f_and_iou(pred, gt);
    CHECK(f == 6.0 / 9.0);
    CHECK(iou == 0.5);
  }

  TEST_CASE("f and iou edge cases") {
    Tensor a({4}, {1, 0, 1, 0});
    auto [f1, iou1] = f_and_iou(a, a);
    CHECK(f1 == 1.0);
    CHECK(iou1 == 1.0);
    Tensor b({4}, {0, 1, 0, 1});
    auto [f0, iou0] = f_and_iou(a, b);
    CHECK(f0 == 0.0);
    CHECK(iou0 == 0.0);
    Tensor z = Tensor::zeros({4});
    auto [fz, iouz] = f_and_iou(z, z);
    CHECK(fz == 1.0);
    CHECK(iouz == 1.0);
  }

  TEST_CASE("iou never exceeds f and both sit in [0, 1]") {
    Rng rng(103);
    for (int trial = 0; trial < 40; ++trial) {
      Tensor p = Tensor::zeros({30});
      Tensor g = Tensor::zeros({30});
      for (int64_t i = 0; i < 30; ++i) {
        p[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
        g[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
      }
      auto [f, iou] = f_and_iou(p, g);
      CHECK(iou <= f);
      CHECK(f <= 1.0);
      CHECK(iou >= 0.0);
      if (f > 0.0) CHECK(f == doctest::Approx(2.0 * iou / (1.0 + iou)).epsilon(1e-12));
    }
  }

  TEST_CASE("evaluate: perfect predictions give all ones") {
    Rng rng(104);
    std::vector<Tensor> probs, gts;
    for (int s = 0; s < 2; ++s) {
      Tensor g = Tensor::zeros({6, 6, 4});
      for (int64_t c = 0; c < 4; ++c)  // at least one positive per class
        g[(static_cast<int64_t>(s) * 7 + c * 5) * 4 + c] = 1.0;
      for (int64_t i = 0; i < g.numel(); ++i)
        if (rng.uniform() < 0.2) g[i] = 1.0;
      Tensor p = Tensor::zeros({6, 6, 4});
      for (int64_t i = 0; i < g.numel(); ++i) p[i] = g[i] == 1.0 ? 0.9 : 0.1;
      gts.push_back(g);
      probs.push_back(p);
    }
    MetricsReport r = evaluate(probs, gts, lesion_class_names());
    CHECK(r.excluded.empty());
    for (const auto& cm : r.per_class) {
      CHECK(cm.aupr == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(cm.f == 1.0);
      CHECK(cm.iou == 1.0);
    }
    CHECK(r.mean_aupr == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.mean_f == 1.0);
    CHECK(r.mean_iou == 1.0);
  }

  TEST_CASE("evaluate: pooled curves equal the concatenation oracle and duplication is free") {
    Rng rng(105);
    std::vector<Tensor> probs, gts;
    std::vector<std::vector<double>> flat_s(4), flat_g(4);
    for (int s = 0; s < 3; ++s) {
      Tensor p = Tensor::zeros({4, 5, 4});
      Tensor g = Tensor::zeros({4, 5, 4});
      for (int64_t i = 0; i < 4 * 5; ++i)
        for (int64_t c = 0; c < 4; ++c) {
          const double score = rng.uniform();
          const double bit = rng.uniform() < 0.3 ? 1.0 : 0.0;
          p[i * 4 + c] = score;
          g[i * 4 + c] = bit;
          flat_s[static_cast<size_t>(c)].push_back(score);
          flat_g[static_cast<size_t>(c)].push_back(bit);
        }
      // Guarantee a positive per class per pool; the flat mirror stores one
      // entry per cell per sample, so cell c of this sample sits at s*20 + c.
      for (int64_t c = 0; c < 4; ++c) {
        g[c * 4 + c] = 1.0;
        flat_g[static_cast<size_t>(c)][static_cast<size_t>(s * 20 + c)] = 1.0;
      }
      probs.push_back(p);
      gts.push_back(g);
    }
    MetricsReport r = evaluate(probs, gts, lesion_class_names());
    for (size_t c = 0; c < 4; ++c) {
      const double want = ref_aupr(ref_curve(flat_s[c], flat_g[c]));
      CHECK(r.per_class[c].aupr == doctest::Approx(want).epsilon(1e-12));
    }

    // Feeding every sample twice doubles all confusion counts, changing nothing.
    std::vector<Tensor> probs2 = probs, gts2 = gts;
    probs2.insert(probs2.end(), probs.begin(), probs.end());
    gts2.insert(gts2.end(), gts.begin(), gts.end());
    MetricsReport r2 = evaluate(probs2, gts2, lesion_class_names());
    for (size_t c = 0; c < 4; ++c) {
      CHECK(r2.per_class[c].aupr == doctest::Approx(r.per_class[c].aupr).epsilon(1e-12));
      CHECK(r2.per_class[c].f == doctest::Approx(r.per_class[c].f).epsilon(1e-12));
      CHECK(r2.per_class[c].iou == doctest::Approx(r.per_class[c].iou).epsilon(1e-12));
    }
    CHECK(r2.mean_aupr == doctest::Approx(r.mean_aupr).epsilon(1e-12));
  }

  TEST_CASE("evaluate: classes without ground truth are excluded from means") {
    Tensor g = Tensor::zeros({4, 4, 4});
    g[0 * 4 + 0] = 1.0;  // only class 0 has gt
    Tensor p = Tensor::zeros({4, 4, 4});
    for (int64_t i = 0; i < p.numel(); ++i) p[i] = (i % 4 == 0) ? (g[i] == 1.0 ? 0.9 : 0.1) : 0.2;
    MetricsReport r = evaluate({p}, {g}, lesion_class_names());
    REQUIRE(r.excluded.size() == 3);
    CHECK(r.excluded[0] == lesion_class_names()[1]);
    CHECK(r.per_class[1].has_positives == false);
    CHECK(std::isnan(r.per_class[1].aupr));
    // Means average only class 0.
    CHECK(r.mean_aupr == doctest::Approx(r.per_class[0].aupr));
    CHECK(r.mean_f == doctest::Approx(r.per_class[0].f));
    CHECK_THROWS_AS(evaluate({}, {}, lesion_class_names()), ContractError);
  }

  TEST_CASE("report serialization carries every row") {
    Tensor g = Tensor::zeros({4, 4, 4});
    for (int64_t c = 0; c < 4; ++c) g[c * 4 + c] = 1.0;
    Tensor p = Tensor::zeros({4, 4, 4});
    for (int64_t i = 0; i < p.numel(); ++i) p[i] = g[i] == 1.0 ? 0.8 : 0.3;
    MetricsReport r = evaluate({p}, {g}, lesion_class_names());

    const std::string csv = r.to_csv();
    CHECK(csv.rfind("class,AUPR,F,IoU\n", 0) == 0);
    size_t rows = 0;
    for (char ch : csv) rows += ch == '\n';
    CHECK(rows == 6);  // header + 4 classes + mean
    CHECK(csv.find("\nmean,") != std::string::npos);
    for (const std::string& name : lesion_class_names())
      CHECK(csv.find(name + ",") != std::string::npos);

    const auto j = nlohmann::json::parse(r.to_json());
    CHECK(j["means"]["mAUPR"].get<double>() == doctest::Approx(r.mean_aupr));
    CHECK(j["per_class"].size() == 4);
    for (const std::string& name : lesion_class_names())
      CHECK(j["per_class"].contains(name));
    CHECK(j["excluded"].is_array());
  }
}
