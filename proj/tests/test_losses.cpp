#include "stad/losses.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <functional>

#include "stad/assignment.hpp"
#include "stad/rng.hpp"

using namespace stad;

namespace {

// Central finite difference of a scalar function.
double fd(const std::function<double(double)>& f, double x, double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

void expect_close_rel(double got, double want, double rel, double abs_floor = 1e-8) {
  const double tol = std::max(abs_floor, rel * std::abs(want));
  EXPECT_NEAR(got, want, tol) << "analytic " << got << " vs numeric " << want;
}

Box random_box(Rng& rng) {
  const double x1 = rng.uniform(0.0, 50.0);
  const double y1 = rng.uniform(0.0, 50.0);
  return Box{x1, y1, x1 + rng.uniform(1.0, 30.0), y1 + rng.uniform(1.0, 30.0)};
}

// Box coordinates at least `gap` away from every non-smooth point of the
// giou/smooth-l1 surfaces with respect to the other box.
bool away_from_kinks(const Box& a, const Box& b, double gap) {
  const double coords_a[4] = {a.x1, a.y1, a.x2, a.y2};
  const double coords_b[4] = {b.x1, b.y1, b.x2, b.y2};
  for (double ca : coords_a)
    for (double cb : coords_b)
      if (std::abs(ca - cb) < gap) return false;
  // intersection edge transitions
  if (std::abs(std::min(a.x2, b.x2) - std::max(a.x1, b.x1)) < gap) return false;
  if (std::abs(std::min(a.y2, b.y2) - std::max(a.y1, b.y1)) < gap) return false;
  return true;
}

}  // namespace

TEST(FocalLoss, WorkedValues) {
  EXPECT_NEAR(focal_loss(1.0 - 1e-6, 1, 0.25, 2.0), 0.0, 1e-9);
  EXPECT_NEAR(focal_loss(0.9, 1, 0.25, 2.0), 0.25 * 0.01 * -std::log(0.9), 1e-12);
  EXPECT_NEAR(focal_loss(0.5, 0, 0.25, 2.0), 0.75 * 0.25 * -std::log(0.5), 1e-12);
}

TEST(FocalLoss, GammaZeroIsWeightedBce) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const double p = rng.uniform(0.05, 0.95);
    const int t = rng.bernoulli(0.5);
    const double bce = t ? -std::log(p) : -std::log(1.0 - p);
    EXPECT_NEAR(focal_loss(p, t, 0.5, 0.0), 0.5 * bce, 1e-9);
  }
}

TEST(FocalLoss, GradientMatchesFiniteDifference) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const double p = rng.uniform(0.05, 0.95);
    const int t = rng.bernoulli(0.5);
    const double alpha = rng.uniform(0.1, 0.9);
    const double gamma = rng.uniform(0.0, 3.0);
    double g = 0.0;
    focal_loss(p, t, alpha, gamma, &g);
    const double num = fd([&](double x) { return focal_loss(x, t, alpha, gamma); }, p);
    expect_close_rel(g, num, 1e-4);
  }
}

TEST(GiouLoss, WorkedValues) {
  EXPECT_NEAR(giou_loss(Box{1, 1, 4, 4}, Box{1, 1, 4, 4}), 0.0, 1e-12);
  EXPECT_NEAR(giou_loss(Box{0, 0, 2, 2}, Box{1, 1, 3, 3}), 1.0 + 5.0 / 63.0, 1e-12);
  EXPECT_NEAR(giou_loss(Box{0, 0, 1, 1}, Box{9, 9, 10, 10}), 1.98, 1e-12);
}

TEST(GiouLoss, GradientMatchesFiniteDifference) {
  Rng rng(3);
  int done = 0;
  while (done < 100) {
    const Box pred = random_box(rng), gt = random_box(rng);
    if (!away_from_kinks(pred, gt, 1e-3)) continue;
    ++done;
    std::array<double, 4> g{};
    giou_loss(pred, gt, &g);
    double coords[4] = {pred.x1, pred.y1, pred.x2, pred.y2};
    for (int k = 0; k < 4; ++k) {
      const double num = fd(
          [&](double x) {
            double c[4] = {coords[0], coords[1], coords[2], coords[3]};
            c[k] = x;
            return giou_loss(Box{c[0], c[1], c[2], c[3]}, gt);
          },
          coords[k]);
      expect_close_rel(g[static_cast<std::size_t>(k)], num, 1e-4);
    }
  }
}

TEST(BceMultilabel, WorkedValues) {
  const std::vector<double> p1{0.5};
  const LabelVec t1{1};
  EXPECT_NEAR(bce_multilabel(p1, t1), std::log(2.0), 1e-12);
  const std::vector<double> p2{0.5, 0.5};
  const LabelVec t2{1, 0};
  EXPECT_NEAR(bce_multilabel(p2, t2), std::log(2.0), 1e-12);
  const std::vector<double> perfect{1.0 - 1e-6, 1e-6};
  EXPECT_NEAR(bce_multilabel(perfect, t2), 0.0, 1e-5);
}

TEST(BceMultilabel, GradientMatchesFiniteDifference) {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const int c = rng.uniform_int(1, 6);
    std::vector<double> p(static_cast<std::size_t>(c));
    LabelVec t(static_cast<std::size_t>(c));
    for (int k = 0; k < c; ++k) {
      p[static_cast<std::size_t>(k)] = rng.uniform(0.05, 0.95);
      t[static_cast<std::size_t>(k)] = rng.bernoulli(0.5);
    }
    std::vector<double> g(static_cast<std::size_t>(c));
    bce_multilabel(p, t, g);
    for (int k = 0; k < c; ++k) {
      const double num = fd(
          [&](double x) {
            std::vector<double> q = p;
            q[static_cast<std::size_t>(k)] = x;
            return bce_multilabel(q, t);
          },
          p[static_cast<std::size_t>(k)]);
      expect_close_rel(g[static_cast<std::size_t>(k)], num, 1e-4);
    }
  }
}

TEST(SmoothL1, WorkedValues) {
  EXPECT_DOUBLE_EQ(smooth_l1(Box{1, 2, 3, 4}, Box{1, 2, 3, 4}, 1.0), 0.0);
  EXPECT_NEAR(smooth_l1(Box{0.1, 0, 1, 1}, Box{0, 0, 1, 1}, 1.0), 0.005, 1e-12);
  EXPECT_NEAR(smooth_l1(Box{2, 0, 5, 1}, Box{0, 0, 5, 1}, 1.0), 1.5, 1e-12);
}

TEST(SmoothL1, GradientMatchesFiniteDifference) {
  Rng rng(5);
  int done = 0;
  while (done < 100) {
    const Box pred = random_box(rng), gt = random_box(rng);
    // stay away from the quadratic/linear switch at |delta| = beta
    const double beta = 1.0;
    const double deltas[4] = {pred.x1 - gt.x1, pred.y1 - gt.y1, pred.x2 - gt.x2, pred.y2 - gt.y2};
    bool ok = true;
    for (double d : deltas)
      if (std::abs(std::abs(d) - beta) < 1e-3 || std::abs(d) < 1e-3) ok = false;
    if (!ok) continue;
    ++done;
    std::array<double, 4> g{};
    smooth_l1(pred, gt, beta, &g);
    double coords[4] = {pred.x1, pred.y1, pred.x2, pred.y2};
    for (int k = 0; k < 4; ++k) {
      const double num = fd(
          [&](double x) {
            double c[4] = {coords[0], coords[1], coords[2], coords[3]};
            c[k] = x;
            return smooth_l1(Box{c[0], c[1], c[2], c[3]}, gt, beta);
          },
          coords[k]);
      expect_close_rel(g[static_cast<std::size_t>(k)], num, 1e-4);
    }
  }
}

TEST(SmoothL1, RejectsBadBeta) {
  EXPECT_THROW(smooth_l1(Box{0, 0, 1, 1}, Box{0, 0, 1, 1}, 0.0), std::invalid_argument);
}

TEST(CenternessLoss, WorkedValues) {
  EXPECT_NEAR(centerness_loss(1.0 - 1e-6, 1.0), 0.0, 1e-5);
  EXPECT_NEAR(centerness_loss(0.5, 1.0), std::log(2.0), 1e-12);
  EXPECT_NEAR(centerness_loss(0.5, 0.5), std::log(2.0), 1e-12);
}

TEST(CenternessLoss, GradientMatchesFiniteDifference) {
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    const double p = rng.uniform(0.05, 0.95);
    const double t = rng.uniform();
    double g = 0.0;
    centerness_loss(p, t, &g);
    const double num = fd([&](double x) { return centerness_loss(x, t); }, p);
    expect_close_rel(g, num, 1e-4);
  }
}

TEST(Losses, NonnegativeAndZeroAtPerfect) {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    EXPECT_GE(focal_loss(rng.uniform(0.01, 0.99), rng.bernoulli(0.5), 0.25, 2.0), 0.0);
    const Box b = random_box(rng);
    EXPECT_GE(giou_loss(random_box(rng), b), 0.0);
    EXPECT_NEAR(giou_loss(b, b), 0.0, 1e-6);
    EXPECT_NEAR(smooth_l1(b, b, 1.0), 0.0, 1e-6);
  }
}
