#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "stad/geometry.hpp"

namespace stad {

// All loss terms are computed in double with analytic gradients with respect
// to the predictions (written through the optional out pointers). Probabilities
// are clamped to [kProbEps, 1 - kProbEps] before any log.
inline constexpr double kProbEps = 1e-6;

inline double clamp_prob(double p) {
  return std::min(1.0 - kProbEps, std::max(kProbEps, p));
}

// Alpha-balanced focal term for a binary target. gamma = 0 reduces the term to
// alpha-weighted binary cross entropy.
inline double focal_loss(double pred_prob, int target, double alpha, double gamma,
                         double* d_pred = nullptr) {
  const double p = clamp_prob(pred_prob);
  const bool clamped = pred_prob != p;
  double value, grad;
  if (target != 0) {
    const double q = 1.0 - p;
    const double pw = std::pow(q, gamma);
    value = alpha * pw * (-std::log(p));
    grad = alpha * (gamma * std::pow(q, gamma - 1.0) * std::log(p) - pw / p);
  } else {
    const double pw = std::pow(p, gamma);
    value = (1.0 - alpha) * pw * (-std::log(1.0 - p));
    grad = (1.0 - alpha) * (-gamma * std::pow(p, gamma - 1.0) * std::log(1.0 - p) + pw / (1.0 - p));
  }
  if (d_pred) *d_pred = clamped ? 0.0 : grad;
  return value;
}

namespace detail {

// d(giou)/d(pred corner) assembled from the intersection, union and enclosing
// box partials. Not differentiable exactly at corner ties; callers only
// evaluate at generic positions.
inline void giou_grad(const Box& a, const Box& b, std::array<double, 4>& d) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const bool overlap = iw > 0.0 && ih > 0.0;
  const double inter = overlap ? iw * ih : 0.0;

  const double aw = a.width(), ah = a.height();
  const double uni = a.area() + b.area() - inter;
  const double cw = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
  const double ch = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
  const double enc = cw * ch;

  // partials of the intersection w.r.t. a = (x1,y1,x2,y2)
  std::array<double, 4> dI{0, 0, 0, 0};
  if (overlap) {
    if (a.x1 > b.x1) dI[0] = -ih;
    if (a.y1 > b.y1) dI[1] = -iw;
    if (a.x2 < b.x2) dI[2] = ih;
    if (a.y2 < b.y2) dI[3] = iw;
  }
  // partials of area(a)
  const std::array<double, 4> dA{-ah, -aw, ah, aw};
  // partials of the enclosing box area
  std::array<double, 4> dE{0, 0, 0, 0};
  if (a.x1 < b.x1) dE[0] = -ch;
  if (a.y1 < b.y1) dE[1] = -cw;
  if (a.x2 > b.x2) dE[2] = ch;
  if (a.y2 > b.y2) dE[3] = cw;

  for (int k = 0; k < 4; ++k) {
    const double dU = dA[k] - dI[k];
    const double d_iou = (dI[k] * uni - inter * dU) / (uni * uni);
    const double d_cov = (dU * enc - uni * dE[k]) / (enc * enc);  // d(U/Ac)
    d[k] = d_iou + d_cov;
  }
}

}  // namespace detail

// 1 - giou(pred, gt), in [0, 2).
inline double giou_loss(const Box& pred, const Box& gt,
                        std::array<double, 4>* d_pred = nullptr) {
  if (d_pred) {
    detail::giou_grad(pred, gt, *d_pred);
    for (double& g : *d_pred) g = -g;
  }
  return 1.0 - giou(pred, gt);
}

// Mean over classes of per-class binary cross entropy against a multi-hot
// target.
inline double bce_multilabel(std::span<const double> pred_probs,
                             std::span<const std::uint8_t> target,
                             std::span<double> d_pred = {}) {
  if (pred_probs.size() != target.size())
    throw std::invalid_argument("bce_multilabel: size mismatch");
  const std::size_t c = pred_probs.size();
  if (c == 0) throw std::invalid_argument("bce_multilabel: empty prediction");
  double sum = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    const double p = clamp_prob(pred_probs[i]);
    const bool clamped = pred_probs[i] != p;
    if (target[i]) {
      sum += -std::log(p);
      if (!d_pred.empty()) d_pred[i] = clamped ? 0.0 : -1.0 / (p * static_cast<double>(c));
    } else {
      sum += -std::log(1.0 - p);
      if (!d_pred.empty()) d_pred[i] = clamped ? 0.0 : 1.0 / ((1.0 - p) * static_cast<double>(c));
    }
  }
  return sum / static_cast<double>(c);
}

// Sum over the 4 corner deltas of the standard smooth-L1: quadratic inside
// beta, linear outside. Callers normalize boxes to [0,1] image coordinates
// first.
inline double smooth_l1(const Box& pred, const Box& gt, double beta,
                        std::array<double, 4>* d_pred = nullptr) {
  if (!(beta > 0.0)) throw std::invalid_argument("smooth_l1: beta must be positive");
  const std::array<double, 4> dp{pred.x1 - gt.x1, pred.y1 - gt.y1,
                                 pred.x2 - gt.x2, pred.y2 - gt.y2};
  double sum = 0.0;
  for (int k = 0; k < 4; ++k) {
    const double ad = std::abs(dp[k]);
    if (ad < beta) {
      sum += 0.5 * dp[k] * dp[k] / beta;
      if (d_pred) (*d_pred)[k] = dp[k] / beta;
    } else {
      sum += ad - 0.5 * beta;
      if (d_pred) (*d_pred)[k] = dp[k] > 0.0 ? 1.0 : -1.0;
    }
  }
  return sum;
}

// Binary cross entropy against a continuous target in [0,1].
inline double centerness_loss(double pred_prob, double target, double* d_pred = nullptr) {
  const double p = clamp_prob(pred_prob);
  const bool clamped = pred_prob != p;
  const double value = -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
  if (d_pred) *d_pred = clamped ? 0.0 : (-target / p + (1.0 - target) / (1.0 - p));
  return value;
}

}  // namespace stad
