#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stad/assignment.hpp"
#include "stad/data.hpp"
#include "stad/geometry.hpp"
#include "stad/hungarian.hpp"
#include "stad/losses.hpp"
#include "stad/model.hpp"

namespace stad {

struct PseudoEntry {
  Box box;
  LabelVec label;           // all zero when background
  bool background = false;  // localization target only
  int matched_gt = -1;      // pooled ground-truth index, -1 for background
  double cost = 0.0;        // matching cost of the chosen column
};

struct PseudoLabelSet {
  std::vector<PseudoEntry> entries;
  double left_time = 0.0, right_time = 0.0;
  long teacher_iteration = -1;

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }

  std::size_t background_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.background;
    return n;
  }
};

// Matching cost between a prediction and an annotated box: classification
// (binary cross entropy of the predicted class scores against the label),
// smooth-L1 on image-normalized corners, and the GIoU loss, all weighted 1.
// Padding columns stand for background and carry only the classification term
// against the all-zero label.
inline CostMatrix build_cost_matrix(const std::vector<Detection>& dets,
                                    const std::vector<std::pair<Box, LabelVec>>& gts, int image_w,
                                    int image_h, double smooth_l1_beta = 1.0) {
  const int n = static_cast<int>(dets.size());
  const int m = static_cast<int>(gts.size());
  if (n < 1) throw std::invalid_argument("build_cost_matrix: need at least one prediction");
  const int cols = std::max(n, m);
  CostMatrix cm(n, cols, m);
  for (int i = 0; i < n; ++i) {
    const Detection& d = dets[static_cast<std::size_t>(i)];
    if (d.class_scores.empty())
      throw std::invalid_argument("build_cost_matrix: detection lacks class scores");
    const Box nb{d.box.x1 / image_w, d.box.y1 / image_h, d.box.x2 / image_w, d.box.y2 / image_h};
    const LabelVec zeros(d.class_scores.size(), 0);
    for (int j = 0; j < cols; ++j) {
      if (j < m) {
        const auto& [gb, gl] = gts[static_cast<std::size_t>(j)];
        const Box ngb{gb.x1 / image_w, gb.y1 / image_h, gb.x2 / image_w, gb.y2 / image_h};
        cm.at(i, j) = bce_multilabel(d.class_scores, gl) + smooth_l1(nb, ngb, smooth_l1_beta) +
                      giou_loss(d.box, gb);
      } else {
        cm.at(i, j) = bce_multilabel(d.class_scores, zeros);
      }
    }
  }
  return cm;
}

// Temporal label assignment on already-decoded teacher detections: pool the
// two neighbour keyframes' annotations (left entries first, no
// deduplication), solve the assignment, and label each teacher box with its
// column's labels or background. Teacher boxes are kept unchanged.
inline PseudoLabelSet tla_match(const std::vector<Detection>& dets, const KeyframeAnnotation& left,
                                const KeyframeAnnotation& right, int image_w, int image_h) {
  PseudoLabelSet out;
  out.left_time = left.frame_time;
  out.right_time = right.frame_time;
  if (dets.empty()) return out;

  std::vector<std::pair<Box, LabelVec>> pooled;
  for (const auto& e : left.entries) pooled.emplace_back(e.box, e.label);
  for (const auto& e : right.entries) pooled.emplace_back(e.box, e.label);

  const CostMatrix cm = build_cost_matrix(dets, pooled, image_w, image_h);
  const std::vector<int> assign = solve_assignment(cm);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    PseudoEntry e;
    e.box = dets[i].box;
    e.cost = cm.at(static_cast<int>(i), assign[i]);
    if (assign[i] < cm.real_cols) {
      e.matched_gt = assign[i];
      e.label = pooled[static_cast<std::size_t>(assign[i])].second;
    } else {
      e.background = true;
      e.label.assign(dets[i].class_scores.size(), 0);
    }
    out.entries.push_back(std::move(e));
  }
  return out;
}

// Full TLA: run the teacher on the clip with the test-time decode, then match
// against the neighbour keyframes.
template <typename T>
PseudoLabelSet tla_assign(const Tensor<T>& clip_input, int keyframe, double center_time,
                          const KeyframeAnnotation& left, const KeyframeAnnotation& right,
                          Detector<T>& teacher, const DecodeConfig& decode,
                          long teacher_iteration = -1) {
  if (!(center_time > left.frame_time && center_time < right.frame_time))
    throw std::invalid_argument("tla_assign: clip must lie strictly between its keyframes");
  const std::vector<Detection> dets = teacher.detect(clip_input, keyframe, decode);
  PseudoLabelSet out = tla_match(dets, left, right, teacher.config().width,
                                 teacher.config().height);
  out.teacher_iteration = teacher_iteration;
  return out;
}

// Baseline: keep classes scoring at least tau; boxes with nothing left become
// background.
inline PseudoLabelSet hard_threshold_labels(const std::vector<Detection>& dets, double tau) {
  PseudoLabelSet out;
  for (const auto& d : dets) {
    PseudoEntry e;
    e.box = d.box;
    e.label.assign(d.class_scores.size(), 0);
    bool any = false;
    for (std::size_t c = 0; c < d.class_scores.size(); ++c)
      if (d.class_scores[c] >= tau) {
        e.label[c] = 1;
        any = true;
      }
    e.background = !any;
    out.entries.push_back(std::move(e));
  }
  return out;
}

// Baseline: as above with one threshold per class.
inline PseudoLabelSet per_class_threshold_labels(const std::vector<Detection>& dets,
                                                 std::span<const double> taus) {
  PseudoLabelSet out;
  for (const auto& d : dets) {
    if (d.class_scores.size() != taus.size())
      throw std::invalid_argument("per_class_threshold_labels: threshold count mismatch");
    PseudoEntry e;
    e.box = d.box;
    e.label.assign(d.class_scores.size(), 0);
    bool any = false;
    for (std::size_t c = 0; c < d.class_scores.size(); ++c)
      if (d.class_scores[c] >= taus[c]) {
        e.label[c] = 1;
        any = true;
      }
    e.background = !any;
    out.entries.push_back(std::move(e));
  }
  return out;
}

// Baseline: entities present in both keyframes get linearly interpolated
// boxes and the union of the two label vectors; everything else is dropped.
inline PseudoLabelSet interpolation_labels(const KeyframeAnnotation& left,
                                           const KeyframeAnnotation& right, double t) {
  if (!(right.frame_time > left.frame_time))
    throw std::invalid_argument("interpolation_labels: keyframes out of order");
  const double u = (t - left.frame_time) / (right.frame_time - left.frame_time);
  PseudoLabelSet out;
  out.left_time = left.frame_time;
  out.right_time = right.frame_time;
  for (const auto& le : left.entries) {
    for (const auto& re : right.entries) {
      if (le.entity_id != re.entity_id) continue;
      PseudoEntry e;
      e.box = Box{(1 - u) * le.box.x1 + u * re.box.x1, (1 - u) * le.box.y1 + u * re.box.y1,
                  (1 - u) * le.box.x2 + u * re.box.x2, (1 - u) * le.box.y2 + u * re.box.y2};
      e.label.resize(le.label.size());
      for (std::size_t c = 0; c < e.label.size(); ++c)
        e.label[c] = le.label[c] || re.label[c];
      out.entries.push_back(std::move(e));
      break;
    }
  }
  return out;
}

inline LabelVec label_union(const KeyframeAnnotation& left, const KeyframeAnnotation& right,
                            std::size_t num_classes) {
  LabelVec u(num_classes, 0);
  for (const auto& e : left.entries)
    for (std::size_t c = 0; c < e.label.size() && c < num_classes; ++c) u[c] |= e.label[c];
  for (const auto& e : right.entries)
    for (std::size_t c = 0; c < e.label.size() && c < num_classes; ++c) u[c] |= e.label[c];
  return u;
}

// Removes classes absent from the union of the neighbour keyframes. Applied
// to the threshold strategies; TLA satisfies it by construction.
inline PseudoLabelSet temporal_restriction(PseudoLabelSet set, const KeyframeAnnotation& left,
                                           const KeyframeAnnotation& right) {
  if (set.entries.empty()) return set;
  const LabelVec u = label_union(left, right, set.entries.front().label.size());
  for (auto& e : set.entries) {
    bool any = false;
    for (std::size_t c = 0; c < e.label.size(); ++c) {
      e.label[c] = e.label[c] && u[c];
      any = any || e.label[c];
    }
    if (!any) e.background = true;
  }
  set.left_time = left.frame_time;
  set.right_time = right.frame_time;
  return set;
}

}  // namespace stad
