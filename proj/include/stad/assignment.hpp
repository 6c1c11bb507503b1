#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "stad/geometry.hpp"

namespace stad {

using LabelVec = std::vector<std::uint8_t>;  // multi-hot action labels

struct PyramidLevel {
  std::string name;
  int stride = 0;
  double range_min = 0.0;  // exclusive
  double range_max = 0.0;  // inclusive
};

struct PyramidSpec {
  std::vector<PyramidLevel> levels;

  // P3-P5 scaled to the 64..96 pixel inputs used here.
  static PyramidSpec desk_default() {
    return PyramidSpec{{{"p3", 4, 0.0, 16.0},
                        {"p4", 8, 16.0, 32.0},
                        {"p5", 16, 32.0, std::numeric_limits<double>::infinity()}}};
  }

  void validate() const {
    if (levels.empty()) throw std::invalid_argument("pyramid: no levels");
    for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
      if (levels[i].stride >= levels[i + 1].stride)
        throw std::invalid_argument("pyramid: strides must increase");
      if (levels[i].range_max != levels[i + 1].range_min)
        throw std::invalid_argument("pyramid: regression ranges must partition");
    }
    if (levels.front().range_min != 0.0 || !std::isinf(levels.back().range_max))
      throw std::invalid_argument("pyramid: ranges must cover [0, inf)");
  }
};

// Location (row i, col j) at a level maps to image point ((j+0.5)s, (i+0.5)s).
inline int level_extent(int image_extent, int stride) {
  return (image_extent + stride - 1) / stride;
}

struct LevelTargets {
  int stride = 0;
  int h = 0, w = 0;
  std::vector<std::uint8_t> actorness;          // h*w, 1 at positive locations
  std::vector<std::array<double, 4>> ltrb;      // valid where actorness = 1
  std::vector<double> centerness;               // valid where actorness = 1
  std::vector<int> gt_index;                    // -1 where negative

  std::size_t size() const { return actorness.size(); }
};

struct FcosTargets {
  std::vector<LevelTargets> levels;
  int num_pos = 0;
};

// Dense target construction with center sampling. A location is positive for
// a box when it lies inside the box, within radius*stride of the box center,
// and max(l,t,r,b) falls in the level's regression range. Overlaps resolve to
// the smaller box. A box that ends up with no location anywhere is force
//-assigned to the nearest free location on the finest level so it is never
// dropped.
inline FcosTargets assign_fcos_targets(const std::vector<Box>& gts, const PyramidSpec& spec,
                                       int image_h, int image_w, double radius_strides = 1.5) {
  if (!(radius_strides > 0.0))
    throw std::invalid_argument("assign_fcos_targets: radius must be positive");
  spec.validate();

  FcosTargets out;
  out.levels.resize(spec.levels.size());
  std::vector<double> assigned_area;
  for (std::size_t li = 0; li < spec.levels.size(); ++li) {
    const PyramidLevel& lv = spec.levels[li];
    LevelTargets& t = out.levels[li];
    t.stride = lv.stride;
    t.h = level_extent(image_h, lv.stride);
    t.w = level_extent(image_w, lv.stride);
    t.actorness.assign(static_cast<std::size_t>(t.h) * t.w, 0);
    t.ltrb.assign(t.actorness.size(), {0, 0, 0, 0});
    t.centerness.assign(t.actorness.size(), 0.0);
    t.gt_index.assign(t.actorness.size(), -1);
  }

  std::vector<char> has_location(gts.size(), 0);
  for (std::size_t li = 0; li < spec.levels.size(); ++li) {
    const PyramidLevel& lv = spec.levels[li];
    LevelTargets& t = out.levels[li];
    const double s = static_cast<double>(lv.stride);
    for (int iy = 0; iy < t.h; ++iy) {
      for (int ix = 0; ix < t.w; ++ix) {
        const double x = (ix + 0.5) * s;
        const double y = (iy + 0.5) * s;
        int best = -1;
        double best_area = std::numeric_limits<double>::infinity();
        for (std::size_t g = 0; g < gts.size(); ++g) {
          const Box& b = gts[g];
          const double l = x - b.x1, tt = y - b.y1, r = b.x2 - x, bb = b.y2 - y;
          if (l <= 0.0 || tt <= 0.0 || r <= 0.0 || bb <= 0.0) continue;
          if (std::abs(x - b.cx()) > radius_strides * s ||
              std::abs(y - b.cy()) > radius_strides * s)
            continue;
          const double m = std::max(std::max(l, r), std::max(tt, bb));
          if (!(m > lv.range_min && m <= lv.range_max)) continue;
          if (b.area() < best_area) {
            best_area = b.area();
            best = static_cast<int>(g);
          }
        }
        if (best >= 0) {
          const std::size_t idx = static_cast<std::size_t>(iy) * t.w + ix;
          const Box& b = gts[static_cast<std::size_t>(best)];
          t.actorness[idx] = 1;
          t.ltrb[idx] = {x - b.x1, y - b.y1, b.x2 - x, b.y2 - y};
          t.centerness[idx] =
              centerness_target(t.ltrb[idx][0], t.ltrb[idx][1], t.ltrb[idx][2], t.ltrb[idx][3]);
          t.gt_index[idx] = best;
          has_location[static_cast<std::size_t>(best)] = 1;
        }
      }
    }
  }

  // Fallback for boxes too small to hit any grid point.
  LevelTargets& fine = out.levels.front();
  const double fs = static_cast<double>(fine.stride);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (has_location[g]) continue;
    const Box& b = gts[g];
    int pick = -1;
    double pick_d2 = std::numeric_limits<double>::infinity();
    for (int iy = 0; iy < fine.h; ++iy) {
      for (int ix = 0; ix < fine.w; ++ix) {
        const std::size_t idx = static_cast<std::size_t>(iy) * fine.w + ix;
        if (fine.actorness[idx]) continue;
        const double dx = (ix + 0.5) * fs - b.cx();
        const double dy = (iy + 0.5) * fs - b.cy();
        const double d2 = dx * dx + dy * dy;
        if (d2 < pick_d2) {
          pick_d2 = d2;
          pick = static_cast<int>(idx);
        }
      }
    }
    if (pick < 0) continue;  // every fine location already positive
    const std::size_t idx = static_cast<std::size_t>(pick);
    const double x = (idx % fine.w + 0.5) * fs;
    const double y = (idx / fine.w + 0.5) * fs;
    fine.actorness[idx] = 1;
    fine.ltrb[idx] = {x - b.x1, y - b.y1, b.x2 - x, b.y2 - y};
    const auto& d = fine.ltrb[idx];
    const double mx = std::max(std::max(d[0], 0.0), std::max(d[2], 0.0));
    const double my = std::max(std::max(d[1], 0.0), std::max(d[3], 0.0));
    fine.centerness[idx] =
        (mx > 0.0 && my > 0.0)
            ? std::sqrt((std::max(std::min(d[0], d[2]), 0.0) / mx) *
                        (std::max(std::min(d[1], d[3]), 0.0) / my))
            : 0.0;
    fine.gt_index[idx] = static_cast<int>(g);
  }

  for (const LevelTargets& t : out.levels)
    for (std::uint8_t a : t.actorness) out.num_pos += a;
  return out;
}

struct MatchResult {
  // proposal index plus the matched ground truth's labels
  std::vector<std::pair<int, LabelVec>> positives;
  std::vector<int> ignored;
};

// Proposals with max-IoU >= iou_thresh against some ground truth box become
// positives and take that box's labels; everything else is ignored (no
// classification loss). Equal IoU goes to the lower ground-truth index.
inline MatchResult match_proposals(const std::vector<Detection>& proposals,
                                   const std::vector<std::pair<Box, LabelVec>>& gts,
                                   double iou_thresh = 0.5) {
  MatchResult res;
  for (std::size_t p = 0; p < proposals.size(); ++p) {
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(proposals[p].box, gts[g].first);
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_iou >= iou_thresh) {
      res.positives.emplace_back(static_cast<int>(p), gts[static_cast<std::size_t>(best)].second);
    } else {
      res.ignored.push_back(static_cast<int>(p));
    }
  }
  return res;
}

}  // namespace stad
