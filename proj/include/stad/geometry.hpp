#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace stad {

// Axis-aligned box in continuous pixel coordinates, corners (x1,y1)-(x2,y2).
// Areas use (x2-x1)*(y2-y1); there is no +1 pixel convention anywhere.
struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }

  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
           std::isfinite(y2) && x1 < x2 && y1 < y2;
  }
};

inline Box make_box(double x1, double y1, double x2, double y2) {
  Box b{x1, y1, x2, y2};
  if (!b.valid()) throw std::invalid_argument("invalid box");
  return b;
}

// One scored actor candidate. class_scores is empty until the action head has
// been run on the box.
struct Detection {
  Box box;
  double actorness = 0.0;               // combined location score in [0,1]
  std::vector<double> class_scores;     // per-class probabilities in [0,1]
};

inline double intersection_area(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

inline double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

// IoU minus the fraction of the enclosing box not covered by the union.
inline double giou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  const double cw = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
  const double ch = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
  const double enclosing = cw * ch;
  return inter / uni - (enclosing - uni) / enclosing;
}

// Greedy NMS by descending actorness. Ties keep input order, so results are
// deterministic for equal scores.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh) {
  if (!(iou_thresh > 0.0 && iou_thresh < 1.0))
    throw std::invalid_argument("nms iou_thresh must be in (0,1)");
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return dets[i].actorness > dets[j].actorness;
  });
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (iou(dets[idx].box, k.box) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(std::move(dets[idx]));
  }
  return kept;
}

// Center quality of a location given its distances to the four box sides:
// sqrt((min(l,r)/max(l,r)) * (min(t,b)/max(t,b))). 1 at the center, 0 on an
// edge.
inline double centerness_target(double l, double t, double r, double b) {
  if (l < 0.0 || t < 0.0 || r < 0.0 || b < 0.0)
    throw std::invalid_argument("centerness distances must be nonnegative");
  const double mx = std::max(l, r);
  const double my = std::max(t, b);
  if (mx <= 0.0 || my <= 0.0)
    throw std::invalid_argument("centerness undefined: location not inside a box");
  return std::sqrt((std::min(l, r) / mx) * (std::min(t, b) / my));
}

}  // namespace stad
