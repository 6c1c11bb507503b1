#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stad/assignment.hpp"
#include "stad/geometry.hpp"
#include "stad/rng.hpp"
#include "stad/tensor.hpp"

namespace stad {

// Sparse keyframe annotation: every actor visible on the frame with its
// multi-hot action labels and a per-video entity id.
struct KeyframeAnnotation {
  double frame_time = 0.0;
  struct Entry {
    Box box;
    LabelVec label;
    int entity_id = 0;
  };
  std::vector<Entry> entries;
};

// Action classes of the synthetic benchmark.
enum ActionClass : int {
  kMoveLeft = 0,
  kMoveRight = 1,
  kMoveUp = 2,
  kMoveDown = 3,
  kOscillate = 4,
  kLargeSize = 5,
};
inline const char* action_class_name(int c) {
  static const char* names[] = {"move-left", "move-right", "move-up",
                                "move-down", "oscillate", "large-size"};
  return (c >= 0 && c < 6) ? names[c] : "?";
}

struct DataConfig {
  int num_videos = 200;
  int frames_per_video = 64;
  int canvas = 64;
  int num_classes = 6;
  int keyframe_interval = 8;
  double fps = 8.0;
  int min_actors = 1;
  int max_actors = 3;
  double label_dropout = 0.05;
  double large_prob = 0.10;
  double bg_level = 0.08;
  double bg_noise = 0.05;

  void validate() const {
    if (num_classes != 6) throw std::invalid_argument("dataset: class set is fixed at 6");
    if (canvas < 32) throw std::invalid_argument("dataset: canvas too small");
    if (frames_per_video < 2 * keyframe_interval + 1)
      throw std::invalid_argument("dataset: need at least two keyframe gaps");
    // the largest actor plus travel margin has to fit the canvas
    if (canvas - 32 < 8) throw std::invalid_argument("dataset: actors cannot fit canvas");
  }
};

struct Video {
  int id = 0;
  int frames = 0, h = 0, w = 0;
  std::vector<std::uint8_t> pixels;  // frames*h*w grayscale

  const std::uint8_t* frame_ptr(int f) const {
    return pixels.data() + static_cast<std::size_t>(f) * h * w;
  }
};

struct LabeledClipDesc {
  int video = 0;
  int frame = 0;  // annotated keyframe
};

struct UnlabeledClipDesc {
  int video = 0;
  int frame = 0;      // center frame, strictly between two keyframes
  int left_frame = 0;
  int right_frame = 0;
};

struct DatasetIndex {
  std::vector<LabeledClipDesc> labeled;
  std::vector<UnlabeledClipDesc> unlabeled;
  // (video, keyframe) -> annotation
  std::map<std::pair<int, int>, KeyframeAnnotation> annotations;
  int num_classes = 6;

  const KeyframeAnnotation& annotation(int video, int frame) const {
    auto it = annotations.find({video, frame});
    if (it == annotations.end()) throw std::out_of_range("no annotation for keyframe");
    return it->second;
  }
};

namespace detail {

struct MotionPattern {
  int dirx = 0, diry = 0;  // -1, 0, +1
  bool oscillate = false;
};

// Weighted pattern table; the skew produces the long-tailed class histogram.
inline const std::vector<std::pair<MotionPattern, double>>& pattern_table() {
  static const std::vector<std::pair<MotionPattern, double>> t = {
      {{1, 0, false}, 34.0}, {{-1, 0, false}, 18.0}, {{0, 1, false}, 10.0},
      {{0, -1, false}, 7.0}, {{1, 1, false}, 6.0},   {{1, -1, false}, 5.0},
      {{-1, 1, false}, 4.0}, {{-1, -1, false}, 3.0}, {{1, 0, true}, 6.0},
      {{-1, 0, true}, 4.0},  {{0, 1, true}, 2.5},    {{0, -1, true}, 2.0},
      {{0, 0, true}, 2.5},
  };
  return t;
}

inline MotionPattern sample_pattern(Rng& rng) {
  const auto& table = pattern_table();
  double total = 0.0;
  for (const auto& [p, w] : table) total += w;
  double x = rng.uniform() * total;
  for (const auto& [p, w] : table) {
    if (x < w) return p;
    x -= w;
  }
  return table.back().first;
}

struct Segment {
  int from = 0, to = 0;  // frame range [from, to)
  MotionPattern pattern;
  double vx = 0.0, vy = 0.0;       // px per frame
  double osc_amp = 0.0, osc_period = 12.0, osc_phase = 0.0;
  int osc_axis = 0;  // 0 = x, 1 = y
  double x0 = 0.0, y0 = 0.0;       // center at `from`
};

struct ActorTrack {
  double w = 10.0, h = 10.0;
  double intensity = 0.8;
  bool large = false;
  std::vector<Segment> segments;

  void center_at(int f, double* cx, double* cy) const {
    const Segment* s = &segments.back();
    for (const auto& seg : segments)
      if (f >= seg.from && f < seg.to) {
        s = &seg;
        break;
      }
    const double dt = static_cast<double>(f - s->from);
    double x = s->x0 + s->vx * dt;
    double y = s->y0 + s->vy * dt;
    if (s->pattern.oscillate) {
      const double o = s->osc_amp * std::sin(2.0 * M_PI * dt / s->osc_period + s->osc_phase);
      if (s->osc_axis == 0)
        x += o;
      else
        y += o;
    }
    *cx = x;
    *cy = y;
  }

  Box box_at(int f) const {
    double cx, cy;
    center_at(f, &cx, &cy);
    return Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  }

  LabelVec labels_at(int f, int num_classes) const {
    const Segment* s = &segments.back();
    for (const auto& seg : segments)
      if (f >= seg.from && f < seg.to) {
        s = &seg;
        break;
      }
    LabelVec l(static_cast<std::size_t>(num_classes), 0);
    if (s->pattern.dirx < 0) l[kMoveLeft] = 1;
    if (s->pattern.dirx > 0) l[kMoveRight] = 1;
    if (s->pattern.diry < 0) l[kMoveUp] = 1;
    if (s->pattern.diry > 0) l[kMoveDown] = 1;
    if (s->pattern.oscillate) l[kOscillate] = 1;
    if (large) l[kLargeSize] = 1;
    return l;
  }
};

// Velocity and start point for one segment such that the center stays inside
// [lo, hi] along each axis for the whole segment. Oscillation only ever sits
// on a zero-velocity axis.
inline void plan_segment(Segment& seg, const DataConfig& cfg, double half_w, double half_h,
                         std::optional<std::pair<double, double>> start, Rng& rng) {
  const double len = std::max(1.0, static_cast<double>(seg.to - seg.from));
  const double lo_x = half_w + 1.0, hi_x = cfg.canvas - half_w - 1.0;
  const double lo_y = half_h + 1.0, hi_y = cfg.canvas - half_h - 1.0;

  if (seg.pattern.oscillate) {
    const double max_amp = 0.5 * std::min(hi_x - lo_x, hi_y - lo_y) - 0.5;
    seg.osc_amp = std::min(rng.uniform(2.0, 4.0), std::max(0.0, max_amp));
    seg.osc_period = rng.uniform(8.0, 16.0);
    seg.osc_phase = rng.uniform(0.0, 2.0 * M_PI);
    if (seg.pattern.dirx == 0 && seg.pattern.diry == 0)
      seg.osc_axis = rng.bernoulli(0.5) ? 1 : 0;
    else
      seg.osc_axis = seg.pattern.dirx != 0 ? 1 : 0;  // wobble across the motion
  }

  auto plan_axis = [&](int dir, double lo, double hi, double osc, std::optional<double> fixed,
                       double* v, double* p0) {
    const double room = hi - lo;
    double speed = dir == 0 ? 0.0 : rng.uniform(0.9, 2.0);
    if (dir != 0) speed = std::min(speed, std::max(0.0, room - osc) / len);
    *v = dir * speed;
    if (fixed) {
      *p0 = std::min(hi, std::max(lo, *fixed));
      // clamp speed so the rest of the segment stays inside
      if (dir > 0) {
        const double avail = hi - osc - *p0;
        if (*v * len > avail) *v = std::max(0.0, avail) / len;
      } else if (dir < 0) {
        const double avail = *p0 - lo - osc;
        if (-*v * len > avail) *v = -std::max(0.0, avail) / len;
      }
    } else {
      const double travel = *v * len;
      double s_lo = lo + osc + std::max(0.0, -travel);
      double s_hi = hi - osc - std::max(0.0, travel);
      if (s_hi < s_lo) {
        // rounding ate the slack; park mid-interval and damp the travel to
        // whatever room is actually left
        *p0 = 0.5 * (s_lo + s_hi);
        if (dir > 0)
          *v = std::max(0.0, hi - osc - *p0) / len;
        else if (dir < 0)
          *v = -std::max(0.0, *p0 - lo - osc) / len;
      } else {
        *p0 = rng.uniform(s_lo, s_hi);
      }
    }
  };

  const double osc_x = seg.osc_axis == 0 && seg.pattern.oscillate ? seg.osc_amp : 0.0;
  const double osc_y = seg.osc_axis == 1 && seg.pattern.oscillate ? seg.osc_amp : 0.0;
  std::optional<double> sx, sy;
  if (start) {
    sx = start->first;
    sy = start->second;
  }
  plan_axis(seg.pattern.dirx, lo_x, hi_x, osc_x, sx, &seg.vx, &seg.x0);
  plan_axis(seg.pattern.diry, lo_y, hi_y, osc_y, sy, &seg.vy, &seg.y0);

  // A fixed start can sit close to a wall; shrink the wobble to fit.
  if (seg.pattern.oscillate && start) {
    const bool on_x = seg.osc_axis == 0;
    const double p0 = on_x ? seg.x0 : seg.y0;
    const double lo = on_x ? lo_x : lo_y;
    const double hi = on_x ? hi_x : hi_y;
    seg.osc_amp = std::min(seg.osc_amp, std::max(0.0, std::min(p0 - lo, hi - p0)));
  }
}

// A label needs visible motion; drop directions the planner had to stall and
// wobbles that got squeezed flat.
inline void prune_stalled(Segment& seg) {
  if (seg.pattern.dirx != 0 && std::abs(seg.vx) < 0.35) {
    seg.pattern.dirx = 0;
    seg.vx = 0.0;
  }
  if (seg.pattern.diry != 0 && std::abs(seg.vy) < 0.35) {
    seg.pattern.diry = 0;
    seg.vy = 0.0;
  }
  if (seg.pattern.oscillate && seg.osc_amp < 1.5) {
    seg.pattern.oscillate = false;
    seg.osc_amp = 0.0;
  }
}

inline bool segment_labeled(const Segment& seg) {
  return seg.pattern.dirx != 0 || seg.pattern.diry != 0 || seg.pattern.oscillate;
}

// Final fallback: march toward whichever wall is furthest.
inline void plan_escape(Segment& seg, const DataConfig& cfg, double half_w, double half_h,
                        std::pair<double, double> start) {
  const double len = std::max(1.0, static_cast<double>(seg.to - seg.from));
  const double lo_x = half_w + 1.0, hi_x = cfg.canvas - half_w - 1.0;
  const double lo_y = half_h + 1.0, hi_y = cfg.canvas - half_h - 1.0;
  const double px = std::min(hi_x, std::max(lo_x, start.first));
  const double py = std::min(hi_y, std::max(lo_y, start.second));
  const double rooms[4] = {px - lo_x, hi_x - px, py - lo_y, hi_y - py};
  int best = 0;
  for (int k = 1; k < 4; ++k)
    if (rooms[k] > rooms[best]) best = k;
  seg = Segment{seg.from, seg.to, {}, 0, 0, 0, 12, 0, 0, px, py};
  const double speed = std::min(1.5, 0.9 * rooms[best] / len);
  switch (best) {
    case 0: seg.pattern.dirx = -1; seg.vx = -speed; break;
    case 1: seg.pattern.dirx = 1; seg.vx = speed; break;
    case 2: seg.pattern.diry = -1; seg.vy = -speed; break;
    case 3: seg.pattern.diry = 1; seg.vy = speed; break;
  }
}

inline ActorTrack make_track(const DataConfig& cfg, Rng& rng) {
  ActorTrack a;
  a.large = rng.bernoulli(cfg.large_prob);
  const double base = a.large ? rng.uniform(20.0, 28.0) : rng.uniform(8.0, 16.0);
  const double aspect = rng.uniform(0.75, 1.3);
  a.w = base * aspect;
  a.h = base / aspect;
  a.intensity = rng.uniform(0.55, 0.95);

  int switch_frame =
      cfg.frames_per_video / 2 + rng.uniform_int(-cfg.keyframe_interval, cfg.keyframe_interval);
  switch_frame = std::min(cfg.frames_per_video - 1, std::max(1, switch_frame));
  Segment s1, s2;
  s1.from = 0;
  s1.to = switch_frame;
  s2.from = switch_frame;
  s2.to = cfg.frames_per_video;

  for (int attempt = 0;; ++attempt) {
    s1.pattern = sample_pattern(rng);
    plan_segment(s1, cfg, a.w / 2, a.h / 2, std::nullopt, rng);
    prune_stalled(s1);
    if (segment_labeled(s1)) break;
    if (attempt >= 11) {
      plan_escape(s1, cfg, a.w / 2, a.h / 2, {cfg.canvas / 2.0, cfg.canvas / 2.0});
      break;
    }
  }
  a.segments = {s1};
  double cx, cy;
  a.center_at(std::max(0, switch_frame - 1), &cx, &cy);
  for (int attempt = 0;; ++attempt) {
    s2.pattern = sample_pattern(rng);
    plan_segment(s2, cfg, a.w / 2, a.h / 2, std::make_pair(cx, cy), rng);
    prune_stalled(s2);
    if (segment_labeled(s2)) break;
    if (attempt >= 11) {
      plan_escape(s2, cfg, a.w / 2, a.h / 2, {cx, cy});
      break;
    }
  }
  a.segments = {s1, s2};
  return a;
}

inline void render_frame(const DataConfig& cfg, const std::vector<ActorTrack>& actors, int frame,
                         Rng& noise_rng, std::uint8_t* out) {
  const int n = cfg.canvas;
  std::vector<float> img(static_cast<std::size_t>(n) * n);
  for (auto& p : img)
    p = static_cast<float>(cfg.bg_level + noise_rng.uniform() * cfg.bg_noise);
  for (const auto& a : actors) {
    const Box b = a.box_at(frame);
    const int y_lo = std::max(0, static_cast<int>(std::floor(b.y1)));
    const int y_hi = std::min(n - 1, static_cast<int>(std::ceil(b.y2)));
    const int x_lo = std::max(0, static_cast<int>(std::floor(b.x1)));
    const int x_hi = std::min(n - 1, static_cast<int>(std::ceil(b.x2)));
    for (int y = y_lo; y <= y_hi; ++y) {
      const double cy = std::min(b.y2, static_cast<double>(y + 1)) - std::max(b.y1, static_cast<double>(y));
      if (cy <= 0) continue;
      for (int x = x_lo; x <= x_hi; ++x) {
        const double cx = std::min(b.x2, static_cast<double>(x + 1)) - std::max(b.x1, static_cast<double>(x));
        if (cx <= 0) continue;
        const double cov = cx * cy;
        float& px = img[static_cast<std::size_t>(y) * n + x];
        px = static_cast<float>(px * (1.0 - cov) + a.intensity * cov);
      }
    }
  }
  for (std::size_t i = 0; i < img.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::lround(std::min(1.0f, std::max(0.0f, img[i])) * 255.0f));
}

}  // namespace detail

struct SyntheticDataset {
  DataConfig config;
  std::uint64_t seed = 0;
  std::vector<Video> videos;
  DatasetIndex index;
};

// Deterministic synthetic benchmark: moving bright rectangles on a noisy dark
// canvas, annotated every keyframe_interval frames, actions constant over two
// temporal segments per actor.
inline SyntheticDataset generate_synthetic(const DataConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SyntheticDataset ds;
  ds.config = cfg;
  ds.seed = seed;
  ds.index.num_classes = cfg.num_classes;

  for (int v = 0; v < cfg.num_videos; ++v) {
    Rng rng(mix_seed(seed, 0x5eedu + static_cast<std::uint64_t>(v)));
    const int n_actors = rng.uniform_int(cfg.min_actors, cfg.max_actors);
    std::vector<detail::ActorTrack> actors;
    for (int i = 0; i < n_actors; ++i) actors.push_back(detail::make_track(cfg, rng));

    Video video;
    video.id = v;
    video.frames = cfg.frames_per_video;
    video.h = video.w = cfg.canvas;
    video.pixels.resize(static_cast<std::size_t>(video.frames) * video.h * video.w);
    for (int f = 0; f < video.frames; ++f) {
      Rng noise(mix_seed(seed, static_cast<std::uint64_t>(v) * 131071u + 17u,
                         static_cast<std::uint64_t>(f)));
      detail::render_frame(cfg, actors, f, noise, video.pixels.data() +
                                                     static_cast<std::size_t>(f) * video.h * video.w);
    }

    // keyframe annotations with occasional label dropout
    std::vector<int> keyframes;
    for (int f = 0; f < cfg.frames_per_video; f += cfg.keyframe_interval) keyframes.push_back(f);
    for (int f : keyframes) {
      KeyframeAnnotation ann;
      ann.frame_time = f / cfg.fps;
      for (int i = 0; i < n_actors; ++i) {
        KeyframeAnnotation::Entry e;
        e.box = actors[static_cast<std::size_t>(i)].box_at(f);
        e.label = actors[static_cast<std::size_t>(i)].labels_at(f, cfg.num_classes);
        e.entity_id = i;
        if (cfg.label_dropout > 0.0) {
          int positives = 0;
          for (auto b : e.label) positives += b;
          for (std::size_t c = 0; c < e.label.size() && positives > 1; ++c) {
            if (e.label[c] && rng.bernoulli(cfg.label_dropout)) {
              e.label[c] = 0;
              --positives;
            }
          }
        }
        ann.entries.push_back(std::move(e));
      }
      ds.index.annotations[{v, f}] = std::move(ann);
      ds.index.labeled.push_back({v, f});
    }
    for (int f = keyframes.front(); f < keyframes.back(); ++f) {
      if (f % cfg.keyframe_interval == 0) continue;
      const int left = (f / cfg.keyframe_interval) * cfg.keyframe_interval;
      ds.index.unlabeled.push_back({v, f, left, left + cfg.keyframe_interval});
    }
    ds.videos.push_back(std::move(video));
  }
  return ds;
}

// View transform applied at clip extraction: scale then crop offset, so a
// source box maps to box*scale - offset.
struct ViewTransform {
  double scale = 1.0;
  double ox = 0.0, oy = 0.0;

  Box apply(const Box& b) const {
    return Box{b.x1 * scale - ox, b.y1 * scale - oy, b.x2 * scale - ox, b.y2 * scale - oy};
  }
};

inline ViewTransform identity_view() { return {1.0, 0.0, 0.0}; }

// Random shorter-side resize in a 1.0..1.25 band followed by a fixed-size
// crop back to the canvas.
inline ViewTransform sample_train_view(int canvas, Rng& rng) {
  const double scale = rng.uniform(1.0, 1.25);
  const int resized = static_cast<int>(std::lround(canvas * scale));
  const double exact_scale = static_cast<double>(resized) / canvas;
  const int slack = resized - canvas;
  ViewTransform v;
  v.scale = exact_scale;
  v.ox = slack > 0 ? static_cast<double>(rng.uniform_int(static_cast<std::uint64_t>(slack + 1))) : 0.0;
  v.oy = slack > 0 ? static_cast<double>(rng.uniform_int(static_cast<std::uint64_t>(slack + 1))) : 0.0;
  return v;
}

// T frames centered on `frame` (zero padded at the ends), resized/cropped per
// the view, normalized to [0,1]. Output is [T, canvas, canvas].
inline Tensor<float> extract_clip(const Video& video, int frame, int clip_len, int canvas,
                                  const ViewTransform& view) {
  Tensor<float> clip({clip_len, canvas, canvas});
  const int t0 = frame - clip_len / 2;
  for (int t = 0; t < clip_len; ++t) {
    const int f = t0 + t;
    if (f < 0 || f >= video.frames) continue;  // zero padding
    const std::uint8_t* src = video.frame_ptr(f);
    float* dst = clip.ptr() + static_cast<std::size_t>(t) * canvas * canvas;
    for (int y = 0; y < canvas; ++y) {
      const double sy = (y + view.oy + 0.5) / view.scale - 0.5;
      const double cy = std::min(std::max(sy, 0.0), static_cast<double>(video.h - 1));
      const int y0 = static_cast<int>(cy);
      const int y1 = std::min(y0 + 1, video.h - 1);
      const double ay = cy - y0;
      for (int x = 0; x < canvas; ++x) {
        const double sx = (x + view.ox + 0.5) / view.scale - 0.5;
        const double cx = std::min(std::max(sx, 0.0), static_cast<double>(video.w - 1));
        const int x0 = static_cast<int>(cx);
        const int x1 = std::min(x0 + 1, video.w - 1);
        const double ax = cx - x0;
        const double v00 = src[static_cast<std::size_t>(y0) * video.w + x0];
        const double v01 = src[static_cast<std::size_t>(y0) * video.w + x1];
        const double v10 = src[static_cast<std::size_t>(y1) * video.w + x0];
        const double v11 = src[static_cast<std::size_t>(y1) * video.w + x1];
        const double val = (1.0 - ay) * ((1.0 - ax) * v00 + ax * v01) +
                           ay * ((1.0 - ax) * v10 + ax * v11);
        dst[static_cast<std::size_t>(y) * canvas + x] = static_cast<float>(val / 255.0);
      }
    }
  }
  return clip;
}

// Boxes under a view transform, clipped to the canvas; entries that leave the
// view or collapse below 2px are dropped.
inline std::vector<std::pair<Box, LabelVec>> transform_annotation(
    const KeyframeAnnotation& ann, const ViewTransform& view, int canvas) {
  std::vector<std::pair<Box, LabelVec>> out;
  for (const auto& e : ann.entries) {
    Box b = view.apply(e.box);
    b.x1 = std::max(0.0, b.x1);
    b.y1 = std::max(0.0, b.y1);
    b.x2 = std::min(static_cast<double>(canvas), b.x2);
    b.y2 = std::min(static_cast<double>(canvas), b.y2);
    if (b.x2 - b.x1 < 2.0 || b.y2 - b.y1 < 2.0) continue;
    out.emplace_back(b, e.label);
  }
  return out;
}

inline KeyframeAnnotation transform_keyframe(const KeyframeAnnotation& ann,
                                             const ViewTransform& view, int canvas) {
  KeyframeAnnotation out;
  out.frame_time = ann.frame_time;
  for (const auto& e : ann.entries) {
    Box b = view.apply(e.box);
    b.x1 = std::max(0.0, b.x1);
    b.y1 = std::max(0.0, b.y1);
    b.x2 = std::min(static_cast<double>(canvas), b.x2);
    b.y2 = std::min(static_cast<double>(canvas), b.y2);
    if (b.x2 - b.x1 < 2.0 || b.y2 - b.y1 < 2.0) continue;
    out.entries.push_back({b, e.label, e.entity_id});
  }
  return out;
}

// Epoch-shuffled index streams; every element is visited once per epoch.
class EpochSampler {
 public:
  EpochSampler() = default;
  EpochSampler(std::size_t n, std::uint64_t seed) : rng_(seed) {
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), 0);
    rng_.shuffle(order_);
  }

  std::vector<int> next(int count) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      if (order_.empty()) throw std::logic_error("sampler: empty index");
      if (pos_ >= order_.size()) {
        rng_.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(static_cast<int>(order_[pos_++]));
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng rng_;
};

// Dataset wrapper with read-audit counters used to prove the burn-in stage
// never touches unlabeled clips.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(SyntheticDataset ds) : ds_(std::move(ds)) {}

  const DataConfig& config() const { return ds_.config; }
  const DatasetIndex& index() const { return ds_.index; }
  const std::vector<Video>& videos() const { return ds_.videos; }
  std::uint64_t seed() const { return ds_.seed; }

  std::size_t num_labeled() const { return ds_.index.labeled.size(); }
  std::size_t num_unlabeled() const { return ds_.index.unlabeled.size(); }

  struct LabeledClip {
    Tensor<float> frames;
    int keyframe_index = 0;
    long clip_id = 0;
    std::vector<std::pair<Box, LabelVec>> gts;
  };

  struct UnlabeledClip {
    Tensor<float> frames;
    int keyframe_index = 0;
    long clip_id = 0;
    double center_time = 0.0;
    KeyframeAnnotation left, right;  // already in view coordinates
  };

  long clip_id(int video, int frame) const { return static_cast<long>(video) * 100000 + frame; }

  LabeledClip labeled_clip(int i, const ViewTransform& view, int clip_len) const {
    ++labeled_reads_;
    const LabeledClipDesc& d = ds_.index.labeled.at(static_cast<std::size_t>(i));
    const Video& v = ds_.videos.at(static_cast<std::size_t>(d.video));
    LabeledClip out;
    out.frames = extract_clip(v, d.frame, clip_len, ds_.config.canvas, view);
    out.keyframe_index = clip_len / 2;
    out.clip_id = clip_id(d.video, d.frame);
    out.gts = transform_annotation(ds_.index.annotation(d.video, d.frame), view, ds_.config.canvas);
    return out;
  }

  UnlabeledClip unlabeled_clip(int i, const ViewTransform& view, int clip_len) const {
    ++unlabeled_reads_;
    const UnlabeledClipDesc& d = ds_.index.unlabeled.at(static_cast<std::size_t>(i));
    const Video& v = ds_.videos.at(static_cast<std::size_t>(d.video));
    UnlabeledClip out;
    out.frames = extract_clip(v, d.frame, clip_len, ds_.config.canvas, view);
    out.keyframe_index = clip_len / 2;
    out.clip_id = clip_id(d.video, d.frame);
    out.center_time = d.frame / ds_.config.fps;
    out.left = transform_keyframe(ds_.index.annotation(d.video, d.left_frame), view, ds_.config.canvas);
    out.right = transform_keyframe(ds_.index.annotation(d.video, d.right_frame), view, ds_.config.canvas);
    return out;
  }

  long labeled_reads() const { return labeled_reads_; }
  long unlabeled_reads() const { return unlabeled_reads_; }
  void reset_counters() { labeled_reads_ = unlabeled_reads_ = 0; }

 private:
  SyntheticDataset ds_;
  mutable long labeled_reads_ = 0;
  mutable long unlabeled_reads_ = 0;
};

// ---------------------------------------------------------------------------
// AVA-style CSV: video_id,timestamp,x1,y1,x2,y2,action_id,entity_id with
// coordinates normalized to [0,1]. One row per (entity, action).

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string annotations_to_csv(const DatasetIndex& index, int canvas) {
  std::ostringstream os;
  for (const auto& [key, ann] : index.annotations) {
    const auto& [video, frame] = key;
    (void)frame;
    for (const auto& e : ann.entries) {
      for (std::size_t c = 0; c < e.label.size(); ++c) {
        if (!e.label[c]) continue;
        os << video << ',' << format_double(ann.frame_time) << ','
           << format_double(e.box.x1 / canvas) << ',' << format_double(e.box.y1 / canvas) << ','
           << format_double(e.box.x2 / canvas) << ',' << format_double(e.box.y2 / canvas) << ','
           << c << ',' << e.entity_id << '\n';
      }
    }
  }
  return os.str();
}

struct CsvAnnotations {
  // (video, timestamp) -> annotation, timestamps in seconds
  std::map<std::pair<int, double>, KeyframeAnnotation> frames;
  int num_classes = 0;
};

// Parses the csv text; malformed rows abort with their row number, out-of-range
// coordinates are clamped with a warning. Rows sharing (video, time, entity)
// merge into one multi-hot entry.
inline CsvAnnotations parse_ava_csv(const std::string& text, int num_classes, int canvas,
                                    std::ostream* warn = &std::cerr) {
  CsvAnnotations out;
  out.num_classes = num_classes;
  std::istringstream is(text);
  std::string line;
  int row = 0;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
      if (ch == ',') {
        fields.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    fields.push_back(cur);
    if (fields.size() != 8)
      throw std::runtime_error("csv row " + std::to_string(row) + ": expected 8 fields");
    int video, action, entity;
    double ts, x1, y1, x2, y2;
    try {
      std::size_t pos = 0;
      video = std::stoi(fields[0], &pos);
      ts = std::stod(fields[1]);
      x1 = std::stod(fields[2]);
      y1 = std::stod(fields[3]);
      x2 = std::stod(fields[4]);
      y2 = std::stod(fields[5]);
      action = std::stoi(fields[6]);
      entity = std::stoi(fields[7]);
    } catch (const std::exception&) {
      throw std::runtime_error("csv row " + std::to_string(row) + ": malformed field");
    }
    if (action < 0 || action >= num_classes)
      throw std::runtime_error("csv row " + std::to_string(row) + ": action id out of range");
    auto clamp01 = [&](double& v, const char* name) {
      if (v < 0.0 || v > 1.0) {
        if (warn)
          *warn << "csv row " << row << ": " << name << " outside [0,1], clamped\n";
        v = std::min(1.0, std::max(0.0, v));
      }
    };
    clamp01(x1, "x1");
    clamp01(y1, "y1");
    clamp01(x2, "x2");
    clamp01(y2, "y2");
    if (!(x1 < x2 && y1 < y2))
      throw std::runtime_error("csv row " + std::to_string(row) + ": degenerate box");

    KeyframeAnnotation& ann = out.frames[{video, ts}];
    ann.frame_time = ts;
    KeyframeAnnotation::Entry* entry = nullptr;
    for (auto& e : ann.entries)
      if (e.entity_id == entity) entry = &e;
    if (!entry) {
      ann.entries.push_back({Box{x1 * canvas, y1 * canvas, x2 * canvas, y2 * canvas},
                             LabelVec(static_cast<std::size_t>(num_classes), 0), entity});
      entry = &ann.entries.back();
    }
    entry->label[static_cast<std::size_t>(action)] = 1;
  }
  return out;
}

// Rebuilds a DatasetIndex from parsed annotations; keyframes must sit exactly
// keyframe_interval frames apart.
inline DatasetIndex index_from_annotations(const CsvAnnotations& csv, double fps,
                                           int keyframe_interval) {
  DatasetIndex index;
  index.num_classes = csv.num_classes;
  std::map<int, std::vector<int>> keyframes;
  for (const auto& [key, ann] : csv.frames) {
    const int frame = static_cast<int>(std::lround(key.second * fps));
    index.annotations[{key.first, frame}] = ann;
    keyframes[key.first].push_back(frame);
  }
  for (auto& [video, frames] : keyframes) {
    std::sort(frames.begin(), frames.end());
    for (std::size_t i = 0; i + 1 < frames.size(); ++i)
      if (frames[i + 1] - frames[i] != keyframe_interval)
        throw std::runtime_error("annotations: keyframes of video " + std::to_string(video) +
                                 " are not on a regular interval");
    for (int f : frames) index.labeled.push_back({video, f});
    for (std::size_t i = 0; i + 1 < frames.size(); ++i)
      for (int f = frames[i] + 1; f < frames[i + 1]; ++f)
        index.unlabeled.push_back({video, f, static_cast<int>(frames[i]),
                                   static_cast<int>(frames[i + 1])});
  }
  return index;
}

}  // namespace stad
