#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "stad/assignment.hpp"
#include "stad/geometry.hpp"
#include "stad/nn.hpp"
#include "stad/rng.hpp"
#include "stad/tensor.hpp"

namespace stad {

struct ModelConfig {
  int clip_len = 8;
  int height = 64;
  int width = 64;
  int in_channels = 1;
  int num_classes = 6;
  int base_width = 16;  // backbone stage widths: w, 2w, 4w, 8w
  int fpn_width = 64;
  int roi_size = 7;
  int gn_groups = 8;

  void validate() const {
    if (height % 16 != 0 || width % 16 != 0)
      throw std::invalid_argument("model: height/width must be divisible by 16");
    if (clip_len < 1 || num_classes < 1 || in_channels < 1)
      throw std::invalid_argument("model: bad config");
  }
};

struct DecodeConfig {
  double score_thresh = 0.3;
  int max_proposals = 100;
  bool apply_nms = false;
  double nms_iou = 0.3;
};

inline DecodeConfig train_decode_defaults() { return {0.3, 100, false, 0.3}; }
inline DecodeConfig test_decode_defaults() { return {0.4, 10, true, 0.3}; }

template <typename T>
struct BackboneFeatures {
  Tensor<T> c3, c4;  // keyframe spatial maps, strides 4 and 8
  Tensor<T> c5;      // full spatio-temporal map, stride 16
  std::vector<int> a2_shape, a3_shape;
  int keyframe = 0;
};

template <typename T>
struct PyramidFeatures {
  Tensor<T> p3, p4, p5;
};

template <typename T>
struct DensePredictions {
  struct Level {
    int stride = 0, h = 0, w = 0;
    Tensor<T> act;      // [1,h,w] actorness logits
    Tensor<T> reg_raw;  // [4,h,w] pre-activation regression
    Tensor<T> ctr;      // [1,h,w] centerness logits
    Tensor<T> ltrb;     // [4,h,w] decoded pixel distances, exp(scale*raw)
  };
  std::vector<Level> levels;
  int image_h = 0, image_w = 0;

  std::size_t num_locations() const {
    std::size_t n = 0;
    for (const auto& l : levels) n += static_cast<std::size_t>(l.h) * l.w;
    return n;
  }
};

template <typename T>
struct DenseGrads {
  struct Level {
    Tensor<T> dact, dltrb, dctr;
  };
  std::vector<Level> levels;
};

// Everything the backward pass needs for one clip.
template <typename T>
struct TrainContext {
  BackboneFeatures<T> bf;
  PyramidFeatures<T> pf;
  DensePredictions<T> preds;
  std::vector<RoiBox> roi_boxes;
  bool action_ran = false;
};

// The unified detector: a small 3D-convolutional trunk, a keyframe feature
// pyramid (P3-P5), one shared anchor-free localization head with per-level
// regression scales, and an ROI action classification head on the stride-16
// spatio-temporal map.
template <typename T>
class Detector {
 public:
  static constexpr double kExpClamp = 8.0;  // regression exponent guard

  Detector() = default;
  Detector(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    const int w = cfg.base_width;
    s1_ = Conv3d<T>(cfg.in_channels, w, 3, 3, 3, 1, 2, 2, 1, 1, 1);
    s2_ = Conv3d<T>(w, 2 * w, 3, 3, 3, 1, 2, 2, 1, 1, 1);
    s3_ = Conv3d<T>(2 * w, 4 * w, 3, 3, 3, 1, 2, 2, 1, 1, 1);
    s4_ = Conv3d<T>(4 * w, 8 * w, 3, 3, 3, 1, 2, 2, 1, 1, 1);
    n1_ = GroupNorm<T>(w, std::min(cfg.gn_groups, w));
    n2_ = GroupNorm<T>(2 * w, cfg.gn_groups);
    n3_ = GroupNorm<T>(4 * w, cfg.gn_groups);
    n4_ = GroupNorm<T>(8 * w, cfg.gn_groups);
    lat3_ = Conv2d<T>(2 * w, cfg.fpn_width, 1, 1, 0);
    lat4_ = Conv2d<T>(4 * w, cfg.fpn_width, 1, 1, 0);
    p5conv_ = Conv2d<T>(cfg.fpn_width, cfg.fpn_width, 3, 2, 1);
    h1_ = Conv2d<T>(cfg.fpn_width, cfg.fpn_width, 3, 1, 1);
    h2_ = Conv2d<T>(cfg.fpn_width, cfg.fpn_width, 3, 1, 1);
    hn1_ = GroupNorm<T>(cfg.fpn_width, cfg.gn_groups);
    hn2_ = GroupNorm<T>(cfg.fpn_width, cfg.gn_groups);
    act_out_ = Conv2d<T>(cfg.fpn_width, 1, 1, 1, 0);
    reg_out_ = Conv2d<T>(cfg.fpn_width, 4, 1, 1, 0);
    ctr_out_ = Conv2d<T>(cfg.fpn_width, 1, 1, 1, 0);
    scales_.resize({3});
    scales_.fill(T(1));
    gscales_.resize({3});
    fc_ = Linear<T>(8 * w, cfg.num_classes);

    Rng rng(seed);
    s1_.init_xavier(rng);
    s2_.init_xavier(rng);
    s3_.init_xavier(rng);
    s4_.init_xavier(rng);
    lat3_.init_xavier(rng);
    lat4_.init_xavier(rng);
    p5conv_.init_xavier(rng);
    h1_.init_head(rng, 0.01, 0.0);
    h2_.init_head(rng, 0.01, 0.0);
    // actorness bias set for a 0.01 prior so the dense head starts quiet
    act_out_.init_head(rng, 0.01, -std::log(99.0));
    reg_out_.init_head(rng, 0.01, 0.0);
    ctr_out_.init_head(rng, 0.01, 0.0);
    fc_.init_xavier(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  int num_classes() const { return cfg_.num_classes; }
  static const std::array<int, 3>& strides() {
    static const std::array<int, 3> s{4, 8, 16};
    return s;
  }

  BackboneFeatures<T> backbone_forward(const Tensor<T>& clip, int keyframe, bool cache = false) {
    if (clip.ndim() != 4 || clip.dim(0) != cfg_.in_channels || clip.dim(1) != cfg_.clip_len ||
        clip.dim(2) != cfg_.height || clip.dim(3) != cfg_.width)
      throw std::invalid_argument("backbone: clip shape " + shape_str(clip.shape) +
                                  " does not match config");
    if (keyframe < 0 || keyframe >= cfg_.clip_len)
      throw std::invalid_argument("backbone: keyframe out of range");
    Tensor<T> a1 = r1_.forward(n1_.forward(s1_.forward(clip, cache), cache), cache);
    Tensor<T> a2 = r2_.forward(n2_.forward(s2_.forward(a1, cache), cache), cache);
    Tensor<T> a3 = r3_.forward(n3_.forward(s3_.forward(a2, cache), cache), cache);
    Tensor<T> c5 = r4_.forward(n4_.forward(s4_.forward(a3, cache), cache), cache);
    BackboneFeatures<T> bf;
    bf.keyframe = keyframe;
    bf.a2_shape = a2.shape;
    bf.a3_shape = a3.shape;
    bf.c3 = time_slice(a2, keyframe);
    bf.c4 = time_slice(a3, keyframe);
    bf.c5 = std::move(c5);
    return bf;
  }

  PyramidFeatures<T> fpn_forward(const Tensor<T>& c3, const Tensor<T>& c4, bool cache = false) {
    PyramidFeatures<T> pf;
    Tensor<T> l3 = lat3_.forward(c3, cache);
    pf.p4 = lat4_.forward(c4, cache);
    Tensor<T> up = upsample_nearest(pf.p4, l3.dim(1), l3.dim(2));
    pf.p3 = std::move(l3);
    for (std::size_t i = 0; i < pf.p3.numel(); ++i) pf.p3[i] += up[i];
    pf.p5 = p5conv_.forward(pf.p4, cache);
    return pf;
  }

  DensePredictions<T> localization_head(const PyramidFeatures<T>& pf, bool cache = false) {
    DensePredictions<T> dp;
    dp.image_h = cfg_.height;
    dp.image_w = cfg_.width;
    const Tensor<T>* maps[3] = {&pf.p3, &pf.p4, &pf.p5};
    for (int li = 0; li < 3; ++li) {
      typename DensePredictions<T>::Level lv;
      lv.stride = strides()[static_cast<std::size_t>(li)];
      const Tensor<T>& p = *maps[li];
      lv.h = p.dim(1);
      lv.w = p.dim(2);
      Tensor<T> t = hr1_.forward(hn1_.forward(h1_.forward(p, cache), cache), cache);
      t = hr2_.forward(hn2_.forward(h2_.forward(t, cache), cache), cache);
      lv.act = act_out_.forward(t, cache);
      lv.reg_raw = reg_out_.forward(t, cache);
      lv.ctr = ctr_out_.forward(t, cache);
      lv.ltrb.resize(lv.reg_raw.shape);
      const T s = scales_[static_cast<std::size_t>(li)];
      for (std::size_t i = 0; i < lv.reg_raw.numel(); ++i) {
        const double a = std::min(static_cast<double>(s * lv.reg_raw[i]), kExpClamp);
        lv.ltrb[i] = static_cast<T>(std::exp(a));
      }
      dp.levels.push_back(std::move(lv));
    }
    return dp;
  }

  // Proposals from dense outputs: score locations by
  // sigmoid(actorness)*sigmoid(centerness), threshold, clip to image, then
  // optional NMS and a top-k cut by score.
  static std::vector<Detection> decode_proposals(const DensePredictions<T>& dp,
                                                 const DecodeConfig& dc) {
    if (!(dc.score_thresh > 0.0 && dc.score_thresh < 1.0))
      throw std::invalid_argument("decode: score_thresh must be in (0,1)");
    std::vector<Detection> dets;
    for (const auto& lv : dp.levels) {
      const std::size_t n = static_cast<std::size_t>(lv.h) * lv.w;
      for (std::size_t i = 0; i < n; ++i) {
        const double score = static_cast<double>(sigmoid(lv.act[i])) *
                             static_cast<double>(sigmoid(lv.ctr[i]));
        if (score < dc.score_thresh) continue;
        const double x = (static_cast<double>(i % static_cast<std::size_t>(lv.w)) + 0.5) * lv.stride;
        const double y = (static_cast<double>(i / static_cast<std::size_t>(lv.w)) + 0.5) * lv.stride;
        Box b{std::max(0.0, x - static_cast<double>(lv.ltrb[0 * n + i])),
              std::max(0.0, y - static_cast<double>(lv.ltrb[1 * n + i])),
              std::min(static_cast<double>(dp.image_w), x + static_cast<double>(lv.ltrb[2 * n + i])),
              std::min(static_cast<double>(dp.image_h), y + static_cast<double>(lv.ltrb[3 * n + i]))};
        dets.push_back({b, score, {}});
      }
    }
    if (dc.apply_nms) {
      dets = nms(std::move(dets), dc.nms_iou);
    } else {
      std::stable_sort(dets.begin(), dets.end(),
                       [](const Detection& a, const Detection& b) { return a.actorness > b.actorness; });
    }
    if (static_cast<int>(dets.size()) > dc.max_proposals) dets.resize(static_cast<std::size_t>(dc.max_proposals));
    return dets;
  }

  // ROI action classification: temporal mean pooling of c5, one bilinear
  // sample per ROI cell, spatial mean, then a single linear layer.
  Tensor<T> action_logits(const Tensor<T>& c5, const std::vector<Box>& boxes, bool cache = false,
                          std::vector<RoiBox>* roi_out = nullptr) {
    const int n = static_cast<int>(boxes.size());
    if (n == 0) return Tensor<T>({0, cfg_.num_classes});
    Tensor<T> pooled = temporal_mean(c5);
    const double sx = static_cast<double>(cfg_.width) / pooled.dim(2);
    const double sy = static_cast<double>(cfg_.height) / pooled.dim(1);
    std::vector<RoiBox> rois;
    rois.reserve(boxes.size());
    for (const Box& b : boxes) rois.push_back({b.x1 / sx, b.y1 / sy, b.x2 / sx, b.y2 / sy});
    Tensor<T> roi = roi_align(pooled, rois, cfg_.roi_size);
    const int c = pooled.dim(0);
    Tensor<T> vec({n, c});
    const std::size_t cells = static_cast<std::size_t>(cfg_.roi_size) * cfg_.roi_size;
    for (int bi = 0; bi < n; ++bi)
      for (int ch = 0; ch < c; ++ch) {
        const T* src = roi.ptr() + (static_cast<std::size_t>(bi) * c + ch) * cells;
        T acc = T(0);
        for (std::size_t k = 0; k < cells; ++k) acc += src[k];
        vec[static_cast<std::size_t>(bi) * c + ch] = acc / static_cast<T>(cells);
      }
    if (roi_out) *roi_out = rois;
    return fc_.forward(vec, cache);
  }

  // Forward pass with caches armed for a later backward_clip.
  TrainContext<T> forward_clip(const Tensor<T>& clip, int keyframe) {
    TrainContext<T> ctx;
    ctx.bf = backbone_forward(clip, keyframe, true);
    ctx.pf = fpn_forward(ctx.bf.c3, ctx.bf.c4, true);
    ctx.preds = localization_head(ctx.pf, true);
    return ctx;
  }

  Tensor<T> forward_action(TrainContext<T>& ctx, const std::vector<Box>& boxes) {
    Tensor<T> logits = action_logits(ctx.bf.c5, boxes, true, &ctx.roi_boxes);
    ctx.action_ran = logits.dim(0) > 0;
    return ctx.action_ran ? logits : Tensor<T>({0, cfg_.num_classes});
  }

  // Backward through the whole clip graph. dlogits may be null when the
  // action head did not run. Seeds are expected to carry any loss weighting.
  void backward_clip(TrainContext<T>& ctx, const DenseGrads<T>& dg, const Tensor<T>* dlogits) {
    Tensor<T> dc5(ctx.bf.c5.shape);

    if (ctx.action_ran) {
      if (dlogits == nullptr) throw std::logic_error("backward_clip: missing action grads");
      Tensor<T> dvec = fc_.backward(*dlogits);
      const int n = dvec.dim(0);
      const int c = dvec.dim(1);
      const std::size_t cells = static_cast<std::size_t>(cfg_.roi_size) * cfg_.roi_size;
      Tensor<T> droi({n, c, cfg_.roi_size, cfg_.roi_size});
      for (int bi = 0; bi < n; ++bi)
        for (int ch = 0; ch < c; ++ch) {
          const T g = dvec[static_cast<std::size_t>(bi) * c + ch] / static_cast<T>(cells);
          T* dst = droi.ptr() + (static_cast<std::size_t>(bi) * c + ch) * cells;
          for (std::size_t k = 0; k < cells; ++k) dst[k] = g;
        }
      Tensor<T> dpooled = roi_align_backward(droi, ctx.roi_boxes, ctx.bf.c5.dim(0),
                                             ctx.bf.c5.dim(2), ctx.bf.c5.dim(3));
      dc5 = temporal_mean_backward(dpooled, cfg_.clip_len);
    } else if (dlogits != nullptr && dlogits->dim(0) != 0) {
      throw std::logic_error("backward_clip: action grads without forward_action");
    }

    // Shared head, levels popped in reverse order of the forward.
    Tensor<T> dp[3];
    for (int li = 2; li >= 0; --li) {
      const auto& lv = ctx.preds.levels[static_cast<std::size_t>(li)];
      const auto& g = dg.levels[static_cast<std::size_t>(li)];
      const std::size_t n = static_cast<std::size_t>(lv.h) * lv.w;
      Tensor<T> dreg(lv.reg_raw.shape);
      const T s = scales_[static_cast<std::size_t>(li)];
      double dscale = 0.0;
      for (std::size_t i = 0; i < dreg.numel(); ++i) {
        const double arg = static_cast<double>(s * lv.reg_raw[i]);
        if (arg < kExpClamp) {
          const double d = static_cast<double>(g.dltrb[i]) * static_cast<double>(lv.ltrb[i]);
          dreg[i] = static_cast<T>(d * static_cast<double>(s));
          dscale += d * static_cast<double>(lv.reg_raw[i]);
        } else {
          dreg[i] = T(0);
        }
      }
      gscales_[static_cast<std::size_t>(li)] += static_cast<T>(dscale);
      (void)n;
      Tensor<T> dt = ctr_out_.backward(g.dctr);
      {
        Tensor<T> tmp = reg_out_.backward(dreg);
        for (std::size_t i = 0; i < dt.numel(); ++i) dt[i] += tmp[i];
        tmp = act_out_.backward(g.dact);
        for (std::size_t i = 0; i < dt.numel(); ++i) dt[i] += tmp[i];
      }
      dt = h2_.backward(hn2_.backward(hr2_.backward(dt)));
      dp[li] = h1_.backward(hn1_.backward(hr1_.backward(dt)));
    }

    // FPN backward: p5 feeds p4; p3's upsampled lateral feeds p4 as well.
    Tensor<T> dp4 = p5conv_.backward(dp[2]);
    for (std::size_t i = 0; i < dp4.numel(); ++i) dp4[i] += dp[1][i];
    {
      Tensor<T> up = upsample_nearest_backward(dp[0], dp4.dim(1), dp4.dim(2));
      for (std::size_t i = 0; i < dp4.numel(); ++i) dp4[i] += up[i];
    }
    Tensor<T> dc4 = lat4_.backward(dp4);
    Tensor<T> dc3 = lat3_.backward(dp[0]);

    // Backbone backward with keyframe-slice scatter.
    Tensor<T> da3 = s4_.backward(n4_.backward(r4_.backward(dc5)));
    scatter_time_slice(da3, dc4, ctx.bf.keyframe);
    Tensor<T> da2 = s3_.backward(n3_.backward(r3_.backward(da3)));
    scatter_time_slice(da2, dc3, ctx.bf.keyframe);
    Tensor<T> da1 = s2_.backward(n2_.backward(r2_.backward(da2)));
    Tensor<T> dx = s1_.backward(n1_.backward(r1_.backward(da1)));
    (void)dx;
  }

  // Inference: proposals plus per-class probabilities from the action head.
  std::vector<Detection> detect(const Tensor<T>& clip, int keyframe, const DecodeConfig& dc) {
    BackboneFeatures<T> bf = backbone_forward(clip, keyframe, false);
    PyramidFeatures<T> pf = fpn_forward(bf.c3, bf.c4, false);
    DensePredictions<T> dp = localization_head(pf, false);
    std::vector<Detection> dets = decode_proposals(dp, dc);
    if (dets.empty()) return dets;
    std::vector<Box> boxes;
    boxes.reserve(dets.size());
    for (const auto& d : dets) boxes.push_back(d.box);
    Tensor<T> logits = action_logits(bf.c5, boxes, false);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      dets[i].class_scores.resize(static_cast<std::size_t>(cfg_.num_classes));
      for (int c = 0; c < cfg_.num_classes; ++c)
        dets[i].class_scores[static_cast<std::size_t>(c)] = static_cast<double>(
            sigmoid(logits[i * static_cast<std::size_t>(cfg_.num_classes) + static_cast<std::size_t>(c)]));
    }
    return dets;
  }

  std::vector<ParamRef<T>> parameters() {
    std::vector<ParamRef<T>> out;
    s1_.collect("backbone.s1", out);
    n1_.collect("backbone.n1", out);
    s2_.collect("backbone.s2", out);
    n2_.collect("backbone.n2", out);
    s3_.collect("backbone.s3", out);
    n3_.collect("backbone.n3", out);
    s4_.collect("backbone.s4", out);
    n4_.collect("backbone.n4", out);
    lat3_.collect("fpn.lat3", out);
    lat4_.collect("fpn.lat4", out);
    p5conv_.collect("fpn.p5", out);
    h1_.collect("head.conv1", out);
    hn1_.collect("head.norm1", out);
    h2_.collect("head.conv2", out);
    hn2_.collect("head.norm2", out);
    act_out_.collect("head.actorness", out);
    reg_out_.collect("head.regression", out);
    ctr_out_.collect("head.centerness", out);
    out.push_back({"head.scales", &scales_, &gscales_});
    fc_.collect("action.fc", out);
    return out;
  }

  void zero_grad() {
    s1_.zero_grad();
    s2_.zero_grad();
    s3_.zero_grad();
    s4_.zero_grad();
    n1_.zero_grad();
    n2_.zero_grad();
    n3_.zero_grad();
    n4_.zero_grad();
    lat3_.zero_grad();
    lat4_.zero_grad();
    p5conv_.zero_grad();
    h1_.zero_grad();
    h2_.zero_grad();
    hn1_.zero_grad();
    hn2_.zero_grad();
    act_out_.zero_grad();
    reg_out_.zero_grad();
    ctr_out_.zero_grad();
    gscales_.zero();
    fc_.zero_grad();
  }

  void clear_caches() {
    s1_.clear_cache();
    s2_.clear_cache();
    s3_.clear_cache();
    s4_.clear_cache();
    n1_.clear_cache();
    n2_.clear_cache();
    n3_.clear_cache();
    n4_.clear_cache();
    r1_.clear_cache();
    r2_.clear_cache();
    r3_.clear_cache();
    r4_.clear_cache();
    lat3_.clear_cache();
    lat4_.clear_cache();
    p5conv_.clear_cache();
    h1_.clear_cache();
    h2_.clear_cache();
    hn1_.clear_cache();
    hn2_.clear_cache();
    hr1_.clear_cache();
    hr2_.clear_cache();
    act_out_.clear_cache();
    reg_out_.clear_cache();
    ctr_out_.clear_cache();
    fc_.clear_cache();
  }

 private:
  static Tensor<T> time_slice(const Tensor<T>& x, int t) {
    const int c = x.dim(0), tt = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> y({c, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int ch = 0; ch < c; ++ch) {
      const T* src = x.ptr() + (static_cast<std::size_t>(ch) * tt + t) * plane;
      T* dst = y.ptr() + static_cast<std::size_t>(ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i];
    }
    return y;
  }

  static void scatter_time_slice(Tensor<T>& dx, const Tensor<T>& dslice, int t) {
    const int c = dx.dim(0), tt = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int ch = 0; ch < c; ++ch) {
      T* dst = dx.ptr() + (static_cast<std::size_t>(ch) * tt + t) * plane;
      const T* src = dslice.ptr() + static_cast<std::size_t>(ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
    }
  }

  ModelConfig cfg_;
  Conv3d<T> s1_, s2_, s3_, s4_;
  GroupNorm<T> n1_, n2_, n3_, n4_;
  ReLU<T> r1_, r2_, r3_, r4_;
  Conv2d<T> lat3_, lat4_, p5conv_;
  Conv2d<T> h1_, h2_;
  GroupNorm<T> hn1_, hn2_;
  ReLU<T> hr1_, hr2_;
  Conv2d<T> act_out_, reg_out_, ctr_out_;
  Tensor<T> scales_, gscales_;
  Linear<T> fc_;
};

}  // namespace stad
