#include "stad/model.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "stad/rng.hpp"
#include "stad/trainer.hpp"

using namespace stad;

namespace {

ModelConfig default_cfg() { return ModelConfig{}; }

ModelConfig tiny_cfg() {
  ModelConfig c;
  c.clip_len = 2;
  c.height = c.width = 16;
  c.base_width = 4;
  c.fpn_width = 8;
  c.gn_groups = 2;
  c.num_classes = 3;
  c.roi_size = 3;
  return c;
}

template <typename T>
Tensor<T> random_clip(const ModelConfig& c, Rng& rng) {
  Tensor<T> x({c.in_channels, c.clip_len, c.height, c.width});
  for (auto& v : x.data) v = static_cast<T>(rng.uniform());
  return x;
}

// Fixed linear functional over every model output; its gradient seeds are the
// weights themselves, which makes finite differencing the whole graph easy.
template <typename T>
struct Probe {
  DenseGrads<T> seeds;
  Tensor<T> logit_seeds;
  std::vector<Box> boxes;

  Probe(Detector<T>& model, Rng& rng) {
    const ModelConfig& c = model.config();
    boxes = {Box{1.0, 1.0, c.width * 0.6, c.height * 0.7},
             Box{c.width * 0.3, c.height * 0.2, c.width * 0.9, c.height * 0.8}};
    Tensor<T> clip({c.in_channels, c.clip_len, c.height, c.width});
    BackboneFeatures<T> bf = model.backbone_forward(clip, c.clip_len / 2, false);
    PyramidFeatures<T> pf = model.fpn_forward(bf.c3, bf.c4, false);
    DensePredictions<T> dp = model.localization_head(pf, false);
    seeds.levels.resize(dp.levels.size());
    for (std::size_t li = 0; li < dp.levels.size(); ++li) {
      seeds.levels[li].dact.resize(dp.levels[li].act.shape);
      seeds.levels[li].dltrb.resize(dp.levels[li].ltrb.shape);
      seeds.levels[li].dctr.resize(dp.levels[li].ctr.shape);
      for (auto& v : seeds.levels[li].dact.data) v = static_cast<T>(rng.uniform(-1, 1));
      for (auto& v : seeds.levels[li].dltrb.data) v = static_cast<T>(rng.uniform(-1, 1));
      for (auto& v : seeds.levels[li].dctr.data) v = static_cast<T>(rng.uniform(-1, 1));
    }
    logit_seeds.resize({static_cast<int>(boxes.size()), c.num_classes});
    for (auto& v : logit_seeds.data) v = static_cast<T>(rng.uniform(-1, 1));
  }

  double value(Detector<T>& model, const Tensor<T>& clip) {
    const ModelConfig& c = model.config();
    BackboneFeatures<T> bf = model.backbone_forward(clip, c.clip_len / 2, false);
    PyramidFeatures<T> pf = model.fpn_forward(bf.c3, bf.c4, false);
    DensePredictions<T> dp = model.localization_head(pf, false);
    double acc = 0.0;
    for (std::size_t li = 0; li < dp.levels.size(); ++li) {
      const auto& lv = dp.levels[li];
      const auto& s = seeds.levels[li];
      for (std::size_t i = 0; i < lv.act.numel(); ++i)
        acc += static_cast<double>(s.dact[i]) * static_cast<double>(lv.act[i]);
      for (std::size_t i = 0; i < lv.ltrb.numel(); ++i)
        acc += static_cast<double>(s.dltrb[i]) * static_cast<double>(lv.ltrb[i]);
      for (std::size_t i = 0; i < lv.ctr.numel(); ++i)
        acc += static_cast<double>(s.dctr[i]) * static_cast<double>(lv.ctr[i]);
    }
    Tensor<T> logits = model.action_logits(bf.c5, boxes, false);
    for (std::size_t i = 0; i < logits.numel(); ++i)
      acc += static_cast<double>(logit_seeds[i]) * static_cast<double>(logits[i]);
    return acc;
  }

  void backward(Detector<T>& model, const Tensor<T>& clip) {
    TrainContext<T> ctx = model.forward_clip(clip, model.config().clip_len / 2);
    (void)model.forward_action(ctx, boxes);
    model.backward_clip(ctx, seeds, &logit_seeds);
  }
};

}  // namespace

TEST(Backbone, FeatureShapes) {
  Detector<float> model(default_cfg(), 1);
  Rng rng(5);
  const Tensor<float> clip = random_clip<float>(default_cfg(), rng);
  const auto bf = model.backbone_forward(clip, 4);
  EXPECT_EQ(bf.c3.shape, (std::vector<int>{32, 16, 16}));
  EXPECT_EQ(bf.c4.shape, (std::vector<int>{64, 8, 8}));
  EXPECT_EQ(bf.c5.shape, (std::vector<int>{128, 8, 4, 4}));
}

TEST(Backbone, ZeroClipGivesFiniteOutputs) {
  Detector<float> model(default_cfg(), 1);
  Tensor<float> clip({1, 8, 64, 64});
  const auto bf = model.backbone_forward(clip, 4);
  for (float v : bf.c5.data) EXPECT_TRUE(std::isfinite(v));
  for (float v : bf.c3.data) EXPECT_TRUE(std::isfinite(v));
}

TEST(Backbone, Deterministic) {
  Detector<float> model(default_cfg(), 1);
  Rng rng(6);
  const Tensor<float> clip = random_clip<float>(default_cfg(), rng);
  const auto a = model.backbone_forward(clip, 4);
  const auto b = model.backbone_forward(clip, 4);
  EXPECT_EQ(a.c5.data, b.c5.data);
  EXPECT_EQ(a.c3.data, b.c3.data);
}

TEST(Backbone, RejectsBadShape) {
  Detector<float> model(default_cfg(), 1);
  EXPECT_THROW(model.backbone_forward(Tensor<float>({1, 8, 32, 64}), 4), std::invalid_argument);
  EXPECT_THROW(model.backbone_forward(Tensor<float>({1, 8, 64, 64}), 9), std::invalid_argument);
}

TEST(Fpn, ShapesAndHalving) {
  Detector<float> model(default_cfg(), 1);
  Rng rng(7);
  const auto bf = model.backbone_forward(random_clip<float>(default_cfg(), rng), 4);
  const auto pf = model.fpn_forward(bf.c3, bf.c4);
  EXPECT_EQ(pf.p3.shape, (std::vector<int>{64, 16, 16}));
  EXPECT_EQ(pf.p4.shape, (std::vector<int>{64, 8, 8}));
  EXPECT_EQ(pf.p5.shape, (std::vector<int>{64, 4, 4}));
  EXPECT_EQ(pf.p5.dim(1), (pf.p4.dim(1) + 1) / 2);
}

TEST(Fpn, ZeroInputZeroOutput) {
  // lateral and output convolutions carry zero bias at init
  Detector<float> model(default_cfg(), 1);
  Tensor<float> c3({32, 16, 16}), c4({64, 8, 8});
  const auto pf = model.fpn_forward(c3, c4);
  for (float v : pf.p3.data) EXPECT_FLOAT_EQ(v, 0.0f);
  for (float v : pf.p4.data) EXPECT_FLOAT_EQ(v, 0.0f);
  for (float v : pf.p5.data) EXPECT_FLOAT_EQ(v, 0.0f);
}

TEST(LocalizationHead, LocationCountAndRanges) {
  Detector<float> model(default_cfg(), 1);
  Rng rng(8);
  const auto bf = model.backbone_forward(random_clip<float>(default_cfg(), rng), 4);
  const auto dp = model.localization_head(model.fpn_forward(bf.c3, bf.c4));
  EXPECT_EQ(dp.num_locations(), 256u + 64u + 16u);
  for (const auto& lv : dp.levels) {
    for (float v : lv.act.data) {
      EXPECT_TRUE(std::isfinite(v));
      const float s = sigmoid(v);
      EXPECT_GT(s, 0.0f);
      EXPECT_LT(s, 1.0f);
    }
    for (float v : lv.ltrb.data) EXPECT_GT(v, 0.0f);
  }
}

TEST(Decode, AllLowLogitsGiveEmptyList) {
  DensePredictions<float> dp;
  dp.image_h = dp.image_w = 64;
  typename DensePredictions<float>::Level lv;
  lv.stride = 4;
  lv.h = lv.w = 2;
  lv.act.resize({1, 2, 2});
  lv.act.fill(-1e9f);
  lv.ctr.resize({1, 2, 2});
  lv.reg_raw.resize({4, 2, 2});
  lv.ltrb.resize({4, 2, 2});
  lv.ltrb.fill(1.0f);
  dp.levels.push_back(lv);
  EXPECT_TRUE(Detector<float>::decode_proposals(dp, {0.3, 100, false, 0.3}).empty());
}

TEST(Decode, SingleLocationHandDecode) {
  DensePredictions<float> dp;
  dp.image_h = dp.image_w = 64;
  typename DensePredictions<float>::Level lv;
  lv.stride = 8;
  lv.h = lv.w = 2;
  lv.act.resize({1, 2, 2});
  lv.act.fill(-20.0f);
  lv.ctr.resize({1, 2, 2});
  lv.ctr.fill(0.0f);
  lv.reg_raw.resize({4, 2, 2});
  lv.ltrb.resize({4, 2, 2});
  // location (row 1, col 0): center (4, 12); distances l=2, t=3, r=5, b=1
  const std::size_t n = 4, i = 1 * 2 + 0;
  lv.act[i] = 20.0f;  // sigmoid ~ 1
  lv.ctr[i] = 20.0f;
  lv.ltrb[0 * n + i] = 2.0f;
  lv.ltrb[1 * n + i] = 3.0f;
  lv.ltrb[2 * n + i] = 5.0f;
  lv.ltrb[3 * n + i] = 1.0f;
  dp.levels.push_back(lv);
  const auto dets = Detector<float>::decode_proposals(dp, {0.3, 100, false, 0.3});
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_NEAR(dets[0].box.x1, 2.0, 1e-6);
  EXPECT_NEAR(dets[0].box.y1, 9.0, 1e-6);
  EXPECT_NEAR(dets[0].box.x2, 9.0, 1e-6);
  EXPECT_NEAR(dets[0].box.y2, 13.0, 1e-6);
  EXPECT_GT(dets[0].actorness, 0.99);
}

TEST(Decode, TruncatesToMaxByScore) {
  DensePredictions<float> dp;
  dp.image_h = dp.image_w = 64;
  typename DensePredictions<float>::Level lv;
  lv.stride = 8;
  lv.h = 1;
  lv.w = 5;
  lv.act.resize({1, 1, 5});
  lv.ctr.resize({1, 1, 5});
  lv.ctr.fill(20.0f);
  lv.reg_raw.resize({4, 1, 5});
  lv.ltrb.resize({4, 1, 5});
  lv.ltrb.fill(3.0f);
  const float logits[5] = {0.2f, 1.5f, 0.8f, 2.5f, 0.5f};
  for (int i = 0; i < 5; ++i) lv.act[static_cast<std::size_t>(i)] = logits[i];
  dp.levels.push_back(lv);
  const auto dets = Detector<float>::decode_proposals(dp, {0.3, 2, false, 0.3});
  ASSERT_EQ(dets.size(), 2u);
  EXPECT_GT(dets[0].actorness, dets[1].actorness);
  EXPECT_NEAR(dets[0].actorness, sigmoid(2.5), 1e-6);
  EXPECT_NEAR(dets[1].actorness, sigmoid(1.5), 1e-6);
}

TEST(ActionHead, FullImageBoxEqualsGlobalPoolOnConstantMap) {
  Detector<float> model(default_cfg(), 1);
  Tensor<float> c5({128, 8, 4, 4});
  Rng rng(10);
  for (int c = 0; c < 128; ++c) {
    const float v = static_cast<float>(rng.uniform());
    for (int i = 0; i < 8 * 4 * 4; ++i) c5[static_cast<std::size_t>(c) * 8 * 4 * 4 + i] = v;
  }
  const Box full{0, 0, 64, 64};
  const Tensor<float> logits = model.action_logits(c5, {full});
  // constant per channel: ROI pooling equals global pooling, so the logits
  // match a direct linear map of the per-channel values
  Tensor<float> vec({1, 128});
  for (int c = 0; c < 128; ++c) vec[static_cast<std::size_t>(c)] = c5[static_cast<std::size_t>(c) * 8 * 4 * 4];
  auto params = model.parameters();
  const Tensor<float>*w = nullptr, *b = nullptr;
  for (auto& p : params) {
    if (p.name == "action.fc.weight") w = p.value;
    if (p.name == "action.fc.bias") b = p.value;
  }
  ASSERT_TRUE(w && b);
  for (int k = 0; k < 6; ++k) {
    float want = (*b)[static_cast<std::size_t>(k)];
    for (int c = 0; c < 128; ++c)
      want += (*w)[static_cast<std::size_t>(k) * 128 + c] * vec[static_cast<std::size_t>(c)];
    EXPECT_NEAR(logits[static_cast<std::size_t>(k)], want, 1e-4);
  }
}

TEST(ActionHead, IdenticalBoxesIdenticalLogits) {
  Detector<float> model(default_cfg(), 1);
  Rng rng(11);
  const auto bf = model.backbone_forward(random_clip<float>(default_cfg(), rng), 4);
  const Box box{5, 7, 30, 40};
  const Tensor<float> logits = model.action_logits(bf.c5, {box, box});
  ASSERT_EQ(logits.shape, (std::vector<int>{2, 6}));
  for (int k = 0; k < 6; ++k)
    EXPECT_FLOAT_EQ(logits[static_cast<std::size_t>(k)], logits[static_cast<std::size_t>(6 + k)]);
}

TEST(ActionHead, DegenerateBoxStillWorks) {
  Detector<float> model(default_cfg(), 1);
  Rng rng(12);
  const auto bf = model.backbone_forward(random_clip<float>(default_cfg(), rng), 4);
  const Tensor<float> logits = model.action_logits(bf.c5, {Box{10.0, 10.0, 10.2, 10.2}});
  ASSERT_EQ(logits.dim(0), 1);
  for (float v : logits.data) EXPECT_TRUE(std::isfinite(v));
}

TEST(Model, GradientsReachSharedBackboneFromEitherHead) {
  Detector<float> model(tiny_cfg(), 3);
  Rng rng(13);
  const Tensor<float> clip = random_clip<float>(tiny_cfg(), rng);
  Probe<float> probe(model, rng);

  auto grad_norm_s1 = [&]() {
    double acc = 0.0;
    for (auto& p : model.parameters())
      if (p.name == "backbone.s1.weight")
        for (float v : p.grad->data) acc += std::abs(v);
    return acc;
  };

  // localization head only
  model.zero_grad();
  {
    TrainContext<float> ctx = model.forward_clip(clip, 1);
    model.backward_clip(ctx, probe.seeds, nullptr);
  }
  EXPECT_GT(grad_norm_s1(), 0.0);

  // action head only
  model.zero_grad();
  {
    TrainContext<float> ctx = model.forward_clip(clip, 1);
    (void)model.forward_action(ctx, probe.boxes);
    DenseGrads<float> zero_seeds;
    zero_seeds.levels.resize(ctx.preds.levels.size());
    for (std::size_t li = 0; li < ctx.preds.levels.size(); ++li) {
      zero_seeds.levels[li].dact.resize(ctx.preds.levels[li].act.shape);
      zero_seeds.levels[li].dltrb.resize(ctx.preds.levels[li].ltrb.shape);
      zero_seeds.levels[li].dctr.resize(ctx.preds.levels[li].ctr.shape);
    }
    model.backward_clip(ctx, zero_seeds, &probe.logit_seeds);
  }
  EXPECT_GT(grad_norm_s1(), 0.0);
}

TEST(Model, BackwardMatchesFiniteDifferences) {
  Detector<double> model(tiny_cfg(), 17);
  Rng rng(14);
  const Tensor<double> clip = random_clip<double>(tiny_cfg(), rng);
  Probe<double> probe(model, rng);

  model.zero_grad();
  probe.backward(model, clip);

  auto params = model.parameters();
  Rng pick(15);
  int checked = 0;
  for (auto& p : params) {
    // probe a couple of entries per tensor
    for (int rep = 0; rep < 2; ++rep) {
      const std::size_t i = pick.uniform_int(p.value->numel());
      const double orig = (*p.value)[i];
      const double h = 1e-6 * std::max(1.0, std::abs(orig));
      (*p.value)[i] = orig + h;
      const double up = probe.value(model, clip);
      (*p.value)[i] = orig - h;
      const double dn = probe.value(model, clip);
      (*p.value)[i] = orig;
      const double num = (up - dn) / (2.0 * h);
      const double ana = (*p.grad)[i];
      const double tol = 1e-4 * std::max({1.0, std::abs(num), std::abs(ana)});
      EXPECT_NEAR(ana, num, tol) << p.name << "[" << i << "]";
      ++checked;
    }
  }
  EXPECT_GT(checked, 30);
}

TEST(Model, EndToEndDetectDeterministic) {
  Detector<float> model(default_cfg(), 21);
  Rng rng(16);
  const Tensor<float> clip = random_clip<float>(default_cfg(), rng);
  const auto a = model.detect(clip, 4, {0.05, 10, true, 0.3});
  const auto b = model.detect(clip, 4, {0.05, 10, true, 0.3});
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_DOUBLE_EQ(a[i].actorness, b[i].actorness);
    ASSERT_EQ(a[i].class_scores.size(), b[i].class_scores.size());
    for (std::size_t c = 0; c < a[i].class_scores.size(); ++c)
      EXPECT_DOUBLE_EQ(a[i].class_scores[c], b[i].class_scores[c]);
  }
  for (const auto& d : a) {
    EXPECT_TRUE(d.box.valid());
    EXPECT_GE(d.box.x1, 0.0);
    EXPECT_LE(d.box.x2, 64.0);
  }
}

TEST(Model, PerfectPredictionsGiveTinyLocalizationLoss) {
  // one box centered exactly on a p4 location; a tight sampling radius keeps
  // the positive set at that single center, whose centerness target is 1
  const ModelConfig mc = default_cfg();
  const PyramidSpec spec = PyramidSpec::desk_default();
  const Box gt{10, 10, 46, 46};  // 36px, centered on (28, 28)
  const FcosTargets tg = assign_fcos_targets({gt}, spec, mc.height, mc.width, 0.4);
  ASSERT_EQ(tg.num_pos, 1);

  DensePredictions<float> dp;
  dp.image_h = mc.height;
  dp.image_w = mc.width;
  for (const auto& tv : tg.levels) {
    typename DensePredictions<float>::Level lv;
    lv.stride = tv.stride;
    lv.h = tv.h;
    lv.w = tv.w;
    lv.act.resize({1, tv.h, tv.w});
    lv.ctr.resize({1, tv.h, tv.w});
    lv.reg_raw.resize({4, tv.h, tv.w});
    lv.ltrb.resize({4, tv.h, tv.w});
    lv.ltrb.fill(1.0f);
    const std::size_t n = static_cast<std::size_t>(tv.h) * tv.w;
    for (std::size_t i = 0; i < n; ++i) {
      lv.act[i] = tv.actorness[i] ? 30.0f : -30.0f;
      if (tv.actorness[i]) {
        for (int k = 0; k < 4; ++k)
          lv.ltrb[static_cast<std::size_t>(k) * n + i] = static_cast<float>(tv.ltrb[i][static_cast<std::size_t>(k)]);
        const double t = std::min(1.0 - 1e-9, std::max(1e-9, tv.centerness[i]));
        lv.ctr[i] = static_cast<float>(std::log(t / (1.0 - t)));
      }
    }
    dp.levels.push_back(std::move(lv));
  }
  const double l_al = detail::dense_localization_loss(dp, tg, TrainSchedule{}, 0.0, nullptr);
  EXPECT_LT(l_al, 1e-3);
}
