#include "stad/tla.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "stad/rng.hpp"

using namespace stad;

namespace {

Detection make_det(const Box& b, std::vector<double> scores, double actorness = 0.8) {
  return Detection{b, actorness, std::move(scores)};
}

KeyframeAnnotation::Entry entry(const Box& b, LabelVec l, int id) {
  return {b, std::move(l), id};
}

// Brute-force matching oracle over all injective row->column maps including
// background padding, mirroring the cost definition independently.
std::vector<int> match_bruteforce(const std::vector<Detection>& dets,
                                  const std::vector<std::pair<Box, LabelVec>>& gts, int image) {
  const int n = static_cast<int>(dets.size());
  const int cols = std::max<int>(n, static_cast<int>(gts.size()));
  std::vector<int> perm(static_cast<std::size_t>(cols));
  std::iota(perm.begin(), perm.end(), 0);
  auto cell = [&](int i, int j) {
    const Detection& d = dets[static_cast<std::size_t>(i)];
    if (j >= static_cast<int>(gts.size()))
      return bce_multilabel(d.class_scores, LabelVec(d.class_scores.size(), 0));
    const auto& [gb, gl] = gts[static_cast<std::size_t>(j)];
    const Box nb{d.box.x1 / image, d.box.y1 / image, d.box.x2 / image, d.box.y2 / image};
    const Box ng{gb.x1 / image, gb.y1 / image, gb.x2 / image, gb.y2 / image};
    return bce_multilabel(d.class_scores, gl) + smooth_l1(nb, ng, 1.0) + giou_loss(d.box, gb);
  };
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> best_assign;
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += cell(i, perm[static_cast<std::size_t>(i)]);
    if (total < best) {
      best = total;
      best_assign.assign(perm.begin(), perm.begin() + n);
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best_assign;
}

}  // namespace

TEST(CostMatrix, PerfectMatchIsNearZero) {
  const Box b{10, 10, 30, 30};
  const LabelVec l{1, 0, 1};
  const auto cm = build_cost_matrix({make_det(b, {1.0 - 1e-7, 1e-7, 1.0 - 1e-7})}, {{b, l}}, 64, 64);
  EXPECT_EQ(cm.rows, 1);
  EXPECT_EQ(cm.cols, 1);
  EXPECT_NEAR(cm.at(0, 0), 0.0, 1e-5);
}

TEST(CostMatrix, BackgroundOnlyWhenNoGts) {
  const std::vector<double> scores{0.3, 0.8};
  const auto cm = build_cost_matrix({make_det(Box{0, 0, 10, 10}, scores)}, {}, 64, 64);
  EXPECT_EQ(cm.rows, 1);
  EXPECT_EQ(cm.cols, 1);
  EXPECT_EQ(cm.real_cols, 0);
  EXPECT_DOUBLE_EQ(cm.at(0, 0), bce_multilabel(scores, LabelVec{0, 0}));
}

TEST(CostMatrix, CellsEqualSumOfLossTerms) {
  const Box db{4, 8, 20, 28};
  const Box gb{6, 6, 24, 30};
  const std::vector<double> scores{0.7, 0.2};
  const LabelVec gl{1, 0};
  const auto cm = build_cost_matrix({make_det(db, scores), make_det(Box{40, 40, 60, 56}, scores)},
                                    {{gb, gl}}, 64, 64);
  EXPECT_EQ(cm.rows, 2);
  EXPECT_EQ(cm.cols, 2);
  EXPECT_EQ(cm.real_cols, 1);
  const Box ndb{db.x1 / 64, db.y1 / 64, db.x2 / 64, db.y2 / 64};
  const Box ngb{gb.x1 / 64, gb.y1 / 64, gb.x2 / 64, gb.y2 / 64};
  const double want =
      bce_multilabel(scores, gl) + smooth_l1(ndb, ngb, 1.0) + giou_loss(db, gb);
  EXPECT_DOUBLE_EQ(cm.at(0, 0), want);
  // padding column carries only the classification part
  EXPECT_DOUBLE_EQ(cm.at(0, 1), bce_multilabel(scores, LabelVec{0, 0}));
  EXPECT_TRUE(cm.finite());
}

TEST(CostMatrix, RequiresPredictions) {
  EXPECT_THROW(build_cost_matrix({}, {}, 64, 64), std::invalid_argument);
}

TEST(TlaMatch, SingleBoxTakesItsGtLabel) {
  KeyframeAnnotation left, right;
  left.frame_time = 1.0;
  right.frame_time = 2.0;
  left.entries.push_back(entry(Box{10, 10, 26, 26}, LabelVec{1, 0, 0}, 0));
  right.entries.push_back(entry(Box{14, 10, 30, 26}, LabelVec{0, 1, 0}, 0));
  // teacher box sits on the right keyframe's position with the right's profile
  const auto dets = std::vector<Detection>{make_det(Box{14, 10, 30, 26}, {0.05, 0.9, 0.05})};
  const PseudoLabelSet out = tla_match(dets, left, right, 64, 64);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_FALSE(out.entries[0].background);
  EXPECT_EQ(out.entries[0].label, (LabelVec{0, 1, 0}));
  EXPECT_EQ(out.entries[0].matched_gt, 1);
  // agrees with the exhaustive oracle
  std::vector<std::pair<Box, LabelVec>> pooled;
  for (const auto& e : left.entries) pooled.emplace_back(e.box, e.label);
  for (const auto& e : right.entries) pooled.emplace_back(e.box, e.label);
  EXPECT_EQ(out.entries[0].matched_gt, match_bruteforce(dets, pooled, 64)[0]);
}

TEST(TlaMatch, ExtraPredictionBecomesBackground) {
  KeyframeAnnotation left, right;
  left.frame_time = 0.0;
  right.frame_time = 1.0;
  left.entries.push_back(entry(Box{8, 8, 24, 24}, LabelVec{1, 0}, 0));
  const auto out = tla_match({make_det(Box{8, 8, 24, 24}, {0.9, 0.1}),
                              make_det(Box{40, 40, 56, 56}, {0.2, 0.2})},
                             left, right, 64, 64);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out.background_count(), 1u);
  EXPECT_FALSE(out.entries[0].background);
  EXPECT_TRUE(out.entries[1].background);
  EXPECT_TRUE(std::none_of(out.entries[1].label.begin(), out.entries[1].label.end(),
                           [](std::uint8_t v) { return v != 0; }));
}

TEST(TlaMatch, DuplicateEntityUsesLowerCostCopyOnce) {
  // same entity in both keyframes; identical annotations produce an exact tie
  // broken toward the left (lower index) copy
  KeyframeAnnotation left, right;
  left.frame_time = 0.0;
  right.frame_time = 1.0;
  const Box b{12, 12, 28, 28};
  left.entries.push_back(entry(b, LabelVec{1, 0}, 3));
  right.entries.push_back(entry(b, LabelVec{1, 0}, 3));
  const auto dets = std::vector<Detection>{make_det(b, {0.8, 0.1})};
  const auto out = tla_match(dets, left, right, 64, 64);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out.entries[0].matched_gt, 0);

  // when the right copy is closer, it wins instead
  KeyframeAnnotation right2 = right;
  right2.entries[0].box = Box{13, 12, 29, 28};
  const auto dets2 = std::vector<Detection>{make_det(Box{13, 12, 29, 28}, {0.8, 0.1})};
  const auto out2 = tla_match(dets2, left, right2, 64, 64);
  EXPECT_EQ(out2.entries[0].matched_gt, 1);
  std::vector<std::pair<Box, LabelVec>> pooled{{left.entries[0].box, left.entries[0].label},
                                               {right2.entries[0].box, right2.entries[0].label}};
  EXPECT_EQ(out2.entries[0].matched_gt, match_bruteforce(dets2, pooled, 64)[0]);
}

TEST(TlaMatch, EmptyDetectionsGiveEmptySet) {
  KeyframeAnnotation left, right;
  left.frame_time = 0.0;
  right.frame_time = 1.0;
  left.entries.push_back(entry(Box{8, 8, 24, 24}, LabelVec{1}, 0));
  EXPECT_TRUE(tla_match({}, left, right, 64, 64).empty());
}

TEST(TlaMatch, RandomInvariants) {
  Rng rng(55);
  for (int trial = 0; trial < 400; ++trial) {
    KeyframeAnnotation left, right;
    left.frame_time = 0.0;
    right.frame_time = 1.0;
    const int classes = 4;
    auto rand_entry = [&](int id) {
      const double x1 = rng.uniform(0, 40), y1 = rng.uniform(0, 40);
      LabelVec l(classes, 0);
      l[rng.uniform_int(classes)] = 1;
      if (rng.bernoulli(0.4)) l[rng.uniform_int(classes)] = 1;
      return entry(Box{x1, y1, x1 + rng.uniform(4, 20), y1 + rng.uniform(4, 20)}, l, id);
    };
    const int nl = rng.uniform_int(0, 2), nr = rng.uniform_int(0, 2);
    for (int i = 0; i < nl; ++i) left.entries.push_back(rand_entry(i));
    for (int i = 0; i < nr; ++i) right.entries.push_back(rand_entry(i));
    std::vector<Detection> dets;
    const int n = rng.uniform_int(1, 4);
    for (int i = 0; i < n; ++i) {
      const double x1 = rng.uniform(0, 40), y1 = rng.uniform(0, 40);
      std::vector<double> s(classes);
      for (auto& v : s) v = rng.uniform(0.01, 0.99);
      dets.push_back(make_det(Box{x1, y1, x1 + rng.uniform(4, 20), y1 + rng.uniform(4, 20)}, s));
    }
    const auto out = tla_match(dets, left, right, 64, 64);
    const int m = nl + nr;
    ASSERT_EQ(out.size(), dets.size());
    // background count and one-to-one real column usage
    EXPECT_EQ(static_cast<int>(out.background_count()), std::max(0, n - m));
    std::vector<int> used(static_cast<std::size_t>(m), 0);
    const LabelVec uni = label_union(left, right, classes);
    for (const auto& e : out.entries) {
      if (e.background) continue;
      ASSERT_GE(e.matched_gt, 0);
      ASSERT_LT(e.matched_gt, m);
      ++used[static_cast<std::size_t>(e.matched_gt)];
      for (std::size_t c = 0; c < e.label.size(); ++c)
        if (e.label[c]) EXPECT_TRUE(uni[c]) << "label outside the neighbour union";
    }
    for (int u : used) EXPECT_LE(u, 1);
  }
}

TEST(TlaAssign, RunsTheTeacherAndChecksTiming) {
  ModelConfig mc;
  mc.clip_len = 4;
  mc.height = mc.width = 48;
  mc.base_width = 4;
  mc.fpn_width = 8;
  mc.gn_groups = 2;
  mc.num_classes = 3;
  Detector<float> teacher(mc, 33);
  Tensor<float> clip({1, 4, 48, 48});
  Rng rng(7);
  for (auto& v : clip.data) v = static_cast<float>(rng.uniform());
  KeyframeAnnotation left, right;
  left.frame_time = 1.0;
  right.frame_time = 2.0;
  left.entries.push_back(entry(Box{8, 8, 24, 24}, LabelVec{1, 0, 0}, 0));
  right.entries.push_back(entry(Box{10, 8, 26, 24}, LabelVec{1, 0, 0}, 0));

  EXPECT_THROW(tla_assign(clip, 2, 2.5, left, right, teacher, DecodeConfig{0.4, 10, true, 0.3}),
               std::invalid_argument);
  const PseudoLabelSet out =
      tla_assign(clip, 2, 1.5, left, right, teacher, DecodeConfig{0.01, 10, true, 0.3}, 42);
  EXPECT_EQ(out.teacher_iteration, 42);
  EXPECT_EQ(out.left_time, 1.0);
  EXPECT_EQ(out.right_time, 2.0);
  for (const auto& e : out.entries) EXPECT_TRUE(e.box.valid());
}

TEST(HardThreshold, FiltersPerClass) {
  const auto out = hard_threshold_labels({make_det(Box{0, 0, 10, 10}, {0.9, 0.1})}, 0.5);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out.entries[0].label, (LabelVec{1, 0}));
  EXPECT_FALSE(out.entries[0].background);

  const auto bg = hard_threshold_labels({make_det(Box{0, 0, 10, 10}, {0.3, 0.1})}, 0.5);
  EXPECT_TRUE(bg.entries[0].background);
}

TEST(HardThreshold, MixedBatchMatchesEnumeration) {
  Rng rng(66);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Detection> dets;
    const int n = rng.uniform_int(1, 5);
    for (int i = 0; i < n; ++i) {
      std::vector<double> s(3);
      for (auto& v : s) v = rng.uniform();
      dets.push_back(make_det(Box{0, 0, 5, 5}, s));
    }
    const double tau = rng.uniform(0.2, 0.8);
    const auto out = hard_threshold_labels(dets, tau);
    for (std::size_t i = 0; i < dets.size(); ++i)
      for (std::size_t c = 0; c < 3; ++c)
        EXPECT_EQ(out.entries[i].label[c], dets[i].class_scores[c] >= tau ? 1 : 0);
  }
}

TEST(PerClassThreshold, UniformTausReduceToHardThreshold) {
  Rng rng(67);
  std::vector<Detection> dets;
  for (int i = 0; i < 6; ++i) {
    std::vector<double> s(3);
    for (auto& v : s) v = rng.uniform();
    dets.push_back(make_det(Box{0, 0, 5, 5}, s));
  }
  const std::vector<double> taus{0.5, 0.5, 0.5};
  const auto a = per_class_threshold_labels(dets, taus);
  const auto b = hard_threshold_labels(dets, 0.5);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.entries[i].label, b.entries[i].label);
    EXPECT_EQ(a.entries[i].background, b.entries[i].background);
  }
}

TEST(PerClassThreshold, ImpossibleTausMakeEverythingBackground) {
  const std::vector<double> taus{1.01, 1.01};
  const auto out = per_class_threshold_labels({make_det(Box{0, 0, 5, 5}, {1.0, 1.0})}, taus);
  EXPECT_TRUE(out.entries[0].background);
}

TEST(Interpolation, EndpointsAndMidpoint) {
  KeyframeAnnotation left, right;
  left.frame_time = 2.0;
  right.frame_time = 4.0;
  left.entries.push_back(entry(Box{10, 10, 20, 20}, LabelVec{1, 0}, 5));
  right.entries.push_back(entry(Box{30, 10, 40, 20}, LabelVec{0, 1}, 5));
  left.entries.push_back(entry(Box{0, 0, 5, 5}, LabelVec{1, 0}, 9));  // only on the left

  const auto at_left = interpolation_labels(left, right, 2.0);
  ASSERT_EQ(at_left.size(), 1u);  // unmatched entity dropped
  EXPECT_DOUBLE_EQ(at_left.entries[0].box.x1, 10.0);

  const auto mid = interpolation_labels(left, right, 3.0);
  EXPECT_DOUBLE_EQ(mid.entries[0].box.x1, 20.0);
  EXPECT_DOUBLE_EQ(mid.entries[0].box.x2, 30.0);
  EXPECT_EQ(mid.entries[0].label, (LabelVec{1, 1}));  // union of both sides
}

TEST(TemporalRestriction, RemovesClassesOutsideTheUnion) {
  KeyframeAnnotation left, right;
  left.frame_time = 0.0;
  right.frame_time = 1.0;
  left.entries.push_back(entry(Box{0, 0, 10, 10}, LabelVec{1, 0, 0}, 0));
  right.entries.push_back(entry(Box{0, 0, 10, 10}, LabelVec{0, 0, 1}, 0));

  PseudoLabelSet set;
  set.entries.push_back({Box{0, 0, 10, 10}, LabelVec{1, 1, 0}, false, -1, 0.0});
  set.entries.push_back({Box{20, 20, 30, 30}, LabelVec{0, 1, 0}, false, -1, 0.0});
  const auto out = temporal_restriction(std::move(set), left, right);
  EXPECT_EQ(out.entries[0].label, (LabelVec{1, 0, 0}));  // class 1 absent from union
  EXPECT_FALSE(out.entries[0].background);
  EXPECT_TRUE(out.entries[1].background);  // nothing survives
}

TEST(TemporalRestriction, RandomAgainstSetAlgebra) {
  Rng rng(68);
  for (int trial = 0; trial < 100; ++trial) {
    const int classes = 5;
    KeyframeAnnotation left, right;
    left.frame_time = 0.0;
    right.frame_time = 1.0;
    auto rand_label = [&]() {
      LabelVec l(classes, 0);
      l[rng.uniform_int(classes)] = 1;
      return l;
    };
    if (rng.bernoulli(0.8)) left.entries.push_back(entry(Box{0, 0, 5, 5}, rand_label(), 0));
    if (rng.bernoulli(0.8)) right.entries.push_back(entry(Box{0, 0, 5, 5}, rand_label(), 0));
    PseudoLabelSet set;
    LabelVec l(classes, 0);
    for (int c = 0; c < classes; ++c) l[static_cast<std::size_t>(c)] = rng.bernoulli(0.5);
    set.entries.push_back({Box{0, 0, 5, 5}, l, false, -1, 0.0});
    const LabelVec uni = label_union(left, right, classes);
    const auto out = temporal_restriction(std::move(set), left, right);
    for (int c = 0; c < classes; ++c)
      EXPECT_EQ(out.entries[0].label[static_cast<std::size_t>(c)],
                static_cast<std::uint8_t>(l[static_cast<std::size_t>(c)] && uni[static_cast<std::size_t>(c)]));
  }
}
