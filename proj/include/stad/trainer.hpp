#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "stad/assignment.hpp"
#include "stad/checkpoint.hpp"
#include "stad/data.hpp"
#include "stad/evaluation.hpp"
#include "stad/losses.hpp"
#include "stad/model.hpp"
#include "stad/rng.hpp"
#include "stad/tla.hpp"

namespace stad {

struct TrainSchedule {
  int iterations = 400;
  int batch = 8;
  double lr = 0.02;
  double momentum = 0.9;
  double lambda_cls = 10.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double smooth_l1_beta = 1.0;
  double center_radius = 1.5;
  double match_iou = 0.5;
  DecodeConfig train_decode{0.3, 100, false, 0.3};
};

struct SsadSchedule {
  int iterations = 400;
  int batch = 16;  // split between labeled and unlabeled by the ratio
  int ratio_labeled = 1;
  int ratio_unlabeled = 1;
  double lr = 0.02;
  double lambda_unsup = 0.5;
  double ema_decay = 0.999;
  std::string strategy = "tla";  // tla | hard | per-class | interp | none | ema
  double hard_threshold = 0.5;
  DecodeConfig teacher_decode{0.4, 10, true, 0.3};
};

struct EvalSettings {
  DecodeConfig decode{0.4, 10, true, 0.3};
  double action_score_thresh = 0.002;
};

struct LossReport {
  double l_al = 0.0, l_ac = 0.0;
  double l_sup = 0.0, l_unsup = 0.0, total = 0.0;
  long pos_locations = 0, pos_proposals = 0;
  int unsup_clips_used = 0;
};

enum class Stage { burn_in, ssad };

inline const char* stage_name(Stage s) { return s == Stage::burn_in ? "burn_in" : "ssad"; }

struct TrainState {
  Detector<float> student;
  std::optional<Detector<float>> teacher;
  std::vector<Tensor<float>> momentum;
  long iteration = 0;  // within the current stage
  Stage stage = Stage::burn_in;
  std::uint64_t seed = 0;
};

// theta_t <- m * theta_t + (1-m) * theta_s, elementwise over every parameter.
inline void ema_update(Detector<float>& teacher, Detector<float>& student, double m) {
  auto tp = teacher.parameters();
  auto sp = student.parameters();
  if (tp.size() != sp.size()) throw std::logic_error("ema_update: parameter mismatch");
  const float mf = static_cast<float>(m);
  for (std::size_t k = 0; k < tp.size(); ++k) {
    Tensor<float>& t = *tp[k].value;
    const Tensor<float>& s = *sp[k].value;
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = mf * t[i] + (1.0f - mf) * s[i];
  }
}

namespace detail {

inline Tensor<float> wrap_model_input(Tensor<float> frames) {
  Tensor<float> input;
  input.shape = {1, frames.dim(0), frames.dim(1), frames.dim(2)};
  input.data = std::move(frames.data);
  return input;
}

struct ClipLossTargets {
  std::vector<std::pair<Box, LabelVec>> localization;   // boxes for the dense head
  std::vector<std::pair<Box, LabelVec>> classification; // label-bearing boxes for matching
};

// Actor-localization loss over dense predictions: focal actorness at every
// location, GIoU and centerness BCE at positives, all normalized by the
// positive count. Fills per-location gradient seeds when grads != nullptr.
inline double dense_localization_loss(const DensePredictions<float>& preds,
                                      const FcosTargets& tg, const TrainSchedule& ts,
                                      double grad_scale, DenseGrads<float>* grads) {
  const double pos_norm = std::max(1, tg.num_pos);
  if (grads) grads->levels.resize(preds.levels.size());
  double cls_sum = 0.0, iou_sum = 0.0, ctr_sum = 0.0;
  for (std::size_t li = 0; li < preds.levels.size(); ++li) {
    const auto& lv = preds.levels[li];
    const auto& tv = tg.levels[li];
    typename DenseGrads<float>::Level* g = grads ? &grads->levels[li] : nullptr;
    if (g) {
      g->dact.resize(lv.act.shape);
      g->dltrb.resize(lv.ltrb.shape);
      g->dctr.resize(lv.ctr.shape);
    }
    const std::size_t n = static_cast<std::size_t>(lv.h) * lv.w;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(static_cast<double>(lv.act[i]));
      double dp = 0.0;
      cls_sum += focal_loss(p, tv.actorness[i], ts.focal_alpha, ts.focal_gamma, &dp);
      if (g) g->dact[i] = static_cast<float>(grad_scale * dp * p * (1.0 - p) / pos_norm);
      if (!tv.actorness[i]) continue;

      const double x = (static_cast<double>(i % static_cast<std::size_t>(lv.w)) + 0.5) * lv.stride;
      const double y = (static_cast<double>(i / static_cast<std::size_t>(lv.w)) + 0.5) * lv.stride;
      const Box pred{x - lv.ltrb[0 * n + i], y - lv.ltrb[1 * n + i],
                     x + lv.ltrb[2 * n + i], y + lv.ltrb[3 * n + i]};
      const Box gt{x - tv.ltrb[i][0], y - tv.ltrb[i][1], x + tv.ltrb[i][2], y + tv.ltrb[i][3]};
      std::array<double, 4> db{};
      iou_sum += giou_loss(pred, gt, &db);
      if (g) {
        g->dltrb[0 * n + i] = static_cast<float>(grad_scale * -db[0] / pos_norm);
        g->dltrb[1 * n + i] = static_cast<float>(grad_scale * -db[1] / pos_norm);
        g->dltrb[2 * n + i] = static_cast<float>(grad_scale * db[2] / pos_norm);
        g->dltrb[3 * n + i] = static_cast<float>(grad_scale * db[3] / pos_norm);
      }

      const double cp = sigmoid(static_cast<double>(lv.ctr[i]));
      double dc = 0.0;
      ctr_sum += centerness_loss(cp, tv.centerness[i], &dc);
      if (g) g->dctr[i] = static_cast<float>(grad_scale * dc * cp * (1.0 - cp) / pos_norm);
    }
  }
  return (cls_sum + iou_sum + ctr_sum) / pos_norm;
}

// Per-clip loss with gradients accumulated into the model when
// grad_scale > 0. The action part is mean BCE over proposals matched at
// match_iou; unmatched proposals are ignored.
inline LossReport clip_loss(Detector<float>& model, Tensor<float> frames, int keyframe,
                            const ClipLossTargets& targets, const TrainSchedule& ts,
                            const PyramidSpec& pyramid, double grad_scale) {
  LossReport rep;
  Tensor<float> input = wrap_model_input(std::move(frames));
  TrainContext<float> ctx = model.forward_clip(input, keyframe);
  const ModelConfig& mc = model.config();

  std::vector<Box> loc_boxes;
  loc_boxes.reserve(targets.localization.size());
  for (const auto& [b, l] : targets.localization) {
    (void)l;
    loc_boxes.push_back(b);
  }
  const FcosTargets tg =
      assign_fcos_targets(loc_boxes, pyramid, mc.height, mc.width, ts.center_radius);
  rep.pos_locations = tg.num_pos;

  DenseGrads<float> dg;
  rep.l_al = dense_localization_loss(ctx.preds, tg, ts, grad_scale, &dg);

  // Dense proposals (no NMS in training) matched against label-bearing boxes.
  const std::vector<Detection> proposals =
      Detector<float>::decode_proposals(ctx.preds, ts.train_decode);
  const MatchResult mr = match_proposals(proposals, targets.classification, ts.match_iou);
  rep.pos_proposals = static_cast<long>(mr.positives.size());

  Tensor<float> dlogits;
  if (!mr.positives.empty()) {
    std::vector<Box> boxes;
    boxes.reserve(mr.positives.size());
    for (const auto& [pi, label] : mr.positives) {
      (void)label;
      boxes.push_back(proposals[static_cast<std::size_t>(pi)].box);
    }
    const Tensor<float> logits = model.forward_action(ctx, boxes);
    const int rows = logits.dim(0);
    const int c = logits.dim(1);
    dlogits.resize(logits.shape);
    std::vector<double> probs(static_cast<std::size_t>(c));
    std::vector<double> dprobs(static_cast<std::size_t>(c));
    double bce_sum = 0.0;
    for (int r = 0; r < rows; ++r) {
      for (int k = 0; k < c; ++k)
        probs[static_cast<std::size_t>(k)] =
            sigmoid(static_cast<double>(logits[static_cast<std::size_t>(r) * c + k]));
      bce_sum += bce_multilabel(probs, mr.positives[static_cast<std::size_t>(r)].second, dprobs);
      for (int k = 0; k < c; ++k) {
        const double p = probs[static_cast<std::size_t>(k)];
        dlogits[static_cast<std::size_t>(r) * c + k] =
            static_cast<float>(grad_scale * ts.lambda_cls * dprobs[static_cast<std::size_t>(k)] *
                               p * (1.0 - p) / rows);
      }
    }
    rep.l_ac = bce_sum / rows;
  }

  rep.total = rep.l_al + ts.lambda_cls * rep.l_ac;
  if (grad_scale > 0.0) {
    model.backward_clip(ctx, dg, ctx.action_ran ? &dlogits : nullptr);
  } else {
    model.clear_caches();
  }
  return rep;
}

}  // namespace detail

inline LossReport supervised_clip_loss(Detector<float>& model, const Dataset::LabeledClip& clip,
                                       const TrainSchedule& ts, const PyramidSpec& pyramid,
                                       double grad_scale) {
  detail::ClipLossTargets t;
  t.localization = clip.gts;
  t.classification = clip.gts;
  LossReport rep = detail::clip_loss(model, clip.frames, clip.keyframe_index, t, ts, pyramid,
                                     grad_scale);
  rep.l_sup = rep.total;
  return rep;
}

// Identical loss form on pseudo targets; background entries keep their boxes
// in the localization part but never reach the classification part.
inline LossReport unsupervised_clip_loss(Detector<float>& model, const Tensor<float>& frames,
                                         int keyframe, const PseudoLabelSet& pseudo,
                                         const TrainSchedule& ts, const PyramidSpec& pyramid,
                                         double grad_scale) {
  if (pseudo.empty()) return {};
  detail::ClipLossTargets t;
  for (const auto& e : pseudo.entries) {
    t.localization.emplace_back(e.box, e.label);
    if (!e.background) t.classification.emplace_back(e.box, e.label);
  }
  LossReport rep =
      detail::clip_loss(model, frames, keyframe, t, ts, pyramid, grad_scale);
  rep.l_unsup = rep.total;
  return rep;
}

struct TrainerConfig {
  ModelConfig model;
  TrainSchedule train;
  SsadSchedule ssad;
  PyramidSpec pyramid = PyramidSpec::desk_default();
  std::uint64_t seed = 1;
};

class Trainer {
 public:
  Trainer(const Dataset& data, TrainerConfig cfg) : data_(data), cfg_(std::move(cfg)) {
    cfg_.pyramid.validate();
    if (data_.num_labeled() == 0) throw std::invalid_argument("trainer: no labeled clips");
  }

  const TrainerConfig& config() const { return cfg_; }
  const Dataset& data() const { return data_; }

  static double cosine_lr(double base, long t, long total) {
    if (total <= 0) return base;
    return base * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(t) / static_cast<double>(total)));
  }

  TrainState init_state() const {
    TrainState st;
    st.student = Detector<float>(cfg_.model, mix_seed(cfg_.seed, 0x1171));
    st.stage = Stage::burn_in;
    st.seed = cfg_.seed;
    init_momentum(st);
    return st;
  }

  // Copies the warmed-up detector into both roles and restarts the optimizer.
  void enter_ssad(TrainState& st) const {
    st.teacher = st.student;
    st.stage = Stage::ssad;
    st.iteration = 0;
    init_momentum(st);
    if (cfg_.ssad.strategy == "per-class")
      class_taus_ = calibrate_class_thresholds(*st.teacher, data_, cfg_.ssad.teacher_decode,
                                               cfg_.train.match_iou);
  }

  // Gradient accumulation over one labeled batch; no parameter update.
  LossReport supervised_pass(TrainState& st, const std::vector<int>& labeled) const {
    st.student.zero_grad();
    st.student.clear_caches();
    LossReport rep;
    const double scale = 1.0 / static_cast<double>(labeled.size());
    for (int idx : labeled) {
      Rng vr(mix_seed(st.seed, 0xA060 + static_cast<std::uint64_t>(idx),
                      static_cast<std::uint64_t>(st.iteration)));
      const ViewTransform view = sample_train_view(data_.config().canvas, vr);
      const Dataset::LabeledClip clip = data_.labeled_clip(idx, view, cfg_.model.clip_len);
      const LossReport r = supervised_clip_loss(st.student, clip, cfg_.train, cfg_.pyramid, scale);
      rep.l_al += r.l_al * scale;
      rep.l_ac += r.l_ac * scale;
      rep.pos_locations += r.pos_locations;
      rep.pos_proposals += r.pos_proposals;
    }
    rep.l_sup = rep.l_al + cfg_.train.lambda_cls * rep.l_ac;
    rep.total = rep.l_sup;
    return rep;
  }

  void apply_sgd(TrainState& st, double lr) const {
    auto params = st.student.parameters();
    if (st.momentum.size() != params.size()) throw std::logic_error("trainer: momentum mismatch");
    const float mu = static_cast<float>(cfg_.train.momentum);
    const float lrf = static_cast<float>(lr);
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor<float>& v = st.momentum[k];
      Tensor<float>& p = *params[k].value;
      const Tensor<float>& g = *params[k].grad;
      for (std::size_t i = 0; i < p.numel(); ++i) {
        v[i] = mu * v[i] + g[i];
        p[i] -= lrf * v[i];
      }
    }
  }

  LossReport supervised_step(TrainState& st, const std::vector<int>& labeled) const {
    if (st.stage != Stage::burn_in) throw std::logic_error("supervised_step: wrong stage");
    const double lr = cosine_lr(cfg_.train.lr, st.iteration, cfg_.train.iterations);
    LossReport rep = supervised_pass(st, labeled);
    check_finite(rep, st.iteration);
    apply_sgd(st, lr);
    ++st.iteration;
    return rep;
  }

  // One teacher-student iteration: supervised gradients on the labeled half,
  // pseudo-labeled gradients on the unlabeled half, SGD on the student, then
  // the EMA teacher update. lambda_unsup = 0 (or strategy none/ema) skips the
  // unlabeled half entirely.
  LossReport ssad_step(TrainState& st, const std::vector<int>& labeled,
                       const std::vector<int>& unlabeled) const {
    if (st.stage != Stage::ssad || !st.teacher)
      throw std::logic_error("ssad_step: enter_ssad first");
    const SsadSchedule& ss = cfg_.ssad;
    const double lr = cosine_lr(ss.lr, st.iteration, ss.iterations);
    LossReport rep = supervised_pass(st, labeled);

    const bool use_unsup =
        ss.lambda_unsup > 0.0 && ss.strategy != "none" && ss.strategy != "ema" && !unlabeled.empty();
    if (use_unsup) {
      struct Pending {
        Tensor<float> frames;
        int keyframe;
        PseudoLabelSet pseudo;
      };
      std::vector<Pending> pending;
      for (int idx : unlabeled) {
        Rng vr(mix_seed(st.seed, 0xB070 + static_cast<std::uint64_t>(idx),
                        static_cast<std::uint64_t>(st.iteration)));
        const ViewTransform view = sample_train_view(data_.config().canvas, vr);
        Dataset::UnlabeledClip clip = data_.unlabeled_clip(idx, view, cfg_.model.clip_len);
        PseudoLabelSet pseudo = label_clip(st, clip);
        if (pseudo.empty()) continue;
        pending.push_back({std::move(clip.frames), clip.keyframe_index, std::move(pseudo)});
      }
      rep.unsup_clips_used = static_cast<int>(pending.size());
      if (!pending.empty()) {
        const double scale = ss.lambda_unsup / static_cast<double>(pending.size());
        for (auto& p : pending) {
          const LossReport r = unsupervised_clip_loss(st.student, p.frames, p.keyframe, p.pseudo,
                                                      cfg_.train, cfg_.pyramid, scale);
          rep.l_unsup += r.l_unsup / static_cast<double>(pending.size());
          rep.pos_locations += r.pos_locations;
          rep.pos_proposals += r.pos_proposals;
        }
      }
    }

    rep.total = rep.l_sup + ss.lambda_unsup * rep.l_unsup;
    check_finite(rep, st.iteration);
    apply_sgd(st, lr);
    ema_update(*st.teacher, st.student, ss.ema_decay);
    ++st.iteration;
    return rep;
  }

  // Pseudo labels for one unlabeled clip under the configured strategy.
  PseudoLabelSet label_clip(TrainState& st, const Dataset::UnlabeledClip& clip) const {
    const SsadSchedule& ss = cfg_.ssad;
    if (ss.strategy == "interp") {
      PseudoLabelSet p = interpolation_labels(clip.left, clip.right, clip.center_time);
      p.teacher_iteration = st.iteration;
      return p;
    }
    Tensor<float> input = detail::wrap_model_input(clip.frames);
    const std::vector<Detection> dets =
        st.teacher.value().detect(input, clip.keyframe_index, ss.teacher_decode);
    PseudoLabelSet p;
    if (ss.strategy == "tla") {
      p = tla_match(dets, clip.left, clip.right, cfg_.model.width, cfg_.model.height);
    } else if (ss.strategy == "hard") {
      p = temporal_restriction(hard_threshold_labels(dets, ss.hard_threshold), clip.left,
                               clip.right);
    } else if (ss.strategy == "per-class") {
      p = temporal_restriction(per_class_threshold_labels(dets, class_taus_), clip.left,
                               clip.right);
    } else {
      throw std::invalid_argument("unknown pseudo-label strategy: " + ss.strategy);
    }
    p.teacher_iteration = st.iteration;
    return p;
  }

  void run_burn_in(TrainState& st, std::ostream* metrics = nullptr) const {
    if (st.stage != Stage::burn_in) throw std::logic_error("run_burn_in: wrong stage");
    EpochSampler sampler(data_.num_labeled(), mix_seed(st.seed, 0x5a3c, 1));
    for (int t = 0; t < cfg_.train.iterations; ++t) {
      const double lr = cosine_lr(cfg_.train.lr, st.iteration, cfg_.train.iterations);
      const LossReport rep = supervised_step(st, sampler.next(cfg_.train.batch));
      if (metrics) log_metrics(*metrics, st, rep, lr);
    }
  }

  void run_ssad(TrainState& st, std::ostream* metrics = nullptr) const {
    if (st.stage != Stage::ssad) throw std::logic_error("run_ssad: enter_ssad first");
    const int per_part = cfg_.ssad.batch / (cfg_.ssad.ratio_labeled + cfg_.ssad.ratio_unlabeled);
    const int n_lab = per_part * cfg_.ssad.ratio_labeled;
    const int n_unlab = per_part * cfg_.ssad.ratio_unlabeled;
    if (n_lab < 1) throw std::invalid_argument("ssad: batch too small for the ratio");
    EpochSampler lab(data_.num_labeled(), mix_seed(st.seed, 0x5a3c, 2));
    EpochSampler unlab(std::max<std::size_t>(1, data_.num_unlabeled()),
                       mix_seed(st.seed, 0x7b1d, 2));
    const bool any_unlabeled = data_.num_unlabeled() > 0;
    for (int t = 0; t < cfg_.ssad.iterations; ++t) {
      const double lr = cosine_lr(cfg_.ssad.lr, st.iteration, cfg_.ssad.iterations);
      const std::vector<int> u = any_unlabeled ? unlab.next(n_unlab) : std::vector<int>{};
      const LossReport rep = ssad_step(st, lab.next(n_lab), u);
      if (metrics) log_metrics(*metrics, st, rep, lr);
    }
  }

  std::vector<double> class_thresholds() const { return class_taus_; }
  void set_class_thresholds(std::vector<double> taus) const { class_taus_ = std::move(taus); }

  // Per-class score cutoffs from the labeled training set: the lowest score
  // that keeps precision at or above 0.5 for that class.
  static std::vector<double> calibrate_class_thresholds(
      Detector<float>& model, const Dataset& data, const DecodeConfig& decode, double match_iou,
      std::vector<std::vector<std::pair<double, bool>>>* pr_dump = nullptr, int max_clips = 400) {
    const int c = model.num_classes();
    std::vector<std::vector<std::pair<double, bool>>> points(static_cast<std::size_t>(c));
    const int n = static_cast<int>(std::min<std::size_t>(data.num_labeled(),
                                                         static_cast<std::size_t>(max_clips)));
    for (int i = 0; i < n; ++i) {
      const Dataset::LabeledClip clip =
          data.labeled_clip(i, identity_view(), model.config().clip_len);
      Tensor<float> input = detail::wrap_model_input(clip.frames);
      for (const Detection& d : model.detect(input, clip.keyframe_index, decode)) {
        for (int k = 0; k < c; ++k) {
          bool correct = false;
          for (const auto& [gb, gl] : clip.gts)
            if (gl[static_cast<std::size_t>(k)] && iou(d.box, gb) >= match_iou) {
              correct = true;
              break;
            }
          points[static_cast<std::size_t>(k)].emplace_back(
              d.class_scores[static_cast<std::size_t>(k)], correct);
        }
      }
    }
    std::vector<double> taus(static_cast<std::size_t>(c), 1.01);
    for (int k = 0; k < c; ++k) {
      auto& pts = points[static_cast<std::size_t>(k)];
      std::stable_sort(pts.begin(), pts.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      long correct = 0;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        correct += pts[i].second;
        const double precision = static_cast<double>(correct) / static_cast<double>(i + 1);
        if (precision >= 0.5) taus[static_cast<std::size_t>(k)] = pts[i].first;
      }
    }
    if (pr_dump) *pr_dump = std::move(points);
    return taus;
  }

 private:
  void init_momentum(TrainState& st) const {
    st.momentum.clear();
    for (const auto& p : st.student.parameters()) st.momentum.emplace_back(p.value->shape);
  }

  static void check_finite(const LossReport& rep, long iteration) {
    if (!std::isfinite(rep.total))
      throw std::runtime_error("training diverged at iteration " + std::to_string(iteration) +
                               " (loss " + std::to_string(rep.total) + ")");
  }

  static void log_metrics(std::ostream& os, const TrainState& st, const LossReport& rep,
                          double lr) {
    nlohmann::json j{{"iter", st.iteration - 1},
                     {"stage", stage_name(st.stage)},
                     {"lr", lr},
                     {"l_al", rep.l_al},
                     {"l_ac", rep.l_ac},
                     {"l_sup", rep.l_sup},
                     {"l_unsup", rep.l_unsup},
                     {"total", rep.total},
                     {"pos_locations", rep.pos_locations},
                     {"pos_proposals", rep.pos_proposals},
                     {"unsup_clips", rep.unsup_clips_used}};
    os << j.dump() << '\n';
  }

  const Dataset& data_;
  TrainerConfig cfg_;
  mutable std::vector<double> class_taus_;
};

// Test-regime evaluation over every annotated keyframe of a dataset:
// detections capped by the decode settings, expanded into (box, class, score)
// triples with score = actorness * class probability.
inline EvalResult evaluate_model(Detector<float>& model, const Dataset& data,
                                 const EvalSettings& es) {
  std::vector<EvalFrame> frames;
  frames.reserve(data.num_labeled());
  for (std::size_t i = 0; i < data.num_labeled(); ++i) {
    const Dataset::LabeledClip clip =
        data.labeled_clip(static_cast<int>(i), identity_view(), model.config().clip_len);
    EvalFrame f;
    f.gts = clip.gts;
    Tensor<float> input = detail::wrap_model_input(clip.frames);
    for (const Detection& d : model.detect(input, clip.keyframe_index, es.decode)) {
      for (std::size_t c = 0; c < d.class_scores.size(); ++c) {
        const double score = d.actorness * d.class_scores[c];
        if (score >= es.action_score_thresh)
          f.dets.emplace_back(d.box, static_cast<int>(c), score);
      }
    }
    frames.push_back(std::move(f));
  }
  return frame_map(frames, model.num_classes());
}

// ---------------------------------------------------------------------------
// Checkpointing

inline Checkpoint make_checkpoint(TrainState& st, std::uint64_t config_hash,
                                  const std::string& config_echo) {
  Checkpoint ck;
  ck.manifest = {{"format", "stad-checkpoint"},
                 {"iteration", st.iteration},
                 {"stage", stage_name(st.stage)},
                 {"seed", st.seed},
                 {"config_hash", config_hash},
                 {"config", config_echo},
                 {"has_teacher", st.teacher.has_value()}};
  auto params = st.student.parameters();
  for (auto& p : params) ck.tensors.emplace("student/" + p.name, *p.value);
  for (std::size_t k = 0; k < params.size(); ++k)
    ck.tensors.emplace("opt/" + params[k].name, st.momentum[k]);
  if (st.teacher)
    for (auto& p : st.teacher->parameters()) ck.tensors.emplace("teacher/" + p.name, *p.value);
  return ck;
}

inline TrainState state_from_checkpoint(const Checkpoint& ck, const ModelConfig& mc) {
  TrainState st;
  st.student = Detector<float>(mc, 0);
  st.iteration = ck.manifest.at("iteration").get<long>();
  st.seed = ck.manifest.at("seed").get<std::uint64_t>();
  st.stage = ck.manifest.at("stage").get<std::string>() == "ssad" ? Stage::ssad : Stage::burn_in;

  auto load_into = [&](Detector<float>& model, const std::string& prefix) {
    for (auto& p : model.parameters()) {
      auto it = ck.tensors.find(prefix + p.name);
      if (it == ck.tensors.end())
        throw std::runtime_error("checkpoint: missing tensor " + prefix + p.name);
      if (it->second.shape != p.value->shape)
        throw std::runtime_error("checkpoint: shape mismatch for " + prefix + p.name);
      *p.value = it->second;
    }
  };
  load_into(st.student, "student/");
  st.momentum.clear();
  for (auto& p : st.student.parameters()) {
    auto it = ck.tensors.find("opt/" + p.name);
    if (it == ck.tensors.end())
      throw std::runtime_error("checkpoint: missing optimizer tensor for " + p.name);
    st.momentum.push_back(it->second);
  }
  if (ck.manifest.at("has_teacher").get<bool>()) {
    st.teacher = Detector<float>(mc, 0);
    load_into(*st.teacher, "teacher/");
  }
  return st;
}

}  // namespace stad
