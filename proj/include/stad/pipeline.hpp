#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stad/config.hpp"
#include "stad/data.hpp"
#include "stad/io.hpp"
#include "stad/trainer.hpp"

namespace stad {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config binding

inline DataConfig data_config_from(const Config& c) {
  DataConfig d;
  d.num_videos = static_cast<int>(c.get_int("dataset.num_videos", 200));
  d.frames_per_video = static_cast<int>(c.get_int("dataset.frames_per_video", 64));
  d.canvas = static_cast<int>(c.get_int("dataset.canvas", 64));
  d.num_classes = static_cast<int>(c.get_int("dataset.classes", 6));
  d.keyframe_interval = static_cast<int>(c.get_int("dataset.keyframe_interval", 8));
  d.fps = c.get_double("dataset.fps", 8.0);
  d.min_actors = static_cast<int>(c.get_int("dataset.min_actors", 1));
  d.max_actors = static_cast<int>(c.get_int("dataset.max_actors", 3));
  d.label_dropout = c.get_double("dataset.label_dropout", 0.05);
  d.large_prob = c.get_double("dataset.large_prob", 0.10);
  return d;
}

inline ModelConfig model_config_from(const Config& c) {
  ModelConfig m;
  m.clip_len = static_cast<int>(c.get_int("model.clip_len", 8));
  m.height = m.width = static_cast<int>(c.get_int("dataset.canvas", 64));
  m.num_classes = static_cast<int>(c.get_int("dataset.classes", 6));
  m.base_width = static_cast<int>(c.get_int("model.base_width", 16));
  m.fpn_width = static_cast<int>(c.get_int("model.fpn_width", 64));
  m.roi_size = static_cast<int>(c.get_int("model.roi_size", 7));
  return m;
}

inline TrainSchedule train_schedule_from(const Config& c) {
  TrainSchedule t;
  t.iterations = static_cast<int>(c.get_int("train.iterations", 400));
  t.batch = static_cast<int>(c.get_int("train.batch", 8));
  t.lr = c.get_double("train.lr", 0.02);
  t.momentum = c.get_double("train.momentum", 0.9);
  t.lambda_cls = c.get_double("train.lambda_cls", 10.0);
  t.focal_alpha = c.get_double("train.focal_alpha", 0.25);
  t.focal_gamma = c.get_double("train.focal_gamma", 2.0);
  t.smooth_l1_beta = c.get_double("train.smooth_l1_beta", 1.0);
  t.center_radius = c.get_double("train.center_radius", 1.5);
  t.match_iou = c.get_double("train.match_iou", 0.5);
  t.train_decode.score_thresh = c.get_double("train.proposal_score_thresh", 0.3);
  t.train_decode.max_proposals = static_cast<int>(c.get_int("train.proposal_max", 100));
  t.train_decode.apply_nms = c.get_bool("train.proposal_nms", false);
  t.train_decode.nms_iou = c.get_double("train.proposal_nms_iou", 0.3);
  return t;
}

inline SsadSchedule ssad_schedule_from(const Config& c) {
  SsadSchedule s;
  s.iterations = static_cast<int>(c.get_int("ssad.iterations", 400));
  s.batch = static_cast<int>(c.get_int("ssad.batch", 16));
  const std::string ratio = c.get_str("ssad.ratio", "1:1");
  const std::size_t colon = ratio.find(':');
  if (colon == std::string::npos) throw std::runtime_error("ssad.ratio must look like 1:1");
  s.ratio_labeled = std::stoi(ratio.substr(0, colon));
  s.ratio_unlabeled = std::stoi(ratio.substr(colon + 1));
  s.lr = c.get_double("ssad.lr", c.get_double("train.lr", 0.02));
  s.lambda_unsup = c.get_double("ssad.lambda_unsup", 0.5);
  s.ema_decay = c.get_double("ssad.ema_decay", 0.999);
  s.strategy = c.get_str("ssad.strategy", "tla");
  s.hard_threshold = c.get_double("ssad.hard_threshold", 0.5);
  s.teacher_decode.score_thresh = c.get_double("ssad.teacher_score_thresh", 0.4);
  s.teacher_decode.max_proposals = static_cast<int>(c.get_int("ssad.teacher_max_proposals", 10));
  s.teacher_decode.apply_nms = true;
  s.teacher_decode.nms_iou = c.get_double("ssad.teacher_nms_iou", 0.3);
  return s;
}

inline EvalSettings eval_settings_from(const Config& c) {
  EvalSettings e;
  e.decode.score_thresh = c.get_double("eval.score_thresh", 0.4);
  e.decode.apply_nms = true;
  e.decode.nms_iou = c.get_double("eval.nms_iou", 0.3);
  e.decode.max_proposals = static_cast<int>(c.get_int("eval.max_actors", 10));
  e.action_score_thresh = c.get_double("eval.action_score_thresh", 0.002);
  return e;
}

inline TrainerConfig trainer_config_from(const Config& c, std::uint64_t seed) {
  TrainerConfig tc;
  tc.model = model_config_from(c);
  tc.train = train_schedule_from(c);
  tc.ssad = ssad_schedule_from(c);
  tc.seed = seed;
  return tc;
}

// ---------------------------------------------------------------------------
// Dataset persistence: manifest.json + videos/vNNNN.bin + annotations.csv

inline void save_dataset(const fs::path& dir, const SyntheticDataset& ds,
                         const std::string& config_echo) {
  fs::create_directories(dir / "videos");
  nlohmann::json manifest{{"format", "stad-dataset"},
                          {"dtype", "u8"},
                          {"canvas", ds.config.canvas},
                          {"frames_per_video", ds.config.frames_per_video},
                          {"fps", ds.config.fps},
                          {"num_classes", ds.config.num_classes},
                          {"keyframe_interval", ds.config.keyframe_interval},
                          {"num_videos", static_cast<int>(ds.videos.size())},
                          {"seed", ds.seed},
                          {"config", config_echo}};
  nlohmann::json vids = nlohmann::json::array();
  for (const Video& v : ds.videos) {
    char name[32];
    std::snprintf(name, sizeof(name), "videos/v%05d.bin", v.id);
    vids.push_back({{"id", v.id}, {"file", name}, {"frames", v.frames}});
    atomic_write_file(dir / name,
                      std::string(reinterpret_cast<const char*>(v.pixels.data()), v.pixels.size()));
  }
  manifest["videos"] = vids;
  atomic_write_file(dir / "annotations.csv", annotations_to_csv(ds.index, ds.config.canvas));
  atomic_write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline SyntheticDataset load_dataset(const fs::path& dir) {
  const nlohmann::json manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  if (manifest.value("format", "") != "stad-dataset")
    throw std::runtime_error("not a dataset directory: " + dir.string());
  SyntheticDataset ds;
  ds.config.canvas = manifest.at("canvas").get<int>();
  ds.config.frames_per_video = manifest.at("frames_per_video").get<int>();
  ds.config.fps = manifest.at("fps").get<double>();
  ds.config.num_classes = manifest.at("num_classes").get<int>();
  ds.config.keyframe_interval = manifest.at("keyframe_interval").get<int>();
  ds.config.num_videos = manifest.at("num_videos").get<int>();
  ds.seed = manifest.at("seed").get<std::uint64_t>();
  for (const auto& v : manifest.at("videos")) {
    Video video;
    video.id = v.at("id").get<int>();
    video.frames = v.at("frames").get<int>();
    video.h = video.w = ds.config.canvas;
    const std::string blob = read_file(dir / v.at("file").get<std::string>());
    const std::size_t expect =
        static_cast<std::size_t>(video.frames) * video.h * video.w;
    if (blob.size() != expect)
      throw std::runtime_error("video file size mismatch for id " + std::to_string(video.id));
    video.pixels.assign(blob.begin(), blob.end());
    ds.videos.push_back(std::move(video));
  }
  const CsvAnnotations csv = parse_ava_csv(read_file(dir / "annotations.csv"),
                                           ds.config.num_classes, ds.config.canvas);
  ds.index = index_from_annotations(csv, ds.config.fps, ds.config.keyframe_interval);
  ds.index.num_classes = ds.config.num_classes;
  return ds;
}

// Honors the data-root override: relative dataset paths resolve under
// STAD_DATA_ROOT when it is set.
inline fs::path resolve_data_path(const std::string& path) {
  fs::path p(path);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("STAD_DATA_ROOT")) return fs::path(root) / p;
  return p;
}

// ---------------------------------------------------------------------------
// Commands

struct GenDataResult {
  std::size_t train_labeled = 0, train_unlabeled = 0, val_labeled = 0;
};

inline GenDataResult cmd_gen_data(const Config& cfg, const fs::path& out_dir, std::uint64_t seed) {
  DataConfig dc = data_config_from(cfg);
  SyntheticDataset train = generate_synthetic(dc, seed);

  DataConfig vc = dc;
  vc.num_videos = static_cast<int>(cfg.get_int("dataset.val_videos", 32));
  vc.label_dropout = 0.0;  // clean ground truth for measurement
  SyntheticDataset val = generate_synthetic(vc, mix_seed(seed, 0xa117ull));

  save_dataset(out_dir / "train", train, cfg.raw());
  save_dataset(out_dir / "val", val, cfg.raw());

  GenDataResult r;
  r.train_labeled = train.index.labeled.size();
  r.train_unlabeled = train.index.unlabeled.size();
  r.val_labeled = val.index.labeled.size();
  return r;
}

struct TrainResult {
  fs::path checkpoint;
  double final_loss = 0.0;
  long iterations = 0;
};

inline TrainResult cmd_train(const Config& cfg, const fs::path& data_dir, const std::string& stage,
                             const fs::path& out_dir, std::uint64_t seed,
                             const std::optional<fs::path>& resume_ckpt,
                             std::ostream* progress = nullptr) {
  Dataset data(load_dataset(data_dir / "train"));
  TrainerConfig tc = trainer_config_from(cfg, seed);
  Trainer trainer(data, tc);

  fs::create_directories(out_dir);
  std::ofstream metrics(out_dir / ("metrics_" + stage + ".jsonl"), std::ios::trunc);

  // Resuming restarts the requested stage's schedule from the loaded weights.
  TrainState st;
  if (stage == "burn-in") {
    if (resume_ckpt) {
      st = state_from_checkpoint(Checkpoint::load(*resume_ckpt), tc.model);
      if (st.stage != Stage::burn_in) throw std::runtime_error("resume: not a burn-in checkpoint");
      st.iteration = 0;
      st.seed = seed;
    } else {
      st = trainer.init_state();
    }
    trainer.run_burn_in(st, &metrics);
  } else if (stage == "ssad") {
    if (!resume_ckpt) throw std::runtime_error("ssad stage requires a burn-in checkpoint");
    st = state_from_checkpoint(Checkpoint::load(*resume_ckpt), tc.model);
    st.seed = seed;
    if (st.stage == Stage::burn_in)
      trainer.enter_ssad(st);
    else
      st.iteration = 0;
    trainer.run_ssad(st, &metrics);
  } else {
    throw std::runtime_error("unknown stage: " + stage + " (expected burn-in or ssad)");
  }

  TrainResult res;
  res.iterations = st.iteration;
  res.checkpoint = out_dir / ("checkpoint_" + stage + ".bin");
  make_checkpoint(st, cfg.hash(), cfg.raw()).save(res.checkpoint);
  if (progress)
    *progress << "stage " << stage << " finished after " << st.iteration << " iterations\n";
  return res;
}

struct EvalOutput {
  EvalResult result;
  nlohmann::json json;
};

inline EvalOutput cmd_eval(const Config& cfg, const fs::path& ckpt_path, const fs::path& data_dir,
                           const std::string& split, const std::string& which_model,
                           const std::optional<fs::path>& out_path) {
  Dataset data(load_dataset(data_dir / split));
  const ModelConfig mc = model_config_from(cfg);
  TrainState st = state_from_checkpoint(Checkpoint::load(ckpt_path), mc);

  Detector<float>* model = &st.student;
  if (which_model == "teacher" || (which_model == "auto" && st.teacher)) {
    if (!st.teacher) throw std::runtime_error("checkpoint has no teacher weights");
    model = &*st.teacher;
  } else if (which_model != "student" && which_model != "auto") {
    throw std::runtime_error("unknown --model choice: " + which_model);
  }

  const EvalResult r = evaluate_model(*model, data, eval_settings_from(cfg));
  EvalOutput out;
  out.result = r;
  nlohmann::json aps = nlohmann::json::array();
  for (std::size_t c = 0; c < r.per_class_ap.size(); ++c)
    aps.push_back({{"class", action_class_name(static_cast<int>(c))},
                   {"ap", r.per_class_ap[c]},
                   {"gt_count", r.gt_count[c]}});
  out.json = {{"map", r.map},
              {"per_class", aps},
              {"num_gts", r.num_gts},
              {"num_dets", r.num_dets},
              {"num_matched", r.num_matched},
              {"split", split},
              {"model", which_model},
              {"config_hash", cfg.hash()}};
  if (out_path) atomic_write_file(*out_path, out.json.dump(2) + "\n");
  return out;
}

// Score a detections file (same schema the evaluator writes) against a split.
inline EvalOutput cmd_eval_detections(const Config& cfg, const fs::path& det_path,
                                      const fs::path& data_dir, const std::string& split,
                                      const std::optional<fs::path>& out_path) {
  Dataset data(load_dataset(data_dir / split));
  const int clip_len = static_cast<int>(cfg.get_int("model.clip_len", 8));
  std::vector<EvalFrame> frames;
  for (std::size_t i = 0; i < data.num_labeled(); ++i) {
    EvalFrame f;
    f.gts = data.labeled_clip(static_cast<int>(i), identity_view(), clip_len).gts;
    frames.push_back(std::move(f));
  }
  detections_from_text(read_file(det_path), frames);
  EvalOutput out;
  out.result = frame_map(frames, data.index().num_classes);
  out.json = {{"map", out.result.map}, {"split", split}, {"detections", det_path.string()}};
  if (out_path) atomic_write_file(*out_path, out.json.dump(2) + "\n");
  return out;
}

namespace detail {

// 3x5 digit glyphs for annotating rendered frames.
inline void draw_digit(std::vector<std::uint8_t>& rgb, int w, int h, int x0, int y0, int digit,
                       std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  static const std::uint16_t glyphs[10] = {0x7B6F, 0x2492, 0x73E7, 0x73CF, 0x5BC9,
                                           0x79CF, 0x79EF, 0x7249, 0x7BEF, 0x7BCF};
  if (digit < 0 || digit > 9) return;
  for (int row = 0; row < 5; ++row)
    for (int col = 0; col < 3; ++col)
      if (glyphs[digit] & (1 << (14 - (row * 3 + col)))) {
        const int x = x0 + col, y = y0 + row;
        if (x < 0 || x >= w || y < 0 || y >= h) continue;
        const std::size_t at = (static_cast<std::size_t>(y) * w + x) * 3;
        rgb[at] = r;
        rgb[at + 1] = g;
        rgb[at + 2] = b;
      }
}

inline void draw_box(std::vector<std::uint8_t>& rgb, int w, int h, const Box& box, std::uint8_t r,
                     std::uint8_t g, std::uint8_t b) {
  const int x1 = std::max(0, static_cast<int>(std::lround(box.x1)));
  const int y1 = std::max(0, static_cast<int>(std::lround(box.y1)));
  const int x2 = std::min(w - 1, static_cast<int>(std::lround(box.x2)) - 1);
  const int y2 = std::min(h - 1, static_cast<int>(std::lround(box.y2)) - 1);
  auto put = [&](int x, int y) {
    if (x < 0 || x >= w || y < 0 || y >= h) return;
    const std::size_t at = (static_cast<std::size_t>(y) * w + x) * 3;
    rgb[at] = r;
    rgb[at + 1] = g;
    rgb[at + 2] = b;
  };
  for (int x = x1; x <= x2; ++x) {
    put(x, y1);
    put(x, y2);
  }
  for (int y = y1; y <= y2; ++y) {
    put(x1, y);
    put(x2, y);
  }
}

inline std::string encode_ppm(const std::vector<std::uint8_t>& rgb, int w, int h) {
  std::ostringstream os;
  os << "P6\n" << w << ' ' << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  return os.str();
}

}  // namespace detail

inline double box_text_x(const Box& b) { return std::max(0.0, b.x1 + 1); }
inline double box_text_y(const Box& b) { return std::max(0.0, b.y1 - 6); }

struct PseudoLabelSummary {
  long clips = 0, boxes = 0, background = 0;
};

// Labels every unlabeled clip of the train split with the checkpoint's
// teacher (or student when no teacher exists) and dumps one JSON line per
// clip. With render=true, the annotated keyframes are also written as PPM
// images: labeled boxes in green with their class ids, background boxes red.
inline PseudoLabelSummary cmd_pseudo_label(const Config& cfg, const fs::path& ckpt_path,
                                           const fs::path& data_dir, const std::string& strategy,
                                           const fs::path& out_path, bool render,
                                           int max_clips = -1) {
  Dataset data(load_dataset(data_dir / "train"));
  TrainerConfig tc = trainer_config_from(cfg, 0);
  tc.ssad.strategy = strategy;
  Trainer trainer(data, tc);

  TrainState st = state_from_checkpoint(Checkpoint::load(ckpt_path), tc.model);
  if (!st.teacher) {
    st.teacher = st.student;
    st.stage = Stage::ssad;
  }
  if (strategy == "per-class") {
    // thresholds come from the model on the (labeled) training set
    trainer.set_class_thresholds(Trainer::calibrate_class_thresholds(
        *st.teacher, data, tc.ssad.teacher_decode, tc.train.match_iou));
  }

  PseudoLabelSummary summary;
  std::ostringstream dump;
  const long n = max_clips < 0 ? static_cast<long>(data.num_unlabeled())
                               : std::min<long>(max_clips, static_cast<long>(data.num_unlabeled()));
  if (render) fs::create_directories(out_path.parent_path() / "render");
  for (long i = 0; i < n; ++i) {
    const auto& desc = data.index().unlabeled[static_cast<std::size_t>(i)];
    Dataset::UnlabeledClip clip =
        data.unlabeled_clip(static_cast<int>(i), identity_view(), tc.model.clip_len);
    const PseudoLabelSet pseudo = trainer.label_clip(st, clip);
    ++summary.clips;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : pseudo.entries) {
      ++summary.boxes;
      summary.background += e.background;
      nlohmann::json labels = nlohmann::json::array();
      for (std::size_t c = 0; c < e.label.size(); ++c)
        if (e.label[c]) labels.push_back(static_cast<int>(c));
      entries.push_back({{"box", {e.box.x1, e.box.y1, e.box.x2, e.box.y2}},
                         {"labels", labels},
                         {"background", e.background},
                         {"matched_gt", e.matched_gt},
                         {"cost", e.cost}});
    }
    nlohmann::json rec{{"clip_id", clip.clip_id},
                       {"video", desc.video},
                       {"frame", desc.frame},
                       {"center_time", clip.center_time},
                       {"strategy", strategy},
                       {"provenance",
                        {{"left_time", pseudo.left_time},
                         {"right_time", pseudo.right_time},
                         {"teacher_iteration", pseudo.teacher_iteration}}},
                       {"entries", entries}};
    dump << rec.dump() << '\n';

    if (render) {
      const Video& video = data.videos()[static_cast<std::size_t>(desc.video)];
      const std::uint8_t* gray = video.frame_ptr(desc.frame);
      const int w = video.w, h = video.h;
      std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * h * 3);
      for (std::size_t p = 0; p < static_cast<std::size_t>(w) * h; ++p)
        rgb[p * 3] = rgb[p * 3 + 1] = rgb[p * 3 + 2] = gray[p];
      for (const auto& e : pseudo.entries) {
        if (e.background) {
          detail::draw_box(rgb, w, h, e.box, 220, 60, 60);
          continue;
        }
        detail::draw_box(rgb, w, h, e.box, 60, 220, 60);
        int tick = 0;
        for (std::size_t c = 0; c < e.label.size() && tick < 3; ++c)
          if (e.label[c]) {
            detail::draw_digit(rgb, w, h, static_cast<int>(box_text_x(e.box)) + tick * 4,
                               static_cast<int>(box_text_y(e.box)), static_cast<int>(c), 255, 255,
                               80);
            ++tick;
          }
      }
      char name[64];
      std::snprintf(name, sizeof(name), "render/clip_%06ld.ppm", clip.clip_id);
      atomic_write_file(out_path.parent_path() / name, detail::encode_ppm(rgb, w, h));
    }
  }
  atomic_write_file(out_path, dump.str());
  return summary;
}

}  // namespace stad
