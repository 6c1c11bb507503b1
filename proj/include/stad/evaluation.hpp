#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "stad/assignment.hpp"
#include "stad/geometry.hpp"

namespace stad {

struct EvalFrame {
  std::vector<std::pair<Box, LabelVec>> gts;
  // (box, class id, score); one entry per scored class of a detection
  std::vector<std::tuple<Box, int, double>> dets;
};

struct EvalResult {
  std::vector<double> per_class_ap;   // indexed by class, 0 for classes without GT
  std::vector<long> gt_count;         // GT instances per class
  double map = 0.0;                   // mean over classes with at least one GT
  long num_gts = 0;
  long num_dets = 0;
  long num_matched = 0;
};

// Frame-level average precision at an IoU threshold, every (box, class,
// score) triple scored independently. Greedy matching by descending score
// against the highest-IoU unmatched ground truth of the same class; the
// precision envelope is made monotone and integrated over all recall points.
inline EvalResult frame_map(const std::vector<EvalFrame>& frames, int num_classes,
                            double iou_thresh = 0.5) {
  EvalResult res;
  res.per_class_ap.assign(static_cast<std::size_t>(num_classes), 0.0);
  res.gt_count.assign(static_cast<std::size_t>(num_classes), 0);

  for (const auto& f : frames)
    for (const auto& [box, label] : f.gts) {
      (void)box;
      for (int c = 0; c < num_classes; ++c)
        if (label[static_cast<std::size_t>(c)]) {
          ++res.gt_count[static_cast<std::size_t>(c)];
          ++res.num_gts;
        }
    }
  if (res.num_gts == 0) throw std::invalid_argument("frame_map: no ground truth instances");

  int classes_with_gt = 0;
  double ap_sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    struct Cand {
      double score;
      std::size_t frame;
      std::size_t det;
    };
    std::vector<Cand> cands;
    for (std::size_t fi = 0; fi < frames.size(); ++fi)
      for (std::size_t di = 0; di < frames[fi].dets.size(); ++di)
        if (std::get<1>(frames[fi].dets[di]) == c)
          cands.push_back({std::get<2>(frames[fi].dets[di]), fi, di});
    res.num_dets += static_cast<long>(cands.size());

    const long n_gt = res.gt_count[static_cast<std::size_t>(c)];
    if (n_gt == 0) continue;  // class absent from ground truth: excluded
    ++classes_with_gt;
    if (cands.empty()) continue;  // AP 0

    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.score > b.score; });

    // per-frame matched flags for this class's GT boxes
    std::vector<std::vector<char>> matched(frames.size());
    for (std::size_t fi = 0; fi < frames.size(); ++fi)
      matched[fi].assign(frames[fi].gts.size(), 0);

    std::vector<char> is_tp(cands.size(), 0);
    for (std::size_t k = 0; k < cands.size(); ++k) {
      const auto& f = frames[cands[k].frame];
      const Box& db = std::get<0>(f.dets[cands[k].det]);
      int best = -1;
      double best_iou = 0.0;
      for (std::size_t g = 0; g < f.gts.size(); ++g) {
        if (!f.gts[g].second[static_cast<std::size_t>(c)]) continue;
        if (matched[cands[k].frame][g]) continue;
        const double v = iou(db, f.gts[g].first);
        if (v > best_iou) {
          best_iou = v;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0 && best_iou >= iou_thresh) {
        matched[cands[k].frame][static_cast<std::size_t>(best)] = 1;
        is_tp[k] = 1;
        ++res.num_matched;
      }
    }

    // precision-recall points, then the monotone envelope
    std::vector<double> prec(cands.size()), rec(cands.size());
    long tp = 0;
    for (std::size_t k = 0; k < cands.size(); ++k) {
      tp += is_tp[k];
      prec[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
      rec[k] = static_cast<double>(tp) / static_cast<double>(n_gt);
    }
    for (std::size_t k = cands.size() - 1; k-- > 0;)
      prec[k] = std::max(prec[k], prec[k + 1]);
    double ap = 0.0;
    double prev_rec = 0.0;
    for (std::size_t k = 0; k < cands.size(); ++k) {
      if (rec[k] > prev_rec) {
        ap += (rec[k] - prev_rec) * prec[k];
        prev_rec = rec[k];
      }
    }
    res.per_class_ap[static_cast<std::size_t>(c)] = ap;
    ap_sum += ap;
  }
  res.map = classes_with_gt > 0 ? ap_sum / classes_with_gt : 0.0;
  return res;
}

// Line format shared by model output and oracle fixtures:
// frame_id,x1,y1,x2,y2,class_id,score
inline std::string detections_to_text(const std::vector<EvalFrame>& frames) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t fi = 0; fi < frames.size(); ++fi)
    for (const auto& [box, cls, score] : frames[fi].dets)
      os << fi << ',' << box.x1 << ',' << box.y1 << ',' << box.x2 << ',' << box.y2 << ',' << cls
         << ',' << score << '\n';
  return os.str();
}

inline void detections_from_text(const std::string& text, std::vector<EvalFrame>& frames) {
  std::istringstream is(text);
  std::string line;
  int row = 0;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() != 7)
      throw std::runtime_error("detections row " + std::to_string(row) + ": expected 7 fields");
    const std::size_t fi = static_cast<std::size_t>(std::stol(fields[0]));
    if (fi >= frames.size())
      throw std::runtime_error("detections row " + std::to_string(row) + ": frame out of range");
    frames[fi].dets.emplace_back(
        Box{std::stod(fields[1]), std::stod(fields[2]), std::stod(fields[3]), std::stod(fields[4])},
        std::stoi(fields[5]), std::stod(fields[6]));
  }
}

}  // namespace stad
