#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fgfa/boxes.hpp"
#include "fgfa/synthetic.hpp"

namespace fgfa {

struct MotionGroupThresholds {
  double slow_min = 0.9;  // slow: score strictly above
  double fast_max = 0.7;  // fast: score strictly below; medium in between, inclusive
  int window = 10;
};

struct SizeGroupThresholds {
  double small_max_area = 50.0 * 50.0;
  double large_min_area = 150.0 * 150.0;
};

// Mean overlap of a track's box at `frame` with its own boxes up to
// `window` frames away (both directions, existing frames only). A track
// with no comparison frames scores 1.
double motion_iou(const Track& track, int frame, int window = 10);

std::string motion_group(double score, const MotionGroupThresholds& thr);
std::string size_group(double area, const SizeGroupThresholds& thr);  // small|middle|large

// Ground-truth box annotated with its group labels.
struct GtBox {
  int frame = 0;
  int class_id = 0;
  Box box;
  std::string motion;
  std::string size;
};

std::vector<GtBox> tracks_to_gt(const std::vector<Track>& tracks,
                                const MotionGroupThresholds& motion_thr = {},
                                const SizeGroupThresholds& size_thr = {});

struct EvalOptions {
  double iou_thresh = 0.5;
  bool eleven_point = false;   // 11-point interpolated AP instead of area under PR
  bool cross_group_fp = false;  // count out-of-group matches as FP instead of ignoring them
};

struct EvalResult {
  double map = 0.0;
  double map_slow = 0.0, map_medium = 0.0, map_fast = 0.0;
  double map_small = 0.0, map_middle = 0.0, map_large = 0.0;
  std::map<int, double> per_class;
  // (recall, precision) points of the ungrouped evaluation, per class
  std::map<int, std::vector<std::pair<double, double>>> pr_curves;
};

// Greedy score-ordered matching, one detection per ground-truth box,
// average precision per class, mean over classes that have ground truth.
// Group scores restrict ground truth to the group; detections matched to
// out-of-group ground truth are dropped from that group's ranking unless
// cross_group_fp is set.
EvalResult evaluate_map(const std::vector<Detection>& dets, const std::vector<GtBox>& gt,
                        const EvalOptions& opt = {});

struct SeqNmsConfig {
  double link_iou = 0.5;
  double suppress_iou = 0.3;
};

// Links boxes of one class across consecutive frames into the
// highest-total-score path, rescores the path to its average score,
// suppresses same-frame overlaps, and repeats while paths of length >= 2
// exist. Survivors then pass per-frame NMS. Box geometry never changes.
std::vector<Detection> seq_nms(const std::vector<Detection>& dets, const SeqNmsConfig& cfg = {});

void write_metrics_json(const std::string& path, const EvalResult& res);
EvalResult read_metrics_json(const std::string& path);

}  // namespace fgfa
