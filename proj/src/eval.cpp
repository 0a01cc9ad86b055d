#include "fgfa/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "fgfa/errors.hpp"
#include "json.hpp"

namespace fgfa {

double motion_iou(const Track& track, int frame, int window) {
  if (frame < 0 || frame >= static_cast<int>(track.points.size()) ||
      !track.points[frame].present) {
    throw ContractViolation("motion_iou frame outside track");
  }
  double sum = 0.0;
  int n = 0;
  for (int d = -window; d <= window; ++d) {
    if (d == 0) continue;
    const int f = frame + d;
    if (f < 0 || f >= static_cast<int>(track.points.size()) || !track.points[f].present) continue;
    sum += iou(track.points[frame].box, track.points[f].box);
    ++n;
  }
  return n == 0 ? 1.0 : sum / n;
}

std::string motion_group(double score, const MotionGroupThresholds& thr) {
  if (score > thr.slow_min) return "slow";
  if (score < thr.fast_max) return "fast";
  return "medium";
}

std::string size_group(double area, const SizeGroupThresholds& thr) {
  if (area < thr.small_max_area) return "small";
  if (area > thr.large_min_area) return "large";
  return "middle";
}

std::vector<GtBox> tracks_to_gt(const std::vector<Track>& tracks,
                                const MotionGroupThresholds& motion_thr,
                                const SizeGroupThresholds& size_thr) {
  std::vector<GtBox> out;
  for (const Track& t : tracks) {
    for (size_t f = 0; f < t.points.size(); ++f) {
      if (!t.points[f].present) continue;
      GtBox g;
      g.frame = static_cast<int>(f);
      g.class_id = t.class_id;
      g.box = t.points[f].box;
      g.motion = motion_group(motion_iou(t, static_cast<int>(f), motion_thr.window), motion_thr);
      g.size = size_group(g.box.area(), size_thr);
      out.push_back(g);
    }
  }
  return out;
}

namespace {

enum class GroupKind { kNone, kMotion, kSize };

// AP for one class under an optional group restriction, plus the PR points.
double class_ap(const std::vector<Detection>& dets, const std::vector<GtBox>& gt, int cls,
                const EvalOptions& opt, GroupKind kind, const std::string& group,
                bool* has_gt, std::vector<std::pair<double, double>>* pr) {
  std::vector<const GtBox*> class_gt;
  for (const GtBox& g : gt) {
    if (g.class_id == cls) class_gt.push_back(&g);
  }
  auto in_group = [&](const GtBox& g) {
    switch (kind) {
      case GroupKind::kNone: return true;
      case GroupKind::kMotion: return g.motion == group;
      case GroupKind::kSize: return g.size == group;
    }
    return true;
  };
  int npos = 0;
  for (const GtBox* g : class_gt) {
    if (in_group(*g)) ++npos;
  }
  *has_gt = npos > 0;
  if (npos == 0) return 0.0;

  std::vector<int> order;
  for (size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].class_id == cls) order.push_back(static_cast<int>(i));
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const Detection &da = dets[a], &db = dets[b];
    if (da.score != db.score) return da.score > db.score;
    if (da.frame != db.frame) return da.frame < db.frame;
    if (da.box.x1 != db.box.x1) return da.box.x1 < db.box.x1;
    if (da.box.y1 != db.box.y1) return da.box.y1 < db.box.y1;
    return a < b;
  });

  std::vector<char> gt_used(class_gt.size(), 0);
  std::vector<double> recall, precision;
  int tp = 0, fp = 0;
  for (int di : order) {
    const Detection& d = dets[di];
    int best = -1;
    double best_iou = opt.iou_thresh;
    for (size_t gi = 0; gi < class_gt.size(); ++gi) {
      if (gt_used[gi] || class_gt[gi]->frame != d.frame) continue;
      const double v = iou(d.box, class_gt[gi]->box);
      if (v >= best_iou && (best == -1 || v > best_iou)) {
        best_iou = v;
        best = static_cast<int>(gi);
      }
    }
    if (best >= 0) {
      gt_used[best] = 1;
      if (in_group(*class_gt[best])) {
        ++tp;
      } else if (opt.cross_group_fp) {
        ++fp;
      } else {
        continue;  // matched ground truth outside the group: dropped from ranking
      }
    } else {
      ++fp;
    }
    recall.push_back(static_cast<double>(tp) / npos);
    precision.push_back(static_cast<double>(tp) / (tp + fp));
  }
  if (pr) {
    pr->clear();
    for (size_t i = 0; i < recall.size(); ++i) pr->push_back({recall[i], precision[i]});
  }
  if (recall.empty()) return 0.0;

  // precision envelope: max precision at recall >= r
  std::vector<double> env = precision;
  for (int i = static_cast<int>(env.size()) - 2; i >= 0; --i) {
    env[i] = std::max(env[i], env[i + 1]);
  }
  if (opt.eleven_point) {
    double ap = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double r = k / 10.0;
      double p = 0.0;
      for (size_t i = 0; i < recall.size(); ++i) {
        if (recall[i] >= r) {
          p = env[i];
          break;
        }
      }
      ap += p / 11.0;
    }
    return ap;
  }
  double ap = 0.0;
  double prev_r = 0.0;
  for (size_t i = 0; i < recall.size(); ++i) {
    if (recall[i] > prev_r) {
      ap += (recall[i] - prev_r) * env[i];
      prev_r = recall[i];
    }
  }
  return ap;
}

double mean_ap(const std::vector<Detection>& dets, const std::vector<GtBox>& gt,
               const std::set<int>& classes, const EvalOptions& opt, GroupKind kind,
               const std::string& group,
               std::map<int, double>* per_class = nullptr,
               std::map<int, std::vector<std::pair<double, double>>>* pr_curves = nullptr) {
  double sum = 0.0;
  int n = 0;
  for (int cls : classes) {
    bool has_gt = false;
    std::vector<std::pair<double, double>> pr;
    const double ap =
        class_ap(dets, gt, cls, opt, kind, group, &has_gt, pr_curves ? &pr : nullptr);
    if (!has_gt) continue;
    if (per_class) (*per_class)[cls] = ap;
    if (pr_curves) (*pr_curves)[cls] = std::move(pr);
    sum += ap;
    ++n;
  }
  return n == 0 ? 0.0 : sum / n;
}

}  // namespace

EvalResult evaluate_map(const std::vector<Detection>& dets, const std::vector<GtBox>& gt,
                        const EvalOptions& opt) {
  {
    std::vector<std::tuple<int, int, double, double, double, double, double>> keys;
    keys.reserve(dets.size());
    for (const Detection& d : dets) {
      keys.emplace_back(d.frame, d.class_id, d.score, d.box.x1, d.box.y1, d.box.x2, d.box.y2);
    }
    std::sort(keys.begin(), keys.end());
    if (std::adjacent_find(keys.begin(), keys.end()) != keys.end()) {
      throw ContractViolation("duplicate detection entries");
    }
  }
  std::set<int> classes;
  for (const GtBox& g : gt) classes.insert(g.class_id);
  for (const Detection& d : dets) classes.insert(d.class_id);
  EvalResult res;
  res.map = mean_ap(dets, gt, classes, opt, GroupKind::kNone, "", &res.per_class, &res.pr_curves);
  res.map_slow = mean_ap(dets, gt, classes, opt, GroupKind::kMotion, "slow");
  res.map_medium = mean_ap(dets, gt, classes, opt, GroupKind::kMotion, "medium");
  res.map_fast = mean_ap(dets, gt, classes, opt, GroupKind::kMotion, "fast");
  res.map_small = mean_ap(dets, gt, classes, opt, GroupKind::kSize, "small");
  res.map_middle = mean_ap(dets, gt, classes, opt, GroupKind::kSize, "middle");
  res.map_large = mean_ap(dets, gt, classes, opt, GroupKind::kSize, "large");
  return res;
}

namespace {

struct SeqCand {
  Detection det;
  bool active = true;
};

// One pass of path finding + rescoring + suppression for a single class.
// Returns emitted (rescored) detections; `cands` keeps the still-active rest.
std::vector<Detection> seq_nms_class(std::vector<SeqCand>& cands, const SeqNmsConfig& cfg) {
  std::vector<Detection> emitted;
  if (cands.empty()) return emitted;
  int max_frame = 0;
  for (const SeqCand& c : cands) max_frame = std::max(max_frame, c.det.frame);

  while (true) {
    std::vector<std::vector<int>> per_frame(max_frame + 1);
    for (size_t i = 0; i < cands.size(); ++i) {
      if (cands[i].active) per_frame[cands[i].det.frame].push_back(static_cast<int>(i));
    }
    // dp[i] = best path total starting at candidate i; paths cover
    // consecutive frames and adjacent boxes must overlap by link_iou
    std::vector<double> dp(cands.size(), 0.0);
    std::vector<int> succ(cands.size(), -1);
    for (int f = max_frame; f >= 0; --f) {
      for (int ci : per_frame[f]) {
        dp[ci] = cands[ci].det.score;
        double best_next = 0.0;
        int best_idx = -1;
        if (f + 1 <= max_frame) {
          for (int nj : per_frame[f + 1]) {
            if (iou(cands[ci].det.box, cands[nj].det.box) < cfg.link_iou) continue;
            if (dp[nj] > best_next) {
              best_next = dp[nj];
              best_idx = nj;
            }
          }
        }
        dp[ci] += best_next;
        succ[ci] = best_idx;
      }
    }
    int start = -1;
    double best = 0.0;
    for (int f = 0; f <= max_frame; ++f) {
      for (int ci : per_frame[f]) {
        if (dp[ci] > best) {
          best = dp[ci];
          start = ci;
        }
      }
    }
    if (start < 0) break;
    std::vector<int> path;
    for (int ci = start; ci >= 0; ci = succ[ci]) path.push_back(ci);
    if (path.size() < 2) break;

    double avg = 0.0;
    for (int ci : path) avg += cands[ci].det.score;
    avg /= static_cast<double>(path.size());
    for (int ci : path) {
      Detection d = cands[ci].det;
      d.score = avg;
      emitted.push_back(d);
      cands[ci].active = false;
      for (int oj : per_frame[d.frame]) {
        if (oj == ci || !cands[oj].active) continue;
        if (iou(cands[oj].det.box, d.box) >= cfg.suppress_iou) cands[oj].active = false;
      }
    }
  }
  for (const SeqCand& c : cands) {
    if (c.active) emitted.push_back(c.det);
  }
  return emitted;
}

}  // namespace

std::vector<Detection> seq_nms(const std::vector<Detection>& dets, const SeqNmsConfig& cfg) {
  if (cfg.link_iou < 0 || cfg.link_iou > 1 || cfg.suppress_iou < 0 || cfg.suppress_iou > 1) {
    throw ConfigError("seq-nms thresholds must be in [0,1]");
  }
  std::set<int> classes;
  for (const Detection& d : dets) classes.insert(d.class_id);
  std::vector<Detection> out;
  for (int cls : classes) {
    std::vector<SeqCand> cands;
    for (const Detection& d : dets) {
      if (d.class_id == cls) cands.push_back(SeqCand{d, true});
    }
    std::sort(cands.begin(), cands.end(), [](const SeqCand& a, const SeqCand& b) {
      if (a.det.frame != b.det.frame) return a.det.frame < b.det.frame;
      if (a.det.score != b.det.score) return a.det.score > b.det.score;
      if (a.det.box.x1 != b.det.box.x1) return a.det.box.x1 < b.det.box.x1;
      return a.det.box.y1 < b.det.box.y1;
    });
    std::vector<Detection> emitted = seq_nms_class(cands, cfg);
    // survivors per frame pass plain NMS at the suppression threshold
    std::set<int> frames;
    for (const Detection& d : emitted) frames.insert(d.frame);
    for (int f : frames) {
      std::vector<Box> boxes;
      std::vector<double> scores;
      std::vector<int> src;
      for (size_t i = 0; i < emitted.size(); ++i) {
        if (emitted[i].frame == f) {
          boxes.push_back(emitted[i].box);
          scores.push_back(emitted[i].score);
          src.push_back(static_cast<int>(i));
        }
      }
      for (int k : nms_keep(boxes, scores, cfg.suppress_iou)) out.push_back(emitted[src[k]]);
    }
  }
  std::sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    if (a.frame != b.frame) return a.frame < b.frame;
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    if (a.score != b.score) return a.score > b.score;
    if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
    return a.box.y1 < b.box.y1;
  });
  return out;
}

void write_metrics_json(const std::string& path, const EvalResult& res) {
  nlohmann::ordered_json j;
  j["map"] = res.map;
  j["map_slow"] = res.map_slow;
  j["map_medium"] = res.map_medium;
  j["map_fast"] = res.map_fast;
  j["map_small"] = res.map_small;
  j["map_middle"] = res.map_middle;
  j["map_large"] = res.map_large;
  j["per_class"] = nlohmann::ordered_json::object();
  for (const auto& [cls, ap] : res.per_class) j["per_class"][std::to_string(cls)] = ap;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path);
}

EvalResult read_metrics_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path + ": " + e.what());
  }
  EvalResult res;
  try {
    res.map = j.at("map").get<double>();
    res.map_slow = j.at("map_slow").get<double>();
    res.map_medium = j.at("map_medium").get<double>();
    res.map_fast = j.at("map_fast").get<double>();
    res.map_small = j.at("map_small").get<double>();
    res.map_middle = j.at("map_middle").get<double>();
    res.map_large = j.at("map_large").get<double>();
    for (const auto& [key, val] : j.at("per_class").items()) {
      res.per_class[std::stoi(key)] = val.get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
  return res;
}

}  // namespace fgfa
