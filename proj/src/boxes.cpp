#include "fgfa/boxes.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "fgfa/errors.hpp"
#include "json.hpp"

namespace fgfa {

double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<int> nms_keep(const std::vector<Box>& boxes, const std::vector<double>& scores,
                          double iou_thresh) {
  if (boxes.size() != scores.size()) {
    throw ContractViolation("nms box/score count mismatch");
  }
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<int> kept;
  std::vector<char> removed(boxes.size(), 0);
  for (int idx : order) {
    if (removed[idx]) continue;
    kept.push_back(idx);
    for (int other : order) {
      if (other == idx || removed[other]) continue;
      if (iou(boxes[idx], boxes[other]) >= iou_thresh) removed[other] = 1;
    }
  }
  return kept;
}

void write_detections_jsonl(const std::string& path, const std::vector<Detection>& dets) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const Detection& d : dets) {
    nlohmann::ordered_json j;
    j["frame"] = d.frame;
    j["class_id"] = d.class_id;
    j["score"] = d.score;
    j["box"] = {d.box.x1, d.box.y1, d.box.x2, d.box.y2};
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("failed writing " + path);
}

std::vector<Detection> read_detections_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<Detection> dets;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    Detection d;
    try {
      d.frame = j.at("frame").get<int>();
      d.class_id = j.at("class_id").get<int>();
      d.score = j.at("score").get<double>();
      const auto& b = j.at("box");
      if (!b.is_array() || b.size() != 4) throw IoError("box must be a 4-element array");
      d.box = Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    dets.push_back(d);
  }
  return dets;
}

}  // namespace fgfa
