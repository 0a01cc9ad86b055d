#pragma once

#include <string>
#include <vector>

namespace fgfa {

// Axis-aligned box, corner form, x right / y down, inclusive of area
// computed as (x2-x1)*(y2-y1).
struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() > 0 && height() > 0 ? width() * height() : 0.0; }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
};

double iou(const Box& a, const Box& b);

struct Detection {
  int frame = 0;
  int class_id = 0;
  double score = 0.0;
  Box box;
};

// Greedy non-maximum suppression over one class. Returns indices of kept
// boxes in descending score order. Ties break on the original index so the
// result is deterministic.
std::vector<int> nms_keep(const std::vector<Box>& boxes, const std::vector<double>& scores,
                          double iou_thresh);

// Detections serialized one JSON object per line:
//   {"frame":..,"class_id":..,"score":..,"box":[x1,y1,x2,y2]}
void write_detections_jsonl(const std::string& path, const std::vector<Detection>& dets);
std::vector<Detection> read_detections_jsonl(const std::string& path);

}  // namespace fgfa
