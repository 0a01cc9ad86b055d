#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fgfa/boxes.hpp"
#include "fgfa/tensor.hpp"

namespace fgfa {

// Moving sprite: translates at constant velocity, optionally with a
// sinusoidal wobble. Appearance is evaluated in sprite-local coordinates so
// the rendered pattern translates rigidly with the sprite and ground-truth
// flow stays exact.
struct SpriteSpec {
  int class_id = 1;
  std::string shape = "disc";  // disc | square | bar
  double size = 10.0;          // px: diameter / edge / bar length
  uint32_t texture_seed = 1;
  double start_x = 0.0, start_y = 0.0;  // center at frame 0
  double vx = 0.0, vy = 0.0;            // px per frame
  double jitter_amp = 0.0;
  double jitter_period = 0.0;
};

struct OcclusionRect {
  double x = 0.0, y = 0.0, w = 0.0, h = 0.0;
};

// Appearance degradations for one frame, applied after geometry and flow
// are fixed: occluders first, then defocus, then directional blur.
struct DegradeSpec {
  int frame = 0;
  double defocus_sigma = 0.0;
  double motion_blur_len = 0.0;    // samples along the blur line; <= 1 is identity
  double motion_blur_angle = 0.0;  // radians
  std::vector<OcclusionRect> occlude;
};

struct SceneSpec {
  int width = 64, height = 48, frames = 10;
  uint32_t seed = 1;
  double background_noise = 0.05;
  std::vector<SpriteSpec> sprites;
  std::vector<DegradeSpec> degrade;

  void validate() const;
};

struct TrackPoint {
  Box box;
  bool present = false;
};

struct Track {
  int id = 0;
  int class_id = 0;
  std::vector<TrackPoint> points;  // indexed by frame
};

struct Dataset {
  SceneSpec spec;
  std::vector<Tensor> frames;        // degraded, what the detector consumes
  std::vector<Tensor> clean_frames;  // pre-degradation, for analysis
  std::map<std::pair<int, int>, Tensor> flows;  // adjacent pairs, both directions
  std::vector<Track> tracks;
};

// Sprite center at frame t (continuous coordinates).
void sprite_pos(const SceneSpec& spec, int sprite, int t, double* x, double* y);

// Clean render of one frame: static noisy background plus alpha-composited
// textured sprites, values in [0,1], tensor [3,H,W].
Tensor render_frame(const SceneSpec& spec, int t);

// Exact displacement field aligning frame j's content to frame i's
// geometry: on pixels covered by a sprite in frame i the sprite's i -> j
// displacement, zero on background. Full resolution [2,H,W].
Tensor flow_between(const SceneSpec& spec, int i, int j);

Tensor degrade_frame(const Tensor& frame, const DegradeSpec& entry);

Dataset generate(const SceneSpec& spec);

// Speed (px/frame, axis-aligned) so a `box_size` square track scores the
// given mean overlap against its neighbors within +-window frames.
double speed_for_motion_iou(double box_size, double target, int window = 10);

std::string scene_spec_to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const std::string& text);

void save_dataset(const std::string& dir, const Dataset& ds);

struct LoadedDataset {
  SceneSpec spec;
  std::vector<Tensor> frames;
  std::map<std::pair<int, int>, Tensor> flows;
  std::vector<Track> tracks;
};

LoadedDataset load_dataset(const std::string& dir);

void write_tracks_json(const std::string& path, const std::vector<Track>& tracks);
std::vector<Track> read_tracks_json(const std::string& path);

}  // namespace fgfa
