#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "fgfa/errors.hpp"
#include "fgfa/eval.hpp"
#include "fgfa/flow_warp.hpp"
#include "fgfa/synthetic.hpp"
#include "support/oracles.hpp"

using namespace fgfa;

namespace {

SpriteSpec disc(int class_id, double size, double x, double y, double vx, double vy) {
  SpriteSpec s;
  s.class_id = class_id;
  s.shape = "disc";
  s.size = size;
  s.start_x = x;
  s.start_y = y;
  s.vx = vx;
  s.vy = vy;
  return s;
}

SceneSpec small_scene() {
  SceneSpec spec;
  spec.width = 48;
  spec.height = 32;
  spec.frames = 6;
  spec.seed = 7;
  spec.sprites.push_back(disc(1, 10, 14, 16, 0.0, 0.0));
  spec.sprites.push_back(disc(2, 8, 34, 14, 0.0, 0.0));
  return spec;
}

}  // namespace

TEST_CASE("scene validation rejects bad parameters") {
  SceneSpec spec = small_scene();
  spec.frames = 0;
  CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("frames"), ConfigError);

  spec = small_scene();
  spec.width = 4;
  CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("at least 8x8"), ConfigError);

  spec = small_scene();
  spec.sprites[0].size = 200;
  CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("larger than canvas"), ConfigError);

  spec = small_scene();
  spec.sprites[0].shape = "triangle";
  CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("unknown sprite shape"), ConfigError);

  spec = small_scene();
  spec.sprites[0].size = -1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);

  spec = small_scene();
  spec.degrade.push_back(DegradeSpec{});
  spec.degrade.back().frame = 99;
  CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("out of range"), ConfigError);
}

TEST_CASE("generate rejects sprites that leave the canvas too often") {
  SceneSpec spec;
  spec.width = 40;
  spec.height = 24;
  spec.frames = 10;
  // on canvas only for the last few frames: well under the 80% requirement
  spec.sprites.push_back(disc(1, 8, -20, 12, 3.0, 0.0));
  CHECK_THROWS_WITH_AS(generate(spec), doctest::Contains("80%"), ConfigError);
}

TEST_CASE("static scene: identical frames, zero flow, constant boxes") {
  SceneSpec spec = small_scene();
  Dataset ds = generate(spec);
  REQUIRE(static_cast<int>(ds.frames.size()) == spec.frames);
  REQUIRE(static_cast<int>(ds.clean_frames.size()) == spec.frames);

  for (int t = 1; t < spec.frames; ++t) {
    CHECK(bitwise_equal(ds.frames[0], ds.frames[t]));
  }
  for (const auto& [pair, flow] : ds.flows) {
    (void)pair;
    double mx = 0.0;
    for (size_t i = 0; i < flow.numel(); ++i) mx = std::max(mx, std::abs(static_cast<double>(flow.data()[i])));
    CHECK(mx == 0.0);
  }
  REQUIRE(ds.tracks.size() == 2);
  for (const Track& tr : ds.tracks) {
    REQUIRE(static_cast<int>(tr.points.size()) == spec.frames);
    for (const TrackPoint& p : tr.points) {
      CHECK(p.present);
      CHECK(p.box.x1 == tr.points[0].box.x1);
      CHECK(p.box.y1 == tr.points[0].box.y1);
      CHECK(p.box.x2 == tr.points[0].box.x2);
      CHECK(p.box.y2 == tr.points[0].box.y2);
    }
  }
  // pixel values stay inside [0,1]
  for (size_t i = 0; i < ds.frames[0].numel(); ++i) {
    CHECK(ds.frames[0].data()[i] >= 0.0f);
    CHECK(ds.frames[0].data()[i] <= 1.0f);
  }
}

TEST_CASE("generation is deterministic") {
  SceneSpec spec = small_scene();
  spec.sprites[0].vx = 1.5;
  spec.degrade.push_back(DegradeSpec{});
  spec.degrade.back().frame = 2;
  spec.degrade.back().defocus_sigma = 1.0;
  Dataset a = generate(spec);
  Dataset b = generate(spec);
  for (int t = 0; t < spec.frames; ++t) {
    CHECK(bitwise_equal(a.frames[t], b.frames[t]));
    CHECK(bitwise_equal(a.clean_frames[t], b.clean_frames[t]));
  }
  REQUIRE(a.flows.size() == b.flows.size());
  for (const auto& [pair, flow] : a.flows) CHECK(bitwise_equal(flow, b.flows.at(pair)));
}

TEST_CASE("moving disc: flow matches velocity and reconstructs the next frame") {
  SceneSpec spec;
  spec.width = 64;
  spec.height = 32;
  spec.frames = 5;
  spec.seed = 11;
  spec.sprites.push_back(disc(1, 12, 14, 16, 3.0, 0.0));
  Dataset ds = generate(spec);

  const double r = 6.0;
  for (int t = 0; t + 1 < spec.frames; ++t) {
    const Tensor& flow = ds.flows.at({t, t + 1});
    double cx, cy;
    sprite_pos(spec, 0, t, &cx, &cy);

    // disc interior carries the sprite displacement, far background is zero
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        const double dist = std::hypot(x - cx, y - cy);
        if (dist < r - 1.0) {
          CHECK(flow.at3(0, y, x) == doctest::Approx(3.0).epsilon(1e-12));
          CHECK(flow.at3(1, y, x) == doctest::Approx(0.0).epsilon(1e-12));
        } else if (dist > r + 4.0) {
          double cx1, cy1;
          sprite_pos(spec, 0, t + 1, &cx1, &cy1);
          if (std::hypot(x - cx1, y - cy1) > r + 4.0) {
            CHECK(flow.at3(0, y, x) == 0.0f);
            CHECK(flow.at3(1, y, x) == 0.0f);
          }
        }
      }
    }

    // track box translates by exactly the velocity while fully on canvas
    const Box& b0 = ds.tracks[0].points[t].box;
    const Box& b1 = ds.tracks[0].points[t + 1].box;
    CHECK(b1.x1 - b0.x1 == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(b1.y1 - b0.y1 == doctest::Approx(0.0).epsilon(1e-9));

    // warping the next clean frame back with the ground-truth flow
    // reproduces the current clean frame on the disc interior
    Tensor warped = warp_bilinear(ds.clean_frames[t + 1], flow);
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        if (std::hypot(x - cx, y - cy) >= r - 2.0) continue;
        for (int c = 0; c < 3; ++c) {
          CHECK(std::abs(warped.at3(c, y, x) - ds.clean_frames[t].at3(c, y, x)) < 1e-5);
        }
      }
    }
  }

  // composing two adjacent ground-truth flows matches the two-step flow
  Tensor direct = flow_between(spec, 0, 2);
  Tensor comp = compose_flows(ds.flows.at({0, 1}), ds.flows.at({1, 2}));
  double cx, cy;
  sprite_pos(spec, 0, 0, &cx, &cy);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      if (std::hypot(x - cx, y - cy) >= r - 2.0) continue;
      CHECK(std::abs(comp.at3(0, y, x) - direct.at3(0, y, x)) < 1e-5);
      CHECK(std::abs(comp.at3(1, y, x) - direct.at3(1, y, x)) < 1e-5);
    }
  }
}

TEST_CASE("degrade: no-op parameters leave the frame untouched") {
  SceneSpec spec = small_scene();
  Tensor frame = render_frame(spec, 0);
  DegradeSpec d;
  d.frame = 0;
  Tensor out = degrade_frame(frame, d);
  CHECK(bitwise_equal(frame, out));
}

TEST_CASE("degrade: blur preserves constant images") {
  Tensor frame = Tensor::full({3, 20, 24}, 0.37f);
  DegradeSpec d;
  d.defocus_sigma = 1.5;
  d.motion_blur_len = 5;
  Tensor out = degrade_frame(frame, d);
  for (size_t i = 0; i < out.numel(); ++i) {
    CHECK(std::abs(out.data()[i] - 0.37f) < 1e-6);
  }
}

TEST_CASE("degrade: defocus of a point matches a sampled gaussian kernel") {
  const double sigma = 1.0;
  const int r = 3;  // blur radius for sigma 1
  Tensor frame({1, 15, 15});
  frame.at3(0, 7, 7) = 1.0f;
  DegradeSpec d;
  d.defocus_sigma = sigma;
  Tensor out = degrade_frame(frame, d);

  double z = 0.0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) z += std::exp(-0.5 * (dx * dx + dy * dy) / (sigma * sigma));
  }
  double total = 0.0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const double want = std::exp(-0.5 * (dx * dx + dy * dy) / (sigma * sigma)) / z;
      CHECK(std::abs(out.at3(0, 7 + dy, 7 + dx) - want) < 1e-4);
      total += out.at3(0, 7 + dy, 7 + dx);
    }
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-5));
  // nothing leaks outside the kernel support
  CHECK(out.at3(0, 7, 7 + r + 1) == 0.0f);
  CHECK(out.at3(0, 7 - r - 1, 7) == 0.0f);
}

TEST_CASE("degrade: directional blur of a point spreads along the blur line") {
  Tensor frame({1, 15, 15});
  frame.at3(0, 7, 7) = 1.0f;
  DegradeSpec d;
  d.motion_blur_len = 4;
  d.motion_blur_angle = 0.0;
  Tensor out = degrade_frame(frame, d);
  // four taps at x offsets -1.5,-0.5,0.5,1.5 bilinearly split onto the grid
  CHECK(out.at3(0, 7, 5) == doctest::Approx(0.125).epsilon(1e-6));
  CHECK(out.at3(0, 7, 6) == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(out.at3(0, 7, 7) == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(out.at3(0, 7, 8) == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(out.at3(0, 7, 9) == doctest::Approx(0.125).epsilon(1e-6));
  // off the blur row everything stays zero
  CHECK(out.at3(0, 6, 7) == 0.0f);
  CHECK(out.at3(0, 8, 7) == 0.0f);
}

TEST_CASE("degrade: occluders paint mid-gray rectangles") {
  SceneSpec spec = small_scene();
  Tensor frame = render_frame(spec, 0);
  DegradeSpec d;
  d.occlude.push_back(OcclusionRect{3.0, 4.0, 5.0, 6.0});
  Tensor out = degrade_frame(frame, d);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        const bool inside = x >= 3 && x < 8 && y >= 4 && y < 10;
        if (inside) {
          CHECK(out.at3(c, y, x) == 0.5f);
        } else {
          CHECK(out.at3(c, y, x) == frame.at3(c, y, x));
        }
      }
    }
  }
  CHECK_THROWS_AS(degrade_frame(frame, [] {
                    DegradeSpec bad;
                    bad.defocus_sigma = -1;
                    return bad;
                  }()),
                  ConfigError);
}

TEST_CASE("speed_for_motion_iou hits the requested overlap") {
  const double s = 14.0;
  const double v_slow = speed_for_motion_iou(s, 0.95);
  const double v_med = speed_for_motion_iou(s, 0.80);
  const double v_fast = speed_for_motion_iou(s, 0.35);
  CHECK(v_slow > 0.0);
  CHECK(v_slow < v_med);
  CHECK(v_med < v_fast);

  // independent closed form: axis-aligned square of side s moving at v,
  // mean IoU against displacements d = 1..10
  auto mean_overlap = [&](double v) {
    double acc = 0.0;
    for (int d = 1; d <= 10; ++d) {
      const double inter = std::max(0.0, s - v * d) * s;
      acc += inter / (2.0 * s * s - inter);
    }
    return acc / 10.0;
  };
  CHECK(mean_overlap(v_slow) == doctest::Approx(0.95).epsilon(1e-9));
  CHECK(mean_overlap(v_med) == doctest::Approx(0.80).epsilon(1e-9));
  CHECK(mean_overlap(v_fast) == doctest::Approx(0.35).epsilon(1e-9));

  CHECK_THROWS_AS(speed_for_motion_iou(0.0, 0.5), ConfigError);
  CHECK_THROWS_AS(speed_for_motion_iou(10.0, 1.5), ConfigError);
  CHECK_THROWS_AS(speed_for_motion_iou(10.0, 0.5, 0), ConfigError);
}

TEST_CASE("generated tracks land in the intended motion groups") {
  struct Case {
    double target;
    const char* group;
  };
  const Case cases[] = {{0.95, "slow"}, {0.80, "medium"}, {0.35, "fast"}};
  const MotionGroupThresholds thr;
  for (const Case& tc : cases) {
    CAPTURE(tc.target);
    const double s = 14.0;
    const double v = speed_for_motion_iou(s, tc.target);
    SceneSpec spec;
    spec.width = 64;
    spec.height = 32;
    spec.frames = 21;
    spec.seed = 3;
    spec.sprites.push_back(disc(1, s, 12, 16, v, 0.0));
    Dataset ds = generate(spec);
    // constant velocity makes the per-pair overlap depend only on the frame
    // gap, so each frame's score has a closed form over its clipped window
    auto pair_iou = [&](int d) {
      const double inter = std::max(0.0, s - v * d) * s;
      return inter / (2.0 * s * s - inter);
    };
    for (int f = 0; f < spec.frames; ++f) {
      double acc = 0.0;
      int n = 0;
      for (int j = std::max(0, f - 10); j <= std::min(spec.frames - 1, f + 10);
           ++j) {
        if (j == f) continue;
        acc += pair_iou(std::abs(f - j));
        ++n;
      }
      const double m = motion_iou(ds.tracks[0], f);
      CHECK(std::abs(m - acc / n) < 1e-9);
      CHECK(motion_group(m, thr) == tc.group);
    }
  }
}

TEST_CASE("scene spec json round trip") {
  SceneSpec spec;
  spec.width = 50;
  spec.height = 40;
  spec.frames = 9;
  spec.seed = 123;
  spec.background_noise = 0.08;
  SpriteSpec s = disc(2, 9, 20, 18, 1.25, -0.5);
  s.jitter_amp = 0.7;
  s.jitter_period = 5.0;
  s.texture_seed = 77;
  spec.sprites.push_back(s);
  DegradeSpec d;
  d.frame = 4;
  d.defocus_sigma = 1.25;
  d.motion_blur_len = 3.0;
  d.motion_blur_angle = 0.5;
  d.occlude.push_back(OcclusionRect{1, 2, 3, 4});
  spec.degrade.push_back(d);

  SceneSpec back = scene_spec_from_json(scene_spec_to_json(spec));
  CHECK(back.width == spec.width);
  CHECK(back.height == spec.height);
  CHECK(back.frames == spec.frames);
  CHECK(back.seed == spec.seed);
  CHECK(back.background_noise == spec.background_noise);
  REQUIRE(back.sprites.size() == 1);
  CHECK(back.sprites[0].class_id == 2);
  CHECK(back.sprites[0].shape == "disc");
  CHECK(back.sprites[0].size == 9.0);
  CHECK(back.sprites[0].texture_seed == 77);
  CHECK(back.sprites[0].start_x == 20.0);
  CHECK(back.sprites[0].vx == 1.25);
  CHECK(back.sprites[0].vy == -0.5);
  CHECK(back.sprites[0].jitter_amp == 0.7);
  CHECK(back.sprites[0].jitter_period == 5.0);
  REQUIRE(back.degrade.size() == 1);
  CHECK(back.degrade[0].frame == 4);
  CHECK(back.degrade[0].defocus_sigma == 1.25);
  CHECK(back.degrade[0].motion_blur_len == 3.0);
  CHECK(back.degrade[0].motion_blur_angle == 0.5);
  REQUIRE(back.degrade[0].occlude.size() == 1);
  CHECK(back.degrade[0].occlude[0].w == 3.0);

  CHECK_THROWS_AS(scene_spec_from_json("{"), ConfigError);
  CHECK_THROWS_AS(scene_spec_from_json("{\"width\": 64}"), ConfigError);
}

TEST_CASE("dataset save/load round trip") {
  testsupport::TempDir tmp;
  SceneSpec spec = small_scene();
  spec.sprites[0].vx = 1.0;
  DegradeSpec d;
  d.frame = 1;
  d.defocus_sigma = 0.8;
  spec.degrade.push_back(d);
  Dataset ds = generate(spec);
  save_dataset(tmp.str("data"), ds);

  LoadedDataset loaded = load_dataset(tmp.str("data"));
  CHECK(loaded.spec.width == spec.width);
  CHECK(loaded.spec.frames == spec.frames);
  REQUIRE(loaded.frames.size() == ds.frames.size());
  for (size_t t = 0; t < ds.frames.size(); ++t) CHECK(bitwise_equal(loaded.frames[t], ds.frames[t]));
  REQUIRE(loaded.flows.size() == ds.flows.size());
  for (const auto& [pair, flow] : ds.flows) {
    REQUIRE(loaded.flows.count(pair) == 1);
    CHECK(bitwise_equal(loaded.flows.at(pair), flow));
  }
  REQUIRE(loaded.tracks.size() == ds.tracks.size());
  for (size_t i = 0; i < ds.tracks.size(); ++i) {
    CHECK(loaded.tracks[i].id == ds.tracks[i].id);
    CHECK(loaded.tracks[i].class_id == ds.tracks[i].class_id);
    REQUIRE(loaded.tracks[i].points.size() == ds.tracks[i].points.size());
    for (size_t f = 0; f < ds.tracks[i].points.size(); ++f) {
      CHECK(loaded.tracks[i].points[f].present == ds.tracks[i].points[f].present);
      CHECK(loaded.tracks[i].points[f].box.x1 ==
            doctest::Approx(ds.tracks[i].points[f].box.x1).epsilon(1e-12));
      CHECK(loaded.tracks[i].points[f].box.y2 ==
            doctest::Approx(ds.tracks[i].points[f].box.y2).epsilon(1e-12));
    }
  }

  CHECK_THROWS_AS(load_dataset(tmp.str("missing")), IoError);
}

TEST_CASE("tracks json round trip and contiguity check") {
  testsupport::TempDir tmp;
  std::vector<Track> tracks(1);
  tracks[0].id = 5;
  tracks[0].class_id = 2;
  tracks[0].points.push_back(TrackPoint{Box{1, 2, 3, 4}, true});
  tracks[0].points.push_back(TrackPoint{Box{2, 2, 4, 4}, false});
  const std::string path = tmp.str("tracks.json");
  write_tracks_json(path, tracks);
  std::vector<Track> back = read_tracks_json(path);
  REQUIRE(back.size() == 1);
  CHECK(back[0].id == 5);
  CHECK(back[0].class_id == 2);
  REQUIRE(back[0].points.size() == 2);
  CHECK(back[0].points[0].box.x2 == 3.0);
  CHECK(back[0].points[0].present);
  CHECK_FALSE(back[0].points[1].present);

  CHECK_THROWS_AS(read_tracks_json(tmp.str("nope.json")), IoError);
}
