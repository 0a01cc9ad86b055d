#include "fgfa/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "fgfa/errors.hpp"
#include "fgfa/rng.hpp"
#include "fgfa/tensor_io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace fgfa {

namespace {

constexpr double kPi = 3.14159265358979323846;

const double kPalette[6][3] = {
    {0.90, 0.25, 0.20}, {0.20, 0.85, 0.30}, {0.25, 0.35, 0.95},
    {0.90, 0.80, 0.20}, {0.85, 0.25, 0.85}, {0.20, 0.85, 0.85},
};

std::string pad4(int v) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << v;
  return os.str();
}

struct SpriteLook {
  double ax, ay, bx, by;  // texture wave params
};

SpriteLook sprite_look(const SpriteSpec& s) {
  Rng rng(s.texture_seed);
  SpriteLook look;
  look.ax = rng.uniform(0.3, 0.9);
  look.ay = rng.uniform(0.3, 0.9);
  look.bx = rng.uniform(0.0, 2.0 * kPi);
  look.by = rng.uniform(0.0, 2.0 * kPi);
  return look;
}

void bar_axis(const SpriteSpec& s, double* ux, double* uy) {
  const double n = std::hypot(s.vx, s.vy);
  if (n < 1e-9) {
    *ux = 1.0;
    *uy = 0.0;
  } else {
    *ux = s.vx / n;
    *uy = s.vy / n;
  }
}

// Signed distance (px) from a point in sprite-local coordinates to the
// sprite boundary; negative inside.
double sprite_sdist(const SpriteSpec& s, double lx, double ly) {
  if (s.shape == "disc") return std::hypot(lx, ly) - s.size / 2.0;
  if (s.shape == "square") return std::max(std::abs(lx), std::abs(ly)) - s.size / 2.0;
  // bar, oriented along the velocity direction
  double ux, uy;
  bar_axis(s, &ux, &uy);
  const double a = lx * ux + ly * uy;
  const double b = -lx * uy + ly * ux;
  return std::max(std::abs(a) - s.size / 2.0, std::abs(b) - s.size / 6.0);
}

void sprite_half_extents(const SpriteSpec& s, double* hx, double* hy) {
  if (s.shape == "bar") {
    double ux, uy;
    bar_axis(s, &ux, &uy);
    *hx = (s.size / 2.0) * std::abs(ux) + (s.size / 6.0) * std::abs(uy);
    *hy = (s.size / 2.0) * std::abs(uy) + (s.size / 6.0) * std::abs(ux);
  } else {
    *hx = s.size / 2.0;
    *hy = s.size / 2.0;
  }
}

double sprite_alpha(const SpriteSpec& s, double cx, double cy, double px, double py) {
  return std::clamp(0.5 - sprite_sdist(s, px - cx, py - cy), 0.0, 1.0);
}

double sample_replicate(const float* plane, int H, int W, double sx, double sy) {
  sx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const int x1 = std::min(x0 + 1, W - 1);
  const int y1 = std::min(y0 + 1, H - 1);
  const double fx = sx - x0, fy = sy - y0;
  return (1 - fx) * (1 - fy) * plane[y0 * W + x0] + fx * (1 - fy) * plane[y0 * W + x1] +
         (1 - fx) * fy * plane[y1 * W + x0] + fx * fy * plane[y1 * W + x1];
}

Tensor gaussian_blur(const Tensor& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + r];
  }
  for (double& v : k) v /= sum;
  Tensor tmp(img.dims());
  Tensor out(img.dims());
  for (int c = 0; c < C; ++c) {
    const float* src = img.data() + static_cast<size_t>(c) * H * W;
    float* mid = tmp.data() + static_cast<size_t>(c) * H * W;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) {
          acc += k[i + r] * src[y * W + std::clamp(x + i, 0, W - 1)];
        }
        mid[y * W + x] = static_cast<float>(acc);
      }
    }
    float* dst = out.data() + static_cast<size_t>(c) * H * W;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) {
          acc += k[i + r] * mid[std::clamp(y + i, 0, H - 1) * W + x];
        }
        dst[y * W + x] = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Tensor line_blur(const Tensor& img, double len, double angle) {
  const int n = static_cast<int>(std::lround(len));
  if (n <= 1) return img;
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const double dx = std::cos(angle), dy = std::sin(angle);
  Tensor out(img.dims());
  for (int c = 0; c < C; ++c) {
    const float* src = img.data() + static_cast<size_t>(c) * H * W;
    float* dst = out.data() + static_cast<size_t>(c) * H * W;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int k = 0; k < n; ++k) {
          const double t = k - (n - 1) / 2.0;
          acc += sample_replicate(src, H, W, x + t * dx, y + t * dy);
        }
        dst[y * W + x] = static_cast<float>(acc / n);
      }
    }
  }
  return out;
}

Box sprite_box(const SceneSpec& spec, int sprite, int t) {
  double cx, cy;
  sprite_pos(spec, sprite, t, &cx, &cy);
  double hx, hy;
  sprite_half_extents(spec.sprites[sprite], &hx, &hy);
  Box b{cx - hx, cy - hy, cx + hx, cy + hy};
  b.x1 = std::clamp(b.x1, 0.0, static_cast<double>(spec.width));
  b.x2 = std::clamp(b.x2, 0.0, static_cast<double>(spec.width));
  b.y1 = std::clamp(b.y1, 0.0, static_cast<double>(spec.height));
  b.y2 = std::clamp(b.y2, 0.0, static_cast<double>(spec.height));
  return b;
}

}  // namespace

void SceneSpec::validate() const {
  if (width < 8 || height < 8) throw ConfigError("scene canvas must be at least 8x8");
  if (frames < 1) throw ConfigError("scene.frames must be >= 1");
  if (background_noise < 0) throw ConfigError("scene.background_noise must be >= 0");
  for (const SpriteSpec& s : sprites) {
    if (s.class_id < 1) throw ConfigError("sprite class_id must be >= 1");
    if (s.shape != "disc" && s.shape != "square" && s.shape != "bar") {
      throw ConfigError("unknown sprite shape '" + s.shape + "'");
    }
    if (s.size <= 0) throw ConfigError("sprite size must be positive");
    double hx, hy;
    sprite_half_extents(s, &hx, &hy);
    if (2 * hx > width || 2 * hy > height) {
      throw ConfigError("sprite larger than canvas");
    }
    if (s.jitter_amp < 0 || s.jitter_period < 0) {
      throw ConfigError("sprite jitter parameters must be >= 0");
    }
  }
  for (const DegradeSpec& d : degrade) {
    if (d.frame < 0 || d.frame >= frames) throw ConfigError("degrade entry frame out of range");
    if (d.defocus_sigma < 0) throw ConfigError("degrade defocus_sigma must be >= 0");
    if (d.motion_blur_len < 0) throw ConfigError("degrade motion_blur_len must be >= 0");
  }
}

void sprite_pos(const SceneSpec& spec, int sprite, int t, double* x, double* y) {
  const SpriteSpec& s = spec.sprites.at(sprite);
  double px = s.start_x + t * s.vx;
  double py = s.start_y + t * s.vy;
  if (s.jitter_amp > 0 && s.jitter_period > 0) {
    px += s.jitter_amp * std::sin(2.0 * kPi * t / s.jitter_period);
    py += s.jitter_amp * std::cos(2.0 * kPi * t / s.jitter_period);
  }
  *x = px;
  *y = py;
}

Tensor render_frame(const SceneSpec& spec, int t) {
  const int H = spec.height, W = spec.width;
  Tensor out({3, H, W});
  Rng bg_rng(spec.seed);
  // static background, identical for every frame of the scene
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double v = 0.12 + spec.background_noise * (bg_rng.uniform() - 0.5);
      for (int c = 0; c < 3; ++c) out.at3(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  for (size_t si = 0; si < spec.sprites.size(); ++si) {
    const SpriteSpec& s = spec.sprites[si];
    const SpriteLook look = sprite_look(s);
    const double* base = kPalette[(s.class_id - 1) % 6];
    double cx, cy;
    sprite_pos(spec, static_cast<int>(si), t, &cx, &cy);
    double hx, hy;
    sprite_half_extents(s, &hx, &hy);
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - hx - 1)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(cx + hx + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - hy - 1)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(cy + hy + 1)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double a = sprite_alpha(s, cx, cy, x, y);
        if (a <= 0.0) continue;
        const double lx = x - cx, ly = y - cy;
        const double wave =
            0.75 + 0.25 * std::sin(look.ax * lx + look.bx) * std::sin(look.ay * ly + look.by);
        for (int c = 0; c < 3; ++c) {
          const double v = std::clamp(base[c] * wave, 0.0, 1.0);
          out.at3(c, y, x) = static_cast<float>(a * v + (1.0 - a) * out.at3(c, y, x));
        }
      }
    }
  }
  return out;
}

Tensor flow_between(const SceneSpec& spec, int i, int j) {
  if (i < 0 || i >= spec.frames || j < 0 || j >= spec.frames) {
    throw ContractViolation("flow_between frames out of range");
  }
  const int H = spec.height, W = spec.width;
  Tensor flow({2, H, W});
  struct Placed {
    double cx, cy, dx, dy;
    const SpriteSpec* s;
  };
  std::vector<Placed> placed;
  for (size_t si = 0; si < spec.sprites.size(); ++si) {
    Placed p;
    sprite_pos(spec, static_cast<int>(si), i, &p.cx, &p.cy);
    double jx, jy;
    sprite_pos(spec, static_cast<int>(si), j, &jx, &jy);
    p.dx = jx - p.cx;
    p.dy = jy - p.cy;
    p.s = &spec.sprites[si];
    placed.push_back(p);
  }
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      // topmost sprite covering this reference pixel wins
      for (int si = static_cast<int>(placed.size()) - 1; si >= 0; --si) {
        const Placed& p = placed[si];
        if (sprite_alpha(*p.s, p.cx, p.cy, x, y) >= 0.5) {
          flow.at3(0, y, x) = static_cast<float>(p.dx);
          flow.at3(1, y, x) = static_cast<float>(p.dy);
          break;
        }
      }
    }
  }
  return flow;
}

Tensor degrade_frame(const Tensor& frame, const DegradeSpec& entry) {
  if (frame.rank() != 3) throw ContractViolation("degrade expects [C,H,W]");
  if (entry.defocus_sigma < 0 || entry.motion_blur_len < 0) {
    throw ConfigError("degrade parameters must be >= 0");
  }
  const int C = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
  Tensor out = frame;
  for (const OcclusionRect& r : entry.occlude) {
    const int x0 = std::max(0, static_cast<int>(std::floor(r.x)));
    const int x1 = std::min(W, static_cast<int>(std::ceil(r.x + r.w)));
    const int y0 = std::max(0, static_cast<int>(std::floor(r.y)));
    const int y1 = std::min(H, static_cast<int>(std::ceil(r.y + r.h)));
    for (int c = 0; c < C; ++c) {
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) out.at3(c, y, x) = 0.5f;
      }
    }
  }
  out = gaussian_blur(out, entry.defocus_sigma);
  out = line_blur(out, entry.motion_blur_len, entry.motion_blur_angle);
  return out;
}

Dataset generate(const SceneSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  for (size_t si = 0; si < spec.sprites.size(); ++si) {
    int on_canvas = 0;
    Track track;
    track.id = static_cast<int>(si);
    track.class_id = spec.sprites[si].class_id;
    for (int t = 0; t < spec.frames; ++t) {
      const Box b = sprite_box(spec, static_cast<int>(si), t);
      TrackPoint pt;
      pt.box = b;
      pt.present = b.area() > 1e-9;
      if (pt.present) ++on_canvas;
      track.points.push_back(pt);
    }
    if (on_canvas < static_cast<int>(std::ceil(0.8 * spec.frames))) {
      throw ConfigError("sprite " + std::to_string(si) +
                        " is on canvas for fewer than 80% of frames");
    }
    ds.tracks.push_back(std::move(track));
  }
  for (int t = 0; t < spec.frames; ++t) ds.clean_frames.push_back(render_frame(spec, t));
  for (int t = 0; t + 1 < spec.frames; ++t) {
    ds.flows[{t, t + 1}] = flow_between(spec, t, t + 1);
    ds.flows[{t + 1, t}] = flow_between(spec, t + 1, t);
  }
  ds.frames = ds.clean_frames;
  for (const DegradeSpec& d : spec.degrade) {
    ds.frames[d.frame] = degrade_frame(ds.frames[d.frame], d);
  }
  return ds;
}

double speed_for_motion_iou(double box_size, double target, int window) {
  if (box_size <= 0) throw ConfigError("box_size must be positive");
  if (target <= 0 || target > 1) throw ConfigError("target overlap must be in (0,1]");
  if (window < 1) throw ConfigError("window must be >= 1");
  const double s = box_size;
  auto mean_iou = [&](double v) {
    double acc = 0.0;
    for (int d = 1; d <= window; ++d) {
      const double overlap = std::max(0.0, s - v * d) * s;
      acc += overlap / (2.0 * s * s - overlap);
    }
    return acc / window;
  };
  double lo = 0.0, hi = s;  // mean_iou(0)=1, mean_iou(s)=0
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mean_iou(mid) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

namespace {

nlohmann::ordered_json spec_json(const SceneSpec& spec) {
  nlohmann::ordered_json j;
  j["width"] = spec.width;
  j["height"] = spec.height;
  j["frames"] = spec.frames;
  j["seed"] = spec.seed;
  j["background_noise"] = spec.background_noise;
  j["sprites"] = nlohmann::ordered_json::array();
  for (const SpriteSpec& s : spec.sprites) {
    nlohmann::ordered_json sj;
    sj["class_id"] = s.class_id;
    sj["shape"] = s.shape;
    sj["size"] = s.size;
    sj["texture_seed"] = s.texture_seed;
    sj["start_x"] = s.start_x;
    sj["start_y"] = s.start_y;
    sj["vx"] = s.vx;
    sj["vy"] = s.vy;
    sj["jitter_amp"] = s.jitter_amp;
    sj["jitter_period"] = s.jitter_period;
    j["sprites"].push_back(sj);
  }
  j["degrade"] = nlohmann::ordered_json::array();
  for (const DegradeSpec& d : spec.degrade) {
    nlohmann::ordered_json dj;
    dj["frame"] = d.frame;
    dj["defocus_sigma"] = d.defocus_sigma;
    dj["motion_blur_len"] = d.motion_blur_len;
    dj["motion_blur_angle"] = d.motion_blur_angle;
    dj["occlude"] = nlohmann::ordered_json::array();
    for (const OcclusionRect& r : d.occlude) dj["occlude"].push_back({r.x, r.y, r.w, r.h});
    j["degrade"].push_back(dj);
  }
  return j;
}

SceneSpec spec_parse(const nlohmann::json& j) {
  SceneSpec spec;
  try {
    spec.width = j.at("width").get<int>();
    spec.height = j.at("height").get<int>();
    spec.frames = j.at("frames").get<int>();
    spec.seed = j.at("seed").get<uint32_t>();
    spec.background_noise = j.value("background_noise", 0.05);
    for (const auto& sj : j.value("sprites", nlohmann::json::array())) {
      SpriteSpec s;
      s.class_id = sj.at("class_id").get<int>();
      s.shape = sj.at("shape").get<std::string>();
      s.size = sj.at("size").get<double>();
      s.texture_seed = sj.value("texture_seed", 1u);
      s.start_x = sj.at("start_x").get<double>();
      s.start_y = sj.at("start_y").get<double>();
      s.vx = sj.value("vx", 0.0);
      s.vy = sj.value("vy", 0.0);
      s.jitter_amp = sj.value("jitter_amp", 0.0);
      s.jitter_period = sj.value("jitter_period", 0.0);
      spec.sprites.push_back(s);
    }
    for (const auto& dj : j.value("degrade", nlohmann::json::array())) {
      DegradeSpec d;
      d.frame = dj.at("frame").get<int>();
      d.defocus_sigma = dj.value("defocus_sigma", 0.0);
      d.motion_blur_len = dj.value("motion_blur_len", 0.0);
      d.motion_blur_angle = dj.value("motion_blur_angle", 0.0);
      for (const auto& rj : dj.value("occlude", nlohmann::json::array())) {
        if (!rj.is_array() || rj.size() != 4) throw ConfigError("occlude rect must be [x,y,w,h]");
        d.occlude.push_back(OcclusionRect{rj[0].get<double>(), rj[1].get<double>(),
                                          rj[2].get<double>(), rj[3].get<double>()});
      }
      spec.degrade.push_back(d);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad scene spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

}  // namespace

std::string scene_spec_to_json(const SceneSpec& spec) { return spec_json(spec).dump(2); }

SceneSpec scene_spec_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("bad scene spec json: ") + e.what());
  }
  return spec_parse(j);
}

void write_tracks_json(const std::string& path, const std::vector<Track>& tracks) {
  nlohmann::ordered_json j;
  j["tracks"] = nlohmann::ordered_json::array();
  for (const Track& t : tracks) {
    nlohmann::ordered_json tj;
    tj["id"] = t.id;
    tj["class_id"] = t.class_id;
    tj["points"] = nlohmann::ordered_json::array();
    for (size_t f = 0; f < t.points.size(); ++f) {
      const TrackPoint& p = t.points[f];
      nlohmann::ordered_json pj;
      pj["frame"] = static_cast<int>(f);
      pj["box"] = {p.box.x1, p.box.y1, p.box.x2, p.box.y2};
      pj["present"] = p.present;
      tj["points"].push_back(pj);
    }
    j["tracks"].push_back(tj);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path);
}

std::vector<Track> read_tracks_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path + ": " + e.what());
  }
  std::vector<Track> tracks;
  try {
    for (const auto& tj : j.at("tracks")) {
      Track t;
      t.id = tj.at("id").get<int>();
      t.class_id = tj.at("class_id").get<int>();
      for (const auto& pj : tj.at("points")) {
        TrackPoint p;
        const auto& b = pj.at("box");
        p.box = Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
        p.present = pj.at("present").get<bool>();
        const int frame = pj.at("frame").get<int>();
        if (frame != static_cast<int>(t.points.size())) {
          throw IoError(path + ": track points must cover frames contiguously from 0");
        }
        t.points.push_back(p);
      }
      tracks.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
  return tracks;
}

void save_dataset(const std::string& dir, const Dataset& ds) {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "frames", ec);
  fs::create_directories(fs::path(dir) / "flows", ec);
  if (ec) throw IoError("cannot create dataset dirs under " + dir + ": " + ec.message());
  for (int t = 0; t < ds.spec.frames; ++t) {
    write_tensor((fs::path(dir) / "frames" / (pad4(t) + ".fgt")).string(), ds.frames[t]);
  }
  for (const auto& [pair, flow] : ds.flows) {
    const std::string name = pad4(pair.first) + "_" + pad4(pair.second) + ".fgt";
    write_tensor((fs::path(dir) / "flows" / name).string(), flow);
  }
  write_tracks_json((fs::path(dir) / "tracks.json").string(), ds.tracks);
  std::ofstream out(fs::path(dir) / "spec.json", std::ios::binary);
  if (!out) throw IoError("cannot write spec.json under " + dir);
  out << scene_spec_to_json(ds.spec) << "\n";
  if (!out) throw IoError("failed writing spec.json under " + dir);
}

LoadedDataset load_dataset(const std::string& dir) {
  LoadedDataset ds;
  std::ifstream in(fs::path(dir) / "spec.json", std::ios::binary);
  if (!in) throw IoError("cannot open " + (fs::path(dir) / "spec.json").string());
  std::stringstream buf;
  buf << in.rdbuf();
  ds.spec = scene_spec_from_json(buf.str());
  for (int t = 0; t < ds.spec.frames; ++t) {
    ds.frames.push_back(read_tensor((fs::path(dir) / "frames" / (pad4(t) + ".fgt")).string()));
  }
  for (int t = 0; t + 1 < ds.spec.frames; ++t) {
    for (auto [a, b] : {std::pair{t, t + 1}, std::pair{t + 1, t}}) {
      const std::string name = pad4(a) + "_" + pad4(b) + ".fgt";
      ds.flows[{a, b}] = read_tensor((fs::path(dir) / "flows" / name).string());
    }
  }
  ds.tracks = read_tracks_json((fs::path(dir) / "tracks.json").string());
  return ds;
}

}  // namespace fgfa
