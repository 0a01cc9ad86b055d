#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "doctest.h"
#include "fgfa/adaptive_weight.hpp"
#include "fgfa/aggregation.hpp"
#include "fgfa/errors.hpp"
#include "fgfa/eval.hpp"
#include "fgfa/flow_warp.hpp"
#include "fgfa/infer.hpp"
#include "fgfa/rng.hpp"
#include "fgfa/synthetic.hpp"
#include "support/oracles.hpp"

using namespace fgfa;

namespace {

SceneSpec moving_scene(double vx, int frames = 7, uint32_t seed = 5) {
  SceneSpec spec;
  spec.width = 64;
  spec.height = 32;
  spec.frames = frames;
  spec.seed = seed;
  SpriteSpec s;
  s.class_id = 1;
  s.shape = "disc";
  s.size = 14;
  s.start_x = 16;
  s.start_y = 16;
  s.vx = vx;
  spec.sprites.push_back(s);
  return spec;
}

// Model whose head fires class 1 everywhere, so detection lists are
// non-trivial even without training.
Model eager_model(const NetConfig& cfg, uint32_t seed) {
  Rng rng(seed);
  Model m = make_model<float>(cfg, rng);
  for (size_t i = 0; i < m.head.b.numel(); ++i) m.head.b.data()[i] = 0.0f;
  m.head.b.data()[1] = 4.0f;
  return m;
}

bool same_dets(const std::vector<Detection>& a, const std::vector<Detection>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].frame != b[i].frame || a[i].class_id != b[i].class_id ||
        a[i].score != b[i].score || a[i].box.x1 != b[i].box.x1 || a[i].box.y1 != b[i].box.y1 ||
        a[i].box.x2 != b[i].box.x2 || a[i].box.y2 != b[i].box.y2) {
      return false;
    }
  }
  return true;
}

struct FixedFlowSource : FlowSource {
  Tensor value;
  int evals = 0;
  explicit FixedFlowSource(Tensor v) : value(std::move(v)) {}
  Tensor flow(int, int) override {
    ++evals;
    return value;
  }
  int evaluations() const override { return evals; }
};

}  // namespace

TEST_CASE("mode names and flag presets") {
  CHECK(infer_mode_from_string("single") == InferMode::kSingle);
  CHECK(infer_mode_from_string("naive") == InferMode::kNaive);
  CHECK(infer_mode_from_string("adaptive") == InferMode::kAdaptive);
  CHECK(infer_mode_from_string("fgfa") == InferMode::kFgfa);
  CHECK(infer_mode_from_string("fgfa-composed") == InferMode::kFgfaComposed);
  CHECK_THROWS_WITH_AS(infer_mode_from_string("best"), doctest::Contains("unknown inference mode"),
                       ConfigError);
  for (InferMode m : {InferMode::kSingle, InferMode::kNaive, InferMode::kAdaptive,
                      InferMode::kFgfa, InferMode::kFgfaComposed}) {
    CHECK(infer_mode_from_string(to_string(m)) == m);
  }

  InferConfig single = InferConfig::for_mode(InferMode::kSingle, 3);
  CHECK_FALSE(single.aggregate);
  InferConfig naive = InferConfig::for_mode(InferMode::kNaive, 3);
  CHECK(naive.aggregate);
  CHECK_FALSE(naive.use_flow);
  CHECK_FALSE(naive.use_adaptive_weights);
  InferConfig adaptive = InferConfig::for_mode(InferMode::kAdaptive, 3);
  CHECK_FALSE(adaptive.use_flow);
  CHECK(adaptive.use_adaptive_weights);
  InferConfig fgfa_cfg = InferConfig::for_mode(InferMode::kFgfa, 3);
  CHECK(fgfa_cfg.use_flow);
  CHECK(fgfa_cfg.use_adaptive_weights);
  CHECK_FALSE(fgfa_cfg.composed);
  CHECK(InferConfig::for_mode(InferMode::kFgfaComposed, 3).composed);
}

TEST_CASE("input contracts") {
  Rng rng(3);
  Model m = make_model<float>(NetConfig{}, rng);
  CHECK_THROWS_WITH_AS(infer_video({}, m, InferConfig{}, nullptr),
                       doctest::Contains("empty video"), ContractViolation);

  std::vector<Tensor> bad_channels = {Tensor({1, 32, 32})};
  CHECK_THROWS_AS(infer_video(bad_channels, m, InferConfig{}, nullptr), ConfigError);

  std::vector<Tensor> bad_dims = {Tensor({3, 30, 32})};
  CHECK_THROWS_AS(infer_video(bad_dims, m, InferConfig{}, nullptr), ConfigError);

  SceneSpec spec = moving_scene(1.0, 3);
  Dataset ds = generate(spec);
  ExactFlowSource flows(spec, m.config.feature_stride());
  InferConfig cfg;
  cfg.k = -1;
  CHECK_THROWS_WITH_AS(infer_video(ds.frames, m, cfg, &flows),
                       doctest::Contains("k must be >= 0"), ConfigError);
  cfg.k = 1;
  CHECK_THROWS_AS(infer_video(ds.frames, m, cfg, nullptr), ContractViolation);
}

TEST_CASE("zero-radius aggregation equals the per-frame baseline") {
  SceneSpec spec = moving_scene(1.5, 5);
  Dataset ds = generate(spec);
  Model m = eager_model(NetConfig{}, 21);
  ExactFlowSource flows(spec, m.config.feature_stride());

  InferResult single = infer_video(ds.frames, m, InferConfig::for_mode(InferMode::kSingle, 0),
                                   nullptr);
  InferResult fused = infer_video(ds.frames, m, InferConfig::for_mode(InferMode::kFgfa, 0),
                                  &flows);
  CHECK(single.detections.size() > 0);
  CHECK(same_dets(single.detections, fused.detections));
  CHECK(fused.flow_evaluations == 0);
  CHECK(single.feature_extractions == 5);
  CHECK(fused.feature_extractions == 5);
}

TEST_CASE("feature extraction and flow evaluation counts") {
  SceneSpec spec = moving_scene(1.0, 7);
  Dataset ds = generate(spec);
  Rng rng(9);
  Model m = make_model<float>(NetConfig{}, rng);
  const int stride = m.config.feature_stride();

  SUBCASE("direct flow: one evaluation per (reference, neighbor) pair") {
    ExactFlowSource flows(spec, stride);
    InferConfig cfg = InferConfig::for_mode(InferMode::kFgfa, 2);
    InferResult res = infer_video(ds.frames, m, cfg, &flows);
    CHECK(res.feature_extractions == 7);
    // window sizes minus one: 2,3,4,4,4,3,2
    CHECK(res.flow_evaluations == 22);
  }

  SUBCASE("composed flow: each adjacent pair is estimated once") {
    ComposedFlowSource flows(&ds.flows, stride);
    InferConfig cfg = InferConfig::for_mode(InferMode::kFgfaComposed, 2);
    InferResult res = infer_video(ds.frames, m, cfg, &flows);
    CHECK(res.feature_extractions == 7);
    CHECK(res.flow_evaluations == 6);
  }
}

TEST_CASE("composed flow fields match direct fields") {
  SceneSpec spec = moving_scene(2.0, 4);
  spec.sprites[0].size = 20;
  Dataset ds = generate(spec);
  const int stride = 4;
  ExactFlowSource direct(spec, stride);
  ComposedFlowSource composed(&ds.flows, stride);

  SUBCASE("adjacent pairs are identical") {
    for (int t = 0; t + 1 < spec.frames; ++t) {
      CHECK(max_abs_diff(direct.flow(t, t + 1), composed.flow(t, t + 1)) <= 1e-6);
      CHECK(max_abs_diff(direct.flow(t + 1, t), composed.flow(t + 1, t)) <= 1e-6);
    }
  }

  SUBCASE("two-step chains agree on the sprite interior") {
    Tensor d = direct.flow(0, 2);
    Tensor c = composed.flow(0, 2);
    double cx, cy;
    sprite_pos(spec, 0, 0, &cx, &cy);
    const double margin = spec.sprites[0].size / 2.0 - 1.5;
    int cells = 0;
    for (int y = 0; y < d.dim(1); ++y) {
      for (int x = 0; x < d.dim(2); ++x) {
        bool interior = true;
        for (int py = y * stride; py < (y + 1) * stride; ++py) {
          for (int px = x * stride; px < (x + 1) * stride; ++px) {
            if (std::hypot(px - cx, py - cy) > margin) interior = false;
          }
        }
        if (!interior) continue;
        ++cells;
        CHECK(std::abs(d.at3(0, y, x) - c.at3(0, y, x)) < 1e-4);
        CHECK(std::abs(d.at3(1, y, x) - c.at3(1, y, x)) < 1e-4);
      }
    }
    CHECK(cells > 0);
  }
}

TEST_CASE("truncated boundary windows keep weights normalized") {
  SceneSpec spec = moving_scene(1.0, 3);
  Dataset ds = generate(spec);
  Rng rng(13);
  Model m = make_model<float>(NetConfig{}, rng);
  ExactFlowSource flows(spec, m.config.feature_stride());
  InferConfig cfg = InferConfig::for_mode(InferMode::kFgfa, 10);
  cfg.record_weights = true;
  InferResult res = infer_video(ds.frames, m, cfg, &flows);
  CHECK(res.feature_extractions == 3);

  for (int i = 0; i < 3; ++i) {
    std::vector<const Tensor*> maps;
    for (const WeightRecord& rec : res.weights) {
      if (rec.frame == i) maps.push_back(&rec.map);
    }
    CHECK(maps.size() == 3);  // window truncated to the whole clip
    const Tensor& first = *maps[0];
    for (size_t p = 0; p < first.numel(); ++p) {
      double sum = 0.0;
      for (const Tensor* t : maps) sum += t->data()[p];
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("uniform fusion averages the per-frame features") {
  SceneSpec spec = moving_scene(1.0, 5);
  Dataset ds = generate(spec);
  Rng rng(17);
  Model m = make_model<float>(NetConfig{}, rng);
  InferConfig cfg = InferConfig::for_mode(InferMode::kNaive, 1);
  cfg.record_weights = true;
  cfg.record_features = true;
  InferResult res = infer_video(ds.frames, m, cfg, nullptr);
  REQUIRE(res.features.size() == 5);

  for (const WeightRecord& rec : res.weights) {
    const double expect = rec.frame == 0 || rec.frame == 4 ? 0.5 : 1.0 / 3.0;
    for (size_t p = 0; p < rec.map.numel(); ++p) {
      CHECK(std::abs(rec.map.data()[p] - expect) < 1e-7);
    }
  }

  std::vector<Tensor> feats;
  for (const Tensor& f : ds.frames) feats.push_back(feature_forward(m.feature, f));
  for (int i = 0; i < 5; ++i) {
    const int lo = std::max(0, i - 1), hi = std::min(4, i + 1);
    Tensor mean(feats[0].dims());
    for (size_t p = 0; p < mean.numel(); ++p) {
      double acc = 0.0;
      for (int j = lo; j <= hi; ++j) acc += feats[j].data()[p];
      mean.data()[p] = static_cast<float>(acc / (hi - lo + 1));
    }
    CHECK(max_abs_diff(mean, res.features[i]) < 1e-6);
  }
}

TEST_CASE("static scenes get uniform adaptive weights") {
  SceneSpec spec = moving_scene(0.0, 5);
  Dataset ds = generate(spec);
  Rng rng(19);
  Model m = make_model<float>(NetConfig{}, rng);
  ExactFlowSource flows(spec, m.config.feature_stride());
  InferConfig cfg = InferConfig::for_mode(InferMode::kFgfa, 2);
  cfg.record_weights = true;
  InferResult res = infer_video(ds.frames, m, cfg, &flows);
  for (const WeightRecord& rec : res.weights) {
    const int lo = std::max(0, rec.frame - 2), hi = std::min(4, rec.frame + 2);
    const double expect = 1.0 / (hi - lo + 1);
    for (size_t p = 0; p < rec.map.numel(); ++p) {
      CHECK(std::abs(rec.map.data()[p] - expect) < 1e-5);
    }
  }
}

TEST_CASE("aggregation pipeline reproduces a hand-built reference") {
  // identity feature net: one 1x1 kernel with weight 1 and stride 4, so the
  // feature map is the input subsampled at every 4th pixel
  NetConfig cfg;
  cfg.in_channels = 1;
  cfg.feature_channels = {1};
  cfg.feature_kernels = {1};
  cfg.feature_strides = {4};
  cfg.embed_mid = 2;
  cfg.embed_out = 2;
  cfg.num_classes = 1;
  Rng rng(23);
  Model m = make_model<float>(cfg, rng);
  m.feature.layers[0].w = Tensor::full({1, 1, 1, 1}, 1.0f);
  m.feature.layers[0].b = Tensor({1});

  std::vector<Tensor> frames;
  for (int t = 0; t < 3; ++t) frames.push_back(Tensor::random_uniform({1, 16, 16}, rng, 0.0, 1.0));

  Tensor shift({2, 4, 4});
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) shift.at3(0, y, x) = 1.0f;  // pull from one column right
  }
  FixedFlowSource flows(shift);

  InferConfig icfg;
  icfg.k = 1;
  icfg.aggregate = true;
  icfg.use_flow = true;
  icfg.use_adaptive_weights = false;
  icfg.record_features = true;
  InferResult res = infer_video(frames, m, icfg, &flows);
  REQUIRE(res.features.size() == 3);
  CHECK(res.feature_extractions == 3);
  CHECK(res.flow_evaluations == 4);

  // reference chain in double precision
  std::vector<TensorT<double>> feats;
  for (const Tensor& fr : frames) {
    TensorT<double> g({1, 4, 4});
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) g.at3(0, y, x) = fr.at3(0, 4 * y, 4 * x);
    }
    feats.push_back(g);
  }
  TensorT<double> dshift = cast_tensor<double>(shift);
  for (int i = 0; i < 3; ++i) {
    const int lo = std::max(0, i - 1), hi = std::min(2, i + 1);
    TensorT<double> want({1, 4, 4});
    for (int j = lo; j <= hi; ++j) {
      TensorT<double> contrib =
          j == i ? feats[j] : testsupport::naive_warp(feats[j], dshift);
      for (size_t p = 0; p < want.numel(); ++p) {
        want.data()[p] += contrib.data()[p] / (hi - lo + 1);
      }
    }
    for (size_t p = 0; p < want.numel(); ++p) {
      CHECK(std::abs(want.data()[p] - res.features[i].data()[p]) < 1e-6);
    }
  }
}

TEST_CASE("misaligned neighbors lose weight without flow guidance") {
  SceneSpec spec = moving_scene(3.0, 9);
  Dataset ds = generate(spec);
  Rng rng(29);
  Model m = make_model<float>(NetConfig{}, rng);
  InferConfig cfg = InferConfig::for_mode(InferMode::kAdaptive, 1);
  cfg.record_weights = true;
  InferResult res = infer_video(ds.frames, m, cfg, nullptr);

  std::vector<WeightHistogramRow> rows = weight_histogram(res, ds.tracks, 1,
                                                          m.config.feature_stride(), 9);
  REQUIRE(rows.size() == 3);  // one motion group, offsets -1,0,1
  std::map<int, double> mass;
  for (const WeightHistogramRow& r : rows) mass[r.offset] = r.mean_mass;
  CHECK(mass.at(0) > mass.at(-1));
  CHECK(mass.at(0) > mass.at(1));
}

TEST_CASE("weight histogram") {
  SceneSpec spec = moving_scene(1.0, 7);
  Dataset ds = generate(spec);
  Rng rng(31);
  Model m = make_model<float>(NetConfig{}, rng);

  SUBCASE("uniform weighting is exactly flat over full windows") {
    InferConfig cfg = InferConfig::for_mode(InferMode::kNaive, 2);
    cfg.record_weights = true;
    InferResult res = infer_video(ds.frames, m, cfg, nullptr);
    std::vector<WeightHistogramRow> rows =
        weight_histogram(res, ds.tracks, 2, m.config.feature_stride(), 7);
    REQUIRE(rows.size() == 5);
    for (const WeightHistogramRow& r : rows) {
      CHECK(std::abs(r.mean_mass - 0.2) < 1e-6);
    }
  }

  SUBCASE("zero radius concentrates all mass at offset zero") {
    ExactFlowSource flows(spec, m.config.feature_stride());
    InferConfig cfg = InferConfig::for_mode(InferMode::kFgfa, 0);
    cfg.record_weights = true;
    InferResult res = infer_video(ds.frames, m, cfg, &flows);
    std::vector<WeightHistogramRow> rows =
        weight_histogram(res, ds.tracks, 0, m.config.feature_stride(), 7);
    REQUIRE(!rows.empty());
    for (const WeightHistogramRow& r : rows) {
      CHECK(r.offset == 0);
      CHECK(r.mean_mass == doctest::Approx(1.0).epsilon(1e-9));
    }
  }

  SUBCASE("recordings are required") {
    InferResult res;
    CHECK_THROWS_AS(weight_histogram(res, ds.tracks, 1, 4, 7), ContractViolation);
  }
}

TEST_CASE("noisy flow wrapper") {
  SceneSpec spec = moving_scene(1.5, 5);
  Dataset ds = generate(spec);
  Rng rng(37);
  Model m = eager_model(NetConfig{}, 37);
  const int stride = m.config.feature_stride();
  InferConfig cfg = InferConfig::for_mode(InferMode::kFgfa, 1);

  SUBCASE("zero noise passes fields through unchanged") {
    ExactFlowSource base(spec, stride);
    ExactFlowSource inner(spec, stride);
    NoisyFlowSource noisy(&inner, 0.0, 99);
    InferResult a = infer_video(ds.frames, m, cfg, &base);
    InferResult b = infer_video(ds.frames, m, cfg, &noisy);
    CHECK(same_dets(a.detections, b.detections));
  }

  SUBCASE("runs are reproducible for a fixed seed") {
    ExactFlowSource inner1(spec, stride);
    ExactFlowSource inner2(spec, stride);
    NoisyFlowSource n1(&inner1, 0.7, 42);
    NoisyFlowSource n2(&inner2, 0.7, 42);
    InferResult a = infer_video(ds.frames, m, cfg, &n1);
    InferResult b = infer_video(ds.frames, m, cfg, &n2);
    CHECK(same_dets(a.detections, b.detections));
  }

  SUBCASE("negative sigma is rejected") {
    ExactFlowSource inner(spec, stride);
    CHECK_THROWS_AS(NoisyFlowSource(&inner, -0.1, 1), ConfigError);
  }
}

TEST_CASE("gradients flow through the whole aggregation chain") {
  // independent double-precision rebuild of warp -> embed -> similarity ->
  // softmax -> aggregate, differentiated against every feature and flow input
  Rng rng(41);
  const int C = 2, H = 4, W = 5, n = 3, ref = 1;
  EmbedNetT<double> net = make_embed_net<double>(C, 3, 4, rng);
  std::vector<TensorT<double>> feats;
  std::vector<TensorT<double>> flows;
  for (int j = 0; j < n; ++j) {
    feats.push_back(TensorT<double>::random_normal({C, H, W}, rng, 0.0, 0.8));
    TensorT<double> fl({2, H, W});
    for (size_t p = 0; p < fl.numel(); ++p) {
      double v;
      do {
        v = rng.uniform(-1.8, 1.8);
      } while (testsupport::dist_to_int(v) < 5e-2);
      fl.data()[p] = v;
    }
    flows.push_back(fl);
  }
  TensorT<double> coeff = TensorT<double>::random_normal({C, H, W}, rng, 0.0, 1.0);

  auto forward = [&](const std::vector<TensorT<double>>& g,
                     const std::vector<TensorT<double>>& mflows) {
    std::vector<TensorT<double>> warped(n);
    for (int j = 0; j < n; ++j) {
      warped[j] = j == ref ? g[j] : warp_bilinear(g[j], mflows[j]);
    }
    TensorT<double> e_ref = embed_forward(net, g[ref]);
    std::vector<TensorT<double>> raw;
    for (int j = 0; j < n; ++j) {
      TensorT<double> e_j = j == ref ? e_ref : embed_forward(net, warped[j]);
      raw.push_back(exp_map(cosine_map(e_j, e_ref)));
    }
    std::vector<TensorT<double>> w = normalize_weights(raw);
    TensorT<double> fbar = aggregate(warped, w);
    double loss = 0.0;
    for (size_t p = 0; p < fbar.numel(); ++p) loss += coeff.data()[p] * fbar.data()[p];
    return loss;
  };

  // analytic gradients, chained by hand
  std::vector<TensorT<double>> warped(n);
  for (int j = 0; j < n; ++j) {
    warped[j] = j == ref ? feats[j] : warp_bilinear(feats[j], flows[j]);
  }
  EmbedActsT<double> ref_acts = embed_forward_acts(net, feats[ref]);
  std::vector<EmbedActsT<double>> acts(n);
  std::vector<TensorT<double>> raw(n);
  for (int j = 0; j < n; ++j) {
    if (j != ref) acts[j] = embed_forward_acts(net, warped[j]);
    const TensorT<double>& e_j = j == ref ? ref_acts.e : acts[j].e;
    raw[j] = exp_map(cosine_map(e_j, ref_acts.e));
  }
  std::vector<TensorT<double>> w = normalize_weights(raw);
  AggregateGrads<double> ga = aggregate_backward(warped, w, coeff);
  std::vector<TensorT<double>> draw = normalize_weights_backward(raw, ga.weights);

  std::vector<TensorT<double>> dwarped = ga.warped;
  TensorT<double> de_ref(ref_acts.e.dims());
  for (int j = 0; j < n; ++j) {
    TensorT<double> dc = exp_map_backward(raw[j], draw[j]);
    const TensorT<double>& e_j = j == ref ? ref_acts.e : acts[j].e;
    CosineGrads<double> cg = cosine_map_backward(e_j, ref_acts.e, dc);
    for (size_t p = 0; p < de_ref.numel(); ++p) de_ref.data()[p] += cg.b.data()[p];
    if (j == ref) {
      for (size_t p = 0; p < de_ref.numel(); ++p) de_ref.data()[p] += cg.a.data()[p];
    } else {
      EmbedGradsT<double> eg = embed_backward(net, warped[j], acts[j], cg.a);
      for (size_t p = 0; p < dwarped[j].numel(); ++p) {
        dwarped[j].data()[p] += eg.input.data()[p];
      }
    }
  }
  std::vector<TensorT<double>> dfeats(n);
  std::vector<TensorT<double>> dflows(n);
  for (int j = 0; j < n; ++j) {
    if (j == ref) {
      dfeats[j] = dwarped[j];
      EmbedGradsT<double> eg = embed_backward(net, feats[ref], ref_acts, de_ref);
      for (size_t p = 0; p < dfeats[j].numel(); ++p) {
        dfeats[j].data()[p] += eg.input.data()[p];
      }
    } else {
      WarpGrads<double> wg = warp_bilinear_backward(feats[j], flows[j], dwarped[j]);
      dfeats[j] = wg.source;
      dflows[j] = wg.flow;
    }
  }

  const double h = 1e-3;
  double max_rel = 0.0;
  auto check_coord = [&](double* ptr, double analytic) {
    const double orig = *ptr;
    *ptr = orig + h;
    const double lp = forward(feats, flows);
    *ptr = orig - h;
    const double lm = forward(feats, flows);
    *ptr = orig;
    const double fd = (lp - lm) / (2 * h);
    const double rel = std::abs(analytic - fd) / std::max({1e-3, std::abs(analytic), std::abs(fd)});
    CHECK(rel < 1e-2);
    max_rel = std::max(max_rel, rel);
  };
  for (int j = 0; j < n; ++j) {
    for (size_t p = 0; p < feats[j].numel(); p += 2) {
      check_coord(feats[j].data() + p, dfeats[j].data()[p]);
    }
    if (j == ref) continue;
    for (size_t p = 0; p < flows[j].numel(); p += 2) {
      check_coord(flows[j].data() + p, dflows[j].data()[p]);
    }
  }
  MESSAGE("aggregation chain max_rel=" << max_rel);
}
