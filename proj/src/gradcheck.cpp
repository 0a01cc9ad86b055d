#include "fgfa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "fgfa/adaptive_weight.hpp"
#include "fgfa/aggregation.hpp"
#include "fgfa/conv.hpp"
#include "fgfa/errors.hpp"
#include "fgfa/flow_warp.hpp"
#include "fgfa/nets.hpp"
#include "fgfa/rng.hpp"
#include "fgfa/train.hpp"

namespace fgfa {

namespace {

double dot(const DTensor& a, const DTensor& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) acc += a.data()[i] * b.data()[i];
  return acc;
}

struct Coord {
  double* ptr;
  double analytic;
};

// One gradient-check instance: perturbable coordinates plus a loss closure
// that reads them.
struct Instance {
  std::vector<Coord> coords;
  std::function<double()> loss;
};

void add_tensor_coords(Instance& inst, DTensor& x, const DTensor& grad) {
  for (size_t i = 0; i < x.numel(); ++i) {
    inst.coords.push_back(Coord{x.data() + i, grad.data()[i]});
  }
}

void run_instance(Instance& inst, int want, Rng& rng, GradCheckReport& rep) {
  if (inst.coords.empty()) return;
  std::vector<int> pool(inst.coords.size());
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<int> picked =
      rng.sample_without_replacement(pool, std::min<int>(want, static_cast<int>(pool.size())));
  for (int idx : picked) {
    Coord& c = inst.coords[idx];
    const double orig = *c.ptr;
    // shrink the step when a coordinate disagrees: a relu or warp-cell kink
    // inside the difference interval drops out once the step is below the
    // distance to it, while a wrong analytic value stays wrong at every step
    double rel = 0.0;
    for (const double scale : {1.0, 1.0 / 32.0, 1.0 / 1024.0}) {
      const double h = scale * 1e-6 * std::max(1.0, std::abs(orig));
      *c.ptr = orig + h;
      const double lp = inst.loss();
      *c.ptr = orig - h;
      const double lm = inst.loss();
      *c.ptr = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double denom = std::max({1e-6, std::abs(c.analytic), std::abs(fd)});
      const double r = std::abs(c.analytic - fd) / denom;
      if (scale == 1.0 || r < rel) rel = r;
      if (rel < rep.tolerance) break;
    }
    rep.max_rel_err = std::max(rep.max_rel_err, rel);
    rep.mean_rel_err += rel;
    ++rep.coords;
  }
}

void check_conv2d(int trials, int per_trial, Rng& rng, GradCheckReport& rep) {
  for (int t = 0; t < trials; ++t) {
    const int stride = 1 + t % 2;
    const int dilation = 1 + (t / 2) % 2;
    DTensor input = DTensor::random_normal({3, 7, 8}, rng, 0.0, 1.0);
    DTensor kernel = DTensor::random_normal({4, 3, 3, 3}, rng, 0.0, 0.5);
    DTensor bias = DTensor::random_normal({4}, rng, 0.0, 0.5);
    DTensor out = conv2d(input, kernel, stride, dilation, bias);
    DTensor coeff = DTensor::random_normal(out.dims(), rng, 0.0, 1.0);
    Conv2dGrads<double> g = conv2d_backward(input, kernel, stride, dilation, coeff);
    Instance inst;
    add_tensor_coords(inst, input, g.input);
    add_tensor_coords(inst, kernel, g.kernel);
    add_tensor_coords(inst, bias, g.bias);
    inst.loss = [&input, &kernel, &bias, &coeff, stride, dilation] {
      return dot(coeff, conv2d(input, kernel, stride, dilation, bias));
    };
    run_instance(inst, per_trial, rng, rep);
  }
}

double dist_to_int(double v) { return std::abs(v - std::round(v)); }

void check_warp(int trials, int per_trial, Rng& rng, GradCheckReport& rep) {
  for (int t = 0; t < trials; ++t) {
    DTensor source = DTensor::random_normal({3, 10, 12}, rng, 0.0, 1.0);
    DTensor flow = DTensor::random_uniform({2, 10, 12}, rng, -2.2, 2.2);
    DTensor coeff = DTensor::random_normal(source.dims(), rng, 0.0, 1.0);
    WarpGrads<double> g = warp_bilinear_backward(source, flow, coeff);
    const int H = 10, W = 12;
    Instance inst;
    add_tensor_coords(inst, source, g.source);
    // flow coordinates whose sample point sits near the bilinear kinks are
    // excluded: the subgradient there is one-sided
    for (int c = 0; c < 2; ++c) {
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          const double sx = x + flow.at3(0, y, x);
          const double sy = y + flow.at3(1, y, x);
          if (dist_to_int(sx) < 1e-3 || dist_to_int(sy) < 1e-3) continue;
          inst.coords.push_back(
              Coord{flow.data() + (c * H + y) * W + x, g.flow.at3(c, y, x)});
        }
      }
    }
    inst.loss = [&source, &flow, &coeff] { return dot(coeff, warp_bilinear(source, flow)); };
    run_instance(inst, per_trial, rng, rep);
  }
}

void check_embed(int trials, int per_trial, Rng& rng, GradCheckReport& rep) {
  for (int t = 0; t < trials; ++t) {
    EmbedNetT<double> net = make_embed_net<double>(3, 4, 5, rng);
    DTensor f = DTensor::random_normal({3, 6, 7}, rng, 0.0, 0.7);
    EmbedActsT<double> acts = embed_forward_acts(net, f);
    DTensor coeff = DTensor::random_normal(acts.e.dims(), rng, 0.0, 1.0);
    EmbedGradsT<double> g = embed_backward(net, f, acts, coeff);
    Instance inst;
    add_tensor_coords(inst, net.w1, g.net.w1);
    add_tensor_coords(inst, net.b1, g.net.b1);
    add_tensor_coords(inst, net.w2, g.net.w2);
    add_tensor_coords(inst, net.b2, g.net.b2);
    add_tensor_coords(inst, net.w3, g.net.w3);
    add_tensor_coords(inst, net.b3, g.net.b3);
    add_tensor_coords(inst, f, g.input);
    inst.loss = [&net, &f, &coeff] { return dot(coeff, embed_forward(net, f)); };
    run_instance(inst, per_trial, rng, rep);
  }
}

void check_cosine(int trials, int per_trial, Rng& rng, GradCheckReport& rep) {
  for (int t = 0; t < trials; ++t) {
    DTensor a = DTensor::random_normal({4, 9, 8}, rng, 0.0, 1.0);
    DTensor b = DTensor::random_normal({4, 9, 8}, rng, 0.0, 1.0);
    DTensor coeff = DTensor::random_normal({9, 8}, rng, 0.0, 1.0);
    CosineGrads<double> g = cosine_map_backward(a, b, coeff);
    Instance inst;
    add_tensor_coords(inst, a, g.a);
    add_tensor_coords(inst, b, g.b);
    inst.loss = [&a, &b, &coeff] { return dot(coeff, cosine_map(a, b)); };
    run_instance(inst, per_trial, rng, rep);
  }
}

void check_weights(int trials, int per_trial, Rng& rng, GradCheckReport& rep) {
  for (int t = 0; t < trials; ++t) {
    const int m = 5;
    std::vector<DTensor> scores;
    std::vector<DTensor> coeff;
    for (int j = 0; j < m; ++j) {
      scores.push_back(DTensor::random_uniform({10, 11}, rng, -1.0, 1.0));
      coeff.push_back(DTensor::random_normal({10, 11}, rng, 0.0, 1.0));
    }
    auto forward = [&] {
      std::vector<DTensor> raw;
      for (const DTensor& c : scores) raw.push_back(exp_map(c));
      return normalize_weights(raw);
    };
    std::vector<DTensor> raw;
    for (const DTensor& c : scores) raw.push_back(exp_map(c));
    std::vector<DTensor> dn = normalize_weights_backward(raw, coeff);
    Instance inst;
    std::vector<DTensor> dscores;
    for (int j = 0; j < m; ++j) dscores.push_back(exp_map_backward(raw[j], dn[j]));
    for (int j = 0; j < m; ++j) add_tensor_coords(inst, scores[j], dscores[j]);
    inst.loss = [&forward, &coeff, m] {
      std::vector<DTensor> out = forward();
      double acc = 0.0;
      for (int j = 0; j < m; ++j) acc += dot(coeff[j], out[j]);
      return acc;
    };
    run_instance(inst, per_trial, rng, rep);
  }
}

void check_aggregate(int trials, int per_trial, Rng& rng, GradCheckReport& rep) {
  for (int t = 0; t < trials; ++t) {
    const int m = 4;
    std::vector<DTensor> warped;
    std::vector<DTensor> rawfill;
    for (int j = 0; j < m; ++j) {
      warped.push_back(DTensor::random_normal({3, 4, 5}, rng, 0.0, 1.0));
      rawfill.push_back(DTensor::random_uniform({4, 5}, rng, 0.2, 3.0));
    }
    DTensor coeff = DTensor::random_normal({3, 4, 5}, rng, 0.0, 1.0);
    std::vector<DTensor> weights = normalize_weights(rawfill);
    AggregateGrads<double> ga = aggregate_backward(warped, weights, coeff);
    std::vector<DTensor> draw = normalize_weights_backward(rawfill, ga.weights);
    Instance inst;
    for (int j = 0; j < m; ++j) add_tensor_coords(inst, warped[j], ga.warped[j]);
    for (int j = 0; j < m; ++j) add_tensor_coords(inst, rawfill[j], draw[j]);
    inst.loss = [&warped, &rawfill, &coeff] {
      return dot(coeff, aggregate(warped, normalize_weights(rawfill)));
    };
    run_instance(inst, per_trial, rng, rep);
  }
}

NetConfig tiny_config() {
  NetConfig c;
  c.in_channels = 2;
  c.feature_channels = {4, 6};
  c.feature_kernels = {3, 3};
  c.feature_strides = {2, 2};
  c.embed_mid = 4;
  c.embed_out = 6;
  c.num_classes = 2;
  c.anchor_size = 6.0;
  return c;
}

CellTargets random_targets(const NetConfig& cfg, int hf, int wf, int npos, Rng& rng) {
  CellTargets tg;
  tg.hf = hf;
  tg.wf = wf;
  tg.cls.assign(hf * wf, 0);
  tg.tx.assign(hf * wf, 0.0);
  tg.ty.assign(hf * wf, 0.0);
  tg.tw.assign(hf * wf, 0.0);
  tg.th.assign(hf * wf, 0.0);
  std::vector<int> cells(hf * wf);
  std::iota(cells.begin(), cells.end(), 0);
  for (int idx : rng.sample_without_replacement(cells, npos)) {
    tg.cls[idx] = rng.uniform_int(1, cfg.num_classes);
    tg.tx[idx] = rng.uniform(-0.5, 0.5);
    tg.ty[idx] = rng.uniform(-0.5, 0.5);
    tg.tw[idx] = rng.uniform(-0.4, 0.4);
    tg.th[idx] = rng.uniform(-0.4, 0.4);
    ++tg.npos;
  }
  return tg;
}

void check_detect_loss(int trials, int per_trial, Rng& rng, GradCheckReport& rep) {
  const NetConfig cfg = tiny_config();
  for (int t = 0; t < trials; ++t) {
    DTensor logits = DTensor::random_normal({cfg.head_channels(), 6, 7}, rng, 0.0, 1.0);
    CellTargets tg = random_targets(cfg, 6, 7, 3, rng);
    DTensor dlogits;
    detect_loss(logits, tg, cfg, 4.0, 1.0, &dlogits);
    Instance inst;
    add_tensor_coords(inst, logits, dlogits);
    inst.loss = [&logits, &tg, &cfg] {
      return detect_loss<double>(logits, tg, cfg, 4.0, 1.0, nullptr);
    };
    run_instance(inst, per_trial, rng, rep);
  }
}

void check_fgfa(int trials, int per_trial, Rng& rng, GradCheckReport& rep) {
  const NetConfig cfg = tiny_config();
  for (int t = 0; t < trials; ++t) {
    ModelT<double> model = make_model<double>(cfg, rng);
    std::vector<DTensor> frames;
    std::vector<DTensor> flows;
    for (int j = 0; j < 3; ++j) {
      frames.push_back(DTensor::random_uniform({2, 16, 16}, rng, 0.0, 1.0));
      flows.push_back(DTensor::random_uniform({2, 4, 4}, rng, -1.2, 1.2));
    }
    CellTargets tg = random_targets(cfg, 4, 4, 2, rng);
    ModelT<double> grads;
    fgfa_forward_backward(model, frames, 1, flows, tg, 4.0, 1.0, &grads);
    Instance inst;
    std::vector<DTensor*> mp, gp;
    visit_params(model, std::function<void(const std::string&, DTensor&)>(
                            [&](const std::string&, DTensor& x) { mp.push_back(&x); }));
    visit_params(grads, std::function<void(const std::string&, DTensor&)>(
                            [&](const std::string&, DTensor& x) { gp.push_back(&x); }));
    for (size_t p = 0; p < mp.size(); ++p) add_tensor_coords(inst, *mp[p], *gp[p]);
    inst.loss = [&model, &frames, &flows, &tg] {
      return fgfa_forward_backward<double>(model, frames, 1, flows, tg, 4.0, 1.0, nullptr);
    };
    run_instance(inst, per_trial, rng, rep);
  }
}

struct Component {
  const char* name;
  double tolerance;
  void (*fn)(int, int, Rng&, GradCheckReport&);
};

const Component kComponents[] = {
    {"conv2d", 1e-4, check_conv2d},     {"warp", 1e-3, check_warp},
    {"embed", 1e-4, check_embed},       {"cosine", 1e-4, check_cosine},
    {"weights", 1e-4, check_weights},   {"aggregate", 1e-4, check_aggregate},
    {"detect-loss", 1e-4, check_detect_loss}, {"fgfa", 1e-2, check_fgfa},
};

constexpr int kCoordTarget = 500;

GradCheckReport run_one(const Component& comp, int trials, uint32_t seed) {
  GradCheckReport rep;
  rep.component = comp.name;
  rep.tolerance = comp.tolerance;
  Rng rng(seed);
  const int per_trial = (kCoordTarget + trials - 1) / trials;
  comp.fn(trials, per_trial, rng, rep);
  if (rep.coords > 0) rep.mean_rel_err /= rep.coords;
  rep.pass = rep.coords > 0 && rep.max_rel_err < rep.tolerance;
  return rep;
}

}  // namespace

std::vector<std::string> grad_check_component_names() {
  std::vector<std::string> names;
  for (const Component& c : kComponents) names.push_back(c.name);
  return names;
}

std::vector<GradCheckReport> run_grad_checks(const std::string& component, int trials,
                                             uint32_t seed) {
  if (trials < 1) throw ConfigError("gradcheck trials must be >= 1");
  std::vector<GradCheckReport> reports;
  bool found = false;
  for (const Component& c : kComponents) {
    if (component == "all" || component == c.name) {
      reports.push_back(run_one(c, trials, seed));
      found = true;
    }
  }
  if (!found) {
    throw ConfigError("unknown gradcheck component '" + component + "'");
  }
  return reports;
}

}  // namespace fgfa
