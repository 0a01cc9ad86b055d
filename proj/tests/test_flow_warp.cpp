#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "fgfa/errors.hpp"
#include "fgfa/flow_warp.hpp"
#include "fgfa/gradcheck.hpp"
#include "fgfa/rng.hpp"
#include "support/oracles.hpp"

using namespace fgfa;
using testsupport::dist_to_int;
using testsupport::naive_warp;

namespace {

Tensor constant_flow(int h, int w, float dx, float dy) {
  Tensor f({2, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      f.at3(0, y, x) = dx;
      f.at3(1, y, x) = dy;
    }
  return f;
}

}  // namespace

TEST_CASE("zero flow is a bitwise identity") {
  Rng rng(4);
  Tensor src = Tensor::random_normal({3, 6, 5}, rng);
  Tensor flow({2, 6, 5});
  CHECK(bitwise_equal(warp_bilinear(src, flow), src));
}

TEST_CASE("constant-shift warps on a 2x2 source") {
  Tensor src({1, 2, 2}, {1, 2, 3, 4});
  Tensor w1 = warp_bilinear(src, constant_flow(2, 2, 1.0f, 0.0f));
  CHECK(w1.at3(0, 0, 0) == 2.0f);
  CHECK(w1.at3(0, 0, 1) == 0.0f);
  CHECK(w1.at3(0, 1, 0) == 4.0f);
  CHECK(w1.at3(0, 1, 1) == 0.0f);

  Tensor wh = warp_bilinear(src, constant_flow(2, 2, 0.5f, 0.0f));
  CHECK(wh.at3(0, 0, 0) == 1.5f);
  CHECK(wh.at3(0, 0, 1) == 1.0f);  // half in-bounds, half zero extension
  CHECK(wh.at3(0, 1, 0) == 3.5f);
  CHECK(wh.at3(0, 1, 1) == 2.0f);
}

TEST_CASE("warp matches the naive per-pixel oracle") {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const int c = 1 + static_cast<int>(rng.uniform_u32(3));
    Tensor src = Tensor::random_normal({c, 5, 7}, rng);
    Tensor flow = Tensor::random_uniform({2, 5, 7}, rng, -3.0, 3.0);
    Tensor got = warp_bilinear(src, flow);
    DTensor want = naive_warp(src, flow);
    for (size_t i = 0; i < got.numel(); ++i) {
      CHECK(std::abs(static_cast<double>(got[i]) - want[i]) < 1e-5);
    }
  }
}

TEST_CASE("warp is linear in the source") {
  Rng rng(8);
  Tensor f = Tensor::random_normal({2, 6, 6}, rng);
  Tensor g = Tensor::random_normal({2, 6, 6}, rng);
  Tensor flow = Tensor::random_uniform({2, 6, 6}, rng, -2.0, 2.0);
  const float a = 0.6f, b = -1.3f;
  Tensor mix({2, 6, 6});
  for (size_t i = 0; i < mix.numel(); ++i) mix.data()[i] = a * f[i] + b * g[i];
  Tensor lhs = warp_bilinear(mix, flow);
  Tensor wf = warp_bilinear(f, flow);
  Tensor wg = warp_bilinear(g, flow);
  for (size_t i = 0; i < lhs.numel(); ++i) {
    const double want = a * static_cast<double>(wf[i]) + b * static_cast<double>(wg[i]);
    CHECK(std::abs(lhs[i] - want) / std::max(1.0, std::abs(want)) < 1e-5);
  }
}

TEST_CASE("flow shape validation") {
  Tensor src({1, 4, 4});
  CHECK_THROWS_AS(warp_bilinear(src, Tensor({3, 4, 4})), ContractViolation);
  CHECK_THROWS_AS(warp_bilinear(src, Tensor({2, 3, 4})), ContractViolation);
  CHECK_THROWS_AS(warp_bilinear(src, Tensor({2, 4})), ContractViolation);
}

TEST_CASE("warp backward trivial cases") {
  Rng rng(6);
  Tensor src = Tensor::random_normal({2, 4, 4}, rng);
  Tensor zero_flow({2, 4, 4});

  WarpGrads<float> gz =
      warp_bilinear_backward(src, zero_flow, Tensor({2, 4, 4}));
  CHECK(max_abs_diff(gz.source, Tensor({2, 4, 4})) == 0.0);
  CHECK(max_abs_diff(gz.flow, Tensor({2, 4, 4})) == 0.0);

  // zero flow: each output reads exactly its own pixel
  WarpGrads<float> g1 =
      warp_bilinear_backward(src, zero_flow, Tensor::full({2, 4, 4}, 1.0f));
  CHECK(bitwise_equal(g1.source, Tensor::full({2, 4, 4}, 1.0f)));
}

TEST_CASE("warp backward matches central finite differences") {
  // h = 1e-3 with kink exclusion at 1e-2, per the documented convention
  Rng rng(31);
  DTensor src = DTensor::random_normal({1, 4, 4}, rng);
  DTensor flow({2, 4, 4});
  for (size_t i = 0; i < flow.numel(); ++i) {
    double v;
    do {
      v = rng.uniform(-1.5, 1.5);
    } while (dist_to_int(v) < 5e-2);  // keep sample coords off the kinks
    flow[i] = v;
  }
  DTensor upstream = DTensor::random_normal({1, 4, 4}, rng);

  auto loss = [&]() {
    DTensor out = warp_bilinear(src, flow);
    double s = 0.0;
    for (size_t i = 0; i < out.numel(); ++i) s += out[i] * upstream[i];
    return s;
  };
  WarpGrads<double> g = warp_bilinear_backward(src, flow, upstream);

  auto fd_check = [&](DTensor& target, const DTensor& analytic, double tol) {
    for (size_t i = 0; i < target.numel(); ++i) {
      const double orig = target[i];
      const double h = 1e-3;
      target[i] = orig + h;
      const double lp = loss();
      target[i] = orig - h;
      const double lm = loss();
      target[i] = orig;
      const double fd = (lp - lm) / (2 * h);
      CHECK(std::abs(analytic[i] - fd) /
                std::max({1e-3, std::abs(fd), std::abs(analytic[i])}) <
            tol);
    }
  };
  fd_check(src, g.source, 1e-3);
  fd_check(flow, g.flow, 1e-3);
}

TEST_CASE("registered warp gradient check passes") {
  for (const GradCheckReport& r : run_grad_checks("warp", 2, 19)) {
    CHECK(r.pass);
    CHECK(r.coords >= 500);
  }
}

TEST_CASE("downscale_flow") {
  Tensor c = constant_flow(4, 6, 4.0f, 2.0f);
  Tensor d = downscale_flow(c, 2);
  CHECK(d.dims() == std::vector<int>{2, 2, 3});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x) {
      CHECK(d.at3(0, y, x) == 2.0f);
      CHECK(d.at3(1, y, x) == 1.0f);
    }

  CHECK(max_abs_diff(downscale_flow(Tensor({2, 4, 4}), 2), Tensor({2, 2, 2})) == 0.0);

  Tensor block({2, 2, 2}, {1, 2, 3, 4, 0, 0, 0, 0});
  Tensor one = downscale_flow(block, 2);
  CHECK(one.at3(0, 0, 0) == 1.25f);  // mean 2.5 divided by the factor
  CHECK(one.at3(1, 0, 0) == 0.0f);

  CHECK_THROWS_AS(downscale_flow(Tensor({2, 5, 4}), 2), ContractViolation);
  CHECK_THROWS_AS(downscale_flow(Tensor({2, 4, 4}), 0), ConfigError);
}

TEST_CASE("compose_flows basics") {
  Rng rng(12);
  Tensor f = Tensor::random_uniform({2, 5, 5}, rng, -1.0, 1.0);
  Tensor zero({2, 5, 5});
  CHECK(max_abs_diff(compose_flows(zero, f), f) < 1e-7);
  CHECK(max_abs_diff(compose_flows(f, zero), f) < 1e-7);

  Tensor a = constant_flow(5, 5, 1.0f, 0.0f);
  Tensor b = constant_flow(5, 5, 0.0f, 1.0f);
  Tensor ab = compose_flows(a, b);
  // interior pixels: sampling b at p+(1,0) stays in bounds for x < 4
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 4; ++x) {
      CHECK(ab.at3(0, y, x) == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(ab.at3(1, y, x) == doctest::Approx(1.0).epsilon(1e-9));
    }

  CHECK_THROWS_AS(compose_flows(a, Tensor({2, 4, 4})), ContractViolation);
}

TEST_CASE("composed warp equals sequential warps on the interior") {
  // integer translations: both paths are exact index shifts
  Rng rng(40);
  Tensor src = Tensor::random_normal({2, 12, 12}, rng);
  Tensor m1 = constant_flow(12, 12, 1.0f, 0.0f);
  Tensor m2 = constant_flow(12, 12, 0.0f, 2.0f);
  Tensor direct = warp_bilinear(src, compose_flows(m1, m2));
  Tensor sequential = warp_bilinear(warp_bilinear(src, m2), m1);
  for (int c = 0; c < 2; ++c)
    for (int y = 3; y < 9; ++y)
      for (int x = 3; x < 9; ++x)
        CHECK(std::abs(direct.at3(c, y, x) - sequential.at3(c, y, x)) < 1e-6);

  // fractional translation on a linear ramp, which bilinear reproduces exactly
  Tensor ramp({1, 12, 12});
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 12; ++x) ramp.at3(0, y, x) = 0.25f * x - 0.5f * y + 2.0f;
  Tensor f1 = constant_flow(12, 12, 0.6f, -0.4f);
  Tensor f2 = constant_flow(12, 12, 0.3f, 0.8f);
  Tensor d2 = warp_bilinear(ramp, compose_flows(f1, f2));
  Tensor s2 = warp_bilinear(warp_bilinear(ramp, f2), f1);
  for (int y = 3; y < 9; ++y)
    for (int x = 3; x < 9; ++x) CHECK(std::abs(d2.at3(0, y, x) - s2.at3(0, y, x)) < 1e-5);
}
