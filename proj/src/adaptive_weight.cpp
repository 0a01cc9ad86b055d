#include "fgfa/adaptive_weight.hpp"

#include <cmath>

#include "fgfa/conv.hpp"
#include "fgfa/errors.hpp"
#include "fgfa/rng.hpp"

namespace fgfa {

namespace {
constexpr double kNormGuard = 1e-12;

template <typename T>
void require_map_shapes(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || !a.same_shape(b)) {
    throw ContractViolation("cosine operands must be matching [C,H,W], got " + a.shape_str() +
                            " vs " + b.shape_str());
  }
}
}  // namespace

template <typename T>
EmbedNetT<T> make_embed_net(int c_in, int c_mid, int c_out, Rng& rng) {
  if (c_in < 1 || c_mid < 1 || c_out < 1) throw ConfigError("embed net widths must be positive");
  EmbedNetT<T> net;
  auto init = [&](std::vector<int> dims) {
    int fan_in = dims[1] * dims[2] * dims[3];
    return TensorT<T>::random_normal(dims, rng, 0.0, std::sqrt(2.0 / fan_in));
  };
  // biases start nonzero on purpose: warped features carry exact zeros at
  // out-of-bounds cells, and zero biases would pin those positions onto the
  // relu kinks and the cosine guard, where the loss is not differentiable
  net.w1 = init({c_mid, c_in, 1, 1});
  net.b1 = TensorT<T>::random_normal({c_mid}, rng, 0.0, 0.05);
  net.w2 = init({c_mid, c_mid, 3, 3});
  net.b2 = TensorT<T>::random_normal({c_mid}, rng, 0.0, 0.05);
  net.w3 = init({c_out, c_mid, 1, 1});
  net.b3 = TensorT<T>::random_normal({c_out}, rng, 0.0, 0.05);
  return net;
}

template <typename T>
EmbedActsT<T> embed_forward_acts(const EmbedNetT<T>& net, const TensorT<T>& f) {
  EmbedActsT<T> acts;
  acts.a1 = relu(conv2d(f, net.w1, 1, 1, net.b1));
  acts.a2 = relu(conv2d(acts.a1, net.w2, 1, 1, net.b2));
  acts.e = conv2d(acts.a2, net.w3, 1, 1, net.b3);
  return acts;
}

template <typename T>
TensorT<T> embed_forward(const EmbedNetT<T>& net, const TensorT<T>& f) {
  return embed_forward_acts(net, f).e;
}

template <typename T>
EmbedGradsT<T> embed_backward(const EmbedNetT<T>& net, const TensorT<T>& f,
                              const EmbedActsT<T>& acts, const TensorT<T>& upstream) {
  EmbedGradsT<T> g;
  Conv2dGrads<T> g3 = conv2d_backward(acts.a2, net.w3, 1, 1, upstream);
  TensorT<T> ga2 = relu_backward(acts.a2, g3.input);
  Conv2dGrads<T> g2 = conv2d_backward(acts.a1, net.w2, 1, 1, ga2);
  TensorT<T> ga1 = relu_backward(acts.a1, g2.input);
  Conv2dGrads<T> g1 = conv2d_backward(f, net.w1, 1, 1, ga1);
  g.net.w1 = g1.kernel;
  g.net.b1 = g1.bias;
  g.net.w2 = g2.kernel;
  g.net.b2 = g2.bias;
  g.net.w3 = g3.kernel;
  g.net.b3 = g3.bias;
  g.input = g1.input;
  return g;
}

template <typename T>
TensorT<T> cosine_map(const TensorT<T>& a, const TensorT<T>& b) {
  require_map_shapes(a, b);
  const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
  TensorT<T> out({H, W});
  const T* pa = a.data();
  const T* pb = b.data();
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double dot = 0.0, na2 = 0.0, nb2 = 0.0;
      for (int c = 0; c < C; ++c) {
        const double va = pa[c * H * W + y * W + x];
        const double vb = pb[c * H * W + y * W + x];
        dot += va * vb;
        na2 += va * va;
        nb2 += vb * vb;
      }
      const double denom = std::sqrt(na2) * std::sqrt(nb2);
      out.at2(y, x) = denom < kNormGuard ? T(0) : static_cast<T>(dot / denom);
    }
  }
  return out;
}

template <typename T>
CosineGrads<T> cosine_map_backward(const TensorT<T>& a, const TensorT<T>& b,
                                   const TensorT<T>& upstream) {
  require_map_shapes(a, b);
  const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
  if (upstream.rank() != 2 || upstream.dim(0) != H || upstream.dim(1) != W) {
    throw ContractViolation("cosine upstream must be [H,W], got " + upstream.shape_str());
  }
  CosineGrads<T> g{TensorT<T>({C, H, W}), TensorT<T>({C, H, W})};
  const T* pa = a.data();
  const T* pb = b.data();
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double dot = 0.0, na2 = 0.0, nb2 = 0.0;
      for (int c = 0; c < C; ++c) {
        const double va = pa[c * H * W + y * W + x];
        const double vb = pb[c * H * W + y * W + x];
        dot += va * vb;
        na2 += va * va;
        nb2 += vb * vb;
      }
      const double na = std::sqrt(na2), nb = std::sqrt(nb2);
      const double denom = na * nb;
      if (denom < kNormGuard) continue;  // flat zero branch
      const double cosv = dot / denom;
      const double u = upstream.at2(y, x);
      for (int c = 0; c < C; ++c) {
        const double va = pa[c * H * W + y * W + x];
        const double vb = pb[c * H * W + y * W + x];
        g.a.data()[c * H * W + y * W + x] =
            static_cast<T>(u * (vb / denom - cosv * va / na2));
        g.b.data()[c * H * W + y * W + x] =
            static_cast<T>(u * (va / denom - cosv * vb / nb2));
      }
    }
  }
  return g;
}

template <typename T>
TensorT<T> exp_map(const TensorT<T>& c) {
  TensorT<T> out = c;
  T* p = out.data();
  for (size_t i = 0; i < out.numel(); ++i) p[i] = static_cast<T>(std::exp(static_cast<double>(p[i])));
  return out;
}

template <typename T>
TensorT<T> exp_map_backward(const TensorT<T>& exp_out, const TensorT<T>& upstream) {
  if (!exp_out.same_shape(upstream)) {
    throw ContractViolation("exp upstream shape mismatch: " + exp_out.shape_str() + " vs " +
                            upstream.shape_str());
  }
  TensorT<T> g = upstream;
  T* p = g.data();
  const T* e = exp_out.data();
  for (size_t i = 0; i < g.numel(); ++i) p[i] = static_cast<T>(p[i] * e[i]);
  return g;
}

template <typename T>
std::vector<TensorT<T>> normalize_weights(const std::vector<TensorT<T>>& raw) {
  if (raw.empty()) throw ContractViolation("normalize_weights needs at least one map");
  for (const auto& m : raw) {
    if (m.rank() != 2 || !m.same_shape(raw[0])) {
      throw ContractViolation("weight maps must share an [H,W] shape");
    }
  }
  const size_t n = raw[0].numel();
  std::vector<TensorT<T>> out(raw.begin(), raw.end());
  for (size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (const auto& m : raw) sum += m.data()[i];
    if (sum <= 0.0) {
      throw ContractViolation("weight normalization hit a non-positive sum");
    }
    for (size_t j = 0; j < raw.size(); ++j) {
      out[j].data()[i] = static_cast<T>(raw[j].data()[i] / sum);
    }
  }
  return out;
}

template <typename T>
std::vector<TensorT<T>> normalize_weights_backward(const std::vector<TensorT<T>>& raw,
                                                   const std::vector<TensorT<T>>& upstream) {
  if (raw.size() != upstream.size() || raw.empty()) {
    throw ContractViolation("normalize backward needs matching map counts");
  }
  const size_t n = raw[0].numel();
  std::vector<TensorT<T>> grads;
  grads.reserve(raw.size());
  for (const auto& m : raw) grads.emplace_back(m.dims());
  for (size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (const auto& m : raw) sum += m.data()[i];
    // out_j = r_j / S, so d out_j / d r_k = (delta_jk - out_j) / S
    double mixed = 0.0;
    for (size_t j = 0; j < raw.size(); ++j) {
      mixed += static_cast<double>(upstream[j].data()[i]) * (raw[j].data()[i] / sum);
    }
    for (size_t k = 0; k < raw.size(); ++k) {
      grads[k].data()[i] = static_cast<T>((upstream[k].data()[i] - mixed) / sum);
    }
  }
  return grads;
}

#define FGFA_INSTANTIATE(T)                                                                     \
  template EmbedNetT<T> make_embed_net<T>(int, int, int, Rng&);                                 \
  template EmbedActsT<T> embed_forward_acts<T>(const EmbedNetT<T>&, const TensorT<T>&);         \
  template TensorT<T> embed_forward<T>(const EmbedNetT<T>&, const TensorT<T>&);                 \
  template EmbedGradsT<T> embed_backward<T>(const EmbedNetT<T>&, const TensorT<T>&,             \
                                            const EmbedActsT<T>&, const TensorT<T>&);           \
  template TensorT<T> cosine_map<T>(const TensorT<T>&, const TensorT<T>&);                      \
  template CosineGrads<T> cosine_map_backward<T>(const TensorT<T>&, const TensorT<T>&,          \
                                                 const TensorT<T>&);                            \
  template TensorT<T> exp_map<T>(const TensorT<T>&);                                            \
  template TensorT<T> exp_map_backward<T>(const TensorT<T>&, const TensorT<T>&);                \
  template std::vector<TensorT<T>> normalize_weights<T>(const std::vector<TensorT<T>>&);        \
  template std::vector<TensorT<T>> normalize_weights_backward<T>(const std::vector<TensorT<T>>&, \
                                                                 const std::vector<TensorT<T>>&);

FGFA_INSTANTIATE(float)
FGFA_INSTANTIATE(double)
#undef FGFA_INSTANTIATE

}  // namespace fgfa
