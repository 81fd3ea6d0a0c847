#pragma once

// Small fully-connected networks with hand-written backpropagation, Adam and
// Polyak averaging. Batches are column-major: one sample per column.

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "psw/error.hpp"
#include "psw/rng.hpp"

namespace psw {

enum class Activation : std::uint8_t {
  Identity = 0,
  Relu = 1,
  Tanh = 2,
};

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

struct Dense {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
  Activation activation = Activation::Identity;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

struct DenseGrad {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

using Gradients = std::vector<DenseGrad>;

struct MlpParams {
  std::vector<Dense> layers;

  Eigen::Index in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  Eigen::Index out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  // Throws ConfigError on broken chaining or non-finite entries.
  void validate() const {
    if (layers.empty()) throw ConfigError("mlp: no layers");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& l = layers[k];
      if (l.bias.size() != l.weight.rows())
        throw ConfigError("mlp: layer " + std::to_string(k) + " bias size does not match weight rows");
      if (k + 1 < layers.size() && layers[k + 1].in_dim() != l.out_dim())
        throw ConfigError("mlp: layer " + std::to_string(k) + " output does not chain into layer " +
                          std::to_string(k + 1));
      if (!l.weight.allFinite() || !l.bias.allFinite())
        throw ConfigError("mlp: layer " + std::to_string(k) + " has non-finite parameters");
    }
  }

  friend bool operator==(const MlpParams& a, const MlpParams& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t k = 0; k < a.layers.size(); ++k) {
      const auto& x = a.layers[k];
      const auto& y = b.layers[k];
      if (x.activation != y.activation || x.weight.rows() != y.weight.rows() ||
          x.weight.cols() != y.weight.cols() || x.weight != y.weight || x.bias != y.bias)
        return false;
    }
    return true;
  }
};

/// Builds a network with layer widths `sizes` (input first, output last).
/// Weights and biases are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline MlpParams make_mlp(std::span<const int> sizes, Activation hidden, Activation output, Rng& rng) {
  if (sizes.size() < 2) throw ConfigError("make_mlp: need at least input and output sizes");
  MlpParams p;
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
    const int in = sizes[k];
    const int out = sizes[k + 1];
    if (in <= 0 || out <= 0) throw ConfigError("make_mlp: layer sizes must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Dense l;
    l.weight.resize(out, in);
    l.bias.resize(out);
    // Row-major draw order keeps initialization independent of Eigen storage order.
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) l.weight(r, c) = u(rng);
    for (int r = 0; r < out; ++r) l.bias(r) = u(rng);
    l.activation = (k + 2 == sizes.size()) ? output : hidden;
    p.layers.push_back(std::move(l));
  }
  return p;
}

inline MlpParams make_mlp(std::initializer_list<int> sizes, Activation hidden, Activation output, Rng& rng) {
  return make_mlp(std::span<const int>(sizes.begin(), sizes.size()), hidden, output, rng);
}

namespace detail {

inline void activate_inplace(Eigen::MatrixXd& z, Activation a) {
  switch (a) {
    case Activation::Identity: break;
    case Activation::Relu: z = z.cwiseMax(0.0); break;
    case Activation::Tanh: z = z.array().tanh().matrix(); break;
  }
}

// Multiplies `grad` by the activation derivative, expressed through the
// post-activation output.
inline void activation_backward_inplace(Eigen::MatrixXd& grad, const Eigen::MatrixXd& out, Activation a) {
  switch (a) {
    case Activation::Identity: break;
    case Activation::Relu: grad = (out.array() > 0.0).select(grad.array(), 0.0).matrix(); break;
    case Activation::Tanh: grad = (grad.array() * (1.0 - out.array().square())).matrix(); break;
  }
}

}  // namespace detail

/// Intermediate values retained by forward_batch for a later backward pass.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;   // input of layer k
  std::vector<Eigen::MatrixXd> outputs;  // post-activation output of layer k
};

inline Eigen::MatrixXd forward_batch(const MlpParams& p, const Eigen::MatrixXd& x, ForwardCache* cache = nullptr) {
  if (p.layers.empty()) throw ConfigError("forward: empty network");
  if (x.rows() != p.in_dim())
    throw ConfigError("forward: input has " + std::to_string(x.rows()) + " rows, network expects " +
                      std::to_string(p.in_dim()));
  if (cache) {
    cache->inputs.resize(p.layers.size());
    cache->outputs.resize(p.layers.size());
  }
  Eigen::MatrixXd h = x;
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    const auto& l = p.layers[k];
    Eigen::MatrixXd z = l.weight * h;
    z.colwise() += l.bias;
    detail::activate_inplace(z, l.activation);
    if (cache) {
      cache->inputs[k] = std::move(h);
      cache->outputs[k] = z;
    }
    h = std::move(z);
  }
  return h;
}

struct BackwardResult {
  Gradients grads;             // empty when parameter gradients were not requested
  Eigen::MatrixXd input_grad;  // in_dim x batch
};

/// Gradient of sum over the batch of <upstream, output> w.r.t. parameters
/// and inputs. `cache` must come from forward_batch on the same parameters.
inline BackwardResult backward_batch(const MlpParams& p, const ForwardCache& cache, const Eigen::MatrixXd& upstream,
                                     bool want_param_grads = true) {
  if (cache.outputs.size() != p.layers.size()) throw ConfigError("backward: cache does not match network");
  if (upstream.rows() != p.out_dim() || upstream.cols() != cache.outputs.back().cols())
    throw ConfigError("backward: upstream gradient shape mismatch");
  BackwardResult r;
  if (want_param_grads) r.grads.resize(p.layers.size());
  Eigen::MatrixXd g = upstream;
  for (std::size_t k = p.layers.size(); k-- > 0;) {
    const auto& l = p.layers[k];
    detail::activation_backward_inplace(g, cache.outputs[k], l.activation);
    if (want_param_grads) {
      r.grads[k].weight.noalias() = g * cache.inputs[k].transpose();
      r.grads[k].bias = g.rowwise().sum();
    }
    Eigen::MatrixXd prev = l.weight.transpose() * g;
    g = std::move(prev);
  }
  r.input_grad = std::move(g);
  return r;
}

inline std::vector<double> mlp_forward(const MlpParams& p, std::span<const double> input) {
  if (static_cast<Eigen::Index>(input.size()) != p.in_dim())
    throw ConfigError("mlp_forward: input length " + std::to_string(input.size()) + " != " +
                      std::to_string(p.in_dim()));
  Eigen::MatrixXd x = Eigen::Map<const Eigen::VectorXd>(input.data(), static_cast<Eigen::Index>(input.size()));
  Eigen::MatrixXd y = forward_batch(p, x);
  return {y.data(), y.data() + y.size()};
}

inline BackwardResult mlp_backward(const MlpParams& p, std::span<const double> input,
                                   std::span<const double> upstream) {
  if (static_cast<Eigen::Index>(input.size()) != p.in_dim()) throw ConfigError("mlp_backward: input length mismatch");
  if (static_cast<Eigen::Index>(upstream.size()) != p.out_dim())
    throw ConfigError("mlp_backward: upstream length mismatch");
  Eigen::MatrixXd x = Eigen::Map<const Eigen::VectorXd>(input.data(), static_cast<Eigen::Index>(input.size()));
  Eigen::MatrixXd g =
      Eigen::Map<const Eigen::VectorXd>(upstream.data(), static_cast<Eigen::Index>(upstream.size()));
  ForwardCache cache;
  forward_batch(p, x, &cache);
  return backward_batch(p, cache, g);
}

inline Gradients zeros_like(const MlpParams& p) {
  Gradients g(p.layers.size());
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    g[k].weight = Eigen::MatrixXd::Zero(p.layers[k].weight.rows(), p.layers[k].weight.cols());
    g[k].bias = Eigen::VectorXd::Zero(p.layers[k].bias.size());
  }
  return g;
}

inline bool all_finite(const Gradients& g) {
  for (const auto& l : g)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

inline void scale(Gradients& g, double s) {
  for (auto& l : g) {
    l.weight *= s;
    l.bias *= s;
  }
}

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig hyper;
  Gradients m;
  Gradients v;
  std::uint64_t step = 0;

  static AdamState for_params(const MlpParams& p, AdamConfig hyper = {}) {
    return AdamState{hyper, zeros_like(p), zeros_like(p), 0};
  }
};

namespace detail {
inline void check_shapes(const MlpParams& p, const Gradients& g, const char* who) {
  if (g.size() != p.layers.size()) throw ConfigError(std::string(who) + ": layer count mismatch");
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (g[k].weight.rows() != p.layers[k].weight.rows() || g[k].weight.cols() != p.layers[k].weight.cols() ||
        g[k].bias.size() != p.layers[k].bias.size())
      throw ConfigError(std::string(who) + ": shape mismatch at layer " + std::to_string(k));
  }
}
}  // namespace detail

/// One bias-corrected Adam descent step. A non-finite gradient leaves both
/// parameters and optimizer state untouched and throws NumericError.
inline void adam_step(MlpParams& p, AdamState& s, const Gradients& grads) {
  detail::check_shapes(p, grads, "adam_step");
  detail::check_shapes(p, s.m, "adam_step(m)");
  detail::check_shapes(p, s.v, "adam_step(v)");
  if (!all_finite(grads)) throw NumericError("adam_step: non-finite gradient, update rejected");
  const auto& h = s.hyper;
  s.step += 1;
  const double t = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = h.beta1 * m + (1.0 - h.beta1) * g;
    v = h.beta2 * v + (1.0 - h.beta2) * g.cwiseProduct(g);
    param.array() -= h.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + h.eps);
  };
  for (std::size_t k = 0; k < grads.size(); ++k) {
    update(p.layers[k].weight, s.m[k].weight, s.v[k].weight, grads[k].weight);
    update(p.layers[k].bias, s.m[k].bias, s.v[k].bias, grads[k].bias);
  }
}

/// target <- (1 - tau) * target + tau * source
inline void soft_update(MlpParams& target, const MlpParams& source, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("soft_update: tau must lie in [0, 1]");
  if (target.layers.size() != source.layers.size()) throw ConfigError("soft_update: layer count mismatch");
  for (std::size_t k = 0; k < target.layers.size(); ++k) {
    auto& t = target.layers[k];
    const auto& s = source.layers[k];
    if (t.weight.rows() != s.weight.rows() || t.weight.cols() != s.weight.cols() || t.bias.size() != s.bias.size())
      throw ConfigError("soft_update: shape mismatch at layer " + std::to_string(k));
    t.weight = (1.0 - tau) * t.weight + tau * s.weight;
    t.bias = (1.0 - tau) * t.bias + tau * s.bias;
  }
}

// ---------------------------------------------------------------------------
// Checkpoint format (all integers u32 LE, all reals f64 LE):
//   magic "PSWM", version, layer count,
//   per layer: out, in, activation tag, weights row-major, biases.

inline constexpr std::uint32_t kCheckpointMagic = 0x4d575350;  // "PSWM" read as LE
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& os, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("checkpoint: truncated stream");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("checkpoint: truncated stream");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace detail

inline void save_mlp(std::ostream& os, const MlpParams& p) {
  detail::put_u32(os, kCheckpointMagic);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(p.layers.size()));
  for (const auto& l : p.layers) {
    detail::put_u32(os, static_cast<std::uint32_t>(l.out_dim()));
    detail::put_u32(os, static_cast<std::uint32_t>(l.in_dim()));
    detail::put_u32(os, static_cast<std::uint32_t>(l.activation));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) detail::put_f64(os, l.weight(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) detail::put_f64(os, l.bias(r));
  }
}

inline MlpParams load_mlp(std::istream& is) {
  if (detail::get_u32(is) != kCheckpointMagic) throw IoError("checkpoint: bad magic");
  const auto version = detail::get_u32(is);
  if (version != kCheckpointVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  const auto n = detail::get_u32(is);
  if (n == 0 || n > 64) throw IoError("checkpoint: implausible layer count " + std::to_string(n));
  MlpParams p;
  p.layers.resize(n);
  for (auto& l : p.layers) {
    const auto out = detail::get_u32(is);
    const auto in = detail::get_u32(is);
    const auto act = detail::get_u32(is);
    if (out == 0 || in == 0 || out > (1u << 16) || in > (1u << 16)) throw IoError("checkpoint: bad layer dims");
    if (act > 2) throw IoError("checkpoint: unknown activation tag " + std::to_string(act));
    l.activation = static_cast<Activation>(act);
    l.weight.resize(out, in);
    l.bias.resize(out);
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = detail::get_f64(is);
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = detail::get_f64(is);
  }
  p.validate();
  return p;
}

inline void save_mlp(const std::string& path, const MlpParams& p) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  save_mlp(os, p);
  if (!os) throw IoError("write failed: " + path);
}

inline MlpParams load_mlp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("missing checkpoint: " + path);
  try {
    return load_mlp(is);
  } catch (const IoError& e) {
    throw IoError(std::string(e.what()) + " (" + path + ")");
  }
}

/// FNV-1a over the serialized checkpoint bytes.
inline std::uint64_t params_hash(const MlpParams& p) {
  std::ostringstream os(std::ios::binary);
  save_mlp(os, p);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : os.str()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace psw
