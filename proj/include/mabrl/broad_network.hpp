#pragma once

// Flat broad network: frozen random mapped features Z = phi(X W_m + b_m),
// frozen enhancement features H = zeta([Z | X_joint] W_e + b_e), and a single
// learned output weight, Q = [Z | H] W_out.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>

#include "mabrl/linalg.hpp"
#include "mabrl/random.hpp"

namespace mabrl {

enum class Activation { Tanh, Sigmoid, Identity };

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::Tanh: return std::tanh(x);
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case Activation::Identity: return x;
  }
  return x;
}

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Identity: return "identity";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "identity") return Activation::Identity;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

struct BroadNetConfig {
  std::size_t input_dim = 12;
  std::size_t joint_dim = 0;          // width of the neighbor block fed to enhancement
  std::size_t mapped_groups = 10;     // l_m
  std::size_t mapped_nodes = 10;      // k, nodes per mapped group
  std::size_t enhancement_groups = 25;  // l_e
  std::size_t enhancement_nodes = 10;   // q, nodes per enhancement group
  std::size_t action_count = 4;         // width of the Q output
  Activation map_activation = Activation::Tanh;
  Activation enh_activation = Activation::Tanh;

  std::size_t mapped_width() const noexcept { return mapped_groups * mapped_nodes; }
  std::size_t enhancement_width() const noexcept { return enhancement_groups * enhancement_nodes; }
  std::size_t feature_width() const noexcept { return mapped_width() + enhancement_width(); }

  void validate() const {
    if (input_dim == 0) throw std::invalid_argument("BroadNetConfig: input_dim must be >= 1");
    if (mapped_groups == 0 || mapped_nodes == 0 || enhancement_groups == 0 ||
        enhancement_nodes == 0)
      throw std::invalid_argument("BroadNetConfig: group and node counts must be >= 1");
    if (action_count < 2) throw std::invalid_argument("BroadNetConfig: action_count must be >= 2");
  }

  friend bool operator==(const BroadNetConfig&, const BroadNetConfig&) = default;
};

struct BroadNetParams {
  BroadNetConfig config;
  Matrix w_m;     // input_dim x (l_m k)
  Matrix beta_m;  // 1 x (l_m k)
  Matrix w_e;     // (l_m k + joint_dim) x (l_e q)
  Matrix beta_e;  // 1 x (l_e q)
  Matrix w_out;   // feature_width x action_count

  friend bool operator==(const BroadNetParams&, const BroadNetParams&) = default;
};

struct ForwardResult {
  Matrix u;  // N x feature_width
  Matrix q;  // N x action_count
};

/// Draws the frozen weights i.i.d. uniform on [-1, 1) from mt19937_64(seed).
/// Draw order: W_m group by group (each group row-major over its
/// input_dim x k block), then beta_m, then W_e group by group, then beta_e.
inline BroadNetParams init_broad_net(const BroadNetConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t mw = config.mapped_width();
  const std::size_t ew = config.enhancement_width();
  const std::size_t enh_in = mw + config.joint_dim;

  BroadNetParams p{config,
                   Matrix(config.input_dim, mw),
                   Matrix(1, mw),
                   Matrix(enh_in, ew),
                   Matrix(1, ew),
                   Matrix(config.feature_width(), config.action_count)};

  for (std::size_t g = 0; g < config.mapped_groups; ++g)
    for (std::size_t r = 0; r < config.input_dim; ++r)
      for (std::size_t c = 0; c < config.mapped_nodes; ++c)
        p.w_m(r, g * config.mapped_nodes + c) = uniform(rng, -1.0, 1.0);
  for (std::size_t c = 0; c < mw; ++c) p.beta_m(0, c) = uniform(rng, -1.0, 1.0);
  for (std::size_t g = 0; g < config.enhancement_groups; ++g)
    for (std::size_t r = 0; r < enh_in; ++r)
      for (std::size_t c = 0; c < config.enhancement_nodes; ++c)
        p.w_e(r, g * config.enhancement_nodes + c) = uniform(rng, -1.0, 1.0);
  for (std::size_t c = 0; c < ew; ++c) p.beta_e(0, c) = uniform(rng, -1.0, 1.0);
  return p;
}

/// Feature matrix U = [Z | H] for a batch. x_joint may be empty when joint_dim == 0.
inline Matrix broad_features(const BroadNetParams& p, const Matrix& x_local,
                             const Matrix& x_joint) {
  const auto& cfg = p.config;
  if (x_local.cols() != cfg.input_dim) {
    throw DimensionError("broad_features: local input " + x_local.shape() + " but input_dim is " +
                         std::to_string(cfg.input_dim));
  }
  const std::size_t n = x_local.rows();
  if (cfg.joint_dim > 0 && (x_joint.rows() != n || x_joint.cols() != cfg.joint_dim)) {
    throw DimensionError("broad_features: joint input " + x_joint.shape() + " expected " +
                         std::to_string(n) + "x" + std::to_string(cfg.joint_dim));
  }

  const std::size_t mw = cfg.mapped_width();
  const std::size_t ew = cfg.enhancement_width();
  Matrix u(n, mw + ew);

  Matrix z = matmul(x_local, p.w_m);
  for (std::size_t r = 0; r < n; ++r) {
    auto zr = z.row(r);
    for (std::size_t c = 0; c < mw; ++c) zr[c] = activate(cfg.map_activation, zr[c] + p.beta_m(0, c));
  }

  Matrix enh_in = cfg.joint_dim > 0 ? hconcat(z, x_joint) : z;
  Matrix h = matmul(enh_in, p.w_e);
  for (std::size_t r = 0; r < n; ++r) {
    auto ur = u.row(r);
    const auto zr = z.row(r);
    const auto hr = h.row(r);
    std::copy(zr.begin(), zr.end(), ur.begin());
    for (std::size_t c = 0; c < ew; ++c)
      ur[mw + c] = activate(cfg.enh_activation, hr[c] + p.beta_e(0, c));
  }
  return u;
}

inline ForwardResult forward(const BroadNetParams& p, const Matrix& x_local, const Matrix& x_joint) {
  Matrix u = broad_features(p, x_local, x_joint);
  Matrix q = matmul(u, p.w_out);
  return {std::move(u), std::move(q)};
}

/// Returns a copy of `p` with the output weight replaced; frozen members are shared by value.
inline BroadNetParams set_output_weight(BroadNetParams p, Matrix w) {
  if (w.rows() != p.config.feature_width() || w.cols() != p.config.action_count) {
    throw DimensionError("set_output_weight: got " + w.shape() + ", expected " +
                         p.w_out.shape());
  }
  p.w_out = std::move(w);
  return p;
}

/// FNV-1a over the bytes of the frozen members.
inline std::uint64_t frozen_hash(const BroadNetParams& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const Matrix& m) {
    for (double v : m.data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  };
  mix(p.w_m);
  mix(p.beta_m);
  mix(p.w_e);
  mix(p.beta_e);
  return h;
}

}  // namespace mabrl
