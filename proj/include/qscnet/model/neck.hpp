#pragma once

#include <string>
#include <vector>

#include "qscnet/autograd/recurrent.hpp"
#include "qscnet/autograd/spectral_ops.hpp"
#include "qscnet/model/params.hpp"

namespace qscnet::model {

/// LayerNorm -> BiLSTM -> Linear(2H -> C), added back to the input.
template <typename T>
struct RecurrentPass {
  ag::Var<T> gain;
  ag::Var<T> shift;
  ag::LstmWeights<T> fwd;
  ag::LstmWeights<T> bwd;
  ag::Var<T> proj_weight;
  ag::Var<T> proj_bias;
};

template <typename T>
struct DualPathParams {
  std::size_t channels = 0;
  RecurrentPass<T> time;
  RecurrentPass<T> freq;
};

enum class NeckBlockKind { plain, wrapped };

/// Block kinds in execution order: plain first, then alternating.
inline std::vector<NeckBlockKind> neck_block_kinds(std::size_t num_blocks) {
  std::vector<NeckBlockKind> kinds;
  for (std::size_t i = 0; i < num_blocks; ++i)
    kinds.push_back(i % 2 == 0 ? NeckBlockKind::plain : NeckBlockKind::wrapped);
  return kinds;
}

template <typename T>
struct NeckParams {
  std::vector<NeckBlockKind> kinds;
  std::vector<DualPathParams<T>> blocks;
};

namespace detail {

template <typename T>
ag::LstmWeights<T> make_lstm(ParameterStore<T>& store, const std::string& name, std::size_t in,
                             std::size_t hidden, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  return {store.uniform(name + ".w_ih", {4 * hidden, in}, bound, rng),
          store.uniform(name + ".w_hh", {4 * hidden, hidden}, bound, rng),
          store.uniform(name + ".bias", {4 * hidden}, bound, rng)};
}

template <typename T>
RecurrentPass<T> make_pass(ParameterStore<T>& store, const std::string& name, std::size_t channels,
                           std::size_t hidden, Rng& rng) {
  RecurrentPass<T> p;
  p.gain = store.constant(name + ".norm.gain", {channels}, T(1));
  p.shift = store.constant(name + ".norm.shift", {channels}, T(0));
  p.fwd = make_lstm(store, name + ".lstm.fwd", channels, hidden, rng);
  p.bwd = make_lstm(store, name + ".lstm.bwd", channels, hidden, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(2 * hidden));
  p.proj_weight = store.uniform(name + ".proj.weight", {channels, 2 * hidden}, bound, rng);
  p.proj_bias = store.uniform(name + ".proj.bias", {channels}, bound, rng);
  return p;
}

inline std::size_t pass_count(std::size_t c, std::size_t h) {
  return 2 * c + 2 * (4 * h * c + 4 * h * h + 4 * h) + (2 * h * c + c);
}

}  // namespace detail

template <typename T>
DualPathParams<T> build_dual_path(ParameterStore<T>& store, const std::string& name, std::size_t channels,
                                  std::size_t hidden, Rng& rng) {
  DualPathParams<T> p;
  p.channels = channels;
  p.time = detail::make_pass(store, name + ".time", channels, hidden, rng);
  p.freq = detail::make_pass(store, name + ".freq", channels, hidden, rng);
  return p;
}

/// Wrapped blocks see real and imaginary parts stacked as 2C channels.
template <typename T>
NeckParams<T> build_neck(ParameterStore<T>& store, std::size_t channels, std::size_t hidden,
                         std::size_t num_blocks, Rng& rng) {
  NeckParams<T> neck;
  neck.kinds = neck_block_kinds(num_blocks);
  for (std::size_t i = 0; i < num_blocks; ++i) {
    const std::size_t width = neck.kinds[i] == NeckBlockKind::plain ? channels : 2 * channels;
    neck.blocks.push_back(build_dual_path(store, "neck.block" + std::to_string(i + 1), width, hidden, rng));
  }
  return neck;
}

inline std::size_t neck_parameter_count(std::size_t channels, std::size_t hidden, std::size_t num_blocks) {
  std::size_t n = 0;
  for (auto kind : neck_block_kinds(num_blocks)) {
    const std::size_t c = kind == NeckBlockKind::plain ? channels : 2 * channels;
    n += 2 * detail::pass_count(c, hidden);
  }
  return n;
}

/// One residual recurrent pass over x [B, C, F, T]. `along_time` runs
/// sequences of length T batched over (B, F); otherwise length F over (B, T).
template <typename T>
ag::Var<T> recurrent_pass(const RecurrentPass<T>& p, const ag::Var<T>& x, bool along_time) {
  const std::size_t B = x.dim(0), C = x.dim(1), F = x.dim(2), Tn = x.dim(3);
  const std::vector<std::size_t> perm = along_time ? std::vector<std::size_t>{0, 2, 3, 1}
                                                   : std::vector<std::size_t>{0, 3, 2, 1};
  const std::size_t outer = along_time ? F : Tn, len = along_time ? Tn : F;
  auto seq = ag::reshape(ag::permute(x, perm), {B * outer, len, C});
  auto h = ag::layer_norm(seq, p.gain, p.shift);
  h = ag::bilstm(h, p.fwd, p.bwd);
  h = ag::linear(ag::reshape(h, {B * outer * len, h.dim(2)}), p.proj_weight, p.proj_bias);
  const std::vector<std::size_t> inverse = along_time ? std::vector<std::size_t>{0, 3, 1, 2}
                                                      : std::vector<std::size_t>{0, 3, 2, 1};
  h = ag::permute(ag::reshape(h, {B, outer, len, C}), inverse);
  return ag::add(x, h);
}

/// Time-direction pass then frequency-direction pass; shape-preserving.
template <typename T>
ag::Var<T> dual_path_block(const DualPathParams<T>& p, const ag::Var<T>& x) {
  if (x.shape().size() != 4 || x.dim(1) != p.channels)
    throw InvalidInput("dual_path_block: got " + shape_string(x.shape()) + ", expected " +
                       std::to_string(p.channels) + " channels");
  return recurrent_pass(p.freq, recurrent_pass(p.time, x, true), false);
}

/// Runs `block` on the orthonormal real FFT of x along time and maps back
/// to the original number of frames.
template <typename T, typename Block>
ag::Var<T> fourier_wrap(Block&& block, const ag::Var<T>& x) {
  if (x.shape().size() != 4) throw InvalidInput("fourier_wrap: expected [B, C, F, T]");
  const std::size_t frames = x.dim(3);
  return ag::irfft_time(block(ag::rfft_time(x)), frames);
}

template <typename T>
ag::Var<T> neck_forward(const ag::Var<T>& latent, const NeckParams<T>& neck) {
  auto x = latent;
  for (std::size_t i = 0; i < neck.blocks.size(); ++i) {
    const auto& p = neck.blocks[i];
    if (neck.kinds[i] == NeckBlockKind::plain)
      x = dual_path_block(p, x);
    else
      x = fourier_wrap([&p](const ag::Var<T>& z) { return dual_path_block(p, z); }, x);
  }
  return x;
}

}  // namespace qscnet::model
