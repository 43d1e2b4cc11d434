#pragma once

#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "qscnet/autograd/conv.hpp"
#include "qscnet/autograd/layers.hpp"
#include "qscnet/model/config.hpp"
#include "qscnet/model/params.hpp"

namespace qscnet::model {

template <typename T>
struct ConvParams {
  ag::Var<T> weight;
  ag::Var<T> bias;
};

/// x + conv(gelu(groupnorm(x))), shape-preserving.
template <typename T>
struct ProcessingBlock {
  std::size_t groups = 1;
  ag::Var<T> gain;
  ag::Var<T> shift;
  ConvParams<T> conv;
};

template <typename T>
using BandBlocks = std::array<std::vector<ProcessingBlock<T>>, kBands>;

template <typename T>
struct EncoderStage {
  StageSchedule shape;
  BandBlocks<T> blocks;
  std::array<ConvParams<T>, kBands> down;
};

template <typename T>
struct DecoderStage {
  StageSchedule shape;  // schedule of the mirrored encoder stage
  std::array<ConvParams<T>, kBands> up;
  ConvParams<T> fusion;  // 1x1, 2C -> 2C, followed by a GLU
  BandBlocks<T> blocks;
};

/// One mask-producing decoder; stages[l] mirrors encoder stage l.
template <typename T>
struct DecoderBranch {
  std::vector<DecoderStage<T>> stages;
  ConvParams<T> mask;  // 1x1, C0 -> 4
};

template <typename T>
struct EncoderParams {
  ConvParams<T> input;  // 1x1, 4 -> C0
  std::vector<EncoderStage<T>> stages;
};

/// Latent e_L plus one skip per stage: the regathered, processed stage
/// input before downsampling.
template <typename T>
struct EncoderState {
  ag::Var<T> latent;
  std::vector<ag::Var<T>> skips;
};

// ------------------------------------------------------------ building

namespace detail {

inline std::string band_path(const std::string& prefix, std::size_t b) {
  return prefix + ".band" + std::to_string(b);
}

template <typename T>
ConvParams<T> make_conv(ParameterStore<T>& store, const std::string& name, Shape weight_shape,
                        std::size_t fan_in, Rng& rng, std::size_t bias_axis = 0) {
  const std::size_t out = weight_shape[bias_axis];
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  ConvParams<T> p;
  p.weight = store.uniform(name + ".weight", std::move(weight_shape), bound, rng);
  p.bias = store.uniform(name + ".bias", {out}, bound, rng);
  return p;
}

template <typename T>
BandBlocks<T> make_band_blocks(ParameterStore<T>& store, const std::string& prefix, std::size_t channels,
                               const ModelConfig& cfg, Rng& rng) {
  BandBlocks<T> blocks;
  const std::size_t groups = std::gcd(cfg.norm_groups, channels);
  for (std::size_t b = 0; b < kBands; ++b) {
    const auto [kf, kt] = cfg.bands.kernels[b];
    for (std::size_t j = 0; j < cfg.bands.depths[b]; ++j) {
      const std::string name = band_path(prefix, b) + ".block" + std::to_string(j);
      ProcessingBlock<T> blk;
      blk.groups = groups;
      blk.gain = store.constant(name + ".norm.gain", {channels}, T(1));
      blk.shift = store.constant(name + ".norm.shift", {channels}, T(0));
      blk.conv = make_conv(store, name + ".conv", {channels, channels, kf, kt}, channels * kf * kt, rng);
      blocks[b].push_back(std::move(blk));
    }
  }
  return blocks;
}

}  // namespace detail

template <typename T>
EncoderParams<T> build_encoder(ParameterStore<T>& store, const ModelConfig& cfg,
                               const std::vector<StageSchedule>& schedule, Rng& rng) {
  EncoderParams<T> enc;
  enc.input = detail::make_conv(store, "encoder.input", {cfg.base_channels, 4, 1}, 4, rng);
  for (std::size_t l = 0; l < schedule.size(); ++l) {
    const auto& s = schedule[l];
    const std::string prefix = "encoder.stage" + std::to_string(l + 1);
    EncoderStage<T> st;
    st.shape = s;
    st.blocks = detail::make_band_blocks(store, prefix, s.in_channels, cfg, rng);
    for (std::size_t b = 0; b < kBands; ++b)
      st.down[b] = detail::make_conv(store, detail::band_path(prefix, b) + ".down",
                                     {s.out_channels, s.in_channels, s.strides[b]},
                                     s.in_channels * s.strides[b], rng);
    enc.stages.push_back(std::move(st));
  }
  return enc;
}

template <typename T>
DecoderBranch<T> build_decoder(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg,
                               const std::vector<StageSchedule>& schedule, Rng& rng) {
  DecoderBranch<T> dec;
  for (std::size_t l = 0; l < schedule.size(); ++l) {
    const auto& s = schedule[l];
    const std::string sp = prefix + ".stage" + std::to_string(l + 1);
    DecoderStage<T> st;
    st.shape = s;
    for (std::size_t b = 0; b < kBands; ++b)
      st.up[b] = detail::make_conv(store, detail::band_path(sp, b) + ".up",
                                   {s.out_channels, s.in_channels, s.strides[b]}, s.out_channels, rng, 1);
    st.fusion = detail::make_conv(store, sp + ".fusion", {2 * s.in_channels, 2 * s.in_channels, 1},
                                  2 * s.in_channels, rng);
    st.blocks = detail::make_band_blocks(store, sp, s.in_channels, cfg, rng);
    dec.stages.push_back(std::move(st));
  }
  dec.mask = detail::make_conv(store, prefix + ".mask", {4, cfg.base_channels, 1}, cfg.base_channels, rng);
  return dec;
}

// ------------------------------------------------------------ forward

/// Splits x [B, C, F, T] into three contiguous frequency bands.
template <typename T>
std::array<ag::Var<T>, kBands> band_partition(const ag::Var<T>& x, const BandTriple& widths) {
  if (x.shape().size() != 4) throw InvalidInput("band_partition: expected [B, C, F, T]");
  if (widths[0] + widths[1] + widths[2] != x.dim(2))
    throw InvalidInput("band_partition: widths do not cover " + std::to_string(x.dim(2)) + " bins");
  std::array<ag::Var<T>, kBands> out;
  std::size_t f0 = 0;
  for (std::size_t b = 0; b < kBands; ++b) {
    out[b] = ag::slice(x, 2, f0, f0 + widths[b]);
    f0 += widths[b];
  }
  return out;
}

template <typename T>
std::array<ag::Var<T>, kBands> band_partition(const ag::Var<T>& x, const BandScheme& scheme) {
  if (x.shape().size() != 4) throw InvalidInput("band_partition: expected [B, C, F, T]");
  return band_partition(x, band_widths(x.dim(2), scheme.ratios));
}

template <typename T>
ag::Var<T> processing_forward(const ProcessingBlock<T>& p, const ag::Var<T>& x) {
  auto h = ag::group_norm(x, p.groups, p.gain, p.shift);
  h = ag::gelu(h);
  h = ag::conv2d_same(h, p.conv.weight, p.conv.bias);
  return ag::add(x, h);
}

namespace detail {

template <typename T>
std::array<ag::Var<T>, kBands> process_bands(const BandBlocks<T>& blocks, std::array<ag::Var<T>, kBands> bands) {
  for (std::size_t b = 0; b < kBands; ++b)
    for (const auto& blk : blocks[b]) bands[b] = processing_forward(blk, bands[b]);
  return bands;
}

template <typename T>
std::vector<ag::Var<T>> as_vector(const std::array<ag::Var<T>, kBands>& a) {
  return {a.begin(), a.end()};
}

inline void check_feature(const Shape& s, std::size_t channels, std::size_t bins, const char* where) {
  if (s.size() != 4 || s[1] != channels || s[2] != bins)
    throw InvalidInput(std::string(where) + ": got " + shape_string(s) + ", expected [B, " +
                       std::to_string(channels) + ", " + std::to_string(bins) + ", T]");
}

}  // namespace detail

/// Returns (downsampled feature, skip feature).
template <typename T>
std::pair<ag::Var<T>, ag::Var<T>> sd_stage_forward(const ag::Var<T>& x, const EncoderStage<T>& st) {
  detail::check_feature(x.shape(), st.shape.in_channels, st.shape.in_bins, "encoder stage");
  auto bands = detail::process_bands(st.blocks, band_partition(x, st.shape.widths));
  auto skip = ag::concat(detail::as_vector(bands), 2);
  std::vector<ag::Var<T>> down;
  for (std::size_t b = 0; b < kBands; ++b)
    down.push_back(ag::conv_down(bands[b], st.down[b].weight, st.down[b].bias));
  return {ag::concat(down, 2), skip};
}

/// packed [B, 4, F, T] -> EncoderState.
template <typename T>
EncoderState<T> encoder_forward(const ag::Var<T>& packed, const EncoderParams<T>& enc) {
  if (enc.stages.empty()) throw ContractError("encoder has no stages");
  detail::check_feature(packed.shape(), 4, enc.stages.front().shape.in_bins, "encoder input");
  EncoderState<T> state;
  auto x = ag::conv_down(packed, enc.input.weight, enc.input.bias);
  for (const auto& st : enc.stages) {
    auto [down, skip] = sd_stage_forward(x, st);
    state.skips.push_back(std::move(skip));
    x = std::move(down);
  }
  state.latent = x;
  return state;
}

/// Band-wise upsampling back to the stage input width, skip fusion, then
/// per-band processing.
template <typename T>
ag::Var<T> decoder_stage_forward(const ag::Var<T>& d, const ag::Var<T>& skip, const DecoderStage<T>& st) {
  const auto& s = st.shape;
  detail::check_feature(d.shape(), s.out_channels, s.out_bins, "decoder stage");
  detail::check_feature(skip.shape(), s.in_channels, s.in_bins, "decoder skip");
  if (skip.dim(0) != d.dim(0) || skip.dim(3) != d.dim(3))
    throw InvalidInput("decoder skip batch/time mismatch");
  auto parts = band_partition(d, s.out_widths);
  std::vector<ag::Var<T>> up;
  for (std::size_t b = 0; b < kBands; ++b)
    up.push_back(ag::conv_up(parts[b], st.up[b].weight, st.up[b].bias, s.widths[b]));
  auto fused = ag::concat(std::vector<ag::Var<T>>{ag::concat(up, 2), skip}, 1);
  fused = ag::glu(ag::conv_down(fused, st.fusion.weight, st.fusion.bias));
  auto bands = detail::process_bands(st.blocks, band_partition(fused, s.widths));
  return ag::concat(detail::as_vector(bands), 2);
}

/// One branch: neck output [B, C_L, F_L, T] -> mask [B, 4, F, T].
template <typename T>
ag::Var<T> decoder_forward(const ag::Var<T>& neck_out, const std::vector<ag::Var<T>>& skips,
                           const DecoderBranch<T>& dec) {
  if (skips.size() != dec.stages.size())
    throw InvalidInput("decoder: " + std::to_string(skips.size()) + " skips for " +
                       std::to_string(dec.stages.size()) + " stages");
  auto d = neck_out;
  for (std::size_t l = dec.stages.size(); l-- > 0;) d = decoder_stage_forward(d, skips[l], dec.stages[l]);
  return ag::conv_down(d, dec.mask.weight, dec.mask.bias);
}

/// Every head's masks, in branch order.
template <typename T>
std::vector<ag::Var<T>> decoder_forward(const ag::Var<T>& neck_out, const std::vector<ag::Var<T>>& skips,
                                        const std::vector<DecoderBranch<T>>& branches) {
  std::vector<ag::Var<T>> masks;
  for (const auto& br : branches) masks.push_back(decoder_forward(neck_out, skips, br));
  return masks;
}

// ------------------------------------------------------------ counting

namespace detail {

inline std::size_t conv_count(std::size_t out, std::size_t in, std::size_t taps) { return out * in * taps + out; }

inline std::size_t band_blocks_count(const ModelConfig& cfg, std::size_t channels) {
  std::size_t n = 0;
  for (std::size_t b = 0; b < kBands; ++b) {
    const auto taps = cfg.bands.kernels[b][0] * cfg.bands.kernels[b][1];
    n += cfg.bands.depths[b] * (2 * channels + conv_count(channels, channels, taps));
  }
  return n;
}

}  // namespace detail

inline std::size_t encoder_parameter_count(const ModelConfig& cfg) {
  const auto schedule = shape_schedule(cfg);
  std::size_t n = detail::conv_count(cfg.base_channels, 4, 1);
  for (const auto& s : schedule) {
    n += detail::band_blocks_count(cfg, s.in_channels);
    for (auto st : s.strides) n += detail::conv_count(s.out_channels, s.in_channels, st);
  }
  return n;
}

inline std::size_t decoder_branch_parameter_count(const ModelConfig& cfg) {
  const auto schedule = shape_schedule(cfg);
  std::size_t n = detail::conv_count(4, cfg.base_channels, 1);
  for (const auto& s : schedule) {
    for (auto st : s.strides) n += s.out_channels * s.in_channels * st + s.in_channels;
    n += detail::conv_count(2 * s.in_channels, 2 * s.in_channels, 1);
    n += detail::band_blocks_count(cfg, s.in_channels);
  }
  return n;
}

}  // namespace qscnet::model
