#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qscnet/autograd/spectral_ops.hpp"
#include "qscnet/conditioning/film.hpp"
#include "qscnet/model/neck.hpp"
#include "qscnet/model/scnet.hpp"

namespace qscnet::model {

/// Exact count of trainable scalars for `cfg`.
inline std::size_t count_parameters(const ModelConfig& cfg) {
  std::size_t n = encoder_parameter_count(cfg);
  n += neck_parameter_count(cfg.latent_channels(), cfg.neck_hidden, cfg.neck_blocks);
  n += cfg.num_masks() * decoder_branch_parameter_count(cfg);
  if (cfg.conditioned())
    n += conditioning::film_parameter_count(cfg.embedding_dim, cfg.film_hidden, cfg.latent_channels());
  return n;
}

/// The separation network: banded encoder, optional FiLM at the encoder
/// output, dual-path neck, and one decoder branch per emitted mask.
template <typename T>
class SeparationModel {
 public:
  explicit SeparationModel(ModelConfig cfg, std::uint64_t seed = 0)
      : cfg_(std::move(cfg)), schedule_(shape_schedule(cfg_)) {
    Rng rng(seed);
    encoder_ = build_encoder(store_, cfg_, schedule_, rng);
    if (cfg_.conditioned())
      film_ = conditioning::build_film(store_, cfg_.embedding_dim, cfg_.film_hidden, cfg_.latent_channels(), rng);
    neck_ = build_neck(store_, cfg_.latent_channels(), cfg_.neck_hidden, cfg_.neck_blocks, rng);
    for (std::size_t k = 0; k < cfg_.num_masks(); ++k) {
      const std::string prefix = cfg_.conditioned() ? "decoder" : "decoder." + cfg_.stems[k];
      decoders_.push_back(build_decoder(store_, prefix, cfg_, schedule_, rng));
    }
  }

  SeparationModel(const SeparationModel&) = delete;
  SeparationModel& operator=(const SeparationModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const std::vector<StageSchedule>& schedule() const { return schedule_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }
  conditioning::FilmModule<T>& film() { return film_; }

  /// packed [B, 4, F, T] -> latent and skips.
  EncoderState<T> encode(const ag::Var<T>& packed) const { return encoder_forward(packed, encoder_); }

  /// FiLM of the encoder latent by queries [B, q].
  ag::Var<T> condition(const ag::Var<T>& latent, const ag::Var<T>& queries) const {
    if (!cfg_.conditioned()) throw ContractError("condition: model has a multi-stem head");
    if (queries.shape().size() != 2 || queries.dim(0) != latent.dim(0))
      throw InvalidInput("condition: need one query per batch item, got " + shape_string(queries.shape()));
    return conditioning::film_apply(latent, conditioning::film_params(queries, film_));
  }

  ag::Var<T> neck(const ag::Var<T>& latent) const { return neck_forward(latent, neck_); }

  /// Masks [B, 4, F, T], one per decoder branch.
  std::vector<ag::Var<T>> decode(const ag::Var<T>& neck_out, const EncoderState<T>& enc) const {
    return decoder_forward(neck_out, enc.skips, decoders_);
  }

  /// Mixtures [B, 2, N] -> estimates [B, 2, N] per branch. Conditioned
  /// models require queries [B, q].
  std::vector<ag::Var<T>> separate(const Tensor<T>& mixtures, const ag::Var<T>& queries) const {
    if (cfg_.conditioned() && !queries.defined()) throw InvalidInput("separate: conditioned model needs queries");
    if (!cfg_.conditioned() && queries.defined()) throw ContractError("separate: multi-stem model takes no queries");
    return run(mixtures, queries);
  }

  /// Separation without the FiLM site.
  std::vector<ag::Var<T>> separate_body(const Tensor<T>& mixtures) const { return run(mixtures, {}); }

  /// One mixture [1, 2, N] against k queries [k, q] in a single batch;
  /// returns [k, 2, N].
  ag::Var<T> separate_queries(const Tensor<T>& mixture, const ag::Var<T>& queries) const {
    if (!cfg_.conditioned()) throw ContractError("separate_queries: model has a multi-stem head");
    if (mixture.rank() != 3 || mixture.dim(0) != 1)
      throw InvalidInput("separate_queries: expected one mixture [1, 2, N]");
    const std::size_t k = queries.dim(0), N = mixture.dim(2);
    Tensor<T> packed = spectral::stft_packed(mixture, cfg_.frame_length, cfg_.hop);
    auto enc = encode(ag::constant(packed));
    EncoderState<T> rep;
    rep.latent = ag::repeat_batch(enc.latent, k);
    for (const auto& s : enc.skips) rep.skips.push_back(ag::repeat_batch(s, k));
    auto mask = decode(neck(condition(rep.latent, queries)), rep).front();
    Tensor<T> spec({k, 4, packed.dim(2), packed.dim(3)});
    for (std::size_t i = 0; i < k; ++i) std::copy_n(packed.data(), packed.size(), spec.data() + i * packed.size());
    return ag::istft(ag::apply_complex_mask(mask, spec), cfg_.frame_length, cfg_.hop, N);
  }

 private:
  std::vector<ag::Var<T>> run(const Tensor<T>& mixtures, const ag::Var<T>& queries) const {
    if (mixtures.rank() != 3) throw InvalidInput("separate: expected mixtures [B, 2, N]");
    const std::size_t N = mixtures.dim(2);
    Tensor<T> packed = spectral::stft_packed(mixtures, cfg_.frame_length, cfg_.hop);
    auto enc = encode(ag::constant(packed));
    auto latent = queries.defined() ? condition(enc.latent, queries) : enc.latent;
    std::vector<ag::Var<T>> out;
    for (const auto& mask : decode(neck(latent), enc))
      out.push_back(ag::istft(ag::apply_complex_mask(mask, packed), cfg_.frame_length, cfg_.hop, N));
    return out;
  }

  ModelConfig cfg_;
  std::vector<StageSchedule> schedule_;
  ParameterStore<T> store_;
  EncoderParams<T> encoder_;
  conditioning::FilmModule<T> film_;
  NeckParams<T> neck_;
  std::vector<DecoderBranch<T>> decoders_;
};

}  // namespace qscnet::model
