#pragma once

#include <cmath>
#include <string>

#include "qscnet/autograd/layers.hpp"
#include "qscnet/model/params.hpp"

namespace qscnet::conditioning {

/// Linear(q -> c), ELU, Linear(c -> C).
template <typename T>
struct FilmHead {
  ag::Var<T> hidden_weight;
  ag::Var<T> hidden_bias;
  ag::Var<T> out_weight;
  ag::Var<T> out_bias;
};

template <typename T>
struct FilmModule {
  FilmHead<T> gamma;
  FilmHead<T> beta;
  std::size_t channels = 0;
};

/// Per-item modulation, each [B, C].
template <typename T>
struct FilmParams {
  ag::Var<T> gamma;
  ag::Var<T> beta;
};

namespace detail {

template <typename T>
FilmHead<T> make_head(model::ParameterStore<T>& store, const std::string& name, std::size_t q, std::size_t c,
                      std::size_t channels, T out_bias, Rng& rng) {
  const double b1 = 1.0 / std::sqrt(static_cast<double>(q));
  const double b2 = 1.0 / std::sqrt(static_cast<double>(c));
  FilmHead<T> h;
  h.hidden_weight = store.uniform(name + ".hidden.weight", {c, q}, b1, rng);
  h.hidden_bias = store.uniform(name + ".hidden.bias", {c}, b1, rng);
  h.out_weight = store.uniform(name + ".out.weight", {channels, c}, b2, rng);
  h.out_bias = store.constant(name + ".out.bias", {channels}, out_bias);
  return h;
}

template <typename T>
ag::Var<T> head_forward(const FilmHead<T>& h, const ag::Var<T>& q) {
  return ag::linear(ag::elu(ag::linear(q, h.hidden_weight, h.hidden_bias)), h.out_weight, h.out_bias);
}

}  // namespace detail

/// Output biases start at gamma = 1, beta = 0.
template <typename T>
FilmModule<T> build_film(model::ParameterStore<T>& store, std::size_t embedding_dim, std::size_t hidden,
                         std::size_t channels, Rng& rng) {
  FilmModule<T> m;
  m.channels = channels;
  m.gamma = detail::make_head(store, "film.gamma", embedding_dim, hidden, channels, T(1), rng);
  m.beta = detail::make_head(store, "film.beta", embedding_dim, hidden, channels, T(0), rng);
  return m;
}

inline std::size_t film_parameter_count(std::size_t embedding_dim, std::size_t hidden, std::size_t channels) {
  return 2 * (embedding_dim * hidden + hidden + hidden * channels + channels);
}

/// queries [B, q] -> (gamma, beta), each [B, C].
template <typename T>
FilmParams<T> film_params(const ag::Var<T>& queries, const FilmModule<T>& m) {
  if (queries.shape().size() != 2 || queries.dim(1) != m.gamma.hidden_weight.dim(1))
    throw InvalidInput("film_params: queries " + shape_string(queries.shape()) + ", expected [B, " +
                       std::to_string(m.gamma.hidden_weight.dim(1)) + "]");
  return {detail::head_forward(m.gamma, queries), detail::head_forward(m.beta, queries)};
}

/// P[b, c, ...] <- gamma[b, c] * P[b, c, ...] + beta[b, c].
template <typename T>
ag::Var<T> film_apply(const ag::Var<T>& feature, const FilmParams<T>& fp) {
  return ag::film(feature, fp.gamma, fp.beta);
}

/// Sets the module so every query yields gamma = 1 and beta = 0.
template <typename T>
void freeze_identity(FilmModule<T>& m) {
  m.gamma.out_weight.mutable_value().fill(T(0));
  m.gamma.out_bias.mutable_value().fill(T(1));
  m.beta.out_weight.mutable_value().fill(T(0));
  m.beta.out_bias.mutable_value().fill(T(0));
}

}  // namespace qscnet::conditioning
