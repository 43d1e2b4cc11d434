#pragma once

#include "qscnet/core/rng.hpp"
#include "qscnet/model/config.hpp"

namespace fixtures {

using qscnet::model::ModelConfig;

/// L=2, base_channels=4, conditioned; small enough for exhaustive checks.
inline ModelConfig small_config() {
  ModelConfig c;
  c.frame_length = 64;
  c.hop = 16;
  c.base_channels = 4;
  c.stage_channels = {8, 8};
  c.bands.strides = {{1, 2, 4}, {2, 2, 2}};
  c.bands.depths = {1, 1, 1};
  c.norm_groups = 2;
  c.neck_blocks = 2;
  c.neck_hidden = 4;
  c.embedding_dim = 6;
  c.film_hidden = 5;
  return c;
}

/// Under 5k parameters, for finite-difference checks.
inline ModelConfig gradient_config() {
  ModelConfig c;
  c.frame_length = 32;
  c.hop = 8;
  c.base_channels = 2;
  c.stage_channels = {4, 4};
  c.bands.strides = {{1, 2, 2}, {2, 2, 2}};
  c.bands.depths = {1, 1, 1};
  c.norm_groups = 2;
  c.neck_blocks = 2;
  c.neck_hidden = 3;
  c.embedding_dim = 5;
  c.film_hidden = 3;
  return c;
}

/// Random small configuration that passes schedule validation.
inline ModelConfig random_valid_config(qscnet::Rng& rng) {
  for (;;) {
    ModelConfig c;
    const std::size_t frames[] = {32, 64, 128, 256};
    c.frame_length = frames[rng.index(4)];
    c.hop = c.frame_length / 4;
    const std::size_t L = 1 + rng.index(3);
    c.base_channels = 2 + rng.index(4);
    c.stage_channels.clear();
    c.bands.strides.clear();
    for (std::size_t l = 0; l < L; ++l) {
      c.stage_channels.push_back(2 + rng.index(6));
      c.bands.strides.push_back({1 + rng.index(3), 1 + rng.index(4), 1 + rng.index(5)});
    }
    double r0 = rng.uniform(0.1, 0.4), r1 = rng.uniform(0.1, 0.4);
    c.bands.ratios = {r0, r1, 1.0 - r0 - r1};
    for (auto& k : c.bands.kernels) k = {1 + 2 * rng.index(2), 1 + 2 * rng.index(2)};
    c.bands.depths = {rng.index(2), rng.index(2), 1};
    c.norm_groups = 1 + rng.index(3);
    c.neck_blocks = 2;
    c.neck_hidden = 2 + rng.index(3);
    c.embedding_dim = 4;
    c.film_hidden = 3;
    if (rng.bernoulli(0.3)) {
      c.head = qscnet::model::HeadKind::multi_stem;
      c.stems = {"a", "b"};
    }
    try {
      qscnet::model::validate(c);
      return c;
    } catch (const qscnet::InvalidConfig&) {
    }
  }
}

}  // namespace fixtures
