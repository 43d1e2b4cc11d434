#include <gtest/gtest.h>

#include "qscnet/model/network.hpp"
#include "support/configs.hpp"

using namespace qscnet;
using namespace qscnet::model;
using ag::Var;

namespace {

template <typename T>
Var<T> random_var(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  Tensor<T> t(std::move(s));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return ag::constant(std::move(t));
}

Tensor<float> random_mix(std::size_t batch, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t({batch, 2, n});
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

}  // namespace

TEST(Film, ZeroQueryYieldsHeadBiases) {
  ParameterStore<double> store;
  Rng rng(1);
  auto m = conditioning::build_film(store, 7, 4, 5, rng);
  m.gamma.out_weight.mutable_value().fill(0);
  m.beta.out_weight.mutable_value().fill(0);
  m.beta.out_bias.mutable_value().fill(0.25);
  auto fp = conditioning::film_params(ag::constant(Tensor<double>({1, 7})), m);
  for (std::size_t c = 0; c < 5; ++c) {
    EXPECT_EQ(fp.gamma.value()[c], 1.0);
    EXPECT_EQ(fp.beta.value()[c], 0.25);
  }
}

TEST(Film, OutputLengthsFollowChannels) {
  for (std::size_t C : {32u, 128u}) {
    ParameterStore<float> store;
    Rng rng(2);
    auto m = conditioning::build_film(store, 768, 128, C, rng);
    EXPECT_EQ(store.count(), conditioning::film_parameter_count(768, 128, C));
    auto fp = conditioning::film_params(random_var<float>({3, 768}, 4), m);
    EXPECT_EQ(fp.gamma.shape(), (Shape{3, C}));
    EXPECT_EQ(fp.beta.shape(), (Shape{3, C}));
  }
}

TEST(Film, ApplyIdentityConstantAndOracle) {
  auto P = random_var<double>({1, 3, 4, 5}, 1);
  Tensor<double> ones({1, 3}), zeros({1, 3}), fives({1, 3});
  ones.fill(1);
  fives.fill(5);
  auto id = conditioning::film_apply<double>(P, {ag::constant(ones), ag::constant(zeros)});
  EXPECT_TRUE(id.value() == P.value());
  auto cst = conditioning::film_apply<double>(P, {ag::constant(zeros), ag::constant(fives)});
  for (auto v : cst.value().values()) EXPECT_EQ(v, 5.0);

  auto g = random_var<double>({1, 3}, 2), b = random_var<double>({1, 3}, 3);
  auto y = conditioning::film_apply<double>(P, {g, b});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t f = 0; f < 4; ++f)
      for (std::size_t t = 0; t < 5; ++t)
        EXPECT_EQ(y.value().at(0, c, f, t), g.value()[c] * P.value().at(0, c, f, t) + b.value()[c]);
  EXPECT_THROW(conditioning::film_apply<double>(P, {random_var<double>({1, 4}, 1), random_var<double>({1, 4}, 1)}),
               InvalidInput);
}

TEST(Film, AffineIdentity) {
  const double a = 0.75, bcoef = -1.5;
  auto P1 = random_var<double>({1, 2, 3, 4}, 5), P2 = random_var<double>({1, 2, 3, 4}, 6);
  conditioning::FilmParams<double> fp{random_var<double>({1, 2}, 7), random_var<double>({1, 2}, 8)};
  auto lhs = conditioning::film_apply(ag::add(ag::scale(P1, a), ag::scale(P2, bcoef)), fp);
  auto r1 = conditioning::film_apply(P1, fp), r2 = conditioning::film_apply(P2, fp);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t k = 0; k < 12; ++k) {
      const std::size_t i = c * 12 + k;
      const double rhs = a * r1.value()[i] + bcoef * r2.value()[i] - (a + bcoef - 1) * fp.beta.value()[c];
      EXPECT_NEAR(lhs.value()[i], rhs, 1e-12);
    }
}

TEST(Conditioning, IdentityModulationIsBitExact) {
  auto c = fixtures::small_config();
  SeparationModel<float> m(c, 12);
  conditioning::freeze_identity(m.film());
  for (int i = 0; i < 3; ++i) {
    auto mix = random_mix(1, 500, i);
    auto q = random_var<float>({1, c.embedding_dim}, 100 + i);
    EXPECT_TRUE(m.separate(mix, q)[0].value() == m.separate_body(mix)[0].value());
  }
}

TEST(Conditioning, DifferentQueriesGiveDifferentMasks) {
  auto c = fixtures::small_config();
  SeparationModel<float> m(c, 13);
  auto packed = ag::constant(spectral::stft_packed(random_mix(1, 400, 1), c.frame_length, c.hop));
  auto enc = m.encode(packed);
  auto mask = [&](std::uint64_t seed) {
    auto q = random_var<float>({1, c.embedding_dim}, seed);
    return m.decode(m.neck(m.condition(enc.latent, q)), enc)[0].value();
  };
  auto a = mask(1), b = mask(2);
  EXPECT_GT(max_abs_diff(std::span<const float>(a.values()), std::span<const float>(b.values())), 0.0);
}

TEST(Conditioning, BatchedQueriesMatchSingleRuns) {
  auto c = fixtures::small_config();
  SeparationModel<float> m(c, 14);
  auto mix = random_mix(1, 700, 3);
  const std::size_t k = 4;
  auto qs = random_var<float>({k, c.embedding_dim}, 9);
  auto batched = m.separate_queries(mix, qs);
  ASSERT_EQ(batched.shape(), (Shape{k, 2, 700}));
  for (std::size_t i = 0; i < k; ++i) {
    auto qi = ag::slice(qs, 0, i, i + 1);
    auto single = m.separate(mix, qi)[0];
    for (std::size_t j = 0; j < single.size(); ++j)
      EXPECT_NEAR(batched.value()[i * single.size() + j], single.value()[j], 1e-5);
  }
}
