#include <gtest/gtest.h>

#include <cmath>

#include "qscnet/model/network.hpp"
#include "support/configs.hpp"
#include "support/oracles.hpp"

using namespace qscnet;
using namespace qscnet::model;
using ag::Var;

namespace {

Tensor<float> random_mix(std::size_t batch, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t({batch, 2, n});
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

template <typename T>
Var<T> random_var(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> t(std::move(s));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-1, 1));
  return ag::constant(std::move(t));
}

}  // namespace

TEST(BandWidths, DefaultRatiosAtFullResolution) {
  EXPECT_EQ(band_widths(2049, BandScheme{}.ratios), (BandTriple{358, 803, 888}));
  EXPECT_EQ(band_widths(9, {1.0 / 3, 1.0 / 3, 1.0 / 3}), (BandTriple{3, 3, 3}));
  EXPECT_THROW(band_widths(2, BandScheme{}.ratios), InvalidConfig);
}

TEST(BandPartition, ConcatenationReproducesInput) {
  auto x = random_var<float>({2, 3, 41, 5}, 1);
  auto bands = band_partition(x, BandScheme{});
  std::size_t total = 0;
  for (const auto& b : bands) total += b.dim(2);
  EXPECT_EQ(total, 41u);
  auto back = ag::concat<float>({bands[0], bands[1], bands[2]}, 2);
  EXPECT_TRUE(back.value() == x.value());
}

TEST(Schedule, StrideArithmetic) {
  ModelConfig c = ModelConfig::qscnet();
  auto s = shape_schedule(c);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].in_bins, 2049u);
  EXPECT_EQ(s[0].out_bins, 358u + 201u + 56u);
  // (1, 2, 4) on widths (358, 803, 888)
  c.bands.strides[0] = {1, 2, 4};
  EXPECT_EQ(shape_schedule(c)[0].out_bins, 358u + 402u + 222u);
  for (std::size_t l = 1; l < s.size(); ++l) EXPECT_LT(s[l].out_bins, s[l].in_bins);
}

TEST(Schedule, RejectsInvalidConfigs) {
  auto c = fixtures::small_config();
  c.bands.strides = {{1, 1, 1}, {2, 2, 2}};
  EXPECT_THROW(validate(c), InvalidConfig);
  c = fixtures::small_config();
  c.neck_blocks = 3;
  EXPECT_THROW(validate(c), InvalidConfig);
  c = fixtures::small_config();
  c.stage_channels = {8, 8, 8, 8, 8, 8};
  c.bands.strides.assign(6, {2, 2, 2});
  EXPECT_THROW(validate(c), InvalidConfig);
  c = fixtures::small_config();
  c.bands.ratios = {0.5, 0.5, 0.5};
  EXPECT_THROW(validate(c), InvalidConfig);
  c = fixtures::small_config();
  c.hop = 8;
  EXPECT_THROW(validate(c), InvalidConfig);
}

TEST(Config, JsonRoundTripAndLayering) {
  auto c = ModelConfig::scnet6();
  nlohmann::json j = c;
  EXPECT_EQ(j.get<ModelConfig>(), c);
  auto partial = nlohmann::json::parse(R"({"neck_hidden": 8, "bands": {"depths": [1, 2, 3]}})");
  auto d = partial.get<ModelConfig>();
  EXPECT_EQ(d.neck_hidden, 8u);
  EXPECT_EQ(d.bands.depths, (BandTriple{1, 2, 3}));
  EXPECT_EQ(d.bands.ratios, BandScheme{}.ratios);
}

TEST(Parameters, HandCountOfSmallConfig) {
  // Stem 20; encoder stages 716 + 2208; neck 1008 + 1696; FiLM 166;
  // decoder stages 776 + 2480 and mask 20.
  const auto c = fixtures::small_config();
  EXPECT_EQ(count_parameters(c), 20u + 716 + 2208 + 1008 + 1696 + 166 + 776 + 2480 + 20);
  SeparationModel<float> m(c);
  EXPECT_EQ(m.parameters().count(), count_parameters(c));
  EXPECT_EQ(m.parameters().count("film."), 166u);
  EXPECT_EQ(m.parameters().count("neck."), 1008u + 1696);
}

TEST(Parameters, AnalyticCountMatchesBuiltModels) {
  Rng rng(5);
  for (int i = 0; i < 10; ++i) {
    auto c = fixtures::random_valid_config(rng);
    SeparationModel<float> m(c, i);
    EXPECT_EQ(m.parameters().count(), count_parameters(c));
  }
}

TEST(Parameters, FilmCountAndMonotonicity) {
  EXPECT_EQ(conditioning::film_parameter_count(768, 128, 128), 229888u);
  auto c = ModelConfig::qscnet();
  auto h = c;
  h.base_channels /= 2;
  for (auto& s : h.stage_channels) s /= 2;
  h.neck_hidden /= 2;
  h.film_hidden /= 2;
  EXPECT_LT(count_parameters(h), count_parameters(c));
}

TEST(Parameters, HeadsShareEncoderAndNeck) {
  auto c = fixtures::small_config();
  auto m = c;
  m.head = HeadKind::multi_stem;
  m.stems = {"vocals", "bass", "drums"};
  SeparationModel<float> a(c), b(m);
  EXPECT_EQ(a.parameters().count("encoder."), b.parameters().count("encoder."));
  EXPECT_EQ(a.parameters().count("neck."), b.parameters().count("neck."));
  EXPECT_EQ(b.parameters().count("film."), 0u);
}

TEST(Encoder, SkipShapesAndTimePreservation) {
  auto c = fixtures::small_config();
  SeparationModel<float> m(c, 3);
  for (std::size_t T : {1u, 7u, 31u}) {
    auto packed = random_var<float>({2, 4, c.input_bins(), T}, T);
    auto enc = m.encode(packed);
    ASSERT_EQ(enc.skips.size(), c.num_layers());
    for (std::size_t l = 0; l < c.num_layers(); ++l)
      EXPECT_EQ(enc.skips[l].shape(), (Shape{2, m.schedule()[l].in_channels, m.schedule()[l].in_bins, T}));
    EXPECT_EQ(enc.latent.shape(), (Shape{2, c.latent_channels(), m.schedule().back().out_bins, T}));
  }
  EXPECT_THROW(m.encode(random_var<float>({1, 4, c.input_bins() + 1, 3}, 1)), InvalidInput);
}

TEST(Encoder, BatchIndependence) {
  auto c = fixtures::small_config();
  SeparationModel<float> m(c, 4);
  auto one = random_var<float>({1, 4, c.input_bins(), 9}, 8);
  auto two = ag::concat<float>({one, one}, 0);
  auto a = m.encode(one).latent.value(), b = m.encode(two).latent.value();
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(b[i], a[i], 1e-6);
    EXPECT_EQ(b[i], b[a.size() + i]);
  }
}

TEST(Stage, BiasResponseOnZeroInput) {
  auto c = fixtures::small_config();
  c.bands.depths = {0, 0, 0};
  SeparationModel<double> m(c, 5);
  const auto& st = m.schedule()[0];
  // Zero input to stage 1: the skip is zero; each downsampled band equals its bias.
  auto zero = ag::constant(Tensor<double>({1, st.in_channels, st.in_bins, 4}));
  EncoderStage<double> stage;
  stage.shape = st;
  for (std::size_t b = 0; b < kBands; ++b) {
    stage.down[b].weight = m.parameters().get("encoder.stage1.band" + std::to_string(b) + ".down.weight");
    stage.down[b].bias = m.parameters().get("encoder.stage1.band" + std::to_string(b) + ".down.bias");
  }
  auto [down, skip] = sd_stage_forward(zero, stage);
  for (auto v : skip.value().values()) EXPECT_EQ(v, 0.0);
  std::size_t f0 = 0;
  for (std::size_t b = 0; b < kBands; ++b) {
    for (std::size_t o = 0; o < st.out_channels; ++o)
      for (std::size_t f = f0; f < f0 + st.out_widths[b]; ++f)
        for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(down.value().at(0, o, f, t), stage.down[b].bias.value()[o]);
    f0 += st.out_widths[b];
  }
}

TEST(Decoder, HeadsEmitDeclaredMasks) {
  auto c = fixtures::small_config();
  SeparationModel<float> cond(c, 1);
  auto packed = random_var<float>({1, 4, c.input_bins(), 6}, 2);
  auto enc = cond.encode(packed);
  auto masks = cond.decode(cond.neck(enc.latent), enc);
  ASSERT_EQ(masks.size(), 1u);
  EXPECT_EQ(masks[0].shape(), (Shape{1, 4, c.input_bins(), 6}));

  auto s = c;
  s.head = HeadKind::multi_stem;
  s.stems = ModelConfig::scnet6().stems;
  SeparationModel<float> multi(s, 1);
  auto e2 = multi.encode(packed);
  EXPECT_EQ(multi.decode(multi.neck(e2.latent), e2).size(), 6u);
  EXPECT_TRUE(multi.parameters().contains("decoder.vocals.mask.weight"));
  EXPECT_TRUE(multi.parameters().contains("decoder.others.mask.weight"));

  EncoderState<float> broken = enc;
  broken.skips.pop_back();
  EXPECT_THROW(cond.decode(enc.latent, broken), InvalidInput);
}

TEST(Decoder, ShapeDualityOverRandomConfigs) {
  Rng rng(77);
  for (int i = 0; i < 25; ++i) {
    auto c = fixtures::random_valid_config(rng);
    SeparationModel<float> m(c, i);
    const std::size_t T = 1 + rng.index(9);
    auto packed = random_var<float>({1, 4, c.input_bins(), T}, i);
    auto enc = m.encode(packed);
    for (const auto& mask : m.decode(m.neck(enc.latent), enc))
      EXPECT_EQ(mask.shape(), (Shape{1, 4, c.input_bins(), T})) << nlohmann::json(c).dump();
  }
}

TEST(Separate, WaveformOutputsAndContracts) {
  auto c = fixtures::small_config();
  SeparationModel<float> m(c, 2);
  auto mix = random_mix(2, 300, 1);
  auto q = random_var<float>({2, c.embedding_dim}, 3);
  auto out = m.separate(mix, q);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].shape(), (Shape{2, 2, 300}));
  EXPECT_TRUE(out[0].value().all_finite());
  EXPECT_THROW(m.separate(mix, Var<float>()), InvalidInput);

  auto s = c;
  s.head = HeadKind::multi_stem;
  s.stems = {"x", "y"};
  SeparationModel<float> multi(s, 2);
  EXPECT_EQ(multi.separate(mix, {}).size(), 2u);
  EXPECT_THROW(multi.separate(mix, q), ContractError);
  EXPECT_THROW(multi.condition(random_var<float>({2, 8, 4, 3}, 1), q), ContractError);
}

TEST(Gradients, TinyModelMatchesFiniteDifferences) {
  auto c = fixtures::gradient_config();
  SeparationModel<double> m(c, 21);
  ASSERT_LE(m.parameters().count(), 5000u);
  Rng rng(4);
  Tensor<double> mix({2, 2, 40}), target({2, 2, 40});
  for (auto& v : mix.values()) v = rng.uniform(-1, 1);
  for (auto& v : target.values()) v = rng.uniform(-1, 1);
  auto q = random_var<double>({2, c.embedding_dim}, 9);
  auto loss = [&] {
    auto y = m.separate(mix, q)[0];
    auto d = ag::sub(y, ag::constant(target));
    return ag::mean(ag::mul(d, d));
  };
  std::vector<Var<double>> params;
  for (const auto& [_, v] : m.parameters().entries()) params.push_back(v);
  auto r = oracle::check_gradients(loss, params, 1e-3, 1e-6, 1e-7);
  EXPECT_GE(r.fraction(), 0.95) << "worst " << r.worst;
  EXPECT_LE(r.worst, 1e-2);
}
