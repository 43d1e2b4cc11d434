#include <gtest/gtest.h>

#include "qscnet/conditioning/embedder.hpp"
#include "qscnet/dataset/toy.hpp"
#include "support/tempdir.hpp"

using namespace qscnet;
using namespace qscnet::conditioning;
using spectral::Waveform;

namespace {

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

Waveform<float> tone(std::size_t n, double hz) {
  Waveform<float> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w(0, i) = w(1, i) = static_cast<float>(0.3 * std::sin(2 * std::numbers::pi * hz * i / 44100.0));
  return w;
}

}  // namespace

TEST(MockEmbedder, SilenceGivesBaseline) {
  MockEmbedder e;
  const auto base = e.baseline();
  ASSERT_EQ(base.size(), 768u);
  for (std::size_t n : {0u, 100u, 44100u}) EXPECT_EQ(embed_query(e, Waveform<float>(n)).vector, base);
}

TEST(MockEmbedder, DeterministicAcrossInstances) {
  auto w = tone(30000, 440);
  auto a = embed_query(MockEmbedder(), w), b = embed_query(MockEmbedder(), w);
  EXPECT_EQ(a.vector, b.vector);
  double ss = 0;
  for (float v : a.vector) ss += double(v) * v;
  EXPECT_NEAR(ss / 768.0, 1.0, 1e-5);
  EXPECT_NE(a.source_id.find("mock"), std::string::npos);
}

TEST(MockEmbedder, LengthAndRateContract) {
  MockEmbedder e;
  EXPECT_NO_THROW(embed_query(e, Waveform<float>(441000)));
  EXPECT_THROW(embed_query(e, Waveform<float>(441001)), InvalidInput);
  EXPECT_THROW(embed_query(e, Waveform<float>(Tensor<float>({2, 100}), 48000)), InvalidInput);
  Waveform<float> bad(10);
  bad(0, 3) = std::nanf("");
  EXPECT_THROW(embed_query(e, bad), InvalidInput);
}

TEST(MockEmbedder, ToyLabelsAreSeparable) {
  fixtures::TempDir dir;
  dataset::generate_toy_dataset(dir.path(), 11, {4, 6.0});
  MockEmbedder e;
  std::vector<std::vector<std::vector<float>>> emb(4);  // label -> clips
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t s = 0; s < 4; ++s) {
      char id[16];
      std::snprintf(id, sizeof id, "toy_%02zu", s);
      auto w = audio::read_wav(dir.path() / id / dataset::kToyLabels[l] / "0.wav");
      for (std::size_t start : {0u, 88200u}) emb[l].push_back(embed_query(e, w.segment(start, 176400)).vector);
    }
  for (std::size_t a = 0; a < 4; ++a) {
    double intra = 0, inter = 0;
    std::size_t ni = 0, nx = 0;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < emb[a].size(); ++i)
        for (std::size_t j = 0; j < emb[b].size(); ++j) {
          if (a == b && i == j) continue;
          const double c = cosine(emb[a][i], emb[b][j]);
          if (a == b) {
            intra += c, ++ni;
          } else {
            inter += c, ++nx;
            EXPECT_LT(c, 0.9) << dataset::kToyLabels[a] << " vs " << dataset::kToyLabels[b];
          }
        }
    EXPECT_GT(intra / ni, inter / nx) << dataset::kToyLabels[a];
  }
}

TEST(EmbeddingCache, HitsAndRoundTrip) {
  fixtures::TempDir dir;
  MockEmbedder e;
  EmbeddingCache cache;
  auto a = tone(5000, 200), b = tone(5000, 3000);
  const auto va = cache.get_or_compute(e, a, "clip-a");
  cache.get_or_compute(e, b, "clip-b");
  cache.get_or_compute(e, a);
  EXPECT_EQ(cache.size(), 2u);
  EXPECT_NE(content_hash(a), content_hash(b));
  cache.save(dir / "emb.bin");
  auto back = EmbeddingCache::load(dir / "emb.bin");
  EXPECT_EQ(back.size(), 2u);
  EXPECT_EQ(back.embedder(), e.name());
  EXPECT_EQ(back.at(content_hash(a)), va);
  EXPECT_THROW(back.at(12345), DataError);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "emb.bin.txt"));
}

TEST(EmbeddingCache, RejectsMixedEmbedders) {
  fixtures::TempDir dir;
  EmbeddingCache cache;
  cache.get_or_compute(MockEmbedder(), tone(100, 100));
  ExternalEmbedder ext("head -c 3072 /dev/zero > {out} # {in}", "zeros", dir.path());
  EXPECT_THROW(cache.get_or_compute(ext, tone(100, 100)), ContractError);
}

TEST(ExternalEmbedder, FileExchangeProtocol) {
  fixtures::TempDir dir;
  ExternalEmbedder ok("test -s {in} && head -c 3072 /dev/zero > {out}", "zeros", dir / "scratch");
  auto q = embed_query(ok, tone(1000, 50));
  EXPECT_EQ(q.vector, std::vector<float>(768, 0.0f));
  ExternalEmbedder failing("false {in} {out}", "fails", dir / "scratch");
  EXPECT_THROW(embed_query(failing, tone(1000, 50)), DataError);
  ExternalEmbedder short_output("head -c 12 /dev/zero > {out} # {in}", "short", dir / "scratch");
  EXPECT_THROW(embed_query(short_output, tone(1000, 50)), DataError);
  EXPECT_THROW(ExternalEmbedder("run {in}", "x", dir.path()), InvalidConfig);
}
