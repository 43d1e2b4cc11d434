#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "qscnet/conditioning/embedder.hpp"
#include "qscnet/dataset/sampler.hpp"
#include "qscnet/evaluation/metrics.hpp"
#include "qscnet/model/network.hpp"

namespace qscnet::evaluation {

using spectral::Waveform;

inline constexpr std::size_t kDefaultChunk = 10 * spectral::kSampleRate;

/// Separation of long signals in chunks with 50% overlap. Chunk outputs
/// are weighted by a triangular window that is positive on every sample
/// and normalised by the summed weights; the tail chunk is zero-padded.
/// Signals no longer than `chunk` take a single pass.
inline std::vector<Waveform<float>> chunked_inference(
    const Waveform<float>& mixture, std::size_t chunk,
    const std::function<std::vector<Waveform<float>>(const Waveform<float>&)>& run) {
  const std::size_t n = mixture.length();
  if (chunk < 2) throw InvalidConfig("chunk length must be at least 2 samples");
  if (n <= chunk) return run(mixture);
  const std::size_t hop = chunk / 2;
  std::vector<float> weight(chunk);
  for (std::size_t i = 0; i < chunk; ++i)
    weight[i] = static_cast<float>(std::min(i, chunk - 1 - i) + 1) / static_cast<float>(hop);
  std::vector<Waveform<float>> acc;
  std::vector<float> norm(n, 0.0f);
  for (std::size_t start = 0;; start += hop) {
    Waveform<float> piece(chunk, mixture.sample_rate());
    const std::size_t len = std::min(chunk, n - start);
    for (std::size_t c = 0; c < 2; ++c)
      std::copy_n(mixture.channel(c).data() + start, len, piece.channel(c).data());
    auto outs = run(piece);
    if (acc.empty()) acc.assign(outs.size(), Waveform<float>(n, mixture.sample_rate()));
    if (outs.size() != acc.size()) throw ContractError("chunked_inference: output count changed between chunks");
    for (std::size_t k = 0; k < outs.size(); ++k)
      for (std::size_t c = 0; c < 2; ++c) {
        float* dst = acc[k].channel(c).data() + start;
        const float* src = outs[k].channel(c).data();
        for (std::size_t i = 0; i < len; ++i) dst[i] += weight[i] * src[i];
      }
    for (std::size_t i = 0; i < len; ++i) norm[start + i] += weight[i];
    if (start + chunk >= n) break;
  }
  for (auto& w : acc)
    for (std::size_t c = 0; c < 2; ++c) {
      float* d = w.channel(c).data();
      for (std::size_t i = 0; i < n; ++i) d[i] /= norm[i];
    }
  return acc;
}

/// One evaluation song: the full mixture and its present category stems,
/// each as long as the mixture.
struct SongContext {
  std::string song_id;
  Waveform<float> mixture;
  std::map<std::string, Waveform<float>> references;
};

/// Produces category estimates for a song. Categories it cannot produce
/// are left out of the result.
class Separator {
 public:
  virtual ~Separator() = default;
  virtual std::string identity() const = 0;
  virtual std::map<std::string, Waveform<float>> separate(const SongContext& song) = 0;
};

/// Returns the references: the upper bound.
class OracleSeparator final : public Separator {
 public:
  std::string identity() const override { return "oracle"; }
  std::map<std::string, Waveform<float>> separate(const SongContext& song) override { return song.references; }
};

/// Returns silence for every present category.
class ZeroSeparator final : public Separator {
 public:
  std::string identity() const override { return "zero"; }
  std::map<std::string, Waveform<float>> separate(const SongContext& song) override {
    std::map<std::string, Waveform<float>> out;
    for (const auto& [cat, ref] : song.references) out.emplace(cat, Waveform<float>(ref.length()));
    return out;
  }
};

/// Runs a separation model chunk by chunk. Conditioned models separate
/// every queried category present in the song in one batch per chunk;
/// multi-stem models map their stems onto categories by name.
class ModelSeparator final : public Separator {
 public:
  ModelSeparator(const model::SeparationModel<float>& m, std::map<std::string, std::vector<float>> queries,
                 std::string identity, std::size_t chunk = kDefaultChunk)
      : model_(m), queries_(std::move(queries)), identity_(std::move(identity)), chunk_(chunk) {
    if (m.config().conditioned() && queries_.empty()) throw InvalidInput("conditioned separator needs queries");
    if (!m.config().conditioned() && !queries_.empty()) throw ContractError("multi-stem separator takes no queries");
  }

  std::string identity() const override { return identity_; }

  std::map<std::string, Waveform<float>> separate(const SongContext& song) override {
    ag::NoGradGuard no_grad;
    std::vector<std::string> cats;
    const auto& cfg = model_.config();
    if (cfg.conditioned()) {
      for (const auto& [cat, _] : song.references)
        if (queries_.count(cat)) cats.push_back(cat);
    } else {
      for (const auto& s : cfg.stems)
        if (song.references.count(s)) cats.push_back(s);
    }
    std::map<std::string, Waveform<float>> out;
    if (cats.empty()) return out;

    auto run = [&](const Waveform<float>& piece) {
      Tensor<float> mix({1, 2, piece.length()});
      std::copy_n(piece.samples().data(), piece.samples().size(), mix.data());
      std::vector<Waveform<float>> res;
      const std::size_t N = piece.length();
      if (cfg.conditioned()) {
        Tensor<float> q({cats.size(), cfg.embedding_dim});
        for (std::size_t k = 0; k < cats.size(); ++k) {
          const auto& v = queries_.at(cats[k]);
          if (v.size() != cfg.embedding_dim) throw InvalidInput("query embedding size does not match the model");
          std::copy(v.begin(), v.end(), q.data() + k * cfg.embedding_dim);
        }
        auto y = model_.separate_queries(mix, ag::constant(std::move(q)));
        for (std::size_t k = 0; k < cats.size(); ++k) {
          Waveform<float> w(N, piece.sample_rate());
          std::copy_n(y.value().data() + k * 2 * N, 2 * N, w.samples().data());
          res.push_back(std::move(w));
        }
      } else {
        auto ys = model_.separate(mix, {});
        for (const auto& cat : cats) {
          const auto idx = static_cast<std::size_t>(std::find(cfg.stems.begin(), cfg.stems.end(), cat) - cfg.stems.begin());
          Waveform<float> w(N, piece.sample_rate());
          std::copy_n(ys[idx].value().data(), 2 * N, w.samples().data());
          res.push_back(std::move(w));
        }
      }
      return res;
    };
    auto est = chunked_inference(song.mixture, chunk_, run);
    for (std::size_t k = 0; k < cats.size(); ++k) out.emplace(cats[k], std::move(est[k]));
    return out;
  }

 private:
  const model::SeparationModel<float>& model_;
  std::map<std::string, std::vector<float>> queries_;
  std::string identity_;
  std::size_t chunk_;
};

/// One query clip per category, drawn uniformly with a fixed per-run seed.
inline std::map<std::string, dataset::ClipRef> select_queries(const dataset::QueryPool& pool,
                                                              const dataset::Vocabulary& v, std::uint64_t seed) {
  std::map<std::string, dataset::ClipRef> out;
  for (std::size_t k = 0; k < v.size(); ++k) {
    const auto& list = pool.of(v.categories()[k]);
    if (list.empty()) continue;
    Rng rng(derive_seed(seed, k));
    out.emplace(v.categories()[k], list[rng.index(list.size())]);
  }
  return out;
}

inline std::string describe(const dataset::ClipRef& c) {
  return c.song_id + "/" + c.category + "@" + std::to_string(c.start) + "+" + std::to_string(c.length);
}

/// Embeddings of the selected query clips.
inline std::map<std::string, std::vector<float>> embed_queries(const std::map<std::string, dataset::ClipRef>& clips,
                                                               const dataset::ClipSource& source,
                                                               const conditioning::Embedder& e,
                                                               conditioning::EmbeddingCache* cache = nullptr) {
  std::map<std::string, std::vector<float>> out;
  for (const auto& [cat, clip] : clips) {
    auto audio = source.read(clip);
    out[cat] = cache ? cache->get_or_compute(e, audio, describe(clip))
                     : conditioning::embed_query(e, audio, describe(clip)).vector;
  }
  return out;
}

/// Mixture and present stems of one song, all padded to the longest stem.
inline SongContext song_context(const dataset::SongManifest& m, const dataset::Vocabulary& v) {
  auto tracks = dataset::build_stem_tracks(m, v);
  SongContext ctx;
  ctx.song_id = m.song_id;
  std::size_t n = 0;
  for (const auto& [_, w] : tracks) n = std::max(n, w.length());
  ctx.mixture = Waveform<float>(n);
  for (auto& [cat, w] : tracks) {
    Waveform<float> padded(n);
    for (std::size_t c = 0; c < 2; ++c) {
      std::copy_n(w.channel(c).data(), w.length(), padded.channel(c).data());
      float* mix = ctx.mixture.channel(c).data();
      for (std::size_t i = 0; i < n; ++i) mix[i] += padded(c, i);
    }
    ctx.references.emplace(cat, std::move(padded));
  }
  return ctx;
}

/// SNR of every present, non-silent category stem of every song, with
/// per-category medians and the Avg row.
inline EvaluationReport evaluate_songs(Separator& sep, const std::vector<SongContext>& songs,
                                       const dataset::Vocabulary& v) {
  EvaluationReport r;
  r.vocabulary = v.name();
  r.categories = v.categories();
  r.checkpoint = sep.identity();
  for (const auto& song : songs) {
    auto est = sep.separate(song);
    for (const auto& [cat, ref] : song.references) {
      const auto& vals = ref.samples().values();
      if (std::all_of(vals.begin(), vals.end(), [](float x) { return x == 0.0f; })) {
        r.notes.push_back(song.song_id + "/" + cat + ": silent reference skipped");
        continue;
      }
      auto it = est.find(cat);
      if (it == est.end()) continue;
      r.results[cat].tracks.push_back({song.song_id, snr(ref, it->second)});
    }
  }
  for (const auto& cat : v.categories())
    if (!r.results.count(cat)) r.notes.push_back(cat + ": no scored tracks");
  r.finalize();
  return r;
}

/// First `samples` of a song (all of it when shorter).
inline SongContext excerpt(const SongContext& song, std::size_t samples) {
  const std::size_t n = std::min(samples, song.mixture.length());
  auto cut = [n](const Waveform<float>& w) {
    Waveform<float> out(n);
    for (std::size_t c = 0; c < 2; ++c) std::copy_n(w.channel(c).data(), n, out.channel(c).data());
    return out;
  };
  SongContext out{song.song_id, cut(song.mixture), {}};
  for (const auto& [cat, w] : song.references) out.references.emplace(cat, cut(w));
  return out;
}

/// excerpt_samples = 0 scores full tracks.
inline EvaluationReport evaluate_testset(Separator& sep, const std::vector<dataset::SongManifest>& songs,
                                         const dataset::Vocabulary& v, std::size_t excerpt_samples = 0) {
  if (songs.empty()) throw InvalidInput("evaluate_testset: no songs");
  std::vector<SongContext> ctx;
  ctx.reserve(songs.size());
  for (const auto& m : songs)
    ctx.push_back(excerpt_samples ? excerpt(song_context(m, v), excerpt_samples) : song_context(m, v));
  return evaluate_songs(sep, ctx, v);
}

/// Mean SNR over every scored track; the validation objective.
inline double mean_track_snr(const EvaluationReport& r) {
  std::vector<double> all;
  for (const auto& [_, c] : r.results)
    for (const auto& t : c.tracks) all.push_back(t.snr);
  return all.empty() ? -kSnrCap : mean(all);
}

}  // namespace qscnet::evaluation
