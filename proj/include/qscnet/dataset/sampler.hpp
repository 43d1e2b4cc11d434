#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qscnet/core/rng.hpp"
#include "qscnet/dataset/pools.hpp"

namespace qscnet::dataset {

/// Audio behind a ClipRef.
class ClipSource {
 public:
  virtual ~ClipSource() = default;
  virtual spectral::Waveform<float> read(const ClipRef& clip) const = 0;
};

/// Category tracks held in memory; samples past a track's end read as zero.
class MemoryClipSource final : public ClipSource {
 public:
  explicit MemoryClipSource(SongTracks tracks) : tracks_(std::move(tracks)) {}

  spectral::Waveform<float> read(const ClipRef& c) const override {
    auto s = tracks_.find(c.song_id);
    if (s == tracks_.end()) throw DataError("no song '" + c.song_id + "' in memory source");
    auto t = s->second.find(c.category);
    if (t == s->second.end()) throw DataError(c.song_id + " has no '" + c.category + "' track");
    const auto& w = t->second;
    spectral::Waveform<float> out(c.length);
    if (c.start < w.length()) {
      const std::size_t n = std::min(c.length, w.length() - c.start);
      for (std::size_t ch = 0; ch < 2; ++ch) std::copy_n(w.channel(ch).data() + c.start, n, out.channel(ch).data());
    }
    return out;
  }

  const SongTracks& tracks() const { return tracks_; }

 private:
  SongTracks tracks_;
};

/// Reads clip segments straight from the member wav files.
class FileClipSource final : public ClipSource {
 public:
  FileClipSource(const std::vector<SongManifest>& songs, Vocabulary vocab) : vocab_(std::move(vocab)) {
    for (const auto& m : songs) songs_.emplace(m.song_id, m);
  }

  spectral::Waveform<float> read(const ClipRef& c) const override {
    auto it = songs_.find(c.song_id);
    if (it == songs_.end()) throw DataError("no song '" + c.song_id + "' in file source");
    return read_category_segment(it->second, vocab_, c.category, c.start, c.length);
  }

 private:
  std::map<std::string, SongManifest> songs_;
  Vocabulary vocab_;
};

enum class SampleMode { conditioned, multi_stem };

struct SamplerConfig {
  SampleMode mode = SampleMode::conditioned;
  std::uint64_t seed = 0;
  double swap_probability = 0.5;
  double flip_probability = 0.5;
  double gain_low = 0.25;
  double gain_high = 1.25;
  bool exclude_same_song_query = false;
  std::size_t max_redraws = 64;
};

struct Augmentation {
  bool swap = false;
  bool flip = false;
  float gain = 1.0f;
};

struct TrainingExample {
  spectral::Waveform<float> mixture;
  std::vector<std::string> categories;  // vocabulary order
  std::vector<bool> present;            // false: category has no clips, stem is silent
  std::vector<spectral::Waveform<float>> stems;
  std::vector<Augmentation> augmentations;
  std::vector<std::optional<ClipRef>> clips;
  // Conditioned mode only.
  std::optional<std::size_t> target;
  std::optional<ClipRef> query_clip;
  spectral::Waveform<float> query;

  const spectral::Waveform<float>& target_stem() const {
    if (!target) throw ContractError("example has no conditioned target");
    return stems[*target];
  }
};

/// y[c] = (flip ? -gain : gain) * x[swap ? 1 - c : c]
inline spectral::Waveform<float> augment(const spectral::Waveform<float>& x, const Augmentation& a) {
  spectral::Waveform<float> y(x.length(), x.sample_rate());
  const float k = a.flip ? -a.gain : a.gain;
  for (std::size_t c = 0; c < 2; ++c) {
    const float* src = x.channel(a.swap ? 1 - c : c).data();
    float* dst = y.channel(c).data();
    for (std::size_t i = 0; i < x.length(); ++i) dst[i] = k * src[i];
  }
  return y;
}

/// Random-mix example generator. Every example is a pure function of
/// (seed, epoch, index), so workers can draw disjoint indices freely.
class MixSampler {
 public:
  MixSampler(const Pools& pools, Vocabulary vocab, std::shared_ptr<const ClipSource> source, SamplerConfig cfg)
      : pools_(pools), vocab_(std::move(vocab)), source_(std::move(source)), cfg_(cfg) {
    if (!(cfg_.gain_low > 0 && cfg_.gain_low < cfg_.gain_high)) throw InvalidConfig("sampler gain range is empty");
    bool any = false;
    for (const auto& cat : vocab_.categories()) any = any || pools_.clips.size(cat) > 0;
    if (!any) throw DataError("sampler: clip pool is empty for every category");
    if (cfg_.mode == SampleMode::conditioned) {
      bool queryable = false;
      for (const auto& cat : vocab_.categories()) queryable = queryable || pools_.queries.size(cat) > 0;
      if (!queryable) throw DataError("sampler: no category can be queried");
    }
  }

  const Vocabulary& vocabulary() const { return vocab_; }
  const SamplerConfig& config() const { return cfg_; }

  TrainingExample draw(std::uint64_t epoch, std::uint64_t index) const {
    Rng rng(derive_seed(cfg_.seed, epoch, index));
    TrainingExample ex;
    std::size_t length = 0;
    const auto& cats = vocab_.categories();
    for (const auto& cat : cats) {
      const auto& list = pools_.clips.of(cat);
      ex.categories.push_back(cat);
      if (list.empty()) {
        ex.present.push_back(false);
        ex.clips.emplace_back();
        ex.augmentations.emplace_back();
        ex.stems.emplace_back();
        continue;
      }
      const ClipRef& clip = list[rng.index(list.size())];
      Augmentation a;
      a.swap = rng.bernoulli(cfg_.swap_probability);
      a.flip = rng.bernoulli(cfg_.flip_probability);
      a.gain = static_cast<float>(rng.uniform(cfg_.gain_low, cfg_.gain_high));
      ex.present.push_back(true);
      ex.clips.push_back(clip);
      ex.augmentations.push_back(a);
      ex.stems.push_back(augment(source_->read(clip), a));
      length = std::max(length, clip.length);
    }
    for (auto& s : ex.stems)
      if (s.length() != length) s = spectral::Waveform<float>(length);

    ex.mixture = spectral::Waveform<float>(length);
    for (std::size_t c = 0; c < 2; ++c) {
      float* m = ex.mixture.channel(c).data();
      for (const auto& s : ex.stems) {
        const float* x = s.channel(c).data();
        for (std::size_t i = 0; i < length; ++i) m[i] += x[i];
      }
    }

    if (cfg_.mode == SampleMode::conditioned) pick_query(rng, ex);
    return ex;
  }

 private:
  void pick_query(Rng& rng, TrainingExample& ex) const {
    const auto& cats = vocab_.categories();
    for (std::size_t attempt = 0; attempt <= cfg_.max_redraws; ++attempt) {
      const std::size_t k = rng.index(cats.size());
      const auto& list = pools_.queries.of(cats[k]);
      std::vector<const ClipRef*> eligible;
      for (const auto& q : list)
        if (!cfg_.exclude_same_song_query || !ex.clips[k] || q.song_id != ex.clips[k]->song_id) eligible.push_back(&q);
      if (eligible.empty()) continue;
      const ClipRef& q = *eligible[rng.index(eligible.size())];
      ex.target = k;
      ex.query_clip = q;
      ex.query = source_->read(q);
      return;
    }
    throw DataError("sampler: no queryable category after " + std::to_string(cfg_.max_redraws + 1) + " draws");
  }

  Pools pools_;
  Vocabulary vocab_;
  std::shared_ptr<const ClipSource> source_;
  SamplerConfig cfg_;
};

}  // namespace qscnet::dataset
