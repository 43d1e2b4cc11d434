#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "qscnet/core/fft.hpp"
#include "qscnet/core/rng.hpp"
#include "qscnet/spectral/wav.hpp"

namespace qscnet::conditioning {

inline constexpr std::size_t kEmbeddingDim = 768;
inline constexpr double kMaxQuerySeconds = 10.0;

struct QueryEmbedding {
  std::vector<float> vector;
  std::string source_id;

  void validate(std::size_t dim = kEmbeddingDim) const {
    if (vector.size() != dim)
      throw InvalidInput("query embedding has " + std::to_string(vector.size()) + " values, expected " +
                         std::to_string(dim));
    for (float v : vector)
      if (!std::isfinite(v)) throw InvalidInput("query embedding is not finite");
  }
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string name() const = 0;
  virtual std::size_t output_dim() const { return kEmbeddingDim; }
  virtual double max_query_seconds() const { return kMaxQuerySeconds; }
  /// Audio already checked against the duration and rate limits.
  virtual std::vector<float> compute(const spectral::Waveform<float>& audio) const = 0;
};

inline QueryEmbedding embed_query(const Embedder& e, const spectral::Waveform<float>& audio,
                                  std::string source_id = {}) {
  if (audio.sample_rate() != spectral::kSampleRate)
    throw InvalidInput("query audio must be 44.1 kHz, got " + std::to_string(audio.sample_rate()));
  const auto limit = static_cast<std::size_t>(std::llround(e.max_query_seconds() * spectral::kSampleRate));
  if (audio.length() > limit)
    throw InvalidInput("query audio is " + std::to_string(audio.seconds()) + " s; at most " +
                       std::to_string(e.max_query_seconds()) + " s is allowed");
  if (!audio.samples().all_finite()) throw InvalidInput("query audio contains non-finite samples");
  QueryEmbedding q{e.compute(audio), source_id.empty() ? e.name() : source_id + "@" + e.name()};
  q.validate(e.output_dim());
  return q;
}

/// Deterministic stand-in for a pretrained instrument-recognition network.
///
/// Mono log-mel spectrogram (64 bands, 2048-point Hann frames, hop 512),
/// summarised as the per-band mean with the band-average removed, the
/// per-band standard deviation and a loudness term; the 129 statistics go
/// through a fixed Gaussian projection (mt19937_64, seed 0x5EED) and the
/// result is scaled to unit RMS. Silent audio maps to the normalised
/// loudness column of the projection, `baseline()`.
class MockEmbedder final : public Embedder {
 public:
  static constexpr std::size_t kBands = 64;
  static constexpr std::size_t kFrame = 2048;
  static constexpr std::size_t kHop = 512;
  static constexpr std::size_t kFeatures = 2 * kBands + 1;
  static constexpr std::uint64_t kSeed = 0x5EED;
  static constexpr double kFloor = 1e-10;

  explicit MockEmbedder(std::size_t dim = kEmbeddingDim) : dim_(dim), projection_(dim * kFeatures) {
    Rng rng(kSeed);
    for (auto& v : projection_) v = rng.normal() / std::sqrt(static_cast<double>(kFeatures));
    build_filterbank();
  }

  std::string name() const override { return "mock-logmel-v1"; }
  std::size_t output_dim() const override { return dim_; }

  std::vector<float> compute(const spectral::Waveform<float>& audio) const override {
    return project(features(audio));
  }

  /// Output for all-zero audio of any length.
  std::vector<float> baseline() const { return project(silent_features()); }

  /// The 129 summary statistics.
  std::vector<double> features(const spectral::Waveform<float>& audio) const {
    const auto& v = audio.samples().values();
    if (std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; })) return silent_features();
    const std::size_t n = audio.length();
    const std::size_t frames = n <= kFrame ? 1 : (n - kFrame + kHop - 1) / kHop + 1;
    std::vector<double> window(kFrame), buf(kFrame);
    for (std::size_t i = 0; i < kFrame; ++i)
      window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / kFrame);
    std::vector<std::complex<double>> spec(kFrame / 2 + 1);
    std::vector<double> sum(kBands, 0.0), sumsq(kBands, 0.0);
    fft::RealFft<double> fft(kFrame);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t i = 0; i < kFrame; ++i) {
        const std::size_t k = t * kHop + i;
        buf[i] = k < n ? window[i] * 0.5 * (static_cast<double>(audio(0, k)) + audio(1, k)) : 0.0;
      }
      fft.forward(buf, spec);
      for (std::size_t b = 0; b < kBands; ++b) {
        double e = 0;
        for (const auto& [bin, w] : filters_[b]) e += w * std::norm(spec[bin]);
        const double l = std::log(kFloor + e);
        sum[b] += l;
        sumsq[b] += l * l;
      }
    }
    std::vector<double> f(kFeatures);
    double level = 0;
    for (std::size_t b = 0; b < kBands; ++b) level += sum[b] / static_cast<double>(frames);
    level /= kBands;
    for (std::size_t b = 0; b < kBands; ++b) {
      const double mean = sum[b] / static_cast<double>(frames);
      f[b] = mean - level;
      f[kBands + b] = std::sqrt(std::max(0.0, sumsq[b] / static_cast<double>(frames) - mean * mean));
    }
    f[kFeatures - 1] = loudness_term(level);
    return f;
  }

 private:
  static double loudness_term(double level) { return 0.1 * level; }

  static std::vector<double> silent_features() {
    std::vector<double> f(kFeatures, 0.0);
    f[kFeatures - 1] = loudness_term(std::log(kFloor));
    return f;
  }

  std::vector<float> project(const std::vector<double>& f) const {
    std::vector<double> y(dim_, 0.0);
    double ss = 0;
    for (std::size_t i = 0; i < dim_; ++i) {
      for (std::size_t j = 0; j < kFeatures; ++j) y[i] += projection_[i * kFeatures + j] * f[j];
      ss += y[i] * y[i];
    }
    const double scale = ss > 0 ? std::sqrt(static_cast<double>(dim_) / ss) : 0.0;
    std::vector<float> out(dim_);
    for (std::size_t i = 0; i < dim_; ++i) out[i] = static_cast<float>(y[i] * scale);
    return out;
  }

  // Triangular filters evenly spaced on the HTK mel scale, 0 Hz to Nyquist.
  void build_filterbank() {
    auto mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
    auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
    const double top = mel(spectral::kSampleRate / 2.0);
    std::vector<double> edges(kBands + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) edges[i] = hz(top * static_cast<double>(i) / (kBands + 1));
    const double bin_hz = static_cast<double>(spectral::kSampleRate) / kFrame;
    filters_.assign(kBands, {});
    for (std::size_t b = 0; b < kBands; ++b) {
      for (std::size_t k = 0; k <= kFrame / 2; ++k) {
        const double f = static_cast<double>(k) * bin_hz;
        double w = 0;
        if (f > edges[b] && f < edges[b + 1]) w = (f - edges[b]) / (edges[b + 1] - edges[b]);
        else if (f >= edges[b + 1] && f < edges[b + 2]) w = (edges[b + 2] - f) / (edges[b + 2] - edges[b + 1]);
        if (w > 0) filters_[b].emplace_back(k, w);
      }
      // Narrow low bands can fall between bins; use the nearest bin.
      if (filters_[b].empty())
        filters_[b].emplace_back(static_cast<std::size_t>(std::lround(edges[b + 1] / bin_hz)), 1.0);
    }
  }

  std::size_t dim_;
  std::vector<double> projection_;
  std::vector<std::vector<std::pair<std::size_t, double>>> filters_;
};

/// Runs `command` with the placeholders {in} and {out} replaced by a wav
/// file holding the query and the path where the tool writes `output_dim`
/// little-endian float32 values.
class ExternalEmbedder final : public Embedder {
 public:
  ExternalEmbedder(std::string command, std::string name, std::filesystem::path scratch,
                   std::size_t dim = kEmbeddingDim)
      : command_(std::move(command)), name_(std::move(name)), scratch_(std::move(scratch)), dim_(dim) {
    if (command_.find("{in}") == std::string::npos || command_.find("{out}") == std::string::npos)
      throw InvalidConfig("external embedder command needs {in} and {out} placeholders");
  }

  std::string name() const override { return name_; }
  std::size_t output_dim() const override { return dim_; }

  std::vector<float> compute(const spectral::Waveform<float>& audio) const override {
    std::lock_guard lock(mutex_);
    std::filesystem::create_directories(scratch_);
    const auto in = scratch_ / "query.wav", out = scratch_ / "embedding.f32";
    std::filesystem::remove(out);
    audio::write_wav(in, audio, audio::SampleFormat::float32);
    std::string cmd = command_;
    replace(cmd, "{in}", quote(in.string()));
    replace(cmd, "{out}", quote(out.string()));
    if (const int rc = std::system(cmd.c_str()); rc != 0)
      throw DataError("external embedder exited with status " + std::to_string(rc) + ": " + cmd);
    std::ifstream f(out, std::ios::binary);
    std::vector<float> v(dim_);
    if (!f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(dim_ * sizeof(float))))
      throw DataError("external embedder wrote fewer than " + std::to_string(dim_) + " floats to " + out.string());
    return v;
  }

 private:
  static void replace(std::string& s, const std::string& key, const std::string& value) {
    for (auto p = s.find(key); p != std::string::npos; p = s.find(key, p + value.size())) s.replace(p, key.size(), value);
  }
  static std::string quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return out + "'";
  }

  std::string command_, name_;
  std::filesystem::path scratch_;
  std::size_t dim_;
  mutable std::mutex mutex_;
};

/// FNV-1a over the sample rate, length and raw sample bytes.
inline std::uint64_t content_hash(const spectral::Waveform<float>& audio) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 0x100000001b3ULL;
  };
  const std::uint64_t len = audio.length();
  const std::int32_t sr = audio.sample_rate();
  mix(&sr, sizeof sr);
  mix(&len, sizeof len);
  mix(audio.samples().data(), audio.samples().size() * sizeof(float));
  return h;
}

/// content hash -> embedding, stored as a binary table with a text manifest
/// alongside (`<path>.txt`).
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::size_t dim = kEmbeddingDim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return table_.size(); }
  bool contains(std::uint64_t key) const { return table_.count(key) > 0; }
  const std::string& embedder() const { return embedder_; }

  const std::vector<float>& at(std::uint64_t key) const {
    auto it = table_.find(key);
    if (it == table_.end()) throw DataError("embedding cache has no entry for this audio");
    return it->second.vector;
  }

  void insert(std::uint64_t key, QueryEmbedding q) {
    q.validate(dim_);
    table_[key] = std::move(q);
  }

  /// Cached embedding of `audio`, computing and storing it on a miss.
  const std::vector<float>& get_or_compute(const Embedder& e, const spectral::Waveform<float>& audio,
                                           const std::string& source_id = {}) {
    if (embedder_.empty()) embedder_ = e.name();
    if (embedder_ != e.name())
      throw ContractError("embedding cache holds '" + embedder_ + "' vectors, not '" + e.name() + "'");
    const auto key = content_hash(audio);
    auto it = table_.find(key);
    if (it == table_.end()) it = table_.emplace(key, embed_query(e, audio, source_id)).first;
    return it->second.vector;
  }

  void save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    const std::uint32_t version = 1, dim = static_cast<std::uint32_t>(dim_);
    const std::uint64_t count = table_.size();
    const auto name_len = static_cast<std::uint32_t>(embedder_.size());
    out.write("QEMB", 4);
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&dim), 4);
    out.write(reinterpret_cast<const char*>(&count), 8);
    out.write(reinterpret_cast<const char*>(&name_len), 4);
    out.write(embedder_.data(), name_len);
    for (const auto& [key, q] : table_) {
      out.write(reinterpret_cast<const char*>(&key), 8);
      out.write(reinterpret_cast<const char*>(q.vector.data()), static_cast<std::streamsize>(dim_ * sizeof(float)));
    }
    if (!out) throw DataError("short write to " + path.string());
    std::ofstream manifest(path.string() + ".txt");
    manifest << "# embedder " << embedder_ << " dim " << dim_ << " entries " << count << "\n";
    for (const auto& [key, q] : table_) {
      char hex[17];
      std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(key));
      manifest << hex << '\t' << q.source_id << '\n';
    }
  }

  static EmbeddingCache load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open embedding cache " + path.string());
    char magic[4];
    std::uint32_t version = 0, dim = 0, name_len = 0;
    std::uint64_t count = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&dim), 4);
    in.read(reinterpret_cast<char*>(&count), 8);
    in.read(reinterpret_cast<char*>(&name_len), 4);
    if (!in || std::memcmp(magic, "QEMB", 4) != 0 || version != 1 || name_len > 4096)
      throw DataError(path.string() + ": not an embedding cache");
    EmbeddingCache cache(dim);
    cache.embedder_.resize(name_len);
    in.read(cache.embedder_.data(), name_len);
    std::map<std::uint64_t, std::string> sources;
    if (std::ifstream manifest(path.string() + ".txt"); manifest) {
      std::string line;
      while (std::getline(manifest, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        sources[std::stoull(line.substr(0, tab), nullptr, 16)] = tab == std::string::npos ? "" : line.substr(tab + 1);
      }
    }
    for (std::uint64_t i = 0; i < count; ++i) {
      std::uint64_t key = 0;
      QueryEmbedding q;
      q.vector.resize(dim);
      in.read(reinterpret_cast<char*>(&key), 8);
      in.read(reinterpret_cast<char*>(q.vector.data()), static_cast<std::streamsize>(dim * sizeof(float)));
      if (!in) throw DataError(path.string() + ": truncated after " + std::to_string(i) + " entries");
      if (auto it = sources.find(key); it != sources.end()) q.source_id = it->second;
      cache.insert(key, std::move(q));
    }
    return cache;
  }

 private:
  std::size_t dim_;
  std::string embedder_;
  std::map<std::uint64_t, QueryEmbedding> table_;
};

}  // namespace qscnet::conditioning
