#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "qscnet/core/rng.hpp"
#include "qscnet/dataset/manifest.hpp"

namespace qscnet::dataset {

struct ToyOptions {
  std::size_t songs = 4;
  double seconds = 12.0;
};

/// Fine labels of the toy corpus, one per synthetic voice.
inline const std::array<std::string, 4> kToyLabels{"bass_guitar", "lead_female_singer", "acoustic_guitar", "cymbals"};

namespace toy {

using Signal = std::array<std::vector<double>, 2>;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline Signal silent(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)}; }

inline void pan(Signal& s, std::size_t i, double v, double position) {
  s[0][i] += v * (1.0 - position);
  s[1][i] += v * (1.0 + position);
}

/// Three-partial bass line, fundamentals 45-90 Hz, half-second notes.
inline Signal bass(std::size_t n, Rng& rng) {
  Signal s = silent(n);
  const std::size_t note = spectral::kSampleRate / 2;
  const double p = rng.uniform(-0.3, 0.3);
  double phase = 0;
  for (std::size_t start = 0; start < n; start += note) {
    const double f0 = rng.uniform(45.0, 90.0);
    for (std::size_t i = start; i < std::min(n, start + note); ++i) {
      const double t = static_cast<double>(i - start) / spectral::kSampleRate;
      const double env = std::min(1.0, t / 0.01) * std::exp(-1.5 * t);
      phase += kTwoPi * f0 / spectral::kSampleRate;
      const double v = std::sin(phase) + 0.5 * std::sin(2 * phase) + 0.25 * std::sin(3 * phase);
      pan(s, i, 0.18 * env * v, p);
    }
  }
  return s;
}

/// Sung line with 5.5 Hz vibrato, fundamentals 330-480 Hz, two partials.
inline Signal voice(std::size_t n, Rng& rng) {
  Signal s = silent(n);
  const std::size_t note = spectral::kSampleRate * 3 / 4;
  const double p = rng.uniform(-0.2, 0.2);
  const double vib_phase = rng.uniform(0, kTwoPi);
  double phase = 0;
  for (std::size_t start = 0; start < n; start += note) {
    const double f0 = rng.uniform(330.0, 480.0);
    for (std::size_t i = start; i < std::min(n, start + note); ++i) {
      const double t = static_cast<double>(i) / spectral::kSampleRate;
      const double local = static_cast<double>(i - start) / spectral::kSampleRate;
      const double f = f0 * (1.0 + 0.02 * std::sin(kTwoPi * 5.5 * t + vib_phase));
      phase += kTwoPi * f / spectral::kSampleRate;
      const double env = 0.6 + 0.4 * std::sin(std::numbers::pi * local / 0.75);
      pan(s, i, 0.12 * env * (std::sin(phase) + 0.4 * std::sin(2 * phase)), p);
    }
  }
  return s;
}

/// Plucked notes, fundamentals 1.3-2 kHz, two decaying partials.
inline Signal pluck(std::size_t n, Rng& rng) {
  Signal s = silent(n);
  const std::size_t note = spectral::kSampleRate / 4;
  const double p = rng.uniform(-0.5, 0.5);
  for (std::size_t start = 0; start < n; start += note) {
    const double f0 = rng.uniform(1300.0, 2000.0);
    const double ph = rng.uniform(0, kTwoPi);
    for (std::size_t i = start; i < std::min(n, start + note); ++i) {
      const double t = static_cast<double>(i - start) / spectral::kSampleRate;
      const double v = std::exp(-8.0 * t) * std::sin(kTwoPi * f0 * t + ph) + 0.5 * std::exp(-14.0 * t) *
                                                                                 std::sin(kTwoPi * 2 * f0 * t + ph);
      pan(s, i, 0.1 * std::min(1.0, t / 0.002) * v, p);
    }
  }
  return s;
}

/// Hi-hat: low-passed noise shifted to a 10 kHz carrier, eighth-note bursts.
inline Signal hats(std::size_t n, Rng& rng) {
  Signal s = silent(n);
  const double bpm = rng.uniform(120.0, 150.0);
  const auto step = static_cast<std::size_t>(spectral::kSampleRate * 30.0 / bpm);
  double lp[2] = {0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i % step) / spectral::kSampleRate;
    const double env = 0.05 + std::exp(-t / 0.04);
    const double carrier = std::cos(kTwoPi * 10000.0 * static_cast<double>(i) / spectral::kSampleRate);
    for (std::size_t c = 0; c < 2; ++c) {
      lp[c] += 0.25 * (rng.uniform(-1.0, 1.0) - lp[c]);
      s[c][i] = 0.2 * env * lp[c] * carrier;
    }
  }
  return s;
}

}  // namespace toy

/// Writes a small layout-conforming corpus under `out_dir` with split lists
/// in `out_dir/splits`: songs toy_00.. each holding the four toy labels.
/// Songs are assigned train, train, ..., valid, test in order.
inline std::filesystem::path generate_toy_dataset(const std::filesystem::path& out_dir, std::uint64_t seed,
                                                  const ToyOptions& opt = {}) {
  if (opt.songs == 0 || opt.seconds <= 0) throw InvalidConfig("toy dataset needs songs and a positive duration");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw DataError("cannot create " + out_dir.string());
  const auto n = static_cast<std::size_t>(std::llround(opt.seconds * spectral::kSampleRate));
  std::map<Split, std::vector<std::string>> splits;
  for (std::size_t k = 0; k < opt.songs; ++k) {
    char id[32];
    std::snprintf(id, sizeof id, "toy_%02zu", k);
    for (std::size_t l = 0; l < kToyLabels.size(); ++l) {
      Rng rng(derive_seed(seed, k, l));
      toy::Signal sig = l == 0 ? toy::bass(n, rng) : l == 1 ? toy::voice(n, rng) : l == 2 ? toy::pluck(n, rng)
                                                                                          : toy::hats(n, rng);
      spectral::Waveform<float> w(n);
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < n; ++i) w(c, i) = static_cast<float>(sig[c][i]);
      audio::write_wav(out_dir / id / kToyLabels[l] / "0.wav", w, audio::SampleFormat::pcm16);
    }
    Split s = Split::train;
    if (opt.songs >= 3 && k == opt.songs - 2) s = Split::valid;
    if (opt.songs >= 3 && k == opt.songs - 1) s = Split::test;
    splits[s].push_back(id);
  }
  write_splits(out_dir / "splits", splits);
  return out_dir;
}

}  // namespace qscnet::dataset
