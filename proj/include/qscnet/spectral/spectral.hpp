#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "qscnet/core/fft.hpp"
#include "qscnet/core/tensor.hpp"

namespace qscnet::spectral {

inline constexpr int kSampleRate = 44100;
inline constexpr std::size_t kChannels = 2;
inline constexpr std::size_t kDefaultFrameLength = 4096;
inline constexpr std::size_t kDefaultHop = 1024;

/// Stereo signal, stored channel-major as a [2, N] tensor.
template <typename T = float>
class Waveform {
 public:
  Waveform() = default;
  explicit Waveform(std::size_t length, int sample_rate = kSampleRate)
      : samples_({kChannels, length}), sample_rate_(sample_rate) {}
  Waveform(Tensor<T> samples, int sample_rate = kSampleRate)
      : samples_(std::move(samples)), sample_rate_(sample_rate) {
    if (samples_.rank() != 2 || samples_.dim(0) != kChannels)
      throw InvalidInput("Waveform: expected [2, N] samples, got " + shape_string(samples_.shape()));
  }

  std::size_t length() const noexcept { return samples_.rank() == 2 ? samples_.dim(1) : 0; }
  int sample_rate() const noexcept { return sample_rate_; }
  double seconds() const noexcept { return static_cast<double>(length()) / sample_rate_; }

  std::span<T> channel(std::size_t c) { return {samples_.data() + c * length(), length()}; }
  std::span<const T> channel(std::size_t c) const {
    return {samples_.data() + c * length(), length()};
  }
  T& operator()(std::size_t c, std::size_t n) { return samples_[c * length() + n]; }
  T operator()(std::size_t c, std::size_t n) const { return samples_[c * length() + n]; }

  const Tensor<T>& samples() const noexcept { return samples_; }
  Tensor<T>& samples() noexcept { return samples_; }

  /// Samples [begin, begin + count).
  Waveform segment(std::size_t begin, std::size_t count) const {
    if (begin + count > length()) throw InvalidInput("Waveform::segment out of range");
    Waveform out(count, sample_rate_);
    for (std::size_t c = 0; c < kChannels; ++c)
      std::copy_n(channel(c).data() + begin, count, out.channel(c).data());
    return out;
  }

  void validate() const {
    if (length() == 0) throw InvalidInput("waveform is empty");
    if (!samples_.all_finite()) throw InvalidInput("waveform contains non-finite samples");
  }

  friend bool operator==(const Waveform& a, const Waveform& b) {
    return a.sample_rate_ == b.sample_rate_ && a.samples_ == b.samples_;
  }

 private:
  Tensor<T> samples_;
  int sample_rate_ = kSampleRate;
};

/// Stereo complex STFT, laid out [channel][bin][frame].
template <typename T = float>
struct ComplexSpectrogram {
  std::size_t bins = 0;
  std::size_t frames = 0;
  std::size_t frame_length = 0;
  std::size_t hop = 0;
  std::size_t original_length = 0;
  std::vector<std::complex<T>> data;

  std::complex<T>& at(std::size_t c, std::size_t f, std::size_t t) {
    return data[(c * bins + f) * frames + t];
  }
  const std::complex<T>& at(std::size_t c, std::size_t f, std::size_t t) const {
    return data[(c * bins + f) * frames + t];
  }

  void validate() const {
    if (frame_length < 4 || hop == 0) throw InvalidInput("spectrogram: bad framing metadata");
    if (bins != frame_length / 2 + 1) throw InvalidInput("spectrogram: bin count != frame/2 + 1");
    if (original_length == 0 || frames != original_length / hop + 1)
      throw InvalidInput("spectrogram: frame count inconsistent with original length");
    if (data.size() != kChannels * bins * frames)
      throw InvalidInput("spectrogram: data size does not match shape");
  }

  friend bool operator==(const ComplexSpectrogram& a, const ComplexSpectrogram& b) = default;
};

/// Real [4, F, T] view of a stereo spectrogram with channel order
/// (left-real, left-imag, right-real, right-imag).
template <typename T = float>
struct PackedSpectrogram {
  Tensor<T> data;
};

/// Two complex masks in the packed channel layout. Unbounded.
template <typename T = float>
struct ComplexMask {
  Tensor<T> data;
};

inline std::size_t frame_count(std::size_t length, std::size_t hop) { return length / hop + 1; }

template <typename T>
std::vector<T> periodic_hann(std::size_t n) {
  std::vector<T> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = static_cast<T>(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                               static_cast<double>(n)));
  return w;
}

/// Reflect-mode index into [0, n) for any integer position.
inline std::size_t reflect_index(std::ptrdiff_t j, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  j %= period;
  if (j < 0) j += period;
  return static_cast<std::size_t>(j < static_cast<std::ptrdiff_t>(n) ? j : period - j);
}

namespace detail {
inline void check_framing(std::size_t frame_length, std::size_t hop) {
  if (frame_length < 4 || frame_length % 4 != 0 || hop != frame_length / 4)
    throw InvalidInput("stft: hop must equal frame_length / 4 (frame " +
                       std::to_string(frame_length) + ", hop " + std::to_string(hop) + ")");
}
}  // namespace detail

/// Framing state reused across the channels of one transform.
template <typename T>
class StftKernel {
 public:
  StftKernel(std::size_t frame_length, std::size_t hop)
      : n_(frame_length), hop_(hop), fft_(frame_length), window_(periodic_hann<T>(frame_length)),
        frame_(frame_length), spec_(frame_length / 2 + 1) {
    detail::check_framing(frame_length, hop);
  }

  std::size_t frame_length() const { return n_; }
  std::size_t hop() const { return hop_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  /// One channel of N samples -> real/imag planes, each [bins][frames].
  void analyse(const T* x, std::size_t length, T* re, T* im) {
    const std::size_t frames = frame_count(length, hop_);
    const auto pad = static_cast<std::ptrdiff_t>(n_ / 2);
    const T scale = T(1) / std::sqrt(static_cast<T>(n_));
    for (std::size_t t = 0; t < frames; ++t) {
      const auto start = static_cast<std::ptrdiff_t>(t * hop_) - pad;
      for (std::size_t m = 0; m < n_; ++m)
        frame_[m] = window_[m] * x[reflect_index(start + static_cast<std::ptrdiff_t>(m), length)];
      fft_.forward(frame_, spec_);
      for (std::size_t f = 0; f < bins(); ++f) {
        re[f * frames + t] = spec_[f].real() * scale;
        im[f * frames + t] = spec_[f].imag() * scale;
      }
    }
  }

  /// Inverse of analyse: windowed overlap-add with squared-window
  /// normalisation, cropped to `length` samples.
  void synthesise(const T* re, const T* im, std::size_t frames, std::size_t length, T* y) {
    const std::size_t pad = n_ / 2;
    std::vector<T> acc((frames - 1) * hop_ + n_, T(0));
    const T scale = std::sqrt(static_cast<T>(n_)) / static_cast<T>(n_);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t f = 0; f < bins(); ++f) spec_[f] = {re[f * frames + t], im[f * frames + t]};
      fft_.inverse(spec_, frame_);
      for (std::size_t m = 0; m < n_; ++m) acc[t * hop_ + m] += window_[m] * frame_[m] * scale;
    }
    const auto norm = window_norm(frames);
    for (std::size_t j = 0; j < length; ++j) y[j] = acc[j + pad] / norm[j + pad];
  }

  /// Adjoint of synthesise: gradient w.r.t. the planes given d(loss)/dy.
  void synthesise_adjoint(const T* gy, std::size_t frames, std::size_t length, T* gre, T* gim) {
    const std::size_t pad = n_ / 2;
    std::vector<T> gacc((frames - 1) * hop_ + n_, T(0));
    const auto norm = window_norm(frames);
    for (std::size_t j = 0; j < length; ++j) gacc[j + pad] = gy[j] / norm[j + pad];
    const T scale = std::sqrt(static_cast<T>(n_)) / static_cast<T>(n_);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t m = 0; m < n_; ++m) frame_[m] = window_[m] * gacc[t * hop_ + m] * scale;
      fft_.forward(frame_, spec_);
      for (std::size_t f = 0; f < bins(); ++f) {
        const bool edge = f == 0 || (n_ % 2 == 0 && f == n_ / 2);
        const T weight = edge ? T(1) : T(2);
        gre[f * frames + t] += weight * spec_[f].real();
        gim[f * frames + t] += edge ? T(0) : weight * spec_[f].imag();
      }
    }
  }

 private:
  std::vector<T> window_norm(std::size_t frames) const {
    std::vector<T> norm((frames - 1) * hop_ + n_, T(0));
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t m = 0; m < n_; ++m) norm[t * hop_ + m] += window_[m] * window_[m];
    for (auto& v : norm)
      if (v < T(1e-11)) v = T(1);
    return norm;
  }

  std::size_t n_, hop_;
  fft::RealFft<T> fft_;
  std::vector<T> window_;
  std::vector<T> frame_;
  std::vector<std::complex<T>> spec_;
};

/// Centre-padded (reflect) STFT with a periodic Hann window, scaled by
/// 1/sqrt(frame_length). Frames: floor(N / hop) + 1.
template <typename T>
ComplexSpectrogram<T> stft(const Waveform<T>& w, std::size_t frame_length = kDefaultFrameLength,
                           std::size_t hop = kDefaultHop) {
  if (w.length() == 0) throw InvalidInput("stft: empty waveform");
  StftKernel<T> kernel(frame_length, hop);
  ComplexSpectrogram<T> s;
  s.frame_length = frame_length;
  s.hop = hop;
  s.original_length = w.length();
  s.bins = kernel.bins();
  s.frames = frame_count(w.length(), hop);
  s.data.resize(kChannels * s.bins * s.frames);
  std::vector<T> re(s.bins * s.frames), im(s.bins * s.frames);
  for (std::size_t c = 0; c < kChannels; ++c) {
    kernel.analyse(w.channel(c).data(), w.length(), re.data(), im.data());
    for (std::size_t k = 0; k < re.size(); ++k) s.data[c * re.size() + k] = {re[k], im[k]};
  }
  return s;
}

template <typename T>
Waveform<T> istft(const ComplexSpectrogram<T>& s, int sample_rate = kSampleRate) {
  s.validate();
  StftKernel<T> kernel(s.frame_length, s.hop);
  Waveform<T> out(s.original_length, sample_rate);
  const std::size_t plane = s.bins * s.frames;
  std::vector<T> re(plane), im(plane);
  for (std::size_t c = 0; c < kChannels; ++c) {
    for (std::size_t k = 0; k < plane; ++k) {
      re[k] = s.data[c * plane + k].real();
      im[k] = s.data[c * plane + k].imag();
    }
    kernel.synthesise(re.data(), im.data(), s.frames, s.original_length, out.channel(c).data());
  }
  return out;
}

template <typename T>
PackedSpectrogram<T> pack(const ComplexSpectrogram<T>& s) {
  if (s.data.size() != kChannels * s.bins * s.frames)
    throw InvalidInput("pack: spectrogram must have exactly 2 channels");
  Tensor<T> out({2 * kChannels, s.bins, s.frames});
  const std::size_t plane = s.bins * s.frames;
  for (std::size_t c = 0; c < kChannels; ++c)
    for (std::size_t k = 0; k < plane; ++k) {
      out[(2 * c) * plane + k] = s.data[c * plane + k].real();
      out[(2 * c + 1) * plane + k] = s.data[c * plane + k].imag();
    }
  return {std::move(out)};
}

/// Rebuilds the complex spectrogram; the packed tensor carries no framing
/// metadata, so the caller supplies it.
template <typename T>
ComplexSpectrogram<T> unpack(const PackedSpectrogram<T>& p, std::size_t frame_length,
                             std::size_t hop, std::size_t original_length) {
  if (p.data.rank() != 3 || p.data.dim(0) != 2 * kChannels)
    throw InvalidInput("unpack: expected [4, F, T], got " + shape_string(p.data.shape()));
  ComplexSpectrogram<T> s;
  s.bins = p.data.dim(1);
  s.frames = p.data.dim(2);
  s.frame_length = frame_length;
  s.hop = hop;
  s.original_length = original_length;
  const std::size_t plane = s.bins * s.frames;
  s.data.resize(kChannels * plane);
  for (std::size_t c = 0; c < kChannels; ++c)
    for (std::size_t k = 0; k < plane; ++k)
      s.data[c * plane + k] = {p.data[(2 * c) * plane + k], p.data[(2 * c + 1) * plane + k]};
  return s;
}

/// Per stereo channel complex product mask * x over [.., 4, F, T] buffers.
template <typename T>
void complex_multiply_packed(const T* mask, const T* x, T* out, std::size_t items, std::size_t plane) {
  for (std::size_t b = 0; b < items; ++b)
    for (std::size_t c = 0; c < kChannels; ++c) {
      const std::size_t r = (b * 4 + 2 * c) * plane, i = r + plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const T mr = mask[r + k], mi = mask[i + k], xr = x[r + k], xi = x[i + k];
        out[r + k] = mr * xr - mi * xi;
        out[i + k] = mr * xi + mi * xr;
      }
    }
}

template <typename T>
PackedSpectrogram<T> apply_mask(const ComplexMask<T>& m, const PackedSpectrogram<T>& p) {
  if (m.data.shape() != p.data.shape() || p.data.rank() != 3 || p.data.dim(0) != 4)
    throw InvalidInput("apply_mask: mask " + shape_string(m.data.shape()) + " vs spectrogram " +
                       shape_string(p.data.shape()));
  Tensor<T> out(p.data.shape());
  complex_multiply_packed(m.data.data(), p.data.data(), out.data(), 1, p.data.dim(1) * p.data.dim(2));
  return {std::move(out)};
}

/// Packed STFT of a waveform batch [B, 2, N] -> [B, 4, F, T].
template <typename T>
Tensor<T> stft_packed(const Tensor<T>& batch, std::size_t frame_length, std::size_t hop) {
  if (batch.rank() != 3 || batch.dim(1) != kChannels || batch.dim(2) == 0)
    throw InvalidInput("stft_packed: expected [B, 2, N], got " + shape_string(batch.shape()));
  const std::size_t B = batch.dim(0), N = batch.dim(2);
  StftKernel<T> kernel(frame_length, hop);
  const std::size_t F = kernel.bins(), frames = frame_count(N, hop), plane = F * frames;
  Tensor<T> out({B, 2 * kChannels, F, frames});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < kChannels; ++c) {
      T* re = out.data() + (b * 4 + 2 * c) * plane;
      kernel.analyse(batch.data() + (b * kChannels + c) * N, N, re, re + plane);
    }
  return out;
}

}  // namespace qscnet::spectral
