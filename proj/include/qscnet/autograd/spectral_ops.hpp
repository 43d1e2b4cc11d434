#pragma once

#include "qscnet/autograd/ops.hpp"
#include "qscnet/spectral/spectral.hpp"

namespace qscnet::ag {

/// Orthonormal real FFT along the last (time) axis of x [B, C, F, T].
/// Output [B, 2C, F, T/2 + 1]: real parts in channels [0, C), imaginary
/// parts in [C, 2C).
template <typename T>
Var<T> rfft_time(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw InvalidInput("rfft_time: expected [B, C, F, T]");
  const std::size_t B = s[0], C = s[1], F = s[2], Tn = s[3], K = Tn / 2 + 1;
  const T scale = T(1) / std::sqrt(static_cast<T>(Tn));
  Tensor<T> out({B, 2 * C, F, K});
  fft::RealFft<T> fft(Tn);
  std::vector<std::complex<T>> spec(K);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t f = 0; f < F; ++f) {
        fft.forward({x.value().data() + ((b * C + c) * F + f) * Tn, Tn}, spec);
        T* re = out.data() + ((b * 2 * C + c) * F + f) * K;
        T* im = out.data() + ((b * 2 * C + C + c) * F + f) * K;
        for (std::size_t k = 0; k < K; ++k) {
          re[k] = spec[k].real() * scale;
          im[k] = spec[k].imag() * scale;
        }
      }
  return make_result<T>(std::move(out), {x}, [B, C, F, Tn, K, scale](Node<T>& self) {
    // Adjoint: halve interior bins so the Hermitian inverse counts each once.
    fft::RealFft<T> fft(Tn);
    std::vector<std::complex<T>> spec(K);
    std::vector<T> buf(Tn);
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t f = 0; f < F; ++f) {
          const T* re = self.grad.data() + ((b * 2 * C + c) * F + f) * K;
          const T* im = self.grad.data() + ((b * 2 * C + C + c) * F + f) * K;
          for (std::size_t k = 0; k < K; ++k) {
            const bool edge = k == 0 || (Tn % 2 == 0 && k == Tn / 2);
            const T h = edge ? T(1) : T(0.5);
            spec[k] = {re[k] * h, im[k] * h};
          }
          fft.inverse(spec, buf);
          T* dst = g.data() + ((b * C + c) * F + f) * Tn;
          for (std::size_t t = 0; t < Tn; ++t) dst[t] += buf[t] * scale;
        }
  });
}

/// Inverse of rfft_time, restoring `length` time steps.
template <typename T>
Var<T> irfft_time(const Var<T>& x, std::size_t length) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] % 2 != 0 || s[3] != length / 2 + 1 || length == 0)
    throw InvalidInput("irfft_time: input " + shape_string(s) + " incompatible with length " +
                       std::to_string(length));
  const std::size_t B = s[0], C = s[1] / 2, F = s[2], K = s[3], Tn = length;
  const T scale = T(1) / std::sqrt(static_cast<T>(Tn));
  Tensor<T> out({B, C, F, Tn});
  fft::RealFft<T> fft(Tn);
  std::vector<std::complex<T>> spec(K);
  std::vector<T> buf(Tn);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t f = 0; f < F; ++f) {
        const T* re = x.value().data() + ((b * 2 * C + c) * F + f) * K;
        const T* im = x.value().data() + ((b * 2 * C + C + c) * F + f) * K;
        for (std::size_t k = 0; k < K; ++k) spec[k] = {re[k], im[k]};
        fft.inverse(spec, buf);
        T* dst = out.data() + ((b * C + c) * F + f) * Tn;
        for (std::size_t t = 0; t < Tn; ++t) dst[t] = buf[t] * scale;
      }
  return make_result<T>(std::move(out), {x}, [B, C, F, K, Tn, scale](Node<T>& self) {
    fft::RealFft<T> fft(Tn);
    std::vector<std::complex<T>> spec(K);
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t f = 0; f < F; ++f) {
          fft.forward({self.grad.data() + ((b * C + c) * F + f) * Tn, Tn}, spec);
          T* re = g.data() + ((b * 2 * C + c) * F + f) * K;
          T* im = g.data() + ((b * 2 * C + C + c) * F + f) * K;
          for (std::size_t k = 0; k < K; ++k) {
            const bool edge = k == 0 || (Tn % 2 == 0 && k == Tn / 2);
            const T w = edge ? T(1) : T(2);
            re[k] += w * spec[k].real() * scale;
            if (!edge) im[k] += w * spec[k].imag() * scale;
          }
        }
  });
}

/// Complex-ratio masking of a constant packed spectrogram batch [B, 4, F, T].
template <typename T>
Var<T> apply_complex_mask(const Var<T>& mask, const Tensor<T>& spec) {
  if (mask.shape() != spec.shape() || spec.rank() != 4 || spec.dim(1) != 4)
    throw InvalidInput("apply_complex_mask: mask " + shape_string(mask.shape()) + " vs spectrogram " +
                       shape_string(spec.shape()));
  const std::size_t B = spec.dim(0), plane = spec.dim(2) * spec.dim(3);
  Tensor<T> out(spec.shape());
  spectral::complex_multiply_packed(mask.value().data(), spec.data(), out.data(), B, plane);
  return make_result<T>(std::move(out), {mask}, [spec, B, plane](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < spectral::kChannels; ++c) {
        const std::size_t r = (b * 4 + 2 * c) * plane, i = r + plane;
        for (std::size_t k = 0; k < plane; ++k) {
          const T xr = spec[r + k], xi = spec[i + k];
          const T gr = self.grad[r + k], gi = self.grad[i + k];
          g[r + k] += gr * xr + gi * xi;
          g[i + k] += -gr * xi + gi * xr;
        }
      }
  });
}

/// Differentiable inverse STFT: packed [B, 4, F, T] -> waveforms [B, 2, N].
template <typename T>
Var<T> istft(const Var<T>& packed, std::size_t frame_length, std::size_t hop, std::size_t length) {
  const Shape& s = packed.shape();
  if (s.size() != 4 || s[1] != 4 || s[2] != frame_length / 2 + 1 ||
      s[3] != spectral::frame_count(length, hop))
    throw InvalidInput("istft: packed shape " + shape_string(s) + " inconsistent with framing");
  const std::size_t B = s[0], frames = s[3], plane = s[2] * s[3];
  spectral::StftKernel<T> kernel(frame_length, hop);
  Tensor<T> out({B, spectral::kChannels, length});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < spectral::kChannels; ++c) {
      const T* re = packed.value().data() + (b * 4 + 2 * c) * plane;
      kernel.synthesise(re, re + plane, frames, length,
                        out.data() + (b * spectral::kChannels + c) * length);
    }
  return make_result<T>(std::move(out), {packed},
                        [B, frames, plane, frame_length, hop, length](Node<T>& self) {
                          spectral::StftKernel<T> k(frame_length, hop);
                          auto& g = self.inputs[0]->grad_buffer();
                          for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t c = 0; c < spectral::kChannels; ++c) {
                              T* gre = g.data() + (b * 4 + 2 * c) * plane;
                              k.synthesise_adjoint(
                                  self.grad.data() + (b * spectral::kChannels + c) * length, frames,
                                  length, gre, gre + plane);
                            }
                        });
}

}  // namespace qscnet::ag
