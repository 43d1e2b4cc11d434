#pragma once

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <cstring>
#include <mutex>
#include <span>
#include <type_traits>

#include "qscnet/core/error.hpp"

namespace qscnet::fft {

namespace detail {

// The FFTW planner is not re-entrant; execution on distinct buffers is.
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

template <typename T>
struct Fftw;

template <>
struct Fftw<double> {
  using Plan = fftw_plan;
  using Complex = fftw_complex;
  static void* malloc(std::size_t n) { return fftw_malloc(n); }
  static void free(void* p) { fftw_free(p); }
  static Plan r2c(int n, double* in, Complex* out) {
    return fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  }
  static Plan c2r(int n, Complex* in, double* out) {
    return fftw_plan_dft_c2r_1d(n, in, out, FFTW_ESTIMATE);
  }
  static void execute(Plan p) { fftw_execute(p); }
  static void destroy(Plan p) { fftw_destroy_plan(p); }
};

template <>
struct Fftw<float> {
  using Plan = fftwf_plan;
  using Complex = fftwf_complex;
  static void* malloc(std::size_t n) { return fftwf_malloc(n); }
  static void free(void* p) { fftwf_free(p); }
  static Plan r2c(int n, float* in, Complex* out) {
    return fftwf_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  }
  static Plan c2r(int n, Complex* in, float* out) {
    return fftwf_plan_dft_c2r_1d(n, in, out, FFTW_ESTIMATE);
  }
  static void execute(Plan p) { fftwf_execute(p); }
  static void destroy(Plan p) { fftwf_destroy_plan(p); }
};

}  // namespace detail

/// Real-input FFT of a fixed length with its own aligned work buffers.
/// Unnormalised in both directions (inverse(forward(x)) == n * x).
/// One instance must not be used from two threads at once.
template <typename T>
class RealFft {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  using Api = detail::Fftw<T>;

 public:
  explicit RealFft(std::size_t n) : n_(n) {
    if (n == 0) throw InvalidInput("RealFft: length must be positive");
    real_ = static_cast<T*>(Api::malloc(sizeof(T) * n_));
    spec_ = static_cast<typename Api::Complex*>(Api::malloc(sizeof(typename Api::Complex) * bins()));
    std::lock_guard lock(detail::planner_mutex());
    forward_ = Api::r2c(static_cast<int>(n_), real_, spec_);
    inverse_ = Api::c2r(static_cast<int>(n_), spec_, real_);
  }

  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  ~RealFft() {
    {
      std::lock_guard lock(detail::planner_mutex());
      Api::destroy(forward_);
      Api::destroy(inverse_);
    }
    Api::free(real_);
    Api::free(spec_);
  }

  std::size_t size() const noexcept { return n_; }
  std::size_t bins() const noexcept { return n_ / 2 + 1; }

  void forward(std::span<const T> in, std::span<std::complex<T>> out) {
    std::memcpy(real_, in.data(), sizeof(T) * n_);
    Api::execute(forward_);
    std::memcpy(static_cast<void*>(out.data()), spec_, sizeof(std::complex<T>) * bins());
  }

  /// Hermitian inverse: the imaginary parts of the DC and (even n) Nyquist
  /// bins are ignored.
  void inverse(std::span<const std::complex<T>> in, std::span<T> out) {
    std::memcpy(spec_, static_cast<const void*>(in.data()), sizeof(std::complex<T>) * bins());
    Api::execute(inverse_);
    std::memcpy(out.data(), real_, sizeof(T) * n_);
  }

 private:
  std::size_t n_;
  T* real_ = nullptr;
  typename Api::Complex* spec_ = nullptr;
  typename Api::Plan forward_{};
  typename Api::Plan inverse_{};
};

}  // namespace qscnet::fft
