#pragma once

#include <Eigen/Core>

#include <cmath>

#include "qscnet/autograd/ops.hpp"

namespace qscnet::ag {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using ConstRowVecMap = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

/// y = x W^T + b for x [N, D], W [O, D], b [O].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || w.dim(1) != x.dim(1) ||
      b.size() != w.dim(0))
    throw InvalidInput("linear: shapes " + shape_string(x.shape()) + " x " +
                       shape_string(w.shape()));
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const auto d = static_cast<Eigen::Index>(x.dim(1));
  const auto o = static_cast<Eigen::Index>(w.dim(0));
  Tensor<T> out({x.dim(0), w.dim(0)});
  MatMap<T> y(out.data(), n, o);
  y.noalias() = ConstMatMap<T>(x.value().data(), n, d) *
                ConstMatMap<T>(w.value().data(), o, d).transpose();
  y.rowwise() += ConstRowVecMap<T>(b.value().data(), o);
  return make_result<T>(std::move(out), {x, w, b}, [n, d, o](Node<T>& self) {
    ConstMatMap<T> gy(self.grad.data(), n, o);
    if (wants_grad(self, 0))
      MatMap<T>(self.inputs[0]->grad_buffer().data(), n, d).noalias() +=
          gy * ConstMatMap<T>(self.inputs[1]->value.data(), o, d);
    if (wants_grad(self, 1))
      MatMap<T>(self.inputs[1]->grad_buffer().data(), o, d).noalias() +=
          gy.transpose() * ConstMatMap<T>(self.inputs[0]->value.data(), n, d);
    if (wants_grad(self, 2))
      MatMap<T>(self.inputs[2]->grad_buffer().data(), 1, o) += gy.colwise().sum();
  });
}

/// Normalises over the last axis, then applies per-feature gain and shift.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& shift, T eps = T(1e-5)) {
  const std::size_t d = x.shape().back();
  if (gain.size() != d || shift.size() != d) throw InvalidInput("layer_norm: feature mismatch");
  const std::size_t rows = x.size() / d;
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.value().data() + r * d;
    double m = 0, v = 0;
    for (std::size_t i = 0; i < d; ++i) m += xr[i];
    m /= static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) v += (xr[i] - m) * (xr[i] - m);
    v /= static_cast<double>(d);
    inv_std[r] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
    for (std::size_t i = 0; i < d; ++i) {
      const T h = (xr[i] - static_cast<T>(m)) * inv_std[r];
      xhat[r * d + i] = h;
      out[r * d + i] = h * gain.value()[i] + shift.value()[i];
    }
  }
  return make_result<T>(std::move(out), {x, gain, shift},
                        [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
                          const auto& gv = self.inputs[1]->value;
                          const bool gx = wants_grad(self, 0), gg = wants_grad(self, 1),
                                     gb = wants_grad(self, 2);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* go = self.grad.data() + r * d;
                            const T* h = xhat.data() + r * d;
                            if (gg) {
                              auto& g = self.inputs[1]->grad_buffer();
                              for (std::size_t i = 0; i < d; ++i) g[i] += go[i] * h[i];
                            }
                            if (gb) {
                              auto& g = self.inputs[2]->grad_buffer();
                              for (std::size_t i = 0; i < d; ++i) g[i] += go[i];
                            }
                            if (gx) {
                              T mean_dh = 0, mean_dh_h = 0;
                              for (std::size_t i = 0; i < d; ++i) {
                                const T dh = go[i] * gv[i];
                                mean_dh += dh;
                                mean_dh_h += dh * h[i];
                              }
                              mean_dh /= static_cast<T>(d);
                              mean_dh_h /= static_cast<T>(d);
                              T* gxr = self.inputs[0]->grad_buffer().data() + r * d;
                              for (std::size_t i = 0; i < d; ++i)
                                gxr[i] += inv_std[r] * (go[i] * gv[i] - mean_dh - h[i] * mean_dh_h);
                            }
                          }
                        });
}

/// Group normalisation of x [B, C, ...] with `groups` channel groups and
/// per-channel affine parameters.
template <typename T>
Var<T> group_norm(const Var<T>& x, std::size_t groups, const Var<T>& gain, const Var<T>& shift,
                  T eps = T(1e-5)) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw InvalidInput("group_norm: rank must be >= 2");
  const std::size_t batch = s[0], channels = s[1];
  if (groups == 0 || channels % groups != 0)
    throw InvalidInput("group_norm: channels not divisible by groups");
  if (gain.size() != channels || shift.size() != channels)
    throw InvalidInput("group_norm: affine size mismatch");
  const std::size_t inner = x.size() / (batch * channels);
  const std::size_t per_group = channels / groups;
  const std::size_t n = per_group * inner;
  Tensor<T> out(s);
  Tensor<T> xhat(s);
  std::vector<T> inv_std(batch * groups);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t base = (b * channels + g * per_group) * inner;
      const T* xg = x.value().data() + base;
      double m = 0, v = 0;
      for (std::size_t i = 0; i < n; ++i) m += xg[i];
      m /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) v += (xg[i] - m) * (xg[i] - m);
      v /= static_cast<double>(n);
      const T is = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
      inv_std[b * groups + g] = is;
      for (std::size_t c = 0; c < per_group; ++c) {
        const std::size_t ch = g * per_group + c;
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t k = base + c * inner + i;
          const T h = (x.value()[k] - static_cast<T>(m)) * is;
          xhat[k] = h;
          out[k] = h * gain.value()[ch] + shift.value()[ch];
        }
      }
    }
  return make_result<T>(
      std::move(out), {x, gain, shift},
      [batch, channels, groups, per_group, inner, n, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Node<T>& self) {
        const auto& gv = self.inputs[1]->value;
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t base = (b * channels + g * per_group) * inner;
            T mean_dh = 0, mean_dh_h = 0;
            for (std::size_t c = 0; c < per_group; ++c) {
              const std::size_t ch = g * per_group + c;
              T sg = 0, sb = 0;
              for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t k = base + c * inner + i;
                const T go = self.grad[k];
                sg += go * xhat[k];
                sb += go;
                mean_dh += go * gv[ch];
                mean_dh_h += go * gv[ch] * xhat[k];
              }
              if (wants_grad(self, 1)) self.inputs[1]->grad_buffer()[ch] += sg;
              if (wants_grad(self, 2)) self.inputs[2]->grad_buffer()[ch] += sb;
            }
            if (!wants_grad(self, 0)) continue;
            mean_dh /= static_cast<T>(n);
            mean_dh_h /= static_cast<T>(n);
            const T is = inv_std[b * groups + g];
            auto& gx = self.inputs[0]->grad_buffer();
            for (std::size_t c = 0; c < per_group; ++c) {
              const std::size_t ch = g * per_group + c;
              for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t k = base + c * inner + i;
                gx[k] += is * (self.grad[k] * gv[ch] - mean_dh - xhat[k] * mean_dh_h);
              }
            }
          }
      });
}

/// Feature-wise affine modulation: out[b,c,...] = gamma[b,c] * x[b,c,...] + beta[b,c].
template <typename T>
Var<T> film(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw InvalidInput("film: rank must be >= 2");
  const std::size_t batch = s[0], channels = s[1];
  if (gamma.shape() != Shape{batch, channels} || beta.shape() != Shape{batch, channels})
    throw InvalidInput("film: expected gamma/beta of shape " + shape_string({batch, channels}) +
                       ", got " + shape_string(gamma.shape()) + " / " + shape_string(beta.shape()));
  const std::size_t inner = x.size() / (batch * channels);
  Tensor<T> out(s);
  for (std::size_t bc = 0; bc < batch * channels; ++bc) {
    const T g = gamma.value()[bc], b = beta.value()[bc];
    const T* xi = x.value().data() + bc * inner;
    T* yi = out.data() + bc * inner;
    for (std::size_t i = 0; i < inner; ++i) yi[i] = g * xi[i] + b;
  }
  return make_result<T>(std::move(out), {x, gamma, beta}, [batch, channels, inner](Node<T>& self) {
    const auto& xv = self.inputs[0]->value;
    const auto& gv = self.inputs[1]->value;
    for (std::size_t bc = 0; bc < batch * channels; ++bc) {
      const T* go = self.grad.data() + bc * inner;
      if (wants_grad(self, 0)) {
        T* gx = self.inputs[0]->grad_buffer().data() + bc * inner;
        for (std::size_t i = 0; i < inner; ++i) gx[i] += gv[bc] * go[i];
      }
      if (wants_grad(self, 1)) {
        T acc = 0;
        const T* xi = xv.data() + bc * inner;
        for (std::size_t i = 0; i < inner; ++i) acc += go[i] * xi[i];
        self.inputs[1]->grad_buffer()[bc] += acc;
      }
      if (wants_grad(self, 2)) {
        T acc = 0;
        for (std::size_t i = 0; i < inner; ++i) acc += go[i];
        self.inputs[2]->grad_buffer()[bc] += acc;
      }
    }
  });
}

}  // namespace qscnet::ag
