#pragma once

#include "qscnet/autograd/layers.hpp"

// Convolutions over [B, C, F, T] feature maps. Frequency is axis 2, time is
// axis 3. Only the frequency axis is ever strided.

namespace qscnet::ag {

/// Stride-1 convolution with odd kernel [Co, Ci, kf, kt] and zero "same"
/// padding. Each kernel tap is one GEMM against a shifted view of the padded
/// input plane, so no im2col buffer is materialised.
template <typename T>
Var<T> conv2d_same(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  const Shape& s = x.shape();
  const Shape& ws = w.shape();
  if (s.size() != 4 || ws.size() != 4 || ws[1] != s[1] || bias.size() != ws[0] || ws[2] % 2 == 0 ||
      ws[3] % 2 == 0)
    throw InvalidInput("conv2d_same: input " + shape_string(s) + " kernel " + shape_string(ws));
  const std::size_t B = s[0], Ci = s[1], F = s[2], Tn = s[3];
  const std::size_t Co = ws[0], kf = ws[2], kt = ws[3];
  const std::size_t pf = kf / 2, pt = kt / 2;
  const std::size_t Tp = Tn + 2 * pt;
  const std::size_t plane = (F + 2 * pf) * Tp + kt;
  const std::size_t span = F * Tp;
  const auto eCi = static_cast<Eigen::Index>(Ci), eCo = static_cast<Eigen::Index>(Co);
  const auto eSpan = static_cast<Eigen::Index>(span);

  // Per-tap weight matrices [Co, Ci].
  auto tap_weights = [=](const Tensor<T>& wv) {
    std::vector<RowMatrix<T>> taps(kf * kt, RowMatrix<T>(eCo, eCi));
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t i = 0; i < Ci; ++i)
        for (std::size_t a = 0; a < kf; ++a)
          for (std::size_t b = 0; b < kt; ++b)
            taps[a * kt + b](static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i)) =
                wv.at(o, i, a, b);
    return taps;
  };
  auto pad_item = [=](const T* src, RowMatrix<T>& dst) {
    dst.setZero(eCi, static_cast<Eigen::Index>(plane));
    for (std::size_t c = 0; c < Ci; ++c)
      for (std::size_t f = 0; f < F; ++f)
        std::copy_n(src + (c * F + f) * Tn, Tn, dst.data() + c * plane + (f + pf) * Tp + pt);
  };

  const auto taps = tap_weights(w.value());
  Tensor<T> out({B, Co, F, Tn});
  RowMatrix<T> xpad, y(eCo, eSpan);
  for (std::size_t b = 0; b < B; ++b) {
    pad_item(x.value().data() + b * Ci * F * Tn, xpad);
    y.setZero();
    for (std::size_t a = 0; a < kf; ++a)
      for (std::size_t c = 0; c < kt; ++c) {
        const auto off = static_cast<Eigen::Index>(a * Tp + c);
        y.noalias() += taps[a * kt + c] * xpad.middleCols(off, eSpan);
      }
    T* ob = out.data() + b * Co * F * Tn;
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t t = 0; t < Tn; ++t)
          ob[(o * F + f) * Tn + t] = y(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(f * Tp + t)) +
                                     bias.value()[o];
  }

  return make_result<T>(std::move(out), {x, w, bias}, [=](Node<T>& self) {
    const auto& xv = self.inputs[0]->value;
    const bool gx = wants_grad(self, 0), gw = wants_grad(self, 1), gb = wants_grad(self, 2);
    const auto taps_b = tap_weights(self.inputs[1]->value);
    std::vector<RowMatrix<T>> dtaps;
    if (gw) dtaps.assign(kf * kt, RowMatrix<T>::Zero(eCo, eCi));
    RowMatrix<T> xpad_b, gy(eCo, eSpan), gxpad;
    for (std::size_t b = 0; b < B; ++b) {
      const T* go = self.grad.data() + b * Co * F * Tn;
      gy.setZero();
      for (std::size_t o = 0; o < Co; ++o)
        for (std::size_t f = 0; f < F; ++f)
          for (std::size_t t = 0; t < Tn; ++t)
            gy(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(f * Tp + t)) =
                go[(o * F + f) * Tn + t];
      if (gb) {
        auto& g = self.inputs[2]->grad_buffer();
        for (std::size_t o = 0; o < Co; ++o) {
          T acc = 0;
          for (std::size_t k = 0; k < F * Tn; ++k) acc += go[o * F * Tn + k];
          g[o] += acc;
        }
      }
      if (gw) pad_item(xv.data() + b * Ci * F * Tn, xpad_b);
      if (gx) gxpad.setZero(eCi, static_cast<Eigen::Index>(plane));
      for (std::size_t a = 0; a < kf; ++a)
        for (std::size_t c = 0; c < kt; ++c) {
          const auto off = static_cast<Eigen::Index>(a * Tp + c);
          if (gw) dtaps[a * kt + c].noalias() += gy * xpad_b.middleCols(off, eSpan).transpose();
          if (gx) gxpad.middleCols(off, eSpan).noalias() += taps_b[a * kt + c].transpose() * gy;
        }
      if (gx) {
        T* gxb = self.inputs[0]->grad_buffer().data() + b * Ci * F * Tn;
        for (std::size_t ci = 0; ci < Ci; ++ci)
          for (std::size_t f = 0; f < F; ++f) {
            const T* src = gxpad.data() + ci * plane + (f + pf) * Tp + pt;
            T* dst = gxb + (ci * F + f) * Tn;
            for (std::size_t t = 0; t < Tn; ++t) dst[t] += src[t];
          }
      }
    }
    if (gw) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t o = 0; o < Co; ++o)
        for (std::size_t i = 0; i < Ci; ++i)
          for (std::size_t a = 0; a < kf; ++a)
            for (std::size_t c = 0; c < kt; ++c)
              g.at(o, i, a, c) +=
                  dtaps[a * kt + c](static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i));
    }
  });
}

/// Output frequency length of a stride-s downsampling of `f` bins.
inline std::size_t downsampled_length(std::size_t f, std::size_t stride) {
  return (f + stride - 1) / stride;
}

/// Non-overlapping strided convolution along frequency: kernel [Co, Ci, s]
/// with stride s. The band is zero-padded at its top edge to a multiple of
/// s, so the output has ceil(F / s) bins. s == 1 is a pointwise convolution.
template <typename T>
Var<T> conv_down(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  const Shape& s = x.shape();
  const Shape& ws = w.shape();
  if (s.size() != 4 || ws.size() != 3 || ws[1] != s[1] || bias.size() != ws[0] || ws[2] == 0)
    throw InvalidInput("conv_down: input " + shape_string(s) + " kernel " + shape_string(ws));
  const std::size_t B = s[0], Ci = s[1], F = s[2], Tn = s[3];
  const std::size_t Co = ws[0], st = ws[2];
  const std::size_t Fo = downsampled_length(F, st);
  const auto rows = static_cast<Eigen::Index>(Ci * st);
  const auto cols = static_cast<Eigen::Index>(Fo * Tn);
  const auto eCo = static_cast<Eigen::Index>(Co);

  // gathered[(ci, j), (fo, t)] = x[ci, fo * s + j, t]
  auto gather = [=](const T* src, RowMatrix<T>& g) {
    g.setZero(rows, cols);
    for (std::size_t ci = 0; ci < Ci; ++ci)
      for (std::size_t fo = 0; fo < Fo; ++fo)
        for (std::size_t j = 0; j < st; ++j) {
          const std::size_t f = fo * st + j;
          if (f >= F) break;
          std::copy_n(src + (ci * F + f) * Tn, Tn, g.data() + (ci * st + j) * (Fo * Tn) + fo * Tn);
        }
  };

  Tensor<T> out({B, Co, Fo, Tn});
  RowMatrix<T> g;
  for (std::size_t b = 0; b < B; ++b) {
    gather(x.value().data() + b * Ci * F * Tn, g);
    MatMap<T> y(out.data() + b * Co * Fo * Tn, eCo, cols);
    y.noalias() = ConstMatMap<T>(w.value().data(), eCo, rows) * g;
    y.colwise() += ConstVecMap<T>(bias.value().data(), eCo);
  }
  return make_result<T>(std::move(out), {x, w, bias}, [=](Node<T>& self) {
    const bool gx = wants_grad(self, 0), gw = wants_grad(self, 1), gb = wants_grad(self, 2);
    ConstMatMap<T> wm(self.inputs[1]->value.data(), eCo, rows);
    RowMatrix<T> gathered, dg;
    for (std::size_t b = 0; b < B; ++b) {
      ConstMatMap<T> gy(self.grad.data() + b * Co * Fo * Tn, eCo, cols);
      if (gb) VecMap<T>(self.inputs[2]->grad_buffer().data(), eCo) += gy.rowwise().sum();
      if (gw) {
        gather(self.inputs[0]->value.data() + b * Ci * F * Tn, gathered);
        MatMap<T>(self.inputs[1]->grad_buffer().data(), eCo, rows).noalias() +=
            gy * gathered.transpose();
      }
      if (gx) {
        dg.noalias() = wm.transpose() * gy;
        T* dst = self.inputs[0]->grad_buffer().data() + b * Ci * F * Tn;
        for (std::size_t ci = 0; ci < Ci; ++ci)
          for (std::size_t fo = 0; fo < Fo; ++fo)
            for (std::size_t j = 0; j < st; ++j) {
              const std::size_t f = fo * st + j;
              if (f >= F) break;
              const T* src = dg.data() + (ci * st + j) * (Fo * Tn) + fo * Tn;
              T* d = dst + (ci * F + f) * Tn;
              for (std::size_t t = 0; t < Tn; ++t) d[t] += src[t];
            }
      }
    }
  });
}

/// Transposed counterpart of conv_down: kernel [Ci, Co, s], stride s along
/// frequency, output cropped to `out_f` bins (ceil(out_f / s) == input F).
template <typename T>
Var<T> conv_up(const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::size_t out_f) {
  const Shape& s = x.shape();
  const Shape& ws = w.shape();
  if (s.size() != 4 || ws.size() != 3 || ws[0] != s[1] || bias.size() != ws[1] || ws[2] == 0)
    throw InvalidInput("conv_up: input " + shape_string(s) + " kernel " + shape_string(ws));
  const std::size_t B = s[0], Ci = s[1], Fi = s[2], Tn = s[3];
  const std::size_t Co = ws[1], st = ws[2];
  if (downsampled_length(out_f, st) != Fi)
    throw InvalidInput("conv_up: target length " + std::to_string(out_f) + " does not invert " +
                       std::to_string(Fi) + " bins at stride " + std::to_string(st));
  const auto eCi = static_cast<Eigen::Index>(Ci);
  const auto rows = static_cast<Eigen::Index>(Co * st);
  const auto cols = static_cast<Eigen::Index>(Fi * Tn);

  Tensor<T> out({B, Co, out_f, Tn});
  RowMatrix<T> y;
  for (std::size_t b = 0; b < B; ++b) {
    y.noalias() = ConstMatMap<T>(w.value().data(), eCi, rows).transpose() *
                  ConstMatMap<T>(x.value().data() + b * Ci * Fi * Tn, eCi, cols);
    T* ob = out.data() + b * Co * out_f * Tn;
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t fi = 0; fi < Fi; ++fi)
        for (std::size_t j = 0; j < st; ++j) {
          const std::size_t f = fi * st + j;
          if (f >= out_f) break;
          const T* src = y.data() + (co * st + j) * (Fi * Tn) + fi * Tn;
          T* dst = ob + (co * out_f + f) * Tn;
          for (std::size_t t = 0; t < Tn; ++t) dst[t] = src[t] + bias.value()[co];
        }
  }
  return make_result<T>(std::move(out), {x, w, bias}, [=](Node<T>& self) {
    const bool gx = wants_grad(self, 0), gw = wants_grad(self, 1), gb = wants_grad(self, 2);
    RowMatrix<T> gy;
    for (std::size_t b = 0; b < B; ++b) {
      const T* go = self.grad.data() + b * Co * out_f * Tn;
      gy.setZero(rows, cols);
      for (std::size_t co = 0; co < Co; ++co)
        for (std::size_t fi = 0; fi < Fi; ++fi)
          for (std::size_t j = 0; j < st; ++j) {
            const std::size_t f = fi * st + j;
            if (f >= out_f) break;
            std::copy_n(go + (co * out_f + f) * Tn, Tn, gy.data() + (co * st + j) * (Fi * Tn) + fi * Tn);
          }
      if (gb) {
        auto& g = self.inputs[2]->grad_buffer();
        for (std::size_t co = 0; co < Co; ++co) {
          T acc = 0;
          for (std::size_t k = 0; k < out_f * Tn; ++k) acc += go[co * out_f * Tn + k];
          g[co] += acc;
        }
      }
      if (gw)
        MatMap<T>(self.inputs[1]->grad_buffer().data(), eCi, rows).noalias() +=
            ConstMatMap<T>(self.inputs[0]->value.data() + b * Ci * Fi * Tn, eCi, cols) *
            gy.transpose();
      if (gx)
        MatMap<T>(self.inputs[0]->grad_buffer().data() + b * Ci * Fi * Tn, eCi, cols).noalias() +=
            ConstMatMap<T>(self.inputs[1]->value.data(), eCi, rows) * gy;
    }
  });
}

}  // namespace qscnet::ag
