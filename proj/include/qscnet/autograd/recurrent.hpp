#pragma once

#include "qscnet/autograd/layers.hpp"

namespace qscnet::ag {

/// Weights of one LSTM direction. Gate order along the 4H axis is
/// (input, forget, cell, output).
template <typename T>
struct LstmWeights {
  Var<T> w_ih;  // [4H, D]
  Var<T> w_hh;  // [4H, H]
  Var<T> bias;  // [4H]
};

namespace detail {

template <typename T>
inline T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

// Activations of one direction, time-major.
template <typename T>
struct LstmTrace {
  RowMatrix<T> gates;  // [L*N, 4H] post-nonlinearity
  RowMatrix<T> cells;  // [L*N, H]
  RowMatrix<T> hidden; // [L*N, H]
};

template <typename T>
LstmTrace<T> lstm_direction_forward(const RowMatrix<T>& xt, std::size_t L, std::size_t N,
                                    const LstmWeights<T>& w, bool reverse) {
  const auto H = static_cast<Eigen::Index>(w.w_hh.dim(1));
  const auto D = static_cast<Eigen::Index>(w.w_ih.dim(1));
  const auto eN = static_cast<Eigen::Index>(N);
  ConstMatMap<T> wih(w.w_ih.value().data(), 4 * H, D);
  ConstMatMap<T> whh(w.w_hh.value().data(), 4 * H, H);
  LstmTrace<T> tr;
  tr.gates.noalias() = xt * wih.transpose();
  tr.gates.rowwise() += ConstRowVecMap<T>(w.bias.value().data(), 4 * H);
  tr.cells.resize(static_cast<Eigen::Index>(L) * eN, H);
  tr.hidden.resize(static_cast<Eigen::Index>(L) * eN, H);
  RowMatrix<T> h_prev = RowMatrix<T>::Zero(eN, H), c_prev = RowMatrix<T>::Zero(eN, H);
  for (std::size_t s = 0; s < L; ++s) {
    const std::size_t t = reverse ? L - 1 - s : s;
    const auto r0 = static_cast<Eigen::Index>(t * N);
    auto z = tr.gates.middleRows(r0, eN);
    z.noalias() += h_prev * whh.transpose();
    auto c = tr.cells.middleRows(r0, eN);
    auto h = tr.hidden.middleRows(r0, eN);
    for (Eigen::Index n = 0; n < eN; ++n)
      for (Eigen::Index j = 0; j < H; ++j) {
        const T ig = sigmoid(z(n, j));
        const T fg = sigmoid(z(n, H + j));
        const T gg = std::tanh(z(n, 2 * H + j));
        const T og = sigmoid(z(n, 3 * H + j));
        z(n, j) = ig;
        z(n, H + j) = fg;
        z(n, 2 * H + j) = gg;
        z(n, 3 * H + j) = og;
        const T cv = fg * c_prev(n, j) + ig * gg;
        c(n, j) = cv;
        h(n, j) = og * std::tanh(cv);
      }
    h_prev = h;
    c_prev = c;
  }
  return tr;
}

// d_hidden: [L*N, H] gradient arriving at each step's output. Accumulates
// weight gradients and returns the input gradient [L*N, D].
template <typename T>
RowMatrix<T> lstm_direction_backward(const RowMatrix<T>& xt, std::size_t L, std::size_t N,
                                     const LstmWeights<T>& w, const LstmTrace<T>& tr,
                                     const RowMatrix<T>& d_hidden, bool reverse) {
  const auto H = static_cast<Eigen::Index>(w.w_hh.dim(1));
  const auto D = static_cast<Eigen::Index>(w.w_ih.dim(1));
  const auto eN = static_cast<Eigen::Index>(N);
  ConstMatMap<T> wih(w.w_ih.value().data(), 4 * H, D);
  ConstMatMap<T> whh(w.w_hh.value().data(), 4 * H, H);
  RowMatrix<T> dz(static_cast<Eigen::Index>(L) * eN, 4 * H);
  RowMatrix<T> dh_rec = RowMatrix<T>::Zero(eN, H), dc_rec = RowMatrix<T>::Zero(eN, H);
  RowMatrix<T> dwhh = RowMatrix<T>::Zero(4 * H, H);
  for (std::size_t s = L; s-- > 0;) {
    const std::size_t t = reverse ? L - 1 - s : s;
    const auto r0 = static_cast<Eigen::Index>(t * N);
    const bool has_prev = s > 0;
    const auto rp = static_cast<Eigen::Index>((reverse ? t + 1 : t - (has_prev ? 1 : 0)) * N);
    auto a = tr.gates.middleRows(r0, eN);
    auto c = tr.cells.middleRows(r0, eN);
    auto dzt = dz.middleRows(r0, eN);
    for (Eigen::Index n = 0; n < eN; ++n)
      for (Eigen::Index j = 0; j < H; ++j) {
        const T ig = a(n, j), fg = a(n, H + j), gg = a(n, 2 * H + j), og = a(n, 3 * H + j);
        const T tc = std::tanh(c(n, j));
        const T dh = d_hidden(r0 + n, j) + dh_rec(n, j);
        const T dc = dh * og * (T(1) - tc * tc) + dc_rec(n, j);
        const T cp = has_prev ? tr.cells(rp + n, j) : T(0);
        dzt(n, j) = dc * gg * ig * (T(1) - ig);
        dzt(n, H + j) = dc * cp * fg * (T(1) - fg);
        dzt(n, 2 * H + j) = dc * ig * (T(1) - gg * gg);
        dzt(n, 3 * H + j) = dh * tc * og * (T(1) - og);
        dc_rec(n, j) = dc * fg;
      }
    dh_rec.noalias() = dzt * whh;
    if (has_prev) dwhh.noalias() += dzt.transpose() * tr.hidden.middleRows(rp, eN);
  }
  if (w.w_hh.requires_grad()) MatMap<T>(w.w_hh.node()->grad_buffer().data(), 4 * H, H) += dwhh;
  if (w.w_ih.requires_grad())
    MatMap<T>(w.w_ih.node()->grad_buffer().data(), 4 * H, D).noalias() += dz.transpose() * xt;
  if (w.bias.requires_grad())
    MatMap<T>(w.bias.node()->grad_buffer().data(), 1, 4 * H) += dz.colwise().sum();
  return dz * wih;
}

}  // namespace detail

/// Bidirectional single-layer LSTM over x [N, L, D] (N independent
/// sequences of length L). Output [N, L, 2H]: forward states then backward.
template <typename T>
Var<T> bilstm(const Var<T>& x, const LstmWeights<T>& fwd, const LstmWeights<T>& bwd) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw InvalidInput("bilstm: expected [N, L, D], got " + shape_string(s));
  const std::size_t N = s[0], L = s[1], D = s[2];
  const std::size_t H = fwd.w_hh.dim(1);
  for (const auto* w : {&fwd, &bwd})
    if (w->w_ih.shape() != Shape{4 * H, D} || w->w_hh.shape() != Shape{4 * H, H} ||
        w->bias.size() != 4 * H)
      throw InvalidInput("bilstm: weight shapes do not match input width " + std::to_string(D));

  const auto rows = static_cast<Eigen::Index>(L * N);
  RowMatrix<T> xt(rows, static_cast<Eigen::Index>(D));
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < L; ++t)
      std::copy_n(x.value().data() + (n * L + t) * D, D, xt.data() + (t * N + n) * D);

  auto tf = detail::lstm_direction_forward(xt, L, N, fwd, false);
  auto tb = detail::lstm_direction_forward(xt, L, N, bwd, true);
  Tensor<T> out({N, L, 2 * H});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < L; ++t) {
      T* dst = out.data() + (n * L + t) * 2 * H;
      std::copy_n(tf.hidden.data() + (t * N + n) * H, H, dst);
      std::copy_n(tb.hidden.data() + (t * N + n) * H, H, dst + H);
    }

  std::vector<Var<T>> inputs{x, fwd.w_ih, fwd.w_hh, fwd.bias, bwd.w_ih, bwd.w_hh, bwd.bias};
  return make_result<T>(
      std::move(out), inputs,
      [N, L, D, H, rows, xt = std::move(xt), tf = std::move(tf), tb = std::move(tb)](Node<T>& self) {
        auto weights = [&self](std::size_t k) {
          return LstmWeights<T>{Var<T>(self.inputs[k]), Var<T>(self.inputs[k + 1]),
                                Var<T>(self.inputs[k + 2])};
        };
        const auto eH = static_cast<Eigen::Index>(H);
        RowMatrix<T> dhf(rows, eH), dhb(rows, eH);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t t = 0; t < L; ++t) {
            const T* src = self.grad.data() + (n * L + t) * 2 * H;
            std::copy_n(src, H, dhf.data() + (t * N + n) * H);
            std::copy_n(src + H, H, dhb.data() + (t * N + n) * H);
          }
        RowMatrix<T> dx = detail::lstm_direction_backward(xt, L, N, weights(1), tf, dhf, false);
        dx += detail::lstm_direction_backward(xt, L, N, weights(4), tb, dhb, true);
        if (wants_grad(self, 0)) {
          auto& g = self.inputs[0]->grad_buffer();
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t t = 0; t < L; ++t) {
              const T* src = dx.data() + (t * N + n) * D;
              T* dst = g.data() + (n * L + t) * D;
              for (std::size_t d = 0; d < D; ++d) dst[d] += src[d];
            }
        }
      });
}

}  // namespace qscnet::ag
