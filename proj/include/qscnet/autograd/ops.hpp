#pragma once

#include <cmath>
#include <numbers>

#include "qscnet/autograd/var.hpp"

namespace qscnet::ag {

namespace detail {
inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw InvalidInput(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                       shape_string(b));
}
}  // namespace detail

template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants_grad(self, k)) continue;
      auto& g = self.inputs[k]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (wants_grad(self, 0)) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(self, 1)) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (wants_grad(self, 0)) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (wants_grad(self, 1)) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= factor;
  return make_result<T>(std::move(out), {a}, [factor](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (T v : a.value().values()) s += v;
  return make_result<T>(Tensor<T>({1}, s), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& v : g.storage()) v += self.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T{1} / static_cast<T>(a.size()));
}

/// Mean of scalar Vars.
template <typename T>
Var<T> mean_of(const std::vector<Var<T>>& scalars) {
  if (scalars.empty()) throw InvalidInput("mean_of: empty list");
  Var<T> acc = scalars.front();
  for (std::size_t i = 1; i < scalars.size(); ++i) acc = add(acc, scalars[i]);
  return scale(acc, T{1} / static_cast<T>(scalars.size()));
}

// ---------------------------------------------------------------- activations

template <typename T>
Var<T> gelu(const Var<T>& a) {
  Tensor<T> out = a.value();
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (auto& v : out.storage()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    const auto& x = self.inputs[0]->value;
    auto& g = self.inputs[0]->grad_buffer();
    constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T xi = x[i];
      const T cdf = T(0.5) * (T(1) + std::erf(xi * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * xi * xi);
      g[i] += self.grad[i] * (cdf + xi * pdf);
    }
  });
}

template <typename T>
Var<T> elu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = v > 0 ? v : std::expm1(v);
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    const auto& x = self.inputs[0]->value;
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * (x[i] > 0 ? T(1) : std::exp(x[i]));
  });
}

/// Gated linear unit over axis 1: first half * sigmoid(second half).
template <typename T>
Var<T> glu(const Var<T>& a) {
  const Shape& s = a.shape();
  if (s.size() < 2 || s[1] % 2 != 0) throw InvalidInput("glu: axis 1 must be even");
  const std::size_t outer = s[0], half = s[1] / 2;
  const std::size_t inner = shape_numel(s) / (s[0] * s[1]);
  Shape os = s;
  os[1] = half;
  Tensor<T> out(os);
  for (std::size_t b = 0; b < outer; ++b)
    for (std::size_t c = 0; c < half; ++c) {
      const T* xa = a.value().data() + (b * s[1] + c) * inner;
      const T* xb = a.value().data() + (b * s[1] + c + half) * inner;
      T* y = out.data() + (b * half + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) y[i] = xa[i] / (T(1) + std::exp(-xb[i]));
    }
  return make_result<T>(std::move(out), {a}, [outer, half, inner](Node<T>& self) {
    const auto& x = self.inputs[0]->value;
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t b = 0; b < outer; ++b)
      for (std::size_t c = 0; c < half; ++c) {
        const std::size_t ia = (b * 2 * half + c) * inner;
        const std::size_t ib = (b * 2 * half + c + half) * inner;
        const T* go = self.grad.data() + (b * half + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const T sig = T(1) / (T(1) + std::exp(-x[ib + i]));
          g[ia + i] += go[i] * sig;
          g[ib + i] += go[i] * x[ia + i] * sig * (T(1) - sig);
        }
      }
  });
}

// ---------------------------------------------------------------- shape ops

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

namespace detail {
// Decomposes a shape around `axis` into (outer, extent, inner).
inline std::tuple<std::size_t, std::size_t, std::size_t> split_axis(const Shape& s, std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, s[axis], inner};
}
}  // namespace detail

/// Elements [begin, end) along `axis`.
template <typename T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin > end || end > s[axis])
    throw InvalidInput("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                       ") out of bounds for " + shape_string(s));
  auto [outer, extent, inner] = detail::split_axis(s, axis);
  Shape os = s;
  os[axis] = end - begin;
  Tensor<T> out(os);
  const std::size_t width = (end - begin) * inner;
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a.value().data() + (o * extent + begin) * inner, width, out.data() + o * width);
  return make_result<T>(std::move(out), {a}, [outer, extent, inner, begin, width](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      T* dst = g.data() + (o * extent + begin) * inner;
      const T* src = self.grad.data() + o * width;
      for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw InvalidInput("concat: no inputs");
  Shape os = parts.front().shape();
  if (axis >= os.size()) throw InvalidInput("concat: bad axis");
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    if (ps.size() != os.size()) throw InvalidInput("concat: rank mismatch");
    total += ps[axis];
    ps[axis] = os[axis];
    if (ps != os) throw InvalidInput("concat: incompatible shapes");
  }
  os[axis] = total;
  auto [outer, extent, inner] = detail::split_axis(os, axis);
  Tensor<T> out(os);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t w = p.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.value().data() + o * w, w, out.data() + (o * extent + off) * inner);
    off += p.shape()[axis];
  }
  return make_result<T>(std::move(out), parts,
                        [outer, extent, inner, offsets, axis](Node<T>& self) {
                          for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                            if (!wants_grad(self, k)) continue;
                            auto& g = self.inputs[k]->grad_buffer();
                            const std::size_t w = self.inputs[k]->value.dim(axis) * inner;
                            for (std::size_t o = 0; o < outer; ++o) {
                              const T* src = self.grad.data() + (o * extent + offsets[k]) * inner;
                              T* dst = g.data() + o * w;
                              for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
                            }
                          }
                        });
}

/// General axis permutation: output axis i is input axis perm[i].
template <typename T>
Var<T> permute(const Var<T>& a, std::vector<std::size_t> perm) {
  const Shape& s = a.shape();
  const std::size_t r = s.size();
  if (perm.size() != r) throw InvalidInput("permute: rank mismatch");
  Shape os(r);
  for (std::size_t i = 0; i < r; ++i) os[i] = s[perm[i]];
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * s[i + 1];
  // Stride in the input for a unit step along each output axis.
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) step[i] = in_stride[perm[i]];

  auto for_each = [os, step, r](auto&& fn) {
    const std::size_t n = shape_numel(os);
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t dst = 0; dst < n; ++dst) {
      fn(dst, src);
      for (std::size_t ax = r; ax-- > 0;) {
        if (++idx[ax] < os[ax]) {
          src += step[ax];
          break;
        }
        src -= step[ax] * (os[ax] - 1);
        idx[ax] = 0;
      }
    }
  };

  Tensor<T> out(os);
  const T* x = a.value().data();
  for_each([&](std::size_t dst, std::size_t src) { out[dst] = x[src]; });
  return make_result<T>(std::move(out), {a}, [for_each](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for_each([&](std::size_t dst, std::size_t src) { g[src] += self.grad[dst]; });
  });
}

/// Repeats a batch-1 tensor k times along axis 0.
template <typename T>
Var<T> repeat_batch(const Var<T>& a, std::size_t k) {
  if (a.shape().empty() || a.shape()[0] != 1) throw InvalidInput("repeat_batch: axis 0 must be 1");
  Shape os = a.shape();
  os[0] = k;
  const std::size_t n = a.size();
  Tensor<T> out(os);
  for (std::size_t i = 0; i < k; ++i) std::copy_n(a.value().data(), n, out.data() + i * n);
  return make_result<T>(std::move(out), {a}, [k, n](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
  });
}

}  // namespace qscnet::ag
