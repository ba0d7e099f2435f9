#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <utility>
#include <vector>

#include "mno/tensor.hpp"

namespace mno {

// Reverse-mode tape. Every primitive computes its value eagerly and records
// a closure that scatters the output adjoint onto its parents. Node ids are
// created in topological order, so one reverse sweep over ids is a reverse
// topological traversal. A tape can be differentiated once; training
// re-records a fresh tape each step.
class Tape {
 public:
  int leaf(Tensor value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, {}, nullptr);
  }

  const Tensor& val(int id) const { return nodes_[check(id)].value; }

  const Tensor& grad(int id) const {
    const Node& n = nodes_[check(id)];
    if (!n.requires_grad) throw Error("grad requested for a node that does not require it");
    return n.grad;
  }

  void backward(int loss_id) {
    if (consumed_) throw Error("tape already differentiated; re-record before calling backward again");
    consumed_ = true;
    Node& loss = nodes_[check(loss_id)];
    if (loss.value.numel() != 1) throw Error("backward requires a scalar loss node");
    if (!loss.requires_grad) throw Error("loss does not depend on any differentiable leaf");
    for (auto& n : nodes_)
      if (n.requires_grad) n.grad = Tensor::zeros(n.value.shape);
    loss.grad[0] = 1.0;
    for (int id = loss_id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.requires_grad || !n.back) continue;
      n.back(*this, id);
    }
  }

  size_t size() const { return nodes_.size(); }

  // ---- primitives ----

  int add(int a, int b) {
    const Tensor &va = val(a), &vb = val(b);
    ensure_same_shape(va, vb, "tape add");
    Tensor out = va + vb;
    return push(std::move(out), needs(a) || needs(b), {a, b}, [](Tape& t, int id) {
      const Tensor& g = t.node(id).grad;
      t.accumulate(t.node(id).parents[0], g);
      t.accumulate(t.node(id).parents[1], g);
    });
  }

  int sub(int a, int b) {
    const Tensor &va = val(a), &vb = val(b);
    ensure_same_shape(va, vb, "tape sub");
    Tensor out = va - vb;
    return push(std::move(out), needs(a) || needs(b), {a, b}, [](Tape& t, int id) {
      const Tensor& g = t.node(id).grad;
      t.accumulate(t.node(id).parents[0], g);
      t.accumulate_scaled(t.node(id).parents[1], g, -1.0);
    });
  }

  int mul(int a, int b) {
    const Tensor &va = val(a), &vb = val(b);
    ensure_same_shape(va, vb, "tape mul");
    Tensor out(va.shape);
    for (int64_t i = 0; i < va.numel(); ++i) out[i] = va[i] * vb[i];
    return push(std::move(out), needs(a) || needs(b), {a, b}, [](Tape& t, int id) {
      const Node& n = t.node(id);
      const Tensor& g = n.grad;
      const Tensor& va = t.val(n.parents[0]);
      const Tensor& vb = t.val(n.parents[1]);
      if (t.needs(n.parents[0])) {
        Tensor ga(va.shape);
        for (int64_t i = 0; i < va.numel(); ++i) ga[i] = g[i] * vb[i];
        t.accumulate(n.parents[0], ga);
      }
      if (t.needs(n.parents[1])) {
        Tensor gb(vb.shape);
        for (int64_t i = 0; i < vb.numel(); ++i) gb[i] = g[i] * va[i];
        t.accumulate(n.parents[1], gb);
      }
    });
  }

  // Elementwise a / max(b, floor). Where b falls at or below the floor the
  // denominator is treated as the constant floor, so no gradient reaches b.
  int div_floored(int a, int b, double floor) {
    const Tensor &va = val(a), &vb = val(b);
    ensure_same_shape(va, vb, "tape div");
    Tensor out(va.shape);
    for (int64_t i = 0; i < va.numel(); ++i) out[i] = va[i] / std::max(vb[i], floor);
    return push(std::move(out), needs(a) || needs(b), {a, b}, [floor](Tape& t, int id) {
      const Node& n = t.node(id);
      const Tensor& g = n.grad;
      const Tensor& va = t.val(n.parents[0]);
      const Tensor& vb = t.val(n.parents[1]);
      if (t.needs(n.parents[0])) {
        Tensor ga(va.shape);
        for (int64_t i = 0; i < va.numel(); ++i) ga[i] = g[i] / std::max(vb[i], floor);
        t.accumulate(n.parents[0], ga);
      }
      if (t.needs(n.parents[1])) {
        Tensor gb(vb.shape);
        for (int64_t i = 0; i < vb.numel(); ++i) {
          if (vb[i] > floor) {
            double d = vb[i];
            gb[i] = -g[i] * va[i] / (d * d);
          } else {
            gb[i] = 0.0;
          }
        }
        t.accumulate(n.parents[1], gb);
      }
    });
  }

  int add_scalar(int a, double c) {
    Tensor out(val(a).shape);
    const Tensor& va = val(a);
    for (int64_t i = 0; i < va.numel(); ++i) out[i] = va[i] + c;
    return push(std::move(out), needs(a), {a},
                [](Tape& t, int id) { t.accumulate(t.node(id).parents[0], t.node(id).grad); });
  }

  int mul_scalar(int a, double c) {
    Tensor out(val(a).shape);
    const Tensor& va = val(a);
    for (int64_t i = 0; i < va.numel(); ++i) out[i] = va[i] * c;
    return push(std::move(out), needs(a), {a}, [c](Tape& t, int id) {
      t.accumulate_scaled(t.node(id).parents[0], t.node(id).grad, c);
    });
  }

  int neg(int a) { return mul_scalar(a, -1.0); }

  int exp_(int a) {
    const Tensor& va = val(a);
    Tensor out(va.shape);
    for (int64_t i = 0; i < va.numel(); ++i) out[i] = std::exp(va[i]);
    return push(std::move(out), needs(a), {a}, [](Tape& t, int id) {
      const Node& n = t.node(id);
      Tensor ga(n.value.shape);
      for (int64_t i = 0; i < n.value.numel(); ++i) ga[i] = n.grad[i] * n.value[i];
      t.accumulate(n.parents[0], ga);
    });
  }

  int log_(int a) {
    const Tensor& va = val(a);
    Tensor out(va.shape);
    for (int64_t i = 0; i < va.numel(); ++i) {
      if (va[i] <= 0.0) throw NumericError("tape log: non-positive input");
      out[i] = std::log(va[i]);
    }
    return push(std::move(out), needs(a), {a}, [](Tape& t, int id) {
      const Node& n = t.node(id);
      const Tensor& x = t.val(n.parents[0]);
      Tensor ga(x.shape);
      for (int64_t i = 0; i < x.numel(); ++i) ga[i] = n.grad[i] / x[i];
      t.accumulate(n.parents[0], ga);
    });
  }

  int square(int a) {
    const Tensor& va = val(a);
    Tensor out(va.shape);
    for (int64_t i = 0; i < va.numel(); ++i) out[i] = va[i] * va[i];
    return push(std::move(out), needs(a), {a}, [](Tape& t, int id) {
      const Node& n = t.node(id);
      const Tensor& x = t.val(n.parents[0]);
      Tensor ga(x.shape);
      for (int64_t i = 0; i < x.numel(); ++i) ga[i] = 2.0 * x[i] * n.grad[i];
      t.accumulate(n.parents[0], ga);
    });
  }

  // Gradient floor keeps the adjoint bounded when the argument reaches 0.
  int sqrt_(int a) {
    const Tensor& va = val(a);
    Tensor out(va.shape);
    for (int64_t i = 0; i < va.numel(); ++i) {
      if (va[i] < 0.0) throw NumericError("tape sqrt: negative input");
      out[i] = std::sqrt(va[i]);
    }
    return push(std::move(out), needs(a), {a}, [](Tape& t, int id) {
      const Node& n = t.node(id);
      Tensor ga(n.value.shape);
      for (int64_t i = 0; i < n.value.numel(); ++i)
        ga[i] = 0.5 * n.grad[i] / std::max(n.value[i], 1e-12);
      t.accumulate(n.parents[0], ga);
    });
  }

  int pow_scalar(int a, double p) {
    const Tensor& va = val(a);
    Tensor out(va.shape);
    for (int64_t i = 0; i < va.numel(); ++i) {
      if (va[i] < 0.0 && p != std::floor(p))
        throw NumericError("tape pow: negative base with fractional exponent");
      out[i] = std::pow(va[i], p);
    }
    return push(std::move(out), needs(a), {a}, [p](Tape& t, int id) {
      const Node& n = t.node(id);
      const Tensor& x = t.val(n.parents[0]);
      Tensor ga(x.shape);
      for (int64_t i = 0; i < x.numel(); ++i) ga[i] = n.grad[i] * p * std::pow(x[i], p - 1.0);
      t.accumulate(n.parents[0], ga);
    });
  }

  int abs_(int a) {
    const Tensor& va = val(a);
    Tensor out(va.shape);
    for (int64_t i = 0; i < va.numel(); ++i) out[i] = std::abs(va[i]);
    return push(std::move(out), needs(a), {a}, [](Tape& t, int id) {
      const Node& n = t.node(id);
      const Tensor& x = t.val(n.parents[0]);
      Tensor ga(x.shape);
      for (int64_t i = 0; i < x.numel(); ++i)
        ga[i] = n.grad[i] * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
      t.accumulate(n.parents[0], ga);
    });
  }

  // tanh-form GELU with its exact derivative
  int gelu(int a) {
    const Tensor& va = val(a);
    Tensor out(va.shape);
    for (int64_t i = 0; i < va.numel(); ++i) out[i] = gelu_val(va[i]);
    return push(std::move(out), needs(a), {a}, [](Tape& t, int id) {
      const Node& n = t.node(id);
      const Tensor& x = t.val(n.parents[0]);
      Tensor ga(x.shape);
      for (int64_t i = 0; i < x.numel(); ++i) ga[i] = n.grad[i] * gelu_grad(x[i]);
      t.accumulate(n.parents[0], ga);
    });
  }

  int clamp(int a, double lo, double hi) {
    const Tensor& va = val(a);
    Tensor out(va.shape);
    for (int64_t i = 0; i < va.numel(); ++i) out[i] = std::min(std::max(va[i], lo), hi);
    return push(std::move(out), needs(a), {a}, [lo, hi](Tape& t, int id) {
      const Node& n = t.node(id);
      const Tensor& x = t.val(n.parents[0]);
      Tensor ga(x.shape);
      for (int64_t i = 0; i < x.numel(); ++i)
        ga[i] = (x[i] >= lo && x[i] <= hi) ? n.grad[i] : 0.0;
      t.accumulate(n.parents[0], ga);
    });
  }

  // x scaled by a 1-element node (the temporal gate path)
  int scale_by(int x, int s) {
    const Tensor& vx = val(x);
    const Tensor& vs = val(s);
    if (vs.numel() != 1) throw Error("scale_by: scale must be a 1-element node");
    Tensor out(vx.shape);
    for (int64_t i = 0; i < vx.numel(); ++i) out[i] = vx[i] * vs[0];
    return push(std::move(out), needs(x) || needs(s), {x, s}, [](Tape& t, int id) {
      const Node& n = t.node(id);
      const Tensor& vx = t.val(n.parents[0]);
      const Tensor& vs = t.val(n.parents[1]);
      if (t.needs(n.parents[0])) t.accumulate_scaled(n.parents[0], n.grad, vs[0]);
      if (t.needs(n.parents[1])) {
        double g = 0.0;
        for (int64_t i = 0; i < vx.numel(); ++i) g += n.grad[i] * vx[i];
        Tensor gs(Shape{1});
        gs[0] = g;
        t.accumulate(n.parents[1], gs);
      }
    });
  }

  // y[b,o,j] = sum_i w[o,i] x[b,i,j] + bias[o]
  int linear_channels(int x, int w, int b) {
    const Tensor& vx = val(x);
    const Tensor& vw = val(w);
    const Tensor& vb = val(b);
    if (vx.rank() != 3 || vw.rank() != 2 || vb.rank() != 1)
      throw Error("linear_channels: expected x[B,Ci,N], w[Co,Ci], b[Co]");
    const int64_t B = vx.dim(0), Ci = vx.dim(1), N = vx.dim(2), Co = vw.dim(0);
    if (vw.dim(1) != Ci || vb.dim(0) != Co) throw Error("linear_channels: shape mismatch");
    Tensor out(Shape{B, Co, N});
    for (int64_t bb = 0; bb < B; ++bb)
      for (int64_t o = 0; o < Co; ++o) {
        double* yrow = &out.data[static_cast<size_t>((bb * Co + o) * N)];
        for (int64_t j = 0; j < N; ++j) yrow[j] = vb[o];
        for (int64_t i = 0; i < Ci; ++i) {
          double woi = vw.at2(o, i);
          if (woi == 0.0) continue;
          const double* xrow = &vx.data[static_cast<size_t>((bb * Ci + i) * N)];
          for (int64_t j = 0; j < N; ++j) yrow[j] += woi * xrow[j];
        }
      }
    return push(std::move(out), needs(x) || needs(w) || needs(b), {x, w, b},
                [](Tape& t, int id) {
                  const Node& n = t.node(id);
                  const Tensor& vx = t.val(n.parents[0]);
                  const Tensor& vw = t.val(n.parents[1]);
                  const int64_t B = vx.dim(0), Ci = vx.dim(1), N = vx.dim(2), Co = vw.dim(0);
                  const Tensor& g = n.grad;
                  if (t.needs(n.parents[0])) {
                    Tensor gx(vx.shape);
                    for (int64_t bb = 0; bb < B; ++bb)
                      for (int64_t i = 0; i < Ci; ++i) {
                        double* gxrow = &gx.data[static_cast<size_t>((bb * Ci + i) * N)];
                        for (int64_t o = 0; o < Co; ++o) {
                          double woi = vw.at2(o, i);
                          const double* grow = &g.data[static_cast<size_t>((bb * Co + o) * N)];
                          for (int64_t j = 0; j < N; ++j) gxrow[j] += woi * grow[j];
                        }
                      }
                    t.accumulate(n.parents[0], gx);
                  }
                  if (t.needs(n.parents[1])) {
                    Tensor gw(vw.shape);
                    for (int64_t bb = 0; bb < B; ++bb)
                      for (int64_t o = 0; o < Co; ++o) {
                        const double* grow = &g.data[static_cast<size_t>((bb * Co + o) * N)];
                        for (int64_t i = 0; i < Ci; ++i) {
                          const double* xrow = &vx.data[static_cast<size_t>((bb * Ci + i) * N)];
                          double s = 0.0;
                          for (int64_t j = 0; j < N; ++j) s += grow[j] * xrow[j];
                          gw.at2(o, i) += s;
                        }
                      }
                    t.accumulate(n.parents[1], gw);
                  }
                  if (t.needs(n.parents[2])) {
                    Tensor gb(Shape{Co});
                    for (int64_t bb = 0; bb < B; ++bb)
                      for (int64_t o = 0; o < Co; ++o) {
                        const double* grow = &g.data[static_cast<size_t>((bb * Co + o) * N)];
                        for (int64_t j = 0; j < N; ++j) gb[o] += grow[j];
                      }
                    t.accumulate(n.parents[2], gb);
                  }
                });
  }

  // Truncated spectral convolution over the last axis. Retains the lowest
  // `modes` nonnegative frequencies of the real transform, mixes channels
  // with complex weights w[Co,Ci,modes,2], and transforms back. Computed as
  // a direct truncated DFT, which equals fft -> truncate -> multiply ->
  // inverse fft and keeps the adjoint explicit.
  int spectral_conv(int x, int w) {
    const Tensor& vx = val(x);
    const Tensor& vw = val(w);
    if (vx.rank() != 3 || vw.rank() != 4 || vw.dim(3) != 2)
      throw Error("spectral_conv: expected x[B,Ci,N], w[Co,Ci,m,2]");
    const int64_t B = vx.dim(0), Ci = vx.dim(1), N = vx.dim(2);
    const int64_t Co = vw.dim(0), m = vw.dim(2);
    if (vw.dim(1) != Ci) throw Error("spectral_conv: channel mismatch");
    if (m > N / 2 + 1)
      throw Error("spectral_conv: " + std::to_string(m) + " modes exceed capacity " +
                  std::to_string(N / 2 + 1) + " of grid " + std::to_string(N));
    const SpectralBasis& basis = spectral_basis(N, m);
    Tensor out(Shape{B, Co, N});
    Tensor X = trunc_dft(vx, basis);  // [B,Ci,m,2]
    // Y[b,o,k] = sum_i W[o,i,k] * X[b,i,k] (complex)
    Tensor Y(Shape{B, Co, m, 2});
    mix_modes(vw, X, Y, false);
    trunc_idft_into(Y, basis, out);
    return push(std::move(out), needs(x) || needs(w), {x, w}, [](Tape& t, int id) {
      const Node& n = t.node(id);
      const Tensor& vx = t.val(n.parents[0]);
      const Tensor& vw = t.val(n.parents[1]);
      const int64_t N = vx.dim(2), m = vw.dim(2);
      const SpectralBasis& basis = spectral_basis(N, m);
      // adjoint of the inverse transform
      Tensor gY = trunc_idft_adjoint(n.grad, basis);  // [B,Co,m,2]
      if (t.needs(n.parents[0])) {
        Tensor gX(Shape{vx.dim(0), vx.dim(1), m, 2});
        mix_modes_adjoint_x(vw, gY, gX);
        Tensor gx(vx.shape);
        trunc_dft_adjoint_into(gX, basis, gx);
        t.accumulate(n.parents[0], gx);
      }
      if (t.needs(n.parents[1])) {
        Tensor X = trunc_dft(vx, basis);
        Tensor gw(vw.shape);
        mix_modes_adjoint_w(X, gY, gw);
        t.accumulate(n.parents[1], gw);
      }
    });
  }

  // replicate along a new ensemble axis: [B,C,N] -> [B,E,C,N]
  int repeat_ensemble(int x, int64_t e) {
    const Tensor& vx = val(x);
    if (vx.rank() != 3) throw Error("repeat_ensemble: expected [B,C,N]");
    const int64_t B = vx.dim(0), C = vx.dim(1), N = vx.dim(2);
    Tensor out(Shape{B, e, C, N});
    const int64_t inner = C * N;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t k = 0; k < e; ++k)
        std::copy(vx.data.begin() + b * inner, vx.data.begin() + (b + 1) * inner,
                  out.data.begin() + (b * e + k) * inner);
    return push(std::move(out), needs(x), {x}, [](Tape& t, int id) {
      const Node& n = t.node(id);
      const Tensor& g = n.grad;
      const int64_t B = g.dim(0), E = g.dim(1), inner = g.dim(2) * g.dim(3);
      Tensor gx(t.val(n.parents[0]).shape);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t k = 0; k < E; ++k) {
          const double* src = &g.data[static_cast<size_t>((b * E + k) * inner)];
          double* dst = &gx.data[static_cast<size_t>(b * inner)];
          for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
      t.accumulate(n.parents[0], gx);
    });
  }

  // mean over the ensemble axis: [B,E,C,N] -> [B,C,N]
  int mean_ensemble(int x) {
    const Tensor& vx = val(x);
    if (vx.rank() != 4) throw Error("mean_ensemble: expected [B,E,C,N]");
    const int64_t B = vx.dim(0), E = vx.dim(1), inner = vx.dim(2) * vx.dim(3);
    Tensor out(Shape{B, vx.dim(2), vx.dim(3)});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t k = 0; k < E; ++k) {
        const double* src = &vx.data[static_cast<size_t>((b * E + k) * inner)];
        double* dst = &out.data[static_cast<size_t>(b * inner)];
        for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
    for (auto& v : out.data) v /= static_cast<double>(E);
    return push(std::move(out), needs(x), {x}, [](Tape& t, int id) {
      const Node& n = t.node(id);
      const Tensor& vx = t.val(n.parents[0]);
      const int64_t B = vx.dim(0), E = vx.dim(1), inner = vx.dim(2) * vx.dim(3);
      Tensor gx(vx.shape);
      double inv = 1.0 / static_cast<double>(E);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t k = 0; k < E; ++k) {
          const double* src = &n.grad.data[static_cast<size_t>(b * inner)];
          double* dst = &gx.data[static_cast<size_t>((b * E + k) * inner)];
          for (int64_t i = 0; i < inner; ++i) dst[i] = src[i] * inv;
        }
      t.accumulate(n.parents[0], gx);
    });
  }

  // sum over the rank axis of a factor: [B,r,C,N] -> [B,C,N]
  int sum_rank_axis(int x) {
    const Tensor& vx = val(x);
    if (vx.rank() != 4) throw Error("sum_rank_axis: expected [B,r,C,N]");
    const int64_t B = vx.dim(0), R = vx.dim(1), inner = vx.dim(2) * vx.dim(3);
    Tensor out(Shape{B, vx.dim(2), vx.dim(3)});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t k = 0; k < R; ++k) {
        const double* src = &vx.data[static_cast<size_t>((b * R + k) * inner)];
        double* dst = &out.data[static_cast<size_t>(b * inner)];
        for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
    return push(std::move(out), needs(x), {x}, [](Tape& t, int id) {
      const Node& n = t.node(id);
      const Tensor& vx = t.val(n.parents[0]);
      const int64_t B = vx.dim(0), R = vx.dim(1), inner = vx.dim(2) * vx.dim(3);
      Tensor gx(vx.shape);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t k = 0; k < R; ++k) {
          const double* src = &n.grad.data[static_cast<size_t>(b * inner)];
          double* dst = &gx.data[static_cast<size_t>((b * R + k) * inner)];
          for (int64_t i = 0; i < inner; ++i) dst[i] = src[i];
        }
      t.accumulate(n.parents[0], gx);
    });
  }

  // per-item sum over all trailing axes: [B,...] -> [B]
  int sum_per_item(int x) {
    const Tensor& vx = val(x);
    if (vx.rank() < 2) throw Error("sum_per_item: expected rank >= 2");
    const int64_t B = vx.dim(0), inner = vx.numel() / B;
    Tensor out(Shape{B});
    for (int64_t b = 0; b < B; ++b) {
      double s = 0.0;
      const double* src = &vx.data[static_cast<size_t>(b * inner)];
      for (int64_t i = 0; i < inner; ++i) s += src[i];
      out[b] = s;
    }
    return push(std::move(out), needs(x), {x}, [](Tape& t, int id) {
      const Node& n = t.node(id);
      const Tensor& vx = t.val(n.parents[0]);
      const int64_t B = vx.dim(0), inner = vx.numel() / B;
      Tensor gx(vx.shape);
      for (int64_t b = 0; b < B; ++b) {
        double g = n.grad[b];
        double* dst = &gx.data[static_cast<size_t>(b * inner)];
        for (int64_t i = 0; i < inner; ++i) dst[i] = g;
      }
      t.accumulate(n.parents[0], gx);
    });
  }

  int sum_all(int x) {
    const Tensor& vx = val(x);
    Tensor out = Tensor::scalar(tensor_sum(vx));
    return push(std::move(out), needs(x), {x}, [](Tape& t, int id) {
      const Node& n = t.node(id);
      t.accumulate_broadcast(n.parents[0], n.grad[0]);
    });
  }

  int mean_all(int x) {
    const Tensor& vx = val(x);
    if (vx.numel() == 0) throw Error("mean_all of empty tensor");
    Tensor out = Tensor::scalar(tensor_mean(vx));
    const double inv = 1.0 / static_cast<double>(vx.numel());
    return push(std::move(out), needs(x), {x}, [inv](Tape& t, int id) {
      const Node& n = t.node(id);
      t.accumulate_broadcast(n.parents[0], n.grad[0] * inv);
    });
  }

  int reshape(int x, Shape s) {
    const Tensor& vx = val(x);
    if (shape_numel(s) != vx.numel()) throw Error("reshape: element count mismatch");
    Tensor out(s, vx.data);
    return push(std::move(out), needs(x), {x}, [](Tape& t, int id) {
      const Node& n = t.node(id);
      const Tensor& vx = t.val(n.parents[0]);
      Tensor gx(vx.shape, n.grad.data);
      t.accumulate(n.parents[0], gx);
    });
  }

  static double gelu_val(double x) {
    constexpr double c = 0.7978845608028653558798921198687;  // sqrt(2/pi)
    constexpr double k = 0.044715;
    double u = c * (x + k * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
  }

  static double gelu_grad(double x) {
    constexpr double c = 0.7978845608028653558798921198687;
    constexpr double k = 0.044715;
    double u = c * (x + k * x * x * x);
    double th = std::tanh(u);
    double sech2 = 1.0 - th * th;
    return 0.5 * (1.0 + th) + 0.5 * x * sech2 * c * (1.0 + 3.0 * k * x * x);
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<int> parents;
    std::function<void(Tape&, int)> back;
  };

  struct SpectralBasis {
    int64_t n = 0, m = 0;
    std::vector<double> cos_t;   // [m*n]
    std::vector<double> sin_t;   // [m*n]
    std::vector<double> alpha;   // inverse weight on the real part
    std::vector<double> gamma;   // inverse weight on the imaginary part
  };

  static const SpectralBasis& spectral_basis(int64_t n, int64_t m) {
    thread_local std::map<std::pair<int64_t, int64_t>, SpectralBasis> cache;
    auto key = std::make_pair(n, m);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    SpectralBasis b;
    b.n = n;
    b.m = m;
    b.cos_t.resize(static_cast<size_t>(m * n));
    b.sin_t.resize(static_cast<size_t>(m * n));
    const double two_pi = 6.283185307179586476925286766559;
    for (int64_t k = 0; k < m; ++k)
      for (int64_t j = 0; j < n; ++j) {
        double a = two_pi * static_cast<double>((j * k) % n) / static_cast<double>(n);
        b.cos_t[static_cast<size_t>(k * n + j)] = std::cos(a);
        b.sin_t[static_cast<size_t>(k * n + j)] = std::sin(a);
      }
    b.alpha.resize(static_cast<size_t>(m));
    b.gamma.resize(static_cast<size_t>(m));
    for (int64_t k = 0; k < m; ++k) {
      bool nyquist = (n % 2 == 0) && (k == n / 2);
      b.alpha[static_cast<size_t>(k)] = (k == 0 || nyquist) ? 1.0 / n : 2.0 / n;
      b.gamma[static_cast<size_t>(k)] = (k == 0 || nyquist) ? 0.0 : 2.0 / n;
    }
    return cache.emplace(key, std::move(b)).first->second;
  }

  // X[b,i,k] = sum_j x[b,i,j] * exp(-2 pi i j k / n), truncated to m modes
  static Tensor trunc_dft(const Tensor& x, const SpectralBasis& basis) {
    const int64_t B = x.dim(0), C = x.dim(1), N = basis.n, m = basis.m;
    Tensor X(Shape{B, C, m, 2});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t i = 0; i < C; ++i) {
        const double* row = &x.data[static_cast<size_t>((b * C + i) * N)];
        for (int64_t k = 0; k < m; ++k) {
          const double* ct = &basis.cos_t[static_cast<size_t>(k * N)];
          const double* st = &basis.sin_t[static_cast<size_t>(k * N)];
          double re = 0.0, im = 0.0;
          for (int64_t j = 0; j < N; ++j) {
            re += row[j] * ct[j];
            im -= row[j] * st[j];
          }
          X.at4(b, i, k, 0) = re;
          X.at4(b, i, k, 1) = im;
        }
      }
    return X;
  }

  static void trunc_dft_adjoint_into(const Tensor& gX, const SpectralBasis& basis, Tensor& gx) {
    const int64_t B = gX.dim(0), C = gX.dim(1), N = basis.n, m = basis.m;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t i = 0; i < C; ++i) {
        double* row = &gx.data[static_cast<size_t>((b * C + i) * N)];
        for (int64_t k = 0; k < m; ++k) {
          const double* ct = &basis.cos_t[static_cast<size_t>(k * N)];
          const double* st = &basis.sin_t[static_cast<size_t>(k * N)];
          double gre = gX.at4(b, i, k, 0), gim = gX.at4(b, i, k, 1);
          for (int64_t j = 0; j < N; ++j) row[j] += gre * ct[j] - gim * st[j];
        }
      }
  }

  // y[b,o,j] = sum_k alpha_k Yre[b,o,k] cos - gamma_k Yim[b,o,k] sin
  static void trunc_idft_into(const Tensor& Y, const SpectralBasis& basis, Tensor& y) {
    const int64_t B = Y.dim(0), C = Y.dim(1), N = basis.n, m = basis.m;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t o = 0; o < C; ++o) {
        double* row = &y.data[static_cast<size_t>((b * C + o) * N)];
        for (int64_t k = 0; k < m; ++k) {
          const double* ct = &basis.cos_t[static_cast<size_t>(k * N)];
          const double* st = &basis.sin_t[static_cast<size_t>(k * N)];
          double re = basis.alpha[static_cast<size_t>(k)] * Y.at4(b, o, k, 0);
          double im = basis.gamma[static_cast<size_t>(k)] * Y.at4(b, o, k, 1);
          for (int64_t j = 0; j < N; ++j) row[j] += re * ct[j] - im * st[j];
        }
      }
  }

  static Tensor trunc_idft_adjoint(const Tensor& g, const SpectralBasis& basis) {
    const int64_t B = g.dim(0), C = g.dim(1), N = basis.n, m = basis.m;
    Tensor gY(Shape{B, C, m, 2});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t o = 0; o < C; ++o) {
        const double* row = &g.data[static_cast<size_t>((b * C + o) * N)];
        for (int64_t k = 0; k < m; ++k) {
          const double* ct = &basis.cos_t[static_cast<size_t>(k * N)];
          const double* st = &basis.sin_t[static_cast<size_t>(k * N)];
          double sre = 0.0, sim = 0.0;
          for (int64_t j = 0; j < N; ++j) {
            sre += row[j] * ct[j];
            sim += row[j] * st[j];
          }
          gY.at4(b, o, k, 0) = basis.alpha[static_cast<size_t>(k)] * sre;
          gY.at4(b, o, k, 1) = -basis.gamma[static_cast<size_t>(k)] * sim;
        }
      }
    return gY;
  }

  // complex channel mixing Y[b,o,k] = sum_i W[o,i,k] X[b,i,k]
  static void mix_modes(const Tensor& w, const Tensor& X, Tensor& Y, bool conjugate_w) {
    const int64_t B = X.dim(0), Ci = X.dim(1), m = X.dim(2), Co = w.dim(0);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t o = 0; o < Co; ++o)
        for (int64_t k = 0; k < m; ++k) {
          double re = 0.0, im = 0.0;
          for (int64_t i = 0; i < Ci; ++i) {
            double wre = w.at4(o, i, k, 0);
            double wim = conjugate_w ? -w.at4(o, i, k, 1) : w.at4(o, i, k, 1);
            double xre = X.at4(b, i, k, 0), xim = X.at4(b, i, k, 1);
            re += wre * xre - wim * xim;
            im += wre * xim + wim * xre;
          }
          Y.at4(b, o, k, 0) = re;
          Y.at4(b, o, k, 1) = im;
        }
  }

  // adjoint wrt X: gX[b,i,k] = sum_o conj-transpose mixing of gY
  static void mix_modes_adjoint_x(const Tensor& w, const Tensor& gY, Tensor& gX) {
    const int64_t B = gY.dim(0), Co = gY.dim(1), m = gY.dim(2), Ci = gX.dim(1);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t i = 0; i < Ci; ++i)
        for (int64_t k = 0; k < m; ++k) {
          double re = 0.0, im = 0.0;
          for (int64_t o = 0; o < Co; ++o) {
            double wre = w.at4(o, i, k, 0), wim = w.at4(o, i, k, 1);
            double gre = gY.at4(b, o, k, 0), gim = gY.at4(b, o, k, 1);
            // d(Yre)/d(Xre)=wre, d(Yim)/d(Xre)=wim, d(Yre)/d(Xim)=-wim, d(Yim)/d(Xim)=wre
            re += wre * gre + wim * gim;
            im += -wim * gre + wre * gim;
          }
          gX.at4(b, i, k, 0) = re;
          gX.at4(b, i, k, 1) = im;
        }
  }

  static void mix_modes_adjoint_w(const Tensor& X, const Tensor& gY, Tensor& gw) {
    const int64_t B = X.dim(0), Ci = X.dim(1), m = X.dim(2), Co = gY.dim(1);
    for (int64_t o = 0; o < Co; ++o)
      for (int64_t i = 0; i < Ci; ++i)
        for (int64_t k = 0; k < m; ++k) {
          double re = 0.0, im = 0.0;
          for (int64_t b = 0; b < B; ++b) {
            double xre = X.at4(b, i, k, 0), xim = X.at4(b, i, k, 1);
            double gre = gY.at4(b, o, k, 0), gim = gY.at4(b, o, k, 1);
            // d(Yre)/d(wre)=xre, d(Yim)/d(wre)=xim, d(Yre)/d(wim)=-xim, d(Yim)/d(wim)=xre
            re += xre * gre + xim * gim;
            im += -xim * gre + xre * gim;
          }
          gw.at4(o, i, k, 0) = re;
          gw.at4(o, i, k, 1) = im;
        }
  }

  Node& node(int id) { return nodes_[check(id)]; }
  const Node& node(int id) const { return nodes_[check(id)]; }
  bool needs(int id) const { return nodes_[check(id)].requires_grad; }

  void accumulate(int id, const Tensor& g) {
    Node& n = node(id);
    if (!n.requires_grad) return;
    for (int64_t i = 0; i < g.numel(); ++i) n.grad[i] += g[i];
  }

  void accumulate_scaled(int id, const Tensor& g, double s) {
    Node& n = node(id);
    if (!n.requires_grad) return;
    for (int64_t i = 0; i < g.numel(); ++i) n.grad[i] += s * g[i];
  }

  void accumulate_broadcast(int id, double g) {
    Node& n = node(id);
    if (!n.requires_grad) return;
    for (auto& v : n.grad.data) v += g;
  }

  size_t check(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) throw Error("tape: invalid node id");
    return static_cast<size_t>(id);
  }

  int push(Tensor value, bool requires_grad, std::vector<int> parents,
           std::function<void(Tape&, int)> back) {
    for (int p : parents)
      if (p < 0 || static_cast<size_t>(p) >= nodes_.size())
        throw Error("tape: op references a node that does not exist yet (cycle)");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.parents = std::move(parents);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace mno
