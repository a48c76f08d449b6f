#pragma once

#include "useg/core/autograd.hpp"

#include <cassert>
#include <cmath>
#include <vector>

namespace useg {

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  assert(a->value.same_shape(b->value));
  Tensor<S> out = Tensor<S>::from_flat(a->value.shape(), a->value.flat() + b->value.flat());
  return make_op<S>(std::move(out), {a, b}, [](Node<S>& self) {
    for (int i = 0; i < 2; ++i) {
      auto& p = self.parents[static_cast<size_t>(i)];
      if (p->requires_grad) p->ensure_grad().flat() += self.grad.flat();
    }
  });
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  assert(a->value.same_shape(b->value));
  Tensor<S> out = Tensor<S>::from_flat(a->value.shape(), a->value.flat() - b->value.flat());
  return make_op<S>(std::move(out), {a, b}, [](Node<S>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->ensure_grad().flat() += self.grad.flat();
    if (self.parents[1]->requires_grad) self.parents[1]->ensure_grad().flat() -= self.grad.flat();
  });
}

template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  assert(a->value.same_shape(b->value));
  Tensor<S> out = Tensor<S>::from_flat(a->value.shape(), a->value.flat() * b->value.flat());
  return make_op<S>(std::move(out), {a, b}, [](Node<S>& self) {
    if (self.parents[0]->requires_grad)
      self.parents[0]->ensure_grad().flat() += self.grad.flat() * self.parents[1]->value.flat();
    if (self.parents[1]->requires_grad)
      self.parents[1]->ensure_grad().flat() += self.grad.flat() * self.parents[0]->value.flat();
  });
}

template <class S>
Var<S> div(const Var<S>& a, const Var<S>& b) {
  assert(a->value.same_shape(b->value));
  Tensor<S> out = Tensor<S>::from_flat(a->value.shape(), a->value.flat() / b->value.flat());
  return make_op<S>(std::move(out), {a, b}, [](Node<S>& self) {
    const auto& bv = self.parents[1]->value.flat();
    if (self.parents[0]->requires_grad) self.parents[0]->ensure_grad().flat() += self.grad.flat() / bv;
    if (self.parents[1]->requires_grad)
      self.parents[1]->ensure_grad().flat() -= self.grad.flat() * self.value.flat() / bv;
  });
}

template <class S>
Var<S> scale(const Var<S>& a, S k) {
  Tensor<S> out = Tensor<S>::from_flat(a->value.shape(), a->value.flat() * k);
  return make_op<S>(std::move(out), {a}, [k](Node<S>& self) {
    self.parents[0]->ensure_grad().flat() += self.grad.flat() * k;
  });
}

template <class S>
Var<S> add_scalar(const Var<S>& a, S k) {
  Tensor<S> out = Tensor<S>::from_flat(a->value.shape(), a->value.flat() + k);
  return make_op<S>(std::move(out), {a}, [](Node<S>& self) {
    self.parents[0]->ensure_grad().flat() += self.grad.flat();
  });
}

/// k - a.
template <class S>
Var<S> rsub(const Var<S>& a, S k) {
  Tensor<S> out = Tensor<S>::from_flat(a->value.shape(), k - a->value.flat());
  return make_op<S>(std::move(out), {a}, [](Node<S>& self) {
    self.parents[0]->ensure_grad().flat() -= self.grad.flat();
  });
}

template <class S>
Var<S> neg(const Var<S>& a) {
  return rsub(a, S(0));
}

template <class S>
Var<S> abs_(const Var<S>& a) {
  Tensor<S> out = Tensor<S>::from_flat(a->value.shape(), a->value.flat().abs());
  return make_op<S>(std::move(out), {a}, [](Node<S>& self) {
    const auto& x = self.parents[0]->value.flat();
    self.parents[0]->ensure_grad().flat() += self.grad.flat() * x.sign();
  });
}

template <class S>
Var<S> square(const Var<S>& a) {
  Tensor<S> out = Tensor<S>::from_flat(a->value.shape(), a->value.flat().square());
  return make_op<S>(std::move(out), {a}, [](Node<S>& self) {
    self.parents[0]->ensure_grad().flat() +=
        self.grad.flat() * self.parents[0]->value.flat() * S(2);
  });
}

template <class S>
Var<S> exp_(const Var<S>& a) {
  Tensor<S> out = Tensor<S>::from_flat(a->value.shape(), a->value.flat().exp());
  return make_op<S>(std::move(out), {a}, [](Node<S>& self) {
    self.parents[0]->ensure_grad().flat() += self.grad.flat() * self.value.flat();
  });
}

template <class S>
Var<S> relu(const Var<S>& a) {
  Tensor<S> out = Tensor<S>::from_flat(a->value.shape(), a->value.flat().max(S(0)));
  return make_op<S>(std::move(out), {a}, [](Node<S>& self) {
    const auto& x = self.parents[0]->value.flat();
    self.parents[0]->ensure_grad().flat() +=
        self.grad.flat() * (x > S(0)).template cast<S>();
  });
}

template <class S>
Var<S> leaky_relu(const Var<S>& a, S slope = S(0.2)) {
  Tensor<S> out =
      Tensor<S>::from_flat(a->value.shape(), a->value.flat().max(a->value.flat() * slope));
  return make_op<S>(std::move(out), {a}, [slope](Node<S>& self) {
    const auto& x = self.parents[0]->value.flat();
    self.parents[0]->ensure_grad().flat() +=
        self.grad.flat() * (x > S(0)).select(ArrayX<S>::Constant(x.size(), S(1)),
                                             ArrayX<S>::Constant(x.size(), slope));
  });
}

template <class S>
Var<S> tanh_(const Var<S>& a) {
  Tensor<S> out = Tensor<S>::from_flat(a->value.shape(), a->value.flat().tanh());
  return make_op<S>(std::move(out), {a}, [](Node<S>& self) {
    const auto& y = self.value.flat();
    self.parents[0]->ensure_grad().flat() += self.grad.flat() * (S(1) - y.square());
  });
}

template <class S>
Var<S> sigmoid_(const Var<S>& a) {
  Tensor<S> out =
      Tensor<S>::from_flat(a->value.shape(), S(1) / (S(1) + (-a->value.flat()).exp()));
  return make_op<S>(std::move(out), {a}, [](Node<S>& self) {
    const auto& y = self.value.flat();
    self.parents[0]->ensure_grad().flat() += self.grad.flat() * y * (S(1) - y);
  });
}

// ---------------------------------------------------------------------------
// Reductions and shape ops
// ---------------------------------------------------------------------------

template <class S>
Var<S> sum(const Var<S>& a) {
  Tensor<S> out = Tensor<S>::scalar(a->value.flat().sum());
  return make_op<S>(std::move(out), {a}, [](Node<S>& self) {
    self.parents[0]->ensure_grad().flat() += self.grad.at(0);
  });
}

template <class S>
Var<S> mean(const Var<S>& a) {
  const S inv = S(1) / static_cast<S>(a->value.size());
  Tensor<S> out = Tensor<S>::scalar(a->value.flat().sum() * inv);
  return make_op<S>(std::move(out), {a}, [inv](Node<S>& self) {
    self.parents[0]->ensure_grad().flat() += self.grad.at(0) * inv;
  });
}

/// Sum over all dims except the leading (batch) one. Result shape {N}.
template <class S>
Var<S> sum_per_sample(const Var<S>& a) {
  const Index n = a->value.dim(0);
  const Index m = a->value.size() / n;
  Tensor<S> out({n});
  for (Index i = 0; i < n; ++i) out.at(i) = a->value.flat().segment(i * m, m).sum();
  return make_op<S>(std::move(out), {a}, [n, m](Node<S>& self) {
    auto& g = self.parents[0]->ensure_grad().flat();
    for (Index i = 0; i < n; ++i) g.segment(i * m, m) += self.grad.at(i);
  });
}

template <class S>
Var<S> reshape(const Var<S>& a, std::vector<Index> shape) {
  Tensor<S> out = a->value.reshaped(std::move(shape));
  return make_op<S>(std::move(out), {a}, [](Node<S>& self) {
    self.parents[0]->ensure_grad().flat() += self.grad.flat();
  });
}

/// Concatenate two NCHW tensors along the channel axis.
template <class S>
Var<S> concat_channels(const Var<S>& a, const Var<S>& b) {
  const Tensor<S>&A = a->value, &B = b->value;
  assert(A.rank() == 4 && B.rank() == 4);
  assert(A.dim(0) == B.dim(0) && A.dim(2) == B.dim(2) && A.dim(3) == B.dim(3));
  const Index n = A.dim(0), ca = A.dim(1), cb = B.dim(1), hw = A.dim(2) * A.dim(3);
  Tensor<S> out({n, ca + cb, A.dim(2), A.dim(3)});
  for (Index i = 0; i < n; ++i) {
    out.flat().segment(i * (ca + cb) * hw, ca * hw) = A.flat().segment(i * ca * hw, ca * hw);
    out.flat().segment(i * (ca + cb) * hw + ca * hw, cb * hw) =
        B.flat().segment(i * cb * hw, cb * hw);
  }
  return make_op<S>(std::move(out), {a, b}, [n, ca, cb, hw](Node<S>& self) {
    for (Index i = 0; i < n; ++i) {
      if (self.parents[0]->requires_grad)
        self.parents[0]->ensure_grad().flat().segment(i * ca * hw, ca * hw) +=
            self.grad.flat().segment(i * (ca + cb) * hw, ca * hw);
      if (self.parents[1]->requires_grad)
        self.parents[1]->ensure_grad().flat().segment(i * cb * hw, cb * hw) +=
            self.grad.flat().segment(i * (ca + cb) * hw + ca * hw, cb * hw);
    }
  });
}

// ---------------------------------------------------------------------------
// Neural-net ops
// ---------------------------------------------------------------------------

namespace detail {

/// Unfold x (C,H,W) into K with rows = C*kh*kw, cols = Ho*Wo (row-major).
template <class S>
void im2col(const S* x, Index C, Index H, Index W, Index kh, Index kw, Index stride, Index pad,
            Index Ho, Index Wo, RowMatrixX<S>& K) {
  K.setZero(C * kh * kw, Ho * Wo);
  for (Index c = 0; c < C; ++c) {
    const S* xc = x + c * H * W;
    for (Index di = 0; di < kh; ++di) {
      for (Index dj = 0; dj < kw; ++dj) {
        S* krow = K.data() + ((c * kh + di) * kw + dj) * Ho * Wo;
        for (Index oh = 0; oh < Ho; ++oh) {
          const Index ih = oh * stride - pad + di;
          if (ih < 0 || ih >= H) continue;
          const S* xrow = xc + ih * W;
          S* dst = krow + oh * Wo;
          for (Index ow = 0; ow < Wo; ++ow) {
            const Index iw = ow * stride - pad + dj;
            if (iw >= 0 && iw < W) dst[ow] = xrow[iw];
          }
        }
      }
    }
  }
}

/// Scatter-add the unfolded gradient back onto dx (C,H,W).
template <class S>
void col2im_add(const RowMatrixX<S>& K, Index C, Index H, Index W, Index kh, Index kw,
                Index stride, Index pad, Index Ho, Index Wo, S* dx) {
  for (Index c = 0; c < C; ++c) {
    S* xc = dx + c * H * W;
    for (Index di = 0; di < kh; ++di) {
      for (Index dj = 0; dj < kw; ++dj) {
        const S* krow = K.data() + ((c * kh + di) * kw + dj) * Ho * Wo;
        for (Index oh = 0; oh < Ho; ++oh) {
          const Index ih = oh * stride - pad + di;
          if (ih < 0 || ih >= H) continue;
          S* xrow = xc + ih * W;
          const S* src = krow + oh * Wo;
          for (Index ow = 0; ow < Wo; ++ow) {
            const Index iw = ow * stride - pad + dj;
            if (iw >= 0 && iw < W) xrow[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2D convolution, NCHW input, weight {Co, Ci, kh, kw}, bias {Co}.
/// im2col + GEMM on both passes; the unfold is recomputed in backward to
/// keep graph memory proportional to activations.
template <class S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, Index stride, Index pad) {
  const Tensor<S>& X = x->value;
  const Tensor<S>& Wt = w->value;
  assert(X.rank() == 4 && Wt.rank() == 4);
  assert(X.dim(1) == Wt.dim(1));
  const Index n = X.dim(0), ci = X.dim(1), h = X.dim(2), wd = X.dim(3);
  const Index co = Wt.dim(0), kh = Wt.dim(2), kw = Wt.dim(3);
  const Index ho = (h + 2 * pad - kh) / stride + 1;
  const Index wo = (wd + 2 * pad - kw) / stride + 1;
  assert(ho >= 1 && wo >= 1);
  assert(b->value.size() == co);

  Tensor<S> out({n, co, ho, wo});
  auto wm = as_matrix(Wt, co, ci * kh * kw);
  Eigen::Map<const VectorX<S>> bv(b->value.data(), co);
  RowMatrixX<S> k;
  for (Index i = 0; i < n; ++i) {
    detail::im2col(X.data() + i * ci * h * wd, ci, h, wd, kh, kw, stride, pad, ho, wo, k);
    Eigen::Map<RowMatrixX<S>> y(out.data() + i * co * ho * wo, co, ho * wo);
    y.noalias() = wm * k;
    y.colwise() += bv;
  }

  auto bwd = [stride, pad, ho, wo](Node<S>& self) {
    auto& xp = self.parents[0];
    auto& wp = self.parents[1];
    auto& bp = self.parents[2];
    const Tensor<S>& X = xp->value;
    const Index n = X.dim(0), ci = X.dim(1), h = X.dim(2), wd = X.dim(3);
    const Index co = wp->value.dim(0), kh = wp->value.dim(2), kw = wp->value.dim(3);
    auto wm = as_matrix(wp->value, co, ci * kh * kw);
    RowMatrixX<S> k, dk;
    for (Index i = 0; i < n; ++i) {
      Eigen::Map<const RowMatrixX<S>> dy(self.grad.data() + i * co * ho * wo, co, ho * wo);
      if (wp->requires_grad || bp->requires_grad) {
        detail::im2col(X.data() + i * ci * h * wd, ci, h, wd, kh, kw, stride, pad, ho, wo, k);
        if (wp->requires_grad) {
          auto dwm = as_matrix(wp->ensure_grad(), co, ci * kh * kw);
          dwm.noalias() += dy * k.transpose();
        }
        if (bp->requires_grad) {
          Eigen::Map<VectorX<S>> db(bp->ensure_grad().data(), co);
          db.noalias() += dy.rowwise().sum();
        }
      }
      if (xp->requires_grad) {
        dk.noalias() = wm.transpose() * dy;
        detail::col2im_add(dk, ci, h, wd, kh, kw, stride, pad, ho, wo,
                           xp->ensure_grad().data() + i * ci * h * wd);
      }
    }
  };
  return make_op<S>(std::move(out), {x, w, b}, std::move(bwd));
}

/// Per-instance, per-channel normalization over the spatial dims (no affine
/// parameters). Population variance, like torch InstanceNorm2d.
template <class S>
Var<S> instance_norm(const Var<S>& x, S eps = S(1e-5)) {
  const Tensor<S>& X = x->value;
  assert(X.rank() == 4);
  const Index nc = X.dim(0) * X.dim(1);
  const Index m = X.dim(2) * X.dim(3);
  Tensor<S> out(X.shape());
  Tensor<S> istd({nc});
  for (Index i = 0; i < nc; ++i) {
    auto seg = X.flat().segment(i * m, m);
    const S mu = seg.mean();
    const S var = (seg - mu).square().sum() / static_cast<S>(m);
    const S is = S(1) / std::sqrt(var + eps);
    out.flat().segment(i * m, m) = (seg - mu) * is;
    istd.at(i) = is;
  }
  auto bwd = [istd = std::move(istd), nc, m](Node<S>& self) {
    auto& g = self.parents[0]->ensure_grad().flat();
    for (Index i = 0; i < nc; ++i) {
      auto dy = self.grad.flat().segment(i * m, m);
      auto y = self.value.flat().segment(i * m, m);
      const S mdy = dy.mean();
      const S mdyy = (dy * y).mean();
      g.segment(i * m, m) += istd.at(i) * (dy - mdy - y * mdyy);
    }
  };
  return make_op<S>(std::move(out), {x}, std::move(bwd));
}

/// Fully connected layer: x {N, Di} -> {N, Do} with w {Do, Di}, b {Do}.
template <class S>
Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  const Tensor<S>& X = x->value;
  const Tensor<S>& Wt = w->value;
  assert(X.rank() == 2 && Wt.rank() == 2 && X.dim(1) == Wt.dim(1));
  const Index n = X.dim(0), di = X.dim(1), dout = Wt.dim(0);
  assert(b->value.size() == dout);
  Tensor<S> out({n, dout});
  auto xm = as_matrix(X, n, di);
  auto wm = as_matrix(Wt, dout, di);
  auto ym = as_matrix(out, n, dout);
  ym.noalias() = xm * wm.transpose();
  Eigen::Map<const VectorX<S>> bv(b->value.data(), dout);
  ym.rowwise() += bv.transpose();

  auto bwd = [n, di, dout](Node<S>& self) {
    auto dy = as_matrix(self.grad, n, dout);
    auto& xp = self.parents[0];
    auto& wp = self.parents[1];
    auto& bp = self.parents[2];
    if (xp->requires_grad) {
      auto dx = as_matrix(xp->ensure_grad(), n, di);
      dx.noalias() += dy * as_matrix(wp->value, dout, di);
    }
    if (wp->requires_grad) {
      auto dw = as_matrix(wp->ensure_grad(), dout, di);
      dw.noalias() += dy.transpose() * as_matrix(xp->value, n, di);
    }
    if (bp->requires_grad) {
      Eigen::Map<VectorX<S>> db(bp->ensure_grad().data(), dout);
      db.noalias() += dy.colwise().sum().transpose();
    }
  };
  return make_op<S>(std::move(out), {x, w, b}, std::move(bwd));
}

/// Spatial mean per channel: {N,C,H,W} -> {N,C}.
template <class S>
Var<S> global_avg_pool(const Var<S>& x) {
  const Tensor<S>& X = x->value;
  assert(X.rank() == 4);
  const Index nc = X.dim(0) * X.dim(1);
  const Index m = X.dim(2) * X.dim(3);
  Tensor<S> out({X.dim(0), X.dim(1)});
  for (Index i = 0; i < nc; ++i) out.at(i) = X.flat().segment(i * m, m).mean();
  return make_op<S>(std::move(out), {x}, [nc, m](Node<S>& self) {
    auto& g = self.parents[0]->ensure_grad().flat();
    const S inv = S(1) / static_cast<S>(m);
    for (Index i = 0; i < nc; ++i) g.segment(i * m, m) += self.grad.at(i) * inv;
  });
}

/// Nearest-neighbor 2x upsampling.
template <class S>
Var<S> upsample_nearest2(const Var<S>& x) {
  const Tensor<S>& X = x->value;
  assert(X.rank() == 4);
  const Index n = X.dim(0), c = X.dim(1), h = X.dim(2), w = X.dim(3);
  Tensor<S> out({n, c, 2 * h, 2 * w});
  for (Index i = 0; i < n * c; ++i) {
    const S* src = X.data() + i * h * w;
    S* dst = out.data() + i * 4 * h * w;
    for (Index r = 0; r < h; ++r) {
      for (Index col = 0; col < w; ++col) {
        const S v = src[r * w + col];
        S* d = dst + 2 * r * 2 * w + 2 * col;
        d[0] = v;
        d[1] = v;
        d[2 * w] = v;
        d[2 * w + 1] = v;
      }
    }
  }
  return make_op<S>(std::move(out), {x}, [n, c, h, w](Node<S>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (Index i = 0; i < n * c; ++i) {
      const S* src = self.grad.data() + i * 4 * h * w;
      S* dst = g.data() + i * h * w;
      for (Index r = 0; r < h; ++r) {
        for (Index col = 0; col < w; ++col) {
          dst[r * w + col] += src[2 * r * 2 * w + 2 * col] + src[2 * r * 2 * w + 2 * col + 1] +
                              src[(2 * r + 1) * 2 * w + 2 * col] +
                              src[(2 * r + 1) * 2 * w + 2 * col + 1];
        }
      }
    }
  });
}

/// Channel-wise scaling: y(n,c,·,·) = x(n,c,·,·) * s(n,c).
template <class S>
Var<S> channel_scale(const Var<S>& x, const Var<S>& s) {
  const Tensor<S>& X = x->value;
  assert(X.rank() == 4 && s->value.rank() == 2);
  assert(s->value.dim(0) == X.dim(0) && s->value.dim(1) == X.dim(1));
  const Index nc = X.dim(0) * X.dim(1);
  const Index m = X.dim(2) * X.dim(3);
  Tensor<S> out(X.shape());
  for (Index i = 0; i < nc; ++i)
    out.flat().segment(i * m, m) = X.flat().segment(i * m, m) * s->value.at(i);
  return make_op<S>(std::move(out), {x, s}, [nc, m](Node<S>& self) {
    auto& xp = self.parents[0];
    auto& sp = self.parents[1];
    for (Index i = 0; i < nc; ++i) {
      auto dy = self.grad.flat().segment(i * m, m);
      if (xp->requires_grad)
        xp->ensure_grad().flat().segment(i * m, m) += dy * sp->value.at(i);
      if (sp->requires_grad)
        sp->ensure_grad().at(i) += (dy * xp->value.flat().segment(i * m, m)).sum();
    }
  });
}

}  // namespace useg
