#ifndef MRN_LAYERS_HPP
#define MRN_LAYERS_HPP

#include "mrn/params.hpp"

namespace mrn {

// Stride-1 same-padding convolution, kernel 1/3/5. Weight layout is
// (out_channels, in_channels, k, k); bias is stored as (1, out_channels, 1, 1).
template <typename T>
struct Conv2d {
  int in_ch = 0, out_ch = 0, k = 1;
  ArrayPtr<T> weight;
  ArrayPtr<T> bias;

  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& prefix, int in_channels, int out_channels,
         int kernel, std::mt19937_64& rng)
      : in_ch(in_channels), out_ch(out_channels), k(kernel) {
    check(kernel == 1 || kernel == 3 || kernel == 5,
          "Conv2d: kernel must be 1, 3 or 5, got " + std::to_string(kernel));
    weight = store.create(prefix + ".weight", out_channels, in_channels, kernel, kernel);
    bias = store.create(prefix + ".bias", 1, out_channels, 1, 1);
    init_fan_in(*weight, in_channels * kernel * kernel, rng);
  }

  ArrayPtr<T> forward(const ArrayPtr<T>& x, Tape<T>* tape) const {
    check(x->c == in_ch, "conv2d: input has " + std::to_string(x->c) + " channels, spec expects " +
                             std::to_string(in_ch));
    const int n = x->n, h = x->h, w = x->w, p = k / 2;
    auto out = make_array<T>(n, out_ch, h, w);
    const T* xv = x->val.data();
    const T* wv = weight->val.data();
    T* ov = out->val.data();
    for (int in = 0; in < n; ++in) {
      for (int co = 0; co < out_ch; ++co) {
        T* oplane = ov + (static_cast<size_t>(in) * out_ch + co) * h * w;
        T b = bias->val[co];
        for (int i = 0; i < h * w; ++i) oplane[i] = b;
        for (int ci = 0; ci < in_ch; ++ci) {
          const T* xplane = xv + (static_cast<size_t>(in) * in_ch + ci) * h * w;
          const T* wk = wv + (static_cast<size_t>(co) * in_ch + ci) * k * k;
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              T wgt = wk[ky * k + kx];
              int y0 = std::max(0, p - ky), y1 = std::min(h, h + p - ky);
              int x0 = std::max(0, p - kx), x1 = std::min(w, w + p - kx);
              for (int y = y0; y < y1; ++y) {
                const T* xr = xplane + (y + ky - p) * w + (kx - p);
                T* orow = oplane + y * w;
                for (int xo = x0; xo < x1; ++xo) orow[xo] += wgt * xr[xo];
              }
            }
          }
        }
      }
    }
    if (tape) {
      auto xs = x, ws = weight, bs = bias, os = out;
      int kk = k, ich = in_ch, och = out_ch;
      tape->record([xs, ws, bs, os, kk, ich, och]() {
        if (os->grad.empty()) return;  // output unused by the loss
        xs->ensure_grad();
        ws->ensure_grad();
        bs->ensure_grad();
        const int n = xs->n, h = xs->h, w = xs->w, p = kk / 2;
        const T* gv = os->grad.data();
        const T* xv = xs->val.data();
        const T* wv = ws->val.data();
        T* gx = xs->grad.data();
        T* gw = ws->grad.data();
        for (int in = 0; in < n; ++in) {
          for (int co = 0; co < och; ++co) {
            const T* gplane = gv + (static_cast<size_t>(in) * och + co) * h * w;
            T acc = 0;
            for (int i = 0; i < h * w; ++i) acc += gplane[i];
            bs->grad[co] += acc;
            for (int ci = 0; ci < ich; ++ci) {
              const T* xplane = xv + (static_cast<size_t>(in) * ich + ci) * h * w;
              T* gxplane = gx + (static_cast<size_t>(in) * ich + ci) * h * w;
              const T* wk = wv + (static_cast<size_t>(co) * ich + ci) * kk * kk;
              T* gwk = gw + (static_cast<size_t>(co) * ich + ci) * kk * kk;
              for (int ky = 0; ky < kk; ++ky) {
                for (int kx = 0; kx < kk; ++kx) {
                  T wgt = wk[ky * kk + kx];
                  T wacc = 0;
                  int y0 = std::max(0, p - ky), y1 = std::min(h, h + p - ky);
                  int x0 = std::max(0, p - kx), x1 = std::min(w, w + p - kx);
                  for (int y = y0; y < y1; ++y) {
                    const T* grow = gplane + y * w;
                    const T* xr = xplane + (y + ky - p) * w + (kx - p);
                    T* gxr = gxplane + (y + ky - p) * w + (kx - p);
                    for (int xo = x0; xo < x1; ++xo) {
                      wacc += grow[xo] * xr[xo];
                      gxr[xo] += wgt * grow[xo];
                    }
                  }
                  gwk[ky * kk + kx] += wacc;
                }
              }
            }
          }
        }
      });
    }
    return out;
  }
};

// 2x2 stride-2 transposed convolution: exact 2x upsampling, the adjoint of a
// stride-2 convolution. Weight layout is (in_channels, out_channels, 2, 2).
// With kernel == stride the output windows do not overlap.
template <typename T>
struct TransConv2d {
  int in_ch = 0, out_ch = 0;
  ArrayPtr<T> weight;
  ArrayPtr<T> bias;

  TransConv2d() = default;
  TransConv2d(ParamStore<T>& store, const std::string& prefix, int in_channels, int out_channels,
              std::mt19937_64& rng)
      : in_ch(in_channels), out_ch(out_channels) {
    weight = store.create(prefix + ".weight", in_channels, out_channels, 2, 2);
    bias = store.create(prefix + ".bias", 1, out_channels, 1, 1);
    init_fan_in(*weight, in_channels, rng);
  }

  ArrayPtr<T> forward(const ArrayPtr<T>& x, Tape<T>* tape) const {
    check(x->c == in_ch, "transconv2d: input has " + std::to_string(x->c) +
                             " channels, spec expects " + std::to_string(in_ch));
    const int n = x->n, h = x->h, w = x->w;
    auto out = make_array<T>(n, out_ch, 2 * h, 2 * w);
    for (int in = 0; in < n; ++in) {
      for (int co = 0; co < out_ch; ++co) {
        T* oplane = out->val.data() + (static_cast<size_t>(in) * out_ch + co) * 4 * h * w;
        T b = bias->val[co];
        for (int i = 0; i < 4 * h * w; ++i) oplane[i] = b;
        for (int ci = 0; ci < in_ch; ++ci) {
          const T* xplane = x->val.data() + (static_cast<size_t>(in) * in_ch + ci) * h * w;
          const T* wk = weight->val.data() + (static_cast<size_t>(ci) * out_ch + co) * 4;
          for (int y = 0; y < h; ++y) {
            T* o0 = oplane + (2 * y) * (2 * w);
            T* o1 = oplane + (2 * y + 1) * (2 * w);
            const T* xr = xplane + y * w;
            for (int xo = 0; xo < w; ++xo) {
              T v = xr[xo];
              o0[2 * xo] += v * wk[0];
              o0[2 * xo + 1] += v * wk[1];
              o1[2 * xo] += v * wk[2];
              o1[2 * xo + 1] += v * wk[3];
            }
          }
        }
      }
    }
    if (tape) {
      auto xs = x, ws = weight, bs = bias, os = out;
      int ich = in_ch, och = out_ch;
      tape->record([xs, ws, bs, os, ich, och]() {
        if (os->grad.empty()) return;
        xs->ensure_grad();
        ws->ensure_grad();
        bs->ensure_grad();
        const int n = xs->n, h = xs->h, w = xs->w;
        for (int in = 0; in < n; ++in) {
          for (int co = 0; co < och; ++co) {
            const T* gplane = os->grad.data() + (static_cast<size_t>(in) * och + co) * 4 * h * w;
            T acc = 0;
            for (int i = 0; i < 4 * h * w; ++i) acc += gplane[i];
            bs->grad[co] += acc;
            for (int ci = 0; ci < ich; ++ci) {
              const T* xplane = xs->val.data() + (static_cast<size_t>(in) * ich + ci) * h * w;
              T* gxplane = xs->grad.data() + (static_cast<size_t>(in) * ich + ci) * h * w;
              const T* wk = ws->val.data() + (static_cast<size_t>(ci) * och + co) * 4;
              T* gwk = ws->grad.data() + (static_cast<size_t>(ci) * och + co) * 4;
              T gw0 = 0, gw1 = 0, gw2 = 0, gw3 = 0;
              for (int y = 0; y < h; ++y) {
                const T* g0 = gplane + (2 * y) * (2 * w);
                const T* g1 = gplane + (2 * y + 1) * (2 * w);
                const T* xr = xplane + y * w;
                T* gxr = gxplane + y * w;
                for (int xo = 0; xo < w; ++xo) {
                  T a = g0[2 * xo], b2 = g0[2 * xo + 1];
                  T c2 = g1[2 * xo], d = g1[2 * xo + 1];
                  gxr[xo] += a * wk[0] + b2 * wk[1] + c2 * wk[2] + d * wk[3];
                  T v = xr[xo];
                  gw0 += a * v;
                  gw1 += b2 * v;
                  gw2 += c2 * v;
                  gw3 += d * v;
                }
              }
              gwk[0] += gw0;
              gwk[1] += gw1;
              gwk[2] += gw2;
              gwk[3] += gw3;
            }
          }
        }
      });
    }
    return out;
  }
};

// 2x2 max pooling, stride 2. Gradient routes to the argmax of each window;
// ties break to the first element in row-major order.
template <typename T>
ArrayPtr<T> maxpool2(const ArrayPtr<T>& x, Tape<T>* tape) {
  check(x->h % 2 == 0 && x->w % 2 == 0,
        "maxpool2: spatial dims must be even, got " + x->shape_str());
  const int n = x->n, c = x->c, h = x->h, w = x->w, oh = h / 2, ow = w / 2;
  auto out = make_array<T>(n, c, oh, ow);
  auto argmax = std::make_shared<std::vector<int>>(out->size());
  for (int in = 0; in < n; ++in) {
    for (int ic = 0; ic < c; ++ic) {
      const T* xplane = x->val.data() + (static_cast<size_t>(in) * c + ic) * h * w;
      T* oplane = out->val.data() + (static_cast<size_t>(in) * c + ic) * oh * ow;
      int* aplane = argmax->data() + (static_cast<size_t>(in) * c + ic) * oh * ow;
      for (int y = 0; y < oh; ++y) {
        for (int xo = 0; xo < ow; ++xo) {
          int base = 2 * y * w + 2 * xo;
          int idx[4] = {base, base + 1, base + w, base + w + 1};
          int best = idx[0];
          T bestv = xplane[idx[0]];
          for (int t = 1; t < 4; ++t) {
            if (xplane[idx[t]] > bestv) {
              bestv = xplane[idx[t]];
              best = idx[t];
            }
          }
          oplane[y * ow + xo] = bestv;
          aplane[y * ow + xo] = best;
        }
      }
    }
  }
  if (tape) {
    tape->record([x, out, argmax]() {
      if (out->grad.empty()) return;
      x->ensure_grad();
      const int n = x->n, c = x->c, h = x->h, w = x->w, oh = h / 2, ow = w / 2;
      for (int in = 0; in < n; ++in) {
        for (int ic = 0; ic < c; ++ic) {
          T* gxplane = x->grad.data() + (static_cast<size_t>(in) * c + ic) * h * w;
          const T* gplane = out->grad.data() + (static_cast<size_t>(in) * c + ic) * oh * ow;
          const int* aplane = argmax->data() + (static_cast<size_t>(in) * c + ic) * oh * ow;
          for (int i = 0; i < oh * ow; ++i) gxplane[aplane[i]] += gplane[i];
        }
      }
    });
  }
  return out;
}

// Per-channel batch normalization with learnable scale/shift and running
// statistics (momentum update follows the usual 0.1 convention: running stats
// keep an unbiased variance estimate, normalization itself uses the biased one).
template <typename T>
struct BatchNorm {
  int channels = 0;
  T momentum = T(0.1);
  T eps = T(1e-5);
  ArrayPtr<T> gamma, beta;
  ArrayPtr<T> running_mean, running_var;
  ArrayPtr<T> batches_tracked;  // 1-element buffer so it rides along in checkpoints

  BatchNorm() = default;
  BatchNorm(ParamStore<T>& store, const std::string& prefix, int ch) : channels(ch) {
    gamma = store.create(prefix + ".gamma", 1, ch, 1, 1);
    beta = store.create(prefix + ".beta", 1, ch, 1, 1);
    running_mean = store.create(prefix + ".running_mean", 1, ch, 1, 1, /*learnable=*/false);
    running_var = store.create(prefix + ".running_var", 1, ch, 1, 1, /*learnable=*/false);
    batches_tracked = store.create(prefix + ".batches_tracked", 1, 1, 1, 1, /*learnable=*/false);
    fill(*gamma, T(1));
    fill(*running_var, T(1));
  }

  bool has_stats() const { return batches_tracked->val[0] > T(0); }

  ArrayPtr<T> forward(const ArrayPtr<T>& x, Tape<T>* tape, bool training) {
    check(x->c == channels, "batchnorm: input has " + std::to_string(x->c) +
                                " channels, state has " + std::to_string(channels));
    const int n = x->n, c = x->c, h = x->h, w = x->w;
    const size_t plane = static_cast<size_t>(h) * w;
    const size_t m = static_cast<size_t>(n) * plane;  // per-channel sample count
    auto out = zeros_like(x);

    if (!training) {
      check(has_stats(),
            "batchnorm: eval mode requested before any running-stat update or checkpoint load");
      for (int ic = 0; ic < c; ++ic) {
        T mu = running_mean->val[ic];
        T inv = T(1) / std::sqrt(running_var->val[ic] + eps);
        T g = gamma->val[ic], b = beta->val[ic];
        for (int in = 0; in < n; ++in) {
          const T* xp = x->val.data() + (static_cast<size_t>(in) * c + ic) * plane;
          T* op = out->val.data() + (static_cast<size_t>(in) * c + ic) * plane;
          for (size_t i = 0; i < plane; ++i) op[i] = g * (xp[i] - mu) * inv + b;
        }
      }
      if (tape) {
        auto xs = x, os = out, gs = gamma, bs = beta, rm = running_mean, rv = running_var;
        T e = eps;
        tape->record([xs, os, gs, bs, rm, rv, e]() {
          if (os->grad.empty()) return;
          xs->ensure_grad();
          gs->ensure_grad();
          bs->ensure_grad();
          const int n = xs->n, c = xs->c;
          const size_t plane = static_cast<size_t>(xs->h) * xs->w;
          for (int ic = 0; ic < c; ++ic) {
            T mu = rm->val[ic];
            T inv = T(1) / std::sqrt(rv->val[ic] + e);
            T g = gs->val[ic];
            for (int in = 0; in < n; ++in) {
              size_t off = (static_cast<size_t>(in) * c + ic) * plane;
              for (size_t i = 0; i < plane; ++i) {
                T go = os->grad[off + i];
                xs->grad[off + i] += go * g * inv;
                gs->grad[ic] += go * (xs->val[off + i] - mu) * inv;
                bs->grad[ic] += go;
              }
            }
          }
        });
      }
      return out;
    }

    // train mode: normalize by batch statistics, update running stats
    auto mean = std::make_shared<std::vector<T>>(c);
    auto var = std::make_shared<std::vector<T>>(c);
    auto xhat = std::make_shared<std::vector<T>>(x->size());
    for (int ic = 0; ic < c; ++ic) {
      double acc = 0;
      for (int in = 0; in < n; ++in) {
        const T* xp = x->val.data() + (static_cast<size_t>(in) * c + ic) * plane;
        for (size_t i = 0; i < plane; ++i) acc += xp[i];
      }
      T mu = static_cast<T>(acc / m);
      double vacc = 0;
      for (int in = 0; in < n; ++in) {
        const T* xp = x->val.data() + (static_cast<size_t>(in) * c + ic) * plane;
        for (size_t i = 0; i < plane; ++i) {
          double d = xp[i] - mu;
          vacc += d * d;
        }
      }
      T v = static_cast<T>(vacc / m);
      (*mean)[ic] = mu;
      (*var)[ic] = v;
      T inv = T(1) / std::sqrt(v + eps);
      T g = gamma->val[ic], b = beta->val[ic];
      for (int in = 0; in < n; ++in) {
        size_t off = (static_cast<size_t>(in) * c + ic) * plane;
        for (size_t i = 0; i < plane; ++i) {
          T xh = (x->val[off + i] - mu) * inv;
          (*xhat)[off + i] = xh;
          out->val[off + i] = g * xh + b;
        }
      }
      T unbiased = m > 1 ? v * static_cast<T>(m) / static_cast<T>(m - 1) : v;
      running_mean->val[ic] = (T(1) - momentum) * running_mean->val[ic] + momentum * mu;
      running_var->val[ic] = (T(1) - momentum) * running_var->val[ic] + momentum * unbiased;
    }
    batches_tracked->val[0] += T(1);

    if (tape) {
      auto xs = x, os = out, gs = gamma, bs = beta;
      T e = eps;
      tape->record([xs, os, gs, bs, mean, var, xhat, e]() {
        if (os->grad.empty()) return;
        xs->ensure_grad();
        gs->ensure_grad();
        bs->ensure_grad();
        const int n = xs->n, c = xs->c;
        const size_t plane = static_cast<size_t>(xs->h) * xs->w;
        const size_t m = static_cast<size_t>(n) * plane;
        for (int ic = 0; ic < c; ++ic) {
          T inv = T(1) / std::sqrt((*var)[ic] + e);
          T g = gs->val[ic];
          // reduce over the channel first, then distribute
          T sum_gy = 0, sum_gy_xhat = 0;
          for (int in = 0; in < n; ++in) {
            size_t off = (static_cast<size_t>(in) * c + ic) * plane;
            for (size_t i = 0; i < plane; ++i) {
              sum_gy += os->grad[off + i];
              sum_gy_xhat += os->grad[off + i] * (*xhat)[off + i];
            }
          }
          gs->grad[ic] += sum_gy_xhat;
          bs->grad[ic] += sum_gy;
          T k1 = g * inv / static_cast<T>(m);
          for (int in = 0; in < n; ++in) {
            size_t off = (static_cast<size_t>(in) * c + ic) * plane;
            for (size_t i = 0; i < plane; ++i) {
              xs->grad[off + i] += k1 * (static_cast<T>(m) * os->grad[off + i] - sum_gy -
                                         (*xhat)[off + i] * sum_gy_xhat);
            }
          }
        }
      });
    }
    return out;
  }
};

}  // namespace mrn

#endif  // MRN_LAYERS_HPP
