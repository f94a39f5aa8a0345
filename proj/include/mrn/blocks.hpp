#ifndef MRN_BLOCKS_HPP
#define MRN_BLOCKS_HPP

#include <limits>

#include "mrn/layers.hpp"

namespace mrn {

// Dense Spatial Position Attention. A bank of N learnable descriptors, each
// of the input's channel dimension C, attends to every spatial position:
//
//   a_i(pos)   = softmax_i( D_i . M(pos) )
//   O(pos)     = sum_i a_i(pos) * D_i  +  M(pos)
//
// The residual add means zero descriptors reduce the block to the identity.
// Logits are max-subtracted before exponentiation; softmax is shift-invariant
// so this changes nothing but keeps exp() in range.
template <typename T>
struct Dspa {
  int dim = 0;          // channel dimension C of the block input
  int descriptors = 0;  // N
  ArrayPtr<T> bank;     // (N, C, 1, 1)
  // attention weights of the most recent forward, laid out (position, i);
  // retained so callers can audit the softmax normalization
  mutable std::shared_ptr<std::vector<T>> last_attn;

  Dspa() = default;
  Dspa(ParamStore<T>& store, const std::string& prefix, int channel_dim, int n_descriptors,
       std::mt19937_64& rng)
      : dim(channel_dim), descriptors(n_descriptors) {
    check(n_descriptors >= 1, "Dspa: descriptor count must be >= 1");
    bank = store.create(prefix + ".descriptors", n_descriptors, channel_dim, 1, 1);
    init_normal(*bank, 0.02, rng);
  }

  ArrayPtr<T> forward(const ArrayPtr<T>& m, Tape<T>* tape) const {
    check(m->c == dim, "dspa_attend: input has " + std::to_string(m->c) +
                           " channels, descriptors have dimension " + std::to_string(dim));
    const int n = m->n, c = m->c, h = m->h, w = m->w, N = descriptors;
    const size_t plane = static_cast<size_t>(h) * w;
    const size_t positions = static_cast<size_t>(n) * plane;
    auto out = zeros_like(m);
    // attention weights per (position, descriptor), kept for the backward pass
    auto attn = std::make_shared<std::vector<T>>(positions * N);
    last_attn = attn;
    const T* dv = bank->val.data();
    std::vector<T> logits(N);
    for (int in = 0; in < n; ++in) {
      for (size_t p = 0; p < plane; ++p) {
        size_t pos = static_cast<size_t>(in) * plane + p;
        size_t base = static_cast<size_t>(in) * c * plane + p;
        T maxlog = -std::numeric_limits<T>::infinity();
        for (int i = 0; i < N; ++i) {
          T dot = 0;
          const T* drow = dv + static_cast<size_t>(i) * c;
          for (int ic = 0; ic < c; ++ic) dot += drow[ic] * m->val[base + ic * plane];
          logits[i] = dot;
          if (dot > maxlog) maxlog = dot;
        }
        T denom = 0;
        for (int i = 0; i < N; ++i) {
          T e = std::exp(logits[i] - maxlog);
          (*attn)[pos * N + i] = e;
          denom += e;
        }
        T inv = T(1) / denom;
        for (int i = 0; i < N; ++i) (*attn)[pos * N + i] *= inv;
        for (int ic = 0; ic < c; ++ic) {
          T acc = m->val[base + ic * plane];
          for (int i = 0; i < N; ++i)
            acc += (*attn)[pos * N + i] * dv[static_cast<size_t>(i) * c + ic];
          out->val[base + ic * plane] = acc;
        }
      }
    }
    if (tape) {
      auto ms = m, os = out, ds = bank;
      int N_cap = N;
      tape->record([ms, os, ds, attn, N_cap]() {
        if (os->grad.empty()) return;  // output unused by the loss
        ms->ensure_grad();
        ds->ensure_grad();
        const int n = ms->n, c = ms->c, N = N_cap;
        const size_t plane = static_cast<size_t>(ms->h) * ms->w;
        const T* dv = ds->val.data();
        std::vector<T> ga(N);  // dL/da at one position
        std::vector<T> gz(N);  // dL/dlogit at one position
        for (int in = 0; in < n; ++in) {
          for (size_t p = 0; p < plane; ++p) {
            size_t pos = static_cast<size_t>(in) * plane + p;
            size_t base = static_cast<size_t>(in) * c * plane + p;
            const T* a = attn->data() + pos * N;
            // residual path
            for (int ic = 0; ic < c; ++ic) ms->grad[base + ic * plane] += os->grad[base + ic * plane];
            // dL/da_i = D_i . g ;  softmax backward: gz = a * (ga - a.ga)
            T dot_a_ga = 0;
            for (int i = 0; i < N; ++i) {
              T acc = 0;
              const T* drow = dv + static_cast<size_t>(i) * c;
              for (int ic = 0; ic < c; ++ic) acc += drow[ic] * os->grad[base + ic * plane];
              ga[i] = acc;
              dot_a_ga += a[i] * acc;
            }
            for (int i = 0; i < N; ++i) gz[i] = a[i] * (ga[i] - dot_a_ga);
            // logit path into M and both paths into the descriptors
            for (int i = 0; i < N; ++i) {
              const T* drow = dv + static_cast<size_t>(i) * c;
              T* gdrow = ds->grad.data() + static_cast<size_t>(i) * c;
              T z = gz[i], ai = a[i];
              for (int ic = 0; ic < c; ++ic) {
                ms->grad[base + ic * plane] += z * drow[ic];
                gdrow[ic] += ai * os->grad[base + ic * plane] + z * ms->val[base + ic * plane];
              }
            }
          }
        }
      });
    }
    return out;
  }
};

// Cascade Multi-Scale Convolution:
//
//   X1 = Conv5x5(X)
//   X2 = Conv3x3(X + X1)
//   X3 = Conv1x1(X + X2)
//   Y  = Conv1x1(Concat(X, X1, X2, X3))
//
// The three branch convolutions preserve the channel count so the running
// sums are well-formed; the fusion maps 4C -> C_out.
template <typename T>
struct CascadeMsc {
  int channels = 0, out_channels = 0;
  Conv2d<T> conv5, conv3, conv1, fuse;

  CascadeMsc() = default;
  CascadeMsc(ParamStore<T>& store, const std::string& prefix, int ch, int out_ch,
             std::mt19937_64& rng)
      : channels(ch),
        out_channels(out_ch),
        conv5(store, prefix + ".conv5", ch, ch, 5, rng),
        conv3(store, prefix + ".conv3", ch, ch, 3, rng),
        conv1(store, prefix + ".conv1", ch, ch, 1, rng),
        fuse(store, prefix + ".fuse", 4 * ch, out_ch, 1, rng) {}

  ArrayPtr<T> forward(const ArrayPtr<T>& x, Tape<T>* tape) const {
    check(x->c == channels, "cascade_msc: input has " + std::to_string(x->c) +
                                " channels, block expects " + std::to_string(channels));
    auto x1 = conv5.forward(x, tape);
    auto x2 = conv3.forward(add(x, x1, tape), tape);
    auto x3 = conv1.forward(add(x, x2, tape), tape);
    return fuse.forward(concat_channels<T>({x, x1, x2, x3}, tape), tape);
  }
};

}  // namespace mrn

#endif  // MRN_BLOCKS_HPP
