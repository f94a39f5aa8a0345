#ifndef MRN_ARRAY_HPP
#define MRN_ARRAY_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mrn {

// 4-D array in (batch, channel, height, width) order, row-major, with an
// optional gradient buffer of the same shape. This is the value type for
// every feature map and parameter in the network.
template <typename T>
struct Array4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> val;
  std::vector<T> grad;  // allocated lazily by backward
  std::string name;     // set for named parameters, empty otherwise

  Array4() = default;
  Array4(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), val(static_cast<size_t>(n_) * c_ * h_ * w_, T(0)) {}

  size_t size() const { return val.size(); }

  T& at(int in, int ic, int iy, int ix) {
    return val[((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  T at(int in, int ic, int iy, int ix) const {
    return val[((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  T& grad_at(int in, int ic, int iy, int ix) {
    return grad[((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix];
  }

  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), T(0));
  }
  void zero_grad() { grad.assign(val.size(), T(0)); }

  bool same_shape(const Array4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  std::string shape_str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

template <typename T>
using ArrayPtr = std::shared_ptr<Array4<T>>;

template <typename T>
ArrayPtr<T> make_array(int n, int c, int h, int w) {
  return std::make_shared<Array4<T>>(n, c, h, w);
}

template <typename T>
ArrayPtr<T> zeros_like(const ArrayPtr<T>& a) {
  return make_array<T>(a->n, a->c, a->h, a->w);
}

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Records the backward rule of every operation of one forward pass.
// Explicit and per-pass: two concurrent passes never share a tape.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  // Seeds grad(loss) = 1 and replays the recorded rules in reverse order.
  // A tape can be consumed once; grads accumulate into every array that an
  // operation touched, so a parameter used twice sums both contributions.
  void backward(const ArrayPtr<T>& loss) {
    check(!consumed_, "Tape::backward: tape already consumed");
    check(loss->n == 1 && loss->c == 1 && loss->h == 1 && loss->w == 1,
          "Tape::backward: loss must have shape (1,1,1,1), got " + loss->shape_str());
    consumed_ = true;
    loss->ensure_grad();
    loss->grad[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  bool consumed() const { return consumed_; }
  size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

namespace detail {
template <typename T>
void check_binary_shapes(const ArrayPtr<T>& a, const ArrayPtr<T>& b, const char* op) {
  check(a->same_shape(*b), std::string(op) + ": shape mismatch " + a->shape_str() +
                               " vs " + b->shape_str());
}
}  // namespace detail

template <typename T>
ArrayPtr<T> add(const ArrayPtr<T>& a, const ArrayPtr<T>& b, Tape<T>* tape) {
  detail::check_binary_shapes(a, b, "add");
  auto out = zeros_like(a);
  for (size_t i = 0; i < a->size(); ++i) out->val[i] = a->val[i] + b->val[i];
  if (tape) {
    tape->record([a, b, out]() {
      if (out->grad.empty()) return;  // output unused by the loss
      a->ensure_grad();
      b->ensure_grad();
      for (size_t i = 0; i < out->size(); ++i) {
        a->grad[i] += out->grad[i];
        b->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
ArrayPtr<T> mul(const ArrayPtr<T>& a, const ArrayPtr<T>& b, Tape<T>* tape) {
  detail::check_binary_shapes(a, b, "mul");
  auto out = zeros_like(a);
  for (size_t i = 0; i < a->size(); ++i) out->val[i] = a->val[i] * b->val[i];
  if (tape) {
    tape->record([a, b, out]() {
      if (out->grad.empty()) return;
      a->ensure_grad();
      b->ensure_grad();
      for (size_t i = 0; i < out->size(); ++i) {
        a->grad[i] += b->val[i] * out->grad[i];
        b->grad[i] += a->val[i] * out->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
ArrayPtr<T> scale(const ArrayPtr<T>& a, T k, Tape<T>* tape) {
  auto out = zeros_like(a);
  for (size_t i = 0; i < a->size(); ++i) out->val[i] = k * a->val[i];
  if (tape) {
    tape->record([a, out, k]() {
      if (out->grad.empty()) return;
      a->ensure_grad();
      for (size_t i = 0; i < out->size(); ++i) a->grad[i] += k * out->grad[i];
    });
  }
  return out;
}

// relu'(0) is defined as 0.
template <typename T>
ArrayPtr<T> relu(const ArrayPtr<T>& a, Tape<T>* tape) {
  auto out = zeros_like(a);
  for (size_t i = 0; i < a->size(); ++i) out->val[i] = a->val[i] > T(0) ? a->val[i] : T(0);
  if (tape) {
    tape->record([a, out]() {
      if (out->grad.empty()) return;
      a->ensure_grad();
      for (size_t i = 0; i < out->size(); ++i)
        if (a->val[i] > T(0)) a->grad[i] += out->grad[i];
    });
  }
  return out;
}

template <typename T>
T sigmoid_scalar(T x) {
  // branch form avoids exp overflow for large |x|
  if (x >= T(0)) {
    return T(1) / (T(1) + std::exp(-x));
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
ArrayPtr<T> sigmoid(const ArrayPtr<T>& a, Tape<T>* tape) {
  auto out = zeros_like(a);
  for (size_t i = 0; i < a->size(); ++i) out->val[i] = sigmoid_scalar(a->val[i]);
  if (tape) {
    tape->record([a, out]() {
      if (out->grad.empty()) return;
      a->ensure_grad();
      for (size_t i = 0; i < out->size(); ++i) {
        T s = out->val[i];
        a->grad[i] += s * (T(1) - s) * out->grad[i];
      }
    });
  }
  return out;
}

// Channel concatenation. Output channel order follows argument order;
// backward splits the gradient back to the parts by the same offsets.
template <typename T>
ArrayPtr<T> concat_channels(const std::vector<ArrayPtr<T>>& parts, Tape<T>* tape) {
  check(!parts.empty(), "concat_channels: no parts");
  int n = parts[0]->n, h = parts[0]->h, w = parts[0]->w;
  int c_total = 0;
  for (const auto& p : parts) {
    check(p->n == n && p->h == h && p->w == w,
          "concat_channels: spatial/batch mismatch " + parts[0]->shape_str() + " vs " +
              p->shape_str());
    c_total += p->c;
  }
  auto out = make_array<T>(n, c_total, h, w);
  size_t plane = static_cast<size_t>(h) * w;
  for (int in = 0; in < n; ++in) {
    size_t dst = static_cast<size_t>(in) * c_total * plane;
    for (const auto& p : parts) {
      size_t src = static_cast<size_t>(in) * p->c * plane;
      std::copy(p->val.begin() + src, p->val.begin() + src + static_cast<size_t>(p->c) * plane,
                out->val.begin() + dst);
      dst += static_cast<size_t>(p->c) * plane;
    }
  }
  if (tape) {
    tape->record([parts, out, n, c_total, plane]() {
      if (out->grad.empty()) return;
      size_t off = 0;
      for (const auto& p : parts) {
        p->ensure_grad();
        for (int in = 0; in < n; ++in) {
          size_t dst = static_cast<size_t>(in) * p->c * plane;
          size_t src = static_cast<size_t>(in) * c_total * plane + off;
          for (size_t i = 0; i < static_cast<size_t>(p->c) * plane; ++i)
            p->grad[dst + i] += out->grad[src + i];
        }
        off += static_cast<size_t>(p->c) * plane;
      }
    });
  }
  return out;
}

// Inverse of concat_channels for given channel sizes.
template <typename T>
std::vector<ArrayPtr<T>> split_channels(const ArrayPtr<T>& a, const std::vector<int>& sizes,
                                        Tape<T>* tape) {
  int sum = 0;
  for (int s : sizes) sum += s;
  check(sum == a->c, "split_channels: sizes sum to " + std::to_string(sum) + ", array has " +
                         std::to_string(a->c) + " channels");
  std::vector<ArrayPtr<T>> parts;
  size_t plane = static_cast<size_t>(a->h) * a->w;
  int off = 0;
  for (int s : sizes) {
    auto p = make_array<T>(a->n, s, a->h, a->w);
    for (int in = 0; in < a->n; ++in) {
      size_t src = (static_cast<size_t>(in) * a->c + off) * plane;
      size_t dst = static_cast<size_t>(in) * s * plane;
      std::copy(a->val.begin() + src, a->val.begin() + src + static_cast<size_t>(s) * plane,
                p->val.begin() + dst);
    }
    if (tape) {
      int off_cap = off, s_cap = s;
      tape->record([a, p, off_cap, s_cap, plane]() {
        if (p->grad.empty()) return;
        a->ensure_grad();
        for (int in = 0; in < a->n; ++in) {
          size_t dst = (static_cast<size_t>(in) * a->c + off_cap) * plane;
          size_t src = static_cast<size_t>(in) * s_cap * plane;
          for (size_t i = 0; i < static_cast<size_t>(s_cap) * plane; ++i)
            a->grad[dst + i] += p->grad[src + i];
        }
      });
    }
    parts.push_back(p);
    off += s;
  }
  return parts;
}

// Reduces to a (1,1,1,1) scalar; the usual way to form a test loss.
template <typename T>
ArrayPtr<T> sum_all(const ArrayPtr<T>& a, Tape<T>* tape) {
  auto out = make_array<T>(1, 1, 1, 1);
  T acc = 0;
  for (T v : a->val) acc += v;
  out->val[0] = acc;
  if (tape) {
    tape->record([a, out]() {
      if (out->grad.empty()) return;
      a->ensure_grad();
      T g = out->grad[0];
      for (size_t i = 0; i < a->size(); ++i) a->grad[i] += g;
    });
  }
  return out;
}

template <typename T>
bool all_finite(const Array4<T>& a) {
  for (T v : a.val)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace mrn

#endif  // MRN_ARRAY_HPP
