#ifndef MRN_TESTS_HELPERS_HPP
#define MRN_TESTS_HELPERS_HPP

#include <cmath>
#include <random>

#include "mrn/array.hpp"

namespace testutil {

template <typename T>
void fill_uniform(mrn::Array4<T>& a, std::mt19937_64& rng, T lo = T(-1), T hi = T(1)) {
  std::uniform_real_distribution<double> dist{double(lo), double(hi)};
  for (auto& v : a.val) v = T(dist(rng));
}

template <typename T>
void fill_normal(mrn::Array4<T>& a, std::mt19937_64& rng, T mean = T(0), T stddev = T(1)) {
  std::normal_distribution<double> dist{double(mean), double(stddev)};
  for (auto& v : a.val) v = T(dist(rng));
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

// Gradient comparison with an absolute floor so near-zero gradients are
// judged by absolute error.
inline double grad_rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

// Central finite difference of a scalar function with respect to x.val[idx].
template <typename F>
double fd(mrn::Array4<double>& x, size_t idx, F&& f, double h = 1e-5) {
  const double orig = x.val[idx];
  x.val[idx] = orig + h;
  const double lp = f();
  x.val[idx] = orig - h;
  const double lm = f();
  x.val[idx] = orig;
  return (lp - lm) / (2.0 * h);
}

// Deterministic spread of up to max_probes indices over [0, size).
inline std::vector<size_t> probe_indices(size_t size, size_t max_probes = 32) {
  std::vector<size_t> idx;
  if (size <= max_probes) {
    for (size_t i = 0; i < size; ++i) idx.push_back(i);
  } else {
    for (size_t i = 0; i < max_probes; ++i) idx.push_back(i * size / max_probes);
  }
  return idx;
}

// Checks analytic gradients of a scalar-valued forward pass against central
// finite differences. `build(tape)` must run the forward pass from the
// current values of `probes` (and anything else it closes over) and return
// the scalar loss; it is re-invoked with a null tape for each perturbation.
// Returns the max grad_rel_err over all probed elements.
template <typename Build>
double max_grad_err(const std::vector<mrn::ArrayPtr<double>>& probes, Build&& build,
                    size_t max_probes_per_array = 32, double h = 1e-5) {
  mrn::Tape<double> tape;
  auto loss = build(&tape);
  for (const auto& p : probes) p->zero_grad();
  tape.backward(loss);
  double worst = 0;
  for (const auto& p : probes) {
    p->ensure_grad();
    for (size_t idx : probe_indices(p->val.size(), max_probes_per_array)) {
      const double analytic = double(p->grad[idx]);
      const double numeric = fd(*p, idx, [&]() { return double(build(nullptr)->val[0]); }, h);
      worst = std::max(worst, grad_rel_err(analytic, numeric));
    }
  }
  return worst;
}

}  // namespace testutil

#endif  // MRN_TESTS_HELPERS_HPP
