#ifndef MRN_DATA_HPP
#define MRN_DATA_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mrn/array.hpp"
#include "mrn/meta.hpp"
#include "mrn/png_io.hpp"
#include "mrn/seeds.hpp"

namespace mrn {

// One image/mask pair with its demographic metadata. Image is (1,3,H,W) in
// [0,1] pre-normalization; mask is (1,1,H,W) strictly {0,1}.
struct Sample {
  ArrayPtr<float> image;
  ArrayPtr<float> mask;
  SampleMeta meta;
  std::string id;
};

inline ArrayPtr<float> copy_array(const ArrayPtr<float>& a) {
  auto out = make_array<float>(a->n, a->c, a->h, a->w);
  out->val = a->val;
  return out;
}

// ---------------------------------------------------------------------------
// Resampling primitives
// ---------------------------------------------------------------------------

// Bilinear read with edge clamping (for resizing, where the sample grid stays
// inside the source footprint).
inline float bilinear_clamp(const Array4<float>& a, int n, int c, double fy, double fx) {
  fy = std::min(std::max(fy, 0.0), double(a.h - 1));
  fx = std::min(std::max(fx, 0.0), double(a.w - 1));
  int y0 = int(fy), x0 = int(fx);
  int y1 = std::min(y0 + 1, a.h - 1), x1 = std::min(x0 + 1, a.w - 1);
  double ty = fy - y0, tx = fx - x0;
  double top = (1.0 - tx) * a.at(n, c, y0, x0) + tx * a.at(n, c, y0, x1);
  double bot = (1.0 - tx) * a.at(n, c, y1, x0) + tx * a.at(n, c, y1, x1);
  return float((1.0 - ty) * top + ty * bot);
}

// Bilinear read that treats everything outside the image as zero (for warps,
// which may map output pixels beyond the source).
inline float bilinear_zero(const Array4<float>& a, int n, int c, double fy, double fx) {
  int y0 = int(std::floor(fy)), x0 = int(std::floor(fx));
  double ty = fy - y0, tx = fx - x0;
  double acc = 0.0;
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) {
      int y = y0 + dy, x = x0 + dx;
      if (y < 0 || y >= a.h || x < 0 || x >= a.w) continue;
      double wgt = (dy ? ty : 1.0 - ty) * (dx ? tx : 1.0 - tx);
      acc += wgt * a.at(n, c, y, x);
    }
  return float(acc);
}

// Half-pixel-centre bilinear resize, edge-clamped. Resizing to the source
// size reproduces the input exactly (the sample grid degenerates to the
// pixel centres).
inline ArrayPtr<float> resize_bilinear(const ArrayPtr<float>& x, int oh, int ow) {
  check(oh >= 1 && ow >= 1, "resize_bilinear: output size must be positive");
  if (oh == x->h && ow == x->w) return copy_array(x);
  auto out = make_array<float>(x->n, x->c, oh, ow);
  double sy = double(x->h) / oh, sx = double(x->w) / ow;
  for (int n = 0; n < x->n; ++n)
    for (int c = 0; c < x->c; ++c)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx)
          out->at(n, c, y, xx) =
              bilinear_clamp(*x, n, c, (y + 0.5) * sy - 0.5, (xx + 0.5) * sx - 0.5);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic lesion generator
// ---------------------------------------------------------------------------

namespace detail {

// Smooth value noise: random values on a coarse grid, smoothstep-interpolated.
inline std::vector<float> value_noise(int h, int w, int cell, std::mt19937_64& rng) {
  cell = std::max(cell, 1);
  int gh = h / cell + 2, gw = w / cell + 2;
  std::vector<float> grid(size_t(gh) * gw);
  std::uniform_real_distribution<float> u{0.0f, 1.0f};
  for (auto& g : grid) g = u(rng);
  std::vector<float> out(size_t(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double fy = double(y) / cell, fx = double(x) / cell;
      int iy = int(fy), ix = int(fx);
      double ty = fy - iy, tx = fx - ix;
      ty = ty * ty * (3.0 - 2.0 * ty);
      tx = tx * tx * (3.0 - 2.0 * tx);
      double top = (1.0 - tx) * grid[size_t(iy) * gw + ix] + tx * grid[size_t(iy) * gw + ix + 1];
      double bot =
          (1.0 - tx) * grid[size_t(iy + 1) * gw + ix] + tx * grid[size_t(iy + 1) * gw + ix + 1];
      out[size_t(y) * w + x] = float((1.0 - ty) * top + ty * bot);
    }
  return out;
}

// Wobbly ellipse: an ellipse whose boundary radius is modulated by three
// low-order harmonics, giving organic blob outlines.
struct LesionShape {
  double cx, cy;                // centre, pixels
  double a, b;                  // semi-axes, pixels
  double phi;                   // orientation, radians
  std::array<double, 3> amp;    // harmonic amplitudes
  std::array<double, 3> phase;  // harmonic phases
};

inline bool lesion_inside(const LesionShape& s, double x, double y) {
  double dx = x - s.cx, dy = y - s.cy;
  double xr = std::cos(s.phi) * dx + std::sin(s.phi) * dy;
  double yr = -std::sin(s.phi) * dx + std::cos(s.phi) * dy;
  double u = xr / s.a, v = yr / s.b;
  double rho = std::sqrt(u * u + v * v);
  double theta = std::atan2(v, u);
  double boundary = 1.0;
  for (int k = 0; k < 3; ++k) boundary += s.amp[k] * std::cos((k + 1) * theta + s.phase[k]);
  return rho <= boundary;
}

inline LesionShape draw_lesion_shape(int side, std::mt19937_64& rng, bool wobble) {
  std::uniform_real_distribution<double> u_pos{0.3, 0.7};
  std::uniform_real_distribution<double> u_area{0.025, 0.30};
  std::uniform_real_distribution<double> u_ratio{0.6, 1.6};
  std::uniform_real_distribution<double> u_phi{0.0, 3.14159265358979323846};
  std::uniform_real_distribution<double> u_phase{0.0, 2.0 * 3.14159265358979323846};
  LesionShape s;
  s.cx = u_pos(rng) * side;
  s.cy = u_pos(rng) * side;
  double r0 = std::sqrt(u_area(rng) * side * double(side) / 3.14159265358979323846);
  double ratio = u_ratio(rng);
  s.a = r0 * std::sqrt(ratio);
  s.b = r0 / std::sqrt(ratio);
  s.phi = u_phi(rng);
  for (int k = 0; k < 3; ++k) {
    std::uniform_real_distribution<double> u_amp{0.0, 0.15 / (k + 1)};
    s.amp[k] = wobble ? u_amp(rng) : 0.0;
    s.phase[k] = u_phase(rng);
  }
  return s;
}

}  // namespace detail

// Generates one synthetic dermoscopy-like sample: a skin-toned textured
// background with a single darker blob lesion; the mask is the blob's exact
// support. Pure function of (side, seed, id).
inline Sample synth_sample(int side, std::uint64_t seed, const std::string& id) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit{0.0, 1.0};

  // Two base-tone families; the family decides the skin_tone label.
  bool light = unit(rng) < 0.5;
  std::array<double, 3> base =
      light ? std::array<double, 3>{0.80, 0.65, 0.55} : std::array<double, 3>{0.45, 0.30, 0.22};
  std::uniform_real_distribution<double> jitter{-0.05, 0.05};
  for (auto& b : base) b += jitter(rng);

  // Multi-octave value noise shared across channels (skin texture).
  auto n1 = detail::value_noise(side, side, side / 8, rng);
  auto n2 = detail::value_noise(side, side, side / 16, rng);
  auto n3 = detail::value_noise(side, side, side / 32, rng);
  std::vector<float> noise(n1.size());
  for (size_t i = 0; i < noise.size(); ++i)
    noise[i] = (4.0f * n1[i] + 2.0f * n2[i] + 1.0f * n3[i]) / 7.0f;

  // Lesion support: redraw until the realized area lands in [1%, 40%] of the
  // image; a plain centred ellipse of 10% area is the (practically
  // unreachable) deterministic fallback.
  auto mask = make_array<float>(1, 1, side, side);
  double lo = 0.01 * side * double(side), hi = 0.40 * side * double(side);
  for (int attempt = 0; attempt <= 100; ++attempt) {
    detail::LesionShape shape = attempt < 100 ? detail::draw_lesion_shape(side, rng, true)
                                              : detail::LesionShape{0.5 * side,
                                                                    0.5 * side,
                                                                    0.35 * side,
                                                                    0.25 * side,
                                                                    0.0,
                                                                    {0, 0, 0},
                                                                    {0, 0, 0}};
    double area = 0.0;
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        float in = detail::lesion_inside(shape, x, y) ? 1.0f : 0.0f;
        mask->at(0, 0, y, x) = in;
        area += in;
      }
    if (area >= lo && area <= hi) break;
  }

  std::uniform_real_distribution<double> u_darken{0.35, 0.55};
  double darken = u_darken(rng);

  Sample s;
  s.id = id;
  s.mask = mask;
  s.image = make_array<float>(1, 3, side, side);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        double v = base[c] + (noise[size_t(y) * side + x] - 0.5) * 0.10;
        if (mask->at(0, 0, y, x) > 0.5f) v *= darken;
        s.image->at(0, c, y, x) = float(std::min(std::max(v, 0.0), 1.0));
      }

  std::uniform_int_distribution<int> u_region{0, 3}, u_gender{0, 1}, u_age{0, 2};
  s.meta.region = region_vocab()[u_region(rng)];
  s.meta.skin_tone = light ? "light" : "dark";
  s.meta.gender = gender_vocab()[u_gender(rng)];
  s.meta.age_group = age_group_vocab()[u_age(rng)];
  return s;
}

// Deterministic synthetic dataset: per-sample seeds are derived from the
// root, so the i-th sample is independent of n.
inline std::vector<Sample> synth_dataset(int n, int side, std::uint64_t seed) {
  check(n >= 1, "synth_dataset: n must be >= 1");
  check(side >= 16 && side % 16 == 0, "synth_dataset: side must be a positive multiple of 16");
  std::vector<Sample> out;
  out.reserve(size_t(n));
  for (int i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "synth_%04d", i);
    out.push_back(synth_sample(side, derive_seed(seed, "sample", std::uint64_t(i)), buf));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stratified split
// ---------------------------------------------------------------------------

// Splits per (skin_tone x gender x age_group) cell so both sides keep the
// subgroup proportions: each cell is shuffled with its own derived seed and
// the first round(train_frac * n) samples go to train.
inline std::pair<std::vector<Sample>, std::vector<Sample>> split_stratified(
    const std::vector<Sample>& samples, double train_frac = 0.7, std::uint64_t seed = 0) {
  check(!samples.empty(), "split_stratified: empty sample set");
  check(train_frac > 0.0 && train_frac < 1.0, "split_stratified: train_frac must be in (0,1)");
  std::map<std::string, std::vector<size_t>> cells;
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& m = samples[i].meta;
    cells[m.skin_tone + "|" + m.gender + "|" + m.age_group].push_back(i);
  }
  std::vector<Sample> train, test;
  for (auto& [key, idx] : cells) {
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
      return samples[a].id < samples[b].id;
    });
    std::mt19937_64 rng(derive_seed(seed, "split:" + key));
    std::shuffle(idx.begin(), idx.end(), rng);
    size_t n_train = size_t(std::floor(train_frac * double(idx.size()) + 0.5));
    for (size_t j = 0; j < idx.size(); ++j)
      (j < n_train ? train : test).push_back(samples[idx[j]]);
  }
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

// Jitter ranges for one augmentation pass. A stage whose parameters are zero
// is skipped outright, so the all-zero spec is a bit-exact no-op.
struct AugmentSpec {
  float flip_h = 0.5f;          // horizontal flip probability
  float flip_v = 0.5f;          // vertical flip probability
  float rot_deg = 30.0f;        // rotation drawn uniformly in +-rot_deg
  float scale_frac = 0.15f;     // isotropic scale factor drawn in 1 +- scale_frac
  float brightness = 0.1f;      // additive jitter in +-brightness (image only)
  float contrast = 0.1f;        // slope jitter about 0.5, in +-contrast (image only)
  float elastic_alpha = 10.0f;  // elastic displacement magnitude, pixels
  float elastic_sigma = 4.0f;   // elastic smoothing radius, pixels
  std::uint64_t seed = 0;

  static AugmentSpec identity() {
    AugmentSpec s;
    s.flip_h = s.flip_v = 0.0f;
    s.rot_deg = s.scale_frac = 0.0f;
    s.brightness = s.contrast = 0.0f;
    s.elastic_alpha = s.elastic_sigma = 0.0f;
    return s;
  }
};

inline ArrayPtr<float> flip_lr(const ArrayPtr<float>& x) {
  auto out = make_array<float>(x->n, x->c, x->h, x->w);
  for (int n = 0; n < x->n; ++n)
    for (int c = 0; c < x->c; ++c)
      for (int y = 0; y < x->h; ++y)
        for (int xx = 0; xx < x->w; ++xx) out->at(n, c, y, xx) = x->at(n, c, y, x->w - 1 - xx);
  return out;
}

inline ArrayPtr<float> flip_ud(const ArrayPtr<float>& x) {
  auto out = make_array<float>(x->n, x->c, x->h, x->w);
  for (int n = 0; n < x->n; ++n)
    for (int c = 0; c < x->c; ++c)
      for (int y = 0; y < x->h; ++y)
        for (int xx = 0; xx < x->w; ++xx) out->at(n, c, y, xx) = x->at(n, c, x->h - 1 - y, xx);
  return out;
}

// Affine warp by inverse mapping: output pixel (y,x) reads the source at
//   sx = m00*x + m01*y + m02,  sy = m10*x + m11*y + m12
// with bilinear interpolation and zero fill outside the source.
inline ArrayPtr<float> warp_affine(const ArrayPtr<float>& x, double m00, double m01, double m02,
                                   double m10, double m11, double m12) {
  auto out = make_array<float>(x->n, x->c, x->h, x->w);
  for (int n = 0; n < x->n; ++n)
    for (int c = 0; c < x->c; ++c)
      for (int y = 0; y < x->h; ++y)
        for (int xx = 0; xx < x->w; ++xx) {
          double sx = m00 * xx + m01 * y + m02;
          double sy = m10 * xx + m11 * y + m12;
          out->at(n, c, y, xx) = bilinear_zero(*x, n, c, sy, sx);
        }
  return out;
}

// Rotates content by +deg about the image centre, in the x-right / y-down
// pixel frame: a source point q lands at c + R(deg) * (q - c).
inline ArrayPtr<float> rotate_deg(const ArrayPtr<float>& x, double deg) {
  double r = deg * 3.14159265358979323846 / 180.0;
  double cs = std::cos(r), sn = std::sin(r);
  double cx = (x->w - 1) / 2.0, cy = (x->h - 1) / 2.0;
  // inverse rotation applied to (dst - centre)
  return warp_affine(x, cs, sn, cx - cs * cx - sn * cy, -sn, cs, cy + sn * cx - cs * cy);
}

// Scales content by factor s about the centre; s > 1 zooms in (edges crop),
// s < 1 zooms out (zero padding appears).
inline ArrayPtr<float> scale_about_center(const ArrayPtr<float>& x, double s) {
  double cx = (x->w - 1) / 2.0, cy = (x->h - 1) / 2.0;
  double inv = 1.0 / s;
  return warp_affine(x, inv, 0.0, cx - inv * cx, 0.0, inv, cy - inv * cy);
}

// Per-pixel displacement warp: output (y,x) reads source (y + dy, x + dx).
inline ArrayPtr<float> warp_displace(const ArrayPtr<float>& x, const std::vector<float>& dx,
                                     const std::vector<float>& dy) {
  check(dx.size() == size_t(x->h) * x->w && dy.size() == dx.size(),
        "warp_displace: displacement fields must be h*w");
  auto out = make_array<float>(x->n, x->c, x->h, x->w);
  for (int n = 0; n < x->n; ++n)
    for (int c = 0; c < x->c; ++c)
      for (int y = 0; y < x->h; ++y)
        for (int xx = 0; xx < x->w; ++xx) {
          size_t i = size_t(y) * x->w + xx;
          out->at(n, c, y, xx) = bilinear_zero(*x, n, c, y + dy[i], xx + dx[i]);
        }
  return out;
}

namespace detail {

// Separable Gaussian blur with replicated edges, used to smooth the raw
// elastic displacement fields.
inline void gaussian_blur_field(std::vector<float>& f, int h, int w, double sigma) {
  int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(size_t(radius) * 2 + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[size_t(i + radius)] = std::exp(-0.5 * (i * double(i)) / (sigma * sigma));
    sum += kernel[size_t(i + radius)];
  }
  for (auto& k : kernel) k /= sum;
  std::vector<float> tmp(f.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        int xi = std::min(std::max(x + i, 0), w - 1);
        acc += kernel[size_t(i + radius)] * f[size_t(y) * w + xi];
      }
      tmp[size_t(y) * w + x] = float(acc);
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        int yi = std::min(std::max(y + i, 0), h - 1);
        acc += kernel[size_t(i + radius)] * tmp[size_t(yi) * w + x];
      }
      f[size_t(y) * w + x] = float(acc);
    }
}

}  // namespace detail

// Re-binarizes an interpolated mask at the 0.5 threshold.
inline void binarize_mask(ArrayPtr<float>& m) {
  for (auto& v : m->val) v = v > 0.5f ? 1.0f : 0.0f;
}

// One augmentation pass, in order: flips, rotation, scale, brightness /
// contrast (image only), elastic deformation. Geometric stages transform
// image and mask identically; the mask is re-binarized after every
// interpolating stage. Pure function of (sample, spec).
inline Sample augment(const Sample& s, const AugmentSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit{0.0, 1.0};
  // Every stage's scalar parameters are drawn in one fixed order up front, so
  // the realized transform depends only on the seed, never on which earlier
  // stages happened to apply.
  double u_h = unit(rng), u_v = unit(rng);
  double angle = (2.0 * unit(rng) - 1.0) * spec.rot_deg;
  double scale_f = 1.0 + (2.0 * unit(rng) - 1.0) * spec.scale_frac;
  double bright = (2.0 * unit(rng) - 1.0) * spec.brightness;
  double contr = (2.0 * unit(rng) - 1.0) * spec.contrast;

  Sample out;
  out.meta = s.meta;
  out.id = s.id;
  ArrayPtr<float> img = copy_array(s.image);
  ArrayPtr<float> msk = copy_array(s.mask);

  if (u_h < spec.flip_h) {
    img = flip_lr(img);
    msk = flip_lr(msk);
  }
  if (u_v < spec.flip_v) {
    img = flip_ud(img);
    msk = flip_ud(msk);
  }
  if (angle != 0.0) {
    img = rotate_deg(img, angle);
    msk = rotate_deg(msk, angle);
    binarize_mask(msk);
  }
  if (scale_f != 1.0) {
    img = scale_about_center(img, scale_f);
    msk = scale_about_center(msk, scale_f);
    binarize_mask(msk);
  }
  if (bright != 0.0 || contr != 0.0) {
    for (auto& v : img->val) {
      double p = (double(v) - 0.5) * (1.0 + contr) + 0.5 + bright;
      v = float(std::min(std::max(p, 0.0), 1.0));
    }
  }
  if (spec.elastic_alpha > 0.0f && spec.elastic_sigma > 0.0f) {
    size_t hw = size_t(img->h) * img->w;
    std::vector<float> dx(hw), dy(hw);
    std::uniform_real_distribution<float> u11{-1.0f, 1.0f};
    for (auto& v : dx) v = u11(rng);
    for (auto& v : dy) v = u11(rng);
    detail::gaussian_blur_field(dx, img->h, img->w, spec.elastic_sigma);
    detail::gaussian_blur_field(dy, img->h, img->w, spec.elastic_sigma);
    for (size_t i = 0; i < hw; ++i) {
      dx[i] *= spec.elastic_alpha;
      dy[i] *= spec.elastic_alpha;
    }
    img = warp_displace(img, dx, dy);
    msk = warp_displace(msk, dx, dy);
    binarize_mask(msk);
  }
  out.image = img;
  out.mask = msk;
  return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Per-channel standardization statistics, computed once from the training
// split and persisted next to checkpoints.
struct NormStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};
};

inline NormStats compute_norm_stats(const std::vector<Sample>& train) {
  check(!train.empty(), "compute_norm_stats: empty training split");
  std::array<double, 3> sum{}, sumsq{};
  double count = 0.0;
  for (const auto& s : train) {
    check(s.image && s.image->c == 3, "compute_norm_stats: samples must have 3-channel images");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < s.image->h; ++y)
        for (int x = 0; x < s.image->w; ++x) {
          double v = s.image->at(0, c, y, x);
          sum[size_t(c)] += v;
          sumsq[size_t(c)] += v * v;
        }
    count += double(s.image->h) * s.image->w;
  }
  NormStats st;
  for (int c = 0; c < 3; ++c) {
    st.mean[size_t(c)] = sum[size_t(c)] / count;
    double var = sumsq[size_t(c)] / count - st.mean[size_t(c)] * st.mean[size_t(c)];
    st.std[size_t(c)] = std::sqrt(std::max(var, 1e-6));
  }
  return st;
}

inline ArrayPtr<float> normalize(const ArrayPtr<float>& img, const NormStats& st) {
  check(img->c == 3, "normalize: image must have 3 channels");
  auto out = make_array<float>(img->n, img->c, img->h, img->w);
  for (int n = 0; n < img->n; ++n)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < img->h; ++y)
        for (int x = 0; x < img->w; ++x)
          out->at(n, c, y, x) =
              float((double(img->at(n, c, y, x)) - st.mean[size_t(c)]) / st.std[size_t(c)]);
  return out;
}

inline ArrayPtr<float> denormalize(const ArrayPtr<float>& img, const NormStats& st) {
  check(img->c == 3, "denormalize: image must have 3 channels");
  auto out = make_array<float>(img->n, img->c, img->h, img->w);
  for (int n = 0; n < img->n; ++n)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < img->h; ++y)
        for (int x = 0; x < img->w; ++x)
          out->at(n, c, y, x) =
              float(double(img->at(n, c, y, x)) * st.std[size_t(c)] + st.mean[size_t(c)]);
  return out;
}

inline void save_norm_stats(const std::string& path, const NormStats& st) {
  nlohmann::json j;
  j["mean"] = st.mean;
  j["std"] = st.std;
  std::ofstream f(path);
  check(bool(f), "save_norm_stats: cannot open " + path);
  f << j.dump(2) << "\n";
}

inline NormStats load_norm_stats(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_norm_stats: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(f);
  NormStats st;
  auto mean = j.at("mean").get<std::vector<double>>();
  auto sd = j.at("std").get<std::vector<double>>();
  if (mean.size() != 3 || sd.size() != 3)
    throw std::runtime_error("load_norm_stats: mean/std must each hold 3 values");
  std::copy(mean.begin(), mean.end(), st.mean.begin());
  std::copy(sd.begin(), sd.end(), st.std.begin());
  return st;
}

// ---------------------------------------------------------------------------
// On-disk datasets
// ---------------------------------------------------------------------------

namespace detail {

inline PngImage array_to_png(const Array4<float>& a) {
  PngImage img;
  img.channels = a.c;
  img.h = a.h;
  img.w = a.w;
  img.data.assign(a.val.begin(), a.val.end());
  return img;
}

inline ArrayPtr<float> png_to_array(const PngImage& img) {
  auto out = make_array<float>(1, img.channels, img.h, img.w);
  std::copy(img.data.begin(), img.data.end(), out->val.begin());
  return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace detail

// Writes `<id>.png` + `<id>_mask.png` per sample plus one metadata.csv.
// Masks are stored as {0,255} single-channel PNGs.
inline void save_dataset(const std::string& dir, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir + "/metadata.csv");
  check(bool(csv), "save_dataset: cannot write " + dir + "/metadata.csv");
  csv << "id,region,skin_tone,gender,age_group\n";
  for (const auto& s : samples) {
    write_png8(dir + "/" + s.id + ".png", detail::array_to_png(*s.image));
    write_png8(dir + "/" + s.id + "_mask.png", detail::array_to_png(*s.mask));
    csv << s.id << "," << s.meta.region << "," << s.meta.skin_tone << "," << s.meta.gender << ","
        << s.meta.age_group << "\n";
  }
}

// Loads a dataset directory written by save_dataset (or assembled by hand in
// the same layout). Masks are binarized at 0.5 on load so anti-aliased
// third-party masks come in clean.
inline std::vector<Sample> load_dataset(const std::string& dir) {
  std::ifstream csv(dir + "/metadata.csv");
  if (!csv) throw std::runtime_error("load_dataset: cannot open " + dir + "/metadata.csv");
  std::string line;
  if (!std::getline(csv, line) || detail::split_csv_line(line) !=
                                      std::vector<std::string>{"id", "region", "skin_tone",
                                                               "gender", "age_group"})
    throw std::runtime_error("load_dataset: metadata.csv must start with header "
                             "id,region,skin_tone,gender,age_group");
  std::vector<Sample> out;
  int lineno = 1;
  while (std::getline(csv, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != 5)
      throw std::runtime_error("load_dataset: metadata.csv line " + std::to_string(lineno) +
                               " has " + std::to_string(fields.size()) + " fields, expected 5");
    Sample s;
    s.id = fields[0];
    s.meta = {fields[1], fields[2], fields[3], fields[4]};
    PngImage img = read_png(dir + "/" + s.id + ".png");
    if (img.channels != 3)
      throw std::runtime_error("load_dataset: " + s.id + ".png must be RGB");
    s.image = detail::png_to_array(img);
    PngImage msk = read_png(dir + "/" + s.id + "_mask.png");
    if (msk.channels != 1)
      throw std::runtime_error("load_dataset: " + s.id + "_mask.png must be single-channel");
    if (msk.h != img.h || msk.w != img.w)
      throw std::runtime_error("load_dataset: " + s.id + " image and mask sizes differ");
    s.mask = detail::png_to_array(msk);
    binarize_mask(s.mask);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace mrn

#endif  // MRN_DATA_HPP
