#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "mrn/data.hpp"
#include "mrn/seeds.hpp"

using namespace mrn;

namespace {

bool arrays_equal(const ArrayPtr<float>& a, const ArrayPtr<float>& b) {
  return a->same_shape(*b) && a->val == b->val;
}

bool samples_equal(const Sample& a, const Sample& b) {
  return a.id == b.id && a.meta.region == b.meta.region && a.meta.skin_tone == b.meta.skin_tone &&
         a.meta.gender == b.meta.gender && a.meta.age_group == b.meta.age_group &&
         arrays_equal(a.image, b.image) && arrays_equal(a.mask, b.mask);
}

bool strictly_binary(const ArrayPtr<float>& m) {
  for (float v : m->val)
    if (v != 0.0f && v != 1.0f) return false;
  return true;
}

double mask_area(const ArrayPtr<float>& m) {
  double a = 0.0;
  for (float v : m->val) a += v;
  return a;
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

// ---------------------------------------------------------------------------
// seed derivation
// ---------------------------------------------------------------------------

TEST_CASE("derive_seed is deterministic and label-sensitive") {
  CHECK(derive_seed(7, "sample", 3) == derive_seed(7, "sample", 3));
  CHECK(derive_seed(7, "sample", 3) != derive_seed(7, "sample", 4));
  CHECK(derive_seed(7, "sample", 3) != derive_seed(7, "augment", 3));
  CHECK(derive_seed(7, "sample", 3) != derive_seed(8, "sample", 3));
  CHECK(derive_seed(7, "sample", 3, 0) != derive_seed(7, "sample", 3, 1));
}

// ---------------------------------------------------------------------------
// synthetic generator
// ---------------------------------------------------------------------------

TEST_CASE("synth_dataset is bit-identical across calls with the same seed") {
  auto a = synth_dataset(5, 32, 99);
  auto b = synth_dataset(5, 32, 99);
  REQUIRE(a.size() == 5);
  for (size_t i = 0; i < a.size(); ++i) CHECK(samples_equal(a[i], b[i]));
}

TEST_CASE("synth_dataset changes with the seed") {
  auto a = synth_dataset(3, 32, 1);
  auto b = synth_dataset(3, 32, 2);
  bool any_diff = false;
  for (size_t i = 0; i < a.size(); ++i) any_diff = any_diff || !arrays_equal(a[i].image, b[i].image);
  CHECK(any_diff);
}

TEST_CASE("synthetic masks are binary, nonempty, and between 1% and 40% of the image") {
  auto ds = synth_dataset(100, 32, 5);
  for (const auto& s : ds) {
    CHECK(strictly_binary(s.mask));
    double frac = mask_area(s.mask) / (32.0 * 32.0);
    CHECK(frac >= 0.01);
    CHECK(frac <= 0.40);
  }
}

TEST_CASE("synthetic lesions are darker than the background in every channel") {
  auto ds = synth_dataset(100, 32, 11);
  for (const auto& s : ds) {
    for (int c = 0; c < 3; ++c) {
      double in_sum = 0.0, out_sum = 0.0, in_n = 0.0, out_n = 0.0;
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          if (s.mask->at(0, 0, y, x) > 0.5f) {
            in_sum += s.image->at(0, c, y, x);
            in_n += 1.0;
          } else {
            out_sum += s.image->at(0, c, y, x);
            out_n += 1.0;
          }
        }
      CHECK(in_sum / in_n < out_sum / out_n);
    }
  }
}

TEST_CASE("synthetic metadata stays inside the closed vocabularies") {
  auto ds = synth_dataset(60, 32, 21);
  std::set<std::string> tones;
  for (const auto& s : ds) {
    CHECK(meta_complete(s.meta));
    tones.insert(s.meta.skin_tone);
  }
  CHECK(tones.size() == 2);  // both tone families appear in 60 draws
}

TEST_CASE("skin_tone label matches the rendered background brightness") {
  auto ds = synth_dataset(40, 32, 33);
  for (const auto& s : ds) {
    double bg = 0.0, n = 0.0;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        if (s.mask->at(0, 0, y, x) < 0.5f) {
          bg += s.image->at(0, 0, y, x);  // red channel separates the families
          n += 1.0;
        }
    bg /= n;
    if (s.meta.skin_tone == "light")
      CHECK(bg > 0.6);
    else
      CHECK(bg < 0.6);
  }
}

TEST_CASE("synth_dataset rejects bad arguments") {
  CHECK_THROWS_AS(synth_dataset(0, 32, 1), std::invalid_argument);
  CHECK_THROWS_AS(synth_dataset(4, 24, 1), std::invalid_argument);
  CHECK_THROWS_AS(synth_dataset(4, 0, 1), std::invalid_argument);
}

TEST_CASE("image values stay inside [0,1]") {
  auto ds = synth_dataset(20, 32, 44);
  for (const auto& s : ds)
    for (float v : s.image->val) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
}

// ---------------------------------------------------------------------------
// stratified split
// ---------------------------------------------------------------------------

TEST_CASE("a single 10-sample cell splits 7 train / 3 test") {
  std::vector<Sample> samples;
  for (int i = 0; i < 10; ++i) {
    Sample s = synth_sample(32, derive_seed(1, "cell", std::uint64_t(i)), "s" + std::to_string(i));
    s.meta = {"trunk", "light", "male", "18-30"};
    samples.push_back(s);
  }
  auto [train, test] = split_stratified(samples, 0.7, 3);
  CHECK(train.size() == 7);
  CHECK(test.size() == 3);
}

TEST_CASE("split_stratified partitions the input id set") {
  auto ds = synth_dataset(50, 32, 8);
  auto [train, test] = split_stratified(ds, 0.7, 9);
  std::set<std::string> train_ids, test_ids, all_ids;
  for (const auto& s : ds) all_ids.insert(s.id);
  for (const auto& s : train) train_ids.insert(s.id);
  for (const auto& s : test) test_ids.insert(s.id);
  CHECK(train.size() + test.size() == ds.size());
  CHECK(train_ids.size() == train.size());  // no duplicates
  std::set<std::string> uni = train_ids;
  uni.insert(test_ids.begin(), test_ids.end());
  CHECK(uni == all_ids);
  for (const auto& id : train_ids) CHECK(test_ids.count(id) == 0);
}

TEST_CASE("per-cell train fraction is within one sample of 70% on a 200-sample set") {
  auto ds = synth_dataset(200, 32, 17);
  auto [train, test] = split_stratified(ds, 0.7, 18);
  auto cell_of = [](const Sample& s) {
    return s.meta.skin_tone + "|" + s.meta.gender + "|" + s.meta.age_group;
  };
  std::map<std::string, int> total, in_train;
  for (const auto& s : ds) total[cell_of(s)]++;
  for (const auto& s : train) in_train[cell_of(s)]++;
  for (const auto& [cell, n] : total)
    CHECK(std::abs(in_train[cell] - 0.7 * n) <= 1.0);
}

TEST_CASE("split_stratified is deterministic per seed and varies across seeds") {
  auto ds = synth_dataset(40, 32, 2);
  auto [tr_a, te_a] = split_stratified(ds, 0.7, 5);
  auto [tr_b, te_b] = split_stratified(ds, 0.7, 5);
  REQUIRE(tr_a.size() == tr_b.size());
  for (size_t i = 0; i < tr_a.size(); ++i) CHECK(tr_a[i].id == tr_b[i].id);

  auto [tr_c, te_c] = split_stratified(ds, 0.7, 6);
  bool differs = tr_c.size() != tr_a.size();
  for (size_t i = 0; !differs && i < tr_a.size(); ++i) differs = tr_a[i].id != tr_c[i].id;
  CHECK(differs);
}

TEST_CASE("split_stratified rejects an empty set") {
  std::vector<Sample> none;
  CHECK_THROWS_AS(split_stratified(none, 0.7, 1), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

TEST_CASE("the all-zero augmentation spec is a bit-exact no-op") {
  auto s = synth_sample(32, 77, "a");
  auto out = augment(s, AugmentSpec::identity());
  CHECK(arrays_equal(out.image, s.image));
  CHECK(arrays_equal(out.mask, s.mask));
}

TEST_CASE("horizontal flip applied twice restores the original") {
  auto s = synth_sample(32, 78, "b");
  AugmentSpec spec = AugmentSpec::identity();
  spec.flip_h = 1.0f;
  auto once = augment(s, spec);
  auto twice = augment(once, spec);
  CHECK(!arrays_equal(once.image, s.image));
  CHECK(arrays_equal(twice.image, s.image));
  CHECK(arrays_equal(twice.mask, s.mask));
}

TEST_CASE("augment is a pure function of (sample, spec)") {
  auto s = synth_sample(32, 79, "c");
  AugmentSpec spec;  // all stages active
  spec.seed = 123;
  auto a = augment(s, spec);
  auto b = augment(s, spec);
  CHECK(arrays_equal(a.image, b.image));
  CHECK(arrays_equal(a.mask, b.mask));
}

TEST_CASE("rotation moves a point mass to its analytically rotated coordinate") {
  const int side = 64;
  auto x = make_array<float>(1, 1, side, side);
  const int y0 = 14, x0 = 43;
  x->at(0, 0, y0, x0) = 1.0f;
  const double deg = 30.0;
  auto rot = rotate_deg(x, deg);

  // forward map: p_out = c + R(deg) (p_in - c) in the x-right/y-down frame
  const double c = (side - 1) / 2.0;
  const double r = deg * 3.14159265358979323846 / 180.0;
  const double ex = c + std::cos(r) * (x0 - c) - std::sin(r) * (y0 - c);
  const double ey = c + std::sin(r) * (x0 - c) + std::cos(r) * (y0 - c);

  int by = -1, bx = -1;
  float best = -1.0f;
  for (int y = 0; y < side; ++y)
    for (int xx = 0; xx < side; ++xx)
      if (rot->at(0, 0, y, xx) > best) {
        best = rot->at(0, 0, y, xx);
        by = y;
        bx = xx;
      }
  CHECK(best > 0.0f);
  CHECK(std::abs(by - ey) <= 1.0);
  CHECK(std::abs(bx - ex) <= 1.0);
}

TEST_CASE("scaling up by 2 doubles a centred square's footprint") {
  const int side = 32;
  auto x = make_array<float>(1, 1, side, side);
  for (int y = 12; y < 20; ++y)
    for (int xx = 12; xx < 20; ++xx) x->at(0, 0, y, xx) = 1.0f;
  auto big = scale_about_center(x, 2.0);
  double a0 = 0.0, a1 = 0.0;
  for (float v : x->val) a0 += v;
  for (float v : big->val) a1 += v > 0.5f ? 1.0 : 0.0;
  CHECK(a1 == doctest::Approx(4.0 * a0).epsilon(0.15));
}

TEST_CASE("augmented masks stay strictly binary through the full pipeline") {
  auto s = synth_sample(32, 80, "d");
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    AugmentSpec spec;
    spec.seed = seed;
    auto out = augment(s, spec);
    CHECK(strictly_binary(out.mask));
    CHECK(out.image->same_shape(*s.image));
  }
}

TEST_CASE("image and mask transform jointly: indicator-image support matches the mask") {
  auto s = synth_sample(64, 81, "e");
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    AugmentSpec spec;  // every stage active, including both flips
    spec.flip_h = spec.flip_v = 1.0f;
    spec.seed = seed;

    Sample indicator;
    indicator.id = s.id;
    indicator.meta = s.meta;
    indicator.mask = copy_array(s.mask);
    indicator.image = make_array<float>(1, 3, s.mask->h, s.mask->w);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < s.mask->h; ++y)
        for (int x = 0; x < s.mask->w; ++x)
          indicator.image->at(0, c, y, x) = s.mask->at(0, 0, y, x);

    auto out = augment(indicator, spec);
    double inter = 0.0, uni = 0.0;
    for (int y = 0; y < out.mask->h; ++y)
      for (int x = 0; x < out.mask->w; ++x) {
        bool m = out.mask->at(0, 0, y, x) > 0.5f;
        bool i = out.image->at(0, 0, y, x) > 0.5f;  // channel 0 of the warped indicator
        inter += (m && i) ? 1.0 : 0.0;
        uni += (m || i) ? 1.0 : 0.0;
      }
    REQUIRE(uni > 0.0);
    CHECK(inter / uni >= 0.95);
  }
}

TEST_CASE("brightness/contrast touches only the image") {
  auto s = synth_sample(32, 82, "f");
  AugmentSpec spec = AugmentSpec::identity();
  spec.brightness = 0.1f;
  spec.contrast = 0.1f;
  spec.seed = 4;
  auto out = augment(s, spec);
  CHECK(arrays_equal(out.mask, s.mask));
  CHECK(!arrays_equal(out.image, s.image));
  for (float v : out.image->val) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

TEST_CASE("a constant image normalizes to zero under its own floored stats") {
  Sample s;
  s.image = make_array<float>(1, 3, 16, 16);
  for (auto& v : s.image->val) v = 0.37f;
  auto st = compute_norm_stats({s});
  CHECK(st.std[0] == doctest::Approx(std::sqrt(1e-6)).epsilon(1e-9));
  auto out = normalize(s.image, st);
  for (float v : out->val) CHECK(v == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("the normalized training split has zero mean and unit variance per channel") {
  auto ds = synth_dataset(20, 32, 55);
  auto st = compute_norm_stats(ds);
  std::array<double, 3> sum{}, sumsq{};
  double count = 0.0;
  for (const auto& s : ds) {
    auto z = normalize(s.image, st);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          double v = z->at(0, c, y, x);
          sum[size_t(c)] += v;
          sumsq[size_t(c)] += v * v;
        }
    count += 32.0 * 32.0;
  }
  for (int c = 0; c < 3; ++c) {
    double mean = sum[size_t(c)] / count;
    double sd = std::sqrt(sumsq[size_t(c)] / count - mean * mean);
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(sd - 1.0) < 1e-6);
  }
}

TEST_CASE("denormalize inverts normalize within 1e-6") {
  auto ds = synth_dataset(4, 32, 56);
  auto st = compute_norm_stats(ds);
  auto z = normalize(ds[0].image, st);
  auto back = denormalize(z, st);
  for (size_t i = 0; i < back->val.size(); ++i)
    CHECK(back->val[i] == doctest::Approx(ds[0].image->val[i]).epsilon(1e-6));
}

TEST_CASE("normalization statistics survive a JSON round trip") {
  NormStats st;
  st.mean = {0.51, 0.42, 0.33};
  st.std = {0.21, 0.17, 0.13};
  auto dir = fresh_dir("mrn_norm_stats");
  std::filesystem::create_directories(dir);
  auto path = (dir / "norm.json").string();
  save_norm_stats(path, st);
  auto back = load_norm_stats(path);
  for (int c = 0; c < 3; ++c) {
    CHECK(back.mean[size_t(c)] == doctest::Approx(st.mean[size_t(c)]).epsilon(1e-12));
    CHECK(back.std[size_t(c)] == doctest::Approx(st.std[size_t(c)]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(load_norm_stats((dir / "missing.json").string()), std::runtime_error);
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// on-disk datasets
// ---------------------------------------------------------------------------

TEST_CASE("save_dataset/load_dataset round-trips ids, metadata, and masks exactly") {
  auto ds = synth_dataset(6, 32, 60);
  auto dir = fresh_dir("mrn_ds_roundtrip");
  save_dataset(dir.string(), ds);
  CHECK(std::filesystem::exists(dir / "metadata.csv"));
  CHECK(std::filesystem::exists(dir / "synth_0000.png"));
  CHECK(std::filesystem::exists(dir / "synth_0000_mask.png"));

  auto back = load_dataset(dir.string());
  REQUIRE(back.size() == ds.size());
  for (size_t i = 0; i < ds.size(); ++i) {
    CHECK(back[i].id == ds[i].id);
    CHECK(back[i].meta.region == ds[i].meta.region);
    CHECK(back[i].meta.skin_tone == ds[i].meta.skin_tone);
    CHECK(back[i].meta.gender == ds[i].meta.gender);
    CHECK(back[i].meta.age_group == ds[i].meta.age_group);
    CHECK(arrays_equal(back[i].mask, ds[i].mask));  // {0,255} is exact in 8 bits
    REQUIRE(back[i].image->same_shape(*ds[i].image));
    float worst = 0.0f;
    for (size_t j = 0; j < back[i].image->val.size(); ++j)
      worst = std::max(worst, std::abs(back[i].image->val[j] - ds[i].image->val[j]));
    CHECK(worst <= 0.5f / 255.0f + 1e-6f);  // 8-bit quantization only
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("load_dataset reports missing or malformed metadata") {
  auto dir = fresh_dir("mrn_ds_bad");
  CHECK_THROWS_AS(load_dataset(dir.string()), std::runtime_error);

  std::filesystem::create_directories(dir);
  {
    std::ofstream csv(dir / "metadata.csv");
    csv << "id,region\n";
  }
  CHECK_THROWS_AS(load_dataset(dir.string()), std::runtime_error);

  {
    std::ofstream csv(dir / "metadata.csv");
    csv << "id,region,skin_tone,gender,age_group\n";
    csv << "ghost,trunk,light,male,18-30\n";  // PNGs absent
  }
  CHECK_THROWS_AS(load_dataset(dir.string()), std::runtime_error);
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// resizing
// ---------------------------------------------------------------------------

TEST_CASE("resize to the same size reproduces the input exactly") {
  auto ds = synth_dataset(1, 32, 70);
  auto out = resize_bilinear(ds[0].image, 32, 32);
  CHECK(arrays_equal(out, ds[0].image));
}

TEST_CASE("resize keeps constants constant and values in range") {
  auto x = make_array<float>(1, 1, 8, 8);
  for (auto& v : x->val) v = 0.6f;
  auto up = resize_bilinear(x, 19, 13);
  for (float v : up->val) CHECK(v == doctest::Approx(0.6f).epsilon(1e-6));

  auto ramp = make_array<float>(1, 1, 8, 8);
  for (int y = 0; y < 8; ++y)
    for (int xx = 0; xx < 8; ++xx) ramp->at(0, 0, y, xx) = float(xx) / 7.0f;
  auto wide = resize_bilinear(ramp, 8, 16);
  for (int y = 0; y < 8; ++y)
    for (int xx = 1; xx < 16; ++xx)
      CHECK(wide->at(0, 0, y, xx) >= wide->at(0, 0, y, xx - 1));  // monotone along x
  for (float v : wide->val) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("downsampling by 2 averages locally") {
  auto x = make_array<float>(1, 1, 4, 4);
  // 2x2 blocks of constant value: downsample must return those values
  const float blocks[2][2] = {{0.2f, 0.8f}, {0.5f, 1.0f}};
  for (int y = 0; y < 4; ++y)
    for (int xx = 0; xx < 4; ++xx) x->at(0, 0, y, xx) = blocks[y / 2][xx / 2];
  auto down = resize_bilinear(x, 2, 2);
  for (int y = 0; y < 2; ++y)
    for (int xx = 0; xx < 2; ++xx)
      CHECK(down->at(0, 0, y, xx) == doctest::Approx(blocks[y][xx]).epsilon(1e-6));
}
