#ifndef MRN_OBJECTIVES_HPP
#define MRN_OBJECTIVES_HPP

#include <cstdio>
#include <iomanip>
#include <map>
#include <sstream>

#include "mrn/array.hpp"
#include "mrn/meta.hpp"
#include "mrn/network.hpp"

namespace mrn {

template <typename T>
struct DualLossSpec {
  T lambda = T(0.4);  // weight on the auxiliary term
  T eps = T(1e-6);    // dice smoothing
  void validate() const {
    check(lambda >= T(0), "DualLossSpec: lambda must be >= 0");
    check(eps > T(0), "DualLossSpec: eps must be > 0");
  }
};

template <typename T>
void require_binary_target(const ArrayPtr<T>& target) {
  for (const T v : target->val)
    check(v == T(0) || v == T(1), "target mask is not binary");
}

template <typename T>
void require_probability(const ArrayPtr<T>& pred) {
  for (const T v : pred->val)
    check(v >= T(0) && v <= T(1), "prediction not in [0,1]");
}

// Soft dice loss, one term per batch item, averaged:
//   1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps)
template <typename T>
ArrayPtr<T> dice_loss(const ArrayPtr<T>& pred, const ArrayPtr<T>& target, Tape<T>* tape,
                      T eps = T(1e-6)) {
  check(pred->same_shape(*target), "dice_loss: shape mismatch " + pred->shape_str() + " vs " +
                                       target->shape_str());
  require_probability(pred);
  require_binary_target(target);
  const size_t per = static_cast<size_t>(pred->c) * pred->h * pred->w;
  const int n = pred->n;
  auto inter = std::make_shared<std::vector<double>>(n);
  auto uni = std::make_shared<std::vector<double>>(n);
  double loss = 0;
  for (int i = 0; i < n; ++i) {
    double is = 0, us = 0;
    const T* p = pred->val.data() + per * i;
    const T* t = target->val.data() + per * i;
    for (size_t j = 0; j < per; ++j) {
      is += double(p[j]) * double(t[j]);
      us += double(p[j]) + double(t[j]);
    }
    (*inter)[i] = is;
    (*uni)[i] = us;
    loss += 1.0 - (2.0 * is + double(eps)) / (us + double(eps));
  }
  auto out = make_array<T>(1, 1, 1, 1);
  out->val[0] = T(loss / n);
  if (tape) {
    tape->record([pred, target, out, inter, uni, eps, per, n]() {
      if (out->grad.empty()) return;
      const double g = double(out->grad[0]) / n;
      pred->ensure_grad();
      for (int i = 0; i < n; ++i) {
        const double num = 2.0 * (*inter)[i] + double(eps);
        const double den = (*uni)[i] + double(eps);
        const T* t = target->val.data() + per * i;
        T* gp = pred->grad.data() + per * i;
        for (size_t j = 0; j < per; ++j)
          gp[j] += T(g * (num - 2.0 * double(t[j]) * den) / (den * den));
      }
    });
  }
  return out;
}

// Binary cross-entropy averaged over all elements; predictions clamped to
// [delta, 1-delta] before the logs. Where the clamp binds the loss is locally
// constant in the prediction, so those elements carry zero gradient — the
// backward rule is the true derivative of the computed function.
template <typename T>
ArrayPtr<T> bce_loss(const ArrayPtr<T>& pred, const ArrayPtr<T>& target, Tape<T>* tape) {
  check(pred->same_shape(*target), "bce_loss: shape mismatch " + pred->shape_str() + " vs " +
                                       target->shape_str());
  require_probability(pred);
  require_binary_target(target);
  const double delta = 1e-7;
  const size_t m = pred->val.size();
  double loss = 0;
  for (size_t j = 0; j < m; ++j) {
    double p = std::min(std::max(double(pred->val[j]), delta), 1.0 - delta);
    double t = double(target->val[j]);
    loss -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  auto out = make_array<T>(1, 1, 1, 1);
  out->val[0] = T(loss / m);
  if (tape) {
    tape->record([pred, target, out, m, delta]() {
      if (out->grad.empty()) return;
      const double g = double(out->grad[0]) / m;
      pred->ensure_grad();
      for (size_t j = 0; j < m; ++j) {
        double p = double(pred->val[j]);
        if (p <= delta || p >= 1.0 - delta) continue;
        double t = double(target->val[j]);
        pred->grad[j] += T(g * (-t / p + (1.0 - t) / (1.0 - p)));
      }
    });
  }
  return out;
}

template <typename T>
struct DualLoss {
  ArrayPtr<T> total;  // lambda * aux + seg
  ArrayPtr<T> aux;    // dice + bce on the auxiliary map
  ArrayPtr<T> seg;    // dice + bce on the main map
};

template <typename T>
DualLoss<T> dual_loss(const DualOutput<T>& out, const ArrayPtr<T>& target,
                      const DualLossSpec<T>& spec, Tape<T>* tape) {
  spec.validate();
  DualLoss<T> r;
  r.aux = add(dice_loss(out.aux_map, target, tape, spec.eps), bce_loss(out.aux_map, target, tape),
              tape);
  r.seg = add(dice_loss(out.main_map, target, tape, spec.eps),
              bce_loss(out.main_map, target, tape), tape);
  r.total = add(scale(r.aux, spec.lambda, tape), r.seg, tape);
  return r;
}

struct Metrics {
  double dc = 0, iou = 0, precision = 0, recall = 0;
};

// Overlap metrics on hard masks; pred is binarized at 0.5 first. When both
// masks are empty every metric is 1 (correct rejection).
template <typename T>
Metrics metrics(const ArrayPtr<T>& pred, const ArrayPtr<T>& target) {
  check(pred->same_shape(*target), "metrics: shape mismatch " + pred->shape_str() + " vs " +
                                       target->shape_str());
  require_binary_target(target);
  long long tp = 0, fp = 0, fn = 0;
  for (size_t j = 0; j < pred->val.size(); ++j) {
    bool p = pred->val[j] > T(0.5);
    bool t = target->val[j] != T(0);
    if (p && t) ++tp;
    else if (p) ++fp;
    else if (t) ++fn;
  }
  Metrics m;
  if (tp + fp + fn == 0) {
    m.dc = m.iou = m.precision = m.recall = 1.0;
    return m;
  }
  m.dc = 2.0 * tp / double(2 * tp + fp + fn);
  m.iou = double(tp) / double(tp + fp + fn);
  m.precision = (tp + fp > 0) ? double(tp) / double(tp + fp) : 0.0;
  m.recall = (tp + fn > 0) ? double(tp) / double(tp + fn) : 0.0;
  return m;
}

struct StrataRow {
  std::string group;
  std::string model;
  Metrics mean;
  int n_samples = 0;
};

// Fixed report row order: the aggregate first, then skin tone, gender, age.
inline const std::vector<std::string>& strata_groups() {
  static const std::vector<std::string> g = {
      "Anatomical Region", "Skin Color: Light", "Skin Color: Dark", "Gender: Male",
      "Gender: Female",    "Age Group: 18-30",  "Age Group: 31-50", "Age Group: 51+"};
  return g;
}

struct StrataReport {
  std::vector<StrataRow> rows;  // group-major, models in insertion order
  int exclusions = 0;           // samples dropped for missing/invalid metadata

  std::string to_csv() const {
    std::ostringstream os;
    os << "group,model,dc,iou,precision,recall,n_samples\n";
    char buf[64];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%.4f,%.4f,%.4f,%.4f", r.mean.dc, r.mean.iou,
                    r.mean.precision, r.mean.recall);
      os << r.group << ',' << r.model << ',' << buf << ',' << r.n_samples << '\n';
    }
    return os.str();
  }

  std::string to_text() const {
    std::ostringstream os;
    os << std::left << std::setw(20) << "group" << std::setw(12) << "model" << std::right
       << std::setw(8) << "dc" << std::setw(8) << "iou" << std::setw(11) << "precision"
       << std::setw(8) << "recall" << std::setw(10) << "n_samples" << '\n';
    char buf[80];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%8.4f%8.4f%11.4f%8.4f%10d", r.mean.dc, r.mean.iou,
                    r.mean.precision, r.mean.recall, r.n_samples);
      os << std::left << std::setw(20) << r.group << std::setw(12) << r.model << buf << '\n';
    }
    if (exclusions > 0) os << "excluded (incomplete metadata): " << exclusions << '\n';
    return os.str();
  }
};

// Accumulates per-sample metrics for one or more models and renders group
// means in the fixed row order. A sample with any out-of-vocabulary metadata
// field is excluded from every group and counted once.
class StrataReportBuilder {
 public:
  void add(const std::string& model, const SampleMeta& meta, const Metrics& m) {
    if (std::find(models_.begin(), models_.end(), model) == models_.end())
      models_.push_back(model);
    if (!meta_complete(meta)) {
      ++exclusions_;
      return;
    }
    accumulate(model, "Anatomical Region", m);
    accumulate(model, std::string("Skin Color: ") + (meta.skin_tone == "light" ? "Light" : "Dark"),
               m);
    accumulate(model, std::string("Gender: ") + (meta.gender == "male" ? "Male" : "Female"), m);
    accumulate(model, "Age Group: " + meta.age_group, m);
  }

  StrataReport build() const {
    StrataReport rep;
    rep.exclusions = exclusions_;
    for (const auto& group : strata_groups()) {
      for (const auto& model : models_) {
        StrataRow row;
        row.group = group;
        row.model = model;
        auto it = cells_.find({group, model});
        if (it != cells_.end() && it->second.n > 0) {
          const Cell& c = it->second;
          row.mean = {c.dc / c.n, c.iou / c.n, c.precision / c.n, c.recall / c.n};
          row.n_samples = c.n;
        }
        rep.rows.push_back(row);
      }
    }
    return rep;
  }

 private:
  struct Cell {
    double dc = 0, iou = 0, precision = 0, recall = 0;
    int n = 0;
  };
  void accumulate(const std::string& model, const std::string& group, const Metrics& m) {
    Cell& c = cells_[{group, model}];
    c.dc += m.dc;
    c.iou += m.iou;
    c.precision += m.precision;
    c.recall += m.recall;
    c.n += 1;
  }
  std::vector<std::string> models_;
  std::map<std::pair<std::string, std::string>, Cell> cells_;
  int exclusions_ = 0;
};

}  // namespace mrn

#endif  // MRN_OBJECTIVES_HPP
