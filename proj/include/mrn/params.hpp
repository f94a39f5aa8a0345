#ifndef MRN_PARAMS_HPP
#define MRN_PARAMS_HPP

#include <random>
#include <unordered_map>

#include "mrn/array.hpp"

namespace mrn {

// Named, ordered collection of learnable arrays and persistent buffers
// (batchnorm running stats). Registration order is creation order, which
// makes initialization and checkpoint layout deterministic.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ArrayPtr<T> arr;
    bool learnable = true;
  };

  ArrayPtr<T> create(const std::string& name, int n, int c, int h, int w,
                     bool learnable = true) {
    check(index_.find(name) == index_.end(), "ParamStore: duplicate name " + name);
    auto arr = make_array<T>(n, c, h, w);
    arr->name = name;
    index_[name] = entries_.size();
    entries_.push_back({name, arr, learnable});
    return arr;
  }

  ArrayPtr<T> get(const std::string& name) const {
    auto it = index_.find(name);
    check(it != index_.end(), "ParamStore: unknown name " + name);
    return entries_[it->second].arr;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<Entry>& entries() const { return entries_; }

  std::vector<Entry> learnable_entries() const {
    std::vector<Entry> out;
    for (const auto& e : entries_)
      if (e.learnable) out.push_back(e);
    return out;
  }

  size_t learnable_count() const {
    size_t total = 0;
    for (const auto& e : entries_)
      if (e.learnable) total += e.arr->size();
    return total;
  }

  void zero_grads() {
    for (auto& e : entries_)
      if (e.learnable) e.arr->zero_grad();
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

// Fan-in-scaled normal init, std = sqrt(2 / fan_in).
template <typename T>
void init_fan_in(Array4<T>& arr, int fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (T& v : arr.val) v = static_cast<T>(dist(rng));
}

template <typename T>
void init_normal(Array4<T>& arr, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (T& v : arr.val) v = static_cast<T>(dist(rng));
}

template <typename T>
void fill(Array4<T>& arr, T value) {
  std::fill(arr.val.begin(), arr.val.end(), value);
}

}  // namespace mrn

#endif  // MRN_PARAMS_HPP
