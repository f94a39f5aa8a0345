#ifndef MRN_META_HPP
#define MRN_META_HPP

#include <array>
#include <string>

namespace mrn {

// Per-sample demographic/anatomic metadata. All fields draw from closed
// vocabularies; anything else marks the sample as unusable for stratified
// reporting.
struct SampleMeta {
  std::string region;     // head_neck | trunk | upper_limb | lower_limb
  std::string skin_tone;  // light | dark
  std::string gender;     // male | female
  std::string age_group;  // 18-30 | 31-50 | 51+
};

inline const std::array<std::string, 4>& region_vocab() {
  static const std::array<std::string, 4> v = {"head_neck", "trunk", "upper_limb", "lower_limb"};
  return v;
}
inline const std::array<std::string, 2>& skin_tone_vocab() {
  static const std::array<std::string, 2> v = {"light", "dark"};
  return v;
}
inline const std::array<std::string, 2>& gender_vocab() {
  static const std::array<std::string, 2> v = {"male", "female"};
  return v;
}
inline const std::array<std::string, 3>& age_group_vocab() {
  static const std::array<std::string, 3> v = {"18-30", "31-50", "51+"};
  return v;
}

template <typename Vocab>
bool in_vocab(const Vocab& vocab, const std::string& value) {
  for (const auto& v : vocab)
    if (v == value) return true;
  return false;
}

inline bool meta_complete(const SampleMeta& m) {
  return in_vocab(region_vocab(), m.region) && in_vocab(skin_tone_vocab(), m.skin_tone) &&
         in_vocab(gender_vocab(), m.gender) && in_vocab(age_group_vocab(), m.age_group);
}

}  // namespace mrn

#endif  // MRN_META_HPP
