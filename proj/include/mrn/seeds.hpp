#ifndef MRN_SEEDS_HPP
#define MRN_SEEDS_HPP

#include <cstdint>
#include <string>

namespace mrn {

// splitmix64 finalizer: cheap, well-mixed 64-bit hash step. Used to fan one
// root seed out into independent per-purpose streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives a child seed from (root, label, a, b). Every consumer of
// randomness seeds its own generator with a distinct label (and indices for
// per-sample / per-epoch streams), so adding or reordering consumers never
// perturbs the others.
inline std::uint64_t derive_seed(std::uint64_t root, const std::string& label,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(root);
  for (unsigned char ch : label) h = splitmix64(h ^ ch);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  return h;
}

}  // namespace mrn

#endif  // MRN_SEEDS_HPP
