#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmpt/fragment.hpp"

namespace mmpt {

struct LengthMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ZeroVector : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Fixed-length circular-fingerprint bit vector. Length is a power of two so
/// hash folding is a mask.
class FingerprintVec {
 public:
  FingerprintVec() = default;
  explicit FingerprintVec(int nbits, int radius = 0);

  int nbits() const { return nbits_; }
  int radius() const { return radius_; }
  int popcount() const { return popcount_; }

  bool test(int bit) const { return (words_[bit >> 6] >> (bit & 63)) & 1; }
  void set(int bit);

  const std::vector<uint64_t>& words() const { return words_; }

  /// Indices of set bits in increasing order.
  std::vector<int> on_bits() const;

  /// Hex dump (low word first), for debug output only.
  std::string to_hex() const;

  bool operator==(const FingerprintVec& o) const {
    return nbits_ == o.nbits_ && words_ == o.words_;
  }

  static int intersect_count(const FingerprintVec& a, const FingerprintVec& b);
  static int union_count(const FingerprintVec& a, const FingerprintVec& b);

  /// Rebuild from a persisted word array (little-endian bit order as used by
  /// test/set). Popcount is recomputed.
  static FingerprintVec from_words(std::vector<uint64_t> words, int radius);

 private:
  int nbits_ = 0;
  int radius_ = 0;
  int popcount_ = 0;
  std::vector<uint64_t> words_;
};

/// Morgan-style circular fingerprint over canonical atom environments.
///
/// Each atom starts from the invariant tuple (element, aromatic flag, degree,
/// charge, total-H count, is-wildcard) hashed with FNV-1a; every iteration
/// rehashes the atom with the sorted (bond order, neighbor hash) list. Every
/// per-radius atom hash sets bit (hash mod nbits). Order-independent by
/// construction, so isomorphic fragments map to identical vectors.
FingerprintVec morgan_fingerprint(const Fragment& f, int radius = 2, int nbits = 2048);

/// |A∩B| / |A∪B|; 1.0 when both vectors are empty. Throws LengthMismatch.
double tanimoto(const FingerprintVec& a, const FingerprintVec& b);

/// |A∩B| / sqrt(|A|·|B|). Throws LengthMismatch or ZeroVector.
double cosine_sim(const FingerprintVec& a, const FingerprintVec& b);

/// 1 - cosine_sim, the distance used by the retrieval index.
double cosine_distance(const FingerprintVec& a, const FingerprintVec& b);

/// FNV-1a 64-bit over a byte span; the only hash used for fingerprints and
/// file digests, fixed for cross-platform reproducibility.
uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 14695981039346656037ULL);

}  // namespace mmpt
