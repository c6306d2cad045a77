#include "mmpt/fingerprint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace mmpt {

namespace {

constexpr uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr uint64_t kFnvPrime = 1099511628211ULL;

uint64_t fnv_mix_u64(uint64_t h, uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= kFnvPrime;
  }
  return h;
}

bool power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

}  // namespace

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

FingerprintVec::FingerprintVec(int nbits, int radius) : nbits_(nbits), radius_(radius) {
  if (!power_of_two(nbits)) throw std::invalid_argument("fingerprint length must be a power of two");
  words_.assign(static_cast<size_t>(nbits + 63) / 64, 0);
}

FingerprintVec FingerprintVec::from_words(std::vector<uint64_t> words, int radius) {
  FingerprintVec fp(static_cast<int>(words.size()) * 64, radius);
  fp.words_ = std::move(words);
  for (uint64_t w : fp.words_) fp.popcount_ += std::popcount(w);
  return fp;
}

void FingerprintVec::set(int bit) {
  uint64_t& w = words_[bit >> 6];
  uint64_t mask = 1ULL << (bit & 63);
  if (!(w & mask)) {
    w |= mask;
    ++popcount_;
  }
}

std::vector<int> FingerprintVec::on_bits() const {
  std::vector<int> out;
  out.reserve(popcount_);
  for (size_t wi = 0; wi < words_.size(); ++wi) {
    uint64_t w = words_[wi];
    while (w) {
      int b = std::countr_zero(w);
      out.push_back(static_cast<int>(wi * 64) + b);
      w &= w - 1;
    }
  }
  return out;
}

std::string FingerprintVec::to_hex() const {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(words_.size() * 16);
  for (uint64_t w : words_)
    for (int i = 0; i < 16; ++i) s.push_back(digits[(w >> (4 * i)) & 0xf]);
  return s;
}

int FingerprintVec::intersect_count(const FingerprintVec& a, const FingerprintVec& b) {
  int n = 0;
  for (size_t i = 0; i < a.words_.size(); ++i) n += std::popcount(a.words_[i] & b.words_[i]);
  return n;
}

int FingerprintVec::union_count(const FingerprintVec& a, const FingerprintVec& b) {
  int n = 0;
  for (size_t i = 0; i < a.words_.size(); ++i) n += std::popcount(a.words_[i] | b.words_[i]);
  return n;
}

FingerprintVec morgan_fingerprint(const Fragment& f, int radius, int nbits) {
  FingerprintVec fp(nbits, radius);
  const auto& atoms = f.atoms();
  size_t n = atoms.size();

  std::vector<std::vector<std::pair<int, BondOrder>>> adj(n);
  for (const Bond& b : f.bonds()) {
    adj[b.a].emplace_back(b.b, b.order);
    adj[b.b].emplace_back(b.a, b.order);
  }

  std::vector<uint64_t> hash(n);
  for (size_t i = 0; i < n; ++i) {
    const Atom& a = atoms[i];
    uint64_t h = kFnvOffset;
    h = fnv1a64(a.element.data(), a.element.size(), h);
    h = fnv_mix_u64(h, a.aromatic ? 1 : 0);
    h = fnv_mix_u64(h, static_cast<uint64_t>(adj[i].size()));
    h = fnv_mix_u64(h, static_cast<uint64_t>(static_cast<int64_t>(a.charge)));
    h = fnv_mix_u64(h, a.is_wildcard() ? 0 : static_cast<uint64_t>(f.total_hydrogens(static_cast<int>(i))));
    h = fnv_mix_u64(h, a.is_wildcard() ? 1 : 0);
    hash[i] = h;
    fp.set(static_cast<int>(h & static_cast<uint64_t>(nbits - 1)));
  }

  for (int r = 1; r <= radius; ++r) {
    std::vector<uint64_t> next(n);
    for (size_t i = 0; i < n; ++i) {
      std::vector<std::pair<uint64_t, uint64_t>> nbr;
      nbr.reserve(adj[i].size());
      for (auto [u, order] : adj[i])
        nbr.emplace_back(static_cast<uint64_t>(order), hash[u]);
      std::sort(nbr.begin(), nbr.end());
      uint64_t h = kFnvOffset;
      h = fnv_mix_u64(h, static_cast<uint64_t>(r));
      h = fnv_mix_u64(h, hash[i]);
      for (auto [o, nh] : nbr) {
        h = fnv_mix_u64(h, o);
        h = fnv_mix_u64(h, nh);
      }
      next[i] = h;
      fp.set(static_cast<int>(h & static_cast<uint64_t>(nbits - 1)));
    }
    hash = std::move(next);
  }
  return fp;
}

double tanimoto(const FingerprintVec& a, const FingerprintVec& b) {
  if (a.nbits() != b.nbits()) throw LengthMismatch("fingerprint lengths differ");
  int uni = FingerprintVec::union_count(a, b);
  if (uni == 0) return 1.0;
  return static_cast<double>(FingerprintVec::intersect_count(a, b)) / uni;
}

double cosine_sim(const FingerprintVec& a, const FingerprintVec& b) {
  if (a.nbits() != b.nbits()) throw LengthMismatch("fingerprint lengths differ");
  if (a.popcount() == 0 || b.popcount() == 0) throw ZeroVector("cosine of empty fingerprint");
  return FingerprintVec::intersect_count(a, b) /
         std::sqrt(static_cast<double>(a.popcount()) * b.popcount());
}

double cosine_distance(const FingerprintVec& a, const FingerprintVec& b) {
  return 1.0 - cosine_sim(a, b);
}

}  // namespace mmpt
