#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>
#include <random>

#include "mmpt/fingerprint.hpp"
#include "mmpt/fragment.hpp"

using namespace mmpt;

namespace {

FingerprintVec from_bits(std::vector<int> bits, int nbits = 64) {
  FingerprintVec v(nbits);
  for (int b : bits) v.set(b);
  return v;
}

template <typename T>
void shuffle_vec(std::vector<T>& v, std::mt19937_64& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = rng() % i;
    std::swap(v[i - 1], v[j]);
  }
}

Fragment relabel(const Fragment& f, std::mt19937_64& rng) {
  size_t n = f.atoms().size();
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  shuffle_vec(perm, rng);
  std::vector<Atom> atoms(n);
  for (size_t i = 0; i < n; ++i) atoms[perm[i]] = f.atoms()[i];
  std::vector<Bond> bonds;
  for (const Bond& b : f.bonds()) bonds.push_back(Bond{perm[b.a], perm[b.b], b.order});
  shuffle_vec(bonds, rng);
  return Fragment::from_graph(std::move(atoms), std::move(bonds));
}

}  // namespace

TEST_CASE("fnv1a64 matches published test vectors") {
  CHECK(fnv1a64("", 0) == 14695981039346656037ULL);
  CHECK(fnv1a64("a", 1) == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar", 6) == 0x85944171f73967e8ULL);
}

TEST_CASE("radius zero single carbon sets exactly one bit") {
  FingerprintVec fp = morgan_fingerprint(parse_fragment("C"), 0, 2048);
  CHECK(fp.popcount() == 1);
  CHECK(fp.nbits() == 2048);
}

TEST_CASE("fingerprints are deterministic and isomorphism-invariant") {
  std::vector<std::string> fixtures{
      "CC(C)C(=O)O", "c1ccc2ccccc2c1", "[*:1]c1ccc(C(=O)N2CCOCC2)cc1",
      "C1CC2CCC1CC2", "[N+](=O)([O-])c1ccccc1"};
  std::mt19937_64 rng(42);
  for (const auto& s : fixtures) {
    Fragment f = parse_fragment(s);
    FingerprintVec fp = morgan_fingerprint(f);
    CHECK(morgan_fingerprint(f) == fp);
    for (int i = 0; i < 20; ++i) {
      Fragment g = relabel(f, rng);
      REQUIRE(morgan_fingerprint(g) == fp);
    }
  }
}

TEST_CASE("different fragments give different fingerprints") {
  // Not guaranteed in general (hash collisions), but these must differ.
  auto fp = [](const char* s) { return morgan_fingerprint(parse_fragment(s)); };
  CHECK(!(fp("CCO") == fp("CCN")));
  CHECK(!(fp("C1CCCCC1") == fp("CCCCCC")));
  CHECK(!(fp("c1ccccc1") == fp("C1=CC=CC=C1")));
  CHECK(!(fp("[*:1]CC") == fp("CC")));
}

TEST_CASE("tanimoto fixtures and properties") {
  auto a = from_bits({1, 2, 3});
  auto b = from_bits({2, 3, 4});
  CHECK(tanimoto(a, b) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(tanimoto(a, a) == 1.0);
  CHECK(tanimoto(from_bits({1}), from_bits({2})) == 0.0);
  CHECK(tanimoto(a, b) == tanimoto(b, a));
  // Both empty: similarity defined as 1.
  CHECK(tanimoto(from_bits({}), from_bits({})) == 1.0);
  // Containment: A subset of B gives |A|/|B| exactly.
  auto sub = from_bits({5, 9});
  auto sup = from_bits({5, 9, 11, 40});
  CHECK(tanimoto(sub, sup) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(tanimoto(from_bits({1}, 64), from_bits({1}, 128)), LengthMismatch);
}

TEST_CASE("cosine fixtures and properties") {
  auto a = from_bits({1, 2, 3, 4});
  auto b = from_bits({3, 4});
  CHECK(cosine_sim(a, b) == doctest::Approx(2.0 / std::sqrt(8.0)).epsilon(1e-12));
  CHECK(cosine_sim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_sim(from_bits({1}), from_bits({2})) == 0.0);
  CHECK(cosine_sim(a, b) == cosine_sim(b, a));
  CHECK_THROWS_AS(cosine_sim(from_bits({}), from_bits({1})), ZeroVector);
  CHECK(cosine_distance(a, a) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("on_bits and hex round out the vector API") {
  auto v = from_bits({0, 63, 64, 100}, 128);
  CHECK(v.on_bits() == std::vector<int>{0, 63, 64, 100});
  CHECK(v.popcount() == 4);
  v.set(0);  // idempotent set
  CHECK(v.popcount() == 4);
  CHECK(v.to_hex().size() == 2 * 16);
  CHECK_THROWS_AS(FingerprintVec(100), std::invalid_argument);
}
