#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "mmpt/fragment.hpp"

using namespace mmpt;

namespace {

// Deterministic Fisher-Yates (std::shuffle is implementation-defined).
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

bool same_atom(const Atom& x, const Atom& y) {
  return x.element == y.element && x.aromatic == y.aromatic && x.charge == y.charge &&
         x.hcount == y.hcount && x.attachment == y.attachment;
}

// Brute-force graph isomorphism for small fragments: tries every permutation
// consistent with atom attributes. Independent oracle for the canonical form.
bool brute_force_isomorphic(const Fragment& fa, const Fragment& fb) {
  const auto& a = fa.atoms();
  const auto& b = fb.atoms();
  if (a.size() != b.size() || fa.bonds().size() != fb.bonds().size()) return false;
  size_t n = a.size();

  std::map<std::pair<int, int>, BondOrder> eb;
  for (const Bond& e : fb.bonds()) {
    eb[{std::min(e.a, e.b), std::max(e.a, e.b)}] = e.order;
  }

  std::vector<int> map_to(n, -1);
  std::vector<bool> used(n, false);
  auto extend = [&](auto&& self, size_t i) -> bool {
    if (i == n) return true;
    for (size_t j = 0; j < n; ++j) {
      if (used[j] || !same_atom(a[i], b[j])) continue;
      auto edge_key = [](int x, int y) {
        return std::pair<int, int>{std::min(x, y), std::max(x, y)};
      };
      bool ok = true;
      for (const Bond& e : fa.bonds()) {
        int other = -1;
        if (e.a == static_cast<int>(i)) other = e.b;
        else if (e.b == static_cast<int>(i)) other = e.a;
        if (other < 0 || static_cast<size_t>(other) > i) continue;
        auto it = eb.find(edge_key(static_cast<int>(j), map_to[other]));
        if (it == eb.end() || it->second != e.order) {
          ok = false;
          break;
        }
      }
      // Also reject mappings that create bonds absent from `a`.
      if (ok) {
        int deg_a = 0, deg_b_mapped = 0;
        for (const Bond& e : fa.bonds())
          if ((e.a == static_cast<int>(i) && static_cast<size_t>(e.b) < i) ||
              (e.b == static_cast<int>(i) && static_cast<size_t>(e.a) < i))
            ++deg_a;
        for (size_t k = 0; k < i; ++k)
          if (eb.count(edge_key(static_cast<int>(j), map_to[k]))) ++deg_b_mapped;
        if (deg_a != deg_b_mapped) ok = false;
      }
      if (!ok) continue;
      used[j] = true;
      map_to[i] = static_cast<int>(j);
      if (self(self, i + 1)) return true;
      used[j] = false;
      map_to[i] = -1;
    }
    return false;
  };
  return extend(extend, 0);
}

// Random connected all-single-bond graphs over bare atoms, capacity-aware so
// every draw is valid by construction.
Fragment random_fragment(std::mt19937_64& rng, int n_atoms) {
  static const std::vector<std::pair<std::string, int>> pool{
      {"C", 4}, {"N", 3}, {"O", 2}, {"S", 6}, {"P", 5}};
  std::vector<Atom> atoms;
  std::vector<int> cap;
  for (int i = 0; i < n_atoms; ++i) {
    auto [el, v] = pool[rng() % pool.size()];
    Atom a;
    a.element = el;
    atoms.push_back(a);
    cap.push_back(v);
  }
  std::vector<Bond> bonds;
  for (int i = 1; i < n_atoms; ++i) {
    // Attach to an earlier atom with spare capacity.
    std::vector<int> candidates;
    for (int j = 0; j < i; ++j)
      if (cap[j] > 0) candidates.push_back(j);
    if (candidates.empty()) {
      // Fall back: retype the previous atom as carbon and recompute its
      // remaining capacity in bond-order units.
      atoms[i].element = "C";
      cap[i] = 4;
      atoms[i - 1].element = "C";
      cap[i - 1] = 4;
      // The previous atom carries exactly one bond (<= 2 units) at this
      // point, so a retyped carbon always has room for the chain bond.
      for (const Bond& b : bonds)
        if (b.a == i - 1 || b.b == i - 1)
          cap[i - 1] -= (b.order == BondOrder::Double ? 2 : 1);
      candidates.push_back(i - 1);
    }
    int j = candidates[rng() % candidates.size()];
    bool dbl = cap[j] >= 2 && cap[i] >= 2 && (rng() % 4 == 0);
    bonds.push_back(Bond{j, i, dbl ? BondOrder::Double : BondOrder::Single});
    cap[j] -= dbl ? 2 : 1;
    cap[i] -= dbl ? 2 : 1;
  }
  // A couple of extra ring edges when capacity allows.
  for (int tries = 0; tries < 2; ++tries) {
    int x = static_cast<int>(rng() % n_atoms), y = static_cast<int>(rng() % n_atoms);
    if (x == y || cap[x] < 1 || cap[y] < 1) continue;
    bool dup = false;
    for (const Bond& b : bonds)
      if ((b.a == x && b.b == y) || (b.a == y && b.b == x)) dup = true;
    if (dup) continue;
    bonds.push_back(Bond{x, y, BondOrder::Single});
    --cap[x];
    --cap[y];
  }
  return Fragment::from_graph(std::move(atoms), std::move(bonds));
}

}  // namespace

TEST_CASE("tokenize splits on grammar units and round-trips") {
  std::vector<std::string> inputs{
      "CCO",          "c1ccccc1",       "[*:1]CC(=O)N", "C%12CCCCCCCCCCC%12",
      "[N+](=O)[O-]", "ClC(Br)I",       "[CH3]S(=O)=O", "C1=CC=CC=C1",
      "[*:1]c1ccc(cc1)[*:2]",           "[S+2]([O-])[O-]"};
  for (const auto& s : inputs) {
    TokenSequence toks = tokenize(s);
    CHECK(detokenize(toks) == s);
  }
  TokenSequence t = tokenize("[*:1]Cl%10=c");
  REQUIRE(t.size() == 5);
  CHECK(t[0] == "[*:1]");
  CHECK(t[1] == "Cl");
  CHECK(t[2] == "%10");
  CHECK(t[3] == "=");
  CHECK(t[4] == "c");
}

TEST_CASE("lexer rejects unknown characters") {
  CHECK_THROWS_AS(tokenize("CxC"), LexError);
  CHECK_THROWS_AS(tokenize("A"), LexError);
  CHECK_THROWS_AS(tokenize("C C"), LexError);
  CHECK_THROWS_AS(tokenize("[Q]"), LexError);
  CHECK_THROWS_AS(tokenize("[C"), LexError);
  CHECK_THROWS_AS(tokenize("%1C"), LexError);
  CHECK_THROWS_AS(tokenize("[*:0]"), LexError);
  CHECK_THROWS_AS(tokenize("[*]"), LexError);
  CHECK_THROWS_AS(tokenize("C@C"), LexError);
}

TEST_CASE("parser rejects structural errors") {
  CHECK_THROWS_AS(parse_fragment(""), SyntaxError);
  CHECK_THROWS_AS(parse_fragment("C(C"), SyntaxError);
  CHECK_THROWS_AS(parse_fragment("C)C"), SyntaxError);
  CHECK_THROWS_AS(parse_fragment("C1CC"), SyntaxError);
  CHECK_THROWS_AS(parse_fragment("C11"), SyntaxError);
  CHECK_THROWS_AS(parse_fragment("=C"), SyntaxError);
  CHECK_THROWS_AS(parse_fragment("C="), SyntaxError);
  CHECK_THROWS_AS(parse_fragment("C==C"), SyntaxError);
  CHECK_THROWS_AS(parse_fragment("C=(C)C"), SyntaxError);
  CHECK_THROWS_AS(parse_fragment("C(=)C"), SyntaxError);
  CHECK_THROWS_AS(parse_fragment("C=1CC-1"), SyntaxError);
  CHECK_THROWS_AS(parse_fragment("C1CC2"), SyntaxError);
  // Duplicate ring bond between the same atom pair.
  CHECK_THROWS_AS(parse_fragment("C12C12"), SyntaxError);
  CHECK_THROWS_AS(parse_fragment("()"), SyntaxError);
}

TEST_CASE("valence model accepts and rejects correctly") {
  // Acceptances.
  CHECK_NOTHROW(parse_fragment("C"));
  CHECK_NOTHROW(parse_fragment("O=C=O"));
  CHECK_NOTHROW(parse_fragment("C#N"));
  CHECK_NOTHROW(parse_fragment("c1ccccc1"));
  CHECK_NOTHROW(parse_fragment("c1cc[nH]c1"));           // pyrrole
  CHECK_NOTHROW(parse_fragment("c1ccc2ccccc2c1"));       // fused bicyclic
  CHECK_NOTHROW(parse_fragment("[N+](=O)[O-]"));
  CHECK_NOTHROW(parse_fragment("S(=O)(=O)(O)O"));
  CHECK_NOTHROW(parse_fragment("FC(F)(F)F"));
  CHECK_NOTHROW(parse_fragment("[*:1]C"));
  CHECK_NOTHROW(parse_fragment("[*:1]c1ccc(cc1)[*:2]"));

  // Valence bound exceeded.
  CHECK_THROWS_AS(parse_fragment("C(C)(C)(C)(C)C"), ValenceError);
  CHECK_THROWS_AS(parse_fragment("O(C)(C)C"), ValenceError);
  CHECK_NOTHROW(parse_fragment("FF"));  // difluorine: load 1 each
  CHECK_THROWS_AS(parse_fragment("F=F"), ValenceError);
  CHECK_THROWS_AS(parse_fragment("F(C)C"), ValenceError);
  CHECK_THROWS_AS(parse_fragment("[CH4]C"), ValenceError);
  CHECK_THROWS_AS(parse_fragment("N(=O)=O"), ValenceError);
  // Charge shifts the bound.
  CHECK_NOTHROW(parse_fragment("[N+](C)(C)(C)C"));
  CHECK_THROWS_AS(parse_fragment("[N-](C)(C)C"), ValenceError);

  // Aromatic atoms need an aromatic or ring bond.
  CHECK_THROWS_AS(parse_fragment("cC"), ValenceError);
  CHECK_THROWS_AS(parse_fragment("c"), ValenceError);
  CHECK_NOTHROW(parse_fragment("cc"));

  // Wildcards: one single bond each.
  CHECK_THROWS_AS(parse_fragment("[*:1](C)C"), ValenceError);
  CHECK_THROWS_AS(parse_fragment("[*:1]=C"), ValenceError);
  CHECK_THROWS_AS(parse_fragment("[*:1]"), ValenceError);
  CHECK_THROWS_AS(parse_fragment("[*:1]C[*:3]"), SyntaxError);
  CHECK_THROWS_AS(parse_fragment("[*:1]C[*:1]"), SyntaxError);
}

TEST_CASE("disconnected graphs are rejected in from_graph") {
  std::vector<Atom> atoms(2);
  atoms[0].element = "C";
  atoms[1].element = "C";
  CHECK_THROWS_AS(Fragment::from_graph(atoms, {}), DisconnectedError);
}

TEST_CASE("canonical form is invariant under atom relabeling") {
  std::vector<std::string> fixtures{
      "CC(C)C(=O)O",
      "c1ccc2ccccc2c1",
      "[*:1]c1ccc(C(=O)N2CCOCC2)cc1",
      "C1CC2CCC1CC2",
      "[N+](=O)([O-])c1ccccc1",
      "[*:1]C([*:2])=C",
      "ClC(Br)(I)F",
      "c1cc[nH]c1",
      "C%10CCCCCCCCCC%10",
  };
  std::mt19937_64 rng(20260814);
  for (const auto& s : fixtures) {
    Fragment f = parse_fragment(s);
    // Idempotence: the canonical string reparses to itself.
    Fragment re = parse_fragment(f.canonical());
    CHECK(re.canonical() == f.canonical());
    for (int i = 0; i < 50; ++i) {
      Fragment g = relabel(f, rng);
      REQUIRE(g.canonical() == f.canonical());
    }
  }
}

TEST_CASE("canonical equality matches brute-force isomorphism") {
  std::mt19937_64 rng(7);
  std::vector<Fragment> frags;
  for (int i = 0; i < 40; ++i) frags.push_back(random_fragment(rng, 3 + int(rng() % 6)));
  for (size_t i = 0; i < frags.size(); ++i) {
    for (size_t j = i + 1; j < frags.size(); ++j) {
      bool iso = brute_force_isomorphic(frags[i], frags[j]);
      bool canon_eq = frags[i].canonical() == frags[j].canonical();
      REQUIRE(iso == canon_eq);
    }
  }
  // Relabelings must be isomorphic by the oracle and equal canonically.
  for (size_t i = 0; i < frags.size(); i += 5) {
    Fragment g = relabel(frags[i], rng);
    CHECK(brute_force_isomorphic(frags[i], g));
    CHECK(g.canonical() == frags[i].canonical());
  }
}

TEST_CASE("canonical form distinguishes attribute differences") {
  CHECK(parse_fragment("CCO").canonical() != parse_fragment("COC").canonical());
  CHECK(parse_fragment("C1CCCCC1").canonical() != parse_fragment("CCCCCC").canonical());
  CHECK(parse_fragment("[CH3]C").canonical() != parse_fragment("CC").canonical());
  CHECK(parse_fragment("[N+H4]").canonical() != parse_fragment("[N+H3]").canonical());
  // Reversing the string is the same labeled graph; swapping the map numbers
  // in an asymmetric context is not.
  CHECK(parse_fragment("[*:1]CC[*:2]").canonical() == parse_fragment("[*:2]CC[*:1]").canonical());
  CHECK(parse_fragment("[*:1]CC(C)[*:2]").canonical() !=
        parse_fragment("[*:2]CC(C)[*:1]").canonical());
  CHECK(parse_fragment("C=C").canonical() != parse_fragment("CC").canonical());
  // Same molecule written differently maps to one string.
  CHECK(parse_fragment("OCC").canonical() == parse_fragment("CCO").canonical());
  CHECK(parse_fragment("C1=CC=CC=C1").canonical() == parse_fragment("C=1C=CC=CC1").canonical());
  CHECK(parse_fragment("c1ccccc1").canonical() != parse_fragment("C1=CC=CC=C1").canonical());
}

TEST_CASE("hydrogen counts and molecular weight") {
  Fragment methane = parse_fragment("C");
  CHECK(methane.total_hydrogens(0) == 4);
  CHECK(methane.molecular_weight() == doctest::Approx(16.043).epsilon(1e-9));

  Fragment water = parse_fragment("O");
  CHECK(water.molecular_weight() == doctest::Approx(18.015).epsilon(1e-9));

  Fragment benzene = parse_fragment("c1ccccc1");
  for (int i = 0; i < 6; ++i) CHECK(benzene.total_hydrogens(i) == 1);
  CHECK(benzene.molecular_weight() == doctest::Approx(78.114).epsilon(1e-9));

  Fragment ethanol = parse_fragment("CCO");
  CHECK(ethanol.molecular_weight() == doctest::Approx(46.069).epsilon(1e-9));

  // Bracket hydrogens are explicit and not re-derived.
  Fragment ch2 = parse_fragment("[CH2]C");
  CHECK(ch2.total_hydrogens(0) == 2);
  Fragment bare = parse_fragment("[CH0]C");
  CHECK(bare.total_hydrogens(0) == 0);

  // Wildcards carry no weight and no hydrogens.
  Fragment v = parse_fragment("[*:1]C");
  CHECK(v.molecular_weight() == doctest::Approx(12.011 + 3 * 1.008).epsilon(1e-9));
  CHECK(v.attachment_count() == 1);
  CHECK(v.heavy_atom_count() == 1);
}

TEST_CASE("substitute joins variable and constant at attachment points") {
  Fragment variable = parse_fragment("[*:1]O");
  Fragment constant = parse_fragment("[*:1]CC");
  Fragment molecule = substitute({constant}, variable);
  CHECK(molecule.attachment_count() == 0);
  CHECK(molecule.canonical() == parse_fragment("CCO").canonical());

  // Two attachment points. A standalone piece numbered [*:2] is not parseable
  // (map numbers must form 1..m), so renumber a parsed piece via from_graph.
  Fragment var2 = parse_fragment("[*:1]C(=O)[*:2]");
  Fragment c1 = parse_fragment("[*:1]N");
  Fragment c2;
  {
    Fragment base = parse_fragment("[*:1]O");
    std::vector<Atom> atoms = base.atoms();
    for (auto& a : atoms)
      if (a.is_wildcard()) a.attachment = 2;
    c2 = Fragment::from_graph(std::move(atoms), base.bonds(), /*validate=*/false);
  }
  Fragment mol2 = substitute({c1, c2}, var2);
  CHECK(mol2.canonical() == parse_fragment("NC(=O)O").canonical());

  // Mismatched numbering throws.
  CHECK_THROWS_AS(substitute({parse_fragment("[*:2]C")}, variable), SyntaxError);
}

TEST_CASE("canonical emission covers the whole graph with provenance") {
  Fragment f = parse_fragment("[*:1]c1ccc(C(=O)Cl)cc1");
  auto toks = canonical_emission(f);
  std::string joined;
  std::set<int> atom_tokens;
  for (const auto& t : toks) {
    joined += t.text;
    if (t.atom >= 0 && t.atom2 < 0 && t.text != "(" && t.text != ")") atom_tokens.insert(t.atom);
  }
  CHECK(joined == f.canonical());
  CHECK(atom_tokens.size() == f.atoms().size());
  // Every token maps to at least one atom.
  for (const auto& t : toks) CHECK(t.atom >= 0);
}

TEST_CASE("random graph round-trips through parse and canonicalize") {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 200; ++i) {
    Fragment f = random_fragment(rng, 2 + int(rng() % 10));
    Fragment re = parse_fragment(f.canonical());
    REQUIRE(re.canonical() == f.canonical());
    // The factorial oracle stays affordable on the smaller draws.
    if (f.atoms().size() <= 8) CHECK(brute_force_isomorphic(f, re));
  }
}
