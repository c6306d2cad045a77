#include "mmpt/fragment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <queue>
#include <set>
#include <sstream>

namespace mmpt {

namespace {

struct ElementInfo {
  const char* symbol;
  int valence;
  double weight;
  bool aromatic_allowed;
};

constexpr std::array<ElementInfo, 10> kElements{{
    {"B", 3, 10.811, true},
    {"C", 4, 12.011, true},
    {"N", 3, 14.007, true},
    {"O", 2, 15.999, true},
    {"P", 5, 30.974, true},
    {"S", 6, 32.06, true},
    {"F", 1, 18.998, false},
    {"Cl", 1, 35.45, false},
    {"Br", 1, 79.904, false},
    {"I", 1, 126.904, false},
}};

constexpr double kHydrogenWeight = 1.008;

const ElementInfo* find_element(const std::string& symbol) {
  for (const auto& e : kElements) {
    if (symbol == e.symbol) return &e;
  }
  return nullptr;
}

int element_index(const std::string& symbol) {
  for (size_t i = 0; i < kElements.size(); ++i) {
    if (symbol == kElements[i].symbol) return static_cast<int>(i);
  }
  return -1;
}

// Bond contribution in half-units used by the implicit-hydrogen model
// (single 2, double 4, triple 6, aromatic 3).
int bond_half_units(BondOrder o) {
  switch (o) {
    case BondOrder::Single: return 2;
    case BondOrder::Double: return 4;
    case BondOrder::Triple: return 6;
    case BondOrder::Aromatic: return 3;
  }
  return 2;
}

// Bond contribution used by the valence acceptance check. Aromatic bonds
// count one unit so that bracket-H heteroaromatics ([nH]) remain valid
// without aromaticity perception.
int bond_check_units(BondOrder o) {
  switch (o) {
    case BondOrder::Single: return 1;
    case BondOrder::Double: return 2;
    case BondOrder::Triple: return 3;
    case BondOrder::Aromatic: return 1;
  }
  return 1;
}

struct LexedToken {
  enum class Kind { Atom, Bond, BranchOpen, BranchClose, Ring };
  Kind kind;
  std::string text;
  Atom atom;              // Kind::Atom
  BondOrder bond = BondOrder::Single;  // Kind::Bond
  int ring = 0;           // Kind::Ring
};

bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }
bool is_lower(char c) { return c >= 'a' && c <= 'z'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Parses the interior of a bracket atom: "<elem><charge><Hn>" or "*:n".
// `pos` points just past '['; on success points just past ']'.
Atom lex_bracket(std::string_view text, size_t& pos) {
  Atom atom;
  if (pos >= text.size()) throw LexError("unterminated bracket atom");
  if (text[pos] == '*') {
    ++pos;
    if (pos >= text.size() || text[pos] != ':') throw LexError("wildcard requires ':<n>'");
    ++pos;
    if (pos >= text.size() || !is_digit(text[pos])) throw LexError("wildcard requires map number");
    int n = 0;
    size_t digits = 0;
    while (pos < text.size() && is_digit(text[pos]) && digits < 3) {
      n = n * 10 + (text[pos] - '0');
      ++pos;
      ++digits;
    }
    if (n < 1) throw LexError("wildcard map number must be >= 1");
    if (pos >= text.size() || text[pos] != ']') throw LexError("unterminated wildcard");
    ++pos;
    atom.element = "*";
    atom.attachment = n;
    return atom;
  }

  // Element symbol, longest match first for Cl/Br.
  std::string sym;
  if (pos + 1 < text.size() && is_upper(text[pos]) && is_lower(text[pos + 1]) &&
      text[pos + 1] != 'h') {
    std::string two{text.substr(pos, 2)};
    if (find_element(two)) {
      sym = two;
      pos += 2;
    }
  }
  if (sym.empty()) {
    char c = text[pos];
    std::string one(1, static_cast<char>(is_lower(c) ? c - 'a' + 'A' : c));
    const ElementInfo* e = find_element(one);
    if (!e) throw LexError("unknown element in bracket atom");
    if (is_lower(c)) {
      if (!e->aromatic_allowed) throw LexError("element cannot be aromatic");
      atom.aromatic = true;
    }
    sym = one;
    ++pos;
  }
  atom.element = sym;

  // Optional charge: ('+'|'-') digit?
  if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) {
    int sign = text[pos] == '+' ? 1 : -1;
    ++pos;
    int magnitude = 1;
    if (pos < text.size() && is_digit(text[pos])) {
      magnitude = text[pos] - '0';
      ++pos;
    }
    atom.charge = sign * magnitude;
  }

  // Optional explicit hydrogen count: 'H' digit?
  atom.hcount = 0;  // bracket atoms default to zero hydrogens
  if (pos < text.size() && text[pos] == 'H') {
    ++pos;
    int h = 1;
    if (pos < text.size() && is_digit(text[pos])) {
      h = text[pos] - '0';
      ++pos;
    }
    atom.hcount = h;
  }

  if (pos >= text.size() || text[pos] != ']') throw LexError("unterminated bracket atom");
  ++pos;
  return atom;
}

std::vector<LexedToken> lex(std::string_view text) {
  std::vector<LexedToken> out;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t start = pos;
    char c = text[pos];
    LexedToken tok;
    if (c == '(') {
      tok.kind = LexedToken::Kind::BranchOpen;
      ++pos;
    } else if (c == ')') {
      tok.kind = LexedToken::Kind::BranchClose;
      ++pos;
    } else if (c == '-' || c == '=' || c == '#' || c == ':') {
      tok.kind = LexedToken::Kind::Bond;
      tok.bond = c == '-'   ? BondOrder::Single
                 : c == '=' ? BondOrder::Double
                 : c == '#' ? BondOrder::Triple
                            : BondOrder::Aromatic;
      ++pos;
    } else if (c >= '1' && c <= '9') {
      tok.kind = LexedToken::Kind::Ring;
      tok.ring = c - '0';
      ++pos;
    } else if (c == '%') {
      if (pos + 2 >= text.size() || !is_digit(text[pos + 1]) || !is_digit(text[pos + 2]))
        throw LexError("'%' ring closure requires two digits");
      tok.kind = LexedToken::Kind::Ring;
      tok.ring = (text[pos + 1] - '0') * 10 + (text[pos + 2] - '0');
      if (tok.ring < 10) throw LexError("'%' ring closure must be >= 10");
      pos += 3;
    } else if (c == '[') {
      ++pos;
      tok.kind = LexedToken::Kind::Atom;
      tok.atom = lex_bracket(text, pos);
    } else if (is_upper(c)) {
      std::string sym(1, c);
      if (pos + 1 < text.size() && is_lower(text[pos + 1])) {
        std::string two = sym + text[pos + 1];
        if (find_element(two)) sym = two;
      }
      const ElementInfo* e = find_element(sym);
      if (!e) throw LexError(std::string("unknown element '") + c + "'");
      tok.kind = LexedToken::Kind::Atom;
      tok.atom.element = sym;
      pos += sym.size();
    } else if (is_lower(c)) {
      std::string one(1, static_cast<char>(c - 'a' + 'A'));
      const ElementInfo* e = find_element(one);
      if (!e || !e->aromatic_allowed) throw LexError(std::string("unknown character '") + c + "'");
      tok.kind = LexedToken::Kind::Atom;
      tok.atom.element = one;
      tok.atom.aromatic = true;
      ++pos;
    } else {
      throw LexError(std::string("unknown character '") + c + "'");
    }
    tok.text = std::string(text.substr(start, pos - start));
    out.push_back(std::move(tok));
  }
  return out;
}

struct GraphBuild {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  // Bonds formed by ring closures (indices into `bonds`), used by the
  // aromatic-atom validity rule.
  std::vector<bool> ring_bond;
};

BondOrder default_order(const Atom& a, const Atom& b) {
  return (a.aromatic && b.aromatic) ? BondOrder::Aromatic : BondOrder::Single;
}

GraphBuild parse_to_graph(std::string_view text) {
  if (text.empty()) throw SyntaxError("empty fragment string");
  std::vector<LexedToken> toks = lex(text);

  GraphBuild g;
  std::vector<int> branch_stack;
  int prev = -1;
  std::optional<BondOrder> pending;
  // ring number -> (atom index, bond order given at the opening side)
  std::map<int, std::pair<int, std::optional<BondOrder>>> open_rings;

  auto add_bond = [&](int a, int b, BondOrder order, bool from_ring) {
    if (a == b) throw SyntaxError("ring closure bonds an atom to itself");
    for (const Bond& e : g.bonds) {
      if ((e.a == a && e.b == b) || (e.a == b && e.b == a))
        throw SyntaxError("duplicate bond between atoms");
    }
    g.bonds.push_back(Bond{a, b, order});
    g.ring_bond.push_back(from_ring);
  };

  for (const LexedToken& tok : toks) {
    switch (tok.kind) {
      case LexedToken::Kind::Atom: {
        int idx = static_cast<int>(g.atoms.size());
        g.atoms.push_back(tok.atom);
        if (prev >= 0) {
          BondOrder order = pending ? *pending : default_order(g.atoms[prev], g.atoms[idx]);
          add_bond(prev, idx, order, false);
        } else if (pending) {
          throw SyntaxError("bond symbol before first atom");
        }
        pending.reset();
        prev = idx;
        break;
      }
      case LexedToken::Kind::Bond: {
        if (prev < 0) throw SyntaxError("bond symbol before first atom");
        if (pending) throw SyntaxError("consecutive bond symbols");
        pending = tok.bond;
        break;
      }
      case LexedToken::Kind::BranchOpen: {
        if (prev < 0) throw SyntaxError("branch open before first atom");
        if (pending) throw SyntaxError("bond symbol before branch open");
        branch_stack.push_back(prev);
        break;
      }
      case LexedToken::Kind::BranchClose: {
        if (branch_stack.empty()) throw SyntaxError("unbalanced branch close");
        if (pending) throw SyntaxError("dangling bond symbol at branch close");
        prev = branch_stack.back();
        branch_stack.pop_back();
        break;
      }
      case LexedToken::Kind::Ring: {
        if (prev < 0) throw SyntaxError("ring closure before first atom");
        auto it = open_rings.find(tok.ring);
        if (it == open_rings.end()) {
          open_rings.emplace(tok.ring, std::make_pair(prev, pending));
        } else {
          auto [other, other_order] = it->second;
          open_rings.erase(it);
          if (pending && other_order && *pending != *other_order)
            throw SyntaxError("conflicting bond orders on ring closure");
          BondOrder order = pending       ? *pending
                            : other_order ? *other_order
                                          : default_order(g.atoms[other], g.atoms[prev]);
          add_bond(other, prev, order, true);
        }
        pending.reset();
        break;
      }
    }
  }

  if (!branch_stack.empty()) throw SyntaxError("unbalanced branch open");
  if (!open_rings.empty()) throw SyntaxError("unmatched ring closure");
  if (pending) throw SyntaxError("dangling bond symbol");
  if (g.atoms.empty()) throw SyntaxError("no atoms");
  return g;
}

std::vector<std::vector<std::pair<int, BondOrder>>> adjacency(const std::vector<Atom>& atoms,
                                                              const std::vector<Bond>& bonds) {
  std::vector<std::vector<std::pair<int, BondOrder>>> adj(atoms.size());
  for (const Bond& b : bonds) {
    adj[b.a].emplace_back(b.b, b.order);
    adj[b.b].emplace_back(b.a, b.order);
  }
  return adj;
}

// Bonds not on any cycle (bridges), via removal + reachability. Fragments are
// small, so the quadratic cost is irrelevant.
std::vector<bool> bridge_flags(const std::vector<Atom>& atoms, const std::vector<Bond>& bonds) {
  auto adj = adjacency(atoms, bonds);
  std::vector<bool> bridge(bonds.size(), false);
  for (size_t i = 0; i < bonds.size(); ++i) {
    const Bond& cut = bonds[i];
    std::vector<bool> seen(atoms.size(), false);
    std::queue<int> q;
    q.push(cut.a);
    seen[cut.a] = true;
    while (!q.empty()) {
      int v = q.front();
      q.pop();
      for (auto [u, order] : adj[v]) {
        (void)order;
        if ((v == cut.a && u == cut.b) || (v == cut.b && u == cut.a)) continue;
        if (!seen[u]) {
          seen[u] = true;
          q.push(u);
        }
      }
    }
    bridge[i] = !seen[cut.b];
  }
  return bridge;
}

void validate_graph(const std::vector<Atom>& atoms, const std::vector<Bond>& bonds) {
  if (atoms.empty()) throw SyntaxError("empty fragment");

  for (const Bond& b : bonds) {
    if (b.a < 0 || b.b < 0 || b.a >= static_cast<int>(atoms.size()) ||
        b.b >= static_cast<int>(atoms.size()) || b.a == b.b)
      throw SyntaxError("malformed bond");
  }

  auto adj = adjacency(atoms, bonds);

  // Connectivity.
  std::vector<bool> seen(atoms.size(), false);
  std::queue<int> q;
  q.push(0);
  seen[0] = true;
  size_t reached = 1;
  while (!q.empty()) {
    int v = q.front();
    q.pop();
    for (auto [u, order] : adj[v]) {
      (void)order;
      if (!seen[u]) {
        seen[u] = true;
        ++reached;
        q.push(u);
      }
    }
  }
  if (reached != atoms.size()) throw DisconnectedError("fragment graph is disconnected");

  // Wildcards: degree exactly one, single bond, map numbers {1..m}.
  std::set<int> attach_numbers;
  for (size_t i = 0; i < atoms.size(); ++i) {
    const Atom& a = atoms[i];
    if (a.is_wildcard()) {
      if (a.attachment < 1) throw SyntaxError("wildcard without map number");
      if (!attach_numbers.insert(a.attachment).second)
        throw SyntaxError("duplicate attachment map number");
      if (adj[i].size() != 1 || adj[i][0].second != BondOrder::Single)
        throw ValenceError("wildcard must have exactly one single bond");
    } else {
      if (a.attachment != 0) throw SyntaxError("map number on non-wildcard atom");
      if (!find_element(a.element)) throw SyntaxError("unknown element");
      if (a.aromatic && !find_element(a.element)->aromatic_allowed)
        throw SyntaxError("element cannot be aromatic");
    }
  }
  int m = static_cast<int>(attach_numbers.size());
  if (!attach_numbers.empty() &&
      (*attach_numbers.begin() != 1 || *attach_numbers.rbegin() != m))
    throw SyntaxError("attachment map numbers must form 1..m");

  // Valence bounds.
  std::vector<bool> bridges;
  for (size_t i = 0; i < atoms.size(); ++i) {
    const Atom& a = atoms[i];
    if (a.is_wildcard()) continue;
    int load = a.hcount.value_or(0);
    bool has_aromatic_or_cycle_bond = false;
    for (size_t bi = 0; bi < bonds.size(); ++bi) {
      const Bond& b = bonds[bi];
      if (b.a != static_cast<int>(i) && b.b != static_cast<int>(i)) continue;
      load += bond_check_units(b.order);
      if (b.order == BondOrder::Aromatic) has_aromatic_or_cycle_bond = true;
      if (!has_aromatic_or_cycle_bond && a.aromatic) {
        if (bridges.empty()) bridges = bridge_flags(atoms, bonds);
        if (!bridges[bi]) has_aromatic_or_cycle_bond = true;
      }
    }
    int bound = valence_bound(a.element, a.charge);
    if (load > bound)
      throw ValenceError("valence bound exceeded on " + a.element);
    if (a.aromatic && !has_aromatic_or_cycle_bond)
      throw ValenceError("aromatic atom without aromatic or ring bond");
  }
}

// ---------------------------------------------------------------------------
// Canonicalization: iterative neighborhood refinement plus individualization
// branching, then a deterministic DFS emission. The minimum string over all
// branches is the canonical form.
// ---------------------------------------------------------------------------

using RankKey = std::vector<long long>;

std::vector<int> dense_ranks(const std::vector<RankKey>& keys) {
  std::vector<int> order(keys.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(),
            [&](int x, int y) { return keys[x] < keys[y]; });
  std::vector<int> rank(keys.size(), 0);
  int r = 0;
  for (size_t i = 0; i < order.size(); ++i) {
    if (i > 0 && keys[order[i]] != keys[order[i - 1]]) ++r;
    rank[order[i]] = r;
  }
  return rank;
}

int distinct_count(const std::vector<int>& ranks) {
  return ranks.empty() ? 0 : *std::max_element(ranks.begin(), ranks.end()) + 1;
}

struct Canonicalizer {
  const std::vector<Atom>& atoms;
  const std::vector<Bond>& bonds;
  std::vector<std::vector<std::pair<int, BondOrder>>> adj;

  Canonicalizer(const std::vector<Atom>& a, const std::vector<Bond>& b)
      : atoms(a), bonds(b), adj(adjacency(a, b)) {}

  std::vector<int> initial_ranks() const {
    std::vector<RankKey> keys(atoms.size());
    for (size_t i = 0; i < atoms.size(); ++i) {
      const Atom& a = atoms[i];
      keys[i] = {a.is_wildcard() ? 1 : 0,
                 element_index(a.element),
                 a.aromatic ? 1 : 0,
                 a.charge,
                 a.hcount ? static_cast<long long>(*a.hcount) : -1,
                 a.attachment,
                 static_cast<long long>(adj[i].size())};
    }
    return dense_ranks(keys);
  }

  std::vector<int> refine(std::vector<int> ranks) const {
    int classes = distinct_count(ranks);
    while (classes < static_cast<int>(atoms.size())) {
      std::vector<RankKey> keys(atoms.size());
      for (size_t i = 0; i < atoms.size(); ++i) {
        RankKey k{ranks[i]};
        std::vector<std::pair<int, int>> nbr;
        nbr.reserve(adj[i].size());
        for (auto [u, order] : adj[i])
          nbr.emplace_back(static_cast<int>(order), ranks[u]);
        std::sort(nbr.begin(), nbr.end());
        for (auto [o, r] : nbr) {
          k.push_back(o);
          k.push_back(r);
        }
        keys[i] = std::move(k);
      }
      std::vector<int> next = dense_ranks(keys);
      int next_classes = distinct_count(next);
      if (next_classes == classes) return next;
      ranks = std::move(next);
      classes = next_classes;
    }
    return ranks;
  }

  // Recursively individualize tied classes; returns the minimal emission.
  void search(const std::vector<int>& ranks, std::string& best,
              std::vector<int>* best_ranks) const {
    if (distinct_count(ranks) == static_cast<int>(atoms.size())) {
      std::string s = emit_string(ranks);
      if (best.empty() || s < best) {
        best = s;
        if (best_ranks) *best_ranks = ranks;
      }
      return;
    }
    // Smallest tied rank value.
    int target = -1;
    for (int r = 0;; ++r) {
      int count = 0;
      for (int v : ranks)
        if (v == r) ++count;
      if (count > 1) {
        target = r;
        break;
      }
      if (count == 0) break;
    }
    for (size_t i = 0; i < atoms.size(); ++i) {
      if (ranks[i] != target) continue;
      std::vector<RankKey> keys(atoms.size());
      for (size_t j = 0; j < atoms.size(); ++j)
        keys[j] = {2LL * ranks[j] + ((j == i) ? 0 : 1)};
      search(refine(dense_ranks(keys)), best, best_ranks);
    }
  }

  std::vector<int> canonical_ranks() const {
    std::vector<int> ranks = refine(initial_ranks());
    std::string best;
    std::vector<int> best_ranks = ranks;
    search(ranks, best, &best_ranks);
    return best_ranks;
  }

  std::string emit_string(const std::vector<int>& ranks) const {
    std::string out;
    for (const auto& t : emit(ranks)) out += t.text;
    return out;
  }

  struct Tok {
    std::string text;
    int atom = -1;
    int atom2 = -1;
  };

  std::vector<Tok> emit(const std::vector<int>& ranks) const {
    size_t n = atoms.size();
    int root = 0;
    for (size_t i = 0; i < n; ++i)
      if (ranks[i] < ranks[root]) root = static_cast<int>(i);

    // DFS tree with children visited in rank order; non-tree edges become
    // ring closures recorded as (earlier-visited endpoint, later endpoint).
    std::vector<std::vector<int>> children(n);
    std::vector<int> preorder, pos(n, -1);
    std::vector<std::pair<int, int>> ring_edges;
    {
      std::vector<bool> visited(n, false);
      std::set<std::pair<int, int>> recorded;
      auto dfs = [&](auto&& self, int v, int par) -> void {
        visited[v] = true;
        pos[v] = static_cast<int>(preorder.size());
        preorder.push_back(v);
        std::vector<int> nbrs;
        for (auto [u, order] : adj[v]) {
          (void)order;
          nbrs.push_back(u);
        }
        std::sort(nbrs.begin(), nbrs.end(), [&](int x, int y) { return ranks[x] < ranks[y]; });
        for (int u : nbrs) {
          if (u == par) continue;
          if (!visited[u]) {
            children[v].push_back(u);
            self(self, u, v);
          } else {
            auto key = std::minmax(v, u);
            if (recorded.insert({key.first, key.second}).second)
              ring_edges.emplace_back(pos[u] < pos[v] ? u : v, pos[u] < pos[v] ? v : u);
          }
        }
      };
      dfs(dfs, root, -1);
    }

    // Ring digit assignment in emission order; digits are reusable after close.
    struct RingUse {
      int digit;
      int open_atom;
      int close_atom;
      BondOrder order;
    };
    std::vector<RingUse> ring_uses;
    std::vector<std::vector<int>> opens_at(n), closes_at(n);  // indices into ring_uses
    {
      std::set<int> free_digits;
      for (int d = 1; d <= 99; ++d) free_digits.insert(d);
      // Per atom: ring edges opening here, ordered by partner rank.
      std::vector<std::vector<std::pair<int, int>>> edge_open(n);  // (partner, edge idx)
      for (size_t e = 0; e < ring_edges.size(); ++e) {
        auto [first, second] = ring_edges[e];
        if (pos[first] > pos[second]) std::swap(first, second);
        edge_open[first].emplace_back(second, static_cast<int>(e));
      }
      for (auto& v : edge_open)
        std::sort(v.begin(), v.end(),
                  [&](auto& x, auto& y) { return ranks[x.first] < ranks[y.first]; });

      std::vector<int> edge_digit(ring_edges.size(), -1);
      std::vector<int> edge_use(ring_edges.size(), -1);
      for (int v : preorder) {
        // Closing digits (partner emitted earlier), ascending digit.
        std::vector<std::pair<int, int>> closing;  // (digit, edge)
        for (size_t e = 0; e < ring_edges.size(); ++e) {
          auto [a, b] = ring_edges[e];
          int late = pos[a] > pos[b] ? a : b;
          if (late == v) closing.emplace_back(edge_digit[e], static_cast<int>(e));
        }
        std::sort(closing.begin(), closing.end());
        for (auto [d, e] : closing) {
          closes_at[v].push_back(edge_use[e]);
          ring_uses[edge_use[e]].close_atom = v;
          free_digits.insert(d);
        }
        for (auto [partner, e] : edge_open[v]) {
          int d = *free_digits.begin();
          free_digits.erase(free_digits.begin());
          edge_digit[e] = d;
          BondOrder order = BondOrder::Single;
          for (auto [u, o] : adj[v])
            if (u == partner) order = o;
          ring_uses.push_back(RingUse{d, v, -1, order});
          edge_use[e] = static_cast<int>(ring_uses.size()) - 1;
          opens_at[v].push_back(edge_use[e]);
        }
      }
    }

    std::vector<Tok> out;
    auto emit_bond_symbol = [&](int a, int b, BondOrder order) {
      BondOrder def = default_order(atoms[a], atoms[b]);
      if (order == def) return;
      const char* sym = order == BondOrder::Single   ? "-"
                        : order == BondOrder::Double ? "="
                        : order == BondOrder::Triple ? "#"
                                                     : ":";
      out.push_back(Tok{sym, a, b});
    };
    auto ring_text = [](int d) {
      if (d <= 9) return std::string(1, static_cast<char>('0' + d));
      return "%" + std::to_string(d);
    };

    // Recursive emission; close_atom of every ring use is already known
    // because the digit-assignment pass walked the full preorder.
    auto emit_subtree = [&](auto&& self, int v) -> void {
      out.push_back(Tok{atom_token(atoms[v]), v, -1});
      for (int ui : closes_at[v]) {
        const RingUse& u = ring_uses[ui];
        out.push_back(Tok{ring_text(u.digit), u.open_atom, v});
      }
      for (int ui : opens_at[v]) {
        const RingUse& u = ring_uses[ui];
        emit_bond_symbol(v, u.close_atom, u.order);
        out.push_back(Tok{ring_text(u.digit), v, u.close_atom});
      }
      const auto& kids = children[v];
      for (size_t i = 0; i < kids.size(); ++i) {
        int c = kids[i];
        BondOrder order = BondOrder::Single;
        for (auto [u, o] : adj[v])
          if (u == c) order = o;
        bool last = (i + 1 == kids.size());
        if (!last) out.push_back(Tok{"(", v, c});
        emit_bond_symbol(v, c, order);
        self(self, c);
        if (!last) out.push_back(Tok{")", v, c});
      }
    };
    emit_subtree(emit_subtree, root);
    return out;
  }

  static std::string atom_token(const Atom& a) {
    if (a.is_wildcard()) return "[*:" + std::to_string(a.attachment) + "]";
    std::string elem = a.element;
    if (a.aromatic)
      for (auto& c : elem) c = static_cast<char>(c - 'A' + 'a');
    if (a.charge == 0 && !a.hcount) return elem;
    std::string t = "[" + elem;
    if (a.charge != 0) {
      t += a.charge > 0 ? '+' : '-';
      int mag = std::abs(a.charge);
      if (mag != 1) t += std::to_string(mag);
    }
    if (a.hcount && *a.hcount > 0) {
      t += 'H';
      if (*a.hcount != 1) t += std::to_string(*a.hcount);
    }
    t += ']';
    return t;
  }
};

}  // namespace

int valence_bound(const std::string& element, int charge) {
  const ElementInfo* e = find_element(element);
  if (!e) return -1;
  return std::max(0, e->valence + charge);
}

double atomic_weight(const std::string& element) {
  if (element == "H") return kHydrogenWeight;
  const ElementInfo* e = find_element(element);
  return e ? e->weight : 0.0;
}

Fragment Fragment::from_graph(std::vector<Atom> atoms, std::vector<Bond> bonds, bool validate) {
  if (validate) validate_graph(atoms, bonds);
  Fragment f;
  f.atoms_ = std::move(atoms);
  f.bonds_ = std::move(bonds);
  Canonicalizer canon(f.atoms_, f.bonds_);
  f.canonical_ = canon.emit_string(canon.canonical_ranks());
  return f;
}

int Fragment::attachment_count() const {
  int n = 0;
  for (const Atom& a : atoms_)
    if (a.is_wildcard()) ++n;
  return n;
}

int Fragment::heavy_atom_count() const {
  int n = 0;
  for (const Atom& a : atoms_)
    if (!a.is_wildcard()) ++n;
  return n;
}

std::vector<std::pair<int, BondOrder>> Fragment::neighbors(int atom) const {
  std::vector<std::pair<int, BondOrder>> out;
  for (const Bond& b : bonds_) {
    if (b.a == atom) out.emplace_back(b.b, b.order);
    if (b.b == atom) out.emplace_back(b.a, b.order);
  }
  return out;
}

int Fragment::degree(int atom) const {
  int d = 0;
  for (const Bond& b : bonds_)
    if (b.a == atom || b.b == atom) ++d;
  return d;
}

int Fragment::total_hydrogens(int atom) const {
  const Atom& a = atoms_[atom];
  if (a.is_wildcard()) return 0;
  if (a.hcount) return *a.hcount;
  int half_units = 0;
  for (const Bond& b : bonds_)
    if (b.a == atom || b.b == atom) half_units += bond_half_units(b.order);
  int load = (half_units + 1) / 2;  // ceil
  return std::max(0, valence_bound(a.element, a.charge) - load);
}

double Fragment::molecular_weight() const {
  double w = 0.0;
  for (size_t i = 0; i < atoms_.size(); ++i) {
    if (atoms_[i].is_wildcard()) continue;
    w += atomic_weight(atoms_[i].element);
    w += kHydrogenWeight * total_hydrogens(static_cast<int>(i));
  }
  return w;
}

Fragment parse_fragment(std::string_view text) {
  GraphBuild g = parse_to_graph(text);
  validate_graph(g.atoms, g.bonds);
  Fragment f;
  f.atoms_ = std::move(g.atoms);
  f.bonds_ = std::move(g.bonds);
  Canonicalizer canon(f.atoms_, f.bonds_);
  f.canonical_ = canon.emit_string(canon.canonical_ranks());
  return f;
}

std::optional<Fragment> try_parse(std::string_view text) noexcept {
  try {
    return parse_fragment(text);
  } catch (const FragmentError&) {
    return std::nullopt;
  } catch (...) {
    return std::nullopt;
  }
}

std::string canonicalize(const Fragment& f) { return f.canonical(); }

TokenSequence tokenize(std::string_view text) {
  std::vector<LexedToken> toks = lex(text);
  TokenSequence out;
  out.reserve(toks.size());
  for (auto& t : toks) out.push_back(std::move(t.text));
  return out;
}

std::string detokenize(const TokenSequence& tokens) {
  std::string out;
  for (const auto& t : tokens) out += t;
  return out;
}

int attachment_count(const Fragment& f) { return f.attachment_count(); }

std::vector<EmittedToken> canonical_emission(const Fragment& f) {
  Canonicalizer canon(f.atoms(), f.bonds());
  std::vector<EmittedToken> out;
  for (const auto& t : canon.emit(canon.canonical_ranks()))
    out.push_back(EmittedToken{t.text, t.atom, t.atom2});
  return out;
}

Fragment substitute(const std::vector<Fragment>& constant_pieces, const Fragment& variable) {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  // attachment number -> index of the wildcard's neighbor in the new graph
  std::map<int, int> variable_port, constant_port;

  auto append = [&](const Fragment& f, std::map<int, int>& ports) {
    std::vector<int> remap(f.atoms().size(), -1);
    for (size_t i = 0; i < f.atoms().size(); ++i) {
      if (f.atoms()[i].is_wildcard()) continue;
      remap[i] = static_cast<int>(atoms.size());
      atoms.push_back(f.atoms()[i]);
    }
    for (const Bond& b : f.bonds()) {
      const Atom& aa = f.atoms()[b.a];
      const Atom& ab = f.atoms()[b.b];
      if (aa.is_wildcard() || ab.is_wildcard()) {
        int wildcard = aa.is_wildcard() ? b.a : b.b;
        int real = aa.is_wildcard() ? b.b : b.a;
        ports[f.atoms()[wildcard].attachment] = remap[real];
        continue;
      }
      bonds.push_back(Bond{remap[b.a], remap[b.b], b.order});
    }
  };

  append(variable, variable_port);
  for (const Fragment& piece : constant_pieces) append(piece, constant_port);

  if (variable_port.size() != constant_port.size())
    throw SyntaxError("attachment point count mismatch in substitution");
  for (auto [n, vi] : variable_port) {
    auto it = constant_port.find(n);
    if (it == constant_port.end())
      throw SyntaxError("no matching attachment point " + std::to_string(n));
    bonds.push_back(Bond{vi, it->second, BondOrder::Single});
  }
  return Fragment::from_graph(std::move(atoms), std::move(bonds));
}

}  // namespace mmpt
