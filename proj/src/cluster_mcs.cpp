#include "mmpt/cluster_mcs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>
#include <tuple>

#include "nlohmann/json.hpp"

namespace mmpt {
namespace {

bool atoms_compatible(const Atom& x, const Atom& y) {
  if (x.is_wildcard() != y.is_wildcard()) return false;
  if (x.is_wildcard()) return true;
  return x.element == y.element && x.aromatic == y.aromatic;
}

// Position of each atom's own token in the canonical emission. Gives every
// algorithm below a visit order that depends only on the graph, not on how
// the caller happened to number atoms.
std::vector<int> emission_order(const Fragment& f) {
  std::vector<int> order(f.atoms().size(), 0);
  const auto toks = canonical_emission(f);
  int pos = 0;
  for (const auto& t : toks) {
    if (t.atom >= 0 && t.atom2 < 0) order[static_cast<size_t>(t.atom)] = pos++;
  }
  return order;
}

// Dense bond-order lookup; 0 means no bond.
std::vector<std::vector<uint8_t>> bond_matrix(const Fragment& f) {
  const int n = static_cast<int>(f.atoms().size());
  std::vector<std::vector<uint8_t>> m(n, std::vector<uint8_t>(n, 0));
  for (const auto& b : f.bonds()) {
    m[b.a][b.b] = m[b.b][b.a] = static_cast<uint8_t>(b.order);
  }
  return m;
}

Fragment build_common(const Fragment& a, const Fragment& b,
                      const std::vector<std::vector<uint8_t>>& ba,
                      const std::vector<std::vector<uint8_t>>& bb,
                      const std::vector<std::pair<int, int>>& mapping) {
  std::vector<int> to_new(a.atoms().size(), -1);
  std::vector<int> to_b(a.atoms().size(), -1);
  std::vector<Atom> atoms;
  atoms.reserve(mapping.size());
  for (const auto& [i, j] : mapping) {
    to_new[i] = static_cast<int>(atoms.size());
    to_b[i] = j;
    atoms.push_back(a.atoms()[i]);
  }
  std::vector<Bond> bonds;
  for (const auto& e : a.bonds()) {
    if (to_new[e.a] < 0 || to_new[e.b] < 0) continue;
    if (bb[to_b[e.a]][to_b[e.b]] != ba[e.a][e.b]) continue;
    bonds.push_back({to_new[e.a], to_new[e.b], e.order});
  }
  return Fragment::from_graph(std::move(atoms), std::move(bonds), /*validate=*/false);
}

struct McsSearch {
  const Fragment& a;
  const Fragment& b;
  std::vector<int> order_a, order_b;
  std::vector<std::vector<uint8_t>> ba, bb;
  std::vector<char> used_a, used_b, banned;
  std::vector<std::pair<int, int>> mapping;
  int seed_order = 0;

  int best_size = 0;
  std::string best_canon;
  Fragment best_fragment;

  McsSearch(const Fragment& a_, const Fragment& b_)
      : a(a_),
        b(b_),
        order_a(emission_order(a_)),
        order_b(emission_order(b_)),
        ba(bond_matrix(a_)),
        bb(bond_matrix(b_)),
        used_a(a_.atoms().size(), 0),
        used_b(b_.atoms().size(), 0),
        banned(a_.atoms().size() * b_.atoms().size(), 0) {}

  // Count-per-class upper bound on how many more pairs could still match.
  int remaining_bound() const {
    std::map<std::tuple<bool, std::string, bool>, std::pair<int, int>> classes;
    for (size_t i = 0; i < used_a.size(); ++i) {
      if (used_a[i] || order_a[i] <= seed_order) continue;
      const Atom& x = a.atoms()[i];
      classes[{x.is_wildcard(), x.is_wildcard() ? "" : x.element, x.aromatic}].first++;
    }
    for (size_t j = 0; j < used_b.size(); ++j) {
      if (used_b[j]) continue;
      const Atom& y = b.atoms()[j];
      classes[{y.is_wildcard(), y.is_wildcard() ? "" : y.element, y.aromatic}].second++;
    }
    int bound = 0;
    for (const auto& [k, c] : classes) bound += std::min(c.first, c.second);
    return bound;
  }

  void consider_best() {
    const int sz = static_cast<int>(mapping.size());
    if (sz < best_size) return;
    Fragment f = build_common(a, b, ba, bb, mapping);
    if (sz > best_size || f.canonical() < best_canon) {
      best_size = sz;
      best_canon = f.canonical();
      best_fragment = std::move(f);
    }
  }

  void extend() {
    consider_best();
    // Equal-size candidates must still be visited for the canonical tie-break,
    // so only strictly hopeless branches are cut.
    if (static_cast<int>(mapping.size()) + remaining_bound() < best_size) return;

    std::vector<std::pair<int, int>> cands;
    const int nb = static_cast<int>(b.atoms().size());
    for (int i = 0; i < static_cast<int>(a.atoms().size()); ++i) {
      if (used_a[i] || order_a[i] <= seed_order) continue;
      for (int j = 0; j < nb; ++j) {
        if (used_b[j] || banned[i * nb + j]) continue;
        if (!atoms_compatible(a.atoms()[i], b.atoms()[j])) continue;
        bool connected = false;
        for (const auto& [mi, mj] : mapping) {
          if (ba[mi][i] != 0 && ba[mi][i] == bb[mj][j]) {
            connected = true;
            break;
          }
        }
        if (connected) cands.emplace_back(i, j);
      }
    }
    std::sort(cands.begin(), cands.end(), [&](const auto& p, const auto& q) {
      return std::make_pair(order_a[p.first], order_b[p.second]) <
             std::make_pair(order_a[q.first], order_b[q.second]);
    });

    std::vector<int> banned_here;
    for (const auto& [i, j] : cands) {
      used_a[i] = used_b[j] = 1;
      mapping.emplace_back(i, j);
      extend();
      mapping.pop_back();
      used_a[i] = used_b[j] = 0;
      banned[i * nb + j] = 1;  // later branches may not re-add this pair
      banned_here.push_back(i * nb + j);
    }
    for (int id : banned_here) banned[id] = 0;
  }

  void run() {
    // Seed order: every mapping is grown exactly once, from its
    // emission-minimal atom on the `a` side.
    std::vector<int> seeds_a(a.atoms().size()), seeds_b(b.atoms().size());
    for (size_t i = 0; i < seeds_a.size(); ++i) seeds_a[i] = static_cast<int>(i);
    for (size_t j = 0; j < seeds_b.size(); ++j) seeds_b[j] = static_cast<int>(j);
    std::sort(seeds_a.begin(), seeds_a.end(), [&](int x, int y) { return order_a[x] < order_a[y]; });
    std::sort(seeds_b.begin(), seeds_b.end(), [&](int x, int y) { return order_b[x] < order_b[y]; });
    for (int i : seeds_a) {
      for (int j : seeds_b) {
        if (!atoms_compatible(a.atoms()[i], b.atoms()[j])) continue;
        used_a[i] = used_b[j] = 1;
        mapping.emplace_back(i, j);
        seed_order = order_a[i];
        extend();
        mapping.pop_back();
        used_a[i] = used_b[j] = 0;
      }
    }
  }
};

bool all_identical(const std::vector<Fragment>& outputs, const std::vector<int>& idx) {
  for (size_t k = 1; k < idx.size(); ++k) {
    if (outputs[idx[k]].canonical() != outputs[idx[0]].canonical()) return false;
  }
  return true;
}

// Average-linkage merge loop (Lance-Williams updates). In cutoff mode, stops
// when the closest pair is farther than `cutoff` and returns the surviving
// clusters; in split mode (cutoff < 0), merges to one cluster and returns the
// two children of the final merge.
std::vector<std::vector<int>> agglomerate(const std::vector<int>& idx,
                                          const std::vector<std::vector<double>>& d,
                                          double cutoff) {
  const int m = static_cast<int>(idx.size());
  std::vector<std::vector<int>> members(m);
  std::vector<double> cd(static_cast<size_t>(m) * m, 0.0);
  std::vector<int> size(m, 1);
  std::vector<char> active(m, 1);
  for (int i = 0; i < m; ++i) members[i] = {idx[i]};
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) cd[static_cast<size_t>(i) * m + j] = d[idx[i]][idx[j]];

  const bool split_mode = cutoff < 0.0;
  std::vector<std::vector<int>> last_children;
  int active_count = m;
  while (active_count > 1) {
    double best = 0.0;
    int bi = -1, bj = -1;
    for (int i = 0; i < m; ++i) {
      if (!active[i]) continue;
      for (int j = i + 1; j < m; ++j) {
        if (!active[j]) continue;
        const double dij = cd[static_cast<size_t>(i) * m + j];
        // Cluster indices follow smallest-member order by construction, so
        // (distance, i, j) is a deterministic total order.
        if (bi < 0 || dij < best ||
            (dij == best && std::make_pair(members[i][0], members[j][0]) <
                                std::make_pair(members[bi][0], members[bj][0]))) {
          best = dij;
          bi = i;
          bj = j;
        }
      }
    }
    if (!split_mode && best > cutoff) break;
    if (split_mode && active_count == 2) {
      last_children = {members[bi], members[bj]};
    }
    for (int k = 0; k < m; ++k) {
      if (!active[k] || k == bi || k == bj) continue;
      const double dk = (size[bi] * cd[static_cast<size_t>(k) * m + bi] +
                         size[bj] * cd[static_cast<size_t>(k) * m + bj]) /
                        (size[bi] + size[bj]);
      cd[static_cast<size_t>(k) * m + bi] = dk;
      cd[static_cast<size_t>(bi) * m + k] = dk;
    }
    std::vector<int> merged;
    std::merge(members[bi].begin(), members[bi].end(), members[bj].begin(), members[bj].end(),
               std::back_inserter(merged));
    members[bi] = std::move(merged);
    size[bi] += size[bj];
    active[bj] = 0;
    --active_count;
  }

  if (split_mode) {
    if (last_children.empty()) {  // m == 1: nothing to split
      last_children.push_back(members[0]);
    }
    std::sort(last_children.begin(), last_children.end(),
              [](const auto& x, const auto& y) { return x[0] < y[0]; });
    return last_children;
  }
  std::vector<std::vector<int>> out;
  for (int i = 0; i < m; ++i) {
    if (active[i]) out.push_back(std::move(members[i]));
  }
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x[0] < y[0]; });
  return out;
}

void split_oversized(const std::vector<Fragment>& outputs, const std::vector<std::vector<double>>& d,
                     const ClusterConfig& cfg, std::vector<int> idx,
                     std::vector<std::vector<int>>& out) {
  if (static_cast<int>(idx.size()) <= cfg.max_cluster_size) {
    out.push_back(std::move(idx));
    return;
  }
  if (all_identical(outputs, idx)) {
    std::cerr << "warning: cluster of " << idx.size()
              << " identical members exceeds max_cluster_size " << cfg.max_cluster_size
              << "; keeping it whole\n";
    out.push_back(std::move(idx));
    return;
  }
  for (auto& part : agglomerate(idx, d, /*cutoff=*/-1.0)) {
    split_oversized(outputs, d, cfg, std::move(part), out);
  }
}

}  // namespace

Fragment mcs(const Fragment& a, const Fragment& b) {
  if (a.empty() || b.empty()) throw NoCommonSubstructure("empty fragment has no common subgraph");
  McsSearch search(a, b);
  search.run();
  if (search.best_size == 0) {
    throw NoCommonSubstructure("fragments share no matchable atom");
  }
  return search.best_fragment;
}

Fragment mcs(const std::vector<Fragment>& members) {
  if (members.empty()) throw std::invalid_argument("mcs: at least one member required");
  std::vector<int> order(members.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int x, int y) {
    return std::make_pair(members[x].canonical(), x) < std::make_pair(members[y].canonical(), y);
  });

  Fragment fold = members[order[0]];
  for (size_t k = 1; k < order.size(); ++k) fold = mcs(fold, members[order[k]]);

  // A fold of subgraphs stays a subgraph of every member; the verification
  // pass below is a guard, and one shrink round restores the invariant if it
  // ever trips.
  for (int round = 0; round < 2; ++round) {
    bool ok = true;
    for (const auto& m : members) {
      if (!find_embedding(fold, m)) {
        fold = mcs(fold, m);
        ok = false;
      }
    }
    if (ok) return fold;
  }
  throw std::logic_error("mcs: fold failed verification after shrinking");
}

std::optional<std::vector<int>> find_embedding(const Fragment& pattern, const Fragment& target) {
  const int np = static_cast<int>(pattern.atoms().size());
  const int nt = static_cast<int>(target.atoms().size());
  if (np == 0 || np > nt) return std::nullopt;

  const auto op = emission_order(pattern);
  const auto ot = emission_order(target);
  const auto bp = bond_matrix(pattern);
  const auto bt = bond_matrix(target);

  // Visit pattern atoms in a connected order rooted at the emission-minimal
  // atom so each step is constrained by at least one already-placed neighbor.
  std::vector<int> visit;
  std::vector<char> seen(np, 0);
  while (static_cast<int>(visit.size()) < np) {
    int root = -1;
    for (int i = 0; i < np; ++i) {
      if (!seen[i] && (root < 0 || op[i] < op[root])) root = i;
    }
    visit.push_back(root);
    seen[root] = 1;
    for (size_t v = visit.size() - 1; v < visit.size(); ++v) {
      int grow = -1;
      for (int i = 0; i < np; ++i) {
        if (seen[i]) continue;
        bool adj = false;
        for (int u : visit)
          if (bp[u][i] != 0) adj = true;
        if (adj && (grow < 0 || op[i] < op[grow])) grow = i;
      }
      if (grow < 0) break;
      visit.push_back(grow);
      seen[grow] = 1;
    }
  }

  std::vector<int> target_by_rank(nt);
  for (int j = 0; j < nt; ++j) target_by_rank[j] = j;
  std::sort(target_by_rank.begin(), target_by_rank.end(),
            [&](int x, int y) { return ot[x] < ot[y]; });

  std::vector<int> map(np, -1);
  std::vector<char> used(nt, 0);
  std::function<bool(size_t)> place = [&](size_t step) -> bool {
    if (step == visit.size()) return true;
    const int p = visit[step];
    for (int t : target_by_rank) {
      if (used[t] || !atoms_compatible(pattern.atoms()[p], target.atoms()[t])) continue;
      bool ok = true;
      for (int q = 0; q < np && ok; ++q) {
        if (map[q] >= 0 && bp[p][q] != 0 && bt[t][map[q]] != bp[p][q]) ok = false;
      }
      if (!ok) continue;
      map[p] = t;
      used[t] = 1;
      if (place(step + 1)) return true;
      map[p] = -1;
      used[t] = 0;
    }
    return false;
  };
  if (!place(0)) return std::nullopt;
  return map;
}

double shared_substructure_similarity(const Fragment& a, const Fragment& b) {
  const int min_heavy = std::min(a.heavy_atom_count(), b.heavy_atom_count());
  if (min_heavy == 0) return 0.0;
  try {
    return static_cast<double>(mcs(a, b).heavy_atom_count()) / min_heavy;
  } catch (const NoCommonSubstructure&) {
    return 0.0;
  }
}

std::vector<Cluster> cluster_outputs(const std::vector<Fragment>& outputs,
                                     const ClusterConfig& cfg) {
  if (outputs.empty()) throw std::invalid_argument("cluster_outputs: outputs must be non-empty");
  if (cfg.threshold < 0.0 || cfg.threshold > 1.0)
    throw std::invalid_argument("cluster_outputs: threshold must lie in [0, 1]");
  if (cfg.max_cluster_size < 1)
    throw std::invalid_argument("cluster_outputs: max_cluster_size must be positive");

  const int n = static_cast<int>(outputs.size());
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(static_cast<size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);

  int threads = std::max(1, cfg.threads);
  threads = std::min<int>(threads, std::max<size_t>(pairs.size(), 1));
  if (threads <= 1 || pairs.size() < 2) {
    for (const auto& [i, j] : pairs)
      d[i][j] = d[j][i] = 1.0 - shared_substructure_similarity(outputs[i], outputs[j]);
  } else {
    std::vector<std::thread> pool;
    std::exception_ptr err;
    std::mutex err_mu;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t]() {
        try {
          for (size_t k = t; k < pairs.size(); k += threads) {
            const auto [i, j] = pairs[k];
            d[i][j] = d[j][i] = 1.0 - shared_substructure_similarity(outputs[i], outputs[j]);
          }
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!err) err = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
  }

  std::vector<int> all(n);
  for (int i = 0; i < n; ++i) all[i] = i;
  std::vector<std::vector<int>> final_sets;
  for (auto& c : agglomerate(all, d, 1.0 - cfg.threshold)) {
    split_oversized(outputs, d, cfg, std::move(c), final_sets);
  }
  std::sort(final_sets.begin(), final_sets.end(),
            [](const auto& x, const auto& y) { return x[0] < y[0]; });

  std::vector<Cluster> clusters;
  clusters.reserve(final_sets.size());
  for (size_t k = 0; k < final_sets.size(); ++k) {
    Cluster c;
    c.id = static_cast<int>(k);
    for (int i : final_sets[k]) c.members.push_back(outputs[i]);
    clusters.push_back(std::move(c));
  }
  return clusters;
}

std::vector<ClusterTemplate> make_cluster_templates(const std::vector<Cluster>& clusters,
                                                    const std::vector<double>& weights) {
  if (clusters.empty()) throw std::invalid_argument("make_cluster_templates: no clusters");
  std::vector<double> w = weights;
  if (w.empty()) {
    w.assign(clusters.size(), 1.0);
  } else if (w.size() != clusters.size()) {
    throw InvalidWeights("weight count does not match cluster count");
  }
  double sum = 0.0;
  for (double x : w) {
    if (!std::isfinite(x) || x < 0.0) throw InvalidWeights("weights must be finite and non-negative");
    sum += x;
  }
  if (sum <= 0.0) throw InvalidWeights("weights must not all be zero");
  for (double& x : w) x /= sum;

  std::vector<ClusterTemplate> out;
  out.reserve(clusters.size());
  for (size_t k = 0; k < clusters.size(); ++k) {
    const Cluster& c = clusters[k];
    if (c.members.empty())
      throw std::invalid_argument("make_cluster_templates: empty cluster");
    Fragment common = mcs(c.members);

    int rep = 0;
    for (size_t i = 1; i < c.members.size(); ++i) {
      if (c.members[i].canonical() < c.members[rep].canonical()) rep = static_cast<int>(i);
    }
    auto emb = find_embedding(common, c.members[rep]);
    if (!emb) throw std::logic_error("make_cluster_templates: mcs does not embed in representative");

    ClusterTemplate t;
    t.cluster = c;
    t.mcs = std::move(common);
    t.tmpl = template_from_substructure(c.members[rep], *emb);
    t.weight = w[k];
    out.push_back(std::move(t));
  }
  return out;
}

void write_cluster_templates_jsonl(std::ostream& os,
                                   const std::vector<ClusterTemplate>& templates) {
  for (const auto& t : templates) {
    nlohmann::json j;
    j["cluster_id"] = t.cluster.id;
    nlohmann::json members = nlohmann::json::array();
    for (const auto& m : t.cluster.members) members.push_back(m.canonical());
    j["members"] = std::move(members);
    j["mcs"] = t.mcs.canonical();
    j["template"] = template_to_string(t.tmpl);
    j["weight"] = t.weight;
    os << j.dump() << "\n";
  }
}

}  // namespace mmpt
