#include "mmpt/mmp.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace mmpt {

namespace {

// Bridge detection (bonds not on any cycle), iterative Tarjan lowlink.
std::vector<bool> find_bridges(const Fragment& f) {
  size_t n = f.atoms().size();
  std::vector<std::vector<std::pair<int, int>>> adj(n);  // (neighbor, bond idx)
  for (size_t i = 0; i < f.bonds().size(); ++i) {
    const Bond& b = f.bonds()[i];
    adj[b.a].emplace_back(b.b, static_cast<int>(i));
    adj[b.b].emplace_back(b.a, static_cast<int>(i));
  }
  std::vector<bool> bridge(f.bonds().size(), false);
  std::vector<int> disc(n, -1), low(n, 0);
  int timer = 0;

  struct Frame {
    int v;
    int parent_edge;
    size_t next = 0;
  };
  for (size_t start = 0; start < n; ++start) {
    if (disc[start] != -1) continue;
    std::vector<Frame> stack{{static_cast<int>(start), -1}};
    disc[start] = low[start] = timer++;
    while (!stack.empty()) {
      Frame& fr = stack.back();
      if (fr.next < adj[fr.v].size()) {
        auto [u, e] = adj[fr.v][fr.next++];
        if (e == fr.parent_edge) continue;
        if (disc[u] == -1) {
          disc[u] = low[u] = timer++;
          stack.push_back(Frame{u, e});
        } else {
          low[fr.v] = std::min(low[fr.v], disc[u]);
        }
      } else {
        int v = fr.v;
        int pe = fr.parent_edge;
        stack.pop_back();
        if (!stack.empty()) {
          int p = stack.back().v;
          low[p] = std::min(low[p], low[v]);
          if (low[v] > disc[p]) bridge[pe] = true;
        }
      }
    }
  }
  return bridge;
}

// Connected component ids after removing the given bonds.
std::vector<int> components_without(const Fragment& f, const std::vector<int>& removed) {
  size_t n = f.atoms().size();
  std::vector<std::vector<int>> adj(n);
  for (size_t i = 0; i < f.bonds().size(); ++i) {
    if (std::find(removed.begin(), removed.end(), static_cast<int>(i)) != removed.end()) continue;
    adj[f.bonds()[i].a].push_back(f.bonds()[i].b);
    adj[f.bonds()[i].b].push_back(f.bonds()[i].a);
  }
  std::vector<int> comp(n, -1);
  int c = 0;
  for (size_t s = 0; s < n; ++s) {
    if (comp[s] != -1) continue;
    std::vector<int> stack{static_cast<int>(s)};
    comp[s] = c;
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      for (int u : adj[v])
        if (comp[u] == -1) {
          comp[u] = c;
          stack.push_back(u);
        }
    }
    ++c;
  }
  return comp;
}

// Builds the fragment of one component, adding a wildcard per incident cut.
// `ports` maps cut index -> atom (in `f`) on this component's side.
Fragment component_fragment(const Fragment& f, const std::vector<int>& comp, int comp_id,
                            const std::vector<std::pair<int, int>>& ports) {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  std::vector<int> remap(f.atoms().size(), -1);
  for (size_t i = 0; i < f.atoms().size(); ++i) {
    if (comp[i] != comp_id) continue;
    remap[i] = static_cast<int>(atoms.size());
    atoms.push_back(f.atoms()[i]);
  }
  for (const Bond& b : f.bonds()) {
    if (remap[b.a] < 0 || remap[b.b] < 0) continue;
    bonds.push_back(Bond{remap[b.a], remap[b.b], b.order});
  }
  for (auto [number, anchor] : ports) {
    Atom w;
    w.element = "*";
    w.attachment = number;
    int wi = static_cast<int>(atoms.size());
    atoms.push_back(w);
    bonds.push_back(Bond{remap[anchor], wi, BondOrder::Single});
  }
  return Fragment::from_graph(std::move(atoms), std::move(bonds), /*validate=*/false);
}

void permutations_of_indices(std::vector<int>& idx, size_t from,
                             const std::vector<std::string>& keys,
                             std::vector<std::vector<int>>& out) {
  if (from == idx.size()) {
    out.push_back(idx);
    return;
  }
  // Permute only within runs of equal keys; unique keys stay fixed.
  size_t run_end = from + 1;
  while (run_end < idx.size() && keys[idx[run_end]] == keys[idx[from]]) ++run_end;
  std::vector<int> slice(idx.begin() + from, idx.begin() + run_end);
  std::sort(slice.begin(), slice.end());
  do {
    std::copy(slice.begin(), slice.end(), idx.begin() + from);
    permutations_of_indices(idx, run_end, keys, out);
  } while (std::next_permutation(slice.begin(), slice.end()));
}

void splits_for_cutset(const Fragment& mol, const std::vector<int>& cuts,
                       std::map<std::pair<std::string, std::string>, MolSplit>& dedup) {
  std::vector<int> comp = components_without(mol, cuts);
  int k = static_cast<int>(cuts.size());

  if (k == 1) {
    const Bond& b = mol.bonds()[cuts[0]];
    for (int orient = 0; orient < 2; ++orient) {
      int var_anchor = orient == 0 ? b.a : b.b;
      int con_anchor = orient == 0 ? b.b : b.a;
      Fragment variable = component_fragment(mol, comp, comp[var_anchor], {{1, var_anchor}});
      Fragment constant = component_fragment(mol, comp, comp[con_anchor], {{1, con_anchor}});
      MolSplit s;
      s.constant_key = constant.canonical();
      s.constant_pieces = {std::move(constant)};
      s.variable = std::move(variable);
      dedup.emplace(std::make_pair(s.constant_key, s.variable.canonical()), std::move(s));
    }
    return;
  }

  // Multi-cut: the variable is the unique component incident to every cut.
  std::map<int, int> touch_count;
  for (int e : cuts) {
    const Bond& b = mol.bonds()[e];
    if (comp[b.a] != comp[b.b]) {
      // Each endpoint's component touches this cut (count once per component).
      ++touch_count[comp[b.a]];
      ++touch_count[comp[b.b]];
    }
  }
  int var_comp = -1;
  for (auto [c, cnt] : touch_count)
    if (cnt == k) var_comp = c;
  if (var_comp < 0) return;
  // Cut set must split into exactly k+1 components (each cut separates).
  int n_comp = *std::max_element(comp.begin(), comp.end()) + 1;
  if (n_comp != k + 1) return;

  // One constant piece per cut; canonical piece strings (renumbered to [*:1])
  // define the deterministic attachment numbering.
  struct Piece {
    int cut_edge;
    int var_anchor;
    int con_anchor;
    int comp_id;
    std::string key;  // canonical with [*:1]
  };
  std::vector<Piece> pieces;
  for (int e : cuts) {
    const Bond& b = mol.bonds()[e];
    int va = comp[b.a] == var_comp ? b.a : b.b;
    int ca = comp[b.a] == var_comp ? b.b : b.a;
    if (comp[va] != var_comp || comp[ca] == var_comp) return;  // cut not on variable
    Fragment one = component_fragment(mol, comp, comp[ca], {{1, ca}});
    pieces.push_back(Piece{e, va, ca, comp[ca], one.canonical()});
  }
  std::vector<int> order(pieces.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(),
            [&](int x, int y) { return pieces[x].key < pieces[y].key; });

  std::vector<std::string> keys(pieces.size());
  for (size_t i = 0; i < pieces.size(); ++i) keys[i] = pieces[i].key;
  // All assignments of numbers to tied (isomorphic) pieces; keep the variable
  // with the smallest canonical string.
  std::vector<std::vector<int>> assignments;
  permutations_of_indices(order, 0, keys, assignments);

  std::optional<MolSplit> best;
  for (const auto& asg : assignments) {
    std::vector<std::pair<int, int>> var_ports;
    std::vector<Fragment> constant_pieces;
    for (size_t num = 0; num < asg.size(); ++num) {
      const Piece& p = pieces[asg[num]];
      var_ports.emplace_back(static_cast<int>(num) + 1, p.var_anchor);
      constant_pieces.push_back(
          component_fragment(mol, comp, p.comp_id, {{static_cast<int>(num) + 1, p.con_anchor}}));
    }
    Fragment variable = component_fragment(mol, comp, var_comp, var_ports);
    if (!best || variable.canonical() < best->variable.canonical()) {
      MolSplit s;
      s.variable = std::move(variable);
      s.constant_pieces = std::move(constant_pieces);
      std::string key;
      for (size_t i = 0; i < asg.size(); ++i) {
        if (i) key += '.';
        key += pieces[asg[i]].key;
      }
      s.constant_key = std::move(key);
      best = std::move(s);
    }
  }
  if (best)
    dedup.emplace(std::make_pair(best->constant_key, best->variable.canonical()),
                  std::move(*best));
}

void combinations(int n, int k, const std::vector<int>& pool, std::vector<int>& cur,
                  int start, std::vector<std::vector<int>>& out) {
  if (static_cast<int>(cur.size()) == k) {
    out.push_back(cur);
    return;
  }
  for (int i = start; i < n; ++i) {
    cur.push_back(pool[i]);
    combinations(n, k, pool, cur, i + 1, out);
    cur.pop_back();
  }
}

}  // namespace

std::vector<MolSplit> fragment_molecule(const Fragment& mol, int max_cuts) {
  std::vector<bool> bridge = find_bridges(mol);
  std::vector<int> cuttable;
  for (size_t i = 0; i < mol.bonds().size(); ++i) {
    const Bond& b = mol.bonds()[i];
    if (b.order != BondOrder::Single) continue;
    if (mol.atoms()[b.a].is_wildcard() || mol.atoms()[b.b].is_wildcard()) continue;
    if (!bridge[i]) continue;
    cuttable.push_back(static_cast<int>(i));
  }

  std::map<std::pair<std::string, std::string>, MolSplit> dedup;
  for (int k = 1; k <= max_cuts; ++k) {
    std::vector<std::vector<int>> cutsets;
    std::vector<int> cur;
    combinations(static_cast<int>(cuttable.size()), k, cuttable, cur, 0, cutsets);
    for (const auto& cuts : cutsets) splits_for_cutset(mol, cuts, dedup);
  }

  std::vector<MolSplit> out;
  out.reserve(dedup.size());
  for (auto& [key, split] : dedup) out.push_back(std::move(split));
  return out;
}

double variable_ratio(const Fragment& variable, const Fragment& whole) {
  return static_cast<double>(variable.heavy_atom_count()) / whole.heavy_atom_count();
}

bool contains_substructure(const Fragment& haystack, const Fragment& pattern) {
  const auto& pa = pattern.atoms();
  const auto& ha = haystack.atoms();
  if (pa.size() > ha.size()) return false;

  std::vector<std::vector<std::pair<int, BondOrder>>> hadj(ha.size());
  for (const Bond& b : haystack.bonds()) {
    hadj[b.a].emplace_back(b.b, b.order);
    hadj[b.b].emplace_back(b.a, b.order);
  }

  auto atom_match = [](const Atom& p, const Atom& h) {
    if (p.is_wildcard()) return h.is_wildcard();
    if (h.is_wildcard()) return false;
    if (p.element != h.element || p.aromatic != h.aromatic || p.charge != h.charge) return false;
    if (p.hcount && (!h.hcount || *p.hcount != *h.hcount)) return false;
    return true;
  };

  std::vector<int> map_to(pa.size(), -1);
  std::vector<bool> used(ha.size(), false);
  auto extend = [&](auto&& self, size_t i) -> bool {
    if (i == pa.size()) return true;
    for (size_t j = 0; j < ha.size(); ++j) {
      if (used[j] || !atom_match(pa[i], ha[j])) continue;
      bool ok = true;
      for (const Bond& e : pattern.bonds()) {
        int other = -1;
        if (e.a == static_cast<int>(i)) other = e.b;
        else if (e.b == static_cast<int>(i)) other = e.a;
        if (other < 0 || static_cast<size_t>(other) >= i) continue;
        bool found = false;
        for (auto [u, order] : hadj[j])
          if (u == map_to[other] && order == e.order) found = true;
        if (!found) {
          ok = false;
          break;
        }
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

MmptDatabase build_mmpt_database(const std::vector<MoleculeRecord>& corpus,
                                 const ExtractConfig& config) {
  MmptDatabase db;
  db.report.molecules_total = static_cast<int>(corpus.size());

  struct MolWork {
    bool kept = false;
    std::vector<MolSplit> splits;
  };
  std::vector<MolWork> work(corpus.size());

  auto process = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      Fragment mol;
      try {
        mol = parse_fragment(corpus[i].smiles);
      } catch (const FragmentError& e) {
        throw DataError("molecule '" + corpus[i].id + "': " + e.what());
      }
      if (mol.attachment_count() != 0)
        throw DataError("molecule '" + corpus[i].id + "' has attachment points");
      if (mol.molecular_weight() < config.min_mol_weight) continue;
      bool alerted = false;
      for (const Fragment& alert : config.alerts)
        if (contains_substructure(mol, alert)) {
          alerted = true;
          break;
        }
      if (alerted) continue;
      MolWork& w = work[i];
      w.kept = true;
      for (MolSplit& s : fragment_molecule(mol, config.max_cuts)) {
        if (variable_ratio(s.variable, mol) > config.max_variable_ratio) continue;
        w.splits.push_back(std::move(s));
      }
    }
  };

  int threads = std::max(1, config.threads);
  if (threads == 1 || corpus.size() < 2) {
    process(0, corpus.size());
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    size_t chunk = (corpus.size() + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      size_t b = t * chunk, e = std::min(corpus.size(), b + chunk);
      if (b >= e) break;
      pool.emplace_back([&, b, e, t] {
        try {
          process(b, e);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& err : errors)
      if (err) std::rethrow_exception(err);
  }

  // Group splits by constant key. std::map keeps pairing order deterministic.
  struct GroupEntry {
    int mol_idx;
    const MolSplit* split;
  };
  std::map<std::string, std::vector<GroupEntry>> groups;
  for (size_t i = 0; i < work.size(); ++i) {
    if (!work[i].kept) continue;
    ++db.report.molecules_kept;
    for (const MolSplit& s : work[i].splits)
      groups[s.constant_key].push_back(GroupEntry{static_cast<int>(i), &s});
  }

  std::map<std::pair<std::string, std::string>, int> record_of;
  for (const auto& [key, entries] : groups) {
    for (size_t x = 0; x < entries.size(); ++x) {
      for (size_t y = x + 1; y < entries.size(); ++y) {
        const GroupEntry& a = entries[x];
        const GroupEntry& b = entries[y];
        if (a.mol_idx == b.mol_idx) continue;
        const std::string& ca = a.split->variable.canonical();
        const std::string& cb = b.split->variable.canonical();
        if (ca == cb) continue;
        struct Dir {
          const GroupEntry *from, *to;
        };
        for (const Dir& d : {Dir{&a, &b}, Dir{&b, &a}}) {
          ++db.report.ordered_pairs;
          auto pr = std::make_pair(d.from->split->variable.canonical(),
                                   d.to->split->variable.canonical());
          auto it = record_of.find(pr);
          if (it != record_of.end()) {
            ++db.records[it->second].count;
            continue;
          }
          MmptRecord r;
          r.from_variable = d.from->split->variable;
          r.to_variable = d.to->split->variable;
          if (d.from->split->constant_pieces.size() == 1)
            r.constant = d.from->split->constant_pieces[0];
          r.constant_key = key;
          r.left_id = corpus[d.from->mol_idx].id;
          r.right_id = corpus[d.to->mol_idx].id;
          record_of[pr] = static_cast<int>(db.records.size());
          db.records.push_back(std::move(r));
        }
      }
    }
  }

  db.report.records = static_cast<int>(db.records.size());
  db.report.distinct_unordered = static_cast<int>(db.records.size() / 2);
  db.rebuild_index();
  return db;
}

void MmptDatabase::rebuild_index() {
  by_input.clear();
  for (size_t i = 0; i < records.size(); ++i)
    by_input[records[i].from_variable.canonical()].push_back(static_cast<int>(i));
}

void split_dataset(MmptDatabase& db, double train_frac, uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw std::invalid_argument("train_frac must lie in (0,1)");
  std::set<std::pair<std::string, std::string>> distinct;
  for (const MmptRecord& r : db.records)
    distinct.insert({r.from_variable.canonical(), r.to_variable.canonical()});
  std::vector<std::pair<std::string, std::string>> order(distinct.begin(), distinct.end());

  std::mt19937_64 rng(seed);
  for (size_t i = order.size(); i > 1; --i) {
    size_t j = rng() % i;
    std::swap(order[i - 1], order[j]);
  }
  size_t n_train = static_cast<size_t>(
      std::ceil(train_frac * static_cast<double>(order.size())));
  std::map<std::pair<std::string, std::string>, std::string> tag;
  for (size_t i = 0; i < order.size(); ++i)
    tag[order[i]] = i < n_train ? "train" : "test";
  for (MmptRecord& r : db.records)
    r.split = tag[{r.from_variable.canonical(), r.to_variable.canonical()}];
}

std::vector<MoleculeRecord> read_corpus_jsonl(std::istream& in) {
  std::vector<MoleculeRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("smiles") ||
        !j["smiles"].is_string())
      throw DataError("corpus line " + std::to_string(lineno) +
                      ": expected {\"id\", \"smiles\"}");
    MoleculeRecord r;
    r.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    r.smiles = j["smiles"].get<std::string>();
    if (r.id.find_first_of("\t\n") != std::string::npos)
      throw DataError("corpus line " + std::to_string(lineno) + ": id contains separator");
    out.push_back(std::move(r));
  }
  return out;
}

void write_mmpt_tsv(std::ostream& out, const MmptDatabase& db) {
  out << "from_variable\tto_variable\tconstant\tleft_id\tright_id\tcount\tsplit\n";
  for (const MmptRecord& r : db.records) {
    out << r.from_variable.canonical() << '\t' << r.to_variable.canonical() << '\t'
        << r.constant_key << '\t' << r.left_id << '\t' << r.right_id << '\t' << r.count
        << '\t' << r.split << '\n';
  }
}

MmptDatabase read_mmpt_tsv(std::istream& in) {
  MmptDatabase db;
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty transformation file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "from_variable\tto_variable\tconstant\tleft_id\tright_id\tcount\tsplit")
    throw DataError("unexpected transformation file header");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    size_t start = 0;
    while (true) {
      size_t tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 7)
      throw DataError("transformation line " + std::to_string(lineno) + ": expected 7 columns");
    MmptRecord r;
    try {
      r.from_variable = parse_fragment(cols[0]);
      r.to_variable = parse_fragment(cols[1]);
      if (!cols[2].empty()) {
        r.constant_key = cols[2];
        if (cols[2].find('.') == std::string::npos) r.constant = parse_fragment(cols[2]);
      }
    } catch (const FragmentError& e) {
      throw DataError("transformation line " + std::to_string(lineno) + ": " + e.what());
    }
    r.left_id = cols[3];
    r.right_id = cols[4];
    try {
      r.count = std::stoi(cols[5]);
    } catch (const std::exception&) {
      throw DataError("transformation line " + std::to_string(lineno) + ": bad count");
    }
    if (r.count < 1)
      throw DataError("transformation line " + std::to_string(lineno) + ": count < 1");
    r.split = cols[6];
    if (!r.split.empty() && r.split != "train" && r.split != "test")
      throw DataError("transformation line " + std::to_string(lineno) + ": bad split tag");
    db.records.push_back(std::move(r));
  }
  db.report.records = static_cast<int>(db.records.size());
  db.rebuild_index();
  return db;
}

}  // namespace mmpt
