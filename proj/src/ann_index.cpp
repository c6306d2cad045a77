#include "mmpt/ann_index.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <queue>
#include <random>
#include <set>

namespace mmpt {

namespace {

// (similarity, id) ordering: higher similarity first, then lower id.
bool closer(const std::pair<double, int>& a, const std::pair<double, int>& b) {
  if (a.first != b.first) return a.first > b.first;
  return a.second < b.second;
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

void write_i32(std::ostream& os, std::int32_t v) {
  unsigned char buf[4];
  auto u = static_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 4);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw DataError("truncated index file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

std::int32_t read_i32(std::istream& is) {
  unsigned char buf[4];
  is.read(reinterpret_cast<char*>(buf), 4);
  if (!is) throw DataError("truncated index file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return static_cast<std::int32_t>(v);
}

void write_string(std::ostream& os, const std::string& s) {
  write_i32(os, static_cast<std::int32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  std::int32_t n = read_i32(is);
  if (n < 0 || n > (1 << 28)) throw DataError("corrupt string length in index file");
  std::string s(static_cast<std::size_t>(n), '\0');
  is.read(s.data(), n);
  if (!is) throw DataError("truncated index file");
  return s;
}

constexpr char kMagic[8] = {'M', 'M', 'P', 'T', 'I', 'D', 'X', '1'};

}  // namespace

double AnnIndex::sim(const FingerprintVec& a, const FingerprintVec& b) const {
  std::uint64_t pa = a.popcount(), pb = b.popcount();
  if (pa == 0 || pb == 0) return 0.0;
  return FingerprintVec::intersect_count(a, b) / std::sqrt(static_cast<double>(pa) * pb);
}

std::vector<std::pair<double, int>> AnnIndex::search_layer(const FingerprintVec& q,
                                                           std::vector<int> entry, int ef,
                                                           int layer) const {
  auto worse_first = [](const std::pair<double, int>& a, const std::pair<double, int>& b) {
    return closer(a, b);  // min-heap of kept results: worst on top
  };
  auto better_first = [](const std::pair<double, int>& a, const std::pair<double, int>& b) {
    return closer(b, a);  // max-heap of candidates: best on top
  };
  std::priority_queue<std::pair<double, int>, std::vector<std::pair<double, int>>,
                      decltype(better_first)>
      candidates(better_first);
  std::priority_queue<std::pair<double, int>, std::vector<std::pair<double, int>>,
                      decltype(worse_first)>
      kept(worse_first);
  std::set<int> visited;
  for (int e : entry) {
    if (!visited.insert(e).second) continue;
    double d = sim(q, items_[e]);
    candidates.emplace(d, e);
    kept.emplace(d, e);
    if (static_cast<int>(kept.size()) > ef) kept.pop();
  }
  while (!candidates.empty()) {
    auto c = candidates.top();
    candidates.pop();
    if (static_cast<int>(kept.size()) >= ef && closer(kept.top(), c)) break;
    for (int e : links_[c.second][layer]) {
      if (!visited.insert(e).second) continue;
      double d = sim(q, items_[e]);
      std::pair<double, int> cand{d, e};
      if (static_cast<int>(kept.size()) < ef || closer(cand, kept.top())) {
        candidates.push(cand);
        kept.push(cand);
        if (static_cast<int>(kept.size()) > ef) kept.pop();
      }
    }
  }
  std::vector<std::pair<double, int>> out;
  out.reserve(kept.size());
  while (!kept.empty()) {
    out.push_back(kept.top());
    kept.pop();
  }
  std::sort(out.begin(), out.end(), closer);
  return out;
}

std::vector<int> AnnIndex::select_neighbors(std::vector<std::pair<double, int>> candidates,
                                            int m) const {
  std::sort(candidates.begin(), candidates.end(), closer);
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  std::vector<int> result;
  std::vector<int> pruned;
  for (auto& [d, e] : candidates) {
    if (static_cast<int>(result.size()) >= m) break;
    bool keep = true;
    for (int r : result) {
      if (sim(items_[e], items_[r]) > d) {
        keep = false;
        break;
      }
    }
    if (keep)
      result.push_back(e);
    else
      pruned.push_back(e);
  }
  // Keep pruned connections to fill out the budget (preserves connectivity).
  for (std::size_t i = 0; i < pruned.size() && static_cast<int>(result.size()) < m; ++i)
    result.push_back(pruned[i]);
  return result;
}

void AnnIndex::insert(int id) {
  const FingerprintVec& q = items_[id];
  int l = levels_[id];
  links_[id].assign(static_cast<std::size_t>(l) + 1, {});
  if (entry_point_ < 0) {
    entry_point_ = id;
    max_level_ = l;
    return;
  }
  std::vector<int> ep{entry_point_};
  for (int lc = max_level_; lc > l; --lc) {
    auto best = search_layer(q, ep, 1, lc);
    ep = {best.front().second};
  }
  for (int lc = std::min(l, max_level_); lc >= 0; --lc) {
    auto found = search_layer(q, ep, params_.ef_construction, lc);
    int m_max = lc == 0 ? 2 * params_.M : params_.M;
    // Extend the candidate pool with the candidates' own links before
    // selecting; improves graph quality on near-uniform data.
    std::vector<std::pair<double, int>> pool = found;
    std::set<int> in_pool;
    for (auto& [d, e] : found) in_pool.insert(e);
    for (auto& [d, e] : found)
      for (int adj : links_[e][lc])
        if (adj != id && in_pool.insert(adj).second)
          pool.emplace_back(sim(q, items_[adj]), adj);
    std::vector<int> chosen = select_neighbors(std::move(pool), params_.M);
    for (int n : chosen) {
      links_[id][lc].push_back(n);
      links_[n][lc].push_back(id);
      if (static_cast<int>(links_[n][lc].size()) > m_max) {
        std::vector<std::pair<double, int>> conns;
        conns.reserve(links_[n][lc].size());
        for (int e : links_[n][lc]) conns.emplace_back(sim(items_[n], items_[e]), e);
        links_[n][lc] = select_neighbors(std::move(conns), m_max);
      }
    }
    ep.clear();
    for (auto& [d, e] : found) ep.push_back(e);
  }
  if (l > max_level_) {
    entry_point_ = id;
    max_level_ = l;
  }
}

AnnIndex AnnIndex::build(std::vector<FingerprintVec> items, const IndexParams& params,
                         const FpParams& fp, std::vector<std::string> labels) {
  if (items.empty()) throw EmptyDatabase("cannot build an index over zero vectors");
  if (params.M < 2 || params.ef_construction < 1 || params.ef_search < 1)
    throw std::invalid_argument("invalid index parameters");
  if (!labels.empty() && labels.size() != items.size())
    throw std::invalid_argument("label count must match item count");
  AnnIndex idx;
  idx.params_ = params;
  idx.fp_params_ = fp;
  idx.items_ = std::move(items);
  idx.labels_ = labels.empty() ? std::vector<std::string>(idx.items_.size()) : std::move(labels);
  const std::size_t n = idx.items_.size();

  // Geometric level draws, all up front from one seeded stream.
  const double ml = 1.0 / std::log(static_cast<double>(params.M));
  std::mt19937_64 rng(params.seed);
  idx.levels_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    if (u <= 0.0) u = 0x1.0p-53;
    idx.levels_[i] = static_cast<int>(-std::log(u) * ml);
  }
  idx.links_.resize(n);
  for (std::size_t i = 0; i < n; ++i) idx.insert(static_cast<int>(i));
  return idx;
}

std::vector<std::pair<int, double>> AnnIndex::search(const FingerprintVec& query, int k,
                                                     int ef) const {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  int effective = ef > 0 ? ef : params_.ef_search;
  effective = std::max(effective, k);
  std::vector<std::pair<double, int>> ranked;
  if (static_cast<std::size_t>(effective) >= items_.size()) {
    // Exact scan: the graph adds nothing once everything would be visited.
    ranked.reserve(items_.size());
    for (std::size_t i = 0; i < items_.size(); ++i)
      ranked.emplace_back(sim(query, items_[i]), static_cast<int>(i));
    std::sort(ranked.begin(), ranked.end(), closer);
  } else {
    // Carry the whole frontier down the layers; upper layers are small, and
    // the wide descent buys recall on near-uniform data.
    std::vector<int> ep{entry_point_};
    for (int lc = max_level_; lc >= 1; --lc) {
      auto kept = search_layer(query, ep, effective, lc);
      ep.clear();
      for (auto& [d, e] : kept) ep.push_back(e);
    }
    ranked = search_layer(query, ep, effective, 0);
  }
  if (static_cast<int>(ranked.size()) > k) ranked.resize(static_cast<std::size_t>(k));
  std::vector<std::pair<int, double>> out;
  out.reserve(ranked.size());
  for (auto& [d, id] : ranked) out.emplace_back(id, d);
  return out;
}

void AnnIndex::save(std::ostream& os) const {
  os.write(kMagic, 8);
  write_i32(os, fp_params_.radius);
  write_i32(os, fp_params_.nbits);
  write_i32(os, params_.M);
  write_i32(os, params_.ef_construction);
  write_i32(os, params_.ef_search);
  write_u64(os, params_.seed);
  write_u64(os, items_.size());
  write_i32(os, entry_point_);
  write_i32(os, max_level_);
  for (std::size_t i = 0; i < items_.size(); ++i) {
    write_string(os, labels_[i]);
    write_i32(os, levels_[i]);
    for (std::uint64_t w : items_[i].words()) write_u64(os, w);
    for (int layer = 0; layer <= levels_[i]; ++layer) {
      write_i32(os, static_cast<std::int32_t>(links_[i][layer].size()));
      for (int e : links_[i][layer]) write_i32(os, e);
    }
  }
}

AnnIndex AnnIndex::load(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || !std::equal(magic, magic + 8, kMagic)) throw DataError("bad index magic");
  AnnIndex idx;
  idx.fp_params_.radius = read_i32(is);
  idx.fp_params_.nbits = read_i32(is);
  idx.params_.M = read_i32(is);
  idx.params_.ef_construction = read_i32(is);
  idx.params_.ef_search = read_i32(is);
  idx.params_.seed = read_u64(is);
  std::uint64_t n = read_u64(is);
  if (n > (1ULL << 32)) throw DataError("corrupt index size");
  idx.entry_point_ = read_i32(is);
  idx.max_level_ = read_i32(is);
  if (idx.fp_params_.nbits <= 0 || (idx.fp_params_.nbits & (idx.fp_params_.nbits - 1)) != 0)
    throw DataError("corrupt fingerprint width");
  const int words = idx.fp_params_.nbits / 64;
  for (std::uint64_t i = 0; i < n; ++i) {
    idx.labels_.push_back(read_string(is));
    int level = read_i32(is);
    if (level < 0 || level > 64) throw DataError("corrupt node level");
    idx.levels_.push_back(level);
    std::vector<std::uint64_t> w(static_cast<std::size_t>(words));
    for (auto& x : w) x = read_u64(is);
    idx.items_.push_back(FingerprintVec::from_words(std::move(w), idx.fp_params_.radius));
    idx.links_.emplace_back();
    for (int layer = 0; layer <= level; ++layer) {
      int cnt = read_i32(is);
      if (cnt < 0 || static_cast<std::uint64_t>(cnt) > n) throw DataError("corrupt adjacency");
      std::vector<int> adj(static_cast<std::size_t>(cnt));
      for (auto& e : adj) {
        e = read_i32(is);
        if (e < 0 || static_cast<std::uint64_t>(e) >= n) throw DataError("corrupt neighbor id");
      }
      idx.links_.back().push_back(std::move(adj));
    }
  }
  if (n > 0 && (idx.entry_point_ < 0 || static_cast<std::uint64_t>(idx.entry_point_) >= n))
    throw DataError("corrupt entry point");
  return idx;
}

AnnIndex build_index(const MmptDatabase& db, const FpParams& fp, const IndexParams& params) {
  if (db.records.empty()) throw EmptyDatabase("transformation database is empty");
  std::map<std::string, const Fragment*> inputs;
  for (const MmptRecord& r : db.records) inputs.emplace(r.from_variable.canonical(), &r.from_variable);
  std::vector<FingerprintVec> fps;
  std::vector<std::string> labels;
  fps.reserve(inputs.size());
  labels.reserve(inputs.size());
  for (auto& [canon, frag] : inputs) {
    fps.push_back(morgan_fingerprint(*frag, fp.radius, fp.nbits));
    labels.push_back(canon);
  }
  return AnnIndex::build(std::move(fps), params, fp, std::move(labels));
}

RetrievalResult retrieve(const AnnIndex& index, const MmptDatabase& db, const Fragment& query,
                         const RetrievalConfig& cfg) {
  if (cfg.k_inputs < 1 || cfg.output_cap < 1)
    throw std::invalid_argument("retrieval limits must be positive");
  RetrievalResult out;
  out.query = query;
  FingerprintVec qfp =
      morgan_fingerprint(query, index.fp_params().radius, index.fp_params().nbits);
  auto hits = index.search(qfp, cfg.k_inputs);

  std::map<std::string, std::pair<const Fragment*, double>> outputs;  // canon -> (frag, tanimoto)
  for (auto& [id, cos_sim] : hits) {
    auto it = db.by_input.find(index.label(id));
    if (it == db.by_input.end() || it->second.empty()) continue;
    out.matched_inputs.emplace_back(db.records[it->second.front()].from_variable, cos_sim);
    for (int ri : it->second) {
      const MmptRecord& rec = db.records[ri];
      if (rec.to_variable.attachment_count() != query.attachment_count()) continue;
      std::string canon = rec.to_variable.canonical();
      if (outputs.count(canon)) continue;
      FingerprintVec ofp = morgan_fingerprint(rec.to_variable, index.fp_params().radius,
                                              index.fp_params().nbits);
      outputs.emplace(canon, std::make_pair(&rec.to_variable, tanimoto(qfp, ofp)));
    }
  }

  std::vector<std::pair<std::string, std::pair<const Fragment*, double>>> ranked(
      outputs.begin(), outputs.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.second != b.second.second) return a.second.second > b.second.second;
    return a.first < b.first;
  });
  if (static_cast<int>(ranked.size()) > cfg.output_cap) ranked.resize(cfg.output_cap);
  for (auto& [canon, frag_sim] : ranked)
    out.expanded_outputs.emplace_back(*frag_sim.first, frag_sim.second);
  return out;
}

}  // namespace mmpt
