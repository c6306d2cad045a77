#include "mmpt/rag_engine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>

#include "nlohmann/json.hpp"

namespace mmpt {
namespace {

void check_simplex(const std::vector<double>& w, double tol) {
  if (w.empty()) throw InvalidWeights("weight vector must be non-empty");
  double sum = 0.0;
  for (double x : w) {
    if (!std::isfinite(x) || x < 0.0) throw InvalidWeights("weights must be finite and non-negative");
    sum += x;
  }
  if (std::abs(sum - 1.0) > tol) throw InvalidWeights("weights must sum to 1");
}

void check_distribution(const std::vector<double>& p, const char* what) {
  double sum = 0.0;
  for (double x : p) {
    if (!std::isfinite(x) || x < 0.0)
      throw std::invalid_argument(std::string(what) + " must be a probability vector");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument(std::string(what) + " must sum to 1 within 1e-12");
}

}  // namespace

BudgetAllocation allocate_budget(const std::vector<double>& weights, int total) {
  check_simplex(weights, 1e-9);
  if (total < 0) throw InvalidWeights("total budget must be non-negative");

  const size_t n = weights.size();
  BudgetAllocation out;
  out.total = total;
  out.per_cluster.assign(n, 0);

  std::vector<double> remainder(n, 0.0);
  long long assigned = 0;
  for (size_t i = 0; i < n; ++i) {
    double q = weights[i] * total;
    int f = static_cast<int>(std::floor(q));
    f = std::min(f, total);
    out.per_cluster[i] = f;
    remainder[i] = q - f;
    assigned += f;
  }

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return remainder[a] > remainder[b]; });

  long long leftover = total - assigned;
  for (size_t pos = 0; leftover > 0; pos = (pos + 1) % n, --leftover) {
    out.per_cluster[order[pos]] += 1;
  }
  return out;
}

SteeringCheck verify_steering(const SteeringInstance& inst) {
  const size_t k = inst.gates.size();
  if (k == 0) throw InconsistentDimensions("at least one cluster required");
  if (inst.weights.size() != k || inst.cluster_dists.size() != k)
    throw InconsistentDimensions("weights, gates and cluster distributions must align");
  const size_t n = inst.base.size();
  if (n == 0) throw InconsistentDimensions("empty outcome set");
  for (const auto& p : inst.cluster_dists) {
    if (p.size() != n) throw InconsistentDimensions("cluster distribution length mismatch");
  }

  check_distribution(inst.base, "base distribution");
  for (const auto& p : inst.cluster_dists) check_distribution(p, "cluster distribution");
  check_simplex(inst.weights, 1e-12);
  for (double a : inst.gates) {
    if (!std::isfinite(a) || a < 0.0 || a > 1.0)
      throw std::invalid_argument("gates must lie in [0, 1]");
  }

  double alpha_bar = 0.0;
  for (size_t i = 0; i < k; ++i) alpha_bar += inst.weights[i] * inst.gates[i];

  double dev = 0.0;
  for (size_t j = 0; j < n; ++j) {
    double lhs = 0.0;
    for (size_t i = 0; i < k; ++i) {
      lhs += inst.weights[i] *
             ((1.0 - inst.gates[i]) * inst.base[j] + inst.gates[i] * inst.cluster_dists[i][j]);
    }
    double ref = 0.0;
    if (alpha_bar > 0.0) {
      for (size_t i = 0; i < k; ++i) {
        ref += (inst.weights[i] * inst.gates[i] / alpha_bar) * inst.cluster_dists[i][j];
      }
    }
    double rhs = (1.0 - alpha_bar) * inst.base[j] + alpha_bar * ref;
    dev = std::max(dev, std::abs(lhs - rhs));
  }
  return {dev, alpha_bar};
}

RagResult rag_generate(const ConditionalScorer& scorer, const AnnIndex& index,
                       const MmptDatabase& db, const Fragment& query, const RagConfig& cfg) {
  if (cfg.n_clusters < 1) throw std::invalid_argument("rag_generate: n_clusters must be positive");
  if (cfg.per_cluster_budget < 0 || cfg.total_budget < 0)
    throw std::invalid_argument("rag_generate: budgets must be non-negative");

  RagResult result;
  RetrievalResult ret = retrieve(index, db, query, cfg.retrieval);
  result.retrieved_outputs = static_cast<int>(ret.expanded_outputs.size());

  const TokenSequence query_tokens = tokenize(query.canonical());

  if (ret.expanded_outputs.empty()) {
    if (!cfg.allow_fallback)
      throw EmptyRetrieval("no retrieved outputs for query " + query.canonical());
    result.fallback = true;
    GenerationConfig fb = cfg.fallback;
    const int total =
        cfg.total_budget > 0 ? cfg.total_budget : cfg.per_cluster_budget * cfg.n_clusters;
    fb.top_k_outputs = std::min(fb.top_k_outputs, total);
    result.budgets.total = total;
    for (const auto& g : beam_generate(scorer, query_tokens, fb)) {
      try {
        RagCandidate c;
        c.text = detokenize(g.tokens);
        c.fragment = parse_fragment(c.text);
        c.log_prob = g.log_prob;
        result.candidates.push_back(std::move(c));
      } catch (const FragmentError&) {
        continue;  // free generation may emit unparseable strings
      }
    }
    return result;
  }

  std::vector<Fragment> outputs;
  outputs.reserve(ret.expanded_outputs.size());
  for (const auto& [frag, sim] : ret.expanded_outputs) outputs.push_back(frag);
  auto clusters = cluster_outputs(outputs, cfg.clustering);

  // Expand the largest clusters first; id breaks ties, and ids stay attached
  // to the clusters they came from.
  std::vector<size_t> order(clusters.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (clusters[a].members.size() != clusters[b].members.size())
      return clusters[a].members.size() > clusters[b].members.size();
    return a < b;
  });
  if (order.size() > static_cast<size_t>(cfg.n_clusters)) order.resize(cfg.n_clusters);

  std::vector<Cluster> selected;
  selected.reserve(order.size());
  for (size_t i : order) selected.push_back(clusters[i]);

  result.templates = make_cluster_templates(selected, cfg.weights);

  std::vector<double> weights(result.templates.size());
  for (size_t i = 0; i < weights.size(); ++i) weights[i] = result.templates[i].weight;
  const int total = cfg.total_budget > 0
                        ? cfg.total_budget
                        : cfg.per_cluster_budget * static_cast<int>(result.templates.size());
  result.budgets = allocate_budget(weights, total);

  // Per-cluster generation is independent; collect per-slot, reduce in order.
  std::vector<std::vector<RagCandidate>> per_cluster(result.templates.size());
  auto run_one = [&](size_t i) {
    const int budget = result.budgets.per_cluster[i];
    if (budget <= 0) return;
    const auto& t = result.templates[i];
    const std::string wire = template_to_string(t.tmpl);
    try {
      for (const auto& r : prompt_generate(scorer, query_tokens, t.tmpl, budget, cfg.infill)) {
        RagCandidate c;
        c.fragment = r.fragment;
        c.text = r.text;
        c.log_prob = r.log_prob;
        c.cluster_id = t.cluster.id;
        c.template_text = wire;
        per_cluster[i].push_back(std::move(c));
      }
    } catch (const NoValidCompletion&) {
      // a template no completion satisfies contributes nothing
    }
  };

  const int threads =
      std::max(1, std::min<int>(cfg.threads, static_cast<int>(result.templates.size())));
  if (threads <= 1) {
    for (size_t i = 0; i < result.templates.size(); ++i) run_one(i);
  } else {
    std::vector<std::thread> pool;
    std::exception_ptr err;
    std::mutex err_mu;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t]() {
        try {
          for (size_t i = static_cast<size_t>(t); i < result.templates.size();
               i += static_cast<size_t>(threads)) {
            run_one(i);
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

  // Union with canonical dedup: best log-prob wins, then lower cluster id.
  std::map<std::string, RagCandidate> best;
  for (const auto& bucket : per_cluster) {
    for (const auto& c : bucket) {
      auto it = best.find(c.fragment.canonical());
      if (it == best.end()) {
        best.emplace(c.fragment.canonical(), c);
      } else if (c.log_prob > it->second.log_prob ||
                 (c.log_prob == it->second.log_prob && c.cluster_id < it->second.cluster_id)) {
        it->second = c;
      }
    }
  }
  result.candidates.reserve(best.size());
  for (auto& [canon, c] : best) result.candidates.push_back(std::move(c));
  std::sort(result.candidates.begin(), result.candidates.end(),
            [](const RagCandidate& a, const RagCandidate& b) {
              if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
              return a.fragment.canonical() < b.fragment.canonical();
            });
  return result;
}

void write_rag_jsonl(std::ostream& os, const Fragment& query, const RagResult& result) {
  for (const auto& c : result.candidates) {
    nlohmann::json j;
    j["query"] = query.canonical();
    j["candidate"] = c.fragment.canonical();
    j["log_prob"] = c.log_prob;
    if (c.cluster_id >= 0) {
      j["cluster_id"] = c.cluster_id;
      j["template"] = c.template_text;
    } else {
      j["cluster_id"] = nullptr;
      j["template"] = nullptr;
    }
    j["mode"] = result.fallback ? "fm-fallback" : "rag";
    os << j.dump() << "\n";
  }
}

}  // namespace mmpt
