#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmpt/ann_index.hpp"
#include "mmpt/cluster_mcs.hpp"
#include "mmpt/infill.hpp"
#include "mmpt/seq_model.hpp"

namespace mmpt {

class EmptyRetrieval : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InconsistentDimensions : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BudgetAllocation {
  std::vector<int> per_cluster;
  int total = 0;
};

/// Largest-remainder apportionment of `total` across `weights` (a simplex
/// vector); remainder ties go to the lower index. Throws InvalidWeights.
BudgetAllocation allocate_budget(const std::vector<double>& weights, int total);

/// A finite-outcome instance of the steering identity: base distribution,
/// per-cluster conditional distributions, gates and mixture weights.
struct SteeringInstance {
  std::vector<double> base;                        // p_base over outcomes
  std::vector<std::vector<double>> cluster_dists;  // one row per cluster
  std::vector<double> gates;                       // alpha_k in [0, 1]
  std::vector<double> weights;                     // simplex over clusters
};

struct SteeringCheck {
  double max_abs_deviation = 0.0;
  double alpha_bar = 0.0;
};

/// Checks that the per-cluster gated mixture collapses to a single global
/// interpolation: sum_k w_k[(1-a_k)p + a_k p_k] against
/// (1-abar)p + abar * sum_k (w_k a_k / abar) p_k with abar = sum_k w_k a_k.
/// Returns the pointwise max deviation and abar.
SteeringCheck verify_steering(const SteeringInstance& inst);

struct RagConfig {
  RetrievalConfig retrieval;
  ClusterConfig clustering;
  int n_clusters = 10;          // clusters expanded, largest first
  int per_cluster_budget = 50;  // used when total_budget is 0
  int total_budget = 0;         // 0 derives per_cluster_budget * selected
  std::vector<double> weights;  // preference over selected clusters; empty = uniform
  InfillConfig infill;
  GenerationConfig fallback;    // free-generation settings when retrieval is empty
  int threads = 1;              // per-cluster generation parallelism
  bool allow_fallback = true;   // false turns empty retrieval into EmptyRetrieval
};

struct RagCandidate {
  Fragment fragment;
  std::string text;           // generated token string (matches the template)
  double log_prob = 0.0;
  int cluster_id = -1;        // -1 on free-generation fallback
  std::string template_text;  // wire format; empty on fallback
};

struct RagResult {
  std::vector<RagCandidate> candidates;    // log-prob desc, ties canonical asc
  std::vector<ClusterTemplate> templates;  // the expanded clusters, in budget order
  BudgetAllocation budgets;
  bool fallback = false;
  int retrieved_outputs = 0;
};

/// Full pipeline: retrieve neighbors, cluster their outputs, derive one
/// masked template per expanded cluster, split the generation budget by the
/// preference weights, run prompted infill per cluster, and union the results
/// with canonical dedup (best log-prob wins, then lower cluster id). Empty
/// retrieval falls back to free beam generation, flagged on the result.
RagResult rag_generate(const ConditionalScorer& scorer, const AnnIndex& index,
                       const MmptDatabase& db, const Fragment& query,
                       const RagConfig& cfg = {});

/// One JSON object per candidate:
/// {query, candidate, log_prob, cluster_id, template, mode: "rag"|"fm-fallback"}.
void write_rag_jsonl(std::ostream& os, const Fragment& query, const RagResult& result);

}  // namespace mmpt
