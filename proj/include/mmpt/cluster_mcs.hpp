#pragma once

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mmpt/fragment.hpp"
#include "mmpt/infill.hpp"

namespace mmpt {

class NoCommonSubstructure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidWeights : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Maximum connected common subgraph of two fragments. Atoms match on
/// (element, aromaticity); wildcards match only wildcards; bonds match on
/// order. Result atoms copy from `a`. Ties between equal-size candidates go
/// to the smaller canonical string, so the result is relabeling-invariant.
/// Throws NoCommonSubstructure when not even one atom matches.
Fragment mcs(const Fragment& a, const Fragment& b);

/// Multi-fragment MCS: fold pairwise in canonical member order, then verify
/// the fold embeds in every member.
Fragment mcs(const std::vector<Fragment>& members);

/// First deterministic embedding of `pattern` into `target` under MCS match
/// semantics; maps pattern atom i to result[i].
std::optional<std::vector<int>> find_embedding(const Fragment& pattern, const Fragment& target);

/// |mcs(a,b)| / min(|a|,|b|) over heavy atoms; 0 when nothing matches.
double shared_substructure_similarity(const Fragment& a, const Fragment& b);

struct Cluster {
  int id = 0;
  std::vector<Fragment> members;
};

struct ClusterConfig {
  double threshold = 0.70;   // average-linkage similarity cut
  int max_cluster_size = 10;
  int threads = 1;           // pairwise similarity matrix only
};

/// Average-linkage agglomerative clustering over 1 - similarity, cut at the
/// threshold; oversized clusters split recursively at their top dendrogram
/// merge. A cluster of mutually identical members stays whole (with a warning
/// on stderr) since splitting it is meaningless.
std::vector<Cluster> cluster_outputs(const std::vector<Fragment>& outputs,
                                     const ClusterConfig& cfg = {});

struct ClusterTemplate {
  Cluster cluster;
  Fragment mcs;
  MaskedTemplate tmpl;
  double weight = 0.0;
};

/// Per cluster: fold MCS, embed it into the canonically smallest member, and
/// mask everything else. Weights default to uniform and are normalized onto
/// the simplex; negative or all-zero weights raise InvalidWeights.
std::vector<ClusterTemplate> make_cluster_templates(const std::vector<Cluster>& clusters,
                                                    const std::vector<double>& weights = {});

/// One JSON object per line: {cluster_id, members[], mcs, template, weight}.
void write_cluster_templates_jsonl(std::ostream& os,
                                   const std::vector<ClusterTemplate>& templates);

}  // namespace mmpt
