#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mmpt/fingerprint.hpp"
#include "mmpt/fragment.hpp"
#include "mmpt/mmp.hpp"

namespace mmpt {

class EmptyDatabase : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FpParams {
  int radius = 2;
  int nbits = 2048;
};

struct IndexParams {
  int M = 16;
  int ef_construction = 200;
  int ef_search = 100;
  std::uint64_t seed = 0;
};

/// Layered small-world graph for approximate nearest-neighbor search over
/// fingerprint vectors under cosine similarity. Construction is deterministic
/// given the seed; an element on layer l is linked on every layer below it.
class AnnIndex {
 public:
  /// labels, when given, name each vector (canonical input strings when built
  /// over a transformation database).
  static AnnIndex build(std::vector<FingerprintVec> items, const IndexParams& params = {},
                        const FpParams& fp = {}, std::vector<std::string> labels = {});

  /// Top-k by cosine similarity, descending (ties by insertion id). `ef`
  /// overrides the configured ef_search when positive; an ef spanning the
  /// whole index degrades to an exact scan.
  std::vector<std::pair<int, double>> search(const FingerprintVec& query, int k,
                                             int ef = 0) const;

  std::size_t size() const { return items_.size(); }
  const FingerprintVec& item(int id) const { return items_[id]; }
  const std::string& label(int id) const { return labels_[id]; }
  int level(int id) const { return levels_[id]; }
  const std::vector<int>& neighbors(int id, int layer) const { return links_[id][layer]; }
  const IndexParams& params() const { return params_; }
  const FpParams& fp_params() const { return fp_params_; }

  /// Versioned binary image (magic "MMPTIDX1"); load reproduces identical
  /// query results. Throws DataError on malformed input.
  void save(std::ostream& os) const;
  static AnnIndex load(std::istream& is);

 private:
  IndexParams params_;
  FpParams fp_params_;
  std::vector<FingerprintVec> items_;
  std::vector<std::string> labels_;
  std::vector<int> levels_;
  // links_[id][layer] for layer in 0..levels_[id]
  std::vector<std::vector<std::vector<int>>> links_;
  int entry_point_ = -1;
  int max_level_ = -1;

  double sim(const FingerprintVec& a, const FingerprintVec& b) const;
  std::vector<std::pair<double, int>> search_layer(const FingerprintVec& q,
                                                   std::vector<int> entry, int ef,
                                                   int layer) const;
  std::vector<int> select_neighbors(std::vector<std::pair<double, int>> candidates, int m) const;
  void insert(int id);
};

struct RetrievalResult {
  std::vector<std::pair<Fragment, double>> matched_inputs;    // cosine, descending
  std::vector<std::pair<Fragment, double>> expanded_outputs;  // Tanimoto, descending
  Fragment query;
};

struct RetrievalConfig {
  int k_inputs = 500;
  int output_cap = 1000;
};

/// One index entry per distinct canonical input variable of the database.
AnnIndex build_index(const MmptDatabase& db, const FpParams& fp = {},
                     const IndexParams& params = {});

/// Nearest-input fetch, output-set expansion, attachment-count filter,
/// Tanimoto re-rank, canonical dedup, cap.
RetrievalResult retrieve(const AnnIndex& index, const MmptDatabase& db, const Fragment& query,
                         const RetrievalConfig& cfg = {});

}  // namespace mmpt
