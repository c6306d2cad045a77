#pragma once

#include <array>
#include <iosfwd>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmpt/ann_index.hpp"
#include "mmpt/fingerprint.hpp"
#include "mmpt/fragment.hpp"
#include "mmpt/mmp.hpp"
#include "mmpt/seq_model.hpp"

namespace mmpt {

class DegenerateVariance : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Canonical lookup structures over the training split: target strings for
/// variable-level novelty, input→target pairs for pair-level novelty and the
/// recall strata.
struct TrainingIndex {
  std::set<std::string> targets;  // canonical to_variable strings
  std::set<std::string> pairs;    // pair_key(from, to)

  static std::string pair_key(const std::string& from, const std::string& to) {
    return from + "\t" + to;
  }
  /// Uses rows tagged "train"; when no row carries a tag, uses all rows.
  static TrainingIndex from_db(const MmptDatabase& db);
};

struct ValidityResult {
  double fraction = 0.0;
  long long valid = 0;
  long long total = 0;
  bool zero_denominator = false;  // no raw outputs at all
};

/// Fraction of raw output strings that parse as fragments AND carry the same
/// attachment count as their input.
ValidityResult compute_validity(const std::vector<Fragment>& inputs,
                                const std::vector<std::vector<std::string>>& outputs_per_input);

struct NoveltyResult {
  double novel_over_valid = 0.0;
  double novel_over_all = 0.0;
  long long novel_valid = 0;  // novel AND valid
  long long valid = 0;
  long long total = 0;
  bool pair_level = false;
  bool zero_denominator = false;
};

/// Novel = canonical target absent from the training targets (default), or
/// the (input, target) pair absent from the training pairs (pair_level).
/// Only valid outputs count toward either numerator.
NoveltyResult compute_novelty(const std::vector<Fragment>& inputs,
                              const std::vector<std::vector<std::string>>& outputs_per_input,
                              const TrainingIndex& train, bool pair_level = false);

struct RecallResult {
  // Macro averages over evaluated inputs (inputs with a non-empty stratum).
  double recall = 0.0;
  double recall_i = 0.0;
  double recall_o = 0.0;
  bool has_recall_i = false;  // false → n/a (empty stratum everywhere)
  bool has_recall_o = false;
  // Micro (pooled count) versions.
  double micro_recall = 0.0;
  double micro_recall_i = 0.0;
  double micro_recall_o = 0.0;
  long long gt_total = 0, gt_recovered = 0;
  long long gt_in = 0, gt_in_recovered = 0;
  long long gt_out = 0, gt_out_recovered = 0;
  int inputs_evaluated = 0;
};

/// Per-input recovered fraction of ground-truth targets (canonical match),
/// macro-averaged; the ground truth partitions into in-training pairs
/// (recall_i) and the rest (recall_o). Inputs with empty ground truth are
/// skipped.
RecallResult compute_recall(const std::vector<Fragment>& inputs,
                            const std::vector<std::vector<std::string>>& outputs_per_input,
                            const std::vector<std::vector<std::string>>& ground_truth_per_input,
                            const TrainingIndex& train);

struct MetricReport {
  ValidityResult validity;
  NoveltyResult novelty;
  RecallResult recall;
  int generation_cap = 0;  // 0 = uncapped
};

/// One-stop evaluation; when cap > 0 only the first `cap` outputs per input
/// are scored (the cap is recorded in the report).
MetricReport evaluate_generation(const std::vector<Fragment>& inputs,
                                 const std::vector<std::vector<std::string>>& outputs_per_input,
                                 const std::vector<std::vector<std::string>>& ground_truth_per_input,
                                 const TrainingIndex& train, bool pair_level = false,
                                 int cap = 1000);

/// JSON with fractions, raw counts and the config hash; recall strata that
/// never occurred serialize as null.
void write_metric_report_json(std::ostream& os, const MetricReport& report,
                              const std::string& config_hash);

struct SweepRow {
  int beam = 0;
  double avg_validity = 0.0;
};

/// Mean per-input validity of free generation at each beam size.
std::vector<SweepRow> beam_validity_sweep(const ConditionalScorer& scorer,
                                          const std::vector<Fragment>& test_inputs,
                                          const std::vector<int>& beam_sizes,
                                          const GenerationConfig& base = {});

/// CSV: "# config_hash=..." header, then beam,avg_validity rows.
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows,
                     const std::string& config_hash);

struct PcaResult {
  std::vector<std::string> labels;
  std::vector<std::array<double, 2>> coords;
  std::array<double, 2> eigenvalues{};
  std::array<double, 2> explained{};  // fraction of total variance
  std::vector<double> component1, component2;
  double total_variance = 0.0;
};

/// Top-2 PCA of arbitrary row vectors (mean-centered internally): power
/// iteration with deflation, deterministic start and sign convention (the
/// largest-magnitude loading of each component is positive). Exposed
/// separately from the fingerprint wrapper so tests can drive it with
/// constructed matrices. Throws DegenerateVariance when all rows coincide.
PcaResult pca_top2(const std::vector<std::vector<double>>& rows,
                   const std::vector<std::string>& labels);

/// Morgan-fingerprint PCA of labeled fragment sets (≥ 3 fragments total).
PcaResult pca_coverage(const std::vector<std::pair<std::string, std::vector<Fragment>>>& sets,
                       const FpParams& fp = {});

/// CSV: "# config_hash=..." header, then label,x,y rows.
void write_pca_csv(std::ostream& os, const PcaResult& proj, const std::string& config_hash);

}  // namespace mmpt
