#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmpt/fragment.hpp"

namespace mmpt {

/// Malformed external data (corpus lines, TSV rows, ids with separators).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MoleculeRecord {
  std::string id;
  std::string smiles;
};

/// One way of cutting a molecule into an invariant context and a variable.
///
/// Single cut: one constant piece, variable with one attachment. Multi cut:
/// the variable carries one numbered attachment per cut and each constant
/// piece bonds to exactly one of them. `constant_key` identifies the context
/// for pairing: the '.'-joined canonical forms (each piece renumbered to
/// [*:1]) in sorted order.
struct MolSplit {
  std::vector<Fragment> constant_pieces;
  Fragment variable;
  std::string constant_key;
};

/// Enumerates every split of `mol` obtained by cutting 1..max_cuts acyclic
/// single bonds between heavy atoms, deduplicated by (constant_key, variable).
/// Multi-cut splits keep only cut sets where a single piece touches every cut.
std::vector<MolSplit> fragment_molecule(const Fragment& mol, int max_cuts);

/// Heavy atoms of `variable` over heavy atoms of `whole` (wildcards excluded).
double variable_ratio(const Fragment& variable, const Fragment& whole);

struct MmptRecord {
  Fragment from_variable;
  Fragment to_variable;
  // Present for single-piece contexts (and TSV rows carrying one); composite
  // multi-cut contexts are identified by constant_key alone.
  std::optional<Fragment> constant;
  std::string constant_key;
  std::string left_id;
  std::string right_id;
  int count = 1;
  std::string split;  // "", "train" or "test"
};

struct ExtractReport {
  int molecules_total = 0;
  int molecules_kept = 0;
  long long ordered_pairs = 0;        // before aggregation (= sum of counts)
  int records = 0;                    // directed, aggregated
  int distinct_unordered = 0;         // transformation pairs {a,b}
};

struct MmptDatabase {
  std::vector<MmptRecord> records;
  // canonical(from_variable) -> indices into records
  std::unordered_map<std::string, std::vector<int>> by_input;
  ExtractReport report;

  void rebuild_index();
};

struct ExtractConfig {
  int max_cuts = 1;
  double max_variable_ratio = 0.33;
  double min_mol_weight = 200.0;
  // Molecules containing any of these as a subgraph are dropped. Default
  // empty: pass-through.
  std::vector<Fragment> alerts;
  int threads = 1;
};

/// Exact subgraph containment (connected pattern, attribute-equal atoms and
/// bond orders); used by the structural-alert filter.
bool contains_substructure(const Fragment& haystack, const Fragment& pattern);

MmptDatabase build_mmpt_database(const std::vector<MoleculeRecord>& corpus,
                                 const ExtractConfig& config);

/// Tags every record's distinct (from, to) transformation as train or test.
/// Deterministic: transformations sorted by canonical pair, shuffled with a
/// seeded generator, first ceil(train_frac * N) are train.
void split_dataset(MmptDatabase& db, double train_frac, uint64_t seed);

// --- external formats ---

/// JSON Lines, one {"id": ..., "smiles": ...} object per line. Throws
/// DataError on malformed lines or ids containing tab/newline.
std::vector<MoleculeRecord> read_corpus_jsonl(std::istream& in);

/// TSV with header: from_variable, to_variable, constant, left_id, right_id,
/// count, split. Canonical strings only.
void write_mmpt_tsv(std::ostream& out, const MmptDatabase& db);
MmptDatabase read_mmpt_tsv(std::istream& in);

}  // namespace mmpt
