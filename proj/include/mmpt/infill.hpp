#pragma once

#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmpt/fragment.hpp"
#include "mmpt/seq_model.hpp"

namespace mmpt {

class NotADistribution : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DisconnectedKeepSet : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NoValidCompletion : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One template position: either a fixed grammar token or a variable-length
/// hole. `origin_span` is the token count of the span that was masked out when
/// the template was derived from a concrete fragment; it anchors the
/// length-margin window during search.
struct TemplateSlot {
  bool fixed = true;
  std::string token;                    // when fixed
  int min_tokens = 0;                   // blank bounds, 0 <= min <= max
  int max_tokens = 0;
  std::optional<int> origin_span;

  static TemplateSlot make_fixed(std::string tok) {
    TemplateSlot s;
    s.fixed = true;
    s.token = std::move(tok);
    return s;
  }
  static TemplateSlot make_blank(int min_t = 0,
                                 int max_t = std::numeric_limits<int>::max(),
                                 std::optional<int> span = std::nullopt) {
    TemplateSlot s;
    s.fixed = false;
    s.min_tokens = min_t;
    s.max_tokens = max_t;
    s.origin_span = span;
    return s;
  }
};

struct MaskedTemplate {
  std::vector<TemplateSlot> slots;
  std::optional<std::string> origin_fragment;  // canonical source, when derived

  int blank_count() const {
    int n = 0;
    for (const auto& s : slots)
      if (!s.fixed) ++n;
    return n;
  }
};

struct InfillConfig {
  int max_new_tokens_per_blank = 11;
  int max_total_candidates = 200;
  int top_scored = 200;
  int length_margin = 7;
  std::optional<int> n_eff_cap;
};

/// Search instrumentation; reset at the start of every call.
struct InfillStats {
  long long expansions = 0;  // choice points expanded
  long long candidates = 0;  // completed sequences enumerated
  int max_children = 0;      // widest branching actually expanded
  // One entry per expansion: (effective token count of the local next-token
  // distribution, children expanded). Lets callers audit the branching bound.
  std::vector<std::pair<double, int>> branch_log;
};

struct InfillResult {
  Fragment fragment;
  double log_prob = 0.0;
  std::string text;  // searched surface string; matches the template verbatim
};

/// Effective support size of a distribution: 1 / sum(p_i^2) (the exponential
/// of its collision entropy). 1 for a point mass, n for uniform over n.
double effective_token_count(const std::vector<double>& p);

/// Masks out every token of `full`'s canonical emission not induced by the
/// `keep` atom set; maximal masked runs collapse to single holes. `keep` must
/// induce a connected subgraph (empty keeps the whole sequence free).
MaskedTemplate template_from_substructure(const Fragment& full, const std::vector<int>& keep);

/// Wire format: fixed tokens verbatim, holes as "?*" repeated per masked
/// token (span recorded) or a bare "<BLANK>" marker (unconstrained length).
std::string template_to_string(const MaskedTemplate& t);
MaskedTemplate template_from_string(std::string_view text);

/// Best-first completion of the template under the scorer. Returns at most k
/// parseable fragments ranked by sequence log-probability (ties by string),
/// deduplicated by canonical form. Throws NoValidCompletion when the explored
/// candidates contain no parseable fragment.
std::vector<InfillResult> prompt_generate(const ConditionalScorer& s, const TokenSequence& input,
                                          const MaskedTemplate& t, int k,
                                          const InfillConfig& cfg = {},
                                          InfillStats* stats = nullptr);

}  // namespace mmpt
