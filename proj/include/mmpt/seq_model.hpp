#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmpt/fragment.hpp"
#include "mmpt/mmp.hpp"

namespace mmpt {

struct EmptyTrainingSet : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnknownToken : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Token inventory: the surface tokens Σ plus the special markers. Σ tokens
/// get ids 0..|Σ|-1 in sorted order; specials sit above them.
class TokenVocabulary {
 public:
  TokenVocabulary() = default;
  explicit TokenVocabulary(std::vector<std::string> sigma);

  static TokenVocabulary from_strings(const std::vector<std::string>& fragment_strings);

  int sigma_size() const { return static_cast<int>(sigma_.size()); }
  // Distribution vectors run over Σ ∪ {EOS}; EOS occupies the last slot.
  int dist_size() const { return sigma_size() + 1; }
  int eos_id() const { return sigma_size(); }
  int bos_id() const { return sigma_size() + 1; }
  int mask_id() const { return sigma_size() + 2; }
  int blank_id() const { return sigma_size() + 3; }

  bool contains(const std::string& token) const { return id_of_.count(token) > 0; }
  int id(const std::string& token) const;  // throws UnknownToken
  // Like id() but returns -1 for tokens outside Σ.
  int find(const std::string& token) const {
    auto it = id_of_.find(token);
    return it == id_of_.end() ? -1 : it->second;
  }
  const std::string& token(int id) const;
  const std::vector<std::string>& sigma() const { return sigma_; }

  bool operator==(const TokenVocabulary& o) const { return sigma_ == o.sigma_; }

 private:
  std::vector<std::string> sigma_;
  std::unordered_map<std::string, int> id_of_;
};

/// Conditional next-token distribution p(t | input, prefix) over Σ ∪ {EOS}.
class ConditionalScorer {
 public:
  virtual ~ConditionalScorer() = default;
  virtual const TokenVocabulary& vocab() const = 0;
  // Non-negative, sums to 1 within 1e-9. Index layout per TokenVocabulary.
  virtual std::vector<double> next_distribution(const TokenSequence& input,
                                                const TokenSequence& prefix) const = 0;
};

/// log p(output, EOS | input) by the chain rule; -inf if any step has zero
/// probability. Throws UnknownToken for tokens outside Σ.
double sequence_log_prob(const ConditionalScorer& s, const TokenSequence& input,
                         const TokenSequence& output);

struct GenerationConfig {
  int beam_width = 1000;
  int max_length = 50;
  int top_k_outputs = 1000;
  bool dedup = true;
  bool include_truncated = false;
};

struct GeneratedSeq {
  TokenSequence tokens;
  double log_prob = 0.0;
  bool truncated = false;
};

/// Standard beam search. Results sorted by descending log-prob (ties by the
/// fragment's canonical string when parseable, else the raw string); when
/// dedup is set, canonical-form duplicates keep only their best-scoring
/// sequence. Truncated (no-EOS) hypotheses are dropped unless requested.
std::vector<GeneratedSeq> beam_generate(const ConditionalScorer& s, const TokenSequence& input,
                                        const GenerationConfig& cfg);

/// Desk-scale trainable scorer: interpolation of a per-input memorization
/// table with a backoff n-gram over target sequences,
///   p = λ·p_mem + (1−λ)·p_ngram,
/// falling back to the n-gram alone when no memorized target extends the
/// prefix. Probabilities are strictly positive whenever λ < 1.
class ReferenceScorer : public ConditionalScorer {
 public:
  /// Trains on the database's train split (all records when untagged).
  /// Record counts weight both tables. Throws EmptyTrainingSet.
  static ReferenceScorer train(const MmptDatabase& db, int n = 3, double delta = 0.01,
                               double lambda = 0.7);

  const TokenVocabulary& vocab() const override { return vocab_; }
  std::vector<double> next_distribution(const TokenSequence& input,
                                        const TokenSequence& prefix) const override;

  int order() const { return n_; }
  double delta() const { return delta_; }
  double lambda() const { return lambda_; }

  /// Self-describing JSON checkpoint; loading reproduces scores bit-exactly.
  void save(std::ostream& out) const;
  static ReferenceScorer load(std::istream& in);

 private:
  TokenVocabulary vocab_;
  int n_ = 3;
  double delta_ = 0.01;
  double lambda_ = 0.7;

  struct MemorizedTarget {
    std::vector<int> ids;  // Σ token ids, no EOS
    long long count = 1;
  };
  // canonical(input) -> memorized continuations
  std::map<std::string, std::vector<MemorizedTarget>> memo_;

  // Backoff n-gram over targets: per context length j (1..n-1), context key
  // (ids joined by ',') -> (token id -> count, context total).
  struct ContextCounts {
    std::unordered_map<int, long long> per_token;
    long long total = 0;
  };
  std::vector<std::unordered_map<std::string, ContextCounts>> orders_;
  std::vector<long long> unigram_;  // indexed by distribution slot (Σ then EOS)
  long long unigram_total_ = 0;

  std::vector<double> ngram_distribution(const std::vector<int>& history) const;
  std::vector<int> to_ids(const TokenSequence& toks) const;
};

}  // namespace mmpt
