#include "mmpt/seq_model.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>

#include <json.hpp>

namespace mmpt {

TokenVocabulary::TokenVocabulary(std::vector<std::string> sigma) : sigma_(std::move(sigma)) {
  std::sort(sigma_.begin(), sigma_.end());
  sigma_.erase(std::unique(sigma_.begin(), sigma_.end()), sigma_.end());
  for (size_t i = 0; i < sigma_.size(); ++i) id_of_[sigma_[i]] = static_cast<int>(i);
}

TokenVocabulary TokenVocabulary::from_strings(const std::vector<std::string>& fragment_strings) {
  std::set<std::string> toks;
  for (const auto& s : fragment_strings)
    for (auto& t : tokenize(s)) toks.insert(std::move(t));
  return TokenVocabulary(std::vector<std::string>(toks.begin(), toks.end()));
}

int TokenVocabulary::id(const std::string& token) const {
  auto it = id_of_.find(token);
  if (it == id_of_.end()) throw UnknownToken("token not in vocabulary: '" + token + "'");
  return it->second;
}

const std::string& TokenVocabulary::token(int id) const {
  if (id < 0 || id >= sigma_size()) {
    static const std::string eos = "<EOS>", bos = "<BOS>", mask = "<MASK>", blank = "<BLANK>";
    if (id == eos_id()) return eos;
    if (id == bos_id()) return bos;
    if (id == mask_id()) return mask;
    if (id == blank_id()) return blank;
    throw UnknownToken("token id out of range");
  }
  return sigma_[id];
}

double sequence_log_prob(const ConditionalScorer& s, const TokenSequence& input,
                         const TokenSequence& output) {
  const TokenVocabulary& v = s.vocab();
  double lp = 0.0;
  TokenSequence prefix;
  prefix.reserve(output.size());
  for (const std::string& tok : output) {
    int slot = v.id(tok);  // throws UnknownToken
    std::vector<double> p = s.next_distribution(input, prefix);
    lp += std::log(p[slot]);
    prefix.push_back(tok);
  }
  std::vector<double> p = s.next_distribution(input, prefix);
  lp += std::log(p[v.eos_id()]);
  return lp;
}

namespace {

// Deterministic tie-break key: canonical form when the sequence parses.
std::string tiebreak_key(const TokenSequence& toks) {
  std::string raw = detokenize(toks);
  if (auto f = try_parse(raw)) return f->canonical();
  return raw;
}

}  // namespace

std::vector<GeneratedSeq> beam_generate(const ConditionalScorer& s, const TokenSequence& input,
                                        const GenerationConfig& cfg) {
  const TokenVocabulary& v = s.vocab();
  struct Hyp {
    TokenSequence tokens;
    double log_prob = 0.0;
    std::string key;  // tie-break, computed lazily at sort time
  };

  std::vector<Hyp> live{{{}, 0.0, ""}};
  std::vector<GeneratedSeq> completed;
  std::vector<GeneratedSeq> truncated;

  for (int step = 0; step <= cfg.max_length && !live.empty(); ++step) {
    if (step == cfg.max_length) {
      for (auto& h : live)
        truncated.push_back(GeneratedSeq{std::move(h.tokens), h.log_prob, true});
      break;
    }
    std::vector<Hyp> next;
    for (const Hyp& h : live) {
      std::vector<double> p = s.next_distribution(input, h.tokens);
      double eos_p = p[v.eos_id()];
      if (eos_p > 0.0)
        completed.push_back(GeneratedSeq{h.tokens, h.log_prob + std::log(eos_p), false});
      for (int t = 0; t < v.sigma_size(); ++t) {
        if (p[t] <= 0.0) continue;
        Hyp ext;
        ext.tokens = h.tokens;
        ext.tokens.push_back(v.token(t));
        ext.log_prob = h.log_prob + std::log(p[t]);
        next.push_back(std::move(ext));
      }
    }
    // Keep the best beam_width continuations.
    for (auto& h : next) h.key = detokenize(h.tokens);
    std::sort(next.begin(), next.end(), [](const Hyp& a, const Hyp& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      return a.key < b.key;
    });
    if (static_cast<int>(next.size()) > cfg.beam_width) next.resize(cfg.beam_width);
    live = std::move(next);
    // Completed pool only ever needs the top beam_width entries.
    if (completed.size() > static_cast<size_t>(2 * cfg.beam_width + 16)) {
      std::sort(completed.begin(), completed.end(),
                [](const GeneratedSeq& a, const GeneratedSeq& b) {
                  return a.log_prob > b.log_prob;
                });
      completed.resize(cfg.beam_width);
    }
  }

  std::vector<GeneratedSeq> out = std::move(completed);
  if (cfg.include_truncated)
    out.insert(out.end(), truncated.begin(), truncated.end());

  std::vector<std::pair<std::string, size_t>> keys(out.size());
  for (size_t i = 0; i < out.size(); ++i) keys[i] = {tiebreak_key(out[i].tokens), i};
  std::sort(keys.begin(), keys.end(), [&](const auto& a, const auto& b) {
    if (out[a.second].log_prob != out[b.second].log_prob)
      return out[a.second].log_prob > out[b.second].log_prob;
    return a.first < b.first;
  });

  std::vector<GeneratedSeq> ranked;
  std::set<std::string> seen;
  for (auto& [key, idx] : keys) {
    if (cfg.dedup && !seen.insert(key).second) continue;
    ranked.push_back(std::move(out[idx]));
    if (static_cast<int>(ranked.size()) >=
        std::min(cfg.beam_width, std::max(1, cfg.top_k_outputs)))
      break;
  }
  return ranked;
}

// ---------------------------------------------------------------------------
// ReferenceScorer
// ---------------------------------------------------------------------------

namespace {

std::string context_key(const std::vector<int>& ids, size_t from) {
  std::string key;
  for (size_t i = from; i < ids.size(); ++i) {
    if (i > from) key += ',';
    key += std::to_string(ids[i]);
  }
  return key;
}

}  // namespace

std::vector<int> ReferenceScorer::to_ids(const TokenSequence& toks) const {
  std::vector<int> ids;
  ids.reserve(toks.size());
  for (const auto& t : toks) ids.push_back(vocab_.id(t));
  return ids;
}

ReferenceScorer ReferenceScorer::train(const MmptDatabase& db, int n, double delta,
                                       double lambda) {
  bool tagged = false;
  for (const auto& r : db.records)
    if (!r.split.empty()) tagged = true;

  std::vector<const MmptRecord*> rows;
  for (const auto& r : db.records)
    if (!tagged || r.split == "train") rows.push_back(&r);
  if (rows.empty()) throw EmptyTrainingSet("no training records");
  if (n < 2) throw std::invalid_argument("n-gram order must be >= 2");
  if (!(delta > 0.0)) throw std::invalid_argument("delta must be positive");
  if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("lambda must lie in [0,1]");

  ReferenceScorer rs;
  rs.n_ = n;
  rs.delta_ = delta;
  rs.lambda_ = lambda;

  std::vector<std::string> all_strings;
  for (const auto* r : rows) {
    all_strings.push_back(r->from_variable.canonical());
    all_strings.push_back(r->to_variable.canonical());
  }
  rs.vocab_ = TokenVocabulary::from_strings(all_strings);

  rs.orders_.assign(static_cast<size_t>(n - 1), {});
  rs.unigram_.assign(static_cast<size_t>(rs.vocab_.dist_size()), 0);

  for (const auto* r : rows) {
    long long count = r->count;
    std::vector<int> target = rs.to_ids(tokenize(r->to_variable.canonical()));

    auto& targets = rs.memo_[r->from_variable.canonical()];
    bool merged = false;
    for (auto& mt : targets)
      if (mt.ids == target) {
        mt.count += count;
        merged = true;
        break;
      }
    if (!merged) targets.push_back(MemorizedTarget{target, count});

    // n-gram counts over the target plus terminal EOS, BOS-padded history.
    int bos = rs.vocab_.bos_id();
    for (size_t pos = 0; pos <= target.size(); ++pos) {
      int slot = pos < target.size() ? target[pos] : rs.vocab_.eos_id();
      rs.unigram_[slot] += count;
      rs.unigram_total_ += count;
      for (int j = 1; j <= n - 1; ++j) {
        std::vector<int> ctx;
        for (int back = j; back >= 1; --back) {
          long long idx = static_cast<long long>(pos) - back;
          ctx.push_back(idx < 0 ? bos : target[idx]);
        }
        ContextCounts& cc = rs.orders_[j - 1][context_key(ctx, 0)];
        cc.per_token[slot] += count;
        cc.total += count;
      }
    }
  }
  return rs;
}

std::vector<double> ReferenceScorer::ngram_distribution(const std::vector<int>& history) const {
  int V = vocab_.dist_size();
  std::vector<double> p(V);
  for (int slot = 0; slot < V; ++slot)
    p[slot] = (static_cast<double>(unigram_[slot]) + delta_) /
              (static_cast<double>(unigram_total_) + delta_ * V);
  for (int j = 1; j <= n_ - 1; ++j) {
    std::vector<int> ctx;
    for (int back = j; back >= 1; --back) {
      long long idx = static_cast<long long>(history.size()) - back;
      ctx.push_back(idx < 0 ? vocab_.bos_id() : history[idx]);
    }
    auto it = orders_[j - 1].find(context_key(ctx, 0));
    const ContextCounts* cc = it == orders_[j - 1].end() ? nullptr : &it->second;
    double denom = static_cast<double>(cc ? cc->total : 0) + delta_ * V;
    for (int slot = 0; slot < V; ++slot) {
      long long c_t = 0;
      if (cc) {
        auto jt = cc->per_token.find(slot);
        if (jt != cc->per_token.end()) c_t = jt->second;
      }
      p[slot] = (static_cast<double>(c_t) + delta_ * V * p[slot]) / denom;
    }
  }
  return p;
}

std::vector<double> ReferenceScorer::next_distribution(const TokenSequence& input,
                                                       const TokenSequence& prefix) const {
  int V = vocab_.dist_size();
  std::vector<int> history = to_ids(prefix);
  std::vector<double> ngram = ngram_distribution(history);

  // Memorization component: continuation counts of stored targets that
  // extend the prefix.
  std::string key = detokenize(input);
  if (auto f = try_parse(key)) key = f->canonical();
  auto it = memo_.find(key);
  std::vector<double> mem;
  if (it != memo_.end()) {
    std::vector<long long> cont(V, 0);
    long long total = 0;
    for (const MemorizedTarget& t : it->second) {
      if (t.ids.size() < history.size()) continue;
      if (!std::equal(history.begin(), history.end(), t.ids.begin())) continue;
      int slot = t.ids.size() == history.size() ? vocab_.eos_id()
                                                : t.ids[history.size()];
      cont[slot] += t.count;
      total += t.count;
    }
    if (total > 0) {
      mem.resize(V);
      for (int s = 0; s < V; ++s) mem[s] = static_cast<double>(cont[s]) / total;
    }
  }

  std::vector<double> out(V);
  if (mem.empty()) {
    out = std::move(ngram);
  } else {
    for (int s = 0; s < V; ++s) out[s] = lambda_ * mem[s] + (1.0 - lambda_) * ngram[s];
  }
  return out;
}

void ReferenceScorer::save(std::ostream& out) const {
  nlohmann::json j;
  j["format"] = "mmpt-reference-scorer";
  j["version"] = 1;
  j["n"] = n_;
  j["delta"] = delta_;
  j["lambda"] = lambda_;
  j["sigma"] = vocab_.sigma();

  nlohmann::json memo = nlohmann::json::array();
  for (const auto& [input, targets] : memo_) {
    nlohmann::json entry;
    entry["input"] = input;
    nlohmann::json ts = nlohmann::json::array();
    for (const auto& t : targets) ts.push_back({{"ids", t.ids}, {"count", t.count}});
    entry["targets"] = std::move(ts);
    memo.push_back(std::move(entry));
  }
  j["memo"] = std::move(memo);

  j["unigram"] = unigram_;
  j["unigram_total"] = unigram_total_;
  nlohmann::json orders = nlohmann::json::array();
  for (const auto& order : orders_) {
    // Sorted context keys for stable bytes.
    std::map<std::string, const ContextCounts*> sorted;
    for (const auto& [ctx, cc] : order) sorted[ctx] = &cc;
    nlohmann::json level = nlohmann::json::object();
    for (const auto& [ctx, cc] : sorted) {
      std::map<int, long long> per(cc->per_token.begin(), cc->per_token.end());
      nlohmann::json counts = nlohmann::json::object();
      for (auto [tid, c] : per) counts[std::to_string(tid)] = c;
      level[ctx] = {{"counts", std::move(counts)}, {"total", cc->total}};
    }
    orders.push_back(std::move(level));
  }
  j["orders"] = std::move(orders);
  out << j.dump(2) << '\n';
}

ReferenceScorer ReferenceScorer::load(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint: ") + e.what());
  }
  if (!j.is_object() || j.value("format", "") != "mmpt-reference-scorer" ||
      j.value("version", 0) != 1)
    throw DataError("unrecognized checkpoint format");

  ReferenceScorer rs;
  try {
    rs.n_ = j.at("n").get<int>();
    rs.delta_ = j.at("delta").get<double>();
    rs.lambda_ = j.at("lambda").get<double>();
    rs.vocab_ = TokenVocabulary(j.at("sigma").get<std::vector<std::string>>());
    for (const auto& entry : j.at("memo")) {
      auto& targets = rs.memo_[entry.at("input").get<std::string>()];
      for (const auto& t : entry.at("targets"))
        targets.push_back(MemorizedTarget{t.at("ids").get<std::vector<int>>(),
                                          t.at("count").get<long long>()});
    }
    rs.unigram_ = j.at("unigram").get<std::vector<long long>>();
    rs.unigram_total_ = j.at("unigram_total").get<long long>();
    for (const auto& level : j.at("orders")) {
      std::unordered_map<std::string, ContextCounts> order;
      for (auto it = level.begin(); it != level.end(); ++it) {
        ContextCounts cc;
        cc.total = it.value().at("total").get<long long>();
        const auto& counts = it.value().at("counts");
        for (auto ct = counts.begin(); ct != counts.end(); ++ct)
          cc.per_token[std::stoi(ct.key())] = ct.value().get<long long>();
        order[it.key()] = std::move(cc);
      }
      rs.orders_.push_back(std::move(order));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint: ") + e.what());
  }
  if (static_cast<int>(rs.orders_.size()) != rs.n_ - 1 ||
      static_cast<int>(rs.unigram_.size()) != rs.vocab_.dist_size())
    throw DataError("checkpoint tables inconsistent with declared order");
  return rs;
}

}  // namespace mmpt
