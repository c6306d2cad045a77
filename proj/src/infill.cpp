#include "mmpt/infill.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>

namespace mmpt {

namespace {

constexpr int kUnbounded = std::numeric_limits<int>::max();

int sat_add(int a, int b) {
  if (a >= kUnbounded - b) return kUnbounded;
  return a + b;
}

// Collapse runs of adjacent holes into one; bounds add, spans add when all
// parts carry one. Keeps search states unambiguous (a hole is always followed
// by a fixed token or the end).
std::vector<TemplateSlot> normalize_slots(const MaskedTemplate& t) {
  std::vector<TemplateSlot> out;
  for (const TemplateSlot& s : t.slots) {
    if (s.fixed) {
      if (s.token.empty()) throw std::invalid_argument("empty fixed token in template");
      out.push_back(s);
      continue;
    }
    if (s.min_tokens < 0 || s.min_tokens > s.max_tokens)
      throw std::invalid_argument("hole bounds must satisfy 0 <= min <= max");
    if (!out.empty() && !out.back().fixed) {
      TemplateSlot& prev = out.back();
      prev.min_tokens += s.min_tokens;
      prev.max_tokens = sat_add(prev.max_tokens, s.max_tokens);
      if (prev.origin_span && s.origin_span)
        prev.origin_span = *prev.origin_span + *s.origin_span;
      else
        prev.origin_span.reset();
    } else {
      out.push_back(s);
    }
  }
  if (out.empty()) throw std::invalid_argument("template needs at least one slot");
  return out;
}

struct Node {
  double logp = 0.0;
  int slot = 0;      // index into normalized slots
  int emitted = 0;   // tokens produced in the current hole
  bool done = false;
  TokenSequence toks;
  std::string flat;  // detokenized toks, tie-break key
  long long seq = 0;
};

struct NodeWorse {
  bool operator()(const Node& a, const Node& b) const {
    if (a.logp != b.logp) return a.logp < b.logp;
    if (a.flat != b.flat) return a.flat > b.flat;
    return a.seq > b.seq;
  }
};

}  // namespace

double effective_token_count(const std::vector<double>& p) {
  if (p.empty()) throw NotADistribution("empty probability vector");
  double sum = 0.0, sq = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) throw NotADistribution("negative or NaN probability");
    sum += x;
    sq += x * x;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw NotADistribution("probabilities must sum to 1");
  return 1.0 / sq;
}

MaskedTemplate template_from_substructure(const Fragment& full, const std::vector<int>& keep) {
  const int n = static_cast<int>(full.atoms().size());
  std::vector<char> kept(n, 0);
  for (int a : keep) {
    if (a < 0 || a >= n) throw std::out_of_range("keep atom index out of range");
    kept[a] = 1;
  }
  int total_kept = 0;
  for (char c : kept) total_kept += c;
  if (total_kept > 0) {
    // The kept atoms must induce a connected subgraph.
    std::vector<char> vis(n, 0);
    std::vector<int> stack;
    for (int i = 0; i < n; ++i)
      if (kept[i]) {
        stack.push_back(i);
        vis[i] = 1;
        break;
      }
    int reached = 1;
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      for (const Bond& b : full.bonds()) {
        int u = b.a == v ? b.b : b.b == v ? b.a : -1;
        if (u < 0 || !kept[u] || vis[u]) continue;
        vis[u] = 1;
        ++reached;
        stack.push_back(u);
      }
    }
    if (reached != total_kept)
      throw DisconnectedKeepSet("keep set does not induce a connected subgraph");
  }

  MaskedTemplate t;
  t.origin_fragment = full.canonical();
  int run = 0;
  auto flush = [&] {
    if (run > 0) t.slots.push_back(TemplateSlot::make_blank(0, kUnbounded, run));
    run = 0;
  };
  for (const EmittedToken& tok : canonical_emission(full)) {
    bool keep_tok = kept[tok.atom] && (tok.atom2 < 0 || kept[tok.atom2]);
    if (keep_tok) {
      flush();
      t.slots.push_back(TemplateSlot::make_fixed(tok.text));
    } else {
      ++run;
    }
  }
  flush();
  return t;
}

std::string template_to_string(const MaskedTemplate& t) {
  std::string out;
  for (const TemplateSlot& s : t.slots) {
    if (s.fixed) {
      out += s.token;
    } else if (s.origin_span) {
      for (int i = 0; i < *s.origin_span; ++i) out += "?*";
    } else {
      out += "<BLANK>";
    }
  }
  return out;
}

MaskedTemplate template_from_string(std::string_view text) {
  MaskedTemplate t;
  std::string chunk;
  auto flush = [&] {
    if (chunk.empty()) return;
    for (auto& tok : tokenize(chunk)) t.slots.push_back(TemplateSlot::make_fixed(std::move(tok)));
    chunk.clear();
  };
  size_t i = 0;
  while (i < text.size()) {
    if (text.compare(i, 7, "<BLANK>") == 0) {
      flush();
      t.slots.push_back(TemplateSlot::make_blank());
      i += 7;
    } else if (text.compare(i, 2, "?*") == 0) {
      flush();
      int span = 0;
      while (text.compare(i, 2, "?*") == 0) {
        ++span;
        i += 2;
      }
      t.slots.push_back(TemplateSlot::make_blank(0, kUnbounded, span));
    } else if (text[i] == '[') {
      // Bracket atoms are opaque to marker detection.
      size_t close = text.find(']', i);
      size_t end = close == std::string_view::npos ? text.size() : close + 1;
      chunk.append(text.substr(i, end - i));
      i = end;
    } else {
      chunk += text[i];
      ++i;
    }
  }
  flush();
  if (t.slots.empty()) throw std::invalid_argument("empty template string");
  return t;
}

std::vector<InfillResult> prompt_generate(const ConditionalScorer& s, const TokenSequence& input,
                                          const MaskedTemplate& t, int k, const InfillConfig& cfg,
                                          InfillStats* stats) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  if (cfg.max_new_tokens_per_blank < 1 || cfg.max_total_candidates < 1 || cfg.top_scored < 1)
    throw std::invalid_argument("infill budgets must be positive");
  if (cfg.length_margin < 0) throw std::invalid_argument("length margin must be non-negative");
  if (cfg.n_eff_cap && *cfg.n_eff_cap < 1)
    throw std::invalid_argument("branching cap must be positive");
  const std::vector<TemplateSlot> slots = normalize_slots(t);
  const int n_slots = static_cast<int>(slots.size());
  const TokenVocabulary& v = s.vocab();

  InfillStats local;
  InfillStats& st = stats ? *stats : local;
  st = InfillStats{};

  std::priority_queue<Node, std::vector<Node>, NodeWorse> pq;
  long long next_seq = 0;

  // Consumes any run of forced fixed tokens (and the final EOS step when the
  // template is complete), then enqueues. Dead branches vanish here.
  auto push_node = [&](Node n) {
    while (n.slot < n_slots && slots[n.slot].fixed) {
      const std::string& tok = slots[n.slot].token;
      int id = v.find(tok);
      if (id < 0) return;
      double p = s.next_distribution(input, n.toks)[id];
      if (p <= 0.0) return;
      n.logp += std::log(p);
      n.toks.push_back(tok);
      n.flat += tok;
      ++n.slot;
      n.emitted = 0;
    }
    if (n.slot == n_slots) {
      double p = s.next_distribution(input, n.toks)[v.eos_id()];
      if (p <= 0.0) return;
      n.logp += std::log(p);
      n.done = true;
    }
    n.seq = next_seq++;
    pq.push(std::move(n));
  };

  push_node(Node{});

  const long long budget =
      std::min<long long>(cfg.max_total_candidates, cfg.top_scored);
  std::vector<InfillResult> out;
  std::set<std::string> seen;

  while (!pq.empty() && st.candidates < budget && static_cast<int>(out.size()) < k) {
    Node n = pq.top();
    pq.pop();
    if (n.done) {
      ++st.candidates;
      if (auto f = try_parse(n.flat)) {
        std::string canon = f->canonical();
        if (seen.insert(canon).second)
          out.push_back(InfillResult{std::move(*f), n.logp, std::move(n.flat)});
      }
      continue;
    }

    // The node sits at a hole (push_node consumed everything else).
    ++st.expansions;
    const TemplateSlot& hole = slots[n.slot];
    int eff_max = std::min(hole.max_tokens, cfg.max_new_tokens_per_blank);
    int eff_min = hole.min_tokens;
    if (hole.origin_span) {
      eff_max = std::min(eff_max, sat_add(*hole.origin_span, cfg.length_margin));
      eff_min = std::max(eff_min, *hole.origin_span - cfg.length_margin);
    }

    std::vector<double> dist = s.next_distribution(input, n.toks);
    double n_eff = effective_token_count(dist);
    int limit = std::max(1, static_cast<int>(std::ceil(n_eff - 1e-9)));
    if (cfg.n_eff_cap) limit = std::min(limit, *cfg.n_eff_cap);

    // Terminating the hole is a structural move, always available once the
    // lower length bound is met; the branching limit governs token emissions.
    if (n.emitted >= eff_min) {
      Node child = n;
      child.emitted = 0;
      if (n.slot + 1 == n_slots) {
        double p = dist[v.eos_id()];
        if (p > 0.0) {
          child.logp += std::log(p);
          child.done = true;
          child.slot = n_slots;
          child.seq = next_seq++;
          pq.push(std::move(child));
        }
      } else {
        child.slot = n.slot + 1;  // push_node consumes the fixed run
        push_node(std::move(child));
      }
    }

    // Emission children: the highest-probability tokens, at most ceil(N_eff).
    struct Child {
      double p;
      int token;
    };
    std::vector<Child> kids;
    if (n.emitted < eff_max) {
      for (int id = 0; id < v.sigma_size(); ++id)
        if (dist[id] > 0.0) kids.push_back(Child{dist[id], id});
    }
    std::sort(kids.begin(), kids.end(), [](const Child& a, const Child& b) {
      if (a.p != b.p) return a.p > b.p;
      return a.token < b.token;
    });
    if (static_cast<int>(kids.size()) > limit) kids.resize(limit);
    st.max_children = std::max(st.max_children, static_cast<int>(kids.size()));
    if (stats) st.branch_log.emplace_back(n_eff, static_cast<int>(kids.size()));

    for (const Child& c : kids) {
      Node child = n;
      const std::string& tok = v.token(c.token);
      child.logp += std::log(c.p);
      child.toks.push_back(tok);
      child.flat += tok;
      child.emitted = n.emitted + 1;
      child.seq = next_seq++;
      pq.push(std::move(child));
    }
  }

  if (out.empty()) throw NoValidCompletion("no parseable completion found");
  return out;
}

}  // namespace mmpt
