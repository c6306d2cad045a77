// Command-line surface for the analog-generation pipeline. Subcommands cover
// corpus ingestion, pair extraction, dataset splitting, scorer training,
// free/templated/retrieval-guided generation, indexing, evaluation protocols,
// the steering identity checker, and beam sweeps. Every artifact-producing
// run writes a manifest (resolved config, seed, input digests, versions) that
// suffices to reproduce its outputs bit-exactly.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nlohmann/json.hpp"

#include "mmpt/ann_index.hpp"
#include "mmpt/digest.hpp"
#include "mmpt/evaluation.hpp"
#include "mmpt/infill.hpp"
#include "mmpt/mmp.hpp"
#include "mmpt/rag_engine.hpp"
#include "mmpt/seq_model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmpt;

#ifndef MMPT_VERSION
#define MMPT_VERSION "0.0.0"
#endif

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- files ----

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Outputs must be fresh files and must never alias an input.
void ensure_fresh(const std::string& out, const std::vector<std::string>& inputs, bool force) {
  std::error_code ec;
  for (const auto& in : inputs) {
    if (fs::exists(out, ec) && fs::exists(in, ec) && fs::equivalent(out, in, ec))
      throw UsageError("output path " + out + " would overwrite input " + in);
  }
  if (!force && fs::exists(out, ec))
    throw UsageError(out + " already exists; pass --force to overwrite");
}

void write_file(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp);
    out << content;
    if (!out) throw DataError("short write to " + tmp);
  }
  fs::rename(tmp, path);
}

// ------------------------------------------------------------- manifest ----

struct Manifest {
  std::string command;
  json config = json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  std::string config_hash() const { return fnv1a64_hex(config.dump()); }

  json to_json() const {
    json j;
    j["command"] = command;
    j["version"] = MMPT_VERSION;
    j["config"] = config;
    j["config_hash"] = config_hash();
    json ins = json::object();
    for (const auto& p : inputs) ins[p] = fnv1a64_hex(read_file(p));
    j["inputs"] = ins;
    j["outputs"] = outputs;
    j["versions"] = {{"cli11", CLI11_VERSION},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                     {"compiler", __VERSION__}};
    return j;
  }
};

void write_manifest(const Manifest& m, const std::string& explicit_path, bool force) {
  std::string path = explicit_path;
  if (path.empty()) {
    if (m.outputs.empty()) return;  // pure checker with no artifacts
    path = m.outputs.front() + ".manifest.json";
  }
  ensure_fresh(path, m.inputs, force);
  write_file(path, m.to_json().dump(2) + "\n");
}

// --------------------------------------------------------------- output ----

struct Ctx {
  bool as_json = false;
  std::string manifest_path;
  bool force = false;
};

void emit(const Ctx& ctx, const json& summary, const std::string& human) {
  if (ctx.as_json)
    std::cout << summary.dump(2) << "\n";
  else
    std::cout << human << "\n";
}

// -------------------------------------------------------------- parsing ----

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    if (tok.empty()) continue;
    try {
      size_t pos = 0;
      out.push_back(std::stod(tok, &pos));
      if (pos != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw UsageError("not a number in list: '" + tok + "'");
    }
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (double d : parse_double_list(s)) {
    int i = static_cast<int>(d);
    if (static_cast<double>(i) != d) throw UsageError("expected integer list, got " + s);
    out.push_back(i);
  }
  return out;
}

Fragment parse_input_fragment(const std::string& s) {
  try {
    return parse_fragment(s);
  } catch (const FragmentError& e) {
    throw DataError("cannot parse fragment '" + s + "': " + e.what());
  }
}

// Query fragments: --input strings plus optional one-per-line file.
std::vector<Fragment> gather_inputs(const std::vector<std::string>& inline_inputs,
                                    const std::string& file, std::vector<std::string>* consumed) {
  std::vector<Fragment> out;
  for (const auto& s : inline_inputs) out.push_back(parse_input_fragment(s));
  if (!file.empty()) {
    std::istringstream in(read_file(file));
    if (consumed) consumed->push_back(file);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      out.push_back(parse_input_fragment(line));
    }
  }
  if (out.empty()) throw UsageError("no inputs given; use --input or --inputs-file");
  return out;
}

MmptDatabase load_db(const std::string& path) {
  std::istringstream in(read_file(path));
  return read_mmpt_tsv(in);
}

ReferenceScorer load_or_train(const std::string& checkpoint, const MmptDatabase& db, int order,
                              double delta, double lambda, std::vector<std::string>* consumed) {
  if (!checkpoint.empty()) {
    std::istringstream in(read_file(checkpoint));
    if (consumed) consumed->push_back(checkpoint);
    return ReferenceScorer::load(in);
  }
  return ReferenceScorer::train(db, order, delta, lambda);
}

AnnIndex load_or_build(const std::string& index_path, const MmptDatabase& db,
                       std::vector<std::string>* consumed) {
  if (!index_path.empty()) {
    std::istringstream in(read_file(index_path));
    if (consumed) consumed->push_back(index_path);
    return AnnIndex::load(in);
  }
  return build_index(db, {}, {});
}

// ------------------------------------------------------ config file glue ---

// Flat key=value file; keys are long option names of the active subcommand
// without the leading dashes. Precedence: defaults < file < explicit flags.
std::vector<std::string> config_file_args(const std::string& path, CLI::App* sub) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  auto trim = [](std::string s) {
    size_t a = s.find_first_not_of(" \t");
    size_t b = s.find_last_not_of(" \t");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  std::vector<std::string> args;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (value.size() >= 2 && ((value.front() == '"' && value.back() == '"') ||
                              (value.front() == '\'' && value.back() == '\'')))
      value = value.substr(1, value.size() - 2);
    if (key == "config") throw UsageError("config files cannot nest: key 'config'");
    CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (!opt) throw UsageError("unknown config key '" + key + "' for subcommand " + sub->get_name());
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

// -------------------------------------------------------------- helpers ----

json generation_config_json(const GenerationConfig& g) {
  return {{"beam_width", g.beam_width},
          {"max_length", g.max_length},
          {"top_k_outputs", g.top_k_outputs},
          {"dedup", g.dedup},
          {"include_truncated", g.include_truncated}};
}

json infill_config_json(const InfillConfig& c) {
  json j = {{"max_new_tokens_per_blank", c.max_new_tokens_per_blank},
            {"max_total_candidates", c.max_total_candidates},
            {"top_scored", c.top_scored},
            {"length_margin", c.length_margin}};
  j["n_eff_cap"] = c.n_eff_cap ? json(*c.n_eff_cap) : json(nullptr);
  return j;
}

json rag_config_json(const RagConfig& c) {
  return {{"k_inputs", c.retrieval.k_inputs},
          {"output_cap", c.retrieval.output_cap},
          {"threshold", c.clustering.threshold},
          {"max_cluster_size", c.clustering.max_cluster_size},
          {"n_clusters", c.n_clusters},
          {"per_cluster_budget", c.per_cluster_budget},
          {"total_budget", c.total_budget},
          {"weights", c.weights},
          {"infill", infill_config_json(c.infill)},
          {"fallback", generation_config_json(c.fallback)},
          {"threads", c.threads},
          {"allow_fallback", c.allow_fallback}};
}

void add_infill_flags(CLI::App* cmd, InfillConfig* c, int* n_eff_cap_holder) {
  cmd->add_option("--max-new-tokens-per-blank", c->max_new_tokens_per_blank,
                  "hard cap on tokens emitted into one blank")
      ->check(CLI::Range(1, 200));
  cmd->add_option("--max-total-candidates", c->max_total_candidates,
                  "search budget: completed sequences")
      ->check(CLI::Range(1, 1000000));
  cmd->add_option("--top-scored", c->top_scored, "frontier size retained per step")
      ->check(CLI::Range(1, 1000000));
  cmd->add_option("--length-margin", c->length_margin,
                  "slack around a hole's original span")
      ->check(CLI::Range(0, 200));
  cmd->add_option("--n-eff-cap", *n_eff_cap_holder,
                  "upper bound on the per-node branching limit (0 = none)")
      ->check(CLI::Range(0, 10000));
}

void finish_infill_flags(InfillConfig* c, int n_eff_cap_holder) {
  if (n_eff_cap_holder > 0) c->n_eff_cap = n_eff_cap_holder;
}

// Deterministic random simplex / distribution draws for steer-check.
std::vector<double> random_distribution(std::mt19937_64& rng, size_t n) {
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> p(n);
  double total = 0.0;
  for (double& x : p) {
    x = expo(rng) + 1e-12;
    total += x;
  }
  for (double& x : p) x /= total;
  return p;
}

// -------------------------------------------------------------- ingest -----

int cmd_ingest(const Ctx& ctx, const std::string& in_path, const std::string& out_path,
               bool skip_invalid) {
  Manifest m;
  m.command = "ingest";
  m.inputs = {in_path};
  m.config = {{"in", in_path}, {"out", out_path}, {"skip_invalid", skip_invalid}};

  const std::string text = read_file(in_path);
  std::istringstream in(text);
  std::string line;
  int lineno = 0, written = 0, skipped = 0;
  std::ostringstream out;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::string id, smiles;
    if (line[0] == '{') {
      json row = json::parse(line, nullptr, false);
      if (row.is_discarded() || !row.contains("smiles"))
        throw DataError(in_path + ":" + std::to_string(lineno) + ": malformed JSONL row");
      smiles = row["smiles"].get<std::string>();
      id = row.contains("id") ? row["id"].get<std::string>() : "";
    } else {
      size_t tab = line.find('\t');
      if (tab == std::string::npos) {
        smiles = line;
      } else {
        id = line.substr(0, tab);
        smiles = line.substr(tab + 1);
      }
    }
    if (id.empty()) id = "m" + std::to_string(lineno);
    try {
      Fragment mol = parse_fragment(smiles);
      if (mol.attachment_count() != 0)
        throw DataError("corpus molecules must carry no attachment points");
      out << json({{"id", id}, {"smiles", mol.canonical()}}).dump() << "\n";
      ++written;
    } catch (const std::exception& e) {
      if (!skip_invalid)
        throw DataError(in_path + ":" + std::to_string(lineno) + ": " + e.what());
      ++skipped;
    }
  }
  if (written == 0) throw DataError(in_path + ": no valid molecules");

  ensure_fresh(out_path, m.inputs, ctx.force);
  write_file(out_path, out.str());
  m.outputs = {out_path};
  write_manifest(m, ctx.manifest_path, ctx.force);

  json summary = {{"command", "ingest"}, {"written", written}, {"skipped", skipped},
                  {"out", out_path}};
  emit(ctx, summary,
       "wrote " + std::to_string(written) + " molecules to " + out_path +
           (skipped ? " (" + std::to_string(skipped) + " skipped)" : ""));
  return 0;
}

// --------------------------------------------------------------- pairs -----

int cmd_pairs(const Ctx& ctx, const std::string& in_path, const std::string& out_path,
              const ExtractConfig& xc_base, const std::string& alerts_path) {
  Manifest m;
  m.command = "pairs";
  m.inputs = {in_path};

  ExtractConfig xc = xc_base;
  if (!alerts_path.empty()) {
    m.inputs.push_back(alerts_path);
    std::istringstream in(read_file(alerts_path));
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      xc.alerts.push_back(parse_input_fragment(line));
    }
  }
  m.config = {{"in", in_path},
              {"out", out_path},
              {"max_cuts", xc.max_cuts},
              {"max_variable_ratio", xc.max_variable_ratio},
              {"min_weight", xc.min_mol_weight},
              {"alerts", alerts_path},
              {"threads", xc.threads}};

  std::istringstream in(read_file(in_path));
  auto corpus = read_corpus_jsonl(in);
  auto db = build_mmpt_database(corpus, xc);

  std::ostringstream out;
  write_mmpt_tsv(out, db);
  ensure_fresh(out_path, m.inputs, ctx.force);
  write_file(out_path, out.str());
  m.outputs = {out_path};
  write_manifest(m, ctx.manifest_path, ctx.force);

  json summary = {{"command", "pairs"},
                  {"molecules_total", db.report.molecules_total},
                  {"molecules_kept", db.report.molecules_kept},
                  {"ordered_pairs", db.report.ordered_pairs},
                  {"records", db.report.records},
                  {"distinct_unordered", db.report.distinct_unordered},
                  {"out", out_path}};
  emit(ctx, summary,
       "extracted " + std::to_string(db.report.records) + " records from " +
           std::to_string(db.report.molecules_kept) + "/" +
           std::to_string(db.report.molecules_total) + " molecules -> " + out_path);
  return 0;
}

// --------------------------------------------------------------- split -----

int cmd_split(const Ctx& ctx, const std::string& in_path, const std::string& out_path,
              double train_frac, uint64_t seed) {
  Manifest m;
  m.command = "split";
  m.inputs = {in_path};
  m.config = {{"in", in_path}, {"out", out_path}, {"train_frac", train_frac}, {"seed", seed}};

  auto db = load_db(in_path);
  split_dataset(db, train_frac, seed);
  int train = 0, test = 0;
  for (const auto& r : db.records) (r.split == "train" ? train : test) += 1;

  std::ostringstream out;
  write_mmpt_tsv(out, db);
  ensure_fresh(out_path, m.inputs, ctx.force);
  write_file(out_path, out.str());
  m.outputs = {out_path};
  write_manifest(m, ctx.manifest_path, ctx.force);

  json summary = {{"command", "split"}, {"train", train}, {"test", test}, {"out", out_path}};
  emit(ctx, summary,
       "tagged " + std::to_string(train) + " train / " + std::to_string(test) + " test -> " +
           out_path);
  return 0;
}

// --------------------------------------------------------------- train -----

int cmd_train(const Ctx& ctx, const std::string& in_path, const std::string& out_path, int order,
              double delta, double lambda) {
  Manifest m;
  m.command = "train";
  m.inputs = {in_path};
  m.config = {{"in", in_path}, {"out", out_path}, {"order", order}, {"delta", delta},
              {"lambda", lambda}};

  auto db = load_db(in_path);
  auto scorer = ReferenceScorer::train(db, order, delta, lambda);

  std::ostringstream out;
  scorer.save(out);
  ensure_fresh(out_path, m.inputs, ctx.force);
  write_file(out_path, out.str());
  m.outputs = {out_path};
  write_manifest(m, ctx.manifest_path, ctx.force);

  json summary = {{"command", "train"},
                  {"sigma_size", scorer.vocab().sigma_size()},
                  {"order", scorer.order()},
                  {"lambda", scorer.lambda()},
                  {"out", out_path}};
  emit(ctx, summary,
       "trained scorer (|sigma| = " + std::to_string(scorer.vocab().sigma_size()) + ", order " +
           std::to_string(order) + ") -> " + out_path);
  return 0;
}

// ------------------------------------------------------------- generate ----

int cmd_generate(const Ctx& ctx, const std::string& checkpoint,
                 const std::vector<std::string>& inline_inputs, const std::string& inputs_file,
                 const std::string& out_path, const GenerationConfig& gc) {
  Manifest m;
  m.command = "generate";
  m.inputs = {};
  auto scorer = load_or_train(checkpoint, {}, 3, 0.01, 0.7, &m.inputs);
  auto queries = gather_inputs(inline_inputs, inputs_file, &m.inputs);
  m.config = {{"checkpoint", checkpoint},
              {"inputs", inline_inputs},
              {"inputs_file", inputs_file},
              {"out", out_path},
              {"generation", generation_config_json(gc)}};

  std::ostringstream out;
  long long rows = 0;
  for (const auto& q : queries) {
    auto gens = beam_generate(scorer, tokenize(q.canonical()), gc);
    int rank = 0;
    for (const auto& g : gens) {
      out << json({{"input", q.canonical()},
                   {"output", detokenize(g.tokens)},
                   {"log_prob", g.log_prob},
                   {"rank", rank++},
                   {"truncated", g.truncated}})
                 .dump()
          << "\n";
      ++rows;
    }
  }
  ensure_fresh(out_path, m.inputs, ctx.force);
  write_file(out_path, out.str());
  m.outputs = {out_path};
  write_manifest(m, ctx.manifest_path, ctx.force);

  json summary = {{"command", "generate"}, {"inputs", queries.size()}, {"rows", rows},
                  {"out", out_path}};
  emit(ctx, summary,
       "generated " + std::to_string(rows) + " sequences for " + std::to_string(queries.size()) +
           " inputs -> " + out_path);
  return 0;
}

// --------------------------------------------------------------- infill ----

int cmd_infill(const Ctx& ctx, const std::string& checkpoint, const std::string& input,
               const std::string& template_text, const std::string& out_path, int top_k,
               const InfillConfig& ic) {
  Manifest m;
  m.command = "infill";
  auto scorer = load_or_train(checkpoint, {}, 3, 0.01, 0.7, &m.inputs);
  Fragment query = parse_input_fragment(input);
  MaskedTemplate tmpl;
  try {
    tmpl = template_from_string(template_text);
  } catch (const std::exception& e) {
    throw DataError(std::string("bad template: ") + e.what());
  }
  m.config = {{"checkpoint", checkpoint},
              {"input", input},
              {"template", template_text},
              {"top_k", top_k},
              {"out", out_path},
              {"infill", infill_config_json(ic)}};

  InfillStats stats;
  auto results = prompt_generate(scorer, tokenize(query.canonical()), tmpl, top_k, ic, &stats);

  std::ostringstream out;
  for (const auto& r : results) {
    out << json({{"input", query.canonical()},
                 {"template", template_text},
                 {"candidate", r.fragment.canonical()},
                 {"text", r.text},
                 {"log_prob", r.log_prob}})
               .dump()
        << "\n";
  }
  ensure_fresh(out_path, m.inputs, ctx.force);
  write_file(out_path, out.str());
  m.outputs = {out_path};
  write_manifest(m, ctx.manifest_path, ctx.force);

  json summary = {{"command", "infill"},
                  {"candidates", results.size()},
                  {"expansions", stats.expansions},
                  {"max_children", stats.max_children},
                  {"out", out_path}};
  emit(ctx, summary,
       "infilled " + std::to_string(results.size()) + " candidates (" +
           std::to_string(stats.expansions) + " expansions) -> " + out_path);
  return 0;
}

// ---------------------------------------------------------------- index ----

int cmd_index(const Ctx& ctx, const std::string& db_path, const std::string& out_path,
              const FpParams& fp, const IndexParams& ip, const std::string& probe, int probe_k) {
  Manifest m;
  m.command = "index";
  m.inputs = {db_path};
  m.config = {{"db", db_path},
              {"out", out_path},
              {"radius", fp.radius},
              {"nbits", fp.nbits},
              {"M", ip.M},
              {"ef_construction", ip.ef_construction},
              {"ef_search", ip.ef_search},
              {"seed", ip.seed}};

  auto db = load_db(db_path);
  auto index = build_index(db, fp, ip);

  std::ostringstream out;
  index.save(out);
  ensure_fresh(out_path, m.inputs, ctx.force);
  write_file(out_path, out.str());
  m.outputs = {out_path};
  write_manifest(m, ctx.manifest_path, ctx.force);

  json summary = {{"command", "index"}, {"size", index.size()}, {"out", out_path}};
  if (!probe.empty()) {
    auto ret = retrieve(index, db, parse_input_fragment(probe), {probe_k, 10 * probe_k});
    json hits = json::array();
    for (const auto& [frag, sim] : ret.matched_inputs)
      hits.push_back({{"input", frag.canonical()}, {"cosine", sim}});
    summary["probe"] = {{"query", probe}, {"matched_inputs", hits}};
  }
  emit(ctx, summary,
       "indexed " + std::to_string(index.size()) + " inputs -> " + out_path);
  return 0;
}

// ------------------------------------------------------------------ rag ----

int cmd_rag(const Ctx& ctx, const std::string& db_path, const std::string& checkpoint,
            const std::string& index_path, const std::vector<std::string>& inline_inputs,
            const std::string& inputs_file, const std::string& out_path, const RagConfig& rc,
            int order, double delta, double lambda) {
  Manifest m;
  m.command = "rag";
  m.inputs = {db_path};

  auto db = load_db(db_path);
  auto scorer = load_or_train(checkpoint, db, order, delta, lambda, &m.inputs);
  auto index = load_or_build(index_path, db, &m.inputs);
  auto queries = gather_inputs(inline_inputs, inputs_file, &m.inputs);
  m.config = {{"db", db_path},
              {"checkpoint", checkpoint},
              {"index", index_path},
              {"inputs", inline_inputs},
              {"inputs_file", inputs_file},
              {"out", out_path},
              {"order", order},
              {"delta", delta},
              {"lambda", lambda},
              {"rag", rag_config_json(rc)}};

  std::ostringstream out;
  long long total_candidates = 0;
  int fallbacks = 0;
  for (const auto& q : queries) {
    auto result = rag_generate(scorer, index, db, q, rc);
    write_rag_jsonl(out, q, result);
    total_candidates += static_cast<long long>(result.candidates.size());
    fallbacks += result.fallback ? 1 : 0;
  }
  ensure_fresh(out_path, m.inputs, ctx.force);
  write_file(out_path, out.str());
  m.outputs = {out_path};
  write_manifest(m, ctx.manifest_path, ctx.force);

  json summary = {{"command", "rag"},
                  {"inputs", queries.size()},
                  {"candidates", total_candidates},
                  {"fallbacks", fallbacks},
                  {"out", out_path}};
  emit(ctx, summary,
       "generated " + std::to_string(total_candidates) + " candidates for " +
           std::to_string(queries.size()) + " inputs -> " + out_path +
           (fallbacks ? " (" + std::to_string(fallbacks) + " fallback)" : ""));
  return 0;
}

// ----------------------------------------------------------------- eval ----

int cmd_eval(const Ctx& ctx, int task, const std::string& train_path, const std::string& eval_path,
             const std::string& mode, const std::string& checkpoint, const std::string& index_path,
             const std::string& out_path, const std::string& pca_path, int order, double delta,
             double lambda, const GenerationConfig& gc, const RagConfig& rc, bool pair_level,
             int cap, int max_inputs) {
  Manifest m;
  m.command = "eval";
  m.inputs = {train_path};

  auto train_db = load_db(train_path);
  auto train_index = TrainingIndex::from_db(train_db);

  // assemble the ground-truth records per protocol
  std::vector<MmptRecord> gt_records;
  if (task == 1) {
    if (eval_path.empty()) {
      for (const auto& r : train_db.records)
        if (r.split == "test") gt_records.push_back(r);
      if (gt_records.empty())
        throw DataError("task 1 needs a test split in --train (run split) or an explicit --test");
    } else {
      m.inputs.push_back(eval_path);
      for (auto& r : load_db(eval_path).records) gt_records.push_back(std::move(r));
    }
  } else {
    if (eval_path.empty())
      throw UsageError(task == 2 ? "task 2 requires --project" : "task 3 requires --future");
    m.inputs.push_back(eval_path);
    auto eval_db = load_db(eval_path);
    if (task == 2) {
      gt_records = std::move(eval_db.records);
    } else {
      // task 3: keep only transformations whose inputs occur in the train set
      for (auto& r : eval_db.records)
        if (train_db.by_input.count(r.from_variable.canonical()))
          gt_records.push_back(std::move(r));
      if (gt_records.empty())
        throw DataError("no --future inputs overlap the training inputs");
    }
  }

  if (gt_records.empty()) throw DataError("ground-truth set is empty");
  std::map<std::string, std::vector<std::string>> gt_by_input;
  for (const auto& r : gt_records)
    gt_by_input[r.from_variable.canonical()].push_back(r.to_variable.canonical());
  std::vector<Fragment> inputs;
  std::vector<std::vector<std::string>> gt;
  for (const auto& [canon, targets] : gt_by_input) {
    if (max_inputs > 0 && static_cast<int>(inputs.size()) >= max_inputs) break;
    inputs.push_back(parse_fragment(canon));
    gt.push_back(targets);
  }

  auto scorer = load_or_train(checkpoint, train_db, order, delta, lambda, &m.inputs);

  m.config = {{"task", task},
              {"train", train_path},
              {"eval", eval_path},
              {"mode", mode},
              {"checkpoint", checkpoint},
              {"index", index_path},
              {"out", out_path},
              {"pca", pca_path},
              {"order", order},
              {"delta", delta},
              {"lambda", lambda},
              {"generation", generation_config_json(gc)},
              {"rag", rag_config_json(rc)},
              {"pair_level", pair_level},
              {"cap", cap},
              {"max_inputs", max_inputs}};

  std::vector<std::vector<std::string>> outs(inputs.size());
  int fallbacks = 0;
  if (mode == "fm") {
    for (size_t i = 0; i < inputs.size(); ++i) {
      for (const auto& g : beam_generate(scorer, tokenize(inputs[i].canonical()), gc))
        outs[i].push_back(detokenize(g.tokens));
    }
  } else {
    auto index = load_or_build(index_path, train_db, &m.inputs);
    for (size_t i = 0; i < inputs.size(); ++i) {
      auto result = rag_generate(scorer, index, train_db, inputs[i], rc);
      fallbacks += result.fallback ? 1 : 0;
      for (const auto& c : result.candidates) outs[i].push_back(c.text);
    }
  }

  auto report = evaluate_generation(inputs, outs, gt, train_index, pair_level, cap);
  std::ostringstream report_os;
  write_metric_report_json(report_os, report, m.config_hash());

  ensure_fresh(out_path, m.inputs, ctx.force);
  write_file(out_path, report_os.str());
  m.outputs = {out_path};

  if (!pca_path.empty()) {
    std::vector<Fragment> train_frags, gen_frags;
    std::set<std::string> seen;
    for (const auto& r : train_db.records)
      if ((r.split.empty() || r.split == "train") && seen.insert(r.to_variable.canonical()).second)
        train_frags.push_back(r.to_variable);
    seen.clear();
    for (const auto& per_input : outs) {
      for (const auto& s : per_input) {
        try {
          Fragment f = parse_fragment(s);
          if (seen.insert(f.canonical()).second) gen_frags.push_back(std::move(f));
        } catch (const FragmentError&) {
        }
      }
    }
    auto proj = pca_coverage({{"train", train_frags}, {"generated", gen_frags}});
    std::ostringstream pca_os;
    write_pca_csv(pca_os, proj, m.config_hash());
    ensure_fresh(pca_path, m.inputs, ctx.force);
    write_file(pca_path, pca_os.str());
    m.outputs.push_back(pca_path);
  }
  write_manifest(m, ctx.manifest_path, ctx.force);

  json summary = {{"command", "eval"},
                  {"task", task},
                  {"mode", mode},
                  {"inputs", inputs.size()},
                  {"fallbacks", fallbacks},
                  {"validity", report.validity.fraction},
                  {"novelty_over_valid", report.novelty.novel_over_valid},
                  {"recall", report.recall.recall},
                  {"recall_i", report.recall.has_recall_i ? json(report.recall.recall_i) : json()},
                  {"recall_o", report.recall.has_recall_o ? json(report.recall.recall_o) : json()},
                  {"out", out_path}};
  std::ostringstream human;
  human << "task " << task << " (" << mode << ", " << inputs.size() << " inputs): validity "
        << report.validity.fraction << ", novelty " << report.novelty.novel_over_valid
        << ", recall " << report.recall.recall;
  if (report.recall.has_recall_i) human << ", recall_i " << report.recall.recall_i;
  if (report.recall.has_recall_o) human << ", recall_o " << report.recall.recall_o;
  human << " -> " << out_path;
  emit(ctx, summary, human.str());
  return 0;
}

// ----------------------------------------------------------- steer-check ---

int cmd_steer_check(const Ctx& ctx, int trials, int max_clusters, int max_outcomes,
                    uint64_t seed, double tol, const std::string& out_path) {
  Manifest m;
  m.command = "steer-check";
  m.config = {{"trials", trials},
              {"clusters", max_clusters},
              {"outcomes", max_outcomes},
              {"seed", seed},
              {"tol", tol},
              {"out", out_path}};

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double max_dev = 0.0;
  double abar_lo = 1.0, abar_hi = 0.0;
  auto run_one = [&](int mode) {
    const size_t k = 1 + rng() % static_cast<size_t>(max_clusters);
    const size_t n = 2 + rng() % static_cast<size_t>(max_outcomes - 1);
    SteeringInstance inst;
    inst.base = random_distribution(rng, n);
    for (size_t i = 0; i < k; ++i) inst.cluster_dists.push_back(random_distribution(rng, n));
    inst.weights = random_distribution(rng, k);
    inst.gates.resize(k);
    for (double& g : inst.gates) g = mode < 0 ? 0.0 : mode > 0 ? 1.0 : unit(rng);
    auto check = verify_steering(inst);
    max_dev = std::max(max_dev, check.max_abs_deviation);
    abar_lo = std::min(abar_lo, check.alpha_bar);
    abar_hi = std::max(abar_hi, check.alpha_bar);
  };
  run_one(-1);  // all gates closed
  run_one(+1);  // all gates open
  for (int t = 0; t < trials; ++t) run_one(0);

  const bool ok = max_dev < tol;
  json summary = {{"command", "steer-check"}, {"trials", trials + 2},
                  {"max_abs_deviation", max_dev}, {"tol", tol},
                  {"alpha_bar_range", {abar_lo, abar_hi}}, {"ok", ok}};
  if (!out_path.empty()) {
    ensure_fresh(out_path, {}, ctx.force);
    write_file(out_path, summary.dump(2) + "\n");
    m.outputs = {out_path};
  }
  write_manifest(m, ctx.manifest_path, ctx.force);

  std::ostringstream human;
  human << "max deviation " << max_dev << " over " << (trials + 2) << " instances (tol " << tol
        << "): " << (ok ? "ok" : "FAILED");
  emit(ctx, summary, human.str());
  return ok ? 0 : 2;
}

// ---------------------------------------------------------------- sweep ----

int cmd_sweep(const Ctx& ctx, const std::string& train_path, const std::string& eval_path,
              const std::string& checkpoint, const std::string& beams_csv,
              const std::string& out_path, int order, double delta, double lambda,
              const GenerationConfig& base, int max_inputs) {
  Manifest m;
  m.command = "sweep";
  m.inputs = {train_path};
  m.config = {{"train", train_path},
              {"eval", eval_path},
              {"checkpoint", checkpoint},
              {"beams", beams_csv},
              {"out", out_path},
              {"order", order},
              {"delta", delta},
              {"lambda", lambda},
              {"generation", generation_config_json(base)},
              {"max_inputs", max_inputs}};

  auto beams = parse_int_list(beams_csv);
  if (beams.empty()) throw UsageError("--beams must name at least one beam size");
  for (int b : beams)
    if (b < 1) throw UsageError("beam sizes must be positive");

  auto train_db = load_db(train_path);
  auto scorer = load_or_train(checkpoint, train_db, order, delta, lambda, &m.inputs);

  std::set<std::string> canon;
  if (!eval_path.empty()) {
    m.inputs.push_back(eval_path);
    for (const auto& r : load_db(eval_path).records) canon.insert(r.from_variable.canonical());
  } else {
    for (const auto& r : train_db.records)
      if (r.split == "test") canon.insert(r.from_variable.canonical());
    if (canon.empty())
      for (const auto& r : train_db.records) canon.insert(r.from_variable.canonical());
  }
  std::vector<Fragment> inputs;
  for (const auto& c : canon) {
    if (max_inputs > 0 && static_cast<int>(inputs.size()) >= max_inputs) break;
    inputs.push_back(parse_fragment(c));
  }

  auto rows = beam_validity_sweep(scorer, inputs, beams, base);
  std::ostringstream out;
  write_sweep_csv(out, rows, m.config_hash());
  ensure_fresh(out_path, m.inputs, ctx.force);
  write_file(out_path, out.str());
  m.outputs = {out_path};
  write_manifest(m, ctx.manifest_path, ctx.force);

  json jrows = json::array();
  for (const auto& r : rows) jrows.push_back({{"beam", r.beam}, {"avg_validity", r.avg_validity}});
  json summary = {{"command", "sweep"}, {"inputs", inputs.size()}, {"rows", jrows},
                  {"out", out_path}};
  std::ostringstream human;
  human << "swept " << rows.size() << " beam sizes over " << inputs.size() << " inputs:";
  for (const auto& r : rows) human << " " << r.beam << "=" << r.avg_validity;
  human << " -> " << out_path;
  emit(ctx, summary, human.str());
  return 0;
}

// --------------------------------------------------------------- wiring ----

void add_common(CLI::App* cmd, Ctx* ctx, std::string* config_path) {
  cmd->add_option("--config", *config_path, "flat key=value config file (defaults < file < flags)");
  cmd->add_flag("--json", ctx->as_json, "machine-readable stdout");
  cmd->add_flag("--force", ctx->force, "allow overwriting existing outputs");
  cmd->add_option("--manifest", ctx->manifest_path,
                  "manifest path (default: <out>.manifest.json)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"matched-pair analog generation pipeline"};
  app.set_version_flag("--version", MMPT_VERSION);
  app.require_subcommand(1);

  Ctx ctx;
  std::string config_path;
  int exit_code = 0;
  std::vector<std::function<void()>> finishers;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "normalize a molecule corpus to JSONL");
  {
    static std::string in, out;
    static bool skip_invalid = false;
    ingest->add_option("--in", in, "corpus file (JSONL with id/smiles, or id<TAB>smiles lines)")
        ->required();
    ingest->add_option("--out", out, "normalized JSONL output")->required();
    ingest->add_flag("--skip-invalid", skip_invalid, "skip unparsable molecules instead of failing");
    add_common(ingest, &ctx, &config_path);
    ingest->callback([&] { exit_code = cmd_ingest(ctx, in, out, skip_invalid); });
  }

  // pairs
  auto* pairs = app.add_subcommand("pairs", "extract matched-pair transformations to TSV");
  {
    static std::string in, out, alerts;
    static ExtractConfig xc;
    pairs->add_option("--in", in, "corpus JSONL")->required();
    pairs->add_option("--out", out, "transformation TSV output")->required();
    pairs->add_option("--max-cuts", xc.max_cuts, "acyclic bond cuts per split (1..3)")
        ->check(CLI::Range(1, 3));
    pairs->add_option("--max-variable-ratio", xc.max_variable_ratio,
                      "max heavy-atom fraction of the variable part")
        ->check(CLI::Range(1e-9, 1.0));
    pairs->add_option("--min-weight", xc.min_mol_weight, "minimum molecular weight")
        ->check(CLI::Range(0.0, 1e6));
    pairs->add_option("--alerts", alerts, "file of structural-alert fragments, one per line");
    pairs->add_option("--threads", xc.threads, "worker threads")->check(CLI::Range(1, 256));
    add_common(pairs, &ctx, &config_path);
    pairs->callback([&] { exit_code = cmd_pairs(ctx, in, out, xc, alerts); });
  }

  // split
  auto* split = app.add_subcommand("split", "tag transformations train/test");
  {
    static std::string in, out;
    static double frac = 0.9;
    static uint64_t seed = 0;
    split->add_option("--in", in, "transformation TSV")->required();
    split->add_option("--out", out, "tagged TSV output")->required();
    split->add_option("--train-frac", frac, "train fraction")->check(CLI::Range(0.0, 1.0));
    split->add_option("--seed", seed, "shuffle seed");
    add_common(split, &ctx, &config_path);
    split->callback([&] { exit_code = cmd_split(ctx, in, out, frac, seed); });
  }

  // train
  auto* train = app.add_subcommand("train", "fit the reference scorer");
  {
    static std::string in, out;
    static int order = 3;
    static double delta = 0.01, lambda = 0.7;
    train->add_option("--in", in, "transformation TSV (train split when tagged)")->required();
    train->add_option("--out", out, "checkpoint JSON output")->required();
    train->add_option("--order", order, "n-gram order")->check(CLI::Range(1, 6));
    train->add_option("--delta", delta, "additive smoothing")->check(CLI::Range(1e-12, 100.0));
    train->add_option("--lambda", lambda, "memorization mixture weight")
        ->check(CLI::Range(0.0, 1.0));
    add_common(train, &ctx, &config_path);
    train->callback([&] { exit_code = cmd_train(ctx, in, out, order, delta, lambda); });
  }

  // generate
  auto* gen = app.add_subcommand("generate", "free beam generation from a checkpoint");
  {
    static std::string checkpoint, inputs_file, out;
    static std::vector<std::string> inputs;
    static GenerationConfig gc;
    gen->add_option("--checkpoint", checkpoint, "scorer checkpoint")->required();
    gen->add_option("--input", inputs, "query fragment (repeatable)");
    gen->add_option("--inputs-file", inputs_file, "file of query fragments, one per line");
    gen->add_option("--out", out, "JSONL output")->required();
    gen->add_option("--beam", gc.beam_width, "beam width")->check(CLI::Range(1, 100000));
    gen->add_option("--top-k", gc.top_k_outputs, "outputs kept per input")
        ->check(CLI::Range(1, 100000));
    gen->add_option("--max-length", gc.max_length, "max output tokens")
        ->check(CLI::Range(1, 10000));
    gen->add_flag("--include-truncated", gc.include_truncated,
                  "keep beams cut by the length limit");
    add_common(gen, &ctx, &config_path);
    gen->callback([&] { exit_code = cmd_generate(ctx, checkpoint, inputs, inputs_file, out, gc); });
  }

  // infill
  auto* infill = app.add_subcommand("infill", "templated generation from a checkpoint");
  {
    static std::string checkpoint, input, tmpl, out;
    static int top_k = 50;
    static InfillConfig ic;
    static int n_eff_cap = 0;
    infill->add_option("--checkpoint", checkpoint, "scorer checkpoint")->required();
    infill->add_option("--input", input, "conditioning input fragment")->required();
    infill->add_option("--template", tmpl, "masked template (\"?*\" holes, \"<BLANK>\" free)")
        ->required();
    infill->add_option("--out", out, "JSONL output")->required();
    infill->add_option("--top-k", top_k, "candidates kept")->check(CLI::Range(1, 100000));
    add_infill_flags(infill, &ic, &n_eff_cap);
    add_common(infill, &ctx, &config_path);
    infill->callback([&] {
      finish_infill_flags(&ic, n_eff_cap);
      exit_code = cmd_infill(ctx, checkpoint, input, tmpl, out, top_k, ic);
    });
  }

  // index
  auto* index = app.add_subcommand("index", "build the nearest-neighbor index");
  {
    static std::string db, out, probe;
    static FpParams fp;
    static IndexParams ip;
    static int probe_k = 10;
    index->add_option("--db", db, "transformation TSV")->required();
    index->add_option("--out", out, "binary index output")->required();
    index->add_option("--radius", fp.radius, "fingerprint radius")->check(CLI::Range(0, 8));
    index->add_option("--nbits", fp.nbits, "fingerprint bits")->check(CLI::Range(64, 1 << 20));
    index->add_option("--M", ip.M, "graph degree")->check(CLI::Range(2, 256));
    index->add_option("--ef-construction", ip.ef_construction, "construction beam")
        ->check(CLI::Range(1, 100000));
    index->add_option("--ef-search", ip.ef_search, "default query beam")
        ->check(CLI::Range(1, 100000));
    index->add_option("--seed", ip.seed, "level-assignment seed");
    index->add_option("--probe", probe, "optional query fragment printed with its neighbors");
    index->add_option("--probe-k", probe_k, "probe neighbor count")->check(CLI::Range(1, 1000));
    add_common(index, &ctx, &config_path);
    index->callback([&] { exit_code = cmd_index(ctx, db, out, fp, ip, probe, probe_k); });
  }

  // rag
  auto* rag = app.add_subcommand("rag", "retrieval-guided generation");
  {
    static std::string db, checkpoint, index_path, inputs_file, out, weights;
    static std::vector<std::string> inputs;
    static RagConfig rc;
    static int n_eff_cap = 0;
    static int order = 3;
    static double delta = 0.01, lambda = 0.7;
    static bool no_fallback = false;
    rag->add_option("--db", db, "transformation TSV")->required();
    rag->add_option("--checkpoint", checkpoint, "scorer checkpoint (default: train on --db)");
    rag->add_option("--index", index_path, "prebuilt index (default: build from --db)");
    rag->add_option("--input", inputs, "query fragment (repeatable)");
    rag->add_option("--inputs-file", inputs_file, "file of query fragments");
    rag->add_option("--out", out, "JSONL output")->required();
    rag->add_option("--order", order, "n-gram order when training in-process")
        ->check(CLI::Range(1, 6));
    rag->add_option("--delta", delta, "smoothing when training in-process")
        ->check(CLI::Range(1e-12, 100.0));
    rag->add_option("--lambda", lambda, "memorization weight when training in-process")
        ->check(CLI::Range(0.0, 1.0));
    rag->add_option("--k-inputs", rc.retrieval.k_inputs, "retrieved neighbor inputs")
        ->check(CLI::Range(1, 100000));
    rag->add_option("--output-cap", rc.retrieval.output_cap, "retrieved output cap")
        ->check(CLI::Range(1, 1000000));
    rag->add_option("--n-clusters", rc.n_clusters, "clusters expanded")
        ->check(CLI::Range(1, 10000));
    rag->add_option("--per-cluster-budget", rc.per_cluster_budget, "candidates per cluster")
        ->check(CLI::Range(1, 100000));
    rag->add_option("--total-budget", rc.total_budget, "total budget (0: per-cluster x clusters)")
        ->check(CLI::Range(0, 1000000));
    rag->add_option("--weights", weights, "comma-separated cluster preference weights");
    rag->add_option("--threshold", rc.clustering.threshold, "cluster similarity threshold")
        ->check(CLI::Range(0.0, 1.0));
    rag->add_option("--max-cluster-size", rc.clustering.max_cluster_size, "cluster size cap")
        ->check(CLI::Range(1, 100000));
    rag->add_option("--threads", rc.threads, "per-cluster generation threads")
        ->check(CLI::Range(1, 256));
    rag->add_flag("--no-fallback", no_fallback, "fail on empty retrieval");
    add_infill_flags(rag, &rc.infill, &n_eff_cap);
    add_common(rag, &ctx, &config_path);
    rag->callback([&] {
      finish_infill_flags(&rc.infill, n_eff_cap);
      rc.allow_fallback = !no_fallback;
      rc.clustering.threads = rc.threads;
      if (!weights.empty()) rc.weights = parse_double_list(weights);
      exit_code = cmd_rag(ctx, db, checkpoint, index_path, inputs, inputs_file, out, rc, order,
                          delta, lambda);
    });
  }

  // eval
  auto* eval = app.add_subcommand("eval", "run an evaluation protocol");
  {
    static int task = 1;
    static std::string train_path, test_path, project_path, future_path, mode = "rag";
    static std::string checkpoint, index_path, out, pca_path, weights;
    static int order = 3;
    static double delta = 0.01, lambda = 0.7;
    static GenerationConfig gc;
    static RagConfig rc;
    static int n_eff_cap = 0;
    static bool pair_level = false;
    static int cap = 1000, max_inputs = 0;
    eval->add_option("--task", task, "1: in-distribution, 2: within-project, 3: cross-project")
        ->required()
        ->check(CLI::Range(1, 3));
    eval->add_option("--train", train_path, "training transformation TSV")->required();
    eval->add_option("--test", test_path, "task-1 ground truth TSV (default: test split)");
    eval->add_option("--project", project_path, "task-2 ground truth TSV");
    eval->add_option("--future", future_path, "task-3 later-dataset TSV");
    eval->add_option("--mode", mode, "fm (free beam) or rag")
        ->check(CLI::IsMember({"fm", "rag"}));
    eval->add_option("--checkpoint", checkpoint, "scorer checkpoint (default: train in-process)");
    eval->add_option("--index", index_path, "prebuilt index (default: build from --train)");
    eval->add_option("--out", out, "metric report JSON")->required();
    eval->add_option("--pca", pca_path, "optional coverage projection CSV");
    eval->add_option("--order", order, "n-gram order")->check(CLI::Range(1, 6));
    eval->add_option("--delta", delta, "smoothing")->check(CLI::Range(1e-12, 100.0));
    eval->add_option("--lambda", lambda, "memorization weight")->check(CLI::Range(0.0, 1.0));
    eval->add_option("--beam", gc.beam_width, "fm beam width")->check(CLI::Range(1, 100000));
    eval->add_option("--top-k", gc.top_k_outputs, "fm outputs per input")
        ->check(CLI::Range(1, 100000));
    eval->add_option("--max-length", gc.max_length, "fm max tokens")->check(CLI::Range(1, 10000));
    eval->add_option("--k-inputs", rc.retrieval.k_inputs, "rag retrieved inputs")
        ->check(CLI::Range(1, 100000));
    eval->add_option("--output-cap", rc.retrieval.output_cap, "rag retrieved output cap")
        ->check(CLI::Range(1, 1000000));
    eval->add_option("--n-clusters", rc.n_clusters, "rag clusters")->check(CLI::Range(1, 10000));
    eval->add_option("--per-cluster-budget", rc.per_cluster_budget, "rag per-cluster budget")
        ->check(CLI::Range(1, 100000));
    eval->add_option("--total-budget", rc.total_budget, "rag total budget")
        ->check(CLI::Range(0, 1000000));
    eval->add_option("--weights", weights, "rag cluster preference weights");
    eval->add_option("--threshold", rc.clustering.threshold, "rag cluster threshold")
        ->check(CLI::Range(0.0, 1.0));
    eval->add_option("--max-cluster-size", rc.clustering.max_cluster_size, "rag cluster size cap")
        ->check(CLI::Range(1, 100000));
    eval->add_option("--threads", rc.threads, "rag generation threads")->check(CLI::Range(1, 256));
    add_infill_flags(eval, &rc.infill, &n_eff_cap);
    eval->add_flag("--pair-level", pair_level, "novelty over (input, target) pairs");
    eval->add_option("--cap", cap, "outputs scored per input (0: uncapped)")
        ->check(CLI::Range(0, 1000000));
    eval->add_option("--max-inputs", max_inputs, "evaluate only the first N inputs (0: all)")
        ->check(CLI::Range(0, 1000000));
    add_common(eval, &ctx, &config_path);
    eval->callback([&] {
      finish_infill_flags(&rc.infill, n_eff_cap);
      rc.clustering.threads = rc.threads;
      if (!weights.empty()) rc.weights = parse_double_list(weights);
      std::string eval_path;
      int sources = (!test_path.empty()) + (!project_path.empty()) + (!future_path.empty());
      if (sources > 1) throw UsageError("give only one of --test/--project/--future");
      if (task == 1) eval_path = test_path;
      if (task == 2) eval_path = project_path;
      if (task == 3) eval_path = future_path;
      if (task != 1 && !test_path.empty())
        throw UsageError("--test applies to task 1 only");
      if (task != 2 && !project_path.empty())
        throw UsageError("--project applies to task 2 only");
      if (task != 3 && !future_path.empty())
        throw UsageError("--future applies to task 3 only");
      exit_code = cmd_eval(ctx, task, train_path, eval_path, mode, checkpoint, index_path, out,
                           pca_path, order, delta, lambda, gc, rc, pair_level, cap, max_inputs);
    });
  }

  // steer-check
  auto* steer = app.add_subcommand("steer-check", "verify the steering identity on random instances");
  {
    static int trials = 100, clusters = 8, outcomes = 50;
    static uint64_t seed = 0;
    static double tol = 1e-12;
    static std::string out;
    steer->add_option("--trials", trials, "random instances")->check(CLI::Range(1, 1000000));
    steer->add_option("--clusters", clusters, "max clusters per instance")
        ->check(CLI::Range(1, 64));
    steer->add_option("--outcomes", outcomes, "max outcomes per instance")
        ->check(CLI::Range(2, 10000));
    steer->add_option("--seed", seed, "instance seed");
    steer->add_option("--tol", tol, "pass threshold on max deviation")
        ->check(CLI::Range(0.0, 1.0));
    steer->add_option("--out", out, "optional JSON result file");
    add_common(steer, &ctx, &config_path);
    steer->callback(
        [&] { exit_code = cmd_steer_check(ctx, trials, clusters, outcomes, seed, tol, out); });
  }

  // sweep
  auto* sweep = app.add_subcommand("sweep", "beam-size validity sweep");
  {
    static std::string train_path, eval_path, checkpoint, beams = "1,5,10,50", out;
    static int order = 3;
    static double delta = 0.01, lambda = 0.7;
    static GenerationConfig base;
    static int max_inputs = 0;
    sweep->add_option("--train", train_path, "training transformation TSV")->required();
    sweep->add_option("--eval", eval_path, "TSV whose inputs are swept (default: test split)");
    sweep->add_option("--checkpoint", checkpoint, "scorer checkpoint (default: train in-process)");
    sweep->add_option("--beams", beams, "comma-separated beam sizes");
    sweep->add_option("--out", out, "CSV output")->required();
    sweep->add_option("--order", order, "n-gram order")->check(CLI::Range(1, 6));
    sweep->add_option("--delta", delta, "smoothing")->check(CLI::Range(1e-12, 100.0));
    sweep->add_option("--lambda", lambda, "memorization weight")->check(CLI::Range(0.0, 1.0));
    sweep->add_option("--max-length", base.max_length, "max output tokens")
        ->check(CLI::Range(1, 10000));
    sweep->add_option("--max-inputs", max_inputs, "sweep only the first N inputs (0: all)")
        ->check(CLI::Range(0, 1000000));
    add_common(sweep, &ctx, &config_path);
    sweep->callback([&] {
      exit_code = cmd_sweep(ctx, train_path, eval_path, checkpoint, beams, out, order, delta,
                            lambda, base, max_inputs);
    });
  }

  // Last-wins lets a flat config file underlay explicit flags.
  for (auto* sub : app.get_subcommands({}))
    for (auto* opt : sub->get_options())
      if (opt->get_expected_min() > 0) opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    // Pre-scan for --config so file values can be injected before user flags.
    std::string cfg_file;
    size_t sub_pos = std::string::npos;
    for (size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) cfg_file = args[i + 1];
      else if (args[i].rfind("--config=", 0) == 0) cfg_file = args[i].substr(9);
      else if (sub_pos == std::string::npos && !args[i].empty() && args[i][0] != '-' &&
               app.get_subcommand_no_throw(args[i]) != nullptr)
        sub_pos = i;
    }
    if (!cfg_file.empty()) {
      if (sub_pos == std::string::npos) throw UsageError("--config requires a subcommand");
      auto injected = config_file_args(cfg_file, app.get_subcommand_no_throw(args[sub_pos]));
      args.insert(args.begin() + static_cast<long>(sub_pos) + 1, injected.begin(),
                  injected.end());
    }
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    std::cout << MMPT_VERSION << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return exit_code;
}
