#include "mmpt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <random>

#include "nlohmann/json.hpp"

namespace mmpt {
namespace {

std::optional<Fragment> try_parse(const std::string& s) {
  try {
    return parse_fragment(s);
  } catch (const FragmentError&) {
    return std::nullopt;
  }
}

void check_shape(size_t inputs, size_t outputs) {
  if (inputs != outputs)
    throw std::invalid_argument("evaluation: one output list per input required");
}

}  // namespace

TrainingIndex TrainingIndex::from_db(const MmptDatabase& db) {
  bool tagged = false;
  for (const auto& r : db.records) {
    if (!r.split.empty()) {
      tagged = true;
      break;
    }
  }
  TrainingIndex idx;
  for (const auto& r : db.records) {
    if (tagged && r.split != "train") continue;
    idx.targets.insert(r.to_variable.canonical());
    idx.pairs.insert(pair_key(r.from_variable.canonical(), r.to_variable.canonical()));
  }
  return idx;
}

ValidityResult compute_validity(const std::vector<Fragment>& inputs,
                                const std::vector<std::vector<std::string>>& outputs_per_input) {
  check_shape(inputs.size(), outputs_per_input.size());
  ValidityResult res;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const int want = inputs[i].attachment_count();
    for (const auto& s : outputs_per_input[i]) {
      ++res.total;
      auto f = try_parse(s);
      if (f && f->attachment_count() == want) ++res.valid;
    }
  }
  res.zero_denominator = res.total == 0;
  res.fraction = res.zero_denominator ? 0.0 : static_cast<double>(res.valid) / res.total;
  return res;
}

NoveltyResult compute_novelty(const std::vector<Fragment>& inputs,
                              const std::vector<std::vector<std::string>>& outputs_per_input,
                              const TrainingIndex& train, bool pair_level) {
  check_shape(inputs.size(), outputs_per_input.size());
  NoveltyResult res;
  res.pair_level = pair_level;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const int want = inputs[i].attachment_count();
    const std::string in_canon = inputs[i].canonical();
    for (const auto& s : outputs_per_input[i]) {
      ++res.total;
      auto f = try_parse(s);
      if (!f || f->attachment_count() != want) continue;
      ++res.valid;
      const bool seen = pair_level
                            ? train.pairs.count(TrainingIndex::pair_key(in_canon, f->canonical())) > 0
                            : train.targets.count(f->canonical()) > 0;
      if (!seen) ++res.novel_valid;
    }
  }
  res.zero_denominator = res.valid == 0 || res.total == 0;
  res.novel_over_valid = res.valid == 0 ? 0.0 : static_cast<double>(res.novel_valid) / res.valid;
  res.novel_over_all = res.total == 0 ? 0.0 : static_cast<double>(res.novel_valid) / res.total;
  return res;
}

RecallResult compute_recall(const std::vector<Fragment>& inputs,
                            const std::vector<std::vector<std::string>>& outputs_per_input,
                            const std::vector<std::vector<std::string>>& ground_truth_per_input,
                            const TrainingIndex& train) {
  check_shape(inputs.size(), outputs_per_input.size());
  check_shape(inputs.size(), ground_truth_per_input.size());

  RecallResult res;
  double macro_sum = 0.0, macro_i_sum = 0.0, macro_o_sum = 0.0;
  int n_with_i = 0, n_with_o = 0;

  for (size_t i = 0; i < inputs.size(); ++i) {
    if (ground_truth_per_input[i].empty()) continue;
    ++res.inputs_evaluated;
    const std::string in_canon = inputs[i].canonical();

    std::set<std::string> generated;
    for (const auto& s : outputs_per_input[i]) {
      if (auto f = try_parse(s)) generated.insert(f->canonical());
    }

    long long in_total = 0, in_rec = 0, out_total = 0, out_rec = 0;
    std::set<std::string> seen_gt;  // a duplicated ground-truth row counts once
    for (const auto& s : ground_truth_per_input[i]) {
      const std::string canon = parse_fragment(s).canonical();
      if (!seen_gt.insert(canon).second) continue;
      const bool in_train = train.pairs.count(TrainingIndex::pair_key(in_canon, canon)) > 0;
      const bool hit = generated.count(canon) > 0;
      (in_train ? in_total : out_total) += 1;
      if (hit) (in_train ? in_rec : out_rec) += 1;
    }

    const long long total = in_total + out_total;
    const long long rec = in_rec + out_rec;
    macro_sum += static_cast<double>(rec) / total;
    if (in_total > 0) {
      macro_i_sum += static_cast<double>(in_rec) / in_total;
      ++n_with_i;
    }
    if (out_total > 0) {
      macro_o_sum += static_cast<double>(out_rec) / out_total;
      ++n_with_o;
    }
    res.gt_total += total;
    res.gt_recovered += rec;
    res.gt_in += in_total;
    res.gt_in_recovered += in_rec;
    res.gt_out += out_total;
    res.gt_out_recovered += out_rec;
  }

  if (res.inputs_evaluated > 0) res.recall = macro_sum / res.inputs_evaluated;
  res.has_recall_i = n_with_i > 0;
  res.has_recall_o = n_with_o > 0;
  if (n_with_i > 0) res.recall_i = macro_i_sum / n_with_i;
  if (n_with_o > 0) res.recall_o = macro_o_sum / n_with_o;
  if (res.gt_total > 0) res.micro_recall = static_cast<double>(res.gt_recovered) / res.gt_total;
  if (res.gt_in > 0) res.micro_recall_i = static_cast<double>(res.gt_in_recovered) / res.gt_in;
  if (res.gt_out > 0) res.micro_recall_o = static_cast<double>(res.gt_out_recovered) / res.gt_out;
  return res;
}

MetricReport evaluate_generation(const std::vector<Fragment>& inputs,
                                 const std::vector<std::vector<std::string>>& outputs_per_input,
                                 const std::vector<std::vector<std::string>>& ground_truth_per_input,
                                 const TrainingIndex& train, bool pair_level, int cap) {
  if (cap < 0) throw std::invalid_argument("evaluation: cap must be non-negative");
  std::vector<std::vector<std::string>> capped = outputs_per_input;
  if (cap > 0) {
    for (auto& v : capped) {
      if (v.size() > static_cast<size_t>(cap)) v.resize(static_cast<size_t>(cap));
    }
  }
  MetricReport report;
  report.generation_cap = cap;
  report.validity = compute_validity(inputs, capped);
  report.novelty = compute_novelty(inputs, capped, train, pair_level);
  report.recall = compute_recall(inputs, capped, ground_truth_per_input, train);
  return report;
}

void write_metric_report_json(std::ostream& os, const MetricReport& report,
                              const std::string& config_hash) {
  nlohmann::json j;
  j["config_hash"] = config_hash;
  j["generation_cap"] = report.generation_cap;

  j["validity"] = {{"fraction", report.validity.fraction},
                   {"valid", report.validity.valid},
                   {"total", report.validity.total},
                   {"zero_denominator", report.validity.zero_denominator}};

  j["novelty"] = {{"novel_over_valid", report.novelty.novel_over_valid},
                  {"novel_over_all", report.novelty.novel_over_all},
                  {"novel_valid", report.novelty.novel_valid},
                  {"valid", report.novelty.valid},
                  {"total", report.novelty.total},
                  {"pair_level", report.novelty.pair_level},
                  {"zero_denominator", report.novelty.zero_denominator}};

  nlohmann::json r;
  r["macro"] = {{"recall", report.recall.recall},
                {"recall_i", report.recall.has_recall_i ? nlohmann::json(report.recall.recall_i)
                                                        : nlohmann::json(nullptr)},
                {"recall_o", report.recall.has_recall_o ? nlohmann::json(report.recall.recall_o)
                                                        : nlohmann::json(nullptr)}};
  r["micro"] = {{"recall", report.recall.micro_recall},
                {"recall_i", report.recall.gt_in > 0 ? nlohmann::json(report.recall.micro_recall_i)
                                                     : nlohmann::json(nullptr)},
                {"recall_o", report.recall.gt_out > 0 ? nlohmann::json(report.recall.micro_recall_o)
                                                      : nlohmann::json(nullptr)}};
  r["counts"] = {{"gt_total", report.recall.gt_total},
                 {"gt_recovered", report.recall.gt_recovered},
                 {"gt_in", report.recall.gt_in},
                 {"gt_in_recovered", report.recall.gt_in_recovered},
                 {"gt_out", report.recall.gt_out},
                 {"gt_out_recovered", report.recall.gt_out_recovered},
                 {"inputs_evaluated", report.recall.inputs_evaluated}};
  j["recall"] = std::move(r);
  os << j.dump(2) << "\n";
}

std::vector<SweepRow> beam_validity_sweep(const ConditionalScorer& scorer,
                                          const std::vector<Fragment>& test_inputs,
                                          const std::vector<int>& beam_sizes,
                                          const GenerationConfig& base) {
  if (test_inputs.empty()) throw std::invalid_argument("beam_validity_sweep: no inputs");
  std::vector<SweepRow> rows;
  rows.reserve(beam_sizes.size());
  for (int beam : beam_sizes) {
    if (beam < 1) throw std::invalid_argument("beam_validity_sweep: beam sizes must be positive");
    GenerationConfig cfg = base;
    cfg.beam_width = beam;
    cfg.top_k_outputs = beam;
    double sum = 0.0;
    for (const auto& input : test_inputs) {
      std::vector<std::string> outs;
      for (const auto& g : beam_generate(scorer, tokenize(input.canonical()), cfg)) {
        outs.push_back(detokenize(g.tokens));
      }
      auto v = compute_validity({input}, {outs});
      sum += v.fraction;  // an input with no surviving beams contributes 0
    }
    rows.push_back({beam, sum / static_cast<double>(test_inputs.size())});
  }
  return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows,
                     const std::string& config_hash) {
  os << "# config_hash=" << config_hash << "\n";
  os << "beam,avg_validity\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.avg_validity);
    os << r.beam << "," << buf << "\n";
  }
}

namespace {

// Covariance action C·v = Xᵀ(X·v)/n on the centered matrix, with components
// already found projected out so close eigenvalues cannot stall convergence.
std::vector<double> cov_apply(const std::vector<std::vector<double>>& centered,
                              const std::vector<double>& v,
                              const std::vector<const std::vector<double>*>& ortho) {
  const size_t n = centered.size(), d = v.size();
  std::vector<double> out(d, 0.0);
  for (const auto& row : centered) {
    double dot = 0.0;
    for (size_t j = 0; j < d; ++j) dot += row[j] * v[j];
    for (size_t j = 0; j < d; ++j) out[j] += dot * row[j];
  }
  for (double& x : out) x /= static_cast<double>(n);
  for (const auto* c : ortho) {
    double dot = 0.0;
    for (size_t j = 0; j < d; ++j) dot += (*c)[j] * out[j];
    for (size_t j = 0; j < d; ++j) out[j] -= dot * (*c)[j];
  }
  return out;
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void fix_sign(std::vector<double>& c, std::vector<std::array<double, 2>>& coords, int axis) {
  size_t arg = 0;
  for (size_t j = 1; j < c.size(); ++j) {
    if (std::abs(c[j]) > std::abs(c[arg])) arg = j;
  }
  if (c[arg] < 0.0) {
    for (double& x : c) x = -x;
    for (auto& xy : coords) xy[axis] = -xy[axis];
  }
}

// Deterministic unit vector orthogonal to c1, for rank-deficient residuals.
std::vector<double> orthogonal_fallback(const std::vector<double>& c1) {
  size_t arg = 0;
  for (size_t j = 1; j < c1.size(); ++j) {
    if (std::abs(c1[j]) < std::abs(c1[arg])) arg = j;
  }
  std::vector<double> v(c1.size(), 0.0);
  v[arg] = 1.0;
  double dot = c1[arg];
  for (size_t j = 0; j < v.size(); ++j) v[j] -= dot * c1[j];
  double nn = norm(v);
  for (double& x : v) x /= nn;
  return v;
}

}  // namespace

PcaResult pca_top2(const std::vector<std::vector<double>>& rows,
                   const std::vector<std::string>& labels) {
  const size_t n = rows.size();
  if (n != labels.size()) throw std::invalid_argument("pca_top2: one label per row required");
  if (n < 3) throw std::invalid_argument("pca_top2: at least 3 rows required");
  const size_t d = rows[0].size();
  if (d < 2) throw std::invalid_argument("pca_top2: at least 2 columns required");
  for (const auto& r : rows) {
    if (r.size() != d) throw std::invalid_argument("pca_top2: ragged rows");
  }

  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows)
    for (size_t j = 0; j < d; ++j) mean[j] += r[j];
  for (double& m : mean) m /= static_cast<double>(n);
  std::vector<std::vector<double>> centered(n, std::vector<double>(d));
  double total_var = 0.0;
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < d; ++j) {
      centered[i][j] = rows[i][j] - mean[j];
      total_var += centered[i][j] * centered[i][j];
    }
  }
  total_var /= static_cast<double>(n);
  if (total_var <= 0.0) throw DegenerateVariance("all points coincide; no variance to project");

  PcaResult res;
  res.labels = labels;
  res.total_variance = total_var;

  std::mt19937_64 rng(0x9E3779B97F4A7C15ull);
  std::vector<std::vector<double>> comps;
  for (int k = 0; k < 2; ++k) {
    std::vector<const std::vector<double>*> ortho;
    for (const auto& c : comps) ortho.push_back(&c);

    std::vector<double> v;
    double lambda = 0.0;
    bool found = false;
    for (int attempt = 0; attempt < 4 && !found; ++attempt) {
      v.assign(d, 0.0);
      for (double& x : v) x = (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 0.5;
      for (const auto* c : ortho) {
        double dot = 0.0;
        for (size_t j = 0; j < d; ++j) dot += (*c)[j] * v[j];
        for (size_t j = 0; j < d; ++j) v[j] -= dot * (*c)[j];
      }
      double nn = norm(v);
      if (nn == 0.0) continue;
      for (double& x : v) x /= nn;

      for (int iter = 0; iter < 3000; ++iter) {
        std::vector<double> w = cov_apply(centered, v, ortho);
        double wn = norm(w);
        if (wn <= total_var * 1e-14) break;  // residual space is empty
        double rayleigh = 0.0;               // v·C·v with |v| = 1
        for (size_t j = 0; j < d; ++j) rayleigh += w[j] * v[j];
        for (double& x : w) x /= wn;
        v = std::move(w);
        // At an eigenvector the Rayleigh quotient equals |C·v|.
        if (iter >= 4 && std::abs(rayleigh - wn) <= 1e-12 * wn) {
          lambda = wn;
          found = true;
          break;
        }
      }
      if (!found) {
        // Slow convergence (near-tied spectrum): accept the current direction
        // if its Rayleigh quotient is non-negligible, else retry / fall back.
        std::vector<double> w = cov_apply(centered, v, ortho);
        lambda = 0.0;
        for (size_t j = 0; j < d; ++j) lambda += w[j] * v[j];
        found = lambda > total_var * 1e-13;
      }
    }
    if (!found) {
      if (k == 0) throw DegenerateVariance("covariance has no usable leading direction");
      v = orthogonal_fallback(comps[0]);
      lambda = 0.0;
    }
    res.eigenvalues[k] = lambda;
    comps.push_back(std::move(v));
  }

  res.coords.assign(n, {0.0, 0.0});
  for (size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 2; ++k) {
      double dot = 0.0;
      for (size_t j = 0; j < d; ++j) dot += centered[i][j] * comps[k][j];
      res.coords[i][k] = dot;
    }
  }
  fix_sign(comps[0], res.coords, 0);
  fix_sign(comps[1], res.coords, 1);
  res.component1 = std::move(comps[0]);
  res.component2 = std::move(comps[1]);
  res.explained = {res.eigenvalues[0] / total_var, res.eigenvalues[1] / total_var};
  return res;
}

PcaResult pca_coverage(const std::vector<std::pair<std::string, std::vector<Fragment>>>& sets,
                       const FpParams& fp) {
  std::vector<std::vector<double>> rows;
  std::vector<std::string> labels;
  for (const auto& [label, frags] : sets) {
    for (const auto& f : frags) {
      FingerprintVec v = morgan_fingerprint(f, fp.radius, fp.nbits);
      std::vector<double> row(static_cast<size_t>(fp.nbits), 0.0);
      for (int b = 0; b < fp.nbits; ++b) row[static_cast<size_t>(b)] = v.test(b) ? 1.0 : 0.0;
      rows.push_back(std::move(row));
      labels.push_back(label);
    }
  }
  if (rows.size() < 3)
    throw std::invalid_argument("pca_coverage: at least 3 fragments required");
  return pca_top2(rows, labels);
}

void write_pca_csv(std::ostream& os, const PcaResult& proj, const std::string& config_hash) {
  os << "# config_hash=" << config_hash << "\n";
  os << "label,x,y\n";
  char bx[64], by[64];
  for (size_t i = 0; i < proj.labels.size(); ++i) {
    std::snprintf(bx, sizeof bx, "%.17g", proj.coords[i][0]);
    std::snprintf(by, sizeof by, "%.17g", proj.coords[i][1]);
    os << proj.labels[i] << "," << bx << "," << by << "\n";
  }
}

}  // namespace mmpt
