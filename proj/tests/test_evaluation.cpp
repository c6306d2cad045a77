#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "mmpt/evaluation.hpp"
#include "nlohmann/json.hpp"

using namespace mmpt;

namespace {

std::vector<Fragment> parse_all(const std::vector<std::string>& ss) {
  std::vector<Fragment> out;
  for (const auto& s : ss) out.push_back(parse_fragment(s));
  return out;
}

TrainingIndex index_from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
  TrainingIndex idx;
  for (const auto& [f, t] : pairs) {
    idx.targets.insert(t);
    idx.pairs.insert(TrainingIndex::pair_key(f, t));
  }
  return idx;
}

MmptDatabase make_db(const std::vector<std::tuple<std::string, std::string, int, std::string>>& rows) {
  MmptDatabase db;
  for (const auto& [from, to, count, split] : rows) {
    MmptRecord r;
    r.from_variable = parse_fragment(from);
    r.to_variable = parse_fragment(to);
    r.count = count;
    r.split = split;
    db.records.push_back(std::move(r));
  }
  db.rebuild_index();
  return db;
}

// ---- independent eigensolver oracle (cyclic Jacobi on the full matrix) ----

struct EigenOracle {
  std::vector<double> values;                // descending
  std::vector<std::vector<double>> vectors;  // vectors[k] pairs with values[k]
};

EigenOracle jacobi_eigen(std::vector<std::vector<double>> a) {
  const int d = static_cast<int>(a.size());
  std::vector<std::vector<double>> v(d, std::vector<double>(d, 0.0));
  for (int i = 0; i < d; ++i) v[i][i] = 1.0;
  double scale = 0.0;
  for (int p = 0; p < d; ++p)
    for (int q = 0; q < d; ++q) scale += a[p][q] * a[p][q];
  for (int sweep = 0; sweep < 200; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) off += a[p][q] * a[p][q];
    if (off <= scale * 1e-30) break;
    for (int p = 0; p < d; ++p) {
      for (int q = p + 1; q < d; ++q) {
        if (a[p][q] == 0.0) continue;
        double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int k = 0; k < d; ++k) {
          double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < d; ++k) {
          double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < d; ++k) {
          double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<int> order(d);
  for (int i = 0; i < d; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int x, int y) { return a[x][x] > a[y][y]; });
  EigenOracle out;
  for (int idx : order) {
    out.values.push_back(a[idx][idx]);
    std::vector<double> col(d);
    for (int k = 0; k < d; ++k) col[k] = v[k][idx];
    out.vectors.push_back(std::move(col));
  }
  return out;
}

std::vector<std::vector<double>> center(const std::vector<std::vector<double>>& rows) {
  const size_t n = rows.size(), d = rows[0].size();
  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows)
    for (size_t j = 0; j < d; ++j) mean[j] += r[j];
  for (double& m : mean) m /= static_cast<double>(n);
  auto c = rows;
  for (auto& r : c)
    for (size_t j = 0; j < d; ++j) r[j] -= mean[j];
  return c;
}

EigenOracle oracle_pca(const std::vector<std::vector<double>>& rows) {
  auto c = center(rows);
  const size_t n = c.size(), d = c[0].size();
  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
  for (const auto& r : c)
    for (size_t i = 0; i < d; ++i)
      for (size_t j = 0; j < d; ++j) cov[i][j] += r[i] * r[j];
  for (auto& row : cov)
    for (double& x : row) x /= static_cast<double>(n);
  return jacobi_eigen(cov);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Compares projections against the oracle after fixing each component's
// arbitrary sign by its alignment with the computed component.
void check_against_oracle(const PcaResult& res, const std::vector<std::vector<double>>& rows,
                          double coord_tol) {
  auto oracle = oracle_pca(rows);
  auto c = center(rows);
  const double scale = std::max(1.0, oracle.values[0]);
  CHECK(std::abs(res.eigenvalues[0] - oracle.values[0]) <= 1e-9 * scale);
  CHECK(std::abs(res.eigenvalues[1] - oracle.values[1]) <= 1e-9 * scale);
  for (int k = 0; k < 2; ++k) {
    const auto& comp = k == 0 ? res.component1 : res.component2;
    double sign = dot(comp, oracle.vectors[k]) >= 0 ? 1.0 : -1.0;
    // component alignment (only meaningful when the eigengap is healthy)
    double gap = (oracle.values[k] -
                  (k + 1 < static_cast<int>(oracle.values.size()) ? oracle.values[k + 1] : 0.0)) /
                 std::max(oracle.values[0], 1e-300);
    if (gap > 0.02) {
      CHECK(std::abs(dot(comp, oracle.vectors[k])) > 1.0 - 1e-6);
      for (size_t i = 0; i < rows.size(); ++i) {
        double expect = sign * dot(c[i], oracle.vectors[k]);
        CHECK(std::abs(res.coords[i][k] - expect) <= coord_tol);
      }
    }
  }
}

void check_orthonormal(const PcaResult& res) {
  CHECK(std::abs(dot(res.component1, res.component1) - 1.0) <= 1e-9);
  CHECK(std::abs(dot(res.component2, res.component2) - 1.0) <= 1e-9);
  CHECK(std::abs(dot(res.component1, res.component2)) <= 1e-9);
}

std::string data_path(const char* name) {
  return std::string(MMPT_TEST_DATA_DIR) + "/" + name;
}

}  // namespace

TEST_CASE("validity counts parses and attachment match") {
  auto inputs = parse_all({"C[*:1]", "C([*:1])[*:2]"});
  std::vector<std::vector<std::string>> outs = {
      {"CC[*:1]", "C(", "C([*:1])[*:2]"},  // valid, unparsable, wrong attachment count
      {"C([*:1])[*:2]", "CC[*:1]"}};       // valid, wrong attachment count
  auto v = compute_validity(inputs, outs);
  CHECK(v.valid == 2);
  CHECK(v.total == 5);
  CHECK(v.fraction == 2.0 / 5.0);
  CHECK_FALSE(v.zero_denominator);

  auto empty = compute_validity(inputs, {{}, {}});
  CHECK(empty.zero_denominator);
  CHECK(empty.fraction == 0.0);
  CHECK(empty.total == 0);

  CHECK_THROWS_AS(compute_validity(inputs, {{}}), std::invalid_argument);
}

TEST_CASE("novelty target level vs pair level") {
  auto inputs = parse_all({"N[*:1]"});
  std::vector<std::vector<std::string>> outs = {{"CC[*:1]", "NO[*:1]", "bad("}};
  // CC[*:1] was trained, but only as a continuation of a *different* input.
  auto idx = index_from_pairs({{"C[*:1]", "CC[*:1]"}});

  auto target_level = compute_novelty(inputs, outs, idx, false);
  CHECK(target_level.valid == 2);
  CHECK(target_level.total == 3);
  CHECK(target_level.novel_valid == 1);  // NO[*:1] only
  CHECK(target_level.novel_over_valid == 1.0 / 2.0);
  CHECK(target_level.novel_over_all == 1.0 / 3.0);
  CHECK_FALSE(target_level.pair_level);

  auto pair_level = compute_novelty(inputs, outs, idx, true);
  CHECK(pair_level.novel_valid == 2);  // the (N→CC) pair was never trained
  CHECK(pair_level.pair_level);

  auto none = compute_novelty(inputs, {{"(("}}, idx);
  CHECK(none.zero_denominator);
  CHECK(none.novel_over_valid == 0.0);
}

TEST_CASE("recall strata and per-input identity") {
  auto inputs = parse_all({"N[*:1]"});
  std::vector<std::vector<std::string>> outs = {{"NN[*:1]", "NO[*:1]"}};
  std::vector<std::vector<std::string>> gt = {{"NN[*:1]", "NO[*:1]", "S[*:1]"}};
  auto idx = index_from_pairs({{"N[*:1]", "NN[*:1]"}});

  auto r = compute_recall(inputs, outs, gt, idx);
  CHECK(r.inputs_evaluated == 1);
  CHECK(r.gt_in == 1);
  CHECK(r.gt_in_recovered == 1);
  CHECK(r.gt_out == 2);
  CHECK(r.gt_out_recovered == 1);
  CHECK(r.recall_i == 1.0);
  CHECK(r.recall_o == 0.5);
  CHECK(r.has_recall_i);
  CHECK(r.has_recall_o);
  // per-input identity: recall = (|GTi|·ri + |GTo|·ro) / |GT|
  CHECK(r.recall == (1.0 * r.recall_i + 2.0 * r.recall_o) / 3.0);
  // micro identities
  CHECK(r.gt_total == r.gt_in + r.gt_out);
  CHECK(r.gt_recovered == r.gt_in_recovered + r.gt_out_recovered);
  CHECK(r.micro_recall == 2.0 / 3.0);
}

TEST_CASE("recall skips empty ground truth and dedups entries") {
  auto inputs = parse_all({"C[*:1]", "N[*:1]"});
  std::vector<std::vector<std::string>> outs = {{"CC[*:1]"}, {"NN[*:1]"}};
  // duplicate rows and a non-canonical spelling of the same target
  std::vector<std::vector<std::string>> gt = {{"CC[*:1]", "C(C)[*:1]", "CC[*:1]"}, {}};
  auto idx = index_from_pairs({});

  auto r = compute_recall(inputs, outs, gt, idx);
  CHECK(r.inputs_evaluated == 1);
  CHECK(r.gt_total == 1);
  CHECK(r.gt_recovered == 1);
  CHECK(r.recall == 1.0);
  CHECK_FALSE(r.has_recall_i);  // nothing in the train stratum anywhere
  CHECK(r.has_recall_o);

  auto nothing = compute_recall(inputs, outs, {{}, {}}, idx);
  CHECK(nothing.inputs_evaluated == 0);
  CHECK(nothing.recall == 0.0);
  CHECK_FALSE(nothing.has_recall_i);
  CHECK_FALSE(nothing.has_recall_o);
}

TEST_CASE("training index from db honors split tags") {
  auto tagged = make_db({{"C[*:1]", "CC[*:1]", 1, "train"},
                         {"C[*:1]", "CO[*:1]", 1, "test"},
                         {"N[*:1]", "NN[*:1]", 2, "train"}});
  auto idx = TrainingIndex::from_db(tagged);
  CHECK(idx.targets.size() == 2);
  CHECK(idx.targets.count("CC[*:1]") == 1);
  CHECK(idx.targets.count("CO[*:1]") == 0);
  CHECK(idx.pairs.count(TrainingIndex::pair_key("N[*:1]", "NN[*:1]")) == 1);

  auto untagged = make_db({{"C[*:1]", "CC[*:1]", 1, ""}, {"C[*:1]", "CO[*:1]", 1, ""}});
  auto all = TrainingIndex::from_db(untagged);
  CHECK(all.targets.size() == 2);
}

TEST_CASE("generation cap limits scored outputs and is recorded") {
  auto inputs = parse_all({"C[*:1]"});
  std::vector<std::vector<std::string>> outs = {{"CC[*:1]", "C(", "CO[*:1]"}};
  std::vector<std::vector<std::string>> gt = {{"CO[*:1]"}};
  auto idx = index_from_pairs({});

  auto capped = evaluate_generation(inputs, outs, gt, idx, false, 2);
  CHECK(capped.generation_cap == 2);
  CHECK(capped.validity.total == 2);
  CHECK(capped.validity.valid == 1);
  CHECK(capped.recall.gt_recovered == 0);  // CO[*:1] fell past the cap

  auto uncapped = evaluate_generation(inputs, outs, gt, idx, false, 0);
  CHECK(uncapped.generation_cap == 0);
  CHECK(uncapped.validity.total == 3);
  CHECK(uncapped.recall.gt_recovered == 1);

  CHECK_THROWS_AS(evaluate_generation(inputs, outs, gt, idx, false, -1), std::invalid_argument);
}

TEST_CASE("metrics golden fixture reproduces hand-computed values") {
  std::ifstream in(data_path("metrics_golden.json"));
  REQUIRE(in.good());
  auto j = nlohmann::json::parse(in);

  std::vector<Fragment> inputs;
  for (const auto& s : j["inputs"]) {
    auto f = parse_fragment(s.get<std::string>());
    CHECK(f.canonical() == s.get<std::string>());  // fixture strings are canonical
    inputs.push_back(std::move(f));
  }
  std::vector<std::vector<std::string>> outs, gt;
  for (const auto& arr : j["outputs"]) outs.push_back(arr.get<std::vector<std::string>>());
  for (const auto& arr : j["ground_truth"]) {
    auto v = arr.get<std::vector<std::string>>();
    for (const auto& s : v) CHECK(parse_fragment(s).canonical() == s);
    gt.push_back(std::move(v));
  }
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& arr : j["train_pairs"]) {
    auto from = arr[0].get<std::string>(), to = arr[1].get<std::string>();
    CHECK(parse_fragment(from).canonical() == from);
    CHECK(parse_fragment(to).canonical() == to);
    pairs.emplace_back(from, to);
  }
  auto idx = index_from_pairs(pairs);

  auto report = evaluate_generation(inputs, outs, gt, idx);
  const auto& e = j["expected"];

  CHECK(report.validity.fraction == e["validity"]["fraction"].get<double>());
  CHECK(report.validity.valid == e["validity"]["valid"].get<long long>());
  CHECK(report.validity.total == e["validity"]["total"].get<long long>());

  CHECK(report.novelty.novel_over_valid == e["novelty"]["novel_over_valid"].get<double>());
  CHECK(report.novelty.novel_over_all == e["novelty"]["novel_over_all"].get<double>());
  CHECK(report.novelty.novel_valid == e["novelty"]["novel_valid"].get<long long>());
  CHECK(report.novelty.valid == e["novelty"]["valid"].get<long long>());
  CHECK(report.novelty.total == e["novelty"]["total"].get<long long>());

  const auto& er = e["recall"];
  CHECK(report.recall.recall == er["macro"]["recall"].get<double>());
  CHECK(report.recall.recall_i == er["macro"]["recall_i"].get<double>());
  CHECK(report.recall.recall_o == er["macro"]["recall_o"].get<double>());
  CHECK(report.recall.micro_recall == er["micro"]["recall"].get<double>());
  CHECK(report.recall.micro_recall_i == er["micro"]["recall_i"].get<double>());
  CHECK(report.recall.micro_recall_o == er["micro"]["recall_o"].get<double>());
  CHECK(report.recall.gt_total == er["counts"]["gt_total"].get<long long>());
  CHECK(report.recall.gt_recovered == er["counts"]["gt_recovered"].get<long long>());
  CHECK(report.recall.gt_in == er["counts"]["gt_in"].get<long long>());
  CHECK(report.recall.gt_in_recovered == er["counts"]["gt_in_recovered"].get<long long>());
  CHECK(report.recall.gt_out == er["counts"]["gt_out"].get<long long>());
  CHECK(report.recall.gt_out_recovered == er["counts"]["gt_out_recovered"].get<long long>());
  CHECK(report.recall.inputs_evaluated == er["counts"]["inputs_evaluated"].get<int>());

  // in-code rational cross-check, mirroring the implementation's sum order
  CHECK(report.validity.fraction == 5.0 / 7.0);
  CHECK(report.novelty.novel_over_valid == 2.0 / 5.0);
  CHECK(report.novelty.novel_over_all == 2.0 / 7.0);
  CHECK(report.recall.recall == (1.0 + 2.0 / 3.0 + 0.0) / 3.0);
  CHECK(report.recall.recall_i == (1.0 + 1.0 + 0.0) / 3.0);
  CHECK(report.recall.recall_o == (1.0 + 0.5) / 2.0);
  CHECK(report.recall.micro_recall == 4.0 / 6.0);
}

TEST_CASE("metric report json carries config hash and null strata") {
  auto inputs = parse_all({"C[*:1]"});
  std::vector<std::vector<std::string>> outs = {{"CC[*:1]"}};
  std::vector<std::vector<std::string>> gt = {{"CC[*:1]"}};
  auto report = evaluate_generation(inputs, outs, gt, index_from_pairs({}));

  std::ostringstream os;
  write_metric_report_json(os, report, "deadbeef00000000");
  auto j = nlohmann::json::parse(os.str());
  CHECK(j["config_hash"] == "deadbeef00000000");
  CHECK(j["generation_cap"] == 1000);
  CHECK(j["validity"]["fraction"] == 1.0);
  CHECK(j["recall"]["macro"]["recall_i"].is_null());  // no train stratum anywhere
  CHECK(j["recall"]["micro"]["recall_i"].is_null());
  CHECK(j["recall"]["macro"]["recall_o"] == 1.0);
  CHECK(j["recall"]["counts"]["gt_total"] == 1);

  // with a train pair the strata become numeric
  auto idx = index_from_pairs({{"C[*:1]", "CC[*:1]"}});
  auto report2 = evaluate_generation(inputs, outs, gt, idx);
  std::ostringstream os2;
  write_metric_report_json(os2, report2, "deadbeef00000000");
  auto j2 = nlohmann::json::parse(os2.str());
  CHECK(j2["recall"]["macro"]["recall_i"] == 1.0);
  CHECK(j2["recall"]["macro"]["recall_o"].is_null());
}

TEST_CASE("beam validity sweep memorizing scorer is perfectly valid") {
  auto db = make_db({{"C[*:1]", "CC[*:1]", 3, ""},
                     {"C[*:1]", "CO[*:1]", 2, ""},
                     {"N[*:1]", "NN[*:1]", 2, ""},
                     {"N[*:1]", "NO[*:1]", 1, ""},
                     {"O[*:1]", "CC[*:1]", 1, ""}});
  auto scorer = ReferenceScorer::train(db, 3, 0.01, 1.0);
  auto inputs = parse_all({"C[*:1]", "N[*:1]"});

  auto rows = beam_validity_sweep(scorer, inputs, {1, 2, 5});
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].beam == 1);
  CHECK(rows[1].beam == 2);
  CHECK(rows[2].beam == 5);
  for (const auto& r : rows) CHECK(r.avg_validity == 1.0);  // memorized targets only
}

TEST_CASE("beam validity sweep is bit-exact across runs") {
  auto db = make_db({{"C[*:1]", "CC[*:1]", 3, ""},
                     {"C[*:1]", "CO[*:1]", 2, ""},
                     {"N[*:1]", "NN[*:1]", 2, ""},
                     {"O[*:1]", "CCO[*:1]", 1, ""}});
  auto scorer = ReferenceScorer::train(db, 3, 0.01, 0.9);
  auto inputs = parse_all({"C[*:1]", "N[*:1]", "O[*:1]"});
  std::vector<int> beams = {1, 3, 7};

  auto a = beam_validity_sweep(scorer, inputs, beams);
  auto b = beam_validity_sweep(scorer, inputs, beams);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].beam == b[i].beam);
    CHECK(a[i].avg_validity == b[i].avg_validity);  // bitwise
    CHECK(a[i].avg_validity >= 0.0);
    CHECK(a[i].avg_validity <= 1.0);
  }

  std::ostringstream os1, os2;
  write_sweep_csv(os1, a, "cafe");
  write_sweep_csv(os2, b, "cafe");
  CHECK(os1.str() == os2.str());
  CHECK(os1.str().rfind("# config_hash=cafe\nbeam,avg_validity\n", 0) == 0);

  CHECK_THROWS_AS(beam_validity_sweep(scorer, {}, beams), std::invalid_argument);
  CHECK_THROWS_AS(beam_validity_sweep(scorer, inputs, {0}), std::invalid_argument);
}

TEST_CASE("pca recovers a planted two-plane exactly") {
  // rows = a·u + b·w + mean, with var(a)=5, var(b)=1, a ⟂ b
  std::vector<double> u = {0.6, 0.8, 0.0, 0.0, 0.0};
  std::vector<double> w = {0.0, 0.0, 1.0, 0.0, 0.0};
  std::vector<double> a = {3, -3, 1, -1}, b = {1, 1, -1, -1};
  std::vector<std::vector<double>> rows;
  for (size_t i = 0; i < a.size(); ++i) {
    std::vector<double> r(5, 0.25);  // constant offset removed by centering
    for (size_t j = 0; j < 5; ++j) r[j] += a[i] * u[j] + b[i] * w[j];
    rows.push_back(std::move(r));
  }
  auto res = pca_top2(rows, {"p", "q", "r", "s"});

  CHECK(std::abs(res.eigenvalues[0] - 5.0) <= 1e-9);
  CHECK(std::abs(res.eigenvalues[1] - 1.0) <= 1e-9);
  // rank-2 data: the two components explain everything
  CHECK(std::abs(res.explained[0] + res.explained[1] - 1.0) <= 1e-9);
  CHECK(std::abs(res.total_variance - 6.0) <= 1e-9);
  check_orthonormal(res);
  // sign convention puts the largest-magnitude loading positive, so the
  // components are +u and +w and the coords are exactly (a_i, b_i)
  for (size_t j = 0; j < 5; ++j) {
    CHECK(std::abs(res.component1[j] - u[j]) <= 1e-5);
    CHECK(std::abs(res.component2[j] - w[j]) <= 1e-5);
  }
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(std::abs(res.coords[i][0] - a[i]) <= 1e-5);
    CHECK(std::abs(res.coords[i][1] - b[i]) <= 1e-5);
  }
  check_against_oracle(res, rows, 1e-5);
}

TEST_CASE("pca agrees with the jacobi oracle on random matrices") {
  std::mt19937_64 rng(20260814);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 8; ++trial) {
    const size_t n = 6 + static_cast<size_t>(rng() % 20);
    const size_t d = 3 + static_cast<size_t>(rng() % 6);
    std::vector<std::vector<double>> rows(n, std::vector<double>(d));
    for (auto& r : rows)
      for (size_t j = 0; j < d; ++j) r[j] = gauss(rng) * static_cast<double>(j + 1);
    auto res = pca_top2(rows, std::vector<std::string>(n, "x"));
    check_orthonormal(res);
    CHECK(res.eigenvalues[0] >= res.eigenvalues[1]);
    CHECK(res.explained[0] <= 1.0 + 1e-9);
    check_against_oracle(res, rows, 1e-5 * (std::abs(res.eigenvalues[0]) + 1.0));
  }
}

TEST_CASE("pca mirrored data gives identical components and negated coords") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> rows(9, std::vector<double>(4));
  for (auto& r : rows)
    for (size_t j = 0; j < 4; ++j) r[j] = gauss(rng) * static_cast<double>(j + 1);
  auto mirrored = rows;
  for (auto& r : mirrored)
    for (double& x : r) x = -x;

  auto res1 = pca_top2(rows, std::vector<std::string>(9, "x"));
  auto res2 = pca_top2(mirrored, std::vector<std::string>(9, "x"));
  for (size_t j = 0; j < 4; ++j) {
    CHECK(res1.component1[j] == res2.component1[j]);  // covariance is identical
    CHECK(res1.component2[j] == res2.component2[j]);
  }
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(res1.coords[i][0] == -res2.coords[i][0]);
    CHECK(res1.coords[i][1] == -res2.coords[i][1]);
  }
}

TEST_CASE("pca rank-1 data yields zero second eigenvalue and orthogonal axis") {
  std::vector<double> u = {0.6, 0.0, 0.8};
  std::vector<std::vector<double>> rows;
  for (double t : {2.0, -1.0, 3.0, -4.0}) {
    std::vector<double> r(3);
    for (size_t j = 0; j < 3; ++j) r[j] = t * u[j] + 1.0;
    rows.push_back(std::move(r));
  }
  auto res = pca_top2(rows, {"a", "b", "c", "d"});
  CHECK(res.eigenvalues[1] == 0.0);
  CHECK(res.explained[1] == 0.0);
  check_orthonormal(res);
  for (size_t i = 0; i < rows.size(); ++i) CHECK(std::abs(res.coords[i][1]) <= 1e-9);
}

TEST_CASE("pca degenerate and malformed inputs") {
  std::vector<std::vector<double>> same(5, std::vector<double>(4, 2.5));
  CHECK_THROWS_AS(pca_top2(same, std::vector<std::string>(5, "x")), DegenerateVariance);

  std::vector<std::vector<double>> ok(3, std::vector<double>(2, 0.0));
  ok[0][0] = 1.0;
  CHECK_THROWS_AS(pca_top2(ok, {"a", "b"}), std::invalid_argument);          // label mismatch
  CHECK_THROWS_AS(pca_top2({ok[0], ok[1]}, {"a", "b"}), std::invalid_argument);  // < 3 rows
  std::vector<std::vector<double>> ragged = {{1.0, 2.0}, {1.0}, {0.0, 0.0}};
  CHECK_THROWS_AS(pca_top2(ragged, {"a", "b", "c"}), std::invalid_argument);
  std::vector<std::vector<double>> thin(4, std::vector<double>(1, 0.0));
  thin[0][0] = 1.0;
  CHECK_THROWS_AS(pca_top2(thin, std::vector<std::string>(4, "x")), std::invalid_argument);
}

TEST_CASE("pca coverage on fingerprints matches the gram-matrix oracle") {
  std::vector<std::pair<std::string, std::vector<Fragment>>> sets = {
      {"train", parse_all({"CC[*:1]", "CCO[*:1]"})},
      {"gen", parse_all({"NN[*:1]", "c1ccccc1[*:1]"})}};
  FpParams fp;
  auto res = pca_coverage(sets, fp);
  REQUIRE(res.labels.size() == 4);
  CHECK(res.labels[0] == "train");
  CHECK(res.labels[1] == "train");
  CHECK(res.labels[2] == "gen");
  CHECK(res.labels[3] == "gen");
  check_orthonormal(res);

  // independent oracle via the 4×4 Gram matrix of the centered fingerprints:
  // coords_k = sqrt(n·μ_k)·φ_k up to sign
  std::vector<std::vector<double>> rows;
  for (const auto& [label, frags] : sets) {
    for (const auto& f : frags) {
      auto v = morgan_fingerprint(f, fp.radius, fp.nbits);
      std::vector<double> r(static_cast<size_t>(fp.nbits), 0.0);
      for (int bit = 0; bit < fp.nbits; ++bit) r[static_cast<size_t>(bit)] = v.test(bit) ? 1.0 : 0.0;
      rows.push_back(std::move(r));
    }
  }
  auto c = center(rows);
  const size_t n = c.size();
  std::vector<std::vector<double>> gram(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) gram[i][j] = dot(c[i], c[j]) / static_cast<double>(n);
  auto oracle = jacobi_eigen(gram);
  REQUIRE(oracle.values[0] > 0.0);
  // precondition for comparing individual components: a healthy eigengap
  REQUIRE((oracle.values[0] - oracle.values[1]) / oracle.values[0] > 0.05);
  REQUIRE((oracle.values[1] - oracle.values[2]) / oracle.values[0] > 0.05);
  for (int k = 0; k < 2; ++k) {
    CHECK(std::abs(res.eigenvalues[k] - oracle.values[k]) <= 1e-9 * oracle.values[0]);
    std::vector<double> expect(n);
    double s = std::sqrt(static_cast<double>(n) * oracle.values[k]);
    for (size_t i = 0; i < n; ++i) expect[i] = s * oracle.vectors[k][i];
    double sign = 0.0;
    for (size_t i = 0; i < n && sign == 0.0; ++i) {
      if (std::abs(expect[i]) > 1e-9) sign = expect[i] * res.coords[i][k] >= 0 ? 1.0 : -1.0;
    }
    for (size_t i = 0; i < n; ++i)
      CHECK(std::abs(res.coords[i][k] - sign * expect[i]) <= 1e-5 * (s + 1.0));
  }

  CHECK_THROWS_AS(pca_coverage({{"a", parse_all({"CC[*:1]", "CO[*:1]"})}}, fp),
                  std::invalid_argument);  // fewer than 3 fragments
}

TEST_CASE("pca csv output is deterministic") {
  std::vector<std::pair<std::string, std::vector<Fragment>>> sets = {
      {"train", parse_all({"CC[*:1]", "CCO[*:1]", "CO[*:1]"})},
      {"gen", parse_all({"NN[*:1]", "NO[*:1]"})}};
  auto r1 = pca_coverage(sets);
  auto r2 = pca_coverage(sets);
  std::ostringstream o1, o2;
  write_pca_csv(o1, r1, "abc123");
  write_pca_csv(o2, r2, "abc123");
  CHECK(o1.str() == o2.str());
  CHECK(o1.str().rfind("# config_hash=abc123\nlabel,x,y\n", 0) == 0);
  // one row per fragment plus the two header lines
  int lines = 0;
  for (char ch : o1.str())
    if (ch == '\n') ++lines;
  CHECK(lines == 7);
}
