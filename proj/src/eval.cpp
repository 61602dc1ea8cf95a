#include "sevgrade/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>
#include "json.hpp"

#include "sevgrade/error.hpp"

namespace sevgrade {

double auroc(std::span<const double> scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw Error(ErrorKind::geometry, "scores and labels differ in length");
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw Error(ErrorKind::undefined_metric, "AUROC needs both classes present");
  const auto ranks = mid_ranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i)
    if (labels[i]) rank_sum += ranks[i];
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

std::vector<double> mid_ranks(std::span<const double> values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> scores, std::span<const double> grades) {
  if (scores.size() != grades.size()) throw Error(ErrorKind::geometry, "scores and grades differ in length");
  if (scores.size() < 3) throw Error(ErrorKind::undefined_metric, "Spearman correlation needs n >= 3");
  const auto ra = mid_ranks(scores), rb = mid_ranks(grades);
  const double n = static_cast<double>(ra.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0 || sbb == 0) throw Error(ErrorKind::undefined_metric, "Spearman correlation of a constant ranking");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double spearman_p_value(double rho, std::size_t n) {
  if (n < 3) throw Error(ErrorKind::undefined_metric, "p-value needs n >= 3");
  if (rho >= 1.0) return 0.0;
  if (rho <= -1.0) return 1.0;
  const double dof = static_cast<double>(n - 2);
  const double t = rho * std::sqrt(dof / (1.0 - rho * rho));
  boost::math::students_t dist(dof);
  return boost::math::cdf(boost::math::complement(dist, t));
}

namespace {

std::optional<double> column_value(const ScoreReport& r, const std::string& column) {
  if (column == "s_ssl") return r.s_ssl;
  if (column == "s_sev") return r.s_sev;
  if (column == "s_oa") return r.s_oa;
  if (column == "s_comb") return r.s_comb;
  throw Error(ErrorKind::config, "unknown score column '" + column + "'");
}

}  // namespace

MetricsReport evaluate_run(const ScoreFile& scores, const Manifest& manifest, const EvalTask& task) {
  std::set<std::string> seen;
  std::vector<std::string> unresolved, duplicates;
  for (const auto& r : scores.reports) {
    if (!seen.insert(r.sample_id).second) duplicates.push_back(r.sample_id);
    if (!manifest.find(r.sample_id)) unresolved.push_back(r.sample_id);
  }
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += " " + x;
    return s;
  };
  if (!duplicates.empty()) throw Error(ErrorKind::parse, "duplicate sample ids in score file:" + join(duplicates));
  if (!unresolved.empty()) throw Error(ErrorKind::config, "score ids missing from manifest:" + join(unresolved));

  MetricsReport m;
  m.score_column = task.score_column;
  std::vector<double> kl_scores, kl_grades, o_scores;
  std::vector<bool> kl_pos, gt3_pos, o_pos;
  for (const auto& r : scores.reports) {
    const auto v = column_value(r, task.score_column);
    if (!v) continue;
    ++m.n;
    const Sample& s = *manifest.find(r.sample_id);
    if (s.kl_grade) {
      kl_scores.push_back(*v);
      kl_grades.push_back(*s.kl_grade);
      kl_pos.push_back(*s.kl_grade >= 2);
      gt3_pos.push_back(*s.kl_grade >= task.severe_min_grade);
    }
    try {
      const bool o = diagnose_oarsi(s);
      o_scores.push_back(*v);
      o_pos.push_back(o);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::unresolvable_label && e.kind() != ErrorKind::config) throw;
      ++m.oarsi_unresolved;
    }
  }
  auto count = [](const std::vector<bool>& v) {
    ClassCounts c;
    c.positive = static_cast<std::size_t>(std::count(v.begin(), v.end(), true));
    c.negative = v.size() - c.positive;
    return c;
  };
  m.kl = count(kl_pos);
  m.kl_gt3 = count(gt3_pos);
  m.oarsi = count(o_pos);

  auto attempt = [&](const char* name, std::optional<double>& slot, auto&& fn) {
    try {
      slot = fn();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::undefined_metric || !task.allow_undefined) {
        throw Error(e.kind(), std::string(name) + ": " + e.what());
      }
      m.undefined[name] = e.what();
    }
  };
  attempt("auc_kl", m.auc_kl, [&] { return auroc(kl_scores, kl_pos); });
  attempt("auc_oarsi", m.auc_oarsi, [&] { return auroc(o_scores, o_pos); });
  attempt("auc_kl_gt3", m.auc_kl_gt3, [&] { return auroc(kl_scores, gt3_pos); });
  attempt("src_kl", m.src_kl, [&] { return spearman(kl_scores, kl_grades); });
  if (m.src_kl) m.src_p_value = spearman_p_value(*m.src_kl, kl_scores.size());
  return m;
}

std::vector<MetricsReport> evaluate_columns(const ScoreFile& scores, const Manifest& manifest, EvalTask task) {
  std::vector<MetricsReport> out;
  for (const char* column : {"s_ssl", "s_sev", "s_oa", "s_comb"}) {
    const bool present = std::any_of(scores.reports.begin(), scores.reports.end(),
                                     [&](const ScoreReport& r) { return column_value(r, column).has_value(); });
    if (!present) continue;
    task.score_column = column;
    out.push_back(evaluate_run(scores, manifest, task));
  }
  return out;
}

SeedSummary summarise(const std::vector<MetricsReport>& per_seed) {
  SeedSummary s;
  if (!per_seed.empty()) s.score_column = per_seed.front().score_column;
  auto agg = [&](auto member) -> std::optional<MeanStd> {
    std::vector<double> v;
    for (const auto& r : per_seed)
      if ((r.*member)) v.push_back(*(r.*member));
    if (v.empty()) return std::nullopt;
    MeanStd ms;
    ms.count = v.size();
    ms.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0;
      for (double x : v) ss += (x - ms.mean) * (x - ms.mean);
      ms.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return ms;
  };
  s.auc_kl = agg(&MetricsReport::auc_kl);
  s.auc_oarsi = agg(&MetricsReport::auc_oarsi);
  s.auc_kl_gt3 = agg(&MetricsReport::auc_kl_gt3);
  s.src_kl = agg(&MetricsReport::src_kl);
  return s;
}

namespace {

std::string cell(const std::optional<MeanStd>& v, double scale, int precision) {
  if (!v) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f ± %.*f", precision, v->mean * scale, precision, v->std * scale);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  // "±" is two bytes but one column
  const std::size_t shown = s.size() - (s.find("±") != std::string::npos ? 1 : 0);
  return s + std::string(width > shown ? width - shown : 1, ' ');
}

}  // namespace

std::string format_table(const std::vector<std::pair<std::string, SeedSummary>>& rows) {
  std::size_t label_w = 8;
  for (const auto& [label, _] : rows) label_w = std::max(label_w, label.size() + 2);
  std::ostringstream os;
  os << pad("method", label_w) << pad("AUC_KL", 16) << pad("AUC_O", 16) << pad("AUC_KL_g>3", 16) << "SRC_KL\n";
  for (const auto& [label, s] : rows) {
    os << pad(label, label_w) << pad(cell(s.auc_kl, 100, 1), 16) << pad(cell(s.auc_oarsi, 100, 1), 16)
       << pad(cell(s.auc_kl_gt3, 100, 1), 16) << cell(s.src_kl, 1, 3) << '\n';
  }
  return os.str();
}

namespace {

nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json to_json(const MetricsReport& m) {
  nlohmann::ordered_json j;
  j["score_column"] = m.score_column;
  j["n"] = m.n;
  j["auc_kl"] = opt(m.auc_kl);
  j["auc_oarsi"] = opt(m.auc_oarsi);
  j["auc_kl_gt3"] = opt(m.auc_kl_gt3);
  j["src_kl"] = opt(m.src_kl);
  j["src_p_value"] = opt(m.src_p_value);
  j["counts"] = {{"kl", {{"positive", m.kl.positive}, {"negative", m.kl.negative}}},
                 {"oarsi", {{"positive", m.oarsi.positive}, {"negative", m.oarsi.negative}}},
                 {"kl_gt3", {{"positive", m.kl_gt3.positive}, {"negative", m.kl_gt3.negative}}},
                 {"oarsi_unresolved", m.oarsi_unresolved}};
  nlohmann::ordered_json undefined = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m.undefined) undefined[k] = v;
  j["undefined"] = undefined;
  return j;
}

nlohmann::ordered_json to_json(const std::optional<MeanStd>& v) {
  if (!v) return nullptr;
  return {{"mean", v->mean}, {"std", v->std}, {"count", v->count}};
}

}  // namespace

std::string metrics_json(const std::vector<std::pair<std::string, std::vector<MetricsReport>>>& per_row) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& [label, seeds] : per_row) {
    const auto s = summarise(seeds);
    nlohmann::ordered_json row;
    row["label"] = label;
    row["summary"] = {{"auc_kl", to_json(s.auc_kl)},
                      {"auc_oarsi", to_json(s.auc_oarsi)},
                      {"auc_kl_gt3", to_json(s.auc_kl_gt3)},
                      {"src_kl", to_json(s.src_kl)}};
    nlohmann::ordered_json per_seed = nlohmann::ordered_json::array();
    for (const auto& m : seeds) per_seed.push_back(to_json(m));
    row["per_seed"] = per_seed;
    rows.push_back(row);
  }
  return nlohmann::ordered_json{{"rows", rows}}.dump(2) + "\n";
}

}  // namespace sevgrade
