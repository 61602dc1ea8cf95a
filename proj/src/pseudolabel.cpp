#include "sevgrade/pseudolabel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "sevgrade/error.hpp"
#include "sevgrade/scoring.hpp"
#include "text_util.hpp"

namespace sevgrade {

std::string statement_hash(const std::string& statement) { return detail::hex64(detail::fnv1a(statement)); }

TableSimilarityProvider::TableSimilarityProvider(std::map<std::string, double> table, std::string id)
    : table_(std::move(table)), id_(std::move(id)) {}

TableSimilarityProvider TableSimilarityProvider::load(const std::filesystem::path& path) {
  std::map<std::string, double> table;
  std::size_t row = 0;
  bool header = false;
  const auto text = detail::read_text_file(path);
  for (auto line : detail::split_lines(text)) {
    ++row;
    if (detail::trim(line).empty() || line.front() == '#') continue;
    if (!header) {
      if (detail::trim(line) != "sample_id,similarity") throw ParseError(row, "expected header 'sample_id,similarity'");
      header = true;
      continue;
    }
    const auto f = detail::split_fields(line);
    if (f.size() != 2) throw ParseError(row, "expected 2 fields");
    const auto v = detail::parse_double(f[1]);
    if (!v || !std::isfinite(*v)) throw ParseError(row, "invalid similarity '" + std::string(f[1]) + "'");
    table[std::string(f[0])] = *v;
  }
  return TableSimilarityProvider(std::move(table), "table:" + path.filename().string());
}

double TableSimilarityProvider::similarity(const std::string& sample_id, const std::string&) {
  auto it = table_.find(sample_id);
  if (it == table_.end()) throw Error(ErrorKind::provider, "no similarity recorded for " + sample_id);
  return it->second;
}

CommandSimilarityProvider::CommandSimilarityProvider(std::string command, const Manifest& manifest)
    : command_(std::move(command)) {
  if (command_.empty()) throw Error(ErrorKind::config, "similarity command is empty");
  for (const auto& s : manifest.samples) paths_[s.id()] = manifest.image_path(s);
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

}  // namespace

double CommandSimilarityProvider::similarity(const std::string& sample_id, const std::string& statement) {
  auto it = paths_.find(sample_id);
  if (it == paths_.end()) throw Error(ErrorKind::provider, "no image path for " + sample_id);
  const std::string cmd = command_ + " " + shell_quote(it->second.string()) + " " + shell_quote(statement);
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw Error(ErrorKind::provider, "cannot start similarity command");
  std::string output;
  std::array<char, 256> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) output += buf.data();
  const int status = pclose(pipe);
  if (status != 0) throw Error(ErrorKind::provider, "similarity command failed for " + sample_id);
  // last non-empty line carries the value
  std::optional<double> v;
  for (auto line : detail::split_lines(output))
    if (!detail::trim(line).empty()) v = detail::parse_double(line);
  if (!v || !std::isfinite(*v)) throw Error(ErrorKind::provider, "similarity command printed no number for " + sample_id);
  return *v;
}

CachingSimilarityProvider::CachingSimilarityProvider(std::unique_ptr<SimilarityProvider> inner,
                                                     std::filesystem::path cache_path)
    : inner_(std::move(inner)), path_(std::move(cache_path)) {
  if (!std::filesystem::exists(path_)) return;
  std::size_t row = 0;
  const auto text = detail::read_text_file(path_);
  for (auto line : detail::split_lines(text)) {
    ++row;
    if (detail::trim(line).empty() || line.front() == '#') continue;
    const auto f = detail::split_fields(line);
    if (f.size() != 3) throw ParseError(row, "similarity cache rows need 3 fields");
    if (f[0] == "sample_id") continue;
    const auto v = detail::parse_double(f[2]);
    if (!v) throw ParseError(row, "invalid cached similarity");
    cache_[{std::string(f[0]), std::string(f[1])}] = *v;
  }
}

double CachingSimilarityProvider::similarity(const std::string& sample_id, const std::string& statement) {
  const auto key = std::make_pair(sample_id, statement_hash(statement));
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  const double v = inner_->similarity(sample_id, statement);
  std::lock_guard lock(mu_);
  cache_[key] = v;
  const bool fresh = !std::filesystem::exists(path_);
  if (!path_.parent_path().empty()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app);
  if (fresh) out << "sample_id,statement_hash,similarity\n";
  out << sample_id << ',' << key.second << ',' << detail::format_double(v) << '\n';
  if (!out) throw Error(ErrorKind::io, "cannot append to similarity cache " + path_.string());
  return v;
}

std::vector<std::string> pseudo_label_from_scores(const std::vector<std::string>& ids,
                                                  const std::vector<std::vector<double>>& scores,
                                                  std::span<const double> cd_max, double m) {
  if (ids.size() != scores.size()) throw Error(ErrorKind::geometry, "ids and score rows differ in length");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (vote(scores[i], cd_max, m).is_anomaly) out.push_back(ids[i]);
  return out;
}

void check_disjoint(const std::vector<std::string>& unlabelled, std::span<const TrainedStage> members) {
  std::set<std::string> train;
  for (const auto& s : members) train.insert(s.train_ids.begin(), s.train_ids.end());
  std::vector<std::string> overlap;
  for (const auto& id : unlabelled)
    if (train.count(id)) overlap.push_back(id);
  if (overlap.empty()) return;
  std::string msg = "unlabelled pool overlaps training ids:";
  for (const auto& id : overlap) msg += " " + id;
  throw Error(ErrorKind::leakage, msg);
}

std::vector<std::vector<double>> member_scores(const std::vector<std::string>& ids,
                                               std::span<const TrainedStage> members, const ImageStore& images) {
  std::vector<std::vector<double>> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    std::vector<double> row;
    for (const auto& s : members) row.push_back(member_score(images.get(id, s.encoder.config().input_side), s));
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<std::string> pseudo_label(const std::vector<std::string>& unlabelled,
                                      std::span<const TrainedStage> members, double m, const ImageStore& images) {
  if (members.empty()) throw Error(ErrorKind::config, "pseudo-labelling needs at least one member");
  check_disjoint(unlabelled, members);
  std::vector<double> cds;
  for (const auto& s : members) cds.push_back(s.cd_max);
  return pseudo_label_from_scores(unlabelled, member_scores(unlabelled, members, images), cds, m);
}

double balanced_margin(const std::vector<std::vector<double>>& scores, std::span<const double> cd_max,
                       std::size_t target_count) {
  if (scores.empty()) return 1.0;
  std::vector<double> ratio;
  for (const auto& row : scores) {
    if (row.size() != cd_max.size()) throw Error(ErrorKind::geometry, "score row does not match member count");
    double r = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < row.size(); ++k) {
      const double q = cd_max[k] > 0 ? row[k] / cd_max[k] : (row[k] > 0 ? std::numeric_limits<double>::infinity() : 0.0);
      r = std::min(r, q);
    }
    ratio.push_back(r);
  }
  std::sort(ratio.begin(), ratio.end(), std::greater<>());
  double m;
  if (target_count == 0) {
    m = std::nextafter(ratio.front(), std::numeric_limits<double>::infinity());
  } else if (target_count >= ratio.size()) {
    m = std::nextafter(ratio.back(), -std::numeric_limits<double>::infinity());
  } else {
    const double hi = ratio[target_count - 1], lo = ratio[target_count];
    m = std::isfinite(hi) ? 0.5 * (hi + lo) : std::nextafter(lo, std::numeric_limits<double>::infinity());
  }
  if (!std::isfinite(m)) m = std::numeric_limits<double>::max();
  return std::max(m, 1.0);
}

PseudoLabelSet denoise(const std::vector<std::string>& candidates, SimilarityProvider& provider,
                       const std::string& statement, const std::vector<std::string>& train_normals, double q) {
  if (train_normals.empty()) throw Error(ErrorKind::config, "denoising needs training normals");
  std::vector<double> ref;
  for (const auto& id : train_normals) ref.push_back(provider.similarity(id, statement));
  PseudoLabelSet set;
  set.statement = statement;
  set.provider_id = provider.provider_id();
  set.cutoff = nearest_rank_percentile(ref, q);
  for (const auto& id : candidates) {
    if (provider.similarity(id, statement) > *set.cutoff) set.rejected_by_denoise.push_back(id);
    else set.accepted.push_back(id);
  }
  if (set.accepted.empty() && !candidates.empty()) {
    spdlog::warn("denoising rejected all {} pseudo-anomaly candidates", candidates.size());
  }
  return set;
}

std::string format_pseudo_labels(const PseudoLabelSet& set) {
  std::ostringstream os;
  os << "# m=" << detail::format_double(set.m_used) << '\n';
  os << "# statement=" << set.statement << '\n';
  if (set.cutoff) os << "# cutoff=" << detail::format_double(*set.cutoff) << '\n';
  if (!set.provider_id.empty()) os << "# provider=" << set.provider_id << '\n';
  os << "image_ref,y,status\n";
  for (const auto& id : set.accepted) os << id << ",1,accepted\n";
  for (const auto& id : set.rejected_by_denoise) os << id << ",0,rejected_by_denoise\n";
  return os.str();
}

PseudoLabelSet parse_pseudo_labels(const std::string& text) {
  PseudoLabelSet set;
  bool header = false;
  std::size_t row = 0;
  for (auto line : detail::split_lines(text)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    if (line.front() == '#') {
      const auto body = detail::trim(line.substr(1));
      const auto eq = body.find('=');
      if (eq == std::string_view::npos) continue;
      const auto key = detail::trim(body.substr(0, eq));
      const std::string value(detail::trim(body.substr(eq + 1)));
      if (key == "m") {
        const auto v = detail::parse_double(value);
        if (!v) throw ParseError(row, "invalid m");
        set.m_used = *v;
      } else if (key == "statement") {
        set.statement = value;
      } else if (key == "cutoff") {
        set.cutoff = detail::parse_double(value);
        if (!set.cutoff) throw ParseError(row, "invalid cutoff");
      } else if (key == "provider") {
        set.provider_id = value;
      }
      continue;
    }
    if (!header) {
      if (detail::trim(line) != "image_ref,y,status") throw ParseError(row, "expected header 'image_ref,y,status'");
      header = true;
      continue;
    }
    const auto f = detail::split_fields(line);
    if (f.size() != 3) throw ParseError(row, "expected 3 fields");
    if (f[2] == "accepted") set.accepted.emplace_back(f[0]);
    else if (f[2] == "rejected_by_denoise") set.rejected_by_denoise.emplace_back(f[0]);
    else throw ParseError(row, "unknown status '" + std::string(f[2]) + "'");
  }
  if (!header) throw ParseError(row, "pseudo-label file has no header");
  return set;
}

void save_pseudo_labels(const std::filesystem::path& path, const PseudoLabelSet& set) {
  detail::write_text_atomic(path, format_pseudo_labels(set));
}

PseudoLabelSet load_pseudo_labels(const std::filesystem::path& path) {
  return parse_pseudo_labels(detail::read_text_file(path));
}

}  // namespace sevgrade
