#include "sevgrade/dataset.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "sevgrade/error.hpp"
#include "text_util.hpp"

namespace sevgrade {

using detail::parse_integer;
using detail::split_fields;
using detail::trim;

const char* to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

const char* to_string(KneeSide side) { return side == KneeSide::left ? "left" : "right"; }

Split parse_split(std::string_view text) {
  text = trim(text);
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw Error(ErrorKind::parse, "unknown split '" + std::string(text) + "'");
}

KneeSide parse_knee_side(std::string_view text) {
  text = trim(text);
  if (text == "left" || text == "L" || text == "l") return KneeSide::left;
  if (text == "right" || text == "R" || text == "r") return KneeSide::right;
  throw Error(ErrorKind::parse, "unknown knee side '" + std::string(text) + "'");
}

std::filesystem::path Manifest::image_path(const Sample& s) const {
  std::filesystem::path p(s.image_ref);
  if (p.is_absolute() || root.empty()) return p;
  return root / p;
}

std::vector<Sample> Manifest::split(Split which) const {
  std::vector<Sample> out;
  std::copy_if(samples.begin(), samples.end(), std::back_inserter(out),
               [&](const Sample& s) { return s.split == which; });
  return out;
}

const Sample* Manifest::find(std::string_view id) const {
  for (const auto& s : samples) {
    if (s.image_ref == id) return &s;
  }
  return nullptr;
}

namespace {

std::optional<int> parse_grade(std::string_view field, int max, std::size_t row,
                               const char* column) {
  if (field.empty()) return std::nullopt;
  auto v = parse_integer(field);
  if (!v) throw ParseError(row, std::string(column) + " is not an integer: '" + std::string(field) + "'");
  if (*v < 0 || *v > max) {
    throw ParseError(row, std::string(column) + " out of range 0.." + std::to_string(max) + ": " +
                              std::to_string(*v));
  }
  return static_cast<int>(*v);
}

void check_range(const std::optional<int>& v, int max, const Sample& s, const char* what) {
  if (v && (*v < 0 || *v > max)) {
    throw Error(ErrorKind::parse, s.image_ref + ": " + what + " out of range");
  }
}

}  // namespace

void validate_manifest(const Manifest& manifest) {
  std::set<std::string> refs;
  std::unordered_map<std::string, Split> patient_split;
  for (const auto& s : manifest.samples) {
    if (!refs.insert(s.image_ref).second) {
      throw Error(ErrorKind::parse, "duplicate image_ref " + s.image_ref);
    }
    check_range(s.kl_grade, 4, s, "kl");
    check_range(s.jsn_medial, 3, s, "jsn_med");
    check_range(s.jsn_lateral, 3, s, "jsn_lat");
    for (const auto& o : s.osteophytes) check_range(o, 3, s, "osteophyte");
    auto [it, inserted] = patient_split.emplace(s.patient_id, s.split);
    if (!inserted && it->second != s.split) {
      throw Error(ErrorKind::leakage, "patient " + s.patient_id + " appears in both " +
                                          to_string(it->second) + " and " + to_string(s.split));
    }
  }
}

Manifest parse_manifest(std::string_view text, const std::filesystem::path& root) {
  Manifest m;
  m.root = root;
  bool header_seen = false;
  std::size_t row = 0;
  std::set<std::string> refs;
  for (auto line : detail::split_lines(text)) {
    ++row;
    auto t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      auto kv = trim(t.substr(1));
      auto eq = kv.find('=');
      if (eq == std::string_view::npos) continue;
      auto key = trim(kv.substr(0, eq));
      auto value = trim(kv.substr(eq + 1));
      if (key == "image_side") {
        auto v = parse_integer(value);
        if (!v || *v <= 0) throw ParseError(row, "bad image_side metadata");
        m.image_side = static_cast<int>(*v);
      } else if (key == "source") {
        m.source = std::string(value);
      }
      continue;
    }
    if (!header_seen) {
      auto cols = split_fields(t);
      auto expected = split_fields(kManifestHeader);
      if (cols != expected) throw ParseError(row, "unexpected header, want: " + std::string(kManifestHeader));
      header_seen = true;
      continue;
    }
    auto f = split_fields(t);
    if (f.size() != 11) {
      throw ParseError(row, "expected 11 fields, found " + std::to_string(f.size()));
    }
    Sample s;
    s.image_ref = std::string(f[0]);
    s.patient_id = std::string(f[1]);
    if (s.image_ref.empty()) throw ParseError(row, "empty image_ref");
    if (s.patient_id.empty()) throw ParseError(row, "empty patient_id");
    try {
      s.knee_side = parse_knee_side(f[2]);
      s.split = parse_split(f[3]);
    } catch (const Error& e) {
      throw ParseError(row, e.what());
    }
    s.kl_grade = parse_grade(f[4], 4, row, "kl");
    s.jsn_medial = parse_grade(f[5], 3, row, "jsn_med");
    s.jsn_lateral = parse_grade(f[6], 3, row, "jsn_lat");
    static constexpr const char* ost_names[4] = {"ost_mdf", "ost_ldf", "ost_mpt", "ost_lpt"};
    for (int k = 0; k < 4; ++k) s.osteophytes[k] = parse_grade(f[7 + k], 3, row, ost_names[k]);
    if (!refs.insert(s.image_ref).second) throw ParseError(row, "duplicate image_ref " + s.image_ref);
    m.samples.push_back(std::move(s));
  }
  if (m.samples.empty()) spdlog::warn("manifest is empty");
  validate_manifest(m);
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  auto text = detail::read_text_file(path);
  auto m = parse_manifest(text, path.parent_path());
  spdlog::debug("loaded {} samples from {}", m.samples.size(), path.string());
  return m;
}

std::string format_manifest(const Manifest& manifest) {
  std::ostringstream out;
  out << "# image_side=" << manifest.image_side << '\n';
  if (!manifest.source.empty()) out << "# source=" << manifest.source << '\n';
  out << kManifestHeader << '\n';
  auto opt = [](const std::optional<int>& v) { return v ? std::to_string(*v) : std::string(); };
  for (const auto& s : manifest.samples) {
    out << s.image_ref << ',' << s.patient_id << ',' << to_string(s.knee_side) << ','
        << to_string(s.split) << ',' << opt(s.kl_grade) << ',' << opt(s.jsn_medial) << ','
        << opt(s.jsn_lateral);
    for (const auto& o : s.osteophytes) out << ',' << opt(o);
    out << '\n';
  }
  return out.str();
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  detail::write_text_atomic(path, format_manifest(manifest));
}

std::optional<bool> diagnose_kl(const Sample& sample) {
  if (!sample.kl_grade) return std::nullopt;
  return *sample.kl_grade >= 2;
}

bool diagnose_oarsi(const Sample& s) {
  if (!s.jsn_medial || !s.jsn_lateral) {
    throw Error(ErrorKind::unresolvable_label, s.image_ref + ": JSN grades missing");
  }
  const bool ost_missing = std::any_of(s.osteophytes.begin(), s.osteophytes.end(),
                                       [](const auto& o) { return !o.has_value(); });
  const int jsn_max = std::max(*s.jsn_medial, *s.jsn_lateral);
  if (ost_missing) {
    if (s.kl_grade && *s.kl_grade <= 1 && jsn_max == 0) return false;
    throw Error(ErrorKind::unresolvable_label,
                s.image_ref + ": osteophyte grades missing outside the KL 0/1, JSN 0 rule");
  }
  int ost_sum = 0;
  int ost_max = 0;
  for (const auto& o : s.osteophytes) {
    ost_sum += *o;
    ost_max = std::max(ost_max, *o);
  }
  if (jsn_max >= 2) return true;
  if (ost_sum >= 2) return true;
  return jsn_max >= 1 && ost_max >= 1;
}

DiagnosisLabels diagnose(const Sample& sample) {
  auto kl = diagnose_kl(sample);
  if (!kl) throw Error(ErrorKind::unresolvable_label, sample.image_ref + ": KL grade missing");
  return {*kl, diagnose_oarsi(sample)};
}

std::vector<Sample> sample_training_pool(const Manifest& manifest, std::size_t pool_size,
                                         std::uint64_t rng_seed) {
  std::vector<Sample> healthy;
  for (const auto& s : manifest.samples) {
    if (s.split == Split::train && s.kl_grade && *s.kl_grade == 0) healthy.push_back(s);
  }
  if (healthy.size() < pool_size) {
    throw Error(ErrorKind::capacity, "requested a pool of " + std::to_string(pool_size) +
                                         " healthy training samples but only " +
                                         std::to_string(healthy.size()) + " exist");
  }
  std::mt19937_64 rng(rng_seed);
  std::shuffle(healthy.begin(), healthy.end(), rng);
  healthy.resize(pool_size);
  return healthy;
}

namespace {

std::optional<int> leading_int(std::string_view v) {
  v = trim(v);
  std::size_t n = 0;
  while (n < v.size() && std::isdigit(static_cast<unsigned char>(v[n]))) ++n;
  if (n == 0) return std::nullopt;
  return static_cast<int>(*parse_integer(v.substr(0, n)));
}

}  // namespace

Manifest import_oai(const OaiImportSpec& spec) {
  const auto text = detail::read_text_file(spec.readings);
  auto lines = detail::split_lines(text);
  if (lines.empty()) throw Error(ErrorKind::parse, spec.readings.string() + " is empty");
  const char delim = lines.front().find('|') != std::string_view::npos ? '|' : ',';
  auto header = split_fields(lines.front(), delim);
  auto column = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i) {
      std::string h(header[i]);
      std::transform(h.begin(), h.end(), h.begin(), ::toupper);
      std::string want = name;
      std::transform(want.begin(), want.end(), want.begin(), ::toupper);
      if (h == want) return i;
    }
    throw Error(ErrorKind::parse, "readings table lacks column " + name);
  };
  const auto c_id = column(spec.id_column);
  const auto c_side = column(spec.side_column);
  const auto c_kl = column(spec.kl_column);
  const auto c_jm = column(spec.jsn_medial_column);
  const auto c_jl = column(spec.jsn_lateral_column);
  std::array<std::size_t, 4> c_ost{};
  for (int k = 0; k < 4; ++k) c_ost[k] = column(spec.osteophyte_columns[k]);

  Manifest m;
  m.image_side = spec.image_side;
  m.source = "oai";
  m.root = spec.image_root;
  std::set<std::string> seen;
  std::size_t missing_images = 0;
  for (std::size_t row = 1; row < lines.size(); ++row) {
    if (trim(lines[row]).empty()) continue;
    auto f = split_fields(lines[row], delim);
    if (f.size() < header.size()) throw ParseError(row + 1, "short row");
    auto grade = [&](std::size_t col, int max) -> std::optional<int> {
      auto v = leading_int(f[col]);
      if (v && (*v < 0 || *v > max)) return std::nullopt;
      return v;
    };
    Sample s;
    s.patient_id = std::string(f[c_id]);
    auto side_code = leading_int(f[c_side]);
    if (!side_code || (*side_code != 1 && *side_code != 2)) {
      throw ParseError(row + 1, "SIDE must be 1 (right) or 2 (left)");
    }
    // OAI convention: SIDE 1 = right, 2 = left
    s.knee_side = *side_code == 1 ? KneeSide::right : KneeSide::left;
    std::string ref = spec.image_pattern;
    auto replace = [&](const std::string& token, const std::string& value) {
      for (auto pos = ref.find(token); pos != std::string::npos; pos = ref.find(token)) {
        ref.replace(pos, token.size(), value);
      }
    };
    replace("{id}", s.patient_id);
    replace("{side}", s.knee_side == KneeSide::right ? "R" : "L");
    s.image_ref = ref;
    if (!seen.insert(ref).second) continue;  // repeated readings of one knee
    if (!std::filesystem::exists(spec.image_root / ref)) {
      ++missing_images;
      continue;
    }
    s.kl_grade = grade(c_kl, 4);
    s.jsn_medial = grade(c_jm, 3);
    s.jsn_lateral = grade(c_jl, 3);
    for (int k = 0; k < 4; ++k) s.osteophytes[k] = grade(c_ost[k], 3);
    m.samples.push_back(std::move(s));
  }
  if (missing_images > 0) spdlog::warn("{} readings have no image under {}", missing_images, spec.image_root.string());

  std::vector<std::string> patients;
  for (const auto& s : m.samples) patients.push_back(s.patient_id);
  std::sort(patients.begin(), patients.end());
  patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
  std::mt19937_64 rng(spec.rng_seed);
  std::shuffle(patients.begin(), patients.end(), rng);
  const double total = spec.split_fractions[0] + spec.split_fractions[1] + spec.split_fractions[2];
  const auto n_train = static_cast<std::size_t>(patients.size() * spec.split_fractions[0] / total);
  const auto n_val = static_cast<std::size_t>(patients.size() * spec.split_fractions[1] / total);
  std::unordered_map<std::string, Split> assignment;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    assignment[patients[i]] = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
  }
  for (auto& s : m.samples) s.split = assignment.at(s.patient_id);
  validate_manifest(m);
  return m;
}

}  // namespace sevgrade
