#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sevgrade {

enum class Split { train, val, test };
enum class KneeSide { left, right };

const char* to_string(Split split);
const char* to_string(KneeSide side);
Split parse_split(std::string_view text);
KneeSide parse_knee_side(std::string_view text);

/// Osteophyte regions in manifest column order: medial/lateral distal femur,
/// medial/lateral proximal tibia.
enum OsteophyteRegion { ost_mdf = 0, ost_ldf = 1, ost_mpt = 2, ost_lpt = 3 };

struct Sample {
  std::string image_ref;
  std::string patient_id;
  KneeSide knee_side = KneeSide::left;
  Split split = Split::train;
  std::optional<int> kl_grade;
  std::optional<int> jsn_medial;
  std::optional<int> jsn_lateral;
  std::array<std::optional<int>, 4> osteophytes{};

  /// image_ref doubles as the sample identifier; manifests forbid duplicates.
  const std::string& id() const { return image_ref; }
  bool operator==(const Sample&) const = default;
};

struct DiagnosisLabels {
  bool oa_kl = false;
  bool oa_oarsi = false;
};

struct Manifest {
  std::vector<Sample> samples;
  int image_side = 224;
  std::string source;
  /// Directory that relative image_refs resolve against.
  std::filesystem::path root;

  std::filesystem::path image_path(const Sample& s) const;
  std::vector<Sample> split(Split which) const;
  const Sample* find(std::string_view id) const;
};

inline constexpr std::string_view kManifestHeader =
    "image_ref,patient_id,knee_side,split,kl,jsn_med,jsn_lat,ost_mdf,ost_ldf,ost_mpt,ost_lpt";

/// Parses a manifest file. Lines starting with '#' carry corpus metadata as
/// `# key=value` (image_side, source). Throws ParseError naming the row, or a
/// leakage Error when a patient spans splits.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(std::string_view text, const std::filesystem::path& root = {});
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);
std::string format_manifest(const Manifest& manifest);

/// Checks grade ranges, unique image_refs and patient-level split consistency.
void validate_manifest(const Manifest& manifest);

/// KL-based diagnosis; absent when the KL grade is absent.
std::optional<bool> diagnose_kl(const Sample& sample);

/// OARSI atlas criteria: any JSN >= 2, osteophyte sum >= 2, or grade-one JSN
/// together with a grade-one osteophyte. Samples with missing osteophyte
/// grades are non-OA only when KL is 0/1 and both JSN grades are 0; any other
/// missing combination throws an unresolvable-label Error.
bool diagnose_oarsi(const Sample& sample);

DiagnosisLabels diagnose(const Sample& sample);

/// Seeded draw of pool_size healthy (KL 0) training samples.
std::vector<Sample> sample_training_pool(const Manifest& manifest, std::size_t pool_size,
                                         std::uint64_t rng_seed);

/// Column mapping used when importing OAI semi-quantitative readings.
struct OaiImportSpec {
  std::filesystem::path readings;    // delimited ('|' or ',') reading table
  std::filesystem::path image_root;  // directory holding the cropped knee images
  std::string image_pattern = "{id}_{side}.png";
  std::string id_column = "ID";
  std::string side_column = "SIDE";
  std::string kl_column = "V00XRKL";
  std::string jsn_medial_column = "V00XRJSM";
  std::string jsn_lateral_column = "V00XRJSL";
  std::array<std::string, 4> osteophyte_columns{"V00XROSFM", "V00XROSFL", "V00XROSTM",
                                                "V00XROSTL"};
  std::array<double, 3> split_fractions{0.71, 0.10, 0.19};
  int image_side = 224;
  std::uint64_t rng_seed = 0;
};

/// Builds a manifest from OAI reading exports. Splits are assigned per patient.
Manifest import_oai(const OaiImportSpec& spec);

}  // namespace sevgrade
