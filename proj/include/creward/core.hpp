#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace creward {

using Json = nlohmann::json;

/// Base exception. `kind` is a stable machine-readable tag surfaced in CLI
/// error JSON ("infeasible", "parse", "dimension", ...).
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

// ---------------------------------------------------------------------------
// Creativity types

enum class CreativityType : std::uint8_t { geometry = 0, material = 1, texture = 2, overall = 3 };

inline constexpr std::array<CreativityType, 4> kAllTypes = {
    CreativityType::geometry, CreativityType::material, CreativityType::texture,
    CreativityType::overall};
inline constexpr std::array<CreativityType, 3> kAxisTypes = {
    CreativityType::geometry, CreativityType::material, CreativityType::texture};

inline constexpr std::size_t index_of(CreativityType t) { return static_cast<std::size_t>(t); }

std::string_view to_string(CreativityType t);
/// Display name with a leading capital ("Geometry").
std::string_view display_name(CreativityType t);
/// Case-insensitive; accepts the short forms geo/mat/tex/ove as well.
std::optional<CreativityType> parse_creativity_type(std::string_view s);
CreativityType creativity_type_or_throw(std::string_view s);

/// y in {+1, -1, 0}: +1 prefers image A, -1 prefers image B, 0 is a tie.
enum class Verdict : std::int8_t { b = -1, tie = 0, a = 1 };

inline constexpr int sign(Verdict v) { return static_cast<int>(v); }
inline constexpr double tie_mask(Verdict v) { return v == Verdict::tie ? 0.0 : 1.0; }
inline constexpr Verdict flip(Verdict v) { return static_cast<Verdict>(-static_cast<int>(v)); }
std::string_view to_string(Verdict v);
std::optional<Verdict> parse_verdict(std::string_view s);

/// Per-type verdicts. Always holds all four types.
using Verdicts = std::array<Verdict, 4>;

/// One reward score per creativity type, indexed by index_of().
using TypeScores = std::array<double, 4>;
/// image_id → scores.
using ScoreTable = std::map<std::string, TypeScores>;

// ---------------------------------------------------------------------------
// Records. Each keeps the unknown JSON fields it was decoded with so that a
// manifest survives a read/write cycle untouched.

enum class ImageKind : std::uint8_t { creative, normal };
enum class PromptScope : std::uint8_t { object_agnostic, object_specific, normal };
enum class PairContext : std::uint8_t { benchmark, training };

std::string_view to_string(ImageKind k);
std::string_view to_string(PromptScope s);
std::string_view to_string(PairContext c);

struct ImageRecord {
  std::string image_id;
  std::string object_category;
  std::string source_model;
  std::optional<std::string> prompt_id;
  std::string uri;
  ImageKind kind = ImageKind::creative;
  Json extra = Json::object();

  bool operator==(const ImageRecord&) const = default;
};

struct PromptRecord {
  std::string prompt_id;
  std::string text;
  std::optional<CreativityType> target_type;
  PromptScope scope = PromptScope::object_specific;
  std::optional<std::string> object_category;
  Json extra = Json::object();

  bool operator==(const PromptRecord&) const = default;
};

struct PairRecord {
  std::string pair_id;
  std::string image_a;
  std::string image_b;
  PairContext context = PairContext::benchmark;
  Json extra = Json::object();

  bool operator==(const PairRecord&) const = default;
};

struct PreferenceLabel {
  std::string pair_id;
  std::string annotator_id;
  Verdicts verdicts{Verdict::tie, Verdict::tie, Verdict::tie, Verdict::tie};
  std::string timestamp;
  std::string prompt_version;
  Json extra = Json::object();

  Verdict verdict(CreativityType t) const { return verdicts[index_of(t)]; }
  bool operator==(const PreferenceLabel&) const = default;
};

Json to_json(const ImageRecord& r);
Json to_json(const PromptRecord& r);
Json to_json(const PairRecord& r);
Json to_json(const PreferenceLabel& r);
Json verdicts_to_json(const Verdicts& v);

// Decoders throw Error{"schema"} naming the offending field.
ImageRecord image_from_json(const Json& j);
PromptRecord prompt_from_json(const Json& j);
PairRecord pair_from_json(const Json& j);
PreferenceLabel label_from_json(const Json& j);
Verdicts verdicts_from_json(const Json& j);

using ManifestRecord = std::variant<ImageRecord, PromptRecord, PairRecord>;

/// Dispatches on the fields present: "image_a" → pair, "text" → prompt,
/// "uri" → image.
ManifestRecord manifest_record_from_json(const Json& j);
Json to_json(const ManifestRecord& r);
const std::string& record_id(const ManifestRecord& r);

// ---------------------------------------------------------------------------
// Identifiers

/// Content hash prefix + monotonic suffix, e.g. "img-3fa81c0d22e1-0007".
std::string make_image_id(std::string_view content, std::uint64_t serial);
/// Deterministic in (image_a, image_b, context, seed); `occurrence` separates
/// repeated draws of the same ordered pair in training context.
std::string make_pair_id(std::string_view image_a, std::string_view image_b, PairContext context,
                         std::uint64_t seed, std::size_t occurrence = 0);

/// The 12-hex-digit content hash embedded in an image id, or the id itself.
std::string image_content_hash(std::string_view image_id);

// ---------------------------------------------------------------------------
// Manifest validation

struct Violation {
  std::string record_id;
  std::string code;
  std::string message;

  auto operator<=>(const Violation&) const = default;
};

/// Ordered set of violations; empty means the manifest is valid.
using ValidationReport = std::vector<Violation>;

ValidationReport validate_manifest(const std::vector<ManifestRecord>& records);
Json to_json(const ValidationReport& report);

// ---------------------------------------------------------------------------
// JSONL

struct JsonlLine {
  std::size_t line_number;  // 1-based
  Json value;
};

struct JsonlReadResult {
  std::vector<JsonlLine> lines;
  std::vector<std::pair<std::size_t, std::string>> errors;  // line number, message
};

/// Parses every non-blank line; malformed lines are reported, not dropped.
JsonlReadResult read_jsonl(const std::filesystem::path& path);
std::vector<Json> read_jsonl_strict(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows);

std::vector<ImageRecord> read_images(const std::filesystem::path& path);
std::vector<PromptRecord> read_prompts(const std::filesystem::path& path);
std::vector<PairRecord> read_pairs(const std::filesystem::path& path);
std::vector<PreferenceLabel> read_labels(const std::filesystem::path& path);

template <typename Record>
std::vector<Json> to_json_rows(const std::vector<Record>& records) {
  std::vector<Json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(to_json(r));
  return rows;
}

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

/// Replaces every "{obj}" in `text` with `object`.
std::string instantiate_template(std::string_view text, std::string_view object);

}  // namespace creward
