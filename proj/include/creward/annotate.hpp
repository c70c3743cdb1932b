#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "creward/core.hpp"

namespace creward {

// ---------------------------------------------------------------------------
// Query construction

struct AnnotationQuery {
  std::string system_text;
  std::string user_text;
  std::pair<std::string, std::string> image_refs;  // (image_a uri, image_b uri)
  std::string prompt_version;
};

/// Versions known to the template registry.
std::vector<std::string> template_versions();
inline constexpr std::string_view kDefaultPromptVersion = "v1";

/// One-paragraph definition of a creativity type, shown to human and LVLM
/// annotators alike.
std::string_view type_definition(CreativityType t);

/// `uri_of` maps an image id to its locator; identity when empty.
AnnotationQuery build_query(const PairRecord& pair, std::string_view template_version,
                            const std::function<std::string(const std::string&)>& uri_of = {});

// ---------------------------------------------------------------------------
// Response grammar: one `<Type>: <A|B|Tie>` line per type.

std::string render_verdicts(const Verdicts& verdicts);

class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::string raw)
      : Error("parse", message), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

/// Case-insensitive, tolerant of prose around the block and of list or bold
/// markup on the verdict lines. Throws ParseError when a type is missing or
/// a type has conflicting lines.
Verdicts parse_response(std::string_view text);

// ---------------------------------------------------------------------------
// Label store

/// Append-only label log with a (pair_id, annotator_id, prompt_version)
/// uniqueness index. When opened on a file every append is written through;
/// appends are serialized by an internal writer lock.
class LabelStore {
 public:
  using Key = std::tuple<std::string, std::string, std::string>;

  LabelStore() = default;
  /// Opens (creating if absent) and replays an on-disk log.
  explicit LabelStore(std::filesystem::path path);

  LabelStore(const LabelStore&) = delete;
  LabelStore& operator=(const LabelStore&) = delete;

  /// False when the key already exists; the record is then not written.
  bool append(const PreferenceLabel& label);
  bool contains(const std::string& pair_id, const std::string& annotator_id,
                const std::string& prompt_version) const;
  std::optional<PreferenceLabel> find(const std::string& pair_id, const std::string& annotator_id,
                                      const std::string& prompt_version) const;

  /// Snapshot of the log in append order.
  std::vector<PreferenceLabel> labels() const;
  std::size_t size() const;
  /// Index rebuilt from the log: key → position in the log.
  std::map<Key, std::size_t> index() const;
  const std::optional<std::filesystem::path>& path() const { return path_; }

 private:
  mutable std::mutex mutex_;
  std::vector<PreferenceLabel> log_;
  std::map<Key, std::size_t> index_;
  std::optional<std::filesystem::path> path_;
};

// ---------------------------------------------------------------------------
// Annotator clients

/// Raised by clients for transport-level failures; retried with backoff.
class TransportError : public Error {
 public:
  explicit TransportError(const std::string& message) : Error("transport", message) {}
};

struct AnnotatorRequest {
  const AnnotationQuery& query;
  const std::string& image_a_bytes;
  const std::string& image_b_bytes;
};

class AnnotatorClient {
 public:
  virtual ~AnnotatorClient() = default;
  virtual std::string annotator_id() const = 0;
  /// Returns the raw response text.
  virtual std::string complete(const AnnotatorRequest& request) = 0;
};

/// POSTs {system, user, images:[base64 A, base64 B], model} as JSON to an
/// HTTP endpoint and reads the response text from the "text" field. The
/// bearer token is read from the environment variable named in the config.
class HttpAnnotatorClient final : public AnnotatorClient {
 public:
  struct Config {
    std::string base_url;  // e.g. http://127.0.0.1:8080
    std::string path = "/v1/annotate";
    std::string model = "lvlm";
    std::string api_key_env;  // empty: no Authorization header
    std::chrono::seconds timeout{60};
  };
  explicit HttpAnnotatorClient(Config config) : config_(std::move(config)) {}
  std::string annotator_id() const override { return config_.model; }
  std::string complete(const AnnotatorRequest& request) override;

 private:
  Config config_;
};

std::string base64_encode(std::string_view bytes);
/// Throws Error{"decode"} on characters outside the standard alphabet.
std::string base64_decode(std::string_view text);

struct AnnotateOptions {
  std::string prompt_version = std::string(kDefaultPromptVersion);
  int retries = 2;
  std::chrono::milliseconds backoff{100};  // doubled after each failed attempt
  std::size_t workers = 4;
  std::chrono::microseconds min_request_interval{0};
  /// Also query with the images swapped (stored under "<annotator>#swapped",
  /// verdicts mapped back to the original A/B frame).
  bool order_swapped_duplicates = false;
  std::function<std::string()> clock;  // timestamp source; defaults to UTC now
};

struct AnnotationFailure {
  std::string pair_id;
  std::string annotator_id;
  int attempts = 0;
  std::string message;
  std::string raw_response;
};

struct AnnotateDelta {
  std::vector<PreferenceLabel> appended;
  std::vector<AnnotationFailure> failures;
  std::size_t cache_hits = 0;
  std::size_t client_calls = 0;
};

/// `load_bytes` returns the encoded image for an image id.
AnnotateDelta annotate_pairs(const std::vector<PairRecord>& pairs, AnnotatorClient& client, LabelStore& store,
                             const std::function<std::string(const std::string&)>& load_bytes,
                             const AnnotateOptions& options,
                             const std::function<std::string(const std::string&)>& uri_of = {});

struct IngestIssue {
  std::size_t line_number = 0;
  std::string code;  // "schema" | "duplicate" | "parse"
  std::string message;
};

struct IngestResult {
  std::vector<PreferenceLabel> appended;
  std::vector<IngestIssue> issues;
};

IngestResult ingest_human_labels(const std::filesystem::path& file, LabelStore& store);

std::string utc_now_iso8601();
/// SOURCE_DATE_EPOCH when set, else the wall clock.
std::string default_timestamp();

}  // namespace creward
