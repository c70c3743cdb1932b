#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "creward/annotate.hpp"
#include "creward/core.hpp"

namespace httplib {
class Server;
}

namespace creward {

/// One annotator's pass over the pair set. Sessions are listed in a JSONL
/// file: {"session_id", "annotator_id", "seed", "prompt_version"}.
struct SessionConfig {
  std::string session_id;
  std::string annotator_id;
  std::uint64_t seed = 0;
  std::string prompt_version = "human-v1";
};

std::vector<SessionConfig> read_sessions(const std::filesystem::path& path);

/// Key-value service configuration ("key = value" lines, '#' comments).
///
///   pairs        pair manifest (JSONL)                       required
///   images       image manifest (JSONL)                      required
///   labels       label store, created if absent              required
///   sessions     session list (JSONL)                        required
///   scores       score store written by `creward score`      optional
///   image_root   base directory for relative image uris      default: images dir
///   host, port   listen address                              127.0.0.1, 8080
struct ServiceConfig {
  std::filesystem::path pairs;
  std::filesystem::path images;
  std::filesystem::path labels;
  std::filesystem::path sessions;
  std::optional<std::filesystem::path> scores;
  std::filesystem::path image_root;
  std::string host = "127.0.0.1";
  int port = 8080;
};

/// Relative paths resolve against the config file's directory. Throws
/// Error{"config"} for unknown keys or missing required ones.
ServiceConfig read_service_config(const std::filesystem::path& path);

struct Response {
  int status = 200;
  Json body = Json::object();
  std::string content_type = "application/json";
  std::string raw;  // used instead of body for non-JSON payloads

  std::string text() const { return raw.empty() && content_type == "application/json" ? body.dump() : raw; }
};

/// Transport-independent API. Only submit() writes, and only through the
/// label store's append contract; session queues are recomputed from the
/// store on every call, so a restart resumes exactly where it stopped.
class Service {
 public:
  Service(std::vector<PairRecord> pairs, std::vector<ImageRecord> images, LabelStore& store,
          std::vector<SessionConfig> sessions, std::optional<std::filesystem::path> scores,
          std::filesystem::path image_root, std::function<std::string()> clock = default_timestamp);

  Response next(const std::string& session_id) const;
  Response submit(const std::string& session_id, const Json& body);
  /// `params`: type (required), k (default 30), group_by_prompt (default true).
  Response gallery(const std::map<std::string, std::string>& params) const;
  Response progress() const;
  Response image(const std::string& hash) const;

  /// Pending pair ids in queue order.
  std::vector<std::string> queue(const std::string& session_id) const;

 private:
  const SessionConfig* find_session(const std::string& id) const;
  std::vector<std::string> order(const SessionConfig& s) const;
  Json progress_of(const SessionConfig& s) const;
  Json image_ref(const std::string& image_id) const;

  std::vector<PairRecord> pairs_;
  std::map<std::string, PairRecord> pair_index_;
  std::map<std::string, ImageRecord> images_;
  std::map<std::string, std::string> image_by_hash_;
  LabelStore& store_;
  std::vector<SessionConfig> sessions_;
  std::optional<std::filesystem::path> scores_;
  std::filesystem::path image_root_;
  std::function<std::string()> clock_;
  std::mutex submit_mutex_;
};

Response error_response(int status, const std::string& kind, const std::string& message);

/// Routes the API onto an httplib server (not yet listening).
std::unique_ptr<httplib::Server> make_http_server(Service& service);

}  // namespace creward
