#include "creward/service.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "creward/reward.hpp"
#include "creward/rng.hpp"
#include "creward/xapps.hpp"

// After Eigen: resolv.h (pulled in by httplib) defines a `_res` macro.
#include <httplib.h>

namespace creward {

std::vector<SessionConfig> read_sessions(const std::filesystem::path& path) {
  std::vector<SessionConfig> out;
  std::set<std::string> seen;
  for (const Json& row : read_jsonl_strict(path)) {
    try {
      SessionConfig s;
      s.session_id = row.at("session_id").get<std::string>();
      s.annotator_id = row.at("annotator_id").get<std::string>();
      s.seed = row.at("seed").get<std::uint64_t>();
      s.prompt_version = row.value("prompt_version", s.prompt_version);
      if (!seen.insert(s.session_id).second) throw Error("schema", "duplicate session_id " + s.session_id);
      out.push_back(std::move(s));
    } catch (const Json::exception& e) {
      throw Error("schema", path.string() + ": bad session row: " + e.what());
    }
  }
  return out;
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace

ServiceConfig read_service_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("config", "cannot open config " + path.string());
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_relative() ? base / p : p;
  };
  ServiceConfig c;
  std::set<std::string> keys;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config", path.string() + ":" + std::to_string(number) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    keys.insert(key);
    if (key == "pairs") c.pairs = resolve(value);
    else if (key == "images") c.images = resolve(value);
    else if (key == "labels") c.labels = resolve(value);
    else if (key == "sessions") c.sessions = resolve(value);
    else if (key == "scores") c.scores = resolve(value);
    else if (key == "image_root") c.image_root = resolve(value);
    else if (key == "host") c.host = value;
    else if (key == "port") c.port = std::stoi(value);
    else throw Error("config", path.string() + ":" + std::to_string(number) + ": unknown key " + key);
  }
  for (const char* required : {"pairs", "images", "labels", "sessions"}) {
    if (!keys.contains(required)) throw Error("config", std::string("missing required key ") + required);
  }
  if (c.image_root.empty()) c.image_root = c.images.parent_path();
  return c;
}

namespace {

Response json_response(int status, Json body) {
  Response r;
  r.status = status;
  r.body = std::move(body);
  return r;
}

}  // namespace

Response error_response(int status, const std::string& kind, const std::string& message) {
  return json_response(status, {{"error", {{"kind", kind}, {"message", message}}}});
}

Service::Service(std::vector<PairRecord> pairs, std::vector<ImageRecord> images, LabelStore& store,
                 std::vector<SessionConfig> sessions, std::optional<std::filesystem::path> scores,
                 std::filesystem::path image_root, std::function<std::string()> clock)
    : pairs_(std::move(pairs)), store_(store), sessions_(std::move(sessions)), scores_(std::move(scores)),
      image_root_(std::move(image_root)), clock_(std::move(clock)) {
  for (const auto& p : pairs_) pair_index_.emplace(p.pair_id, p);
  for (auto& img : images) {
    image_by_hash_.emplace(image_content_hash(img.image_id), img.image_id);
    images_.emplace(img.image_id, std::move(img));
  }
}

const SessionConfig* Service::find_session(const std::string& id) const {
  auto it = std::find_if(sessions_.begin(), sessions_.end(), [&](const auto& s) { return s.session_id == id; });
  return it == sessions_.end() ? nullptr : &*it;
}

std::vector<std::string> Service::order(const SessionConfig& s) const {
  std::vector<std::string> ids;
  ids.reserve(pair_index_.size());
  for (const auto& [id, p] : pair_index_) ids.push_back(id);
  Rng rng(s.seed);
  rng.shuffle(std::span(ids));
  return ids;
}

std::vector<std::string> Service::queue(const std::string& session_id) const {
  const SessionConfig* s = find_session(session_id);
  if (!s) throw Error("not-found", "unknown session " + session_id);
  std::vector<std::string> pending;
  for (auto& id : order(*s)) {
    if (!store_.contains(id, s->annotator_id, s->prompt_version)) pending.push_back(std::move(id));
  }
  return pending;
}

Json Service::progress_of(const SessionConfig& s) const {
  std::size_t completed = 0;
  for (const auto& [id, p] : pair_index_) completed += store_.contains(id, s.annotator_id, s.prompt_version) ? 1 : 0;
  return {{"session_id", s.session_id},
          {"annotator_id", s.annotator_id},
          {"prompt_version", s.prompt_version},
          {"completed", completed},
          {"total", pair_index_.size()},
          {"done", completed == pair_index_.size()}};
}

Json Service::image_ref(const std::string& image_id) const {
  return {{"image_id", image_id}, {"url", "/images/" + image_content_hash(image_id)}};
}

Response Service::next(const std::string& session_id) const {
  const SessionConfig* s = find_session(session_id);
  if (!s) return error_response(404, "not-found", "unknown session " + session_id);
  const auto pending = queue(session_id);
  if (pending.empty()) return json_response(200, {{"status", "done"}, {"progress", progress_of(*s)}});
  const PairRecord& pair = pair_index_.at(pending.front());
  Json definitions = Json::object();
  for (CreativityType t : kAllTypes) definitions[std::string(to_string(t))] = type_definition(t);
  return json_response(200,
          {{"status", "pending"},
           {"session_id", s->session_id},
           {"pair_id", pair.pair_id},
           {"image_a", image_ref(pair.image_a)},
           {"image_b", image_ref(pair.image_b)},
           {"definitions", definitions},
           {"choices", {"A", "B", "Tie"}},
           {"progress", progress_of(*s)}});
}

Response Service::submit(const std::string& session_id, const Json& body) {
  const SessionConfig* s = find_session(session_id);
  if (!s) return error_response(404, "not-found", "unknown session " + session_id);
  if (!body.is_object() || !body.contains("pair_id") || !body["pair_id"].is_string()) {
    return error_response(422, "validation", "body must carry a string pair_id");
  }
  const std::string pair_id = body["pair_id"].get<std::string>();
  Verdicts verdicts{};
  try {
    if (!body.contains("verdicts")) throw Error("schema", "missing verdicts");
    verdicts = verdicts_from_json(body["verdicts"]);
  } catch (const Error& e) {
    return error_response(422, "validation", std::string("incomplete or invalid verdicts: ") + e.what());
  }

  std::lock_guard lock(submit_mutex_);
  if (store_.contains(pair_id, s->annotator_id, s->prompt_version)) {
    Json progress = progress_of(*s);
    return json_response(200, {{"status", "duplicate"}, {"duplicate", true}, {"progress", progress}});
  }
  const auto pending = queue(session_id);
  if (pending.empty() || pending.front() != pair_id) {
    return error_response(409, "conflict",
                          "pair " + pair_id + " is not the session head" +
                              (pending.empty() ? std::string(" (session done)") : " (expected " + pending.front() + ")"));
  }
  PreferenceLabel label;
  label.pair_id = pair_id;
  label.annotator_id = s->annotator_id;
  label.prompt_version = s->prompt_version;
  label.verdicts = verdicts;
  label.timestamp = clock_();
  store_.append(label);
  return json_response(200, {{"status", "stored"}, {"duplicate", false}, {"progress", progress_of(*s)}});
}

Response Service::gallery(const std::map<std::string, std::string>& params) const {
  auto get = [&](const std::string& key) -> std::optional<std::string> {
    auto it = params.find(key);
    return it == params.end() ? std::nullopt : std::optional(it->second);
  };
  const auto type_text = get("type");
  if (!type_text) return error_response(400, "validation", "missing query parameter 'type'");
  const auto type = parse_creativity_type(*type_text);
  if (!type) return error_response(400, "validation", "unknown creativity type " + *type_text);
  std::size_t k = 30;
  if (auto v = get("k")) {
    try {
      const long long parsed = std::stoll(*v);
      if (parsed < 0) throw std::invalid_argument("negative");
      k = static_cast<std::size_t>(parsed);
    } catch (const std::exception&) {
      return error_response(400, "validation", "k must be a non-negative integer");
    }
  }
  bool grouped = true;
  if (auto v = get("group_by_prompt")) grouped = *v == "1" || *v == "true";
  if (!scores_ || !std::filesystem::exists(*scores_)) {
    return error_response(409, "no-scores", "no score store available; run score first");
  }
  std::vector<ImageRecord> images;
  for (const auto& [id, img] : images_) images.push_back(img);
  try {
    const FilterResult result = filter_top_k(read_scores(*scores_), images, k, *type, grouped);
    Json items = Json::array();
    for (const auto& item : result.top) {
      Json j = to_json(item);
      j["url"] = "/images/" + image_content_hash(item.image_id);
      items.push_back(std::move(j));
    }
    return json_response(200,
            {{"type", to_string(*type)},
             {"k", k},
             {"group_by_prompt", grouped},
             {"candidates", result.candidates},
             {"items", items}});
  } catch (const Error& e) {
    return error_response(400, e.kind(), e.what());
  }
}

Response Service::progress() const {
  Json sessions = Json::array();
  for (const auto& s : sessions_) sessions.push_back(progress_of(s));
  return json_response(200, {{"sessions", sessions}, {"labels", store_.size()}, {"pairs", pair_index_.size()}});
}

Response Service::image(const std::string& hash) const {
  auto it = image_by_hash_.find(hash);
  if (it == image_by_hash_.end()) return error_response(404, "not-found", "unknown image " + hash);
  std::filesystem::path p(images_.at(it->second).uri);
  if (p.is_relative()) p = image_root_ / p;
  try {
    Response r;
    r.content_type = "image/x-portable-pixmap";
    r.raw = read_text(p);
    return r;
  } catch (const std::exception& e) {
    return error_response(404, "not-found", std::string("image unreadable: ") + e.what());
  }
}

std::unique_ptr<httplib::Server> make_http_server(Service& service) {
  auto server = std::make_unique<httplib::Server>();
  auto reply = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.text(), r.content_type);
  };
  server->Get(R"(/session/([^/]+)/next)", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.next(req.matches[1]));
  });
  server->Post(R"(/session/([^/]+)/label)", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    const Json body = Json::parse(req.body, nullptr, false);
    if (body.is_discarded()) {
      reply(res, error_response(400, "validation", "request body is not JSON"));
      return;
    }
    reply(res, service.submit(req.matches[1], body));
  });
  server->Get("/gallery", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> params;
    for (const auto& [key, value] : req.params) params.emplace(key, value);
    reply(res, service.gallery(params));
  });
  server->Get("/progress", [&service, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, service.progress());
  });
  server->Get(R"(/images/([0-9a-zA-Z-]+))", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.image(req.matches[1]));
  });
  return server;
}

}  // namespace creward
