#include "creward/annotate.hpp"

#include <atomic>
#include <cctype>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "creward/parallel.hpp"

namespace creward {

// ---------------------------------------------------------------------------

std::string_view type_definition(CreativityType t) {
  switch (t) {
    case CreativityType::geometry:
      return "Geometry creativity concerns the object's shape and structure: unusual silhouettes, "
             "proportions, topology or structural arrangement that still read as the object.";
    case CreativityType::material:
      return "Material creativity concerns the substance the object appears to be made of: unexpected "
             "or inventive materials, their reflectance, translucency and physical feel.";
    case CreativityType::texture:
      return "Texture creativity concerns the surface appearance: inventive colors, patterns, "
             "prints and surface details applied over the object's shape.";
    case CreativityType::overall:
      return "Overall creativity is your holistic judgment of how creative the object is, "
             "considering geometry, material and texture together.";
  }
  return "";
}

std::vector<std::string> template_versions() { return {"v1"}; }

namespace {

std::string system_text_v1() {
  std::ostringstream s;
  s << "You are an expert product designer evaluating the creativity of generated object images.\n"
    << "Creativity is assessed separately for three types, plus an overall judgment:\n";
  for (CreativityType t : kAllTypes) s << "- " << display_name(t) << ": " << type_definition(t) << "\n";
  s << "\nYou will be shown two images, Image A first and Image B second. For each type, decide which "
       "image is more creative, or answer Tie if you cannot decide.\n"
    << "\nAnswer format: after any reasoning, end your answer with exactly these four lines:\n"
    << "Geometry: <A|B|Tie>\n"
    << "Material: <A|B|Tie>\n"
    << "Texture: <A|B|Tie>\n"
    << "Overall: <A|B|Tie>\n";
  return s.str();
}

std::string user_text_v1() {
  return "Image A and Image B are attached in that order. Which image is more creative in terms of "
         "geometry, material, texture, and overall? Use the answer format.";
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

AnnotationQuery build_query(const PairRecord& pair, std::string_view template_version,
                            const std::function<std::string(const std::string&)>& uri_of) {
  if (template_version != "v1") {
    throw Error("template", "unknown annotation template version '" + std::string(template_version) + "'");
  }
  AnnotationQuery q;
  q.system_text = system_text_v1();
  q.user_text = user_text_v1();
  q.image_refs = uri_of ? std::make_pair(uri_of(pair.image_a), uri_of(pair.image_b))
                        : std::make_pair(pair.image_a, pair.image_b);
  q.prompt_version = std::string(template_version);
  return q;
}

// ---------------------------------------------------------------------------

std::string render_verdicts(const Verdicts& verdicts) {
  std::string out;
  for (CreativityType t : kAllTypes) {
    out += display_name(t);
    out += ": ";
    out += to_string(verdicts[index_of(t)]);
    out += '\n';
  }
  return out;
}

Verdicts parse_response(std::string_view text) {
  static const std::regex kLine(
      R"(^(geometry|material|texture|overall)(\s+creativity)?\s*:\s*(image\s+)?(a|b|tie)\s*[.!]?$)",
      std::regex::icase | std::regex::ECMAScript);
  std::array<std::optional<Verdict>, 4> found;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    std::string s = trim(line);
    // Strip list bullets and emphasis markup.
    while (!s.empty() && (s.front() == '-' || s.front() == '*' || s.front() == '>' || s.front() == '#')) {
      s = trim(std::string_view(s).substr(1));
    }
    std::string cleaned;
    for (char c : s) {
      if (c != '*' && c != '`' && c != '_') cleaned += c;
    }
    cleaned = trim(cleaned);
    std::smatch m;
    if (!std::regex_match(cleaned, m, kLine)) continue;
    const CreativityType t = *parse_creativity_type(m[1].str());
    const Verdict v = *parse_verdict(m[4].str());
    auto& slot = found[index_of(t)];
    if (slot && *slot != v) {
      throw ParseError("conflicting lines for " + std::string(to_string(t)), std::string(text));
    }
    slot = v;
  }
  Verdicts out{};
  for (CreativityType t : kAllTypes) {
    if (!found[index_of(t)]) {
      throw ParseError("response lacks a verdict line for " + std::string(display_name(t)), std::string(text));
    }
    out[index_of(t)] = *found[index_of(t)];
  }
  return out;
}

// ---------------------------------------------------------------------------

LabelStore::LabelStore(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(*path_)) {
    write_text(*path_, "");
    return;
  }
  auto result = read_jsonl(*path_);
  for (const auto& [line, msg] : result.errors) {
    throw Error("store", path_->string() + ":" + std::to_string(line) + ": corrupt label log: " + msg);
  }
  for (const auto& l : result.lines) {
    PreferenceLabel label = label_from_json(l.value);
    Key key{label.pair_id, label.annotator_id, label.prompt_version};
    if (index_.contains(key)) {
      throw Error("store", path_->string() + ":" + std::to_string(l.line_number) + ": duplicate key in log");
    }
    index_.emplace(std::move(key), log_.size());
    log_.push_back(std::move(label));
  }
}

bool LabelStore::append(const PreferenceLabel& label) {
  std::lock_guard lock(mutex_);
  Key key{label.pair_id, label.annotator_id, label.prompt_version};
  if (index_.contains(key)) return false;
  if (path_) {
    std::ofstream out(*path_, std::ios::binary | std::ios::app);
    if (!out) throw Error("io", "cannot append to " + path_->string());
    out << to_json(label).dump() << '\n';
    out.flush();
    if (!out) throw Error("io", "write failed on " + path_->string());
  }
  index_.emplace(std::move(key), log_.size());
  log_.push_back(label);
  return true;
}

bool LabelStore::contains(const std::string& pair_id, const std::string& annotator_id,
                          const std::string& prompt_version) const {
  std::lock_guard lock(mutex_);
  return index_.contains(Key{pair_id, annotator_id, prompt_version});
}

std::optional<PreferenceLabel> LabelStore::find(const std::string& pair_id, const std::string& annotator_id,
                                                const std::string& prompt_version) const {
  std::lock_guard lock(mutex_);
  auto it = index_.find(Key{pair_id, annotator_id, prompt_version});
  if (it == index_.end()) return std::nullopt;
  return log_[it->second];
}

std::vector<PreferenceLabel> LabelStore::labels() const {
  std::lock_guard lock(mutex_);
  return log_;
}

std::size_t LabelStore::size() const {
  std::lock_guard lock(mutex_);
  return log_.size();
}

std::map<LabelStore::Key, std::size_t> LabelStore::index() const {
  std::lock_guard lock(mutex_);
  return index_;
}

// ---------------------------------------------------------------------------

std::string base64_encode(std::string_view bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const auto n = (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i])) << 16) |
                   (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i + 1])) << 8) |
                   static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i + 2]));
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += kAlphabet[n & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    std::uint32_t n = static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i])) << 16;
    if (rest == 2) n |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i + 1])) << 8;
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += rest == 2 ? kAlphabet[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  while (!text.empty() && text.back() == '=') text.remove_suffix(1);
  std::string out;
  out.reserve(text.size() * 3 / 4);
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    const int v = value(c);
    if (v < 0) throw Error("decode", "invalid base64 character");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out += static_cast<char>((acc >> bits) & 0xFF);
    }
  }
  return out;
}

std::string HttpAnnotatorClient::complete(const AnnotatorRequest& request) {
  httplib::Client cli(config_.base_url);
  cli.set_read_timeout(config_.timeout);
  cli.set_connection_timeout(config_.timeout);
  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr) throw Error("config", "environment variable " + config_.api_key_env + " is not set");
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const Json body = {{"model", config_.model},
                     {"system", request.query.system_text},
                     {"user", request.query.user_text},
                     {"images", {base64_encode(request.image_a_bytes), base64_encode(request.image_b_bytes)}}};
  auto res = cli.Post(config_.path, headers, body.dump(), "application/json");
  if (!res) throw TransportError("annotator request failed: " + httplib::to_string(res.error()));
  if (res->status >= 500 || res->status == 429) {
    throw TransportError("annotator returned HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) throw Error("annotator", "annotator returned HTTP " + std::to_string(res->status));
  const Json reply = Json::parse(res->body, nullptr, false);
  if (reply.is_discarded() || !reply.contains("text") || !reply["text"].is_string()) {
    throw Error("annotator", "annotator reply lacks a 'text' field");
  }
  return reply["text"].get<std::string>();
}

// ---------------------------------------------------------------------------

std::string utc_now_iso8601() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string default_timestamp() {
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) {
    const std::time_t t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }
  return utc_now_iso8601();
}

AnnotateDelta annotate_pairs(const std::vector<PairRecord>& pairs, AnnotatorClient& client, LabelStore& store,
                             const std::function<std::string(const std::string&)>& load_bytes,
                             const AnnotateOptions& options,
                             const std::function<std::string(const std::string&)>& uri_of) {
  struct Job {
    const PairRecord* pair;
    bool swapped;
    std::string annotator_id;
  };
  const std::string base_id = client.annotator_id();
  AnnotateDelta delta;
  std::vector<Job> jobs;
  for (const auto& pair : pairs) {
    for (bool swapped : {false, true}) {
      if (swapped && !options.order_swapped_duplicates) continue;
      Job job{&pair, swapped, swapped ? base_id + "#swapped" : base_id};
      if (store.contains(pair.pair_id, job.annotator_id, options.prompt_version)) {
        ++delta.cache_hits;
        continue;
      }
      jobs.push_back(std::move(job));
    }
  }

  struct Outcome {
    std::optional<Verdicts> verdicts;
    AnnotationFailure failure;
  };
  std::vector<Outcome> outcomes(jobs.size());
  std::atomic<std::size_t> calls{0};
  RateLimiter limiter(options.min_request_interval);

  parallel_for(jobs.size(), options.workers, [&](std::size_t i) {
    const Job& job = jobs[i];
    PairRecord asked = *job.pair;
    if (job.swapped) std::swap(asked.image_a, asked.image_b);
    const AnnotationQuery query = build_query(asked, options.prompt_version, uri_of);
    const std::string bytes_a = load_bytes(asked.image_a);
    const std::string bytes_b = load_bytes(asked.image_b);
    auto backoff = options.backoff;
    Outcome& out = outcomes[i];
    out.failure.pair_id = job.pair->pair_id;
    out.failure.annotator_id = job.annotator_id;
    for (int attempt = 0; attempt <= options.retries; ++attempt) {
      if (attempt > 0 && backoff.count() > 0) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
      out.failure.attempts = attempt + 1;
      limiter.acquire();
      ++calls;
      try {
        const std::string text = client.complete(AnnotatorRequest{query, bytes_a, bytes_b});
        Verdicts v = parse_response(text);
        if (job.swapped) {
          for (auto& x : v) x = flip(x);
        }
        out.verdicts = v;
        return;
      } catch (const ParseError& e) {
        out.failure.message = e.what();
        out.failure.raw_response = e.raw();
      } catch (const TransportError& e) {
        out.failure.message = e.what();
      } catch (const Error& e) {
        out.failure.message = e.what();
      }
    }
  });
  delta.client_calls = calls.load();

  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!outcomes[i].verdicts) {
      delta.failures.push_back(std::move(outcomes[i].failure));
      continue;
    }
    PreferenceLabel label;
    label.pair_id = jobs[i].pair->pair_id;
    label.annotator_id = jobs[i].annotator_id;
    label.verdicts = *outcomes[i].verdicts;
    label.timestamp = options.clock ? options.clock() : utc_now_iso8601();
    label.prompt_version = options.prompt_version;
    if (store.append(label)) delta.appended.push_back(std::move(label));
  }
  return delta;
}

IngestResult ingest_human_labels(const std::filesystem::path& file, LabelStore& store) {
  IngestResult result;
  auto rows = read_jsonl(file);
  for (const auto& [line, msg] : rows.errors) result.issues.push_back({line, "parse", msg});
  for (const auto& l : rows.lines) {
    PreferenceLabel label;
    try {
      label = label_from_json(l.value);
    } catch (const Error& e) {
      result.issues.push_back({l.line_number, "schema", e.what()});
      continue;
    }
    if (!store.append(label)) {
      result.issues.push_back({l.line_number, "duplicate",
                               "duplicate label for (" + label.pair_id + ", " + label.annotator_id + ", " +
                                   label.prompt_version + ")"});
      continue;
    }
    result.appended.push_back(std::move(label));
  }
  std::sort(result.issues.begin(), result.issues.end(),
            [](const IngestIssue& a, const IngestIssue& b) { return a.line_number < b.line_number; });
  return result;
}

}  // namespace creward
