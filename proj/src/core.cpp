#include "creward/core.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "creward/hash.hpp"

namespace creward {

std::string to_hex(std::uint64_t v, int digits) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
    v >>= 4;
  }
  return out.substr(16 - static_cast<std::size_t>(std::clamp(digits, 1, 16)));
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

[[noreturn]] void schema_error(const std::string& what) { throw Error("schema", what); }

const Json& require(const Json& j, const char* field) {
  if (!j.is_object()) schema_error("record is not a JSON object");
  auto it = j.find(field);
  if (it == j.end()) schema_error(std::string("missing field '") + field + "'");
  return *it;
}

std::string require_string(const Json& j, const char* field) {
  const Json& v = require(j, field);
  if (!v.is_string()) schema_error(std::string("field '") + field + "' must be a string");
  return v.get<std::string>();
}

std::optional<std::string> optional_string(const Json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) schema_error(std::string("field '") + field + "' must be a string or null");
  return it->get<std::string>();
}

Json extra_fields(const Json& j, std::initializer_list<const char*> known) {
  Json extra = Json::object();
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; })) {
      extra[it.key()] = it.value();
    }
  }
  return extra;
}

Json with_extra(Json j, const Json& extra) {
  for (auto it = extra.begin(); it != extra.end(); ++it) {
    if (!j.contains(it.key())) j[it.key()] = it.value();
  }
  return j;
}

Json optional_to_json(const std::optional<std::string>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(CreativityType t) {
  switch (t) {
    case CreativityType::geometry: return "geometry";
    case CreativityType::material: return "material";
    case CreativityType::texture: return "texture";
    case CreativityType::overall: return "overall";
  }
  return "unknown";
}

std::string_view display_name(CreativityType t) {
  switch (t) {
    case CreativityType::geometry: return "Geometry";
    case CreativityType::material: return "Material";
    case CreativityType::texture: return "Texture";
    case CreativityType::overall: return "Overall";
  }
  return "Unknown";
}

std::optional<CreativityType> parse_creativity_type(std::string_view s) {
  const std::string l = lower(s);
  if (l == "geometry" || l == "geo") return CreativityType::geometry;
  if (l == "material" || l == "mat") return CreativityType::material;
  if (l == "texture" || l == "tex") return CreativityType::texture;
  if (l == "overall" || l == "ove") return CreativityType::overall;
  return std::nullopt;
}

CreativityType creativity_type_or_throw(std::string_view s) {
  if (auto t = parse_creativity_type(s)) return *t;
  throw Error("usage", "unknown creativity type '" + std::string(s) + "'");
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::a: return "A";
    case Verdict::b: return "B";
    case Verdict::tie: return "Tie";
  }
  return "?";
}

std::optional<Verdict> parse_verdict(std::string_view s) {
  const std::string l = lower(s);
  if (l == "a" || l == "+1" || l == "1") return Verdict::a;
  if (l == "b" || l == "-1") return Verdict::b;
  if (l == "tie" || l == "0") return Verdict::tie;
  return std::nullopt;
}

std::string_view to_string(ImageKind k) { return k == ImageKind::normal ? "normal" : "creative"; }

std::string_view to_string(PromptScope s) {
  switch (s) {
    case PromptScope::object_agnostic: return "object_agnostic";
    case PromptScope::object_specific: return "object_specific";
    case PromptScope::normal: return "normal";
  }
  return "?";
}

std::string_view to_string(PairContext c) {
  return c == PairContext::training ? "training" : "benchmark";
}

// ---------------------------------------------------------------------------

Json to_json(const ImageRecord& r) {
  Json j = {{"image_id", r.image_id},
            {"object_category", r.object_category},
            {"source_model", r.source_model},
            {"prompt_id", optional_to_json(r.prompt_id)},
            {"uri", r.uri},
            {"kind", to_string(r.kind)}};
  return with_extra(std::move(j), r.extra);
}

Json to_json(const PromptRecord& r) {
  Json j = {{"prompt_id", r.prompt_id},
            {"text", r.text},
            {"target_type", r.target_type ? Json(to_string(*r.target_type)) : Json(nullptr)},
            {"scope", to_string(r.scope)},
            {"object_category", optional_to_json(r.object_category)}};
  return with_extra(std::move(j), r.extra);
}

Json to_json(const PairRecord& r) {
  Json j = {{"pair_id", r.pair_id},
            {"image_a", r.image_a},
            {"image_b", r.image_b},
            {"context", to_string(r.context)}};
  return with_extra(std::move(j), r.extra);
}

Json verdicts_to_json(const Verdicts& v) {
  Json j = Json::object();
  for (CreativityType t : kAllTypes) j[std::string(to_string(t))] = to_string(v[index_of(t)]);
  return j;
}

Json to_json(const PreferenceLabel& r) {
  Json j = {{"pair_id", r.pair_id},
            {"annotator_id", r.annotator_id},
            {"verdicts", verdicts_to_json(r.verdicts)},
            {"timestamp", r.timestamp},
            {"prompt_version", r.prompt_version}};
  return with_extra(std::move(j), r.extra);
}

ImageRecord image_from_json(const Json& j) {
  ImageRecord r;
  r.image_id = require_string(j, "image_id");
  r.object_category = require_string(j, "object_category");
  r.source_model = require_string(j, "source_model");
  r.prompt_id = optional_string(j, "prompt_id");
  r.uri = require_string(j, "uri");
  const std::string kind = require_string(j, "kind");
  if (kind == "creative") {
    r.kind = ImageKind::creative;
  } else if (kind == "normal") {
    r.kind = ImageKind::normal;
  } else {
    schema_error("field 'kind' must be creative|normal, got '" + kind + "'");
  }
  r.extra = extra_fields(j, {"image_id", "object_category", "source_model", "prompt_id", "uri", "kind"});
  return r;
}

PromptRecord prompt_from_json(const Json& j) {
  PromptRecord r;
  r.prompt_id = require_string(j, "prompt_id");
  r.text = require_string(j, "text");
  if (auto t = optional_string(j, "target_type")) {
    auto parsed = parse_creativity_type(*t);
    if (!parsed) schema_error("field 'target_type' has unknown value '" + *t + "'");
    r.target_type = parsed;
  }
  const std::string scope = require_string(j, "scope");
  if (scope == "object_agnostic") {
    r.scope = PromptScope::object_agnostic;
  } else if (scope == "object_specific") {
    r.scope = PromptScope::object_specific;
  } else if (scope == "normal") {
    r.scope = PromptScope::normal;
  } else {
    schema_error("field 'scope' has unknown value '" + scope + "'");
  }
  r.object_category = optional_string(j, "object_category");
  r.extra = extra_fields(j, {"prompt_id", "text", "target_type", "scope", "object_category"});
  return r;
}

PairRecord pair_from_json(const Json& j) {
  PairRecord r;
  r.pair_id = require_string(j, "pair_id");
  r.image_a = require_string(j, "image_a");
  r.image_b = require_string(j, "image_b");
  const std::string ctx = require_string(j, "context");
  if (ctx == "benchmark") {
    r.context = PairContext::benchmark;
  } else if (ctx == "training") {
    r.context = PairContext::training;
  } else {
    schema_error("field 'context' must be benchmark|training, got '" + ctx + "'");
  }
  r.extra = extra_fields(j, {"pair_id", "image_a", "image_b", "context"});
  return r;
}

Verdicts verdicts_from_json(const Json& j) {
  if (!j.is_object()) schema_error("field 'verdicts' must be an object");
  Verdicts out{};
  std::array<bool, 4> seen{};
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto type = parse_creativity_type(it.key());
    if (!type) schema_error("unknown creativity type '" + it.key() + "' in verdicts");
    std::optional<Verdict> v;
    if (it->is_string()) {
      v = parse_verdict(it->get<std::string>());
    } else if (it->is_number_integer()) {
      const auto n = it->get<long long>();
      if (n == 1) v = Verdict::a;
      if (n == -1) v = Verdict::b;
      if (n == 0) v = Verdict::tie;
    }
    if (!v) schema_error("invalid verdict " + it->dump() + " for " + it.key() + " (expected A, B or Tie)");
    if (seen[index_of(*type)]) schema_error("duplicate verdict for " + it.key());
    seen[index_of(*type)] = true;
    out[index_of(*type)] = *v;
  }
  for (CreativityType t : kAllTypes) {
    if (!seen[index_of(t)]) schema_error("missing verdict for " + std::string(to_string(t)));
  }
  return out;
}

PreferenceLabel label_from_json(const Json& j) {
  PreferenceLabel r;
  r.pair_id = require_string(j, "pair_id");
  r.annotator_id = require_string(j, "annotator_id");
  r.verdicts = verdicts_from_json(require(j, "verdicts"));
  r.timestamp = optional_string(j, "timestamp").value_or("");
  r.prompt_version = require_string(j, "prompt_version");
  r.extra = extra_fields(j, {"pair_id", "annotator_id", "verdicts", "timestamp", "prompt_version"});
  return r;
}

ManifestRecord manifest_record_from_json(const Json& j) {
  if (!j.is_object()) schema_error("record is not a JSON object");
  if (j.contains("image_a")) return pair_from_json(j);
  if (j.contains("text")) return prompt_from_json(j);
  if (j.contains("uri")) return image_from_json(j);
  schema_error("cannot tell record type (expected image, prompt or pair fields)");
}

Json to_json(const ManifestRecord& r) {
  return std::visit([](const auto& rec) { return to_json(rec); }, r);
}

const std::string& record_id(const ManifestRecord& r) {
  struct Visitor {
    const std::string& operator()(const ImageRecord& x) const { return x.image_id; }
    const std::string& operator()(const PromptRecord& x) const { return x.prompt_id; }
    const std::string& operator()(const PairRecord& x) const { return x.pair_id; }
  };
  return std::visit(Visitor{}, r);
}

// ---------------------------------------------------------------------------

std::string make_image_id(std::string_view content, std::uint64_t serial) {
  std::string suffix = std::to_string(serial);
  if (suffix.size() < 4) suffix.insert(0, 4 - suffix.size(), '0');
  return "img-" + to_hex(fnv1a(content), 12) + "-" + suffix;
}

std::string make_pair_id(std::string_view image_a, std::string_view image_b, PairContext context,
                         std::uint64_t seed, std::size_t occurrence) {
  Fnv1a h;
  h.update(image_a).update("\x1f").update(image_b).update("\x1f").update(to_string(context));
  h.update("\x1f").update(std::to_string(seed));
  std::string id = (context == PairContext::benchmark ? "pb-" : "pt-") + to_hex(h.digest(), 12);
  if (occurrence > 0) id += "-" + std::to_string(occurrence);
  return id;
}

std::string image_content_hash(std::string_view image_id) {
  if (image_id.starts_with("img-") && image_id.size() >= 16) return std::string(image_id.substr(4, 12));
  return std::string(image_id);
}

// ---------------------------------------------------------------------------

ValidationReport validate_manifest(const std::vector<ManifestRecord>& records) {
  std::set<Violation> found;
  std::map<std::string, const ImageRecord*> images;
  std::map<std::string, const PromptRecord*> prompts;
  std::set<std::string> pair_ids;

  auto add = [&](const std::string& id, const char* code, std::string message) {
    found.insert(Violation{id, code, std::move(message)});
  };

  for (const auto& rec : records) {
    const std::string& id = record_id(rec);
    if (id.empty()) add("<missing>", "missing-id", "record without identifier");
    if (const auto* img = std::get_if<ImageRecord>(&rec)) {
      if (!images.emplace(id, img).second) add(id, "duplicate-id", "duplicate image_id " + id);
    } else if (const auto* p = std::get_if<PromptRecord>(&rec)) {
      if (!prompts.emplace(id, p).second) add(id, "duplicate-id", "duplicate prompt_id " + id);
    } else if (std::holds_alternative<PairRecord>(rec)) {
      if (!pair_ids.insert(id).second) add(id, "duplicate-id", "duplicate pair_id " + id);
    }
  }

  for (const auto& rec : records) {
    if (const auto* pair = std::get_if<PairRecord>(&rec)) {
      if (pair->image_a == pair->image_b) add(pair->pair_id, "self-pair", "self-pair on " + pair->image_a);
      if (!images.empty()) {
        for (const auto* endpoint : {&pair->image_a, &pair->image_b}) {
          if (!images.contains(*endpoint)) {
            add(pair->pair_id, "unknown-image", "pair references unknown image " + *endpoint);
          }
        }
      }
    } else if (const auto* p = std::get_if<PromptRecord>(&rec)) {
      if (p->scope == PromptScope::object_agnostic && p->object_category) {
        add(p->prompt_id, "scope-object", "object-agnostic prompt carries object_category");
      }
      if (p->scope == PromptScope::object_specific && !p->object_category) {
        add(p->prompt_id, "scope-object", "object-specific prompt lacks object_category");
      }
      if (p->scope != PromptScope::normal && !p->target_type) {
        add(p->prompt_id, "missing-type", "creative prompt lacks target_type");
      }
    } else if (const auto* img = std::get_if<ImageRecord>(&rec)) {
      if (!img->prompt_id) continue;
      auto it = prompts.find(*img->prompt_id);
      if (it == prompts.end()) continue;
      const bool from_normal = it->second->scope == PromptScope::normal;
      if (from_normal != (img->kind == ImageKind::normal)) {
        add(img->image_id, "kind-mismatch",
            "image kind " + std::string(to_string(img->kind)) + " disagrees with prompt scope " +
                std::string(to_string(it->second->scope)));
      }
    }
  }

  // Bank completeness: every object that has specific prompts needs, per axis
  // type, 8 agnostic templates and 12 specific prompts.
  std::map<CreativityType, int> agnostic;
  std::map<std::pair<std::string, CreativityType>, int> specific;
  std::set<std::string> objects;
  for (const auto& [id, p] : prompts) {
    if (!p->target_type) continue;
    if (p->scope == PromptScope::object_agnostic) ++agnostic[*p->target_type];
    if (p->scope == PromptScope::object_specific && p->object_category) {
      ++specific[{*p->object_category, *p->target_type}];
      objects.insert(*p->object_category);
    }
  }
  for (const auto& obj : objects) {
    for (CreativityType t : kAxisTypes) {
      const std::string bank = "bank:" + obj + ":" + std::string(to_string(t));
      const int a = agnostic[t];
      const int s = specific[{obj, t}];
      if (a != 8) {
        add(bank, "bank-incomplete",
            "bank incomplete " + std::to_string(a) + "/8 object-agnostic prompts for (" + obj + ", " +
                std::string(to_string(t)) + ")");
      }
      if (s != 12) {
        add(bank, "bank-incomplete",
            "bank incomplete " + std::to_string(s) + "/12 object-specific prompts for (" + obj + ", " +
                std::string(to_string(t)) + ")");
      }
    }
  }

  return {found.begin(), found.end()};
}

Json to_json(const ValidationReport& report) {
  Json arr = Json::array();
  for (const auto& v : report) {
    arr.push_back({{"record_id", v.record_id}, {"code", v.code}, {"message", v.message}});
  }
  return arr;
}

// ---------------------------------------------------------------------------

JsonlReadResult read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open " + path.string());
  JsonlReadResult out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    try {
      out.lines.push_back({n, Json::parse(line)});
    } catch (const Json::parse_error& e) {
      out.errors.emplace_back(n, e.what());
    }
  }
  return out;
}

std::vector<Json> read_jsonl_strict(const std::filesystem::path& path) {
  auto result = read_jsonl(path);
  if (!result.errors.empty()) {
    const auto& [line, msg] = result.errors.front();
    throw Error("parse", path.string() + ":" + std::to_string(line) + ": " + msg);
  }
  std::vector<Json> rows;
  rows.reserve(result.lines.size());
  for (auto& l : result.lines) rows.push_back(std::move(l.value));
  return rows;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows) {
  std::ostringstream out;
  for (const auto& r : rows) out << r.dump() << '\n';
  write_text(path, out.str());
}

namespace {

template <typename Decode>
auto read_records(const std::filesystem::path& path, Decode decode) {
  std::vector<decltype(decode(Json{}))> out;
  auto result = read_jsonl(path);
  if (!result.errors.empty()) {
    const auto& [line, msg] = result.errors.front();
    throw Error("parse", path.string() + ":" + std::to_string(line) + ": " + msg);
  }
  for (const auto& l : result.lines) {
    try {
      out.push_back(decode(l.value));
    } catch (const Error& e) {
      throw Error(e.kind(), path.string() + ":" + std::to_string(l.line_number) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

std::vector<ImageRecord> read_images(const std::filesystem::path& path) {
  return read_records(path, image_from_json);
}
std::vector<PromptRecord> read_prompts(const std::filesystem::path& path) {
  return read_records(path, prompt_from_json);
}
std::vector<PairRecord> read_pairs(const std::filesystem::path& path) {
  return read_records(path, pair_from_json);
}
std::vector<PreferenceLabel> read_labels(const std::filesystem::path& path) {
  return read_records(path, label_from_json);
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io", "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string instantiate_template(std::string_view text, std::string_view object) {
  std::string out;
  out.reserve(text.size() + object.size());
  std::size_t pos = 0;
  while (true) {
    const auto hit = text.find("{obj}", pos);
    if (hit == std::string_view::npos) break;
    out.append(text.substr(pos, hit - pos));
    out.append(object);
    pos = hit + 5;
  }
  out.append(text.substr(pos));
  return out;
}

}  // namespace creward
