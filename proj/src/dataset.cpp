#include "creward/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <sstream>

#include "creward/hash.hpp"
#include "creward/image.hpp"
#include "creward/parallel.hpp"
#include "creward/rng.hpp"
#include "prompt_data.hpp"

namespace creward {

namespace {

std::vector<PromptRecord> parse_prompt_jsonl(const char* text) {
  std::vector<PromptRecord> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(prompt_from_json(Json::parse(line)));
  }
  return out;
}

}  // namespace

std::vector<PromptRecord> agnostic_templates() { return parse_prompt_jsonl(detail::kAgnosticTemplatesJsonl); }

std::optional<std::vector<PromptRecord>> bundled_specific_prompts(std::string_view object) {
  if (object == "chair") return parse_prompt_jsonl(detail::kChairSpecificJsonl);
  return std::nullopt;
}

std::vector<PromptRecord> assessment_prompts() { return parse_prompt_jsonl(detail::kAssessmentPromptsJsonl); }

std::vector<PromptRecord> guidance_prompts() { return parse_prompt_jsonl(detail::kGuidancePromptsJsonl); }

const std::vector<std::string>& guidance_objects() {
  static const std::vector<std::string> kObjects = {
      "airplane", "backpack",   "bed",      "bench",       "bicycle", "boat",  "bookshelf",
      "bus",      "cup",        "kite",     "motorcycle",  "scissors", "spaceship", "table",
      "teapot",   "teddy bear", "toothbrush", "train",     "truck",   "umbrella"};
  return kObjects;
}

const std::vector<std::string>& benchmark_objects() {
  static const std::vector<std::string> kObjects = {"chair", "car", "handbag", "bowl", "vase"};
  return kObjects;
}

PromptRecord normal_prompt(std::string_view object) {
  PromptRecord p;
  p.prompt_id = std::string(object) + "-normal";
  p.text = "a " + std::string(object);
  p.scope = PromptScope::normal;
  p.object_category = std::string(object);
  return p;
}

std::vector<PromptRecord> PromptBank::all() const {
  std::vector<PromptRecord> out = creative;
  out.push_back(normal);
  return out;
}

PromptBank build_prompt_bank(std::string_view object, const std::optional<std::vector<PromptRecord>>& specific) {
  PromptBank bank;
  bank.object = std::string(object);
  bank.normal = normal_prompt(object);
  std::vector<PromptRecord> spec;
  if (specific) {
    spec = *specific;
  } else if (auto bundled = bundled_specific_prompts(object)) {
    spec = std::move(*bundled);
  } else {
    throw Error("bank", "no bundled object-specific prompts for '" + std::string(object) +
                            "'; supply 12 per type with --specific");
  }
  auto templates = agnostic_templates();
  for (CreativityType t : kAxisTypes) {
    int agnostic = 0;
    for (const auto& p : templates) {
      if (p.target_type == t) {
        bank.creative.push_back(p);
        ++agnostic;
      }
    }
    int count = 0;
    for (const auto& p : spec) {
      if (p.target_type != t) continue;
      if (p.scope != PromptScope::object_specific || p.object_category != std::string(object)) {
        throw Error("bank", "prompt " + p.prompt_id + " is not object-specific for " + std::string(object));
      }
      bank.creative.push_back(p);
      ++count;
    }
    if (agnostic != 8 || count != 12) {
      throw Error("bank", "bank incomplete for (" + std::string(object) + ", " + std::string(to_string(t)) +
                              "): " + std::to_string(agnostic) + "/8 agnostic, " + std::to_string(count) +
                              "/12 specific");
    }
  }
  return bank;
}

// ---------------------------------------------------------------------------

std::vector<PairRecord> sample_benchmark_pairs(const BenchmarkSpec& spec) {
  const auto n = static_cast<long long>(spec.images.size());
  const long long d = spec.appearances_per_image;
  if (d < 0) throw Error("infeasible", "appearances_per_image must be non-negative");
  if (static_cast<long long>(spec.n_pairs) * 2 != n * d) {
    throw Error("infeasible", "parity check failed: n_pairs*2 = " + std::to_string(spec.n_pairs * 2) +
                                  " but images*appearances = " + std::to_string(n * d));
  }
  if (d >= n && d > 0) {
    throw Error("infeasible", "appearances (" + std::to_string(d) + ") must be below the image count (" +
                                  std::to_string(n) + ") for a simple pairing");
  }
  if (std::set<std::string>(spec.images.begin(), spec.images.end()).size() != spec.images.size()) {
    throw Error("infeasible", "benchmark image list contains duplicates");
  }

  using Edge = std::pair<int, int>;
  auto key = [](Edge e) { return e.first < e.second ? e : Edge{e.second, e.first}; };
  Rng rng(spec.seed);
  std::vector<Edge> edges;

  while (true) {
    std::vector<int> stubs;
    stubs.reserve(static_cast<std::size_t>(n * d));
    for (int i = 0; i < n; ++i) {
      for (long long k = 0; k < d; ++k) stubs.push_back(i);
    }
    rng.shuffle(std::span(stubs));
    edges.clear();
    std::map<Edge, int> multiplicity;
    for (std::size_t i = 0; i + 1 < stubs.size(); i += 2) {
      edges.emplace_back(stubs[i], stubs[i + 1]);
      ++multiplicity[key(edges.back())];
    }
    auto is_bad = [&](const Edge& e) { return e.first == e.second || multiplicity[key(e)] > 1; };

    int swaps = 0;
    while (swaps < kMaxRepairSwaps) {
      std::vector<std::size_t> bad;
      for (std::size_t i = 0; i < edges.size(); ++i) {
        if (is_bad(edges[i])) bad.push_back(i);
      }
      if (bad.empty()) break;
      ++swaps;
      const std::size_t i = bad[rng.uniform_index(bad.size())];
      const std::size_t j = rng.uniform_index(edges.size());
      if (i == j) continue;
      const auto [u, v] = edges[i];
      const auto [x, y] = edges[j];
      Edge e1{u, x};
      Edge e2{v, y};
      if (rng.bernoulli(0.5)) {
        e1 = {u, y};
        e2 = {v, x};
      }
      if (e1.first == e1.second || e2.first == e2.second || key(e1) == key(e2)) continue;
      --multiplicity[key(edges[i])];
      --multiplicity[key(edges[j])];
      if (multiplicity[key(e1)] > 0 || multiplicity[key(e2)] > 0) {
        ++multiplicity[key(edges[i])];
        ++multiplicity[key(edges[j])];
        continue;
      }
      edges[i] = e1;
      edges[j] = e2;
      ++multiplicity[key(e1)];
      ++multiplicity[key(e2)];
    }
    if (std::none_of(edges.begin(), edges.end(), is_bad)) break;
  }

  rng.shuffle(std::span(edges));
  std::vector<PairRecord> pairs;
  pairs.reserve(edges.size());
  for (auto [u, v] : edges) {
    if (rng.bernoulli(0.5)) std::swap(u, v);
    PairRecord p;
    p.image_a = spec.images[static_cast<std::size_t>(u)];
    p.image_b = spec.images[static_cast<std::size_t>(v)];
    p.context = PairContext::benchmark;
    p.pair_id = make_pair_id(p.image_a, p.image_b, p.context, spec.seed);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<PairRecord> sample_training_pairs(const TrainingPairSpec& spec) {
  if (spec.prompt_ids.size() < 2) throw Error("infeasible", "training pairs need at least two prompts");
  for (const auto& id : spec.prompt_ids) {
    auto it = spec.images_per_prompt.find(id);
    if (it == spec.images_per_prompt.end() || it->second.empty()) {
      throw Error("empty-prompt", "prompt " + id + " has no generated images");
    }
  }
  Rng rng(spec.seed);
  std::map<std::pair<std::string, std::string>, std::size_t> seen;
  std::vector<PairRecord> pairs;
  pairs.reserve(static_cast<std::size_t>(std::max(spec.n_pairs_per_object, 0)));
  const std::size_t m = spec.prompt_ids.size();
  for (int k = 0; k < spec.n_pairs_per_object; ++k) {
    const std::size_t pa = rng.uniform_index(m);
    std::size_t pb = rng.uniform_index(m - 1);
    if (pb >= pa) ++pb;
    const auto& imgs_a = spec.images_per_prompt.at(spec.prompt_ids[pa]);
    const auto& imgs_b = spec.images_per_prompt.at(spec.prompt_ids[pb]);
    PairRecord p;
    p.image_a = imgs_a[rng.uniform_index(imgs_a.size())];
    p.image_b = imgs_b[rng.uniform_index(imgs_b.size())];
    p.context = PairContext::training;
    const std::size_t occurrence = seen[{p.image_a, p.image_b}]++;
    p.pair_id = make_pair_id(p.image_a, p.image_b, p.context, spec.seed, occurrence);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

TrainingPairSpec training_spec_from_images(const std::vector<ImageRecord>& images,
                                           const std::vector<std::string>& prompt_ids, std::string_view object,
                                           int n_pairs, std::uint64_t seed) {
  TrainingPairSpec spec;
  spec.prompt_ids = prompt_ids;
  spec.n_pairs_per_object = n_pairs;
  spec.seed = seed;
  for (const auto& id : prompt_ids) spec.images_per_prompt[id];
  for (const auto& img : images) {
    if (img.object_category != object || !img.prompt_id) continue;
    auto it = spec.images_per_prompt.find(*img.prompt_id);
    if (it != spec.images_per_prompt.end()) it->second.push_back(img.image_id);
  }
  return spec;
}

// ---------------------------------------------------------------------------

GenerationOutput FixtureGenerator::generate(const GenerationRequest& request) {
  std::filesystem::create_directories(request.out_dir);
  GenerationOutput out;
  out.source_model = model_;
  const bool plain = request.prompt_text.find(kCleanBackgroundSuffix) == std::string::npos;
  for (int i = 0; i < request.count; ++i) {
    const std::uint64_t seed =
        Fnv1a{}.update(request.prompt_text).update(std::to_string(request.seed)).update(std::to_string(i)).digest();
    const Image img = synthesize_image(seed, size_, plain);
    auto path = request.out_dir / ("sample_" + std::to_string(i) + ".ppm");
    save_image(path, img);
    out.files.push_back(std::move(path));
  }
  return out;
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

}  // namespace

GenerationOutput CommandGenerator::generate(const GenerationRequest& request) {
  std::filesystem::create_directories(request.out_dir);
  const auto request_path = request.out_dir / "request.json";
  const Json req = {{"prompt", request.prompt_text},
                    {"seed", request.seed},
                    {"count", request.count},
                    {"out_dir", request.out_dir.string()}};
  write_text(request_path, req.dump());
  const std::string cmd = command_ + " " + shell_quote(request_path.string());
  const int status = std::system(cmd.c_str());
  if (status != 0) throw Error("generator", "generator command exited with status " + std::to_string(status));
  const auto sidecar_path = request.out_dir / "sidecar.json";
  if (!std::filesystem::exists(sidecar_path)) throw Error("generator", "generator wrote no sidecar.json");
  const Json sidecar = Json::parse(read_text(sidecar_path));
  GenerationOutput out;
  out.source_model = sidecar.value("source_model", std::string("external"));
  for (const auto& name : sidecar.at("images")) {
    out.files.push_back(request.out_dir / name.get<std::string>());
  }
  return out;
}

std::string dispatch_text(const PromptRecord& prompt, std::string_view object) {
  std::string text = instantiate_template(prompt.text, object);
  if (prompt.scope != PromptScope::normal) text += kCleanBackgroundSuffix;
  return text;
}

GenerationReport generate_images(const std::vector<PromptRecord>& prompts, std::string_view object,
                                 GeneratorAdapter& generator, int n_per_prompt,
                                 const std::filesystem::path& out_dir, std::uint64_t seed, std::size_t workers) {
  struct Slot {
    GenerationOutput output;
    std::optional<std::string> error;
  };
  std::vector<Slot> slots(prompts.size());
  parallel_for(prompts.size(), workers, [&](std::size_t i) {
    const auto& prompt = prompts[i];
    GenerationRequest req;
    req.prompt_text = dispatch_text(prompt, object);
    req.seed = Fnv1a{}.update(prompt.prompt_id).update(object).update(std::to_string(seed)).digest();
    req.count = n_per_prompt;
    req.out_dir = out_dir / std::string(object) / prompt.prompt_id;
    try {
      slots[i].output = generator.generate(req);
      if (static_cast<int>(slots[i].output.files.size()) < n_per_prompt) {
        slots[i].error = "generator returned " + std::to_string(slots[i].output.files.size()) + " of " +
                         std::to_string(n_per_prompt) + " images";
      }
    } catch (const std::exception& e) {
      slots[i].error = e.what();
      // Keep whatever the generator left on disk.
      std::error_code ec;
      if (std::filesystem::is_directory(req.out_dir, ec)) {
        std::vector<std::filesystem::path> files;
        for (const auto& entry : std::filesystem::directory_iterator(req.out_dir)) {
          if (entry.path().extension() == ".ppm") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        slots[i].output.files = std::move(files);
      }
    }
  });

  GenerationReport report;
  std::uint64_t serial = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto& prompt = prompts[i];
    for (const auto& file : slots[i].output.files) {
      ImageRecord rec;
      rec.image_id = make_image_id(read_text(file), serial++);
      rec.object_category = std::string(object);
      rec.source_model = slots[i].output.source_model.empty() ? "unknown" : slots[i].output.source_model;
      rec.prompt_id = prompt.prompt_id;
      rec.uri = file.string();
      rec.kind = prompt.scope == PromptScope::normal ? ImageKind::normal : ImageKind::creative;
      report.images.push_back(std::move(rec));
    }
    if (slots[i].error) report.failures.push_back({prompt.prompt_id, *slots[i].error});
  }
  return report;
}

}  // namespace creward
