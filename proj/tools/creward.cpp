// creward: command-line front end for the dataset, annotation, reward,
// application and slider pipelines, plus the annotation/gallery service.
//
// Exit status: 0 success, 1 error, 2 usage error, 3 partial failure (the
// per-item failures are listed on stderr and in --failures when given).

#include <csignal>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "creward/annotate.hpp"
#include "creward/core.hpp"
#include "creward/dataset.hpp"
#include "creward/hash.hpp"
#include "creward/image.hpp"
#include "creward/metrics.hpp"
#include "creward/reward.hpp"
#include "creward/service.hpp"
#include "creward/slider.hpp"
#include "creward/xapps.hpp"

// Last: resolv.h, pulled in by httplib, defines a `_res` macro Eigen trips on.
#include <httplib.h>

namespace fs = std::filesystem;
using namespace creward;

namespace {

struct Globals {
  std::string timestamp;
  std::size_t workers = 4;

  std::function<std::string()> clock() const {
    if (timestamp.empty()) return default_timestamp;
    return [ts = timestamp] { return ts; };
  }
};

Json error_json(const std::string& kind, const std::string& message) {
  return {{"error", {{"kind", kind}, {"message", message}}}};
}

int finish(const std::vector<ItemFailure>& failures, const std::string& failures_path) {
  if (failures.empty()) return 0;
  Json items = Json::array();
  for (const auto& f : failures) items.push_back({{"id", f.id}, {"message", f.message}});
  if (!failures_path.empty()) write_text(failures_path, Json{{"failures", items}}.dump(1) + "\n");
  Json err = error_json("partial", std::to_string(failures.size()) + " item(s) failed");
  err["error"]["failures"] = items;
  std::cerr << err.dump() << "\n";
  return 3;
}

void write_json(const std::string& path, const Json& j) { write_text(path, j.dump(1) + "\n"); }

std::vector<PreferenceLabel> read_label_files(const std::vector<std::string>& paths) {
  std::vector<PreferenceLabel> out;
  for (const auto& p : paths) {
    auto labels = read_labels(p);
    out.insert(out.end(), std::make_move_iterator(labels.begin()), std::make_move_iterator(labels.end()));
  }
  return out;
}

std::pair<std::string, std::string> split_assignment(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw Error("usage", "expected name=path, got '" + s + "'");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view salt) {
  return Fnv1a{}.update(salt).update(std::to_string(seed)).digest();
}

// ---------------------------------------------------------------------------
// Backbone selection. Only the toy backbone ships; its parameters travel with
// every checkpoint so downstream commands rebuild the same encoder.

struct BackboneOpts {
  std::uint64_t seed = 0;
  int dim = 64;
  int grid = 8;

  void add(CLI::App* cmd) {
    cmd->add_option("--backbone-seed", seed, "Toy backbone projection seed");
    cmd->add_option("--backbone-dim", dim, "Toy backbone embedding size")->check(CLI::PositiveNumber);
    cmd->add_option("--backbone-grid", grid, "Toy backbone grid resolution")->check(CLI::PositiveNumber);
  }
  Json params() const { return {{"kind", "toy"}, {"seed", seed}, {"dim", dim}, {"grid", grid}}; }
};

std::unique_ptr<EmbeddingBackbone> backbone_from_params(const Json& params) {
  if (params.value("kind", "") != "toy") throw Error("backbone", "unsupported backbone " + params.dump());
  return std::make_unique<ToyBackbone>(params.at("seed").get<std::uint64_t>(), params.at("dim").get<int>(),
                                       params.at("grid").get<int>());
}

struct LoadedHead {
  std::unique_ptr<EmbeddingBackbone> backbone;
  Checkpoint checkpoint;
};

LoadedHead load_head(const std::string& path) {
  LoadedHead out;
  out.backbone = backbone_from_params(checkpoint_backbone(path).value("params", Json::object()));
  out.checkpoint = load_checkpoint(path, *out.backbone);
  return out;
}

std::vector<ImageRecord> images_in_pairs(const std::vector<ImageRecord>& images, const std::vector<PairRecord>& pairs) {
  std::set<std::string> used;
  for (const auto& p : pairs) {
    used.insert(p.image_a);
    used.insert(p.image_b);
  }
  std::vector<ImageRecord> out;
  for (const auto& img : images) {
    if (used.contains(img.image_id)) out.push_back(img);
  }
  return out;
}

std::vector<ItemFailure> missing_images(const std::vector<ImageRecord>& images, const std::vector<PairRecord>& pairs) {
  std::set<std::string> known;
  for (const auto& img : images) known.insert(img.image_id);
  std::set<std::string> missing;
  for (const auto& p : pairs) {
    for (const auto* id : {&p.image_a, &p.image_b}) {
      if (!known.contains(*id)) missing.insert(*id);
    }
  }
  std::vector<ItemFailure> out;
  for (const auto& id : missing) out.push_back({id, "image not in manifest"});
  return out;
}

// ---------------------------------------------------------------------------
// gen-prompts

struct GenPromptsOpts {
  std::string set = "bank";
  std::string object = "chair";
  std::string specific;
  std::string out;
};

int run_gen_prompts(const GenPromptsOpts& o) {
  std::vector<PromptRecord> prompts;
  if (o.set == "bank") {
    std::optional<std::vector<PromptRecord>> specific;
    if (!o.specific.empty()) specific = read_prompts(o.specific);
    prompts = build_prompt_bank(o.object, specific).all();
  } else if (o.set == "assessment") {
    prompts = assessment_prompts();
  } else {
    prompts = guidance_prompts();
  }
  write_jsonl(o.out, to_json_rows(prompts));
  return 0;
}

// ---------------------------------------------------------------------------
// gen-images

struct GenImagesOpts {
  std::string prompts;
  std::string object = "chair";
  int n = 20;
  std::string out_dir;
  std::string manifest;
  std::uint64_t seed = 0;
  int size = 32;
  std::string model = "fixture";
  std::string command;
  std::string failures;
};

int run_gen_images(const GenImagesOpts& o, const Globals& g) {
  const auto prompts = read_prompts(o.prompts);
  std::unique_ptr<GeneratorAdapter> generator;
  if (o.command.empty()) generator = std::make_unique<FixtureGenerator>(o.size, o.model);
  else generator = std::make_unique<CommandGenerator>(o.command);
  const auto report = generate_images(prompts, o.object, *generator, o.n, o.out_dir, o.seed, g.workers);
  write_jsonl(o.manifest, to_json_rows(report.images));
  std::vector<ItemFailure> failures;
  for (const auto& f : report.failures) failures.push_back({f.prompt_id, f.message});
  return finish(failures, o.failures);
}

// ---------------------------------------------------------------------------
// pairs

struct PairsOpts {
  bool benchmark = false;
  bool training = false;
  std::string images;
  std::string object;
  std::uint64_t seed = 0;
  int appearances = 8;
  int n_pairs = 0;
  std::string out;
};

int run_pairs(const PairsOpts& o) {
  if (o.benchmark == o.training) throw Error("usage", "pass exactly one of --benchmark or --training");
  const auto images = read_images(o.images);
  std::map<std::string, std::vector<const ImageRecord*>> by_object;
  for (const auto& img : images) {
    if (o.object.empty() || img.object_category == o.object) by_object[img.object_category].push_back(&img);
  }
  if (by_object.empty()) throw Error("empty", "no images" + (o.object.empty() ? "" : " for object " + o.object));

  std::vector<PairRecord> pairs;
  for (const auto& [object, group] : by_object) {
    const std::uint64_t seed = derive_seed(o.seed, object);
    std::vector<PairRecord> part;
    if (o.benchmark) {
      BenchmarkSpec spec;
      for (const auto* img : group) spec.images.push_back(img->image_id);
      spec.appearances_per_image = o.appearances;
      spec.n_pairs = o.n_pairs > 0 ? o.n_pairs
                                   : static_cast<int>(spec.images.size()) * o.appearances / 2;
      spec.seed = seed;
      part = sample_benchmark_pairs(spec);
    } else {
      std::set<std::string> prompt_ids;
      for (const auto* img : group) {
        if (img->prompt_id && img->kind == ImageKind::creative) prompt_ids.insert(*img->prompt_id);
      }
      const int n = o.n_pairs > 0 ? o.n_pairs : 1000;
      part = sample_training_pairs(training_spec_from_images(
          images, std::vector<std::string>(prompt_ids.begin(), prompt_ids.end()), object, n, seed));
    }
    pairs.insert(pairs.end(), part.begin(), part.end());
  }
  write_jsonl(o.out, to_json_rows(pairs));
  return 0;
}

// ---------------------------------------------------------------------------
// annotate

struct AnnotateOpts {
  std::string pairs;
  std::string images;
  std::string image_root;
  std::string labels;
  std::string ingest;
  std::string annotator = "mock";
  std::string prompt_version = std::string(kDefaultPromptVersion);
  int retries = 2;
  int backoff_ms = 100;
  int min_interval_ms = 0;
  bool swapped = false;
  std::string failures;
  // mock
  std::string mock_id = "mock-lvlm";
  std::uint64_t mock_seed = 0;
  double tie_fraction = 0.1;
  BackboneOpts backbone;
  // http
  std::string url;
  std::string path = "/v1/annotate";
  std::string model = "lvlm";
  std::string api_key_env;
  int timeout_s = 60;
};

int run_annotate(const AnnotateOpts& o, const Globals& g) {
  LabelStore store{fs::path(o.labels)};
  if (!o.ingest.empty()) {
    const IngestResult result = ingest_human_labels(o.ingest, store);
    std::vector<ItemFailure> failures;
    for (const auto& issue : result.issues) {
      failures.push_back({"line " + std::to_string(issue.line_number), issue.code + ": " + issue.message});
    }
    std::cout << Json{{"appended", result.appended.size()}, {"issues", result.issues.size()}}.dump() << "\n";
    return finish(failures, o.failures);
  }
  if (o.pairs.empty() || o.images.empty()) throw Error("usage", "--pairs and --images are required");

  const auto pairs = read_pairs(o.pairs);
  const auto images = read_images(o.images);
  std::map<std::string, fs::path> path_of;
  for (const auto& img : images) {
    fs::path p(img.uri);
    path_of[img.image_id] = p.is_relative() && !o.image_root.empty() ? fs::path(o.image_root) / p : p;
  }
  auto load_bytes = [&](const std::string& id) {
    auto it = path_of.find(id);
    if (it == path_of.end()) throw Error("missing-image", "image " + id + " not in manifest");
    return read_text(it->second);
  };
  auto uri_of = [&](const std::string& id) {
    auto it = path_of.find(id);
    return it == path_of.end() ? id : it->second.string();
  };

  std::unique_ptr<EmbeddingBackbone> backbone;
  std::unique_ptr<AnnotatorClient> client;
  if (o.annotator == "mock") {
    backbone = backbone_from_params(o.backbone.params());
    const auto used = images_in_pairs(images, pairs);
    const EmbedResult emb = embed_images(*backbone, used, file_loader(o.image_root), g.workers);
    if (!emb.failures.empty()) return finish(emb.failures, o.failures);
    HiddenScorer scorer = HiddenScorer::random(backbone->dim(), o.mock_seed);
    const TypeScores margins = scorer.tie_margins(pairs, emb.embeddings, o.tie_fraction);
    client = std::make_unique<MockAnnotator>(o.mock_id, *backbone, std::move(scorer), margins);
  } else {
    if (o.url.empty()) throw Error("usage", "--url is required for the http annotator");
    HttpAnnotatorClient::Config c;
    c.base_url = o.url;
    c.path = o.path;
    c.model = o.model;
    c.api_key_env = o.api_key_env;
    c.timeout = std::chrono::seconds(o.timeout_s);
    client = std::make_unique<HttpAnnotatorClient>(c);
  }

  AnnotateOptions opts;
  opts.prompt_version = o.prompt_version;
  opts.retries = o.retries;
  opts.backoff = std::chrono::milliseconds(o.backoff_ms);
  opts.workers = g.workers;
  opts.min_request_interval = std::chrono::milliseconds(o.min_interval_ms);
  opts.order_swapped_duplicates = o.swapped;
  opts.clock = g.clock();
  const AnnotateDelta delta = annotate_pairs(pairs, *client, store, load_bytes, opts, uri_of);

  std::cout << Json{{"appended", delta.appended.size()},
                    {"cache_hits", delta.cache_hits},
                    {"client_calls", delta.client_calls},
                    {"failures", delta.failures.size()}}
                   .dump()
            << "\n";
  std::vector<ItemFailure> failures;
  for (const auto& f : delta.failures) {
    failures.push_back({f.pair_id + "/" + f.annotator_id,
                        f.message + " (attempts: " + std::to_string(f.attempts) + ")" +
                            (f.raw_response.empty() ? "" : "; raw: " + f.raw_response)});
  }
  return finish(failures, o.failures);
}

// ---------------------------------------------------------------------------
// metrics

struct MetricsOpts {
  std::string pairs;
  std::string images;
  std::vector<std::string> labels;
  std::vector<std::string> candidates;
  std::vector<std::string> candidate_scores;
  std::string report;
  std::string csv;
};

int run_metrics(const MetricsOpts& o) {
  const auto pairs = read_pairs(o.pairs);
  const auto images = read_images(o.images);
  const auto human = read_label_files(o.labels);
  std::vector<CandidateSource> sources;
  for (const auto& c : o.candidates) {
    auto [name, path] = split_assignment(c);
    sources.push_back({name, read_labels(path)});
  }
  for (const auto& c : o.candidate_scores) {
    auto [name, path] = split_assignment(c);
    sources.push_back({name, labels_from_scores(pairs, read_scores(path), name)});
  }
  const Json report = metrics_report(pairs, images, human, sources);
  write_json(o.report, report);
  if (!o.csv.empty()) write_text(o.csv, metrics_report_csv(report));
  return 0;
}

// ---------------------------------------------------------------------------
// train / eval / score

struct TrainOpts {
  std::string pairs;
  std::vector<std::string> labels;
  std::string images;
  std::string image_root;
  std::string out;
  std::string report;
  std::string split;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  std::uint64_t split_seed = 0;
  int epochs = 20;
  int batch = 64;
  double lr = 1e-4;
  double dropout = 0.2;
  bool no_standardize = false;
  std::uint64_t seed = 0;
  BackboneOpts backbone;
  std::string failures;
};

int run_train(const TrainOpts& o, const Globals& g) {
  const auto pairs = read_pairs(o.pairs);
  const auto images = images_in_pairs(read_images(o.images), pairs);
  const auto labels = read_label_files(o.labels);
  const auto backbone = backbone_from_params(o.backbone.params());

  EmbedResult emb = embed_images(*backbone, images, file_loader(o.image_root), g.workers);
  auto failures = missing_images(images, pairs);
  failures.insert(failures.end(), emb.failures.begin(), emb.failures.end());
  std::vector<std::string> dropped;
  const PreferenceData data = build_preference_data(pairs, labels, emb.embeddings, &dropped);

  Split split;
  if (!o.split.empty()) {
    split = split_from_json(Json::parse(read_text(o.split)));
  } else {
    std::vector<std::string> ids;
    for (const auto& ex : data.examples) ids.push_back(ex.pair_id);
    split = make_split(std::move(ids), o.train_fraction, o.val_fraction, o.split_seed);
  }

  TrainConfig config;
  config.head.input_dim = backbone->dim();
  config.head.dropout = o.dropout;
  config.head.seed = o.seed;
  config.epochs = o.epochs;
  config.batch_size = o.batch;
  config.lr = o.lr;
  config.standardize_inputs = !o.no_standardize;
  config.seed = o.seed;
  const TrainResult result = train_head(data, split, config, backbone.get());

  Json report = to_json(result.report);
  report["dropped_labels"] = dropped.size();
  Checkpoint c{result.head, config, backbone->name(), backbone->dim(), backbone->param_hash(),
               o.backbone.params(), split.hash(), split, report};
  save_checkpoint(o.out, c);
  if (!o.report.empty()) write_json(o.report, report);
  return finish(failures, o.failures);
}

struct EvalOpts {
  std::string checkpoint;
  std::string pairs;
  std::vector<std::string> labels;
  std::string images;
  std::string image_root;
  std::string out;
  std::string failures;
};

int run_eval(const EvalOpts& o, const Globals& g) {
  const auto [backbone, c] = load_head(o.checkpoint);
  const auto pairs = read_pairs(o.pairs);
  const auto images = images_in_pairs(read_images(o.images), pairs);
  EmbedResult emb = embed_images(*backbone, images, file_loader(o.image_root), g.workers);
  auto failures = missing_images(images, pairs);
  failures.insert(failures.end(), emb.failures.begin(), emb.failures.end());
  const PreferenceData data = build_preference_data(pairs, read_label_files(o.labels), emb.embeddings);
  const TypeAccuracy acc = evaluate_head(c.head, data, c.split.test, c.split);
  write_json(o.out, {{"test", to_json(acc)},
                     {"test_pairs", c.split.test.size()},
                     {"split_hash", to_hex(c.split_hash)},
                     {"backbone", backbone->name()}});
  return finish(failures, o.failures);
}

struct ScoreOpts {
  std::string checkpoint;
  std::string images;
  std::string image_root;
  std::string out;
  std::string failures;
};

int run_score(const ScoreOpts& o, const Globals& g) {
  const auto [backbone, c] = load_head(o.checkpoint);
  const ScoreResult result =
      score_images(c.head, *backbone, read_images(o.images), file_loader(o.image_root), g.workers);
  write_scores(o.out, result.scores);
  return finish(result.failures, o.failures);
}

// ---------------------------------------------------------------------------
// filter / assess / cam

struct FilterOpts {
  std::string scores;
  std::string images;
  std::string type = "overall";
  std::size_t k = 30;
  bool no_group = false;
  std::string out;
};

int run_filter(const FilterOpts& o) {
  const FilterResult result = filter_top_k(read_scores(o.scores), read_images(o.images), o.k,
                                           creativity_type_or_throw(o.type), !o.no_group);
  Json j = to_json(result);
  j["type"] = o.type;
  j["k"] = o.k;
  j["group_by_prompt"] = !o.no_group;
  write_json(o.out, j);
  return 0;
}

struct AssessOpts {
  std::string scores;
  std::string images;
  std::string out;
  std::string csv;
  std::string violin_dir;
  int width = 640;
  int height = 360;
};

int run_assess(const AssessOpts& o) {
  std::vector<std::string> warnings;
  const auto groups = group_by_model(read_scores(o.scores), read_images(o.images), &warnings);
  AssessmentReport report = assess_models(groups);
  report.warnings.insert(report.warnings.begin(), warnings.begin(), warnings.end());
  write_json(o.out, to_json(report));
  if (!o.csv.empty()) write_text(o.csv, assessment_csv(report));
  if (!o.violin_dir.empty()) {
    fs::create_directories(o.violin_dir);
    for (CreativityType t : kAllTypes) {
      save_image(fs::path(o.violin_dir) / ("violin_" + std::string(to_string(t)) + ".ppm"),
                 render_violin(report, t, o.width, o.height));
    }
  }
  return 0;
}

struct CamOpts {
  std::string checkpoint;
  std::string image;
  std::vector<std::string> types = {"overall"};
  std::string out;
};

int run_cam(const CamOpts& o) {
  const auto [backbone, c] = load_head(o.checkpoint);
  const Image image = load_image(o.image);
  for (const auto& name : o.types) {
    const AttributionMap map = grad_cam(c.head, *backbone, image, creativity_type_or_throw(name));
    save_attribution(o.types.size() == 1 ? fs::path(o.out) : fs::path(o.out + "_" + name), map);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Sliders. The toy diffusion system is rebuilt from the "system" block each
// slider carries, so apply/eval reproduce the exact base denoiser.

struct SystemOpts {
  int latent_dim = 8;
  int cond_dim = 8;
  std::uint64_t seed = 0;
  double sigma = 0.5;
  int fit_samples = 200;
};

struct ToySystem {
  ToyDiffusion diffusion;
  ToyDenoiser base;
  Json params;
};

ToySystem build_system(const Json& p) {
  ToyDiffusion diffusion(p.at("latent_dim").get<int>(), p.at("cond_dim").get<int>(), p.at("seed").get<std::uint64_t>(),
                         p.at("sigma").get<double>());
  ToyDenoiser base = diffusion.fit_denoiser(p.at("prompts").get<std::vector<std::string>>(),
                                            p.at("fit_samples").get<int>(), p.at("seed").get<std::uint64_t>());
  return {std::move(diffusion), std::move(base), p};
}

struct SliderTrainOpts {
  SliderConfig config;
  std::string type = "overall";
  SystemOpts system;
  std::string reward = "quadratic";
  double target = 1.0;
  std::string checkpoint;
  int image_size = 8;
  std::string out;
  std::string report;
};

int run_slider_train(SliderTrainOpts o) {
  o.config.type = creativity_type_or_throw(o.type);
  Json system = {{"latent_dim", o.system.latent_dim}, {"cond_dim", o.system.cond_dim}, {"seed", o.system.seed},
                 {"sigma", o.system.sigma},           {"fit_samples", o.system.fit_samples},
                 {"prompts", o.config.prompts()}};

  std::optional<LoadedHead> head;
  std::unique_ptr<RewardFunction> reward;
  Json reward_json;
  if (o.reward == "head") {
    if (o.checkpoint.empty()) throw Error("usage", "--checkpoint is required for --reward head");
    head = load_head(o.checkpoint);
    system["latent_dim"] = 3 * o.image_size * o.image_size;
    system["image_size"] = o.image_size;
    reward = std::make_unique<HeadReward>(head->checkpoint.head, *head->backbone, o.config.type, o.image_size,
                                          o.image_size);
    reward_json = {{"kind", "head"}, {"checkpoint", o.checkpoint}, {"type", o.type}};
  } else {
    reward = std::make_unique<QuadraticReward>(Eigen::VectorXd::Constant(o.system.latent_dim, o.target));
    reward_json = {{"kind", "quadratic"}, {"target", o.target}};
  }

  const ToySystem sys = build_system(system);
  const LinearDecoder decoder(sys.diffusion.latent_dim());
  const BaseSampler sample = [&](const std::string& prompt, std::uint64_t seed) {
    return sys.diffusion.sample_x0(prompt, seed);
  };
  SliderResult result = train_slider(o.config, sys.base, decoder, *reward, sys.diffusion.schedule(), sample);
  result.slider.manifest["system"] = system;
  result.slider.manifest["reward"] = reward_json;
  save_slider(o.out, result.slider);
  if (!o.report.empty()) write_json(o.report, to_json(result.report));
  return 0;
}

struct SliderApplyOpts {
  std::vector<std::string> sliders;
  std::vector<double> strengths;
  std::vector<std::string> prompts;
  int samples_per_prompt = 4;
  std::uint64_t seed = 0;
  std::string out;
  std::string image_dir;
};

Image latent_to_image(const Eigen::VectorXd& latent, int size) {
  Image img = make_image(size, size);
  if (static_cast<std::size_t>(latent.size()) != img.rgb.size()) {
    throw Error("dimension", "latent of size " + std::to_string(latent.size()) + " is not a " +
                                 std::to_string(size) + "x" + std::to_string(size) + " RGB image");
  }
  for (Eigen::Index i = 0; i < latent.size(); ++i) img.rgb[static_cast<std::size_t>(i)] = static_cast<float>(latent(i));
  return img;
}

Json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from_json(const Json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

int run_slider_apply(const SliderApplyOpts& o) {
  if (o.sliders.empty()) throw Error("usage", "at least one --slider is required");
  if (!o.strengths.empty() && o.strengths.size() != o.sliders.size()) {
    throw Error("usage", "give one --strength per --slider (or none for 1.0 each)");
  }
  std::vector<Slider> sliders;
  for (const auto& p : o.sliders) sliders.push_back(load_slider(p));
  const Json system = sliders.front().manifest.at("system");
  for (const auto& s : sliders) {
    if (s.manifest.value("system", Json()) != system) throw Error("mismatch", "sliders were trained on different base systems");
  }
  const ToySystem sys = build_system(system);
  std::vector<WeightedSlider> mix;
  for (std::size_t i = 0; i < sliders.size(); ++i) mix.push_back({&sliders[i], o.strengths.empty() ? 1.0 : o.strengths[i]});
  const auto guided = apply_sliders(sys.base, mix);

  const auto prompts = o.prompts.empty() ? system.at("prompts").get<std::vector<std::string>>() : o.prompts;
  const int image_size = system.value("image_size", 0);  // 0: latents are not images
  if (!o.image_dir.empty()) {
    if (!image_size) throw Error("dimension", "--image-dir needs a slider trained on image-shaped latents");
    fs::create_directories(o.image_dir);
  }
  std::vector<Json> rows;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    for (int i = 0; i < o.samples_per_prompt; ++i) {
      const std::uint64_t seed = derive_seed(o.seed, prompts[p] + "#" + std::to_string(i));
      const auto base_latent = sample_latent(sys.base, sys.diffusion.schedule(), prompts[p], seed);
      const auto guided_latent = sample_latent(*guided, sys.diffusion.schedule(), prompts[p], seed);
      const std::string id = "p" + std::to_string(p) + "-s" + std::to_string(i);
      Json row = {{"id", id}, {"prompt", prompts[p]}, {"seed", seed},
                  {"base", vector_json(base_latent)}, {"guided", vector_json(guided_latent)}};
      if (image_size) {
        row["image_size"] = image_size;
        if (!o.image_dir.empty()) {
          save_image(fs::path(o.image_dir) / (id + "_base.ppm"), latent_to_image(base_latent, image_size));
          save_image(fs::path(o.image_dir) / (id + "_guided.ppm"), latent_to_image(guided_latent, image_size));
        }
      }
      rows.push_back(std::move(row));
    }
  }
  write_jsonl(o.out, rows);
  return 0;
}

struct SliderEvalOpts {
  std::string samples;
  std::string checkpoint;
  std::string out;
  std::string csv;
  std::string judge = "none";
  std::uint64_t judge_seed = 0;
  std::string prompt_version = std::string(kDefaultPromptVersion);
  std::string url;
  std::string path = "/v1/annotate";
  std::string model = "lvlm";
  std::string api_key_env;
  std::string failures;
};

int run_slider_eval(const SliderEvalOpts& o) {
  const auto [backbone, c] = load_head(o.checkpoint);
  std::vector<GuidancePair> pairs;
  for (const Json& row : read_jsonl_strict(o.samples)) {
    if (!row.contains("image_size")) throw Error("dimension", "samples are not image-shaped; cannot score them");
    const int size = row["image_size"].get<int>();
    pairs.push_back({row.at("id").get<std::string>(), latent_to_image(vector_from_json(row.at("base")), size),
                     latent_to_image(vector_from_json(row.at("guided")), size)});
  }
  std::unique_ptr<AnnotatorClient> judge;
  if (o.judge == "mock") {
    judge = std::make_unique<MockAnnotator>("mock-judge", *backbone, HiddenScorer::random(backbone->dim(), o.judge_seed),
                                            TypeScores{});
  } else if (o.judge == "http") {
    if (o.url.empty()) throw Error("usage", "--url is required for the http judge");
    judge = std::make_unique<HttpAnnotatorClient>(HttpAnnotatorClient::Config{o.url, o.path, o.model, o.api_key_env});
  }
  const GuidanceReport report = evaluate_guidance(pairs, c.head, *backbone, judge.get(), o.prompt_version);
  write_json(o.out, to_json(report));
  if (!o.csv.empty()) write_text(o.csv, guidance_csv(report));
  return finish(report.failures, o.failures);
}

// ---------------------------------------------------------------------------
// serve

struct ServeOpts {
  std::string config;
  std::string host;
  int port = -1;
};

httplib::Server* g_server = nullptr;

extern "C" void stop_server(int) {
  if (g_server) g_server->stop();
}

int run_serve(const ServeOpts& o, const Globals& g) {
  ServiceConfig cfg = read_service_config(o.config);
  if (!o.host.empty()) cfg.host = o.host;
  if (o.port >= 0) cfg.port = o.port;
  LabelStore store{cfg.labels};
  Service service(read_pairs(cfg.pairs), read_images(cfg.images), store, read_sessions(cfg.sessions), cfg.scores,
                  cfg.image_root, g.clock());
  auto server = make_http_server(service);
  // Port 0 picks a free port; the listening line reports it.
  const int port = cfg.port == 0 ? server->bind_to_any_port(cfg.host) : (server->bind_to_port(cfg.host, cfg.port) ? cfg.port : -1);
  if (port <= 0) throw Error("bind", "cannot listen on " + cfg.host + ":" + std::to_string(cfg.port));
  g_server = server.get();
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  std::cout << Json{{"listening", cfg.host + ":" + std::to_string(port)}, {"port", port}}.dump() << std::endl;
  server->listen_after_bind();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"creward: creativity reward toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--timestamp", g.timestamp, "Fixed timestamp for stored labels (default: SOURCE_DATE_EPOCH or now)");
  app.add_option("--workers", g.workers, "Worker threads")->check(CLI::PositiveNumber);

  std::function<int()> action;
  auto bind = [&](CLI::App* cmd, std::function<int()> fn) { cmd->callback([&action, fn] { action = fn; }); };

  GenPromptsOpts gp;
  auto* c = app.add_subcommand("gen-prompts", "Write a prompt set as JSONL");
  c->add_option("--set", gp.set, "bank | assessment | guidance")->check(CLI::IsMember({"bank", "assessment", "guidance"}));
  c->add_option("--object", gp.object, "Object category for the bank");
  c->add_option("--specific", gp.specific, "Object-specific prompts (JSONL) overriding the bundled ones");
  c->add_option("--out", gp.out)->required();
  bind(c, [&] { return run_gen_prompts(gp); });

  GenImagesOpts gi;
  c = app.add_subcommand("gen-images", "Generate images for a prompt set");
  c->add_option("--prompts", gi.prompts)->required();
  c->add_option("--object", gi.object);
  c->add_option("--n", gi.n, "Images per prompt")->check(CLI::PositiveNumber);
  c->add_option("--out-dir", gi.out_dir)->required();
  c->add_option("--manifest", gi.manifest, "Image manifest to write (JSONL)")->required();
  c->add_option("--seed", gi.seed);
  c->add_option("--size", gi.size, "Fixture image size")->check(CLI::PositiveNumber);
  c->add_option("--model", gi.model, "source_model tag for fixture images");
  c->add_option("--generator-cmd", gi.command, "External generator command (see CommandGenerator)");
  c->add_option("--failures", gi.failures);
  bind(c, [&] { return run_gen_images(gi, g); });

  PairsOpts pa;
  c = app.add_subcommand("pairs", "Sample benchmark or training pairs");
  c->add_flag("--benchmark", pa.benchmark, "Regular pairing per object");
  c->add_flag("--training", pa.training, "Prompt-stratified pairs per object");
  c->add_option("--images", pa.images)->required();
  c->add_option("--object", pa.object, "Restrict to one object category");
  c->add_option("--seed", pa.seed);
  c->add_option("--appearances", pa.appearances)->check(CLI::PositiveNumber);
  c->add_option("--n-pairs", pa.n_pairs, "Pairs per object (benchmark default: images*appearances/2, training 1000)");
  c->add_option("--out", pa.out)->required();
  bind(c, [&] { return run_pairs(pa); });

  AnnotateOpts an;
  c = app.add_subcommand("annotate", "Label pairs with an annotator client, or ingest human labels");
  c->add_option("--pairs", an.pairs);
  c->add_option("--images", an.images);
  c->add_option("--image-root", an.image_root);
  c->add_option("--labels", an.labels, "Label store (JSONL, appended)")->required();
  c->add_option("--ingest", an.ingest, "Human label file to validate and append");
  c->add_option("--annotator", an.annotator)->check(CLI::IsMember({"mock", "http"}));
  c->add_option("--prompt-version", an.prompt_version);
  c->add_option("--retries", an.retries);
  c->add_option("--backoff-ms", an.backoff_ms);
  c->add_option("--min-interval-ms", an.min_interval_ms);
  c->add_flag("--swapped", an.swapped, "Also query with A/B swapped");
  c->add_option("--failures", an.failures);
  c->add_option("--mock-id", an.mock_id);
  c->add_option("--mock-seed", an.mock_seed);
  c->add_option("--tie-fraction", an.tie_fraction)->check(CLI::Range(0.0, 1.0));
  an.backbone.add(c);
  c->add_option("--url", an.url);
  c->add_option("--path", an.path);
  c->add_option("--model", an.model);
  c->add_option("--api-key-env", an.api_key_env);
  c->add_option("--timeout", an.timeout_s)->check(CLI::PositiveNumber);
  bind(c, [&] { return run_annotate(an, g); });

  MetricsOpts me;
  c = app.add_subcommand("metrics", "Benchmark report: correlations and preference accuracy");
  c->add_option("--pairs", me.pairs)->required();
  c->add_option("--images", me.images)->required();
  c->add_option("--labels", me.labels, "Human label files")->required();
  c->add_option("--candidate", me.candidates, "name=labels.jsonl");
  c->add_option("--candidate-scores", me.candidate_scores, "name=scores.jsonl");
  c->add_option("--report", me.report)->required();
  c->add_option("--csv", me.csv);
  bind(c, [&] { return run_metrics(me); });

  TrainOpts tr;
  c = app.add_subcommand("train", "Train a reward head on labeled pairs");
  c->add_option("--pairs", tr.pairs)->required();
  c->add_option("--labels", tr.labels)->required();
  c->add_option("--images", tr.images)->required();
  c->add_option("--image-root", tr.image_root);
  c->add_option("--out", tr.out, "Checkpoint to write")->required();
  c->add_option("--report", tr.report);
  c->add_option("--split", tr.split, "Existing split (JSON) instead of a fresh one");
  c->add_option("--train-fraction", tr.train_fraction)->check(CLI::Range(0.0, 1.0));
  c->add_option("--val-fraction", tr.val_fraction)->check(CLI::Range(0.0, 1.0));
  c->add_option("--split-seed", tr.split_seed);
  c->add_option("--epochs", tr.epochs)->check(CLI::NonNegativeNumber);
  c->add_option("--batch", tr.batch)->check(CLI::PositiveNumber);
  c->add_option("--lr", tr.lr);
  c->add_option("--dropout", tr.dropout)->check(CLI::Range(0.0, 0.99));
  c->add_flag("--no-standardize", tr.no_standardize, "Train on raw embeddings");
  c->add_option("--seed", tr.seed);
  c->add_option("--failures", tr.failures);
  tr.backbone.add(c);
  bind(c, [&] { return run_train(tr, g); });

  EvalOpts ev;
  c = app.add_subcommand("eval", "Test-split preference accuracy of a checkpoint");
  c->add_option("--checkpoint", ev.checkpoint)->required();
  c->add_option("--pairs", ev.pairs)->required();
  c->add_option("--labels", ev.labels)->required();
  c->add_option("--images", ev.images)->required();
  c->add_option("--image-root", ev.image_root);
  c->add_option("--out", ev.out)->required();
  c->add_option("--failures", ev.failures);
  bind(c, [&] { return run_eval(ev, g); });

  ScoreOpts sc;
  c = app.add_subcommand("score", "Score images with a checkpoint");
  c->add_option("--checkpoint", sc.checkpoint)->required();
  c->add_option("--images", sc.images)->required();
  c->add_option("--image-root", sc.image_root);
  c->add_option("--out", sc.out, "Score store (JSONL)")->required();
  c->add_option("--failures", sc.failures);
  bind(c, [&] { return run_score(sc, g); });

  FilterOpts fi;
  c = app.add_subcommand("filter", "Top-k / bottom-k images for one type");
  c->add_option("--scores", fi.scores)->required();
  c->add_option("--images", fi.images)->required();
  c->add_option("--type", fi.type);
  c->add_option("--k", fi.k);
  c->add_flag("--no-group", fi.no_group, "Rank individual images instead of best-per-prompt");
  c->add_option("--out", fi.out)->required();
  bind(c, [&] { return run_filter(fi); });

  AssessOpts as;
  c = app.add_subcommand("assess", "Per-model score distributions");
  c->add_option("--scores", as.scores)->required();
  c->add_option("--images", as.images)->required();
  c->add_option("--out", as.out)->required();
  c->add_option("--csv", as.csv);
  c->add_option("--violin-dir", as.violin_dir, "Write one violin plot (PPM) per type");
  c->add_option("--width", as.width)->check(CLI::PositiveNumber);
  c->add_option("--height", as.height)->check(CLI::PositiveNumber);
  bind(c, [&] { return run_assess(as); });

  CamOpts cm;
  c = app.add_subcommand("cam", "Grad-CAM attribution map for one image");
  c->add_option("--checkpoint", cm.checkpoint)->required();
  c->add_option("--image", cm.image, "PPM image")->required();
  c->add_option("--type", cm.types, "One or more types");
  c->add_option("--out", cm.out, "Output stem (.pgm, .f32, .json)")->required();
  bind(c, [&] { return run_cam(cm); });

  SliderTrainOpts st;
  c = app.add_subcommand("slider-train", "Train a creativity slider on the toy diffusion system");
  c->add_option("--type", st.type);
  c->add_option("--lambda", st.config.lambda);
  c->add_option("--rank", st.config.rank)->check(CLI::PositiveNumber);
  c->add_option("--alpha", st.config.alpha);
  c->add_option("--epochs", st.config.epochs)->check(CLI::NonNegativeNumber);
  c->add_option("--objects", st.config.objects);
  c->add_option("--prompt-template", st.config.prompt_template);
  c->add_option("--images-per-prompt", st.config.images_per_prompt)->check(CLI::PositiveNumber);
  c->add_option("--lr", st.config.lr);
  c->add_option("--grad-accumulation", st.config.grad_accumulation)->check(CLI::PositiveNumber);
  c->add_option("--eval-samples", st.config.eval_samples_per_prompt)->check(CLI::PositiveNumber);
  c->add_option("--seed", st.config.seed);
  c->add_option("--latent-dim", st.system.latent_dim)->check(CLI::PositiveNumber);
  c->add_option("--cond-dim", st.system.cond_dim)->check(CLI::PositiveNumber);
  c->add_option("--system-seed", st.system.seed);
  c->add_option("--sigma", st.system.sigma);
  c->add_option("--fit-samples", st.system.fit_samples)->check(CLI::PositiveNumber);
  c->add_option("--reward", st.reward, "quadratic | head")->check(CLI::IsMember({"quadratic", "head"}));
  c->add_option("--target", st.target, "Quadratic reward target (constant vector)");
  c->add_option("--checkpoint", st.checkpoint, "Reward head for --reward head");
  c->add_option("--image-size", st.image_size, "Latent image side for --reward head")->check(CLI::PositiveNumber);
  c->add_option("--out", st.out, "Slider archive")->required();
  c->add_option("--report", st.report);
  bind(c, [&] { return run_slider_train(st); });

  SliderApplyOpts sa;
  c = app.add_subcommand("slider-apply", "Sample base and slider-guided latents (sliders mix linearly)");
  c->add_option("--slider", sa.sliders)->required();
  c->add_option("--strength", sa.strengths, "One per slider; negative values invert");
  c->add_option("--prompt", sa.prompts, "Default: the first slider's training prompts");
  c->add_option("--samples-per-prompt", sa.samples_per_prompt)->check(CLI::PositiveNumber);
  c->add_option("--seed", sa.seed);
  c->add_option("--out", sa.out, "Samples (JSONL)")->required();
  c->add_option("--image-dir", sa.image_dir, "Also write base/guided PPMs");
  bind(c, [&] { return run_slider_apply(sa); });

  SliderEvalOpts se;
  c = app.add_subcommand("slider-eval", "Score guided against base samples");
  c->add_option("--samples", se.samples)->required();
  c->add_option("--checkpoint", se.checkpoint)->required();
  c->add_option("--out", se.out)->required();
  c->add_option("--csv", se.csv);
  c->add_option("--judge", se.judge, "none | mock | http")->check(CLI::IsMember({"none", "mock", "http"}));
  c->add_option("--judge-seed", se.judge_seed);
  c->add_option("--prompt-version", se.prompt_version);
  c->add_option("--url", se.url);
  c->add_option("--path", se.path);
  c->add_option("--model", se.model);
  c->add_option("--api-key-env", se.api_key_env);
  c->add_option("--failures", se.failures);
  bind(c, [&] { return run_slider_eval(se); });

  ServeOpts sv;
  c = app.add_subcommand("serve", "Annotation and gallery HTTP API");
  c->add_option("--config", sv.config, "Service config (key = value)")->required();
  c->add_option("--host", sv.host);
  c->add_option("--port", sv.port, "Listen port; 0 picks a free one")->check(CLI::Range(0, 65535));
  bind(c, [&] { return run_serve(sv, g); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << error_json("usage", e.what()).dump() << "\n";
    return 2;
  }

  try {
    return action();
  } catch (const Error& e) {
    std::cerr << error_json(e.kind(), e.what()).dump() << "\n";
    return e.kind() == "usage" ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << error_json("internal", e.what()).dump() << "\n";
    return 1;
  }
}
