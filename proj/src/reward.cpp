#include "creward/reward.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>
#include <unordered_set>

#include "creward/hash.hpp"
#include "creward/metrics.hpp"
#include "creward/parallel.hpp"
#include "creward/rng.hpp"

namespace creward {

// ---------------------------------------------------------------------------
// Backbones

FeatureMap EmbeddingBackbone::feature_map(const Image&) const {
  throw Error("capability", "backbone " + name() + " does not expose a spatial feature map");
}

Eigen::MatrixXd EmbeddingBackbone::feature_map_vjp(const FeatureMap&, const Eigen::VectorXd&) const {
  throw Error("capability", "backbone " + name() + " does not expose a spatial feature map");
}

Eigen::VectorXd EmbeddingBackbone::pixel_vjp(const Image&, const Eigen::VectorXd&) const {
  throw Error("capability", "backbone " + name() + " is not differentiable in its pixels");
}

ToyBackbone::ToyBackbone(std::uint64_t seed, int dim, int grid) : dim_(dim), grid_(grid) {
  if (dim <= 0 || grid <= 0) throw Error("config", "toy backbone needs positive dim and grid");
  Rng rng(seed ^ 0x746f79626b626eULL);
  const double scale = 1.0 / std::sqrt(3.0);
  projection_.resize(static_cast<std::size_t>(grid * grid));
  for (auto& p : projection_) {
    p.resize(dim, 3);
    for (Eigen::Index c = 0; c < 3; ++c) {
      for (Eigen::Index r = 0; r < dim; ++r) p(r, c) = scale * rng.normal();
    }
  }
}

namespace {

struct CellBounds {
  int x0, x1, y0, y1;
};

CellBounds cell_bounds(int gx, int gy, int grid, int width, int height) {
  auto span = [grid](int g, int n) {
    int lo = g * n / grid;
    int hi = (g + 1) * n / grid;
    lo = std::min(lo, n - 1);
    hi = std::max(hi, lo + 1);
    return std::pair{lo, hi};
  };
  const auto [x0, x1] = span(gx, width);
  const auto [y0, y1] = span(gy, height);
  return {x0, x1, y0, y1};
}

}  // namespace

Eigen::MatrixXd ToyBackbone::cells(const Image& image) const {
  if (image.empty()) throw Error("decode", "empty image");
  Eigen::MatrixXd out(grid_ * grid_, 3);
  for (int gy = 0; gy < grid_; ++gy) {
    for (int gx = 0; gx < grid_; ++gx) {
      const CellBounds b = cell_bounds(gx, gy, grid_, image.width, image.height);
      double sum[3] = {0.0, 0.0, 0.0};
      for (int y = b.y0; y < b.y1; ++y) {
        for (int x = b.x0; x < b.x1; ++x) {
          for (int c = 0; c < 3; ++c) sum[c] += image.at(x, y, c);
        }
      }
      const double n = static_cast<double>((b.x1 - b.x0) * (b.y1 - b.y0));
      for (int c = 0; c < 3; ++c) out(gy * grid_ + gx, c) = sum[c] / n - 0.5;
    }
  }
  return out;
}

Eigen::VectorXd ToyBackbone::embed(const Image& image) const {
  const Eigen::MatrixXd rgb = cells(image);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(dim_);
  for (Eigen::Index k = 0; k < rgb.rows(); ++k) e += projection_[static_cast<std::size_t>(k)] * rgb.row(k).transpose();
  return e;
}

FeatureMap ToyBackbone::feature_map(const Image& image) const {
  const Eigen::MatrixXd rgb = cells(image);
  FeatureMap f{grid_, grid_, Eigen::MatrixXd(rgb.rows(), dim_)};
  for (Eigen::Index k = 0; k < rgb.rows(); ++k) {
    f.values.row(k) = (projection_[static_cast<std::size_t>(k)] * rgb.row(k).transpose()).transpose();
  }
  return f;
}

Eigen::MatrixXd ToyBackbone::feature_map_vjp(const FeatureMap& features, const Eigen::VectorXd& d_embedding) const {
  // The embedding is the sum over cells, so every cell sees the same gradient.
  return d_embedding.transpose().replicate(features.values.rows(), 1);
}

Eigen::VectorXd ToyBackbone::pixel_vjp(const Image& image, const Eigen::VectorXd& d_embedding) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(image.rgb.size()));
  for (int gy = 0; gy < grid_; ++gy) {
    for (int gx = 0; gx < grid_; ++gx) {
      const CellBounds b = cell_bounds(gx, gy, grid_, image.width, image.height);
      const double n = static_cast<double>((b.x1 - b.x0) * (b.y1 - b.y0));
      const Eigen::Vector3d g = projection_[static_cast<std::size_t>(gy * grid_ + gx)].transpose() * d_embedding / n;
      for (int y = b.y0; y < b.y1; ++y) {
        for (int x = b.x0; x < b.x1; ++x) {
          const auto base = (static_cast<Eigen::Index>(y) * image.width + x) * 3;
          out.segment<3>(base) += g;
        }
      }
    }
  }
  return out;
}

std::uint64_t ToyBackbone::param_hash() const {
  Fnv1a h;
  h.update(name());
  for (const auto& p : projection_) h.update(p);
  return h.digest();
}

// ---------------------------------------------------------------------------
// Head and loss

std::vector<int> HeadConfig::widths() const {
  std::vector<int> w{input_dim};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(4);
  return w;
}

RewardHead make_head(const HeadConfig& config) {
  if (config.input_dim <= 0) throw Error("config", "head input dim must be positive");
  return RewardHead(config.widths(), config.seed, config.zero_last);
}

TypeScores head_forward(const RewardHead& head, const Eigen::VectorXd& embedding) {
  head.check_input(embedding.rows());
  const Eigen::VectorXf out = head.forward(Eigen::VectorXf(embedding.cast<float>()));
  TypeScores s{};
  for (std::size_t t = 0; t < 4; ++t) s[t] = static_cast<double>(out(static_cast<Eigen::Index>(t)));
  return s;
}

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

PairLoss pairwise_loss(double score_a, double score_b, Verdict y) {
  if (y == Verdict::tie) return {};
  const double s = sign(y);
  const double d = score_a - score_b;
  const double g = -s * sigmoid(-s * d);  // d loss / d (a - b)
  return {softplus(-s * d), g, -g};
}

double preference_probability(double score_a, double score_b, Verdict y) {
  return sigmoid(sign(y) * (score_a - score_b));
}

// ---------------------------------------------------------------------------
// Embeddings

ImageLoader file_loader(std::filesystem::path base) {
  return [base = std::move(base)](const ImageRecord& record) {
    std::filesystem::path p(record.uri);
    if (p.is_relative() && !base.empty()) p = base / p;
    return load_image(p);
  };
}

EmbedResult embed_images(const EmbeddingBackbone& backbone, const std::vector<ImageRecord>& images,
                         const ImageLoader& load, std::size_t workers) {
  std::vector<const ImageRecord*> unique;
  std::unordered_set<std::string> seen;
  for (const auto& img : images) {
    if (seen.insert(img.image_id).second) unique.push_back(&img);
  }
  std::vector<std::optional<Eigen::VectorXd>> slots(unique.size());
  std::vector<std::string> errors(unique.size());
  parallel_for(unique.size(), workers, [&](std::size_t i) {
    try {
      Eigen::VectorXd e = backbone.embed(load(*unique[i]));
      if (!e.allFinite()) throw Error("non-finite", "embedding contains non-finite values");
      slots[i] = std::move(e);
    } catch (const std::exception& ex) {
      errors[i] = ex.what();
    }
  });
  EmbedResult out;
  for (std::size_t i = 0; i < unique.size(); ++i) {
    if (slots[i]) {
      out.embeddings.emplace(unique[i]->image_id, std::move(*slots[i]));
    } else {
      out.failures.push_back({unique[i]->image_id, errors[i]});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split

std::uint64_t Split::hash() const {
  Fnv1a h;
  for (const auto* part : {&train, &val, &test}) {
    for (const auto& id : *part) h.update(id).update(std::string_view("\n", 1));
    h.update(std::string_view("\x1e", 1));
  }
  return h.digest();
}

Split make_split(std::vector<std::string> pair_ids, double train_fraction, double val_fraction, std::uint64_t seed) {
  if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1.0) {
    throw Error("config", "split fractions must be non-negative and sum to at most 1");
  }
  std::sort(pair_ids.begin(), pair_ids.end());
  pair_ids.erase(std::unique(pair_ids.begin(), pair_ids.end()), pair_ids.end());
  Rng rng(seed);
  rng.shuffle(std::span(pair_ids));
  const auto n = pair_ids.size();
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::floor(static_cast<double>(n) * val_fraction)));
  Split s;
  s.train.assign(pair_ids.begin(), pair_ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(pair_ids.begin() + static_cast<std::ptrdiff_t>(n_train),
               pair_ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(pair_ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), pair_ids.end());
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

Json to_json(const Split& split) {
  return {{"train", split.train}, {"val", split.val}, {"test", split.test}, {"hash", to_hex(split.hash())}};
}

Split split_from_json(const Json& j) {
  try {
    Split s{j.at("train").get<std::vector<std::string>>(), j.at("val").get<std::vector<std::string>>(),
            j.at("test").get<std::vector<std::string>>()};
    if (j.contains("hash") && j["hash"].get<std::string>() != to_hex(s.hash())) {
      throw Error("schema", "split hash does not match its contents");
    }
    return s;
  } catch (const Json::exception& e) {
    throw Error("schema", std::string("bad split: ") + e.what());
  }
}

Json to_json(const TrainConfig& c) {
  return {{"head", {{"input_dim", c.head.input_dim},
                    {"hidden", c.head.hidden},
                    {"dropout", c.head.dropout},
                    {"zero_last", c.head.zero_last},
                    {"seed", c.head.seed}}},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"optimizer", {{"name", "adam"}, {"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}}},
          {"standardize_inputs", c.standardize_inputs},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const Json& j) {
  try {
    TrainConfig c;
    const Json& h = j.at("head");
    c.head.input_dim = h.at("input_dim").get<int>();
    c.head.hidden = h.at("hidden").get<std::vector<int>>();
    c.head.dropout = h.at("dropout").get<double>();
    c.head.zero_last = h.at("zero_last").get<bool>();
    c.head.seed = h.at("seed").get<std::uint64_t>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    const Json& o = j.at("optimizer");
    c.lr = o.at("lr").get<double>();
    c.beta1 = o.at("beta1").get<double>();
    c.beta2 = o.at("beta2").get<double>();
    c.eps = o.at("eps").get<double>();
    c.standardize_inputs = j.value("standardize_inputs", true);
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const Json::exception& e) {
    throw Error("schema", std::string("bad train config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Training

PreferenceData build_preference_data(const std::vector<PairRecord>& pairs, const std::vector<PreferenceLabel>& labels,
                                     const EmbeddingTable& embeddings, std::vector<std::string>* dropped) {
  const PairIndex index = [&] {
    PairIndex m;
    for (const auto& p : pairs) m.emplace(p.pair_id, p);
    return m;
  }();
  PreferenceData data;
  std::vector<const Eigen::VectorXd*> columns;
  auto column_of = [&](const std::string& id) -> int {
    auto [it, inserted] = data.column.emplace(id, static_cast<int>(columns.size()));
    if (inserted) columns.push_back(&embeddings.at(id));
    return it->second;
  };
  for (const auto& label : labels) {
    auto p = index.find(label.pair_id);
    if (p == index.end() || !embeddings.contains(p->second.image_a) || !embeddings.contains(p->second.image_b)) {
      if (dropped) dropped->push_back(label.pair_id);
      continue;
    }
    data.examples.push_back({label.pair_id, column_of(p->second.image_a), column_of(p->second.image_b), label.verdicts});
  }
  const Eigen::Index dim = columns.empty() ? 0 : columns.front()->rows();
  data.embeddings.resize(dim, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c]->rows() != dim) throw Error("dimension", "embeddings have inconsistent dimensions");
    data.embeddings.col(static_cast<Eigen::Index>(c)) = columns[c]->cast<float>();
  }
  return data;
}

Json to_json(const TypeAccuracy& a) {
  Json j = Json::object();
  for (CreativityType t : kAllTypes) {
    const auto& v = a.by_type[index_of(t)];
    j[std::string(to_string(t))] = v ? Json(*v) : Json(nullptr);
  }
  j["mean"] = a.mean ? Json(*a.mean) : Json(nullptr);
  return j;
}

Json to_json(const TrainReport& r) {
  Json epochs = Json::array();
  for (const auto& e : r.epochs) epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val", to_json(e.val)}});
  return {{"epochs", epochs},
          {"best_epoch", r.best_epoch},
          {"best_val", r.best_val ? Json(*r.best_val) : Json(nullptr)},
          {"test", to_json(r.test)},
          {"backbone_hash_before", to_hex(r.backbone_hash_before)},
          {"backbone_hash_after", to_hex(r.backbone_hash_after)},
          {"examples", {{"train", r.train_examples}, {"val", r.val_examples}, {"test", r.test_examples}}}};
}

namespace {

std::vector<std::size_t> examples_in(const PreferenceData& data, const std::vector<std::string>& ids) {
  const std::set<std::string> wanted(ids.begin(), ids.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    if (wanted.contains(data.examples[i].pair_id)) out.push_back(i);
  }
  return out;
}

TypeAccuracy accuracy_over(const RewardHead& head, const PreferenceData& data, const std::vector<std::size_t>& rows) {
  TypeAccuracy acc;
  if (rows.empty()) return acc;
  const Eigen::MatrixXf scores = head.forward(data.embeddings);
  std::array<int, 4> evaluated{};
  std::array<int, 4> agreed{};
  for (std::size_t i : rows) {
    const Example& ex = data.examples[i];
    for (std::size_t t = 0; t < 4; ++t) {
      if (ex.y[t] == Verdict::tie) continue;
      ++evaluated[t];
      const float sa = scores(static_cast<Eigen::Index>(t), ex.a);
      const float sb = scores(static_cast<Eigen::Index>(t), ex.b);
      if ((ex.y[t] == Verdict::a && sa > sb) || (ex.y[t] == Verdict::b && sb > sa)) ++agreed[t];
    }
  }
  double sum = 0.0;
  int defined = 0;
  for (std::size_t t = 0; t < 4; ++t) {
    if (evaluated[t] == 0) continue;
    acc.by_type[t] = static_cast<double>(agreed[t]) / evaluated[t];
    sum += *acc.by_type[t];
    ++defined;
  }
  if (defined > 0) acc.mean = sum / defined;
  return acc;
}

}  // namespace

TypeAccuracy head_accuracy(const RewardHead& head, const PreferenceData& data,
                           const std::vector<std::string>& pair_ids) {
  return accuracy_over(head, data, examples_in(data, pair_ids));
}

TypeAccuracy evaluate_head(const RewardHead& head, const PreferenceData& data, const std::vector<std::string>& test_ids,
                           const Split& split) {
  const std::set<std::string> train(split.train.begin(), split.train.end());
  for (const auto& id : test_ids) {
    if (train.contains(id)) throw Error("leakage", "test pair " + id + " is in the training split");
  }
  return head_accuracy(head, data, test_ids);
}

TrainResult train_head(const PreferenceData& data, const Split& split, const TrainConfig& config,
                       const EmbeddingBackbone* backbone) {
  if (config.batch_size <= 0 || config.epochs < 0) throw Error("config", "batch size and epochs must be positive");
  TrainReport report;
  if (backbone) report.backbone_hash_before = backbone->param_hash();

  const auto train_rows = examples_in(data, split.train);
  const auto val_rows = examples_in(data, split.val);
  const auto test_rows = examples_in(data, split.test);
  report.train_examples = train_rows.size();
  report.val_examples = val_rows.size();
  report.test_examples = test_rows.size();
  const bool any_decided = std::any_of(train_rows.begin(), train_rows.end(), [&](std::size_t i) {
    const auto& y = data.examples[i].y;
    return std::any_of(y.begin(), y.end(), [](Verdict v) { return v != Verdict::tie; });
  });
  if (!any_decided) throw Error("empty", "training split has no non-tie verdict");

  // Train on z-scored inputs (statistics from the train split) and fold the
  // affine map into the first layer afterwards, so the result is a plain head
  // over raw embeddings.
  PreferenceData scaled_data;
  const PreferenceData* view = &data;
  Eigen::VectorXf mu;
  Eigen::VectorXf inv_sigma;
  if (config.standardize_inputs && !train_rows.empty()) {
    std::set<int> cols;
    for (std::size_t i : train_rows) {
      cols.insert(data.examples[i].a);
      cols.insert(data.examples[i].b);
    }
    Eigen::MatrixXd x(data.embeddings.rows(), static_cast<Eigen::Index>(cols.size()));
    Eigen::Index k = 0;
    for (int c : cols) x.col(k++) = data.embeddings.col(c).cast<double>();
    const Eigen::VectorXd mean = x.rowwise().mean();
    const Eigen::VectorXd var = (x.colwise() - mean).rowwise().squaredNorm() / static_cast<double>(x.cols());
    mu = mean.cast<float>();
    inv_sigma = var.unaryExpr([](double v) { return v > 1e-12 ? 1.0 / std::sqrt(v) : 1.0; }).cast<float>();
    scaled_data = data;
    scaled_data.embeddings = (data.embeddings.colwise() - mu).array().colwise() * inv_sigma.array();
    view = &scaled_data;
  }
  const PreferenceData& d = *view;

  HeadConfig head_config = config.head;
  head_config.input_dim = static_cast<int>(data.embeddings.rows());
  RewardHead head = make_head(head_config);
  RewardHead best = head;
  std::optional<double> best_val;
  Adam<float> adam(head, {config.lr, config.beta1, config.beta2, config.eps});
  Rng rng(config.seed);
  const auto dim = d.embeddings.rows();

  std::vector<std::size_t> order = train_rows;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const auto n = static_cast<Eigen::Index>(
          std::min(order.size() - start, static_cast<std::size_t>(config.batch_size)));
      // Columns [0, n) hold image A, [n, 2n) image B; both go through one pass
      // so dropout masks are drawn per image.
      Eigen::MatrixXf x(dim, 2 * n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const Example& ex = d.examples[order[start + static_cast<std::size_t>(i)]];
        x.col(i) = d.embeddings.col(ex.a);
        x.col(n + i) = d.embeddings.col(ex.b);
      }
      const auto tape = head.forward_train(x, static_cast<float>(config.head.dropout), &rng);
      Eigen::MatrixXf d_out = Eigen::MatrixXf::Zero(4, 2 * n);
      double batch_loss = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const Example& ex = d.examples[order[start + static_cast<std::size_t>(i)]];
        for (Eigen::Index t = 0; t < 4; ++t) {
          const PairLoss l = pairwise_loss(tape.output(t, i), tape.output(t, n + i), ex.y[static_cast<std::size_t>(t)]);
          batch_loss += l.loss;
          d_out(t, i) = static_cast<float>(l.d_score_a / static_cast<double>(n));
          d_out(t, n + i) = static_cast<float>(l.d_score_b / static_cast<double>(n));
        }
      }
      if (!std::isfinite(batch_loss)) {
        throw Error("non-finite", "non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                                      std::to_string(start));
      }
      epoch_loss += batch_loss;
      adam.step(head, head.backward(tape, d_out));
    }
    EpochStats stats{epoch, train_rows.empty() ? 0.0 : epoch_loss / static_cast<double>(train_rows.size()),
                     accuracy_over(head, d, val_rows)};
    const bool improved = stats.val.mean && (!best_val || *stats.val.mean > *best_val);
    if (improved || (!best_val && epoch == config.epochs)) {
      best = head;
      best_val = stats.val.mean;
      report.best_epoch = epoch;
    }
    report.epochs.push_back(std::move(stats));
  }
  report.best_val = best_val;
  if (view != &data && config.epochs > 0) {
    auto& w = best.weights().front();
    best.biases().front() -= w * (inv_sigma.cwiseProduct(mu));
    w = w * inv_sigma.asDiagonal();
  }
  report.test = evaluate_head(best, data, split.test, split);
  if (backbone) report.backbone_hash_after = backbone->param_hash();
  return {std::move(best), std::move(report)};
}

// ---------------------------------------------------------------------------
// Scoring

ScoreResult score_images(const RewardHead& head, const EmbeddingBackbone& backbone,
                         const std::vector<ImageRecord>& images, const ImageLoader& load, std::size_t workers) {
  if (head.input_dim() != backbone.dim()) {
    throw Error("dimension", "head expects dim " + std::to_string(head.input_dim()) + ", backbone " +
                                 backbone.name() + " has " + std::to_string(backbone.dim()));
  }
  const EmbedResult embedded = embed_images(backbone, images, load, workers);
  ScoreResult out;
  out.failures = embedded.failures;
  for (const auto& [id, e] : embedded.embeddings) out.scores.emplace(id, head_forward(head, e));
  return out;
}

std::vector<Json> scores_to_rows(const ScoreTable& scores) {
  std::vector<Json> rows;
  rows.reserve(scores.size());
  for (const auto& [id, s] : scores) {
    Json by_type = Json::object();
    for (CreativityType t : kAllTypes) by_type[std::string(to_string(t))] = s[index_of(t)];
    rows.push_back({{"image_id", id}, {"scores", by_type}});
  }
  return rows;
}

ScoreTable read_scores(const std::filesystem::path& path) {
  ScoreTable out;
  for (const Json& row : read_jsonl_strict(path)) {
    try {
      TypeScores s{};
      for (CreativityType t : kAllTypes) s[index_of(t)] = row.at("scores").at(std::string(to_string(t))).get<double>();
      out[row.at("image_id").get<std::string>()] = s;
    } catch (const Json::exception& e) {
      throw Error("schema", path.string() + ": bad score row: " + e.what());
    }
  }
  return out;
}

void write_scores(const std::filesystem::path& path, const ScoreTable& scores) {
  write_jsonl(path, scores_to_rows(scores));
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::string_view kCheckpointFormat = "creward-head/1";

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes little-endian floats");

std::string pack(const float* data, Eigen::Index n) {
  return base64_encode(std::string_view(reinterpret_cast<const char*>(data), static_cast<std::size_t>(n) * sizeof(float)));
}

void unpack(const std::string& text, float* data, Eigen::Index n) {
  const std::string bytes = base64_decode(text);
  if (bytes.size() != static_cast<std::size_t>(n) * sizeof(float)) throw Error("schema", "checkpoint tensor size mismatch");
  std::memcpy(data, bytes.data(), bytes.size());
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  Json layers = Json::array();
  for (std::size_t l = 0; l < c.head.layers(); ++l) {
    const auto& w = c.head.weights()[l];
    const auto& b = c.head.biases()[l];
    layers.push_back({{"rows", w.rows()}, {"cols", w.cols()}, {"weight", pack(w.data(), w.size())},
                      {"bias", pack(b.data(), b.size())}});
  }
  const Json j = {{"format", kCheckpointFormat},
                  {"encoding", "f32le-colmajor-base64"},
                  {"backbone",
                   {{"name", c.backbone_name},
                    {"dim", c.backbone_dim},
                    {"hash", to_hex(c.backbone_hash)},
                    {"params", c.backbone_params}}},
                  {"config", to_json(c.config)},
                  {"split", to_json(c.split)},
                  {"split_hash", to_hex(c.split_hash)},
                  {"report", c.report},
                  {"head", {{"layers", layers}, {"hash", to_hex(c.head.param_hash())}}}};
  write_text(path, j.dump(1) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const EmbeddingBackbone& backbone) {
  const Json j = Json::parse(read_text(path), nullptr, false);
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat) {
    throw Error("schema", path.string() + " is not a reward-head checkpoint");
  }
  try {
    Checkpoint c;
    c.backbone_name = j.at("backbone").at("name").get<std::string>();
    c.backbone_dim = j.at("backbone").at("dim").get<int>();
    c.backbone_hash = std::stoull(j.at("backbone").value("hash", "0"), nullptr, 16);
    c.backbone_params = j.at("backbone").value("params", Json::object());
    c.config = train_config_from_json(j.at("config"));
    c.split = split_from_json(j.at("split"));
    c.split_hash = c.split.hash();
    c.report = j.at("report");
    for (const Json& layer : j.at("head").at("layers")) {
      RewardHead::Matrix w(layer.at("rows").get<Eigen::Index>(), layer.at("cols").get<Eigen::Index>());
      RewardHead::Vector b(w.rows());
      unpack(layer.at("weight").get<std::string>(), w.data(), w.size());
      unpack(layer.at("bias").get<std::string>(), b.data(), b.size());
      c.head.weights().push_back(std::move(w));
      c.head.biases().push_back(std::move(b));
    }
    if (to_hex(c.head.param_hash()) != j.at("head").at("hash").get<std::string>()) {
      throw Error("schema", "checkpoint weights do not match their hash");
    }
    if (c.backbone_dim != backbone.dim() || c.head.input_dim() != backbone.dim()) {
      throw Error("dimension", "checkpoint expects backbone dim " + std::to_string(c.backbone_dim) + ", " +
                                   backbone.name() + " has " + std::to_string(backbone.dim()));
    }
    if (c.backbone_hash != 0 && c.backbone_hash != backbone.param_hash()) {
      throw Error("backbone", "checkpoint was trained against different " + c.backbone_name + " parameters");
    }
    return c;
  } catch (const Json::exception& e) {
    throw Error("schema", path.string() + ": " + e.what());
  }
}

Json checkpoint_backbone(const std::filesystem::path& path) {
  const Json j = Json::parse(read_text(path), nullptr, false);
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat || !j.contains("backbone")) {
    throw Error("schema", path.string() + " is not a reward-head checkpoint");
  }
  return j["backbone"];
}

// ---------------------------------------------------------------------------
// Synthetic supervision

HiddenScorer HiddenScorer::random(int dim, std::uint64_t seed) {
  Rng rng(seed);
  HiddenScorer s{Eigen::MatrixXd(4, dim)};
  for (Eigen::Index c = 0; c < dim; ++c) {
    for (Eigen::Index r = 0; r < 4; ++r) s.weights(r, c) = rng.normal();
  }
  return s;
}

TypeScores HiddenScorer::score(const Eigen::VectorXd& embedding) const {
  const Eigen::Vector4d v = weights * embedding;
  return {v(0), v(1), v(2), v(3)};
}

Verdicts HiddenScorer::judge(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const TypeScores& margin) const {
  const TypeScores sa = score(a);
  const TypeScores sb = score(b);
  Verdicts v{};
  for (std::size_t t = 0; t < 4; ++t) {
    const double d = sa[t] - sb[t];
    v[t] = std::abs(d) <= margin[t] ? Verdict::tie : (d > 0 ? Verdict::a : Verdict::b);
  }
  return v;
}

TypeScores HiddenScorer::tie_margins(const std::vector<PairRecord>& pairs, const EmbeddingTable& embeddings,
                                     double tie_fraction) const {
  TypeScores margins{};
  if (pairs.empty() || tie_fraction <= 0.0) return margins;
  std::array<std::vector<double>, 4> gaps;
  for (const auto& p : pairs) {
    const TypeScores sa = score(embeddings.at(p.image_a));
    const TypeScores sb = score(embeddings.at(p.image_b));
    for (std::size_t t = 0; t < 4; ++t) gaps[t].push_back(std::abs(sa[t] - sb[t]));
  }
  const auto k = static_cast<std::size_t>(std::llround(tie_fraction * static_cast<double>(pairs.size())));
  for (std::size_t t = 0; t < 4; ++t) {
    std::sort(gaps[t].begin(), gaps[t].end());
    // Midpoint between the k-th and (k+1)-th gap so exactly k pairs tie.
    if (k == 0) continue;
    margins[t] = k < gaps[t].size() ? 0.5 * (gaps[t][k - 1] + gaps[t][k]) : gaps[t].back();
  }
  return margins;
}

std::string MockAnnotator::complete(const AnnotatorRequest& request) {
  const Eigen::VectorXd a = backbone_.embed(decode_ppm(request.image_a_bytes));
  const Eigen::VectorXd b = backbone_.embed(decode_ppm(request.image_b_bytes));
  return "Comparing the two renders.\n" + render_verdicts(scorer_.judge(a, b, margins_));
}

}  // namespace creward
