#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "creward/annotate.hpp"
#include "creward/core.hpp"
#include "creward/image.hpp"
#include "creward/mlp.hpp"

namespace creward {

// ---------------------------------------------------------------------------
// Backbones

/// Spatial features: one row per grid cell (row-major cells), one column per
/// channel.
struct FeatureMap {
  int rows = 0;
  int cols = 0;
  Eigen::MatrixXd values;
};

/// Frozen image encoder. The spatial and pixel paths are optional; callers
/// check the capability flags first.
class EmbeddingBackbone {
 public:
  virtual ~EmbeddingBackbone() = default;

  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual Eigen::VectorXd embed(const Image& image) const = 0;
  virtual std::uint64_t param_hash() const = 0;

  virtual bool has_feature_map() const { return false; }
  virtual FeatureMap feature_map(const Image& image) const;
  /// d(scalar)/d(features) given d(scalar)/d(embedding).
  virtual Eigen::MatrixXd feature_map_vjp(const FeatureMap& features, const Eigen::VectorXd& d_embedding) const;

  virtual bool differentiable() const { return false; }
  /// d(scalar)/d(pixels), interleaved like Image::rgb.
  virtual Eigen::VectorXd pixel_vjp(const Image& image, const Eigen::VectorXd& d_embedding) const;
};

/// Fixed random projection of an 8x8 box-downsampled RGB grid. Cell features
/// are P_cell * (rgb_cell - 0.5) and the embedding is their sum, so the
/// backbone is linear in the pixels and exposes both optional paths.
class ToyBackbone final : public EmbeddingBackbone {
 public:
  explicit ToyBackbone(std::uint64_t seed = 0, int dim = 64, int grid = 8);

  std::string name() const override { return "toy-" + std::to_string(dim_); }
  int dim() const override { return dim_; }
  Eigen::VectorXd embed(const Image& image) const override;
  std::uint64_t param_hash() const override;

  bool has_feature_map() const override { return true; }
  FeatureMap feature_map(const Image& image) const override;
  Eigen::MatrixXd feature_map_vjp(const FeatureMap& features, const Eigen::VectorXd& d_embedding) const override;

  bool differentiable() const override { return true; }
  Eigen::VectorXd pixel_vjp(const Image& image, const Eigen::VectorXd& d_embedding) const override;

  int grid() const { return grid_; }

 private:
  /// Mean RGB per cell, minus 0.5; (grid*grid) x 3.
  Eigen::MatrixXd cells(const Image& image) const;

  int dim_;
  int grid_;
  std::vector<Eigen::MatrixXd> projection_;  // per cell, dim x 3
};

// ---------------------------------------------------------------------------
// Reward head and loss

using RewardHead = Mlp<float>;

struct HeadConfig {
  int input_dim = 64;
  std::vector<int> hidden = {1024, 512, 256, 128};
  double dropout = 0.2;
  bool zero_last = false;
  std::uint64_t seed = 0;

  std::vector<int> widths() const;
};

RewardHead make_head(const HeadConfig& config);

/// Eval-mode scores for one embedding. Throws Error{"dimension"}.
TypeScores head_forward(const RewardHead& head, const Eigen::VectorXd& embedding);

struct PairLoss {
  double loss = 0.0;
  double d_score_a = 0.0;
  double d_score_b = 0.0;
};

/// -log sigmoid(y * (a - b)), evaluated stably; zero with zero gradient for
/// y = 0.
PairLoss pairwise_loss(double score_a, double score_b, Verdict y);

/// sigmoid(y * (a - b)): model probability that verdict y is right.
double preference_probability(double score_a, double score_b, Verdict y);

// ---------------------------------------------------------------------------
// Embeddings

using EmbeddingTable = std::map<std::string, Eigen::VectorXd>;
using ImageLoader = std::function<Image(const ImageRecord&)>;

/// Loads `uri` as a PPM, resolving relative paths against `base`.
ImageLoader file_loader(std::filesystem::path base = {});

struct ItemFailure {
  std::string id;
  std::string message;
};

struct EmbedResult {
  EmbeddingTable embeddings;
  std::vector<ItemFailure> failures;
};

/// Embeds every image once (duplicate ids are embedded once) on a worker pool.
EmbedResult embed_images(const EmbeddingBackbone& backbone, const std::vector<ImageRecord>& images,
                         const ImageLoader& load, std::size_t workers = 4);

// ---------------------------------------------------------------------------
// Training

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;

  std::uint64_t hash() const;
  bool operator==(const Split&) const = default;
};

/// Seeded partition of the distinct pair ids; sizes are floor(n * fraction)
/// for train and val, the rest goes to test.
Split make_split(std::vector<std::string> pair_ids, double train_fraction, double val_fraction, std::uint64_t seed);
Json to_json(const Split& split);
Split split_from_json(const Json& j);

struct TrainConfig {
  HeadConfig head;
  int epochs = 20;
  int batch_size = 64;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Z-score inputs with train-split statistics while optimizing; the map is
  /// folded into the first layer of the returned head.
  bool standardize_inputs = true;
  std::uint64_t seed = 0;
};
Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);

/// One labeled comparison resolved to embedding rows.
struct Example {
  std::string pair_id;
  int a = 0;
  int b = 0;
  Verdicts y{};
};

/// Embeddings stacked as columns plus the labeled comparisons over them.
struct PreferenceData {
  Eigen::MatrixXf embeddings;
  std::map<std::string, int> column;
  std::vector<Example> examples;
};

/// Labels whose pair or endpoint embedding is missing are reported in
/// `dropped` (pair ids) and skipped.
PreferenceData build_preference_data(const std::vector<PairRecord>& pairs, const std::vector<PreferenceLabel>& labels,
                                     const EmbeddingTable& embeddings, std::vector<std::string>* dropped = nullptr);

struct TypeAccuracy {
  std::array<std::optional<double>, 4> by_type;
  std::optional<double> mean;  // over the defined types
};
Json to_json(const TypeAccuracy& a);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  TypeAccuracy val;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  std::optional<double> best_val;
  TypeAccuracy test;
  std::uint64_t backbone_hash_before = 0;
  std::uint64_t backbone_hash_after = 0;
  std::size_t train_examples = 0;
  std::size_t val_examples = 0;
  std::size_t test_examples = 0;
};
Json to_json(const TrainReport& r);

struct TrainResult {
  RewardHead head;
  TrainReport report;
};

/// Minimizes the sum over types of the masked pairwise loss on the train
/// split with Adam and returns the epoch whose mean validation accuracy is
/// highest (the initialization when epochs == 0). Throws Error{"empty"} when
/// the train split has no non-tie verdict and Error{"non-finite"} on a
/// diverging loss.
TrainResult train_head(const PreferenceData& data, const Split& split, const TrainConfig& config,
                       const EmbeddingBackbone* backbone = nullptr);

/// Preference accuracy per type over the examples of `pair_ids`, reference
/// ties excluded, score ties counted as misses.
TypeAccuracy head_accuracy(const RewardHead& head, const PreferenceData& data,
                           const std::vector<std::string>& pair_ids);

/// head_accuracy on the test pairs, refusing any pair the split trained on.
TypeAccuracy evaluate_head(const RewardHead& head, const PreferenceData& data, const std::vector<std::string>& test_ids,
                           const Split& split);

// ---------------------------------------------------------------------------
// Scoring

struct ScoreResult {
  ScoreTable scores;
  std::vector<ItemFailure> failures;
};

/// Scores images one at a time, so results do not depend on batch makeup.
ScoreResult score_images(const RewardHead& head, const EmbeddingBackbone& backbone,
                         const std::vector<ImageRecord>& images, const ImageLoader& load, std::size_t workers = 4);

std::vector<Json> scores_to_rows(const ScoreTable& scores);
ScoreTable read_scores(const std::filesystem::path& path);
void write_scores(const std::filesystem::path& path, const ScoreTable& scores);

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  RewardHead head;
  TrainConfig config;
  std::string backbone_name;
  int backbone_dim = 0;
  std::uint64_t backbone_hash = 0;         // 0: not recorded
  Json backbone_params = Json::object();   // whatever rebuilds the backbone
  std::uint64_t split_hash = 0;
  Split split;
  Json report = Json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
/// Throws Error{"dimension"} when the stored head does not match `backbone`
/// and Error{"backbone"} when the recorded parameter hash differs.
Checkpoint load_checkpoint(const std::filesystem::path& path, const EmbeddingBackbone& backbone);
/// The checkpoint's {"name", "dim", "hash", "params"} block, read without
/// loading the head.
Json checkpoint_backbone(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic supervision

/// Hidden linear scorers, one per type, over embeddings. Stands in for
/// annotators in tests and in the offline demo pipeline.
struct HiddenScorer {
  Eigen::MatrixXd weights;  // 4 x dim

  static HiddenScorer random(int dim, std::uint64_t seed);
  TypeScores score(const Eigen::VectorXd& embedding) const;
  /// Per-type verdicts; |difference| <= margin[type] gives a tie.
  Verdicts judge(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const TypeScores& margin) const;
  /// Per-type margin making `tie_fraction` of the given pairs ties.
  TypeScores tie_margins(const std::vector<PairRecord>& pairs, const EmbeddingTable& embeddings,
                         double tie_fraction) const;
};

/// Scripted annotator: decodes both images, embeds them with a backbone and
/// answers with a HiddenScorer's verdicts in the canonical grammar.
class MockAnnotator final : public AnnotatorClient {
 public:
  MockAnnotator(std::string id, const EmbeddingBackbone& backbone, HiddenScorer scorer, TypeScores margins)
      : id_(std::move(id)), backbone_(backbone), scorer_(std::move(scorer)), margins_(margins) {}
  std::string annotator_id() const override { return id_; }
  std::string complete(const AnnotatorRequest& request) override;

 private:
  std::string id_;
  const EmbeddingBackbone& backbone_;
  HiddenScorer scorer_;
  TypeScores margins_;
};

}  // namespace creward
