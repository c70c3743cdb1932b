#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "creward/core.hpp"
#include "creward/image.hpp"
#include "creward/reward.hpp"

namespace creward {

// ---------------------------------------------------------------------------
// Assessment

struct Distribution {
  int count = 0;
  double mean = 0.0;
  double std = 0.0;  // population
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  std::vector<double> values;  // raw scores in image_id order, kept for plots
};

/// Quartiles use linear interpolation between order statistics.
Distribution summarize(std::vector<double> values);

struct AssessmentReport {
  std::map<std::string, std::array<Distribution, 4>> models;  // source_model → per type
  std::vector<std::string> warnings;
};

/// `by_model`: source_model → scores. Empty groups are skipped with a warning.
AssessmentReport assess_models(const std::map<std::string, ScoreTable>& by_model);
/// Groups scored images by their manifest source_model.
std::map<std::string, ScoreTable> group_by_model(const ScoreTable& scores, const std::vector<ImageRecord>& images,
                                                 std::vector<std::string>* warnings = nullptr);

Json to_json(const AssessmentReport& report);
/// model,type,count,mean,std,min,q1,median,q3,max
std::string assessment_csv(const AssessmentReport& report);

/// Violin plot of one type: a mirrored Gaussian-kernel density per model on a
/// shared score axis, with a median tick. White background, RGB.
Image render_violin(const AssessmentReport& report, CreativityType type, int width = 640, int height = 360);

// ---------------------------------------------------------------------------
// Filtering

struct RankedItem {
  std::string image_id;
  std::optional<std::string> prompt_id;
  double score = 0.0;
  TypeScores scores{};
};

struct FilterResult {
  std::vector<RankedItem> top;     // best first
  std::vector<RankedItem> bottom;  // worst first
  std::size_t candidates = 0;
};

/// Top-k and bottom-k images by one type's score. With `group_by_prompt`
/// each prompt is first reduced to its best-scoring sample (images without a
/// prompt stand alone). Equal scores are ordered by image_id. Throws
/// Error{"k-too-large"} with the available count.
FilterResult filter_top_k(const ScoreTable& scores, const std::vector<ImageRecord>& images, std::size_t k,
                          CreativityType type, bool group_by_prompt);

Json to_json(const RankedItem& item);
Json to_json(const FilterResult& result);

// ---------------------------------------------------------------------------
// Attribution

struct AttributionMap {
  CreativityType type = CreativityType::overall;
  Eigen::MatrixXd grid;       // feature resolution, values in [0, 1]
  Eigen::MatrixXd upsampled;  // input resolution
  bool degenerate = false;    // the rectified map was all zero
};

/// Grad-CAM on the backbone's spatial feature map. Throws Error{"capability"}
/// when the backbone has none.
AttributionMap grad_cam(const RewardHead& head, const EmbeddingBackbone& backbone, const Image& image,
                        CreativityType type);

/// Bilinear resize with pixel-center alignment and edge clamping.
Eigen::MatrixXd upsample_bilinear(const Eigen::MatrixXd& grid, int height, int width);

/// Writes <stem>.pgm (8-bit upsampled map), <stem>.f32 (raw row-major
/// float32 upsampled map) and <stem>.json (grid values and metadata).
void save_attribution(const std::filesystem::path& stem, const AttributionMap& map);

}  // namespace creward
