#include "creward/xapps.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace creward {

// ---------------------------------------------------------------------------
// Assessment

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

Distribution summarize(std::vector<double> values) {
  Distribution d;
  d.count = static_cast<int>(values.size());
  d.values = values;
  if (values.empty()) return d;
  const double n = static_cast<double>(values.size());
  d.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - d.mean) * (v - d.mean);
  d.std = std::sqrt(ss / n);
  std::sort(values.begin(), values.end());
  d.min = values.front();
  d.max = values.back();
  d.q1 = quantile(values, 0.25);
  d.median = quantile(values, 0.5);
  d.q3 = quantile(values, 0.75);
  return d;
}

AssessmentReport assess_models(const std::map<std::string, ScoreTable>& by_model) {
  AssessmentReport report;
  for (const auto& [model, scores] : by_model) {
    if (scores.empty()) {
      report.warnings.push_back("model " + model + " has no scored images; excluded");
      continue;
    }
    std::array<Distribution, 4> per_type;
    for (CreativityType t : kAllTypes) {
      std::vector<double> values;
      values.reserve(scores.size());
      for (const auto& [id, s] : scores) values.push_back(s[index_of(t)]);
      per_type[index_of(t)] = summarize(std::move(values));
    }
    report.models.emplace(model, std::move(per_type));
  }
  return report;
}

std::map<std::string, ScoreTable> group_by_model(const ScoreTable& scores, const std::vector<ImageRecord>& images,
                                                 std::vector<std::string>* warnings) {
  std::map<std::string, std::string> model_of;
  for (const auto& img : images) model_of.emplace(img.image_id, img.source_model);
  std::map<std::string, ScoreTable> out;
  for (const auto& [id, s] : scores) {
    auto it = model_of.find(id);
    if (it == model_of.end()) {
      if (warnings) warnings->push_back("scored image " + id + " is not in the manifest; skipped");
      continue;
    }
    out[it->second].emplace(id, s);
  }
  return out;
}

Json to_json(const AssessmentReport& report) {
  Json models = Json::object();
  for (const auto& [model, per_type] : report.models) {
    Json m = Json::object();
    for (CreativityType t : kAllTypes) {
      const Distribution& d = per_type[index_of(t)];
      m[std::string(to_string(t))] = {{"count", d.count}, {"mean", d.mean},     {"std", d.std},
                                      {"min", d.min},     {"q1", d.q1},         {"median", d.median},
                                      {"q3", d.q3},       {"max", d.max},       {"values", d.values}};
    }
    models[model] = m;
  }
  return {{"models", models}, {"warnings", report.warnings}};
}

std::string assessment_csv(const AssessmentReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "model,type,count,mean,std,min,q1,median,q3,max\n";
  for (const auto& [model, per_type] : report.models) {
    for (CreativityType t : kAllTypes) {
      const Distribution& d = per_type[index_of(t)];
      out << model << ',' << to_string(t) << ',' << d.count << ',' << d.mean << ',' << d.std << ',' << d.min << ','
          << d.q1 << ',' << d.median << ',' << d.q3 << ',' << d.max << '\n';
    }
  }
  return out.str();
}

Image render_violin(const AssessmentReport& report, CreativityType type, int width, int height) {
  Image img = make_image(width, height);
  std::fill(img.rgb.begin(), img.rgb.end(), 1.0f);
  if (report.models.empty()) return img;

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& [model, per_type] : report.models) {
    lo = std::min(lo, per_type[index_of(type)].min);
    hi = std::max(hi, per_type[index_of(type)].max);
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const int margin = 10;
  auto row_of = [&](double v) {
    return margin + static_cast<int>(std::lround((hi - v) / (hi - lo) * (height - 2 * margin - 1)));
  };
  auto put = [&](int x, int y, float r, float g, float b) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    img.at(x, y, 0) = r;
    img.at(x, y, 1) = g;
    img.at(x, y, 2) = b;
  };

  const int n = static_cast<int>(report.models.size());
  const double column = static_cast<double>(width) / n;
  static constexpr float kPalette[][3] = {{0.27f, 0.45f, 0.70f}, {0.87f, 0.52f, 0.32f}, {0.33f, 0.66f, 0.41f},
                                          {0.77f, 0.31f, 0.32f}, {0.51f, 0.45f, 0.70f}, {0.58f, 0.47f, 0.38f}};
  int k = 0;
  for (const auto& [model, per_type] : report.models) {
    const Distribution& d = per_type[index_of(type)];
    const float* color = kPalette[k % 6];
    const double center = column * (k + 0.5);
    // Silverman's rule; a floor keeps constant samples visible as a sliver.
    const double bw = std::max(1.06 * d.std * std::pow(std::max(d.count, 1), -0.2), 0.01 * (hi - lo));
    std::vector<double> density(static_cast<std::size_t>(height), 0.0);
    double peak = 0.0;
    for (int y = margin; y < height - margin; ++y) {
      const double v = hi - (y - margin) * (hi - lo) / (height - 2 * margin - 1);
      double s = 0.0;
      for (double x : d.values) s += std::exp(-0.5 * ((v - x) / bw) * ((v - x) / bw));
      density[static_cast<std::size_t>(y)] = s;
      peak = std::max(peak, s);
    }
    const double half = 0.42 * column;
    for (int y = 0; y < height; ++y) {
      if (peak <= 0.0) break;
      const int w = static_cast<int>(std::lround(density[static_cast<std::size_t>(y)] / peak * half));
      for (int dx = -w; dx <= w; ++dx) put(static_cast<int>(center) + dx, y, color[0], color[1], color[2]);
    }
    const int my = row_of(d.median);
    for (int dx = -static_cast<int>(half / 2); dx <= static_cast<int>(half / 2); ++dx) {
      put(static_cast<int>(center) + dx, my, 0.0f, 0.0f, 0.0f);
    }
    ++k;
  }
  return img;
}

// ---------------------------------------------------------------------------
// Filtering

FilterResult filter_top_k(const ScoreTable& scores, const std::vector<ImageRecord>& images, std::size_t k,
                          CreativityType type, bool group_by_prompt) {
  std::map<std::string, std::optional<std::string>> prompt_of;
  for (const auto& img : images) prompt_of.emplace(img.image_id, img.prompt_id);

  auto better = [](const RankedItem& x, const RankedItem& y) {
    if (x.score != y.score) return x.score > y.score;
    return x.image_id < y.image_id;
  };

  std::vector<RankedItem> candidates;
  std::map<std::string, std::size_t> slot_of_prompt;
  for (const auto& [id, s] : scores) {
    RankedItem item{id, std::nullopt, s[index_of(type)], s};
    if (auto it = prompt_of.find(id); it != prompt_of.end()) item.prompt_id = it->second;
    if (group_by_prompt && item.prompt_id) {
      auto [slot, inserted] = slot_of_prompt.emplace(*item.prompt_id, candidates.size());
      if (!inserted) {
        if (better(item, candidates[slot->second])) candidates[slot->second] = std::move(item);
        continue;
      }
    }
    candidates.push_back(std::move(item));
  }
  if (k > candidates.size()) {
    throw Error("k-too-large",
                "k = " + std::to_string(k) + " exceeds the " + std::to_string(candidates.size()) + " available candidates");
  }
  std::sort(candidates.begin(), candidates.end(), better);
  FilterResult out;
  out.candidates = candidates.size();
  out.top.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<RankedItem> ascending = candidates;
  std::sort(ascending.begin(), ascending.end(), [](const RankedItem& x, const RankedItem& y) {
    if (x.score != y.score) return x.score < y.score;
    return x.image_id < y.image_id;
  });
  out.bottom.assign(ascending.begin(), ascending.begin() + static_cast<std::ptrdiff_t>(k));
  return out;
}

Json to_json(const RankedItem& item) {
  Json scores = Json::object();
  for (CreativityType t : kAllTypes) scores[std::string(to_string(t))] = item.scores[index_of(t)];
  return {{"image_id", item.image_id},
          {"prompt_id", item.prompt_id ? Json(*item.prompt_id) : Json(nullptr)},
          {"score", item.score},
          {"scores", scores}};
}

Json to_json(const FilterResult& result) {
  Json top = Json::array();
  Json bottom = Json::array();
  for (const auto& i : result.top) top.push_back(to_json(i));
  for (const auto& i : result.bottom) bottom.push_back(to_json(i));
  return {{"top", top}, {"bottom", bottom}, {"candidates", result.candidates}};
}

// ---------------------------------------------------------------------------
// Attribution

Eigen::MatrixXd upsample_bilinear(const Eigen::MatrixXd& grid, int height, int width) {
  Eigen::MatrixXd out(height, width);
  const auto rows = grid.rows();
  const auto cols = grid.cols();
  auto source = [](int i, int n_out, Eigen::Index n_in) {
    double s = (i + 0.5) * static_cast<double>(n_in) / n_out - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n_in - 1));
    const auto i0 = static_cast<Eigen::Index>(std::floor(s));
    const auto i1 = std::min(i0 + 1, n_in - 1);
    return std::tuple{i0, i1, s - static_cast<double>(i0)};
  };
  for (int y = 0; y < height; ++y) {
    const auto [y0, y1, fy] = source(y, height, rows);
    for (int x = 0; x < width; ++x) {
      const auto [x0, x1, fx] = source(x, width, cols);
      const double top = (1 - fx) * grid(y0, x0) + fx * grid(y0, x1);
      const double bottom = (1 - fx) * grid(y1, x0) + fx * grid(y1, x1);
      out(y, x) = (1 - fy) * top + fy * bottom;
    }
  }
  return out;
}

AttributionMap grad_cam(const RewardHead& head, const EmbeddingBackbone& backbone, const Image& image,
                        CreativityType type) {
  if (!backbone.has_feature_map()) {
    throw Error("capability", "backbone " + backbone.name() + " does not expose a spatial feature map");
  }
  const FeatureMap features = backbone.feature_map(image);
  const Eigen::VectorXd embedding = backbone.embed(image);
  head.check_input(embedding.rows());
  const Eigen::VectorXd d_embedding =
      head.input_gradient(embedding.cast<float>(), static_cast<int>(index_of(type))).cast<double>();
  const Eigen::MatrixXd d_features = backbone.feature_map_vjp(features, d_embedding);
  const Eigen::RowVectorXd channel_weights = d_features.colwise().mean();
  const Eigen::VectorXd cam = (features.values * channel_weights.transpose()).cwiseMax(0.0);

  AttributionMap out;
  out.type = type;
  out.grid.resize(features.rows, features.cols);
  for (int r = 0; r < features.rows; ++r) {
    for (int c = 0; c < features.cols; ++c) out.grid(r, c) = cam(r * features.cols + c);
  }
  const double peak = out.grid.maxCoeff();
  if (peak > 0.0) {
    out.grid /= peak;
  } else {
    out.grid.setZero();
    out.degenerate = true;
  }
  out.upsampled = upsample_bilinear(out.grid, image.height, image.width);
  return out;
}

void save_attribution(const std::filesystem::path& stem, const AttributionMap& map) {
  auto with = [&](const char* ext) { return std::filesystem::path(stem.string() + ext); };
  write_text(with(".pgm"), encode_pgm(map.upsampled));
  std::string raw;
  raw.reserve(static_cast<std::size_t>(map.upsampled.size()) * 4);
  for (Eigen::Index y = 0; y < map.upsampled.rows(); ++y) {
    for (Eigen::Index x = 0; x < map.upsampled.cols(); ++x) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(map.upsampled(y, x)));
      for (int b = 0; b < 4; ++b) raw += static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
  }
  write_text(with(".f32"), raw);
  Json grid = Json::array();
  for (Eigen::Index r = 0; r < map.grid.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < map.grid.cols(); ++c) row.push_back(map.grid(r, c));
    grid.push_back(row);
  }
  const Json meta = {{"type", to_string(map.type)},
                     {"degenerate", map.degenerate},
                     {"grid", grid},
                     {"grid_shape", {map.grid.rows(), map.grid.cols()}},
                     {"upsampled_shape", {map.upsampled.rows(), map.upsampled.cols()}},
                     {"raw", with(".f32").filename().string()},
                     {"raw_format", "float32 little-endian, row-major"}};
  write_text(with(".json"), meta.dump(1) + "\n");
}

}  // namespace creward
