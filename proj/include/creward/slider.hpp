#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "creward/annotate.hpp"
#include "creward/core.hpp"
#include "creward/reward.hpp"

namespace creward {

// ---------------------------------------------------------------------------
// Noise schedule and one-step estimate

struct NoiseSchedule {
  std::vector<double> alpha_bar;  // indexed by timestep, non-increasing, in (0, 1]
  std::vector<int> steps;         // denoising timesteps, descending

  /// Stable-Diffusion style scaled-linear betas over `train_steps`, sampled
  /// at `n_steps` evenly spaced timesteps (999, 749, 499, 249 for 4 steps).
  static NoiseSchedule scaled_linear(int train_steps = 1000, int n_steps = 4, double beta_start = 0.00085,
                                     double beta_end = 0.012);

  int train_steps() const { return static_cast<int>(alpha_bar.size()); }
  double at(int t) const;
  /// Throws Error{"domain"} when an invariant fails.
  void validate() const;
};

template <typename Scalar>
void check_alpha_bar(Scalar alpha_bar) {
  if (!(alpha_bar > 0) || alpha_bar > 1) {
    throw Error("domain", "alpha_bar must lie in (0, 1], got " + std::to_string(static_cast<double>(alpha_bar)));
  }
}

/// x_t = sqrt(a) x0 + sqrt(1 - a) eps.
template <typename DX, typename DE>
typename DX::PlainObject forward_noise(const Eigen::MatrixBase<DX>& x0, const Eigen::MatrixBase<DE>& eps,
                                       typename DX::Scalar alpha_bar) {
  using std::sqrt;
  using S = typename DX::Scalar;
  check_alpha_bar(alpha_bar);
  return sqrt(alpha_bar) * x0 + sqrt(S(1) - alpha_bar) * eps;
}

/// x0_hat = (x_t - sqrt(1 - a) eps_pred) / sqrt(a). Throws Error{"domain"}
/// unless a is in (0, 1].
template <typename DX, typename DE>
typename DX::PlainObject estimate_x0(const Eigen::MatrixBase<DX>& x_t, const Eigen::MatrixBase<DE>& eps_pred,
                                     typename DX::Scalar alpha_bar) {
  using std::sqrt;
  using S = typename DX::Scalar;
  check_alpha_bar(alpha_bar);
  return (x_t - sqrt(S(1) - alpha_bar) * eps_pred) / sqrt(alpha_bar);
}

// ---------------------------------------------------------------------------
// Decoder and reward

class DecoderAdapter {
 public:
  virtual ~DecoderAdapter() = default;
  virtual Eigen::VectorXd decode(const Eigen::VectorXd& latent) const = 0;
  /// d(scalar)/d(latent) given d(scalar)/d(decoded).
  virtual Eigen::VectorXd vjp(const Eigen::VectorXd& latent, const Eigen::VectorXd& d_decoded) const = 0;
};

/// D(z) = M z + c; identity when default-constructed for a dimension.
class LinearDecoder final : public DecoderAdapter {
 public:
  explicit LinearDecoder(int dim) : m_(Eigen::MatrixXd::Identity(dim, dim)), c_(Eigen::VectorXd::Zero(dim)) {}
  LinearDecoder(Eigen::MatrixXd m, Eigen::VectorXd c) : m_(std::move(m)), c_(std::move(c)) {}
  Eigen::VectorXd decode(const Eigen::VectorXd& latent) const override { return m_ * latent + c_; }
  Eigen::VectorXd vjp(const Eigen::VectorXd&, const Eigen::VectorXd& d) const override { return m_.transpose() * d; }

 private:
  Eigen::MatrixXd m_;
  Eigen::VectorXd c_;
};

/// Differentiable scalar reward f^(c) on decoded samples.
class RewardFunction {
 public:
  virtual ~RewardFunction() = default;
  virtual double value(const Eigen::VectorXd& decoded) const = 0;
  virtual Eigen::VectorXd gradient(const Eigen::VectorXd& decoded) const = 0;
  virtual std::uint64_t param_hash() const = 0;
};

/// f(x) = -||x - target||^2; maximized at the target.
class QuadraticReward final : public RewardFunction {
 public:
  explicit QuadraticReward(Eigen::VectorXd target) : target_(std::move(target)) {}
  double value(const Eigen::VectorXd& x) const override { return -(x - target_).squaredNorm(); }
  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const override { return -2.0 * (x - target_); }
  std::uint64_t param_hash() const override;
  const Eigen::VectorXd& target() const { return target_; }

 private:
  Eigen::VectorXd target_;
};

/// One type's CREward score of a decoded sample read as an RGB image.
class HeadReward final : public RewardFunction {
 public:
  HeadReward(const RewardHead& head, const EmbeddingBackbone& backbone, CreativityType type, int width, int height);
  double value(const Eigen::VectorXd& decoded) const override;
  Eigen::VectorXd gradient(const Eigen::VectorXd& decoded) const override;
  std::uint64_t param_hash() const override;

 private:
  Image as_image(const Eigen::VectorXd& decoded) const;

  const RewardHead& head_;
  const EmbeddingBackbone& backbone_;
  CreativityType type_;
  int width_;
  int height_;
};

// ---------------------------------------------------------------------------
// Objective

struct SliderLoss {
  double l_cre = 0.0;
  double l_pre = 0.0;
  double total = 0.0;
  Eigen::VectorXd d_x0_hat;
  Eigen::VectorXd d_eps_pred;
  Eigen::VectorXd d_eps_true;
};

/// L_cre = -f(D(x0_hat)), L_pre = mean((eps_pred - eps_true)^2),
/// L = L_cre + lambda L_pre, with gradients w.r.t. each input taken
/// independently. Throws Error{"non-finite"} with the component values.
SliderLoss slider_losses(const Eigen::VectorXd& x0_hat, const Eigen::VectorXd& eps_pred,
                         const Eigen::VectorXd& eps_true, const RewardFunction& reward,
                         const DecoderAdapter& decoder, double lambda);

/// slider_losses composed with estimate_x0; d_eps_pred is the total
/// derivative through both terms.
SliderLoss slider_objective(const Eigen::VectorXd& x_t, const Eigen::VectorXd& eps_pred,
                            const Eigen::VectorXd& eps_true, double alpha_bar, const RewardFunction& reward,
                            const DecoderAdapter& decoder, double lambda);

// ---------------------------------------------------------------------------
// Low-rank adapters

/// delta = (alpha / rank) B A, A: rank x in, B: out x rank.
struct LowRankDelta {
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;
};

struct Slider {
  std::string target_type;
  int rank = 8;
  double alpha = 8.0;
  std::map<std::string, LowRankDelta> layers;
  Json manifest = Json::object();

  double scale() const { return alpha / rank; }
  Eigen::MatrixXd delta(const std::string& layer) const;
};

void save_slider(const std::filesystem::path& path, const Slider& slider);
Slider load_slider(const std::filesystem::path& path);

struct LatentInput {
  Eigen::VectorXd x_t;
  std::string prompt;
  int t = 0;
};

using SliderGrad = std::map<std::string, LowRankDelta>;  // d/dA, d/dB per layer

/// Noise predictor with named linear layers that accept low-rank deltas.
class DenoiserAdapter {
 public:
  virtual ~DenoiserAdapter() = default;

  virtual int latent_dim() const = 0;
  /// Targeted layers and their (out, in) shapes.
  virtual std::map<std::string, std::pair<int, int>> layer_shapes() const = 0;
  /// eps_phi(x_t, y, t) with the slider's deltas (scaled by `strength`) on top.
  virtual Eigen::VectorXd predict(const LatentInput& in, const Slider* slider = nullptr,
                                  double strength = 1.0) const = 0;
  /// Gradient of a scalar w.r.t. the slider's A and B given d/d(eps_phi).
  virtual SliderGrad backward(const LatentInput& in, const Slider& slider, const Eigen::VectorXd& d_eps) const = 0;
  /// Copy with `deltas` merged into the base weights.
  virtual std::unique_ptr<DenoiserAdapter> merged(const std::map<std::string, Eigen::MatrixXd>& deltas) const = 0;
  virtual std::uint64_t base_hash() const = 0;
};

/// Deterministic conditioning vector for a prompt.
Eigen::VectorXd toy_condition(const std::string& prompt, int dim);

/// eps = W x_t + V c(y) + (t / T) u, with layers "W" and "V" adaptable.
class ToyDenoiser final : public DenoiserAdapter {
 public:
  ToyDenoiser(Eigen::MatrixXd w, Eigen::MatrixXd v, Eigen::VectorXd u, int train_steps);

  int latent_dim() const override { return static_cast<int>(w_.rows()); }
  std::map<std::string, std::pair<int, int>> layer_shapes() const override;
  Eigen::VectorXd predict(const LatentInput& in, const Slider* slider = nullptr, double strength = 1.0) const override;
  SliderGrad backward(const LatentInput& in, const Slider& slider, const Eigen::VectorXd& d_eps) const override;
  std::unique_ptr<DenoiserAdapter> merged(const std::map<std::string, Eigen::MatrixXd>& deltas) const override;
  std::uint64_t base_hash() const override;

  const Eigen::MatrixXd& w() const { return w_; }
  const Eigen::MatrixXd& v() const { return v_; }

 private:
  Eigen::VectorXd layer_input(const std::string& layer, const LatentInput& in) const;

  Eigen::MatrixXd w_;
  Eigen::MatrixXd v_;
  Eigen::VectorXd u_;
  int train_steps_;
};

/// Low-dimensional stand-in for a text-to-image diffusion model: latents
/// x0 = G c(y) + sigma z, and a least-squares fitted ToyDenoiser as the base.
class ToyDiffusion {
 public:
  ToyDiffusion(int latent_dim = 8, int cond_dim = 8, std::uint64_t seed = 0, double sigma = 0.5,
               NoiseSchedule schedule = NoiseSchedule::scaled_linear());

  Eigen::VectorXd sample_x0(const std::string& prompt, std::uint64_t seed) const;
  /// Base denoiser fitted on forward-noised samples over the schedule steps.
  ToyDenoiser fit_denoiser(const std::vector<std::string>& prompts, int samples_per_prompt, std::uint64_t seed) const;

  int latent_dim() const { return latent_dim_; }
  const NoiseSchedule& schedule() const { return schedule_; }

 private:
  int latent_dim_;
  int cond_dim_;
  double sigma_;
  Eigen::MatrixXd g_;
  NoiseSchedule schedule_;
};

// ---------------------------------------------------------------------------
// Training and application

struct SliderConfig {
  CreativityType type = CreativityType::overall;
  double lambda = 0.1;
  int rank = 8;
  double alpha = 8.0;
  int epochs = 35;
  std::vector<std::string> objects = {"chair", "vase", "handbag", "car", "bowl"};
  std::string prompt_template = "a photo of {obj}";
  int images_per_prompt = 20;
  double lr = 1e-4;
  int grad_accumulation = 10;
  int batch_size = 1;
  int eval_samples_per_prompt = 8;
  std::uint64_t seed = 0;

  std::vector<std::string> prompts() const;
};
Json to_json(const SliderConfig& c);

/// Draws a base-model sample for a prompt.
using BaseSampler = std::function<Eigen::VectorXd(const std::string& prompt, std::uint64_t seed)>;

struct SliderEpoch {
  int epoch = 0;
  double l_cre = 0.0;
  double l_pre = 0.0;
  double total = 0.0;
  double mean_reward = 0.0;  // on the fixed evaluation set, after the epoch
};

struct SliderReport {
  double initial_reward = 0.0;
  std::vector<SliderEpoch> epochs;
  std::uint64_t base_hash = 0;
  std::uint64_t reward_hash_before = 0;
  std::uint64_t reward_hash_after = 0;
  int optimizer_steps = 0;
};
Json to_json(const SliderReport& r);

struct SliderResult {
  Slider slider;
  SliderReport report;
};

/// Optimizes only the low-rank factors (B starts at zero) with Adam, batch 1
/// and gradient accumulation. Every step is followed by a base-weight hash
/// check; a change throws Error{"freeze"}.
SliderResult train_slider(const SliderConfig& config, const DenoiserAdapter& denoiser, const DecoderAdapter& decoder,
                          const RewardFunction& reward, const NoiseSchedule& schedule, const BaseSampler& sample);

/// Deterministic DDIM (eta = 0) sampling over the schedule's steps from
/// seeded Gaussian noise; returns the final clean-latent estimate.
Eigen::VectorXd sample_latent(const DenoiserAdapter& denoiser, const NoiseSchedule& schedule,
                              const std::string& prompt, std::uint64_t seed);

struct WeightedSlider {
  const Slider* slider = nullptr;
  double strength = 1.0;
};

/// Base weights plus sum of w * (alpha / r) B A per layer. Zero-strength
/// sliders are skipped, so an all-zero mix equals the base bit for bit.
/// Throws Error{"shape"} for adapters that do not fit the base.
std::unique_ptr<DenoiserAdapter> apply_sliders(const DenoiserAdapter& base, const std::vector<WeightedSlider>& sliders);

// ---------------------------------------------------------------------------
// Guidance evaluation

struct GuidancePair {
  std::string id;
  Image original;
  Image guided;
};

struct GuidanceRow {
  std::string id;
  TypeScores original{};
  TypeScores guided{};
  TypeScores delta{};
  std::optional<Verdicts> judge;  // annotator verdicts with A = original, B = guided
  double euclidean = 0.0;
  double cosine = 0.0;
};

struct GuidanceReport {
  std::vector<GuidanceRow> rows;
  TypeScores mean_delta{};
  TypeScores improvement_ratio{};  // ties count as non-improvement
  std::string judge;               // annotator id, or "reward-head"
  double mean_euclidean = 0.0;
  double mean_cosine = 0.0;
  std::vector<ItemFailure> failures;
};

double euclidean_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
/// 1 - cos(a, b) in [0, 2]; 0 when both are zero, 1 when exactly one is.
double cosine_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Without a judge the reward head decides (guided strictly higher wins).
GuidanceReport evaluate_guidance(const std::vector<GuidancePair>& pairs, const RewardHead& head,
                                 const EmbeddingBackbone& backbone, AnnotatorClient* judge = nullptr,
                                 const std::string& prompt_version = std::string(kDefaultPromptVersion));

Json to_json(const GuidanceReport& r);
/// id,type,original,guided,delta,judge,euclidean,cosine
std::string guidance_csv(const GuidanceReport& r);

}  // namespace creward
