#include "creward/slider.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Cholesky>

#include "creward/hash.hpp"
#include "creward/rng.hpp"

namespace creward {

// ---------------------------------------------------------------------------
// Schedule

NoiseSchedule NoiseSchedule::scaled_linear(int train_steps, int n_steps, double beta_start, double beta_end) {
  if (train_steps < 1 || n_steps < 1 || n_steps > train_steps) {
    throw Error("domain", "schedule needs 1 <= n_steps <= train_steps");
  }
  NoiseSchedule s;
  s.alpha_bar.resize(static_cast<std::size_t>(train_steps));
  const double r0 = std::sqrt(beta_start);
  const double r1 = std::sqrt(beta_end);
  double prod = 1.0;
  for (int t = 0; t < train_steps; ++t) {
    const double r = train_steps == 1 ? r0 : r0 + (r1 - r0) * t / (train_steps - 1);
    prod *= 1.0 - r * r;
    s.alpha_bar[static_cast<std::size_t>(t)] = prod;
  }
  for (int k = 0; k < n_steps; ++k) s.steps.push_back(train_steps - 1 - k * (train_steps / n_steps));
  s.validate();
  return s;
}

double NoiseSchedule::at(int t) const {
  if (t < 0 || t >= train_steps()) throw Error("domain", "timestep " + std::to_string(t) + " outside the schedule");
  return alpha_bar[static_cast<std::size_t>(t)];
}

void NoiseSchedule::validate() const {
  if (alpha_bar.empty()) throw Error("domain", "empty noise schedule");
  for (std::size_t i = 0; i < alpha_bar.size(); ++i) {
    if (!(alpha_bar[i] > 0.0) || alpha_bar[i] > 1.0) throw Error("domain", "alpha_bar outside (0, 1]");
    if (i > 0 && alpha_bar[i] > alpha_bar[i - 1]) throw Error("domain", "alpha_bar must be non-increasing");
  }
  for (int t : steps) {
    if (t < 0 || t >= train_steps()) throw Error("domain", "denoising step outside the schedule");
  }
}

// ---------------------------------------------------------------------------
// Rewards

std::uint64_t QuadraticReward::param_hash() const { return Fnv1a{}.update(target_).digest(); }

HeadReward::HeadReward(const RewardHead& head, const EmbeddingBackbone& backbone, CreativityType type, int width,
                       int height)
    : head_(head), backbone_(backbone), type_(type), width_(width), height_(height) {
  if (!backbone.differentiable()) {
    throw Error("capability", "backbone " + backbone.name() + " has no differentiable pixel path");
  }
  head.check_input(backbone.dim());
}

Image HeadReward::as_image(const Eigen::VectorXd& decoded) const {
  Image img = make_image(width_, height_);
  if (static_cast<std::size_t>(decoded.size()) != img.rgb.size()) {
    throw Error("dimension", "decoded sample has " + std::to_string(decoded.size()) + " values, expected " +
                                 std::to_string(img.rgb.size()));
  }
  for (Eigen::Index i = 0; i < decoded.size(); ++i) img.rgb[static_cast<std::size_t>(i)] = static_cast<float>(decoded(i));
  return img;
}

double HeadReward::value(const Eigen::VectorXd& decoded) const {
  return head_forward(head_, backbone_.embed(as_image(decoded)))[index_of(type_)];
}

Eigen::VectorXd HeadReward::gradient(const Eigen::VectorXd& decoded) const {
  const Image img = as_image(decoded);
  const Eigen::VectorXf e = backbone_.embed(img).cast<float>();
  const Eigen::VectorXd g = head_.input_gradient(e, static_cast<int>(index_of(type_))).cast<double>();
  return backbone_.pixel_vjp(img, g);
}

std::uint64_t HeadReward::param_hash() const {
  return Fnv1a{}.update(to_hex(head_.param_hash())).update(to_hex(backbone_.param_hash())).digest();
}

// ---------------------------------------------------------------------------
// Objective

SliderLoss slider_losses(const Eigen::VectorXd& x0_hat, const Eigen::VectorXd& eps_pred,
                         const Eigen::VectorXd& eps_true, const RewardFunction& reward,
                         const DecoderAdapter& decoder, double lambda) {
  if (eps_pred.size() != eps_true.size()) throw Error("dimension", "eps_pred and eps_true differ in size");
  SliderLoss out;
  const Eigen::VectorXd decoded = decoder.decode(x0_hat);
  out.l_cre = -reward.value(decoded);
  const Eigen::VectorXd diff = eps_pred - eps_true;
  const double n = static_cast<double>(std::max<Eigen::Index>(diff.size(), 1));
  out.l_pre = diff.squaredNorm() / n;
  out.total = out.l_cre + lambda * out.l_pre;
  if (!std::isfinite(out.total)) {
    std::ostringstream msg;
    msg << "non-finite slider loss: L_cre=" << out.l_cre << " L_pre=" << out.l_pre << " lambda=" << lambda;
    throw Error("non-finite", msg.str());
  }
  out.d_x0_hat = -decoder.vjp(x0_hat, reward.gradient(decoded));
  out.d_eps_pred = (2.0 * lambda / n) * diff;
  out.d_eps_true = -out.d_eps_pred;
  return out;
}

SliderLoss slider_objective(const Eigen::VectorXd& x_t, const Eigen::VectorXd& eps_pred,
                            const Eigen::VectorXd& eps_true, double alpha_bar, const RewardFunction& reward,
                            const DecoderAdapter& decoder, double lambda) {
  const Eigen::VectorXd x0_hat = estimate_x0(x_t, eps_pred, alpha_bar);
  SliderLoss out = slider_losses(x0_hat, eps_pred, eps_true, reward, decoder, lambda);
  out.d_eps_pred += -(std::sqrt(1.0 - alpha_bar) / std::sqrt(alpha_bar)) * out.d_x0_hat;
  return out;
}

// ---------------------------------------------------------------------------
// Low-rank adapters

Eigen::MatrixXd Slider::delta(const std::string& layer) const {
  const LowRankDelta& d = layers.at(layer);
  return scale() * (d.b * d.a);
}

namespace {

Json matrix_json(const Eigen::MatrixXd& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Eigen::MatrixXd matrix_from_json(const Json& j) {
  Eigen::MatrixXd m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != m.size()) throw Error("schema", "matrix size mismatch");
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

constexpr std::string_view kSliderFormat = "creward-slider/1";

}  // namespace

void save_slider(const std::filesystem::path& path, const Slider& slider) {
  Json layers = Json::object();
  for (const auto& [name, d] : slider.layers) layers[name] = {{"a", matrix_json(d.a)}, {"b", matrix_json(d.b)}};
  const Json j = {{"format", kSliderFormat},  {"target_type", slider.target_type}, {"rank", slider.rank},
                  {"alpha", slider.alpha},    {"layers", layers},                  {"manifest", slider.manifest}};
  write_text(path, j.dump(1) + "\n");
}

Slider load_slider(const std::filesystem::path& path) {
  const Json j = Json::parse(read_text(path), nullptr, false);
  if (!j.is_object() || j.value("format", "") != kSliderFormat) {
    throw Error("schema", path.string() + " is not a slider archive");
  }
  try {
    Slider s;
    s.target_type = j.at("target_type").get<std::string>();
    s.rank = j.at("rank").get<int>();
    s.alpha = j.at("alpha").get<double>();
    s.manifest = j.at("manifest");
    for (const auto& [name, layer] : j.at("layers").items()) {
      s.layers[name] = {matrix_from_json(layer.at("a")), matrix_from_json(layer.at("b"))};
    }
    return s;
  } catch (const Json::exception& e) {
    throw Error("schema", path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Toy system

Eigen::VectorXd toy_condition(const std::string& prompt, int dim) {
  Rng rng(fnv1a(prompt));
  Eigen::VectorXd c(dim);
  for (Eigen::Index i = 0; i < dim; ++i) c(i) = rng.normal();
  return c;
}

ToyDenoiser::ToyDenoiser(Eigen::MatrixXd w, Eigen::MatrixXd v, Eigen::VectorXd u, int train_steps)
    : w_(std::move(w)), v_(std::move(v)), u_(std::move(u)), train_steps_(train_steps) {
  if (w_.rows() != w_.cols() || v_.rows() != w_.rows() || u_.rows() != w_.rows()) {
    throw Error("shape", "toy denoiser weights have inconsistent shapes");
  }
}

std::map<std::string, std::pair<int, int>> ToyDenoiser::layer_shapes() const {
  return {{"W", {static_cast<int>(w_.rows()), static_cast<int>(w_.cols())}},
          {"V", {static_cast<int>(v_.rows()), static_cast<int>(v_.cols())}}};
}

Eigen::VectorXd ToyDenoiser::layer_input(const std::string& layer, const LatentInput& in) const {
  if (layer == "W") return in.x_t;
  if (layer == "V") return toy_condition(in.prompt, static_cast<int>(v_.cols()));
  throw Error("shape", "toy denoiser has no layer " + layer);
}

Eigen::VectorXd ToyDenoiser::predict(const LatentInput& in, const Slider* slider, double strength) const {
  if (in.x_t.size() != w_.cols()) throw Error("dimension", "latent size mismatch");
  const Eigen::VectorXd c = toy_condition(in.prompt, static_cast<int>(v_.cols()));
  Eigen::VectorXd eps = w_ * in.x_t + v_ * c + (static_cast<double>(in.t) / train_steps_) * u_;
  if (slider != nullptr && strength != 0.0) {
    const double s = strength * slider->scale();
    for (const auto& [name, d] : slider->layers) eps += s * (d.b * (d.a * layer_input(name, in)));
  }
  return eps;
}

SliderGrad ToyDenoiser::backward(const LatentInput& in, const Slider& slider, const Eigen::VectorXd& d_eps) const {
  SliderGrad g;
  const double s = slider.scale();
  for (const auto& [name, d] : slider.layers) {
    const Eigen::VectorXd x = layer_input(name, in);
    g[name] = {s * (d.b.transpose() * d_eps) * x.transpose(), s * d_eps * (d.a * x).transpose()};
  }
  return g;
}

std::unique_ptr<DenoiserAdapter> ToyDenoiser::merged(const std::map<std::string, Eigen::MatrixXd>& deltas) const {
  auto out = std::make_unique<ToyDenoiser>(*this);
  for (const auto& [name, delta] : deltas) {
    Eigen::MatrixXd& target = name == "W" ? out->w_ : name == "V" ? out->v_ : throw Error("shape", "no layer " + name);
    if (delta.rows() != target.rows() || delta.cols() != target.cols()) {
      throw Error("shape", "delta for layer " + name + " does not match the base weight shape");
    }
    target += delta;
  }
  return out;
}

std::uint64_t ToyDenoiser::base_hash() const {
  return Fnv1a{}.update(w_).update(v_).update(u_).update(std::to_string(train_steps_)).digest();
}

ToyDiffusion::ToyDiffusion(int latent_dim, int cond_dim, std::uint64_t seed, double sigma, NoiseSchedule schedule)
    : latent_dim_(latent_dim), cond_dim_(cond_dim), sigma_(sigma), g_(latent_dim, cond_dim),
      schedule_(std::move(schedule)) {
  schedule_.validate();
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cond_dim));
  for (Eigen::Index c = 0; c < g_.cols(); ++c) {
    for (Eigen::Index r = 0; r < g_.rows(); ++r) g_(r, c) = scale * rng.normal();
  }
}

Eigen::VectorXd ToyDiffusion::sample_x0(const std::string& prompt, std::uint64_t seed) const {
  Rng rng(seed ^ fnv1a(prompt));
  Eigen::VectorXd z(latent_dim_);
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return g_ * toy_condition(prompt, cond_dim_) + sigma_ * z;
}

ToyDenoiser ToyDiffusion::fit_denoiser(const std::vector<std::string>& prompts, int samples_per_prompt,
                                       std::uint64_t seed) const {
  // Ridge least squares of eps on [x_t, c(y), t/T] over every schedule step.
  const int features = latent_dim_ + cond_dim_ + 1;
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(features, features);
  Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(features, latent_dim_);
  Rng rng(seed);
  const int T = schedule_.train_steps();
  for (const auto& prompt : prompts) {
    const Eigen::VectorXd c = toy_condition(prompt, cond_dim_);
    for (int i = 0; i < samples_per_prompt; ++i) {
      const Eigen::VectorXd x0 = sample_x0(prompt, rng.next_u64());
      for (int t : schedule_.steps) {
        Eigen::VectorXd eps(latent_dim_);
        for (Eigen::Index k = 0; k < eps.size(); ++k) eps(k) = rng.normal();
        Eigen::VectorXd phi(features);
        phi << forward_noise(x0, eps, schedule_.at(t)), c, static_cast<double>(t) / T;
        gram.noalias() += phi * phi.transpose();
        cross.noalias() += phi * eps.transpose();
      }
    }
  }
  gram.diagonal().array() += 1e-6;
  const Eigen::MatrixXd theta = gram.ldlt().solve(cross).transpose();  // latent x features
  return ToyDenoiser(theta.leftCols(latent_dim_), theta.middleCols(latent_dim_, cond_dim_), theta.rightCols(1), T);
}

// ---------------------------------------------------------------------------
// Training

std::vector<std::string> SliderConfig::prompts() const {
  std::vector<std::string> out;
  for (const auto& obj : objects) out.push_back(instantiate_template(prompt_template, obj));
  return out;
}

Json to_json(const SliderConfig& c) {
  return {{"type", to_string(c.type)},
          {"lambda", c.lambda},
          {"rank", c.rank},
          {"alpha", c.alpha},
          {"epochs", c.epochs},
          {"objects", c.objects},
          {"prompt_template", c.prompt_template},
          {"images_per_prompt", c.images_per_prompt},
          {"lr", c.lr},
          {"grad_accumulation", c.grad_accumulation},
          {"batch_size", c.batch_size},
          {"eval_samples_per_prompt", c.eval_samples_per_prompt},
          {"seed", c.seed}};
}

Json to_json(const SliderReport& r) {
  Json epochs = Json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"l_cre", e.l_cre},
                      {"l_pre", e.l_pre},
                      {"loss", e.total},
                      {"mean_reward", e.mean_reward}});
  }
  return {{"initial_reward", r.initial_reward},
          {"epochs", epochs},
          {"base_hash", to_hex(r.base_hash)},
          {"reward_hash_before", to_hex(r.reward_hash_before)},
          {"reward_hash_after", to_hex(r.reward_hash_after)},
          {"optimizer_steps", r.optimizer_steps}};
}

namespace {

Eigen::VectorXd gaussian(Rng& rng, Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

struct Sample {
  LatentInput in;
  Eigen::VectorXd x0;
  double alpha_bar = 1.0;
};

class LowRankAdam {
 public:
  LowRankAdam(const Slider& s, double lr) : lr_(lr) {
    for (const auto& [name, d] : s.layers) {
      m_[name] = {Eigen::MatrixXd::Zero(d.a.rows(), d.a.cols()), Eigen::MatrixXd::Zero(d.b.rows(), d.b.cols())};
      v_[name] = m_[name];
    }
  }

  void step(Slider& s, const SliderGrad& g) {
    ++t_;
    constexpr double b1 = 0.9;
    constexpr double b2 = 0.999;
    constexpr double eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, t_);
    const double c2 = 1.0 - std::pow(b2, t_);
    auto update = [&](Eigen::MatrixXd& p, Eigen::MatrixXd& m, Eigen::MatrixXd& v, const Eigen::MatrixXd& grad) {
      m = b1 * m + (1 - b1) * grad;
      v = b2 * v + (1 - b2) * grad.cwiseAbs2();
      p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    for (auto& [name, d] : s.layers) {
      const LowRankDelta& gd = g.at(name);
      update(d.a, m_[name].a, v_[name].a, gd.a);
      update(d.b, m_[name].b, v_[name].b, gd.b);
    }
  }

 private:
  double lr_;
  int t_ = 0;
  std::map<std::string, LowRankDelta> m_, v_;
};

}  // namespace

SliderResult train_slider(const SliderConfig& config, const DenoiserAdapter& denoiser, const DecoderAdapter& decoder,
                          const RewardFunction& reward, const NoiseSchedule& schedule, const BaseSampler& sample) {
  if (config.lambda < 0 || config.rank < 1 || config.epochs < 0 || config.grad_accumulation < 1 ||
      config.batch_size < 1) {
    throw Error("config", "slider config needs lambda >= 0, rank >= 1 and positive step sizes");
  }
  schedule.validate();
  if (schedule.steps.empty()) throw Error("config", "schedule has no denoising steps");

  SliderReport report;
  report.base_hash = denoiser.base_hash();
  report.reward_hash_before = reward.param_hash();

  Rng rng(config.seed);
  Slider slider;
  slider.target_type = std::string(to_string(config.type));
  slider.rank = config.rank;
  slider.alpha = config.alpha;
  for (const auto& [name, shape] : denoiser.layer_shapes()) {
    const auto [out, in] = shape;
    LowRankDelta d{Eigen::MatrixXd(config.rank, in), Eigen::MatrixXd::Zero(out, config.rank)};
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index c = 0; c < d.a.cols(); ++c) {
      for (Eigen::Index r = 0; r < d.a.rows(); ++r) d.a(r, c) = s * rng.normal();
    }
    slider.layers.emplace(name, std::move(d));
  }

  const auto prompts = config.prompts();
  std::vector<std::pair<std::string, Eigen::VectorXd>> images;
  for (const auto& p : prompts) {
    for (int i = 0; i < config.images_per_prompt; ++i) images.emplace_back(p, sample(p, rng.next_u64()));
  }
  auto noised = [&](const std::string& prompt, const Eigen::VectorXd& x0, Rng& r) {
    const int t = schedule.steps[r.uniform_index(schedule.steps.size())];
    const double a = schedule.at(t);
    const Eigen::VectorXd eps = gaussian(r, x0.size());
    return std::pair{Sample{{forward_noise(x0, eps, a), prompt, t}, x0, a}, eps};
  };

  // Fixed evaluation set, drawn from its own stream.
  Rng eval_rng(config.seed ^ 0x6576616cULL);
  std::vector<Sample> eval;
  for (const auto& p : prompts) {
    for (int i = 0; i < config.eval_samples_per_prompt; ++i) {
      eval.push_back(noised(p, sample(p, eval_rng.next_u64()), eval_rng).first);
    }
  }
  auto mean_reward = [&] {
    double sum = 0.0;
    for (const auto& s : eval) {
      const Eigen::VectorXd x0_hat = estimate_x0(s.in.x_t, denoiser.predict(s.in, &slider), s.alpha_bar);
      sum += reward.value(decoder.decode(x0_hat));
    }
    return eval.empty() ? 0.0 : sum / static_cast<double>(eval.size());
  };
  report.initial_reward = mean_reward();

  LowRankAdam adam(slider, config.lr);
  const int per_step = config.batch_size * config.grad_accumulation;
  std::vector<std::size_t> order(images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    SliderEpoch stats{epoch};
    SliderGrad acc;
    int pending = 0;
    auto flush = [&] {
      if (pending == 0) return;
      for (auto& [name, g] : acc) {
        g.a /= pending;
        g.b /= pending;
      }
      adam.step(slider, acc);
      ++report.optimizer_steps;
      if (denoiser.base_hash() != report.base_hash) {
        throw Error("freeze", "base denoiser weights changed during slider training");
      }
      acc.clear();
      pending = 0;
    };
    for (std::size_t idx : order) {
      const auto& [prompt, x0] = images[idx];
      const auto [s, eps] = noised(prompt, x0, rng);
      const Eigen::VectorXd eps_pred = denoiser.predict(s.in, &slider);
      const SliderLoss loss =
          slider_objective(s.in.x_t, eps_pred, eps, s.alpha_bar, reward, decoder, config.lambda);
      stats.l_cre += loss.l_cre;
      stats.l_pre += loss.l_pre;
      stats.total += loss.total;
      const SliderGrad g = denoiser.backward(s.in, slider, loss.d_eps_pred);
      for (const auto& [name, gd] : g) {
        auto [it, inserted] = acc.emplace(name, gd);
        if (!inserted) {
          it->second.a += gd.a;
          it->second.b += gd.b;
        }
      }
      if (++pending == per_step) flush();
    }
    flush();
    const double n = std::max<double>(static_cast<double>(images.size()), 1.0);
    stats.l_cre /= n;
    stats.l_pre /= n;
    stats.total /= n;
    stats.mean_reward = mean_reward();
    report.epochs.push_back(stats);
  }
  report.reward_hash_after = reward.param_hash();
  if (report.reward_hash_after != report.reward_hash_before) {
    throw Error("freeze", "reward function parameters changed during slider training");
  }
  slider.manifest = {{"config", to_json(config)}, {"report", to_json(report)}};
  return {std::move(slider), std::move(report)};
}

Eigen::VectorXd sample_latent(const DenoiserAdapter& denoiser, const NoiseSchedule& schedule,
                              const std::string& prompt, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd x = gaussian(rng, denoiser.latent_dim());
  Eigen::VectorXd x0 = x;
  for (std::size_t k = 0; k < schedule.steps.size(); ++k) {
    const int t = schedule.steps[k];
    const double a = schedule.at(t);
    const Eigen::VectorXd eps = denoiser.predict({x, prompt, t});
    x0 = estimate_x0(x, eps, a);
    if (k + 1 < schedule.steps.size()) x = forward_noise(x0, eps, schedule.at(schedule.steps[k + 1]));
  }
  return x0;
}

std::unique_ptr<DenoiserAdapter> apply_sliders(const DenoiserAdapter& base, const std::vector<WeightedSlider>& sliders) {
  const auto shapes = base.layer_shapes();
  std::map<std::string, Eigen::MatrixXd> deltas;
  for (const auto& ws : sliders) {
    if (ws.slider == nullptr) throw Error("shape", "null slider");
    for (const auto& [name, d] : ws.slider->layers) {
      auto it = shapes.find(name);
      if (it == shapes.end()) throw Error("shape", "slider targets unknown layer " + name);
      const auto [out, in] = it->second;
      if (d.a.cols() != in || d.b.rows() != out || d.a.rows() != d.b.cols()) {
        throw Error("shape", "slider factors for layer " + name + " do not fit the base shape");
      }
      if (ws.strength == 0.0) continue;
      const Eigen::MatrixXd delta = ws.strength * ws.slider->delta(name);
      auto [slot, inserted] = deltas.emplace(name, delta);
      if (!inserted) slot->second += delta;
    }
  }
  return base.merged(deltas);
}

// ---------------------------------------------------------------------------
// Guidance evaluation

double euclidean_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a - b).norm(); }

double cosine_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a == b) return 0.0;
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 && nb == 0.0) return 0.0;
  if (na == 0.0 || nb == 0.0) return 1.0;
  return std::clamp(1.0 - a.dot(b) / (na * nb), 0.0, 2.0);
}

GuidanceReport evaluate_guidance(const std::vector<GuidancePair>& pairs, const RewardHead& head,
                                 const EmbeddingBackbone& backbone, AnnotatorClient* judge,
                                 const std::string& prompt_version) {
  GuidanceReport report;
  report.judge = judge ? judge->annotator_id() : "reward-head";
  std::array<int, 4> improved{};
  int judged = 0;
  for (const auto& p : pairs) {
    if (p.original.empty() || p.guided.empty()) throw Error("unpaired", "guidance pair " + p.id + " is missing an image");
    GuidanceRow row;
    row.id = p.id;
    const Eigen::VectorXd eo = backbone.embed(p.original);
    const Eigen::VectorXd eg = backbone.embed(p.guided);
    row.original = head_forward(head, eo);
    row.guided = head_forward(head, eg);
    for (std::size_t t = 0; t < 4; ++t) row.delta[t] = row.guided[t] - row.original[t];
    row.euclidean = euclidean_distance(eo, eg);
    row.cosine = cosine_distance(eo, eg);
    bool counted = true;
    if (judge) {
      const PairRecord pair{p.id, "original:" + p.id, "guided:" + p.id, PairContext::benchmark};
      const AnnotationQuery query = build_query(pair, prompt_version);
      const std::string a = encode_ppm(p.original);
      const std::string b = encode_ppm(p.guided);
      try {
        row.judge = parse_response(judge->complete({query, a, b}));
      } catch (const Error& e) {
        report.failures.push_back({p.id, e.what()});
        counted = false;
      }
    }
    if (counted) {
      ++judged;
      for (std::size_t t = 0; t < 4; ++t) {
        const bool better = row.judge ? (*row.judge)[t] == Verdict::b : row.delta[t] > 0.0;
        if (better) ++improved[t];
      }
    }
    for (std::size_t t = 0; t < 4; ++t) report.mean_delta[t] += row.delta[t];
    report.mean_euclidean += row.euclidean;
    report.mean_cosine += row.cosine;
    report.rows.push_back(std::move(row));
  }
  if (!report.rows.empty()) {
    const double n = static_cast<double>(report.rows.size());
    for (auto& d : report.mean_delta) d /= n;
    report.mean_euclidean /= n;
    report.mean_cosine /= n;
  }
  if (judged > 0) {
    for (std::size_t t = 0; t < 4; ++t) report.improvement_ratio[t] = static_cast<double>(improved[t]) / judged;
  }
  return report;
}

Json to_json(const GuidanceReport& r) {
  auto by_type = [](const TypeScores& s) {
    Json j = Json::object();
    for (CreativityType t : kAllTypes) j[std::string(to_string(t))] = s[index_of(t)];
    return j;
  };
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"id", row.id},
                    {"original", by_type(row.original)},
                    {"guided", by_type(row.guided)},
                    {"delta", by_type(row.delta)},
                    {"judge", row.judge ? verdicts_to_json(*row.judge) : Json(nullptr)},
                    {"euclidean", row.euclidean},
                    {"cosine", row.cosine}});
  }
  Json failures = Json::array();
  for (const auto& f : r.failures) failures.push_back({{"id", f.id}, {"message", f.message}});
  return {{"judge", r.judge},
          {"rows", rows},
          {"mean_delta", by_type(r.mean_delta)},
          {"improvement_ratio", by_type(r.improvement_ratio)},
          {"mean_euclidean", r.mean_euclidean},
          {"mean_cosine", r.mean_cosine},
          {"failures", failures}};
}

std::string guidance_csv(const GuidanceReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "id,type,original,guided,delta,judge,euclidean,cosine\n";
  for (const auto& row : r.rows) {
    for (CreativityType t : kAllTypes) {
      const auto i = index_of(t);
      out << row.id << ',' << to_string(t) << ',' << row.original[i] << ',' << row.guided[i] << ',' << row.delta[i]
          << ',' << (row.judge ? std::string(to_string((*row.judge)[i])) : std::string()) << ',' << row.euclidean
          << ',' << row.cosine << '\n';
    }
  }
  return out.str();
}

}  // namespace creward
