// Acceptance suite: one PASS/FAIL line per criterion. Usage:
//   acceptance <path-to-creward-cli>

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include "creward/annotate.hpp"
#include "creward/dataset.hpp"
#include "creward/metrics.hpp"
#include "creward/reward.hpp"
#include "creward/slider.hpp"
#include "creward/xapps.hpp"
#include "fuzz.hpp"
#include "oracles.hpp"
#include "support.hpp"
#include "synthetic.hpp"

#include <httplib.h>

extern char** environ;

using namespace creward;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------------------

Outcome benchmark_pairing() {
  double slowest = 0.0;
  int bad = 0;
  std::vector<std::string> images;
  for (int i = 0; i < 25; ++i) images.push_back("img" + std::to_string(i));
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto t0 = Clock::now();
    const auto pairs = sample_benchmark_pairs({images, 8, 100, seed});
    slowest = std::max(slowest, seconds_since(t0));
    std::map<std::string, int> degree;
    std::set<std::pair<std::string, std::string>> seen;
    bool ok = pairs.size() == 100;
    for (const auto& p : pairs) {
      ok &= p.image_a != p.image_b;
      ok &= seen.insert(std::minmax(p.image_a, p.image_b)).second;
      ++degree[p.image_a];
      ++degree[p.image_b];
    }
    ok &= degree.size() == 25;
    for (const auto& [id, d] : degree) ok &= d == 8;
    bad += !ok;
  }
  return {bad == 0 && slowest < 1.0,
          "200 seeds, " + std::to_string(bad) + " invalid, slowest " + fmt(slowest * 1e3, 3) + " ms"};
}

Outcome spearman_oracle() {
  Rng rng(2718);
  double worst = 0.0;
  int mismatched_definedness = 0;
  auto as_scores = [](const std::vector<double>& v) {
    std::map<std::string, double> m;
    for (std::size_t i = 0; i < v.size(); ++i) m["i" + std::to_string(i)] = v[i];
    return m;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = 2 + rng.uniform_index(7);
    const auto levels = 1 + rng.uniform_index(n + 1);
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = static_cast<double>(rng.uniform_index(levels));
    for (auto& v : y) v = static_cast<double>(rng.uniform_index(levels));
    const auto expected = creward::testing::brute_spearman(x, y);
    const auto got = spearman(rank_by_score(as_scores(x)), rank_by_score(as_scores(y)));
    if (expected.has_value() != got.has_value()) {
      ++mismatched_definedness;
    } else if (expected) {
      worst = std::max(worst, std::abs(*expected - *got));
    }
  }
  bool exact = true;
  for (int n = 2; n <= 8; ++n) {
    std::vector<double> x(static_cast<std::size_t>(n)), r(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      x[static_cast<std::size_t>(i)] = i;
      r[static_cast<std::size_t>(i)] = -i;
    }
    const auto rx = rank_by_score(as_scores(x));
    exact &= spearman(rx, rx) == 1.0;
    exact &= spearman(rx, rank_by_score(as_scores(r))) == -1.0;
  }
  return {worst <= 1e-12 && mismatched_definedness == 0 && exact,
          "max |drho| " + fmt(worst, 3) + ", identity/reversal exact: " + (exact ? "yes" : "no")};
}

Outcome winning_rates_table() {
  int checked = 0, wrong = 0;
  auto label = [](const std::string& id, Verdict v) {
    PreferenceLabel l;
    l.pair_id = id;
    l.annotator_id = "h";
    l.verdicts = {v, v, v, v};
    return l;
  };
  std::array<std::string, 3> names = {"a-img", "b-img", "c-img"};
  const std::array<std::pair<int, int>, 3> edges = {{{0, 1}, {1, 2}, {0, 2}}};
  // Every permutation of names × every pair orientation × every outcome.
  do {
    for (int orient = 0; orient < 8; ++orient) {
      for (const auto& c : creward::testing::triangle_table()) {
        const std::array<char, 3> outcomes = {c.ab, c.bc, c.ac};
        std::vector<PairRecord> pairs;
        std::vector<PreferenceLabel> labels;
        for (int e = 0; e < 3; ++e) {
          const bool swapped = (orient >> e) & 1;
          auto [i, j] = edges[static_cast<std::size_t>(e)];
          if (swapped) std::swap(i, j);
          pairs.push_back({"e" + std::to_string(e), names[static_cast<std::size_t>(i)], names[static_cast<std::size_t>(j)]});
          labels.push_back(label(pairs.back().pair_id, creward::testing::edge_verdict(outcomes[static_cast<std::size_t>(e)], swapped)));
        }
        const auto index = index_pairs(pairs);
        for (CreativityType t : kAllTypes) {
          const auto table = winning_rates(labels, index, t).table;
          for (std::size_t k = 0; k < 3; ++k) wrong += table.at(names[k]).rate != c.rates[k];
        }
        ++checked;
      }
    }
  } while (std::next_permutation(names.begin(), names.end()));
  return {wrong == 0, std::to_string(checked) + " configurations (27 outcomes x 8 orientations x 6 relabelings), " +
                          std::to_string(wrong) + " mismatches"};
}

Outcome pairwise_loss_checks() {
  const double ln2_err = std::abs(pairwise_loss(0.7, 0.7, Verdict::a).loss - std::numbers::ln2);
  const auto tie = pairwise_loss(2.0, -1.0, Verdict::tie);
  const bool tie_ok = tie.loss == 0.0 && tie.d_score_a == 0.0 && tie.d_score_b == 0.0;
  Rng rng(31);
  double worst = 0.0;
  const double h = 1e-5;
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(-4, 4), b = rng.uniform(-4, 4);
    const Verdict y = rng.bernoulli(0.5) ? Verdict::a : Verdict::b;
    const auto l = pairwise_loss(a, b, y);
    const double fa = (pairwise_loss(a + h, b, y).loss - pairwise_loss(a - h, b, y).loss) / (2 * h);
    const double fb = (pairwise_loss(a, b + h, y).loss - pairwise_loss(a, b - h, y).loss) / (2 * h);
    worst = std::max(worst, std::abs(l.d_score_a - fa) / std::max(std::abs(l.d_score_a), std::abs(fa)));
    worst = std::max(worst, std::abs(l.d_score_b - fb) / std::max(std::abs(l.d_score_b), std::abs(fb)));
  }
  return {ln2_err <= 1e-9 && tie_ok && worst <= 1e-5,
          "|L-ln2| " + fmt(ln2_err, 3) + ", tie masked: " + (tie_ok ? "yes" : "no") + ", max rel grad err " +
              fmt(worst, 3)};
}

Outcome reward_training() {
  const auto t0 = Clock::now();
  const ToyBackbone backbone(0);
  const auto syn = creward::testing::make_synthetic(backbone, 600, 3000, 0.1, 11);
  const auto data = build_preference_data(syn.pairs, syn.labels, syn.embeddings);
  // Exactly 2000 / 500 / 500 pairs.
  std::vector<std::string> ids = syn.pair_ids;
  Rng rng(5);
  rng.shuffle(std::span(ids));
  Split split;
  split.train.assign(ids.begin(), ids.begin() + 2000);
  split.val.assign(ids.begin() + 2000, ids.begin() + 2500);
  split.test.assign(ids.begin() + 2500, ids.end());
  TrainConfig cfg;  // 20 epochs, batch 64, Adam 1e-4, dropout 0.2, 1024-512-256-128
  const auto result = train_head(data, split, cfg, &backbone);
  const double secs = seconds_since(t0);
  const auto& test = result.report.test;
  std::string per_type;
  for (CreativityType t : kAllTypes) {
    const auto& v = test.by_type[index_of(t)];
    per_type += std::string(to_string(t)) + " " + (v ? fmt(*v, 3) : "n/a") + ", ";
  }
  const bool frozen = result.report.backbone_hash_before == result.report.backbone_hash_after &&
                      result.report.backbone_hash_after == backbone.param_hash();
  const bool ok = test.mean && *test.mean >= 0.95 && frozen && secs < 120.0 && result.report.epochs.size() == 20;
  return {ok, "mean test accuracy " + (test.mean ? fmt(*test.mean, 4) : "n/a") + " (" + per_type +
                  "backbone frozen: " + (frozen ? "yes" : "no") + "), " + fmt(secs, 3) + " s"};
}

Outcome score_rank_invariance() {
  Rng rng(41);
  int broken = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 10 + static_cast<int>(rng.uniform_index(30));
    std::vector<ImageRecord> images;
    for (int i = 0; i < n; ++i) {
      ImageRecord r;
      r.image_id = "img" + std::to_string(i);
      if (rng.bernoulli(0.8)) r.prompt_id = "p" + std::to_string(rng.uniform_index(8));
      images.push_back(r);
    }
    ScoreTable scores;
    const bool coarse = trial % 3 == 0;  // many exact ties
    for (const auto& r : images) {
      for (auto& v : scores[r.image_id]) v = coarse ? static_cast<double>(rng.uniform_index(4)) : rng.normal();
    }
    const double k1 = rng.uniform(0.1, 3), k2 = rng.uniform(-5, 5);
    auto transform = [&](double x) { return std::exp(k1 * x) + x * x * x + k2; };
    ScoreTable transformed = scores;
    for (auto& [id, v] : transformed) {
      for (auto& x : v) x = transform(x);
    }
    std::vector<PairRecord> pairs;
    std::vector<PreferenceLabel> reference;
    for (int p = 0; p < 40; ++p) {
      const auto a = rng.uniform_index(static_cast<std::uint64_t>(n));
      auto b = rng.uniform_index(static_cast<std::uint64_t>(n - 1));
      if (b >= a) ++b;
      pairs.push_back({"q" + std::to_string(p), images[a].image_id, images[b].image_id});
      PreferenceLabel l;
      l.pair_id = pairs.back().pair_id;
      for (auto& v : l.verdicts) v = static_cast<Verdict>(static_cast<int>(rng.uniform_index(3)) - 1);
      reference.push_back(l);
    }
    const auto index = index_pairs(pairs);
    for (CreativityType t : kAllTypes) {
      for (bool group : {false, true}) {
        const auto a = filter_top_k(scores, images, 3, t, group);
        const auto b = filter_top_k(transformed, images, 3, t, group);
        auto ids = [](const std::vector<RankedItem>& v) {
          std::vector<std::string> out;
          for (const auto& i : v) out.push_back(i.image_id);
          return out;
        };
        broken += ids(a.top) != ids(b.top) || ids(a.bottom) != ids(b.bottom);
      }
      const auto acc_a = preference_accuracy(reference, index, type_column(scores, t), t);
      const auto acc_b = preference_accuracy(reference, index, type_column(transformed, t), t);
      broken += acc_a.accuracy != acc_b.accuracy || acc_a.candidate_ties != acc_b.candidate_ties;
    }
  }
  return {broken == 0, "100 trials, " + std::to_string(broken) + " ordering or accuracy changes"};
}

Outcome x0_inversion() {
  Rng rng(51);
  float worst = 0.0f;
  const float fixed[] = {1.0f, 0.999f, 0.01f};
  for (int i = 0; i < 1000; ++i) {
    const float a = i < 3 ? fixed[i] : (i % 10 < 3 ? fixed[i % 3] : static_cast<float>(rng.uniform(0.01, 1.0)));
    Eigen::VectorXf x0(64), eps(64);
    for (int k = 0; k < 64; ++k) {
      x0[k] = static_cast<float>(rng.normal());
      eps[k] = static_cast<float>(rng.normal());
    }
    const Eigen::VectorXf back = estimate_x0(forward_noise(x0, eps, a), eps, a);
    worst = std::max(worst, (back - x0).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-5f, "max abs error " + fmt(worst, 3) + " over 1000 float32 draws"};
}

Outcome slider_objective_toy() {
  SliderConfig cfg;  // 35 epochs, lambda 0.1, rank 8, alpha 8, lr 1e-4, accumulation 10
  const ToyDiffusion system(8, 8, 0);
  const ToyDenoiser base = system.fit_denoiser(cfg.prompts(), 200, 1);
  const LinearDecoder decoder(8);
  const QuadraticReward reward(Eigen::VectorXd::Constant(8, 1.0));
  const auto base_hash = base.base_hash();
  const auto reward_hash = reward.param_hash();
  const auto result = train_slider(cfg, base, decoder, reward, system.schedule(),
                                   [&](const std::string& p, std::uint64_t s) { return system.sample_x0(p, s); });
  int violations = 0;
  double prev = result.report.initial_reward;
  for (const auto& e : result.report.epochs) {
    if (e.epoch > 3 && !(e.mean_reward > prev)) ++violations;
    prev = e.mean_reward;
  }
  // Loss limits against closed forms.
  Rng rng(61);
  double limit_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd x0(8), ep(8), et(8);
    for (int k = 0; k < 8; ++k) {
      x0[k] = rng.normal();
      ep[k] = rng.normal();
      et[k] = rng.normal();
    }
    const double f = -(x0 - Eigen::VectorXd::Constant(8, 1.0)).squaredNorm();
    const auto no_pre = slider_losses(x0, ep, et, reward, decoder, 0.0);
    const auto exact = slider_losses(x0, et, et, reward, decoder, 0.1);
    limit_err = std::max({limit_err, std::abs(no_pre.total + f), std::abs(exact.total + f), std::abs(exact.l_pre)});
  }
  const bool frozen = base.base_hash() == base_hash && result.report.base_hash == base_hash &&
                      result.report.reward_hash_before == reward_hash && result.report.reward_hash_after == reward_hash;
  const bool ok = result.report.epochs.size() == 35 && violations == 0 && limit_err == 0.0 && frozen;
  return {ok, "reward " + fmt(result.report.initial_reward) + " -> " + fmt(result.report.epochs.back().mean_reward) +
                  ", " + std::to_string(violations) + " non-increasing epochs after 3, limit error " +
                  fmt(limit_err, 3) + ", hashes unchanged: " + (frozen ? "yes" : "no")};
}

Outcome slider_application() {
  Rng rng(71);
  auto mat = [&](int r, int c, double s) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * rng.normal();
    return m;
  };
  const ToyDiffusion system(8, 8, 3);
  SliderConfig cfg;
  const ToyDenoiser base = system.fit_denoiser(cfg.prompts(), 50, 1);
  auto random_slider = [&](int rank, double alpha) {
    Slider s;
    s.rank = rank;
    s.alpha = alpha;
    for (const char* name : {"W", "V"}) s.layers[name] = {mat(rank, 8, 0.3), mat(8, rank, 0.3)};
    return s;
  };
  const Slider s1 = random_slider(8, 8.0), s2 = random_slider(4, 2.0);

  bool identical = true;
  const auto zero = apply_sliders(base, {{&s1, 0.0}});
  const auto zero2 = apply_sliders(base, {{&s1, 0.0}, {&s2, 0.0}});
  for (const auto& prompt : cfg.prompts()) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto ref = sample_latent(base, system.schedule(), prompt, seed);
      identical &= sample_latent(*zero, system.schedule(), prompt, seed) == ref;
      identical &= sample_latent(*zero2, system.schedule(), prompt, seed) == ref;
    }
  }
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const double w1 = rng.uniform(-1.5, 1.5), w2 = rng.uniform(-1.5, 1.5);
    const auto mixed = apply_sliders(base, {{&s1, w1}, {&s2, w2}});
    Eigen::VectorXd x(8);
    for (auto& v : x) v = rng.normal();
    const LatentInput in{x, cfg.prompts()[static_cast<std::size_t>(trial) % 5], base.layer_shapes().size() ? 499 : 0};
    const Eigen::VectorXd c = toy_condition(in.prompt, 8);
    Eigen::VectorXd expected = base.predict(in);
    for (const auto& [s, w] : {std::pair{&s1, w1}, std::pair{&s2, w2}}) {
      expected += w * (s->alpha / s->rank) * (s->layers.at("W").b * (s->layers.at("W").a * x));
      expected += w * (s->alpha / s->rank) * (s->layers.at("V").b * (s->layers.at("V").a * c));
    }
    worst = std::max(worst, (mixed->predict(in) - expected).cwiseAbs().maxCoeff());
    const auto sequential = apply_sliders(*apply_sliders(base, {{&s1, w1}}), {{&s2, w2}});
    worst = std::max(worst, (mixed->predict(in) - sequential->predict(in)).cwiseAbs().maxCoeff());
  }
  return {identical && worst <= 1e-6,
          std::string("w = 0 bit-identical: ") + (identical ? "yes" : "no") + ", linearity max error " + fmt(worst, 3)};
}

Outcome grad_cam_checks() {
  const ToyBackbone bb;
  RewardHead constant({bb.dim(), 4}, 0);
  constant.weights()[0].setZero();
  constant.biases()[0].setConstant(1.5f);
  bool zero = true;
  for (std::uint64_t s = 0; s < 5; ++s) {
    for (CreativityType t : kAllTypes) {
      const auto m = grad_cam(constant, bb, synthesize_image(s, 64, false), t);
      zero &= m.upsampled.cwiseAbs().maxCoeff() == 0.0 && m.grid.cwiseAbs().maxCoeff() == 0.0;
    }
  }
  int localized = 0, cells = 0;
  const int size = 448, cell = size / bb.grid();
  for (int gy = 0; gy < bb.grid(); gy += 3) {
    for (int gx = 0; gx < bb.grid(); gx += 2) {
      ++cells;
      const int channel = (gy * bb.grid() + gx) % bb.dim();
      RewardHead head({bb.dim(), 4}, 0);
      head.weights()[0].setZero();
      head.biases()[0].setZero();
      head.weights()[0].col(channel).setOnes();
      auto paint = [&](float v) {
        Image img = make_image(size, size);
        std::fill(img.rgb.begin(), img.rgb.end(), 0.5f);
        for (int y = gy * cell; y < (gy + 1) * cell; ++y) {
          for (int x = gx * cell; x < (gx + 1) * cell; ++x) {
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = v;
          }
        }
        return img;
      };
      Image img = paint(1.0f);
      if (bb.feature_map(img).values(gy * bb.grid() + gx, channel) < 0) img = paint(0.0f);
      const auto m = grad_cam(head, bb, img, CreativityType::geometry);
      Eigen::Index r, c, ur, uc;
      m.grid.maxCoeff(&r, &c);
      m.upsampled.maxCoeff(&ur, &uc);
      localized += r == gy && c == gx && ur / cell == gy && uc / cell == gx;
    }
  }
  bool nonnegative = true;
  HeadConfig hc;
  hc.hidden = {64, 32};
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    hc.seed = seed;
    const auto head = make_head(hc);
    for (CreativityType t : kAllTypes) {
      const auto m = grad_cam(head, bb, synthesize_image(seed + 7, 96, seed % 4 == 0), t);
      nonnegative &= m.grid.minCoeff() >= 0.0 && m.upsampled.minCoeff() >= 0.0;
    }
  }
  return {zero && localized == cells && nonnegative,
          std::string("constant head zero map: ") + (zero ? "yes" : "no") + ", localized " + std::to_string(localized) +
              "/" + std::to_string(cells) + " cells, non-negative: " + (nonnegative ? "yes" : "no")};
}

Outcome annotation_robustness() {
  int roundtrip_failures = 0;
  for (int code = 0; code < 81; ++code) {
    Verdicts v{};
    int c = code;
    for (auto& x : v) {
      x = static_cast<Verdict>(c % 3 - 1);
      c /= 3;
    }
    try {
      roundtrip_failures += parse_response(render_verdicts(v)) != v;
    } catch (const ParseError&) {
      ++roundtrip_failures;
    }
  }
  Rng rng(81);
  int fuzz_failures = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto c = creward::testing::prose_wrapped_case(rng);
    try {
      fuzz_failures += parse_response(c.text) != c.expected;
    } catch (const ParseError&) {
      ++fuzz_failures;
    }
  }
  // Counts how often each pair reaches the client.
  class Counting final : public AnnotatorClient {
   public:
    std::string annotator_id() const override { return "counting"; }
    std::string complete(const AnnotatorRequest& r) override {
      std::lock_guard lock(mutex);
      ++calls[r.image_a_bytes];
      return "Reasoning first.\n" + render_verdicts({Verdict::a, Verdict::tie, Verdict::b, Verdict::a});
    }
    std::mutex mutex;
    std::map<std::string, int> calls;
  } client;
  std::vector<PairRecord> pairs;
  for (int i = 0; i < 100; ++i) pairs.push_back({"p" + std::to_string(i), "a" + std::to_string(i), "b" + std::to_string(i)});
  creward::testing::TempDir dir;
  AnnotateOptions opts;
  opts.clock = [] { return std::string("2025-01-01T00:00:00Z"); };
  const auto bytes = [](const std::string& id) { return id; };
  std::size_t rerun_calls = 0;
  {
    LabelStore store(dir / "labels.jsonl");
    annotate_pairs(pairs, client, store, bytes, opts);
  }
  {
    LabelStore store(dir / "labels.jsonl");  // replayed from disk
    rerun_calls = annotate_pairs(pairs, client, store, bytes, opts).client_calls;
  }
  bool once = client.calls.size() == 100;
  for (const auto& [id, n] : client.calls) once &= n == 1;
  return {roundtrip_failures == 0 && fuzz_failures == 0 && rerun_calls == 0 && once,
          "81-map failures " + std::to_string(roundtrip_failures) + ", fuzz failures " + std::to_string(fuzz_failures) +
              "/1000, client calls on rerun " + std::to_string(rerun_calls)};
}

// ---------------------------------------------------------------------------
// CLI determinism

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Pipeline {
 public:
  Pipeline(std::string cli, fs::path dir) : cli_(std::move(cli)), dir_(std::move(dir)) {
    fs::create_directories(dir_ / "logs");
  }

  void run(const std::string& args) {
    const std::string n = std::to_string(step_++);
    const std::string cmd = "cd '" + dir_.string() + "' && '" + cli_ + "' --timestamp 2025-06-01T00:00:00Z " + args +
                            " > logs/" + n + ".out 2> logs/" + n + ".err";
    const int rc = std::system(cmd.c_str());
    if (rc != 0) throw std::runtime_error("command failed (" + std::to_string(rc) + "): " + args);
  }

  // Starts `serve`, drives a fixed session script over HTTP, then stops it.
  void serve_script() {
    const std::string out = (dir_ / "logs" / "serve.out").string();
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_addopen(&actions, 1, out.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_addopen(&actions, 2, "/dev/null", O_WRONLY, 0);
    const std::string config = (dir_ / "serve.conf").string();
    std::vector<std::string> args = {cli_, "--timestamp", "2025-06-01T00:00:00Z", "serve", "--config", config, "--port", "0"};
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    pid_t pid = 0;
    if (posix_spawn(&pid, cli_.c_str(), &actions, nullptr, argv.data(), environ) != 0) {
      throw std::runtime_error("cannot start serve");
    }
    posix_spawn_file_actions_destroy(&actions);
    int port = 0;
    for (int i = 0; i < 200 && port == 0; ++i) {
      std::this_thread::sleep_for(std::chrono::milliseconds(25));
      const std::string text = read_file(out);
      if (text.find('\n') != std::string::npos) port = Json::parse(text.substr(0, text.find('\n'))).at("port");
    }
    std::string transcript;
    if (port != 0) {
      httplib::Client cli("127.0.0.1", port);
      for (const std::string session : {"s1", "s2"}) {
        for (int i = 0; i < 6; ++i) {
          auto next = cli.Get("/session/" + session + "/next");
          if (!next) break;
          transcript += next->body + "\n";
          const Json body = Json::parse(next->body);
          if (body.at("status") != "pending") break;
          const std::string pair = body.at("pair_id");
          const char* v = pair.back() % 2 ? "A" : "B";
          const Json label = {{"pair_id", pair},
                              {"verdicts", {{"geometry", v}, {"material", "Tie"}, {"texture", v}, {"overall", v}}}};
          for (int repeat = 0; repeat < 2; ++repeat) {
            auto res = cli.Post("/session/" + session + "/label", label.dump(), "application/json");
            if (res) transcript += std::to_string(res->status) + " " + res->body + "\n";
          }
        }
      }
      for (const std::string path : {"/progress", "/gallery?type=texture&k=3", "/gallery?type=overall&k=2&group_by_prompt=false"}) {
        auto res = cli.Get(path);
        if (res) transcript += std::to_string(res->status) + " " + res->body + "\n";
      }
    }
    kill(pid, SIGTERM);
    int status = 0;
    waitpid(pid, &status, 0);
    // The listening line names the (random) port; keep only the rest.
    fs::remove(out);
    std::ofstream(dir_ / "serve_transcript.txt", std::ios::binary) << transcript;
    if (port == 0 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) throw std::runtime_error("serve did not run cleanly");
  }

 private:
  std::string cli_;
  fs::path dir_;
  int step_ = 0;
};

std::vector<std::string> list_files(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir).string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void run_pipeline(const std::string& cli, const fs::path& dir) {
  Pipeline p(cli, dir);
  p.run("gen-prompts --out prompts.jsonl");
  p.run("gen-prompts --set assessment --out assessment.jsonl");
  p.run("gen-images --prompts prompts.jsonl --n 1 --out-dir img --manifest images.jsonl --seed 1");
  p.run("pairs --benchmark --images images.jsonl --seed 7 --out bench.jsonl");
  p.run("pairs --training --images images.jsonl --seed 3 --n-pairs 400 --out train_pairs.jsonl");
  p.run("annotate --pairs train_pairs.jsonl --images images.jsonl --labels lvlm.jsonl --mock-seed 5");
  p.run("annotate --pairs bench.jsonl --images images.jsonl --labels human.jsonl --mock-id human1 --mock-seed 1");
  p.run("annotate --pairs bench.jsonl --images images.jsonl --labels human.jsonl --mock-id human2 --mock-seed 2");
  p.run("annotate --ingest human.jsonl --labels ingested.jsonl");
  p.run("train --pairs train_pairs.jsonl --labels lvlm.jsonl --images images.jsonl --out head.json "
        "--report train_report.json --epochs 3 --seed 4");
  p.run("eval --checkpoint head.json --pairs train_pairs.jsonl --labels lvlm.jsonl --images images.jsonl --out eval.json");
  p.run("score --checkpoint head.json --images images.jsonl --out scores.jsonl");
  p.run("metrics --pairs bench.jsonl --images images.jsonl --labels human.jsonl --candidate-scores creward=scores.jsonl "
        "--report metrics.json --csv metrics.csv");
  p.run("filter --scores scores.jsonl --images images.jsonl --type texture --k 5 --out top.json");
  p.run("assess --scores scores.jsonl --images images.jsonl --out assess.json --csv assess.csv --violin-dir violins");
  const Json first = Json::parse(read_file(dir / "images.jsonl").substr(0, read_file(dir / "images.jsonl").find('\n')));
  p.run("cam --checkpoint head.json --image '" + first.at("uri").get<std::string>() + "' --type overall --type texture --out cam");
  p.run("slider-train --epochs 4 --out slider.json --report slider_report.json");
  p.run("slider-train --reward head --checkpoint head.json --type texture --epochs 2 --out head_slider.json "
        "--report head_slider_report.json");
  p.run("slider-apply --slider slider.json --slider slider.json --strength 0.5 --strength -0.25 --samples-per-prompt 2 "
        "--out samples.jsonl");
  p.run("slider-apply --slider head_slider.json --samples-per-prompt 1 --out head_samples.jsonl --image-dir guided");
  p.run("slider-eval --samples head_samples.jsonl --checkpoint head.json --judge mock --out guidance.json --csv guidance.csv");
  std::ofstream(dir / "sessions.jsonl") << "{\"session_id\":\"s1\",\"annotator_id\":\"ann1\",\"seed\":11}\n"
                                        << "{\"session_id\":\"s2\",\"annotator_id\":\"ann2\",\"seed\":12}\n";
  std::ofstream(dir / "serve.conf") << "pairs = bench.jsonl\nimages = images.jsonl\nlabels = served.jsonl\n"
                                    << "sessions = sessions.jsonl\nscores = scores.jsonl\nimage_root = .\n";
  p.serve_script();
}

Outcome cli_determinism(const std::string& cli) {
  if (cli.empty() || !fs::exists(cli)) return {false, "CLI binary not given or missing"};
  creward::testing::TempDir a, b;
  const auto t0 = Clock::now();
  try {
    run_pipeline(cli, a.path());
    run_pipeline(cli, b.path());
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
  const auto files_a = list_files(a.path());
  const auto files_b = list_files(b.path());
  if (files_a != files_b) return {false, "artifact sets differ"};
  std::vector<std::string> differing;
  for (const auto& f : files_a) {
    if (read_file(a / f) != read_file(b / f)) differing.push_back(f);
  }
  const auto served = read_file(a / "served.jsonl");
  const auto served_labels = std::count(served.begin(), served.end(), '\n');
  std::string detail = std::to_string(files_a.size()) + " artifacts from 15 subcommands, " +
                       std::to_string(served_labels) + " labels served over HTTP";
  if (served_labels == 0) return {false, detail};
  if (!differing.empty()) {
    detail += "; differing:";
    for (std::size_t i = 0; i < std::min<std::size_t>(differing.size(), 5); ++i) detail += " " + differing[i];
  }
  return {differing.empty(), detail + ", " + fmt(seconds_since(t0), 3) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? fs::absolute(argv[1]).string() : "";
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"benchmark pairing", benchmark_pairing},
      {"spearman oracle equivalence", spearman_oracle},
      {"winning-rate tie resolution", winning_rates_table},
      {"pairwise loss", pairwise_loss_checks},
      {"reward training end-to-end", reward_training},
      {"score/rank invariance", score_rank_invariance},
      {"x0 inversion", x0_inversion},
      {"slider objective on toy diffusion", slider_objective_toy},
      {"slider application", slider_application},
      {"grad-cam", grad_cam_checks},
      {"annotation robustness", annotation_robustness},
      {"cli determinism", [&] { return cli_determinism(cli); }},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
