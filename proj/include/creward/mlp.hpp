#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "creward/core.hpp"
#include "creward/hash.hpp"
#include "creward/rng.hpp"

namespace creward {

/// Plain ReLU MLP with inverted dropout and hand-written backprop. Samples are
/// columns. Templated on the scalar so the gradient checks can run in double
/// while training runs in float.
template <typename Scalar>
class Mlp {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Mlp() = default;

  /// He-normal weights, zero biases. `widths` = {input, hidden..., output}.
  Mlp(const std::vector<int>& widths, std::uint64_t seed, bool zero_last = false) {
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const int in = widths[l];
      const int out = widths[l + 1];
      Matrix w(out, in);
      const double s = std::sqrt(2.0 / in);
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = static_cast<Scalar>(s * rng.normal());
      }
      if (zero_last && l + 2 == widths.size()) w.setZero();
      weights_.push_back(std::move(w));
      biases_.push_back(Vector::Zero(out));
    }
  }

  int input_dim() const { return weights_.empty() ? 0 : static_cast<int>(weights_.front().cols()); }
  int output_dim() const { return weights_.empty() ? 0 : static_cast<int>(weights_.back().rows()); }
  std::size_t layers() const { return weights_.size(); }

  std::vector<Matrix>& weights() { return weights_; }
  const std::vector<Matrix>& weights() const { return weights_; }
  std::vector<Vector>& biases() { return biases_; }
  const std::vector<Vector>& biases() const { return biases_; }

  std::vector<int> widths() const {
    std::vector<int> w;
    if (weights_.empty()) return w;
    w.push_back(input_dim());
    for (const auto& m : weights_) w.push_back(static_cast<int>(m.rows()));
    return w;
  }

  void check_input(Eigen::Index rows) const {
    if (rows != input_dim()) {
      throw Error("dimension", "embedding dim mismatch: expected " + std::to_string(input_dim()) + ", got " +
                                   std::to_string(rows));
    }
  }

  /// Evaluation-mode forward pass (no dropout).
  Matrix forward(const Matrix& x) const {
    check_input(x.rows());
    Matrix h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Matrix z = weights_[l] * h;
      z.colwise() += biases_[l];
      if (l + 1 < weights_.size()) z = z.cwiseMax(Scalar(0));
      h = std::move(z);
    }
    return h;
  }

  Vector forward(const Vector& x) const {
    check_input(x.rows());
    Vector h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Vector z = weights_[l] * h + biases_[l];
      if (l + 1 < weights_.size()) z = z.cwiseMax(Scalar(0));
      h = std::move(z);
    }
    return h;
  }

  /// Activations kept by a training-mode forward pass.
  struct Tape {
    std::vector<Matrix> inputs;  // input to each layer (post-dropout)
    std::vector<Matrix> masks;   // ReLU * dropout scaling per hidden layer
    Matrix output;
  };

  /// Training forward pass. Dropout (probability p, inverted scaling) is
  /// applied after every hidden activation; p = 0 or rng == nullptr disables it.
  Tape forward_train(const Matrix& x, Scalar p, Rng* rng) const {
    check_input(x.rows());
    Tape tape;
    Matrix h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      tape.inputs.push_back(h);
      Matrix z = weights_[l] * h;
      z.colwise() += biases_[l];
      if (l + 1 == weights_.size()) {
        tape.output = std::move(z);
        break;
      }
      Matrix mask = (z.array() > Scalar(0)).template cast<Scalar>();
      if (p > Scalar(0) && rng != nullptr) {
        const Scalar keep = Scalar(1) / (Scalar(1) - p);
        for (Eigen::Index i = 0; i < mask.size(); ++i) {
          mask.data()[i] *= rng->bernoulli(static_cast<double>(p)) ? Scalar(0) : keep;
        }
      }
      h = z.cwiseProduct(mask);
      tape.masks.push_back(std::move(mask));
    }
    return tape;
  }

  struct Gradients {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
    Matrix input;
  };

  /// Backprop of d(loss)/d(output) through a tape.
  Gradients backward(const Tape& tape, const Matrix& d_output) const {
    Gradients g;
    g.weights.resize(weights_.size());
    g.biases.resize(weights_.size());
    Matrix delta = d_output;
    for (std::size_t l = weights_.size(); l-- > 0;) {
      g.weights[l].noalias() = delta * tape.inputs[l].transpose();
      g.biases[l] = delta.rowwise().sum();
      Matrix up = weights_[l].transpose() * delta;
      if (l > 0) up = up.cwiseProduct(tape.masks[l - 1]);
      delta = std::move(up);
    }
    g.input = std::move(delta);
    return g;
  }

  /// d output[k] / d x in evaluation mode.
  Vector input_gradient(const Vector& x, int k) const {
    const Tape tape = forward_train(x, Scalar(0), nullptr);
    Matrix d = Matrix::Zero(output_dim(), 1);
    d(k, 0) = Scalar(1);
    return backward(tape, d).input.col(0);
  }

  std::uint64_t param_hash() const {
    Fnv1a h;
    for (std::size_t l = 0; l < weights_.size(); ++l) h.update(weights_[l]).update(biases_[l]);
    return h.digest();
  }

  template <typename Other>
  Mlp<Other> cast() const {
    Mlp<Other> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.weights().push_back(weights_[l].template cast<Other>());
      out.biases().push_back(biases_[l].template cast<Other>());
    }
    return out;
  }

  bool operator==(const Mlp&) const = default;

 private:
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
};

/// Adam over an Mlp's parameters.
template <typename Scalar>
class Adam {
 public:
  struct Config {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(const Mlp<Scalar>& net, Config config) : config_(config) {
    for (std::size_t l = 0; l < net.layers(); ++l) {
      mw_.push_back(Mlp<Scalar>::Matrix::Zero(net.weights()[l].rows(), net.weights()[l].cols()));
      vw_.push_back(mw_.back());
      mb_.push_back(Mlp<Scalar>::Vector::Zero(net.biases()[l].rows()));
      vb_.push_back(mb_.back());
    }
  }

  void step(Mlp<Scalar>& net, const typename Mlp<Scalar>::Gradients& g) {
    ++t_;
    const auto b1 = static_cast<Scalar>(config_.beta1);
    const auto b2 = static_cast<Scalar>(config_.beta2);
    const auto lr_t = static_cast<Scalar>(config_.lr * std::sqrt(1.0 - std::pow(config_.beta2, t_)) /
                                          (1.0 - std::pow(config_.beta1, t_)));
    const auto eps = static_cast<Scalar>(config_.eps);
    auto update = [&](auto& param, auto& m, auto& v, const auto& grad) {
      m = b1 * m + (Scalar(1) - b1) * grad;
      v = b2 * v + (Scalar(1) - b2) * grad.cwiseAbs2();
      param.array() -= lr_t * m.array() / (v.array().sqrt() + eps);
    };
    for (std::size_t l = 0; l < net.layers(); ++l) {
      update(net.weights()[l], mw_[l], vw_[l], g.weights[l]);
      update(net.biases()[l], mb_[l], vb_[l], g.biases[l]);
    }
  }

 private:
  Config config_;
  int t_ = 0;
  std::vector<typename Mlp<Scalar>::Matrix> mw_, vw_;
  std::vector<typename Mlp<Scalar>::Vector> mb_, vb_;
};

}  // namespace creward
