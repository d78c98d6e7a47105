#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "semimemes/errors.hpp"
#include "semimemes/rng.hpp"
#include "semimemes/tensor.hpp"

namespace semimemes::nn {

enum class Mode { train, eval };

/// A trainable tensor and its accumulated gradient. `name` is the stable
/// checkpoint path, e.g. "ae_image.encoder.weight".
template <typename T>
struct Param {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  Param() = default;
  Param(std::string n, Matrix<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
using ParamRefs = std::vector<Param<T>*>;

template <typename T>
void zero_grad(const ParamRefs<T>& params) {
  for (auto* p : params) p->zero_grad();
}

template <typename T>
std::size_t parameter_count(const ParamRefs<T>& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->value.size();
  return n;
}

/// y = x·W + b with W stored in_dim x out_dim.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in_dim, std::size_t out_dim)
      : name_(std::move(name)),
        weight_(name_ + ".weight", Matrix<T>(in_dim, out_dim)),
        bias_(name_ + ".bias", Matrix<T>(1, out_dim)) {}

  /// Weights uniform in ±1/sqrt(fan_in), biases zero.
  void init_uniform(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim()));
    for (auto& w : weight_.value.values()) w = static_cast<T>(rng.uniform(-bound, bound));
    bias_.value.fill(T(0));
  }

  std::size_t in_dim() const { return weight_.value.rows(); }
  std::size_t out_dim() const { return weight_.value.cols(); }
  const std::string& name() const { return name_; }

  Matrix<T> forward(const Matrix<T>& x, Mode mode) {
    Matrix<T> y = apply(x);
    if (mode == Mode::train) {
      cache_ = x;
    } else {
      cache_.reset();
    }
    return y;
  }

  /// Forward pass that touches no layer state.
  Matrix<T> apply(const Matrix<T>& x) const {
    if (x.cols() != in_dim()) {
      throw ShapeError("layer '" + name_ + "': expected input width " + std::to_string(in_dim()) +
                       ", got " + x.shape());
    }
    Matrix<T> y = matmul(x, weight_.value);
    add_row_inplace(y, bias_.value);
    return y;
  }

  /// Accumulates weight and bias gradients; returns dL/dx unless
  /// `input_grad` is false (then an empty matrix).
  Matrix<T> backward(const Matrix<T>& upstream, bool input_grad = true) {
    if (!cache_) throw std::logic_error("layer '" + name_ + "': backward without a train-mode forward");
    if (upstream.rows() != cache_->rows() || upstream.cols() != out_dim()) {
      throw ShapeError("layer '" + name_ + "': upstream gradient " + upstream.shape() +
                       " does not match output " + Matrix<T>::shape_string(cache_->rows(), out_dim()));
    }
    const Matrix<T> gw = matmul_tn(*cache_, upstream);
    auto dst = weight_.grad.values();
    auto src = gw.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    const Matrix<T> gb = column_sums(upstream);
    for (std::size_t j = 0; j < out_dim(); ++j) bias_.grad(0, j) += gb(0, j);
    cache_.reset();
    if (!input_grad) return {};
    return matmul_nt(upstream, weight_.value);
  }

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  const Param<T>& weight() const { return weight_; }
  const Param<T>& bias() const { return bias_; }

  void collect(ParamRefs<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  std::string name_;
  Param<T> weight_;
  Param<T> bias_;
  std::optional<Matrix<T>> cache_;
};

/// Parametric ReLU with one learnable slope shared by all units.
template <typename T>
class PRelu {
 public:
  static constexpr double kInitialSlope = 0.25;

  PRelu() = default;
  explicit PRelu(std::string name, T slope = T(kInitialSlope))
      : name_(std::move(name)), slope_(name_ + ".slope", Matrix<T>(1, 1, slope)) {}

  T slope() const { return slope_.value(0, 0); }
  const std::string& name() const { return name_; }

  Matrix<T> forward(const Matrix<T>& x, Mode mode) {
    Matrix<T> y = apply(x);
    if (mode == Mode::train) {
      cache_ = x;
    } else {
      cache_.reset();
    }
    return y;
  }

  Matrix<T> apply(const Matrix<T>& x) const {
    const T a = slope();
    Matrix<T> y = x;
    for (auto& v : y.values()) v = v >= T(0) ? v : a * v;
    return y;
  }

  Matrix<T> backward(const Matrix<T>& upstream, bool input_grad = true) {
    if (!cache_) throw std::logic_error("layer '" + name_ + "': backward without a train-mode forward");
    if (upstream.rows() != cache_->rows() || upstream.cols() != cache_->cols()) {
      throw ShapeError("layer '" + name_ + "': upstream gradient " + upstream.shape() +
                       " does not match " + cache_->shape());
    }
    const T a = slope();
    auto xv = cache_->values();
    auto gv = upstream.values();
    T ga = T(0);
    Matrix<T> dx;
    if (input_grad) dx = Matrix<T>(upstream.rows(), upstream.cols());
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] < T(0)) {
        ga += gv[i] * xv[i];
        if (input_grad) dx.values()[i] = a * gv[i];
      } else if (input_grad) {
        dx.values()[i] = gv[i];
      }
    }
    slope_.grad(0, 0) += ga;
    cache_.reset();
    return dx;
  }

  Param<T>& slope_param() { return slope_; }
  const Param<T>& slope_param() const { return slope_; }

  void collect(ParamRefs<T>& out) { out.push_back(&slope_); }

 private:
  std::string name_;
  Param<T> slope_;
  std::optional<Matrix<T>> cache_;
};

template <typename T>
class Relu {
 public:
  Relu() = default;
  explicit Relu(std::string name) : name_(std::move(name)) {}

  const std::string& name() const { return name_; }

  Matrix<T> forward(const Matrix<T>& x, Mode mode) {
    Matrix<T> y = apply(x);
    if (mode == Mode::train) {
      cache_ = y;
    } else {
      cache_.reset();
    }
    return y;
  }

  Matrix<T> apply(const Matrix<T>& x) const {
    Matrix<T> y = x;
    for (auto& v : y.values()) v = v > T(0) ? v : T(0);
    return y;
  }

  Matrix<T> backward(const Matrix<T>& upstream, bool = true) {
    if (!cache_) throw std::logic_error("layer '" + name_ + "': backward without a train-mode forward");
    if (upstream.rows() != cache_->rows() || upstream.cols() != cache_->cols()) {
      throw ShapeError("layer '" + name_ + "': upstream gradient " + upstream.shape() +
                       " does not match " + cache_->shape());
    }
    Matrix<T> dx = upstream;
    auto yv = cache_->values();
    auto dv = dx.values();
    for (std::size_t i = 0; i < dv.size(); ++i)
      if (!(yv[i] > T(0))) dv[i] = T(0);
    cache_.reset();
    return dx;
  }

  void collect(ParamRefs<T>&) {}

 private:
  std::string name_;
  std::optional<Matrix<T>> cache_;
};

/// Inverted dropout. Eval mode is the identity; train mode keeps each unit
/// with probability 1-rate and scales survivors by 1/(1-rate). The mask
/// drawn in forward is reused by backward.
template <typename T>
class Dropout {
 public:
  Dropout() = default;
  Dropout(std::string name, double rate, std::uint64_t seed) : name_(std::move(name)), rate_(rate), rng_(seed) {
    if (!(rate >= 0.0 && rate < 1.0)) {
      throw ConfigError("dropout '" + name_ + "': rate must be in [0,1), got " + std::to_string(rate));
    }
  }

  double rate() const { return rate_; }
  const std::string& name() const { return name_; }

  /// While frozen, train-mode forwards reuse the last mask (for gradient checks).
  void freeze_mask(bool frozen) { frozen_ = frozen; }

  Matrix<T> forward(const Matrix<T>& x, Mode mode) {
    if (mode == Mode::eval || rate_ == 0.0) {
      if (mode == Mode::train) {
        mask_ = Matrix<T>(x.rows(), x.cols(), T(1));
        live_ = true;
      } else {
        live_ = false;
      }
      return x;
    }
    if (!(frozen_ && mask_.rows() == x.rows() && mask_.cols() == x.cols())) {
      mask_ = Matrix<T>(x.rows(), x.cols());
      const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
      for (auto& m : mask_.values()) m = rng_.unit() < rate_ ? T(0) : keep_scale;
    }
    live_ = true;
    Matrix<T> y = x;
    auto yv = y.values();
    auto mv = mask_.values();
    for (std::size_t i = 0; i < yv.size(); ++i) yv[i] *= mv[i];
    return y;
  }

  Matrix<T> apply(const Matrix<T>& x) const { return x; }

  Matrix<T> backward(const Matrix<T>& upstream, bool = true) {
    if (!live_) throw std::logic_error("layer '" + name_ + "': backward without a train-mode forward");
    if (upstream.rows() != mask_.rows() || upstream.cols() != mask_.cols()) {
      throw ShapeError("layer '" + name_ + "': upstream gradient " + upstream.shape() +
                       " does not match mask " + mask_.shape());
    }
    Matrix<T> dx = upstream;
    auto dv = dx.values();
    auto mv = mask_.values();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= mv[i];
    live_ = false;
    return dx;
  }

  const Matrix<T>& mask() const { return mask_; }

  void collect(ParamRefs<T>&) {}

 private:
  std::string name_;
  double rate_ = 0.0;
  Rng rng_;
  Matrix<T> mask_;
  bool live_ = false;
  bool frozen_ = false;
};

template <typename T>
using Layer = std::variant<Linear<T>, PRelu<T>, Relu<T>, Dropout<T>>;

/// Ordered composition of layers.
template <typename T>
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<Layer<T>> layers) : layers_(std::move(layers)) {}

  void push_back(Layer<T> layer) { layers_.push_back(std::move(layer)); }

  Matrix<T> forward(const Matrix<T>& x, Mode mode) {
    Matrix<T> h = x;
    for (auto& layer : layers_) {
      h = std::visit([&](auto& l) { return l.forward(h, mode); }, layer);
    }
    return h;
  }

  Matrix<T> apply(const Matrix<T>& x) const {
    Matrix<T> h = x;
    for (const auto& layer : layers_) {
      h = std::visit([&](const auto& l) { return l.apply(h); }, layer);
    }
    return h;
  }

  /// Backpropagates through every layer in reverse. When `input_grad` is
  /// false the first layer skips computing dL/dx.
  Matrix<T> backward(const Matrix<T>& upstream, bool input_grad = true) {
    Matrix<T> g = upstream;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const bool need = input_grad || i > 0;
      g = std::visit([&](auto& l) { return l.backward(g, need); }, layers_[i]);
    }
    return g;
  }

  void collect(ParamRefs<T>& out) {
    for (auto& layer : layers_) std::visit([&](auto& l) { l.collect(out); }, layer);
  }

  ParamRefs<T> params() {
    ParamRefs<T> out;
    collect(out);
    return out;
  }

  std::size_t size() const { return layers_.size(); }
  Layer<T>& operator[](std::size_t i) { return layers_[i]; }
  const Layer<T>& operator[](std::size_t i) const { return layers_[i]; }

  void freeze_dropout_masks(bool frozen) {
    for (auto& layer : layers_)
      if (auto* d = std::get_if<Dropout<T>>(&layer)) d->freeze_mask(frozen);
  }

 private:
  std::vector<Layer<T>> layers_;
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Classic L2: weight_decay·param is added to the gradient before the moment updates.
  double weight_decay = 0.0;
};

/// Bias-corrected Adam. Moments are allocated on the first step and bound to
/// the parameter order passed then.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : opt_(options) {}

  void set_lr(double lr) { opt_.lr = lr; }
  double lr() const { return opt_.lr; }
  std::uint64_t steps() const { return step_; }
  const AdamOptions& options() const { return opt_; }

  void step(const ParamRefs<T>& params) {
    if (first_.empty()) {
      for (const auto* p : params) {
        first_.emplace_back(p->value.rows(), p->value.cols());
        second_.emplace_back(p->value.rows(), p->value.cols());
      }
    }
    if (params.size() != first_.size()) {
      throw ShapeError("adam: parameter list changed size between steps");
    }
    for (const auto* p : params) {
      if (!all_finite(p->grad.values())) throw NumericalError("adam: non-finite gradient in " + p->name);
    }
    ++step_;
    const double t = static_cast<double>(step_);
    const T b1 = static_cast<T>(opt_.beta1);
    const T b2 = static_cast<T>(opt_.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(opt_.beta1, t));
    const T c2 = static_cast<T>(1.0 - std::pow(opt_.beta2, t));
    const T lr = static_cast<T>(opt_.lr);
    const T eps = static_cast<T>(opt_.eps);
    const T wd = static_cast<T>(opt_.weight_decay);
    for (std::size_t k = 0; k < params.size(); ++k) {
      Param<T>& p = *params[k];
      if (first_[k].rows() != p.value.rows() || first_[k].cols() != p.value.cols()) {
        throw ShapeError("adam: moment shape mismatch for " + p.name);
      }
      auto w = p.value.values();
      auto g = p.grad.values();
      auto m = first_[k].values();
      auto v = second_[k].values();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const T gi = g[i] + wd * w[i];
        m[i] = b1 * m[i] + (T(1) - b1) * gi;
        v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
        const T mhat = m[i] / c1;
        const T vhat = v[i] / c2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

 private:
  AdamOptions opt_;
  std::vector<Matrix<T>> first_;
  std::vector<Matrix<T>> second_;
  std::uint64_t step_ = 0;
};

/// lr(epoch) = initial_lr · gamma^floor(epoch / step_size).
struct StepLr {
  double initial_lr = 1e-4;
  double gamma = 1.0;
  std::size_t step_size = 1;

  void validate() const {
    if (!(initial_lr > 0.0)) throw ConfigError("StepLR: initial_lr must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("StepLR: gamma must be in (0,1]");
    if (step_size == 0) throw ConfigError("StepLR: step_size must be at least 1");
  }

  double lr_at(std::size_t epoch) const {
    return initial_lr * std::pow(gamma, static_cast<double>(epoch / step_size));
  }
};

}  // namespace semimemes::nn
