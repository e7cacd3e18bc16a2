// AMSGrad and the plateau learning-rate schedule.
#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "wdsc/transforms.hpp"

namespace wdsc {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AmsGradOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with the running maximum of the second moment (v_hat) in the
// denominator. Moments are kept in double regardless of parameter type.
template <class Real>
class AmsGrad {
 public:
  struct Slot {
    std::vector<double> m, v, v_max;
  };

  AmsGrad() = default;
  AmsGrad(ParameterList<Real> params, AmsGradOptions opts = {}) : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) {
      const std::size_t n = p.tensor.size();
      slots_.push_back({std::vector<double>(n), std::vector<double>(n), std::vector<double>(n)});
    }
  }

  // Applies one update using the accumulated gradients, then clears them.
  // Parameters without a gradient (unused this step) see a zero gradient.
  void step(double lr, double grad_scale = 1.0) {
    for (const auto& p : params_) {
      if (!p.tensor.has_grad()) continue;
      for (double g : p.tensor.grad())
        if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in parameter " + p.name);
    }
    ++t_;
    const double c1 = 1 - std::pow(opts_.beta1, double(t_));
    const double c2 = 1 - std::pow(opts_.beta2, double(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k].tensor;
      Slot& s = slots_[k];
      const bool has = p.has_grad();
      const auto grad = p.grad();
      auto data = p.mutable_data();
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double g = has ? double(grad[i]) * grad_scale : 0.0;
        s.m[i] = opts_.beta1 * s.m[i] + (1 - opts_.beta1) * g;
        s.v[i] = opts_.beta2 * s.v[i] + (1 - opts_.beta2) * g * g;
        s.v_max[i] = std::max(s.v_max[i], s.v[i]);
        const double m_hat = s.m[i] / c1, v_hat = s.v_max[i] / c2;
        data[i] = static_cast<Real>(double(data[i]) - lr * m_hat / (std::sqrt(v_hat) + opts_.eps));
      }
      p.zero_grad();
    }
  }

  std::size_t steps() const { return t_; }
  const std::vector<Slot>& slots() const { return slots_; }

 private:
  ParameterList<Real> params_;
  AmsGradOptions opts_;
  std::vector<Slot> slots_;
  std::size_t t_ = 0;
};

// Divides the rate by 10 (floored) when the monitored loss has not improved
// by more than `min_relative_improvement` for `patience` evaluations.
class PlateauSchedule {
 public:
  PlateauSchedule(double lr, double floor = 1e-7, std::size_t patience = 3, double min_relative_improvement = 1e-4)
      : lr_(lr), floor_(floor), patience_(patience), threshold_(min_relative_improvement) {
    if (!(floor_ > 0) || floor_ > lr_) throw std::invalid_argument("learning-rate floor must be in (0, lr]");
    if (patience_ == 0) throw std::invalid_argument("plateau patience must be >= 1");
  }

  double observe(double loss) {
    if (!has_best_ || loss < best_ - threshold_ * std::abs(best_)) {
      best_ = loss;
      has_best_ = true;
      stale_ = 0;
    } else if (++stale_ >= patience_) {
      lr_ = std::max(lr_ / 10, floor_);
      stale_ = 0;
    }
    return lr_;
  }

  double lr() const { return lr_; }

 private:
  double lr_, floor_;
  std::size_t patience_;
  double threshold_;
  double best_ = 0;
  bool has_best_ = false;
  std::size_t stale_ = 0;
};

}  // namespace wdsc
