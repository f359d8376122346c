#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "mftop/common.hpp"

namespace mftop {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction and persistent first/second moments. Steps with
// non-finite gradients are skipped (flagged via skipped_steps) so a single
// bad batch cannot destroy the state.
class AdamState {
 public:
  AdamState() = default;

  AdamState(Eigen::Index rows, Eigen::Index cols, AdamConfig cfg)
      : cfg_(cfg), m_(Eigen::ArrayXXd::Zero(rows, cols)), v_(Eigen::ArrayXXd::Zero(rows, cols)) {}

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return t_; }
  long skipped_steps() const { return skipped_; }
  const Eigen::ArrayXXd& first_moment() const { return m_; }
  const Eigen::ArrayXXd& second_moment() const { return v_; }

  // Applies one update in place; returns false when the gradient was
  // non-finite and the step was skipped.
  template <class ParamDerived, class GradDerived>
  bool step(Eigen::MatrixBase<ParamDerived> const& params_in,
            const Eigen::MatrixBase<GradDerived>& grads) {
    auto& params = const_cast<Eigen::MatrixBase<ParamDerived>&>(params_in);
    if (params.rows() != m_.rows() || params.cols() != m_.cols() || grads.rows() != m_.rows() ||
        grads.cols() != m_.cols())
      throw ConfigError("Adam parameter/gradient shape mismatch");
    if (!grads.allFinite()) {
      ++skipped_;
      return false;
    }
    ++t_;
    const auto g = grads.array();
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * g;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * g.square();
    const double mc = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double vc = 1.0 - std::pow(cfg_.beta2, double(t_));
    params.array() -= cfg_.lr * (m_ / mc) / ((v_ / vc).sqrt() + cfg_.eps);
    return true;
  }

  void restore(const Eigen::ArrayXXd& m, const Eigen::ArrayXXd& v, long t, long skipped) {
    m_ = m;
    v_ = v;
    t_ = t;
    skipped_ = skipped;
  }

 private:
  AdamConfig cfg_;
  Eigen::ArrayXXd m_, v_;
  long t_ = 0;
  long skipped_ = 0;
};

}  // namespace mftop
