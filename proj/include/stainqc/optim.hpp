#pragma once

#include <cmath>

#include "stainqc/nn.hpp"

namespace stainqc::nn {

/// AdamW with decoupled weight decay (step ordering: adam update, then decay
/// applied directly to the parameter, both scaled by the current lr).
template <class Scalar>
class AdamW {
public:
  AdamW(ParamList<Scalar> params, double lr, double weight_decay,
        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), wd_(weight_decay), beta1_(beta1),
        beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto& p : params_) {
      m_.push_back(MatX<Scalar>::Zero(p.value->rows(), p.value->cols()));
      v_.push_back(MatX<Scalar>::Zero(p.value->rows(), p.value->cols()));
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step() {
    ++t_;
    const Scalar bc1 = Scalar(1) - std::pow(Scalar(beta1_), Scalar(t_));
    const Scalar bc2 = Scalar(1) - std::pow(Scalar(beta2_), Scalar(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i].value;
      const auto& g = *params_[i].grad;
      m_[i] = Scalar(beta1_) * m_[i] + Scalar(1 - beta1_) * g;
      v_[i] = Scalar(beta2_) * v_[i] + Scalar(1 - beta2_) * g.cwiseProduct(g);
      const auto mhat = (m_[i] / bc1).eval();
      const auto vhat = (v_[i] / bc2).eval();
      p.array() -= Scalar(lr_) * (mhat.array() / (vhat.array().sqrt() + Scalar(eps_)) +
                                  Scalar(wd_) * p.array());
    }
  }

  void zero_grad() { zero_grads(params_); }

private:
  ParamList<Scalar> params_;
  double lr_, wd_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<MatX<Scalar>> m_, v_;
};

/// Linear warmup to the peak, then cosine decay to zero at total_steps.
class CosineWarmup {
public:
  CosineWarmup(double peak_lr, int64_t warmup_steps, int64_t total_steps)
      : peak_(peak_lr), warmup_(warmup_steps), total_(total_steps) {
    if (total_steps <= 0) throw ArgumentError("scheduler needs total_steps > 0");
    if (warmup_steps < 0 || warmup_steps > total_steps)
      throw ArgumentError("warmup_steps out of range");
  }

  double lr_at(int64_t step) const {
    if (warmup_ > 0 && step < warmup_)
      return peak_ * static_cast<double>(step + 1) / static_cast<double>(warmup_);
    if (step >= total_) return 0.0;
    const double progress = static_cast<double>(step - warmup_) /
                            static_cast<double>(std::max<int64_t>(1, total_ - warmup_));
    return peak_ * 0.5 * (1.0 + std::cos(M_PI * progress));
  }

private:
  double peak_;
  int64_t warmup_, total_;
};

/// Cross entropy with label smoothing: q = (1-s)*one_hot + s/C.
/// Returns the loss; if dlogits is non-null, writes softmax(logits) - q.
template <class Scalar>
Scalar smoothed_ce(const VecX<Scalar>& logits, int label, double smoothing,
                   VecX<Scalar>* dlogits = nullptr) {
  const Eigen::Index c = logits.size();
  if (label < 0 || label >= c)
    throw LabelError("label index " + std::to_string(label) + " out of range for " +
                     std::to_string(c) + " classes");
  if (smoothing < 0.0 || smoothing >= 1.0)
    throw ArgumentError("smoothing must be in [0, 1)");

  const Scalar m = logits.maxCoeff();
  const VecX<Scalar> shifted = logits.array() - m;
  const Scalar logsum = std::log(shifted.array().exp().sum());
  const VecX<Scalar> logp = shifted.array() - logsum;

  VecX<Scalar> q = VecX<Scalar>::Constant(c, Scalar(smoothing) / Scalar(c));
  q[label] += Scalar(1.0 - smoothing);
  const Scalar loss = -(q.array() * logp.array()).sum();
  if (dlogits) *dlogits = logp.array().exp() - q.array();
  return loss;
}

} // namespace stainqc::nn
