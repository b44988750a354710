#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "srp4ctr/common.hpp"
#include "srp4ctr/tensor.hpp"

namespace srp4ctr {

// lr(t) = (lr0 - lr_end) * (1 - t/total)^power + lr_end, clamped at lr_end
// once t reaches total.
struct PolynomialDecay {
  double lr0 = 1e-3;
  double lr_end = 0.0;
  double power = 1.0;
  long total_steps = 1;

  double at(long step) const {
    if (lr0 < 0 || lr_end < 0 || lr_end > lr0)
      throw ConfigError("polynomial decay requires 0 <= lr_end <= lr0");
    if (total_steps < 1) throw ConfigError("polynomial decay requires total_steps >= 1");
    if (step < 0) throw ContractError("schedule step must be non-negative");
    if (step >= total_steps) return lr_end;
    const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
    return (lr0 - lr_end) * std::pow(frac, power) + lr_end;
  }
};

// Adam with bias correction. Moment buffers are keyed by parameter name,
// created on first update, and stored in the working scalar type so that a
// saved optimizer state round-trips exactly through checkpoints.
template <typename F>
class Adam {
 public:
  Adam(PolynomialDecay schedule, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : schedule_(schedule), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  long step_count() const { return step_; }
  void set_step_count(long step) {
    if (step < 0) throw ContractError("step count must be non-negative");
    step_ = step;
  }
  double current_lr() const { return schedule_.at(step_); }

  // Applies one update to every named parameter, then zeroes their gradients
  // and advances the step counter.
  void step(const std::vector<std::pair<std::string, Tensor<F>>>& params) {
    const double lr = schedule_.at(step_);
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_ + 1));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_ + 1));
    for (const auto& [name, p] : params) {
      if (!p.requires_grad || !p.grad)
        throw ContractError("Adam: parameter '" + name + "' has no gradient");
      Slot& slot = slot_for(name, p);
      const std::size_t n = p.numel();
      for (std::size_t i = 0; i < n; ++i) {
        const double grd = static_cast<double>((*p.grad)[i]);
        const double mi = beta1_ * static_cast<double>((*slot.m.data)[i]) + (1.0 - beta1_) * grd;
        const double vi =
            beta2_ * static_cast<double>((*slot.v.data)[i]) + (1.0 - beta2_) * grd * grd;
        (*slot.m.data)[i] = static_cast<F>(mi);
        (*slot.v.data)[i] = static_cast<F>(vi);
        const double mhat = static_cast<double>((*slot.m.data)[i]) / bc1;
        const double vhat = static_cast<double>((*slot.v.data)[i]) / bc2;
        (*p.data)[i] -= static_cast<F>(lr * mhat / (std::sqrt(vhat) + eps_));
      }
      p.zero_grad();
    }
    ++step_;
  }

  // Moment tensors in the given parameter order, for checkpointing.
  std::vector<std::pair<std::string, Tensor<F>>> state_entries(
      const std::vector<std::pair<std::string, Tensor<F>>>& params) const {
    std::vector<std::pair<std::string, Tensor<F>>> out;
    for (const auto& [name, p] : params) {
      auto it = slots_.find(name);
      if (it == slots_.end()) continue;
      out.emplace_back("adam.m." + name, it->second.m);
      out.emplace_back("adam.v." + name, it->second.v);
    }
    return out;
  }

  void restore_moment(const std::string& key, const Tensor<F>& value) {
    const bool is_m = key.rfind("adam.m.", 0) == 0;
    const bool is_v = key.rfind("adam.v.", 0) == 0;
    if (!is_m && !is_v) throw ContractError("not an optimizer state key: " + key);
    const std::string name = key.substr(7);
    Slot& slot = slots_[name];
    Tensor<F>& dst = is_m ? slot.m : slot.v;
    if (!dst.defined()) dst = Tensor<F>::zeros(value.shape);
    if (dst.shape != value.shape)
      throw IoError("optimizer state shape mismatch for '" + name + "'");
    std::copy(value.data->begin(), value.data->end(), dst.data->begin());
  }

 private:
  struct Slot {
    Tensor<F> m, v;
  };

  Slot& slot_for(const std::string& name, const Tensor<F>& p) {
    Slot& slot = slots_[name];
    if (!slot.m.defined()) {
      slot.m = Tensor<F>::zeros(p.shape);
      slot.v = Tensor<F>::zeros(p.shape);
    }
    if (slot.m.shape != p.shape)
      throw ContractError("Adam: parameter '" + name + "' changed shape");
    return slot;
  }

  PolynomialDecay schedule_;
  double beta1_, beta2_, eps_;
  long step_ = 0;
  std::unordered_map<std::string, Slot> slots_;
};

}  // namespace srp4ctr
