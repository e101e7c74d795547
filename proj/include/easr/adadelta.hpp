#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "easr/tape.hpp"
#include "easr/tensor.hpp"

namespace easr {

// Adadelta keeps a per-coordinate running average of squared gradients and of
// squared updates:
//   E[g^2] <- rho E[g^2] + (1-rho) g^2
//   dx      = -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
//   E[dx^2] <- rho E[dx^2] + (1-rho) dx^2
// A zero gradient therefore produces an exactly-zero first-step update.
struct AdadeltaConfig {
  double rho = 0.95;
  double eps = 1e-8;
};

class Adadelta {
 public:
  explicit Adadelta(AdadeltaConfig cfg = {}) : cfg_(cfg) {
    if (!(cfg_.rho > 0.0 && cfg_.rho < 1.0)) {
      throw std::invalid_argument("adadelta rho must be in (0,1), got " +
                                  std::to_string(cfg_.rho));
    }
    if (!(cfg_.eps > 0.0)) {
      throw std::invalid_argument("adadelta eps must be positive, got " +
                                  std::to_string(cfg_.eps));
    }
  }

  const AdadeltaConfig& config() const { return cfg_; }

  // Applies one update from the accumulated gradients and zeroes them.
  // Throws on non-finite gradients so the caller can abort the step with
  // context.
  void step(ParameterSet& params) {
    ensure_state(params);
    for (std::size_t p = 0; p < params.size(); ++p) {
      Parameter& par = params[p];
      Tensor& eg = sq_grad_[p];
      Tensor& ed = sq_update_[p];
      for (std::size_t i = 0; i < par.value.size(); ++i) {
        const double g = par.grad.at(i);
        if (!std::isfinite(g)) {
          throw std::runtime_error("non-finite gradient in parameter '" +
                                   par.name + "' at index " +
                                   std::to_string(i));
        }
        eg.at(i) = cfg_.rho * eg.at(i) + (1.0 - cfg_.rho) * g * g;
        const double dx =
            -std::sqrt(ed.at(i) + cfg_.eps) / std::sqrt(eg.at(i) + cfg_.eps) * g;
        ed.at(i) = cfg_.rho * ed.at(i) + (1.0 - cfg_.rho) * dx * dx;
        par.value.at(i) += dx;
      }
      par.zero_grad();
    }
  }

 private:
  void ensure_state(ParameterSet& params) {
    if (!sq_grad_.empty()) {
      if (sq_grad_.size() != params.size()) {
        throw std::runtime_error("adadelta state bound to a different model");
      }
      return;
    }
    sq_grad_.reserve(params.size());
    sq_update_.reserve(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) {
      sq_grad_.emplace_back(params[p].value.shape());
      sq_update_.emplace_back(params[p].value.shape());
    }
  }

  AdadeltaConfig cfg_;
  std::vector<Tensor> sq_grad_;
  std::vector<Tensor> sq_update_;
};

}  // namespace easr
