#include "vmi/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace vmi {

OptimizerConfig::Kind optimizer_kind_from_string(const std::string& s) {
  if (s == "adam") return OptimizerConfig::Kind::adam;
  if (s == "sgd") return OptimizerConfig::Kind::sgd;
  throw std::invalid_argument("optimizer: unknown kind '" + s + "'");
}

Optimizer::Optimizer(OptimizerConfig cfg, std::vector<ParamRef> params)
    : cfg_(cfg), params_(std::move(params)) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].data->size(), 0.0);
    v_[i].assign(params_[i].data->size(), 0.0);
  }
}

void Optimizer::step(const std::vector<std::vector<double>>& grads) {
  if (grads.size() != params_.size()) {
    throw std::invalid_argument("optimizer: gradient count mismatch");
  }
  ++t_;
  double lr = cfg_.lr;
  if (cfg_.cosine_decay && cfg_.total_steps > 0) {
    double frac = std::min(1.0, static_cast<double>(t_) / cfg_.total_steps);
    lr = cfg_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    std::vector<double>& p = *params_[i].data;
    const std::vector<double>& g = grads[i];
    if (g.size() != p.size()) {
      throw std::invalid_argument("optimizer: gradient size mismatch for " + params_[i].name);
    }
    if (cfg_.kind == OptimizerConfig::Kind::adam) {
      double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
      double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
      for (std::size_t j = 0; j < p.size(); ++j) {
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        double mhat = m_[i][j] / bc1;
        double vhat = v_[i][j] / bc2;
        p[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    } else {
      for (std::size_t j = 0; j < p.size(); ++j) {
        m_[i][j] = cfg_.momentum * m_[i][j] + g[j];
        p[j] -= lr * m_[i][j];
      }
    }
  }
}

}  // namespace vmi
