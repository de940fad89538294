#include <cmath>

#include "anyshot/errors.hpp"
#include "anyshot/neural.hpp"

namespace anyshot {

void adam_step(std::span<Eigen::MatrixXd* const> params, std::span<const Eigen::MatrixXd> grads,
               AdamState& state) {
  if (params.size() != grads.size()) throw ShapeError("parameter and gradient lists differ in length");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].rows() != params[i]->rows() || grads[i].cols() != params[i]->cols()) {
      throw ShapeError("gradient " + std::to_string(i) + " does not match its parameter");
    }
    if (!grads[i].allFinite()) {
      throw NumericError("non-finite gradient for parameter " + std::to_string(i));
    }
  }
  if (state.step == 0 && state.first_moment.empty()) {
    for (const auto* p : params) {
      state.first_moment.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
      state.second_moment.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("optimizer state tracks a different parameter list");
  }

  const AdamConfig& cfg = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.rows() != params[i]->rows() || m.cols() != params[i]->cols()) {
      throw ShapeError("optimizer moment shape changed for parameter " + std::to_string(i));
    }
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grads[i];
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grads[i].cwiseAbs2();
    auto update = (m.array() / correction1) / ((v.array() / correction2).sqrt() + cfg.epsilon);
    params[i]->array() -= cfg.learning_rate * update;
    if (cfg.round_to_float) {
      *params[i] = params[i]->unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
    }
  }
}

}  // namespace anyshot
