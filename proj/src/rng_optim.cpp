#include "transapprox/optim.hpp"
#include "transapprox/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace transapprox {

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("Rng::below: bound must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % bound;
}

double Rng::normal() {
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

OptimizerState::OptimizerState(AdamOptions options, const std::vector<Tensor>& params)
    : options_(options) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void optimizer_step(OptimizerState& state, std::vector<Tensor>& params) {
  if (params.size() != state.m_.size()) {
    throw std::invalid_argument("optimizer_step: parameter list does not match optimizer state");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw std::logic_error("optimizer_step: parameter " + std::to_string(i) + " has no gradient");
    }
    if (params[i].rows() != state.m_[i].rows() || params[i].cols() != state.m_[i].cols()) {
      throw ShapeError("optimizer_step: parameter " + std::to_string(i) + " changed shape");
    }
  }
  const auto& o = state.options_;
  ++state.step_count_;
  const double t = static_cast<double>(state.step_count_);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = params[i].grad();
    state.m_[i] = o.beta1 * state.m_[i] + (1.0 - o.beta1) * g;
    state.v_[i] = o.beta2 * state.v_[i] + (1.0 - o.beta2) * g.cwiseProduct(g);
    params[i].mutable_value().array() -=
        o.learning_rate * (state.m_[i].array() / c1) / ((state.v_[i].array() / c2).sqrt() + o.eps);
  }
}

}  // namespace transapprox
