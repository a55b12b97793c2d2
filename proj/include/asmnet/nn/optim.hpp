/**
 * @file optim.hpp
 * @brief Adam, stochastic weight averaging, and a single training step.
 */
#pragma once

#include "asmnet/error.hpp"
#include "asmnet/nn/model.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace asmnet::nn {

struct OptimizerState {
  BasicWeights<float> m, v;
  long long t = 0;
};

inline OptimizerState make_optimizer_state(const ModelWeights &w) {
  return {zeros_like<float>(w), zeros_like<float>(w), 0};
}

/// Bias-corrected Adam update of every array, in place.
template <typename T>
void adam_step(BasicWeights<T> &w, OptimizerState &state, const BasicWeights<T> &grads, double lr) {
  require(w.same_layout(grads), Errc::parameter, "gradient layout does not match weights");
  if (state.m.arrays.empty())
    state = {zeros_like<float>(w), zeros_like<float>(w), 0};
  require(state.m.arrays.size() == w.arrays.size(), Errc::parameter, "optimizer state layout does not match weights");
  const auto &h = w.hyper;
  ++state.t;
  const double c1 = 1.0 - std::pow(h.beta1, double(state.t));
  const double c2 = 1.0 - std::pow(h.beta2, double(state.t));
  for (std::size_t a = 0; a < w.arrays.size(); ++a) {
    auto &val = w.arrays[a].values;
    auto &m = state.m.arrays[a].values;
    auto &v = state.v.arrays[a].values;
    const auto &g = grads.arrays[a].values;
    for (std::size_t i = 0; i < val.size(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<float>(h.beta1 * m[i] + (1.0 - h.beta1) * gi);
      v[i] = static_cast<float>(h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi);
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      val[i] = static_cast<T>(val[i] - lr * mhat / (std::sqrt(vhat) + h.adam_epsilon));
    }
  }
}

/// Running arithmetic mean of weight snapshots (kept in double).
struct SwaState {
  BasicWeights<double> mean;
  long long count = 0;

  ModelWeights weights() const { return cast_weights<float>(mean); }
};

inline SwaState swa_update(std::optional<SwaState> state, const ModelWeights &snapshot) {
  if (!state || state->count == 0)
    return {cast_weights<double>(snapshot), 1};
  require(state->mean.same_layout(zeros_like<double>(snapshot)), Errc::parameter,
          "SWA snapshot layout does not match the running mean");
  SwaState s = std::move(*state);
  const double n = double(s.count);
  for (std::size_t a = 0; a < s.mean.arrays.size(); ++a) {
    auto &mean = s.mean.arrays[a].values;
    const auto &x = snapshot.arrays[a].values;
    for (std::size_t i = 0; i < mean.size(); ++i)
      mean[i] = (n * mean[i] + double(x[i])) / (n + 1.0);
  }
  ++s.count;
  return s;
}

/// Forward (train mode), Dice loss against `target`, backward and one Adam step. Returns the loss.
inline double train_step(ModelWeights &w, OptimizerState &opt, const TileArray &x, std::span<const float> target,
                         std::mt19937_64 &rng, double lr) {
  auto fwd = forward<float>(w, x, Mode::train, &rng);
  const auto dice = dice_loss<float, float>(fwd.probs, target, w.hyper.num_classes, w.hyper.dice_epsilon);
  std::vector<float> dprobs(dice.grad.begin(), dice.grad.end());
  const auto grads = backward<float>(w, fwd.cache, dprobs);
  adam_step(w, opt, grads, lr);
  return dice.loss;
}

} // namespace asmnet::nn
