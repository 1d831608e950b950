#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "evac/network.hpp"
#include "evac/replay.hpp"

namespace evac::train {

using nn::Matrix;
using nn::Rng;

struct TrainConfig {
  double learning_rate = 1e-4;
  double gamma = 0.99;
  int horizon = 200;
  int n_step = 3;
  int batch_size = 128;
  long target_sync_interval = 1000;  // F_u, counted in updates
  std::size_t buffer_capacity = 100000;
  int atoms = 51;
  double v_max = 10.0;
  double v_min = -10.0;
  long learning_start = 50000;  // L_s, environment frames
  long total_train_frames = 5000000;
  std::uint64_t seed = 0;

  // Optimizer and replay details.
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1.5e-4;
  double grad_clip = 10.0;
  double per_alpha = 0.5;
  double per_beta_start = 0.4;
  double per_beta_end = 1.0;
  double priority_floor = 1e-6;
  double bn_momentum = 0.1;
  int update_interval = 1;  // environment frames per gradient update after warmup

  // Network geometry beyond the categorical support.
  std::vector<nn::ConvSpec> convs = nn::NetworkShape{}.convs;
  int hidden = 512;

  nn::NetworkShape network_shape() const;
  double per_beta(long env_frame) const;
  void validate() const;
};

nlohmann::json config_to_json(const TrainConfig& cfg);
/// Reads known keys over the defaults; unknown keys are rejected.
TrainConfig config_from_json(const nlohmann::json& j);

template <typename T>
struct DualParams {
  nn::RainbowNetwork<T> online;
  nn::RainbowNetwork<T> target;
  long updates_since_sync = 0;
  long total_updates = 0;
  long syncs = 0;

  DualParams() = default;
  explicit DualParams(nn::RainbowNetwork<T> net) : online(net), target(std::move(net)) {}
};

/// Input tensors and scalar columns of one training batch.
template <typename T>
struct TrainBatch {
  int size = 0;
  Matrix<T> states;
  Matrix<T> next_states;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<double> discounts;
  std::vector<char> dones;
  std::vector<double> weights;
};

template <typename T>
TrainBatch<T> make_batch(const replay::SampleBatch& sample);

/// a* per row from the online distributions.
template <typename T>
std::vector<int> greedy_actions(const nn::BatchOutput<T>& out, const nn::NetworkShape& shape);

/// a* = argmax_a Q_online(s', a). Both networks use zero noise and running
/// statistics; `target_out` receives the target network's distributions.
template <typename T>
std::vector<int> double_next_action(const Matrix<T>& next_states, int batch,
                                    const nn::RainbowNetwork<T>& online,
                                    const nn::RainbowNetwork<T>& target,
                                    nn::BatchOutput<T>* target_out = nullptr);

/// C51 projection of r + discount * z onto the support, for one row.
std::vector<double> project_distribution(double reward, double discount, bool done,
                                         std::span<const double> next_probs,
                                         const nn::NetworkShape& shape);

/// Projected targets for a batch: atoms x B.
template <typename T>
Matrix<T> project_target(const TrainBatch<T>& batch, const nn::BatchOutput<T>& target_next,
                         std::span<const int> next_actions, const nn::NetworkShape& shape);

/// Cross-entropy -sum target_i log(max(pred_i, 1e-12)).
double cross_entropy(std::span<const double> target, std::span<const double> predicted);

template <typename T>
struct LossResult {
  double loss = 0.0;                // mean of weighted rows
  std::vector<double> row_losses;   // unweighted
  Matrix<T> dlogits;                // d loss / d logits, (actions*atoms) x B
};

/// Categorical loss at the taken actions computed from logits (log-softmax,
/// floored at log 1e-12). Gradients flow only through the taken action.
template <typename T>
LossResult<T> categorical_loss(const nn::BatchOutput<T>& pred, std::span<const int> actions,
                               const Matrix<T>& target, std::span<const double> weights);

template <typename T>
struct AdamState {
  std::vector<Matrix<T>> m;
  std::vector<Matrix<T>> v;
  long step = 0;
};

template <typename T>
AdamState<T> make_adam(const nn::ParameterSet<T>& params);

/// Rescales trainable gradients to at most `max_norm`; returns the pre-clip norm.
template <typename T>
double clip_gradients(std::vector<Matrix<T>>& grads, const nn::ParameterSet<T>& params, double max_norm);

template <typename T>
void adam_step(nn::ParameterSet<T>& params, const std::vector<Matrix<T>>& grads, AdamState<T>& state,
               const TrainConfig& cfg);

struct UpdateStats {
  std::vector<double> row_losses;
  double loss = 0.0;
  double mean_q = 0.0;  // Q at the taken actions
  double grad_norm = 0.0;
};

/// One optimization step: targets, loss, backprop through every parameter,
/// gradient clip, Adam, batch-norm statistics commit. Fresh online noise is
/// drawn from `rng`.
template <typename T>
UpdateStats update_step(const TrainBatch<T>& batch, DualParams<T>& dual, AdamState<T>& opt,
                        const TrainConfig& cfg, Rng& rng);

/// Copies online into target when updates_since_sync >= F_u. Returns true on sync.
template <typename T>
bool maybe_sync_target(DualParams<T>& dual, const TrainConfig& cfg);

}  // namespace evac::train
