#include "evac/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace evac::train {

nn::NetworkShape TrainConfig::network_shape() const {
  nn::NetworkShape s;
  s.convs = convs;
  s.hidden = hidden;
  s.atoms = atoms;
  s.v_min = v_min;
  s.v_max = v_max;
  return s;
}

double TrainConfig::per_beta(long env_frame) const {
  const double frac = std::clamp(static_cast<double>(env_frame) / static_cast<double>(total_train_frames), 0.0, 1.0);
  return per_beta_start + frac * (per_beta_end - per_beta_start);
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0 && gamma > 0 && gamma <= 1 && horizon > 0 && n_step > 0 && batch_size > 0 &&
        target_sync_interval > 0 && buffer_capacity > 0 && atoms > 1 && learning_start >= 0 &&
        total_train_frames > 0 && update_interval > 0 && grad_clip > 0 && adam_eps > 0)) {
    throw std::invalid_argument("training configuration values must be positive");
  }
  if (!(v_min < v_max)) throw std::invalid_argument("v_min must be below v_max");
  if (learning_start > total_train_frames) {
    throw std::invalid_argument("learning_start exceeds total_train_frames");
  }
  if (static_cast<std::size_t>(batch_size) > buffer_capacity) {
    throw std::invalid_argument("batch larger than the replay capacity");
  }
  network_shape().validate();
}

nlohmann::json config_to_json(const TrainConfig& c) {
  nlohmann::json convs = nlohmann::json::array();
  for (const auto& k : c.convs) convs.push_back({k.out_channels, k.kernel, k.stride});
  return {
      {"learning_rate", c.learning_rate},   {"gamma", c.gamma},
      {"horizon", c.horizon},               {"n_step", c.n_step},
      {"batch_size", c.batch_size},         {"target_sync_interval", c.target_sync_interval},
      {"buffer_capacity", c.buffer_capacity}, {"atoms", c.atoms},
      {"v_max", c.v_max},                   {"v_min", c.v_min},
      {"learning_start", c.learning_start}, {"total_train_frames", c.total_train_frames},
      {"seed", c.seed},                     {"adam_beta1", c.adam_beta1},
      {"adam_beta2", c.adam_beta2},         {"adam_eps", c.adam_eps},
      {"grad_clip", c.grad_clip},           {"per_alpha", c.per_alpha},
      {"per_beta_start", c.per_beta_start}, {"per_beta_end", c.per_beta_end},
      {"priority_floor", c.priority_floor}, {"bn_momentum", c.bn_momentum},
      {"update_interval", c.update_interval}, {"convs", convs},
      {"hidden", c.hidden},
  };
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  const nlohmann::json known = config_to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw std::invalid_argument("unknown training key: " + it.key());
  }
  auto read = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  read("learning_rate", c.learning_rate);
  read("gamma", c.gamma);
  read("horizon", c.horizon);
  read("n_step", c.n_step);
  read("batch_size", c.batch_size);
  read("target_sync_interval", c.target_sync_interval);
  read("buffer_capacity", c.buffer_capacity);
  read("atoms", c.atoms);
  read("v_max", c.v_max);
  read("v_min", c.v_min);
  read("learning_start", c.learning_start);
  read("total_train_frames", c.total_train_frames);
  read("seed", c.seed);
  read("adam_beta1", c.adam_beta1);
  read("adam_beta2", c.adam_beta2);
  read("adam_eps", c.adam_eps);
  read("grad_clip", c.grad_clip);
  read("per_alpha", c.per_alpha);
  read("per_beta_start", c.per_beta_start);
  read("per_beta_end", c.per_beta_end);
  read("priority_floor", c.priority_floor);
  read("bn_momentum", c.bn_momentum);
  read("update_interval", c.update_interval);
  read("hidden", c.hidden);
  if (j.contains("convs")) {
    c.convs.clear();
    for (const auto& k : j.at("convs")) c.convs.push_back({k.at(0).get<int>(), k.at(1).get<int>(), k.at(2).get<int>()});
  }
  c.validate();
  return c;
}

template <typename T>
TrainBatch<T> make_batch(const replay::SampleBatch& sample) {
  TrainBatch<T> b;
  b.size = static_cast<int>(sample.transitions.size());
  std::vector<const raster::StateTensor*> states;
  std::vector<const raster::StateTensor*> next;
  for (const auto* t : sample.transitions) {
    states.push_back(&t->state);
    next.push_back(&t->next_state);
    b.actions.push_back(t->action);
    b.rewards.push_back(t->reward);
    b.discounts.push_back(t->discount);
    b.dones.push_back(t->done ? 1 : 0);
  }
  b.states = nn::states_to_input<T>(states);
  b.next_states = nn::states_to_input<T>(next);
  b.weights = sample.weights;
  return b;
}

template <typename T>
std::vector<int> greedy_actions(const nn::BatchOutput<T>& out, const nn::NetworkShape& shape) {
  const Matrix<T> q = nn::batch_q_values(out, shape);
  std::vector<int> actions(static_cast<std::size_t>(out.batch));
  std::vector<double> column(static_cast<std::size_t>(out.actions));
  for (int b = 0; b < out.batch; ++b) {
    for (int a = 0; a < out.actions; ++a) column[static_cast<std::size_t>(a)] = static_cast<double>(q(a, b));
    actions[static_cast<std::size_t>(b)] = nn::argmax_action(column);
  }
  return actions;
}

template <typename T>
std::vector<int> double_next_action(const Matrix<T>& next_states, int batch,
                                    const nn::RainbowNetwork<T>& online,
                                    const nn::RainbowNetwork<T>& target,
                                    nn::BatchOutput<T>* target_out) {
  const auto online_out = online.evaluate(next_states, batch, nn::NoiseMode::zero, nn::NormMode::running);
  if (target_out) {
    *target_out = target.evaluate(next_states, batch, nn::NoiseMode::zero, nn::NormMode::running);
  }
  return greedy_actions(online_out, online.shape());
}

std::vector<double> project_distribution(double reward, double discount, bool done,
                                         std::span<const double> next_probs,
                                         const nn::NetworkShape& shape) {
  if (!std::isfinite(reward) || !std::isfinite(discount)) {
    throw std::invalid_argument("non-finite reward in target projection");
  }
  const int atoms = shape.atoms;
  std::vector<double> m(static_cast<std::size_t>(atoms), 0.0);
  auto deposit = [&](double tz, double p) {
    tz = std::clamp(tz, shape.v_min, shape.v_max);
    // Scaled this way grid points such as 0.2 -> 25.5 come out exact.
    const double b = (tz - shape.v_min) * (atoms - 1) / (shape.v_max - shape.v_min);
    const double lo = std::floor(b);
    const double hi = std::ceil(b);
    const auto l = std::clamp(static_cast<int>(lo), 0, atoms - 1);
    const auto u = std::clamp(static_cast<int>(hi), 0, atoms - 1);
    if (l == u) {
      m[static_cast<std::size_t>(l)] += p;
    } else {
      m[static_cast<std::size_t>(l)] += p * (hi - b);
      m[static_cast<std::size_t>(u)] += p * (b - lo);
    }
  };
  if (done) {
    deposit(reward, 1.0);
  } else {
    if (static_cast<int>(next_probs.size()) != atoms) throw std::invalid_argument("next distribution size");
    for (int j = 0; j < atoms; ++j) {
      const double p = next_probs[static_cast<std::size_t>(j)];
      if (p != 0.0) deposit(reward + discount * shape.support(j), p);
    }
  }
  return m;
}

template <typename T>
Matrix<T> project_target(const TrainBatch<T>& batch, const nn::BatchOutput<T>& target_next,
                         std::span<const int> next_actions, const nn::NetworkShape& shape) {
  Matrix<T> out(shape.atoms, batch.size);
  std::vector<double> next(static_cast<std::size_t>(shape.atoms));
  for (int b = 0; b < batch.size; ++b) {
    const auto ub = static_cast<std::size_t>(b);
    const bool done = batch.dones[ub] != 0;
    if (!done) {
      for (int i = 0; i < shape.atoms; ++i) {
        next[static_cast<std::size_t>(i)] = static_cast<double>(target_next.prob(b, next_actions[ub], i));
      }
    }
    const auto m = project_distribution(batch.rewards[ub], batch.discounts[ub], done, next, shape);
    for (int i = 0; i < shape.atoms; ++i) out(i, b) = T(m[static_cast<std::size_t>(i)]);
  }
  return out;
}

double cross_entropy(std::span<const double> target, std::span<const double> predicted) {
  if (target.size() != predicted.size()) throw std::invalid_argument("distribution sizes differ");
  double loss = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] != 0.0) loss -= target[i] * std::log(std::max(predicted[i], 1e-12));
  }
  return loss;
}

template <typename T>
LossResult<T> categorical_loss(const nn::BatchOutput<T>& pred, std::span<const int> actions,
                               const Matrix<T>& target, std::span<const double> weights) {
  const int atoms = pred.atoms;
  const int batch = pred.batch;
  if (static_cast<int>(actions.size()) != batch || static_cast<int>(weights.size()) != batch ||
      target.rows() != atoms || target.cols() != batch) {
    throw std::invalid_argument("loss inputs disagree on batch shape");
  }
  const double log_floor = std::log(1e-12);
  LossResult<T> r;
  r.row_losses.assign(static_cast<std::size_t>(batch), 0.0);
  r.dlogits = Matrix<T>::Zero(pred.logits.rows(), batch);
  std::vector<double> logp(static_cast<std::size_t>(atoms));
  std::vector<char> live(static_cast<std::size_t>(atoms));
  double total = 0.0;
  for (int b = 0; b < batch; ++b) {
    const auto ub = static_cast<std::size_t>(b);
    const int a = actions[ub];
    const Eigen::Index row0 = static_cast<Eigen::Index>(a) * atoms;
    double mx = -INFINITY;
    for (int i = 0; i < atoms; ++i) mx = std::max(mx, static_cast<double>(pred.logits(row0 + i, b)));
    double se = 0.0;
    for (int i = 0; i < atoms; ++i) se += std::exp(static_cast<double>(pred.logits(row0 + i, b)) - mx);
    const double lse = mx + std::log(se);
    double loss = 0.0;
    double live_mass = 0.0;
    for (int i = 0; i < atoms; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const double lp = static_cast<double>(pred.logits(row0 + i, b)) - lse;
      live[ui] = lp > log_floor;
      logp[ui] = live[ui] ? lp : log_floor;
      const double t = static_cast<double>(target(i, b));
      loss -= t * logp[ui];
      if (live[ui]) live_mass += t;
    }
    r.row_losses[ub] = loss;
    total += weights[ub] * loss;
    const double scale = weights[ub] / batch;
    for (int i = 0; i < atoms; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const double p = std::exp(static_cast<double>(pred.logits(row0 + i, b)) - lse);
      const double t = live[ui] ? static_cast<double>(target(i, b)) : 0.0;
      r.dlogits(row0 + i, b) = T(scale * (p * live_mass - t));
    }
  }
  r.loss = total / batch;
  return r;
}

template <typename T>
AdamState<T> make_adam(const nn::ParameterSet<T>& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

template <typename T>
double clip_gradients(std::vector<Matrix<T>>& grads, const nn::ParameterSet<T>& params, double max_norm) {
  double sq = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (params.trainable(i)) sq += static_cast<double>(grads[i].squaredNorm());
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T s = T(max_norm / norm);
    for (auto& g : grads) g *= s;
  }
  return norm;
}

template <typename T>
void adam_step(nn::ParameterSet<T>& params, const std::vector<Matrix<T>>& grads, AdamState<T>& st,
               const TrainConfig& cfg) {
  ++st.step;
  const T b1 = T(cfg.adam_beta1);
  const T b2 = T(cfg.adam_beta2);
  const T c1 = T(1.0 - std::pow(cfg.adam_beta1, static_cast<double>(st.step)));
  const T c2 = T(1.0 - std::pow(cfg.adam_beta2, static_cast<double>(st.step)));
  const T lr = T(cfg.learning_rate);
  const T eps = T(cfg.adam_eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.trainable(i)) continue;
    st.m[i] = b1 * st.m[i] + (T(1) - b1) * grads[i];
    st.v[i] = b2 * st.v[i] + (T(1) - b2) * grads[i].cwiseAbs2();
    params[i].array() -= lr * (st.m[i].array() / c1) / ((st.v[i].array() / c2).sqrt() + eps);
  }
}

namespace {

template <typename T>
std::string dump_tensors(const nn::ParameterSet<T>& params, const std::vector<Matrix<T>>& grads) {
  std::ostringstream s;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s << "\n  " << params.name(i) << " |param|=" << params[i].norm() << " |grad|=" << grads[i].norm()
      << (grads[i].allFinite() ? "" : " NON-FINITE");
  }
  return s.str();
}

}  // namespace

template <typename T>
UpdateStats update_step(const TrainBatch<T>& batch, DualParams<T>& dual, AdamState<T>& opt,
                        const TrainConfig& cfg, Rng& rng) {
  const nn::NetworkShape& shape = dual.online.shape();
  nn::BatchOutput<T> target_next;
  const auto next_actions = double_next_action(batch.next_states, batch.size, dual.online, dual.target, &target_next);
  const Matrix<T> target = project_target(batch, target_next, next_actions, shape);

  nn::ForwardCache<T> cache;
  const auto pred = dual.online.forward(batch.states, batch.size, nn::NoiseMode::sample,
                                        nn::NormMode::batch, &rng, &cache);
  auto loss = categorical_loss(pred, batch.actions, target, batch.weights);
  if (!std::isfinite(loss.loss)) throw std::runtime_error("non-finite training loss");

  auto grads = dual.online.backward(cache, loss.dlogits);
  for (const auto& g : grads) {
    if (!g.allFinite()) {
      throw std::runtime_error("non-finite gradient:" + dump_tensors(dual.online.params(), grads));
    }
  }
  UpdateStats stats;
  stats.grad_norm = clip_gradients(grads, dual.online.params(), cfg.grad_clip);
  adam_step(dual.online.params(), grads, opt, cfg);
  dual.online.commit_running_stats(cache, T(cfg.bn_momentum));

  const Matrix<T> q = nn::batch_q_values(pred, shape);
  double q_sum = 0.0;
  for (int b = 0; b < batch.size; ++b) q_sum += static_cast<double>(q(batch.actions[static_cast<std::size_t>(b)], b));
  stats.mean_q = q_sum / batch.size;
  stats.loss = loss.loss;
  stats.row_losses = std::move(loss.row_losses);
  ++dual.updates_since_sync;
  ++dual.total_updates;
  return stats;
}

template <typename T>
bool maybe_sync_target(DualParams<T>& dual, const TrainConfig& cfg) {
  if (dual.updates_since_sync < cfg.target_sync_interval) return false;
  dual.target = dual.online;
  dual.updates_since_sync = 0;
  ++dual.syncs;
  return true;
}

#define EVAC_TRAINER_INSTANTIATE(T)                                                                  \
  template TrainBatch<T> make_batch<T>(const replay::SampleBatch&);                                  \
  template std::vector<int> greedy_actions(const nn::BatchOutput<T>&, const nn::NetworkShape&);      \
  template std::vector<int> double_next_action(const Matrix<T>&, int, const nn::RainbowNetwork<T>&,  \
                                               const nn::RainbowNetwork<T>&, nn::BatchOutput<T>*);   \
  template Matrix<T> project_target(const TrainBatch<T>&, const nn::BatchOutput<T>&,                 \
                                    std::span<const int>, const nn::NetworkShape&);                  \
  template LossResult<T> categorical_loss(const nn::BatchOutput<T>&, std::span<const int>,           \
                                          const Matrix<T>&, std::span<const double>);                \
  template AdamState<T> make_adam(const nn::ParameterSet<T>&);                                       \
  template double clip_gradients(std::vector<Matrix<T>>&, const nn::ParameterSet<T>&, double);       \
  template void adam_step(nn::ParameterSet<T>&, const std::vector<Matrix<T>>&, AdamState<T>&,        \
                          const TrainConfig&);                                                       \
  template UpdateStats update_step(const TrainBatch<T>&, DualParams<T>&, AdamState<T>&,              \
                                   const TrainConfig&, Rng&);                                        \
  template bool maybe_sync_target(DualParams<T>&, const TrainConfig&);

EVAC_TRAINER_INSTANTIATE(float)
EVAC_TRAINER_INSTANTIATE(double)

}  // namespace evac::train
