#include "evac/replay.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <stdexcept>

namespace evac::replay {

std::pair<double, double> n_step_fold(std::span<const double> rewards, double gamma, int n) {
  if (rewards.empty()) throw std::invalid_argument("n_step_fold needs at least one reward");
  if (static_cast<int>(rewards.size()) > n) throw std::invalid_argument("more rewards than n");
  double total = 0.0;
  double g = 1.0;
  for (double r : rewards) {
    total += g * r;
    g *= gamma;
  }
  return {total, g};
}

// ---------------------------------------------------------------- sum tree

SumTree::SumTree(std::size_t capacity)
    : capacity_(capacity), base_(std::bit_ceil(std::max<std::size_t>(capacity, 1))),
      nodes_(2 * base_, 0.0) {}

void SumTree::set(std::size_t leaf, double value) {
  if (leaf >= capacity_) throw std::out_of_range("sum tree leaf");
  std::size_t i = base_ + leaf;
  nodes_[i] = value;
  // Recompute parents from children so rounding never accumulates.
  for (i /= 2; i >= 1; i /= 2) nodes_[i] = nodes_[2 * i] + nodes_[2 * i + 1];
}

std::size_t SumTree::find(double mass) const {
  std::size_t i = 1;
  while (i < base_) {
    const double left = nodes_[2 * i];
    if (mass < left || nodes_[2 * i + 1] <= 0.0) {
      i = 2 * i;
    } else {
      mass -= left;
      i = 2 * i + 1;
    }
  }
  std::size_t leaf = i - base_;
  // Rounding can land on an empty leaf at the right edge; step back to a live one.
  while (leaf > 0 && nodes_[base_ + leaf] <= 0.0) --leaf;
  return leaf;
}

double SumTree::leaf_sum() const {
  double s = 0.0;
  for (std::size_t i = 0; i < capacity_; ++i) s += nodes_[base_ + i];
  return s;
}

// ---------------------------------------------------------------- buffer

PriorityBuffer::PriorityBuffer(std::size_t capacity, double alpha, double priority_floor)
    : slots_(capacity), generation_(capacity, 0), tree_(capacity), alpha_(alpha),
      floor_(priority_floor) {
  if (capacity == 0) throw std::invalid_argument("buffer capacity must be positive");
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be non-negative");
  if (!(priority_floor > 0.0)) throw std::invalid_argument("priority floor must be positive");
}

void PriorityBuffer::push(PrioritizedTransition t) {
  t.priority = size_ == 0 ? 1.0 : max_priority_;
  const std::size_t slot = next_;
  slots_[slot] = std::move(t);
  ++generation_[slot];
  tree_.set(slot, std::pow(slots_[slot].priority, alpha_));
  next_ = (next_ + 1) % capacity();
  size_ = std::min(size_ + 1, capacity());
  if (size_ == 1) max_priority_ = slots_[slot].priority;
}

SampleBatch PriorityBuffer::sample(std::size_t batch_size, double beta, std::mt19937_64& rng) const {
  if (batch_size == 0 || size_ < batch_size) {
    throw std::logic_error("replay buffer holds fewer transitions than the batch size");
  }
  SampleBatch out;
  out.handles.reserve(batch_size);
  const double total = tree_.total();
  const double segment = total / static_cast<double>(batch_size);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double max_w = 0.0;
  for (std::size_t k = 0; k < batch_size; ++k) {
    double mass = (static_cast<double>(k) + unit(rng)) * segment;
    mass = std::min(mass, std::nextafter(total, 0.0));
    const std::size_t slot = tree_.find(mass);
    const double p = tree_.get(slot) / total;
    const double w = std::pow(static_cast<double>(size_) * p, -beta);
    out.handles.push_back({slot, generation_[slot]});
    out.transitions.push_back(&slots_[slot]);
    out.probabilities.push_back(p);
    out.weights.push_back(w);
    max_w = std::max(max_w, w);
  }
  for (double& w : out.weights) w /= max_w;
  return out;
}

void PriorityBuffer::update_priorities(std::span<const SampleHandle> handles,
                                       std::span<const double> losses) {
  if (handles.size() != losses.size()) throw std::invalid_argument("handles and losses differ in length");
  for (std::size_t k = 0; k < handles.size(); ++k) {
    const auto& h = handles[k];
    if (h.slot >= capacity() || generation_[h.slot] != h.generation) {
      ++stale_updates_;
      continue;
    }
    if (!std::isfinite(losses[k]) || losses[k] < 0.0) {
      throw std::invalid_argument("priority update needs finite non-negative losses");
    }
    const double p = losses[k] + floor_;
    slots_[h.slot].priority = p;
    tree_.set(h.slot, std::pow(p, alpha_));
    max_priority_ = std::max(max_priority_, p);
  }
}

// ---------------------------------------------------------------- n-step

NStepAccumulator::NStepAccumulator(int n, double gamma) : n_(n), gamma_(gamma) {
  if (n < 1) throw std::invalid_argument("n must be at least 1");
}

PrioritizedTransition NStepAccumulator::emit_front(const std::deque<RawTransition>& w) const {
  std::vector<double> rewards;
  rewards.reserve(w.size());
  for (const auto& s : w) rewards.push_back(s.reward);
  const auto [r, g] = n_step_fold(rewards, gamma_, n_);
  PrioritizedTransition t;
  t.state = w.front().state;
  t.action = w.front().action;
  t.reward = r;
  t.discount = g;
  t.next_state = w.back().next_state;
  t.done = w.back().terminal;
  return t;
}

std::vector<PrioritizedTransition> NStepAccumulator::add(int ped, RawTransition step,
                                                         bool episode_end) {
  std::vector<PrioritizedTransition> out;
  auto& w = windows_[ped];
  const bool end = episode_end || step.terminal;
  w.push_back(std::move(step));
  if (static_cast<int>(w.size()) == n_) {
    out.push_back(emit_front(w));
    w.pop_front();
  }
  if (end) {
    while (!w.empty()) {
      out.push_back(emit_front(w));
      w.pop_front();
    }
    windows_.erase(ped);
  }
  return out;
}

std::vector<PrioritizedTransition> NStepAccumulator::flush_all() {
  std::vector<PrioritizedTransition> out;
  // Ordered by pedestrian id for reproducibility.
  std::map<int, std::deque<RawTransition>> ordered(windows_.begin(), windows_.end());
  for (auto& [ped, w] : ordered) {
    while (!w.empty()) {
      out.push_back(emit_front(w));
      w.pop_front();
    }
  }
  windows_.clear();
  return out;
}

std::size_t NStepAccumulator::pending(int ped) const {
  const auto it = windows_.find(ped);
  return it == windows_.end() ? 0 : it->second.size();
}

}  // namespace evac::replay
