#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "evac/raster.hpp"

namespace evac::replay {

struct PrioritizedTransition {
  raster::StateTensor state;
  int action = 0;
  double reward = 0.0;    // n-step discounted reward r^(n)
  double discount = 1.0;  // gamma^(n)
  raster::StateTensor next_state;
  bool done = false;
  double priority = 1.0;
};

/// (r^(n), gamma^len) for 1 <= rewards.size() <= n.
std::pair<double, double> n_step_fold(std::span<const double> rewards, double gamma, int n);

/// Binary sum tree over a fixed number of leaves.
class SumTree {
 public:
  explicit SumTree(std::size_t capacity);

  std::size_t capacity() const { return capacity_; }
  void set(std::size_t leaf, double value);
  double get(std::size_t leaf) const { return nodes_[base_ + leaf]; }
  double total() const { return nodes_[1]; }

  /// Leaf whose cumulative interval contains `mass`, with mass in [0, total).
  std::size_t find(double mass) const;

  /// Sum of leaves computed directly, for consistency checks.
  double leaf_sum() const;

 private:
  std::size_t capacity_;
  std::size_t base_;  // first leaf node; power of two
  std::vector<double> nodes_;
};

/// Slot plus the generation it was sampled at; a mismatch means eviction.
struct SampleHandle {
  std::size_t slot = 0;
  std::uint64_t generation = 0;
};

struct SampleBatch {
  std::vector<SampleHandle> handles;
  std::vector<const PrioritizedTransition*> transitions;
  std::vector<double> probabilities;  // P(i)
  std::vector<double> weights;        // (size P(i))^-beta, normalized by the batch max
};

/// Fixed-capacity FIFO store with proportional prioritized sampling.
class PriorityBuffer {
 public:
  explicit PriorityBuffer(std::size_t capacity, double alpha = 0.5, double priority_floor = 1e-6);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return slots_.size(); }
  double alpha() const { return alpha_; }

  /// Stores `t` at the current max priority (1.0 when empty), evicting the oldest when full.
  void push(PrioritizedTransition t);

  /// Stratified proportional sample. Throws when size < batch_size.
  SampleBatch sample(std::size_t batch_size, double beta, std::mt19937_64& rng) const;

  /// priority = loss + floor. Stale handles are skipped and counted.
  void update_priorities(std::span<const SampleHandle> handles, std::span<const double> losses);

  const PrioritizedTransition& at(std::size_t slot) const { return slots_[slot]; }
  double priority(std::size_t slot) const { return slots_[slot].priority; }
  double max_priority() const { return max_priority_; }
  double tree_total() const { return tree_.total(); }
  double tree_leaf_sum() const { return tree_.leaf_sum(); }
  std::uint64_t stale_updates() const { return stale_updates_; }

  /// Oldest-first slot order.
  std::size_t oldest_slot() const { return size_ < capacity() ? 0 : next_; }

 private:
  std::vector<PrioritizedTransition> slots_;
  std::vector<std::uint64_t> generation_;
  SumTree tree_;
  double alpha_;
  double floor_;
  double max_priority_ = 1.0;
  std::size_t size_ = 0;
  std::size_t next_ = 0;
  std::uint64_t stale_updates_ = 0;
};

/// One environment step of one pedestrian before n-step folding.
struct RawTransition {
  raster::StateTensor state;
  int action = 0;
  double reward = 0.0;
  raster::StateTensor next_state;
  bool terminal = false;  // evacuated
};

/// Per-pedestrian sliding windows that emit n-step transitions.
class NStepAccumulator {
 public:
  explicit NStepAccumulator(int n = 3, double gamma = 0.99);

  int n() const { return n_; }
  double gamma() const { return gamma_; }

  /// Adds one step for `ped`. Emits a transition when the window is full;
  /// when `episode_end` is set the remaining shorter windows are flushed.
  std::vector<PrioritizedTransition> add(int ped, RawTransition step, bool episode_end);

  /// Flushes every open window as a truncated (non-terminal) tail.
  std::vector<PrioritizedTransition> flush_all();

  std::size_t pending(int ped) const;
  void clear() { windows_.clear(); }

 private:
  PrioritizedTransition emit_front(const std::deque<RawTransition>& w) const;

  int n_;
  double gamma_;
  std::unordered_map<int, std::deque<RawTransition>> windows_;
};

}  // namespace evac::replay
