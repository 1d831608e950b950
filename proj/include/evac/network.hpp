#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "evac/raster.hpp"

namespace evac::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Rng = std::mt19937_64;

struct ConvSpec {
  int out_channels = 32;
  int kernel = 8;
  int stride = 4;
};

/// Layer geometry. Defaults are the full-size 84x84 network.
struct NetworkShape {
  int in_channels = raster::kStackDepth;
  int input_size = raster::kRasterSize;
  std::vector<ConvSpec> convs = {{32, 8, 4}, {64, 4, 2}, {64, 3, 1}};
  int hidden = 512;
  int atoms = 51;
  int actions = 8;
  double v_min = -10.0;
  double v_max = 10.0;

  /// Spatial size after conv layer `i` (i = -1 is the input).
  int spatial_after(int i) const;
  int flatten_size() const;
  double delta_z() const { return (v_max - v_min) / (atoms - 1); }
  double support(int i) const { return v_min + i * delta_z(); }
  void validate() const;
  bool operator==(const NetworkShape&) const;
};

/// Noise handling for the noisy layers: `sample` draws fresh factorized
/// noise, `zero` uses the means only, `frozen` reuses the stored noise.
enum class NoiseMode { sample, zero, frozen };

/// Batch normalization source: batch statistics (training) or running ones.
enum class NormMode { batch, running };

/// Named parameter tensors. Vectors are stored as n x 1 matrices.
template <typename T>
class ParameterSet {
 public:
  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols, bool trainable);

  std::size_t size() const { return values_.size(); }
  Matrix<T>& operator[](std::size_t i) { return values_[i]; }
  const Matrix<T>& operator[](std::size_t i) const { return values_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  bool trainable(std::size_t i) const { return trainable_[i]; }
  std::size_t index_of(const std::string& name) const;
  std::size_t element_count() const;

  /// Zero-filled tensors of identical shapes.
  std::vector<Matrix<T>> zeros_like() const;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix<T>> values_;
  std::vector<bool> trainable_;
};

/// Factorized-noise linear layer: y = (mu_w + sigma_w * eps_w) x + mu_b + sigma_b * eps_b.
template <typename T>
struct NoisyLayerParams {
  Matrix<T> mu_w;
  Matrix<T> sigma_w;
  Vector<T> mu_b;
  Vector<T> sigma_b;
  Matrix<T> noise_eps_w;
  Vector<T> noise_eps_b;
};

/// Applies one noisy layer to a single input vector.
template <typename T>
Vector<T> noisy_forward(const Vector<T>& x, const NoisyLayerParams<T>& p);

/// Intermediate values kept for backpropagation.
template <typename T>
struct ForwardCache {
  int batch = 0;
  NormMode norm = NormMode::running;
  NoiseMode noise = NoiseMode::zero;     // zero or frozen after sampling
  std::vector<Matrix<T>> conv_cols;      // im2col input of each conv
  std::vector<Matrix<T>> conv_xhat;      // normalized pre-activation
  std::vector<Vector<T>> conv_inv_std;   // per channel
  std::vector<Vector<T>> conv_mean;      // per channel (batch mode)
  std::vector<Vector<T>> conv_var;       // per channel, biased (batch mode)
  std::vector<Matrix<T>> conv_out;       // post-ReLU output
  Matrix<T> flat;                        // flatten_size x B
  Matrix<T> value_hidden;                // post-ReLU
  Matrix<T> adv_hidden;                  // post-ReLU
  Matrix<T> value_logits;                // atoms x B
  Matrix<T> adv_logits;                  // (actions*atoms) x B
  Matrix<T> centered_advantage;          // A - mean_a A, (actions*atoms) x B
};

/// Per-action categorical distributions for a batch.
template <typename T>
struct BatchOutput {
  int batch = 0;
  int actions = 0;
  int atoms = 0;
  Matrix<T> logits;  // (actions*atoms) x B, row = a * atoms + i
  Matrix<T> probs;   // softmax over atoms per (a, b)

  T prob(int b, int a, int i) const { return probs(a * atoms + i, b); }
};

/// Distribution for one state: probs(i, a).
template <typename T>
struct ValueDistribution {
  std::vector<double> support;
  Matrix<T> probs;  // atoms x actions
};

template <typename T>
ValueDistribution<T> distribution_at(const BatchOutput<T>& out, int b, const NetworkShape& shape);

/// Expected value per action.
template <typename T>
std::vector<double> q_values(const ValueDistribution<T>& dist);

/// Q(b, a) for every row of a batch: actions x B.
template <typename T>
Matrix<T> batch_q_values(const BatchOutput<T>& out, const NetworkShape& shape);

/// argmax with ties to the lowest index.
int argmax_action(std::span<const double> q);

/// Dueling, noisy, categorical network over stacked rasters.
template <typename T>
class RainbowNetwork {
 public:
  RainbowNetwork() = default;
  RainbowNetwork(NetworkShape shape, std::uint64_t seed);

  const NetworkShape& shape() const { return shape_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  void resample_noise(Rng& rng);
  void zero_noise();

  /// Input layout: channels x (B * H * W), column = b * H * W + y * W + x.
  BatchOutput<T> forward(const Matrix<T>& input, int batch, NoiseMode noise, NormMode norm,
                         Rng* rng = nullptr, ForwardCache<T>* cache = nullptr);

  /// Forward pass that leaves the stored noise alone; `noise` must be zero or frozen.
  BatchOutput<T> evaluate(const Matrix<T>& input, int batch, NoiseMode noise, NormMode norm,
                          ForwardCache<T>* cache = nullptr) const;

  /// Gradients of a scalar loss given dLoss/dlogits, from a batch-mode cache.
  std::vector<Matrix<T>> backward(const ForwardCache<T>& cache, const Matrix<T>& dlogits) const;

  /// Moves running batch-norm statistics toward the batch statistics in `cache`.
  void commit_running_stats(const ForwardCache<T>& cache, T momentum = T(0.1));

  /// Noisy layer view (index 0..3: value hidden, value out, adv hidden, adv out).
  NoisyLayerParams<T> noisy_layer(int which) const;

  /// Noise tensors are excluded from checkpoints and copies of parameters.
  const std::vector<Matrix<T>>& noise() const { return noise_; }

  template <typename U>
  RainbowNetwork<U> cast() const;

  static constexpr T kBnEps = T(1e-5);

 private:
  template <typename U>
  friend class RainbowNetwork;

  struct ConvIdx {
    std::size_t weight, gamma, beta, running_mean, running_var;
  };
  struct NoisyIdx {
    std::size_t mu_w, sigma_w, mu_b, sigma_b;
    std::size_t eps_w, eps_b;  // into noise_
  };

  Matrix<T> noisy_apply(const NoisyIdx& l, const Matrix<T>& x, NoiseMode mode) const;
  void add_noisy(const std::string& prefix, int in, int out, Rng& rng, NoisyIdx& idx);

  NetworkShape shape_;
  ParameterSet<T> params_;
  std::vector<Matrix<T>> noise_;
  std::vector<ConvIdx> convs_;
  NoisyIdx value_hidden_{}, value_out_{}, adv_hidden_{}, adv_out_{};
};

// Kernels shared by the optimized path and the serial references.

/// im2col for a valid (unpadded) convolution, OpenMP across samples.
template <typename T>
Matrix<T> im2col(const Matrix<T>& input, int batch, int channels, int size, int kernel, int stride);

/// Adjoint of im2col.
template <typename T>
Matrix<T> col2im(const Matrix<T>& cols, int batch, int channels, int size, int kernel, int stride);

/// Direct nested-loop convolution; same layouts as the GEMM path.
template <typename T>
Matrix<T> conv_forward_reference(const Matrix<T>& input, const Matrix<T>& weight, int batch,
                                 int channels, int size, int kernel, int stride);

/// Normalizes a batch of state tensors into the network input layout.
template <typename T>
Matrix<T> states_to_input(std::span<const raster::StateTensor* const> states);

/// Versioned binary checkpoint: magic, version, shape metadata, manifest of
/// (name, rows, cols, count), then little-endian float32 payloads.
inline constexpr char kCheckpointMagic[8] = {'E', 'V', 'A', 'C', 'R', 'B', 'W', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<float> data;
};

struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();  // holds "shape" and counters
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
};

nlohmann::json shape_to_json(const NetworkShape& shape);
NetworkShape shape_from_json(const nlohmann::json& j);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Every parameter of `net` under `prefix` + name.
template <typename T>
void append_entries(Checkpoint& ckpt, const ParameterSet<T>& params, const std::string& prefix = "");

/// Loads entries named `prefix` + name into `params`; throws on missing or misshaped entries.
template <typename T>
void load_entries(const Checkpoint& ckpt, ParameterSet<T>& params, const std::string& prefix = "");

void save_network(const RainbowNetwork<float>& net, const std::filesystem::path& path);
RainbowNetwork<float> load_network(const std::filesystem::path& path);

}  // namespace evac::nn
