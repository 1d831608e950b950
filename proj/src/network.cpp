#include "evac/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace evac::nn {

// ---------------------------------------------------------------- shape

int NetworkShape::spatial_after(int i) const {
  int s = input_size;
  for (int k = 0; k <= i; ++k) {
    const auto& c = convs[static_cast<std::size_t>(k)];
    s = (s - c.kernel) / c.stride + 1;
  }
  return s;
}

int NetworkShape::flatten_size() const {
  const int last = static_cast<int>(convs.size()) - 1;
  const int s = spatial_after(last);
  const int channels = convs.empty() ? in_channels : convs.back().out_channels;
  return channels * s * s;
}

void NetworkShape::validate() const {
  if (in_channels <= 0 || input_size <= 0 || hidden <= 0 || atoms < 2 || actions <= 0) {
    throw std::invalid_argument("network dimensions must be positive (atoms >= 2)");
  }
  if (!(v_min < v_max)) throw std::invalid_argument("v_min must be below v_max");
  int s = input_size;
  for (const auto& c : convs) {
    if (c.kernel <= 0 || c.stride <= 0 || c.out_channels <= 0 || c.kernel > s) {
      throw std::invalid_argument("conv layer does not fit its input");
    }
    s = (s - c.kernel) / c.stride + 1;
  }
}

bool NetworkShape::operator==(const NetworkShape& o) const {
  if (convs.size() != o.convs.size()) return false;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    if (convs[i].out_channels != o.convs[i].out_channels || convs[i].kernel != o.convs[i].kernel ||
        convs[i].stride != o.convs[i].stride) {
      return false;
    }
  }
  return in_channels == o.in_channels && input_size == o.input_size && hidden == o.hidden &&
         atoms == o.atoms && actions == o.actions && v_min == o.v_min && v_max == o.v_max;
}

nlohmann::json shape_to_json(const NetworkShape& s) {
  nlohmann::json convs = nlohmann::json::array();
  for (const auto& c : s.convs) convs.push_back({c.out_channels, c.kernel, c.stride});
  return {{"in_channels", s.in_channels}, {"input_size", s.input_size}, {"convs", convs},
          {"hidden", s.hidden},           {"atoms", s.atoms},           {"actions", s.actions},
          {"v_min", s.v_min},             {"v_max", s.v_max}};
}

NetworkShape shape_from_json(const nlohmann::json& j) {
  NetworkShape s;
  s.in_channels = j.value("in_channels", s.in_channels);
  s.input_size = j.value("input_size", s.input_size);
  if (j.contains("convs")) {
    s.convs.clear();
    for (const auto& c : j.at("convs")) {
      s.convs.push_back({c.at(0).get<int>(), c.at(1).get<int>(), c.at(2).get<int>()});
    }
  }
  s.hidden = j.value("hidden", s.hidden);
  s.atoms = j.value("atoms", s.atoms);
  s.actions = j.value("actions", s.actions);
  s.v_min = j.value("v_min", s.v_min);
  s.v_max = j.value("v_max", s.v_max);
  s.validate();
  return s;
}

// ---------------------------------------------------------------- parameters

template <typename T>
std::size_t ParameterSet<T>::add(std::string name, Eigen::Index rows, Eigen::Index cols,
                                 bool trainable) {
  names_.push_back(std::move(name));
  values_.push_back(Matrix<T>::Zero(rows, cols));
  trainable_.push_back(trainable);
  return values_.size() - 1;
}

template <typename T>
std::size_t ParameterSet<T>::index_of(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw std::out_of_range("no parameter named " + name);
  return static_cast<std::size_t>(it - names_.begin());
}

template <typename T>
std::size_t ParameterSet<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

template <typename T>
std::vector<Matrix<T>> ParameterSet<T>::zeros_like() const {
  std::vector<Matrix<T>> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.push_back(Matrix<T>::Zero(v.rows(), v.cols()));
  return out;
}

template <typename T>
Vector<T> noisy_forward(const Vector<T>& x, const NoisyLayerParams<T>& p) {
  if (p.mu_w.cols() != x.size() || p.sigma_w.rows() != p.mu_w.rows() ||
      p.sigma_w.cols() != p.mu_w.cols() || p.noise_eps_w.rows() != p.mu_w.rows() ||
      p.noise_eps_w.cols() != p.mu_w.cols() || p.mu_b.size() != p.mu_w.rows() ||
      p.sigma_b.size() != p.mu_b.size() || p.noise_eps_b.size() != p.mu_b.size()) {
    throw std::invalid_argument("noisy layer shape mismatch");
  }
  return (p.mu_w + p.sigma_w.cwiseProduct(p.noise_eps_w)) * x + p.mu_b +
         p.sigma_b.cwiseProduct(p.noise_eps_b);
}

// ---------------------------------------------------------------- kernels

template <typename T>
Matrix<T> im2col(const Matrix<T>& input, int batch, int channels, int size, int kernel, int stride) {
  const int out = (size - kernel) / stride + 1;
  const Eigen::Index rows = static_cast<Eigen::Index>(channels) * kernel * kernel;
  const Eigen::Index per_sample = static_cast<Eigen::Index>(out) * out;
  const Eigen::Index in_per_sample = static_cast<Eigen::Index>(size) * size;
  Matrix<T> cols(rows, per_sample * batch);
  const T* src = input.data();
  const Eigen::Index in_rows = input.rows();
  T* dst = cols.data();
#pragma omp parallel for schedule(static)
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < out; ++oy) {
      for (int ox = 0; ox < out; ++ox) {
        const Eigen::Index col = b * per_sample + oy * out + ox;
        T* column = dst + col * rows;
        Eigen::Index r = 0;
        for (int c = 0; c < channels; ++c) {
          for (int ky = 0; ky < kernel; ++ky) {
            const Eigen::Index base = b * in_per_sample + (oy * stride + ky) * size + ox * stride;
            for (int kx = 0; kx < kernel; ++kx) {
              column[r++] = src[c + (base + kx) * in_rows];
            }
          }
        }
      }
    }
  }
  return cols;
}

template <typename T>
Matrix<T> col2im(const Matrix<T>& cols, int batch, int channels, int size, int kernel, int stride) {
  const int out = (size - kernel) / stride + 1;
  const Eigen::Index rows = cols.rows();
  const Eigen::Index per_sample = static_cast<Eigen::Index>(out) * out;
  const Eigen::Index in_per_sample = static_cast<Eigen::Index>(size) * size;
  Matrix<T> image = Matrix<T>::Zero(channels, in_per_sample * batch);
  T* dst = image.data();
  const T* src = cols.data();
#pragma omp parallel for schedule(static)
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < out; ++oy) {
      for (int ox = 0; ox < out; ++ox) {
        const Eigen::Index col = b * per_sample + oy * out + ox;
        const T* column = src + col * rows;
        Eigen::Index r = 0;
        for (int c = 0; c < channels; ++c) {
          for (int ky = 0; ky < kernel; ++ky) {
            const Eigen::Index base = b * in_per_sample + (oy * stride + ky) * size + ox * stride;
            for (int kx = 0; kx < kernel; ++kx) {
              dst[c + (base + kx) * channels] += column[r++];
            }
          }
        }
      }
    }
  }
  return image;
}

template <typename T>
Matrix<T> conv_forward_reference(const Matrix<T>& input, const Matrix<T>& weight, int batch,
                                 int channels, int size, int kernel, int stride) {
  const int out = (size - kernel) / stride + 1;
  const auto out_channels = static_cast<int>(weight.rows());
  Matrix<T> result = Matrix<T>::Zero(out_channels, static_cast<Eigen::Index>(batch) * out * out);
  for (int b = 0; b < batch; ++b) {
    for (int co = 0; co < out_channels; ++co) {
      for (int oy = 0; oy < out; ++oy) {
        for (int ox = 0; ox < out; ++ox) {
          T acc = T(0);
          for (int c = 0; c < channels; ++c) {
            for (int ky = 0; ky < kernel; ++ky) {
              for (int kx = 0; kx < kernel; ++kx) {
                const int y = oy * stride + ky;
                const int x = ox * stride + kx;
                acc += weight(co, (c * kernel + ky) * kernel + kx) *
                       input(c, static_cast<Eigen::Index>(b) * size * size + y * size + x);
              }
            }
          }
          result(co, static_cast<Eigen::Index>(b) * out * out + oy * out + ox) = acc;
        }
      }
    }
  }
  return result;
}

template <typename T>
Matrix<T> states_to_input(std::span<const raster::StateTensor* const> states) {
  constexpr int kPixels = raster::kRasterSize * raster::kRasterSize;
  const auto batch = static_cast<Eigen::Index>(states.size());
  Matrix<T> input(raster::kStackDepth, batch * kPixels);
  const T scale = T(1) / T(255);
#pragma omp parallel for schedule(static)
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int c = 0; c < raster::kStackDepth; ++c) {
      const auto& px = states[static_cast<std::size_t>(b)]->frame(c).pixels;
      for (int s = 0; s < kPixels; ++s) input(c, b * kPixels + s) = T(px[static_cast<std::size_t>(s)]) * scale;
    }
  }
  return input;
}

// ---------------------------------------------------------------- network

namespace {

template <typename T>
void fill_uniform(Matrix<T>& m, T bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-static_cast<double>(bound), static_cast<double>(bound));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = T(u(rng));
}

double scaled_noise(std::normal_distribution<double>& n, Rng& rng) {
  const double x = n(rng);
  return std::copysign(std::sqrt(std::fabs(x)), x);
}

template <typename T>
void relu_inplace(Matrix<T>& m) {
  m = m.cwiseMax(T(0));
}

}  // namespace

template <typename T>
void RainbowNetwork<T>::add_noisy(const std::string& prefix, int in, int out, Rng& rng,
                                  NoisyIdx& idx) {
  idx.mu_w = params_.add(prefix + ".mu_w", out, in, true);
  idx.sigma_w = params_.add(prefix + ".sigma_w", out, in, true);
  idx.mu_b = params_.add(prefix + ".mu_b", out, 1, true);
  idx.sigma_b = params_.add(prefix + ".sigma_b", out, 1, true);
  const T bound = T(1) / std::sqrt(T(in));
  fill_uniform(params_[idx.mu_w], bound, rng);
  fill_uniform(params_[idx.mu_b], bound, rng);
  params_[idx.sigma_w].setConstant(T(0.5) / std::sqrt(T(in)));
  params_[idx.sigma_b].setConstant(T(0.5) / std::sqrt(T(in)));
  idx.eps_w = noise_.size();
  noise_.push_back(Matrix<T>::Zero(out, in));
  idx.eps_b = noise_.size();
  noise_.push_back(Matrix<T>::Zero(out, 1));
}

template <typename T>
RainbowNetwork<T>::RainbowNetwork(NetworkShape shape, std::uint64_t seed) : shape_(std::move(shape)) {
  shape_.validate();
  Rng rng(seed);
  int channels = shape_.in_channels;
  for (std::size_t i = 0; i < shape_.convs.size(); ++i) {
    const auto& c = shape_.convs[i];
    const std::string p = "conv" + std::to_string(i);
    ConvIdx idx{};
    const int fan_in = channels * c.kernel * c.kernel;
    idx.weight = params_.add(p + ".weight", c.out_channels, fan_in, true);
    fill_uniform(params_[idx.weight], T(1) / std::sqrt(T(fan_in)), rng);
    idx.gamma = params_.add(p + ".bn.gamma", c.out_channels, 1, true);
    params_[idx.gamma].setOnes();
    idx.beta = params_.add(p + ".bn.beta", c.out_channels, 1, true);
    idx.running_mean = params_.add(p + ".bn.running_mean", c.out_channels, 1, false);
    idx.running_var = params_.add(p + ".bn.running_var", c.out_channels, 1, false);
    params_[idx.running_var].setOnes();
    convs_.push_back(idx);
    channels = c.out_channels;
  }
  const int flat = shape_.flatten_size();
  add_noisy("value.hidden", flat, shape_.hidden, rng, value_hidden_);
  add_noisy("value.out", shape_.hidden, shape_.atoms, rng, value_out_);
  add_noisy("advantage.hidden", flat, shape_.hidden, rng, adv_hidden_);
  add_noisy("advantage.out", shape_.hidden, shape_.atoms * shape_.actions, rng, adv_out_);
}

template <typename T>
void RainbowNetwork<T>::resample_noise(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const NoisyIdx* l : {&value_hidden_, &value_out_, &adv_hidden_, &adv_out_}) {
    Matrix<T>& eps_w = noise_[l->eps_w];
    Vector<T> eps_in(eps_w.cols());
    Vector<T> eps_out(eps_w.rows());
    for (Eigen::Index i = 0; i < eps_in.size(); ++i) eps_in[i] = T(scaled_noise(normal, rng));
    for (Eigen::Index i = 0; i < eps_out.size(); ++i) eps_out[i] = T(scaled_noise(normal, rng));
    eps_w.noalias() = eps_out * eps_in.transpose();
    noise_[l->eps_b] = eps_out;
  }
}

template <typename T>
void RainbowNetwork<T>::zero_noise() {
  for (auto& n : noise_) n.setZero();
}

template <typename T>
NoisyLayerParams<T> RainbowNetwork<T>::noisy_layer(int which) const {
  const NoisyIdx* all[] = {&value_hidden_, &value_out_, &adv_hidden_, &adv_out_};
  const NoisyIdx& l = *all[which];
  return {params_[l.mu_w], params_[l.sigma_w], params_[l.mu_b], params_[l.sigma_b],
          noise_[l.eps_w], noise_[l.eps_b]};
}

template <typename T>
Matrix<T> RainbowNetwork<T>::noisy_apply(const NoisyIdx& l, const Matrix<T>& x, NoiseMode mode) const {
  Matrix<T> y;
  if (mode == NoiseMode::zero) {
    y.noalias() = params_[l.mu_w] * x;
    y.colwise() += Vector<T>(params_[l.mu_b]);
  } else {
    const Matrix<T> w = params_[l.mu_w] + params_[l.sigma_w].cwiseProduct(noise_[l.eps_w]);
    y.noalias() = w * x;
    y.colwise() += Vector<T>(params_[l.mu_b] + params_[l.sigma_b].cwiseProduct(noise_[l.eps_b]));
  }
  return y;
}

template <typename T>
BatchOutput<T> RainbowNetwork<T>::forward(const Matrix<T>& input, int batch, NoiseMode noise,
                                          NormMode norm, Rng* rng, ForwardCache<T>* cache) {
  if (noise == NoiseMode::sample) {
    if (!rng) throw std::invalid_argument("sampled noise needs an rng");
    resample_noise(*rng);
    noise = NoiseMode::frozen;
  }
  return evaluate(input, batch, noise, norm, cache);
}

template <typename T>
BatchOutput<T> RainbowNetwork<T>::evaluate(const Matrix<T>& input, int batch, NoiseMode noise,
                                           NormMode norm, ForwardCache<T>* cache) const {
  if (noise == NoiseMode::sample) throw std::logic_error("evaluate cannot sample noise");
  const Eigen::Index in_cols = static_cast<Eigen::Index>(batch) * shape_.input_size * shape_.input_size;
  if (input.rows() != shape_.in_channels || input.cols() != in_cols) {
    throw std::invalid_argument("network input has the wrong shape");
  }
  if (cache) {
    *cache = ForwardCache<T>{};
    cache->batch = batch;
    cache->norm = norm;
    cache->noise = noise;
  }

  Matrix<T> x = input;
  int channels = shape_.in_channels;
  int size = shape_.input_size;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const auto& spec = shape_.convs[i];
    const auto& idx = convs_[i];
    Matrix<T> cols = im2col(x, batch, channels, size, spec.kernel, spec.stride);
    Matrix<T> z;
    z.noalias() = params_[idx.weight] * cols;

    Vector<T> mean;
    Vector<T> var;
    if (norm == NormMode::batch) {
      mean = z.rowwise().mean();
      var = (z.colwise() - mean).array().square().rowwise().mean();
    } else {
      mean = params_[idx.running_mean];
      var = params_[idx.running_var];
    }
    const Vector<T> inv_std = (var.array() + kBnEps).rsqrt();
    z.colwise() -= mean;
    z = inv_std.asDiagonal() * z;  // xhat
    Matrix<T> y = Vector<T>(params_[idx.gamma]).asDiagonal() * z;
    y.colwise() += Vector<T>(params_[idx.beta]);
    relu_inplace(y);

    if (cache) {
      cache->conv_cols.push_back(std::move(cols));
      cache->conv_xhat.push_back(std::move(z));
      cache->conv_inv_std.push_back(inv_std);
      cache->conv_mean.push_back(mean);
      cache->conv_var.push_back(var);
      cache->conv_out.push_back(y);
    }
    x = std::move(y);
    channels = spec.out_channels;
    size = (size - spec.kernel) / spec.stride + 1;
  }

  // channels x (B * S) -> (channels * S) x B
  const Eigen::Index spatial = static_cast<Eigen::Index>(size) * size;
  Matrix<T> flat(channels * spatial, batch);
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      for (Eigen::Index s = 0; s < spatial; ++s) flat(c * spatial + s, b) = x(c, b * spatial + s);
    }
  }

  Matrix<T> vh = noisy_apply(value_hidden_, flat, noise);
  relu_inplace(vh);
  Matrix<T> v = noisy_apply(value_out_, vh, noise);
  Matrix<T> ah = noisy_apply(adv_hidden_, flat, noise);
  relu_inplace(ah);
  Matrix<T> a = noisy_apply(adv_out_, ah, noise);

  const int atoms = shape_.atoms;
  const int actions = shape_.actions;
  Matrix<T> centered = a;
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < atoms; ++i) {
      T mean_a = T(0);
      for (int k = 0; k < actions; ++k) mean_a += a(k * atoms + i, b);
      mean_a /= T(actions);
      for (int k = 0; k < actions; ++k) centered(k * atoms + i, b) -= mean_a;
    }
  }

  BatchOutput<T> out;
  out.batch = batch;
  out.actions = actions;
  out.atoms = atoms;
  out.logits.resize(static_cast<Eigen::Index>(actions) * atoms, batch);
  out.probs.resize(out.logits.rows(), batch);
  for (int b = 0; b < batch; ++b) {
    for (int k = 0; k < actions; ++k) {
      T max_logit = -std::numeric_limits<T>::infinity();
      for (int i = 0; i < atoms; ++i) {
        const T l = v(i, b) + centered(k * atoms + i, b);
        out.logits(k * atoms + i, b) = l;
        max_logit = std::max(max_logit, l);
      }
      T total = T(0);
      for (int i = 0; i < atoms; ++i) {
        const T e = std::exp(out.logits(k * atoms + i, b) - max_logit);
        out.probs(k * atoms + i, b) = e;
        total += e;
      }
      for (int i = 0; i < atoms; ++i) out.probs(k * atoms + i, b) /= total;
    }
  }
  if (!out.logits.allFinite()) {
    std::ostringstream msg;
    msg << "non-finite network output (flat finite=" << flat.allFinite()
        << ", value finite=" << v.allFinite() << ", advantage finite=" << a.allFinite() << ")";
    throw std::runtime_error(msg.str());
  }

  if (cache) {
    cache->flat = std::move(flat);
    cache->value_hidden = std::move(vh);
    cache->adv_hidden = std::move(ah);
    cache->value_logits = std::move(v);
    cache->adv_logits = std::move(a);
    cache->centered_advantage = std::move(centered);
  }
  return out;
}

template <typename T>
std::vector<Matrix<T>> RainbowNetwork<T>::backward(const ForwardCache<T>& cache,
                                                   const Matrix<T>& dlogits) const {
  if (cache.norm != NormMode::batch) throw std::logic_error("backward needs a batch-norm cache");
  const int batch = cache.batch;
  const int atoms = shape_.atoms;
  const int actions = shape_.actions;
  std::vector<Matrix<T>> grads = params_.zeros_like();

  Matrix<T> dv = Matrix<T>::Zero(atoms, batch);
  Matrix<T> da = dlogits;
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < atoms; ++i) {
      T sum = T(0);
      for (int k = 0; k < actions; ++k) sum += dlogits(k * atoms + i, b);
      dv(i, b) = sum;
      const T mean = sum / T(actions);
      for (int k = 0; k < actions; ++k) da(k * atoms + i, b) -= mean;
    }
  }

  const bool noisy = cache.noise != NoiseMode::zero;
  // Returns dL/dx and accumulates parameter gradients for one noisy layer.
  auto noisy_back = [&](const NoisyIdx& l, const Matrix<T>& x, const Matrix<T>& dy) {
    const Matrix<T> dw = dy * x.transpose();
    const Vector<T> db = dy.rowwise().sum();
    grads[l.mu_w] += dw;
    grads[l.mu_b] += db;
    Matrix<T> dx;
    if (noisy) {
      grads[l.sigma_w] += dw.cwiseProduct(noise_[l.eps_w]);
      grads[l.sigma_b] += db.cwiseProduct(Vector<T>(noise_[l.eps_b]));
      const Matrix<T> w = params_[l.mu_w] + params_[l.sigma_w].cwiseProduct(noise_[l.eps_w]);
      dx.noalias() = w.transpose() * dy;
    } else {
      dx.noalias() = params_[l.mu_w].transpose() * dy;
    }
    return dx;
  };

  Matrix<T> dvh = noisy_back(value_out_, cache.value_hidden, dv);
  dvh = dvh.cwiseProduct((cache.value_hidden.array() > T(0)).template cast<T>().matrix());
  Matrix<T> dflat = noisy_back(value_hidden_, cache.flat, dvh);

  Matrix<T> dah = noisy_back(adv_out_, cache.adv_hidden, da);
  dah = dah.cwiseProduct((cache.adv_hidden.array() > T(0)).template cast<T>().matrix());
  dflat += noisy_back(adv_hidden_, cache.flat, dah);

  if (convs_.empty()) return grads;

  int channels = shape_.convs.back().out_channels;
  int size = shape_.spatial_after(static_cast<int>(convs_.size()) - 1);
  const Eigen::Index spatial = static_cast<Eigen::Index>(size) * size;
  Matrix<T> dx(channels, spatial * batch);
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      for (Eigen::Index s = 0; s < spatial; ++s) dx(c, b * spatial + s) = dflat(c * spatial + s, b);
    }
  }

  for (int li = static_cast<int>(convs_.size()) - 1; li >= 0; --li) {
    const auto l = static_cast<std::size_t>(li);
    const auto& idx = convs_[l];
    const auto& spec = shape_.convs[l];
    const Matrix<T>& xhat = cache.conv_xhat[l];
    const Matrix<T> dy = dx.cwiseProduct((cache.conv_out[l].array() > T(0)).template cast<T>().matrix());

    grads[idx.gamma] += dy.cwiseProduct(xhat).rowwise().sum();
    grads[idx.beta] += dy.rowwise().sum();

    const Vector<T> gamma = params_[idx.gamma];
    const Matrix<T> dxhat = gamma.asDiagonal() * dy;
    const T n = T(dy.cols());
    const Vector<T> sum_dxhat = dxhat.rowwise().sum();
    const Vector<T> sum_dxhat_xhat = dxhat.cwiseProduct(xhat).rowwise().sum();
    Matrix<T> dz = dxhat * n;
    dz.colwise() -= sum_dxhat;
    dz -= sum_dxhat_xhat.asDiagonal() * xhat;
    dz = (cache.conv_inv_std[l] / n).asDiagonal() * dz;

    grads[idx.weight].noalias() += dz * cache.conv_cols[l].transpose();
    if (li > 0) {
      const Matrix<T> dcols = params_[idx.weight].transpose() * dz;
      const int in_channels = shape_.convs[l - 1].out_channels;
      const int in_size = shape_.spatial_after(li - 1);
      dx = col2im(dcols, batch, in_channels, in_size, spec.kernel, spec.stride);
    }
  }
  return grads;
}

template <typename T>
void RainbowNetwork<T>::commit_running_stats(const ForwardCache<T>& cache, T momentum) {
  if (cache.norm != NormMode::batch) return;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const auto& idx = convs_[i];
    const T n = T(cache.conv_xhat[i].cols());
    const T unbiased = n > T(1) ? n / (n - T(1)) : T(1);
    params_[idx.running_mean] = (T(1) - momentum) * params_[idx.running_mean] + momentum * cache.conv_mean[i];
    params_[idx.running_var] =
        (T(1) - momentum) * params_[idx.running_var] + (momentum * unbiased) * cache.conv_var[i];
  }
}

template <typename T>
template <typename U>
RainbowNetwork<U> RainbowNetwork<T>::cast() const {
  RainbowNetwork<U> out;
  out.shape_ = shape_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto k = out.params_.add(params_.name(i), params_[i].rows(), params_[i].cols(), params_.trainable(i));
    out.params_[k] = params_[i].template cast<U>();
  }
  for (const auto& n : noise_) out.noise_.push_back(n.template cast<U>());
  for (const auto& c : convs_) {
    out.convs_.push_back({c.weight, c.gamma, c.beta, c.running_mean, c.running_var});
  }
  auto copy_idx = [](const NoisyIdx& a) {
    return typename RainbowNetwork<U>::NoisyIdx{a.mu_w, a.sigma_w, a.mu_b, a.sigma_b, a.eps_w, a.eps_b};
  };
  out.value_hidden_ = copy_idx(value_hidden_);
  out.value_out_ = copy_idx(value_out_);
  out.adv_hidden_ = copy_idx(adv_hidden_);
  out.adv_out_ = copy_idx(adv_out_);
  return out;
}

// ---------------------------------------------------------------- outputs

template <typename T>
ValueDistribution<T> distribution_at(const BatchOutput<T>& out, int b, const NetworkShape& shape) {
  ValueDistribution<T> d;
  for (int i = 0; i < shape.atoms; ++i) d.support.push_back(shape.support(i));
  d.probs.resize(shape.atoms, shape.actions);
  for (int a = 0; a < shape.actions; ++a) {
    for (int i = 0; i < shape.atoms; ++i) d.probs(i, a) = out.prob(b, a, i);
  }
  return d;
}

template <typename T>
std::vector<double> q_values(const ValueDistribution<T>& dist) {
  std::vector<double> q(static_cast<std::size_t>(dist.probs.cols()), 0.0);
  for (Eigen::Index a = 0; a < dist.probs.cols(); ++a) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < dist.probs.rows(); ++i) {
      acc += dist.support[static_cast<std::size_t>(i)] * static_cast<double>(dist.probs(i, a));
    }
    q[static_cast<std::size_t>(a)] = acc;
  }
  return q;
}

template <typename T>
Matrix<T> batch_q_values(const BatchOutput<T>& out, const NetworkShape& shape) {
  Matrix<T> q(out.actions, out.batch);
  for (int b = 0; b < out.batch; ++b) {
    for (int a = 0; a < out.actions; ++a) {
      T acc = T(0);
      for (int i = 0; i < out.atoms; ++i) acc += T(shape.support(i)) * out.prob(b, a, i);
      q(a, b) = acc;
    }
  }
  return q;
}

int argmax_action(std::span<const double> q) {
  int best = 0;
  for (std::size_t a = 1; a < q.size(); ++a) {
    if (q[a] > q[static_cast<std::size_t>(best)]) best = static_cast<int>(a);
  }
  return best;
}

// ---------------------------------------------------------------- checkpoint

namespace {

template <typename V>
void put(std::ostream& out, V value) {
  static_assert(std::is_trivially_copyable_v<V>);
  unsigned char bytes[sizeof(V)];
  std::memcpy(bytes, &value, sizeof(V));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(V));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(V));
}

template <typename V>
V get(std::istream& in) {
  unsigned char bytes[sizeof(V)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(V));
  if (!in) throw std::runtime_error("truncated checkpoint");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(V));
  V value;
  std::memcpy(&value, bytes, sizeof(V));
  return value;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  if (n > (1u << 26)) throw std::runtime_error("corrupt checkpoint string length");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw std::runtime_error("truncated checkpoint");
  return s;
}

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put_string(out, ckpt.metadata.dump());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.entries.size()));
    for (const auto& e : ckpt.entries) {
      put_string(out, e.name);
      put<std::uint32_t>(out, 2);
      put<std::int64_t>(out, e.rows);
      put<std::int64_t>(out, e.cols);
      put<std::uint64_t>(out, e.data.size());
    }
    for (const auto& e : ckpt.entries) {
      for (float f : e.data) put<float>(out, f);
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a network checkpoint: " + path.string());
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.metadata = nlohmann::json::parse(get_string(in));
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = get_string(in);
    const auto dims = get<std::uint32_t>(in);
    if (dims != 2) throw std::runtime_error("unsupported tensor rank in checkpoint");
    e.rows = get<std::int64_t>(in);
    e.cols = get<std::int64_t>(in);
    const auto n = get<std::uint64_t>(in);
    if (e.rows < 0 || e.cols < 0 || n != static_cast<std::uint64_t>(e.rows * e.cols)) {
      throw std::runtime_error("inconsistent manifest entry " + e.name);
    }
    e.data.resize(n);
    ckpt.entries.push_back(std::move(e));
  }
  for (auto& e : ckpt.entries) {
    for (auto& f : e.data) f = get<float>(in);
  }
  return ckpt;
}

template <typename T>
void append_entries(Checkpoint& ckpt, const ParameterSet<T>& params, const std::string& prefix) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    CheckpointEntry e;
    e.name = prefix + params.name(i);
    e.rows = params[i].rows();
    e.cols = params[i].cols();
    e.data.resize(static_cast<std::size_t>(params[i].size()));
    for (Eigen::Index k = 0; k < params[i].size(); ++k) e.data[static_cast<std::size_t>(k)] = static_cast<float>(params[i].data()[k]);
    ckpt.entries.push_back(std::move(e));
  }
}

template <typename T>
void load_entries(const Checkpoint& ckpt, ParameterSet<T>& params, const std::string& prefix) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const CheckpointEntry* e = ckpt.find(prefix + params.name(i));
    if (!e) throw std::runtime_error("checkpoint is missing " + prefix + params.name(i));
    if (e->rows != params[i].rows() || e->cols != params[i].cols()) {
      throw std::runtime_error("checkpoint shape mismatch for " + e->name);
    }
    for (Eigen::Index k = 0; k < params[i].size(); ++k) params[i].data()[k] = T(e->data[static_cast<std::size_t>(k)]);
  }
}

void save_network(const RainbowNetwork<float>& net, const std::filesystem::path& path) {
  Checkpoint ckpt;
  ckpt.metadata["shape"] = shape_to_json(net.shape());
  append_entries(ckpt, net.params());
  write_checkpoint(ckpt, path);
}

RainbowNetwork<float> load_network(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (!ckpt.metadata.contains("shape")) throw std::runtime_error("checkpoint has no network shape");
  RainbowNetwork<float> net(shape_from_json(ckpt.metadata.at("shape")), 0);
  load_entries(ckpt, net.params());
  return net;
}

// ---------------------------------------------------------------- instantiations

template class ParameterSet<float>;
template class ParameterSet<double>;
template class RainbowNetwork<float>;
template class RainbowNetwork<double>;
template RainbowNetwork<double> RainbowNetwork<float>::cast<double>() const;
template RainbowNetwork<float> RainbowNetwork<double>::cast<float>() const;
template Vector<float> noisy_forward(const Vector<float>&, const NoisyLayerParams<float>&);
template Vector<double> noisy_forward(const Vector<double>&, const NoisyLayerParams<double>&);
template Matrix<float> im2col(const Matrix<float>&, int, int, int, int, int);
template Matrix<double> im2col(const Matrix<double>&, int, int, int, int, int);
template Matrix<float> col2im(const Matrix<float>&, int, int, int, int, int);
template Matrix<double> col2im(const Matrix<double>&, int, int, int, int, int);
template Matrix<float> conv_forward_reference(const Matrix<float>&, const Matrix<float>&, int, int, int, int, int);
template Matrix<double> conv_forward_reference(const Matrix<double>&, const Matrix<double>&, int, int, int, int, int);
template Matrix<float> states_to_input<float>(std::span<const raster::StateTensor* const>);
template Matrix<double> states_to_input<double>(std::span<const raster::StateTensor* const>);
template ValueDistribution<float> distribution_at(const BatchOutput<float>&, int, const NetworkShape&);
template ValueDistribution<double> distribution_at(const BatchOutput<double>&, int, const NetworkShape&);
template std::vector<double> q_values(const ValueDistribution<float>&);
template std::vector<double> q_values(const ValueDistribution<double>&);
template Matrix<float> batch_q_values(const BatchOutput<float>&, const NetworkShape&);
template Matrix<double> batch_q_values(const BatchOutput<double>&, const NetworkShape&);
template void append_entries(Checkpoint&, const ParameterSet<float>&, const std::string&);
template void append_entries(Checkpoint&, const ParameterSet<double>&, const std::string&);
template void load_entries(Checkpoint const&, ParameterSet<float>&, const std::string&);
template void load_entries(Checkpoint const&, ParameterSet<double>&, const std::string&);

}  // namespace evac::nn
