// Per-agent expression classifier over frozen embeddings.
//
//   LayerNorm(D) -> Linear(D->H) -> GELU -> Dropout(p) -> Linear(H->7) -> Softmax
//
// Forward pass, analytic backward pass for label-smoothed cross-entropy and
// the AdamW update are written out by hand. Everything is templated on the
// scalar type: the simulation runs in float, gradient checks run in double.
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fersim/errors.hpp"
#include "fersim/expression.hpp"
#include "fersim/rng.hpp"

namespace fersim {

struct TrainingConfig {
  double learning_rate = 3e-4;
  double weight_decay = 5e-2;
  double label_smoothing = 0.05;
  double dropout = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t hidden = 512;
  double ln_eps = 1e-5;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
    if (!(label_smoothing >= 0 && label_smoothing < 1)) throw ConfigError("label_smoothing must be in [0, 1)");
    if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must be in [0, 1)");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) {
      throw ConfigError("adam betas must be in [0, 1)");
    }
    if (!(adam_eps >= 0)) throw ConfigError("adam_eps must be >= 0");
    if (hidden == 0) throw ConfigError("hidden must be >= 1");
    if (!(ln_eps > 0)) throw ConfigError("ln_eps must be > 0");
  }
};

/// One named tensor inside the flat parameter buffer.
struct TensorSlot {
  const char* name;
  std::size_t offset;
  std::size_t size;
  bool decayed;  // receives decoupled weight decay
};

inline std::array<TensorSlot, 6> adapter_layout(std::size_t dim, std::size_t hidden) {
  const std::size_t c = kExpressionCount;
  std::array<TensorSlot, 6> s{{{"ln_gamma", 0, dim, false},
                               {"ln_beta", 0, dim, false},
                               {"w1", 0, hidden * dim, true},
                               {"b1", 0, hidden, false},
                               {"w2", 0, c * hidden, true},
                               {"b2", 0, c, false}}};
  for (std::size_t i = 1; i < s.size(); ++i) s[i].offset = s[i - 1].offset + s[i - 1].size;
  return s;
}

/// Flat parameter (or gradient, or moment) buffer with typed views.
/// w1 is row-major H x D, w2 is row-major 7 x H.
template <std::floating_point Real>
class AdapterParams {
 public:
  AdapterParams() = default;
  AdapterParams(std::size_t dim, std::size_t hidden)
      : dim_(dim), hidden_(hidden), data_(total_size(dim, hidden), Real(0)) {}

  static std::size_t total_size(std::size_t dim, std::size_t hidden) {
    const auto l = adapter_layout(dim, hidden);
    return l.back().offset + l.back().size;
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t hidden() const noexcept { return hidden_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::array<TensorSlot, 6> layout() const { return adapter_layout(dim_, hidden_); }

  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }

  std::span<Real> ln_gamma() { return slot(0); }
  std::span<Real> ln_beta() { return slot(1); }
  std::span<Real> w1() { return slot(2); }
  std::span<Real> b1() { return slot(3); }
  std::span<Real> w2() { return slot(4); }
  std::span<Real> b2() { return slot(5); }
  std::span<const Real> ln_gamma() const { return slot(0); }
  std::span<const Real> ln_beta() const { return slot(1); }
  std::span<const Real> w1() const { return slot(2); }
  std::span<const Real> b1() const { return slot(3); }
  std::span<const Real> w2() const { return slot(4); }
  std::span<const Real> b2() const { return slot(5); }

  bool operator==(const AdapterParams&) const = default;

 private:
  std::span<Real> slot(std::size_t i) {
    const auto s = layout()[i];
    return std::span<Real>(data_).subspan(s.offset, s.size);
  }
  std::span<const Real> slot(std::size_t i) const {
    const auto s = layout()[i];
    return std::span<const Real>(data_).subspan(s.offset, s.size);
  }

  std::size_t dim_ = 0;
  std::size_t hidden_ = 0;
  std::vector<Real> data_;
};

template <std::floating_point Real>
struct OptimizerState {
  AdapterParams<Real> m;
  AdapterParams<Real> v;
  std::uint64_t step = 0;

  bool operator==(const OptimizerState&) const = default;
};

template <std::floating_point Real>
struct Prediction {
  std::array<Real, kExpressionCount> probs{};
  Expression label = Expression::kNeutral;
  Real confidence = 0;
};

/// Intermediates of one forward pass, reused across calls.
template <std::floating_point Real>
struct ForwardCache {
  std::vector<Real> xhat, ln_out, pre, act, out;
  std::array<Real, kExpressionCount> logits{}, log_probs{}, probs{};
  Real rstd = 0;
  std::span<const Real> mask;  // empty in eval mode
};

namespace detail {

/// Dot product with eight fixed partial sums. The summation order is part
/// of the determinism contract, so it never depends on vectorization.
template <std::floating_point Real>
Real dot(const Real* a, const Real* b, std::size_t n) noexcept {
  Real acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  }
  for (; i < n; ++i) acc[i % 8] += a[i] * b[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
}

template <std::floating_point Real>
void axpy(Real alpha, const Real* x, Real* y, std::size_t n) noexcept {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <std::floating_point Real>
Real gelu(Real x) noexcept {
  return Real(0.5) * x * (Real(1) + std::erf(x * Real(std::numbers::sqrt2 / 2)));
}

// d/dx [x * Phi(x)] = Phi(x) + x * phi(x)
template <std::floating_point Real>
Real gelu_grad(Real x) noexcept {
  const Real cdf = Real(0.5) * (Real(1) + std::erf(x * Real(std::numbers::sqrt2 / 2)));
  const Real pdf = std::exp(Real(-0.5) * x * x) * Real(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

inline double smoothed_target(std::size_t c, std::size_t y, double eps) {
  return (c == y ? 1.0 - eps : 0.0) + eps / static_cast<double>(kExpressionCount);
}

}  // namespace detail

/// Uniform fan-in initialization: weights in [-sqrt(1/fan_in), sqrt(1/fan_in)),
/// biases and LayerNorm shift zero, LayerNorm scale one, optimizer zeroed.
template <std::floating_point Real>
std::pair<AdapterParams<Real>, OptimizerState<Real>> init_params(std::size_t dim, std::size_t hidden,
                                                                 std::uint64_t seed) {
  if (dim == 0 || hidden == 0) throw ConfigError("adapter dimensions must be positive");
  AdapterParams<Real> p(dim, hidden);
  Engine rng(mix_seed({seed, static_cast<std::uint64_t>(Stream::kInit)}));
  for (Real& g : p.ln_gamma()) g = Real(1);
  const double b1 = std::sqrt(1.0 / static_cast<double>(dim));
  for (Real& w : p.w1()) w = static_cast<Real>((2.0 * uniform01(rng) - 1.0) * b1);
  const double b2 = std::sqrt(1.0 / static_cast<double>(hidden));
  for (Real& w : p.w2()) w = static_cast<Real>((2.0 * uniform01(rng) - 1.0) * b2);
  OptimizerState<Real> opt{AdapterParams<Real>(dim, hidden), AdapterParams<Real>(dim, hidden), 0};
  return {std::move(p), std::move(opt)};
}

/// Inverted-dropout multipliers: 0 with probability p, else 1/(1-p).
template <std::floating_point Real, class G>
std::vector<Real> draw_dropout_mask(std::size_t hidden, double p, G& rng) {
  std::vector<Real> mask(hidden, Real(1));
  if (p <= 0) return mask;
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - p));
  for (Real& m : mask) m = uniform01(rng) < p ? Real(0) : keep_scale;
  return mask;
}

/// Runs the stack on x. An empty mask means eval mode (no dropout).
/// Returns the softmax output, which lives in cache.
template <std::floating_point Real>
std::span<const Real> forward(const AdapterParams<Real>& params, std::span<const Real> x,
                              std::span<const Real> dropout_mask, ForwardCache<Real>& cache,
                              double ln_eps = 1e-5) {
  const std::size_t dim = params.dim();
  const std::size_t hidden = params.hidden();
  if (x.size() != dim) throw ContractError("input has wrong dimension");
  if (!dropout_mask.empty() && dropout_mask.size() != hidden) throw ContractError("dropout mask has wrong size");

  double mean = 0;
  for (Real v : x) {
    if (!std::isfinite(v)) throw NumericError("non-finite adapter input");
    mean += v;
  }
  mean /= static_cast<double>(dim);
  double var = 0;
  for (Real v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(dim);
  const double rstd = 1.0 / std::sqrt(var + ln_eps);

  cache.xhat.resize(dim);
  cache.ln_out.resize(dim);
  cache.pre.resize(hidden);
  cache.act.resize(hidden);
  cache.out.resize(hidden);
  cache.rstd = static_cast<Real>(rstd);
  cache.mask = dropout_mask;

  const auto gamma = params.ln_gamma();
  const auto beta = params.ln_beta();
  for (std::size_t d = 0; d < dim; ++d) {
    cache.xhat[d] = static_cast<Real>((x[d] - mean) * rstd);
    cache.ln_out[d] = gamma[d] * cache.xhat[d] + beta[d];
  }

  const auto w1 = params.w1();
  const auto b1 = params.b1();
  for (std::size_t j = 0; j < hidden; ++j) {
    cache.pre[j] = b1[j] + detail::dot(w1.data() + j * dim, cache.ln_out.data(), dim);
    cache.act[j] = detail::gelu(cache.pre[j]);
    cache.out[j] = dropout_mask.empty() ? cache.act[j] : cache.act[j] * dropout_mask[j];
  }

  const auto w2 = params.w2();
  const auto b2 = params.b2();
  Real max_logit = -std::numeric_limits<Real>::infinity();
  for (std::size_t c = 0; c < kExpressionCount; ++c) {
    cache.logits[c] = b2[c] + detail::dot(w2.data() + c * hidden, cache.out.data(), hidden);
    max_logit = std::max(max_logit, cache.logits[c]);
  }
  double denom = 0;
  for (std::size_t c = 0; c < kExpressionCount; ++c) denom += std::exp(double(cache.logits[c] - max_logit));
  const double log_denom = std::log(denom);
  for (std::size_t c = 0; c < kExpressionCount; ++c) {
    const double lp = double(cache.logits[c] - max_logit) - log_denom;
    cache.log_probs[c] = static_cast<Real>(lp);
    cache.probs[c] = static_cast<Real>(std::exp(lp));
  }
  return cache.probs;
}

/// Argmax with lowest-index tie-break; confidence is the max probability.
template <std::floating_point Real>
Prediction<Real> prediction_from_probs(std::span<const Real> probs) {
  if (probs.size() != kExpressionCount) throw ContractError("expected 7 probabilities");
  Prediction<Real> p;
  std::size_t best = 0;
  for (std::size_t c = 0; c < kExpressionCount; ++c) {
    p.probs[c] = probs[c];
    if (probs[c] > probs[best]) best = c;
  }
  p.label = static_cast<Expression>(best);
  p.confidence = probs[best];
  return p;
}

template <std::floating_point Real>
Prediction<Real> predict(const AdapterParams<Real>& params, std::span<const Real> x, ForwardCache<Real>& cache,
                         double ln_eps = 1e-5) {
  return prediction_from_probs<Real>(forward<Real>(params, x, {}, cache, ln_eps));
}

template <std::floating_point Real>
Prediction<Real> predict(const AdapterParams<Real>& params, std::span<const Real> x, double ln_eps = 1e-5) {
  ForwardCache<Real> cache;
  return predict(params, x, cache, ln_eps);
}

/// -sum_c q_c log p_c with q = (1-eps) onehot(y) + eps/7. Terms with q_c = 0
/// are skipped so a one-hot p with eps = 0 gives exactly 0.
template <std::floating_point Real>
double smoothed_cross_entropy(std::span<const Real> probs, Expression y, double eps) {
  double loss = 0;
  for (std::size_t c = 0; c < kExpressionCount; ++c) {
    const double q = detail::smoothed_target(c, index_of(y), eps);
    if (q != 0) loss -= q * std::log(static_cast<double>(probs[c]));
  }
  return loss;
}

/// Train-mode forward plus exact gradients of the smoothed cross-entropy.
/// grads is resized to match params. Returns the loss.
template <std::floating_point Real>
Real loss_and_grad(const AdapterParams<Real>& params, std::span<const Real> x, Expression y,
                   double label_smoothing, std::span<const Real> dropout_mask, ForwardCache<Real>& cache,
                   AdapterParams<Real>& grads, double ln_eps = 1e-5) {
  forward<Real>(params, x, dropout_mask, cache, ln_eps);
  const std::size_t dim = params.dim();
  const std::size_t hidden = params.hidden();
  if (grads.dim() != dim || grads.hidden() != hidden) grads = AdapterParams<Real>(dim, hidden);

  double loss = 0;
  std::array<Real, kExpressionCount> dlogits{};
  for (std::size_t c = 0; c < kExpressionCount; ++c) {
    const double q = detail::smoothed_target(c, index_of(y), label_smoothing);
    if (q != 0) loss -= q * cache.log_probs[c];
    dlogits[c] = static_cast<Real>(cache.probs[c] - q);
  }
  if (!std::isfinite(loss)) throw NumericError("non-finite loss");

  const auto w1 = params.w1();
  const auto w2 = params.w2();
  auto g_w1 = grads.w1();
  auto g_w2 = grads.w2();
  auto g_b1 = grads.b1();
  auto g_b2 = grads.b2();

  // Output layer.
  std::vector<Real> d_hidden(hidden, Real(0));
  for (std::size_t c = 0; c < kExpressionCount; ++c) {
    g_b2[c] = dlogits[c];
    Real* row = g_w2.data() + c * hidden;
    for (std::size_t j = 0; j < hidden; ++j) row[j] = dlogits[c] * cache.out[j];
    detail::axpy(dlogits[c], w2.data() + c * hidden, d_hidden.data(), hidden);
  }

  // Dropout and GELU, then the hidden layer.
  std::vector<Real> d_ln(dim, Real(0));
  for (std::size_t j = 0; j < hidden; ++j) {
    Real d = d_hidden[j];
    if (!dropout_mask.empty()) d *= dropout_mask[j];
    d *= detail::gelu_grad(cache.pre[j]);
    g_b1[j] = d;
    Real* row = g_w1.data() + j * dim;
    for (std::size_t k = 0; k < dim; ++k) row[k] = d * cache.ln_out[k];
    detail::axpy(d, w1.data() + j * dim, d_ln.data(), dim);
  }

  // LayerNorm affine parameters. The input is frozen, so no dx is needed.
  auto g_gamma = grads.ln_gamma();
  auto g_beta = grads.ln_beta();
  for (std::size_t k = 0; k < dim; ++k) {
    g_gamma[k] = d_ln[k] * cache.xhat[k];
    g_beta[k] = d_ln[k];
  }
  return static_cast<Real>(loss);
}

template <std::floating_point Real>
struct LossAndGrad {
  Real loss;
  AdapterParams<Real> grads;
};

template <std::floating_point Real>
LossAndGrad<Real> loss_and_grad(const AdapterParams<Real>& params, std::span<const Real> x, Expression y,
                                const TrainingConfig& cfg, std::span<const Real> dropout_mask) {
  ForwardCache<Real> cache;
  AdapterParams<Real> grads(params.dim(), params.hidden());
  const Real loss = loss_and_grad(params, x, y, cfg.label_smoothing, dropout_mask, cache, grads, cfg.ln_eps);
  return {loss, std::move(grads)};
}

/// theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta), with decay
/// applied to w1 and w2 only.
template <std::floating_point Real>
void adamw_step(AdapterParams<Real>& params, OptimizerState<Real>& opt, const AdapterParams<Real>& grads,
                const TrainingConfig& cfg) {
  if (grads.size() != params.size() || opt.m.size() != params.size() || opt.v.size() != params.size()) {
    throw ContractError("adamw_step shape mismatch");
  }
  ++opt.step;
  const double t = static_cast<double>(opt.step);
  const Real b1 = static_cast<Real>(cfg.adam_beta1);
  const Real b2 = static_cast<Real>(cfg.adam_beta2);
  const Real c1 = static_cast<Real>(1.0 / (1.0 - std::pow(cfg.adam_beta1, t)));
  const Real c2 = static_cast<Real>(1.0 / (1.0 - std::pow(cfg.adam_beta2, t)));
  const Real lr = static_cast<Real>(cfg.learning_rate);
  const Real eps = static_cast<Real>(cfg.adam_eps);

  auto theta = params.values();
  auto m = opt.m.values();
  auto v = opt.v.values();
  const auto g = grads.values();
  for (const TensorSlot& slot : params.layout()) {
    const Real wd = slot.decayed ? static_cast<Real>(cfg.weight_decay) : Real(0);
    const std::size_t end = slot.offset + slot.size;
    for (std::size_t i = slot.offset; i < end; ++i) {
      m[i] = b1 * m[i] + (Real(1) - b1) * g[i];
      v[i] = b2 * v[i] + (Real(1) - b2) * g[i] * g[i];
      const Real m_hat = m[i] * c1;
      const Real v_hat = v[i] * c2;
      // 0/0 only when g, m, v and eps are all zero; the update is then zero.
      const Real denom = std::sqrt(v_hat) + eps;
      const Real adam = denom > 0 ? m_hat / denom : Real(0);
      theta[i] -= lr * (adam + wd * theta[i]);
    }
  }
}

/// FNV-1a over the raw bytes of params, moments and step counter.
template <std::floating_point Real>
std::uint64_t parameter_hash(const AdapterParams<Real>& params, const OptimizerState<Real>& opt) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::span<const Real> s) {
    for (Real v : s) {
      auto bytes = std::bit_cast<std::array<unsigned char, sizeof(Real)>>(v);
      for (unsigned char b : bytes) h = (h ^ b) * 0x100000001b3ULL;
    }
  };
  mix(params.values());
  mix(opt.m.values());
  mix(opt.v.values());
  for (int s = 0; s < 64; s += 8) h = (h ^ ((opt.step >> s) & 0xFF)) * 0x100000001b3ULL;
  return h;
}

/// Debug checkpoint: JSON header line, then every tensor of params, m and v
/// as float32 little-endian in layout order.
template <std::floating_point Real>
void write_checkpoint(const AdapterParams<Real>& params, const OptimizerState<Real>& opt,
                      const std::filesystem::path& path) {
  nlohmann::json h;
  h["version"] = 1;
  h["dim"] = params.dim();
  h["hidden"] = params.hidden();
  h["classes"] = kExpressionCount;
  h["step"] = opt.step;
  std::vector<std::string> order;
  for (const char* part : {"param", "m", "v"}) {
    for (const auto& s : params.layout()) order.push_back(std::string(part) + "." + s.name);
  }
  h["tensors"] = order;
  std::string out = h.dump();
  out.push_back('\n');
  for (const auto* buf : {&params, &opt.m, &opt.v}) {
    for (Real v : buf->values()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int s = 0; s < 32; s += 8) out.push_back(static_cast<char>((bits >> s) & 0xFF));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace fersim
