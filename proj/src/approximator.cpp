#include "tokrl/approximator.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "tokrl/rng.hpp"

namespace tokrl {

std::string to_string(Backend b) { return b == Backend::Tabular ? "tabular" : "smallnet"; }

Backend parse_backend(std::string_view text) {
  if (text == "tabular") return Backend::Tabular;
  if (text == "smallnet") return Backend::SmallNet;
  throw ConfigError(fmt::format("unknown backend '{}' (tabular, smallnet)", text));
}

// ---------------------------------------------------------------------------

TabularApprox::TabularApprox(std::shared_ptr<const ContextSpace> space, bool per_token)
    : space_(std::move(space)), per_token_(per_token) {
  node_offset_.resize(space_->num_nodes());
  for (std::size_t n = 0; n < space_->num_nodes(); ++n) {
    node_offset_[n] = per_obs_;
    per_obs_ += per_token_ ? space_->children(n).size() : 1;
  }
  params_.assign(per_obs_ * space_->num_observations(), 0.0);
}

std::vector<std::uint64_t> TabularApprox::dims() const {
  return {space_->num_observations(), space_->num_nodes(), per_token_ ? 1u : 0u, per_obs_};
}

std::unique_ptr<Approximator> TabularApprox::clone() const {
  return std::make_unique<TabularApprox>(*this);
}

std::size_t TabularApprox::offset(const Context& ctx) const {
  if (ctx.node == ContextSpace::npos || ctx.node >= node_offset_.size() ||
      ctx.obs >= space_->num_observations()) {
    throw std::out_of_range(
        fmt::format("tabular context (obs {}, node {}) is outside the table", ctx.obs, ctx.node));
  }
  return static_cast<std::size_t>(ctx.obs) * per_obs_ + node_offset_[ctx.node];
}

void TabularApprox::forward(const Context& ctx, std::span<double> out) const {
  const std::size_t base = offset(ctx);
  if (!per_token_) {
    out[0] = params_[base];
    return;
  }
  std::fill(out.begin(), out.end(), -std::numeric_limits<double>::infinity());
  const auto& kids = space_->children(ctx.node);
  for (std::size_t k = 0; k < kids.size(); ++k) out[kids[k]] = params_[base + k];
}

void TabularApprox::backward(const Context& ctx, std::span<const double> dout,
                             std::span<double> grad) const {
  const std::size_t base = offset(ctx);
  if (!per_token_) {
    grad[base] += dout[0];
    return;
  }
  const auto& kids = space_->children(ctx.node);
  for (std::size_t k = 0; k < kids.size(); ++k) grad[base + k] += dout[kids[k]];
}

// ---------------------------------------------------------------------------

SmallNet::SmallNet(std::shared_ptr<const ContextSpace> space, std::size_t outputs,
                   std::size_t hidden, std::uint64_t seed)
    : space_(std::move(space)),
      inputs_(space_->num_observations() + space_->max_action_len() * space_->vocab_size()),
      hidden_(hidden),
      outputs_(outputs) {
  if (hidden_ == 0 || outputs_ == 0) throw ConfigError("SmallNet needs hidden >= 1 and outputs >= 1");
  w1_ = 0;
  b1_ = w1_ + inputs_ * hidden_;
  w2_ = b1_ + hidden_;
  b2_ = w2_ + outputs_ * hidden_;
  params_.assign(b2_ + outputs_, 0.0);
  CounterRng rng = CounterRng(seed).split("smallnet-init");
  const double bound = 1.0 / std::sqrt(static_cast<double>(inputs_));
  for (std::size_t i = w1_; i < b1_; ++i) params_[i] = rng.next_uniform(-bound, bound);
}

std::vector<std::uint64_t> SmallNet::dims() const { return {inputs_, hidden_, outputs_}; }

std::unique_ptr<Approximator> SmallNet::clone() const { return std::make_unique<SmallNet>(*this); }

std::vector<std::size_t> SmallNet::features(const Context& ctx) const {
  if (ctx.obs >= space_->num_observations() || ctx.prefix.size() > space_->max_action_len()) {
    throw std::out_of_range(fmt::format("SmallNet context (obs {}, prefix length {}) out of range",
                                        ctx.obs, ctx.prefix.size()));
  }
  std::vector<std::size_t> f;
  f.reserve(1 + ctx.prefix.size());
  f.push_back(static_cast<std::size_t>(ctx.obs));
  for (std::size_t i = 0; i < ctx.prefix.size(); ++i) {
    f.push_back(space_->num_observations() + i * space_->vocab_size() + ctx.prefix[i]);
  }
  return f;
}

void SmallNet::hidden_activations(const std::vector<std::size_t>& feats,
                                  std::span<double> h) const {
  for (std::size_t k = 0; k < hidden_; ++k) h[k] = params_[b1_ + k];
  for (std::size_t f : feats) {
    const double* row = &params_[w1_ + f * hidden_];
    for (std::size_t k = 0; k < hidden_; ++k) h[k] += row[k];
  }
  for (std::size_t k = 0; k < hidden_; ++k) h[k] = std::tanh(h[k]);
}

void SmallNet::forward(const Context& ctx, std::span<double> out) const {
  std::vector<double> h(hidden_);
  hidden_activations(features(ctx), h);
  for (std::size_t o = 0; o < outputs_; ++o) {
    const double* row = &params_[w2_ + o * hidden_];
    double z = params_[b2_ + o];
    for (std::size_t k = 0; k < hidden_; ++k) z += row[k] * h[k];
    out[o] = z;
  }
}

void SmallNet::backward(const Context& ctx, std::span<const double> dout,
                        std::span<double> grad) const {
  const auto feats = features(ctx);
  std::vector<double> h(hidden_);
  hidden_activations(feats, h);
  std::vector<double> dh(hidden_, 0.0);
  for (std::size_t o = 0; o < outputs_; ++o) {
    const double g = dout[o];
    if (g == 0.0) continue;
    grad[b2_ + o] += g;
    const double* row = &params_[w2_ + o * hidden_];
    double* grow = &grad[w2_ + o * hidden_];
    for (std::size_t k = 0; k < hidden_; ++k) {
      grow[k] += g * h[k];
      dh[k] += g * row[k];
    }
  }
  for (std::size_t k = 0; k < hidden_; ++k) dh[k] *= 1.0 - h[k] * h[k];
  for (std::size_t k = 0; k < hidden_; ++k) grad[b1_ + k] += dh[k];
  for (std::size_t f : feats) {
    double* grow = &grad[w1_ + f * hidden_];
    for (std::size_t k = 0; k < hidden_; ++k) grow[k] += dh[k];
  }
}

std::unique_ptr<Approximator> make_approximator(Backend backend,
                                                std::shared_ptr<const ContextSpace> space,
                                                bool actor, std::size_t hidden, std::uint64_t seed) {
  if (backend == Backend::Tabular) return std::make_unique<TabularApprox>(std::move(space), actor);
  const std::size_t outputs = actor ? space->vocab_size() : 1;
  return std::make_unique<SmallNet>(std::move(space), outputs, hidden, seed);
}

}  // namespace tokrl
