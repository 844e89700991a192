#include "tokrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace tokrl {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double max_finite(std::span<const double> x) {
  double m = kNegInf;
  for (double v : x) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw NumericalError("non-finite logit");
    }
    m = std::max(m, v);
  }
  if (m == kNegInf) throw NumericalError("softmax over an empty support");
  return m;
}

}  // namespace

std::vector<double> softmax(std::span<const double> logits) {
  const double m = max_finite(logits);
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = logits[i] == kNegInf ? 0.0 : std::exp(logits[i] - m);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double m = max_finite(logits);
  double z = 0.0;
  for (double v : logits) {
    if (v != kNegInf) z += std::exp(v - m);
  }
  const double lse = m + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] == kNegInf ? kNegInf : logits[i] - lse;
  }
  return out;
}

double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

std::vector<double> twosome_normalize(std::span<const double> action_logprobs,
                                      std::span<const std::size_t> lengths) {
  if (action_logprobs.empty() || action_logprobs.size() != lengths.size()) {
    throw std::invalid_argument("twosome_normalize: need one length per non-empty action list");
  }
  std::vector<double> scores(action_logprobs.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (lengths[i] == 0) throw std::invalid_argument("twosome_normalize: zero-length action");
    scores[i] = action_logprobs[i] / static_cast<double>(lengths[i]);
  }
  return softmax(scores);
}

// ---------------------------------------------------------------------------

Actor::Actor(std::shared_ptr<const ContextSpace> space, Backend backend, std::size_t hidden,
             std::uint64_t seed)
    : space_(std::move(space)), net_(make_approximator(backend, space_, true, hidden, seed)) {}

Actor::Actor(const Actor& other) : space_(other.space_), net_(other.net_->clone()) {}

Actor& Actor::operator=(const Actor& other) {
  if (this != &other) {
    space_ = other.space_;
    net_ = other.net_->clone();
  }
  return *this;
}

Context Actor::context(const Observation& obs, TokenSpan prefix) const {
  return Context{obs.id, space_->find(prefix), prefix};
}

std::vector<double> Actor::logits(const Observation& obs, TokenSpan prefix,
                                  const std::vector<bool>* mask) const {
  if (prefix.size() >= space_->max_action_len()) {
    throw std::out_of_range(fmt::format("prefix length {} leaves no room for another token",
                                        prefix.size()));
  }
  std::vector<double> z(space_->vocab_size());
  net_->forward(context(obs, prefix), z);
  if (mask) {
    for (std::size_t w = 0; w < z.size(); ++w) {
      if (!(*mask)[w]) z[w] = kNegInf;
    }
  }
  return z;
}

std::vector<double> Actor::probs(const Observation& obs, TokenSpan prefix,
                                 const std::vector<bool>* mask) const {
  return softmax(logits(obs, prefix, mask));
}

std::vector<double> Actor::token_logprobs(const Observation& obs, const Action& action,
                                          const LegalSet* legal) const {
  if (action.size() == 0 || action.size() > space_->max_action_len()) {
    throw IllegalActionError(fmt::format("action length {} out of range", action.size()));
  }
  if (net_->backend() == Backend::Tabular && space_->find(action.tokens) == ContextSpace::npos) {
    throw IllegalActionError("action is not in the environment's grammar");
  }
  std::vector<double> out;
  out.reserve(action.size());
  for (std::size_t j = 0; j < action.size(); ++j) {
    const auto prefix = action.prefix(j);
    std::vector<bool> mask;
    if (legal) mask = legal->next_token_mask(prefix, space_->vocab_size());
    const auto lp = log_softmax(logits(obs, prefix, legal ? &mask : nullptr));
    const TokenId w = action.tokens[j];
    if (w >= lp.size() || lp[w] == kNegInf) {
      throw IllegalActionError(fmt::format("token {} at position {} is masked", w, j + 1));
    }
    out.push_back(lp[w]);
  }
  return out;
}

double Actor::action_logprob(const Observation& obs, const Action& action,
                             const LegalSet* legal) const {
  double total = 0.0;
  for (double lp : token_logprobs(obs, action, legal)) total += lp;
  return total;
}

double Actor::action_logprob_grad(const Observation& obs, const Action& action,
                                 const LegalSet* legal, std::span<double> grad) const {
  const auto lps = token_logprobs(obs, action, legal);
  for (std::size_t j = 0; j < action.size(); ++j) {
    const auto prefix = action.prefix(j);
    std::vector<bool> mask;
    if (legal) mask = legal->next_token_mask(prefix, space_->vocab_size());
    auto dz = softmax(logits(obs, prefix, legal ? &mask : nullptr));
    for (auto& d : dz) d = -d;
    dz[action.tokens[j]] += 1.0;
    net_->backward(context(obs, prefix), dz, grad);
  }
  double total = 0.0;
  for (double lp : lps) total += lp;
  return total;
}

std::vector<double> Actor::twosome_action_dist(const Observation& obs,
                                               const std::vector<Action>& legal) const {
  std::vector<double> lps;
  std::vector<std::size_t> lens;
  for (const auto& a : legal) {
    lps.push_back(action_logprob(obs, a));
    lens.push_back(a.size());
  }
  return twosome_normalize(lps, lens);
}

// ---------------------------------------------------------------------------

Critic::Critic(std::shared_ptr<const ContextSpace> space, Backend backend, std::size_t hidden,
               std::uint64_t seed)
    : space_(std::move(space)),
      net_(make_approximator(backend, space_, false, hidden, seed)),
      target_(net_->clone()) {}

Critic::Critic(const Critic& other)
    : space_(other.space_), net_(other.net_->clone()), target_(other.target_->clone()) {}

Critic& Critic::operator=(const Critic& other) {
  if (this != &other) {
    space_ = other.space_;
    net_ = other.net_->clone();
    target_ = other.target_->clone();
  }
  return *this;
}

Context Critic::context(const Observation& obs, TokenSpan prefix) const {
  if (prefix.size() > space_->max_action_len()) {
    throw std::out_of_range(fmt::format("prefix length {} exceeds max_action_len", prefix.size()));
  }
  return Context{obs.id, space_->find(prefix), prefix};
}

double Critic::value(const Context& ctx, bool use_target) const {
  double v = 0.0;
  (use_target ? *target_ : *net_).forward(ctx, std::span<double>(&v, 1));
  return v;
}

double Critic::value(const Observation& obs, TokenSpan prefix, bool use_target) const {
  return value(context(obs, prefix), use_target);
}

void Critic::sync_target() { target_->params() = net_->params(); }

}  // namespace tokrl
