#pragma once

// Autoregressive actor pi(w^j | o, w^{1:j-1}) and token critic V(o, w^{1:j}).
// Actor parameters are phi, critic parameters theta, with a frozen copy
// theta-bar that only changes through sync_target().

#include <memory>
#include <span>
#include <vector>

#include "tokrl/approximator.hpp"

namespace tokrl {

// What rollout collection needs from a policy.
class TokenPolicy {
 public:
  virtual ~TokenPolicy() = default;
  virtual std::size_t vocab_size() const = 0;
  // Pre-softmax scores over the vocabulary; tokens outside `mask` are -inf.
  virtual std::vector<double> logits(const Observation& obs, TokenSpan prefix,
                                     const std::vector<bool>* mask = nullptr) const = 0;
};

// Softmax that maps -inf to exactly 0. Throws NumericalError when no entry is finite.
std::vector<double> softmax(std::span<const double> logits);
// Natural-log probabilities; -inf where the probability is 0.
std::vector<double> log_softmax(std::span<const double> logits);
double entropy(std::span<const double> probs);

// Length-normalized softmax over action log-likelihoods.
std::vector<double> twosome_normalize(std::span<const double> action_logprobs,
                                      std::span<const std::size_t> lengths);

class Actor final : public TokenPolicy {
 public:
  Actor(std::shared_ptr<const ContextSpace> space, Backend backend, std::size_t hidden = 64,
        std::uint64_t seed = 0);
  Actor(const Actor& other);
  Actor& operator=(const Actor& other);

  std::size_t vocab_size() const override { return space_->vocab_size(); }
  std::vector<double> logits(const Observation& obs, TokenSpan prefix,
                             const std::vector<bool>* mask = nullptr) const override;
  std::vector<double> probs(const Observation& obs, TokenSpan prefix,
                            const std::vector<bool>* mask = nullptr) const;

  // Per-token log pi(w^j | o, w^{1:j-1}); with `legal` the mask of that set applies.
  std::vector<double> token_logprobs(const Observation& obs, const Action& action,
                                     const LegalSet* legal = nullptr) const;
  double action_logprob(const Observation& obs, const Action& action,
                        const LegalSet* legal = nullptr) const;
  // log pi(a | o); adds its gradient with respect to the parameters to `grad`.
  double action_logprob_grad(const Observation& obs, const Action& action, const LegalSet* legal,
                             std::span<double> grad) const;
  std::vector<double> twosome_action_dist(const Observation& obs,
                                          const std::vector<Action>& legal) const;

  Context context(const Observation& obs, TokenSpan prefix) const;
  const ContextSpace& space() const noexcept { return *space_; }
  std::shared_ptr<const ContextSpace> space_ptr() const noexcept { return space_; }
  Approximator& net() noexcept { return *net_; }
  const Approximator& net() const noexcept { return *net_; }

 private:
  std::shared_ptr<const ContextSpace> space_;
  std::unique_ptr<Approximator> net_;
};

class Critic {
 public:
  Critic(std::shared_ptr<const ContextSpace> space, Backend backend, std::size_t hidden = 64,
         std::uint64_t seed = 0);
  Critic(const Critic& other);
  Critic& operator=(const Critic& other);

  double value(const Observation& obs, TokenSpan prefix, bool use_target = false) const;
  double value(const Context& ctx, bool use_target = false) const;
  void sync_target();

  Context context(const Observation& obs, TokenSpan prefix) const;
  const ContextSpace& space() const noexcept { return *space_; }
  Approximator& net() noexcept { return *net_; }
  const Approximator& net() const noexcept { return *net_; }
  const Approximator& target() const noexcept { return *target_; }

 private:
  std::shared_ptr<const ContextSpace> space_;
  std::unique_ptr<Approximator> net_;
  std::unique_ptr<Approximator> target_;
};

}  // namespace tokrl
