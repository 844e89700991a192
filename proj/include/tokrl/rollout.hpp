#pragma once

// Seeded token-by-token rollout collection.
//
// Random streams: every sampled token draws one uniform from
// CounterRng(seed).split(worker).split(step_offset + t).split(j), so a draw
// depends only on (seed, worker, step, token) and never on thread timing.

#include <functional>

#include "tokrl/policy.hpp"
#include "tokrl/token_mdp.hpp"

namespace tokrl {

enum class Sampling {
  Token,    // sample w^j from pi(. | o, w^{1:j-1}) until the action completes
  Twosome,  // sample a whole legal action from the length-normalized distribution
};

struct RolloutOptions {
  std::size_t max_steps = 1;
  std::uint64_t seed = 0;
  std::uint64_t worker = 0;
  std::uint64_t step_offset = 0;
  bool reset = true;     // reset the env first; otherwise resume (reset only if terminated)
  bool use_mask = true;  // restrict tokens to the legal-action set
  Sampling sampling = Sampling::Token;
  double gamma_a = 0.95;
  TokenValueFn values;  // empty: cache zeros
};

Trajectory collect_rollout(Environment& env, const TokenPolicy& policy,
                           const RolloutOptions& options);
Trajectory collect_rollout(Environment& env, const TokenPolicy& policy, std::size_t max_steps,
                           std::uint64_t seed);

// Inverse-CDF draw from a probability vector with a uniform u in [0, 1).
std::size_t sample_index(std::span<const double> probs, double u);

}  // namespace tokrl
