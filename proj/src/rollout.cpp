#include "tokrl/rollout.hpp"

#include <cmath>

#include <fmt/format.h>

#include "tokrl/rng.hpp"

namespace tokrl {

std::size_t sample_index(std::span<const double> probs, double u) {
  double acc = 0.0;
  std::size_t last = probs.size();
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last = i;
    if (u < acc) return i;
  }
  if (last == probs.size()) throw NumericalError("cannot sample from an all-zero distribution");
  return last;  // rounding slack at the top of the CDF
}

namespace {

Action sample_tokens(const Environment& env, const TokenPolicy& policy, const Observation& obs,
                     const LegalSet& legal, const CounterRng& step_rng, bool use_mask,
                     std::vector<double>& logprobs) {
  const std::size_t vsize = env.vocab().size();
  Action action;
  for (std::size_t j = 0;; ++j) {
    if (j >= env.max_action_len()) {
      throw TruncatedActionError(
          fmt::format("no complete action within {} tokens: '{}'", env.max_action_len(),
                      env.vocab().render(action.tokens)),
          action.tokens);
    }
    std::vector<bool> mask;
    if (use_mask) mask = legal.next_token_mask(action.tokens, vsize);
    const auto p = softmax(policy.logits(obs, action.tokens, use_mask ? &mask : nullptr));
    const auto w = sample_index(p, step_rng.split(j).uniform_at(0));
    action.tokens.push_back(static_cast<TokenId>(w));
    logprobs.push_back(std::log(p[w]));
    const bool done = use_mask ? legal.is_complete(action.tokens) : env.closes_action(action.tokens);
    if (done) return action;
  }
}

Action sample_twosome(const TokenPolicy& policy, const Observation& obs, const LegalSet& legal,
                      const CounterRng& step_rng, std::vector<double>& logprobs) {
  std::vector<double> lps;
  std::vector<std::size_t> lens;
  std::vector<std::vector<double>> per_token;
  for (const auto& a : legal.actions()) {
    std::vector<double> tl;
    double total = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const auto lp = log_softmax(policy.logits(obs, a.prefix(j)));
      tl.push_back(lp[a.tokens[j]]);
      total += tl.back();
    }
    lps.push_back(total);
    lens.push_back(a.size());
    per_token.push_back(std::move(tl));
  }
  const auto dist = twosome_normalize(lps, lens);
  const auto k = sample_index(dist, step_rng.uniform_at(0));
  for (double lp : per_token[k]) {
    if (!std::isfinite(lp)) throw IllegalActionError("TWOSOME picked an action with zero token mass");
  }
  logprobs = per_token[k];
  return legal.actions()[k];
}

}  // namespace

Trajectory collect_rollout(Environment& env, const TokenPolicy& policy,
                           const RolloutOptions& options) {
  if (options.max_steps == 0) throw ConfigError("collect_rollout: max_steps must be >= 1");
  if (policy.vocab_size() != env.vocab().size()) {
    throw ModelMismatchError("policy vocabulary size differs from the environment's");
  }
  const CounterRng worker_rng = CounterRng(options.seed).split(options.worker);
  Observation obs;
  if (options.reset || env.terminated()) {
    obs = env.reset(worker_rng.split("reset").bits_at(options.step_offset));
  } else {
    obs = env.observe();
  }

  std::vector<StepRecord> steps;
  for (std::size_t t = 0; t < options.max_steps; ++t) {
    const CounterRng step_rng = worker_rng.split(options.step_offset + t);
    const LegalSet legal(env.legal_actions(obs));
    StepRecord rec;
    rec.obs = obs;
    if (options.sampling == Sampling::Token) {
      rec.action = sample_tokens(env, policy, obs, legal, step_rng, options.use_mask,
                                 rec.token_logprobs);
    } else {
      rec.action = sample_twosome(policy, obs, legal, step_rng, rec.token_logprobs);
    }
    const auto result = env.step(rec.action);
    rec.reward = result.reward;
    rec.next_obs = result.obs;
    rec.done = result.done;
    rec.token_values.assign(rec.action.size() + 1, 0.0);
    if (options.values) {
      for (std::size_t j = 1; j <= rec.action.size(); ++j) {
        rec.token_values[j - 1] = options.values(rec.obs, rec.action.prefix(j));
      }
      if (!rec.done) rec.token_values.back() = options.values(rec.next_obs, TokenSpan());
    }
    obs = result.obs;
    steps.push_back(std::move(rec));
    if (result.done) break;
  }
  return Trajectory(std::move(steps), options.gamma_a);
}

Trajectory collect_rollout(Environment& env, const TokenPolicy& policy, std::size_t max_steps,
                           std::uint64_t seed) {
  RolloutOptions options;
  options.max_steps = max_steps;
  options.seed = seed;
  return collect_rollout(env, policy, options);
}

}  // namespace tokrl
