#pragma once

// PPO training loop with token-level credit assignment:
//
//  * POAD: BAD targets and token-level GAE.
//  * NTPO: naive token-level targets with intra-action discount gamma_w.
//  * ActionPPO: one advantage per action from an action-level critic; the
//    policy is the length-normalized distribution over legal actions.
//
// Token critics are read slot-aligned: the value attached to token j is the
// critic at the context that emitted it, (o, w^{1:j-1}), and the bootstrap is
// the critic at (o', ∅). Critic targets use the frozen copy theta-bar.

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tokrl/backups.hpp"
#include "tokrl/policy.hpp"

namespace tokrl {

enum class Algo { POAD, NTPO, ActionPPO };
std::string to_string(Algo a);
Algo parse_algo(std::string_view text);

struct TrainConfig {
  Algo algo = Algo::POAD;
  double gamma_a = 0.95;
  std::optional<double> gamma_w;  // NTPO only; POAD always uses 1
  double lambda = 0.95;
  bool use_gae = true;  // false: one-step residuals (v_targ - v)
  bool normalize_advantages = true;
  double actor_lr = 3e-3;
  double critic_lr = 1e-2;
  std::size_t ppo_epochs = 5;
  std::size_t num_mini_batch = 2;
  std::size_t batch_size = 128;
  std::size_t rollout_threads = 4;
  double clip = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double max_grad_norm = 0.5;
  double kl_threshold = 0.02;
  std::size_t total_env_steps = 2000;
  std::uint64_t seed = 1;
  Backend backend = Backend::Tabular;
  std::size_t hidden = 64;
  bool use_mask = true;
  std::size_t checkpoint_every = 0;  // updates; 0 disables
  std::string checkpoint_dir;

  void validate() const;
  BackupMode backup_mode() const;
};

struct UpdateMetrics {
  std::size_t env_steps = 0;
  std::size_t update = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double mean_discounted_return = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_frac = 0.0;
  std::uint64_t seed = 0;
  std::size_t actor_steps = 0;
  std::size_t episodes = 0;
};

struct EpisodeStat {
  std::size_t env_steps = 0;  // cumulative steps at the end of the collecting update
  double episode_return = 0.0;
  double discounted_return = 0.0;
};

// One environment step prepared for the update phase. A "unit" is a token
// (token algorithms) or the whole action (ActionPPO).
struct StepData {
  Observation obs;
  Action action;
  double reward = 0.0;
  Observation next_obs;
  bool done = false;
  bool action_level = false;
  std::vector<std::vector<bool>> masks;  // per token; empty when sampled unmasked
  std::vector<Action> legal;             // ActionPPO candidates
  std::vector<double> old_logprobs;      // per unit
  std::vector<double> advantages;        // per unit
  std::vector<double> value_targets;     // per unit

  std::size_t units() const noexcept { return action_level ? 1 : action.size(); }
};

struct PolicyLossOutput {
  double loss = 0.0;
  double surrogate = 0.0;  // the (1/T) sum_t (1/|a_t|) sum_j min(...) term
  double entropy = 0.0;    // mean per-unit entropy
  double clip_frac = 0.0;
};

// Clipped surrogate plus entropy bonus on the steps in `idx`; adds the
// gradient with respect to the actor parameters to `grad` when non-empty.
PolicyLossOutput policy_loss(const std::vector<StepData>& steps, std::span<const std::size_t> idx,
                             const Actor& actor, double clip, double entropy_coef,
                             std::span<double> grad);

// (1/T) sum_t (1/n_t) sum_u (target - V_theta(context_u))^2 with gradient into `grad`.
double critic_loss(const std::vector<StepData>& steps, std::span<const std::size_t> idx,
                   const Critic& critic, std::span<double> grad);

// Nonnegative estimator mean((r - 1) - log r) over the units in `idx`.
double approx_kl(const std::vector<StepData>& steps, std::span<const std::size_t> idx,
                 const Actor& actor);

// Current log-probabilities of every unit (masked token or TWOSOME action).
std::vector<double> unit_logprobs(const StepData& step, const Actor& actor);

// Zero mean, unit population variance (eps 1e-8 in the denominator).
std::vector<double> advantage_normalize(std::span<const double> advantages);

// Slot-aligned token value function over a critic.
TokenValueFn aligned_values(const Critic& critic, bool use_target);

struct RunArtifacts {
  std::vector<UpdateMetrics> metrics;
  std::vector<EpisodeStat> episodes;
  std::shared_ptr<Actor> actor;
  std::shared_ptr<Critic> critic;
};

using EnvFactory = std::function<std::unique_ptr<Environment>()>;

struct TrainHooks {
  std::function<void(const UpdateMetrics&, const Actor&, const Critic&)> on_update;
};

RunArtifacts train(const TrainConfig& config, const EnvFactory& env_factory,
                   const TrainHooks& hooks = {});

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const UpdateMetrics& m);

}  // namespace tokrl
