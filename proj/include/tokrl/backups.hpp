#pragma once

// Backup operators over trajectories: action-level Bellman, naive token-level,
// BAD and soft BAD, plus token-level GAE.
//
// Value slots follow StepRecord::token_values: slot j-1 holds V(o, w^{1:j})
// for j = 1..|a| and the last slot holds the bootstrap V(o', ∅). Operators
// taking a value function fill the slots first and then read them.

#include <functional>
#include <span>
#include <vector>

#include "tokrl/token_mdp.hpp"

namespace tokrl {

struct BackupMode {
  enum class Kind { ActionLevel, NaiveToken, BAD, SoftBAD };

  Kind kind = Kind::BAD;
  double gamma_w = 1.0;
  double beta = 0.0;
  double gamma_a = 0.95;

  static BackupMode action_level(double gamma_a);
  static BackupMode naive(double gamma_w, double gamma_a);
  static BackupMode bad(double gamma_a);
  static BackupMode soft_bad(double beta, double gamma_a);

  // Discount on edges inside an action: gamma_w (naive) or 1.
  double intra_discount() const noexcept { return kind == Kind::NaiveToken ? gamma_w : 1.0; }
  std::string label() const;
  void validate() const;
};

struct TokenTargets {
  std::vector<double> value_target;  // flatten order (t, j)
  std::vector<double> advantage;
};

using ObsValueFn = std::function<double(const Observation&)>;
// Distribution over the vocabulary for the next token after a prefix.
using TokenDistFn = std::function<std::vector<double>(const Observation&, TokenSpan)>;
// Q(o, w^{1:j}, w) for every next token w (entries for zero-mass tokens are ignored).
using TokenQFn = std::function<std::vector<double>(const Observation&, TokenSpan)>;

// Per-step R + gamma_a V(o'), or R on terminal steps.
std::vector<double> action_targets(const Trajectory& traj, const ObsValueFn& V, double gamma_a);

// Slot-based operators.
TokenTargets naive_token_targets(const Trajectory& traj, double gamma_w, double gamma_a);
TokenTargets bad_targets(const Trajectory& traj, double gamma_a);
// Value function variants: slots are refreshed from V before the backup.
TokenTargets naive_token_targets(const Trajectory& traj, const TokenValueFn& V, double gamma_w,
                                 double gamma_a);
TokenTargets bad_targets(const Trajectory& traj, const TokenValueFn& V, double gamma_a);

// Soft BAD. Advantages are target minus Q(o, w^{1:j-1}, w^j).
TokenTargets sbad_targets(const Trajectory& traj, const TokenQFn& Q, const TokenDistFn& policy,
                          const TokenDistFn& ref_policy, double beta, double gamma_a);

// Exact KL[p || q] over the vocabulary; DivergenceUndefinedError when q(w) = 0 < p(w).
double kl_divergence(std::span<const double> p, std::span<const double> q);

// Token-level GAE on the slot values. The per-edge discount is
// mode.intra_discount() inside an action, gamma_a across actions and 0 after a
// terminal step. lambda = 0 gives the one-step residuals.
std::vector<double> gae_token_advantages(const Trajectory& traj, const BackupMode& mode,
                                         double lambda);
std::vector<double> gae_token_advantages(const Trajectory& traj, const TokenValueFn& V,
                                         const BackupMode& mode, double lambda);

// One-step residuals delta_t^j = target - V(o, w^{1:j}), flatten order.
std::vector<double> token_residuals(const Trajectory& traj, const BackupMode& mode);

// Action-level GAE over steps with values V(o_t) and V(o_{t+1}).
std::vector<double> gae_action_advantages(const Trajectory& traj, std::span<const double> v_obs,
                                          std::span<const double> v_next, double gamma_a,
                                          double lambda);

// Fill every step's slots from V (the bootstrap slot is V(o', ∅), 0 after a terminal step).
Trajectory refresh_token_values(const Trajectory& traj, const TokenValueFn& V);

}  // namespace tokrl
