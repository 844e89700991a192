#include "tokrl/backups.hpp"

#include <cmath>

#include <fmt/format.h>

namespace tokrl {

BackupMode BackupMode::action_level(double gamma_a) {
  return BackupMode{Kind::ActionLevel, 1.0, 0.0, gamma_a};
}
BackupMode BackupMode::naive(double gamma_w, double gamma_a) {
  return BackupMode{Kind::NaiveToken, gamma_w, 0.0, gamma_a};
}
BackupMode BackupMode::bad(double gamma_a) { return BackupMode{Kind::BAD, 1.0, 0.0, gamma_a}; }
BackupMode BackupMode::soft_bad(double beta, double gamma_a) {
  return BackupMode{Kind::SoftBAD, 1.0, beta, gamma_a};
}

std::string BackupMode::label() const {
  switch (kind) {
    case Kind::ActionLevel: return "action";
    case Kind::NaiveToken: return fmt::format("naive({})", gamma_w);
    case Kind::BAD: return "bad";
    case Kind::SoftBAD: return fmt::format("sbad({})", beta);
  }
  return "?";
}

void BackupMode::validate() const {
  if (!(gamma_a > 0.0 && gamma_a <= 1.0)) {
    throw ConfigError(fmt::format("gamma_a must lie in (0, 1], got {}", gamma_a));
  }
  if (kind == Kind::NaiveToken && !(gamma_w >= 0.0 && gamma_w <= 1.0)) {
    throw ConfigError(fmt::format("gamma_w must lie in [0, 1], got {}", gamma_w));
  }
  if (kind == Kind::SoftBAD && !(beta >= 0.0)) {
    throw ConfigError(fmt::format("beta must be >= 0, got {}", beta));
  }
}

std::vector<double> action_targets(const Trajectory& traj, const ObsValueFn& V, double gamma_a) {
  std::vector<double> out;
  out.reserve(traj.size());
  for (const auto& s : traj.steps()) {
    out.push_back(s.done ? s.reward : s.reward + gamma_a * V(s.next_obs));
  }
  return out;
}

namespace {

// Shared kernel: the naive and BAD operators differ only in `intra`, so at
// intra = 1 both produce bit-identical results.
std::vector<double> slot_targets(const Trajectory& traj, double intra, double gamma_a) {
  std::vector<double> out;
  out.reserve(traj.token_count());
  for (const auto& s : traj.steps()) {
    const std::size_t n = s.action.size();
    for (std::size_t j = 1; j < n; ++j) out.push_back(intra * s.token_values[j]);
    out.push_back(s.done ? s.reward : s.reward + gamma_a * s.token_values[n]);
  }
  return out;
}

void check_gamma_w(double gamma_w) {
  if (!(gamma_w >= 0.0 && gamma_w <= 1.0)) {
    throw ConfigError(fmt::format("gamma_w must lie in [0, 1], got {}", gamma_w));
  }
}

TokenTargets with_residuals(const Trajectory& traj, std::vector<double> targets) {
  TokenTargets out;
  out.advantage.reserve(targets.size());
  std::size_t i = 0;
  for (const auto& s : traj.steps()) {
    for (std::size_t j = 0; j < s.action.size(); ++j, ++i) {
      out.advantage.push_back(targets[i] - s.token_values[j]);
    }
  }
  out.value_target = std::move(targets);
  return out;
}

}  // namespace

Trajectory refresh_token_values(const Trajectory& traj, const TokenValueFn& V) {
  std::vector<std::vector<double>> values;
  values.reserve(traj.size());
  for (const auto& s : traj.steps()) {
    std::vector<double> row(s.action.size() + 1, 0.0);
    for (std::size_t j = 1; j <= s.action.size(); ++j) row[j - 1] = V(s.obs, s.action.prefix(j));
    if (!s.done) row.back() = V(s.next_obs, TokenSpan());
    values.push_back(std::move(row));
  }
  return traj.with_token_values(std::move(values));
}

TokenTargets naive_token_targets(const Trajectory& traj, double gamma_w, double gamma_a) {
  check_gamma_w(gamma_w);
  return with_residuals(traj, slot_targets(traj, gamma_w, gamma_a));
}

TokenTargets bad_targets(const Trajectory& traj, double gamma_a) {
  return with_residuals(traj, slot_targets(traj, 1.0, gamma_a));
}

TokenTargets naive_token_targets(const Trajectory& traj, const TokenValueFn& V, double gamma_w,
                                 double gamma_a) {
  check_gamma_w(gamma_w);
  return naive_token_targets(refresh_token_values(traj, V), gamma_w, gamma_a);
}

TokenTargets bad_targets(const Trajectory& traj, const TokenValueFn& V, double gamma_a) {
  return bad_targets(refresh_token_values(traj, V), gamma_a);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
  double kl = 0.0;
  for (std::size_t w = 0; w < p.size(); ++w) {
    if (p[w] <= 0.0) continue;
    if (q[w] <= 0.0) {
      throw DivergenceUndefinedError(
          fmt::format("reference assigns zero mass to token {} (policy mass {})", w, p[w]));
    }
    kl += p[w] * std::log(p[w] / q[w]);
  }
  return kl;
}

namespace {

double soft_value(const Observation& obs, TokenSpan prefix, const TokenQFn& Q,
                  const TokenDistFn& policy, const TokenDistFn& ref, double beta) {
  const auto q = Q(obs, prefix);
  const auto p = policy(obs, prefix);
  double expect = 0.0;
  for (std::size_t w = 0; w < p.size(); ++w) {
    if (p[w] > 0.0) expect += p[w] * q[w];
  }
  if (beta == 0.0) return expect;
  return expect - beta * kl_divergence(p, ref(obs, prefix));
}

}  // namespace

TokenTargets sbad_targets(const Trajectory& traj, const TokenQFn& Q, const TokenDistFn& policy,
                          const TokenDistFn& ref_policy, double beta, double gamma_a) {
  if (!(beta >= 0.0)) throw ConfigError(fmt::format("beta must be >= 0, got {}", beta));
  TokenTargets out;
  for (const auto& s : traj.steps()) {
    const std::size_t n = s.action.size();
    for (std::size_t j = 1; j <= n; ++j) {
      double target;
      if (j < n) {
        target = soft_value(s.obs, s.action.prefix(j), Q, policy, ref_policy, beta);
      } else {
        target = s.reward;
        if (!s.done) {
          target += gamma_a * soft_value(s.next_obs, TokenSpan(), Q, policy, ref_policy, beta);
        }
      }
      const double q_here = Q(s.obs, s.action.prefix(j - 1))[s.action.tokens[j - 1]];
      out.value_target.push_back(target);
      out.advantage.push_back(target - q_here);
    }
  }
  return out;
}

std::vector<double> token_residuals(const Trajectory& traj, const BackupMode& mode) {
  mode.validate();
  return with_residuals(traj, slot_targets(traj, mode.intra_discount(), mode.gamma_a)).advantage;
}

std::vector<double> gae_token_advantages(const Trajectory& traj, const BackupMode& mode,
                                         double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError(fmt::format("lambda must lie in [0, 1], got {}", lambda));
  }
  if (mode.kind == BackupMode::Kind::ActionLevel || mode.kind == BackupMode::Kind::SoftBAD) {
    throw ConfigError("token GAE needs a naive or BAD backup mode");
  }
  auto adv = token_residuals(traj, mode);
  // Discount on the edge leaving each flattened entry.
  std::vector<double> edge;
  edge.reserve(adv.size());
  for (const auto& s : traj.steps()) {
    for (std::size_t j = 1; j < s.action.size(); ++j) edge.push_back(mode.intra_discount());
    edge.push_back(s.done ? 0.0 : mode.gamma_a);
  }
  for (std::size_t i = adv.size(); i-- > 1;) adv[i - 1] += edge[i - 1] * lambda * adv[i];
  return adv;
}

std::vector<double> gae_token_advantages(const Trajectory& traj, const TokenValueFn& V,
                                         const BackupMode& mode, double lambda) {
  return gae_token_advantages(refresh_token_values(traj, V), mode, lambda);
}

std::vector<double> gae_action_advantages(const Trajectory& traj, std::span<const double> v_obs,
                                          std::span<const double> v_next, double gamma_a,
                                          double lambda) {
  const std::size_t T = traj.size();
  if (v_obs.size() != T || v_next.size() != T) {
    throw std::invalid_argument("gae_action_advantages: one value per step required");
  }
  std::vector<double> adv(T);
  double running = 0.0;
  for (std::size_t t = T; t-- > 0;) {
    const auto& s = traj[t];
    const double boot = s.done ? 0.0 : gamma_a * v_next[t];
    const double delta = s.reward + boot - v_obs[t];
    const double carry = (t + 1 < T && !s.done) ? gamma_a * lambda * running : 0.0;
    running = delta + carry;
    adv[t] = running;
  }
  return adv;
}

}  // namespace tokrl
