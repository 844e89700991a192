#include "tokrl/verify.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include <fmt/format.h>

#include "tokrl/backups.hpp"
#include "tokrl/envs.hpp"
#include "tokrl/oracle.hpp"
#include "tokrl/rng.hpp"
#include "tokrl/trainer.hpp"

namespace tokrl {

namespace {

constexpr double kGamma = 0.95;

struct Suite {
  std::string name;
  std::vector<CheckResult>* out;

  void at_most(std::string check, double observed, double tol) {
    out->push_back({name, std::move(check), "<=", tol, observed, std::isfinite(observed) && observed <= tol});
  }
  void at_least(std::string check, double observed, double tol) {
    out->push_back({name, std::move(check), ">=", tol, observed, std::isfinite(observed) && observed >= tol});
  }
};

std::vector<std::pair<std::string, std::unique_ptr<Environment>>> bundled_envs() {
  std::vector<std::pair<std::string, std::unique_ptr<Environment>>> envs;
  envs.emplace_back("key_token", std::make_unique<KeyTokenBandit>());
  for (std::size_t k : {1, 3}) {
    for (std::size_t len : {2, 4, 8}) {
      envs.emplace_back(fmt::format("chain(K={},|a|={})", k, len), make_chain_env(k, len));
    }
  }
  envs.emplace_back("two_step", make_two_step_env());
  KitchenConfig kc;
  kc.height = kc.width = 3;
  envs.emplace_back("kitchen3x3", std::make_unique<TokenKitchen>(kc));
  return envs;
}

void consistency(Suite s) {
  for (const auto& [name, env] : bundled_envs()) {
    const auto model = enumerate_prefix_model(*env);
    s.at_most(name + ": model vs simulator mismatches",
              static_cast<double>(simulation_mismatches(model, *env, 200, 30, 11)), 0.0);
    const auto action = value_iteration(model, BackupMode::action_level(kGamma));
    const auto bad = value_iteration(model, BackupMode::bad(kGamma));
    s.at_most(name + ": max |Q_BAD - Q_action|", check_consistency(bad, action), 1e-8);
    s.at_most(name + ": greedy disagreements",
              static_cast<double>(greedy_disagreements(model, bad, action)), 0.0);
  }
  const auto model = enumerate_prefix_model(KeyTokenBandit());
  const auto bad = value_iteration(model, BackupMode::bad(kGamma));
  for (double beta : {0.0, 0.1}) {
    const auto soft = value_iteration(model, BackupMode::soft_bad(beta, kGamma));
    const auto soft_action = soft_action_iteration(model, beta, kGamma);
    s.at_most(fmt::format("key_token: sBAD soft-Bellman gap (beta={})", beta),
              check_soft_consistency(model, soft, soft_action), 1e-8);
    if (beta == 0.0) {
      double gap = 0.0;
      for (std::size_t n = 0; n < model.num_nodes(); ++n) {
        gap = std::max(gap, std::abs(soft.q_node[n] - bad.q_node[n]));
      }
      s.at_most("key_token: sBAD(beta=0) vs BAD", gap, 0.0);
    }
  }
}

void discrepancy(Suite s) {
  std::vector<std::pair<std::string, std::unique_ptr<Environment>>> envs;
  envs.emplace_back("key_token", std::make_unique<KeyTokenBandit>());
  envs.emplace_back("two_step", make_two_step_env(1.0, 2.0, 0.5));
  for (std::size_t len : {2, 4, 8}) envs.emplace_back(fmt::format("chain(K=2,|a|={})", len), make_chain_env(2, len));
  for (const auto& [name, env] : envs) {
    const auto model = enumerate_prefix_model(*env);
    const auto action = value_iteration(model, BackupMode::action_level(kGamma));
    for (double gw : {0.5, 0.8, 0.9}) {
      const auto naive = value_iteration(model, BackupMode::naive(gw, kGamma));
      double gap = 0.0;
      const auto probes = discrepancy_probes(model, naive, action);
      for (const auto& p : probes) gap = std::max(gap, std::abs(p.observed - p.closed_form));
      s.at_least(fmt::format("{}: probes (gamma_w={})", name, gw), static_cast<double>(probes.size()), 1.0);
      s.at_most(fmt::format("{}: max |DP gap - closed form| (gamma_w={})", name, gw), gap, 1e-9);
    }
  }
  s.at_most("hand instance R=1 gamma_w=0.5 |a|=3 j=1 Q'=2 |a'|=2",
            std::abs(discrepancy_closed_form(1.0, 0.95, 0.5, 3, 1, 2.0, 2) - 2.4125), 1e-12);

  const std::vector<double> gws{1.0, 0.95, 0.9, 0.8, 0.5};
  const std::vector<std::size_t> lens{2, 4, 8};
  const auto rows = discrepancy_sweep(3, gws, lens, kGamma);
  std::map<std::pair<double, std::size_t>, double> gap;
  for (const auto& r : rows) gap[{r.gamma_w, r.action_len}] = r.max_gap;
  double at_one = 0.0;
  std::size_t violations = 0;
  for (auto len : lens) {
    at_one = std::max(at_one, gap[{1.0, len}]);
    for (std::size_t i = 1; i < gws.size(); ++i) {
      if (gap[{gws[i], len}] < gap[{gws[i - 1], len}] - 1e-12) ++violations;
    }
  }
  for (auto gw : gws) {
    for (std::size_t i = 1; i < lens.size(); ++i) {
      if (gap[{gw, lens[i]}] < gap[{gw, lens[i - 1]}] - 1e-12) ++violations;
    }
  }
  s.at_most("sweep: gap at gamma_w=1", at_one, 1e-12);
  s.at_most("sweep: monotonicity violations (gamma_w, |a|)", static_cast<double>(violations), 0.0);
}

// Random steps walked through an environment with random advantages and
// old log-probs around the current policy.
std::vector<StepData> random_steps(Environment& env, const Actor& actor, bool action_level,
                                   std::size_t n, CounterRng rng) {
  std::vector<StepData> steps;
  auto obs = env.reset(rng.next_bits());
  while (steps.size() < n) {
    const auto legal = env.legal_actions(obs);
    const LegalSet set(legal);
    StepData s;
    s.obs = obs;
    s.action = legal[rng.next_below(legal.size())];
    s.action_level = action_level;
    if (action_level) {
      s.legal = legal;
      const auto dist = actor.twosome_action_dist(obs, legal);
      s.old_logprobs = {std::log(dist[*set.index_of(s.action)]) + rng.next_uniform(-0.4, 0.4)};
    } else {
      for (std::size_t j = 0; j < s.action.size(); ++j) {
        s.masks.push_back(set.next_token_mask(s.action.prefix(j), actor.vocab_size()));
      }
      for (double lp : actor.token_logprobs(obs, s.action, &set)) {
        s.old_logprobs.push_back(lp + rng.next_uniform(-0.4, 0.4));
      }
    }
    for (std::size_t u = 0; u < s.units(); ++u) {
      s.advantages.push_back(rng.next_uniform(-1.0, 1.0));
      s.value_targets.push_back(rng.next_uniform(-1.0, 1.0));
    }
    const auto r = env.step(s.action);
    s.reward = r.reward;
    s.next_obs = r.obs;
    s.done = r.done;
    steps.push_back(std::move(s));
    obs = r.done ? env.reset(rng.next_bits()) : r.obs;
  }
  return steps;
}

void randomize(std::vector<double>& params, CounterRng& rng) {
  for (auto& p : params) p = rng.next_uniform(-0.5, 0.5);
}

// Central difference along random unit directions against grad . d.
template <typename Loss>
double worst_probe(std::vector<double>& params, const Loss& loss, const std::vector<double>& grad,
                   std::size_t probes, CounterRng& rng, double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t k = 0; k < probes; ++k) {
    std::vector<double> d(params.size());
    double norm = 0.0;
    for (auto& x : d) {
      x = rng.next_uniform(-1.0, 1.0);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    double analytic = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] /= norm;
      analytic += grad[i] * d[i];
    }
    const auto base = params;
    for (std::size_t i = 0; i < d.size(); ++i) params[i] = base[i] + h * d[i];
    const double up = loss();
    for (std::size_t i = 0; i < d.size(); ++i) params[i] = base[i] - h * d[i];
    const double down = loss();
    params = base;
    const double numeric = (up - down) / (2.0 * h);
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic - numeric) / scale);
  }
  return worst;
}

void gradients(Suite s, std::uint64_t seed) {
  constexpr std::size_t kProbes = 32;
  constexpr double kTol = 1e-4;
  std::vector<std::pair<std::string, std::unique_ptr<Environment>>> envs;
  envs.emplace_back("key_token", std::make_unique<KeyTokenBandit>());
  KitchenConfig kc;
  kc.height = kc.width = 3;
  envs.emplace_back("kitchen3x3", std::make_unique<TokenKitchen>(kc));
  auto root = CounterRng(seed).split("verify-gradients");
  for (const auto& [name, env] : envs) {
    const auto space = std::make_shared<const ContextSpace>(*env);
    for (auto backend : {Backend::Tabular, Backend::SmallNet}) {
      const auto tag = fmt::format("{} {}", name, to_string(backend));
      auto rng = root.split(tag);
      Actor actor(space, backend, 16, seed);
      Critic critic(space, backend, 16, seed);
      randomize(actor.net().params(), rng);
      randomize(critic.net().params(), rng);

      // Actor log-probability of individual actions.
      auto token_steps = random_steps(*env, actor, false, 8, rng.split("steps"));
      double worst = 0.0;
      for (std::size_t k = 0; k < kProbes; ++k) {
        const auto& st = token_steps[k % token_steps.size()];
        const LegalSet set(env->legal_actions(st.obs));
        std::vector<double> g(actor.net().num_params(), 0.0);
        actor.action_logprob_grad(st.obs, st.action, &set, g);
        auto f = [&] { return actor.action_logprob(st.obs, st.action, &set); };
        worst = std::max(worst, worst_probe(actor.net().params(), f, g, 1, rng));
      }
      s.at_most(fmt::format("{}: actor log-prob ({} probes)", tag, kProbes), worst, kTol);

      // Critic loss.
      std::vector<std::size_t> idx(token_steps.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::vector<double> gc(critic.net().num_params(), 0.0);
      critic_loss(token_steps, idx, critic, gc);
      auto fc = [&] { return critic_loss(token_steps, idx, critic, {}); };
      s.at_most(fmt::format("{}: critic loss ({} probes)", tag, kProbes), worst_probe(critic.net().params(), fc, gc, kProbes, rng), kTol);

      // Policy loss: token units and TWOSOME action units.
      for (bool action_level : {false, true}) {
        auto steps = action_level ? random_steps(*env, actor, true, 8, rng.split("action-steps")) : token_steps;
        std::vector<double> gp(actor.net().num_params(), 0.0);
        policy_loss(steps, idx, actor, 0.2, 0.01, gp);
        auto fp = [&] { return policy_loss(steps, idx, actor, 0.2, 0.01, {}).loss; };
        s.at_most(fmt::format("{}: policy loss, {} units ({} probes)", tag, action_level ? "action" : "token", kProbes),
                  worst_probe(actor.net().params(), fp, gp, kProbes, rng), kTol);
      }
    }
  }
}

Trajectory random_trajectory(CounterRng& rng, double gamma_a) {
  const auto steps_n = 1 + rng.next_below(6);
  const bool terminal = rng.next_uniform() < 0.5;
  std::vector<StepRecord> steps;
  for (std::uint64_t t = 0; t < steps_n; ++t) {
    StepRecord r;
    r.obs.id = rng.next_below(5);
    r.next_obs.id = rng.next_below(5);
    const auto len = 1 + rng.next_below(8);
    for (std::uint64_t j = 0; j < len; ++j) {
      r.action.tokens.push_back(static_cast<TokenId>(rng.next_below(6)));
      r.token_logprobs.push_back(-rng.next_uniform(0.0, 3.0));
    }
    for (std::uint64_t j = 0; j <= len; ++j) r.token_values.push_back(rng.next_uniform(-2.0, 2.0));
    r.reward = rng.next_uniform(-1.0, 1.0);
    r.done = terminal && t + 1 == steps_n;
    if (r.done) r.token_values.back() = 0.0;
    steps.push_back(std::move(r));
  }
  return Trajectory(std::move(steps), gamma_a);
}

void telescoping(Suite s, std::uint64_t seed) {
  auto rng = CounterRng(seed).split("verify-telescoping");
  std::size_t mismatches = 0;
  double worst = 0.0;
  double worst_gae = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double gamma_a = rng.next_uniform(0.5, 1.0);
    const auto traj = random_trajectory(rng, gamma_a);
    const auto naive = naive_token_targets(traj, 1.0, gamma_a);
    const auto bad = bad_targets(traj, gamma_a);
    for (std::size_t i = 0; i < bad.value_target.size(); ++i) {
      if (std::bit_cast<std::uint64_t>(naive.value_target[i]) != std::bit_cast<std::uint64_t>(bad.value_target[i]) ||
          std::bit_cast<std::uint64_t>(naive.advantage[i]) != std::bit_cast<std::uint64_t>(bad.advantage[i])) {
        ++mismatches;
      }
    }
    const auto delta = token_residuals(traj, BackupMode::bad(gamma_a));
    // GAE telescopes across steps when the bootstrap slot of step t is the
    // first slot of step t+1.
    std::vector<std::vector<double>> chained;
    for (std::size_t t = 0; t < traj.size(); ++t) {
      chained.push_back(traj[t].token_values);
      if (t + 1 < traj.size()) chained.back().back() = traj[t + 1].token_values[0];
    }
    const auto linked = traj.with_token_values(chained);
    const auto gae = gae_token_advantages(linked, BackupMode::bad(gamma_a), 1.0);
    std::size_t flat = 0;
    double tail = 0.0;  // discounted return-to-go in action units
    std::vector<double> rtg(traj.size());
    for (std::size_t t = linked.size(); t-- > 0;) {
      const auto& st = linked[t];
      tail = st.reward + (st.done ? 0.0 : gamma_a * (t + 1 < traj.size() ? tail : st.token_values.back()));
      rtg[t] = tail;
    }
    for (std::size_t t = 0; t < traj.size(); ++t) {
      const auto& st = traj[t];
      const double boot = st.done ? 0.0 : st.token_values.back();
      double sum = 0.0;
      for (std::size_t j = 0; j < st.action.size(); ++j) sum += delta[flat + j];
      worst = std::max(worst, std::abs(sum - (st.reward + gamma_a * boot - st.token_values[0])));
      worst_gae = std::max(worst_gae, std::abs(gae[flat] - (rtg[t] - linked[t].token_values[0])));
      flat += st.action.size();
    }
  }
  s.at_most("naive(gamma_w=1) vs BAD bitwise mismatches (1000 trajectories)", static_cast<double>(mismatches), 0.0);
  s.at_most("sum_j delta_t^j vs R + gamma_a V(o',0) - V(o,w^1)", worst, 1e-10);
  s.at_most("GAE(lambda=1) at w^1 vs discounted return minus V(o,w^1)", worst_gae, 1e-10);
}

}  // namespace

bool VerifyReport::ok() const noexcept { return failures() == 0; }

std::size_t VerifyReport::failures() const noexcept {
  return static_cast<std::size_t>(std::count_if(checks.begin(), checks.end(), [](const auto& c) { return !c.pass; }));
}

const std::vector<std::string>& verify_suites() {
  static const std::vector<std::string> suites{"consistency", "discrepancy", "gradients", "telescoping"};
  return suites;
}

VerifyReport verify(std::string_view suite, std::uint64_t seed) {
  VerifyReport report;
  const auto& all = verify_suites();
  if (suite != "all" && std::find(all.begin(), all.end(), suite) == all.end()) {
    throw UsageError(fmt::format("unknown verify suite '{}' (consistency, discrepancy, gradients, telescoping, all)", suite));
  }
  auto want = [&](std::string_view name) { return suite == "all" || suite == name; };
  if (want("consistency")) consistency({"consistency", &report.checks});
  if (want("discrepancy")) discrepancy({"discrepancy", &report.checks});
  if (want("gradients")) gradients({"gradients", &report.checks}, seed);
  if (want("telescoping")) telescoping({"telescoping", &report.checks}, seed);
  return report;
}

void write_report(std::ostream& out, const VerifyReport& report) {
  for (const auto& c : report.checks) {
    out << fmt::format("{:<4} {:<12} {:<62} observed {:<12.4g} {} {:.0e}\n", c.pass ? "PASS" : "FAIL", c.suite,
                       c.name, c.observed, c.relation, c.tolerance);
  }
  out << fmt::format("{} checks, {} failed\n", report.checks.size(), report.failures());
}

}  // namespace tokrl
