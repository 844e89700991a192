// Acceptance suite: one PASS/FAIL line per criterion, exit code 1 on any
// failure. Reference values come from the brute-force solvers in
// brute_force.hpp, hand-derived closed forms and finite differences.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <set>

#include <unistd.h>

#include <fmt/format.h>

#include "brute_force.hpp"
#include "tokrl/backups.hpp"
#include "tokrl/config.hpp"
#include "tokrl/envs.hpp"
#include "tokrl/oracle.hpp"
#include "tokrl/rng.hpp"
#include "tokrl/trainer.hpp"

using namespace tokrl;
namespace fs = std::filesystem;

namespace {

constexpr double kGammaA = 0.95;

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Library BAD (or naive) node values against brute-force prefix values.
double max_prefix_gap(const Environment& env, const BackupMode& mode) {
  const auto model = enumerate_prefix_model(env);
  const auto dp = value_iteration(model, mode);
  const auto bf_model = bf::explore(env);
  const double gw = mode.intra_discount();
  const auto v = bf::solve(bf_model, kGammaA, gw);
  double gap = 0.0;
  for (std::size_t n = 0; n < model.num_nodes(); ++n) {
    const auto& node = model.nodes[n];
    const double ref = node.prefix.empty() ? v.at(node.obs)
                                           : bf::prefix_value(bf_model, node.obs, node.prefix, v, kGammaA, gw);
    gap = std::max(gap, std::abs(dp.q_node[n] - ref));
  }
  return gap;
}

Outcome criterion_consistency() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::vector<std::unique_ptr<Environment>> envs;
  envs.push_back(std::make_unique<KeyTokenBandit>());
  for (std::size_t k : {1, 3}) {
    for (std::size_t len : {2, 4, 8}) envs.push_back(make_chain_env(k, len));
  }
  KitchenConfig kc;
  kc.height = kc.width = 3;
  envs.push_back(std::make_unique<TokenKitchen>(kc));
  for (const auto& env : envs) worst = std::max(worst, max_prefix_gap(*env, BackupMode::bad(kGammaA)));
  const double t = seconds_since(t0);
  return {worst <= 1e-8 && t < 10.0, fmt::format("max gap {:.3g} over {} envs in {:.2f}s (tol 1e-8, < 10s)", worst, envs.size(), t)};
}

// (1 - gw^n) R + gamma_a (1 - gw^{n + L' - 1}) Q' with n = |a| - j.
double hand_closed_form(double R, double ga, double gw, std::size_t len, std::size_t j, double q_next,
                        std::size_t len_next) {
  const double n = static_cast<double>(len - j);
  return (1.0 - std::pow(gw, n)) * R + ga * (1.0 - std::pow(gw, n + static_cast<double>(len_next) - 1.0)) * q_next;
}

Outcome criterion_discrepancy() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t probes = 0;
  std::vector<std::unique_ptr<Environment>> envs;
  envs.push_back(std::make_unique<KeyTokenBandit>());
  envs.push_back(make_two_step_env(1.0, 2.0, 0.5));
  for (std::size_t len : {2, 3, 4, 8}) envs.push_back(make_chain_env(1, len));
  for (std::size_t len : {2, 3, 4, 8}) envs.push_back(make_chain_env(2, len));
  for (const auto& env : envs) {
    const auto model = enumerate_prefix_model(*env);
    const auto bfm = bf::explore(*env);
    const auto v_action = bf::solve(bfm, kGammaA);
    for (double gw : {0.5, 0.8, 0.9, 0.95}) {
      const auto naive = value_iteration(model, BackupMode::naive(gw, kGammaA));
      const auto v_naive = bf::solve(bfm, kGammaA, gw);
      for (std::size_t n = 0; n < model.num_nodes(); ++n) {
        const auto& node = model.nodes[n];
        if (node.prefix.empty()) continue;
        // Completion chosen by each backup; probe only where they agree and
        // the successor has terminal actions of one common length.
        const bf::Edge* best_a = nullptr;
        const bf::Edge* best_n = nullptr;
        double qa = -1e300, qn = -1e300;
        for (const auto& e : bfm.edges.at(node.obs)) {
          if (!bf::is_prefix(node.prefix, e.action)) continue;
          const double a = bf::q_action(e, v_action, kGammaA);
          const double b = std::pow(gw, static_cast<double>(e.action.size() - node.prefix.size())) *
                           bf::q_action(e, v_naive, kGammaA);
          if (a > qa + 1e-12) qa = a, best_a = &e;
          if (b > qn + 1e-12) qn = b, best_n = &e;
        }
        if (best_a != best_n) continue;
        double q_next = 0.0;
        std::size_t len_next = 1;
        if (!best_a->done) {
          const auto& next = bfm.edges.at(best_a->next);
          bool simple = true;
          for (const auto& e : next) simple = simple && e.done && e.action.size() == next.front().action.size();
          if (!simple) continue;
          q_next = -1e300;
          for (const auto& e : next) q_next = std::max(q_next, e.reward);
          len_next = next.front().action.size();
        }
        const double observed = qa - naive.q_node[n];
        const double expected =
            hand_closed_form(best_a->reward, kGammaA, gw, best_a->action.size(), node.prefix.size(), q_next, len_next);
        worst = std::max(worst, std::abs(observed - expected));
        if (node.prefix.size() < best_a->action.size()) {
          const double lib = discrepancy_closed_form(best_a->reward, kGammaA, gw, best_a->action.size(),
                                                     node.prefix.size(), q_next, len_next);
          worst = std::max(worst, std::abs(lib - expected));
        }
        ++probes;
      }
    }
  }
  // Hand instance: R=1, gamma_w=0.5, |a|=3, j=1, Q'=2, |a'|=2 -> 0.75 + 0.95 * 0.875 * 2.
  const double hand = 0.75 + 0.95 * 0.875 * 2.0;
  const auto two = make_two_step_env(1.0, 2.0, 0.5);
  const auto model = enumerate_prefix_model(*two);
  const auto naive = value_iteration(model, BackupMode::naive(0.5, kGammaA));
  const auto action = value_iteration(model, BackupMode::action_level(kGammaA));
  double instance = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t n = 0; n < model.num_nodes(); ++n) {
    if (model.nodes[n].obs == 0 && model.nodes[n].prefix.size() == 1) instance = action.q_node[n] - naive.q_node[n];
  }
  const double hand_err = std::max(std::abs(instance - hand), std::abs(hand - 2.4125));
  const double t = seconds_since(t0);
  const bool ok = worst <= 1e-9 && hand_err <= 1e-9 && probes >= 20 && t < 10.0;
  return {ok, fmt::format("{} probes, max |DP gap - closed form| {:.3g}; hand instance {:.10g} (2.4125); {:.2f}s", probes,
                          worst, instance, t)};
}

double brute_force_gap(const Environment& env, double gw) {
  const auto m = bf::explore(env);
  const auto va = bf::solve(m, kGammaA);
  const auto vn = bf::solve(m, kGammaA, gw);
  double gap = 0.0;
  for (const auto& [o, p] : bf::contexts(m)) {
    gap = std::max(gap, std::abs(bf::context_value(m, o, p, va, kGammaA) - bf::context_value(m, o, p, vn, kGammaA, gw)));
  }
  return gap;
}

Outcome criterion_insights() {
  const auto t0 = Clock::now();
  const std::vector<double> gws{1.0, 0.95, 0.9, 0.8, 0.5};
  const std::vector<std::size_t> lens{2, 4, 8};
  const auto rows = discrepancy_sweep(3, gws, lens, kGammaA);
  std::map<std::pair<double, std::size_t>, double> gap;
  for (const auto& r : rows) gap[{r.gamma_w, r.action_len}] = r.max_gap;
  // Recompute each cell with the brute-force solver.
  double recompute = 0.0;
  for (auto len : lens) {
    const auto env = make_chain_env(3, len);
    for (double gw : gws) recompute = std::max(recompute, std::abs(brute_force_gap(*env, gw) - gap.at({gw, len})));
  }
  std::size_t violations = 0;
  double at_one = 0.0;
  for (auto len : lens) {
    at_one = std::max(at_one, gap.at({1.0, len}));
    for (std::size_t i = 1; i < gws.size(); ++i) violations += gap.at({gws[i], len}) < gap.at({gws[i - 1], len});
  }
  for (auto gw : gws) {
    for (std::size_t i = 1; i < lens.size(); ++i) violations += gap.at({gw, lens[i]}) < gap.at({gw, lens[i - 1]});
  }
  const double t = seconds_since(t0);
  return {violations == 0 && at_one == 0.0 && recompute <= 1e-9 && t < 30.0,
          fmt::format("{} monotonicity violations, gap at gamma_w=1 {:.3g}, gap(0.5,|a|=8) {:.4f}, brute-force recompute {:.3g}; {:.2f}s",
                      violations, at_one, gap.at({0.5, 8}), recompute, t)};
}

}  // namespace

namespace {

Trajectory random_trajectory(CounterRng& rng, double gamma_a) {
  const auto n = 1 + rng.next_below(6);
  const bool terminal = rng.next_uniform() < 0.5;
  std::vector<StepRecord> steps;
  for (std::uint64_t t = 0; t < n; ++t) {
    StepRecord r;
    r.obs.id = rng.next_below(4);
    r.next_obs.id = rng.next_below(4);
    const auto len = 1 + rng.next_below(6);
    for (std::uint64_t j = 0; j < len; ++j) {
      r.action.tokens.push_back(static_cast<TokenId>(rng.next_below(5)));
      r.token_logprobs.push_back(-rng.next_uniform(0.0, 2.0));
    }
    for (std::uint64_t j = 0; j <= len; ++j) r.token_values.push_back(rng.next_uniform(-3.0, 3.0));
    r.reward = rng.next_uniform(-1.0, 1.0);
    r.done = terminal && t + 1 == n;
    if (r.done) r.token_values.back() = 0.0;
    steps.push_back(std::move(r));
  }
  return Trajectory(std::move(steps), gamma_a);
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  }
  return true;
}

Outcome criterion_operator_identity() {
  auto rng = CounterRng(2024).split("identity");
  std::size_t mismatched = 0;
  for (int k = 0; k < 1000; ++k) {
    const double ga = rng.next_uniform(0.5, 1.0);
    const auto traj = random_trajectory(rng, ga);
    // Random value table keyed by (obs, prefix).
    const auto table_key = rng.next_bits();
    const TokenValueFn V = [table_key](const Observation& o, TokenSpan p) {
      std::string key = std::to_string(o.id);
      for (auto w : p) key += "," + std::to_string(w);
      return CounterRng(table_key).split(key).uniform_at(0) * 4.0 - 2.0;
    };
    const auto a = naive_token_targets(traj, 1.0, ga);
    const auto b = bad_targets(traj, ga);
    const auto c = naive_token_targets(traj, V, 1.0, ga);
    const auto d = bad_targets(traj, V, ga);
    if (!same_bits(a.value_target, b.value_target) || !same_bits(a.advantage, b.advantage) ||
        !same_bits(c.value_target, d.value_target) || !same_bits(c.advantage, d.advantage)) {
      ++mismatched;
    }
  }
  return {mismatched == 0, fmt::format("{} of 1000 trajectories differ (slot and value-table forms)", mismatched)};
}

// Gradient probes -----------------------------------------------------------

std::vector<StepData> random_batch(Environment& env, const Actor& actor, bool action_level, std::size_t n,
                                   CounterRng rng) {
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
      for (double lp : actor.token_logprobs(obs, s.action, &set)) s.old_logprobs.push_back(lp + rng.next_uniform(-0.4, 0.4));
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

// Relative error of grad . d against a central difference along unit d.
template <typename F>
double probe(std::vector<double>& params, const std::vector<double>& grad, const F& f, CounterRng& rng) {
  constexpr double h = 1e-5;
  std::vector<double> d(params.size());
  double norm = 0.0;
  for (auto& x : d) {
    x = rng.next_uniform(-1.0, 1.0);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  double analytic = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) analytic += grad[i] * (d[i] /= norm);
  const auto base = params;
  for (std::size_t i = 0; i < d.size(); ++i) params[i] = base[i] + h * d[i];
  const double up = f();
  for (std::size_t i = 0; i < d.size(); ++i) params[i] = base[i] - h * d[i];
  const double down = f();
  params = base;
  const double numeric = (up - down) / (2.0 * h);
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

Outcome criterion_gradients() {
  std::map<std::string, std::pair<std::size_t, double>> stats;  // quantity -> (probes, worst)
  auto record = [&](const std::string& q, double err) {
    auto& s = stats[q];
    ++s.first;
    s.second = std::max(s.second, err);
  };
  std::vector<std::unique_ptr<Environment>> envs;
  envs.push_back(std::make_unique<KeyTokenBandit>());
  KitchenConfig kc;
  kc.height = kc.width = 3;
  envs.push_back(std::make_unique<TokenKitchen>(kc));
  auto rng = CounterRng(99).split("gradients");
  for (const auto& env : envs) {
    const auto space = std::make_shared<const ContextSpace>(*env);
    for (auto backend : {Backend::Tabular, Backend::SmallNet}) {
      Actor actor(space, backend, 12, 5);
      Critic critic(space, backend, 12, 6);
      for (auto& p : actor.net().params()) p = rng.next_uniform(-0.5, 0.5);
      for (auto& p : critic.net().params()) p = rng.next_uniform(-0.5, 0.5);
      const auto tokens = random_batch(*env, actor, false, 6, rng.split(env->name() + to_string(backend)));
      const auto actions = random_batch(*env, actor, true, 6, rng.split(env->name() + to_string(backend) + "a"));
      std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5};
      for (int k = 0; k < 16; ++k) {
        const auto& s = tokens[k % tokens.size()];
        const LegalSet set(env->legal_actions(s.obs));
        std::vector<double> g(actor.net().num_params(), 0.0);
        actor.action_logprob_grad(s.obs, s.action, &set, g);
        record("actor log-prob", probe(actor.net().params(), g, [&] { return actor.action_logprob(s.obs, s.action, &set); }, rng));

        std::vector<double> gc(critic.net().num_params(), 0.0);
        critic_loss(tokens, idx, critic, gc);
        record("critic loss", probe(critic.net().params(), gc, [&] { return critic_loss(tokens, idx, critic, {}); }, rng));

        const auto& batch = k % 2 == 0 ? tokens : actions;
        std::vector<double> gp(actor.net().num_params(), 0.0);
        policy_loss(batch, idx, actor, 0.2, 0.01, gp);
        record("policy loss", probe(actor.net().params(), gp, [&] { return policy_loss(batch, idx, actor, 0.2, 0.01, {}).loss; }, rng));
      }
    }
  }
  bool ok = true;
  std::string detail;
  for (const auto& [q, s] : stats) {
    ok = ok && s.first >= 30 && s.second <= 1e-4;
    detail += fmt::format("{}{}: {} probes, worst rel {:.2g}", detail.empty() ? "" : "; ", q, s.first, s.second);
  }
  return {ok, detail + " (tol 1e-4)"};
}

// Soft values of the bandit by direct summation over completions.
Outcome criterion_soft() {
  KeyTokenBandit env;
  const auto model = enumerate_prefix_model(env);
  const auto bfm = bf::explore(env);
  const auto& edges = bfm.edges.at(0);
  // Uniform reference: each token has probability 1/(number of distinct continuations).
  auto ref_prob = [&](std::span<const TokenId> p, const Action& a) {
    double prob = 1.0;
    for (std::size_t k = p.size(); k < a.size(); ++k) {
      std::set<TokenId> next;
      for (const auto& e : edges) {
        if (bf::is_prefix(a.prefix(k), e.action)) next.insert(e.action.tokens[k]);
      }
      prob /= static_cast<double>(next.size());
    }
    return prob;
  };
  double worst = 0.0;
  const auto bad = value_iteration(model, BackupMode::bad(kGammaA));
  bool beta0_exact = true;
  for (double beta : {0.0, 0.1}) {
    const auto soft = value_iteration(model, BackupMode::soft_bad(beta, kGammaA));
    for (std::size_t n = 0; n < model.num_nodes(); ++n) {
      const auto& p = model.nodes[n].prefix;
      double ref;
      if (beta == 0.0) {
        ref = -1e300;
        for (const auto& e : edges) {
          if (bf::is_prefix(p, e.action)) ref = std::max(ref, e.reward);
        }
      } else {
        double z = 0.0;
        for (const auto& e : edges) {
          if (bf::is_prefix(p, e.action)) z += ref_prob(p, e.action) * std::exp(e.reward / beta);
        }
        ref = beta * std::log(z);
      }
      worst = std::max(worst, std::abs(soft.q_node[n] - ref));
    }
    if (beta == 0.0) beta0_exact = same_bits(soft.q_node, bad.q_node);
  }
  return {worst <= 1e-8 && beta0_exact,
          fmt::format("max |sBAD - soft Bellman| {:.3g} over beta in {{0, 0.1}} (tol 1e-8); beta=0 equals BAD bitwise: {}",
                      worst, beta0_exact ? "yes" : "no")};
}

Outcome criterion_telescoping() {
  auto rng = CounterRng(77).split("telescoping");
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double ga = rng.next_uniform(0.5, 1.0);
    const auto traj = random_trajectory(rng, ga);
    const auto delta = token_residuals(traj, BackupMode::bad(ga));
    std::size_t flat = 0;
    for (const auto& s : traj.steps()) {
      double sum = 0.0;
      for (std::size_t j = 0; j < s.action.size(); ++j) sum += delta[flat + j];
      const double boot = s.done ? 0.0 : s.token_values.back();
      worst = std::max(worst, std::abs(sum - (s.reward + ga * boot - s.token_values.front())));
      flat += s.action.size();
    }
  }
  return {worst <= 1e-10, fmt::format("max |sum_j delta - (R + gamma_a V(o',empty) - V(o,w^1))| {:.3g} (tol 1e-10)", worst)};
}

}  // namespace

namespace {

const fs::path kConfigs = fs::path(TOKRL_SOURCE_DIR) / "configs";

struct SeedRun {
  std::vector<EpisodeStat> episodes;
  std::size_t total = 0;
};

SeedRun train_seed(const ExperimentConfig& config, std::uint64_t seed) {
  const auto tc = config.train_config(seed);
  auto artifacts = train(tc, config.env_factory());
  return {std::move(artifacts.episodes), tc.total_env_steps};
}

// Mean over episodes that ended in the last `fraction` of training.
double final_mean(const SeedRun& run, double fraction, bool discounted) {
  const double cut = (1.0 - fraction) * static_cast<double>(run.total);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& e : run.episodes) {
    if (static_cast<double>(e.env_steps) <= cut) continue;
    sum += discounted ? e.discounted_return : e.episode_return;
    ++n;
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}

double last_episodes_mean(const SeedRun& run, std::size_t count) {
  const auto n = std::min(count, run.episodes.size());
  double sum = 0.0;
  for (auto i = run.episodes.size() - n; i < run.episodes.size(); ++i) sum += run.episodes[i].episode_return;
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3};
std::map<std::uint64_t, SeedRun> g_kitchen_poad;  // shared by the kitchen criteria

Outcome criterion_learning() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail = "bandit final-100 return";
  const auto bandit = ExperimentConfig::load(kConfigs / "poad_keytoken.cfg");
  for (auto seed : kSeeds) {
    const double r = last_episodes_mean(train_seed(bandit, seed), 100);
    ok = ok && r >= 0.95;
    detail += fmt::format(" {:.3f}", r);
  }
  const auto kitchen = ExperimentConfig::load(kConfigs / "poad_kitchen.cfg");
  const auto env = kitchen.env_factory()();
  const double optimum = bf::horizon_return(bf::explore(*env), kGammaA, 50);
  detail += fmt::format(" (>= 0.95); kitchen 5x5 optimal discounted {:.4f}, final-10% fraction", optimum);
  for (auto seed : kSeeds) {
    g_kitchen_poad[seed] = train_seed(kitchen, seed);
    const double frac = final_mean(g_kitchen_poad[seed], 0.1, true) / optimum;
    ok = ok && frac >= 0.9;
    detail += fmt::format(" {:.3f}", frac);
  }
  return {ok, detail + fmt::format(" (>= 0.9); {:.0f}s", seconds_since(t0))};
}

Outcome criterion_ablation() {
  const auto base = ExperimentConfig::load(kConfigs / "poad_keytoken.cfg");
  const std::vector<std::string> gws{"0.95", "0.9", "0.8", "0.5"};
  bool ok = true;
  std::string detail;
  for (auto seed : kSeeds) {
    const double poad = final_mean(train_seed(base, seed), 0.1, false);
    std::vector<double> ntpo;
    for (const auto& gw : gws) {
      auto c = base;
      c.set("algo.name", "ntpo");
      c.set("algo.gamma_w", gw);
      ntpo.push_back(final_mean(train_seed(c, seed), 0.1, false));
    }
    for (std::size_t i = 0; i < ntpo.size(); ++i) {
      ok = ok && poad >= ntpo[i] && (i == 0 || ntpo[i] <= ntpo[i - 1]);
    }
    detail += fmt::format("{}seed {}: POAD {:.4f} NTPO(0.95,0.9,0.8,0.5) {:.4f} {:.4f} {:.4f} {:.4f}",
                          detail.empty() ? "" : "; ", seed, poad, ntpo[0], ntpo[1], ntpo[2], ntpo[3]);
  }
  return {ok, detail};
}

Outcome criterion_gamma_a() {
  bool ok = true;
  std::string detail;
  for (const char* file : {"poad_kitchen.cfg", "action_ppo_kitchen.cfg"}) {
    const auto base = ExperimentConfig::load(kConfigs / file);
    detail += fmt::format("{}{}:", detail.empty() ? "" : "; ", base.get("algo.name"));
    for (auto seed : kSeeds) {
      auto undiscounted = base;
      undiscounted.set("algo.gamma_a", "1.0");
      const bool reuse = base.get("algo.name") == "poad" && g_kitchen_poad.count(seed);
      const double r95 = final_mean(reuse ? g_kitchen_poad[seed] : train_seed(base, seed), 0.1, false);
      const double r100 = final_mean(train_seed(undiscounted, seed), 0.1, false);
      ok = ok && r95 >= r100;
      detail += fmt::format(" s{} {:.4f} vs {:.4f}", seed, r95, r100);
    }
  }
  return {ok, detail + " (gamma_a=0.95 vs 1.0, final-10% return)"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Outcome criterion_determinism() {
  const auto root = fs::temp_directory_path() / fmt::format("tokrl_determinism_{}", ::getpid());
  fs::remove_all(root);
  fs::create_directories(root);
  std::ofstream(root / "det.cfg") << "[env]\nname = kitchen\nheight = 3\nwidth = 3\n\n[train]\n"
                                     "rollout_threads = 1\ntotal_env_steps = 3072\nseed = 1,2\n";
  for (const char* run : {"a", "b"}) {
    const auto cmd = fmt::format("\"{}\" run \"{}\" --out \"{}\" 2>/dev/null >/dev/null", TOKRL_CLI,
                                 (root / "det.cfg").string(), (root / run).string());
    if (std::system(cmd.c_str()) != 0) return {false, "run invocation failed: " + cmd};
  }
  std::size_t files = 0;
  bool same = true;
  for (const char* f : {"metrics_seed1.csv", "metrics_seed2.csv", "merged.csv"}) {
    const auto a = slurp(root / "a" / f);
    same = same && !a.empty() && a == slurp(root / "b" / f);
    ++files;
  }
  fs::remove_all(root);
  return {same, fmt::format("{} CSV files byte-identical across two runs: {}", files, same ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    Outcome (*fn)();
  };
  const std::vector<Criterion> all{
      {1, "BAD consistency", criterion_consistency},
      {2, "discrepancy exactness", criterion_discrepancy},
      {3, "discrepancy monotonicity", criterion_insights},
      {4, "operator identity", criterion_operator_identity},
      {5, "gradient correctness", criterion_gradients},
      {6, "POAD learning", criterion_learning},
      {7, "gamma_w ablation ordering", criterion_ablation},
      {8, "gamma_a necessity", criterion_gamma_a},
      {9, "sBAD equality", criterion_soft},
      {10, "telescoping advantage", criterion_telescoping},
      {11, "determinism", criterion_determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << fmt::format("criterion {:>2} {:<27} {}  {}", c.id, c.name, o.pass ? "PASS" : "FAIL", o.detail)
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
