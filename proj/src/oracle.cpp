#include "tokrl/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <ostream>

#include <fmt/format.h>

#include "tokrl/envs.hpp"
#include "tokrl/rng.hpp"

namespace tokrl {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// beta * log( mean_i exp(x_i / beta) ); the max when beta == 0.
double soft_aggregate(std::span<const double> x, double beta) {
  double m = kNegInf;
  for (double v : x) m = std::max(m, v);
  if (beta == 0.0 || x.empty()) return m;
  double s = 0.0;
  for (double v : x) s += std::exp((v - m) / beta);
  return m + beta * std::log(s / static_cast<double>(x.size()));
}

}  // namespace

std::uint64_t PrefixModel::fingerprint() const noexcept {
  std::uint64_t h = fnv1a(env_name);
  h = mix64(h ^ vocab_hash);
  h = mix64(h ^ nodes.size());
  for (auto o : reachable) h = mix64(h ^ o);
  return h;
}

PrefixModel enumerate_prefix_model(const Environment& env, std::size_t node_budget) {
  PrefixModel model;
  model.env_name = env.name();
  model.vocab_hash = env.vocab().hash();
  const std::size_t n_obs = env.num_observations();
  model.root_of.assign(n_obs, PrefixModel::npos);
  model.actions.resize(n_obs);
  model.leaf_of.resize(n_obs);

  auto sim = env.clone();
  std::vector<Observation> seen(n_obs);
  std::deque<std::uint64_t> queue;
  auto new_node = [&](std::uint64_t obs, std::vector<TokenId> prefix) {
    if (model.nodes.size() >= node_budget) {
      throw TooLargeError(
          fmt::format("prefix model of '{}' exceeds the node budget of {}", env.name(), node_budget));
    }
    PrefixNode n;
    n.obs = obs;
    n.prefix = std::move(prefix);
    model.nodes.push_back(std::move(n));
    return model.nodes.size() - 1;
  };
  auto discover = [&](const Observation& obs) {
    if (obs.id >= n_obs) throw std::out_of_range("observation id beyond num_observations()");
    if (model.root_of[obs.id] != PrefixModel::npos) return model.root_of[obs.id];
    seen[obs.id] = obs;
    model.root_of[obs.id] = new_node(obs.id, {});
    model.reachable.push_back(obs.id);
    queue.push_back(obs.id);
    return model.root_of[obs.id];
  };
  for (const auto& s : env.start_observations()) {
    discover(s);
    model.starts.push_back(s.id);
  }

  while (!queue.empty()) {
    const auto id = queue.front();
    queue.pop_front();
    const Observation obs = seen[id];
    auto legal = env.legal_actions(obs);
    LegalSet check(legal);
    model.actions[id] = legal;
    for (std::size_t k = 0; k < legal.size(); ++k) {
      const auto& a = legal[k];
      std::size_t n = model.root_of[id];
      for (std::size_t j = 0; j < a.size(); ++j) {
        const TokenId w = a.tokens[j];
        auto& node = model.nodes[n];
        auto it = std::lower_bound(node.tokens.begin(), node.tokens.end(), w);
        const auto pos = static_cast<std::size_t>(it - node.tokens.begin());
        if (it != node.tokens.end() && *it == w) {
          n = node.children[pos];
          continue;
        }
        const std::size_t c = new_node(id, std::vector<TokenId>(a.tokens.begin(), a.tokens.begin() + static_cast<std::ptrdiff_t>(j + 1)));
        auto& parent = model.nodes[n];
        parent.tokens.insert(parent.tokens.begin() + static_cast<std::ptrdiff_t>(pos), w);
        parent.children.insert(parent.children.begin() + static_cast<std::ptrdiff_t>(pos), c);
        n = c;
      }
      sim->restore(obs);
      const auto result = sim->step(a);
      model.nodes[n].leaf = true;
      model.nodes[n].action = k;
      model.nodes[n].reward = result.reward;
      model.nodes[n].terminal = result.done;
      if (!result.done) {
        const std::size_t r = discover(result.obs);
        model.nodes[n].next_root = r;
      }
      model.leaf_of[id].push_back(n);
    }
  }
  return model;
}

std::size_t simulation_mismatches(const PrefixModel& model, const Environment& env,
                                  std::size_t paths, std::size_t max_len, std::uint64_t seed) {
  auto sim = env.clone();
  const CounterRng rng = CounterRng(seed).split("sim-paths");
  std::size_t bad = 0;
  for (std::size_t p = 0; p < paths; ++p) {
    CounterRng path_rng = rng.split(p);
    const auto start = model.starts[path_rng.next_below(model.starts.size())];
    std::size_t root = model.root_of[start];
    Observation obs{start, {}};
    for (const auto& s : env.start_observations()) {
      if (s.id == start) obs = s;
    }
    sim->restore(obs);
    for (std::size_t t = 0; t < max_len; ++t) {
      const auto id = model.nodes[root].obs;
      const auto k = path_rng.next_below(model.actions[id].size());
      const auto& leaf = model.nodes[model.leaf_of[id][k]];
      const auto result = sim->step(model.actions[id][k]);
      const bool same_next = result.done || model.nodes[leaf.next_root].obs == result.obs.id;
      if (result.reward != leaf.reward || result.done != leaf.terminal || !same_next) {
        ++bad;
        break;
      }
      if (result.done) break;
      root = leaf.next_root;
      sim->restore(result.obs);
    }
  }
  return bad;
}

double DPResult::q_token(const PrefixModel& model, std::size_t node, TokenId token) const {
  const auto& n = model.nodes.at(node);
  auto it = std::lower_bound(n.tokens.begin(), n.tokens.end(), token);
  if (it == n.tokens.end() || *it != token) {
    throw std::out_of_range(fmt::format("token {} does not continue node {}", token, node));
  }
  return q_node[n.children[static_cast<std::size_t>(it - n.tokens.begin())]];
}

namespace {

void check_options(const ValueIterationOptions& o) {
  if (!(o.tol > 0.0)) throw ConfigError("value iteration tolerance must be > 0");
}

// Node values implied by action values: each node takes the (soft) aggregate
// of its completions, weighting completions by the product of uniform token
// probabilities along the path when beta > 0.
std::vector<double> node_values_from_actions(const PrefixModel& model,
                                             const std::vector<std::vector<double>>& q_action,
                                             double beta) {
  std::vector<double> q(model.nodes.size(), kNegInf);
  if (beta == 0.0) {
    for (auto id : model.reachable) {
      for (std::size_t k = 0; k < model.leaf_of[id].size(); ++k) {
        q[model.leaf_of[id][k]] = q_action[id][k];
      }
    }
    for (std::size_t n = model.nodes.size(); n-- > 0;) {
      for (auto c : model.nodes[n].children) q[n] = std::max(q[n], q[c]);
    }
    return q;
  }
  // Log-sum-exp accumulators per node of log pbar(leaf | node) + Q / beta.
  std::vector<std::vector<std::pair<std::size_t, double>>> terms(model.nodes.size());
  for (auto id : model.reachable) {
    for (std::size_t k = 0; k < model.leaf_of[id].size(); ++k) {
      const auto& a = model.actions[id][k];
      std::vector<std::size_t> path{model.root_of[id]};
      std::vector<double> step_logp;
      for (TokenId w : a.tokens) {
        const auto& n = model.nodes[path.back()];
        step_logp.push_back(-std::log(static_cast<double>(n.tokens.size())));
        const auto pos = static_cast<std::size_t>(
            std::lower_bound(n.tokens.begin(), n.tokens.end(), w) - n.tokens.begin());
        path.push_back(n.children[pos]);
      }
      const double x = q_action[id][k] / beta;
      double logp = 0.0;  // log pbar(leaf | path[i]), built from the leaf upwards
      for (std::size_t i = path.size(); i-- > 0;) {
        terms[path[i]].emplace_back(path[i], logp + x);
        if (i > 0) logp += step_logp[i - 1];
      }
    }
  }
  for (std::size_t n = 0; n < model.nodes.size(); ++n) {
    if (terms[n].empty()) continue;
    double m = kNegInf;
    for (const auto& t : terms[n]) m = std::max(m, t.second);
    double s = 0.0;
    for (const auto& t : terms[n]) s += std::exp(t.second - m);
    q[n] = beta * (m + std::log(s));
  }
  return q;
}

DPResult iterate_actions(const PrefixModel& model, double beta, double gamma_a,
                         const ValueIterationOptions& options, BackupMode mode) {
  check_options(options);
  // Log reference probability of each leaf's action (uniform token choices).
  std::vector<double> leaf_logp(model.nodes.size(), 0.0);
  if (beta > 0.0) {
    for (auto id : model.reachable) {
      for (std::size_t k = 0; k < model.leaf_of[id].size(); ++k) {
        std::size_t n = model.root_of[id];
        double lp = 0.0;
        for (TokenId w : model.actions[id][k].tokens) {
          const auto& node = model.nodes[n];
          lp -= std::log(static_cast<double>(node.tokens.size()));
          n = node.children[static_cast<std::size_t>(
              std::lower_bound(node.tokens.begin(), node.tokens.end(), w) - node.tokens.begin())];
        }
        leaf_logp[model.leaf_of[id][k]] = lp;
      }
    }
  }
  std::vector<std::vector<double>> q(model.actions.size());
  for (auto id : model.reachable) q[id].assign(model.actions[id].size(), options.init);
  auto value_of = [&](const std::vector<std::vector<double>>& qa, std::uint64_t id) {
    const auto& row = qa[id];
    double m = kNegInf;
    for (double v : row) m = std::max(m, v);
    if (beta == 0.0) return m;
    double s = 0.0;
    for (std::size_t k = 0; k < row.size(); ++k) {
      s += std::exp(leaf_logp[model.leaf_of[id][k]] + (row[k] - m) / beta);
    }
    return m + beta * std::log(s);
  };

  DPResult res;
  res.mode = mode;
  res.fingerprint = model.fingerprint();
  std::vector<double> v(model.actions.size(), 0.0);
  for (std::size_t it = 1; it <= options.max_iters; ++it) {
    for (auto id : model.reachable) v[id] = value_of(q, id);
    double resid = 0.0;
    for (auto id : model.reachable) {
      for (std::size_t k = 0; k < q[id].size(); ++k) {
        const auto& leaf = model.nodes[model.leaf_of[id][k]];
        const double next = leaf.reward + (leaf.terminal ? 0.0 : gamma_a * v[model.nodes[leaf.next_root].obs]);
        resid = std::max(resid, std::abs(next - q[id][k]));
        q[id][k] = next;  // rows only read v, so in-place is still a synchronous sweep
      }
    }
    res.residual_trace.push_back(resid);
    res.iterations = it;
    res.residual = resid;
    if (resid <= options.tol) {
      res.q_action = std::move(q);
      res.q_node = node_values_from_actions(model, res.q_action, beta);
      return res;
    }
  }
  throw NonConvergenceError(
      fmt::format("action-level iteration did not reach {} in {} sweeps (residual {})", options.tol,
                  options.max_iters, res.residual),
      res.residual_trace);
}

}  // namespace

DPResult value_iteration(const PrefixModel& model, const BackupMode& mode,
                         const ValueIterationOptions& options) {
  mode.validate();
  if (mode.kind == BackupMode::Kind::ActionLevel) {
    return iterate_actions(model, 0.0, mode.gamma_a, options, mode);
  }
  check_options(options);
  const double intra = mode.intra_discount();
  const double beta = mode.kind == BackupMode::Kind::SoftBAD ? mode.beta : 0.0;
  const std::size_t N = model.nodes.size();
  std::vector<bool> is_root(N, false);
  for (auto id : model.reachable) is_root[model.root_of[id]] = true;

  std::vector<double> q(N, options.init), next(N);
  std::vector<double> scratch;
  DPResult res;
  res.mode = mode;
  res.fingerprint = model.fingerprint();
  for (std::size_t it = 1; it <= options.max_iters; ++it) {
    double resid = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const auto& node = model.nodes[n];
      double v;
      if (node.leaf) {
        v = node.reward + (node.terminal ? 0.0 : mode.gamma_a * q[node.next_root]);
      } else {
        scratch.clear();
        for (auto c : node.children) scratch.push_back(q[c]);
        v = soft_aggregate(scratch, beta);
        if (!is_root[n]) v *= intra;
      }
      next[n] = v;
      resid = std::max(resid, std::abs(v - q[n]));
    }
    q.swap(next);
    res.residual_trace.push_back(resid);
    res.iterations = it;
    res.residual = resid;
    if (resid <= options.tol) {
      res.q_node = std::move(q);
      res.q_action.resize(model.actions.size());
      for (auto id : model.reachable) {
        for (auto leaf : model.leaf_of[id]) res.q_action[id].push_back(res.q_node[leaf]);
      }
      return res;
    }
  }
  throw NonConvergenceError(
      fmt::format("{} value iteration did not reach {} in {} sweeps (residual {})", mode.label(),
                  options.tol, options.max_iters, res.residual),
      res.residual_trace);
}

DPResult soft_action_iteration(const PrefixModel& model, double beta, double gamma_a,
                               const ValueIterationOptions& options) {
  const auto mode = BackupMode::soft_bad(beta, gamma_a);
  mode.validate();
  return iterate_actions(model, beta, gamma_a, options, mode);
}

double check_consistency(const DPResult& dp_token, const DPResult& dp_action) {
  if (dp_action.mode.kind != BackupMode::Kind::ActionLevel) {
    throw ModelMismatchError("check_consistency needs an action-level result as reference");
  }
  if (dp_token.fingerprint != dp_action.fingerprint || dp_token.q_node.size() != dp_action.q_node.size()) {
    throw ModelMismatchError("DP results come from different prefix models");
  }
  double gap = 0.0;
  for (std::size_t n = 0; n < dp_token.q_node.size(); ++n) {
    gap = std::max(gap, std::abs(dp_token.q_node[n] - dp_action.q_node[n]));
  }
  return gap;
}

double check_soft_consistency(const PrefixModel& model, const DPResult& dp_soft,
                              const DPResult& soft_action) {
  if (dp_soft.fingerprint != model.fingerprint() || soft_action.fingerprint != model.fingerprint()) {
    throw ModelMismatchError("soft DP results come from different prefix models");
  }
  double gap = 0.0;
  for (std::size_t n = 0; n < model.nodes.size(); ++n) {
    gap = std::max(gap, std::abs(dp_soft.q_node[n] - soft_action.q_node[n]));
  }
  return gap;
}

double discrepancy_closed_form(double R, double gamma_a, double gamma_w, std::size_t len_a,
                               std::size_t j, double next_max_q, std::size_t len_a_next) {
  if (j < 1 || j >= len_a) {
    throw DomainError(fmt::format("discrepancy needs 1 <= j < |a| (j={}, |a|={})", j, len_a));
  }
  if (!(gamma_w >= 0.0 && gamma_w <= 1.0)) throw DomainError("gamma_w must lie in [0, 1]");
  const double a = static_cast<double>(len_a - j);
  const double b = static_cast<double>(len_a + len_a_next - j - 1);
  return (1.0 - std::pow(gamma_w, a)) * R + gamma_a * (1.0 - std::pow(gamma_w, b)) * next_max_q;
}

double discrepancy_closed_form_v(double R, double gamma_a, double gamma_w, std::size_t len_a,
                                 std::size_t j, double next_value) {
  if (j < 1 || j >= len_a) {
    throw DomainError(fmt::format("discrepancy needs 1 <= j < |a| (j={}, |a|={})", j, len_a));
  }
  if (!(gamma_w >= 0.0 && gamma_w <= 1.0)) throw DomainError("gamma_w must lie in [0, 1]");
  return (1.0 - std::pow(gamma_w, static_cast<double>(len_a - j))) * (R + gamma_a * next_value);
}

std::vector<DiscrepancyProbe> discrepancy_probes(const PrefixModel& model,
                                                 const DPResult& dp_naive,
                                                 const DPResult& dp_action) {
  if (dp_naive.mode.kind != BackupMode::Kind::NaiveToken ||
      dp_action.mode.kind != BackupMode::Kind::ActionLevel ||
      dp_naive.fingerprint != model.fingerprint() || dp_action.fingerprint != model.fingerprint()) {
    throw ModelMismatchError("discrepancy_probes needs naive and action-level results of one model");
  }
  const double gw = dp_naive.mode.gamma_w;
  const double ga = dp_naive.mode.gamma_a;
  constexpr double kTie = 1e-12;
  std::vector<DiscrepancyProbe> probes;
  std::vector<std::size_t> stack, leaves;
  for (std::size_t n = 0; n < model.nodes.size(); ++n) {
    const auto& node = model.nodes[n];
    const std::size_t j = node.prefix.size();
    if (node.leaf || j == 0) continue;
    leaves.clear();
    stack.assign(1, n);
    while (!stack.empty()) {
      const auto m = stack.back();
      stack.pop_back();
      if (model.nodes[m].leaf) leaves.push_back(m);
      for (auto c : model.nodes[m].children) stack.push_back(c);
    }
    // Action-optimal completion must also be naive-optimal.
    std::size_t best = leaves.front();
    for (auto l : leaves) {
      if (dp_action.q_node[l] > dp_action.q_node[best] + kTie) best = l;
    }
    const auto& leaf = model.nodes[best];
    const std::size_t len_a = leaf.prefix.size();
    const double naive_best = std::pow(gw, static_cast<double>(len_a - j)) * dp_naive.q_node[best];
    if (std::abs(naive_best - dp_naive.q_node[n]) > kTie) continue;

    DiscrepancyProbe p;
    p.node = n;
    p.j = j;
    p.len_a = len_a;
    p.reward = leaf.reward;
    if (!leaf.terminal) {
      const auto& root = model.nodes[leaf.next_root];
      const auto& next_leaves = model.leaf_of[root.obs];
      bool all_terminal = true;
      std::size_t nb = next_leaves.front();
      for (auto l : next_leaves) {
        all_terminal = all_terminal && model.nodes[l].terminal;
        if (model.nodes[l].reward > model.nodes[nb].reward + kTie) nb = l;
      }
      if (!all_terminal) continue;
      const std::size_t len_next = model.nodes[nb].prefix.size();
      const double naive_next = std::pow(gw, static_cast<double>(len_next - 1)) * model.nodes[nb].reward;
      if (std::abs(naive_next - dp_naive.q_node[leaf.next_root]) > kTie) continue;
      p.next_max_q = model.nodes[nb].reward;
      p.len_a_next = len_next;
    }
    p.observed = dp_action.q_node[n] - dp_naive.q_node[n];
    p.closed_form = discrepancy_closed_form(p.reward, ga, gw, p.len_a, p.j, p.next_max_q, p.len_a_next);
    probes.push_back(p);
  }
  return probes;
}

std::vector<SweepRow> discrepancy_sweep(std::size_t chain_length,
                                        const std::vector<double>& gamma_w_grid,
                                        const std::vector<std::size_t>& action_len_grid,
                                        double gamma_a) {
  if (gamma_w_grid.empty() || action_len_grid.empty()) {
    throw ConfigError("discrepancy_sweep needs non-empty grids");
  }
  std::vector<SweepRow> rows;
  for (auto len : action_len_grid) {
    const auto env = make_chain_env(chain_length, len);
    const auto model = enumerate_prefix_model(*env);
    const auto dp_action = value_iteration(model, BackupMode::action_level(gamma_a));
    for (double gw : gamma_w_grid) {
      const auto dp = value_iteration(model, BackupMode::naive(gw, gamma_a));
      rows.push_back({gw, len, check_consistency(dp, dp_action), "naive"});
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return a.gamma_w != b.gamma_w ? a.gamma_w < b.gamma_w : a.action_len < b.action_len;
  });
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "gamma_w,action_len,max_gap,mode\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{},{:.17g},{}\n", r.gamma_w, r.action_len, r.max_gap, r.mode);
  }
}

std::size_t greedy_disagreements(const PrefixModel& model, const DPResult& dp_bad,
                                 const DPResult& dp_action, double tol) {
  std::size_t bad = 0;
  for (auto id : model.reachable) {
    std::size_t n = model.root_of[id];
    while (!model.nodes[n].leaf) {
      const auto& kids = model.nodes[n].children;
      std::size_t best = kids.front();
      for (auto c : kids) {
        if (dp_bad.q_node[c] > dp_bad.q_node[best]) best = c;
      }
      n = best;
    }
    if (dp_action.q_node[model.root_of[id]] - dp_action.q_node[n] > tol) ++bad;
  }
  return bad;
}

double optimal_discounted_return(const PrefixModel& model, double gamma_a, std::size_t horizon) {
  std::vector<double> v(model.actions.size(), 0.0), next(model.actions.size(), 0.0);
  for (std::size_t h = 0; h < horizon; ++h) {
    for (auto id : model.reachable) {
      double best = kNegInf;
      for (auto l : model.leaf_of[id]) {
        const auto& leaf = model.nodes[l];
        const double q = leaf.reward + (leaf.terminal ? 0.0 : gamma_a * v[model.nodes[leaf.next_root].obs]);
        best = std::max(best, q);
      }
      next[id] = best;
    }
    v.swap(next);
  }
  double total = 0.0;
  for (auto s : model.starts) total += v[s];
  return total / static_cast<double>(model.starts.size());
}

}  // namespace tokrl
