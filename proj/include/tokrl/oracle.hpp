#pragma once

// Exact dynamic programming over the prefix-MDP of an enumerable environment.
// Nodes are (observation, proper or complete prefix of a legal action); a
// complete-action node ("leaf") carries the action's reward, terminal flag and
// the root node of the next observation.
//
// DPResult::q_node holds Q(o, w^{1:j}) at every non-root node (the value of
// having emitted that prefix) and V(o, ∅) at roots.

#include <iosfwd>
#include <vector>

#include "tokrl/backups.hpp"
#include "tokrl/token_mdp.hpp"

namespace tokrl {

struct PrefixNode {
  std::uint64_t obs = 0;
  std::vector<TokenId> prefix;
  std::vector<TokenId> tokens;         // outgoing tokens, sorted
  std::vector<std::size_t> children;   // node reached by each token
  bool leaf = false;
  std::size_t action = 0;              // index into PrefixModel::actions[obs] (leaves)
  double reward = 0.0;                 // leaves only
  bool terminal = false;               // leaves only
  std::size_t next_root = 0;           // leaves only, valid when !terminal
};

struct PrefixModel {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::string env_name;
  std::uint64_t vocab_hash = 0;
  std::vector<PrefixNode> nodes;
  std::vector<std::size_t> root_of;               // by obs id; npos when unreachable
  std::vector<std::vector<Action>> actions;       // legal actions by obs id
  std::vector<std::vector<std::size_t>> leaf_of;  // leaf node per legal action
  std::vector<std::uint64_t> reachable;           // obs ids in discovery order
  std::vector<std::uint64_t> starts;

  std::size_t num_nodes() const noexcept { return nodes.size(); }
  std::uint64_t fingerprint() const noexcept;
};

PrefixModel enumerate_prefix_model(const Environment& env, std::size_t node_budget = 4'000'000);

// Replays `paths` random action sequences through both the model and a clone
// of env and returns the number of disagreeing transitions.
std::size_t simulation_mismatches(const PrefixModel& model, const Environment& env,
                                  std::size_t paths, std::size_t max_len, std::uint64_t seed);

struct DPResult {
  BackupMode mode;
  std::uint64_t fingerprint = 0;
  std::vector<double> q_node;
  std::vector<std::vector<double>> q_action;  // by obs id, by legal action index
  std::size_t iterations = 0;
  double residual = 0.0;
  std::vector<double> residual_trace;

  // Q(o, w^{1:j}, w): the node value of prefix + token.
  double q_token(const PrefixModel& model, std::size_t node, TokenId token) const;
};

struct ValueIterationOptions {
  double tol = 1e-12;
  std::size_t max_iters = 200'000;
  double init = 0.0;
};

// Jacobi value iteration. ActionLevel iterates Q(o, a) and derives node values
// as the max over completions; NaiveToken, BAD and SoftBAD iterate node values
// directly. SoftBAD uses a reference policy uniform over each node's tokens.
DPResult value_iteration(const PrefixModel& model, const BackupMode& mode,
                         const ValueIterationOptions& options = {});

// Action-level soft iteration: Q(o,a) = R + gamma_a * beta * log sum_a' pbar(a'|o') exp(Q(o',a')/beta)
// with pbar(a) the product of uniform token probabilities along a's path.
DPResult soft_action_iteration(const PrefixModel& model, double beta, double gamma_a,
                               const ValueIterationOptions& options = {});

// max over nodes of |q_token - q_action-derived|; ModelMismatchError when the
// results come from different models or dp_action is not action-level.
double check_consistency(const DPResult& dp_token, const DPResult& dp_action);

// Soft-token node values against the action-level soft values aggregated over
// completions: max gap over every node.
double check_soft_consistency(const PrefixModel& model, const DPResult& dp_soft,
                              const DPResult& soft_action);

double discrepancy_closed_form(double R, double gamma_a, double gamma_w, std::size_t len_a,
                               std::size_t j, double next_max_q, std::size_t len_a_next);
// V-form twin: (1 - gamma_w^{len_a - j}) (R + gamma_a V(o')).
double discrepancy_closed_form_v(double R, double gamma_a, double gamma_w, std::size_t len_a,
                                 std::size_t j, double next_value);

struct DiscrepancyProbe {
  std::size_t node = 0;
  std::size_t j = 0;
  std::size_t len_a = 0;
  double reward = 0.0;
  double next_max_q = 0.0;
  std::size_t len_a_next = 1;
  double observed = 0.0;     // q_action - q_naive at the node
  double closed_form = 0.0;
};

// Probes every intra-action node where the closed form applies exactly: the
// optimal completion agrees under both backups and the successor observation
// is terminal or offers only terminal actions with a common argmax.
std::vector<DiscrepancyProbe> discrepancy_probes(const PrefixModel& model,
                                                 const DPResult& dp_naive,
                                                 const DPResult& dp_action);

struct SweepRow {
  double gamma_w = 1.0;
  std::size_t action_len = 1;
  double max_gap = 0.0;
  std::string mode;
};

// Naive-vs-action gap on the synthetic chain family.
std::vector<SweepRow> discrepancy_sweep(std::size_t chain_length,
                                        const std::vector<double>& gamma_w_grid,
                                        const std::vector<std::size_t>& action_len_grid,
                                        double gamma_a = 0.95);
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

// Observations where descending greedily by BAD token values reaches a
// suboptimal action under action-level Q*.
std::size_t greedy_disagreements(const PrefixModel& model, const DPResult& dp_bad,
                                 const DPResult& dp_action, double tol = 1e-9);

// Best discounted return within `horizon` actions, averaged over the start
// observations (the environment's start distribution is uniform over them).
double optimal_discounted_return(const PrefixModel& model, double gamma_a, std::size_t horizon);

}  // namespace tokrl
