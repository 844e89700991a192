#include <doctest.h>

#include <sstream>

#include "../brute_force.hpp"
#include "tokrl/envs.hpp"
#include "tokrl/oracle.hpp"

using namespace tokrl;

namespace {

std::size_t node_of(const PrefixModel& m, std::uint64_t obs, const std::vector<TokenId>& prefix) {
  for (std::size_t n = 0; n < m.num_nodes(); ++n) {
    if (m.nodes[n].obs == obs && m.nodes[n].prefix == prefix) return n;
  }
  FAIL("node not found");
  return 0;
}

}  // namespace

TEST_CASE("prefix model sizes") {
  KeyTokenBandit bandit;
  const auto m = enumerate_prefix_model(bandit);
  CHECK(m.reachable.size() == 1);
  CHECK(m.actions[0].size() == 3);
  CHECK(m.num_nodes() == 6);  // root, walk, walk to, three destinations

  // Two reachable states, each with root, next, quit, next pad, quit pad.
  const auto chain = enumerate_prefix_model(*make_chain_env(2, 2));
  CHECK(chain.reachable.size() == 2);
  CHECK(chain.num_nodes() == 10);

  KitchenConfig kc;
  kc.height = kc.width = 3;
  TokenKitchen kitchen(kc);
  const auto km = enumerate_prefix_model(kitchen);
  CHECK(km.num_nodes() == bf::contexts(bf::explore(kitchen)).size());
  CHECK(simulation_mismatches(km, kitchen, 100, 20, 3) == 0);
  CHECK_THROWS_AS(enumerate_prefix_model(kitchen, 50), TooLargeError);
}

TEST_CASE("value iteration on the bandit") {
  KeyTokenBandit env;
  const auto m = enumerate_prefix_model(env);
  const auto& v = env.vocab();
  const auto action = value_iteration(m, BackupMode::action_level(0.95));
  const auto kitchen = env.action_for("kitchen").tokens;
  CHECK(action.q_node[node_of(m, 0, kitchen)] == 1.0);
  CHECK(action.q_node[node_of(m, 0, v.encode("walk to bedroom"))] == 0.0);
  CHECK(action.q_node[node_of(m, 0, v.encode("walk to bathroom"))] == 0.0);

  const auto bad = value_iteration(m, BackupMode::bad(0.95));
  for (std::size_t j = 1; j <= 3; ++j) {
    CHECK(bad.q_node[node_of(m, 0, std::vector<TokenId>(kitchen.begin(), kitchen.begin() + j))] == 1.0);
  }
  CHECK(check_consistency(bad, action) <= 1e-9);

  const auto naive = value_iteration(m, BackupMode::naive(0.5, 0.95));
  CHECK(naive.q_node[node_of(m, 0, v.encode("walk"))] == doctest::Approx(0.25));
  double worst = 0.0;
  for (const auto& p : discrepancy_probes(m, naive, action)) worst = std::max(worst, std::abs(p.observed - p.closed_form));
  CHECK(worst <= 1e-9);
  CHECK(check_consistency(naive, action) == doctest::Approx(discrepancy_closed_form(1.0, 0.95, 0.5, 3, 1, 0.0, 1)));
  CHECK(check_consistency(value_iteration(m, BackupMode::naive(1.0, 0.95)), action) <= 1e-9);
  CHECK(greedy_disagreements(m, bad, action) == 0);
}

TEST_CASE("naive fixed point of the two-step model") {
  const auto env = make_two_step_env(1.0, 2.0, 0.5);
  const auto m = enumerate_prefix_model(*env);
  const auto naive = value_iteration(m, BackupMode::naive(0.5, 0.95));
  const auto action = value_iteration(m, BackupMode::action_level(0.95));
  const auto n = node_of(m, 0, env->vocab().encode("a"));
  CHECK(naive.q_node[n] == doctest::Approx(0.4875).epsilon(1e-12));
  CHECK(action.q_node[n] == doctest::Approx(2.9).epsilon(1e-12));
}

TEST_CASE("discrepancy closed forms") {
  CHECK(discrepancy_closed_form(1.0, 0.95, 0.5, 3, 1, 2.0, 2) == doctest::Approx(2.4125).epsilon(1e-14));
  CHECK(discrepancy_closed_form(3.0, 0.9, 1.0, 4, 2, 5.0, 3) == 0.0);
  CHECK(discrepancy_closed_form_v(1.0, 0.95, 0.5, 2, 1, 1.0) == doctest::Approx(0.975));
  CHECK_THROWS_AS(discrepancy_closed_form(1.0, 0.95, 0.5, 3, 3, 2.0, 2), DomainError);
}

TEST_CASE("discrepancy sweep") {
  const auto ones = discrepancy_sweep(3, {1.0}, {2, 4, 8});
  for (const auto& r : ones) CHECK(r.max_gap == 0.0);

  const auto by_len = discrepancy_sweep(3, {0.9}, {2, 4, 8});
  REQUIRE(by_len.size() == 3);
  CHECK(by_len[0].max_gap < by_len[1].max_gap);
  CHECK(by_len[1].max_gap < by_len[2].max_gap);

  const auto by_gw = discrepancy_sweep(3, {0.5, 0.8, 0.95}, {4});
  REQUIRE(by_gw.size() == 3);
  CHECK(by_gw[0].max_gap > by_gw[1].max_gap);
  CHECK(by_gw[1].max_gap > by_gw[2].max_gap);

  std::ostringstream out;
  write_sweep_csv(out, by_gw);
  CHECK(out.str().rfind("gamma_w,action_len,max_gap,mode\n", 0) == 0);
}

TEST_CASE("soft iteration agrees with the action-level soft Bellman values") {
  const auto m = enumerate_prefix_model(*make_two_step_env());
  for (double beta : {0.0, 0.1, 1.0}) {
    const auto soft = value_iteration(m, BackupMode::soft_bad(beta, 0.9));
    const auto ref = soft_action_iteration(m, beta, 0.9);
    CHECK(check_soft_consistency(m, soft, ref) <= 1e-8);
  }
}

TEST_CASE("results from different models are not compared") {
  const auto a = enumerate_prefix_model(KeyTokenBandit());
  const auto b = enumerate_prefix_model(*make_two_step_env());
  const auto qa = value_iteration(a, BackupMode::bad(0.95));
  const auto qb = value_iteration(b, BackupMode::action_level(0.95));
  CHECK_THROWS_AS(check_consistency(qa, qb), ModelMismatchError);
  CHECK_THROWS_AS(check_consistency(qa, value_iteration(a, BackupMode::bad(0.95))), ModelMismatchError);
}

TEST_CASE("optimal discounted return matches a finite-horizon solve") {
  KitchenConfig kc;
  kc.height = kc.width = 3;
  TokenKitchen env(kc);
  const auto m = enumerate_prefix_model(env);
  CHECK(optimal_discounted_return(m, 0.95, 50) == doctest::Approx(bf::horizon_return(bf::explore(env), 0.95, 50)).epsilon(1e-12));
}
