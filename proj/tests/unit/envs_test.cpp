#include <doctest.h>

#include <set>

#include "tokrl/envs.hpp"

using namespace tokrl;

TEST_CASE("key-token bandit") {
  KeyTokenBandit env;
  const auto o = env.reset(123);
  CHECK(o == env.reset(0));
  CHECK(env.legal_actions(o).size() == 3);
  for (const auto& a : env.legal_actions(o)) CHECK(a.size() <= env.max_action_len());

  auto r = env.step(env.action_for("kitchen"));
  CHECK(r.reward == 1.0);
  CHECK(r.done);
  CHECK_THROWS_AS(env.step(env.action_for("kitchen")), EpisodeOverError);

  env.reset(1);
  CHECK(env.step(env.action_for("bedroom")).reward == 0.0);

  KeyTokenBanditConfig tie;
  tie.reward_map = {{"kitchen", 1.0}, {"bathroom", 1.0}, {"bedroom", 0.0}};
  CHECK_THROWS_AS(KeyTokenBandit{tie}, ConfigError);
}

TEST_CASE("kitchen reset is deterministic and draws from the interior") {
  TokenKitchen env;
  const auto a = env.reset(0);
  CHECK(a == env.reset(0));
  std::set<std::uint64_t> starts;
  for (const auto& o : env.start_observations()) starts.insert(o.id);
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto o = env.reset(s);
    CHECK(starts.count(o.id) == 1);
    CHECK(env.state().holding == TokenKitchen::Holding::None);
    seen.insert(o.id);
  }
  CHECK(seen.size() == starts.size());  // 9 interior cells on 5x5
}

TEST_CASE("kitchen rewards") {
  TokenKitchen env;
  const auto board = env.access_cell(3);
  const auto counter = env.access_cell(5);

  SUBCASE("chopping a recipe ingredient") {
    TokenKitchen::State s;
    s.agent = board;
    s.holding = TokenKitchen::Holding::Tomato;
    env.set_state(s);
    const auto legal = env.legal_actions(env.observe());
    const auto chop = env.parse("chop tomato <eoa>");
    CHECK(std::find(legal.begin(), legal.end(), chop) != legal.end());
    const auto r = env.step(chop);
    CHECK(r.reward == doctest::Approx(0.2 - 0.001));
    CHECK_FALSE(r.done);
    CHECK(env.state().items[0] == TokenKitchen::ItemState::Chopped);
  }
  SUBCASE("chopping an ingredient outside the recipe") {
    TokenKitchen::State s;
    s.agent = board;
    s.holding = TokenKitchen::Holding::Onion;
    env.set_state(s);
    CHECK(env.step(env.parse("chop onion <eoa>")).reward == doctest::Approx(-0.001));
  }
  SUBCASE("wrong delivery") {
    TokenKitchen::State s;
    s.agent = counter;
    s.holding = TokenKitchen::Holding::Tomato;
    env.set_state(s);
    const auto r = env.step(env.parse("deliver tomato counter <eoa>"));
    CHECK(r.reward == doctest::Approx(-0.1 - 0.001));
    CHECK_FALSE(r.done);
  }
  SUBCASE("correct delivery ends the episode") {
    TokenKitchen::State s;
    s.agent = counter;
    s.holding = TokenKitchen::Holding::Plate;
    s.items = {TokenKitchen::ItemState::Plated, TokenKitchen::ItemState::Plated, TokenKitchen::ItemState::Raw};
    env.set_state(s);
    const auto r = env.step(env.parse("deliver plate counter <eoa>"));
    CHECK(r.reward == doctest::Approx(1.0 - 0.001));
    CHECK(r.done);
  }
}

TEST_CASE("kitchen legal actions") {
  TokenKitchen env;
  for (std::uint64_t id = 0; id < env.num_observations(); id += 7) {
    Observation o{id, {}};
    const auto legal = env.legal_actions(o);
    CHECK_FALSE(legal.empty());
    for (const auto& a : legal) CHECK(a.size() <= env.max_action_len());
    CHECK_NOTHROW(LegalSet(legal));
  }
}

TEST_CASE("kitchen episodes stop at the step limit") {
  KitchenConfig kc;
  kc.max_episode_steps = 3;
  TokenKitchen env(kc);
  env.reset(4);
  const auto a = env.parse("goto board <eoa>");
  CHECK_FALSE(env.step(a).done);
  CHECK_FALSE(env.step(a).done);
  CHECK(env.step(a).done);
}

TEST_CASE("table environments") {
  auto chain = make_chain_env(2, 3);
  const auto o = chain->reset(0);
  CHECK(chain->legal_actions(o).size() == 2);
  auto r = chain->step(Action{chain->vocab().encode("next pad pad")});
  CHECK_FALSE(r.done);
  r = chain->step(Action{chain->vocab().encode("next pad pad")});
  CHECK(r.done);
  CHECK(r.reward == 1.0);
  CHECK_THROWS_AS(make_chain_env(0, 2), ConfigError);
}
