#include <doctest.h>

#include <limits>
#include <map>
#include <sstream>

#include "tokrl/envs.hpp"
#include "tokrl/policy.hpp"
#include "tokrl/rollout.hpp"

using namespace tokrl;

namespace {

// Puts all mass on the tokens of one fixed action.
class FixedPolicy final : public TokenPolicy {
 public:
  FixedPolicy(std::size_t vocab, Action target) : vocab_(vocab), target_(std::move(target)) {}
  std::size_t vocab_size() const override { return vocab_; }
  std::vector<double> logits(const Observation&, TokenSpan prefix, const std::vector<bool>*) const override {
    std::vector<double> z(vocab_, -std::numeric_limits<double>::infinity());
    z[target_.tokens.at(prefix.size())] = 0.0;
    return z;
  }

 private:
  std::size_t vocab_;
  Action target_;
};

StepRecord make_step(std::vector<TokenId> tokens, double reward, bool done) {
  StepRecord r;
  r.action.tokens = std::move(tokens);
  r.reward = reward;
  r.done = done;
  r.token_logprobs.assign(r.action.size(), -0.5);
  r.token_values.assign(r.action.size() + 1, 0.0);
  return r;
}

}  // namespace

TEST_CASE("vocabulary is a bijection and rejects bad alphabets") {
  Vocabulary v({"walk", "to", "kitchen"});
  CHECK(v.size() == 3);
  for (TokenId i = 0; i < v.size(); ++i) CHECK(v.index(v.token(i)) == i);
  CHECK(v.encode("walk to kitchen") == std::vector<TokenId>{0, 1, 2});
  CHECK(v.render(v.encode("to walk")) == "to walk");
  CHECK_THROWS_AS(Vocabulary({"a", "a"}), ConfigError);
  CHECK_THROWS_AS(Vocabulary({"only"}), ConfigError);
  CHECK_THROWS_AS(v.index("bedroom"), std::out_of_range);
  CHECK(Vocabulary({"a", "b"}).hash() != Vocabulary({"b", "a"}).hash());
}

TEST_CASE("trajectory checks its invariants") {
  std::vector<StepRecord> steps{make_step({0, 1}, 1.0, false), make_step({2}, 2.0, true)};
  Trajectory t(steps, 0.5);
  CHECK(t.episode_return() == doctest::Approx(3.0));
  CHECK(t.discounted_return() == doctest::Approx(1.0 + 0.5 * 2.0));
  CHECK(t.terminated());

  auto early = steps;
  early[0].done = true;
  CHECK_THROWS_AS(Trajectory(early, 0.5), std::invalid_argument);
  auto positive = steps;
  positive[0].token_logprobs[0] = 0.1;
  CHECK_THROWS_AS(Trajectory(positive, 0.5), std::invalid_argument);
  auto short_lp = steps;
  short_lp[1].token_logprobs.clear();
  CHECK_THROWS_AS(Trajectory(short_lp, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(Trajectory(steps, 0.5, 1.7), std::invalid_argument);
}

TEST_CASE("flatten_to_token_transitions counts tokens") {
  SUBCASE("one step with |a| = 3") {
    Trajectory t({make_step({0, 1, 2}, 1.0, true)}, 0.95);
    const auto f = flatten_to_token_transitions(t);
    REQUIRE(f.size() == 3);
    CHECK_FALSE(f[0].is_action_final);
    CHECK_FALSE(f[1].is_action_final);
    CHECK(f[2].is_action_final);
    CHECK(f[1].prefix == std::vector<TokenId>{0});
    CHECK(f[2].position == 3);
  }
  SUBCASE("two steps with |a| = (2, 1)") {
    Trajectory t({make_step({0, 1}, 0.5, false), make_step({2}, 1.5, true)}, 0.95);
    const auto f = flatten_to_token_transitions(t);
    REQUIRE(f.size() == 3);
    CHECK(f[1].is_action_final);
    CHECK(f[1].reward == 0.5);
    CHECK(f[2].is_action_final);
    CHECK(f[2].reward == 1.5);
    CHECK(f[0].reward == 0.0);
  }
  SUBCASE("empty trajectory") { CHECK(flatten_to_token_transitions(Trajectory()).empty()); }
}

TEST_CASE("legal sets answer masks and completion") {
  Vocabulary v({"a", "b", "c", "<eoa>"});
  LegalSet set({Action{v.encode("a b <eoa>")}, Action{v.encode("a c <eoa>")}});
  const auto root = set.next_token_mask({}, v.size());
  CHECK(root == std::vector<bool>{true, false, false, false});
  const auto after_a = set.next_token_mask(v.encode("a"), v.size());
  CHECK(after_a == std::vector<bool>{false, true, true, false});
  CHECK(set.is_complete(v.encode("a c <eoa>")));
  CHECK_FALSE(set.is_complete(v.encode("a c")));
  CHECK_THROWS_AS(LegalSet({Action{v.encode("a")}, Action{v.encode("a b")}}), std::invalid_argument);
}

TEST_CASE("greedy rollout on the bandit takes the chosen action") {
  KeyTokenBandit env;
  FixedPolicy policy(env.vocab().size(), env.action_for("kitchen"));
  const auto t = collect_rollout(env, policy, 5, 0);
  REQUIRE(t.size() == 1);
  CHECK(t[0].action == env.action_for("kitchen"));
  CHECK(t[0].reward == 1.0);
  CHECK(t[0].done);
  CHECK(t[0].token_logprobs == std::vector<double>{0.0, 0.0, 0.0});
}

TEST_CASE("rollouts are reproducible from the seed") {
  KitchenConfig kc;
  kc.height = kc.width = 3;
  TokenKitchen env(kc);
  Actor actor(std::make_shared<const ContextSpace>(env), Backend::Tabular);
  const auto a = collect_rollout(env, actor, 40, 17);
  const auto b = collect_rollout(env, actor, 40, 17);
  REQUIRE(a.size() == b.size());
  std::ostringstream sa, sb;
  write_trajectory_jsonl(sa, a, env.vocab().hash(), 17);
  write_trajectory_jsonl(sb, b, env.vocab().hash(), 17);
  CHECK(sa.str() == sb.str());
  const auto c = collect_rollout(env, actor, 40, 18);
  std::ostringstream sc;
  write_trajectory_jsonl(sc, c, env.vocab().hash(), 18);
  CHECK(sc.str() != sa.str());

  std::istringstream in(sa.str());
  const auto dump = read_trajectory_jsonl(in);
  CHECK(dump.vocab_hash == env.vocab().hash());
  CHECK(dump.trajectory.size() == a.size());
  CHECK(dump.trajectory.discounted_return() == a.discounted_return());
}

TEST_CASE("uniform policy picks each destination about a third of the time") {
  KeyTokenBandit env;
  Actor actor(std::make_shared<const ContextSpace>(env), Backend::Tabular);
  std::map<std::string, int> counts;
  constexpr int n = 9000;
  for (int s = 0; s < n; ++s) {
    const auto t = collect_rollout(env, actor, 1, static_cast<std::uint64_t>(s));
    ++counts[env.vocab().token(t[0].action.tokens.back())];
  }
  REQUIRE(counts.size() == 3);
  for (const auto& [dest, c] : counts) CHECK(std::abs(c / double(n) - 1.0 / 3.0) <= 0.02);
}

TEST_CASE("sample_index inverts the CDF") {
  const std::vector<double> p{0.2, 0.0, 0.5, 0.3};
  CHECK(sample_index(p, 0.0) == 0);
  CHECK(sample_index(p, 0.19) == 0);
  CHECK(sample_index(p, 0.2) == 2);
  CHECK(sample_index(p, 0.69) == 2);
  CHECK(sample_index(p, 0.999) == 3);
}
