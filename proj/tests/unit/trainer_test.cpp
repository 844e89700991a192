#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "tokrl/config.hpp"
#include "tokrl/envs.hpp"
#include "tokrl/rng.hpp"
#include "tokrl/trainer.hpp"

using namespace tokrl;

namespace {

// Token steps on the bandit with the given per-token advantages.
std::vector<StepData> bandit_steps(const KeyTokenBandit& env, const Actor& actor, std::vector<double> advantages,
                                   double ratio = 1.0) {
  const auto o = env.observe();
  const LegalSet legal(env.legal_actions(o));
  std::vector<StepData> steps;
  for (const auto* dest : {"kitchen", "bedroom"}) {
    StepData s;
    s.obs = o;
    s.action = env.action_for(dest);
    s.reward = 0.0;
    s.done = true;
    for (std::size_t j = 0; j < 3; ++j) s.masks.push_back(legal.next_token_mask(s.action.prefix(j), env.vocab().size()));
    for (double lp : actor.token_logprobs(o, s.action, &legal)) s.old_logprobs.push_back(lp - std::log(ratio));
    s.advantages = advantages;
    s.value_targets.assign(3, 0.0);
    steps.push_back(std::move(s));
  }
  return steps;
}

const std::vector<std::size_t> kBoth{0, 1};

std::filesystem::path config_dir() { return std::filesystem::path(TOKRL_SOURCE_DIR) / "configs"; }

// First update whose mean return reaches `level`, or the update count.
std::size_t first_reaching(const std::vector<UpdateMetrics>& m, double level) {
  for (const auto& x : m) {
    if (x.mean_return >= level) return x.update;
  }
  return m.size();
}

double last_episodes(const RunArtifacts& r, std::size_t count) {
  double s = 0.0;
  for (auto i = r.episodes.size() - count; i < r.episodes.size(); ++i) s += r.episodes[i].episode_return;
  return s / static_cast<double>(count);
}

}  // namespace

TEST_CASE("critic loss") {
  KeyTokenBandit env;
  const auto space = std::make_shared<const ContextSpace>(env);
  Critic critic(space, Backend::Tabular);
  Actor actor(space, Backend::Tabular);
  env.reset(0);
  auto steps = bandit_steps(env, actor, {0.0, 0.0, 0.0});
  CHECK(critic_loss(steps, kBoth, critic, {}) == 0.0);

  StepData one;
  one.obs = env.observe();
  one.action = env.action_for("kitchen");
  one.action_level = true;
  one.value_targets = {1.0};
  one.advantages = {0.0};
  one.old_logprobs = {0.0};
  CHECK(critic_loss({one}, std::vector<std::size_t>{0}, critic, {}) == 1.0);

  SUBCASE("matches a straight-line recomputation") {
    CounterRng rng(3);
    for (auto& p : critic.net().params()) p = rng.next_uniform(-1.0, 1.0);
    for (auto& s : steps) {
      for (auto& y : s.value_targets) y = rng.next_uniform(-2.0, 2.0);
    }
    double expected = 0.0;
    for (const auto& s : steps) {
      for (std::size_t u = 0; u < 3; ++u) {
        const double d = s.value_targets[u] - critic.value(s.obs, s.action.prefix(u));
        expected += d * d / (2.0 * 3.0);
      }
    }
    CHECK(std::abs(critic_loss(steps, kBoth, critic, {}) - expected) <= 1e-10);
  }
}

TEST_CASE("policy loss") {
  KeyTokenBandit env;
  env.reset(0);
  const auto space = std::make_shared<const ContextSpace>(env);
  Actor actor(space, Backend::Tabular);

  SUBCASE("ratio one") {
    const auto steps = bandit_steps(env, actor, {0.3, -0.6, 1.2});
    const auto out = policy_loss(steps, kBoth, actor, 0.2, 0.0, {});
    CHECK(out.loss == doctest::Approx(-0.3));
    CHECK(out.clip_frac == 0.0);
  }
  SUBCASE("zero advantages leave the entropy bonus") {
    const auto steps = bandit_steps(env, actor, {0.0, 0.0, 0.0});
    const auto out = policy_loss(steps, kBoth, actor, 0.2, 0.01, {});
    CHECK(out.surrogate == 0.0);
    // Two forced tokens (entropy 0) and one uniform choice over three.
    CHECK(out.entropy == doctest::Approx(std::log(3.0) / 3.0));
    CHECK(out.loss == doctest::Approx(-0.01 * out.entropy));
  }
  SUBCASE("clipped ratio") {
    const auto steps = bandit_steps(env, actor, {1.0, 1.0, 1.0}, 1.5);
    const auto out = policy_loss(steps, kBoth, actor, 0.2, 0.0, {});
    CHECK(out.surrogate == doctest::Approx(1.2));
    CHECK(out.clip_frac == 1.0);
  }
}

TEST_CASE("advantage normalization") {
  for (double x : advantage_normalize(std::vector<double>{2.0, 2.0, 2.0})) CHECK(x == 0.0);
  const auto n = advantage_normalize(std::vector<double>{1.0, -1.0});
  CHECK(n[0] == doctest::Approx(1.0));
  CHECK(n[1] == doctest::Approx(-1.0));
  const std::vector<double> a{0.3, -2.0, 5.0, 0.1};
  const auto b = advantage_normalize(a);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a.size(); ++j) CHECK((a[i] < a[j]) == (b[i] < b[j]));
  }
}

TEST_CASE("aligned values read the context that emitted each token") {
  KeyTokenBandit env;
  const auto space = std::make_shared<const ContextSpace>(env);
  Critic critic(space, Backend::Tabular);
  CounterRng rng(8);
  for (auto& p : critic.net().params()) p = rng.next_uniform(-1.0, 1.0);
  const auto V = aligned_values(critic, false);
  const auto o = env.reset(0);
  const auto a = env.action_for("kitchen");
  CHECK(V(o, {}) == critic.value(o, {}));
  CHECK(V(o, a.prefix(1)) == critic.value(o, {}));
  CHECK(V(o, a.prefix(3)) == critic.value(o, a.prefix(2)));
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.algo = Algo::NTPO;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.gamma_w = 0.9;
  CHECK_NOTHROW(c.validate());
  c.algo = Algo::POAD;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.gamma_w.reset();
  c.num_mini_batch = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.num_mini_batch = 2;
  c.rollout_threads = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("POAD and action-level PPO on the bandit") {
  const auto poad_cfg = ExperimentConfig::load(config_dir() / "poad_keytoken.cfg");
  // Action-level PPO takes one epoch per batch and needs a longer budget to settle.
  auto app_cfg = ExperimentConfig::load(config_dir() / "action_ppo_keytoken.cfg");
  app_cfg.set("train.total_env_steps", "6000");
  for (std::uint64_t seed : {1, 2, 3}) {
    CAPTURE(seed);
    const auto poad = train(poad_cfg.train_config(seed), poad_cfg.env_factory());
    const auto app = train(app_cfg.train_config(seed), app_cfg.env_factory());
    CHECK(last_episodes(poad, 100) >= 0.95);
    CHECK(last_episodes(app, 100) >= 0.95);
    CHECK(first_reaching(app.metrics, 0.9) >= first_reaching(poad.metrics, 0.9));
  }
}

TEST_CASE("training is independent of thread timing") {
  auto cfg = ExperimentConfig::load(config_dir() / "poad_kitchen.cfg");
  cfg.set("env.height", "3");
  cfg.set("env.width", "3");
  cfg.set("train.total_env_steps", "1024");
  std::string text[2];
  for (auto& t : text) {
    std::ostringstream out;
    for (const auto& m : train(cfg.train_config(4), cfg.env_factory()).metrics) write_metrics_row(out, m);
    t = out.str();
  }
  CHECK(text[0] == text[1]);
}

TEST_CASE("checkpoints are written every k updates") {
  const auto dir = std::filesystem::temp_directory_path() / "tokrl_ckpt_test";
  std::filesystem::remove_all(dir);
  auto cfg = ExperimentConfig::load(config_dir() / "poad_keytoken.cfg");
  auto tc = cfg.train_config(1);
  tc.total_env_steps = 128;
  tc.checkpoint_every = 2;
  tc.checkpoint_dir = dir.string();
  train(tc, cfg.env_factory());
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
  CHECK(files == 4);  // actor and critic after updates 2 and 4
  std::filesystem::remove_all(dir);
}
