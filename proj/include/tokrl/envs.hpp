#pragma once

// Desk-scale token-action environments.
//
//  * KeyTokenBandit: one observation, actions "walk to <destination>"; only
//    the destination (the key token) matters.
//  * TokenKitchen: a fully observable grid kitchen with macro-actions
//    rendered as "verb object [target] <eoa>" and Overcooked-style rewards.
//  * TableEnv: small deterministic environments given as explicit tables;
//    used for the synthetic chain family and hand-checkable models.

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tokrl/token_mdp.hpp"

namespace tokrl {

struct KeyTokenBanditConfig {
  std::map<std::string, double> reward_map{{"kitchen", 1.0}, {"bathroom", 0.0}, {"bedroom", 0.0}};
};

class KeyTokenBandit final : public Environment {
 public:
  explicit KeyTokenBandit(KeyTokenBanditConfig config = {});

  std::string name() const override { return "key_token"; }
  const Vocabulary& vocab() const override { return vocab_; }
  std::size_t max_action_len() const override { return 3; }
  std::optional<TokenId> end_token() const override { return std::nullopt; }
  std::size_t fixed_arity() const override { return 3; }

  Observation reset(std::uint64_t seed) override;
  StepResult step(const Action& action) override;
  Observation observe() const override;
  bool terminated() const override { return done_; }

  std::vector<Action> legal_actions(const Observation& obs) const override;
  std::vector<Action> action_grammar() const override;
  std::size_t num_observations() const override { return 1; }
  std::vector<Observation> start_observations() const override { return {observe()}; }
  void restore(const Observation& obs) override;
  std::unique_ptr<Environment> clone() const override;

  Action action_for(const std::string& destination) const;

 private:
  KeyTokenBanditConfig config_;
  Vocabulary vocab_;
  std::vector<std::string> destinations_;
  bool done_ = false;
};

struct KitchenRewards {
  double chop_correct = 0.2;
  double correct_delivery = 1.0;
  double wrong_delivery = -0.1;
  double step_penalty = -0.001;
};

struct KitchenConfig {
  std::size_t height = 5;
  std::size_t width = 5;
  std::vector<std::string> recipe{"tomato", "lettuce"};
  std::size_t max_episode_steps = 50;
  KitchenRewards rewards;
};

class TokenKitchen final : public Environment {
 public:
  static constexpr std::array<const char*, 3> kIngredients{"tomato", "lettuce", "onion"};
  static constexpr std::array<const char*, 6> kStations{"tomato",  "lettuce", "onion",
                                                        "board",   "plate",   "counter"};

  enum class ItemState : std::uint8_t { Raw, Chopped, Plated, Delivered };
  // What the agent carries: nothing, one ingredient (by index), or the plate.
  enum class Holding : std::uint8_t { None, Tomato, Lettuce, Onion, Plate };

  struct Cell {
    int row = 0;
    int col = 0;
    bool operator==(const Cell&) const = default;
  };

  struct State {
    Cell agent;
    Holding holding = Holding::None;
    std::array<ItemState, 3> items{ItemState::Raw, ItemState::Raw, ItemState::Raw};
    bool operator==(const State&) const = default;
  };

  explicit TokenKitchen(KitchenConfig config = {});

  std::string name() const override { return "kitchen"; }
  const Vocabulary& vocab() const override { return vocab_; }
  std::size_t max_action_len() const override { return 4; }
  std::optional<TokenId> end_token() const override { return eoa_; }

  Observation reset(std::uint64_t seed) override;
  StepResult step(const Action& action) override;
  Observation observe() const override { return render(state_); }
  bool terminated() const override { return done_; }

  std::vector<Action> legal_actions(const Observation& obs) const override;
  std::vector<Action> action_grammar() const override;
  std::size_t num_observations() const override { return states_.size(); }
  std::vector<Observation> start_observations() const override;
  void restore(const Observation& obs) override;
  std::unique_ptr<Environment> clone() const override;

  const KitchenConfig& config() const noexcept { return config_; }
  const State& state() const noexcept { return state_; }
  void set_state(const State& s);
  std::size_t step_count() const noexcept { return step_count_; }
  Cell station_cell(std::size_t station) const { return stations_.at(station); }
  Cell access_cell(std::size_t station) const;
  std::vector<Cell> interior_cells() const;
  Action parse(std::string_view text) const { return Action{vocab_.encode(text)}; }

  // Pure transition used by step() and by the reachability sweep.
  struct Outcome {
    State next;
    double reward = 0.0;
    bool success = false;
  };
  Outcome transition(const State& s, const Action& action) const;

 private:
  std::vector<Action> applicable(const State& s) const;
  Observation render(const State& s) const;
  std::uint64_t key(const State& s) const;
  void enumerate_states();

  KitchenConfig config_;
  Vocabulary vocab_;
  TokenId eoa_ = 0;
  std::array<bool, 3> in_recipe_{};
  std::vector<Cell> stations_;
  std::vector<State> states_;
  std::unordered_map<std::uint64_t, std::size_t> state_index_;
  State state_;
  std::size_t step_count_ = 0;
  bool done_ = false;
};

// Explicit deterministic environment. Each observation lists its actions;
// an action either moves to another observation or terminates.
struct TableAction {
  std::string text;  // space-separated tokens
  double reward = 0.0;
  std::optional<std::size_t> next;  // nullopt: terminal
};

struct TableEnvSpec {
  std::string name = "table";
  std::vector<std::string> vocab;
  std::optional<std::string> end_token;
  std::size_t fixed_arity = 0;
  std::vector<std::vector<TableAction>> actions;  // per observation
  std::vector<std::size_t> starts{0};
  std::size_t max_episode_steps = 0;  // 0: unbounded
};

class TableEnv final : public Environment {
 public:
  explicit TableEnv(TableEnvSpec spec);

  std::string name() const override { return spec_.name; }
  const Vocabulary& vocab() const override { return vocab_; }
  std::size_t max_action_len() const override { return max_len_; }
  std::optional<TokenId> end_token() const override { return eoa_; }
  std::size_t fixed_arity() const override { return spec_.fixed_arity; }

  Observation reset(std::uint64_t seed) override;
  StepResult step(const Action& action) override;
  Observation observe() const override;
  bool terminated() const override { return done_; }

  std::vector<Action> legal_actions(const Observation& obs) const override;
  std::vector<Action> action_grammar() const override;
  std::size_t num_observations() const override { return spec_.actions.size(); }
  std::vector<Observation> start_observations() const override;
  void restore(const Observation& obs) override;
  std::unique_ptr<Environment> clone() const override;

 private:
  TableEnvSpec spec_;
  Vocabulary vocab_;
  std::optional<TokenId> eoa_;
  std::vector<std::vector<Action>> parsed_;
  std::size_t max_len_ = 0;
  std::size_t current_ = 0;
  std::size_t steps_ = 0;
  bool done_ = false;
};

// Synthetic chain: `length` observations in a line, each offering
// "next pad..." (advance; unit reward when leaving the last observation,
// which terminates) and "quit pad..." (terminate with reward 0). Both actions
// have `action_len` tokens.
std::unique_ptr<TableEnv> make_chain_env(std::size_t length, std::size_t action_len);

// Two observations: o0 has one 3-token action (reward r0) into o1; o1 has a
// 2-token action with reward r1 and a weaker 2-token action, both terminal.
std::unique_ptr<TableEnv> make_two_step_env(double r0 = 1.0, double r1 = 2.0, double r1_alt = 0.5);

}  // namespace tokrl
