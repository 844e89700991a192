#pragma once

// Core types of the token-level decision process: a finite vocabulary,
// observations and actions as token sequences, per-step records carrying
// token log-probabilities and prefix values, and the environment interface.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tokrl/errors.hpp"

namespace tokrl {

using TokenSpan = std::span<const TokenId>;

class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  TokenId index(std::string_view token) const;
  std::optional<TokenId> find(std::string_view token) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  std::vector<TokenId> encode(std::string_view space_separated) const;
  std::string render(TokenSpan ids) const;

  // Stable across platforms; written into checkpoints and trajectory dumps.
  std::uint64_t hash() const noexcept { return hash_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::uint64_t hash_ = 0;
};

struct Observation {
  std::uint64_t id = 0;
  std::vector<TokenId> text;

  bool operator==(const Observation&) const = default;
};

struct Action {
  std::vector<TokenId> tokens;

  std::size_t size() const noexcept { return tokens.size(); }
  // w^{1:j}; prefix(0) is the empty sequence.
  TokenSpan prefix(std::size_t j) const { return TokenSpan(tokens).first(j); }

  bool operator==(const Action&) const = default;
};

struct StepRecord {
  Observation obs;
  Action action;
  double reward = 0.0;
  Observation next_obs;
  bool done = false;
  std::vector<double> token_logprobs;  // |a| entries, natural log
  std::vector<double> token_values;    // |a| prefix slots + bootstrap V(o', ∅)
};

class Trajectory {
 public:
  Trajectory() = default;
  Trajectory(std::vector<StepRecord> steps, double gamma_a);
  // Deserialization path: the stored discounted return is checked against the steps.
  Trajectory(std::vector<StepRecord> steps, double gamma_a, double discounted_return);

  const std::vector<StepRecord>& steps() const noexcept { return steps_; }
  std::size_t size() const noexcept { return steps_.size(); }
  bool empty() const noexcept { return steps_.empty(); }
  const StepRecord& operator[](std::size_t t) const { return steps_[t]; }

  double gamma_a() const noexcept { return gamma_a_; }
  double episode_return() const noexcept { return episode_return_; }
  double discounted_return() const noexcept { return discounted_return_; }
  bool terminated() const noexcept { return !steps_.empty() && steps_.back().done; }
  std::size_t token_count() const noexcept;

  // Copy with refreshed prefix values; values[t] must have |a_t| + 1 entries.
  Trajectory with_token_values(std::vector<std::vector<double>> values) const;

 private:
  void validate() const;

  std::vector<StepRecord> steps_;
  double gamma_a_ = 1.0;
  double episode_return_ = 0.0;
  double discounted_return_ = 0.0;
};

// One micro-step of the flattened token chain, in (t, j) order.
struct TokenTransition {
  std::size_t step = 0;
  std::size_t position = 0;  // j, 1-based
  Observation obs;
  std::vector<TokenId> prefix;  // w^{1:j-1}
  TokenId token = 0;
  bool is_action_final = false;
  double reward = 0.0;                 // only on action-final entries
  std::optional<Observation> next_obs;  // only on action-final entries
};

std::vector<TokenTransition> flatten_to_token_transitions(const Trajectory& traj);

// Value of a context: V(o, prefix).
using TokenValueFn = std::function<double(const Observation&, TokenSpan)>;

// The set of actions legal at one observation. Answers which tokens may
// follow a prefix and whether a prefix is already a complete action.
class LegalSet {
 public:
  LegalSet() = default;
  explicit LegalSet(std::vector<Action> actions);

  const std::vector<Action>& actions() const noexcept { return actions_; }
  bool empty() const noexcept { return actions_.empty(); }

  std::vector<bool> next_token_mask(TokenSpan prefix, std::size_t vocab_size) const;
  bool is_complete(TokenSpan prefix) const;
  bool contains(const Action& a) const;
  std::optional<std::size_t> index_of(const Action& a) const;

 private:
  std::vector<Action> actions_;
};

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool done = false;
};

// Environments are single-threaded objects; clone() gives independent
// instances for parallel workers. Every environment here is enumerable:
// observation ids are dense in [0, num_observations()) and identify the
// full state, so restore() can jump to any of them.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string name() const = 0;
  virtual const Vocabulary& vocab() const = 0;
  virtual std::size_t max_action_len() const = 0;
  // Token that closes an action; nullopt for fixed-arity templates.
  virtual std::optional<TokenId> end_token() const = 0;
  // Number of tokens per action for fixed-arity templates, else 0.
  virtual std::size_t fixed_arity() const { return 0; }

  virtual Observation reset(std::uint64_t seed) = 0;
  virtual StepResult step(const Action& action) = 0;
  virtual Observation observe() const = 0;
  virtual bool terminated() const = 0;

  // Non-empty, duplicate-free and prefix-free; a deterministic function of obs.
  virtual std::vector<Action> legal_actions(const Observation& obs) const = 0;
  // Union of every action any observation can make legal.
  virtual std::vector<Action> action_grammar() const = 0;

  virtual std::size_t num_observations() const = 0;
  virtual std::vector<Observation> start_observations() const = 0;
  virtual void restore(const Observation& obs) = 0;

  virtual std::unique_ptr<Environment> clone() const = 0;

  // Whether sampling should stop after `prefix`.
  bool closes_action(TokenSpan prefix) const;
};

// JSON-lines dump: a header line {"vocab_hash", "seed", "gamma_a"} followed by
// one StepRecord per line with token indices.
void write_trajectory_jsonl(std::ostream& out, const Trajectory& traj, std::uint64_t vocab_hash,
                            std::uint64_t seed);
struct TrajectoryDump {
  std::uint64_t vocab_hash = 0;
  std::uint64_t seed = 0;
  Trajectory trajectory;
};
TrajectoryDump read_trajectory_jsonl(std::istream& in);

}  // namespace tokrl
