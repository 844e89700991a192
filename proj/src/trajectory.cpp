#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include <fmt/format.h>
#include <json.hpp>

#include "tokrl/token_mdp.hpp"

namespace tokrl {

namespace {

double discounted_sum(const std::vector<StepRecord>& steps, double gamma) {
  double total = 0.0, discount = 1.0;
  for (const auto& s : steps) {
    total += discount * s.reward;
    discount *= gamma;
  }
  return total;
}

}  // namespace

Trajectory::Trajectory(std::vector<StepRecord> steps, double gamma_a)
    : steps_(std::move(steps)), gamma_a_(gamma_a) {
  validate();
  for (const auto& s : steps_) episode_return_ += s.reward;
  discounted_return_ = discounted_sum(steps_, gamma_a_);
}

Trajectory::Trajectory(std::vector<StepRecord> steps, double gamma_a, double discounted_return)
    : Trajectory(std::move(steps), gamma_a) {
  if (std::abs(discounted_return - discounted_return_) > 1e-9) {
    throw std::invalid_argument(fmt::format("stored discounted return {} disagrees with steps ({})",
                                            discounted_return, discounted_return_));
  }
}

void Trajectory::validate() const {
  if (!(gamma_a_ > 0.0 && gamma_a_ <= 1.0)) {
    throw ConfigError(fmt::format("gamma_a must lie in (0, 1], got {}", gamma_a_));
  }
  for (std::size_t t = 0; t < steps_.size(); ++t) {
    const auto& s = steps_[t];
    if (s.action.size() == 0) throw std::invalid_argument("actions need at least one token");
    if (s.token_logprobs.size() != s.action.size()) {
      throw std::invalid_argument(fmt::format("step {}: {} logprobs for a {}-token action", t,
                                              s.token_logprobs.size(), s.action.size()));
    }
    if (s.token_values.size() != s.action.size() + 1) {
      throw std::invalid_argument(fmt::format("step {}: expected {} token values, got {}", t,
                                              s.action.size() + 1, s.token_values.size()));
    }
    for (double lp : s.token_logprobs) {
      if (!std::isfinite(lp) || lp > 0.0) {
        throw std::invalid_argument(fmt::format("step {}: invalid token logprob {}", t, lp));
      }
    }
    if (s.done && t + 1 != steps_.size()) {
      throw std::invalid_argument(fmt::format("step {} is terminal but not last", t));
    }
  }
}

std::size_t Trajectory::token_count() const noexcept {
  std::size_t n = 0;
  for (const auto& s : steps_) n += s.action.size();
  return n;
}

Trajectory Trajectory::with_token_values(std::vector<std::vector<double>> values) const {
  if (values.size() != steps_.size()) {
    throw std::invalid_argument("with_token_values: one value row per step required");
  }
  auto steps = steps_;
  for (std::size_t t = 0; t < steps.size(); ++t) steps[t].token_values = std::move(values[t]);
  return Trajectory(std::move(steps), gamma_a_);
}

std::vector<TokenTransition> flatten_to_token_transitions(const Trajectory& traj) {
  std::vector<TokenTransition> out;
  out.reserve(traj.token_count());
  for (std::size_t t = 0; t < traj.size(); ++t) {
    const auto& s = traj[t];
    const std::size_t n = s.action.size();
    for (std::size_t j = 1; j <= n; ++j) {
      TokenTransition tr;
      tr.step = t;
      tr.position = j;
      tr.obs = s.obs;
      auto p = s.action.prefix(j - 1);
      tr.prefix.assign(p.begin(), p.end());
      tr.token = s.action.tokens[j - 1];
      tr.is_action_final = (j == n);
      if (tr.is_action_final) {
        tr.reward = s.reward;
        tr.next_obs = s.next_obs;
      }
      out.push_back(std::move(tr));
    }
  }
  return out;
}

LegalSet::LegalSet(std::vector<Action> actions) : actions_(std::move(actions)) {
  for (std::size_t i = 0; i < actions_.size(); ++i) {
    if (actions_[i].size() == 0) throw std::invalid_argument("legal actions must be non-empty");
    for (std::size_t k = 0; k < actions_.size(); ++k) {
      if (i == k) continue;
      const auto& a = actions_[i].tokens;
      const auto& b = actions_[k].tokens;
      if (a.size() <= b.size() && std::equal(a.begin(), a.end(), b.begin())) {
        throw std::invalid_argument("legal action set must be duplicate-free and prefix-free");
      }
    }
  }
}

std::vector<bool> LegalSet::next_token_mask(TokenSpan prefix, std::size_t vocab_size) const {
  std::vector<bool> mask(vocab_size, false);
  for (const auto& a : actions_) {
    if (a.size() <= prefix.size()) continue;
    if (std::equal(prefix.begin(), prefix.end(), a.tokens.begin())) {
      mask.at(a.tokens[prefix.size()]) = true;
    }
  }
  return mask;
}

bool LegalSet::is_complete(TokenSpan prefix) const {
  return std::any_of(actions_.begin(), actions_.end(), [&](const Action& a) {
    return std::equal(prefix.begin(), prefix.end(), a.tokens.begin(), a.tokens.end());
  });
}

std::optional<std::size_t> LegalSet::index_of(const Action& a) const {
  auto it = std::find(actions_.begin(), actions_.end(), a);
  if (it == actions_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - actions_.begin());
}

bool LegalSet::contains(const Action& a) const { return index_of(a).has_value(); }

bool Environment::closes_action(TokenSpan prefix) const {
  if (prefix.empty()) return false;
  if (auto eoa = end_token(); eoa && prefix.back() == *eoa) return true;
  const std::size_t arity = fixed_arity();
  return arity != 0 && prefix.size() == arity;
}

// ---------------------------------------------------------------------------
// JSON-lines trajectory dump

namespace {

nlohmann::json to_json(const Observation& o) { return {{"id", o.id}, {"text", o.text}}; }

Observation observation_from(const nlohmann::json& j) {
  Observation o;
  o.id = j.at("id").get<std::uint64_t>();
  o.text = j.at("text").get<std::vector<TokenId>>();
  return o;
}

}  // namespace

void write_trajectory_jsonl(std::ostream& out, const Trajectory& traj, std::uint64_t vocab_hash,
                            std::uint64_t seed) {
  nlohmann::json header = {{"vocab_hash", vocab_hash},
                           {"seed", seed},
                           {"gamma_a", traj.gamma_a()},
                           {"discounted_return", traj.discounted_return()}};
  out << header.dump() << '\n';
  for (const auto& s : traj.steps()) {
    nlohmann::json line = {{"obs", to_json(s.obs)},
                           {"action", s.action.tokens},
                           {"reward", s.reward},
                           {"next_obs", to_json(s.next_obs)},
                           {"done", s.done},
                           {"token_logprobs", s.token_logprobs},
                           {"token_values", s.token_values}};
    out << line.dump() << '\n';
  }
}

TrajectoryDump read_trajectory_jsonl(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("trajectory dump is empty");
  const auto header = nlohmann::json::parse(line);
  TrajectoryDump dump;
  dump.vocab_hash = header.at("vocab_hash").get<std::uint64_t>();
  dump.seed = header.at("seed").get<std::uint64_t>();
  std::vector<StepRecord> steps;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    StepRecord s;
    s.obs = observation_from(j.at("obs"));
    s.action.tokens = j.at("action").get<std::vector<TokenId>>();
    s.reward = j.at("reward").get<double>();
    s.next_obs = observation_from(j.at("next_obs"));
    s.done = j.at("done").get<bool>();
    s.token_logprobs = j.at("token_logprobs").get<std::vector<double>>();
    s.token_values = j.at("token_values").get<std::vector<double>>();
    steps.push_back(std::move(s));
  }
  dump.trajectory = Trajectory(std::move(steps), header.at("gamma_a").get<double>(),
                               header.at("discounted_return").get<double>());
  return dump;
}

}  // namespace tokrl
