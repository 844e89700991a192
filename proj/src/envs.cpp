#include "tokrl/envs.hpp"

#include <algorithm>
#include <deque>

#include <fmt/format.h>

#include "tokrl/rng.hpp"

namespace tokrl {

// ---------------------------------------------------------------------------
// KeyTokenBandit

namespace {

std::vector<std::string> bandit_tokens() {
  return {"walk", "to", "kitchen", "bathroom", "bedroom", "<eoa>"};
}

}  // namespace

KeyTokenBandit::KeyTokenBandit(KeyTokenBanditConfig config)
    : config_(std::move(config)), vocab_(bandit_tokens()) {
  for (const char* d : {"kitchen", "bathroom", "bedroom"}) {
    if (!config_.reward_map.count(d)) {
      throw ConfigError(fmt::format("bandit reward map is missing destination '{}'", d));
    }
    destinations_.emplace_back(d);
  }
  if (config_.reward_map.size() != destinations_.size()) {
    throw ConfigError("bandit reward map has unknown destinations");
  }
  double best = config_.reward_map.begin()->second;
  for (const auto& [_, r] : config_.reward_map) best = std::max(best, r);
  const auto n_best = std::count_if(config_.reward_map.begin(), config_.reward_map.end(),
                                    [&](const auto& kv) { return kv.second == best; });
  if (n_best != 1) throw ConfigError("bandit reward map needs exactly one best destination");
}

Observation KeyTokenBandit::reset(std::uint64_t) {
  done_ = false;
  return observe();
}

Observation KeyTokenBandit::observe() const { return Observation{0, {}}; }

Action KeyTokenBandit::action_for(const std::string& destination) const {
  return Action{{vocab_.index("walk"), vocab_.index("to"), vocab_.index(destination)}};
}

StepResult KeyTokenBandit::step(const Action& action) {
  if (done_) throw EpisodeOverError("KeyTokenBandit: step after the episode ended");
  double reward = 0.0;
  for (const auto& d : destinations_) {
    if (action == action_for(d)) reward = config_.reward_map.at(d);
  }
  done_ = true;
  return {observe(), reward, true};
}

std::vector<Action> KeyTokenBandit::legal_actions(const Observation&) const {
  return action_grammar();
}

std::vector<Action> KeyTokenBandit::action_grammar() const {
  std::vector<Action> out;
  for (const auto& d : destinations_) out.push_back(action_for(d));
  return out;
}

void KeyTokenBandit::restore(const Observation& obs) {
  if (obs.id != 0) throw std::out_of_range("KeyTokenBandit has a single observation");
  done_ = false;
}

std::unique_ptr<Environment> KeyTokenBandit::clone() const {
  return std::make_unique<KeyTokenBandit>(*this);
}

// ---------------------------------------------------------------------------
// TokenKitchen

namespace {

constexpr std::size_t kNumIngredients = 3;
constexpr std::size_t kPlateStation = 4;
constexpr std::size_t kBoardStation = 3;
constexpr std::size_t kCounterStation = 5;

const char* item_state_name(TokenKitchen::ItemState s) {
  switch (s) {
    case TokenKitchen::ItemState::Raw: return "raw";
    case TokenKitchen::ItemState::Chopped: return "chopped";
    case TokenKitchen::ItemState::Plated: return "plated";
    case TokenKitchen::ItemState::Delivered: return "delivered";
  }
  return "raw";
}

const char* holding_name(TokenKitchen::Holding h) {
  switch (h) {
    case TokenKitchen::Holding::None: return "none";
    case TokenKitchen::Holding::Tomato: return "tomato";
    case TokenKitchen::Holding::Lettuce: return "lettuce";
    case TokenKitchen::Holding::Onion: return "onion";
    case TokenKitchen::Holding::Plate: return "plate";
  }
  return "none";
}

TokenKitchen::Holding holding_of(std::size_t ingredient) {
  return static_cast<TokenKitchen::Holding>(ingredient + 1);
}

// Border cells clockwise from the top-left corner.
std::vector<TokenKitchen::Cell> border_clockwise(int h, int w) {
  std::vector<TokenKitchen::Cell> out;
  for (int c = 0; c < w; ++c) out.push_back({0, c});
  for (int r = 1; r < h; ++r) out.push_back({r, w - 1});
  for (int c = w - 2; c >= 0; --c) out.push_back({h - 1, c});
  for (int r = h - 2; r >= 1; --r) out.push_back({r, 0});
  return out;
}

std::vector<std::string> kitchen_tokens(std::size_t h, std::size_t w) {
  std::vector<std::string> t{"goto",  "pick",  "chop",    "put",   "deliver", "drop",
                             "tomato", "lettuce", "onion", "board", "plate",   "counter",
                             "<eoa>", "at",    "hold",    "none",  "raw",     "chopped",
                             "plated", "delivered"};
  for (std::size_t r = 0; r < h; ++r) t.push_back(fmt::format("r{}", r));
  for (std::size_t c = 0; c < w; ++c) t.push_back(fmt::format("c{}", c));
  return t;
}

}  // namespace

TokenKitchen::TokenKitchen(KitchenConfig config)
    : config_(std::move(config)), vocab_(kitchen_tokens(config_.height, config_.width)) {
  if (config_.height < 3 || config_.width < 3) {
    throw ConfigError("kitchen grid must be at least 3x3");
  }
  if (config_.max_episode_steps == 0) throw ConfigError("kitchen max_episode_steps must be >= 1");
  if (config_.recipe.empty()) throw ConfigError("kitchen recipe must not be empty");
  for (const auto& item : config_.recipe) {
    auto it = std::find_if(kIngredients.begin(), kIngredients.end(),
                           [&](const char* k) { return item == k; });
    if (it == kIngredients.end()) throw ConfigError(fmt::format("unknown recipe item '{}'", item));
    const auto idx = static_cast<std::size_t>(it - kIngredients.begin());
    if (in_recipe_[idx]) throw ConfigError(fmt::format("recipe lists '{}' twice", item));
    in_recipe_[idx] = true;
  }
  eoa_ = vocab_.index("<eoa>");

  // Stations sit on the border at evenly spaced clockwise positions.
  const auto border =
      border_clockwise(static_cast<int>(config_.height), static_cast<int>(config_.width));
  // Placement order: tomato, lettuce, board, plate, onion, counter.
  constexpr std::array<std::size_t, 6> order{0, 1, 3, 4, 2, 5};
  stations_.resize(kStations.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    stations_[order[k]] = border[k * border.size() / order.size()];
  }
  enumerate_states();
  state_ = states_.front();
}

TokenKitchen::Cell TokenKitchen::access_cell(std::size_t station) const {
  const Cell s = stations_.at(station);
  return {std::clamp(s.row, 1, static_cast<int>(config_.height) - 2),
          std::clamp(s.col, 1, static_cast<int>(config_.width) - 2)};
}

std::vector<TokenKitchen::Cell> TokenKitchen::interior_cells() const {
  std::vector<Cell> out;
  for (int r = 1; r + 1 < static_cast<int>(config_.height); ++r) {
    for (int c = 1; c + 1 < static_cast<int>(config_.width); ++c) out.push_back({r, c});
  }
  return out;
}

std::vector<Action> TokenKitchen::action_grammar() const {
  std::vector<Action> out;
  for (const char* s : kStations) out.push_back(parse(fmt::format("goto {} <eoa>", s)));
  for (const char* i : kIngredients) out.push_back(parse(fmt::format("pick {} <eoa>", i)));
  out.push_back(parse("pick plate <eoa>"));
  for (const char* i : kIngredients) out.push_back(parse(fmt::format("chop {} <eoa>", i)));
  for (const char* i : kIngredients) out.push_back(parse(fmt::format("put {} plate <eoa>", i)));
  for (const char* i : kIngredients) {
    out.push_back(parse(fmt::format("deliver {} counter <eoa>", i)));
  }
  out.push_back(parse("deliver plate counter <eoa>"));
  for (const char* i : kIngredients) out.push_back(parse(fmt::format("drop {} <eoa>", i)));
  out.push_back(parse("drop plate <eoa>"));
  return out;
}

TokenKitchen::Outcome TokenKitchen::transition(const State& s, const Action& action) const {
  Outcome out{s, config_.rewards.step_penalty, false};
  const auto& tk = action.tokens;
  auto word = [&](std::size_t i) -> std::string_view {
    return i < tk.size() && tk[i] < vocab_.size() ? std::string_view(vocab_.token(tk[i]))
                                                  : std::string_view();
  };
  auto ingredient = [](std::string_view w) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < kNumIngredients; ++i) {
      if (w == kIngredients[i]) return i;
    }
    return std::nullopt;
  };
  auto at = [&](std::size_t station) { return s.agent == access_cell(station); };
  const bool closed = !tk.empty() && tk.back() == eoa_;
  if (!closed) return out;

  const auto verb = word(0);
  const auto obj = word(1);
  if (verb == "goto" && tk.size() == 3) {
    for (std::size_t k = 0; k < kStations.size(); ++k) {
      if (obj == kStations[k]) out.next.agent = access_cell(k);
    }
  } else if (verb == "pick" && tk.size() == 3 && s.holding == Holding::None) {
    if (auto i = ingredient(obj); i && at(*i) && s.items[*i] == ItemState::Raw) {
      out.next.holding = holding_of(*i);
    } else if (obj == "plate" && at(kPlateStation)) {
      out.next.holding = Holding::Plate;
    }
  } else if (verb == "chop" && tk.size() == 3) {
    if (auto i = ingredient(obj); i && s.holding == holding_of(*i) &&
                                  s.items[*i] == ItemState::Raw && at(kBoardStation)) {
      out.next.items[*i] = ItemState::Chopped;
      if (in_recipe_[*i]) out.reward += config_.rewards.chop_correct;
    }
  } else if (verb == "put" && tk.size() == 4 && word(2) == "plate") {
    if (auto i = ingredient(obj); i && s.holding == holding_of(*i) &&
                                  s.items[*i] == ItemState::Chopped && at(kPlateStation)) {
      out.next.items[*i] = ItemState::Plated;
      out.next.holding = Holding::None;
    }
  } else if (verb == "deliver" && tk.size() == 4 && word(2) == "counter") {
    const bool holds_obj = s.holding != Holding::None && obj == holding_name(s.holding);
    if (holds_obj && at(kCounterStation)) {
      bool correct = s.holding == Holding::Plate;
      for (std::size_t i = 0; i < kNumIngredients && correct; ++i) {
        correct = (s.items[i] == ItemState::Plated) == in_recipe_[i];
      }
      if (correct) {
        for (std::size_t i = 0; i < kNumIngredients; ++i) {
          if (in_recipe_[i]) out.next.items[i] = ItemState::Delivered;
        }
        out.next.holding = Holding::None;
        out.reward += config_.rewards.correct_delivery;
        out.success = true;
      } else {
        out.reward += config_.rewards.wrong_delivery;
      }
    }
  } else if (verb == "drop" && tk.size() == 3) {
    const bool holds_obj = s.holding != Holding::None && obj == holding_name(s.holding);
    if (holds_obj) {
      const bool raw = s.holding == Holding::Plate ||
                       s.items[static_cast<std::size_t>(s.holding) - 1] == ItemState::Raw;
      if (raw) out.next.holding = Holding::None;
    }
  }
  return out;
}

std::vector<Action> TokenKitchen::applicable(const State& s) const {
  std::vector<Action> out;
  for (const auto& a : action_grammar()) {
    const auto o = transition(s, a);
    // An action is applicable when it changes the state or earns an event reward.
    if (!(o.next == s) || o.reward != config_.rewards.step_penalty) out.push_back(a);
  }
  if (out.empty()) {
    for (std::size_t k = 0; k < kStations.size(); ++k) {
      out.push_back(parse(fmt::format("goto {} <eoa>", kStations[k])));
    }
  }
  return out;
}

std::uint64_t TokenKitchen::key(const State& s) const {
  std::uint64_t k = static_cast<std::uint64_t>(s.agent.row);
  k = k * config_.width + static_cast<std::uint64_t>(s.agent.col);
  k = k * 5 + static_cast<std::uint64_t>(s.holding);
  for (auto item : s.items) k = k * 4 + static_cast<std::uint64_t>(item);
  return k;
}

void TokenKitchen::enumerate_states() {
  std::deque<State> frontier;
  for (const auto& cell : interior_cells()) {
    State s;
    s.agent = cell;
    if (state_index_.emplace(key(s), states_.size()).second) {
      states_.push_back(s);
      frontier.push_back(s);
    }
  }
  while (!frontier.empty()) {
    const State s = frontier.front();
    frontier.pop_front();
    for (const auto& a : applicable(s)) {
      const auto o = transition(s, a);
      if (state_index_.emplace(key(o.next), states_.size()).second) {
        states_.push_back(o.next);
        if (!o.success) frontier.push_back(o.next);
      }
    }
  }
}

Observation TokenKitchen::render(const State& s) const {
  Observation o;
  o.id = state_index_.at(key(s));
  o.text.push_back(vocab_.index("at"));
  o.text.push_back(vocab_.index(fmt::format("r{}", s.agent.row)));
  o.text.push_back(vocab_.index(fmt::format("c{}", s.agent.col)));
  o.text.push_back(vocab_.index("hold"));
  o.text.push_back(vocab_.index(holding_name(s.holding)));
  for (std::size_t i = 0; i < kNumIngredients; ++i) {
    o.text.push_back(vocab_.index(kIngredients[i]));
    o.text.push_back(vocab_.index(item_state_name(s.items[i])));
  }
  return o;
}

std::vector<Observation> TokenKitchen::start_observations() const {
  std::vector<Observation> out;
  for (const auto& cell : interior_cells()) {
    State s;
    s.agent = cell;
    out.push_back(render(s));
  }
  return out;
}

Observation TokenKitchen::reset(std::uint64_t seed) {
  const auto cells = interior_cells();
  CounterRng rng = CounterRng(seed).split("kitchen-start");
  State s;
  s.agent = cells[rng.next_below(cells.size())];
  state_ = s;
  step_count_ = 0;
  done_ = false;
  return observe();
}

void TokenKitchen::set_state(const State& s) {
  if (!state_index_.count(key(s))) throw std::out_of_range("unreachable kitchen state");
  state_ = s;
  step_count_ = 0;
  done_ = std::any_of(s.items.begin(), s.items.end(),
                      [](ItemState i) { return i == ItemState::Delivered; });
}

void TokenKitchen::restore(const Observation& obs) {
  if (obs.id >= states_.size()) throw std::out_of_range("kitchen observation id out of range");
  set_state(states_[obs.id]);
}

StepResult TokenKitchen::step(const Action& action) {
  if (done_) throw EpisodeOverError("TokenKitchen: step after the episode ended");
  const auto o = transition(state_, action);
  state_ = o.next;
  ++step_count_;
  done_ = o.success || step_count_ >= config_.max_episode_steps;
  return {observe(), o.reward, done_};
}

std::vector<Action> TokenKitchen::legal_actions(const Observation& obs) const {
  if (obs.id >= states_.size()) throw std::out_of_range("kitchen observation id out of range");
  return applicable(states_[obs.id]);
}

std::unique_ptr<Environment> TokenKitchen::clone() const {
  return std::make_unique<TokenKitchen>(*this);
}

// ---------------------------------------------------------------------------
// TableEnv

TableEnv::TableEnv(TableEnvSpec spec) : spec_(std::move(spec)), vocab_(spec_.vocab) {
  if (spec_.actions.empty()) throw ConfigError("table environment needs observations");
  if (spec_.end_token) eoa_ = vocab_.index(*spec_.end_token);
  for (const auto& row : spec_.actions) {
    if (row.empty()) throw ConfigError("every table observation needs an action");
    std::vector<Action> parsed;
    for (const auto& a : row) {
      if (a.next && *a.next >= spec_.actions.size()) {
        throw ConfigError(fmt::format("table action '{}' points past the table", a.text));
      }
      parsed.push_back(Action{vocab_.encode(a.text)});
      max_len_ = std::max(max_len_, parsed.back().size());
    }
    LegalSet check(parsed);  // throws on duplicates or prefix clashes
    parsed_.push_back(std::move(parsed));
  }
  for (auto s : spec_.starts) {
    if (s >= spec_.actions.size()) throw ConfigError("table start observation out of range");
  }
  current_ = spec_.starts.front();
}

Observation TableEnv::observe() const { return Observation{current_, {}}; }

Observation TableEnv::reset(std::uint64_t seed) {
  CounterRng rng = CounterRng(seed).split("table-start");
  current_ = spec_.starts[rng.next_below(spec_.starts.size())];
  steps_ = 0;
  done_ = false;
  return observe();
}

StepResult TableEnv::step(const Action& action) {
  if (done_) throw EpisodeOverError(fmt::format("{}: step after the episode ended", spec_.name));
  double reward = 0.0;
  const auto& row = parsed_[current_];
  auto it = std::find(row.begin(), row.end(), action);
  if (it != row.end()) {
    const auto& entry = spec_.actions[current_][static_cast<std::size_t>(it - row.begin())];
    reward = entry.reward;
    if (entry.next) {
      current_ = *entry.next;
    } else {
      done_ = true;
    }
  }
  ++steps_;
  if (spec_.max_episode_steps && steps_ >= spec_.max_episode_steps) done_ = true;
  return {observe(), reward, done_};
}

std::vector<Action> TableEnv::legal_actions(const Observation& obs) const {
  return parsed_.at(obs.id);
}

std::vector<Action> TableEnv::action_grammar() const {
  std::vector<Action> out;
  for (const auto& row : parsed_) {
    for (const auto& a : row) {
      if (std::find(out.begin(), out.end(), a) == out.end()) out.push_back(a);
    }
  }
  return out;
}

std::vector<Observation> TableEnv::start_observations() const {
  std::vector<Observation> out;
  for (auto s : spec_.starts) out.push_back(Observation{s, {}});
  return out;
}

void TableEnv::restore(const Observation& obs) {
  if (obs.id >= spec_.actions.size()) throw std::out_of_range("table observation out of range");
  current_ = obs.id;
  steps_ = 0;
  done_ = false;
}

std::unique_ptr<Environment> TableEnv::clone() const { return std::make_unique<TableEnv>(*this); }

std::unique_ptr<TableEnv> make_chain_env(std::size_t length, std::size_t action_len) {
  if (length == 0 || action_len == 0) throw ConfigError("chain needs length >= 1 and action_len >= 1");
  TableEnvSpec spec;
  spec.name = fmt::format("chain_k{}_len{}", length, action_len);
  spec.vocab = {"next", "quit", "pad"};
  spec.fixed_arity = action_len;
  std::string tail;
  for (std::size_t i = 1; i < action_len; ++i) tail += " pad";
  for (std::size_t k = 0; k < length; ++k) {
    const bool last = k + 1 == length;
    spec.actions.push_back({
        TableAction{"next" + tail, last ? 1.0 : 0.0,
                    last ? std::nullopt : std::optional<std::size_t>(k + 1)},
        TableAction{"quit" + tail, 0.0, std::nullopt},
    });
  }
  return std::make_unique<TableEnv>(std::move(spec));
}

std::unique_ptr<TableEnv> make_two_step_env(double r0, double r1, double r1_alt) {
  TableEnvSpec spec;
  spec.name = "two_step";
  spec.vocab = {"a", "b", "d", "f", "<eoa>"};
  spec.end_token = "<eoa>";
  spec.actions = {
      {TableAction{"a b <eoa>", r0, 1}},
      {TableAction{"d <eoa>", r1, std::nullopt}, TableAction{"f <eoa>", r1_alt, std::nullopt}},
  };
  return std::make_unique<TableEnv>(std::move(spec));
}

}  // namespace tokrl
