#include "tokrl/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "tokrl/envs.hpp"
#include "tokrl/rng.hpp"

namespace tokrl {

namespace {

enum class Kind { Real, Count, Bool, Text, RealOrEmpty, SeedList };

struct Entry {
  KeySpec spec;
  Kind kind;
};

const std::vector<Entry>& entries() {
  static const std::vector<Entry> e = {
      {{"env.name", "key_token", "key_token | kitchen | chain | two_step"}, Kind::Text},
      {{"env.height", "5", "kitchen grid rows"}, Kind::Count},
      {{"env.width", "5", "kitchen grid columns"}, Kind::Count},
      {{"env.recipe", "tomato,lettuce", "kitchen recipe ingredients"}, Kind::Text},
      {{"env.max_episode_steps", "50", "kitchen episode limit"}, Kind::Count},
      {{"env.chop_reward", "0.2", "kitchen: chopping a recipe ingredient"}, Kind::Real},
      {{"env.delivery_reward", "1.0", "kitchen: correct delivery (terminal)"}, Kind::Real},
      {{"env.wrong_delivery_reward", "-0.1", "kitchen: wrong delivery"}, Kind::Real},
      {{"env.step_penalty", "-0.001", "kitchen: every step"}, Kind::Real},
      {{"env.kitchen_reward", "1.0", "key_token: reward of kitchen"}, Kind::Real},
      {{"env.bathroom_reward", "0.0", "key_token: reward of bathroom"}, Kind::Real},
      {{"env.bedroom_reward", "0.0", "key_token: reward of bedroom"}, Kind::Real},
      {{"env.chain_length", "3", "chain: number of observations"}, Kind::Count},
      {{"env.action_len", "2", "chain: tokens per action"}, Kind::Count},
      {{"algo.name", "poad", "poad | ntpo | action_ppo"}, Kind::Text},
      {{"algo.gamma_a", "0.95", "discount across actions"}, Kind::Real},
      {{"algo.gamma_w", "", "discount inside actions (ntpo only)"}, Kind::RealOrEmpty},
      {{"algo.lambda", "0.95", "GAE lambda"}, Kind::Real},
      {{"algo.advantage", "gae", "gae | td"}, Kind::Text},
      {{"algo.normalize_advantages", "true", "per-batch advantage normalization"}, Kind::Bool},
      {{"algo.clip", "0.2", "PPO clip"}, Kind::Real},
      {{"algo.value_coef", "0.5", "value loss coefficient"}, Kind::Real},
      {{"algo.entropy_coef", "0.01", "entropy bonus"}, Kind::Real},
      {{"algo.kl_threshold", "0.02", "early-stop threshold on approximate KL"}, Kind::Real},
      {{"train.actor_lr", "3e-3", "actor learning rate"}, Kind::Real},
      {{"train.critic_lr", "1e-2", "critic learning rate"}, Kind::Real},
      {{"train.ppo_epochs", "5", "passes per update"}, Kind::Count},
      {{"train.num_mini_batch", "2", "minibatches per pass"}, Kind::Count},
      {{"train.batch_size", "128", "env steps per update"}, Kind::Count},
      {{"train.rollout_threads", "4", "parallel env workers"}, Kind::Count},
      {{"train.max_grad_norm", "0.5", "global gradient clipping"}, Kind::Real},
      {{"train.total_env_steps", "2000", "training budget"}, Kind::Count},
      {{"train.seed", "1,2,3", "seed list"}, Kind::SeedList},
      {{"train.backend", "tabular", "tabular | smallnet"}, Kind::Text},
      {{"train.hidden", "64", "smallnet hidden width"}, Kind::Count},
      {{"train.use_mask", "true", "restrict sampling to legal actions"}, Kind::Bool},
      {{"train.checkpoint_every", "0", "updates between checkpoints (0: off)"}, Kind::Count},
      {{"output.name", "", "run label (default: <algo>_<env>)"}, Kind::Text},
      {{"output.dir", "runs", "output root (TOKRL_OUT overrides)"}, Kind::Text},
  };
  return e;
}

const Entry& entry(const std::string& key) {
  for (const auto& e : entries()) {
    if (e.spec.key == key) return e;
  }
  throw UsageError(fmt::format("unknown config key '{}'; valid keys: {}", key,
                               ExperimentConfig::valid_keys()));
}

double parse_real(const std::string& key, std::string_view text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ConfigError(fmt::format("{}: '{}' is not a finite number", key, text));
  }
  return v;
}

std::uint64_t parse_count(const std::string& key, std::string_view text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(fmt::format("{}: '{}' is not a non-negative integer", key, text));
  }
  return v;
}

bool parse_bool(const std::string& key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean (true/false)", key, text));
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

void check_value(const Entry& e, const std::string& v) {
  switch (e.kind) {
    case Kind::Real: parse_real(e.spec.key, v); break;
    case Kind::Count: parse_count(e.spec.key, v); break;
    case Kind::Bool: parse_bool(e.spec.key, v); break;
    case Kind::RealOrEmpty:
      if (!v.empty()) parse_real(e.spec.key, v);
      break;
    case Kind::SeedList: {
      const auto parts = split_list(v);
      if (parts.empty()) throw ConfigError("train.seed needs at least one seed");
      for (const auto& p : parts) parse_count(e.spec.key, p);
      break;
    }
    case Kind::Text: break;
  }
}

}  // namespace

std::vector<std::string> split_list(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto pos = text.find(sep, start);
    const auto piece = trim(text.substr(start, pos == std::string_view::npos ? text.size() - start : pos - start));
    if (!piece.empty()) out.push_back(piece);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

const std::vector<KeySpec>& ExperimentConfig::schema() {
  static const std::vector<KeySpec> s = [] {
    std::vector<KeySpec> out;
    for (const auto& e : entries()) out.push_back(e.spec);
    return out;
  }();
  return s;
}

std::string ExperimentConfig::valid_keys() {
  std::string out;
  for (const auto& e : entries()) {
    if (!out.empty()) out += ", ";
    out += e.spec.key;
  }
  return out;
}

ExperimentConfig::ExperimentConfig() {
  for (const auto& e : entries()) values_[e.spec.key] = e.spec.default_value;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const auto& e = entry(key);
  const auto v = trim(value);
  check_value(e, v);
  values_[key] = v;
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  entry(key);
  return values_.at(key);
}

void ExperimentConfig::merge_text(std::string_view ini_text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(ini_text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& err) {
    throw ConfigError(fmt::format("config parse error at line {}: {}", err.line(), err.message()));
  }
  static const std::set<std::string> sections{"env", "algo", "train", "output"};
  for (const auto& [section, body] : tree) {
    if (!sections.count(section)) {
      throw UsageError(fmt::format("unknown config section '[{}]'; valid keys: {}", section, valid_keys()));
    }
    if (!body.data().empty() && body.empty()) {
      throw UsageError(fmt::format("key '{}' must live inside a section", section));
    }
    for (const auto& [name, leaf] : body) set(section + "." + name, leaf.data());
  }
}

ExperimentConfig ExperimentConfig::parse(std::string_view ini_text) {
  ExperimentConfig c;
  c.merge_text(ini_text);
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config file '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void ExperimentConfig::apply_override(std::string_view assignment) {
  auto text = assignment;
  while (text.starts_with('-')) text.remove_prefix(1);
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) {
    throw UsageError(fmt::format("override '{}' is not of the form section.key=value", assignment));
  }
  set(trim(text.substr(0, eq)), std::string(text.substr(eq + 1)));
}

std::string ExperimentConfig::serialize() const {
  std::string out;
  std::string section;
  for (const auto& e : entries()) {
    const auto dot = e.spec.key.find('.');
    const auto sec = e.spec.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += e.spec.key.substr(dot + 1) + " = " + values_.at(e.spec.key) + "\n";
  }
  return out;
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a(serialize()); }

std::vector<std::uint64_t> ExperimentConfig::seeds() const {
  std::vector<std::uint64_t> out;
  for (const auto& s : split_list(get("train.seed"))) out.push_back(parse_count("train.seed", s));
  return out;
}

TrainConfig ExperimentConfig::train_config(std::uint64_t seed) const {
  auto real = [&](const char* k) { return parse_real(k, get(k)); };
  auto count = [&](const char* k) { return static_cast<std::size_t>(parse_count(k, get(k))); };
  auto flag = [&](const char* k) { return parse_bool(k, get(k)); };
  TrainConfig c;
  c.algo = parse_algo(get("algo.name"));
  c.gamma_a = real("algo.gamma_a");
  if (!get("algo.gamma_w").empty()) c.gamma_w = real("algo.gamma_w");
  c.lambda = real("algo.lambda");
  const auto& adv = get("algo.advantage");
  if (adv != "gae" && adv != "td") throw ConfigError("algo.advantage must be gae or td");
  c.use_gae = adv == "gae";
  c.normalize_advantages = flag("algo.normalize_advantages");
  c.clip = real("algo.clip");
  c.value_coef = real("algo.value_coef");
  c.entropy_coef = real("algo.entropy_coef");
  c.kl_threshold = real("algo.kl_threshold");
  c.actor_lr = real("train.actor_lr");
  c.critic_lr = real("train.critic_lr");
  c.ppo_epochs = count("train.ppo_epochs");
  c.num_mini_batch = count("train.num_mini_batch");
  c.batch_size = count("train.batch_size");
  c.rollout_threads = count("train.rollout_threads");
  c.max_grad_norm = real("train.max_grad_norm");
  c.total_env_steps = count("train.total_env_steps");
  c.seed = seed;
  c.backend = parse_backend(get("train.backend"));
  c.hidden = count("train.hidden");
  c.use_mask = flag("train.use_mask");
  c.checkpoint_every = count("train.checkpoint_every");
  c.validate();
  return c;
}

EnvFactory ExperimentConfig::env_factory() const {
  auto real = [&](const char* k) { return parse_real(k, get(k)); };
  auto count = [&](const char* k) { return static_cast<std::size_t>(parse_count(k, get(k))); };
  const auto& name = get("env.name");
  if (name == "key_token") {
    KeyTokenBanditConfig c;
    c.reward_map = {{"kitchen", real("env.kitchen_reward")},
                    {"bathroom", real("env.bathroom_reward")},
                    {"bedroom", real("env.bedroom_reward")}};
    KeyTokenBandit probe(c);  // validate eagerly
    return [c] { return std::make_unique<KeyTokenBandit>(c); };
  }
  if (name == "kitchen") {
    KitchenConfig c;
    c.height = count("env.height");
    c.width = count("env.width");
    c.recipe = split_list(get("env.recipe"));
    c.max_episode_steps = count("env.max_episode_steps");
    c.rewards = {real("env.chop_reward"), real("env.delivery_reward"),
                 real("env.wrong_delivery_reward"), real("env.step_penalty")};
    TokenKitchen probe(c);
    return [c] { return std::make_unique<TokenKitchen>(c); };
  }
  if (name == "chain") {
    const auto k = count("env.chain_length");
    const auto len = count("env.action_len");
    make_chain_env(k, len);
    return [k, len]() -> std::unique_ptr<Environment> { return make_chain_env(k, len); };
  }
  if (name == "two_step") {
    return []() -> std::unique_ptr<Environment> { return make_two_step_env(); };
  }
  throw ConfigError(fmt::format("unknown env.name '{}' (key_token, kitchen, chain, two_step)", name));
}

std::string ExperimentConfig::label() const {
  if (!get("output.name").empty()) return get("output.name");
  return get("algo.name") + "_" + get("env.name");
}

}  // namespace tokrl
