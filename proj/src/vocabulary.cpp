#include <sstream>

#include <fmt/format.h>

#include "tokrl/rng.hpp"
#include "tokrl/token_mdp.hpp"

namespace tokrl {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2) {
    throw ConfigError(fmt::format("vocabulary needs at least 2 tokens, got {}", tokens_.size()));
  }
  std::uint64_t h = fnv1a("tokrl-vocab");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto& t = tokens_[i];
    if (t.empty()) throw ConfigError("vocabulary tokens must be non-empty");
    if (!index_.emplace(t, static_cast<TokenId>(i)).second) {
      throw ConfigError(fmt::format("duplicate vocabulary token '{}'", t));
    }
    h = fnv1a(t, h);
    h = fnv1a(std::string_view("\0", 1), h);
  }
  hash_ = h;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw std::out_of_range(fmt::format("token id {} out of range", id));
  return tokens_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::index(std::string_view token) const {
  if (auto id = find(token)) return *id;
  throw std::out_of_range(fmt::format("unknown token '{}'", token));
}

std::vector<TokenId> Vocabulary::encode(std::string_view space_separated) const {
  std::vector<TokenId> out;
  std::istringstream in{std::string(space_separated)};
  std::string word;
  while (in >> word) out.push_back(index(word));
  return out;
}

std::string Vocabulary::render(TokenSpan ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

}  // namespace tokrl
