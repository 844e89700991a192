#include "tokrl/context_space.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace tokrl {

ContextSpace::ContextSpace(const Environment& env)
    : num_obs_(env.num_observations()),
      vocab_size_(env.vocab().size()),
      max_len_(env.max_action_len()),
      vocab_hash_(env.vocab().hash()) {
  auto grammar = env.action_grammar();
  LegalSet check(grammar);  // grammar must itself be prefix-free
  std::sort(grammar.begin(), grammar.end(),
            [](const Action& a, const Action& b) { return a.tokens < b.tokens; });
  nodes_.push_back(Node{});
  for (const auto& a : grammar) {
    if (a.size() > max_len_) {
      throw ConfigError(fmt::format("grammar action of length {} exceeds max_action_len {}",
                                    a.size(), max_len_));
    }
    std::size_t n = 0;
    for (TokenId w : a.tokens) {
      std::size_t c = child(n, w);
      if (c == npos) {
        c = nodes_.size();
        Node fresh;
        fresh.prefix = nodes_[n].prefix;
        fresh.prefix.push_back(w);
        nodes_.push_back(std::move(fresh));
        auto& parent = nodes_[n];
        const auto pos = static_cast<std::size_t>(
            std::lower_bound(parent.tokens.begin(), parent.tokens.end(), w) - parent.tokens.begin());
        parent.tokens.insert(parent.tokens.begin() + static_cast<std::ptrdiff_t>(pos), w);
        parent.next.insert(parent.next.begin() + static_cast<std::ptrdiff_t>(pos), c);
      }
      n = c;
    }
    nodes_[n].complete = true;
  }
}

std::size_t ContextSpace::child(std::size_t node, TokenId token) const {
  const auto& n = nodes_.at(node);
  auto it = std::lower_bound(n.tokens.begin(), n.tokens.end(), token);
  if (it == n.tokens.end() || *it != token) return npos;
  return n.next[static_cast<std::size_t>(it - n.tokens.begin())];
}

std::size_t ContextSpace::find(TokenSpan prefix) const {
  std::size_t n = root();
  for (TokenId w : prefix) {
    n = child(n, w);
    if (n == npos) return npos;
  }
  return n;
}

std::size_t ContextSpace::context_index(std::uint64_t obs, std::size_t node) const {
  if (obs >= num_obs_ || node >= nodes_.size()) {
    throw std::out_of_range(fmt::format("context ({}, {}) out of range", obs, node));
  }
  return static_cast<std::size_t>(obs) * nodes_.size() + node;
}

}  // namespace tokrl
