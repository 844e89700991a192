#pragma once

// Enumerates the contexts (observation, token prefix) that a policy or critic
// conditions on. Prefixes are the nodes of a trie over the environment's
// action grammar; a context's dense index is obs * num_nodes + node.

#include <optional>
#include <vector>

#include "tokrl/token_mdp.hpp"

namespace tokrl {

class ContextSpace {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  explicit ContextSpace(const Environment& env);

  std::size_t num_observations() const noexcept { return num_obs_; }
  std::size_t vocab_size() const noexcept { return vocab_size_; }
  std::size_t max_action_len() const noexcept { return max_len_; }
  std::uint64_t vocab_hash() const noexcept { return vocab_hash_; }

  std::size_t num_nodes() const noexcept { return nodes_.size(); }
  static constexpr std::size_t root() noexcept { return 0; }
  // Sorted token ids that continue `node` somewhere in the grammar.
  const std::vector<TokenId>& children(std::size_t node) const { return nodes_.at(node).tokens; }
  std::size_t child(std::size_t node, TokenId token) const;  // npos when absent
  const std::vector<TokenId>& prefix(std::size_t node) const { return nodes_.at(node).prefix; }
  bool is_complete(std::size_t node) const { return nodes_.at(node).complete; }
  // Trie node for a prefix, npos when the prefix leaves the grammar.
  std::size_t find(TokenSpan prefix) const;

  std::size_t num_contexts() const noexcept { return num_obs_ * nodes_.size(); }
  std::size_t context_index(std::uint64_t obs, std::size_t node) const;

 private:
  struct Node {
    std::vector<TokenId> prefix;
    std::vector<TokenId> tokens;
    std::vector<std::size_t> next;
    bool complete = false;
  };

  std::size_t num_obs_ = 0;
  std::size_t vocab_size_ = 0;
  std::size_t max_len_ = 0;
  std::uint64_t vocab_hash_ = 0;
  std::vector<Node> nodes_;
};

}  // namespace tokrl
