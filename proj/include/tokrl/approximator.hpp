#pragma once

// Function approximators over contexts (observation, token prefix) with
// hand-written reverse-mode gradients. Two backends:
//
//  * Tabular: one parameter per (context, output). Actor rows cover only the
//    grammar continuations of a prefix; other tokens read as -inf.
//  * SmallNet: sparse one-hot input (obs id ++ positional prefix tokens),
//    one tanh hidden layer, linear head.

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tokrl/context_space.hpp"

namespace tokrl {

enum class Backend { Tabular, SmallNet };

std::string to_string(Backend b);
Backend parse_backend(std::string_view text);

struct Context {
  std::uint64_t obs = 0;
  std::size_t node = ContextSpace::npos;  // trie node, npos off-grammar
  TokenSpan prefix;
};

class Approximator {
 public:
  virtual ~Approximator() = default;

  virtual Backend backend() const = 0;
  virtual std::size_t output_dim() const = 0;
  // Backend-specific shape numbers recorded in checkpoints.
  virtual std::vector<std::uint64_t> dims() const = 0;
  virtual std::unique_ptr<Approximator> clone() const = 0;

  virtual void forward(const Context& ctx, std::span<double> out) const = 0;
  // grad += (d out / d params)^T dout.
  virtual void backward(const Context& ctx, std::span<const double> dout,
                        std::span<double> grad) const = 0;

  std::vector<double>& params() noexcept { return params_; }
  const std::vector<double>& params() const noexcept { return params_; }
  std::size_t num_params() const noexcept { return params_.size(); }

 protected:
  std::vector<double> params_;
};

// Tabular table over the context space. With `per_token` the node's row has
// one entry per grammar child (actor); otherwise a single entry (critic).
class TabularApprox final : public Approximator {
 public:
  TabularApprox(std::shared_ptr<const ContextSpace> space, bool per_token);

  Backend backend() const override { return Backend::Tabular; }
  std::size_t output_dim() const override { return per_token_ ? space_->vocab_size() : 1; }
  std::vector<std::uint64_t> dims() const override;
  std::unique_ptr<Approximator> clone() const override;

  void forward(const Context& ctx, std::span<double> out) const override;
  void backward(const Context& ctx, std::span<const double> dout,
                std::span<double> grad) const override;

  std::size_t offset(const Context& ctx) const;

 private:
  std::shared_ptr<const ContextSpace> space_;
  bool per_token_;
  std::vector<std::size_t> node_offset_;
  std::size_t per_obs_ = 0;
};

class SmallNet final : public Approximator {
 public:
  SmallNet(std::shared_ptr<const ContextSpace> space, std::size_t outputs, std::size_t hidden,
           std::uint64_t seed);

  Backend backend() const override { return Backend::SmallNet; }
  std::size_t output_dim() const override { return outputs_; }
  std::vector<std::uint64_t> dims() const override;
  std::unique_ptr<Approximator> clone() const override;

  void forward(const Context& ctx, std::span<double> out) const override;
  void backward(const Context& ctx, std::span<const double> dout,
                std::span<double> grad) const override;

  std::size_t input_dim() const noexcept { return inputs_; }
  std::size_t hidden() const noexcept { return hidden_; }

 private:
  std::vector<std::size_t> features(const Context& ctx) const;
  void hidden_activations(const std::vector<std::size_t>& feats, std::span<double> h) const;

  std::shared_ptr<const ContextSpace> space_;
  std::size_t inputs_;
  std::size_t hidden_;
  std::size_t outputs_;
  // Layout: W1 [inputs x hidden] (row per feature), b1 [hidden],
  // W2 [outputs x hidden], b2 [outputs].
  std::size_t w1_ = 0, b1_ = 0, w2_ = 0, b2_ = 0;
};

std::unique_ptr<Approximator> make_approximator(Backend backend,
                                                std::shared_ptr<const ContextSpace> space,
                                                bool actor, std::size_t hidden, std::uint64_t seed);

}  // namespace tokrl
