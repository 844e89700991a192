#pragma once

// Binary checkpoint: magic "TOKRLCK1", then little-endian u64 fields
// (backend tag, role, vocab hash, dim count, dims..., param count) and the
// parameters as little-endian IEEE-754 doubles.

#include <iosfwd>
#include <string>

#include "tokrl/approximator.hpp"

namespace tokrl {

enum class CheckpointRole : std::uint64_t { Actor = 0, Critic = 1, CriticTarget = 2 };

void write_checkpoint(std::ostream& out, const Approximator& net, CheckpointRole role,
                      std::uint64_t vocab_hash);
// Loads into `net`; throws ModelMismatchError when backend, role, dims or
// vocabulary disagree.
void read_checkpoint(std::istream& in, Approximator& net, CheckpointRole role,
                     std::uint64_t vocab_hash);

}  // namespace tokrl
