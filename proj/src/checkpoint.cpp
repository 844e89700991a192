#include "tokrl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include <fmt/format.h>

namespace tokrl {

namespace {

constexpr char kMagic[8] = {'T', 'O', 'K', 'R', 'L', 'C', 'K', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw ModelMismatchError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Approximator& net, CheckpointRole role,
                      std::uint64_t vocab_hash) {
  out.write(kMagic, sizeof kMagic);
  put_u64(out, static_cast<std::uint64_t>(net.backend()));
  put_u64(out, static_cast<std::uint64_t>(role));
  put_u64(out, vocab_hash);
  const auto dims = net.dims();
  put_u64(out, dims.size());
  for (auto d : dims) put_u64(out, d);
  put_u64(out, net.num_params());
  for (double p : net.params()) put_u64(out, std::bit_cast<std::uint64_t>(p));
  if (!out) throw std::runtime_error("checkpoint write failed");
}

void read_checkpoint(std::istream& in, Approximator& net, CheckpointRole role,
                     std::uint64_t vocab_hash) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw ModelMismatchError("not a tokrl checkpoint");
  }
  const auto backend = get_u64(in);
  if (backend != static_cast<std::uint64_t>(net.backend())) {
    throw ModelMismatchError(fmt::format("checkpoint backend {} does not match {}", backend,
                                         to_string(net.backend())));
  }
  if (get_u64(in) != static_cast<std::uint64_t>(role)) {
    throw ModelMismatchError("checkpoint holds a different role");
  }
  if (get_u64(in) != vocab_hash) throw ModelMismatchError("checkpoint vocabulary hash differs");
  const auto ndims = get_u64(in);
  std::vector<std::uint64_t> dims(static_cast<std::size_t>(ndims));
  for (auto& d : dims) d = get_u64(in);
  if (dims != net.dims()) throw ModelMismatchError("checkpoint dimensions differ");
  if (get_u64(in) != net.num_params()) throw ModelMismatchError("checkpoint parameter count differs");
  for (double& p : net.params()) p = std::bit_cast<double>(get_u64(in));
}

}  // namespace tokrl
