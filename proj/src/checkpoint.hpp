#pragma once

// Binary checkpoint: "ITNETCK1", u64 entry count, then per entry
// u32 name length, name bytes, u32 rank, u64 dims[rank], f64 values.
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <string>

#include "autograd.hpp"
#include "model.hpp"
#include "random.hpp"

namespace itnet {

struct Checkpoint {
  ModelSpec spec;
  ag::ParamStore params;
  ag::GradMap adam_m;
  ag::GradMap adam_v;
  std::uint64_t step = 0;
  Rng::State rng_state{};
};

std::string checkpoint_bytes(const Checkpoint& ck);
Checkpoint checkpoint_from_bytes(const std::string& bytes, const std::string& origin = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
/// Throws Io when unreadable, Format when malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace itnet
