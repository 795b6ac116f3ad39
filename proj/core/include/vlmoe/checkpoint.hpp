// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "vlmoe/model.hpp"
#include "vlmoe/train.hpp"

namespace vlmoe {

// Binary container:
//   magic "VLMC" | u32 version | u64 config text length | config text |
//   u8 sparse | u64 tensor count |
//   per tensor: u16 name length | name | u8 requires_grad | u32 rank |
//               i64 dims... | raw f64 data |
//   u64 optimizer entries (pairs of m/v tensors, named) |
//   u64 step | 4 x u64 rng state
// Round-trips bitwise: load(save(m)) reproduces forward outputs exactly.
struct CheckpointExtra {
  uint64_t step = 0;
  std::array<uint64_t, 4> rng_state{};
};

void save_checkpoint(const Model& model, const std::string& path,
                     const AdamW* optimizer = nullptr,
                     const CheckpointExtra& extra = {});

Model load_checkpoint(const std::string& path, AdamW* optimizer = nullptr,
                      CheckpointExtra* extra = nullptr);

}  // namespace vlmoe
