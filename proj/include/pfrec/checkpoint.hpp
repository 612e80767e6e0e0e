// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "pfrec/param_store.hpp"

namespace pfrec {

/// Named-tensor container:
///
///   "PFRC"  u32 version  u32 entry_count
///   entry*: u32 name_len, name bytes, u8 dtype (1 = f32), u32 rank,
///           u64 extents[rank], f32 payload (little endian)
///   u32 CRC-32 of all payload bytes in entry order
///
/// Entries are sorted by name. Integers are little endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Serializes the slots of `store` whose names start with `prefix`.
std::string encode_checkpoint(const ParamStore<float>& store, std::string_view prefix = "");

/// Parses a container; every slot is added as trainable. Throws DataError on
/// a bad magic, version, truncation or checksum mismatch.
ParamStore<float> decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const ParamStore<float>& store,
                     std::string_view prefix = "");
ParamStore<float> load_checkpoint(const std::string& path);

}  // namespace pfrec
