#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "etp/tensor.hpp"

namespace etp {

/// Binary checkpoint container. Layout (little-endian throughout):
///   magic "ETPC" | u32 version | u64 completed_epochs | u64 global_step |
///   4 x u64 rng state | u64 len + config JSON bytes |
///   u64 count + vocab tokens (u64 len + bytes each) |
///   u64 count + tensor entries:
///     u64 len + name | u8 dtype (0 = f32, 1 = f64) | u32 rank |
///     rank x i64 dims | payload
/// Tensors are written as float32 (training state lives on the float32
/// grid, so save -> load is bitwise identity). Loading never applies
/// partial state: it either returns a complete Checkpoint or throws
/// BadMagicError / VersionError / TruncatedError.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::uint32_t version = kVersion;
    std::uint64_t completed_epochs = 0;
    std::uint64_t global_step = 0;
    std::array<std::uint64_t, 4> rng_state{};
    std::string config_json;
    std::vector<std::string> vocab_tokens;  ///< tokens beyond the reserved ids
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& tensor(const std::string& name) const;  ///< LookupError when absent

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

}  // namespace etp
