#pragma once

#include <cstdint>
#include <filesystem>

#include "dricl/model.hpp"
#include "dricl/trainer.hpp"

namespace dricl {

class ChecksumError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary checkpoint, little-endian host layout:
///   "DRICLCKP" | u32 version | u32 scalar bytes (4 or 8) | i32 x 6 dims
///   (vocab, width, layers, heads, max_positions, ff_width) | u32 n + n
///   vocabulary symbol bytes | u64 tensor count | per tensor: u32 name
///   length, name, u64 rows, u64 cols, row-major values | u32 CRC-32 of
///   every preceding byte.
/// Tensors appear in ModelParams::for_each_tensor order.
template <typename Scalar>
void save_checkpoint(const ModelParams<Scalar>& params, const Vocabulary& vocab, const std::filesystem::path& path);

/// Loads at the requested precision; values stored at another precision
/// are converted.
template <typename Scalar>
ModelParams<Scalar> load_checkpoint(const std::filesystem::path& path, Vocabulary* vocab = nullptr);

Precision checkpoint_precision(const std::filesystem::path& path);

}  // namespace dricl
