#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "notifdt/diffcore/parameters.hpp"

namespace notifdt::diff {

enum class DType : std::uint8_t { kF32 = 1, kF64 = 2 };

// Named tensors plus a free-form config block (JSON text by convention).
// Byte layout is documented in docs/formats.md.
struct CheckpointTensor {
  std::string name;
  DType dtype = DType::kF32;
  bool trainable = true;
  Shape shape;
  std::vector<double> values;  // widened on load
};

struct Checkpoint {
  std::string config;
  std::vector<CheckpointTensor> tensors;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
void write_checkpoint(const std::filesystem::path& path, const ParameterSet<S>& params, const std::string& config);

Checkpoint read_checkpoint(const std::filesystem::path& path);

// Loads checkpoint tensors into an existing set by name. Throws FormatError
// on missing names or shape mismatches.
template <typename S>
void load_parameters(ParameterSet<S>& params, const Checkpoint& ckpt);

}  // namespace notifdt::diff
