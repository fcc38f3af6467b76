#pragma once

#include "mmel/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mmel::diff {

class Model;

enum class CkptDtype : uint8_t { F32 = 0, F64 = 1 };

struct TensorRecord {
    Shape shape;
    std::vector<double> values;
};

/// Binary tensor container.
/// Layout (little-endian): magic "MMELCKPT", u8 version = 1, u8 dtype
/// (0 = f32, 1 = f64), then per tensor: u32 rank, u32 extents, raw values
/// in declaration order. F64 round-trips bit-exactly.
void save_checkpoint(const std::string& path, std::span<const TensorRecord> tensors,
                     CkptDtype dtype = CkptDtype::F64);

std::vector<TensorRecord> load_checkpoint(const std::string& path);

/// Copies records into model parameters; counts and shapes must match.
/// Records beyond the parameter list are returned (e.g. the per-channel
/// normalization vectors a training run appends).
std::vector<TensorRecord> load_params(Model& model, const std::string& path);

std::vector<TensorRecord> snapshot_params(const Model& model);

} // namespace mmel::diff
