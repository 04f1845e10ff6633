#pragma once

#include <string>

#include "plab/binio.hpp"
#include "plab/vit.hpp"

namespace plab {

// PTW1 weight file: magic "PTW1"; u32 tensor count; per tensor u16 name
// length, name, u8 rank, u32 dims..., f32 data row-major. Little-endian.
void write_ptw1(const std::string& path, const BackboneState& state);

// Loads and freezes a backbone; every tensor must be present with the shape
// implied by the config.
BackboneState read_ptw1(const std::string& path, const ViTConfig& config);

// Shape bookkeeping for the canonical tensor names (empty tensor carrier).
Tensor expected_shape_of(const std::string& name, const ViTConfig& config);

}  // namespace plab
