// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedmn/pool.hpp"

namespace fedmn {

/// Text checkpoint, parameters keyed by name:
///   fedmn-pool v1
///   arch <widths> <input> <enc_out> <hidden> <block_out> <classes>
///   hyp <dx> <dy> <hidden>
///   param <name> <rows> <cols>
///   <rows*cols values, row-major, full double precision>
///   ...
///   end
void save_pool(const std::string& path, const ModulePool& pool);

/// Rebuilds the pool from a checkpoint; every parameter in the file must
/// match one in the reconstructed architecture and vice versa.
ModulePool load_pool(const std::string& path);

}  // namespace fedmn
