// Copyright 2026 the fusiondet authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FUSIONDET_CHECKPOINT_HPP_
#define FUSIONDET_CHECKPOINT_HPP_

#include <string>

#include "fusiondet/optim.hpp"

namespace fusiondet
{

/// Binary checkpoint: magic "FDCKPT\0", u32 version, u64 tensor count, then
/// per tensor: u32 name length + UTF-8 name, u32 rank, little-endian u64
/// extents, little-endian f32 values row-major. Values are stored as f32
/// regardless of the build's Scalar width.
void save_checkpoint(const std::string & path, const ParamStore & params);

/// Loads values into the already-constructed parameters by name; every file
/// tensor must match an existing parameter's shape. Throws on any mismatch,
/// truncation, or bad magic/version.
void load_checkpoint(const std::string & path, ParamStore & params);

}  // namespace fusiondet

#endif  // FUSIONDET_CHECKPOINT_HPP_
