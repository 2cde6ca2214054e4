// Copyright 2026 The blockseq Authors
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

// Binary checkpoint: magic "BSML", u32 version, the config text, named
// tensors, then named opaque blobs. Integers are little-endian.

#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "blockseq/tensor.hpp"

namespace blockseq {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config;
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> blobs;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// FormatError on a bad magic or version, IntegrityError on truncation or trailing bytes.
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace blockseq
