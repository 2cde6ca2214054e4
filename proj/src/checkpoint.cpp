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

#include "blockseq/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "blockseq/errors.hpp"
#include "blockseq/serial.hpp"

namespace blockseq {

namespace {
constexpr char kMagic[4] = {'B', 'S', 'M', 'L'};
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(ckpt.version);
  w.str(ckpt.config);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.str(name);
    w.tensor(t);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.blobs.size()));
  for (const auto& [name, b] : ckpt.blobs) {
    w.str(name);
    w.blob(b);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4) throw IntegrityError("checkpoint is truncated before the magic");
  if (bytes.compare(0, 4, kMagic, 4) != 0) throw FormatError("not a checkpoint: bad magic");
  ByteReader r(std::string_view(bytes).substr(4));
  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  ckpt.config = r.str();
  const std::uint32_t n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str();
    ckpt.tensors.emplace(std::move(name), r.tensor());
  }
  const std::uint32_t n_blobs = r.u32();
  for (std::uint32_t i = 0; i < n_blobs; ++i) {
    std::string name = r.str();
    ckpt.blobs.emplace(std::move(name), r.blob());
  }
  if (!r.at_end()) throw IntegrityError("checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  // Write then rename so a crash never leaves a half-written checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace blockseq
