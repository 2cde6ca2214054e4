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

// Little-endian byte packing shared by checkpoints and state blobs.

#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "blockseq/errors.hpp"
#include "blockseq/tensor.hpp"

namespace blockseq {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void boolean(bool v) { u8(v ? 1 : 0); }
  void raw(std::string_view bytes) { out_.append(bytes); }
  /// u32 length prefix followed by the bytes.
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  /// u64 length prefix; for blobs that may exceed 4 GiB in principle.
  void blob(std::string_view s) {
    u64(s.size());
    raw(s);
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void tensor(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t d : t.shape()) u32(static_cast<std::uint32_t>(d));
    for (double x : t.values()) f64(x);
  }

  const std::string& bytes() const { return out_; }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(need(1)[0]); }
  std::uint32_t u32() {
    const char* p = need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const char* p = need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  bool boolean() { return u8() != 0; }
  std::string raw(std::size_t n) { return std::string(need(n), n); }
  std::string str() { return raw(u32()); }
  std::string blob() {
    const std::uint64_t n = u64();
    if (n > remaining()) throw IntegrityError("truncated data: blob of " + std::to_string(n) + " bytes");
    return raw(static_cast<std::size_t>(n));
  }
  std::vector<double> doubles() {
    const std::uint64_t n = u64();
    if (n > remaining() / 8) throw IntegrityError("truncated data: vector length exceeds payload");
    std::vector<double> v(static_cast<std::size_t>(n));
    for (double& x : v) x = f64();
    return v;
  }
  Tensor tensor() {
    const std::uint32_t rank = u32();
    if (rank > 8) throw FormatError("tensor rank " + std::to_string(rank) + " is implausible");
    Shape shape(rank);
    std::uint64_t count = 1;
    for (auto& d : shape) {
      d = u32();
      count *= d;
    }
    if (count > remaining() / 8) throw IntegrityError("truncated data: tensor payload missing");
    std::vector<double> v(static_cast<std::size_t>(count));
    for (double& x : v) x = f64();
    return Tensor(std::move(shape), std::move(v));
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  const char* need(std::size_t n) {
    if (n > remaining()) throw IntegrityError("truncated data: needed " + std::to_string(n) + " more bytes");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace blockseq
