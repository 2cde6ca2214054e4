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

#include "blockseq/replay.hpp"

#include "blockseq/errors.hpp"
#include "blockseq/serial.hpp"

namespace blockseq {

ReplayMemory::ReplayMemory(std::size_t obs_dim, std::size_t act_dim, std::size_t window, std::size_t capacity_episodes)
    : obs_dim_(obs_dim), act_dim_(act_dim), T_(window), capacity_(capacity_episodes) {
  if (obs_dim == 0 || act_dim == 0) throw ConfigError("replay needs positive observation and action sizes");
  if (window == 0) throw ConfigError("replay window length must be positive");
  if (capacity_episodes == 0) throw ConfigError("replay capacity must be at least one episode");
}

std::size_t ReplayMemory::windows_in(const Episode& e) const {
  const std::size_t n = e.steps(x_dim());
  return n >= T_ ? n - T_ + 1 : 0;
}

void ReplayMemory::begin_episode(const std::vector<double>& o0) {
  if (o0.size() != obs_dim_) throw ShapeError("replay: initial observation has the wrong size");
  if (!episodes_.empty() && !episodes_.back().closed) {
    // An unfinished episode is abandoned; its rows stay usable.
    episodes_.back().closed = true;
  }
  Episode e;
  e.id = next_id_++;
  e.o0 = o0;
  episodes_.push_back(std::move(e));
  evict();
}

void ReplayMemory::evict() {
  while (episodes_.size() > capacity_) {
    eligible_ -= windows_in(episodes_.front());
    episodes_.pop_front();
  }
}

void ReplayMemory::append(const std::vector<double>& action, double reward, const std::vector<double>& next_obs,
                          bool done, bool terminal) {
  if (episodes_.empty() || episodes_.back().closed) throw ProtocolError("replay: append without an open episode");
  if (action.size() != act_dim_ || next_obs.size() != obs_dim_) throw ShapeError("replay: transition has the wrong size");
  Episode& e = episodes_.back();
  const std::size_t before = windows_in(e);
  e.rows.insert(e.rows.end(), action.begin(), action.end());
  e.rows.push_back(reward);
  e.rows.insert(e.rows.end(), next_obs.begin(), next_obs.end());
  e.terminal.push_back(terminal ? 1.0 : 0.0);
  eligible_ += windows_in(e) - before;
  if (done) e.closed = true;
}

std::size_t ReplayMemory::transitions() const {
  std::size_t n = 0;
  for (const auto& e : episodes_) n += e.terminal.size();
  return n;
}

std::uint64_t ReplayMemory::oldest_episode() const {
  if (episodes_.empty()) throw BoundsError("replay is empty");
  return episodes_.front().id;
}

Window ReplayMemory::window(std::size_t index) const {
  if (index >= eligible_) throw BoundsError("replay window index out of range");
  const std::size_t xd = x_dim();
  for (const auto& e : episodes_) {
    const std::size_t w = windows_in(e);
    if (index >= w) {
      index -= w;
      continue;
    }
    const std::size_t s = index;
    Window out;
    out.episode = e.id;
    out.start = s;
    if (s == 0) {
      out.o0 = e.o0;
    } else {
      const double* prev = e.rows.data() + (s - 1) * xd;
      out.o0.assign(prev + act_dim_ + 1, prev + xd);
      out.r_prev = prev[act_dim_];
    }
    out.rows = Tensor({T_, xd}, std::vector<double>(e.rows.begin() + s * xd, e.rows.begin() + (s + T_) * xd));
    out.terminal.assign(e.terminal.begin() + s, e.terminal.begin() + s + T_);
    return out;
  }
  throw BoundsError("replay window index out of range");
}

std::vector<Window> ReplayMemory::sample(std::size_t count, RandomStream& rng) const {
  if (eligible_ == 0) throw BoundsError("replay holds no eligible window");
  std::vector<Window> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(window(rng.index(eligible_)));
  return out;
}

std::string ReplayMemory::serialize() const {
  ByteWriter w;
  w.u64(obs_dim_);
  w.u64(act_dim_);
  w.u64(T_);
  w.u64(capacity_);
  w.u64(next_id_);
  w.u64(episodes_.size());
  for (const auto& e : episodes_) {
    w.u64(e.id);
    w.boolean(e.closed);
    w.doubles(e.o0);
    w.doubles(e.rows);
    w.doubles(e.terminal);
  }
  return w.take();
}

void ReplayMemory::deserialize(const std::string& blob) {
  ByteReader r(blob);
  if (r.u64() != obs_dim_ || r.u64() != act_dim_ || r.u64() != T_) {
    throw CompatibilityError("replay snapshot has different dimensions");
  }
  capacity_ = r.u64();
  next_id_ = r.u64();
  const std::uint64_t n = r.u64();
  episodes_.clear();
  eligible_ = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    Episode e;
    e.id = r.u64();
    e.closed = r.boolean();
    e.o0 = r.doubles();
    e.rows = r.doubles();
    e.terminal = r.doubles();
    if (e.o0.size() != obs_dim_ || e.rows.size() != e.terminal.size() * x_dim()) {
      throw IntegrityError("replay snapshot has an inconsistent episode");
    }
    eligible_ += windows_in(e);
    episodes_.push_back(std::move(e));
  }
}

}  // namespace blockseq
