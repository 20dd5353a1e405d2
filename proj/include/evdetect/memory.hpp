#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "evdetect/time.hpp"

namespace evdetect {

struct Reading {
  Timestamp t{};
  double power = 0.0;  // kW

  friend bool operator==(const Reading&, const Reading&) = default;
};

class OrderingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Fixed-capacity FIFO over a ring. Index 0 is the oldest element.
template <class T>
class Fifo {
 public:
  explicit Fifo(std::size_t capacity = 0) : slots_(capacity) {}

  std::size_t capacity() const { return slots_.size(); }
  std::size_t size() const { return size_; }
  bool full() const { return size_ == slots_.size(); }

  // Appends x; returns the evicted oldest element when the ring was full.
  std::optional<T> push(const T& x) {
    if (slots_.empty()) return x;
    std::optional<T> evicted;
    if (full()) {
      evicted = slots_[head_];
      slots_[head_] = x;
      head_ = (head_ + 1) % slots_.size();
    } else {
      slots_[(head_ + size_) % slots_.size()] = x;
      ++size_;
    }
    return evicted;
  }

  const T& operator[](std::size_t i) const { return slots_[(head_ + i) % slots_.size()]; }
  const T& back() const { return (*this)[size_ - 1]; }

  std::vector<T> to_vector() const {
    std::vector<T> out;
    out.reserve(size_);
    for (std::size_t i = 0; i < size_; ++i) out.push_back((*this)[i]);
    return out;
  }

 private:
  std::vector<T> slots_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
};

struct Snapshot {
  std::vector<Reading> lm;  // oldest -> newest, length lm
  std::vector<Reading> gm;  // oldest -> newest, length gm
};

struct PushResult {
  std::optional<Reading> entered_gm;  // reading spilled from LM into GM
  std::optional<Reading> discarded;   // reading dropped off the end of GM
};

// Local memory holds the newest lm readings; global memory holds the gm
// readings immediately before them. Buffers are index-based, not wall-clock.
class StreamState {
 public:
  StreamState(std::size_t lm, std::size_t gm) : lm_(lm), gm_(gm) {
    if (lm == 0) throw std::invalid_argument("StreamState: lm must be >= 1");
    if (lm >= gm) throw std::invalid_argument("StreamState: lm must be < gm");
  }

  std::size_t lm() const { return lm_.capacity(); }
  std::size_t gm() const { return gm_.capacity(); }
  std::size_t total_seen() const { return total_seen_; }
  bool complete() const { return total_seen_ >= lm() + gm(); }
  std::optional<Timestamp> last_timestamp() const {
    if (lm_.size() == 0) return std::nullopt;
    return lm_.back().t;
  }

  PushResult push(const Reading& r) {
    if (!std::isfinite(r.power)) throw std::invalid_argument("push: non-finite power");
    if (auto last = last_timestamp(); last && r.t <= *last)
      throw OrderingError("push: timestamp " + format_timestamp(r.t) + " not after " +
                          format_timestamp(*last));
    PushResult res;
    res.entered_gm = lm_.push(r);
    if (res.entered_gm) res.discarded = gm_.push(*res.entered_gm);
    ++total_seen_;
    return res;
  }

  std::optional<Snapshot> snapshot() const {
    if (!complete()) return std::nullopt;
    return Snapshot{lm_.to_vector(), gm_.to_vector()};
  }

  const Fifo<Reading>& lm_buffer() const { return lm_; }
  const Fifo<Reading>& gm_buffer() const { return gm_; }

  // Rebuilds a state from serialized buffers (oldest first).
  static StreamState restore(std::size_t lm, std::size_t gm, const std::vector<Reading>& lm_items,
                             const std::vector<Reading>& gm_items, std::size_t total_seen) {
    if (lm_items.size() > lm || gm_items.size() > gm)
      throw std::invalid_argument("StreamState::restore: buffer exceeds capacity");
    StreamState s(lm, gm);
    for (const auto& r : gm_items) s.gm_.push(r);
    for (const auto& r : lm_items) s.lm_.push(r);
    s.total_seen_ = total_seen;
    return s;
  }

 private:
  Fifo<Reading> lm_;
  Fifo<Reading> gm_;
  std::size_t total_seen_ = 0;
};

}  // namespace evdetect
