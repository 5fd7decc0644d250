#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <vector>

namespace fastcall {

class DeviceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Record = std::array<std::uint8_t, 64>;

// Submission ring behind a DeviceMMIO region.
//
// Region layout:
//   [0, depth*64)          command slots, 64 bytes each
//   depth*64               doorbell: any store publishes slot (tail % depth); reads return tail
//   depth*64 + 8           head (read-only, advanced by drain)
//
// Multi-byte values are little-endian.
class RingDevice {
 public:
  static constexpr std::uint64_t kRecordSize = 64;

  explicit RingDevice(std::uint32_t depth);

  std::uint32_t depth() const { return depth_; }
  std::uint64_t region_length() const { return doorbell_offset() + 16; }
  std::uint64_t doorbell_offset() const { return std::uint64_t{depth_} * kRecordSize; }
  std::uint64_t head_offset() const { return doorbell_offset() + 8; }

  void mmio_store(std::uint64_t offset, unsigned width, std::uint64_t value);
  std::uint64_t mmio_load(std::uint64_t offset, unsigned width) const;

  // Returns and consumes every published record, oldest first.
  std::vector<Record> drain();

  std::uint64_t head() const { return head_; }
  std::uint64_t tail() const { return tail_; }
  std::uint64_t doorbell() const { return tail_; }
  std::uint64_t pending() const { return tail_ - head_; }
  bool full() const { return pending() == depth_; }

  std::uint64_t store_count() const { return stores_; }
  std::uint64_t dropped_doorbells() const { return dropped_; }
  std::uint64_t drained_total() const { return drained_; }

 private:
  void check(std::uint64_t offset, unsigned width) const;

  std::uint32_t depth_;
  std::vector<std::uint8_t> slots_;
  std::deque<Record> published_;
  std::uint64_t head_ = 0;
  std::uint64_t tail_ = 0;
  std::uint64_t stores_ = 0;
  std::uint64_t dropped_ = 0;
  std::uint64_t drained_ = 0;
};

}  // namespace fastcall
