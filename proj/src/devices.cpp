#include "fastcall/devices.hpp"

#include <algorithm>
#include <string>

namespace fastcall {

RingDevice::RingDevice(std::uint32_t depth) : depth_(depth) {
  if (depth == 0) throw DeviceError("ring depth must be > 0");
  slots_.assign(std::size_t{depth} * kRecordSize, 0);
}

void RingDevice::check(std::uint64_t offset, unsigned width) const {
  if (width != 1 && width != 2 && width != 4 && width != 8)
    throw DeviceError("invalid access width " + std::to_string(width));
  if (offset > region_length() || width > region_length() - offset)
    throw DeviceError("mmio access at offset " + std::to_string(offset) + " outside " +
                      std::to_string(region_length()) + "-byte device window");
}

void RingDevice::mmio_store(std::uint64_t offset, unsigned width, std::uint64_t value) {
  check(offset, width);
  ++stores_;
  if (offset >= head_offset()) return;  // head is read-only
  if (offset >= doorbell_offset()) {
    if (full()) {
      ++dropped_;
      return;
    }
    Record rec;
    auto slot = slots_.begin() + static_cast<std::ptrdiff_t>((tail_ % depth_) * kRecordSize);
    std::copy_n(slot, kRecordSize, rec.begin());
    published_.push_back(rec);
    ++tail_;
    return;
  }
  for (unsigned i = 0; i < width; ++i)
    slots_[offset + i] = static_cast<std::uint8_t>(value >> (8 * i));
}

std::uint64_t RingDevice::mmio_load(std::uint64_t offset, unsigned width) const {
  check(offset, width);
  std::array<std::uint8_t, 16> regs{};
  for (int i = 0; i < 8; ++i) {
    regs[i] = static_cast<std::uint8_t>(tail_ >> (8 * i));
    regs[8 + i] = static_cast<std::uint8_t>(head_ >> (8 * i));
  }
  std::uint64_t v = 0;
  for (unsigned i = 0; i < width; ++i) {
    std::uint64_t at = offset + i;
    std::uint8_t b = at < doorbell_offset() ? slots_[at] : regs[at - doorbell_offset()];
    v |= std::uint64_t{b} << (8 * i);
  }
  return v;
}

std::vector<Record> RingDevice::drain() {
  std::vector<Record> out(published_.begin(), published_.end());
  published_.clear();
  drained_ += out.size();
  head_ = tail_;
  return out;
}

}  // namespace fastcall
