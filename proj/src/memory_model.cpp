#include "fastcall/memory_model.hpp"

#include <algorithm>
#include <limits>

namespace fastcall {

std::string_view to_string(RegionKind kind) {
  switch (kind) {
    case RegionKind::UserPrivate: return "UserPrivate";
    case RegionKind::SharedRW: return "SharedRW";
    case RegionKind::SharedRO: return "SharedRO";
    case RegionKind::Scratchpad: return "Scratchpad";
    case RegionKind::FastcallText: return "FastcallText";
    case RegionKind::FastcallPrivate: return "FastcallPrivate";
    case RegionKind::DeviceMMIO: return "DeviceMMIO";
  }
  return "?";
}

std::string_view to_string(AccessDomain domain) {
  switch (domain) {
    case AccessDomain::User: return "user";
    case AccessDomain::Fastcall: return "fastcall";
    case AccessDomain::KernelInfra: return "kernel-infra";
  }
  return "?";
}

std::string_view to_string(Access access) {
  switch (access) {
    case Access::Read: return "read";
    case Access::Write: return "write";
    case Access::Execute: return "execute";
  }
  return "?";
}

std::optional<RegionKind> parse_region_kind(std::string_view text) {
  for (RegionKind kind : kAllRegionKinds)
    if (to_string(kind) == text) return kind;
  return std::nullopt;
}

std::string_view to_string(FaultReason reason) {
  switch (reason) {
    case FaultReason::OutOfRegion: return "out-of-region";
    case FaultReason::UserWriteToFastcallSpace: return "user-write-to-fastcall-space";
    case FaultReason::UserAccessToFastcallSpace: return "user-access-to-fastcall-space";
    case FaultReason::FastcallAccessToUserMemory: return "fastcall-access-to-user-memory";
    case FaultReason::WriteToReadOnly: return "write-to-read-only";
    case FaultReason::NotExecutable: return "not-executable";
    case FaultReason::NotData: return "not-data";
  }
  return "?";
}

namespace {

struct Rwx {
  bool r, w, x;
};

Rwx protection(AccessDomain domain, RegionKind kind) {
  switch (domain) {
    case AccessDomain::KernelInfra:
      return {true, true, true};
    case AccessDomain::User:
      switch (kind) {
        case RegionKind::UserPrivate:
        case RegionKind::SharedRW: return {true, true, false};
        case RegionKind::SharedRO: return {true, false, false};
        default: return {false, false, false};
      }
    case AccessDomain::Fastcall:
      switch (kind) {
        case RegionKind::UserPrivate: return {false, false, false};
        case RegionKind::SharedRO: return {true, false, false};
        case RegionKind::FastcallText: return {false, false, true};
        default: return {true, true, false};
      }
  }
  return {false, false, false};
}

FaultReason denial_reason(AccessDomain domain, RegionKind kind, Access access) {
  if (domain == AccessDomain::User && in_fastcall_space(kind))
    return access == Access::Write ? FaultReason::UserWriteToFastcallSpace
                                   : FaultReason::UserAccessToFastcallSpace;
  if (domain == AccessDomain::Fastcall && kind == RegionKind::UserPrivate)
    return FaultReason::FastcallAccessToUserMemory;
  if (access == Access::Execute) return FaultReason::NotExecutable;
  if (kind == RegionKind::FastcallText) return FaultReason::NotData;
  return FaultReason::WriteToReadOnly;
}

std::uint64_t align_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

}  // namespace

bool permits(AccessDomain domain, RegionKind kind, Access access) {
  Rwx p = protection(domain, kind);
  switch (access) {
    case Access::Read: return p.r;
    case Access::Write: return p.w;
    case Access::Execute: return p.x;
  }
  return false;
}

AddressSpace::AddressSpace(ProcessId pid) : pid_(pid) {}

const MemoryRegion* AddressSpace::find(RegionId id) const {
  auto it = std::find_if(regions_.begin(), regions_.end(),
                         [id](const MemoryRegion& r) { return r.id == id; });
  return it == regions_.end() ? nullptr : &*it;
}

const MemoryRegion* AddressSpace::region_at(std::uint64_t address) const {
  auto it = std::upper_bound(regions_.begin(), regions_.end(), address,
                             [](std::uint64_t a, const MemoryRegion& r) { return a < r.base; });
  if (it == regions_.begin()) return nullptr;
  --it;
  return address < it->end() ? &*it : nullptr;
}

std::size_t AddressSpace::count(RegionKind kind) const {
  return static_cast<std::size_t>(std::count_if(
      regions_.begin(), regions_.end(), [kind](const MemoryRegion& r) { return r.kind == kind; }));
}

AccessCheck AddressSpace::check_access(AccessDomain domain, std::uint64_t address,
                                       std::uint64_t length, Access access) const {
  const MemoryRegion* region = region_at(address);
  // Ranges that leave the region they start in are refused even when the neighbouring
  // region would permit the access on its own.
  if (!region || length == 0 || !region->range().contains(address, length))
    return AccessCheck::fault(FaultReason::OutOfRegion, region ? std::optional(region->id)
                                                               : std::nullopt);
  if (!permits(domain, region->kind, access))
    return AccessCheck::fault(denial_reason(domain, region->kind, access), region->id);
  return AccessCheck::allow(region->id);
}

std::span<std::uint8_t> AddressSpace::bytes(RegionId id) {
  auto it = backing_.find(id);
  if (it == backing_.end()) return {};
  return it->second;
}

std::span<const std::uint8_t> AddressSpace::bytes(RegionId id) const {
  auto it = backing_.find(id);
  if (it == backing_.end()) return {};
  return it->second;
}

const MemoryRegion& AddressSpace::insert(MemoryRegion region) {
  if (region.kind != RegionKind::DeviceMMIO)
    backing_[region.id].assign(region.length, 0);
  auto pos = std::lower_bound(regions_.begin(), regions_.end(), region.base,
                              [](const MemoryRegion& r, std::uint64_t b) { return r.base < b; });
  return *regions_.insert(pos, region);
}

void AddressSpace::erase(RegionId id) {
  auto it = std::find_if(regions_.begin(), regions_.end(),
                         [id](const MemoryRegion& r) { return r.id == id; });
  if (it == regions_.end())
    throw MemoryError(MemoryError::Code::UnknownRegion, "region not mapped in this space");
  regions_.erase(it);
  backing_.erase(id);
}

void AddressSpace::set_owner(RegionId id, std::optional<std::uint32_t> owner) {
  for (auto& r : regions_)
    if (r.id == id) {
      r.owner_entry = owner;
      return;
    }
  throw MemoryError(MemoryError::Code::UnknownRegion, "region not mapped in this space");
}

AddressSpace& MemoryModel::create_address_space(ProcessId pid) {
  auto [it, inserted] = spaces_.try_emplace(pid, pid);
  if (!inserted)
    throw MemoryError(MemoryError::Code::DuplicateProcess,
                      "process " + std::to_string(static_cast<std::uint32_t>(pid)) +
                          " already has an address space");
  return it->second;
}

AddressSpace& MemoryModel::space(ProcessId pid) {
  auto it = spaces_.find(pid);
  if (it == spaces_.end())
    throw MemoryError(MemoryError::Code::UnknownProcess,
                      "unknown process " + std::to_string(static_cast<std::uint32_t>(pid)));
  return it->second;
}

const AddressSpace& MemoryModel::space(ProcessId pid) const {
  return const_cast<MemoryModel*>(this)->space(pid);
}

void MemoryModel::destroy(ProcessId pid) { spaces_.erase(pid); }

const MemoryRegion& MemoryModel::map_region(ProcessId pid, RegionKind kind, std::uint64_t length,
                                            AccessDomain domain,
                                            std::optional<std::uint32_t> owner_entry) {
  AddressSpace& as = space(pid);
  if (length == 0) throw MemoryError(MemoryError::Code::InvalidLength, "region length must be > 0");
  if (in_fastcall_space(kind) && domain != AccessDomain::KernelInfra)
    throw MemoryError(MemoryError::Code::PrivilegeViolation,
                      std::string(to_string(domain)) + " domain may not map " +
                          std::string(to_string(kind)) + " regions");

  const AddressRange window = in_fastcall_space(kind)
                                  ? as.fastcall_space_bounds()
                                  : AddressRange{kUserSpaceBase, kFastcallSpaceBase - kUserSpaceBase};
  std::uint64_t& cursor = in_fastcall_space(kind) ? as.next_fastcall_ : as.next_user_;
  if (length > window.end() - cursor || align_up(length, kPageSize) < length)
    throw MemoryError(MemoryError::Code::AddressExhausted,
                      "no room for " + std::to_string(length) + " bytes of " +
                          std::string(to_string(kind)));

  MemoryRegion region;
  region.id = RegionId{next_region_++};
  region.kind = kind;
  region.base = cursor;
  region.length = length;
  region.owner_entry = owner_entry;
  std::uint64_t advance = align_up(length, kPageSize);
  cursor = advance > window.end() - cursor ? window.end() : cursor + advance;
  return as.insert(region);
}

void MemoryModel::unmap_region(ProcessId pid, RegionId id, AccessDomain domain) {
  AddressSpace& as = space(pid);
  const MemoryRegion* r = as.find(id);
  if (!r) throw MemoryError(MemoryError::Code::UnknownRegion, "region not mapped");
  if (in_fastcall_space(r->kind) && domain != AccessDomain::KernelInfra)
    throw MemoryError(MemoryError::Code::PrivilegeViolation,
                      "only the kernel infrastructure may change the fastcall-space layout");
  as.erase(id);
}

void MemoryModel::set_owner(ProcessId pid, RegionId id, std::optional<std::uint32_t> owner,
                            AccessDomain domain) {
  if (domain != AccessDomain::KernelInfra)
    throw MemoryError(MemoryError::Code::PrivilegeViolation,
                      "only the kernel infrastructure may rebind regions");
  space(pid).set_owner(id, owner);
}

AccessCheck MemoryModel::check_access(ProcessId pid, AccessDomain domain, std::uint64_t address,
                                      std::uint64_t length, Access access) const {
  return space(pid).check_access(domain, address, length, access);
}

AddressSpace& MemoryModel::fork_address_space(ProcessId parent, ProcessId child) {
  const AddressSpace& src = space(parent);
  AddressSpace& dst = create_address_space(child);
  for (const MemoryRegion& r : src.regions()) {
    if (r.kind != RegionKind::UserPrivate) continue;
    MemoryRegion copy = r;
    copy.id = RegionId{next_region_++};
    copy.owner_entry.reset();
    dst.insert(copy);
    auto from = src.bytes(r.id);
    std::copy(from.begin(), from.end(), dst.bytes(copy.id).begin());
  }
  dst.next_user_ = src.next_user_;
  return dst;
}

}  // namespace fastcall
