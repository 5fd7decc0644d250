#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fastcall {

enum class ProcessId : std::uint32_t {};
enum class RegionId : std::uint64_t {};

enum class RegionKind {
  UserPrivate,
  SharedRW,
  SharedRO,
  Scratchpad,
  FastcallText,
  FastcallPrivate,
  DeviceMMIO,
};

inline constexpr RegionKind kAllRegionKinds[] = {
    RegionKind::UserPrivate,  RegionKind::SharedRW,        RegionKind::SharedRO,
    RegionKind::Scratchpad,   RegionKind::FastcallText,    RegionKind::FastcallPrivate,
    RegionKind::DeviceMMIO,
};

enum class AccessDomain { User, Fastcall, KernelInfra };
enum class Access { Read, Write, Execute };

std::string_view to_string(RegionKind kind);
std::string_view to_string(AccessDomain domain);
std::string_view to_string(Access access);
std::optional<RegionKind> parse_region_kind(std::string_view text);

// Every kind except UserPrivate lives inside the fastcall space.
constexpr bool in_fastcall_space(RegionKind kind) { return kind != RegionKind::UserPrivate; }

/*
 * Protection matrix (rows: domain, columns: region kind).
 *
 *              UserPriv SharedRW SharedRO Scratch Text  FcPriv  MMIO
 *   User       rw-      rw-      r--      ---     ---   ---     ---
 *   Fastcall   ---      rw-      r--      rw-     --x   rw-     rw-
 *   KernelInfra rwx     rwx      rwx      rwx     rwx   rwx     rwx
 *
 * Fastcalls never touch UserPrivate memory: such an access could page-fault.
 */
bool permits(AccessDomain domain, RegionKind kind, Access access);

struct AddressRange {
  std::uint64_t base = 0;
  std::uint64_t length = 0;

  std::uint64_t end() const { return base + length; }
  bool contains(std::uint64_t address, std::uint64_t len) const {
    return address >= base && len <= length && address - base <= length - len;
  }
  bool overlaps(const AddressRange& other) const {
    return base < other.end() && other.base < end();
  }
};

struct MemoryRegion {
  RegionId id{};
  RegionKind kind = RegionKind::UserPrivate;
  std::uint64_t base = 0;
  std::uint64_t length = 0;
  // Fastcall-table index of the entry that owns this region, if any.
  std::optional<std::uint32_t> owner_entry;

  AddressRange range() const { return {base, length}; }
  std::uint64_t end() const { return base + length; }
};

enum class FaultReason {
  OutOfRegion,
  UserWriteToFastcallSpace,
  UserAccessToFastcallSpace,
  FastcallAccessToUserMemory,
  WriteToReadOnly,
  NotExecutable,
  NotData,
};

std::string_view to_string(FaultReason reason);

struct AccessCheck {
  bool allowed = true;
  FaultReason reason = FaultReason::OutOfRegion;
  std::optional<RegionId> region;

  static AccessCheck allow(RegionId id) { return {true, FaultReason::OutOfRegion, id}; }
  static AccessCheck fault(FaultReason r, std::optional<RegionId> id = std::nullopt) {
    return {false, r, id};
  }
  explicit operator bool() const { return allowed; }
};

class MemoryError : public std::runtime_error {
 public:
  enum class Code {
    DuplicateProcess,
    UnknownProcess,
    PrivilegeViolation,
    AddressExhausted,
    InvalidLength,
    UnknownRegion,
  };
  MemoryError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

inline constexpr std::uint64_t kPageSize = 4096;
inline constexpr std::uint64_t kUserSpaceBase = 0x10000;
inline constexpr std::uint64_t kFastcallSpaceBase = 0x7f00'0000'0000ULL;
inline constexpr std::uint64_t kFastcallSpaceSize = 1ULL << 32;

class AddressSpace {
 public:
  explicit AddressSpace(ProcessId pid);

  ProcessId process_id() const { return pid_; }
  AddressRange fastcall_space_bounds() const { return {kFastcallSpaceBase, kFastcallSpaceSize}; }

  // Sorted by base address.
  const std::vector<MemoryRegion>& regions() const { return regions_; }
  const MemoryRegion* find(RegionId id) const;
  const MemoryRegion* region_at(std::uint64_t address) const;
  std::size_t count(RegionKind kind) const;

  AccessCheck check_access(AccessDomain domain, std::uint64_t address, std::uint64_t length,
                           Access access) const;

  // Backing bytes. DeviceMMIO regions have none; their contents live in the device model.
  std::span<std::uint8_t> bytes(RegionId id);
  std::span<const std::uint8_t> bytes(RegionId id) const;

 private:
  friend class MemoryModel;

  const MemoryRegion& insert(MemoryRegion region);
  void erase(RegionId id);
  void set_owner(RegionId id, std::optional<std::uint32_t> owner);

  ProcessId pid_;
  std::vector<MemoryRegion> regions_;
  std::map<RegionId, std::vector<std::uint8_t>> backing_;
  std::uint64_t next_user_ = kUserSpaceBase;
  std::uint64_t next_fastcall_ = kFastcallSpaceBase;
};

// Registry of all simulated address spaces. Region ids are unique across processes.
class MemoryModel {
 public:
  AddressSpace& create_address_space(ProcessId pid);
  AddressSpace& space(ProcessId pid);
  const AddressSpace& space(ProcessId pid) const;
  bool contains(ProcessId pid) const { return spaces_.count(pid) != 0; }
  void destroy(ProcessId pid);

  const MemoryRegion& map_region(ProcessId pid, RegionKind kind, std::uint64_t length,
                                 AccessDomain domain,
                                 std::optional<std::uint32_t> owner_entry = std::nullopt);
  void unmap_region(ProcessId pid, RegionId id, AccessDomain domain);
  void set_owner(ProcessId pid, RegionId id, std::optional<std::uint32_t> owner,
                 AccessDomain domain);

  AccessCheck check_access(ProcessId pid, AccessDomain domain, std::uint64_t address,
                           std::uint64_t length, Access access) const;

  // Copies UserPrivate regions (layout and contents) into a new space; the fastcall space of
  // the child starts empty.
  AddressSpace& fork_address_space(ProcessId parent, ProcessId child);

 private:
  std::map<ProcessId, AddressSpace> spaces_;
  std::uint64_t next_region_ = 1;
};

}  // namespace fastcall
