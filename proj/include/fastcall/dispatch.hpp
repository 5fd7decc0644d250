#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fastcall/cost_model.hpp"
#include "fastcall/devices.hpp"
#include "fastcall/fc_ir.hpp"
#include "fastcall/memory_model.hpp"

namespace fastcall {

inline constexpr std::uint32_t kTableEntries = 64;
inline constexpr std::uint64_t kFastcallSyscallNr = 442;
inline constexpr std::uint64_t kIoctlSyscallNr = 16;
inline constexpr std::uint64_t kGetpidSyscallNr = 39;
inline constexpr unsigned kDefaultCpuCount = 4;
inline constexpr std::uint64_t kDefaultScratchpadBytes = 4096;

using Bindings = std::map<std::uint32_t, RegionId>;
using SyscallRegisters = std::array<std::uint64_t, 6>;

class DispatchError : public std::runtime_error {
 public:
  enum class Code {
    UnknownProcess,
    DuplicateProcess,
    PrivilegeViolation,
    NotVerified,
    BindingMismatch,
    ConfigMismatch,
    TableFull,
    EmptySlot,
  };
  DispatchError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

// A broken simulator invariant, e.g. a verified program faulting at run time.
class InvariantViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Simulator;
struct FastcallTableEntry;

// Kernel-infrastructure view of an entry's bound regions, handed to policy hooks.
class EntryView {
 public:
  EntryView(Simulator& sim, ProcessId pid, const FastcallTableEntry& entry)
      : sim_(sim), pid_(pid), entry_(entry) {}

  std::span<std::uint8_t> bytes(std::uint32_t slot);
  RingDevice* device(std::uint32_t slot);
  const std::vector<std::uint64_t>& config() const;

 private:
  Simulator& sim_;
  ProcessId pid_;
  const FastcallTableEntry& entry_;
};

struct PolicyVerdict {
  std::optional<std::string> deny;
  double cost_ns = 0;
};

// Invocation-time policy check attached to an entry by its provider. Runs on the invoking CPU
// with interrupts disabled, before the program body.
class PolicyHook {
 public:
  virtual ~PolicyHook() = default;
  virtual PolicyVerdict before_invoke(EntryView& entry, std::uint64_t now_ns,
                                      const CostParameters& costs) = 0;
};

struct FastcallTableEntry {
  std::uint32_t index = 0;
  ir::FastcallProgram program;
  ir::VerifierReport report;
  Bindings bindings;
  std::vector<std::uint64_t> config;
  std::string provider_id;
  std::shared_ptr<PolicyHook> policy;
  RegionId text{};
  std::vector<RegionId> owned_regions;  // text plus claimed bindings; unmapped on removal
};

class FastcallTable {
 public:
  const FastcallTableEntry* at(std::uint64_t index) const;
  std::optional<std::uint32_t> lowest_free() const;
  std::size_t size() const;
  bool empty() const { return size() == 0; }

 private:
  friend class Simulator;
  std::array<std::optional<FastcallTableEntry>, kTableEntries> entries_;
};

struct CpuContext {
  unsigned cpu_id = 0;
  bool interrupts_disabled = false;
};

enum class Outcome { Return, TableError, PolicyDenied, RoutedToKernel };
std::string_view to_string(Outcome outcome);

struct InvocationResult {
  Outcome outcome = Outcome::TableError;
  std::uint64_t value = 0;
  std::string reason;
  double modeled_latency_ns = 0;
  Mechanism mechanism = Mechanism::Fastcall;
  std::optional<unsigned> cpu;
  std::size_t instructions_executed = 0;
  std::vector<ir::MemoryAccess> trace;
};

struct InstallRequest {
  std::string provider_id;
  ir::FastcallProgram program;
  std::optional<ir::VerifierReport> report;
  Bindings bindings;
  // Must match the parameters the program was verified with; empty means "use the program's".
  std::vector<std::uint64_t> config;
  std::shared_ptr<PolicyHook> policy;
};

struct ExecutionWindow {
  unsigned cpu = 0;
  ProcessId pid{};
  std::uint64_t index = 0;
  double start_ns = 0;
  double end_ns = 0;
};

struct SimulatorOptions {
  unsigned cpu_count = kDefaultCpuCount;
  std::uint64_t scratchpad_bytes = kDefaultScratchpadBytes;
};

class Simulator {
 public:
  explicit Simulator(CostParameters costs = CostParameters::defaults(),
                     SimulatorOptions options = {});

  const CostParameters& costs() const { return costs_; }
  MemoryModel& memory() { return memory_; }
  const MemoryModel& memory() const { return memory_; }

  void create_process(ProcessId pid);
  bool has_process(ProcessId pid) const { return tables_.count(pid) != 0; }
  const FastcallTable& table(ProcessId pid) const;

  InvocationResult syscall_entry(ProcessId pid, std::uint64_t syscall_number,
                                 const SyscallRegisters& registers,
                                 MitigationSetting setting = MitigationSetting::Full);
  // `args` land in r1..r5; r0 and r6..r15 start at zero.
  InvocationResult invoke_fastcall(ProcessId pid, std::uint64_t index,
                                   std::span<const std::uint64_t> args = {},
                                   MitigationSetting setting = MitigationSetting::Full);

  std::uint32_t install_entry(ProcessId pid, InstallRequest request,
                              AccessDomain caller = AccessDomain::KernelInfra);
  void remove_entry(ProcessId pid, std::uint64_t index);

  // fork(): copies user memory, resets the child's fastcall space and table.
  ProcessId fork_process(ProcessId parent);
  void on_fork(ProcessId parent, ProcessId child);
  double last_fork_latency_ns() const { return last_fork_latency_ns_; }

  // DeviceMMIO region backed by a ring device.
  const MemoryRegion& map_device(ProcessId pid, std::uint32_t depth,
                                 std::optional<std::uint32_t> owner = std::nullopt);
  RingDevice* device(RegionId region);

  // Application-side memory access; faults throw MemoryError.
  void user_write(ProcessId pid, std::uint64_t address, std::span<const std::uint8_t> data);
  std::vector<std::uint8_t> user_read(ProcessId pid, std::uint64_t address, std::size_t length);

  double now_ns() const { return clock_ns_; }
  void set_clock(double ns) { clock_ns_ = ns; }
  void advance_clock(double ns) { clock_ns_ += ns; }

  const std::vector<CpuContext>& cpus() const { return cpus_; }
  const std::vector<ExecutionWindow>& windows() const { return windows_; }
  void clear_windows() { windows_.clear(); }
  std::optional<RegionId> scratchpad(ProcessId pid, unsigned cpu) const;

 private:
  friend class EntryView;
  class Port;

  FastcallTable& table_mut(ProcessId pid);
  void ensure_scratchpads(ProcessId pid);
  void check_bindings(ProcessId pid, const ir::FastcallProgram& program, const Bindings& bindings);

  CostParameters costs_;
  SimulatorOptions options_;
  MemoryModel memory_;
  std::map<ProcessId, FastcallTable> tables_;
  std::map<RegionId, RingDevice> devices_;
  std::map<std::pair<ProcessId, unsigned>, RegionId> scratchpads_;
  std::vector<CpuContext> cpus_;
  unsigned next_cpu_ = 0;
  std::vector<ExecutionWindow> windows_;
  double clock_ns_ = 0;
  double last_fork_latency_ns_ = 0;
};

}  // namespace fastcall
