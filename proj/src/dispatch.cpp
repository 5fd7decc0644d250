#include "fastcall/dispatch.hpp"

#include <algorithm>

namespace fastcall {

namespace {

std::string pid_str(ProcessId pid) { return std::to_string(static_cast<std::uint32_t>(pid)); }

}  // namespace

std::string_view to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::Return: return "return";
    case Outcome::TableError: return "table-error";
    case Outcome::PolicyDenied: return "policy-denied";
    case Outcome::RoutedToKernel: return "routed-to-kernel";
  }
  return "?";
}

const FastcallTableEntry* FastcallTable::at(std::uint64_t index) const {
  if (index >= kTableEntries || !entries_[index]) return nullptr;
  return &*entries_[index];
}

std::optional<std::uint32_t> FastcallTable::lowest_free() const {
  for (std::uint32_t i = 0; i < kTableEntries; ++i)
    if (!entries_[i]) return i;
  return std::nullopt;
}

std::size_t FastcallTable::size() const {
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(), [](const auto& e) { return e.has_value(); }));
}

std::span<std::uint8_t> EntryView::bytes(std::uint32_t slot) {
  auto it = entry_.bindings.find(slot);
  if (it == entry_.bindings.end()) return {};
  return sim_.memory_.space(pid_).bytes(it->second);
}

RingDevice* EntryView::device(std::uint32_t slot) {
  auto it = entry_.bindings.find(slot);
  return it == entry_.bindings.end() ? nullptr : sim_.device(it->second);
}

const std::vector<std::uint64_t>& EntryView::config() const { return entry_.config; }

// Fastcall-domain memory for one invocation. Every access is re-checked against the address
// space protection and the interrupts-disabled contract of the executing CPU.
class Simulator::Port : public ir::MemoryPort {
 public:
  Port(Simulator& sim, ProcessId pid, const CpuContext& cpu) : sim_(sim), pid_(pid), cpu_(cpu) {}

  std::uint64_t load(const MemoryRegion& region, std::uint64_t offset, unsigned width) override {
    check(region, offset, width, Access::Read);
    if (RingDevice* dev = sim_.device(region.id)) return dev->mmio_load(offset, width);
    return ir::load_le(sim_.memory_.space(pid_).bytes(region.id), offset, width);
  }

  void store(const MemoryRegion& region, std::uint64_t offset, unsigned width,
             std::uint64_t value) override {
    check(region, offset, width, Access::Write);
    if (RingDevice* dev = sim_.device(region.id)) return dev->mmio_store(offset, width, value);
    ir::store_le(sim_.memory_.space(pid_).bytes(region.id), offset, width, value);
  }

 private:
  void check(const MemoryRegion& region, std::uint64_t offset, unsigned width, Access access) {
    if (!cpu_.interrupts_disabled)
      throw ir::ExecutionFault("fastcall running with interrupts enabled");
    AccessCheck c = sim_.memory_.check_access(pid_, AccessDomain::Fastcall, region.base + offset,
                                              width, access);
    if (!c || c.region != region.id)
      throw ir::ExecutionFault("fastcall " + std::string(to_string(access)) + " refused: " +
                               std::string(to_string(c.reason)));
  }

  Simulator& sim_;
  ProcessId pid_;
  const CpuContext& cpu_;
};

Simulator::Simulator(CostParameters costs, SimulatorOptions options)
    : costs_(std::move(costs)), options_(options) {
  if (options_.cpu_count == 0) throw std::invalid_argument("need at least one CPU");
  for (unsigned i = 0; i < options_.cpu_count; ++i) cpus_.push_back({i, false});
}

void Simulator::create_process(ProcessId pid) {
  if (has_process(pid))
    throw DispatchError(DispatchError::Code::DuplicateProcess, "process " + pid_str(pid) + " exists");
  memory_.create_address_space(pid);
  tables_[pid] = FastcallTable{};
}

const FastcallTable& Simulator::table(ProcessId pid) const {
  auto it = tables_.find(pid);
  if (it == tables_.end())
    throw DispatchError(DispatchError::Code::UnknownProcess, "unknown process " + pid_str(pid));
  return it->second;
}

FastcallTable& Simulator::table_mut(ProcessId pid) {
  return const_cast<FastcallTable&>(table(pid));
}

InvocationResult Simulator::syscall_entry(ProcessId pid, std::uint64_t syscall_number,
                                          const SyscallRegisters& registers,
                                          MitigationSetting setting) {
  table(pid);
  if (syscall_number == kFastcallSyscallNr)
    return invoke_fastcall(pid, registers[0], std::span(registers).subspan(1), setting);

  InvocationResult r;
  r.outcome = Outcome::RoutedToKernel;
  r.mechanism = syscall_number == kIoctlSyscallNr ? Mechanism::Ioctl : Mechanism::Syscall;
  r.modeled_latency_ns = costs_.overhead_ns(r.mechanism, setting);
  clock_ns_ += r.modeled_latency_ns;
  return r;
}

InvocationResult Simulator::invoke_fastcall(ProcessId pid, std::uint64_t index,
                                            std::span<const std::uint64_t> args,
                                            MitigationSetting setting) {
  const FastcallTable& tab = table(pid);
  InvocationResult r;
  r.mechanism = Mechanism::Fastcall;
  r.modeled_latency_ns = costs_.overhead_ns(Mechanism::Fastcall, setting);

  const FastcallTableEntry* entry = tab.at(index);
  if (!entry) {
    r.outcome = Outcome::TableError;
    r.reason = index >= kTableEntries ? "table index out of bounds" : "empty table slot";
    clock_ns_ += r.modeled_latency_ns;
    return r;
  }

  CpuContext& cpu = cpus_[next_cpu_];
  next_cpu_ = (next_cpu_ + 1) % cpus_.size();
  if (cpu.interrupts_disabled)
    throw InvariantViolation("cpu " + std::to_string(cpu.cpu_id) + " re-entered during a fastcall");
  cpu.interrupts_disabled = true;
  r.cpu = cpu.cpu_id;
  const double start = clock_ns_;

  auto finish = [&]() {
    cpu.interrupts_disabled = false;
    windows_.push_back({cpu.cpu_id, pid, index, start, start + r.modeled_latency_ns});
    clock_ns_ = start + r.modeled_latency_ns;
  };

  if (entry->policy) {
    EntryView view(*this, pid, *entry);
    PolicyVerdict v = entry->policy->before_invoke(view, static_cast<std::uint64_t>(start), costs_);
    r.modeled_latency_ns += v.cost_ns;
    if (v.deny) {
      r.outcome = Outcome::PolicyDenied;
      r.reason = *v.deny;
      finish();
      return r;
    }
  }

  ir::MachineState state;
  for (std::size_t i = 0; i < args.size() && i + 1 < ir::kRegisterCount; ++i)
    state.registers[i + 1] = args[i];
  state.config = entry->config;
  const AddressSpace& space = memory_.space(pid);
  for (const auto& decl : entry->program.slots) {
    std::optional<RegionId> id;
    if (decl.kind == RegionKind::Scratchpad) id = scratchpad(pid, cpu.cpu_id);
    else if (auto it = entry->bindings.find(decl.id); it != entry->bindings.end()) id = it->second;
    const MemoryRegion* region = id ? space.find(*id) : nullptr;
    if (!region) {
      cpu.interrupts_disabled = false;
      throw InvariantViolation("entry " + std::to_string(index) + " slot s" +
                               std::to_string(decl.id) + " lost its region");
    }
    state.bound_regions[decl.id] = *region;
  }

  Port port(*this, pid, cpu);
  try {
    ir::InvocationOutcome out = ir::interpret(entry->program, state, port, costs_.instr);
    r.outcome = Outcome::Return;
    r.value = out.return_value;
    r.instructions_executed = out.instructions_executed;
    r.trace = std::move(out.memory_trace);
    r.modeled_latency_ns += out.modeled_cost_ns;
  } catch (const std::exception& e) {
    cpu.interrupts_disabled = false;
    throw InvariantViolation("verified fastcall " + std::to_string(index) + " faulted: " + e.what());
  }
  finish();
  return r;
}

void Simulator::check_bindings(ProcessId pid, const ir::FastcallProgram& program,
                               const Bindings& bindings) {
  const AddressSpace& space = memory_.space(pid);
  auto mismatch = [](const std::string& msg) {
    return DispatchError(DispatchError::Code::BindingMismatch, msg);
  };
  for (const auto& [slot, id] : bindings)
    if (!program.slot(slot)) throw mismatch("binding for undeclared slot s" + std::to_string(slot));
  for (const auto& decl : program.slots) {
    std::string name = "slot s" + std::to_string(decl.id);
    if (decl.kind == RegionKind::Scratchpad) {
      if (bindings.count(decl.id)) throw mismatch(name + ": scratchpads are assigned per CPU");
      if (decl.min_length > options_.scratchpad_bytes)
        throw mismatch(name + " needs more than the per-CPU scratchpad");
      continue;
    }
    auto it = bindings.find(decl.id);
    if (it == bindings.end()) throw mismatch(name + " is not bound");
    const MemoryRegion* r = space.find(it->second);
    if (!r) throw mismatch(name + " is bound to a region outside the process");
    if (r->kind != decl.kind)
      throw mismatch(name + " expects " + std::string(to_string(decl.kind)) + ", got " +
                     std::string(to_string(r->kind)));
    if (r->length < decl.min_length) throw mismatch(name + " is bound to a region that is too small");
  }
}

void Simulator::ensure_scratchpads(ProcessId pid) {
  for (unsigned cpu = 0; cpu < cpus_.size(); ++cpu) {
    auto key = std::pair(pid, cpu);
    if (scratchpads_.count(key)) continue;
    const MemoryRegion& r = memory_.map_region(pid, RegionKind::Scratchpad,
                                               options_.scratchpad_bytes, AccessDomain::KernelInfra);
    scratchpads_[key] = r.id;
  }
}

std::optional<RegionId> Simulator::scratchpad(ProcessId pid, unsigned cpu) const {
  auto it = scratchpads_.find({pid, cpu});
  if (it == scratchpads_.end()) return std::nullopt;
  return it->second;
}

std::uint32_t Simulator::install_entry(ProcessId pid, InstallRequest request, AccessDomain caller) {
  FastcallTable& tab = table_mut(pid);
  if (caller != AccessDomain::KernelInfra)
    throw DispatchError(DispatchError::Code::PrivilegeViolation,
                        "only the kernel infrastructure may install fastcalls");
  if (!request.report || !request.report->accepted)
    throw DispatchError(DispatchError::Code::NotVerified, "program has no accepting verifier report");
  if (!request.config.empty() && request.config != request.program.config)
    throw DispatchError(DispatchError::Code::ConfigMismatch,
                        "configuration differs from the verified parameters");
  auto index = tab.lowest_free();
  if (!index) throw DispatchError(DispatchError::Code::TableFull, "fastcall table is full");
  check_bindings(pid, request.program, request.bindings);

  FastcallTableEntry e;
  e.index = *index;
  e.config = request.program.config;
  e.program = std::move(request.program);
  e.report = std::move(*request.report);
  e.bindings = std::move(request.bindings);
  e.provider_id = std::move(request.provider_id);
  e.policy = std::move(request.policy);

  bool wants_scratchpad = std::any_of(e.program.slots.begin(), e.program.slots.end(),
                                      [](const ir::SlotDecl& d) { return d.kind == RegionKind::Scratchpad; });
  if (wants_scratchpad) ensure_scratchpads(pid);

  std::uint64_t text_len = std::max<std::uint64_t>(1, e.program.instructions.size() * 16);
  e.text = memory_.map_region(pid, RegionKind::FastcallText, text_len, AccessDomain::KernelInfra,
                              e.index)
               .id;
  e.owned_regions.push_back(e.text);
  const AddressSpace& space = memory_.space(pid);
  for (const auto& [slot, id] : e.bindings) {
    const MemoryRegion* r = space.find(id);
    if (!r->owner_entry) {
      memory_.set_owner(pid, id, e.index, AccessDomain::KernelInfra);
      e.owned_regions.push_back(id);
    } else if (*r->owner_entry == e.index) {
      e.owned_regions.push_back(id);
    }
  }
  tab.entries_[e.index] = std::move(e);
  return *index;
}

void Simulator::remove_entry(ProcessId pid, std::uint64_t index) {
  FastcallTable& tab = table_mut(pid);
  if (index >= kTableEntries || !tab.entries_[index])
    throw DispatchError(DispatchError::Code::EmptySlot,
                        "no fastcall installed at index " + std::to_string(index));
  for (RegionId id : tab.entries_[index]->owned_regions) {
    memory_.unmap_region(pid, id, AccessDomain::KernelInfra);
    devices_.erase(id);
  }
  tab.entries_[index].reset();
}

ProcessId Simulator::fork_process(ProcessId parent) {
  const FastcallTable& ptab = table(parent);
  std::uint32_t next = static_cast<std::uint32_t>(tables_.rbegin()->first) + 1;
  ProcessId child{next};
  memory_.fork_address_space(parent, child);
  on_fork(parent, child);
  last_fork_latency_ns_ = fork_latency(costs_.control, ptab.size());
  return child;
}

void Simulator::on_fork(ProcessId parent, ProcessId child) {
  table(parent);
  if (!memory_.contains(child))
    throw DispatchError(DispatchError::Code::UnknownProcess,
                        "child " + pid_str(child) + " has no address space yet");
  tables_[child] = FastcallTable{};
}

const MemoryRegion& Simulator::map_device(ProcessId pid, std::uint32_t depth,
                                          std::optional<std::uint32_t> owner) {
  RingDevice dev(depth);
  const MemoryRegion& r = memory_.map_region(pid, RegionKind::DeviceMMIO, dev.region_length(),
                                             AccessDomain::KernelInfra, owner);
  devices_.emplace(r.id, std::move(dev));
  return r;
}

RingDevice* Simulator::device(RegionId region) {
  auto it = devices_.find(region);
  return it == devices_.end() ? nullptr : &it->second;
}

void Simulator::user_write(ProcessId pid, std::uint64_t address,
                           std::span<const std::uint8_t> data) {
  AccessCheck c = memory_.check_access(pid, AccessDomain::User, address, data.size(), Access::Write);
  if (!c)
    throw MemoryError(MemoryError::Code::PrivilegeViolation,
                      "user write refused: " + std::string(to_string(c.reason)));
  AddressSpace& space = memory_.space(pid);
  const MemoryRegion* r = space.find(*c.region);
  std::copy(data.begin(), data.end(), space.bytes(r->id).begin() + static_cast<std::ptrdiff_t>(address - r->base));
}

std::vector<std::uint8_t> Simulator::user_read(ProcessId pid, std::uint64_t address,
                                               std::size_t length) {
  AccessCheck c = memory_.check_access(pid, AccessDomain::User, address, length, Access::Read);
  if (!c)
    throw MemoryError(MemoryError::Code::PrivilegeViolation,
                      "user read refused: " + std::string(to_string(c.reason)));
  const AddressSpace& space = memory_.space(pid);
  const MemoryRegion* r = space.find(*c.region);
  auto bytes = space.bytes(r->id).subspan(address - r->base, length);
  return {bytes.begin(), bytes.end()};
}

}  // namespace fastcall
