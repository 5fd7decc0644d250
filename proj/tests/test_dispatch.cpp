#include <gtest/gtest.h>

#include <random>
#include <set>

#include "fastcall/dispatch.hpp"

using namespace fastcall;

namespace {

constexpr ProcessId A{1};
constexpr ProcessId B{2};

InstallRequest request(const std::string& text, Bindings bindings = {}) {
  InstallRequest r;
  r.provider_id = "test";
  r.program = ir::parse_program(text);
  r.report = ir::verify(r.program);
  r.bindings = std::move(bindings);
  return r;
}

std::uint32_t install_noop(Simulator& sim, ProcessId pid) {
  return sim.install_entry(pid, request("RET r0"));
}

const char* kCopy =
    "SLOT s0 SharedRW 64\nSLOT s1 Scratchpad 64\n"
    "LOAD r1, s0, 0, w8\nSTORE s1, 0, r1, w8\nLOAD r1, s0, 8, w8\nSTORE s1, 8, r1, w8\n"
    "LOAD r1, s0, 16, w8\nSTORE s1, 16, r1, w8\nLOAD r1, s0, 24, w8\nSTORE s1, 24, r1, w8\n"
    "LOAD r1, s0, 32, w8\nSTORE s1, 32, r1, w8\nLOAD r1, s0, 40, w8\nSTORE s1, 40, r1, w8\n"
    "LOAD r1, s0, 48, w8\nSTORE s1, 48, r1, w8\nLOAD r1, s0, 56, w8\nSTORE s1, 56, r1, w8\n"
    "RET r0\n";

class DenyAll : public PolicyHook {
 public:
  PolicyVerdict before_invoke(EntryView&, std::uint64_t, const CostParameters&) override {
    return {std::string("nope"), 3};
  }
};

}  // namespace

TEST(Dispatch, RoutesOtherSyscallsToKernel) {
  Simulator sim;
  sim.create_process(A);
  auto r = sim.syscall_entry(A, 1, {}, MitigationSetting::Full);
  EXPECT_EQ(r.outcome, Outcome::RoutedToKernel);
  EXPECT_EQ(r.mechanism, Mechanism::Syscall);
  EXPECT_DOUBLE_EQ(r.modeled_latency_ns, 354.7);
  r = sim.syscall_entry(A, 1, {}, MitigationSetting::Off);
  EXPECT_DOUBLE_EQ(r.modeled_latency_ns, 46.4);
  r = sim.syscall_entry(A, kIoctlSyscallNr, {}, MitigationSetting::Full);
  EXPECT_EQ(r.mechanism, Mechanism::Ioctl);
  EXPECT_DOUBLE_EQ(r.modeled_latency_ns, 413.6);
  EXPECT_THROW(sim.syscall_entry(A, 1, {}, MitigationSetting::NoKPTI), ConfigurationRequired);
}

TEST(Dispatch, FastcallHappyPath) {
  Simulator sim;
  sim.create_process(A);
  for (int i = 0; i < 3; ++i) install_noop(sim, A);
  auto r = sim.syscall_entry(A, kFastcallSyscallNr, {2});
  EXPECT_EQ(r.outcome, Outcome::Return);
  EXPECT_EQ(r.value, 0u);
  EXPECT_DOUBLE_EQ(r.modeled_latency_ns, 23.9 + 1);
}

TEST(Dispatch, ArgumentsLandInR1ToR5) {
  Simulator sim;
  sim.create_process(A);
  auto idx = sim.install_entry(
      A, request("ADD r0, r1, r5\nADD r0, r0, r6\nRET r0"));
  auto r = sim.syscall_entry(A, kFastcallSyscallNr, {idx, 10, 0, 0, 0, 32});
  EXPECT_EQ(r.value, 42u);
}

TEST(Dispatch, TableIndexOutOfBounds) {
  Simulator sim;
  sim.create_process(A);
  auto r = sim.invoke_fastcall(A, kTableEntries);
  EXPECT_EQ(r.outcome, Outcome::TableError);
  EXPECT_DOUBLE_EQ(r.modeled_latency_ns, 23.9);
  EXPECT_TRUE(r.trace.empty());
  EXPECT_THROW(sim.invoke_fastcall(B, 0), DispatchError);
}

TEST(Dispatch, CopyLatencyUsesInstructionCosts) {
  Simulator sim;
  sim.create_process(A);
  auto src = sim.memory().map_region(A, RegionKind::SharedRW, 64, AccessDomain::KernelInfra);
  auto idx = sim.install_entry(A, request(kCopy, {{0, src.id}}));
  std::vector<std::uint8_t> data(64);
  for (std::size_t i = 0; i < 64; ++i) data[i] = std::uint8_t(200 - i);
  sim.user_write(A, src.base, data);
  auto r = sim.invoke_fastcall(A, idx);
  ASSERT_EQ(r.outcome, Outcome::Return);
  EXPECT_DOUBLE_EQ(r.modeled_latency_ns, 23.9 + 17);
  ASSERT_TRUE(r.cpu);
  auto pad = sim.scratchpad(A, *r.cpu);
  ASSERT_TRUE(pad);
  auto bytes = sim.memory().space(A).bytes(*pad);
  EXPECT_TRUE(std::equal(data.begin(), data.end(), bytes.begin()));
}

TEST(Install, LowestFreeIndexAndCapacity) {
  Simulator sim;
  sim.create_process(A);
  EXPECT_EQ(install_noop(sim, A), 0u);
  for (std::uint32_t i = 1; i < kTableEntries; ++i) EXPECT_EQ(install_noop(sim, A), i);
  try {
    install_noop(sim, A);
    FAIL();
  } catch (const DispatchError& e) {
    EXPECT_EQ(e.code(), DispatchError::Code::TableFull);
  }
  sim.remove_entry(A, 17);
  EXPECT_EQ(install_noop(sim, A), 17u);
}

TEST(Install, Preconditions) {
  Simulator sim;
  sim.create_process(A);
  auto unverified = request("RET r0");
  unverified.report.reset();
  EXPECT_THROW(sim.install_entry(A, unverified), DispatchError);

  auto rejected = request("SLOT s0 Scratchpad 64\nSTORE s0, 60, r1, w8\nRET r0");
  EXPECT_FALSE(rejected.report->accepted);
  EXPECT_THROW(sim.install_entry(A, rejected), DispatchError);

  try {
    sim.install_entry(A, request("RET r0"), AccessDomain::User);
    FAIL();
  } catch (const DispatchError& e) {
    EXPECT_EQ(e.code(), DispatchError::Code::PrivilegeViolation);
  }

  auto missing = request("SLOT s0 SharedRW 64\nLOAD r1, s0, 0, w8\nRET r1");
  EXPECT_THROW(sim.install_entry(A, missing), DispatchError);

  auto small = sim.memory().map_region(A, RegionKind::SharedRW, 32, AccessDomain::KernelInfra);
  EXPECT_THROW(sim.install_entry(A, request("SLOT s0 SharedRW 64\nLOAD r1, s0, 0, w8\nRET r1",
                                            {{0, small.id}})),
               DispatchError);
  auto ro = sim.memory().map_region(A, RegionKind::SharedRO, 64, AccessDomain::KernelInfra);
  EXPECT_THROW(sim.install_entry(A, request("SLOT s0 SharedRW 64\nLOAD r1, s0, 0, w8\nRET r1",
                                            {{0, ro.id}})),
               DispatchError);

  auto cfg = request("PARAM 5\nLOAD_CONFIG r0, 0\nRET r0");
  cfg.config = {6};
  try {
    sim.install_entry(A, cfg);
    FAIL();
  } catch (const DispatchError& e) {
    EXPECT_EQ(e.code(), DispatchError::Code::ConfigMismatch);
  }
  EXPECT_TRUE(sim.table(A).empty());
}

TEST(Remove, Semantics) {
  Simulator sim;
  sim.create_process(A);
  auto idx = install_noop(sim, A);
  sim.remove_entry(A, idx);
  EXPECT_EQ(sim.invoke_fastcall(A, idx).outcome, Outcome::TableError);
  EXPECT_THROW(sim.remove_entry(A, idx), DispatchError);
}

TEST(Remove, FreesOwnedRegions) {
  Simulator sim;
  sim.create_process(A);
  auto src = sim.memory().map_region(A, RegionKind::SharedRW, 64, AccessDomain::KernelInfra);
  auto dev = sim.map_device(A, 8);
  std::string text = std::string("SLOT s0 SharedRW 64\nSLOT s2 DeviceMMIO 528\n") +
                     "LOAD r1, s0, 0, w8\nSTORE s2, 0, r1, w8\nSTORE s2, 512, r1, w8\nRET r0\n";
  auto idx = sim.install_entry(A, request(text, {{0, src.id}, {2, dev.id}}));
  const auto& entry = *sim.table(A).at(idx);
  const std::size_t bound = entry.bindings.size();
  ASSERT_EQ(entry.owned_regions.size(), bound + 1);
  std::size_t before = sim.memory().space(A).regions().size();
  sim.remove_entry(A, idx);
  std::size_t after = sim.memory().space(A).regions().size();
  EXPECT_EQ(before - after, bound + 1);
  EXPECT_EQ(sim.device(dev.id), nullptr);
}

TEST(Fork, ChildTableIsFresh) {
  Simulator sim;
  sim.create_process(A);
  for (int i = 0; i < 3; ++i) install_noop(sim, A);
  ProcessId child = sim.fork_process(A);
  EXPECT_TRUE(sim.table(child).empty());
  for (std::uint32_t i = 0; i < 3; ++i) {
    EXPECT_EQ(sim.invoke_fastcall(child, i).outcome, Outcome::TableError);
    EXPECT_EQ(sim.invoke_fastcall(A, i).outcome, Outcome::Return);
  }
  EXPECT_DOUBLE_EQ(sim.last_fork_latency_ns(), fork_latency(sim.costs().control, 3));
}

TEST(Fork, EmptyParent) {
  Simulator sim;
  sim.create_process(A);
  ProcessId child = sim.fork_process(A);
  EXPECT_TRUE(sim.table(child).empty());
  EXPECT_DOUBLE_EQ(sim.last_fork_latency_ns(), 38055 + 674);
  EXPECT_THROW(sim.on_fork(A, ProcessId{77}), DispatchError);
}

TEST(Policy, DenialSkipsProgram) {
  Simulator sim;
  sim.create_process(A);
  auto req = request("SLOT s0 Scratchpad 8\nSTORE s0, 0, r1, w8\nRET r0");
  req.policy = std::make_shared<DenyAll>();
  auto idx = sim.install_entry(A, req);
  auto r = sim.invoke_fastcall(A, idx);
  EXPECT_EQ(r.outcome, Outcome::PolicyDenied);
  EXPECT_EQ(r.reason, "nope");
  EXPECT_TRUE(r.trace.empty());
  EXPECT_DOUBLE_EQ(r.modeled_latency_ns, 23.9 + 3);
}

// Every index in 0..NR_TABLE_ENTRIES+1 and several syscall numbers yield exactly one outcome.
TEST(DispatchProperty, Totality) {
  Simulator sim;
  sim.create_process(A);
  std::set<std::uint64_t> populated;
  std::mt19937_64 rng(4);
  for (std::uint32_t i = 0; i < kTableEntries; ++i) install_noop(sim, A);
  for (std::uint32_t i = 0; i < kTableEntries; ++i)
    if (rng() % 2) sim.remove_entry(A, i);
    else populated.insert(i);
  for (std::uint64_t nr : {0ull, 1ull, 39ull, 16ull, 441ull, 442ull, 443ull})
    for (std::uint64_t idx = 0; idx <= kTableEntries + 1; ++idx) {
      auto r = sim.syscall_entry(A, nr, {idx});
      if (nr != kFastcallSyscallNr) {
        EXPECT_EQ(r.outcome, Outcome::RoutedToKernel);
      } else if (populated.count(idx)) {
        EXPECT_EQ(r.outcome, Outcome::Return);
      } else {
        EXPECT_EQ(r.outcome, Outcome::TableError);
        EXPECT_TRUE(r.trace.empty());
      }
    }
}

TEST(DispatchProperty, NoCrossProcessLeakage) {
  Simulator sim;
  sim.create_process(A);
  sim.create_process(B);
  std::map<ProcessId, std::uint32_t> index;
  for (ProcessId p : {A, B}) {
    auto src = sim.memory().map_region(p, RegionKind::SharedRW, 64, AccessDomain::KernelInfra);
    index[p] = sim.install_entry(p, request(kCopy, {{0, src.id}}));
  }
  std::mt19937_64 rng(6);
  for (int n = 0; n < 400; ++n) {
    ProcessId p = rng() % 2 ? A : B;
    ProcessId other = p == A ? B : A;
    auto r = sim.invoke_fastcall(p, index[p]);
    ASSERT_EQ(r.outcome, Outcome::Return);
    for (const auto& acc : r.trace) {
      EXPECT_NE(sim.memory().space(p).find(acc.region), nullptr);
      EXPECT_EQ(sim.memory().space(other).find(acc.region), nullptr);
    }
  }
}

TEST(DispatchProperty, ExecutionWindowsPerCpuDoNotOverlap) {
  Simulator sim;
  sim.create_process(A);
  sim.create_process(B);
  auto a = install_noop(sim, A);
  auto src = sim.memory().map_region(B, RegionKind::SharedRW, 64, AccessDomain::KernelInfra);
  auto b = sim.install_entry(B, request(kCopy, {{0, src.id}}));
  std::mt19937_64 rng(10);
  for (int n = 0; n < 500; ++n) {
    if (rng() % 2) sim.invoke_fastcall(A, a);
    else sim.invoke_fastcall(B, b);
    if (rng() % 5 == 0) sim.advance_clock(double(rng() % 50));
  }
  std::map<unsigned, std::vector<ExecutionWindow>> per_cpu;
  for (const auto& w : sim.windows()) per_cpu[w.cpu].push_back(w);
  EXPECT_EQ(per_cpu.size(), kDefaultCpuCount);
  for (auto& [cpu, ws] : per_cpu) {
    std::sort(ws.begin(), ws.end(), [](auto& x, auto& y) { return x.start_ns < y.start_ns; });
    for (std::size_t i = 1; i < ws.size(); ++i) EXPECT_LE(ws[i - 1].end_ns, ws[i].start_ns);
  }
  for (const auto& c : sim.cpus()) EXPECT_FALSE(c.interrupts_disabled);
}

TEST(UserAccess, SharedWritableFastcallTextNot) {
  Simulator sim;
  sim.create_process(A);
  auto idx = install_noop(sim, A);
  auto text = sim.table(A).at(idx)->text;
  auto base = sim.memory().space(A).find(text)->base;
  std::vector<std::uint8_t> junk(4, 0xcc);
  EXPECT_THROW(sim.user_write(A, base, junk), MemoryError);
}
