#include "fastcall/providers.hpp"

#include <algorithm>
#include <charconv>
#include <limits>
#include <sstream>

namespace fastcall {

namespace {

struct RegionSpec {
  std::string role;
  RegionKind kind;
  std::uint64_t length;
  std::uint32_t slot;
  std::optional<std::uint32_t> device_depth;
};

class ParamError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Params {
 public:
  explicit Params(const std::map<std::string, std::string>& p) : p_(p) {}

  std::optional<std::string> str(const std::string& key) {
    seen_.push_back(key);
    auto it = p_.find(key);
    if (it == p_.end()) return std::nullopt;
    return it->second;
  }

  std::uint64_t u64(const std::string& key, std::optional<std::uint64_t> fallback) {
    auto v = str(key);
    if (!v) {
      if (!fallback) throw ParamError("missing parameter `" + key + "`");
      return *fallback;
    }
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (v->empty() || ec != std::errc{} || ptr != v->data() + v->size())
      throw ParamError("parameter `" + key + "` is not an unsigned integer");
    return out;
  }

  std::uint32_t ring_depth(const std::string& key, std::uint32_t fallback) {
    std::uint64_t d = u64(key, fallback);
    if (d == 0 || d > (1u << 16) || (d & (d - 1)) != 0)
      throw ParamError("parameter `" + key + "` must be a power of two in [1, 65536]");
    return static_cast<std::uint32_t>(d);
  }

  // Rejects keys no getter asked for.
  void finish() const {
    for (const auto& [k, v] : p_)
      if (std::find(seen_.begin(), seen_.end(), k) == seen_.end())
        throw ParamError("unknown parameter `" + k + "`");
  }

 private:
  const std::map<std::string, std::string>& p_;
  std::vector<std::string> seen_;
};

PolicyDecision assemble(Simulator& sim, const RegistrationRequest& req, std::string_view provider,
                        const std::string& program_text, const std::vector<RegionSpec>& regions,
                        std::shared_ptr<PolicyHook> hook) {
  ir::FastcallProgram program;
  try {
    program = ir::parse_program(program_text);
  } catch (const ir::ParseError& e) {
    throw InvariantViolation(std::string(provider) + " generated malformed code: " + e.what());
  }
  ir::VerifierReport report = ir::verify(program, ir::kDefaultWcetCeilingNs, sim.costs().instr);
  if (!report.accepted) return Deny{"verification-failed: " + report.violations.front().rule};
  if (!sim.table(req.process).lowest_free()) return Deny{"table-full"};

  Grant grant;
  Bindings bindings;
  std::vector<RegionId> mapped;
  for (const auto& spec : regions) {
    const MemoryRegion& r =
        spec.device_depth
            ? sim.map_device(req.process, *spec.device_depth)
            : sim.memory().map_region(req.process, spec.kind, spec.length, AccessDomain::KernelInfra);
    bindings[spec.slot] = r.id;
    grant.regions[spec.role] = r.id;
    mapped.push_back(r.id);
  }

  InstallRequest install;
  install.provider_id = std::string(provider);
  install.program = std::move(program);
  install.report = std::move(report);
  install.bindings = std::move(bindings);
  install.policy = std::move(hook);
  try {
    grant.index = sim.install_entry(req.process, std::move(install));
  } catch (const DispatchError& e) {
    for (RegionId id : mapped) sim.memory().unmap_region(req.process, id, AccessDomain::KernelInfra);
    return Deny{e.what()};
  }
  grant.extra_mappings = !regions.empty();
  grant.control_path_latency_ns = registration_latency(sim.costs().control, grant.extra_mappings);
  return grant;
}

// Emits the instructions that copy 64 bytes from `src` at offset 0 into `dst` at `dst_base`
// (an immediate or a register holding the base offset).
std::string copy64(std::uint32_t src, std::uint32_t dst, const std::string& dst_base) {
  std::ostringstream out;
  bool reg_base = !dst_base.empty() && dst_base[0] == 'r';
  for (int k = 0; k < 8; ++k) {
    out << "LOAD r1, s" << src << ", " << 8 * k << ", w8\n";
    if (reg_base) {
      out << "ADD r2, " << dst_base << ", " << 8 * k << "\n";
      out << "STORE s" << dst << ", r2, r1, w8\n";
    } else {
      out << "STORE s" << dst << ", " << std::stoull(dst_base) + 8 * k << ", r1, w8\n";
    }
  }
  return out.str();
}

std::uint32_t header_dest(std::span<const std::uint8_t> header) {
  return std::uint32_t{header[0]} << 24 | std::uint32_t{header[1]} << 16 |
         std::uint32_t{header[2]} << 8 | std::uint32_t{header[3]};
}

// ---- policies ----------------------------------------------------------------------------------

class DestinationFilter : public PolicyHook {
 public:
  PolicyVerdict before_invoke(EntryView& entry, std::uint64_t, const CostParameters& c) override {
    PolicyVerdict v;
    v.cost_ns = c.instr.cached_mem_ns + c.instr.alu_ns;
    auto header = entry.bytes(0);
    if (header.size() < 4 || header_dest(header) != entry.config().at(0)) {
      v.deny = "ip-not-permitted";
      return v;
    }
    v.cost_ns += c.instr.uncached_ns;
    if (RingDevice* ring = entry.device(1); !ring || ring->full()) v.deny = "queue-full";
    return v;
  }
};

class RateLimit : public PolicyHook {
 public:
  PolicyVerdict before_invoke(EntryView& entry, std::uint64_t now_ns,
                              const CostParameters& c) override {
    PolicyVerdict v;
    v.cost_ns = 2 * c.instr.cached_mem_ns + 2 * c.instr.alu_ns;
    auto state = entry.bytes(0);
    TokenBucket bucket = TokenBucket::load(state);
    bool ok = bucket.try_acquire(now_ns);
    bucket.save(state);
    if (!ok) v.deny = "rate-exceeded";
    return v;
  }
};

class QueueSpace : public PolicyHook {
 public:
  PolicyVerdict before_invoke(EntryView& entry, std::uint64_t, const CostParameters& c) override {
    PolicyVerdict v;
    v.cost_ns = c.instr.uncached_ns;
    if (RingDevice* sq = entry.device(1); !sq || sq->full()) v.deny = "queue-full";
    return v;
  }
};

// ---- providers ---------------------------------------------------------------------------------

// Microbenchmark workloads: noop, 64-byte copy, 64-byte non-temporal copy.
class BenchProvider : public Provider {
 public:
  std::string_view name() const override { return "bench"; }

  PolicyDecision register_fastcall(Simulator& sim, const RegistrationRequest& req) override {
    std::string workload;
    try {
      Params p(req.parameters);
      workload = p.str("workload").value_or("noop");
      p.finish();
    } catch (const ParamError& e) {
      return Deny{e.what()};
    }
    if (workload == "noop") return assemble(sim, req, name(), "RET r0\n", {}, nullptr);
    if (workload == "copy64") {
      std::string text = "SLOT s0 SharedRW 64\nSLOT s1 Scratchpad 64\n" + copy64(0, 1, "0") +
                         "RET r0\n";
      return assemble(sim, req, name(), text, {{"source", RegionKind::SharedRW, 64, 0, {}}},
                      nullptr);
    }
    if (workload == "ntcopy64") {
      std::string text = "SLOT s0 SharedRW 64\nSLOT s1 FastcallPrivate 64\n" + copy64(0, 1, "0") +
                         "FENCE_NT\nRET r0\n";
      return assemble(sim, req, name(), text,
                      {{"source", RegionKind::SharedRW, 64, 0, {}},
                       {"buffer", RegionKind::FastcallPrivate, 64, 1, {}}},
                      nullptr);
    }
    return Deny{"unknown workload `" + workload + "`"};
  }
};

// Sends a 64-byte frame descriptor to a NIC TX ring if the header's destination is permitted.
class NetSendProvider : public Provider {
 public:
  std::string_view name() const override { return "net_send"; }

  PolicyDecision register_fastcall(Simulator& sim, const RegistrationRequest& req) override {
    std::uint32_t ip = 0;
    std::uint32_t depth = 0;
    try {
      Params p(req.parameters);
      auto text = p.str("allowed_ip");
      if (!text) throw ParamError("missing parameter `allowed_ip`");
      auto parsed = parse_ipv4(*text);
      if (!parsed) throw ParamError("malformed IPv4 address `" + *text + "`");
      ip = *parsed;
      depth = p.ring_depth("ring_depth", 8);
      p.finish();
    } catch (const ParamError& e) {
      return Deny{e.what()};
    }

    const std::uint64_t doorbell = std::uint64_t{depth} * RingDevice::kRecordSize;
    std::ostringstream prog;
    prog << "SLOT s0 SharedRW 64\n"
         << "SLOT s1 DeviceMMIO " << doorbell + 16 << "\n"
         << "PARAM " << ip << "\n"
         << "PARAM " << depth - 1 << "\n"
         << "# destination address, big-endian in bytes 0-3\n"
         << "LOAD r1, s0, 0, w1\nSHL r1, r1, 24\n"
         << "LOAD r2, s0, 1, w1\nSHL r2, r2, 16\nOR r1, r1, r2\n"
         << "LOAD r2, s0, 2, w1\nSHL r2, r2, 8\nOR r1, r1, r2\n"
         << "LOAD r2, s0, 3, w1\nOR r1, r1, r2\n"
         << "LOAD_CONFIG r2, 0\n"
         << "CMP_JEQ r1, r2, @permitted\n"
         << "MOV_IMM r0, " << kProgramDenied << "\n"
         << "RET r0\n"
         << "permitted:\n"
         << "LOAD r3, s1, " << doorbell << ", w8\n"
         << "LOAD_CONFIG r4, 1\n"
         << "AND r3, r3, r4\n"
         << "SHL r3, r3, 6\n"
         << copy64(0, 1, "r3")
         << "STORE s1, " << doorbell << ", r0, w8\n"
         << "RET r0\n";
    return assemble(sim, req, name(), prog.str(),
                    {{"header", RegionKind::SharedRW, 64, 0, {}},
                     {"tx_ring", RegionKind::DeviceMMIO, doorbell + 16, 1, depth}},
                    std::make_shared<DestinationFilter>());
  }
};

// Counts invocations in a private page; admission is governed by a token bucket kept in the
// same page.
class RateLimitedProvider : public Provider {
 public:
  std::string_view name() const override { return "rate_limited"; }

  PolicyDecision register_fastcall(Simulator& sim, const RegistrationRequest& req) override {
    std::uint64_t rate = 0;
    std::uint64_t capacity = 0;
    try {
      Params p(req.parameters);
      rate = p.u64("rate_per_sec", std::nullopt);
      capacity = p.u64("capacity", 1);
      if (capacity == 0 || capacity > TokenBucket::kScale)
        throw ParamError("parameter `capacity` must lie in [1, 1e9]");
      if (rate > TokenBucket::kScale) throw ParamError("parameter `rate_per_sec` exceeds 1e9");
      p.finish();
    } catch (const ParamError& e) {
      return Deny{e.what()};
    }

    const std::string text =
        "SLOT s0 FastcallPrivate 64\n"
        "LOAD r1, s0, 32, w8\n"
        "ADD r1, r1, 1\n"
        "STORE s0, 32, r1, w8\n"
        "RET r1\n";
    auto decision = assemble(sim, req, name(), text,
                             {{"state", RegionKind::FastcallPrivate, 64, 0, {}}},
                             std::make_shared<RateLimit>());
    if (auto* g = std::get_if<Grant>(&decision)) {
      TokenBucket bucket(capacity, rate, static_cast<std::uint64_t>(sim.now_ns()));
      bucket.save(sim.memory().space(req.process).bytes(g->regions.at("state")));
    }
    return decision;
  }
};

// Copies an application-prepared 64-byte command into the next submission-queue slot and
// rings the doorbell. Returns the slot index.
class NvmeSubmitProvider : public Provider {
 public:
  std::string_view name() const override { return "nvme_submit"; }

  PolicyDecision register_fastcall(Simulator& sim, const RegistrationRequest& req) override {
    std::uint32_t depth = 0;
    try {
      Params p(req.parameters);
      depth = p.ring_depth("queue_depth", 8);
      p.finish();
    } catch (const ParamError& e) {
      return Deny{e.what()};
    }
    const std::uint64_t doorbell = std::uint64_t{depth} * RingDevice::kRecordSize;
    std::ostringstream prog;
    prog << "SLOT s0 SharedRW 64\n"
         << "SLOT s1 DeviceMMIO " << doorbell + 16 << "\n"
         << "PARAM " << depth - 1 << "\n"
         << "LOAD r7, s1, " << doorbell << ", w8\n"
         << "LOAD_CONFIG r4, 0\n"
         << "AND r7, r7, r4\n"
         << "SHL r3, r7, 6\n"
         << copy64(0, 1, "r3")
         << "STORE s1, " << doorbell << ", r7, w8\n"
         << "RET r7\n";
    return assemble(sim, req, name(), prog.str(),
                    {{"command", RegionKind::SharedRW, 64, 0, {}},
                     {"sq", RegionKind::DeviceMMIO, doorbell + 16, 1, depth}},
                    std::make_shared<QueueSpace>());
  }
};

}  // namespace

ProviderRegistry ProviderRegistry::with_builtins() {
  ProviderRegistry r;
  r.add(std::make_unique<BenchProvider>());
  r.add(std::make_unique<NetSendProvider>());
  r.add(std::make_unique<RateLimitedProvider>());
  r.add(std::make_unique<NvmeSubmitProvider>());
  return r;
}

void ProviderRegistry::add(std::unique_ptr<Provider> provider) {
  if (find(provider->name()))
    throw std::invalid_argument("provider `" + std::string(provider->name()) + "` registered twice");
  providers_.push_back(std::move(provider));
}

Provider* ProviderRegistry::find(std::string_view name) const {
  for (const auto& p : providers_)
    if (p->name() == name) return p.get();
  return nullptr;
}

PolicyDecision ProviderRegistry::register_fastcall(Simulator& sim,
                                                   const RegistrationRequest& request) const {
  Provider* p = find(request.provider_name);
  if (!p) throw UnknownProvider("unknown fastcall provider `" + request.provider_name + "`");
  return p->register_fastcall(sim, request);
}

double ProviderRegistry::deregister(Simulator& sim, ProcessId pid, std::uint32_t index) const {
  const FastcallTableEntry* e = sim.table(pid).at(index);
  if (!e)
    throw DispatchError(DispatchError::Code::EmptySlot,
                        "no fastcall installed at index " + std::to_string(index));
  bool extra = !e->bindings.empty();
  sim.remove_entry(pid, index);
  return deregistration_latency(sim.costs().control, extra);
}

std::optional<std::uint32_t> parse_ipv4(std::string_view text) {
  std::uint32_t out = 0;
  std::size_t pos = 0;
  for (int part = 0; part < 4; ++part) {
    auto dot = text.find('.', pos);
    if ((part == 3) != (dot == text.npos)) return std::nullopt;
    auto tok = text.substr(pos, dot == text.npos ? text.npos : dot - pos);
    unsigned v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || tok.size() > 3 || ec != std::errc{} || p != tok.data() + tok.size() || v > 255)
      return std::nullopt;
    out = out << 8 | v;
    pos = dot + 1;
  }
  return out;
}

std::string format_ipv4(std::uint32_t a) {
  return std::to_string(a >> 24) + "." + std::to_string((a >> 16) & 255) + "." +
         std::to_string((a >> 8) & 255) + "." + std::to_string(a & 255);
}

TokenBucket::TokenBucket(std::uint64_t capacity, std::uint64_t rate_per_sec, std::uint64_t now_ns)
    : last_ns_(now_ns), capacity_(capacity), rate_(rate_per_sec) {
  if (capacity > std::numeric_limits<std::uint64_t>::max() / kScale)
    throw std::invalid_argument("token bucket capacity too large");
  scaled_ = capacity * kScale;
}

void TokenBucket::refill(std::uint64_t now_ns) {
  if (now_ns <= last_ns_) return;
  const unsigned __int128 limit = static_cast<unsigned __int128>(capacity_) * kScale;
  unsigned __int128 next = scaled_ + static_cast<unsigned __int128>(rate_) * (now_ns - last_ns_);
  scaled_ = static_cast<std::uint64_t>(std::min(next, limit));
  last_ns_ = now_ns;
}

bool TokenBucket::try_acquire(std::uint64_t now_ns) {
  if (rate_ == 0) return false;
  refill(now_ns);
  if (scaled_ < kScale) return false;
  scaled_ -= kScale;
  return true;
}

void TokenBucket::save(std::span<std::uint8_t> out) const {
  if (out.size() < kStateBytes) throw std::invalid_argument("token bucket state needs 32 bytes");
  ir::store_le(out, 0, 8, scaled_);
  ir::store_le(out, 8, 8, last_ns_);
  ir::store_le(out, 16, 8, capacity_);
  ir::store_le(out, 24, 8, rate_);
}

TokenBucket TokenBucket::load(std::span<const std::uint8_t> in) {
  if (in.size() < kStateBytes) throw std::invalid_argument("token bucket state needs 32 bytes");
  TokenBucket b;
  b.scaled_ = ir::load_le(in, 0, 8);
  b.last_ns_ = ir::load_le(in, 8, 8);
  b.capacity_ = ir::load_le(in, 16, 8);
  b.rate_ = ir::load_le(in, 24, 8);
  return b;
}

void write_shared(Simulator& sim, ProcessId pid, RegionId region,
                  std::span<const std::uint8_t> bytes) {
  const MemoryRegion* r = sim.memory().space(pid).find(region);
  if (!r) throw MemoryError(MemoryError::Code::UnknownRegion, "shared region not mapped");
  sim.user_write(pid, r->base, bytes);
}

std::vector<std::uint8_t> make_packet_header(std::uint32_t dest_ip, std::uint8_t fill) {
  std::vector<std::uint8_t> h(64, fill);
  h[0] = static_cast<std::uint8_t>(dest_ip >> 24);
  h[1] = static_cast<std::uint8_t>(dest_ip >> 16);
  h[2] = static_cast<std::uint8_t>(dest_ip >> 8);
  h[3] = static_cast<std::uint8_t>(dest_ip);
  return h;
}

InvocationResult net_send_invoke(Simulator& sim, ProcessId pid, const Grant& grant,
                                 MitigationSetting setting) {
  return sim.syscall_entry(pid, kFastcallSyscallNr, {grant.index}, setting);
}

InvocationResult rate_limited_invoke(Simulator& sim, ProcessId pid, const Grant& grant,
                                     std::uint64_t now_ns, MitigationSetting setting) {
  sim.set_clock(static_cast<double>(now_ns));
  return sim.syscall_entry(pid, kFastcallSyscallNr, {grant.index}, setting);
}

InvocationResult nvme_submit_invoke(Simulator& sim, ProcessId pid, const Grant& grant,
                                    MitigationSetting setting) {
  return sim.syscall_entry(pid, kFastcallSyscallNr, {grant.index}, setting);
}

}  // namespace fastcall
