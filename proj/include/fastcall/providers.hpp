#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fastcall/dispatch.hpp"

namespace fastcall {

struct RegistrationRequest {
  ProcessId process{};
  std::string provider_name;
  std::map<std::string, std::string> parameters;
};

struct Grant {
  std::uint32_t index = 0;
  double control_path_latency_ns = 0;
  bool extra_mappings = false;
  // Regions created for the entry, by role ("header", "tx_ring", "command", "sq", "state", ...).
  std::map<std::string, RegionId> regions;
};

struct Deny {
  std::string reason;
};

using PolicyDecision = std::variant<Grant, Deny>;

class UnknownProvider : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Provider {
 public:
  virtual ~Provider() = default;
  virtual std::string_view name() const = 0;
  virtual PolicyDecision register_fastcall(Simulator& sim, const RegistrationRequest& request) = 0;
};

class ProviderRegistry {
 public:
  // net_send, rate_limited, nvme_submit and the microbenchmark provider `bench`.
  static ProviderRegistry with_builtins();

  void add(std::unique_ptr<Provider> provider);
  Provider* find(std::string_view name) const;

  // Throws UnknownProvider; parameter problems come back as Deny.
  PolicyDecision register_fastcall(Simulator& sim, const RegistrationRequest& request) const;
  // Removes the entry and returns the modeled deregistration latency.
  double deregister(Simulator& sim, ProcessId pid, std::uint32_t index) const;

 private:
  std::vector<std::unique_ptr<Provider>> providers_;
};

std::optional<std::uint32_t> parse_ipv4(std::string_view text);
std::string format_ipv4(std::uint32_t address);

// Token bucket with fixed-point tokens (1e-9 token resolution) and caller-supplied time.
// Starts full. A zero rate admits nothing.
class TokenBucket {
 public:
  static constexpr std::uint64_t kScale = 1'000'000'000;
  static constexpr std::size_t kStateBytes = 32;

  TokenBucket(std::uint64_t capacity, std::uint64_t rate_per_sec, std::uint64_t now_ns = 0);

  bool try_acquire(std::uint64_t now_ns);
  double tokens() const { return static_cast<double>(scaled_) / kScale; }
  std::uint64_t capacity() const { return capacity_; }
  std::uint64_t rate_per_sec() const { return rate_; }
  std::uint64_t last_refill_ns() const { return last_ns_; }

  // Layout: tokens (scaled), last refill, capacity, rate; little-endian u64 each.
  void save(std::span<std::uint8_t> out) const;
  static TokenBucket load(std::span<const std::uint8_t> in);

 private:
  TokenBucket() = default;
  void refill(std::uint64_t now_ns);

  std::uint64_t scaled_ = 0;
  std::uint64_t last_ns_ = 0;
  std::uint64_t capacity_ = 0;
  std::uint64_t rate_ = 0;
};

// Return value of a program that refuses to act after its own re-check.
inline constexpr std::uint64_t kProgramDenied = ~std::uint64_t{0};

// Application-side helpers: fill the shared buffer, then enter through the fastcall syscall.
void write_shared(Simulator& sim, ProcessId pid, RegionId region,
                  std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> make_packet_header(std::uint32_t dest_ip, std::uint8_t fill = 0);

InvocationResult net_send_invoke(Simulator& sim, ProcessId pid, const Grant& grant,
                                 MitigationSetting setting = MitigationSetting::Full);
InvocationResult rate_limited_invoke(Simulator& sim, ProcessId pid, const Grant& grant,
                                     std::uint64_t now_ns,
                                     MitigationSetting setting = MitigationSetting::Full);
InvocationResult nvme_submit_invoke(Simulator& sim, ProcessId pid, const Grant& grant,
                                    MitigationSetting setting = MitigationSetting::Full);

}  // namespace fastcall
