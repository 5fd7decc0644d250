#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fastcall/cost_model.hpp"
#include "fastcall/devices.hpp"

namespace fastcall {

enum class Workload { Noop, Copy64, NtCopy64, NetSend, NvmeSubmit, RateLimited };

std::string_view to_string(Workload w);
std::optional<Workload> parse_workload(std::string_view text);
// Provider workloads run only as fastcalls.
bool is_provider_workload(Workload w);
// Calibrated per-invocation work of the microbenchmark workloads (0 for provider workloads).
double workload_work_ns(Workload w, const CostParameters& params);

struct Scenario {
  std::string name;
  Workload workload = Workload::Noop;
  std::vector<Mechanism> mechanisms;
  std::vector<MitigationSetting> settings;
  std::uint64_t iterations = 1;
  std::map<std::string, std::string> provider_params;
  // Simulated think time between invocations.
  std::uint64_t interval_ns = 0;
  // net_send only: destination written into each header (defaults to the allowed address).
  std::optional<std::string> dest_ip;
};

// Throws std::invalid_argument when the scenario breaks its invariants.
void validate(const Scenario& s);

// `[scenario NAME]` sections of `key = value` lines. Keys: workload, mechanisms, settings,
// iterations, interval_ns, dest_ip, provider.<param>.
std::vector<Scenario> parse_scenarios(std::string_view text);
std::vector<Scenario> default_suite();

struct OutcomeCounts {
  std::uint64_t returned = 0;
  std::uint64_t table_error = 0;
  std::uint64_t policy_denied = 0;
  std::uint64_t routed_to_kernel = 0;

  std::uint64_t total() const { return returned + table_error + policy_denied + routed_to_kernel; }
};

struct BenchRow {
  std::string scenario;
  Workload workload = Workload::Noop;
  Mechanism mechanism = Mechanism::Fastcall;
  MitigationSetting setting = MitigationSetting::Full;
  // Empty when the cost model has no value for this (mechanism, setting) cell.
  std::optional<double> latency_ns;
  std::optional<double> speedup_vs_fastcall;
  OutcomeCounts counts;
  // Mean latency of what was actually dispatched (entry overhead + policy + program cost).
  std::optional<double> dispatched_latency_ns;
  std::uint64_t device_records = 0;
  std::vector<Record> device_sample;  // first few drained records
};

struct BenchReport {
  std::vector<BenchRow> rows;
};

BenchReport run_scenario(const Scenario& scenario, const CostParameters& params);
BenchReport run_suite(const std::vector<Scenario>& scenarios, const CostParameters& params);

inline constexpr std::string_view kCsvHeader =
    "scenario,mechanism,setting,latency_ns,speedup_vs_fastcall";
// Cells without a cost-model value are written as `NA`.
std::string to_csv(const BenchReport& report);
std::string to_text(const BenchReport& report);

// Fixed-point rendering with trailing zeros removed (5700, 23.9, 14.841).
std::string format_number(double value, int max_decimals = 4);

struct LifecycleConfig {
  std::uint64_t invocations = 10;
};

struct LifecycleCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct LifecycleReport {
  std::vector<LifecycleCheck> checks;
  double register_base_ns = 0;
  double register_with_mappings_ns = 0;
  double deregister_base_ns = 0;
  double deregister_with_mappings_ns = 0;
  double fork_stock_ns = 0;
  double fork_no_registrations_ns = 0;
  double fork_100_registrations_ns = 0;
  double fork_observed_ns = 0;
  std::size_t fork_observed_registrations = 0;

  bool all_passed() const;
  std::string to_text() const;
};

// register -> invoke -> fork -> deregister. Throws InvariantViolation when a functional
// check fails.
LifecycleReport run_lifecycle_demo(const LifecycleConfig& config, const CostParameters& params);

}  // namespace fastcall
