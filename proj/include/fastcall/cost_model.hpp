#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fastcall {

enum class MitigationSetting { Full, NoKPTI, Off };
enum class Mechanism { Vdso, Fastcall, Syscall, Ioctl };

inline constexpr MitigationSetting kAllSettings[] = {MitigationSetting::Full,
                                                     MitigationSetting::NoKPTI,
                                                     MitigationSetting::Off};
inline constexpr Mechanism kAllMechanisms[] = {Mechanism::Vdso, Mechanism::Fastcall,
                                               Mechanism::Syscall, Mechanism::Ioctl};

std::string_view to_string(MitigationSetting setting);
std::string_view to_string(Mechanism mechanism);
std::optional<MitigationSetting> parse_setting(std::string_view text);
std::optional<Mechanism> parse_mechanism(std::string_view text);

// Work per invocation of the two copy microbenchmarks, in ns. Both are solved from the measured
// speedups against the no-op overheads under full mitigations:
//   (354.7 + w) / (23.9 + w) = 12.5  ->  w = 4.865   (array copy, cached stores)
//   (354.7 + w) / (23.9 + w) = 3.4   ->  w = 113.93  (non-temporal copy)
inline constexpr double kCachedCopyWorkNs = 4.9;
inline constexpr double kNonTemporalCopyWorkNs = 113.9;

// Thrown when a latency cell has no shipped default and no override was supplied.
class ConfigurationRequired : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InstructionCosts {
  double alu_ns = 1.0;        // ALU, moves, branches, RET, config loads
  double cached_mem_ns = 1.0;  // loads/stores to scratchpad, shared and private pages
  double uncached_ns = 114.0;  // MMIO accesses and the non-temporal flush
};

struct ControlPathCosts {
  double register_base_ns = 1400.0;
  double register_with_mappings_ns = 2600.0;
  double deregister_base_ns = 2400.0;
  double deregister_with_mappings_ns = 4800.0;
  double fork_stock_ns = 38055.0;
  double fork_delta_no_reg_ns = 674.0;
  double fork_delta_100_reg_ns = 4956.0;
};

struct WorkloadCosts {
  double copy64_ns = kCachedCopyWorkNs;
  double ntcopy64_ns = kNonTemporalCopyWorkNs;
};

class CostParameters {
 public:
  static CostParameters defaults();

  bool has_overhead(Mechanism m, MitigationSetting s) const;
  // Throws ConfigurationRequired for cells without a value.
  double overhead_ns(Mechanism m, MitigationSetting s) const;
  void set_overhead(Mechanism m, MitigationSetting s, double ns);

  // Applies `key = value` overrides, e.g. `overhead.syscall.nokpti = 120`.
  void apply_overrides(std::string_view text);
  void load_overrides(const std::string& path);

  InstructionCosts instr;
  ControlPathCosts control;
  WorkloadCosts work;

 private:
  std::array<std::array<std::optional<double>, 3>, 4> overhead_{};
};

double latency(const CostParameters& params, Mechanism mechanism, MitigationSetting setting,
               double work_ns);
double speedup(const CostParameters& params, Mechanism a, Mechanism b, MitigationSetting setting,
               double work_ns);

double registration_latency(const ControlPathCosts& c, bool extra_mappings);
double deregistration_latency(const ControlPathCosts& c, bool extra_mappings);
double stock_fork_latency(const ControlPathCosts& c);
// Fork on the fastcall kernel. The table reset cost grows linearly from the empty-table delta
// to the measured 100-registration delta.
double fork_latency(const ControlPathCosts& c, std::size_t registrations);

struct BreakevenInputs {
  double overhead_fraction = 0.05;      // O: share of T considered negligible
  double syscall_overhead_ns = 300.0;   // o_s
  double fastcall_overhead_ns = 30.0;   // o_f
};

struct BreakevenWindow {
  double w_max_ns = 0;  // above this, syscall overhead is already negligible
  double w_min_ns = 0;  // below this, even the fastcall overhead is not negligible
};

// T = w + o
inline double total_time(double work_ns, double overhead_ns) { return work_ns + overhead_ns; }
inline double overhead_share(double overhead_ns, double work_ns) {
  return overhead_ns / total_time(work_ns, overhead_ns);
}

// Throws std::invalid_argument unless 0 < O < 1 and o_s > o_f > 0.
BreakevenWindow breakeven(const BreakevenInputs& in);

}  // namespace fastcall
