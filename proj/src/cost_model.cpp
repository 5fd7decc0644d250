#include "fastcall/cost_model.hpp"

#include <map>

#include "fastcall/kv_config.hpp"

namespace fastcall {

std::string_view to_string(MitigationSetting setting) {
  switch (setting) {
    case MitigationSetting::Full: return "full";
    case MitigationSetting::NoKPTI: return "nokpti";
    case MitigationSetting::Off: return "off";
  }
  return "?";
}

std::string_view to_string(Mechanism mechanism) {
  switch (mechanism) {
    case Mechanism::Vdso: return "vdso";
    case Mechanism::Fastcall: return "fastcall";
    case Mechanism::Syscall: return "syscall";
    case Mechanism::Ioctl: return "ioctl";
  }
  return "?";
}

std::optional<MitigationSetting> parse_setting(std::string_view text) {
  for (auto s : kAllSettings)
    if (to_string(s) == text) return s;
  return std::nullopt;
}

std::optional<Mechanism> parse_mechanism(std::string_view text) {
  for (auto m : kAllMechanisms)
    if (to_string(m) == text) return m;
  return std::nullopt;
}

CostParameters CostParameters::defaults() {
  using M = Mechanism;
  using S = MitigationSetting;
  CostParameters p;
  for (auto s : kAllSettings) p.set_overhead(M::Vdso, s, 1.4);
  p.set_overhead(M::Fastcall, S::Full, 23.9);
  p.set_overhead(M::Fastcall, S::NoKPTI, 23.9);
  p.set_overhead(M::Fastcall, S::Off, 24.1);
  p.set_overhead(M::Syscall, S::Full, 354.7);
  p.set_overhead(M::Syscall, S::Off, 46.4);
  p.set_overhead(M::Ioctl, S::Full, 413.6);
  // Syscall/nokpti and ioctl/{nokpti,off} have no published value; they stay empty.
  return p;
}

bool CostParameters::has_overhead(Mechanism m, MitigationSetting s) const {
  return overhead_[static_cast<int>(m)][static_cast<int>(s)].has_value();
}

double CostParameters::overhead_ns(Mechanism m, MitigationSetting s) const {
  const auto& cell = overhead_[static_cast<int>(m)][static_cast<int>(s)];
  if (!cell)
    throw ConfigurationRequired("overhead." + std::string(to_string(m)) + "." +
                                std::string(to_string(s)) + " has no default; supply it in a "
                                "parameter file");
  return *cell;
}

void CostParameters::set_overhead(Mechanism m, MitigationSetting s, double ns) {
  if (!(ns >= 0)) throw std::invalid_argument("overhead must be >= 0");
  overhead_[static_cast<int>(m)][static_cast<int>(s)] = ns;
}

void CostParameters::apply_overrides(std::string_view text) {
  const std::map<std::string, double*, std::less<>> scalars = {
      {"instr.alu", &instr.alu_ns},
      {"instr.mem", &instr.cached_mem_ns},
      {"instr.uncached", &instr.uncached_ns},
      {"control.register_base", &control.register_base_ns},
      {"control.register_with_mappings", &control.register_with_mappings_ns},
      {"control.deregister_base", &control.deregister_base_ns},
      {"control.deregister_with_mappings", &control.deregister_with_mappings_ns},
      {"control.fork_stock", &control.fork_stock_ns},
      {"control.fork_delta_no_reg", &control.fork_delta_no_reg_ns},
      {"control.fork_delta_100_reg", &control.fork_delta_100_reg_ns},
      {"work.copy64", &work.copy64_ns},
      {"work.ntcopy64", &work.ntcopy64_ns},
  };

  for (const auto& section : parse_kv(text)) {
    if (!section.name.empty())
      throw ConfigError(section.line, "parameter files have no sections");
    for (const auto& e : section.entries) {
      double v = parse_double(e);
      if (v < 0) throw ConfigError(e.line, "`" + e.key + "` must be >= 0");
      if (auto it = scalars.find(e.key); it != scalars.end()) {
        *it->second = v;
        continue;
      }
      auto parts = split_list(e.key, '.');
      if (parts.size() == 3 && parts[0] == "overhead") {
        auto m = parse_mechanism(parts[1]);
        auto s = parse_setting(parts[2]);
        if (m && s) {
          set_overhead(*m, *s, v);
          continue;
        }
      }
      throw ConfigError(e.line, "unknown parameter `" + e.key + "`");
    }
  }
}

void CostParameters::load_overrides(const std::string& path) {
  apply_overrides(read_text_file(path));
}

double latency(const CostParameters& params, Mechanism mechanism, MitigationSetting setting,
               double work_ns) {
  if (!(work_ns >= 0)) throw std::invalid_argument("work must be >= 0");
  return params.overhead_ns(mechanism, setting) + work_ns;
}

double speedup(const CostParameters& params, Mechanism a, Mechanism b, MitigationSetting setting,
               double work_ns) {
  double denom = latency(params, b, setting, work_ns);
  if (!(denom > 0)) throw std::invalid_argument("reference latency must be > 0");
  return latency(params, a, setting, work_ns) / denom;
}

double registration_latency(const ControlPathCosts& c, bool extra_mappings) {
  return extra_mappings ? c.register_with_mappings_ns : c.register_base_ns;
}

double deregistration_latency(const ControlPathCosts& c, bool extra_mappings) {
  return extra_mappings ? c.deregister_with_mappings_ns : c.deregister_base_ns;
}

double stock_fork_latency(const ControlPathCosts& c) { return c.fork_stock_ns; }

double fork_latency(const ControlPathCosts& c, std::size_t registrations) {
  double per_100 = c.fork_delta_100_reg_ns - c.fork_delta_no_reg_ns;
  return c.fork_stock_ns + c.fork_delta_no_reg_ns +
         per_100 * static_cast<double>(registrations) / 100.0;
}

BreakevenWindow breakeven(const BreakevenInputs& in) {
  const double o = in.overhead_fraction;
  if (!(o > 0 && o < 1)) throw std::invalid_argument("O must lie in (0, 1)");
  if (!(in.fastcall_overhead_ns > 0)) throw std::invalid_argument("o_f must be > 0");
  if (!(in.syscall_overhead_ns > in.fastcall_overhead_ns))
    throw std::invalid_argument("o_s must exceed o_f");
  // o / (o + w) = O  <=>  w = o (1 - O) / O
  return {in.syscall_overhead_ns * (1 - o) / o, in.fastcall_overhead_ns * (1 - o) / o};
}

}  // namespace fastcall
