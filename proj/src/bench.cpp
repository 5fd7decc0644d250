#include "fastcall/bench.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "fastcall/dispatch.hpp"
#include "fastcall/kv_config.hpp"
#include "fastcall/providers.hpp"

namespace fastcall {

namespace {

constexpr ProcessId kBenchPid{1};
constexpr std::size_t kDeviceSample = 4;

struct WorkloadName {
  Workload w;
  std::string_view name;
};

constexpr WorkloadName kWorkloads[] = {
    {Workload::Noop, "noop"},          {Workload::Copy64, "copy64"},
    {Workload::NtCopy64, "ntcopy64"},  {Workload::NetSend, "net_send"},
    {Workload::NvmeSubmit, "nvme_submit"}, {Workload::RateLimited, "rate_limited"},
};

RegistrationRequest registration_for(const Scenario& s) {
  RegistrationRequest req;
  req.process = kBenchPid;
  req.parameters = s.provider_params;
  switch (s.workload) {
    case Workload::Noop:
    case Workload::Copy64:
    case Workload::NtCopy64:
      req.provider_name = "bench";
      req.parameters["workload"] = std::string(to_string(s.workload));
      break;
    case Workload::NetSend: req.provider_name = "net_send"; break;
    case Workload::NvmeSubmit: req.provider_name = "nvme_submit"; break;
    case Workload::RateLimited: req.provider_name = "rate_limited"; break;
  }
  return req;
}

void count(OutcomeCounts& c, Outcome o) {
  switch (o) {
    case Outcome::Return: ++c.returned; break;
    case Outcome::TableError: ++c.table_error; break;
    case Outcome::PolicyDenied: ++c.policy_denied; break;
    case Outcome::RoutedToKernel: ++c.routed_to_kernel; break;
  }
}

std::vector<std::uint8_t> pattern(std::uint64_t seed) {
  std::vector<std::uint8_t> v(64);
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = static_cast<std::uint8_t>((seed * 131 + i * 7 + 1) & 0xff);
  return v;
}

void run_kernel_path(Simulator& sim, const Scenario& s, BenchRow& row, double work) {
  std::uint64_t nr = row.mechanism == Mechanism::Ioctl ? kIoctlSyscallNr : kGetpidSyscallNr;
  double total = 0;
  for (std::uint64_t i = 0; i < s.iterations; ++i) {
    InvocationResult r = sim.syscall_entry(kBenchPid, nr, {}, row.setting);
    if (r.mechanism != row.mechanism)
      throw InvariantViolation("kernel path dispatched to the wrong mechanism");
    count(row.counts, r.outcome);
    total += r.modeled_latency_ns + work;
    sim.advance_clock(static_cast<double>(s.interval_ns) + work);
  }
  row.dispatched_latency_ns = total / static_cast<double>(s.iterations);
}

void run_fastcall_path(Simulator& sim, const Scenario& s, BenchRow& row) {
  auto registry = ProviderRegistry::with_builtins();
  PolicyDecision d = registry.register_fastcall(sim, registration_for(s));
  if (auto* deny = std::get_if<Deny>(&d))
    throw std::runtime_error("scenario `" + s.name + "`: provider refused registration: " +
                             deny->reason);
  const Grant& g = std::get<Grant>(d);

  std::uint32_t dest = 0;
  if (s.workload == Workload::NetSend) {
    std::string text = s.dest_ip.value_or(s.provider_params.at("allowed_ip"));
    auto ip = parse_ipv4(text);
    if (!ip) throw std::invalid_argument("scenario `" + s.name + "`: bad dest_ip `" + text + "`");
    dest = *ip;
  }

  RingDevice* ring = nullptr;
  if (auto it = g.regions.find("tx_ring"); it != g.regions.end()) ring = sim.device(it->second);
  if (auto it = g.regions.find("sq"); it != g.regions.end()) ring = sim.device(it->second);
  auto collect = [&] {
    for (const Record& rec : ring->drain()) {
      if (row.device_sample.size() < kDeviceSample) row.device_sample.push_back(rec);
      ++row.device_records;
    }
  };

  double total = 0;
  for (std::uint64_t i = 0; i < s.iterations; ++i) {
    switch (s.workload) {
      case Workload::Copy64:
      case Workload::NtCopy64: write_shared(sim, kBenchPid, g.regions.at("source"), pattern(i)); break;
      case Workload::NetSend: {
        auto header = make_packet_header(dest, static_cast<std::uint8_t>(i));
        write_shared(sim, kBenchPid, g.regions.at("header"), header);
        break;
      }
      case Workload::NvmeSubmit: write_shared(sim, kBenchPid, g.regions.at("command"), pattern(i)); break;
      default: break;
    }
    InvocationResult r = sim.syscall_entry(kBenchPid, kFastcallSyscallNr, {g.index}, row.setting);
    count(row.counts, r.outcome);
    total += r.modeled_latency_ns;
    sim.advance_clock(static_cast<double>(s.interval_ns));
    if (ring && ring->full()) collect();  // the device consumes whenever the ring fills up
  }
  if (ring) {
    collect();
    if (row.device_records != row.counts.returned)
      throw InvariantViolation("scenario `" + s.name + "`: " + std::to_string(row.device_records) +
                               " device records for " + std::to_string(row.counts.returned) +
                               " successful submissions");
  }
  row.dispatched_latency_ns = total / static_cast<double>(s.iterations);
}

BenchRow run_row(const Scenario& s, Mechanism m, MitigationSetting setting,
                 const CostParameters& params) {
  BenchRow row;
  row.scenario = s.name;
  row.workload = s.workload;
  row.mechanism = m;
  row.setting = setting;
  if (!params.has_overhead(m, setting)) return row;

  const double work = workload_work_ns(s.workload, params);
  Simulator sim(params);
  sim.create_process(kBenchPid);
  switch (m) {
    case Mechanism::Vdso:
      // Plain user-mode call; nothing to dispatch.
      row.counts.returned = s.iterations;
      row.dispatched_latency_ns = latency(params, m, setting, work);
      break;
    case Mechanism::Syscall:
    case Mechanism::Ioctl: run_kernel_path(sim, s, row, work); break;
    case Mechanism::Fastcall: run_fastcall_path(sim, s, row); break;
  }
  row.latency_ns = is_provider_workload(s.workload) ? *row.dispatched_latency_ns
                                                     : latency(params, m, setting, work);
  return row;
}

}  // namespace

std::string_view to_string(Workload w) {
  for (const auto& e : kWorkloads)
    if (e.w == w) return e.name;
  return "?";
}

std::optional<Workload> parse_workload(std::string_view text) {
  for (const auto& e : kWorkloads)
    if (e.name == text) return e.w;
  return std::nullopt;
}

bool is_provider_workload(Workload w) {
  return w == Workload::NetSend || w == Workload::NvmeSubmit || w == Workload::RateLimited;
}

double workload_work_ns(Workload w, const CostParameters& params) {
  switch (w) {
    case Workload::Copy64: return params.work.copy64_ns;
    case Workload::NtCopy64: return params.work.ntcopy64_ns;
    default: return 0;
  }
}

void validate(const Scenario& s) {
  auto bad = [&](const std::string& msg) {
    return std::invalid_argument("scenario `" + s.name + "`: " + msg);
  };
  if (s.name.empty()) throw std::invalid_argument("scenario without a name");
  if (s.iterations == 0) throw bad("iterations must be > 0");
  if (s.mechanisms.empty()) throw bad("no mechanisms");
  if (s.settings.empty()) throw bad("no mitigation settings");
  if (is_provider_workload(s.workload))
    for (Mechanism m : s.mechanisms)
      if (m != Mechanism::Fastcall)
        throw bad(std::string(to_string(s.workload)) + " runs only as a fastcall");
  if (s.workload == Workload::NetSend && !s.provider_params.count("allowed_ip"))
    throw bad("net_send needs provider.allowed_ip");
  if (s.dest_ip && s.workload != Workload::NetSend) throw bad("dest_ip applies to net_send only");
}

std::vector<Scenario> parse_scenarios(std::string_view text) {
  std::vector<Scenario> out;
  for (const auto& sec : parse_kv(text)) {
    constexpr std::string_view prefix = "scenario ";
    if (sec.name.rfind(prefix, 0) != 0)
      throw ConfigError(sec.line, "expected a `[scenario NAME]` section");
    Scenario s;
    s.name = std::string(trim(std::string_view(sec.name).substr(prefix.size())));
    s.mechanisms.assign(std::begin(kAllMechanisms), std::end(kAllMechanisms));
    s.settings = {MitigationSetting::Full};
    bool have_workload = false;
    for (const auto& e : sec.entries) {
      if (e.key == "workload") {
        auto w = parse_workload(e.value);
        if (!w) throw ConfigError(e.line, "unknown workload `" + e.value + "`");
        s.workload = *w;
        have_workload = true;
      } else if (e.key == "mechanisms") {
        s.mechanisms.clear();
        for (const auto& item : split_list(e.value)) {
          auto m = parse_mechanism(item);
          if (!m) throw ConfigError(e.line, "unknown mechanism `" + item + "`");
          s.mechanisms.push_back(*m);
        }
      } else if (e.key == "settings" || e.key == "setting") {
        s.settings.clear();
        for (const auto& item : split_list(e.value)) {
          auto st = parse_setting(item);
          if (!st) throw ConfigError(e.line, "unknown mitigation setting `" + item + "`");
          s.settings.push_back(*st);
        }
      } else if (e.key == "iterations") {
        s.iterations = parse_u64(e);
      } else if (e.key == "interval_ns") {
        s.interval_ns = parse_u64(e);
      } else if (e.key == "dest_ip") {
        s.dest_ip = e.value;
      } else if (e.key.rfind("provider.", 0) == 0) {
        s.provider_params[e.key.substr(9)] = e.value;
      } else {
        throw ConfigError(e.line, "unknown scenario key `" + e.key + "`");
      }
    }
    if (!have_workload) throw ConfigError(sec.line, "scenario `" + s.name + "` has no workload");
    if (is_provider_workload(s.workload) &&
        !sec.find("mechanisms"))
      s.mechanisms = {Mechanism::Fastcall};
    try {
      validate(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(sec.line, e.what());
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw ConfigError(0, "no scenarios defined");
  return out;
}

std::vector<Scenario> default_suite() {
  std::vector<Scenario> out;
  for (Workload w : {Workload::Noop, Workload::Copy64, Workload::NtCopy64}) {
    Scenario s;
    s.name = std::string(to_string(w));
    s.workload = w;
    s.mechanisms.assign(std::begin(kAllMechanisms), std::end(kAllMechanisms));
    s.settings.assign(std::begin(kAllSettings), std::end(kAllSettings));
    s.iterations = 100;
    out.push_back(std::move(s));
  }
  return out;
}

BenchReport run_scenario(const Scenario& scenario, const CostParameters& params) {
  validate(scenario);
  BenchReport report;
  const double work = workload_work_ns(scenario.workload, params);
  for (MitigationSetting setting : scenario.settings) {
    std::size_t first = report.rows.size();
    std::optional<double> fastcall_latency;
    for (Mechanism m : scenario.mechanisms) {
      report.rows.push_back(run_row(scenario, m, setting, params));
      if (m == Mechanism::Fastcall) fastcall_latency = report.rows.back().latency_ns;
    }
    if (!fastcall_latency && params.has_overhead(Mechanism::Fastcall, setting))
      fastcall_latency = latency(params, Mechanism::Fastcall, setting, work);
    for (std::size_t i = first; i < report.rows.size(); ++i) {
      auto& row = report.rows[i];
      if (row.latency_ns && fastcall_latency && *fastcall_latency > 0)
        row.speedup_vs_fastcall = *row.latency_ns / *fastcall_latency;
    }
  }
  return report;
}

BenchReport run_suite(const std::vector<Scenario>& scenarios, const CostParameters& params) {
  BenchReport all;
  for (const auto& s : scenarios) {
    BenchReport r = run_scenario(s, params);
    all.rows.insert(all.rows.end(), r.rows.begin(), r.rows.end());
  }
  return all;
}

std::string format_number(double value, int max_decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", max_decimals, value);
  std::string s = buf;
  if (s.find('.') != std::string::npos) {
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
  }
  if (s == "-0") s = "0";
  return s;
}

std::string to_csv(const BenchReport& report) {
  std::ostringstream out;
  out << kCsvHeader << '\n';
  auto cell = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string("NA"); };
  for (const auto& r : report.rows)
    out << r.scenario << ',' << to_string(r.mechanism) << ',' << to_string(r.setting) << ','
        << cell(r.latency_ns) << ',' << cell(r.speedup_vs_fastcall) << '\n';
  return out.str();
}

std::string to_text(const BenchReport& report) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-14s %-9s %-7s %12s %9s %8s %8s %8s %8s %8s\n", "scenario",
                "mechanism", "setting", "latency_ns", "speedup", "return", "denied", "tblerr",
                "kernel", "records");
  out << line;
  for (const auto& r : report.rows) {
    std::string lat = r.latency_ns ? format_number(*r.latency_ns) : "NA";
    std::string sp = r.speedup_vs_fastcall ? format_number(*r.speedup_vs_fastcall, 3) : "NA";
    std::snprintf(line, sizeof line, "%-14s %-9s %-7s %12s %9s %8llu %8llu %8llu %8llu %8llu\n",
                  r.scenario.c_str(), std::string(to_string(r.mechanism)).c_str(),
                  std::string(to_string(r.setting)).c_str(), lat.c_str(), sp.c_str(),
                  static_cast<unsigned long long>(r.counts.returned),
                  static_cast<unsigned long long>(r.counts.policy_denied),
                  static_cast<unsigned long long>(r.counts.table_error),
                  static_cast<unsigned long long>(r.counts.routed_to_kernel),
                  static_cast<unsigned long long>(r.device_records));
    out << line;
    for (const Record& rec : r.device_sample) {
      out << "    record ";
      for (std::uint8_t b : rec) {
        std::snprintf(line, sizeof line, "%02x", b);
        out << line;
      }
      out << '\n';
    }
  }
  return out.str();
}

// ---- lifecycle -----------------------------------------------------------------------------------

bool LifecycleReport::all_passed() const {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return true;
}

std::string LifecycleReport::to_text() const {
  std::ostringstream out;
  out << "control path (modeled):\n"
      << "  register w/o mappings    " << format_number(register_base_ns / 1000, 3) << " us\n"
      << "  register w/ mappings     " << format_number(register_with_mappings_ns / 1000, 3) << " us\n"
      << "  deregister w/o mappings  " << format_number(deregister_base_ns / 1000, 3) << " us\n"
      << "  deregister w/ mappings   " << format_number(deregister_with_mappings_ns / 1000, 3) << " us\n"
      << "  fork, stock kernel       " << format_number(fork_stock_ns / 1000, 3) << " us\n"
      << "  fork, no registrations   " << format_number(fork_no_registrations_ns / 1000, 3) << " us\n"
      << "  fork, 100 registrations  " << format_number(fork_100_registrations_ns / 1000, 3) << " us\n"
      << "  fork, this run (" << fork_observed_registrations << " entries) "
      << format_number(fork_observed_ns / 1000, 3) << " us\n"
      << "checks:\n";
  for (const auto& c : checks)
    out << "  [" << (c.passed ? "ok" : "FAILED") << "] " << c.name
        << (c.detail.empty() ? "" : " (" + c.detail + ")") << '\n';
  return out.str();
}

LifecycleReport run_lifecycle_demo(const LifecycleConfig& config, const CostParameters& params) {
  LifecycleReport rep;
  auto check = [&](std::string name, bool ok, std::string detail = {}) {
    rep.checks.push_back({std::move(name), ok, std::move(detail)});
    return ok;
  };

  Simulator sim(params);
  auto providers = ProviderRegistry::with_builtins();
  const ProcessId parent{1};
  sim.create_process(parent);

  auto reg = [&](const std::string& provider, std::map<std::string, std::string> p) -> Grant {
    PolicyDecision d = providers.register_fastcall(sim, {parent, provider, std::move(p)});
    if (auto* deny = std::get_if<Deny>(&d))
      throw InvariantViolation("registration with " + provider + " denied: " + deny->reason);
    return std::get<Grant>(d);
  };
  Grant noop = reg("bench", {{"workload", "noop"}});
  Grant net = reg("net_send", {{"allowed_ip", "10.0.0.1"}, {"ring_depth", "8"}});
  Grant nvme = reg("nvme_submit", {{"queue_depth", "8"}});
  rep.register_base_ns = noop.control_path_latency_ns;
  rep.register_with_mappings_ns = net.control_path_latency_ns;
  check("registration without mappings is modeled at the base cost",
        rep.register_base_ns == params.control.register_base_ns);
  check("registration with mappings is modeled at the mapping cost",
        rep.register_with_mappings_ns == params.control.register_with_mappings_ns &&
            nvme.control_path_latency_ns == params.control.register_with_mappings_ns);

  RingDevice* tx = sim.device(net.regions.at("tx_ring"));
  RingDevice* sq = sim.device(nvme.regions.at("sq"));
  std::uint64_t ok = 0;
  std::uint64_t tx_records = 0;
  std::uint64_t sq_records = 0;
  auto header = make_packet_header(*parse_ipv4("10.0.0.1"), 0xab);
  write_shared(sim, parent, net.regions.at("header"), header);
  for (std::uint64_t i = 0; i < config.invocations; ++i) {
    ok += sim.invoke_fastcall(parent, noop.index).outcome == Outcome::Return;
    ok += net_send_invoke(sim, parent, net).outcome == Outcome::Return;
    ok += nvme_submit_invoke(sim, parent, nvme).outcome == Outcome::Return;
    if (tx->full()) tx_records += tx->drain().size();
    if (sq->full()) sq_records += sq->drain().size();
  }
  tx_records += tx->drain().size();
  sq_records += sq->drain().size();
  check("all invocations return", ok == 3 * config.invocations,
        std::to_string(ok) + "/" + std::to_string(3 * config.invocations));
  check("device records match submissions",
        tx_records == config.invocations && sq_records == config.invocations);

  const ProcessId child = sim.fork_process(parent);
  rep.fork_observed_ns = sim.last_fork_latency_ns();
  rep.fork_observed_registrations = sim.table(parent).size();
  check("child starts with an empty fastcall table", sim.table(child).empty());
  const auto& cspace = sim.memory().space(child);
  bool no_fc_regions = true;
  for (const auto& r : cspace.regions()) no_fc_regions &= r.kind == RegionKind::UserPrivate;
  check("child has no fastcall-space regions", no_fc_regions);
  bool child_errors = true;
  for (auto idx : {noop.index, net.index, nvme.index})
    child_errors &= sim.invoke_fastcall(child, idx).outcome == Outcome::TableError;
  check("child invocations of inherited indices fail with a table error", child_errors);
  check("parent entries survive the fork",
        sim.invoke_fastcall(parent, noop.index).outcome == Outcome::Return);

  rep.deregister_with_mappings_ns = providers.deregister(sim, parent, net.index);
  rep.deregister_base_ns = providers.deregister(sim, parent, noop.index);
  providers.deregister(sim, parent, nvme.index);
  check("deregistration costs follow the mapping count",
        rep.deregister_base_ns == params.control.deregister_base_ns &&
            rep.deregister_with_mappings_ns == params.control.deregister_with_mappings_ns);
  check("deregistered indices fail with a table error",
        sim.invoke_fastcall(parent, noop.index).outcome == Outcome::TableError &&
            sim.invoke_fastcall(parent, net.index).outcome == Outcome::TableError);

  const ProcessId fresh{100};
  sim.create_process(fresh);
  sim.fork_process(fresh);
  rep.fork_stock_ns = stock_fork_latency(params.control);
  rep.fork_no_registrations_ns = sim.last_fork_latency_ns();
  rep.fork_100_registrations_ns = fork_latency(params.control, 100);
  check("fork without registrations adds the table-reset delta",
        rep.fork_no_registrations_ns ==
            params.control.fork_stock_ns + params.control.fork_delta_no_reg_ns);

  if (!rep.all_passed()) {
    std::string failed;
    for (const auto& c : rep.checks)
      if (!c.passed) failed += "\n  " + c.name + (c.detail.empty() ? "" : " (" + c.detail + ")");
    throw InvariantViolation("lifecycle checks failed:" + failed);
  }
  return rep;
}

}  // namespace fastcall
