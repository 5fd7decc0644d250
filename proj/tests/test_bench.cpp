#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "fastcall/bench.hpp"
#include "fastcall/dispatch.hpp"
#include "fastcall/kv_config.hpp"

using namespace fastcall;

namespace {

const CostParameters P = CostParameters::defaults();

const BenchRow* find(const BenchReport& r, const std::string& scenario, Mechanism m,
                     MitigationSetting s) {
  for (const auto& row : r.rows)
    if (row.scenario == scenario && row.mechanism == m && row.setting == s) return &row;
  return nullptr;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(FormatNumber, TrimsZeros) {
  EXPECT_EQ(format_number(5700), "5700");
  EXPECT_EQ(format_number(23.9), "23.9");
  EXPECT_EQ(format_number(354.7 / 23.9), "14.841");
  EXPECT_EQ(format_number(0.00001), "0");
  EXPECT_EQ(format_number(-0.00001), "0");
  EXPECT_EQ(format_number(2.5, 0), "2");
}

TEST(Bench, NoopLatenciesFull) {
  Scenario s = default_suite()[0];
  ASSERT_EQ(s.workload, Workload::Noop);
  BenchReport r = run_scenario(s, P);
  const std::map<Mechanism, double> want = {{Mechanism::Vdso, 1.4},
                                            {Mechanism::Fastcall, 23.9},
                                            {Mechanism::Syscall, 354.7},
                                            {Mechanism::Ioctl, 413.6}};
  for (auto [m, v] : want) {
    const BenchRow* row = find(r, "noop", m, MitigationSetting::Full);
    ASSERT_TRUE(row && row->latency_ns);
    EXPECT_DOUBLE_EQ(*row->latency_ns, v);
    EXPECT_EQ(row->counts.total(), s.iterations);
  }
  EXPECT_DOUBLE_EQ(*find(r, "noop", Mechanism::Fastcall, MitigationSetting::Off)->latency_ns, 24.1);
  EXPECT_DOUBLE_EQ(*find(r, "noop", Mechanism::Syscall, MitigationSetting::Off)->latency_ns, 46.4);
  EXPECT_FALSE(find(r, "noop", Mechanism::Ioctl, MitigationSetting::Off)->latency_ns);
  // The dispatched noop costs its RET on top of the entry overhead.
  EXPECT_NEAR(*find(r, "noop", Mechanism::Fastcall, MitigationSetting::Full)->dispatched_latency_ns,
              24.9, 1e-9);
}

TEST(BenchProperty, RowCountsAndOutcomeSums) {
  BenchReport r = run_suite(default_suite(), P);
  EXPECT_EQ(r.rows.size(), 3u * 4u * 3u);
  for (const auto& row : r.rows)
    if (row.latency_ns) EXPECT_EQ(row.counts.total(), 100u);
    else EXPECT_EQ(row.counts.total(), 0u);
}

// Speedups recomputed from the cost model for every populated row.
TEST(BenchProperty, SpeedupsMatchCostModel) {
  BenchReport r = run_suite(default_suite(), P);
  for (const auto& row : r.rows) {
    if (!row.latency_ns) {
      EXPECT_FALSE(row.speedup_vs_fastcall);
      continue;
    }
    double w = workload_work_ns(row.workload, P);
    ASSERT_TRUE(row.speedup_vs_fastcall);
    EXPECT_NEAR(*row.speedup_vs_fastcall,
                speedup(P, row.mechanism, Mechanism::Fastcall, row.setting, w), 1e-12);
  }
}

TEST(Bench, CopyRatios) {
  BenchReport r = run_suite(default_suite(), P);
  EXPECT_NEAR(*find(r, "copy64", Mechanism::Syscall, MitigationSetting::Full)->speedup_vs_fastcall,
              12.5, 0.1);
  EXPECT_NEAR(*find(r, "ntcopy64", Mechanism::Syscall, MitigationSetting::Full)->speedup_vs_fastcall,
              3.4, 0.05);
}

TEST(Bench, CsvFormat) {
  BenchReport r = run_suite(default_suite(), P);
  auto ls = lines(to_csv(r));
  ASSERT_EQ(ls.size(), 37u);
  EXPECT_EQ(ls[0], "scenario,mechanism,setting,latency_ns,speedup_vs_fastcall");
  EXPECT_EQ(ls[1], "noop,vdso,full,1.4,0.0586");
  EXPECT_EQ(ls[3], "noop,syscall,full,354.7,14.841");
  EXPECT_EQ(ls[7], "noop,syscall,nokpti,NA,NA");
  for (const auto& l : ls) EXPECT_EQ(std::count(l.begin(), l.end(), ','), 4);
}

TEST(BenchProperty, CsvDeterministic) {
  EXPECT_EQ(to_csv(run_suite(default_suite(), P)), to_csv(run_suite(default_suite(), P)));
}

TEST(Bench, NvmeScenarioDrainsEveryRecord) {
  auto ss = parse_scenarios(
      "[scenario nvme]\nworkload = nvme_submit\niterations = 10\nprovider.queue_depth = 1024\n");
  ASSERT_EQ(ss.size(), 1u);
  BenchReport r = run_scenario(ss[0], P);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].mechanism, Mechanism::Fastcall);
  EXPECT_EQ(r.rows[0].counts.returned, 10u);
  EXPECT_EQ(r.rows[0].counts.total(), 10u);
  EXPECT_EQ(r.rows[0].device_records, 10u);
  EXPECT_FALSE(r.rows[0].device_sample.empty());
}

TEST(Bench, SmallRingIsDrainedWhenFull) {
  auto ss = parse_scenarios(
      "[scenario tx]\nworkload = net_send\niterations = 50\nprovider.allowed_ip = 10.1.2.3\n"
      "provider.ring_depth = 4\n");
  BenchRow row = run_scenario(ss[0], P).rows.at(0);
  EXPECT_EQ(row.counts.returned, 50u);
  EXPECT_EQ(row.device_records, 50u);
  EXPECT_EQ(row.device_sample.at(0)[0], 10);
  EXPECT_EQ(row.device_sample.at(0)[3], 3);
}

TEST(Bench, NetSendForeignDestinationIsDenied) {
  auto ss = parse_scenarios(
      "[scenario tx]\nworkload = net_send\niterations = 5\nprovider.allowed_ip = 10.1.2.3\n"
      "dest_ip = 10.9.9.9\n");
  BenchRow row = run_scenario(ss[0], P).rows.at(0);
  EXPECT_EQ(row.counts.policy_denied, 5u);
  EXPECT_EQ(row.device_records, 0u);
}

TEST(Bench, RateLimitedFollowsInterval) {
  // 1000/s with capacity 1: only calls at least 1 ms apart get through.
  auto ss = parse_scenarios(
      "[scenario rl]\nworkload = rate_limited\niterations = 20\ninterval_ns = 400000\n"
      "provider.rate_per_sec = 1000\n");
  BenchRow row = run_scenario(ss[0], P).rows.at(0);
  EXPECT_EQ(row.counts.total(), 20u);
  EXPECT_GT(row.counts.policy_denied, 0u);
  EXPECT_GT(row.counts.returned, 5u);
  EXPECT_LT(row.counts.returned, 10u);
}

TEST(Scenario, ParseErrors) {
  EXPECT_THROW(parse_scenarios(""), ConfigError);
  EXPECT_THROW(parse_scenarios("[wrong]\nworkload = noop\n"), ConfigError);
  EXPECT_THROW(parse_scenarios("[scenario a]\nworkload = fft\n"), ConfigError);
  EXPECT_THROW(parse_scenarios("[scenario a]\nworkload = noop\niterations = 0\n"), ConfigError);
  EXPECT_THROW(parse_scenarios("[scenario a]\nworkload = noop\nmechanisms = pigeon\n"), ConfigError);
  EXPECT_THROW(parse_scenarios("[scenario a]\nworkload = nvme_submit\nmechanisms = syscall\n"),
               ConfigError);
  EXPECT_THROW(parse_scenarios("[scenario a]\nworkload = net_send\n"), ConfigError);
  EXPECT_THROW(parse_scenarios("[scenario a]\nworkload = noop\ncolour = red\n"), ConfigError);
}

TEST(Scenario, ProviderDenialIsAnError) {
  auto ss = parse_scenarios("[scenario a]\nworkload = nvme_submit\nprovider.queue_depth = 3\n");
  EXPECT_THROW(run_scenario(ss[0], P), std::runtime_error);
}

TEST(Scenario, ParsesAllKeys) {
  auto ss = parse_scenarios(
      "[scenario one]\nworkload = copy64\nmechanisms = fastcall, syscall\nsettings = full,off\n"
      "iterations = 7\ninterval_ns = 5\n");
  ASSERT_EQ(ss.size(), 1u);
  EXPECT_EQ(ss[0].name, "one");
  EXPECT_EQ(ss[0].mechanisms.size(), 2u);
  EXPECT_EQ(ss[0].settings.size(), 2u);
  EXPECT_EQ(ss[0].iterations, 7u);
  EXPECT_EQ(run_scenario(ss[0], P).rows.size(), 4u);
}

TEST(Lifecycle, ModeledCosts) {
  LifecycleReport rep = run_lifecycle_demo({5}, P);
  EXPECT_TRUE(rep.all_passed());
  EXPECT_DOUBLE_EQ(rep.register_base_ns, 1400);
  EXPECT_DOUBLE_EQ(rep.register_with_mappings_ns, 2600);
  EXPECT_DOUBLE_EQ(rep.deregister_base_ns, 2400);
  EXPECT_DOUBLE_EQ(rep.deregister_with_mappings_ns, 4800);
  EXPECT_DOUBLE_EQ(rep.fork_stock_ns, 38055);
  EXPECT_DOUBLE_EQ(rep.fork_no_registrations_ns, 38055 + 674);
  EXPECT_DOUBLE_EQ(rep.fork_100_registrations_ns, 43011);
  EXPECT_EQ(rep.fork_observed_registrations, 3u);
  EXPECT_NE(rep.to_text().find("43.011"), std::string::npos);
}

TEST(Lifecycle, BrokenModelAborts) {
  CostParameters broken = P;
  broken.instr.uncached_ns = 6000;  // provider programs no longer fit the budget
  EXPECT_THROW(run_lifecycle_demo({1}, broken), InvariantViolation);
}
