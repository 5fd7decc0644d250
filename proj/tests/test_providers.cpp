#include <gtest/gtest.h>

#include <random>

#include "fastcall/providers.hpp"
#include "support/test_support.hpp"

using namespace fastcall;
using fastcall::testing::GcraOracle;

namespace {

constexpr ProcessId P{1};

struct Fixture {
  Simulator sim;
  ProviderRegistry reg = ProviderRegistry::with_builtins();
  Fixture() { sim.create_process(P); }

  Grant grant(const std::string& provider, std::map<std::string, std::string> params) {
    auto d = reg.register_fastcall(sim, {P, provider, std::move(params)});
    if (auto* deny = std::get_if<Deny>(&d)) throw std::runtime_error("denied: " + deny->reason);
    return std::get<Grant>(d);
  }
  Deny deny(const std::string& provider, std::map<std::string, std::string> params) {
    auto d = reg.register_fastcall(sim, {P, provider, std::move(params)});
    if (!std::holds_alternative<Deny>(d)) throw std::runtime_error("unexpected grant");
    return std::get<Deny>(d);
  }
};

std::vector<std::uint8_t> command(std::uint8_t seed) {
  std::vector<std::uint8_t> c(64);
  for (std::size_t i = 0; i < 64; ++i) c[i] = std::uint8_t(seed * 7 + i);
  return c;
}

bool same(const Record& r, const std::vector<std::uint8_t>& v) {
  return std::equal(r.begin(), r.end(), v.begin(), v.end());
}

}  // namespace

TEST(Ipv4, ParseAndFormat) {
  EXPECT_EQ(parse_ipv4("10.0.0.1"), 0x0a000001u);
  EXPECT_EQ(format_ipv4(0xc0a80101u), "192.168.1.1");
  for (const char* bad : {"", "10.0.0", "10.0.0.1.2", "256.0.0.1", "a.b.c.d", "10..0.1", "1.2.3.4 "})
    EXPECT_FALSE(parse_ipv4(bad)) << bad;
}

TEST(Registry, UnknownProviderAndParams) {
  Fixture f;
  EXPECT_THROW(f.reg.register_fastcall(f.sim, {P, "teleport", {}}), UnknownProvider);
  EXPECT_NE(f.deny("net_send", {{"allowed_ip", "10.0.0.300"}}).reason, "");
  f.deny("net_send", {});
  f.deny("net_send", {{"allowed_ip", "10.0.0.1"}, {"ring_depth", "6"}});
  f.deny("net_send", {{"allowed_ip", "10.0.0.1"}, {"color", "blue"}});
  f.deny("rate_limited", {});
  f.deny("rate_limited", {{"rate_per_sec", "10"}, {"capacity", "0"}});
  f.deny("bench", {{"workload", "fft"}});
  EXPECT_TRUE(f.sim.table(P).empty());
  EXPECT_TRUE(f.sim.memory().space(P).regions().empty());
}

TEST(Registry, DenyWhenTableFull) {
  Fixture f;
  for (std::uint32_t i = 0; i < kTableEntries; ++i) f.grant("bench", {{"workload", "noop"}});
  std::size_t regions = f.sim.memory().space(P).regions().size();
  EXPECT_EQ(f.deny("net_send", {{"allowed_ip", "10.0.0.1"}}).reason, "table-full");
  EXPECT_EQ(f.sim.memory().space(P).regions().size(), regions);
}

TEST(Registry, ControlPathLatencies) {
  Fixture f;
  Grant noop = f.grant("bench", {{"workload", "noop"}});
  Grant net = f.grant("net_send", {{"allowed_ip", "10.0.0.1"}});
  EXPECT_DOUBLE_EQ(noop.control_path_latency_ns, 1400);
  EXPECT_DOUBLE_EQ(net.control_path_latency_ns, 2600);
  EXPECT_DOUBLE_EQ(f.reg.deregister(f.sim, P, net.index), 4800);
  EXPECT_DOUBLE_EQ(f.reg.deregister(f.sim, P, noop.index), 2400);
  EXPECT_THROW(f.reg.deregister(f.sim, P, noop.index), DispatchError);
}

TEST(ProviderProperty, ProgramsPassDefaultVerifier) {
  Fixture f;
  std::vector<Grant> gs = {
      f.grant("bench", {{"workload", "noop"}}),
      f.grant("bench", {{"workload", "copy64"}}),
      f.grant("bench", {{"workload", "ntcopy64"}}),
      f.grant("net_send", {{"allowed_ip", "10.0.0.1"}, {"ring_depth", "1024"}}),
      f.grant("rate_limited", {{"rate_per_sec", "1000"}}),
      f.grant("nvme_submit", {{"queue_depth", "1024"}}),
  };
  for (const auto& g : gs) {
    const auto* e = f.sim.table(P).at(g.index);
    ASSERT_NE(e, nullptr);
    auto rep = ir::verify(e->program);
    EXPECT_TRUE(rep.accepted) << e->provider_id;
    EXPECT_LE(rep.wcet_ns, ir::kDefaultWcetCeilingNs);
  }
}

TEST(NetSend, ConfigEncodesAllowedAddress) {
  Fixture f;
  Grant g = f.grant("net_send", {{"allowed_ip", "10.0.0.1"}});
  EXPECT_EQ(f.sim.table(P).at(g.index)->config.at(0), 0x0a000001u);
}

TEST(NetSend, PermittedAndDenied) {
  Fixture f;
  Grant g = f.grant("net_send", {{"allowed_ip", "10.0.0.1"}});
  RingDevice* ring = f.sim.device(g.regions.at("tx_ring"));
  ASSERT_NE(ring, nullptr);

  auto bad = make_packet_header(*parse_ipv4("10.0.0.2"), 0x11);
  write_shared(f.sim, P, g.regions.at("header"), bad);
  auto r = net_send_invoke(f.sim, P, g);
  EXPECT_EQ(r.outcome, Outcome::PolicyDenied);
  EXPECT_EQ(r.reason, "ip-not-permitted");
  EXPECT_TRUE(r.trace.empty());
  EXPECT_EQ(ring->store_count(), 0u);
  EXPECT_EQ(ring->tail(), 0u);

  auto h1 = make_packet_header(*parse_ipv4("10.0.0.1"), 0x22);
  write_shared(f.sim, P, g.regions.at("header"), h1);
  r = net_send_invoke(f.sim, P, g);
  EXPECT_EQ(r.outcome, Outcome::Return);
  EXPECT_EQ(r.value, 0u);
  auto h2 = make_packet_header(*parse_ipv4("10.0.0.1"), 0x33);
  write_shared(f.sim, P, g.regions.at("header"), h2);
  net_send_invoke(f.sim, P, g);
  EXPECT_EQ(ring->tail(), 2u);
  auto recs = ring->drain();
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_TRUE(same(recs[0], h1));
  EXPECT_TRUE(same(recs[1], h2));
}

TEST(NetSend, QueueFull) {
  Fixture f;
  Grant g = f.grant("net_send", {{"allowed_ip", "10.0.0.1"}, {"ring_depth", "2"}});
  write_shared(f.sim, P, g.regions.at("header"), make_packet_header(0x0a000001u));
  EXPECT_EQ(net_send_invoke(f.sim, P, g).outcome, Outcome::Return);
  EXPECT_EQ(net_send_invoke(f.sim, P, g).outcome, Outcome::Return);
  auto r = net_send_invoke(f.sim, P, g);
  EXPECT_EQ(r.outcome, Outcome::PolicyDenied);
  EXPECT_EQ(r.reason, "queue-full");
  EXPECT_EQ(f.sim.device(g.regions.at("tx_ring"))->dropped_doorbells(), 0u);
}

TEST(NetSend, ApplicationCannotTouchRing) {
  Fixture f;
  Grant g = f.grant("net_send", {{"allowed_ip", "10.0.0.1"}});
  const auto* ring = f.sim.memory().space(P).find(g.regions.at("tx_ring"));
  std::vector<std::uint8_t> junk(8, 0xff);
  EXPECT_THROW(f.sim.user_write(P, ring->base, junk), MemoryError);
}

TEST(NvmeSubmit, FirstSlotAndDoorbell) {
  Fixture f;
  Grant g = f.grant("nvme_submit", {{"queue_depth", "8"}});
  auto cmd = command(1);
  write_shared(f.sim, P, g.regions.at("command"), cmd);
  auto r = nvme_submit_invoke(f.sim, P, g);
  EXPECT_EQ(r.outcome, Outcome::Return);
  EXPECT_EQ(r.value, 0u);
  RingDevice* sq = f.sim.device(g.regions.at("sq"));
  EXPECT_EQ(sq->doorbell(), 1u);
  auto recs = sq->drain();
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_TRUE(same(recs[0], cmd));
}

TEST(NvmeSubmit, QueueFullOnNinth) {
  Fixture f;
  Grant g = f.grant("nvme_submit", {{"queue_depth", "8"}});
  std::vector<std::vector<std::uint8_t>> sent;
  for (std::uint8_t i = 0; i < 8; ++i) {
    sent.push_back(command(i));
    write_shared(f.sim, P, g.regions.at("command"), sent.back());
    auto r = nvme_submit_invoke(f.sim, P, g);
    EXPECT_EQ(r.outcome, Outcome::Return);
    EXPECT_EQ(r.value, i);
  }
  auto r = nvme_submit_invoke(f.sim, P, g);
  EXPECT_EQ(r.outcome, Outcome::PolicyDenied);
  EXPECT_EQ(r.reason, "queue-full");
  EXPECT_TRUE(r.trace.empty());
  auto recs = f.sim.device(g.regions.at("sq"))->drain();
  ASSERT_EQ(recs.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_TRUE(same(recs[i], sent[i]));
  EXPECT_EQ(nvme_submit_invoke(f.sim, P, g).value, 0u);  // slot 8 wraps to 0
}

TEST(RateLimited, CapacityTwoThreeCallsAtZero) {
  Fixture f;
  Grant g = f.grant("rate_limited", {{"rate_per_sec", "1000"}, {"capacity", "2"}});
  EXPECT_EQ(rate_limited_invoke(f.sim, P, g, 0).outcome, Outcome::Return);
  EXPECT_EQ(rate_limited_invoke(f.sim, P, g, 0).outcome, Outcome::Return);
  auto r = rate_limited_invoke(f.sim, P, g, 0);
  EXPECT_EQ(r.outcome, Outcome::PolicyDenied);
  EXPECT_EQ(r.reason, "rate-exceeded");
}

TEST(RateLimited, RefillClampsAtCapacity) {
  Fixture f;
  Grant g = f.grant("rate_limited", {{"rate_per_sec", "1000"}});
  EXPECT_EQ(rate_limited_invoke(f.sim, P, g, 0).outcome, Outcome::Return);
  EXPECT_EQ(rate_limited_invoke(f.sim, P, g, 2'000'000).outcome, Outcome::Return);
  EXPECT_EQ(rate_limited_invoke(f.sim, P, g, 2'000'000).outcome, Outcome::PolicyDenied);
}

TEST(RateLimited, ZeroRateDeniesEverything) {
  Fixture f;
  Grant g = f.grant("rate_limited", {{"rate_per_sec", "0"}, {"capacity", "5"}});
  for (std::uint64_t t : {0ull, 1'000ull, 1'000'000'000ull})
    EXPECT_EQ(rate_limited_invoke(f.sim, P, g, t).outcome, Outcome::PolicyDenied);
}

TEST(RateLimited, CounterTracksGrants) {
  Fixture f;
  Grant g = f.grant("rate_limited", {{"rate_per_sec", "1000000"}, {"capacity", "3"}});
  std::uint64_t grants = 0;
  for (std::uint64_t t = 0; t < 20'000; t += 250) {
    auto r = rate_limited_invoke(f.sim, P, g, t);
    if (r.outcome == Outcome::Return) EXPECT_EQ(r.value, ++grants);
  }
  auto state = f.sim.memory().space(P).bytes(g.regions.at("state"));
  EXPECT_EQ(ir::load_le(state, 32, 8), grants);
}

TEST(TokenBucketProperty, MatchesGcraAndBound) {
  std::mt19937_64 rng(2024);
  for (int sched = 0; sched < 500; ++sched) {
    std::uint64_t cap = 1 + rng() % 6;
    std::uint64_t rate = rng() % 4 == 0 ? rng() % 10 : rng() % 2'000'000;
    std::uint64_t t = rng() % 1000;
    TokenBucket bucket(cap, rate, t);
    GcraOracle oracle(cap, rate, t);
    const std::uint64_t start = t;
    std::uint64_t grants = 0;
    for (int i = 0; i < 100; ++i) {
      t += rng() % 3 == 0 ? 0 : rng() % 3'000'000;
      bool a = bucket.try_acquire(t);
      ASSERT_EQ(a, oracle.admit(t)) << "schedule " << sched << " call " << i;
      grants += a;
      long double bound = cap + static_cast<long double>(rate) * (t - start) / 1e9L;
      EXPECT_LE(grants, bound + 1e-9L);
    }
  }
}

TEST(TokenBucket, StateRoundTrip) {
  TokenBucket b(3, 500, 100);
  b.try_acquire(200);
  std::array<std::uint8_t, 32> buf{};
  b.save(buf);
  TokenBucket c = TokenBucket::load(buf);
  EXPECT_EQ(c.capacity(), 3u);
  EXPECT_EQ(c.rate_per_sec(), 500u);
  EXPECT_EQ(c.last_refill_ns(), b.last_refill_ns());
  EXPECT_DOUBLE_EQ(c.tokens(), b.tokens());
  std::array<std::uint8_t, 8> tiny{};
  EXPECT_THROW(b.save(tiny), std::invalid_argument);
}

TEST(ProviderProperty, DenialsNeverTouchDevices) {
  std::mt19937_64 rng(31);
  Fixture f;
  Grant net = f.grant("net_send", {{"allowed_ip", "10.0.0.1"}, {"ring_depth", "4"}});
  Grant nvme = f.grant("nvme_submit", {{"queue_depth", "4"}});
  RingDevice* tx = f.sim.device(net.regions.at("tx_ring"));
  RingDevice* sq = f.sim.device(nvme.regions.at("sq"));
  std::uint64_t tx_ok = 0, sq_ok = 0, tx_drained = 0, sq_drained = 0;
  for (int i = 0; i < 2000; ++i) {
    switch (rng() % 4) {
      case 0: {
        std::uint32_t ip = rng() % 2 ? 0x0a000001u : std::uint32_t(rng());
        write_shared(f.sim, P, net.regions.at("header"), make_packet_header(ip));
        std::uint64_t stores = tx->store_count();
        auto r = net_send_invoke(f.sim, P, net);
        if (r.outcome == Outcome::Return) ++tx_ok;
        else EXPECT_EQ(tx->store_count(), stores);
        break;
      }
      case 1: {
        std::uint64_t stores = sq->store_count();
        auto r = nvme_submit_invoke(f.sim, P, nvme);
        if (r.outcome == Outcome::Return) ++sq_ok;
        else EXPECT_EQ(sq->store_count(), stores);
        break;
      }
      case 2: tx_drained += tx->drain().size(); break;
      default: sq_drained += sq->drain().size();
    }
  }
  tx_drained += tx->drain().size();
  sq_drained += sq->drain().size();
  EXPECT_EQ(tx_drained, tx_ok);
  EXPECT_EQ(sq_drained, sq_ok);
  EXPECT_EQ(tx->dropped_doorbells() + sq->dropped_doorbells(), 0u);
}
