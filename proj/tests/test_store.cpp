#include <gtest/gtest.h>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <random>
#include <thread>

#include "support.hpp"

using namespace clusterscape;

namespace {

Workload submitted(const std::string& id, int gpus, Timestamp t) {
  Workload w;
  w.workload_id = id;
  w.user = "alice";
  w.project = "vision";
  w.resource = {"A100", gpus};
  w.submit_time = t;
  return w;
}

void load_topology(Registry& r, int nodes) {
  r.apply(nlohmann::json::parse(serialize_partition_event({"p1", "A100", kUnboundedGpus})));
  for (int i = 1; i <= nodes; ++i) {
    Node n{"n" + std::to_string(i), "p1", {}};
    for (int g = 0; g < 8; ++g) n.gpu_uids.push_back(n.node_id + "g" + std::to_string(g));
    r.apply(nlohmann::json::parse(serialize_node_event(n)));
  }
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / (name + std::to_string(::getpid()))).string();
}

}  // namespace

TEST(MetricsStore, OutOfOrderReplayMatchesSortedBuild) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> v(0, 100);
  std::uniform_int_distribution<int> jitter(0, 50'000);
  const std::vector<std::string> gpus = {"a", "b", "c"};

  // Base times every 5 s; arrival order perturbed within the reorder window.
  std::vector<MetricSample> samples;
  for (const auto& g : gpus)
    for (int i = 0; i < 400; ++i) samples.push_back({1'000'000 + i * 5000LL, g, Metric::kUtilization, v(rng)});
  std::vector<std::pair<Timestamp, std::size_t>> arrival;
  for (std::size_t i = 0; i < samples.size(); ++i) arrival.push_back({samples[i].ts + jitter(rng), i});
  std::sort(arrival.begin(), arrival.end());

  MetricsStore store;
  for (auto [_, i] : arrival) store.ingest_sample(samples[i]);

  for (const auto& g : gpus) {
    std::vector<Point> expected;
    for (const auto& s : samples)
      if (s.gpu_uid == g) expected.push_back({s.ts, s.value});
    std::sort(expected.begin(), expected.end(), [](auto& a, auto& b) { return a.ts < b.ts; });
    EXPECT_EQ(store.full_series(g, Metric::kUtilization).points, expected);

    // Random windows against a linear scan.
    std::uniform_int_distribution<Timestamp> t(900'000, 3'100'000);
    for (int q = 0; q < 50; ++q) {
      auto a = t(rng), b = t(rng);
      if (a > b) std::swap(a, b);
      std::vector<Point> scan;
      for (const auto& p : expected)
        if (p.ts >= a && p.ts <= b) scan.push_back(p);
      EXPECT_EQ(store.query_series(g, Metric::kUtilization, a, b).points, scan);
    }
  }
  EXPECT_EQ(store.accepted_samples(), samples.size());
}

TEST(MetricsStore, RejectsLateDuplicateAndInvalid) {
  MetricsStore store(StoreConfig{7LL * 24 * 3600 * 1000, 60'000, std::nullopt});
  store.ingest_sample({100'000, "g", Metric::kPower, 10});
  store.ingest_sample({200'000, "g", Metric::kPower, 10});
  EXPECT_THROW(store.ingest_sample({139'999, "g", Metric::kPower, 1}), ValidationError);
  EXPECT_NO_THROW(store.ingest_sample({140'000, "g", Metric::kPower, 1}));
  EXPECT_THROW(store.ingest_sample({200'000, "g", Metric::kPower, 1}), ValidationError);
  EXPECT_THROW(store.ingest_sample({300'000, "g", Metric::kUtilization, 120}), ValidationError);
  EXPECT_THROW(store.ingest_sample({300'000, "g", Metric::kPower, -3}), ValidationError);
  EXPECT_EQ(store.full_series("g", Metric::kPower).size(), 3u);
}

TEST(MetricsStore, EvictsBeyondRetention) {
  MetricsStore store(StoreConfig{10'000, 1000, std::nullopt});
  for (int i = 1; i <= 20; ++i) store.ingest_sample({i * 1000LL, "g", Metric::kUtilization, 1.0 * i});
  const auto s = store.full_series("g", Metric::kUtilization);
  EXPECT_EQ(s.points.front().ts, 10'000);
  EXPECT_EQ(s.points.back().ts, 20'000);
}

TEST(MetricsStore, QueryErrors) {
  MetricsStore store;
  store.register_gpu("known");
  EXPECT_TRUE(store.query_series("known", Metric::kPower, 0, 10).empty());
  EXPECT_THROW(store.query_series("nope", Metric::kPower, 0, 10), NotFoundError);
  EXPECT_THROW(store.query_series("known", Metric::kPower, 10, 0), ValidationError);
  EXPECT_FALSE(store.latest("known", Metric::kPower).has_value());
}

TEST(MetricsStore, SpillFileReplaysIntoEqualStore) {
  const auto path = temp_path("spill");
  std::remove(path.c_str());
  {
    MetricsStore store(StoreConfig{7LL * 24 * 3600 * 1000, 60'000, path});
    for (int i = 1; i <= 50; ++i) store.ingest_sample({i * 5000LL, "g" + std::to_string(i % 3), Metric::kPower, 1.5 * i});
  }
  MetricsStore replay;
  EXPECT_EQ(replay.load_spill(path), 50u);
  MetricsStore direct;
  for (int i = 1; i <= 50; ++i) direct.ingest_sample({i * 5000LL, "g" + std::to_string(i % 3), Metric::kPower, 1.5 * i});
  for (int g = 0; g < 3; ++g)
    EXPECT_EQ(replay.full_series("g" + std::to_string(g), Metric::kPower),
              direct.full_series("g" + std::to_string(g), Metric::kPower));
  std::remove(path.c_str());
}

TEST(Registry, LifecycleFromSerializedEvents) {
  Registry r;
  load_topology(r, 2);
  EXPECT_EQ(r.topology().gpu_count(), 16u);

  auto w = submitted("w1", 8, 1000);
  r.apply(nlohmann::json::parse(serialize_submit_event(w)));
  EXPECT_EQ(r.find("w1")->state, WorkloadState::kWaiting);

  w.start_time = 2000;
  for (int g = 0; g < 8; ++g) w.allocated_gpu_uids.push_back("n2g" + std::to_string(g));
  w.master_gpu_uid = "n2g0";
  r.apply(nlohmann::json::parse(serialize_start_event(w)));
  EXPECT_EQ(r.find("w1")->state, WorkloadState::kRunning);
  EXPECT_EQ(r.workload_on("n2g3")->workload_id, "w1");
  EXPECT_EQ(r.workload_on("n1g3"), nullptr);

  w.end_time = 5000;
  w.state = WorkloadState::kFinished;
  r.apply(nlohmann::json::parse(serialize_end_event(w)));
  EXPECT_EQ(r.find("w1")->state, WorkloadState::kFinished);
  EXPECT_EQ(r.workload_on("n2g3"), nullptr);
  EXPECT_EQ(r.clock(), 5000);
}

TEST(Registry, RejectsInconsistentEvents) {
  Registry r;
  load_topology(r, 1);
  // Identical re-send is accepted; a conflicting one is not.
  EXPECT_NO_THROW(r.apply(nlohmann::json::parse(serialize_partition_event({"p1", "A100", kUnboundedGpus}))));
  EXPECT_THROW(r.apply(nlohmann::json::parse(serialize_partition_event({"p1", "V100", 8}))), ValidationError);

  r.apply(nlohmann::json::parse(serialize_submit_event(submitted("a", 2, 10))));
  r.apply(nlohmann::json::parse(serialize_submit_event(submitted("b", 2, 10))));
  EXPECT_THROW(r.apply(nlohmann::json::parse(serialize_submit_event(submitted("a", 2, 10)))), ValidationError);

  auto start = [&](const std::string& id, std::vector<std::string> gpus) {
    auto w = *r.find(id);
    w.start_time = 20;
    w.allocated_gpu_uids = std::move(gpus);
    w.master_gpu_uid = w.allocated_gpu_uids.front();
    r.apply(nlohmann::json::parse(serialize_start_event(w)));
  };
  EXPECT_THROW(start("a", {"n1g0"}), ValidationError);                // wrong size
  EXPECT_THROW(start("a", {"n1g0", "zzz"}), ValidationError);         // unknown gpu
  start("a", {"n1g0", "n1g1"});
  EXPECT_THROW(start("b", {"n1g1", "n1g2"}), ValidationError);        // double allocation
  EXPECT_THROW(start("a", {"n1g4", "n1g5"}), ValidationError);        // not waiting
  EXPECT_THROW(r.apply(nlohmann::json::parse(R"({"event":"workload_end","time":30,"workload_id":"b"})")),
               ValidationError);                                         // not running
  EXPECT_THROW(r.apply(nlohmann::json::parse(R"({"event":"workload_end","time":30,"workload_id":"x"})")),
               NotFoundError);
  EXPECT_THROW(r.apply(nlohmann::json::parse(R"({"event":"reboot"})")), ValidationError);
}

TEST(ClusterState, IngestReportsLineErrors) {
  ClusterState state;
  const std::string body =
      serialize_partition_event({"p1", "A100", kUnboundedGpus}) + "\n" +
      R"({"ts":1000,"gpu":"n1g0","metric":"utilization_pct","value":50})" "\n"
      "not json\n"
      "\n" +
      R"({"ts":2000,"gpu":"n1g0","metric":"utilization_pct","value":500})" "\n";
  const auto report = state.ingest_ndjson(body);
  EXPECT_EQ(report.accepted, 2u);
  EXPECT_EQ(report.rejected, 2u);
  ASSERT_EQ(report.errors.size(), 2u);
  EXPECT_EQ(report.errors[0].rfind("line 3:", 0), 0u);
  EXPECT_EQ(report.errors[1].rfind("line 5:", 0), 0u);
  EXPECT_EQ(state.version(), 1u);
  EXPECT_EQ(state.ingest_ndjson("garbage\n").accepted, 0u);
  EXPECT_EQ(state.version(), 1u);
}

TEST(ClusterState, ReadersSeeMonotoneConsistentSnapshots) {
  ClusterState state;
  std::atomic<bool> done{false};
  std::atomic<int> violations{0};
  auto reader = [&] {
    std::uint64_t last_version = 0;
    std::size_t last_count = 0;
    while (!done) {
      state.read([&](const MetricsStore& store, const Registry&, std::uint64_t version) {
        if (version < last_version || store.accepted_samples() < last_count) ++violations;
        // Each batch adds exactly 10 samples.
        if (store.accepted_samples() != version * 10) ++violations;
        last_version = version;
        last_count = store.accepted_samples();
      });
    }
  };
  std::thread r1(reader), r2(reader);
  for (int batch = 0; batch < 200; ++batch) {
    std::string body;
    for (int i = 0; i < 10; ++i)
      body += serialize_sample({1000 + batch * 10 + i, "g", Metric::kPower, 1.0}) + "\n";
    state.ingest_ndjson(body);
  }
  done = true;
  r1.join();
  r2.join();
  EXPECT_EQ(violations.load(), 0);
  EXPECT_EQ(state.version(), 200u);
}
