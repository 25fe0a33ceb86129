#include <gtest/gtest.h>

#include "clusterscape/cli.hpp"
#include "process.hpp"
#include "support.hpp"

using namespace clusterscape;
using namespace testing_support;
using json = nlohmann::json;
using ordered = nlohmann::ordered_json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "clusterscape");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

ProcessResult binary(std::vector<std::string> args) {
  args.insert(args.begin(), CLUSTERSCAPE_CLI_PATH);
  return run_process(std::move(args));
}

std::string stall_config_json() {
  return R"({"seed":1,"partitions":[{"partition_id":"train","machine_type":"A100","nodes":4}],
    "injected":[
      {"workload_id":"stalled","gpu_count":16,"submit_s":60,"duration_s":21600,"scenario":"stalled"},
      {"workload_id":"healthy","gpu_count":16,"submit_s":60,"duration_s":21600,"scenario":"healthy"}],
    "duration_s":7200,"metrics":{"names":["utilization_pct","power_watts"]}})";
}

std::string imbalance_config_json() {
  return R"({"seed":1,"partitions":[{"partition_id":"train","machine_type":"A100","nodes":8}],
    "injected":[{"workload_id":"w1","gpu_count":64,"submit_s":30,"duration_s":28800,"scenario":"imbalance"}],
    "duration_s":7200,"metrics":{"names":["utilization_pct","power_watts"]}})";
}

std::string rule_text(const ViolationRule& r) { return to_json(r).dump(); }

class CliTest : public ::testing::Test {
 protected:
  TempDir dir;

  std::string simulate(const std::string& config, int seed, const std::string& name) {
    spit(dir / (name + ".json"), config);
    const auto r = run_cli({"simulate", "--config", dir / (name + ".json"), "--seed", std::to_string(seed), "--out",
                        dir / (name + ".ndjson")});
    EXPECT_EQ(r.code, 0) << r.err;
    return dir / (name + ".ndjson");
  }

  std::string rules_file(const std::vector<ViolationRule>& rules) {
    const auto path = dir / "rules.json";
    for (const auto& r : rules) EXPECT_EQ(run_cli({"rules", "add", "--rules", path, "--rule", rule_text(r)}).code, 0);
    return path;
  }
};

}  // namespace

TEST(CliExitCodes, UsageAndValidation) {
  auto r = binary({});
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("simulate"), std::string::npos);

  r = binary({"simulate", "--bogus"});
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);

  r = binary({"frobnicate"});
  EXPECT_EQ(r.exit_code, 1);

  r = binary({"--help"});
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("diagnose"), std::string::npos);

  r = binary({"rules", "add", "--rules", "/tmp/never-written.json", "--rule", R"({"rule_id":"x","conditions":[]})"});
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("condition"), std::string::npos);

  r = binary({"simulate", "--config", "/nonexistent/c.json", "--out", "/tmp/x.ndjson"});
  EXPECT_EQ(r.exit_code, 2);
  r = binary({"rules", "eval", "--trace", "/nonexistent/t.ndjson", "--rules", "/nonexistent/r.json"});
  EXPECT_EQ(r.exit_code, 2);
  r = binary({"ingest", "--trace", "/nonexistent/t.ndjson", "--local"});
  EXPECT_EQ(r.exit_code, 2);
}

TEST_F(CliTest, BadConfigIsValidationError) {
  spit(dir / "bad.json", R"({"partitions":[]})");
  EXPECT_EQ(run_cli({"simulate", "--config", dir / "bad.json", "--out", dir / "t.ndjson"}).code, 1);
  spit(dir / "broken.json", "{");
  EXPECT_EQ(run_cli({"simulate", "--config", dir / "broken.json", "--out", dir / "t.ndjson"}).code, 1);
  EXPECT_EQ(run_cli({"simulate", "--config", dir / "bad.json", "--out", dir / "t.ndjson", "--placement", "Random"}).code,
            1);
}

TEST_F(CliTest, SimulateIsByteIdenticalAcrossRuns) {
  spit(dir / "c.json", stall_config_json());
  for (const char* name : {"a", "b"}) {
    auto r = binary({"simulate", "--seed", "7", "--config", dir / "c.json", "--out", dir / (std::string(name) + ".ndjson")});
    ASSERT_EQ(r.exit_code, 0) << r.err;
  }
  const auto a = slurp(dir / "a.ndjson");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir / "b.ndjson"));
  EXPECT_EQ(slurp(dir / "a.ndjson.summary.json"), slurp(dir / "b.ndjson.summary.json"));

  auto cfg = sim::config_from_json(json::parse(stall_config_json()));
  cfg.seed = 7;
  EXPECT_EQ(a, trace_of(sim::simulate(cfg)));

  EXPECT_EQ(run_cli({"simulate", "--seed", "8", "--config", dir / "c.json", "--out", dir / "c.ndjson"}).code, 0);
  EXPECT_NE(a, slurp(dir / "c.ndjson"));
}

TEST_F(CliTest, FileArtifactsRoundTrip) {
  const auto trace = simulate(stall_config_json(), 3, "stall");
  const auto rules = rules_file({stall_rule()});
  std::istringstream lines(slurp(trace));
  std::size_t n = 0;
  for (std::string line; std::getline(lines, line); ++n) ASSERT_EQ(ordered::parse(line).dump(), line);
  EXPECT_GT(n, 1000u);

  const auto summary = slurp(trace + ".summary.json");
  EXPECT_EQ(ordered::parse(summary).dump(2) + "\n", summary);
  const auto rules_text = slurp(rules);
  EXPECT_EQ(ordered::parse(rules_text).dump(2) + "\n", rules_text);

  spit(dir / "spec.json", R"({"layers":[{"group_by":"node","operator":"Pack","sizing":"Count"}]})");
  const std::vector<std::vector<std::string>> commands = {
      {"rules", "eval", "--trace", trace, "--rules", rules, "--out", dir / "eval.json"},
      {"diagnose", "--workload", "stalled", "--trace", trace, "--rules", rules, "--out", dir / "diag.json"},
      {"layout", "--spec", dir / "spec.json", "--trace", trace, "--out", dir / "layout.json"},
      {"report", "--trace", trace, "--format", "json", "--out", dir / "report.json"},
      {"rules", "list", "--rules", rules, "--out", dir / "list.json"},
  };
  for (const auto& c : commands) ASSERT_EQ(run_cli(c).code, 0) << c[0];
  for (const char* f : {"eval.json", "diag.json", "diag.json.outliers.json", "layout.json", "report.json", "list.json"}) {
    const auto text = slurp(dir / f);
    ASSERT_FALSE(text.empty()) << f;
    EXPECT_EQ(ordered::parse(text).dump() + "\n", text) << f;
  }
}

TEST_F(CliTest, RulesAddListAndLimit) {
  const auto path = dir / "rules.json";
  for (int i = 1; i <= 5; ++i) {
    auto r = make_rule("r" + std::to_string(i), {{Metric::kUtilization, StatisticType::mean(), CompareOp::kLess, 10.0 * i}});
    const auto res = run_cli({"rules", "add", "--rules", path, "--rule", rule_text(r)});
    ASSERT_EQ(res.code, 0) << res.err;
    EXPECT_EQ(json::parse(res.out)["ordinal"], i);
  }
  auto sixth = make_rule("r6", {{Metric::kPower, StatisticType::max(), CompareOp::kGreater, 1.0}});
  auto res = run_cli({"rules", "add", "--rules", path, "--rule", rule_text(sixth)});
  EXPECT_EQ(res.code, 1);
  EXPECT_NE(res.err.find("limit"), std::string::npos);

  sixth.enabled = false;
  spit(dir / "sixth.json", rule_text(sixth));
  EXPECT_EQ(run_cli({"rules", "add", "--rules", path, "--rule-file", dir / "sixth.json"}).code, 0);

  res = run_cli({"rules", "list", "--rules", path});
  ASSERT_EQ(res.code, 0);
  const auto listed = json::parse(res.out);
  ASSERT_EQ(listed.size(), 6u);
  EXPECT_EQ(listed[5]["enabled"], false);
  EXPECT_EQ(RuleSet::load(path).enabled_rules().size(), 5u);

  EXPECT_EQ(run_cli({"rules", "add", "--rules", path}).code, 1);
  EXPECT_EQ(run_cli({"rules", "add", "--rules", path, "--rule", "{not json"}).code, 1);
}

TEST_F(CliTest, RulesEvalFlagsStalledGpus) {
  const auto trace = simulate(stall_config_json(), 5, "stall");
  const auto rules = rules_file({stall_rule()});
  auto res = run_cli({"rules", "eval", "--trace", trace, "--rules", rules});
  ASSERT_EQ(res.code, 0) << res.err;
  const auto v = json::parse(res.out);
  std::map<std::string, std::pair<int, int>> fired;
  for (const auto& row : v["matrix"]["rows"]) {
    auto& f = fired[row["workload_id"].get<std::string>()];
    ++f.second;
    f.first += row["fired"][0].get<bool>();
  }
  EXPECT_EQ(fired["stalled"], std::make_pair(16, 16));
  EXPECT_EQ(fired["healthy"], std::make_pair(0, 16));

  res = run_cli({"rules", "eval", "--trace", trace, "--rules", rules, "--format", "table"});
  ASSERT_EQ(res.code, 0);
  std::size_t rows_fired = 0;
  for (std::size_t p = 0; (p = res.out.find("FIRED", p)) != std::string::npos; ++p) ++rows_fired;
  EXPECT_EQ(rows_fired, 16u);
  EXPECT_EQ(res.out.substr(0, 3), "gpu");

  res = run_cli({"rules", "eval", "--trace", trace, "--rules", rules, "--group-by", "node"});
  ASSERT_EQ(res.code, 0);
  EXPECT_EQ(json::parse(res.out)["group_by"], "node");
}

TEST_F(CliTest, DiagnoseSeparatesMasters) {
  const auto trace = simulate(imbalance_config_json(), 2, "imb");
  const auto rules = rules_file({imbalance_r1(), imbalance_r2()});
  auto res = run_cli({"diagnose", "--workload", "w1", "--trace", trace, "--rules", rules, "--outliers-out",
                  dir / "out.json"});
  ASSERT_EQ(res.code, 0) << res.err;
  const auto d = json::parse(res.out);
  const auto snapshot = json::parse(cli::load_service(trace, rules, std::cerr)->snapshot());
  std::set<std::string> masters;
  for (const auto& u : snapshot["units"])
    if (u["attributes"]["is_master"] == 1.0) masters.insert(u["gpu"].get<std::string>());
  ASSERT_EQ(masters.size(), 8u);
  std::set<int> master_clusters, worker_clusters;
  for (const auto& m : d["multiples"]) {
    const bool master = masters.count(m["gpu"].get<std::string>()) > 0;
    (master ? master_clusters : worker_clusters).insert(m["cluster_id"].get<int>());
    EXPECT_EQ(m["rule_ordinals"].empty(), master);
  }
  EXPECT_EQ(master_clusters.size(), 1u);
  EXPECT_EQ(worker_clusters.count(*master_clusters.begin()), 0u);
  const auto o = json::parse(slurp(dir / "out.json"));
  EXPECT_EQ(o["workload_id"], "w1");
  EXPECT_TRUE(o.contains("report"));

  res = run_cli({"diagnose", "--workload", "w1", "--trace", trace, "--plot", "timeline", "--k", "3", "--max-points", "20"});
  ASSERT_EQ(res.code, 0) << res.err;
  EXPECT_EQ(json::parse(res.out)["clusters"]["cluster_count"], 3);

  EXPECT_EQ(run_cli({"diagnose", "--workload", "nope", "--trace", trace}).code, 1);
  EXPECT_EQ(run_cli({"diagnose", "--workload", "w1", "--trace", trace, "--metric", "bogus"}).code, 1);
  EXPECT_EQ(run_cli({"diagnose", "--workload", "w1", "--trace", trace, "--alpha", "0"}).code, 1);
}

TEST_F(CliTest, LayoutReportAndLocalIngest) {
  const auto trace = simulate(stall_config_json(), 1, "stall");
  spit(dir / "spec.json", R"({"layers":[{"group_by":"workload_id"}]})");
  auto res = run_cli({"layout", "--spec", dir / "spec.json", "--trace", trace});
  ASSERT_EQ(res.code, 0) << res.err;
  EXPECT_EQ(json::parse(res.out)["units"].size(), 32u);

  spit(dir / "bad.json", R"({"layers":[{"group_by":"nope"}]})");
  EXPECT_EQ(run_cli({"layout", "--spec", dir / "bad.json", "--trace", trace}).code, 1);
  spit(dir / "tiny.json", R"({"viewport":{"width":1,"height":1}})");
  EXPECT_EQ(run_cli({"layout", "--spec", dir / "tiny.json", "--trace", trace}).code, 2);

  res = run_cli({"report", "--trace", trace});
  ASSERT_EQ(res.code, 0);
  EXPECT_NE(res.out.find("GPUs: 32"), std::string::npos);
  res = run_cli({"report", "--trace", trace, "--format", "json"});
  EXPECT_EQ(json::parse(res.out)["gpus"], 32);

  res = run_cli({"ingest", "--trace", trace, "--local"});
  ASSERT_EQ(res.code, 0);
  const auto r = json::parse(res.out);
  EXPECT_EQ(r["rejected"], 0);
  EXPECT_GT(r["accepted"].get<int>(), 1000);
  EXPECT_EQ(r["snapshot_id"], 1);
}

TEST_F(CliTest, ServerRoundTripMatchesLocalOutputs) {
  const auto trace = simulate(stall_config_json(), 6, "stall");
  const auto local_rules = rules_file({stall_rule()});

  ChildProcess server({CLUSTERSCAPE_CLI_PATH, "serve", "--addr", "127.0.0.1:0", "--rules", dir / "server-rules.json"});
  const auto line = server.read_line();
  ASSERT_EQ(line.rfind("listening on 127.0.0.1:", 0), 0u) << line;
  const std::string addr = line.substr(std::string("listening on ").size());

  auto ing = binary({"ingest", "--trace", trace, "--server", addr, "--batch-lines", "5000"});
  ASSERT_EQ(ing.exit_code, 0) << ing.err;
  EXPECT_EQ(json::parse(ing.out)["rejected"], 0);
  auto add = binary({"rules", "add", "--server", addr, "--rule", rule_text(stall_rule())});
  ASSERT_EQ(add.exit_code, 0) << add.err;

  EXPECT_EQ(binary({"rules", "list", "--server", addr}).out, run_cli({"rules", "list", "--rules", local_rules}).out);
  EXPECT_EQ(binary({"rules", "eval", "--server", addr}).out,
            run_cli({"rules", "eval", "--trace", trace, "--rules", local_rules}).out);
  EXPECT_EQ(binary({"diagnose", "--workload", "stalled", "--server", addr}).out,
            run_cli({"diagnose", "--workload", "stalled", "--trace", trace, "--rules", local_rules}).out);
  spit(dir / "spec.json", R"({"layers":[{"group_by":"node"}]})");
  EXPECT_EQ(binary({"layout", "--spec", dir / "spec.json", "--server", addr}).out,
            run_cli({"layout", "--spec", dir / "spec.json", "--trace", trace, "--rules", local_rules}).out);
  EXPECT_EQ(binary({"report", "--server", addr}).out, run_cli({"report", "--trace", trace, "--rules", local_rules}).out);

  auto sixth = binary({"rules", "add", "--server", addr, "--rule",
                       R"({"rule_id":"dup","conditions":[{"metric":"power_watts","stat":{"kind":"mean"},"op":">","threshold":1}],"ordinal":1})"});
  EXPECT_EQ(sixth.exit_code, 1);
  EXPECT_EQ(binary({"diagnose", "--workload", "ghost", "--server", addr}).exit_code, 1);

  EXPECT_EQ(server.stop(), 0);
  EXPECT_EQ(slurp(dir / "server-rules.json"), slurp(local_rules));
  EXPECT_EQ(binary({"report", "--server", addr}).exit_code, 2);
}
