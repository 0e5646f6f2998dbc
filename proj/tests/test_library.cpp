#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "lmmp/task_library.hpp"

using namespace lmmp;
using namespace lmmp::testing;

// ---------------------------------------------------------------------------
// loading
// ---------------------------------------------------------------------------

TEST_CASE("load_library parses definitions and an optional header") {
  auto dir = make_temp_dir("library");
  write_file(dir / "lib.jsonl",
             R"({"base_facts":["query","image"]})"
             "\n"
             R"({"operation":"detect","description":"d","preconditions":["image"],"effects":["boxes"],"tools":["Det"]})"
             "\n"
             R"({"operation":"count","preconditions":["boxes"],"effects":["n"],"tools":["Cnt"]})"
             "\n");
  TaskLibrary lib = load_library(dir / "lib.jsonl");
  CHECK(lib.size() == 2);
  CHECK(lib.base_facts == std::set<std::string>{"query", "image"});
  REQUIRE(lib.find("detect") != nullptr);
  CHECK(lib.find("detect")->tools == std::vector<std::string>{"Det"});
  CHECK(lib.find("missing") == nullptr);
  CHECK(lib.all_tools() == std::vector<std::string>{"Det", "Cnt"});
}

TEST_CASE("load_library rejects duplicate operations") {
  auto dir = make_temp_dir("library");
  const std::string def =
      R"({"operation":"detect_objects","preconditions":[],"effects":[],"tools":["T"]})";
  write_file(dir / "lib.jsonl", def + "\n" + def + "\n");
  CHECK_THROWS_WITH_AS(load_library(dir / "lib.jsonl"),
                       "duplicate operation: detect_objects", Error);
}

TEST_CASE("load_library rejects a definition with no tools") {
  auto dir = make_temp_dir("library");
  write_file(dir / "lib.jsonl", R"({"operation":"detect","tools":[]})"
                                "\n");
  CHECK_THROWS_AS(load_library(dir / "lib.jsonl"), Error);
}

TEST_CASE("load_library rejects whitespace in fact tokens") {
  auto dir = make_temp_dir("library");
  write_file(dir / "lib.jsonl",
             R"({"operation":"detect","preconditions":["two words"],"tools":["T"]})"
             "\n");
  CHECK_THROWS_AS(load_library(dir / "lib.jsonl"), Error);
}

TEST_CASE("load_library rejects an empty library and missing files") {
  auto dir = make_temp_dir("library");
  write_file(dir / "empty.jsonl", "\n");
  CHECK_THROWS_AS(load_library(dir / "empty.jsonl"), Error);
  CHECK_THROWS_AS(load_library(dir / "absent.jsonl"), Error);
}

// ---------------------------------------------------------------------------
// validation
// ---------------------------------------------------------------------------

TEST_CASE("validate_plan accepts a correctly chained plan") {
  TaskLibrary lib = make_chain_library();
  ValidationReport report = validate_plan(make_plan({"detect_objects", "count_objects"}), lib);
  CHECK(report.valid);
  CHECK(report.failures.empty());
}

TEST_CASE("validate_plan rejects the reversed chain at step 1") {
  TaskLibrary lib = make_chain_library();
  ValidationReport report = validate_plan(make_plan({"count_objects", "detect_objects"}), lib);
  REQUIRE_FALSE(report.valid);
  REQUIRE(report.failures.size() == 1);
  CHECK(report.failures[0].step_index == 1);
  CHECK(report.failures[0].kind == ValidationFailure::Kind::unmet_precondition);
  CHECK(report.failures[0].detail.find("detections") != std::string::npos);
}

TEST_CASE("validate_plan flags unknown operations") {
  TaskLibrary lib = make_chain_library();
  ValidationReport report = validate_plan(make_plan({"detect_objects", "fly_drone"}), lib);
  REQUIRE_FALSE(report.valid);
  REQUIRE(report.failures.size() == 1);
  CHECK(report.failures[0].step_index == 2);
  CHECK(report.failures[0].kind == ValidationFailure::Kind::unknown_operation);
}

TEST_CASE("unknown operations contribute no effects") {
  TaskLibrary lib = make_chain_library();
  // If the unknown step leaked effects, count_objects could never complain.
  ValidationReport report =
      validate_plan(make_plan({"mystery_step", "count_objects"}), lib);
  REQUIRE(report.failures.size() == 2);
  CHECK(report.failures[0].kind == ValidationFailure::Kind::unknown_operation);
  CHECK(report.failures[1].kind == ValidationFailure::Kind::unmet_precondition);
}

TEST_CASE("extra facts can satisfy preconditions") {
  TaskLibrary lib = make_chain_library();
  MetaPlan plan = make_plan({"count_objects"});
  CHECK_FALSE(validate_plan(plan, lib).valid);
  CHECK(validate_plan(plan, lib, {"detections"}).valid);
}

namespace {

struct RandomSetup {
  TaskLibrary lib;
  MetaPlan plan;
  std::set<std::string> extra;
};

RandomSetup random_setup(std::mt19937& rng) {
  RandomSetup setup;
  std::uniform_int_distribution<int> fact_dist(0, 7);
  std::uniform_int_distribution<int> count_dist(0, 2);
  auto fact = [&] { return "f" + std::to_string(fact_dist(rng)); };
  const int ops = std::uniform_int_distribution<int>(2, 6)(rng);
  for (int i = 0; i < ops; ++i) {
    MetaTaskDef def;
    def.operation = "op" + std::to_string(i);
    for (int k = count_dist(rng); k > 0; --k) def.preconditions.insert(fact());
    for (int k = count_dist(rng) + 1; k > 0; --k) def.effects.insert(fact());
    def.tools = {"tool" + std::to_string(i)};
    setup.lib.add(def);
  }
  setup.lib.base_facts = {"f0"};
  const int len = std::uniform_int_distribution<int>(1, 6)(rng);
  std::vector<std::string> names;
  for (int i = 0; i < len; ++i)
    names.push_back("op" + std::to_string(std::uniform_int_distribution<int>(0, ops - 1)(rng)));
  setup.plan = make_plan(names);
  for (int k = count_dist(rng); k > 0; --k) setup.extra.insert(fact());
  return setup;
}

}  // namespace

TEST_CASE("adding facts never invalidates a plan (monotonicity)") {
  std::mt19937 rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    RandomSetup s = random_setup(rng);
    if (!validate_plan(s.plan, s.lib, s.extra).valid) continue;
    std::set<std::string> more = s.extra;
    more.insert("f" + std::to_string(trial % 8));
    more.insert("extra_fact");
    CAPTURE(trial);
    CHECK(validate_plan(s.plan, s.lib, more).valid);
  }
}

TEST_CASE("every prefix of a valid plan is valid") {
  std::mt19937 rng(321);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    RandomSetup s = random_setup(rng);
    if (!validate_plan(s.plan, s.lib, s.extra).valid) continue;
    ++checked;
    for (std::size_t len = 1; len < s.plan.steps.size(); ++len) {
      MetaPlan prefix;
      prefix.steps.assign(s.plan.steps.begin(), s.plan.steps.begin() + len);
      CAPTURE(trial);
      CAPTURE(len);
      CHECK(validate_plan(prefix, s.lib, s.extra).valid);
    }
  }
  CHECK(checked > 10);  // the generator must produce enough valid plans
}

// ---------------------------------------------------------------------------
// enrichment
// ---------------------------------------------------------------------------

TEST_CASE("enrich_plan attaches definitions and tool subsets") {
  TaskLibrary lib = make_chain_library();
  EnrichedPlan enriched = enrich_plan(make_plan({"detect_objects", "count_objects"}), lib);
  REQUIRE(enriched.steps.size() == 2);
  for (const EnrichedStep& step : enriched.steps) {
    CHECK_FALSE(step.tools.empty());
    CHECK(step.tools == step.iope.tools);
  }
  CHECK(enriched.steps[0].iope.description == "Detect object instances.");
}

TEST_CASE("enrich_plan preserves tool order from the definition") {
  TaskLibrary lib;
  MetaTaskDef def;
  def.operation = "op";
  def.preconditions = {};
  def.effects = {"done"};
  def.tools = {"t1", "t2"};
  lib.add(def);
  EnrichedPlan enriched = enrich_plan(make_plan({"op"}), lib);
  CHECK(enriched.steps[0].tools == std::vector<std::string>{"t1", "t2"});
}

TEST_CASE("enrich_plan refuses unvalidated plans") {
  TaskLibrary lib = make_chain_library();
  CHECK_THROWS_AS(enrich_plan(make_plan({"count_objects"}), lib), Error);
  try {
    enrich_plan(make_plan({"count_objects"}), lib);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::not_validated);
  }
}

// ---------------------------------------------------------------------------
// pruning
// ---------------------------------------------------------------------------

TEST_CASE("pruned_toolset unions tools in first-appearance order") {
  TaskLibrary lib;
  MetaTaskDef a;
  a.operation = "a";
  a.effects = {"x"};
  a.tools = {"t1", "t2"};
  lib.add(a);
  MetaTaskDef b;
  b.operation = "b";
  b.effects = {"y"};
  b.tools = {"t2", "t3"};
  lib.add(b);
  CHECK(pruned_toolset(make_plan({"a", "b"}), lib) ==
        std::vector<std::string>{"t1", "t2", "t3"});
  CHECK(pruned_toolset(make_plan({"a"}), lib) == std::vector<std::string>{"t1", "t2"});
}

TEST_CASE("pruned_toolset rejects unknown operations") {
  TaskLibrary lib = make_chain_library();
  CHECK_THROWS_AS(pruned_toolset(make_plan({"fly_drone"}), lib), Error);
}

TEST_CASE("pruned tools always come from the plan's definitions (soundness)") {
  std::mt19937 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    RandomSetup s = random_setup(rng);
    std::set<std::string> allowed;
    for (const MetaStep& step : s.plan.steps) {
      const MetaTaskDef* def = s.lib.find(step.operation);
      REQUIRE(def != nullptr);
      allowed.insert(def->tools.begin(), def->tools.end());
    }
    std::vector<std::string> pruned = pruned_toolset(s.plan, s.lib);
    std::set<std::string> seen;
    for (const std::string& t : pruned) {
      CHECK(allowed.count(t) == 1);
      CHECK(seen.insert(t).second);  // no duplicates
    }
    CHECK(seen == allowed);
  }
}

TEST_CASE("validation and pruning are deterministic") {
  TaskLibrary lib = make_chain_library();
  MetaPlan plan = make_plan({"detect_objects", "count_objects"});
  CHECK(validate_plan(plan, lib).to_json() == validate_plan(plan, lib).to_json());
  CHECK(pruned_toolset(plan, lib) == pruned_toolset(plan, lib));
}
