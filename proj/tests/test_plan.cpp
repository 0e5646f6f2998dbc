#include <doctest.h>

#include <functional>
#include <random>

#include "helpers.hpp"
#include "lmmp/plan.hpp"

using namespace lmmp;
using namespace lmmp::testing;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an lmmp::Error");
  return ErrorCode::precondition;
}

}  // namespace

// ---------------------------------------------------------------------------
// parse_meta_plan
// ---------------------------------------------------------------------------

TEST_CASE("parse_meta_plan accepts a minimal well-formed array") {
  MetaPlan plan = parse_meta_plan(
      R"([{"step":1,"operation":"detect_objects","instruction":"find ships"}])");
  REQUIRE(plan.steps.size() == 1);
  CHECK(plan.steps[0].index == 1);
  CHECK(plan.steps[0].operation == "detect_objects");
  CHECK(plan.steps[0].instruction == "find ships");
}

TEST_CASE("parse_meta_plan strips markdown fences and prose") {
  const std::string text =
      "Here is the plan you asked for:\n```json\n"
      R"([{"step":1,"operation":"a","instruction":"x"},{"step":2,"operation":"b","instruction":"y"}])"
      "\n```\nLet me know if it needs changes.";
  MetaPlan plan = parse_meta_plan(text);
  REQUIRE(plan.steps.size() == 2);
  CHECK(plan.steps[1].operation == "b");
}

TEST_CASE("parse_meta_plan rejects an index gap") {
  const std::string text =
      R"([{"step":1,"operation":"a","instruction":"x"},{"step":3,"operation":"b","instruction":"y"}])";
  CHECK(code_of([&] { parse_meta_plan(text); }) == ErrorCode::schema_violation);
}

TEST_CASE("parse_meta_plan rejects duplicate indices") {
  const std::string text =
      R"([{"step":1,"operation":"a","instruction":"x"},{"step":1,"operation":"b","instruction":"y"}])";
  CHECK(code_of([&] { parse_meta_plan(text); }) == ErrorCode::schema_violation);
}

TEST_CASE("parse_meta_plan accepts step key aliases case-insensitively") {
  MetaPlan plan = parse_meta_plan(
      R"([{"Step_Index":1,"OPERATION":"a","Instruction":"x"},{"index":2,"operation":"b","instruction":"y"}])");
  REQUIRE(plan.steps.size() == 2);
  CHECK(plan.steps[0].operation == "a");
}

TEST_CASE("parse_meta_plan orders steps by their index") {
  MetaPlan plan = parse_meta_plan(
      R"([{"step":2,"operation":"b","instruction":"y"},{"step":1,"operation":"a","instruction":"x"}])");
  REQUIRE(plan.steps.size() == 2);
  CHECK(plan.steps[0].operation == "a");
  CHECK(plan.steps[1].operation == "b");
}

TEST_CASE("parse_meta_plan reports missing keys and empty fields") {
  CHECK(code_of([] { parse_meta_plan(R"([{"step":1,"instruction":"x"}])"); }) ==
        ErrorCode::schema_violation);
  CHECK(code_of([] { parse_meta_plan(R"([{"step":1,"operation":"a"}])"); }) ==
        ErrorCode::schema_violation);
  CHECK(code_of([] { parse_meta_plan(R"([{"operation":"a","instruction":"x"}])"); }) ==
        ErrorCode::schema_violation);
  CHECK(code_of([] {
          parse_meta_plan(R"([{"step":1,"operation":"two words","instruction":"x"}])");
        }) == ErrorCode::schema_violation);
  CHECK(code_of([] {
          parse_meta_plan(R"([{"step":1,"operation":"a","instruction":""}])");
        }) == ErrorCode::schema_violation);
}

TEST_CASE("parse_meta_plan reports no_plan_found without an array") {
  CHECK(code_of([] { parse_meta_plan("I could not produce a plan."); }) ==
        ErrorCode::no_plan_found);
  CHECK(code_of([] { parse_meta_plan("{\"step\":1}"); }) == ErrorCode::no_plan_found);
}

TEST_CASE("parse_meta_plan skips unparseable bracket blobs") {
  const std::string text =
      "scores [not json] then "
      R"([{"step":1,"operation":"a","instruction":"x"}])";
  CHECK(parse_meta_plan(text).steps.size() == 1);
}

// ---------------------------------------------------------------------------
// serialize_meta_plan
// ---------------------------------------------------------------------------

TEST_CASE("serialize_meta_plan is deterministic and round-trips") {
  MetaPlan plan = make_plan({"detect_objects"});
  const std::string a = serialize_meta_plan(plan);
  const std::string b = serialize_meta_plan(plan);
  CHECK(a == b);
  CHECK(parse_meta_plan(a) == plan);
}

TEST_CASE("serialize_meta_plan uses the fixed key order") {
  const std::string text = serialize_meta_plan(make_plan({"a"}));
  CHECK(text.find("\"step\"") < text.find("\"operation\""));
  CHECK(text.find("\"operation\"") < text.find("\"instruction\""));
}

TEST_CASE("round-trip holds for randomized plans with awkward instructions") {
  std::mt19937 rng(42);
  static const char* fragments[] = {
      "find \"all\" ships", "line\nbreak", "tab\there", "brackets [1,2] inside",
      "braces {x} inside", "back\\slash", "plain words"};
  for (int trial = 0; trial < 100; ++trial) {
    MetaPlan plan;
    const int k = std::uniform_int_distribution<int>(1, 6)(rng);
    for (int i = 0; i < k; ++i) {
      std::string instruction = fragments[std::uniform_int_distribution<int>(0, 6)(rng)];
      instruction += " #" + std::to_string(i);
      plan.steps.push_back(MetaStep{i + 1, "op_" + std::to_string(i), instruction});
    }
    CAPTURE(trial);
    REQUIRE(parse_meta_plan(serialize_meta_plan(plan)) == plan);
  }
}

TEST_CASE("parser is stable under surrounding prose") {
  MetaPlan plan = make_plan({"alpha", "beta"});
  const std::string core = serialize_meta_plan(plan);
  CHECK(parse_meta_plan("Sure! The plan:\n" + core) == plan);
  CHECK(parse_meta_plan(core + "\nHope that helps.") == plan);
  CHECK(parse_meta_plan("Intro.\n" + core + "\nOutro.") == plan);
}

// ---------------------------------------------------------------------------
// parse_tool_call
// ---------------------------------------------------------------------------

TEST_CASE("parse_tool_call recognizes a tool call") {
  auto result = parse_tool_call(R"({"name":"compute_ndvi","arguments":{"image":"a.tif"}})");
  REQUIRE(std::holds_alternative<ToolCall>(result));
  const ToolCall& call = std::get<ToolCall>(result);
  CHECK(call.name == "compute_ndvi");
  CHECK(call.arguments.at("image") == "a.tif");
}

TEST_CASE("parse_tool_call recognizes a final answer") {
  auto result = parse_tool_call(R"(done: {"final_answer":"B"})");
  REQUIRE(std::holds_alternative<FinalAnswer>(result));
  CHECK(std::get<FinalAnswer>(result).text == "B");
}

TEST_CASE("parse_tool_call stringifies non-string final answers") {
  auto result = parse_tool_call(R"({"final_answer": 42})");
  REQUIRE(std::holds_alternative<FinalAnswer>(result));
  CHECK(std::get<FinalAnswer>(result).text == "42");
}

TEST_CASE("parse_tool_call prefers the tool-call shape when both keys exist") {
  auto result = parse_tool_call(R"({"name":"t","arguments":{},"final_answer":"x"})");
  CHECK(std::holds_alternative<ToolCall>(result));
}

TEST_CASE("parse_tool_call rejects text with neither shape") {
  CHECK(code_of([] { parse_tool_call("thinking... no object"); }) == ErrorCode::unparseable);
  CHECK(code_of([] { parse_tool_call(R"({"thought":"hmm"})"); }) == ErrorCode::unparseable);
  CHECK(code_of([] { parse_tool_call(R"({"name":"","arguments":{}})"); }) ==
        ErrorCode::unparseable);
}

TEST_CASE("parse_tool_call maps every input to exactly one outcome class") {
  std::mt19937 rng(11);
  static const char* pieces[] = {"{",  "}",        "\"name\"", ":", "\"arguments\"",
                                 "{}", "not json", "[1,2]",    ",", "\"final_answer\"",
                                 "\"x\"", " "};
  for (int trial = 0; trial < 300; ++trial) {
    std::string text;
    const int n = std::uniform_int_distribution<int>(1, 10)(rng);
    for (int i = 0; i < n; ++i) text += pieces[std::uniform_int_distribution<int>(0, 11)(rng)];
    int outcome = 0;
    try {
      auto result = parse_tool_call(text);
      outcome = std::holds_alternative<ToolCall>(result) ? 1 : 2;
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::unparseable);
      outcome = 3;
    }
    CHECK(outcome != 0);
  }
}

// ---------------------------------------------------------------------------
// task records
// ---------------------------------------------------------------------------

namespace {

const char* kRecordLine =
    R"({"id":"r1","query":"how many ships","answer_type":"numerical","gt_answer":"3",)"
    R"("gt_values":[3],"gt_trajectory":{"steps":[{"name":"detect","arguments":{}}],)"
    R"("final_answer":"3"}})";

}  // namespace

TEST_CASE("load_task_records on an empty file yields an empty list") {
  auto dir = make_temp_dir("records");
  write_file(dir / "records.jsonl", "");
  CHECK(load_task_records(dir / "records.jsonl").empty());
}

TEST_CASE("load_task_records keeps file order and ignores unknown fields") {
  auto dir = make_temp_dir("records");
  std::string second = kRecordLine;
  second.replace(second.find("r1"), 2, "r2");
  second.insert(second.size() - 1, R"(,"unknown_field":123)");
  write_file(dir / "records.jsonl", std::string(kRecordLine) + "\n" + second + "\n");
  auto records = load_task_records(dir / "records.jsonl");
  REQUIRE(records.size() == 2);
  CHECK(records[0].id == "r1");
  CHECK(records[1].id == "r2");
  CHECK(records[0].gt_values.size() == 1);
  CHECK(records[0].gt_values[0].is_integer);
}

TEST_CASE("load_task_records rejects a numerical record without gt_values") {
  auto dir = make_temp_dir("records");
  write_file(dir / "records.jsonl",
             R"({"id":"r1","query":"q","answer_type":"numerical","gt_answer":"3",)"
             R"("gt_trajectory":{"steps":[],"final_answer":"3"}})"
             "\n");
  CHECK(code_of([&] { load_task_records(dir / "records.jsonl"); }) ==
        ErrorCode::schema_violation);
}

TEST_CASE("load_task_records rejects duplicate ids") {
  auto dir = make_temp_dir("records");
  write_file(dir / "records.jsonl", std::string(kRecordLine) + "\n" + kRecordLine + "\n");
  CHECK(code_of([&] { load_task_records(dir / "records.jsonl"); }) == ErrorCode::duplicate_id);
}

TEST_CASE("load_task_records reports the failing line number") {
  auto dir = make_temp_dir("records");
  write_file(dir / "records.jsonl", std::string(kRecordLine) + "\nnot json\n");
  try {
    load_task_records(dir / "records.jsonl");
    FAIL("expected schema violation");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("load_task_records raises io_error for a missing file") {
  CHECK(code_of([] { load_task_records("/nonexistent/records.jsonl"); }) ==
        ErrorCode::io_error);
}

TEST_CASE("description records require key information points") {
  Json j = Json::parse(kRecordLine);
  j["answer_type"] = "description";
  CHECK(code_of([&] { TaskRecord::from_json(j); }) == ErrorCode::schema_violation);
  j["kips"] = Json::array({"bridge"});
  CHECK(TaskRecord::from_json(j).kips.size() == 1);
}

// ---------------------------------------------------------------------------
// trajectories
// ---------------------------------------------------------------------------

TEST_CASE("trajectory round-trips through its log form") {
  Trajectory t;
  t.steps.push_back(TrajectoryStep{ToolCall{"detect", Json::object({{"image", "a.png"}})},
                                   "2 boxes", StepStatus::ok});
  t.steps.push_back(TrajectoryStep{ToolCall{"count", Json::object()}, "rejected",
                                   StepStatus::tool_error});
  t.final_answer = "2";
  Trajectory back = Trajectory::from_json(t.to_json());
  REQUIRE(back.steps.size() == 2);
  CHECK(back.steps[0].call.name == "detect");
  CHECK(back.steps[1].status == StepStatus::tool_error);
  CHECK(back.final_answer == "2");
}

TEST_CASE("trajectory with no steps requires a final answer") {
  Trajectory empty;
  CHECK_THROWS_AS(empty.validate(), Error);
  empty.final_answer = "done";
  CHECK_NOTHROW(empty.validate());
}

TEST_CASE("truncated trajectories keep their marker through the log form") {
  Trajectory t;
  t.steps.push_back(TrajectoryStep{ToolCall{"detect", Json::object()}, "x", StepStatus::ok});
  t.truncated = true;
  Json j = t.to_json();
  CHECK(j.at("truncated") == true);
  CHECK(Trajectory::from_json(j).truncated);
  // the marker alone legitimizes an empty unanswered trajectory
  Trajectory cut;
  cut.truncated = true;
  CHECK_NOTHROW(cut.validate());
  CHECK_FALSE(Trajectory::from_json(cut.to_json()).final_answer.has_value());
}
