#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "lmmp/error.hpp"

namespace lmmp {

// Key-order-preserving JSON everywhere so serialized artifacts are
// byte-stable across runs.
using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Meta plans
// ---------------------------------------------------------------------------

// One step of a meta plan: 1-based temporal index, an abstract operation
// name from the task library, and natural-language guidance for the executor.
struct MetaStep {
  int index = 0;
  std::string operation;
  std::string instruction;

  friend bool operator==(const MetaStep&, const MetaStep&) = default;
};

struct MetaPlan {
  std::vector<MetaStep> steps;

  // Throws Error(schema_violation) unless steps are non-empty, indexed
  // exactly 1..k in order, with well-formed operation/instruction fields.
  void validate() const;

  Json to_json() const;
  static MetaPlan from_json(const Json& j);

  friend bool operator==(const MetaPlan&, const MetaPlan&) = default;
};

// ---------------------------------------------------------------------------
// Tool calls and trajectories
// ---------------------------------------------------------------------------

// Argument values are JSON values (numbers keep their integer/real
// distinction, which value scoring depends on).
struct ToolCall {
  std::string name;
  Json arguments = Json::object();

  friend bool operator==(const ToolCall&, const ToolCall&) = default;
};

struct FinalAnswer {
  std::string text;
};

enum class StepStatus { ok, tool_error, parse_error };

const char* to_string(StepStatus status);
StepStatus step_status_from_string(const std::string& s);

struct TrajectoryStep {
  ToolCall call;
  std::string observation;
  StepStatus status = StepStatus::ok;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  std::optional<std::string> final_answer;
  bool truncated = false;

  std::vector<std::string> tool_names() const;

  // steps may be empty only for answered (or truncated) trajectories
  void validate() const;

  Json to_json() const;
  static Trajectory from_json(const Json& j);
};

// ---------------------------------------------------------------------------
// Benchmark task records
// ---------------------------------------------------------------------------

enum class AnswerType { mcq, numerical, boolean_answer, description };

const char* to_string(AnswerType type);
AnswerType answer_type_from_string(const std::string& s);

// Ground-truth number with the integer/real distinction preserved from the
// source text (integers must be matched exactly, reals within tolerance).
struct GtNumber {
  double value = 0.0;
  bool is_integer = false;
};

struct TaskRecord {
  std::string id;
  std::string query;
  std::optional<std::string> image_ref;
  AnswerType answer_type = AnswerType::mcq;
  Trajectory gt_trajectory;
  std::string gt_answer;
  std::vector<GtNumber> gt_values;        // required for numerical answers
  std::vector<std::string> kips;          // required for description answers
  std::vector<std::string> initial_facts; // extra validation facts

  void validate() const;
  static TaskRecord from_json(const Json& j);
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Extracts the first balanced, parseable JSON value starting with `open`
// ('[' or '{') from free-form text. Returns nullopt when none parses.
std::optional<Json> extract_first_json(const std::string& text, char open);

// Lenient plan extraction: scans prose/markdown for the first well-formed
// JSON array and validates it as a step list. Accepts step/index/step_index
// key aliases case-insensitively. Indices must already be exactly 1..k.
// Throws Error(no_plan_found) or Error(schema_violation).
MetaPlan parse_meta_plan(const std::string& text);

// Canonical single-line array-of-objects form with fixed key order
// (step, operation, instruction). parse_meta_plan(serialize_meta_plan(p)) == p.
std::string serialize_meta_plan(const MetaPlan& plan);

// Classifies the first JSON object in the text as either a tool call
// ({"name": ..., "arguments": {...}}) or a final answer ({"final_answer": ...}).
// Throws Error(unparseable) when neither shape is present.
std::variant<ToolCall, FinalAnswer> parse_tool_call(const std::string& text);

// Loads line-delimited task records, checking per-record invariants and
// rejecting duplicate ids. Unknown fields are ignored.
std::vector<TaskRecord> load_task_records(const std::filesystem::path& path);

}  // namespace lmmp
