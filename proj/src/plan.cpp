#include "lmmp/plan.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace lmmp {

namespace {

std::string to_lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool has_whitespace(const std::string& s) {
  return std::any_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

// Case-insensitive key lookup over a JSON object, trying aliases in order.
const Json* find_key(const Json& obj, std::initializer_list<const char*> aliases) {
  for (const char* alias : aliases) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (to_lower(it.key()) == alias) return &it.value();
    }
  }
  return nullptr;
}

// Plans are short; anything outside this range is a malformed index, not a
// real plan, and must not wrap through a narrowing cast.
constexpr long long kMaxStepIndex = 1'000'000;

int read_index(const Json& v) {
  long long value = 0;
  if (v.is_number_integer() || v.is_number_unsigned()) {
    value = v.get<long long>();
  } else if (v.is_number_float() && v.get<double>() == std::floor(v.get<double>()) &&
             std::fabs(v.get<double>()) < static_cast<double>(kMaxStepIndex)) {
    value = static_cast<long long>(v.get<double>());
  } else {
    raise(ErrorCode::schema_violation, "step index is not an integer");
  }
  if (value < 1 || value > kMaxStepIndex)
    raise(ErrorCode::schema_violation, "step index out of range: " + std::to_string(value));
  return static_cast<int>(value);
}

}  // namespace

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::no_plan_found: return "no_plan_found";
    case ErrorCode::schema_violation: return "schema_violation";
    case ErrorCode::duplicate_id: return "duplicate_id";
    case ErrorCode::unparseable: return "unparseable";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::duplicate_operation: return "duplicate_operation";
    case ErrorCode::not_validated: return "not_validated";
    case ErrorCode::unknown_operation: return "unknown_operation";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::empty_ground_truth: return "empty_ground_truth";
    case ErrorCode::insufficient_runs: return "insufficient_runs";
    case ErrorCode::unvalidated_teacher: return "unvalidated_teacher";
    case ErrorCode::baseline_missing: return "baseline_missing";
    case ErrorCode::unknown_task: return "unknown_task";
    case ErrorCode::positive_logprob: return "positive_logprob";
    case ErrorCode::transport: return "transport";
    case ErrorCode::auth_missing: return "auth_missing";
    case ErrorCode::queue_exhausted: return "queue_exhausted";
    case ErrorCode::timeout: return "timeout";
    case ErrorCode::plan_unparseable: return "plan_unparseable";
    case ErrorCode::unregistered_tool: return "unregistered_tool";
    case ErrorCode::duplicate_tool: return "duplicate_tool";
    case ErrorCode::precondition: return "precondition";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// MetaPlan
// ---------------------------------------------------------------------------

void MetaPlan::validate() const {
  if (steps.empty()) raise(ErrorCode::schema_violation, "plan has no steps");
  for (size_t i = 0; i < steps.size(); ++i) {
    const MetaStep& s = steps[i];
    if (s.index != static_cast<int>(i) + 1) {
      raise(ErrorCode::schema_violation,
            "step indices must be exactly 1..k: found " + std::to_string(s.index) +
                " at position " + std::to_string(i + 1));
    }
    if (s.operation.empty() || has_whitespace(s.operation)) {
      raise(ErrorCode::schema_violation,
            "step " + std::to_string(s.index) + ": operation must be a non-empty identifier");
    }
    if (s.instruction.empty()) {
      raise(ErrorCode::schema_violation,
            "step " + std::to_string(s.index) + ": instruction must be non-empty");
    }
  }
}

Json MetaPlan::to_json() const {
  Json arr = Json::array();
  for (const MetaStep& s : steps) {
    Json obj = Json::object();
    obj["step"] = s.index;
    obj["operation"] = s.operation;
    obj["instruction"] = s.instruction;
    arr.push_back(std::move(obj));
  }
  return arr;
}

MetaPlan MetaPlan::from_json(const Json& j) {
  if (!j.is_array()) raise(ErrorCode::schema_violation, "plan is not an array");
  MetaPlan plan;
  for (const Json& item : j) {
    if (!item.is_object()) raise(ErrorCode::schema_violation, "plan step is not an object");
    const Json* idx = find_key(item, {"step", "index", "step_index"});
    const Json* op = find_key(item, {"operation"});
    const Json* instr = find_key(item, {"instruction"});
    if (!idx) raise(ErrorCode::schema_violation, "plan step missing step index key");
    if (!op || !op->is_string())
      raise(ErrorCode::schema_violation, "plan step missing operation key");
    if (!instr || !instr->is_string())
      raise(ErrorCode::schema_violation, "plan step missing instruction key");
    plan.steps.push_back(MetaStep{read_index(*idx), op->get<std::string>(),
                                  instr->get<std::string>()});
  }
  // Indices define the temporal order; normalize the list to it. Gaps and
  // duplicates are rejected by validate(), never repaired.
  std::stable_sort(plan.steps.begin(), plan.steps.end(),
                   [](const MetaStep& a, const MetaStep& b) { return a.index < b.index; });
  plan.validate();
  return plan;
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

const char* to_string(StepStatus status) {
  switch (status) {
    case StepStatus::ok: return "ok";
    case StepStatus::tool_error: return "tool_error";
    case StepStatus::parse_error: return "parse_error";
  }
  return "ok";
}

StepStatus step_status_from_string(const std::string& s) {
  if (s == "ok") return StepStatus::ok;
  if (s == "tool_error") return StepStatus::tool_error;
  if (s == "parse_error") return StepStatus::parse_error;
  raise(ErrorCode::schema_violation, "unknown step status: " + s);
}

std::vector<std::string> Trajectory::tool_names() const {
  std::vector<std::string> names;
  names.reserve(steps.size());
  for (const TrajectoryStep& s : steps) names.push_back(s.call.name);
  return names;
}

void Trajectory::validate() const {
  if (steps.empty() && !final_answer.has_value() && !truncated) {
    raise(ErrorCode::schema_violation,
          "trajectory steps may be empty only when a final answer is present");
  }
  for (const TrajectoryStep& s : steps) {
    if (s.call.name.empty())
      raise(ErrorCode::schema_violation, "trajectory step has an empty tool name");
  }
}

Json Trajectory::to_json() const {
  Json j = Json::object();
  Json arr = Json::array();
  for (const TrajectoryStep& s : steps) {
    Json step = Json::object();
    step["name"] = s.call.name;
    step["arguments"] = s.call.arguments;
    step["observation"] = s.observation;
    step["status"] = to_string(s.status);
    arr.push_back(std::move(step));
  }
  j["steps"] = std::move(arr);
  j["final_answer"] = final_answer ? Json(*final_answer) : Json(nullptr);
  if (truncated) j["truncated"] = true;
  return j;
}

Trajectory Trajectory::from_json(const Json& j) {
  if (!j.is_object()) raise(ErrorCode::schema_violation, "trajectory is not an object");
  Trajectory t;
  if (j.contains("steps")) {
    if (!j.at("steps").is_array())
      raise(ErrorCode::schema_violation, "trajectory steps is not an array");
    for (const Json& step : j.at("steps")) {
      TrajectoryStep ts;
      if (!step.contains("name") || !step.at("name").is_string())
        raise(ErrorCode::schema_violation, "trajectory step missing tool name");
      ts.call.name = step.at("name").get<std::string>();
      if (step.contains("arguments")) {
        if (!step.at("arguments").is_object())
          raise(ErrorCode::schema_violation, "trajectory step arguments is not an object");
        ts.call.arguments = step.at("arguments");
      }
      if (step.contains("observation") && step.at("observation").is_string())
        ts.observation = step.at("observation").get<std::string>();
      if (step.contains("status") && step.at("status").is_string())
        ts.status = step_status_from_string(step.at("status").get<std::string>());
      t.steps.push_back(std::move(ts));
    }
  }
  if (j.contains("final_answer") && !j.at("final_answer").is_null()) {
    if (!j.at("final_answer").is_string())
      raise(ErrorCode::schema_violation, "final_answer is not a string");
    t.final_answer = j.at("final_answer").get<std::string>();
  }
  if (j.contains("truncated") && j.at("truncated").is_boolean())
    t.truncated = j.at("truncated").get<bool>();
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// Task records
// ---------------------------------------------------------------------------

const char* to_string(AnswerType type) {
  switch (type) {
    case AnswerType::mcq: return "mcq";
    case AnswerType::numerical: return "numerical";
    case AnswerType::boolean_answer: return "boolean";
    case AnswerType::description: return "description";
  }
  return "mcq";
}

AnswerType answer_type_from_string(const std::string& s) {
  if (s == "mcq") return AnswerType::mcq;
  if (s == "numerical") return AnswerType::numerical;
  if (s == "boolean") return AnswerType::boolean_answer;
  if (s == "description") return AnswerType::description;
  raise(ErrorCode::schema_violation, "unknown answer_type: " + s);
}

void TaskRecord::validate() const {
  if (id.empty()) raise(ErrorCode::schema_violation, "record id must be non-empty");
  if (query.empty()) raise(ErrorCode::schema_violation, "record query must be non-empty");
  if (answer_type == AnswerType::numerical && gt_values.empty())
    raise(ErrorCode::schema_violation, "numerical record requires non-empty gt_values");
  if (answer_type == AnswerType::description && kips.empty())
    raise(ErrorCode::schema_violation, "description record requires non-empty kips");
  gt_trajectory.validate();
}

namespace {

std::vector<std::string> read_string_array(const Json& j, const char* key) {
  std::vector<std::string> out;
  if (!j.contains(key)) return out;
  if (!j.at(key).is_array())
    raise(ErrorCode::schema_violation, std::string(key) + " is not an array");
  for (const Json& v : j.at(key)) {
    if (!v.is_string())
      raise(ErrorCode::schema_violation, std::string(key) + " contains a non-string entry");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

TaskRecord TaskRecord::from_json(const Json& j) {
  if (!j.is_object()) raise(ErrorCode::schema_violation, "record is not an object");
  TaskRecord r;
  if (!j.contains("id") || !j.at("id").is_string())
    raise(ErrorCode::schema_violation, "record missing id");
  r.id = j.at("id").get<std::string>();
  if (!j.contains("query") || !j.at("query").is_string())
    raise(ErrorCode::schema_violation, "record missing query");
  r.query = j.at("query").get<std::string>();
  if (j.contains("image_ref") && j.at("image_ref").is_string())
    r.image_ref = j.at("image_ref").get<std::string>();
  if (!j.contains("answer_type") || !j.at("answer_type").is_string())
    raise(ErrorCode::schema_violation, "record missing answer_type");
  r.answer_type = answer_type_from_string(j.at("answer_type").get<std::string>());
  if (!j.contains("gt_trajectory"))
    raise(ErrorCode::schema_violation, "record missing gt_trajectory");
  r.gt_trajectory = Trajectory::from_json(j.at("gt_trajectory"));
  if (!j.contains("gt_answer") || !j.at("gt_answer").is_string())
    raise(ErrorCode::schema_violation, "record missing gt_answer");
  r.gt_answer = j.at("gt_answer").get<std::string>();
  if (j.contains("gt_values")) {
    if (!j.at("gt_values").is_array())
      raise(ErrorCode::schema_violation, "gt_values is not an array");
    for (const Json& v : j.at("gt_values")) {
      if (!v.is_number())
        raise(ErrorCode::schema_violation, "gt_values contains a non-number entry");
      r.gt_values.push_back(
          GtNumber{v.get<double>(), v.is_number_integer() || v.is_number_unsigned()});
    }
  }
  r.kips = read_string_array(j, "kips");
  r.initial_facts = read_string_array(j, "initial_facts");
  r.validate();
  return r;
}

// ---------------------------------------------------------------------------
// Lenient extraction
// ---------------------------------------------------------------------------

std::optional<Json> extract_first_json(const std::string& text, char open) {
  const char close = open == '[' ? ']' : '}';
  for (size_t start = 0; start < text.size(); ++start) {
    if (text[start] != open) continue;
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (size_t i = start; i < text.size(); ++i) {
      char c = text[i];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '[' || c == '{') ++depth;
      else if (c == ']' || c == '}') {
        --depth;
        if (depth == 0) {
          if (c != close) break;  // mismatched bracket kind; try next start
          Json parsed = Json::parse(text.substr(start, i - start + 1), nullptr,
                                    /*allow_exceptions=*/false);
          if (!parsed.is_discarded()) return parsed;
          break;
        }
      }
    }
  }
  return std::nullopt;
}

MetaPlan parse_meta_plan(const std::string& text) {
  std::optional<Json> arr = extract_first_json(text, '[');
  if (!arr) raise(ErrorCode::no_plan_found, "no JSON array found in planner output");
  return MetaPlan::from_json(*arr);
}

std::string serialize_meta_plan(const MetaPlan& plan) {
  plan.validate();
  return plan.to_json().dump();
}

std::variant<ToolCall, FinalAnswer> parse_tool_call(const std::string& text) {
  std::optional<Json> obj = extract_first_json(text, '{');
  if (!obj) raise(ErrorCode::unparseable, "no JSON object found in executor output");
  if (obj->contains("name") && obj->at("name").is_string() &&
      obj->contains("arguments") && obj->at("arguments").is_object()) {
    std::string name = obj->at("name").get<std::string>();
    if (!name.empty()) return ToolCall{std::move(name), obj->at("arguments")};
  }
  if (obj->contains("final_answer")) {
    const Json& v = obj->at("final_answer");
    return FinalAnswer{v.is_string() ? v.get<std::string>() : v.dump()};
  }
  raise(ErrorCode::unparseable, "object is neither a tool call nor a final answer");
}

// ---------------------------------------------------------------------------
// Record files
// ---------------------------------------------------------------------------

std::vector<TaskRecord> load_task_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::io_error, "cannot open records file: " + path.string());
  std::vector<TaskRecord> records;
  std::vector<std::string> seen_ids;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j = Json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) {
      raise(ErrorCode::schema_violation,
            "line " + std::to_string(lineno) + ": invalid JSON");
    }
    TaskRecord record;
    try {
      record = TaskRecord::from_json(j);
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(lineno) + ": " + e.what());
    }
    if (std::find(seen_ids.begin(), seen_ids.end(), record.id) != seen_ids.end()) {
      raise(ErrorCode::duplicate_id,
            "line " + std::to_string(lineno) + ": duplicate record id " + record.id);
    }
    seen_ids.push_back(record.id);
    records.push_back(std::move(record));
  }
  return records;
}

}  // namespace lmmp
