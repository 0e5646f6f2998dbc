#include "lmmp/task_library.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace lmmp {

namespace {

void check_fact_token(const std::string& token, const std::string& where) {
  if (token.empty())
    raise(ErrorCode::schema_violation, where + ": empty fact token");
  if (std::any_of(token.begin(), token.end(),
                  [](unsigned char c) { return std::isspace(c); }))
    raise(ErrorCode::schema_violation, where + ": fact token contains whitespace: " + token);
}

std::set<std::string> read_fact_set(const Json& j, const char* key, const std::string& where) {
  std::set<std::string> out;
  if (!j.contains(key)) return out;
  if (!j.at(key).is_array())
    raise(ErrorCode::schema_violation, where + ": " + key + " is not an array");
  for (const Json& v : j.at(key)) {
    if (!v.is_string())
      raise(ErrorCode::schema_violation, where + ": " + key + " contains a non-string entry");
    std::string token = v.get<std::string>();
    check_fact_token(token, where);
    out.insert(std::move(token));
  }
  return out;
}

std::vector<std::string> read_name_list(const Json& j, const char* key, const std::string& where) {
  std::vector<std::string> out;
  if (!j.contains(key)) return out;
  if (!j.at(key).is_array())
    raise(ErrorCode::schema_violation, where + ": " + key + " is not an array");
  for (const Json& v : j.at(key)) {
    if (!v.is_string())
      raise(ErrorCode::schema_violation, where + ": " + key + " contains a non-string entry");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

void MetaTaskDef::validate() const {
  if (operation.empty() ||
      std::any_of(operation.begin(), operation.end(),
                  [](unsigned char c) { return std::isspace(c); }))
    raise(ErrorCode::schema_violation, "operation must be a non-empty identifier");
  if (tools.empty())
    raise(ErrorCode::schema_violation, "operation " + operation + ": tools must be non-empty");
  for (const std::string& t : tools) {
    if (t.empty())
      raise(ErrorCode::schema_violation, "operation " + operation + ": empty tool name");
  }
  for (const std::string& f : preconditions) check_fact_token(f, "operation " + operation);
  for (const std::string& f : effects) check_fact_token(f, "operation " + operation);
}

Json MetaTaskDef::to_json() const {
  Json j = Json::object();
  j["operation"] = operation;
  j["description"] = description;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["preconditions"] = std::vector<std::string>(preconditions.begin(), preconditions.end());
  j["effects"] = std::vector<std::string>(effects.begin(), effects.end());
  j["tools"] = tools;
  return j;
}

MetaTaskDef MetaTaskDef::from_json(const Json& j) {
  if (!j.is_object()) raise(ErrorCode::schema_violation, "task definition is not an object");
  MetaTaskDef def;
  if (!j.contains("operation") || !j.at("operation").is_string())
    raise(ErrorCode::schema_violation, "task definition missing operation name");
  def.operation = j.at("operation").get<std::string>();
  const std::string where = "operation " + def.operation;
  if (j.contains("description") && j.at("description").is_string())
    def.description = j.at("description").get<std::string>();
  def.inputs = read_name_list(j, "inputs", where);
  def.outputs = read_name_list(j, "outputs", where);
  def.preconditions = read_fact_set(j, "preconditions", where);
  def.effects = read_fact_set(j, "effects", where);
  def.tools = read_name_list(j, "tools", where);
  def.validate();
  return def;
}

void TaskLibrary::add(MetaTaskDef def) {
  def.validate();
  if (by_operation_.count(def.operation))
    raise(ErrorCode::duplicate_operation, "duplicate operation: " + def.operation);
  by_operation_[def.operation] = defs_.size();
  defs_.push_back(std::move(def));
}

const MetaTaskDef* TaskLibrary::find(const std::string& operation) const {
  auto it = by_operation_.find(operation);
  return it == by_operation_.end() ? nullptr : &defs_[it->second];
}

std::vector<std::string> TaskLibrary::all_tools() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const MetaTaskDef& def : defs_) {
    for (const std::string& t : def.tools) {
      if (seen.insert(t).second) out.push_back(t);
    }
  }
  return out;
}

const char* to_string(ValidationFailure::Kind kind) {
  switch (kind) {
    case ValidationFailure::Kind::unknown_operation: return "unknown_operation";
    case ValidationFailure::Kind::unmet_precondition: return "unmet_precondition";
  }
  return "unknown_operation";
}

Json ValidationReport::to_json() const {
  Json j = Json::object();
  j["valid"] = valid;
  Json arr = Json::array();
  for (const ValidationFailure& f : failures) {
    Json fj = Json::object();
    fj["step"] = f.step_index;
    fj["kind"] = to_string(f.kind);
    fj["detail"] = f.detail;
    arr.push_back(std::move(fj));
  }
  j["failures"] = std::move(arr);
  return j;
}

TaskLibrary load_library(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::io_error, "cannot open library file: " + path.string());
  TaskLibrary lib;
  bool header_seen = false;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j = Json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object())
      raise(ErrorCode::schema_violation, "line " + std::to_string(lineno) + ": invalid JSON object");
    if (j.contains("base_facts") && !j.contains("operation")) {
      if (header_seen)
        raise(ErrorCode::schema_violation,
              "line " + std::to_string(lineno) + ": duplicate base_facts header");
      header_seen = true;
      lib.base_facts.clear();
      if (!j.at("base_facts").is_array())
        raise(ErrorCode::schema_violation,
              "line " + std::to_string(lineno) + ": base_facts is not an array");
      for (const Json& v : j.at("base_facts")) {
        if (!v.is_string())
          raise(ErrorCode::schema_violation,
                "line " + std::to_string(lineno) + ": base_facts entry is not a string");
        std::string token = v.get<std::string>();
        check_fact_token(token, "base_facts");
        lib.base_facts.insert(std::move(token));
      }
      continue;
    }
    try {
      lib.add(MetaTaskDef::from_json(j));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::duplicate_operation) throw;
      throw Error(e.code(), "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (lib.size() == 0)
    raise(ErrorCode::schema_violation, "library has no operation definitions: " + path.string());
  return lib;
}

ValidationReport validate_plan(const MetaPlan& plan, const TaskLibrary& lib,
                               const std::set<std::string>& extra_facts) {
  ValidationReport report;
  std::set<std::string> facts = lib.base_facts;
  facts.insert(extra_facts.begin(), extra_facts.end());
  for (const MetaStep& step : plan.steps) {
    const MetaTaskDef* def = lib.find(step.operation);
    if (!def) {
      report.failures.push_back({step.index, ValidationFailure::Kind::unknown_operation,
                                 "operation not in library: " + step.operation});
      continue;
    }
    std::vector<std::string> missing;
    for (const std::string& pre : def->preconditions) {
      if (!facts.count(pre)) missing.push_back(pre);
    }
    if (!missing.empty()) {
      std::string detail = "missing facts:";
      for (const std::string& m : missing) detail += " " + m;
      report.failures.push_back(
          {step.index, ValidationFailure::Kind::unmet_precondition, std::move(detail)});
      continue;  // effects apply only when the step is executable
    }
    facts.insert(def->effects.begin(), def->effects.end());
  }
  report.valid = report.failures.empty();
  return report;
}

EnrichedPlan enrich_plan(const MetaPlan& plan, const TaskLibrary& lib,
                         const std::set<std::string>& extra_facts) {
  ValidationReport report = validate_plan(plan, lib, extra_facts);
  if (!report.valid) {
    std::ostringstream msg;
    msg << "plan failed validation:";
    for (const ValidationFailure& f : report.failures)
      msg << " [step " << f.step_index << " " << to_string(f.kind) << ": " << f.detail << "]";
    raise(ErrorCode::not_validated, msg.str());
  }
  EnrichedPlan enriched;
  for (const MetaStep& step : plan.steps) {
    const MetaTaskDef* def = lib.find(step.operation);
    enriched.steps.push_back(EnrichedStep{step, *def, def->tools});
  }
  return enriched;
}

std::vector<std::string> pruned_toolset(const MetaPlan& plan, const TaskLibrary& lib) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const MetaStep& step : plan.steps) {
    const MetaTaskDef* def = lib.find(step.operation);
    if (!def)
      raise(ErrorCode::unknown_operation, "operation not in library: " + step.operation);
    for (const std::string& t : def->tools) {
      if (seen.insert(t).second) out.push_back(t);
    }
  }
  return out;
}

}  // namespace lmmp
