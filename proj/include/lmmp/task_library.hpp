#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "lmmp/plan.hpp"

namespace lmmp {

// An abstract operation definition: what it consumes and produces plus the
// concrete tool subset that realizes it.
struct MetaTaskDef {
  std::string operation;
  std::string description;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::set<std::string> preconditions;  // fact tokens
  std::set<std::string> effects;        // fact tokens
  std::vector<std::string> tools;

  void validate() const;
  Json to_json() const;
  static MetaTaskDef from_json(const Json& j);
};

class TaskLibrary {
 public:
  // Facts assumed true before any step runs.
  std::set<std::string> base_facts{"user_query", "rs_image"};

  void add(MetaTaskDef def);  // throws duplicate_operation / schema_violation
  const MetaTaskDef* find(const std::string& operation) const;
  size_t size() const { return defs_.size(); }
  const std::vector<MetaTaskDef>& defs() const { return defs_; }

  // All tool names, deduplicated, in first-appearance order.
  std::vector<std::string> all_tools() const;

 private:
  std::vector<MetaTaskDef> defs_;               // insertion order
  std::map<std::string, size_t> by_operation_;  // name -> slot in defs_
};

struct ValidationFailure {
  enum class Kind { unknown_operation, unmet_precondition };
  int step_index = 0;
  Kind kind = Kind::unknown_operation;
  std::string detail;
};

const char* to_string(ValidationFailure::Kind kind);

struct ValidationReport {
  bool valid = true;
  std::vector<ValidationFailure> failures;

  Json to_json() const;
};

struct EnrichedStep {
  MetaStep meta;
  MetaTaskDef iope;  // description + IOPE excerpt for the executor prompt
  std::vector<std::string> tools;
};

struct EnrichedPlan {
  std::vector<EnrichedStep> steps;
};

// Loads a line-delimited library file: one MetaTaskDef object per line plus
// an optional header object {"base_facts": [...]}.
TaskLibrary load_library(const std::filesystem::path& path);

// Simulates fact accumulation over the plan. Unknown operations contribute
// no effects; steps with unmet preconditions are recorded and skipped.
ValidationReport validate_plan(const MetaPlan& plan, const TaskLibrary& lib,
                               const std::set<std::string>& extra_facts = {});

// Attaches each step's definition excerpt and tool subset. Requires the plan
// to validate under the same extra facts; throws Error(not_validated)
// otherwise.
EnrichedPlan enrich_plan(const MetaPlan& plan, const TaskLibrary& lib,
                         const std::set<std::string>& extra_facts = {});

// Union of per-step tool lists, deduplicated, ordered by first appearance.
// Throws Error(unknown_operation) when a step's operation is not defined.
std::vector<std::string> pruned_toolset(const MetaPlan& plan, const TaskLibrary& lib);

}  // namespace lmmp
