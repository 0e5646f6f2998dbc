#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "lmmp/backend.hpp"
#include "lmmp/metrics.hpp"
#include "lmmp/plan.hpp"
#include "lmmp/task_library.hpp"

namespace lmmp {

enum class ParamType { number, string_param, boolean_param, list };

const char* to_string(ParamType type);
ParamType param_type_from_string(const std::string& s);

struct ParamSpec {
  ParamType type = ParamType::string_param;
  bool required = false;
};

struct ToolSpec {
  std::string name;
  std::string description;
  std::vector<std::pair<std::string, ParamSpec>> params;

  std::string render() const;  // one-line schema summary for prompts
};

struct ToolResult {
  bool ok = true;
  std::string observation;
};

using ToolImpl = std::function<ToolResult(const Json& args)>;

class ToolRegistry {
 public:
  // Throws Error(duplicate_tool) on name collision. Exclusive tools are
  // serialized across concurrent invocations.
  void register_tool(ToolSpec spec, ToolImpl impl, bool exclusive = false);

  bool contains(const std::string& name) const;
  const ToolSpec* spec(const std::string& name) const;
  std::vector<std::string> names() const;

  // Schema-checks the arguments and runs the implementation. Validation
  // failures and implementation failures come back as tool_error steps;
  // a positive timeout bounds the implementation's wall time.
  TrajectoryStep invoke(const ToolCall& call, double timeout_s = 0.0);

 private:
  struct Entry {
    ToolSpec spec;
    ToolImpl impl;
    bool exclusive = false;
    // shared so a timed-out worker thread can outlive the registry safely
    std::shared_ptr<std::mutex> gate;
  };
  std::map<std::string, Entry> tools_;
};

// Stub registry covering the given tool names: every tool accepts any
// arguments and echoes a deterministic observation.
ToolRegistry make_stub_registry(const std::vector<std::string>& tool_names);

struct RunLimits {
  int max_iterations = 15;     // total executor loop turns
  int max_parse_retries = 1;   // corrective re-prompts per step
  double tool_timeout_s = 30;  // per-tool wall clock
  int max_step_calls = 4;      // tool calls before auto-advancing the step

  void validate() const;
};

// Substitutes {name} placeholders; unknown braces pass through untouched.
std::string render_template(const std::string& text,
                            const std::map<std::string, std::string>& vars);

// Operation catalog block for the planner prompt.
std::string operations_catalog(const TaskLibrary& lib);

// One planner call plus one corrective re-prompt on parse failure.
// Throws Error(plan_unparseable) when both attempts fail.
MetaPlan generate_plan(ChatBackend& planner, const std::string& conversation_id,
                       const TaskLibrary& lib, const std::string& query,
                       const std::optional<std::string>& image_ref,
                       const std::string& template_text);

// ReAct loop over the enriched plan: prompts carry only the current step's
// instruction, IOPE excerpt, and tool subset. Tool calls outside the plan's
// pruned toolset are rejected without invoking the implementation. The loop
// ends on a final answer or when limits.max_iterations is reached (the
// trajectory is then marked truncated).
Trajectory run_executor_loop(ChatBackend& executor, const std::string& conversation_id,
                             const std::string& query, const EnrichedPlan& enriched,
                             ToolRegistry& registry, const RunLimits& limits,
                             const std::string& template_text);

struct PromptTemplates {
  std::string planner;
  std::string executor;
};

struct BenchConfig {
  double gamma = kDefaultGamma;
  RunLimits limits;
  PromptTemplates templates;
  FaaOptions faa;
  bool replan = false;  // one corrective regeneration for invalid plans
  int workers = 4;
  std::uint64_t seed = 0;
};

struct BenchRow {
  std::string id;
  std::optional<MetaPlan> plan;
  Trajectory trajectory;
  SampleReport report;
};

struct BenchResult {
  std::vector<BenchRow> rows;   // input order
  SampleReport aggregate;       // unweighted means
};

// Full per-record pipeline: plan, validate, enrich, execute, evaluate.
// Record-level failures are flagged in the row, never abort the batch.
BenchResult run_benchmark(const BenchConfig& config, const std::vector<TaskRecord>& records,
                          const TaskLibrary& lib, ToolRegistry& registry, ChatBackend& planner,
                          ChatBackend& executor, const JudgeBackend* judge = nullptr);

// Variant that reuses cached plans (task id -> plan) instead of the planner.
BenchResult run_benchmark_with_plans(const BenchConfig& config,
                                     const std::vector<TaskRecord>& records,
                                     const std::map<std::string, MetaPlan>& plans,
                                     const TaskLibrary& lib, ToolRegistry& registry,
                                     ChatBackend& executor,
                                     const JudgeBackend* judge = nullptr);

void write_trajectory_log(const BenchResult& result, const std::filesystem::path& path);
void write_report_file(const BenchResult& result, const std::filesystem::path& path);

// Chat-backed description judge: renders the evaluator prompt, sends it, and
// reads a bracketed {"score": ...} object from the reply.
class LlmJudge : public JudgeBackend {
 public:
  LlmJudge(ChatBackend& backend, std::string template_text)
      : backend_(backend), template_(std::move(template_text)) {}

  double score(const std::string& question, const std::string& gt_answer,
               const std::vector<std::string>& kips,
               const std::string& prediction) const override;

 private:
  ChatBackend& backend_;
  std::string template_;
};

}  // namespace lmmp
