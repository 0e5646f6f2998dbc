#include "lmmp/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <fstream>
#include <future>
#include <set>
#include <sstream>
#include <thread>

namespace lmmp {

namespace {

bool matches_type(const Json& value, ParamType type) {
  switch (type) {
    case ParamType::number: return value.is_number();
    case ParamType::string_param: return value.is_string();
    case ParamType::boolean_param: return value.is_boolean();
    case ParamType::list: return value.is_array();
  }
  return false;
}

// Detects the executor's step-completion marker in otherwise unparseable
// output.
bool is_step_complete(const std::string& text) {
  std::optional<Json> obj = extract_first_json(text, '{');
  return obj && obj->contains("step_complete") && obj->at("step_complete").is_boolean() &&
         obj->at("step_complete").get<bool>();
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tool registry
// ---------------------------------------------------------------------------

const char* to_string(ParamType type) {
  switch (type) {
    case ParamType::number: return "number";
    case ParamType::string_param: return "string";
    case ParamType::boolean_param: return "boolean";
    case ParamType::list: return "list";
  }
  return "string";
}

ParamType param_type_from_string(const std::string& s) {
  if (s == "number") return ParamType::number;
  if (s == "string") return ParamType::string_param;
  if (s == "boolean") return ParamType::boolean_param;
  if (s == "list") return ParamType::list;
  raise(ErrorCode::schema_violation, "unknown parameter type: " + s);
}

std::string ToolSpec::render() const {
  std::string out = name;
  out += "(";
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (i) out += ", ";
    out += params[i].first;
    out += ": ";
    out += to_string(params[i].second.type);
    if (params[i].second.required) out += " (required)";
  }
  out += ")";
  if (!description.empty()) {
    out += " - ";
    out += description;
  }
  return out;
}

void ToolRegistry::register_tool(ToolSpec spec, ToolImpl impl, bool exclusive) {
  if (spec.name.empty())
    raise(ErrorCode::schema_violation, "tool name must be non-empty");
  for (const auto& [key, param] : spec.params) {
    if (key.empty()) raise(ErrorCode::schema_violation, "tool parameter key must be non-empty");
    (void)param;
  }
  if (tools_.count(spec.name))
    raise(ErrorCode::duplicate_tool, "tool already registered: " + spec.name);
  Entry entry;
  entry.spec = std::move(spec);
  entry.impl = std::move(impl);
  entry.exclusive = exclusive;
  if (exclusive) entry.gate = std::make_shared<std::mutex>();
  tools_.emplace(entry.spec.name, std::move(entry));
}

bool ToolRegistry::contains(const std::string& name) const { return tools_.count(name) > 0; }

const ToolSpec* ToolRegistry::spec(const std::string& name) const {
  auto it = tools_.find(name);
  return it == tools_.end() ? nullptr : &it->second.spec;
}

std::vector<std::string> ToolRegistry::names() const {
  std::vector<std::string> out;
  out.reserve(tools_.size());
  for (const auto& [name, entry] : tools_) out.push_back(name);
  return out;
}

TrajectoryStep ToolRegistry::invoke(const ToolCall& call, double timeout_s) {
  TrajectoryStep step;
  step.call = call;

  auto it = tools_.find(call.name);
  if (it == tools_.end()) {
    step.status = StepStatus::tool_error;
    step.observation = "tool not registered: " + call.name;
    return step;
  }
  Entry& entry = it->second;

  // Schema check: required keys present, declared keys typed correctly.
  // Undeclared keys pass through to the implementation.
  for (const auto& [key, param] : entry.spec.params) {
    if (!call.arguments.contains(key)) {
      if (param.required) {
        step.status = StepStatus::tool_error;
        step.observation = "missing required argument: " + key;
        return step;
      }
      continue;
    }
    if (!matches_type(call.arguments.at(key), param.type)) {
      step.status = StepStatus::tool_error;
      step.observation =
          "argument " + key + " must be of type " + to_string(param.type);
      return step;
    }
  }

  // The worker owns copies of everything it touches: a timed-out invocation
  // keeps running after this frame (and possibly the registry) is gone.
  auto run = [impl = entry.impl, gate = entry.gate, exclusive = entry.exclusive,
              args = call.arguments]() -> ToolResult {
    if (exclusive) {
      std::lock_guard lock(*gate);
      return impl(args);
    }
    return impl(args);
  };

  ToolResult result;
  try {
    if (timeout_s > 0.0) {
      auto state = std::make_shared<std::promise<ToolResult>>();
      auto future = state->get_future();
      std::thread([state, run]() {
        try {
          state->set_value(run());
        } catch (...) {
          state->set_exception(std::current_exception());
        }
      }).detach();
      if (future.wait_for(std::chrono::duration<double>(timeout_s)) !=
          std::future_status::ready) {
        step.status = StepStatus::tool_error;
        step.observation = "tool timed out after " + std::to_string(timeout_s) + "s";
        return step;
      }
      result = future.get();
    } else {
      result = run();
    }
  } catch (const std::exception& e) {
    step.status = StepStatus::tool_error;
    step.observation = std::string("tool raised: ") + e.what();
    return step;
  }

  step.status = result.ok ? StepStatus::ok : StepStatus::tool_error;
  step.observation = result.observation;
  return step;
}

ToolRegistry make_stub_registry(const std::vector<std::string>& tool_names) {
  ToolRegistry registry;
  for (const std::string& name : tool_names) {
    ToolSpec spec;
    spec.name = name;
    spec.description = "stub tool";
    registry.register_tool(std::move(spec), [name](const Json& args) {
      return ToolResult{true, name + " -> " + args.dump()};
    });
  }
  return registry;
}

// ---------------------------------------------------------------------------
// Prompt rendering
// ---------------------------------------------------------------------------

void RunLimits::validate() const {
  if (max_iterations <= 0 || max_parse_retries < 0 || max_step_calls <= 0 ||
      !(tool_timeout_s > 0))
    raise(ErrorCode::precondition, "run limits must be positive");
}

std::string render_template(const std::string& text,
                            const std::map<std::string, std::string>& vars) {
  std::string out = text;
  for (const auto& [key, value] : vars) {
    const std::string token = "{" + key + "}";
    std::size_t pos = 0;
    while ((pos = out.find(token, pos)) != std::string::npos) {
      out.replace(pos, token.size(), value);
      pos += value.size();
    }
  }
  return out;
}

std::string operations_catalog(const TaskLibrary& lib) {
  std::ostringstream out;
  for (const MetaTaskDef& def : lib.defs()) {
    out << "- " << def.operation << ": " << def.description;
    if (!def.inputs.empty()) out << " (inputs: " << join(def.inputs, ", ") << ")";
    if (!def.outputs.empty()) out << " (outputs: " << join(def.outputs, ", ") << ")";
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Planning
// ---------------------------------------------------------------------------

MetaPlan generate_plan(ChatBackend& planner, const std::string& conversation_id,
                       const TaskLibrary& lib, const std::string& query,
                       const std::optional<std::string>& image_ref,
                       const std::string& template_text) {
  const std::string prompt = render_template(
      template_text, {{"query", query},
                      {"operations", operations_catalog(lib)},
                      {"image", image_ref.value_or("(none)")}});
  std::vector<ChatMessage> messages{ChatMessage::make_user(prompt, image_ref)};

  std::string response = planner.complete(conversation_id, messages);
  std::string parse_error;
  try {
    return parse_meta_plan(response);
  } catch (const Error& e) {
    parse_error = e.what();
  }

  // One corrective re-prompt carrying the parse diagnostic.
  messages.push_back(ChatMessage::make_assistant(response));
  messages.push_back(ChatMessage::make_user(
      "Your previous output could not be parsed as a meta plan (" + parse_error +
      "). Respond with only a JSON array of steps, each an object with keys "
      "\"step\", \"operation\", \"instruction\"."));
  response = planner.complete(conversation_id, messages);
  try {
    return parse_meta_plan(response);
  } catch (const Error& e) {
    raise(ErrorCode::plan_unparseable,
          std::string("planner output unparseable after retry: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Executor loop
// ---------------------------------------------------------------------------

namespace {

std::string render_step(const EnrichedStep& step) {
  std::ostringstream out;
  out << "step " << step.meta.index << " [" << step.meta.operation
      << "]: " << step.meta.instruction << "\n";
  out << "  " << step.iope.description << "\n";
  if (!step.iope.inputs.empty()) out << "  inputs: " << join(step.iope.inputs, ", ") << "\n";
  if (!step.iope.outputs.empty()) out << "  outputs: " << join(step.iope.outputs, ", ") << "\n";
  if (!step.iope.preconditions.empty())
    out << "  preconditions: "
        << join({step.iope.preconditions.begin(), step.iope.preconditions.end()}, ", ") << "\n";
  if (!step.iope.effects.empty())
    out << "  effects: " << join({step.iope.effects.begin(), step.iope.effects.end()}, ", ")
        << "\n";
  return out.str();
}

}  // namespace

Trajectory run_executor_loop(ChatBackend& executor, const std::string& conversation_id,
                             const std::string& query, const EnrichedPlan& enriched,
                             ToolRegistry& registry, const RunLimits& limits,
                             const std::string& template_text) {
  limits.validate();
  if (enriched.steps.empty())
    raise(ErrorCode::precondition, "enriched plan has no steps");

  std::set<std::string> pruned;
  for (const EnrichedStep& step : enriched.steps) {
    for (const std::string& tool : step.tools) {
      if (!registry.contains(tool))
        raise(ErrorCode::unregistered_tool, "tool not registered: " + tool);
      pruned.insert(tool);
    }
  }

  Trajectory trajectory;
  std::string observations;
  std::size_t step_idx = 0;
  int calls_in_step = 0;
  int parse_retries_left = limits.max_parse_retries;

  auto advance_step = [&]() {
    if (step_idx + 1 < enriched.steps.size()) ++step_idx;  // stay on the last step otherwise
    calls_in_step = 0;
    parse_retries_left = limits.max_parse_retries;
  };

  for (int iteration = 0; iteration < limits.max_iterations; ++iteration) {
    const EnrichedStep& current = enriched.steps[step_idx];
    std::vector<std::string> tool_lines;
    for (const std::string& tool : current.tools) {
      const ToolSpec* spec = registry.spec(tool);
      tool_lines.push_back("- " + (spec ? spec->render() : tool));
    }
    const std::string prompt = render_template(
        template_text,
        {{"query", query},
         {"step", render_step(current)},
         {"tools", join(tool_lines, "\n")},
         {"observations", observations.empty() ? "(none)" : observations}});

    const std::string response =
        executor.complete(conversation_id, {ChatMessage::make_user(prompt)});

    std::variant<ToolCall, FinalAnswer> action;
    try {
      action = parse_tool_call(response);
    } catch (const Error&) {
      if (is_step_complete(response)) {
        advance_step();
        continue;
      }
      if (parse_retries_left > 0) {
        --parse_retries_left;
        observations += "note: previous response was not a valid tool call; "
                        "emit exactly one JSON object\n";
        continue;
      }
      TrajectoryStep failed;
      failed.call = ToolCall{"unparseable_response", Json::object()};
      failed.observation = "executor output was not a tool call, step marker, or final answer";
      failed.status = StepStatus::parse_error;
      trajectory.steps.push_back(std::move(failed));
      parse_retries_left = limits.max_parse_retries;
      continue;
    }

    if (std::holds_alternative<FinalAnswer>(action)) {
      trajectory.final_answer = std::get<FinalAnswer>(action).text;
      return trajectory;
    }

    const ToolCall& call = std::get<ToolCall>(action);
    TrajectoryStep step;
    if (!pruned.count(call.name)) {
      // Confinement: tools outside the plan's pruned set are never invoked.
      step.call = call;
      step.status = StepStatus::tool_error;
      step.observation = "tool rejected: " + call.name + " is not in the plan's toolset";
    } else {
      step = registry.invoke(call, limits.tool_timeout_s);
    }
    observations += "step " + std::to_string(trajectory.steps.size() + 1) + " " + call.name +
                    " -> " + step.observation + "\n";
    trajectory.steps.push_back(std::move(step));
    if (++calls_in_step >= limits.max_step_calls) advance_step();
  }

  trajectory.truncated = true;
  return trajectory;
}

// ---------------------------------------------------------------------------
// Benchmark runner
// ---------------------------------------------------------------------------

namespace {

SampleReport zeroed_report(const TaskRecord& record, std::string flag) {
  SampleReport report;
  report.t = record.gt_trajectory.steps.size();
  report.flags.push_back(std::move(flag));
  return report;
}

struct RecordOutcome {
  std::optional<MetaPlan> plan;
  Trajectory trajectory;
  SampleReport report;
};

RecordOutcome process_record(const BenchConfig& config, const TaskRecord& record,
                             const TaskLibrary& lib, ToolRegistry& registry,
                             ChatBackend* planner, const std::map<std::string, MetaPlan>* plans,
                             ChatBackend& executor, const JudgeBackend* judge) {
  RecordOutcome outcome;
  try {
    MetaPlan plan;
    if (planner) {
      plan = generate_plan(*planner, record.id, lib, record.query, record.image_ref,
                           config.templates.planner);
    } else {
      auto it = plans->find(record.id);
      if (it == plans->end())
        raise(ErrorCode::unknown_task, "no cached plan for record: " + record.id);
      plan = it->second;
    }
    outcome.plan = plan;

    const std::set<std::string> extra(record.initial_facts.begin(), record.initial_facts.end());
    ValidationReport validation = validate_plan(plan, lib, extra);
    if (!validation.valid && config.replan && planner) {
      std::ostringstream why;
      for (const ValidationFailure& f : validation.failures)
        why << " step " << f.step_index << " " << to_string(f.kind) << " (" << f.detail << ");";
      plan = generate_plan(*planner, record.id, lib,
                          record.query + "\nThe previous plan was rejected:" + why.str(),
                          record.image_ref, config.templates.planner);
      outcome.plan = plan;
      validation = validate_plan(plan, lib, extra);
    }
    if (!validation.valid) {
      outcome.report = zeroed_report(record, "invalid_plan");
      return outcome;
    }

    EnrichedPlan enriched = enrich_plan(plan, lib, extra);
    outcome.trajectory = run_executor_loop(executor, record.id, record.query, enriched,
                                           registry, config.limits, config.templates.executor);
    outcome.report = evaluate_trajectory(outcome.trajectory, record.gt_trajectory, record,
                                         config.gamma, judge, config.faa);
  } catch (const Error& e) {
    outcome.report = zeroed_report(record, std::string("error:") + to_string(e.code()));
  }
  return outcome;
}

BenchResult run_records(const BenchConfig& config, const std::vector<TaskRecord>& records,
                        const TaskLibrary& lib, ToolRegistry& registry, ChatBackend* planner,
                        const std::map<std::string, MetaPlan>* plans, ChatBackend& executor,
                        const JudgeBackend* judge) {
  std::vector<RecordOutcome> outcomes(records.size());
  const int workers = std::max(1, std::min<int>(config.workers, records.size()));
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= records.size()) return;
      outcomes[i] = process_record(config, records[i], lib, registry, planner, plans,
                                   executor, judge);
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  BenchResult result;
  result.rows.reserve(records.size());
  double sums[7] = {0, 0, 0, 0, 0, 0, 0};
  for (std::size_t i = 0; i < records.size(); ++i) {
    BenchRow row;
    row.id = records[i].id;
    row.plan = std::move(outcomes[i].plan);
    row.trajectory = std::move(outcomes[i].trajectory);
    row.report = std::move(outcomes[i].report);
    const SampleReport& r = row.report;
    const double vals[7] = {r.tsa, r.asf1, r.acf, r.tao, r.tio, r.tem, r.faa};
    for (int k = 0; k < 7; ++k) sums[k] += vals[k];
    result.rows.push_back(std::move(row));
  }
  if (!records.empty()) {
    const double n = static_cast<double>(records.size());
    result.aggregate.tsa = sums[0] / n;
    result.aggregate.asf1 = sums[1] / n;
    result.aggregate.acf = sums[2] / n;
    result.aggregate.tao = sums[3] / n;
    result.aggregate.tio = sums[4] / n;
    result.aggregate.tem = sums[5] / n;
    result.aggregate.faa = sums[6] / n;
  }
  return result;
}

}  // namespace

BenchResult run_benchmark(const BenchConfig& config, const std::vector<TaskRecord>& records,
                          const TaskLibrary& lib, ToolRegistry& registry, ChatBackend& planner,
                          ChatBackend& executor, const JudgeBackend* judge) {
  return run_records(config, records, lib, registry, &planner, nullptr, executor, judge);
}

BenchResult run_benchmark_with_plans(const BenchConfig& config,
                                     const std::vector<TaskRecord>& records,
                                     const std::map<std::string, MetaPlan>& plans,
                                     const TaskLibrary& lib, ToolRegistry& registry,
                                     ChatBackend& executor, const JudgeBackend* judge) {
  return run_records(config, records, lib, registry, nullptr, &plans, executor, judge);
}

void write_trajectory_log(const BenchResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::io_error, "cannot open trajectory log: " + path.string());
  for (const BenchRow& row : result.rows) {
    Json j = Json::object();
    j["id"] = row.id;
    j["plan"] = row.plan ? row.plan->to_json() : Json(nullptr);
    Json traj = row.trajectory.to_json();
    j["steps"] = traj["steps"];
    j["final_answer"] = traj["final_answer"];
    if (row.trajectory.truncated) j["truncated"] = true;
    out << j.dump() << "\n";
  }
}

void write_report_file(const BenchResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::io_error, "cannot open report file: " + path.string());
  for (const BenchRow& row : result.rows) {
    Json j = Json::object();
    j["id"] = row.id;
    Json r = row.report.to_json();
    j.update(r);
    out << j.dump() << "\n";
  }
  Json agg = Json::object();
  agg["aggregate"] = true;
  agg["samples"] = result.rows.size();
  Json r = result.aggregate.to_json();
  r.erase("t");
  r.erase("flags");
  agg.update(r);
  out << agg.dump() << "\n";
}

// ---------------------------------------------------------------------------
// Chat-backed judge
// ---------------------------------------------------------------------------

double LlmJudge::score(const std::string& question, const std::string& gt_answer,
                       const std::vector<std::string>& kips,
                       const std::string& prediction) const {
  const std::string prompt = render_template(template_, {{"question", question},
                                                         {"gt_answer", gt_answer},
                                                         {"kips", join(kips, "; ")},
                                                         {"prediction", prediction}});
  const std::string response =
      backend_.complete("judge", {ChatMessage::make_user(prompt)});
  std::optional<Json> obj = extract_first_json(response, '{');
  if (!obj || !obj->contains("score") || !obj->at("score").is_number())
    raise(ErrorCode::unparseable, "judge response has no score object: " + response);
  return std::clamp(obj->at("score").get<double>(), 0.0, 1.0);
}

}  // namespace lmmp
