#include "lmmp/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "lmmp/backend.hpp"
#include "lmmp/metrics.hpp"
#include "lmmp/orchestrator.hpp"
#include "lmmp/plan.hpp"
#include "lmmp/preference.hpp"
#include "lmmp/task_library.hpp"

namespace lmmp::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

// Built-in prompt templates, used when a config supplies no overrides.
// data/templates/ ships editable copies of the same text.
constexpr const char* kPlannerTemplate = R"(You are a remote sensing mission planner.
Break the user's task into a short sequence of abstract operations chosen
from the catalog below. Respond with only a JSON array of steps; each step
is an object with keys "step" (1-based index), "operation" (a catalog name),
and "instruction" (guidance for the executor).

Operations catalog:
{operations}

User query: {query}
Image: {image}
)";

constexpr const char* kExecutorTemplate = R"(You are a remote sensing task executor working on one plan step at a time.
Use only the tools listed for the current step. Respond with exactly one
JSON object per turn, in one of these shapes:
  {"name": "<tool>", "arguments": {...}}
  {"step_complete": true}
  {"final_answer": "<answer>"}

Task: {query}

Current step:
{step}

Tools for this step:
{tools}

Observations so far:
{observations}
)";

constexpr const char* kJudgeTemplate = R"(Please act as a professional instruction evaluator. Assess how well the
candidate answer covers the reference for the question below. Credit
paraphrases that preserve the key information points; penalize contradicted
or missing points.

Question: {question}
Reference answer: {gt_answer}
Key information points: {kips}
Candidate answer: {prediction}

Score the candidate as the fraction of key information points it covers,
a number between 0 and 1. Output only a JSON object:
{"score": <number>}
)";

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::io_error, "cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

struct AppConfig {
  double gamma = kDefaultGamma;
  RewardWeights weights;
  double alpha = 0.05;
  int min_runs = 3;
  double teacher_margin = 0.05;
  int workers = 4;
  std::uint64_t seed = 0;
  bool replan = false;
  RunLimits limits;
  FaaOptions faa;
  std::string planner_template = kPlannerTemplate;
  std::string executor_template = kExecutorTemplate;
  std::string judge_template = kJudgeTemplate;
  Json planner_backend;  // raw config sections; empty object = unset
  Json executor_backend;
  Json judge_backend;
  fs::path base_dir = ".";

  static AppConfig load(const fs::path& path);
};

AppConfig AppConfig::load(const fs::path& path) {
  AppConfig cfg;
  cfg.base_dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  Json j = Json::parse(read_text_file(path), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object())
    raise(ErrorCode::schema_violation, "config is not a JSON object: " + path.string());

  cfg.gamma = j.value("gamma", cfg.gamma);
  if (j.contains("weights")) {
    const Json& w = j.at("weights");
    if (!w.is_array() || w.size() != 3)
      raise(ErrorCode::schema_violation, "weights must be an array of three numbers");
    cfg.weights = RewardWeights{w[0].get<double>(), w[1].get<double>(), w[2].get<double>()};
    cfg.weights.validate();
  }
  cfg.alpha = j.value("alpha", cfg.alpha);
  cfg.min_runs = j.value("min_runs", cfg.min_runs);
  cfg.teacher_margin = j.value("teacher_margin", cfg.teacher_margin);
  cfg.workers = j.value("workers", cfg.workers);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.replan = j.value("replan", cfg.replan);
  if (j.contains("limits")) {
    const Json& l = j.at("limits");
    cfg.limits.max_iterations = l.value("max_iterations", cfg.limits.max_iterations);
    cfg.limits.max_parse_retries = l.value("max_parse_retries", cfg.limits.max_parse_retries);
    cfg.limits.tool_timeout_s = l.value("tool_timeout_s", cfg.limits.tool_timeout_s);
    cfg.limits.max_step_calls = l.value("max_step_calls", cfg.limits.max_step_calls);
    cfg.limits.validate();
  }
  if (j.contains("faa")) {
    const Json& f = j.at("faa");
    for (const char* key : {"positive_words", "negative_words"}) {
      if (!f.contains(key)) continue;
      if (!f.at(key).is_array())
        raise(ErrorCode::schema_violation, std::string("faa.") + key + " must be an array");
      auto& words = std::string(key) == "positive_words" ? cfg.faa.positive_words
                                                         : cfg.faa.negative_words;
      for (const Json& w : f.at(key)) words.push_back(w.get<std::string>());
    }
    cfg.faa.float_tolerance = f.value("float_tolerance", cfg.faa.float_tolerance);
  }
  if (j.contains("templates")) {
    const Json& t = j.at("templates");
    if (t.contains("planner"))
      cfg.planner_template = read_text_file(resolve(cfg.base_dir, t.at("planner")));
    if (t.contains("executor"))
      cfg.executor_template = read_text_file(resolve(cfg.base_dir, t.at("executor")));
    if (t.contains("judge"))
      cfg.judge_template = read_text_file(resolve(cfg.base_dir, t.at("judge")));
  }
  if (j.contains("planner")) cfg.planner_backend = j.at("planner");
  if (j.contains("executor")) cfg.executor_backend = j.at("executor");
  if (j.contains("judge")) cfg.judge_backend = j.at("judge");
  return cfg;
}

// Owns whichever backend objects a subcommand ends up needing.
struct BackendHolder {
  std::unique_ptr<ChatBackend> planner;
  std::unique_ptr<ChatBackend> executor;
  std::unique_ptr<ChatBackend> judge_chat;
  std::unique_ptr<LlmJudge> judge;
};

std::unique_ptr<ChatBackend> make_chat_backend(const Json& section, const fs::path& base_dir,
                                               const fs::path& out_dir, const char* role) {
  if (section.is_null() || !section.is_object() || !section.contains("mode"))
    raise(ErrorCode::schema_violation,
          std::string("config has no backend section for ") + role);
  const std::string mode = section.at("mode").get<std::string>();
  if (mode == "scripted") {
    if (!section.contains("script"))
      raise(ErrorCode::schema_violation, std::string(role) + ": scripted mode needs a script path");
    auto backend = std::make_unique<ScriptedBackend>(
        resolve(base_dir, section.at("script")), section.value("section", std::string(role)));
    if (section.contains("audit_path"))
      backend->set_audit(std::make_shared<AuditLog>(
          resolve(out_dir, section.at("audit_path").get<std::string>())));
    return backend;
  }
  if (mode == "http") {
    BackendConfig bc;
    bc.endpoint = section.value("endpoint", bc.endpoint);
    if (section.contains("path")) bc.path = section.at("path").get<std::string>();
    bc.model = section.value("model", bc.model);
    bc.api_key_env = section.value("api_key_env", bc.api_key_env);
    bc.temperature = section.value("temperature", bc.temperature);
    bc.max_tokens = section.value("max_tokens", bc.max_tokens);
    bc.timeout_s = section.value("timeout_s", bc.timeout_s);
    bc.retries = section.value("retries", bc.retries);
    bc.backoff_ms = section.value("backoff_ms", bc.backoff_ms);
    bc.max_image_dim = section.value("max_image_dim", bc.max_image_dim);
    if (section.contains("audit_path"))
      bc.audit_path = resolve(out_dir, section.at("audit_path").get<std::string>()).string();
    return std::make_unique<HttpBackend>(bc);
  }
  raise(ErrorCode::schema_violation,
        std::string(role) + ": backend mode must be scripted or http, got " + mode);
}

const JudgeBackend* make_judge(BackendHolder& holder, const AppConfig& cfg,
                               const fs::path& out_dir) {
  if (!cfg.judge_backend.is_object() || !cfg.judge_backend.contains("mode")) return nullptr;
  const std::string mode = cfg.judge_backend.at("mode").get<std::string>();
  if (mode == "builtin" || mode == "none") return nullptr;
  holder.judge_chat = make_chat_backend(cfg.judge_backend, cfg.base_dir, out_dir, "judge");
  holder.judge = std::make_unique<LlmJudge>(*holder.judge_chat, cfg.judge_template);
  return holder.judge.get();
}

void print_summary_table(const SampleReport& aggregate, std::size_t samples) {
  std::printf("samples: %zu\n", samples);
  std::printf("%8s %8s %8s %8s %8s %8s %8s\n", "TSA", "ASF1", "ACF", "FAA", "TAO", "TIO", "TEM");
  std::printf("%8.3f %8.3f %8.3f %8.3f %8.3f %8.3f %8.3f\n", aggregate.tsa, aggregate.asf1,
              aggregate.acf, aggregate.faa, aggregate.tao, aggregate.tio, aggregate.tem);
}

// "tsa=0.5" style threshold specs for --min.
struct Threshold {
  std::string metric;
  double value;
};

std::vector<Threshold> parse_thresholds(const std::vector<std::string>& specs) {
  std::vector<Threshold> out;
  for (const std::string& spec : specs) {
    auto eq = spec.find('=');
    if (eq == std::string::npos)
      raise(ErrorCode::precondition, "--min expects metric=value, got " + spec);
    std::string name = spec.substr(0, eq);
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    double value = 0;
    try {
      std::size_t used = 0;
      value = std::stod(spec.substr(eq + 1), &used);
      if (used != spec.size() - eq - 1) throw std::invalid_argument(spec);
    } catch (const std::exception&) {
      raise(ErrorCode::precondition, "--min expects a numeric value, got " + spec);
    }
    out.push_back(Threshold{name, value});
  }
  return out;
}

int check_thresholds(const SampleReport& agg, const std::vector<Threshold>& thresholds) {
  const std::map<std::string, double> values{
      {"tsa", agg.tsa}, {"asf1", agg.asf1}, {"acf", agg.acf}, {"faa", agg.faa},
      {"tao", agg.tao}, {"tio", agg.tio},   {"tem", agg.tem}};
  for (const Threshold& t : thresholds) {
    auto it = values.find(t.metric);
    if (it == values.end())
      raise(ErrorCode::precondition, "unknown metric in --min: " + t.metric);
    if (it->second < t.value) {
      std::fprintf(stderr, "threshold unmet: %s %.4f < %.4f\n", t.metric.c_str(), it->second,
                   t.value);
      return 1;
    }
  }
  return 0;
}

std::vector<CandidateRuns> load_candidate_runs(const fs::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::io_error, "cannot open candidates file: " + path.string());
  std::vector<CandidateRuns> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j = Json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded())
      raise(ErrorCode::schema_violation, "line " + std::to_string(lineno) + ": invalid JSON");
    try {
      out.push_back(CandidateRuns::from_json(j));
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<double> parse_gamma_list(const std::string& spec) {
  std::vector<double> gammas;
  auto range_pos = spec.find("..");
  if (range_pos != std::string::npos) {
    const double lo = std::stod(spec.substr(0, range_pos));
    const double hi = std::stod(spec.substr(range_pos + 2));
    // 0.1 increments, endpoints included
    for (int k = 0;; ++k) {
      double g = lo + 0.1 * k;
      if (g > hi + 1e-9) break;
      gammas.push_back(std::min(g, hi));
    }
    return gammas;
  }
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) gammas.push_back(std::stod(item));
  }
  return gammas;
}

std::map<std::string, TaskRecord> index_records(const std::vector<TaskRecord>& records) {
  std::map<std::string, TaskRecord> out;
  for (const TaskRecord& r : records) out.emplace(r.id, r);
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_validate(const fs::path& library_path, const fs::path& plan_path,
                 const std::vector<std::string>& facts) {
  const TaskLibrary lib = load_library(library_path);
  const MetaPlan plan = parse_meta_plan(read_text_file(plan_path));
  const ValidationReport report =
      validate_plan(plan, lib, std::set<std::string>(facts.begin(), facts.end()));
  if (report.valid) {
    std::printf("plan valid (%zu steps)\n", plan.steps.size());
    return 0;
  }
  for (const ValidationFailure& f : report.failures)
    std::printf("step %d: %s (%s)\n", f.step_index, to_string(f.kind), f.detail.c_str());
  return 1;
}

int cmd_plan(const AppConfig& cfg, const fs::path& library_path, const fs::path& records_path,
             const fs::path& out_dir) {
  const TaskLibrary lib = load_library(library_path);
  const std::vector<TaskRecord> records = load_task_records(records_path);
  BackendHolder holder;
  holder.planner = make_chat_backend(cfg.planner_backend, cfg.base_dir, out_dir, "planner");

  fs::create_directories(out_dir);
  std::ofstream out(out_dir / "plans.jsonl", std::ios::binary);
  if (!out) raise(ErrorCode::io_error, "cannot open plans output file");
  std::size_t ok = 0;
  for (const TaskRecord& record : records) {
    Json line = Json::object();
    line["id"] = record.id;
    try {
      MetaPlan plan = generate_plan(*holder.planner, record.id, lib, record.query,
                                    record.image_ref, cfg.planner_template);
      line["plan"] = plan.to_json();
      ++ok;
    } catch (const Error& e) {
      line["error"] = std::string(to_string(e.code())) + ": " + e.what();
    }
    out << line.dump() << "\n";
  }
  std::printf("planned %zu/%zu records -> %s\n", ok, records.size(),
              (out_dir / "plans.jsonl").string().c_str());
  return 0;
}

std::map<std::string, MetaPlan> load_plans(const fs::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::io_error, "cannot open plans file: " + path.string());
  std::map<std::string, MetaPlan> plans;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j = Json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object() || !j.contains("id"))
      raise(ErrorCode::schema_violation,
            "plans file line " + std::to_string(lineno) + ": invalid entry");
    if (!j.contains("plan")) continue;  // planning failures are skipped
    plans.emplace(j.at("id").get<std::string>(), MetaPlan::from_json(j.at("plan")));
  }
  return plans;
}

BenchConfig bench_config_from(const AppConfig& cfg) {
  BenchConfig bc;
  bc.gamma = cfg.gamma;
  bc.limits = cfg.limits;
  bc.templates = PromptTemplates{cfg.planner_template, cfg.executor_template};
  bc.faa = cfg.faa;
  bc.replan = cfg.replan;
  bc.workers = cfg.workers;
  bc.seed = cfg.seed;
  return bc;
}

int cmd_run(const AppConfig& cfg, const fs::path& library_path, const fs::path& records_path,
            const fs::path& plans_path, const fs::path& out_dir) {
  const TaskLibrary lib = load_library(library_path);
  const std::vector<TaskRecord> records = load_task_records(records_path);
  const std::map<std::string, MetaPlan> plans = load_plans(plans_path);
  BackendHolder holder;
  holder.executor = make_chat_backend(cfg.executor_backend, cfg.base_dir, out_dir, "executor");
  ToolRegistry registry = make_stub_registry(lib.all_tools());

  BenchResult result = run_benchmark_with_plans(bench_config_from(cfg), records, plans, lib,
                                                registry, *holder.executor);
  fs::create_directories(out_dir);
  write_trajectory_log(result, out_dir / "trajectories.jsonl");
  std::printf("executed %zu records -> %s\n", result.rows.size(),
              (out_dir / "trajectories.jsonl").string().c_str());
  return 0;
}

int cmd_evaluate(const AppConfig& cfg, const fs::path& records_path,
                 const fs::path& trajectories_path, const fs::path& out_dir,
                 const std::vector<Threshold>& thresholds) {
  const std::vector<TaskRecord> records = load_task_records(records_path);

  std::map<std::string, Trajectory> trajectories;
  {
    std::ifstream in(trajectories_path);
    if (!in)
      raise(ErrorCode::io_error, "cannot open trajectories file: " + trajectories_path.string());
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      Json j = Json::parse(line, nullptr, /*allow_exceptions=*/false);
      if (j.is_discarded() || !j.is_object() || !j.contains("id"))
        raise(ErrorCode::schema_violation,
              "trajectory log line " + std::to_string(lineno) + ": invalid entry");
      try {
        trajectories.emplace(j.at("id").get<std::string>(), Trajectory::from_json(j));
      } catch (const Error& e) {
        throw Error(e.code(),
                    "trajectory log line " + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  BackendHolder holder;
  const JudgeBackend* judge = make_judge(holder, cfg, out_dir);

  BenchResult result;
  double sums[7] = {0, 0, 0, 0, 0, 0, 0};
  for (const TaskRecord& record : records) {
    BenchRow row;
    row.id = record.id;
    auto it = trajectories.find(record.id);
    if (it == trajectories.end()) {
      row.report.t = record.gt_trajectory.steps.size();
      row.report.flags.push_back("missing_trajectory");
    } else {
      row.trajectory = it->second;
      row.report =
          evaluate_trajectory(it->second, record.gt_trajectory, record, cfg.gamma, judge, cfg.faa);
    }
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

  fs::create_directories(out_dir);
  write_report_file(result, out_dir / "reports.jsonl");
  print_summary_table(result.aggregate, result.rows.size());
  return check_thresholds(result.aggregate, thresholds);
}

int cmd_bench(const AppConfig& cfg, const fs::path& library_path, const fs::path& records_path,
              const fs::path& out_dir, const std::vector<Threshold>& thresholds) {
  const TaskLibrary lib = load_library(library_path);
  const std::vector<TaskRecord> records = load_task_records(records_path);
  BackendHolder holder;
  holder.planner = make_chat_backend(cfg.planner_backend, cfg.base_dir, out_dir, "planner");
  holder.executor = make_chat_backend(cfg.executor_backend, cfg.base_dir, out_dir, "executor");
  const JudgeBackend* judge = make_judge(holder, cfg, out_dir);
  ToolRegistry registry = make_stub_registry(lib.all_tools());

  fs::create_directories(out_dir);
  BenchResult result = run_benchmark(bench_config_from(cfg), records, lib, registry,
                                     *holder.planner, *holder.executor, judge);
  write_trajectory_log(result, out_dir / "trajectories.jsonl");
  write_report_file(result, out_dir / "reports.jsonl");
  print_summary_table(result.aggregate, result.rows.size());
  return check_thresholds(result.aggregate, thresholds);
}

int cmd_build_prefs(const AppConfig& cfg, const fs::path& candidates_path,
                    const fs::path& records_path, const fs::path& library_path,
                    const std::string& teacher_path, const fs::path& out_dir, bool no_mix) {
  const std::vector<CandidateRuns> raw = load_candidate_runs(candidates_path);
  const std::map<std::string, TaskRecord> records = index_records(load_task_records(records_path));

  std::vector<CandidateScores> scored;
  scored.reserve(raw.size());
  for (const CandidateRuns& c : raw) scored.push_back(c.rewards(cfg.gamma, cfg.weights));

  PairOptions opts{cfg.alpha, cfg.min_runs};
  std::vector<PreferencePair> self_pairs = build_pairs(scored, opts);

  std::vector<PreferencePair> teacher_pairs;
  if (!teacher_path.empty()) {
    const TaskLibrary lib = load_library(library_path);
    for (const CandidateRuns& teacher : load_candidate_runs(teacher_path)) {
      CandidateScores t = teacher.rewards(cfg.gamma, cfg.weights);
      std::vector<PreferencePair> anchors = add_teacher_anchors(
          t.task_id, scored, t.plan, t.runs, lib, cfg.teacher_margin);
      teacher_pairs.insert(teacher_pairs.end(), anchors.begin(), anchors.end());
    }
  }

  std::vector<PreferencePair> dataset;
  if (teacher_pairs.empty() || no_mix) {
    dataset = std::move(self_pairs);
    dataset.insert(dataset.end(), teacher_pairs.begin(), teacher_pairs.end());
  } else {
    dataset = mix_pairs(std::move(self_pairs), std::move(teacher_pairs), cfg.seed);
  }

  fs::create_directories(out_dir);
  ExportMeta meta;
  meta.gamma = cfg.gamma;
  meta.weights = cfg.weights;
  meta.alpha = cfg.alpha;
  meta.seed = cfg.seed;
  const std::size_t written =
      export_dpo_dataset(dataset, records, out_dir / "dpo.jsonl", meta);
  std::size_t self_count = 0, teacher_count = 0;
  for (const PreferencePair& p : dataset)
    (p.source == PairSource::self_generated ? self_count : teacher_count) += 1;
  std::printf("wrote %zu pairs (%zu self, %zu teacher) -> %s\n", written, self_count,
              teacher_count, (out_dir / "dpo.jsonl").string().c_str());
  return 0;
}

int cmd_gamma_sweep(const AppConfig& cfg, const fs::path& candidates_path,
                    const std::string& gammas_spec, double baseline, const fs::path& out_dir) {
  const std::vector<CandidateRuns> raw = load_candidate_runs(candidates_path);
  const std::vector<double> gammas = parse_gamma_list(gammas_spec);
  PairOptions opts{cfg.alpha, cfg.min_runs};
  const SweepReport report = gamma_sweep(raw, gammas, baseline, opts, cfg.weights);

  std::printf("%8s %6s %8s %6s\n", "gamma", "NPP", "SOR", "PTR");
  for (const SweepEntry& e : report.entries)
    std::printf("%8.2f %6d %8.3f %6d\n", e.gamma, e.npp, e.sor, e.ptr);
  for (const std::string& f : report.flags) std::printf("flag: %s\n", f.c_str());

  fs::create_directories(out_dir);
  std::ofstream out(out_dir / "sweep.json", std::ios::binary);
  if (!out) raise(ErrorCode::io_error, "cannot open sweep output file");
  out << report.to_json().dump() << "\n";
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"LMMP: meta-planning, execution, scoring, and preference-data toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, library_path, records_path, out_dir = "out";
  std::uint64_t seed = 0;
  int workers = 0;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--library", library_path, "task library file");
  app.add_option("--records", records_path, "task records file");
  app.add_option("--out", out_dir, "output directory");
  auto* seed_opt = app.add_option("--seed", seed, "seed for stochastic choices");
  auto* workers_opt = app.add_option("--workers", workers, "worker pool width");

  auto* validate_cmd = app.add_subcommand("validate", "validate a plan against the library");
  std::string plan_path;
  std::vector<std::string> extra_facts;
  validate_cmd->add_option("--plan", plan_path, "plan file")->required();
  validate_cmd->add_option("--facts", extra_facts, "extra starting facts");

  auto* plan_cmd = app.add_subcommand("plan", "generate meta plans for records");
  auto* run_cmd = app.add_subcommand("run", "execute cached plans over records");
  std::string plans_path;
  run_cmd->add_option("--plans", plans_path, "plans file from `plan`")->required();

  auto* evaluate_cmd = app.add_subcommand("evaluate", "score recorded trajectories");
  std::string trajectories_path;
  std::vector<std::string> min_specs_eval;
  evaluate_cmd->add_option("--trajectories", trajectories_path, "trajectory log")->required();
  evaluate_cmd->add_option("--min", min_specs_eval, "fail when aggregate metric=value unmet");

  auto* bench_cmd = app.add_subcommand("bench", "full plan/execute/score pipeline");
  std::vector<std::string> min_specs_bench;
  bool replan_flag = false;
  bench_cmd->add_option("--min", min_specs_bench, "fail when aggregate metric=value unmet");
  bench_cmd->add_flag("--replan", replan_flag, "regenerate once when a plan fails validation");

  auto* prefs_cmd = app.add_subcommand("build-prefs", "build the preference dataset");
  std::string candidates_path, teacher_path;
  double alpha = -1, gamma = -1, margin = -1;
  int min_runs = -1;
  bool no_mix = false;
  prefs_cmd->add_option("--candidates", candidates_path, "candidate runs file")->required();
  prefs_cmd->add_option("--teacher", teacher_path, "teacher runs file");
  prefs_cmd->add_option("--alpha", alpha, "significance level");
  prefs_cmd->add_option("--gamma", gamma, "reward discount");
  prefs_cmd->add_option("--min-runs", min_runs, "minimum runs per candidate");
  prefs_cmd->add_option("--margin", margin, "teacher anchor mean margin");
  prefs_cmd->add_flag("--no-mix", no_mix, "skip 50/50 self/teacher downsampling");

  auto* sweep_cmd = app.add_subcommand("gamma-sweep", "pair stability across gammas");
  std::string sweep_candidates, gammas_spec = "0.1..1.0";
  double baseline = kDefaultGamma;
  double sweep_alpha = -1;
  sweep_cmd->add_option("--candidates", sweep_candidates, "candidate runs file")->required();
  sweep_cmd->add_option("--gammas", gammas_spec, "list (a,b,c) or range (0.1..1.0)");
  sweep_cmd->add_option("--baseline", baseline, "baseline gamma");
  sweep_cmd->add_option("--alpha", sweep_alpha, "significance level");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForVersion& e) {
    std::cout << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    AppConfig cfg;
    if (!config_path.empty()) cfg = AppConfig::load(config_path);
    if (seed_opt->count()) cfg.seed = seed;
    if (workers_opt->count()) cfg.workers = workers;

    auto need = [](const std::string& value, const char* what) -> const std::string& {
      if (value.empty())
        raise(ErrorCode::precondition, std::string("missing required option --") + what);
      return value;
    };

    if (validate_cmd->parsed())
      return cmd_validate(need(library_path, "library"), plan_path, extra_facts);
    if (plan_cmd->parsed())
      return cmd_plan(cfg, need(library_path, "library"), need(records_path, "records"),
                      out_dir);
    if (run_cmd->parsed())
      return cmd_run(cfg, need(library_path, "library"), need(records_path, "records"),
                     plans_path, out_dir);
    if (evaluate_cmd->parsed())
      return cmd_evaluate(cfg, need(records_path, "records"), trajectories_path, out_dir,
                          parse_thresholds(min_specs_eval));
    if (bench_cmd->parsed()) {
      if (replan_flag) cfg.replan = true;
      return cmd_bench(cfg, need(library_path, "library"), need(records_path, "records"),
                       out_dir, parse_thresholds(min_specs_bench));
    }
    if (prefs_cmd->parsed()) {
      if (alpha >= 0) cfg.alpha = alpha;
      if (gamma >= 0) cfg.gamma = gamma;
      if (min_runs >= 0) cfg.min_runs = min_runs;
      if (margin >= 0) cfg.teacher_margin = margin;
      return cmd_build_prefs(cfg, candidates_path, need(records_path, "records"), library_path,
                             teacher_path, out_dir, no_mix);
    }
    if (sweep_cmd->parsed()) {
      if (sweep_alpha >= 0) cfg.alpha = sweep_alpha;
      return cmd_gamma_sweep(cfg, sweep_candidates, gammas_spec, baseline, out_dir);
    }
    raise(ErrorCode::precondition, "no subcommand given");
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", to_string(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace lmmp::cli
