#include "lmmp/preference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace lmmp {

namespace {

double mean_of(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// U statistic counting wins of a over b, ties worth one half.
double u_statistic(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0.0;
  for (double x : a) {
    for (double y : b) {
      if (x > y) u += 1.0;
      else if (x == y) u += 0.5;
    }
  }
  return u;
}

double exact_permutation_p(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size(), m = b.size(), total = n + m;
  std::vector<double> pool(a);
  pool.insert(pool.end(), b.begin(), b.end());
  const double observed = u_statistic(a, b);

  // Enumerate every n-subset of the pool as the "a" group.
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::size_t as_extreme = 0, count = 0;
  const double eps = 1e-12;
  for (;;) {
    double u = 0.0;
    std::vector<bool> in_a(total, false);
    for (std::size_t i : idx) in_a[i] = true;
    for (std::size_t i = 0; i < total; ++i) {
      if (!in_a[i]) continue;
      for (std::size_t j = 0; j < total; ++j) {
        if (in_a[j]) continue;
        if (pool[i] > pool[j]) u += 1.0;
        else if (pool[i] == pool[j]) u += 0.5;
      }
    }
    ++count;
    if (u >= observed - eps) ++as_extreme;

    // next combination
    std::size_t k = n;
    while (k > 0 && idx[k - 1] == total - n + k - 1) --k;
    if (k == 0) break;
    ++idx[k - 1];
    for (std::size_t i = k; i < n; ++i) idx[i] = idx[i - 1] + 1;
  }
  return static_cast<double>(as_extreme) / static_cast<double>(count);
}

double normal_approximation_p(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double m = static_cast<double>(b.size());
  const double big_n = n + m;
  const double u = u_statistic(a, b);
  const double mu = n * m / 2.0;

  // Tie correction over the pooled sample.
  std::vector<double> pool(a);
  pool.insert(pool.end(), b.begin(), b.end());
  std::sort(pool.begin(), pool.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < pool.size();) {
    std::size_t j = i;
    while (j < pool.size() && pool[j] == pool[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double var =
      n * m / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
  if (var <= 0.0) return 1.0;  // fully tied pool: no evidence either way
  const double z = (u - mu - 0.5) / std::sqrt(var);
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

}  // namespace

void RewardWeights::validate() const {
  if (tsa < 0 || asf1 < 0 || acf < 0)
    raise(ErrorCode::precondition, "reward weights must be non-negative");
  if (std::fabs(tsa + asf1 + acf - 1.0) > 1e-9)
    raise(ErrorCode::precondition, "reward weights must sum to 1");
}

const char* to_string(PairSource source) {
  switch (source) {
    case PairSource::self_generated: return "self_generated";
    case PairSource::teacher_augmented: return "teacher_augmented";
  }
  return "self_generated";
}

// ---------------------------------------------------------------------------
// Rewards
// ---------------------------------------------------------------------------

double composite_reward(const std::vector<StepScore>& steps, double gamma,
                        const RewardWeights& weights) {
  if (steps.empty())
    raise(ErrorCode::empty_ground_truth, "no step scores to aggregate");
  weights.validate();
  std::vector<double> composites;
  composites.reserve(steps.size());
  for (const StepScore& s : steps)
    composites.push_back(weights.tsa * s.tsa + weights.asf1 * s.asf1 + weights.acf * s.acf);
  return discounted_aggregate(composites, gamma);
}

double trajectory_reward(const Trajectory& pred, const Trajectory& gt, double gamma,
                         const RewardWeights& weights) {
  if (gt.steps.empty())
    raise(ErrorCode::empty_ground_truth, "ground-truth trajectory has no steps");
  std::vector<StepScore> steps;
  steps.reserve(gt.steps.size());
  for (std::size_t t = 0; t < gt.steps.size(); ++t) {
    StepScore s;
    if (t < pred.steps.size()) s = step_score(pred.steps[t].call, gt.steps[t].call);
    steps.push_back(s);
  }
  return composite_reward(steps, gamma, weights);
}

CandidateRuns CandidateRuns::from_json(const Json& j) {
  if (!j.is_object()) raise(ErrorCode::schema_violation, "candidate is not an object");
  CandidateRuns c;
  if (!j.contains("task_id") || !j.at("task_id").is_string())
    raise(ErrorCode::schema_violation, "candidate missing task_id");
  c.task_id = j.at("task_id").get<std::string>();
  if (!j.contains("plan_id") || !j.at("plan_id").is_string())
    raise(ErrorCode::schema_violation, "candidate missing plan_id");
  c.plan_id = j.at("plan_id").get<std::string>();
  if (!j.contains("plan")) raise(ErrorCode::schema_violation, "candidate missing plan");
  c.plan = MetaPlan::from_json(j.at("plan"));
  if (!j.contains("runs") || !j.at("runs").is_array())
    raise(ErrorCode::schema_violation, "candidate missing runs array");
  for (const Json& run : j.at("runs")) {
    if (!run.is_array())
      raise(ErrorCode::schema_violation, "candidate run is not an array of step scores");
    std::vector<StepScore> steps;
    for (const Json& step : run) {
      if (!step.is_object() || !step.contains("tsa"))
        raise(ErrorCode::schema_violation, "step score missing tsa");
      StepScore s;
      s.tsa = step.at("tsa").get<int>();
      s.asf1 = step.value("asf1", 0.0);
      s.acf = step.value("acf", 0.0);
      if ((s.tsa != 0 && s.tsa != 1) || s.asf1 < 0 || s.asf1 > 1 || s.acf < 0 || s.acf > 1 ||
          !std::isfinite(s.asf1) || !std::isfinite(s.acf))
        raise(ErrorCode::schema_violation, "step score out of range for " + c.plan_id);
      steps.push_back(s);
    }
    if (steps.empty()) raise(ErrorCode::schema_violation, "candidate run has no steps");
    c.runs.push_back(std::move(steps));
  }
  if (c.runs.empty()) raise(ErrorCode::schema_violation, "candidate has no runs");
  return c;
}

CandidateScores CandidateRuns::rewards(double gamma, const RewardWeights& weights) const {
  CandidateScores scores;
  scores.task_id = task_id;
  scores.plan_id = plan_id;
  scores.plan = plan;
  scores.runs.reserve(runs.size());
  for (const std::vector<StepScore>& run : runs)
    scores.runs.push_back(composite_reward(run, gamma, weights));
  return scores;
}

// ---------------------------------------------------------------------------
// Pair construction
// ---------------------------------------------------------------------------

double mann_whitney_p(const std::vector<double>& greater, const std::vector<double>& lesser) {
  if (greater.empty() || lesser.empty())
    raise(ErrorCode::empty_input, "Mann-Whitney test requires non-empty samples");
  if (greater.size() <= 8 && lesser.size() <= 8)
    return exact_permutation_p(greater, lesser);
  return normal_approximation_p(greater, lesser);
}

std::vector<PreferencePair> build_pairs(const std::vector<CandidateScores>& candidates,
                                        const PairOptions& opts) {
  for (const CandidateScores& c : candidates) {
    if (static_cast<int>(c.runs.size()) < opts.min_runs)
      raise(ErrorCode::insufficient_runs,
            "candidate " + c.plan_id + " for task " + c.task_id + " has " +
                std::to_string(c.runs.size()) + " runs, need " + std::to_string(opts.min_runs));
  }

  // Group by task, preserving input order for deterministic output.
  std::vector<std::string> task_order;
  std::map<std::string, std::vector<const CandidateScores*>> by_task;
  for (const CandidateScores& c : candidates) {
    auto [it, inserted] = by_task.try_emplace(c.task_id);
    if (inserted) task_order.push_back(c.task_id);
    it->second.push_back(&c);
  }

  std::vector<PreferencePair> pairs;
  for (const std::string& task : task_order) {
    const std::vector<const CandidateScores*>& group = by_task[task];
    for (std::size_t i = 0; i < group.size(); ++i) {
      for (std::size_t j = i + 1; j < group.size(); ++j) {
        const CandidateScores* a = group[i];
        const CandidateScores* b = group[j];
        const double mean_a = mean_of(a->runs);
        const double mean_b = mean_of(b->runs);
        const CandidateScores* winner = nullptr;
        const CandidateScores* loser = nullptr;
        double p = 1.0;
        if (double p_ab = mann_whitney_p(a->runs, b->runs);
            p_ab <= opts.alpha && mean_a > mean_b) {
          winner = a; loser = b; p = p_ab;
        } else if (double p_ba = mann_whitney_p(b->runs, a->runs);
                   p_ba <= opts.alpha && mean_b > mean_a) {
          winner = b; loser = a; p = p_ba;
        }
        if (!winner) continue;
        pairs.push_back(PreferencePair{task, winner->plan_id, loser->plan_id,
                                       mean_of(winner->runs), mean_of(loser->runs), p,
                                       PairSource::self_generated, winner->plan, loser->plan});
      }
    }
  }
  return pairs;
}

std::vector<PreferencePair> add_teacher_anchors(const std::string& task_id,
                                                const std::vector<CandidateScores>& candidates,
                                                const MetaPlan& teacher_plan,
                                                const std::vector<double>& teacher_runs,
                                                const TaskLibrary& lib, double margin) {
  if (teacher_runs.empty())
    raise(ErrorCode::empty_input, "teacher has no runs");
  ValidationReport report = validate_plan(teacher_plan, lib);
  if (!report.valid)
    raise(ErrorCode::unvalidated_teacher,
          "teacher plan for task " + task_id + " fails library validation");

  const double teacher_mean = mean_of(teacher_runs);
  std::vector<PreferencePair> pairs;
  for (const CandidateScores& c : candidates) {
    if (c.task_id != task_id) continue;
    const double cand_mean = mean_of(c.runs);
    if (teacher_mean - cand_mean < margin) continue;
    pairs.push_back(PreferencePair{task_id, "teacher", c.plan_id, teacher_mean, cand_mean,
                                   std::nullopt, PairSource::teacher_augmented, teacher_plan,
                                   c.plan});
  }
  return pairs;
}

std::vector<PreferencePair> mix_pairs(std::vector<PreferencePair> self_pairs,
                                      std::vector<PreferencePair> teacher_pairs,
                                      std::uint64_t seed) {
  // Platform-stable Fisher-Yates; std::shuffle's draw sequence is not
  // specified across standard libraries.
  auto downsample = [seed](std::vector<PreferencePair>& pairs, std::size_t target) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i + 1 < pairs.size(); ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng() % (pairs.size() - i));
      std::swap(pairs[i], pairs[j]);
    }
    pairs.resize(target);
  };
  const std::size_t target = std::min(self_pairs.size(), teacher_pairs.size());
  if (self_pairs.size() > target) downsample(self_pairs, target);
  if (teacher_pairs.size() > target) downsample(teacher_pairs, target);

  std::vector<PreferencePair> mixed = std::move(self_pairs);
  mixed.insert(mixed.end(), std::make_move_iterator(teacher_pairs.begin()),
               std::make_move_iterator(teacher_pairs.end()));
  return mixed;
}

SweepReport gamma_sweep(const std::vector<CandidateRuns>& raw, const std::vector<double>& gammas,
                        double baseline, const PairOptions& opts, const RewardWeights& weights) {
  const auto is_baseline = [baseline](double g) { return std::fabs(g - baseline) < 1e-12; };
  if (std::none_of(gammas.begin(), gammas.end(), is_baseline))
    raise(ErrorCode::baseline_missing, "baseline gamma is not among the sweep gammas");

  auto pairs_at = [&](double gamma) {
    std::vector<CandidateScores> scored;
    scored.reserve(raw.size());
    for (const CandidateRuns& c : raw) scored.push_back(c.rewards(gamma, weights));
    return build_pairs(scored, opts);
  };

  using PairKey = std::tuple<std::string, std::string, std::string>;  // task, winner, loser
  auto keys_of = [](const std::vector<PreferencePair>& pairs) {
    std::set<PairKey> keys;
    for (const PreferencePair& p : pairs) keys.insert({p.task_id, p.winner, p.loser});
    return keys;
  };

  const std::set<PairKey> base_keys = keys_of(pairs_at(baseline));

  SweepReport report;
  report.baseline = baseline;
  if (base_keys.empty()) report.flags.push_back("empty_baseline");

  for (double gamma : gammas) {
    const std::set<PairKey> keys = keys_of(pairs_at(gamma));
    SweepEntry entry;
    entry.gamma = gamma;
    entry.npp = static_cast<int>(keys.size());
    if (base_keys.empty()) {
      entry.sor = 1.0;  // undefined; flagged above
    } else {
      std::size_t shared = 0;
      for (const PairKey& k : base_keys) shared += keys.count(k);
      entry.sor = static_cast<double>(shared) / static_cast<double>(base_keys.size());
    }
    for (const auto& [task, winner, loser] : base_keys) {
      if (keys.count({task, loser, winner})) ++entry.ptr;
    }
    report.entries.push_back(entry);
  }
  return report;
}

Json SweepReport::to_json() const {
  Json j = Json::object();
  j["baseline"] = baseline;
  j["flags"] = flags;
  Json arr = Json::array();
  for (const SweepEntry& e : entries) {
    Json ej = Json::object();
    ej["gamma"] = e.gamma;
    ej["npp"] = e.npp;
    ej["sor"] = e.sor;
    ej["ptr"] = e.ptr;
    arr.push_back(std::move(ej));
  }
  j["entries"] = std::move(arr);
  return j;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

std::size_t export_dpo_dataset(const std::vector<PreferencePair>& pairs,
                               const std::map<std::string, TaskRecord>& records,
                               const std::filesystem::path& path, const ExportMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::io_error, "cannot open output file: " + path.string());
  for (const PreferencePair& p : pairs) {
    auto it = records.find(p.task_id);
    if (it == records.end())
      raise(ErrorCode::unknown_task, "pair references unknown task: " + p.task_id);
    const TaskRecord& record = it->second;
    Json line = Json::object();
    line["prompt"] = record.query;
    if (record.image_ref) line["image_ref"] = *record.image_ref;
    line["chosen"] = serialize_meta_plan(p.winner_plan);
    line["rejected"] = serialize_meta_plan(p.loser_plan);
    Json m = Json::object();
    m["task_id"] = p.task_id;
    m["winner"] = p.winner;
    m["loser"] = p.loser;
    m["source"] = to_string(p.source);
    m["p_value"] = p.p_value ? Json(*p.p_value) : Json(nullptr);
    m["winner_mean"] = p.winner_mean;
    m["loser_mean"] = p.loser_mean;
    m["gamma"] = meta.gamma;
    m["weights"] = std::vector<double>{meta.weights.tsa, meta.weights.asf1, meta.weights.acf};
    m["alpha"] = meta.alpha;
    m["seed"] = meta.seed;
    m["lora_rank"] = meta.lora_rank;
    m["lora_alpha"] = meta.lora_alpha;
    line["meta"] = std::move(m);
    out << line.dump() << "\n";
  }
  out.flush();
  if (!out) raise(ErrorCode::io_error, "failed writing output file: " + path.string());
  return pairs.size();
}

// ---------------------------------------------------------------------------
// Reference objectives
// ---------------------------------------------------------------------------

double sft_nll(const std::vector<double>& token_logprobs) {
  double sum = 0.0;
  for (double lp : token_logprobs) {
    if (!(lp <= 0.0) || !std::isfinite(lp))
      raise(ErrorCode::positive_logprob, "log-probabilities must be finite and <= 0");
    sum += lp;
  }
  return -sum;
}

double dpo_loss(double logp_w_policy, double logp_w_ref, double logp_l_policy,
                double logp_l_ref, double beta) {
  if (!(beta > 0.0)) raise(ErrorCode::precondition, "beta must be positive");
  const double r_w = beta * (logp_w_policy - logp_w_ref);
  const double r_l = beta * (logp_l_policy - logp_l_ref);
  const double margin = r_w - r_l;
  // -log(sigmoid(margin)) == softplus(-margin), split for stability
  const double x = -margin;
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace lmmp
