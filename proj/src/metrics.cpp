#include "lmmp/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <set>

namespace lmmp {

namespace {

constexpr double kRealRelTol = 1e-9;

bool numbers_equal(const Json& a, const Json& b) {
  const bool a_int = a.is_number_integer() || a.is_number_unsigned();
  const bool b_int = b.is_number_integer() || b.is_number_unsigned();
  if (a_int && b_int) return a == b;  // json's == handles signed/unsigned mixes
  const double x = a.get<double>();
  const double y = b.get<double>();
  if (x == y) return true;
  return std::fabs(x - y) <= kRealRelTol * std::max(std::fabs(x), std::fabs(y));
}

double f1_from_counts(std::size_t hits, std::size_t pred_size, std::size_t gt_size) {
  if (pred_size == 0 && gt_size == 0) return 1.0;
  if (pred_size == 0 || gt_size == 0) return 0.0;
  const double p = static_cast<double>(hits) / static_cast<double>(pred_size);
  const double r = static_cast<double>(hits) / static_cast<double>(gt_size);
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

// Deduplicate with deep equality; quadratic, fine for argument-sized lists.
std::vector<const Json*> unique_elements(const Json& arr) {
  std::vector<const Json*> out;
  for (const Json& v : arr) {
    bool dup = false;
    for (const Json* u : out) {
      if (deep_equal(v, *u)) { dup = true; break; }
    }
    if (!dup) out.push_back(&v);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Sequence primitives
// ---------------------------------------------------------------------------

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::size_t lcp_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::size_t n = std::min(a.size(), b.size());
  std::size_t i = 0;
  while (i < n && a[i] == b[i]) ++i;
  return i;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

double rouge_l(const std::string& candidate, const std::string& reference) {
  const std::vector<std::string> cand = tokenize(candidate);
  const std::vector<std::string> ref = tokenize(reference);
  if (cand.empty() && ref.empty()) return 1.0;
  if (cand.empty() || ref.empty()) return 0.0;
  const std::size_t lcs = lcs_length(cand, ref);
  const double p = static_cast<double>(lcs) / static_cast<double>(cand.size());
  const double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

// ---------------------------------------------------------------------------
// Step scoring
// ---------------------------------------------------------------------------

bool deep_equal(const Json& a, const Json& b) {
  if (a.is_number() && b.is_number()) return numbers_equal(a, b);
  if (a.type() != b.type()) {
    // ordered_json distinguishes signed/unsigned storage; numbers were
    // handled above, so remaining type mismatches are real.
    return false;
  }
  switch (a.type()) {
    case Json::value_t::object: {
      if (a.size() != b.size()) return false;
      for (auto it = a.begin(); it != a.end(); ++it) {
        if (!b.contains(it.key())) return false;
        if (!deep_equal(it.value(), b.at(it.key()))) return false;
      }
      return true;
    }
    case Json::value_t::array: {
      if (a.size() != b.size()) return false;
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (!deep_equal(a[i], b[i])) return false;
      }
      return true;
    }
    default:
      return a == b;
  }
}

double value_fidelity(const Json& pred, const Json& gt) {
  if (gt.is_array()) {
    if (!pred.is_array()) return 0.0;
    const std::vector<const Json*> pred_set = unique_elements(pred);
    const std::vector<const Json*> gt_set = unique_elements(gt);
    std::size_t hits = 0;
    for (const Json* g : gt_set) {
      for (const Json* p : pred_set) {
        if (deep_equal(*p, *g)) { ++hits; break; }
      }
    }
    return f1_from_counts(hits, pred_set.size(), gt_set.size());
  }
  if (gt.is_string()) {
    if (!pred.is_string()) return 0.0;
    return rouge_l(pred.get<std::string>(), gt.get<std::string>());
  }
  return deep_equal(pred, gt) ? 1.0 : 0.0;
}

StepScore step_score(const ToolCall& pred, const ToolCall& gt) {
  StepScore s;
  if (pred.name != gt.name) return s;
  s.tsa = 1;

  std::set<std::string> pred_keys, gt_keys;
  for (auto it = pred.arguments.begin(); it != pred.arguments.end(); ++it)
    pred_keys.insert(it.key());
  for (auto it = gt.arguments.begin(); it != gt.arguments.end(); ++it)
    gt_keys.insert(it.key());
  std::size_t hits = 0;
  for (const std::string& k : pred_keys) hits += gt_keys.count(k);
  s.asf1 = f1_from_counts(hits, pred_keys.size(), gt_keys.size());

  // Content is scored only under an exact schema match.
  if (s.asf1 < 1.0) return s;
  if (gt_keys.empty()) {
    s.acf = 1.0;
    return s;
  }
  double sum = 0.0;
  for (const std::string& k : gt_keys)
    sum += value_fidelity(pred.arguments.at(k), gt.arguments.at(k));
  s.acf = sum / static_cast<double>(gt_keys.size());
  return s;
}

double discounted_aggregate(const std::vector<double>& scores, double gamma) {
  if (scores.empty()) raise(ErrorCode::empty_input, "no scores to aggregate");
  if (!(gamma > 0.0) || gamma > 1.0)
    raise(ErrorCode::precondition, "gamma must be in (0, 1]");
  double num = 0.0, den = 0.0, w = 1.0;
  for (double s : scores) {
    num += w * s;
    den += w;
    w *= gamma;
  }
  return num / den;
}

// ---------------------------------------------------------------------------
// Outcome scoring
// ---------------------------------------------------------------------------

SequenceScores sequence_scores(const std::vector<std::string>& pred_names,
                               const std::vector<std::string>& gt_names) {
  if (gt_names.empty())
    raise(ErrorCode::empty_ground_truth, "ground-truth tool sequence is empty");
  const std::set<std::string> pred_set(pred_names.begin(), pred_names.end());
  const std::set<std::string> gt_set(gt_names.begin(), gt_names.end());
  std::size_t hits = 0;
  for (const std::string& g : gt_set) hits += pred_set.count(g);

  SequenceScores s;
  s.tao = static_cast<double>(hits) / static_cast<double>(gt_set.size());
  s.tio = static_cast<double>(lcs_length(pred_names, gt_names)) /
          static_cast<double>(gt_names.size());
  s.tem = static_cast<double>(lcp_length(pred_names, gt_names)) /
          static_cast<double>(gt_names.size());
  return s;
}

std::optional<char> extract_option_letter(const std::string& text, bool prefer_last) {
  std::optional<char> found;
  for (const std::string& token : tokenize(text)) {
    if (token.size() == 1 && token[0] >= 'a' && token[0] <= 'd') {
      char letter = static_cast<char>(std::toupper(static_cast<unsigned char>(token[0])));
      if (prefer_last || !found) found = letter;
    }
  }
  return found;
}

std::vector<ExtractedNumber> extract_numbers(const std::string& text) {
  std::vector<ExtractedNumber> out;
  const std::size_t n = text.size();
  std::size_t i = 0;
  auto is_digit = [&](std::size_t k) {
    return k < n && std::isdigit(static_cast<unsigned char>(text[k]));
  };
  while (i < n) {
    if (!is_digit(i)) { ++i; continue; }
    std::size_t start = i;
    bool negative = false;
    if (start > 0 && (text[start - 1] == '-' || text[start - 1] == '+')) {
      // A sign counts only when it is not glued to a preceding word/number
      // (so "x-5" and "3-4" contribute bare digits, "-5" contributes -5).
      bool glued = start >= 2 && (std::isalnum(static_cast<unsigned char>(text[start - 2])) ||
                                  text[start - 2] == '.');
      if (!glued) negative = text[start - 1] == '-';
    }
    std::string digits;
    while (is_digit(i)) digits.push_back(text[i++]);
    // Thousands separators: groups of exactly three digits after a comma.
    while (i < n && text[i] == ',' && is_digit(i + 1) && is_digit(i + 2) && is_digit(i + 3) &&
           !is_digit(i + 4)) {
      digits += text.substr(i + 1, 3);
      i += 4;
    }
    bool is_integer = true;
    if (i + 1 < n && text[i] == '.' && is_digit(i + 1)) {
      is_integer = false;
      digits.push_back('.');
      ++i;
      while (is_digit(i)) digits.push_back(text[i++]);
    }
    if (i < n && (text[i] == 'e' || text[i] == 'E')) {
      std::size_t j = i + 1;
      if (j < n && (text[j] == '+' || text[j] == '-')) ++j;
      if (is_digit(j)) {
        is_integer = false;
        digits.push_back('e');
        if (text[i + 1] == '+' || text[i + 1] == '-') digits.push_back(text[i + 1]);
        i = j;
        while (is_digit(i)) digits.push_back(text[i++]);
      }
    }
    double value = std::stod(digits);
    out.push_back(ExtractedNumber{negative ? -value : value, is_integer});
  }
  return out;
}

std::optional<bool> extract_polarity(const std::string& text, const FaaOptions& opts) {
  for (const std::string& token : tokenize(text)) {
    if (std::find(opts.positive_words.begin(), opts.positive_words.end(), token) !=
        opts.positive_words.end())
      return true;
    if (std::find(opts.negative_words.begin(), opts.negative_words.end(), token) !=
        opts.negative_words.end())
      return false;
  }
  return std::nullopt;
}

double kip_recall(const std::string& prediction, const std::vector<std::string>& kips) {
  if (kips.empty()) return 0.0;
  const std::vector<std::string> pred_tokens = tokenize(prediction);
  std::size_t matched = 0;
  for (const std::string& kip : kips) {
    const std::vector<std::string> kip_tokens = tokenize(kip);
    if (kip_tokens.empty()) continue;
    if (kip_tokens.size() > pred_tokens.size()) continue;
    for (std::size_t i = 0; i + kip_tokens.size() <= pred_tokens.size(); ++i) {
      if (std::equal(kip_tokens.begin(), kip_tokens.end(), pred_tokens.begin() + i)) {
        ++matched;
        break;
      }
    }
  }
  return static_cast<double>(matched) / static_cast<double>(kips.size());
}

FaaResult faa_score(const std::string& pred_answer, const TaskRecord& record,
                    const JudgeBackend* judge, const FaaOptions& opts) {
  FaaResult result;
  switch (record.answer_type) {
    case AnswerType::mcq: {
      // Final decisions come last in free-form answers; ground truth states
      // the option first.
      std::optional<char> pred = extract_option_letter(pred_answer, /*prefer_last=*/true);
      std::optional<char> gt = extract_option_letter(record.gt_answer, /*prefer_last=*/false);
      if (!pred || !gt) {
        result.unextractable = true;
        return result;
      }
      result.score = *pred == *gt ? 1.0 : 0.0;
      return result;
    }
    case AnswerType::numerical: {
      std::vector<ExtractedNumber> extracted = extract_numbers(pred_answer);
      if (extracted.empty()) {
        result.unextractable = true;
        return result;
      }
      std::vector<bool> used(extracted.size(), false);
      std::size_t matched = 0;
      for (const GtNumber& gt : record.gt_values) {
        double best_err = std::numeric_limits<double>::infinity();
        std::size_t best = extracted.size();
        for (std::size_t i = 0; i < extracted.size(); ++i) {
          if (used[i]) continue;
          const ExtractedNumber& e = extracted[i];
          bool ok;
          if (gt.is_integer) {
            ok = e.value == gt.value;
          } else if (gt.value == 0.0) {
            ok = e.value == 0.0;
          } else {
            ok = std::fabs(e.value - gt.value) <= opts.float_tolerance * std::fabs(gt.value);
          }
          if (!ok) continue;
          double err = std::fabs(e.value - gt.value);
          if (err < best_err) {
            best_err = err;
            best = i;
          }
        }
        if (best < extracted.size()) {
          used[best] = true;
          ++matched;
        }
      }
      result.score = static_cast<double>(matched) / static_cast<double>(record.gt_values.size());
      return result;
    }
    case AnswerType::boolean_answer: {
      std::optional<bool> pred = extract_polarity(pred_answer, opts);
      std::optional<bool> gt = extract_polarity(record.gt_answer, opts);
      if (!pred || !gt) {
        result.unextractable = true;
        return result;
      }
      result.score = *pred == *gt ? 1.0 : 0.0;
      return result;
    }
    case AnswerType::description: {
      if (judge) {
        double s = judge->score(record.query, record.gt_answer, record.kips, pred_answer);
        result.score = std::clamp(s, 0.0, 1.0);
      } else {
        result.score = kip_recall(pred_answer, record.kips);
      }
      return result;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Whole-trajectory evaluation
// ---------------------------------------------------------------------------

Json SampleReport::to_json() const {
  Json j = Json::object();
  j["tsa"] = tsa;
  j["asf1"] = asf1;
  j["acf"] = acf;
  j["tao"] = tao;
  j["tio"] = tio;
  j["tem"] = tem;
  j["faa"] = faa;
  j["t"] = t;
  j["flags"] = flags;
  return j;
}

SampleReport evaluate_trajectory(const Trajectory& pred, const Trajectory& gt,
                                 const TaskRecord& record, double gamma,
                                 const JudgeBackend* judge, const FaaOptions& faa_opts) {
  if (gt.steps.empty())
    raise(ErrorCode::empty_ground_truth, "ground-truth trajectory has no steps");

  SampleReport report;
  report.t = gt.steps.size();

  std::vector<double> tsa_scores, asf1_scores, acf_scores;
  for (std::size_t t = 0; t < gt.steps.size(); ++t) {
    StepScore s;
    if (t < pred.steps.size()) s = step_score(pred.steps[t].call, gt.steps[t].call);
    tsa_scores.push_back(static_cast<double>(s.tsa));
    asf1_scores.push_back(s.asf1);
    acf_scores.push_back(s.acf);
  }
  report.tsa = discounted_aggregate(tsa_scores, gamma);
  report.asf1 = discounted_aggregate(asf1_scores, gamma);
  report.acf = discounted_aggregate(acf_scores, gamma);

  const SequenceScores seq = sequence_scores(pred.tool_names(), gt.tool_names());
  report.tao = seq.tao;
  report.tio = seq.tio;
  report.tem = seq.tem;

  FaaResult faa;
  if (pred.final_answer) {
    faa = faa_score(*pred.final_answer, record, judge, faa_opts);
  } else {
    faa.unextractable = true;
  }
  report.faa = faa.score;
  if (faa.unextractable) report.flags.push_back("answer_unextractable");
  if (pred.truncated) report.flags.push_back("truncated");
  return report;
}

}  // namespace lmmp
