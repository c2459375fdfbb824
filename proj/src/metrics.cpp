#include "gmsa/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace gmsa {
namespace metrics {

namespace {

std::map<std::vector<int>, int> ngram_counts(const std::vector<int>& tokens, int n) {
  std::map<std::vector<int>, int> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    counts[std::vector<int>(tokens.begin() + i, tokens.begin() + i + n)] += 1;
  }
  return counts;
}

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> words;
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

}  // namespace

double bleu(const std::vector<int>& pred, const std::vector<int>& ref, int max_n) {
  if (pred.empty()) return 0.0;
  const int top_n = std::min<int>(max_n, static_cast<int>(pred.size()));
  double log_sum = 0.0;
  for (int n = 1; n <= top_n; ++n) {
    const auto pred_counts = ngram_counts(pred, n);
    const auto ref_counts = ngram_counts(ref, n);
    int clipped = 0, total = 0;
    for (const auto& [gram, count] : pred_counts) {
      total += count;
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) clipped += std::min(count, it->second);
    }
    if (total == 0 || clipped == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) / total);
  }
  const double bp =
      std::exp(std::min(0.0, 1.0 - static_cast<double>(ref.size()) / pred.size()));
  return bp * std::exp(log_sum / top_n);
}

RougeL rouge_l(const std::vector<int>& pred, const std::vector<int>& ref) {
  RougeL out;
  if (pred.empty() || ref.empty()) return out;
  const size_t m = pred.size(), n = ref.size();
  std::vector<int> prev(n + 1, 0), cur(n + 1, 0);
  for (size_t i = 1; i <= m; ++i) {
    for (size_t j = 1; j <= n; ++j) {
      cur[j] = pred[i - 1] == ref[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = prev[n];
  out.recall = lcs / n;
  out.precision = lcs / m;
  out.f1 = (out.recall + out.precision) > 0.0
               ? 2.0 * out.recall * out.precision / (out.recall + out.precision)
               : 0.0;
  return out;
}

double prefix_exact_match(const std::vector<int>& pred, const std::vector<int>& ref) {
  if (ref.empty()) throw std::invalid_argument("prefix_exact_match: empty reference");
  size_t match = 0;
  while (match < pred.size() && match < ref.size() && pred[match] == ref[match]) ++match;
  return static_cast<double>(match) / ref.size();
}

double perplexity(const std::vector<double>& per_token_nll) {
  if (per_token_nll.empty()) throw std::invalid_argument("perplexity: empty nll list");
  double total = 0.0;
  for (double v : per_token_nll) total += v;
  return std::exp(total / per_token_nll.size());
}

std::string normalize_answer(const std::string& text) {
  std::string lowered;
  lowered.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) continue;
    lowered.push_back(static_cast<char>(std::tolower(c)));
  }
  std::vector<std::string> kept;
  for (const auto& w : split_words(lowered)) {
    if (w == "a" || w == "an" || w == "the") continue;
    kept.push_back(w);
  }
  std::string out;
  for (size_t i = 0; i < kept.size(); ++i) {
    if (i) out += " ";
    out += kept[i];
  }
  return out;
}

QaScores qa_scores(const std::string& pred_text, const std::vector<std::string>& gold_answers) {
  if (gold_answers.empty()) throw std::invalid_argument("qa_scores: no gold answers");
  QaScores scores;
  const std::string pred = normalize_answer(pred_text);
  const auto pred_tokens = split_words(pred);
  for (const auto& gold_raw : gold_answers) {
    const std::string gold = normalize_answer(gold_raw);
    if (!gold.empty() && pred.find(gold) != std::string::npos) scores.acc = 1.0;
    if (pred == gold) scores.em = 1.0;
    // multiset token overlap, SQuAD style
    const auto gold_tokens = split_words(gold);
    if (pred_tokens.empty() || gold_tokens.empty()) continue;
    std::map<std::string, int> gold_counts;
    for (const auto& t : gold_tokens) gold_counts[t] += 1;
    int overlap = 0;
    for (const auto& t : pred_tokens) {
      auto it = gold_counts.find(t);
      if (it != gold_counts.end() && it->second > 0) {
        ++overlap;
        --it->second;
      }
    }
    if (overlap == 0) continue;
    const double p = static_cast<double>(overlap) / pred_tokens.size();
    const double r = static_cast<double>(overlap) / gold_tokens.size();
    scores.f1 = std::max(scores.f1, 2.0 * p * r / (p + r));
  }
  return scores;
}

}  // namespace metrics
}  // namespace gmsa
