#pragma once

#include <string>
#include <tuple>
#include <vector>

namespace gmsa {
namespace metrics {

// Geometric mean of modified n-gram precisions (orders longer than the
// prediction are excluded, no smoothing) times the brevity penalty
// exp(min(0, 1 - |ref|/|pred|)). Empty predictions score 0.
double bleu(const std::vector<int>& pred, const std::vector<int>& ref, int max_n = 4);

struct RougeL {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};
RougeL rouge_l(const std::vector<int>& pred, const std::vector<int>& ref);

// longest exactly matching prefix length / |ref|
double prefix_exact_match(const std::vector<int>& pred, const std::vector<int>& ref);

// exp(mean nll); empty input is a usage error
double perplexity(const std::vector<double>& per_token_nll);

struct QaScores {
  double acc = 0.0;  // any normalized gold is a substring of the prediction
  double em = 0.0;   // normalized prediction equals some gold
  double f1 = 0.0;   // best token-overlap F1 across golds
};
QaScores qa_scores(const std::string& pred_text, const std::vector<std::string>& gold_answers);

// lowercase, strip punctuation, drop articles (a/an/the), collapse whitespace
std::string normalize_answer(const std::string& text);

}  // namespace metrics
}  // namespace gmsa
