#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace batmil::metrics {

/// Mann-Whitney AUROC: (concordant + 0.5·tied) / (n_pos·n_neg), labels in
/// {0,1}. Throws DomainError unless both classes are present.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

/// One-vs-rest macro AUROC over class-probability rows (n × n_classes).
/// Classes absent from labels are skipped; binary reduces to auroc on
/// column 1.
double auroc_ovr(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels, std::size_t n_classes);

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels);

struct ClassStats {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Zero denominators give 0; a class absent from both preds and labels has F1 = 0.
std::vector<ClassStats> per_class(const std::vector<int>& preds, const std::vector<int>& labels, std::size_t n_classes);
double f1_macro(const std::vector<int>& preds, const std::vector<int>& labels, std::size_t n_classes);

struct EvalReport {
  std::optional<double> auroc;  // empty when only one class is present
  double accuracy = 0.0;
  double f1_macro = 0.0;
  std::vector<ClassStats> classes;
  std::size_t n_eval = 0;
  std::string fold;
};

EvalReport evaluate(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels, std::size_t n_classes,
                    const std::string& fold);

/// Single JSON object, pretty-printed.
std::string to_json(const EvalReport& r);

}  // namespace batmil::metrics
