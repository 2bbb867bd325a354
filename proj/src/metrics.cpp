#include "batmil/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "json.hpp"

#include "batmil/error.hpp"

namespace batmil::metrics {

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("auroc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Walk tie groups in ascending score: each positive beats every earlier negative
  // and ties half of the negatives in its own group.
  double n_pos = 0, n_neg = 0, wins = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      const int y = labels[order[j]];
      if (y != 0 && y != 1) throw DomainError("auroc: labels must be 0 or 1");
      (y == 1 ? pos : neg) += 1;
      ++j;
    }
    wins += pos * n_neg + 0.5 * pos * neg;
    n_pos += pos;
    n_neg += neg;
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) throw DomainError("auroc: undefined with a single class present");
  return wins / (n_pos * n_neg);
}

double auroc_ovr(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels, std::size_t n_classes) {
  if (probs.size() != labels.size()) throw ShapeError("auroc_ovr: probs and labels differ in length");
  auto column = [&](std::size_t c) {
    std::vector<double> s(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) s[i] = probs[i].at(c);
    return s;
  };
  if (n_classes == 2) return auroc(column(1), labels);
  double total = 0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::vector<int> bin(labels.size());
    std::size_t pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) pos += (bin[i] = labels[i] == static_cast<int>(c) ? 1 : 0);
    if (pos == 0 || pos == labels.size()) continue;
    total += auroc(column(c), bin);
    ++used;
  }
  if (used == 0) throw DomainError("auroc_ovr: undefined with a single class present");
  return total / static_cast<double>(used);
}

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size()) throw ShapeError("accuracy: length mismatch");
  if (preds.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

std::vector<ClassStats> per_class(const std::vector<int>& preds, const std::vector<int>& labels, std::size_t n_classes) {
  if (preds.size() != labels.size()) throw ShapeError("per_class: length mismatch");
  std::vector<double> tp(n_classes), fp(n_classes), fn(n_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto p = static_cast<std::size_t>(preds[i]), y = static_cast<std::size_t>(labels[i]);
    if (p >= n_classes || y >= n_classes) throw DomainError("per_class: class index out of range");
    if (p == y) {
      tp[p] += 1;
    } else {
      fp[p] += 1;
      fn[y] += 1;
    }
  }
  std::vector<ClassStats> out(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    out[c].precision = tp[c] + fp[c] > 0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
    out[c].recall = tp[c] + fn[c] > 0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
    const double denom = 2 * tp[c] + fp[c] + fn[c];
    out[c].f1 = denom > 0 ? 2 * tp[c] / denom : 0.0;
  }
  return out;
}

double f1_macro(const std::vector<int>& preds, const std::vector<int>& labels, std::size_t n_classes) {
  if (n_classes == 0) return 0.0;
  double s = 0;
  for (const auto& c : per_class(preds, labels, n_classes)) s += c.f1;
  return s / static_cast<double>(n_classes);
}

EvalReport evaluate(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels, std::size_t n_classes,
                    const std::string& fold) {
  EvalReport r;
  r.n_eval = labels.size();
  r.fold = fold;
  std::vector<int> preds(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i)
    preds[i] = static_cast<int>(std::max_element(probs[i].begin(), probs[i].end()) - probs[i].begin());
  r.accuracy = accuracy(preds, labels);
  r.classes = per_class(preds, labels, n_classes);
  r.f1_macro = f1_macro(preds, labels, n_classes);
  try {
    r.auroc = auroc_ovr(probs, labels, n_classes);
  } catch (const DomainError&) {
    r.auroc.reset();
  }
  return r;
}

std::string to_json(const EvalReport& r) {
  nlohmann::json j;
  j["auroc"] = r.auroc ? nlohmann::json(*r.auroc) : nlohmann::json(nullptr);
  j["auroc_scheme"] = "one-vs-rest macro (binary: positive-class probability)";
  j["accuracy"] = r.accuracy;
  j["f1_macro"] = r.f1_macro;
  j["f1_scheme"] = "macro; a class absent from predictions and labels contributes 0";
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < r.classes.size(); ++c)
    classes.push_back({{"class", c}, {"precision", r.classes[c].precision}, {"recall", r.classes[c].recall}, {"f1", r.classes[c].f1}});
  j["per_class"] = classes;
  j["n_eval"] = r.n_eval;
  j["fold"] = r.fold;
  return j.dump(2) + "\n";
}

}  // namespace batmil::metrics
