#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "roadseq/array.hpp"
#include "roadseq/dataset.hpp"
#include "roadseq/error.hpp"

namespace roadseq::eval {

// Square count matrix. As a confusion matrix rows are ground truth and
// columns are predictions; as a co-occurrence matrix element (i,j) counts
// class i at segment t followed by class j at t+1 within one section.
struct SquareCounts {
  std::size_t classes = 0;
  std::vector<std::int64_t> counts;

  SquareCounts() = default;
  explicit SquareCounts(std::size_t c) : classes(c), counts(c * c, 0) {}

  std::int64_t& at(std::size_t i, std::size_t j) {
    return counts[i * classes + j];
  }
  std::int64_t at(std::size_t i, std::size_t j) const {
    return counts[i * classes + j];
  }

  void add(int gt, int pred) {
    if (gt < 0 || pred < 0 || static_cast<std::size_t>(gt) >= classes ||
        static_cast<std::size_t>(pred) >= classes)
      throw ValidationError("count matrix: class out of range");
    ++at(static_cast<std::size_t>(gt), static_cast<std::size_t>(pred));
  }

  std::int64_t total() const {
    return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
  }
  std::int64_t trace() const {
    std::int64_t t = 0;
    for (std::size_t i = 0; i < classes; ++i) t += at(i, i);
    return t;
  }
  std::int64_t row_sum(std::size_t i) const {
    std::int64_t t = 0;
    for (std::size_t j = 0; j < classes; ++j) t += at(i, j);
    return t;
  }
  std::int64_t col_sum(std::size_t j) const {
    std::int64_t t = 0;
    for (std::size_t i = 0; i < classes; ++i) t += at(i, j);
    return t;
  }
};

using ConfusionMatrix = SquareCounts;
using CoocMatrix = SquareCounts;

inline ConfusionMatrix confusion(const std::vector<int>& gt,
                                 const std::vector<int>& pred,
                                 std::size_t classes) {
  if (gt.size() != pred.size())
    throw ValidationError("confusion: gt/pred length mismatch");
  ConfusionMatrix m(classes);
  for (std::size_t i = 0; i < gt.size(); ++i) m.add(gt[i], pred[i]);
  return m;
}

struct MacroF1Result {
  std::vector<double> per_class;   // percentage points; 0 when unsupported
  std::vector<char> supported;     // ground-truth support > 0
  double macro = 0.0;              // mean over supported classes, pp
};

// F1_c = 2TP / (2TP + FP + FN), in percentage points. The macro average
// runs over classes with ground-truth support only.
inline MacroF1Result macro_f1(const ConfusionMatrix& m) {
  if (m.total() == 0) throw ValidationError("macro_f1: empty confusion");
  MacroF1Result r;
  r.per_class.assign(m.classes, 0.0);
  r.supported.assign(m.classes, 0);
  double sum = 0.0;
  std::size_t supported = 0;
  for (std::size_t c = 0; c < m.classes; ++c) {
    const std::int64_t tp = m.at(c, c);
    const std::int64_t fn = m.row_sum(c) - tp;
    const std::int64_t fp = m.col_sum(c) - tp;
    const std::int64_t denom = 2 * tp + fp + fn;
    const double f1 =
        denom == 0 ? 0.0
                   : 100.0 * 2.0 * static_cast<double>(tp) /
                         static_cast<double>(denom);
    r.per_class[c] = f1;
    if (m.row_sum(c) > 0) {
      r.supported[c] = 1;
      sum += f1;
      ++supported;
    }
  }
  if (supported == 0) throw ValidationError("macro_f1: no supported class");
  r.macro = sum / static_cast<double>(supported);
  return r;
}

inline double mean_macro_f1(const std::vector<double>& per_attribute) {
  if (per_attribute.empty())
    throw ValidationError("mean_macro_f1: no attributes");
  double s = 0.0;
  for (double x : per_attribute) s += x;
  return s / static_cast<double>(per_attribute.size());
}

inline double accuracy(const ConfusionMatrix& m) {
  const std::int64_t t = m.total();
  if (t == 0) throw ValidationError("accuracy: empty confusion");
  return static_cast<double>(m.trace()) / static_cast<double>(t);
}

struct RecallResult {
  std::vector<double> recall;   // TP / (TP + FN), ratio in [0,1]
  std::vector<char> supported;  // row sum > 0
};

inline RecallResult per_class_recall(const ConfusionMatrix& m) {
  RecallResult r;
  r.recall.assign(m.classes, 0.0);
  r.supported.assign(m.classes, 0);
  for (std::size_t c = 0; c < m.classes; ++c) {
    const std::int64_t support = m.row_sum(c);
    if (support == 0) continue;
    r.supported[c] = 1;
    r.recall[c] =
        static_cast<double>(m.at(c, c)) / static_cast<double>(support);
  }
  return r;
}

// Average precision of one binary ranking: sort by score descending (ties
// by original index), AP = mean of precision@k over positive ranks.
// No positives: undefined, excluded by the caller.
inline std::optional<double> average_precision(
    const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw ValidationError("average_precision: length mismatch");
  std::size_t positives = 0;
  for (int y : labels) {
    if (y != 0 && y != 1)
      throw ValidationError("average_precision: labels must be 0/1");
    positives += static_cast<std::size_t>(y);
  }
  if (positives == 0) return std::nullopt;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  double ap = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] == 1) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return ap / static_cast<double>(positives);
}

// Macro one-vs-rest AP over classes with at least one positive.
inline std::optional<double> macro_average_precision(
    const Array& posteriors, const std::vector<int>& labels) {
  if (posteriors.rank() != 2 || posteriors.dim(0) != labels.size())
    throw ValidationError("macro_average_precision: bad posterior shape");
  const std::size_t N = posteriors.dim(0), C = posteriors.dim(1);
  double sum = 0.0;
  std::size_t used = 0;
  std::vector<double> scores(N);
  std::vector<int> binary(N);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t n = 0; n < N; ++n) {
      scores[n] = posteriors.v[n * C + c];
      binary[n] = labels[n] == static_cast<int>(c) ? 1 : 0;
    }
    const auto ap = average_precision(scores, binary);
    if (ap) {
      sum += *ap;
      ++used;
    }
  }
  if (used == 0) return std::nullopt;
  return sum / static_cast<double>(used);
}

// Transitions within sections only; sections shorter than 2 are skipped.
inline CoocMatrix cooccurrence(const std::vector<std::vector<int>>& sections,
                               std::size_t classes) {
  CoocMatrix m(classes);
  for (const auto& labels : sections)
    for (std::size_t t = 0; t + 1 < labels.size(); ++t)
      m.add(labels[t], labels[t + 1]);
  return m;
}

inline std::int64_t offdiag_mass(const SquareCounts& m) {
  return m.total() - m.trace();
}

struct TemporalDiagnostics {
  data::TemporalKind kind = data::TemporalKind::kOther;
  // Single-peak: predicted diagonal mass over non-default classes / total.
  std::optional<double> duplicated_peak_mass;
  // Smooth: predicted off-diagonal mass above the ground-truth level / total.
  std::optional<double> spurious_transition_excess;
};

inline TemporalDiagnostics temporal_diagnostics(
    const CoocMatrix& gt, const CoocMatrix& pred,
    const data::AttributeSpec& attr) {
  if (gt.classes != pred.classes)
    throw ValidationError("temporal_diagnostics: shape mismatch");
  TemporalDiagnostics d;
  d.kind = attr.kind;
  const std::int64_t total = pred.total();
  if (total == 0) return d;
  const bool single = attr.kind == data::TemporalKind::kSinglePeak;
  const bool smooth = attr.kind == data::TemporalKind::kSmooth;
  const bool other = attr.kind == data::TemporalKind::kOther;
  if ((single || other) && attr.default_class) {
    std::int64_t dup = 0;
    for (std::size_t c = 0; c < pred.classes; ++c)
      if (c != *attr.default_class) dup += pred.at(c, c);
    d.duplicated_peak_mass =
        static_cast<double>(dup) / static_cast<double>(total);
  }
  if (smooth || other) {
    const std::int64_t excess =
        std::max<std::int64_t>(0, offdiag_mass(pred) - offdiag_mass(gt));
    d.spurious_transition_excess =
        static_cast<double>(excess) / static_cast<double>(total);
  }
  return d;
}

// --- Report assembly ---------------------------------------------------------

struct AttrEvalInput {
  data::AttributeSpec spec;
  std::vector<std::vector<int>> gt_sections;
  std::vector<std::vector<int>> pred_sections;
  Array posteriors;  // [N, C] in section-major segment order
};

struct AttributeEval {
  std::string name;
  MacroF1Result f1;
  double accuracy = 0.0;
  std::optional<double> macro_ap;
  ConfusionMatrix conf;
  CoocMatrix cooc_gt;
  CoocMatrix cooc_pred;
  TemporalDiagnostics diagnostics;
};

struct EvalReport {
  std::vector<AttributeEval> attributes;
  double mean_macro_f1 = 0.0;
  std::optional<double> mean_ap;
  // Mean over attributes not named in the exclusion list, when one is given.
  std::vector<std::string> excluded;
  std::optional<double> mean_macro_f1_filtered;
  std::size_t segments = 0;
};

inline AttributeEval evaluate_attribute(const AttrEvalInput& in) {
  const std::size_t C = in.spec.class_count();
  std::vector<int> gt, pred;
  for (const auto& s : in.gt_sections) gt.insert(gt.end(), s.begin(), s.end());
  for (const auto& s : in.pred_sections)
    pred.insert(pred.end(), s.begin(), s.end());
  AttributeEval out;
  out.name = in.spec.name;
  out.conf = confusion(gt, pred, C);
  out.f1 = macro_f1(out.conf);
  out.accuracy = accuracy(out.conf);
  out.macro_ap = macro_average_precision(in.posteriors, gt);
  out.cooc_gt = cooccurrence(in.gt_sections, C);
  out.cooc_pred = cooccurrence(in.pred_sections, C);
  out.diagnostics = temporal_diagnostics(out.cooc_gt, out.cooc_pred, in.spec);
  return out;
}

inline EvalReport build_report(const std::vector<AttrEvalInput>& inputs,
                               const std::vector<std::string>& exclude = {}) {
  if (inputs.empty()) throw ValidationError("report: no attributes");
  EvalReport r;
  std::vector<double> macros, filtered;
  double ap_sum = 0.0;
  std::size_t ap_used = 0;
  for (const auto& in : inputs) {
    AttributeEval ae = evaluate_attribute(in);
    macros.push_back(ae.f1.macro);
    const bool excluded =
        std::find(exclude.begin(), exclude.end(), ae.name) != exclude.end();
    if (!excluded) filtered.push_back(ae.f1.macro);
    if (ae.macro_ap) {
      ap_sum += *ae.macro_ap;
      ++ap_used;
    }
    r.attributes.push_back(std::move(ae));
  }
  r.segments = inputs[0].posteriors.dim(0);
  r.mean_macro_f1 = mean_macro_f1(macros);
  if (ap_used > 0) r.mean_ap = ap_sum / static_cast<double>(ap_used);
  if (!exclude.empty()) {
    r.excluded = exclude;
    if (filtered.empty())
      throw ValidationError("report: every attribute excluded");
    r.mean_macro_f1_filtered = mean_macro_f1(filtered);
  }
  return r;
}

inline std::string format_pp(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["segments"] = r.segments;
  j["mean_macro_f1"] = r.mean_macro_f1;
  if (r.mean_ap) j["mean_ap"] = *r.mean_ap;
  if (r.mean_macro_f1_filtered) {
    j["excluded_attributes"] = r.excluded;
    j["mean_macro_f1_filtered"] = *r.mean_macro_f1_filtered;
  }
  j["attributes"] = nlohmann::ordered_json::array();
  for (const auto& a : r.attributes) {
    nlohmann::ordered_json ja;
    ja["name"] = a.name;
    ja["macro_f1"] = a.f1.macro;
    ja["per_class_f1"] = a.f1.per_class;
    ja["accuracy"] = a.accuracy * 100.0;
    if (a.macro_ap) ja["macro_ap"] = *a.macro_ap;
    if (a.diagnostics.duplicated_peak_mass)
      ja["duplicated_peak_mass"] = *a.diagnostics.duplicated_peak_mass;
    if (a.diagnostics.spurious_transition_excess)
      ja["spurious_transition_excess"] =
          *a.diagnostics.spurious_transition_excess;
    j["attributes"].push_back(ja);
  }
  return j;
}

inline std::string render_report_text(const EvalReport& r) {
  std::ostringstream out;
  out << "attribute                          macro-F1   accuracy\n";
  for (const auto& a : r.attributes) {
    out << a.name;
    for (std::size_t i = a.name.size(); i < 35; ++i) out << ' ';
    out << format_pp(a.f1.macro) << "      " << format_pp(a.accuracy * 100.0)
        << "\n";
  }
  out << "mean macro-F1: " << format_pp(r.mean_macro_f1) << "\n";
  if (r.mean_ap) out << "mean AP: " << format_pp(*r.mean_ap * 100.0) << "\n";
  if (r.mean_macro_f1_filtered)
    out << "mean macro-F1 (filtered): " << format_pp(*r.mean_macro_f1_filtered)
        << "\n";
  return out.str();
}

inline std::string cooc_csv(const SquareCounts& m,
                            const std::vector<std::string>& class_names) {
  std::ostringstream out;
  out << "class";
  for (const auto& c : class_names) out << "," << c;
  out << "\n";
  for (std::size_t i = 0; i < m.classes; ++i) {
    out << class_names[i];
    for (std::size_t j = 0; j < m.classes; ++j) out << "," << m.at(i, j);
    out << "\n";
  }
  return out.str();
}

}  // namespace roadseq::eval
