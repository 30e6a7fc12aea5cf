#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "roadseq/array.hpp"
#include "roadseq/error.hpp"

namespace roadseq::losses {

// Predicted posteriors P_n^c for one batch, plus correct labels y_n.
struct BatchPosteriors {
  Array posteriors;         // [N, C]
  std::vector<int> labels;  // length N

  std::size_t size() const { return posteriors.dim(0); }
  std::size_t classes() const { return posteriors.dim(1); }

  void validate() const {
    if (posteriors.rank() != 2)
      throw ValidationError("batch posteriors must be [N,C]");
    const std::size_t N = size(), C = classes();
    if (labels.size() != N)
      throw ValidationError("label count does not match batch size");
    for (std::size_t n = 0; n < N; ++n) {
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) s += posteriors.v[n * C + c];
      if (std::abs(s - 1.0) > 1e-9)
        throw ValidationError("posterior row " + std::to_string(n) +
                              " does not sum to 1");
      if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= C)
        throw ValidationError("label out of range at row " + std::to_string(n));
    }
  }
};

// Guard before the log: zero or negative is a caller bug; tiny positives are
// clamped to 1e-12 so the loss stays finite.
inline double clamped_log_arg(double p) {
  if (p <= 0.0)
    throw ValidationError("correct-class posterior is not positive");
  return std::min(1.0, std::max(1e-12, p));
}

inline std::vector<double> per_example_nll(const BatchPosteriors& b) {
  const std::size_t N = b.size(), C = b.classes();
  std::vector<double> out(N);
  for (std::size_t n = 0; n < N; ++n) {
    const double p =
        b.posteriors.v[n * C + static_cast<std::size_t>(b.labels[n])];
    out[n] = -std::log(clamped_log_arg(p));
  }
  return out;
}

// Plain cross-entropy: the mean negative log of correct-class posteriors,
// equivalently the negative log of their geometric mean.
inline double cross_entropy(const BatchPosteriors& b) {
  const std::vector<double> t = per_example_nll(b);
  double s = 0.0;
  for (double x : t) s += x;
  return s / static_cast<double>(t.size());
}

struct ClassTerm {
  std::int64_t count = 0;  // N_c
  double geomean = 0.0;    // geometric mean of correct-class posteriors
  double term = 0.0;       // (N_c/N) * (-ln geomean)
};

// Per-class decomposition of the cross-entropy via geometric means; the
// terms sum back to cross_entropy up to round-off.
inline std::vector<ClassTerm> class_decomposed_ce(const BatchPosteriors& b) {
  const std::size_t N = b.size(), C = b.classes();
  std::vector<ClassTerm> out(C);
  std::vector<double> logsum(C, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    const std::size_t y = static_cast<std::size_t>(b.labels[n]);
    logsum[y] += std::log(clamped_log_arg(b.posteriors.v[n * C + y]));
    out[y].count += 1;
  }
  for (std::size_t c = 0; c < C; ++c) {
    if (out[c].count == 0) continue;
    const double nc = static_cast<double>(out[c].count);
    out[c].geomean = std::exp(logsum[c] / nc);
    out[c].term = nc / static_cast<double>(N) * -std::log(out[c].geomean);
  }
  return out;
}

enum class WeightSource { kUniform, kInverseFrequency, kRecallBalanced };

// Per-class loss weights for one attribute at one epoch. Classes without
// training support carry present = 0 and weight 0; such classes can never
// appear as labels, which the loss functions enforce.
struct ClassWeights {
  std::vector<double> weights;
  std::vector<char> present;
  WeightSource source = WeightSource::kUniform;
  std::size_t epoch = 0;
};

inline ClassWeights uniform_weights(std::size_t classes) {
  ClassWeights w;
  w.weights.assign(classes, 1.0);
  w.present.assign(classes, 1);
  w.source = WeightSource::kUniform;
  return w;
}

// w_c = N / N_c, the inverse relative frequency.
inline ClassWeights inverse_frequency_weights(
    const std::vector<std::int64_t>& counts) {
  std::int64_t total = 0;
  for (std::int64_t c : counts) {
    if (c < 0) throw ValidationError("negative class count");
    total += c;
  }
  if (total == 0) throw ValidationError("no examples in class counts");
  ClassWeights w;
  w.weights.assign(counts.size(), 0.0);
  w.present.assign(counts.size(), 0);
  w.source = WeightSource::kInverseFrequency;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) continue;
    w.weights[c] =
        static_cast<double>(total) / static_cast<double>(counts[c]);
    w.present[c] = 1;
  }
  return w;
}

// w_c = (N/N_c)(1 - R_c) + epsilon. Recall 0 recovers inverse frequency
// (plus epsilon); recall 1 leaves only epsilon.
inline ClassWeights recall_weights(const std::vector<std::int64_t>& counts,
                                   const std::vector<double>& recalls,
                                   double epsilon = 1e-4) {
  if (recalls.size() != counts.size())
    throw ValidationError("recall table size does not match class count");
  std::int64_t total = 0;
  for (std::int64_t c : counts) {
    if (c < 0) throw ValidationError("negative class count");
    total += c;
  }
  if (total == 0) throw ValidationError("no examples in class counts");
  ClassWeights w;
  w.weights.assign(counts.size(), 0.0);
  w.present.assign(counts.size(), 0);
  w.source = WeightSource::kRecallBalanced;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) continue;
    const double r = recalls[c];
    if (r < 0.0 || r > 1.0)
      throw ValidationError("recall out of [0,1] for class " +
                            std::to_string(c));
    w.weights[c] = static_cast<double>(total) /
                       static_cast<double>(counts[c]) * (1.0 - r) +
                   epsilon;
    w.present[c] = 1;
  }
  return w;
}

// Maps class weights to per-example weights through the labels.
inline std::vector<double> example_weights(const ClassWeights& w,
                                           const std::vector<int>& labels) {
  std::vector<double> out(labels.size());
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const std::size_t y = static_cast<std::size_t>(labels[n]);
    if (y >= w.weights.size() || !w.present[y])
      throw ValidationError("label class " + std::to_string(y) +
                            " has no weight (zero training support)");
    out[n] = w.weights[y];
  }
  return out;
}

// Weight-sum-normalized weighted cross-entropy:
// (-sum_n w_{y_n} ln P_n) / (sum_n w_{y_n}). Invariant to global weight
// scale; uniform weights reduce it to plain cross-entropy.
inline double multitask_recall_ce(const BatchPosteriors& b,
                                  const ClassWeights& w) {
  const std::vector<double> ew = example_weights(w, b.labels);
  const std::vector<double> nll = per_example_nll(b);
  double num = 0.0, den = 0.0;
  for (std::size_t n = 0; n < nll.size(); ++n) {
    num += ew[n] * nll[n];
    den += ew[n];
  }
  if (den <= 0.0) throw ValidationError("weight sum is zero");
  return num / den;
}

// Batch-size-normalized weighted cross-entropy: (1/N) sum_n w_{y_n}(-ln P_n);
// the inverse-frequency loss uses this normalization.
inline double weighted_ce_batch_norm(const BatchPosteriors& b,
                                     const ClassWeights& w) {
  const std::vector<double> ew = example_weights(w, b.labels);
  const std::vector<double> nll = per_example_nll(b);
  double num = 0.0;
  for (std::size_t n = 0; n < nll.size(); ++n) num += ew[n] * nll[n];
  return num / static_cast<double>(nll.size());
}

// Total loss across attributes: unweighted mean.
inline double multitask_total_loss(const std::vector<double>& per_attribute) {
  if (per_attribute.empty())
    throw ValidationError("multitask total needs at least one loss");
  double s = 0.0;
  for (double x : per_attribute) s += x;
  return s / static_cast<double>(per_attribute.size());
}

}  // namespace roadseq::losses
