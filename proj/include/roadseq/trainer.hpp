#pragma once

// Optimization for both stages: Adam with decoupled weight decay, a
// multiplicative learning-rate schedule, per-epoch validation recall feeding
// the recall-balanced class weights, and deterministic batching. Stage one
// selects per attribute head (heads share no parameters); stage two keeps
// the epoch with the best validation macro-F1. Earliest epoch wins ties.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "roadseq/dataset.hpp"
#include "roadseq/error.hpp"
#include "roadseq/eval.hpp"
#include "roadseq/local_model.hpp"
#include "roadseq/losses.hpp"
#include "roadseq/rng.hpp"
#include "roadseq/seq_model.hpp"

namespace roadseq::train {

// --- Adam with decoupled weight decay ---------------------------------------

struct AdamState {
  std::vector<Array> m, v;  // parallel to the parameter list
  std::int64_t t = 0;

  static AdamState for_params(const std::vector<Parameter*>& params) {
    AdamState s;
    for (const auto* p : params) {
      s.m.emplace_back(p->value.shape);
      s.v.emplace_back(p->value.shape);
    }
    return s;
  }
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// Decay first (p -= lr*wd*p), then the bias-corrected Adam delta with eps
// added outside the square root.
inline void adam_step(const std::vector<Parameter*>& params, AdamState& st,
                      double lr, double weight_decay) {
  if (params.size() != st.m.size())
    throw ValidationError("adam: state/parameter count mismatch");
  st.t += 1;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (!p.grad.all_finite())
      throw NumericError("non-finite gradient in " + p.name);
    for (std::size_t j = 0; j < p.value.numel(); ++j) {
      const double g = p.grad.v[j];
      p.value.v[j] -= lr * weight_decay * p.value.v[j];
      st.m[i].v[j] = kAdamBeta1 * st.m[i].v[j] + (1.0 - kAdamBeta1) * g;
      st.v[i].v[j] = kAdamBeta2 * st.v[i].v[j] + (1.0 - kAdamBeta2) * g * g;
      const double mhat = st.m[i].v[j] / bc1;
      const double vhat = st.v[i].v[j] / bc2;
      p.value.v[j] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
    }
  }
}

// --- Configuration -----------------------------------------------------------

enum class LossMode { kCE, kIFW, kRecallMT };

inline std::string loss_mode_name(LossMode m) {
  switch (m) {
    case LossMode::kCE: return "ce";
    case LossMode::kIFW: return "ifw";
    case LossMode::kRecallMT: return "recall-mt";
  }
  throw ValidationError("bad loss mode");
}

inline LossMode loss_mode_from_string(const std::string& s) {
  if (s == "ce") return LossMode::kCE;
  if (s == "ifw") return LossMode::kIFW;
  if (s == "recall-mt") return LossMode::kRecallMT;
  throw ValidationError("unknown loss mode: " + s);
}

// Stage-one checkpoint selection granularity. Attribute heads share no
// parameters, so selecting each head at its own best-validation epoch is the
// whole-model rule applied to the independent per-attribute models; it is
// opt-in because the whole-model rule is the documented default.
enum class Selection { kBestMean, kPerAttribute };

inline Selection selection_from_string(const std::string& s) {
  if (s == "best-mean") return Selection::kBestMean;
  if (s == "per-attribute") return Selection::kPerAttribute;
  throw ValidationError("unknown selection mode: " + s);
}

struct TrainConfig {
  double lr = 1e-5;
  double weight_decay = 1e-3;
  std::size_t batch_size = 12;
  std::size_t epochs = 15;
  double lr_decay = 0.88;
  LossMode loss = LossMode::kRecallMT;
  Selection selection = Selection::kBestMean;
  std::uint64_t seed = 1;
  std::size_t eval_batch = 64;

  static TrainConfig local_defaults() { return TrainConfig{}; }
  static TrainConfig seq_defaults() {
    TrainConfig c;
    c.lr = 5e-4;
    c.weight_decay = 1e-4;
    c.batch_size = 32;
    c.epochs = 10;
    c.lr_decay = 1.0;
    return c;
  }

  void validate() const {
    if (lr <= 0.0) throw ValidationError("train: lr must be positive");
    if (weight_decay < 0.0) throw ValidationError("train: negative weight decay");
    if (batch_size == 0) throw ValidationError("train: zero batch size");
    if (epochs == 0) throw ValidationError("train: zero epochs");
    if (lr_decay <= 0.0 || lr_decay > 1.0)
      throw ValidationError("train: lr decay must be in (0,1]");
  }
};

// Validation recall with carry-forward: classes with zero validation support
// keep their previous value.
inline void update_recall_table(std::vector<double>& table,
                                const eval::ConfusionMatrix& m) {
  const auto r = eval::per_class_recall(m);
  if (table.size() != m.classes)
    throw ValidationError("recall table size mismatch");
  for (std::size_t c = 0; c < m.classes; ++c)
    if (r.supported[c]) table[c] = r.recall[c];
}

// --- Logging -----------------------------------------------------------------

namespace detail {

inline std::string fmt(const char* spec, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, x);
  return buf;
}

inline void log_weight_table(std::string& log, const std::string& stage,
                             std::size_t epoch, const data::AttributeSpec& a,
                             const std::vector<std::int64_t>& counts,
                             const std::vector<double>& recall,
                             const losses::ClassWeights& w) {
  for (std::size_t c = 0; c < a.class_count(); ++c) {
    if (!w.present[c]) continue;
    log += "weights stage=" + stage + " epoch=" + std::to_string(epoch) +
           " attr=" + a.name + " class=" + a.classes[c] +
           " n=" + std::to_string(counts[c]) +
           " recall=" + fmt("%.6f", recall[c]) + " w=" + fmt("%.8e", w.weights[c]) +
           "\n";
  }
}

// Eq(5) with uniform weights must equal plain cross-entropy; checked on one
// probe batch per epoch when the weight machinery is bypassed.
inline void ce_probe(const Array& posterior, const std::vector<int>& labels,
                     double uniform_loss) {
  losses::BatchPosteriors b;
  b.labels = labels;
  b.posteriors = posterior;
  // Saturated softmax rows can underflow to an exact zero; the loss node
  // clamps those to 1e-12, so the reference must see the same floor.
  for (double& p : b.posteriors.v) p = std::max(p, 1e-12);
  const double ce = losses::cross_entropy(b);
  if (std::abs(ce - uniform_loss) > 1e-12)
    throw NumericError("uniform-weight loss departed from cross-entropy: " +
                       fmt("%.3e", std::abs(ce - uniform_loss)));
}

}  // namespace detail

// --- Stage one ---------------------------------------------------------------

struct TrainResult {
  std::size_t best_epoch = 0;        // 1-based
  double best_mean_val_f1 = 0.0;     // percentage points
  std::string log;
};

// Argmax predictions for the given segments, one vector per attribute.
inline std::vector<std::vector<int>> local_argmax(
    model::LocalModel& m, const data::Dataset& d,
    const std::vector<std::size_t>& ids, std::size_t batch) {
  std::vector<std::vector<int>> out(m.attributes.size());
  for (auto& v : out) v.reserve(ids.size());
  for (std::size_t off = 0; off < ids.size(); off += batch) {
    const std::size_t n = std::min(batch, ids.size() - off);
    const std::vector<std::size_t> chunk(ids.begin() + static_cast<long>(off),
                                         ids.begin() + static_cast<long>(off + n));
    nn::Graph g;
    const auto fwd = model::local_forward_segments(g, m, d, chunk);
    for (std::size_t a = 0; a < m.attributes.size(); ++a) {
      const Array& lg = g.value(fwd.logits[a]);
      const std::size_t C = lg.dim(1);
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < C; ++c)
          if (lg.v[i * C + c] > lg.v[i * C + best]) best = c;
        out[a].push_back(static_cast<int>(best));
      }
    }
  }
  return out;
}

// Per-epoch class weights for one attribute under the chosen loss mode.
inline losses::ClassWeights epoch_weights(LossMode mode,
                                          const std::vector<std::int64_t>& counts,
                                          const std::vector<double>& recall) {
  switch (mode) {
    case LossMode::kCE: return losses::uniform_weights(counts.size());
    case LossMode::kIFW: return losses::inverse_frequency_weights(counts);
    case LossMode::kRecallMT: return losses::recall_weights(counts, recall);
  }
  throw ValidationError("bad loss mode");
}

inline nn::NllNorm norm_for(LossMode mode) {
  // Inverse-frequency weighting keeps the 1/N normalization; the
  // recall-balanced loss divides by the batch weight sum. Uniform weights
  // make the two identical.
  return mode == LossMode::kIFW ? nn::NllNorm::kBatchSize
                                : nn::NllNorm::kSumWeights;
}

// Trains the stage-one model in place; on return the parameters hold the
// best-validation epoch. All attributes are supervised on every batch and
// the total loss is the mean of the per-attribute losses.
inline TrainResult train_local(model::LocalModel& m, const data::Dataset& d,
                               const TrainConfig& cfg) {
  cfg.validate();
  const auto train_ids = d.segment_indices_in(data::Split::kTrain);
  const auto val_ids = d.segment_indices_in(data::Split::kVal);
  if (train_ids.empty()) throw ValidationError("train: empty train split");
  if (val_ids.empty()) throw ValidationError("train: empty val split");
  const std::size_t A = m.attributes.size();
  if (A != d.manifest.attributes.size())
    throw ValidationError("train: model/dataset attribute mismatch");

  std::vector<std::vector<std::int64_t>> counts(A);
  for (std::size_t a = 0; a < A; ++a) {
    const auto cc = data::class_frequencies(d, a, train_ids);
    counts[a].assign(cc.counts.begin(), cc.counts.end());
  }
  std::vector<std::vector<double>> recall(A);
  for (std::size_t a = 0; a < A; ++a)
    recall[a].assign(m.attributes[a].class_count(), 0.0);

  const auto params = m.parameters();
  auto adam = AdamState::for_params(params);
  TrainResult result;
  double lr = cfg.lr;

  // Under per-attribute selection every head keeps the epoch where its own
  // validation macro-F1 peaked; under best-mean selection the whole
  // parameter set comes from the epoch with the best validation mean
  // macro-F1. Earliest epoch wins ties either way.
  const bool per_attr = cfg.selection == Selection::kPerAttribute;
  const auto attr_params = [&m](std::size_t a) {
    return std::array<Parameter*, 5>{&m.query[a], &m.w1[a], &m.b1[a],
                                     &m.w2[a], &m.b2[a]};
  };
  std::vector<double> best_attr_f1(A, -1.0);
  std::vector<std::size_t> best_attr_epoch(A, 0);
  std::vector<std::array<Array, 5>> best_attr_values(A);
  std::vector<Array> best_values;
  double best_mean = -1.0;

  std::vector<std::size_t> order = train_ids;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<losses::ClassWeights> weights(A);
    for (std::size_t a = 0; a < A; ++a) {
      weights[a] = epoch_weights(cfg.loss, counts[a], recall[a]);
      detail::log_weight_table(result.log, "local", epoch, m.attributes[a],
                               counts[a], recall[a], weights[a]);
    }

    Rng shuffle_rng(derive_seed(cfg.seed, "epoch_shuffle", epoch));
    shuffle_rng.shuffle(order);

    std::vector<double> loss_sum(A, 0.0);
    std::size_t batches = 0;
    for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - off);
      const std::vector<std::size_t> chunk(
          order.begin() + static_cast<long>(off),
          order.begin() + static_cast<long>(off + n));
      nn::Graph g;
      const auto fwd = model::local_forward_segments(g, m, d, chunk);
      std::vector<nn::NodeId> terms(A);
      for (std::size_t a = 0; a < A; ++a) {
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i)
          labels[i] = d.segments[chunk[i]].labels[a];
        const auto ex = losses::example_weights(weights[a], labels);
        terms[a] = g.weighted_nll(fwd.posteriors[a], labels, ex,
                                  norm_for(cfg.loss));
        const double term_value = g.value(terms[a]).v[0];
        loss_sum[a] += term_value;
        if (cfg.loss == LossMode::kCE && off == 0)
          detail::ce_probe(g.value(fwd.posteriors[a]), labels, term_value);
      }
      const nn::NodeId total = g.mean_scalars(terms);
      if (!std::isfinite(g.value(total).v[0]))
        throw NumericError("non-finite training loss");
      g.backward(total);
      adam_step(params, adam, lr, cfg.weight_decay);
      ++batches;
    }

    const auto preds = local_argmax(m, d, val_ids, cfg.eval_batch);
    double mean_f1 = 0.0;
    for (std::size_t a = 0; a < A; ++a) {
      std::vector<int> gt(val_ids.size());
      for (std::size_t i = 0; i < val_ids.size(); ++i)
        gt[i] = d.segments[val_ids[i]].labels[a];
      const auto cm =
          eval::confusion(gt, preds[a], m.attributes[a].class_count());
      update_recall_table(recall[a], cm);
      const double f1 = eval::macro_f1(cm).macro;
      mean_f1 += f1;
      if (per_attr && f1 > best_attr_f1[a]) {
        best_attr_f1[a] = f1;
        best_attr_epoch[a] = epoch;
        const auto group = attr_params(a);
        for (std::size_t i = 0; i < group.size(); ++i)
          best_attr_values[a][i] = group[i]->value;
      }
      result.log += "train stage=local epoch=" + std::to_string(epoch) +
                    " attr=" + m.attributes[a].name +
                    " lr=" + detail::fmt("%.8e", lr) +
                    " loss=" + detail::fmt("%.8e", loss_sum[a] /
                                            static_cast<double>(batches)) +
                    " val_macro_f1=" + detail::fmt("%.4f", f1) + "\n";
    }
    mean_f1 /= static_cast<double>(A);
    if (result.best_epoch == 0 || mean_f1 > best_mean) {
      result.best_epoch = epoch;
      best_mean = mean_f1;
      if (!per_attr) {
        best_values.clear();
        for (const auto* p : params) best_values.push_back(p->value);
      }
    }
    result.log += "epoch stage=local epoch=" + std::to_string(epoch) +
                  " mean_val_macro_f1=" + detail::fmt("%.4f", mean_f1) +
                  " best=" + std::to_string(result.best_epoch) + "\n";
    lr *= cfg.lr_decay;
  }

  if (per_attr) {
    result.best_mean_val_f1 = 0.0;
    for (std::size_t a = 0; a < A; ++a) {
      const auto group = attr_params(a);
      for (std::size_t i = 0; i < group.size(); ++i)
        group[i]->value = best_attr_values[a][i];
      result.best_mean_val_f1 += best_attr_f1[a];
      result.log += "done stage=local attr=" + m.attributes[a].name +
                    " best_epoch=" + std::to_string(best_attr_epoch[a]) +
                    " best_val_macro_f1=" +
                    detail::fmt("%.4f", best_attr_f1[a]) + "\n";
    }
    result.best_mean_val_f1 /= static_cast<double>(A);
  } else {
    for (std::size_t i = 0; i < params.size(); ++i)
      params[i]->value = best_values[i];
    result.best_mean_val_f1 = best_mean;
  }
  result.log += "done stage=local best_epoch=" +
                std::to_string(result.best_epoch) + " best_mean_val_macro_f1=" +
                detail::fmt("%.4f", result.best_mean_val_f1) + "\n";
  return result;
}

// --- Stage two ---------------------------------------------------------------

// Ground-truth labels of one attribute for one section.
inline std::vector<int> section_labels(const data::Dataset& d,
                                       std::size_t section_index,
                                       std::size_t attribute_index) {
  const auto& span = d.spans[section_index];
  std::vector<int> out(span.count);
  for (std::size_t i = 0; i < span.count; ++i)
    out[i] = d.segments[span.first + i].labels[attribute_index];
  return out;
}

// Argmax predictions of the enhancer across the given sections (flattened in
// section order), against the local stream's windows.
inline std::vector<int> seq_argmax(model::SeqEnhancer& m,
                                   const stream::StreamIndex& index,
                                   const std::vector<std::string>& sections,
                                   std::size_t batch) {
  std::vector<int> out;
  for (const auto& s : sections)
    for (const auto& r : model::enhance_section(m, index.track(m.attr.name, s),
                                                s, batch))
      out.push_back(r.argmax);
  return out;
}

// Trains one attribute's enhancer in place against the local prediction
// stream; windows centered on train-split segments, labels from the dataset.
inline TrainResult train_seq(model::SeqEnhancer& m, const data::Dataset& d,
                             const stream::StreamIndex& local_stream,
                             const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t attr_index = d.manifest.attribute_index(m.attr.name);
  const std::size_t C = m.attr.class_count();

  struct Center {
    const stream::SectionTrack* track;
    std::size_t t;
    int label;
  };
  std::vector<Center> centers;
  std::vector<std::string> val_sections;
  std::vector<std::int64_t> counts(C, 0);
  for (std::size_t s = 0; s < d.spans.size(); ++s) {
    const auto& id = d.manifest.sections[s].id;
    if (d.spans[s].split == data::Split::kTrain) {
      const auto& track = local_stream.track(m.attr.name, id);
      const auto labels = section_labels(d, s, attr_index);
      if (track.length() != labels.size())
        throw ValidationError("train: stream/section length mismatch for " + id);
      for (std::size_t t = 0; t < labels.size(); ++t) {
        centers.push_back({&track, t, labels[t]});
        counts[static_cast<std::size_t>(labels[t])]++;
      }
    } else if (d.spans[s].split == data::Split::kVal) {
      val_sections.push_back(id);
    }
  }
  if (centers.empty()) throw ValidationError("train: empty train split");
  if (val_sections.empty()) throw ValidationError("train: empty val split");

  std::vector<double> recall(C, 0.0);
  const auto params = m.parameters();
  auto adam = AdamState::for_params(params);
  TrainResult result;
  std::vector<Array> best_values;
  double lr = cfg.lr;

  std::vector<std::size_t> order(centers.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto weights = epoch_weights(cfg.loss, counts, recall);
    detail::log_weight_table(result.log, "seq", epoch, m.attr, counts, recall,
                             weights);

    Rng shuffle_rng(derive_seed(cfg.seed, "epoch_shuffle", epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - off);
      std::vector<model::WindowRef> windows(n);
      std::vector<int> labels(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& c = centers[order[off + i]];
        windows[i] = {c.track, c.t};
        labels[i] = c.label;
      }
      const auto wb = model::build_window_batch(m.cfg, C, windows);
      nn::Graph g;
      const auto fwd = model::seq_forward(g, m, wb);
      const auto ex = losses::example_weights(weights, labels);
      const nn::NodeId loss =
          g.weighted_nll(fwd.posterior, labels, ex, norm_for(cfg.loss));
      const double loss_value = g.value(loss).v[0];
      if (!std::isfinite(loss_value))
        throw NumericError("non-finite training loss");
      if (cfg.loss == LossMode::kCE && off == 0)
        detail::ce_probe(g.value(fwd.posterior), labels, loss_value);
      loss_sum += loss_value;
      g.backward(loss);
      adam_step(params, adam, lr, cfg.weight_decay);
      ++batches;
    }

    std::vector<int> gt;
    for (const auto& s : val_sections) {
      const std::size_t si = d.manifest.section_index(s);
      const auto labels = section_labels(d, si, attr_index);
      gt.insert(gt.end(), labels.begin(), labels.end());
    }
    const auto pred = seq_argmax(m, local_stream, val_sections, cfg.eval_batch);
    const auto cm = eval::confusion(gt, pred, C);
    update_recall_table(recall, cm);
    const double f1 = eval::macro_f1(cm).macro;
    result.log += "train stage=seq epoch=" + std::to_string(epoch) +
                  " attr=" + m.attr.name + " lr=" + detail::fmt("%.8e", lr) +
                  " loss=" + detail::fmt("%.8e",
                                         loss_sum / static_cast<double>(batches)) +
                  " val_macro_f1=" + detail::fmt("%.4f", f1) + "\n";
    if (result.best_epoch == 0 || f1 > result.best_mean_val_f1) {
      result.best_epoch = epoch;
      result.best_mean_val_f1 = f1;
      best_values.clear();
      for (const auto* p : params) best_values.push_back(p->value);
    }
    result.log += "epoch stage=seq epoch=" + std::to_string(epoch) +
                  " mean_val_macro_f1=" + detail::fmt("%.4f", f1) +
                  " best=" + std::to_string(result.best_epoch) + "\n";
    lr *= cfg.lr_decay;
  }

  for (std::size_t i = 0; i < params.size(); ++i)
    params[i]->value = best_values[i];
  result.log += "done stage=seq best_epoch=" + std::to_string(result.best_epoch) +
                " best_mean_val_macro_f1=" +
                detail::fmt("%.4f", result.best_mean_val_f1) + "\n";
  return result;
}

}  // namespace roadseq::train
