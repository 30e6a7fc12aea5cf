#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "roadseq/dataset.hpp"
#include "roadseq/error.hpp"
#include "roadseq/rng.hpp"

namespace roadseq::synth {

// Single-peak regime: positive classes fire at isolated segments with the
// given per-segment rate, never at two consecutive indices.
struct SinglePeakParams {
  double event_rate = 0.05;
};

// Smooth regime: sticky Markov chain. With probability stay_prob the label
// persists, otherwise it is redrawn from the prior (self included), so the
// marginal distribution equals the prior exactly.
struct SmoothParams {
  double stay_prob = 0.95;
  std::vector<double> prior;
};

struct GenAttribute {
  data::AttributeSpec spec;
  std::variant<SinglePeakParams, SmoothParams> regime;
};

struct GeneratorConfig {
  std::size_t num_sections = 10;
  std::size_t segments_per_section = 1000;
  std::vector<GenAttribute> attributes;
  std::size_t h = 6, w = 6, c_f = 8;
  double noise_std = 0.5;
  double leakage_decay = 0.5;   // 0 disables pre-peak leakage
  std::array<double, 3> split_fractions = {0.8, 0.1, 0.1};
  std::uint64_t seed = 1;

  void validate() const {
    if (num_sections == 0 || segments_per_section == 0)
      throw ValidationError("generator: empty sections or segments");
    if (h == 0 || w == 0 || c_f == 0)
      throw ValidationError("generator: zero feature dimension");
    if (noise_std < 0.0)
      throw ValidationError("generator: noise_std must be nonnegative");
    if (leakage_decay < 0.0 || leakage_decay >= 1.0)
      throw ValidationError("generator: leakage_decay must lie in [0,1)");
    if (attributes.empty())
      throw ValidationError("generator: no attributes configured");
    for (const auto& a : attributes) {
      a.spec.validate();
      if (a.spec.kind == data::TemporalKind::kSinglePeak) {
        const auto* p = std::get_if<SinglePeakParams>(&a.regime);
        if (!p)
          throw ValidationError("generator: attribute " + a.spec.name +
                                " is single_peak but lacks event parameters");
        if (p->event_rate < 0.0 || p->event_rate >= 0.5)
          throw ValidationError("generator: event_rate for " + a.spec.name +
                                " must lie in [0, 0.5)");
      } else if (a.spec.kind == data::TemporalKind::kSmooth) {
        const auto* p = std::get_if<SmoothParams>(&a.regime);
        if (!p)
          throw ValidationError("generator: attribute " + a.spec.name +
                                " is smooth but lacks chain parameters");
        if (p->stay_prob <= 0.5 || p->stay_prob > 1.0)
          throw ValidationError("generator: stay_prob for " + a.spec.name +
                                " must lie in (0.5, 1]");
        if (p->prior.size() != a.spec.class_count())
          throw ValidationError("generator: prior size for " + a.spec.name +
                                " does not match class count");
        double s = 0.0;
        for (double x : p->prior) {
          if (x < 0.0)
            throw ValidationError("generator: negative prior entry for " +
                                  a.spec.name);
          s += x;
        }
        if (std::abs(s - 1.0) > 1e-9)
          throw ValidationError("generator: prior for " + a.spec.name +
                                " must sum to 1");
      } else {
        throw ValidationError(
            "generator: only single_peak and smooth attributes are supported");
      }
    }
  }
};

inline int draw_from_prior(const std::vector<double>& prior, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t c = 0; c < prior.size(); ++c) {
    acc += prior[c];
    if (u < acc) return static_cast<int>(c);
  }
  return static_cast<int>(prior.size() - 1);
}

inline std::vector<int> generate_labels(const GenAttribute& attr,
                                        std::size_t length, Rng& rng) {
  std::vector<int> labels(length);
  if (const auto* sp = std::get_if<SinglePeakParams>(&attr.regime)) {
    const int def = static_cast<int>(*attr.spec.default_class);
    const std::size_t classes = attr.spec.class_count();
    std::vector<int> positives;
    for (std::size_t c = 0; c < classes; ++c)
      if (static_cast<int>(c) != def) positives.push_back(static_cast<int>(c));
    bool prev_positive = false;
    for (std::size_t t = 0; t < length; ++t) {
      if (!prev_positive && rng.uniform() < sp->event_rate) {
        labels[t] = positives[rng.below(positives.size())];
        prev_positive = true;
      } else {
        labels[t] = def;
        prev_positive = false;
      }
    }
  } else {
    const auto& sm = std::get<SmoothParams>(attr.regime);
    labels[0] = draw_from_prior(sm.prior, rng);
    for (std::size_t t = 1; t < length; ++t)
      labels[t] = rng.uniform() < sm.stay_prob ? labels[t - 1]
                                               : draw_from_prior(sm.prior, rng);
  }
  return labels;
}

// Unit-norm class direction per (attribute, class), drawn sequentially from
// one dedicated stream so the set is independent of section count.
inline std::vector<std::vector<std::vector<double>>> build_directions(
    const GeneratorConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "directions"));
  const std::size_t dim = cfg.h * cfg.w * cfg.c_f;
  std::vector<std::vector<std::vector<double>>> dirs(cfg.attributes.size());
  for (std::size_t a = 0; a < cfg.attributes.size(); ++a) {
    const std::size_t classes = cfg.attributes[a].spec.class_count();
    dirs[a].resize(classes);
    for (std::size_t c = 0; c < classes; ++c) {
      auto& d = dirs[a][c];
      d.resize(dim);
      double norm = 0.0;
      for (auto& x : d) {
        x = rng.normal();
        norm += x * x;
      }
      norm = std::sqrt(norm);
      if (norm == 0.0) norm = 1.0;
      for (auto& x : d) x /= norm;
    }
  }
  return dirs;
}

constexpr std::size_t kLeakageHorizon = 5;

// Feature grid for one segment: sum of the class directions of all its
// labels, plus decayed directions of upcoming single-peak events within the
// leakage horizon, plus Gaussian noise.
inline std::vector<double> segment_feature_vector(
    const GeneratorConfig& cfg,
    const std::vector<std::vector<std::vector<double>>>& dirs,
    const std::vector<std::vector<int>>& section_labels, std::size_t t,
    Rng& noise_rng) {
  const std::size_t dim = cfg.h * cfg.w * cfg.c_f;
  std::vector<double> acc(dim, 0.0);
  for (std::size_t a = 0; a < cfg.attributes.size(); ++a) {
    const auto& d = dirs[a][static_cast<std::size_t>(section_labels[a][t])];
    for (std::size_t i = 0; i < dim; ++i) acc[i] += d[i];
  }
  if (cfg.leakage_decay > 0.0) {
    const std::size_t len = section_labels[0].size();
    for (std::size_t a = 0; a < cfg.attributes.size(); ++a) {
      if (cfg.attributes[a].spec.kind != data::TemporalKind::kSinglePeak)
        continue;
      const int def = static_cast<int>(*cfg.attributes[a].spec.default_class);
      double scale = 1.0;
      for (std::size_t k = 1; k <= kLeakageHorizon && t + k < len; ++k) {
        scale *= cfg.leakage_decay;
        const int future = section_labels[a][t + k];
        if (future == def) continue;
        const auto& d = dirs[a][static_cast<std::size_t>(future)];
        for (std::size_t i = 0; i < dim; ++i) acc[i] += scale * d[i];
      }
    }
  }
  if (cfg.noise_std > 0.0)
    for (std::size_t i = 0; i < dim; ++i)
      acc[i] += cfg.noise_std * noise_rng.normal();
  return acc;
}

inline std::string section_id_for(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%05zu", index);
  return buf;
}

// Full in-memory dataset: labels and features for every section, plus a
// section-level split. Per-section streams are derived as seed XOR section
// index, so sections are independent of each other.
inline data::Dataset generate_dataset(const GeneratorConfig& cfg) {
  cfg.validate();
  const auto dirs = build_directions(cfg);

  data::Dataset d;
  d.manifest.records_path = "records.jsonl";
  d.manifest.features_path = "features.bin";
  for (const auto& a : cfg.attributes)
    d.manifest.attributes.push_back(a.spec);

  std::vector<std::string> ids(cfg.num_sections);
  for (std::size_t s = 0; s < cfg.num_sections; ++s) {
    ids[s] = section_id_for(s);
    d.manifest.sections.push_back({ids[s], cfg.segments_per_section});
  }
  d.manifest.splits =
      data::split_by_section(ids, cfg.split_fractions, cfg.seed);

  std::array<std::vector<std::string>, 3>& splits = d.manifest.splits;
  std::unordered_map<std::string, data::Split> split_of;
  for (int k = 0; k < 3; ++k)
    for (const auto& id : splits[static_cast<std::size_t>(k)])
      split_of[id] = static_cast<data::Split>(k);

  const std::size_t len = cfg.segments_per_section;
  d.spans.resize(cfg.num_sections);
  for (std::size_t s = 0; s < cfg.num_sections; ++s) {
    const std::uint64_t section_seed = cfg.seed ^ static_cast<std::uint64_t>(s);
    Rng label_rng(derive_seed(section_seed, "labels"));
    Rng noise_rng(derive_seed(section_seed, "noise"));

    std::vector<std::vector<int>> section_labels(cfg.attributes.size());
    for (std::size_t a = 0; a < cfg.attributes.size(); ++a)
      section_labels[a] = generate_labels(cfg.attributes[a], len, label_rng);

    d.spans[s].first = d.segments.size();
    d.spans[s].count = len;
    d.spans[s].split = split_of.at(ids[s]);
    for (std::size_t t = 0; t < len; ++t) {
      data::Segment seg;
      seg.section_id = ids[s];
      seg.index = t;
      seg.feature_ref = d.grids.size();
      seg.labels.resize(cfg.attributes.size());
      for (std::size_t a = 0; a < cfg.attributes.size(); ++a)
        seg.labels[a] = section_labels[a][t];
      d.segments.push_back(std::move(seg));

      const auto vec =
          segment_feature_vector(cfg, dirs, section_labels, t, noise_rng);
      data::FeatureGrid grid;
      grid.h = cfg.h;
      grid.w = cfg.w;
      grid.c = cfg.c_f;
      grid.values.resize(vec.size());
      for (std::size_t i = 0; i < vec.size(); ++i)
        grid.values[i] = static_cast<float>(vec[i]);
      d.grids.push_back(std::move(grid));
    }
  }
  return d;
}

}  // namespace roadseq::synth
