#pragma once

// Stage one: per-segment multi-task recognition. One shared feature grid per
// frame feeds a spatial-pyramid pool (shared across attributes) and one
// attention pool per attribute; each attribute head classifies the
// concatenated descriptor. Multi-frame mode stacks the descriptors of the
// segments at offsets 0, -1, -4, clamped at section starts.

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "roadseq/array.hpp"
#include "roadseq/dataset.hpp"
#include "roadseq/error.hpp"
#include "roadseq/graph.hpp"
#include "roadseq/prediction_stream.hpp"
#include "roadseq/rng.hpp"

namespace roadseq::model {

enum class FramesMode { kSingle, kMulti };

inline constexpr std::array<int, 3> kFrameOffsets = {0, -1, -4};

inline std::string frames_mode_name(FramesMode m) {
  return m == FramesMode::kSingle ? "single" : "multi";
}

inline FramesMode frames_mode_from_string(const std::string& s) {
  if (s == "single") return FramesMode::kSingle;
  if (s == "multi") return FramesMode::kMulti;
  throw ValidationError("unknown frames mode: " + s);
}

struct LocalModelConfig {
  std::size_t h = 6, w = 6, c_f = 8;
  std::vector<std::size_t> spp_grids = {6, 3, 2, 1};
  FramesMode frames = FramesMode::kSingle;
  std::size_t head_hidden = 256;

  std::size_t spp_cells() const {
    std::size_t cells = 0;
    for (std::size_t g : spp_grids) cells += g * g;
    return cells;
  }
  // One frame: attention pool (C_f) then the pyramid pool (C_f * cells).
  std::size_t frame_descriptor_dim() const { return c_f * (1 + spp_cells()); }
  std::size_t frame_count() const {
    return frames == FramesMode::kMulti ? kFrameOffsets.size() : 1;
  }
  std::size_t descriptor_dim() const {
    return frame_descriptor_dim() * frame_count();
  }

  void validate() const {
    if (h == 0 || w == 0 || c_f == 0)
      throw ValidationError("local model: zero feature dimension");
    if (spp_grids.empty()) throw ValidationError("local model: no spp grids");
    for (std::size_t g : spp_grids)
      if (g == 0 || g > h || g > w)
        throw ValidationError("local model: spp grid " + std::to_string(g) +
                              " incompatible with " + std::to_string(h) + "x" +
                              std::to_string(w));
    if (head_hidden == 0) throw ValidationError("local model: zero head width");
  }
};

// Uniform +-1/sqrt(fan_in), the init used for every dense layer here.
inline void fill_uniform_fanin(Array& a, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& x : a.v) x = rng.uniform(-bound, bound);
}

struct LocalModel {
  LocalModelConfig cfg;
  std::vector<data::AttributeSpec> attributes;
  std::vector<Parameter> query;  // per attribute: [c_f]
  std::vector<Parameter> w1, b1; // [D, hidden], [hidden]
  std::vector<Parameter> w2, b2; // [hidden, C_a], [C_a]

  static LocalModel init(const LocalModelConfig& cfg,
                         const std::vector<data::AttributeSpec>& attrs,
                         std::uint64_t seed) {
    cfg.validate();
    if (attrs.empty()) throw ValidationError("local model: no attributes");
    LocalModel m;
    m.cfg = cfg;
    m.attributes = attrs;
    const std::size_t D = cfg.descriptor_dim();
    for (const auto& a : attrs) {
      a.validate();
      const std::size_t C = a.class_count();
      auto mk = [&](const std::string& part, std::vector<std::size_t> shape,
                    std::size_t fan_in) {
        Parameter p;
        p.name = "local." + a.name + "." + part;
        p.value = Array(std::move(shape));
        if (fan_in > 0) {
          Rng rng(derive_seed(seed, p.name));
          fill_uniform_fanin(p.value, fan_in, rng);
        }
        p.grad = Array(p.value.shape);
        return p;
      };
      m.query.push_back(mk("q", {cfg.c_f}, cfg.c_f));
      m.w1.push_back(mk("w1", {D, cfg.head_hidden}, D));
      m.b1.push_back(mk("b1", {cfg.head_hidden}, 0));
      m.w2.push_back(mk("w2", {cfg.head_hidden, C}, cfg.head_hidden));
      m.b2.push_back(mk("b2", {C}, 0));
    }
    return m;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (std::size_t a = 0; a < attributes.size(); ++a) {
      out.push_back(&query[a]);
      out.push_back(&w1[a]);
      out.push_back(&b1[a]);
      out.push_back(&w2[a]);
      out.push_back(&b2[a]);
    }
    return out;
  }
};

// Packs B feature grids into one [B,H,W,C] array, checking dims.
inline Array pack_grids(const LocalModelConfig& cfg,
                        const std::vector<const data::FeatureGrid*>& grids) {
  const std::size_t B = grids.size();
  Array x({B, cfg.h, cfg.w, cfg.c_f});
  const std::size_t per = cfg.h * cfg.w * cfg.c_f;
  for (std::size_t b = 0; b < B; ++b) {
    const auto& g = *grids[b];
    if (g.h != cfg.h || g.w != cfg.w || g.c != cfg.c_f)
      throw ValidationError("feature grid " + std::to_string(g.h) + "x" +
                            std::to_string(g.w) + "x" + std::to_string(g.c) +
                            " does not match model " + std::to_string(cfg.h) +
                            "x" + std::to_string(cfg.w) + "x" +
                            std::to_string(cfg.c_f));
    for (std::size_t i = 0; i < per; ++i)
      x.v[b * per + i] = static_cast<double>(g.values[i]);
  }
  return x;
}

// Grid pointers for one batch of segments at one frame offset, clamped to
// the start of each segment's section.
inline std::vector<const data::FeatureGrid*> frame_grids(
    const data::Dataset& d, const std::vector<std::size_t>& segment_ids,
    int offset) {
  std::vector<const data::FeatureGrid*> out;
  out.reserve(segment_ids.size());
  for (std::size_t id : segment_ids) {
    const auto& seg = d.segments[id];
    long within = static_cast<long>(seg.index) + offset;
    if (within < 0) within = 0;
    const std::size_t base = id - seg.index;  // sections are contiguous
    out.push_back(&d.grid_of(d.segments[base + static_cast<std::size_t>(within)]));
  }
  return out;
}

struct LocalForward {
  std::vector<nn::NodeId> frame_inputs;        // one per frame, [B,H,W,C]
  std::vector<nn::NodeId> descriptors;         // per attribute, [B,D]
  std::vector<nn::NodeId> logits;              // per attribute, [B,C_a]
  std::vector<nn::NodeId> posteriors;          // per attribute, [B,C_a]
};

// Builds the stage-one forward pass for a batch. frame_inputs must already
// be graph nodes of shape [B,H,W,C_f], ordered by kFrameOffsets (or a single
// node in single-frame mode). The pyramid pool of each frame is computed
// once and shared by every attribute branch.
inline LocalForward local_forward(nn::Graph& g, LocalModel& m,
                                  const std::vector<nn::NodeId>& frame_inputs) {
  if (frame_inputs.size() != m.cfg.frame_count())
    throw ValidationError("local forward: expected " +
                          std::to_string(m.cfg.frame_count()) + " frames, got " +
                          std::to_string(frame_inputs.size()));
  LocalForward out;
  out.frame_inputs = frame_inputs;
  std::vector<nn::NodeId> spp(frame_inputs.size());
  for (std::size_t k = 0; k < frame_inputs.size(); ++k)
    spp[k] = g.spp_pool(frame_inputs[k], m.cfg.spp_grids);
  for (std::size_t a = 0; a < m.attributes.size(); ++a) {
    const nn::NodeId q = g.param(m.query[a]);
    std::vector<nn::NodeId> parts;
    for (std::size_t k = 0; k < frame_inputs.size(); ++k) {
      parts.push_back(g.attention_pool(frame_inputs[k], q));
      parts.push_back(spp[k]);
    }
    const nn::NodeId desc = g.concat(parts);
    const nn::NodeId hidden =
        g.tanh_op(g.linear(desc, g.param(m.w1[a]), g.param(m.b1[a])));
    const nn::NodeId logits =
        g.linear(hidden, g.param(m.w2[a]), g.param(m.b2[a]));
    out.descriptors.push_back(desc);
    out.logits.push_back(logits);
    out.posteriors.push_back(g.softmax(logits));
  }
  return out;
}

// Convenience: forward over dataset segments without gradient tracking.
inline LocalForward local_forward_segments(
    nn::Graph& g, LocalModel& m, const data::Dataset& d,
    const std::vector<std::size_t>& segment_ids, bool track_input_grad = false) {
  std::vector<nn::NodeId> inputs;
  const std::size_t frames = m.cfg.frame_count();
  for (std::size_t k = 0; k < frames; ++k) {
    Array x = pack_grids(m.cfg, frame_grids(d, segment_ids, kFrameOffsets[k]));
    inputs.push_back(track_input_grad ? g.leaf(std::move(x))
                                      : g.constant(std::move(x)));
  }
  return local_forward(g, m, inputs);
}

// Runs the model over every segment and emits one record per segment per
// attribute, ordered section -> index -> attribute. Deterministic; batching
// is a throughput choice only (every op is row-independent).
inline std::vector<stream::PredictionRecord> predict_dataset(
    LocalModel& m, const data::Dataset& d, std::size_t batch = 64) {
  if (batch == 0) throw ValidationError("predict: zero batch size");
  std::vector<stream::PredictionRecord> records;
  records.reserve(d.segments.size() * m.attributes.size());
  if (m.attributes.size() != d.manifest.attributes.size())
    throw ValidationError("predict: model/dataset attribute count mismatch");
  for (const auto& span : d.spans) {
    for (std::size_t off = 0; off < span.count; off += batch) {
      const std::size_t n = std::min(batch, span.count - off);
      std::vector<std::size_t> ids(n);
      for (std::size_t i = 0; i < n; ++i) ids[i] = span.first + off + i;
      nn::Graph g;
      const auto fwd = local_forward_segments(g, m, d, ids);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& seg = d.segments[ids[i]];
        for (std::size_t a = 0; a < m.attributes.size(); ++a) {
          const Array& lg = g.value(fwd.logits[a]);
          const std::size_t C = lg.dim(1);
          stream::PredictionRecord r;
          r.section_id = seg.section_id;
          r.index = seg.index;
          r.attribute = m.attributes[a].name;
          r.stage = "local";
          r.logits.assign(lg.v.begin() + static_cast<long>(i * C),
                          lg.v.begin() + static_cast<long>((i + 1) * C));
          r.argmax = stream::argmax_of(r.logits);
          records.push_back(std::move(r));
        }
      }
    }
  }
  return records;
}

// Ground-truth stream: one-hot logits, stage "gt". Same ordering contract.
inline std::vector<stream::PredictionRecord> ground_truth_stream(
    const data::Dataset& d) {
  std::vector<stream::PredictionRecord> records;
  records.reserve(d.segments.size() * d.manifest.attributes.size());
  for (const auto& span : d.spans)
    for (std::size_t i = 0; i < span.count; ++i) {
      const auto& seg = d.segments[span.first + i];
      for (std::size_t a = 0; a < d.manifest.attributes.size(); ++a) {
        stream::PredictionRecord r;
        r.section_id = seg.section_id;
        r.index = seg.index;
        r.attribute = d.manifest.attributes[a].name;
        r.stage = "gt";
        r.logits.assign(d.manifest.attributes[a].class_count(), 0.0);
        r.logits[static_cast<std::size_t>(seg.labels[a])] = 1.0;
        r.argmax = seg.labels[a];
        records.push_back(std::move(r));
      }
    }
  return records;
}

}  // namespace roadseq::model
