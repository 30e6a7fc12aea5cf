#pragma once

// Stage two: per-attribute sequential enhancement. A stacked bidirectional
// LSTM reads a 21-segment window of stage-one logits concatenated with the
// embedding of each segment's winning class, and re-classifies the center
// segment. Windows clamp at section boundaries and never carry state across
// centers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <string>
#include <vector>

#include "roadseq/array.hpp"
#include "roadseq/dataset.hpp"
#include "roadseq/error.hpp"
#include "roadseq/graph.hpp"
#include "roadseq/prediction_stream.hpp"
#include "roadseq/rng.hpp"

namespace roadseq::model {

struct SeqEnhancerConfig {
  std::size_t half_window = 10;  // window covers t-10 .. t+10
  std::size_t num_layers = 4;
  std::size_t hidden = 128;

  std::size_t window() const { return 2 * half_window + 1; }
  // Last fwd/bwd hidden state of every layer, plus the last layer's
  // bidirectional output at the center position.
  std::size_t descriptor_dim() const {
    return num_layers * 2 * hidden + 2 * hidden;
  }

  void validate() const {
    if (num_layers == 0) throw ValidationError("enhancer: zero layers");
    if (hidden == 0) throw ValidationError("enhancer: zero hidden size");
  }
};

inline std::size_t embedding_dim(std::size_t classes) {
  return std::max<std::size_t>(4, classes);
}

struct SeqEnhancer {
  SeqEnhancerConfig cfg;
  data::AttributeSpec attr;
  Parameter embedding;  // [C, d_e]
  struct Layer {
    Parameter w_ih_f, w_hh_f, b_f;  // forward direction
    Parameter w_ih_b, w_hh_b, b_b;  // backward direction
  };
  std::vector<Layer> layers;
  Parameter w_out, b_out;

  std::size_t input_dim(std::size_t layer) const {
    return layer == 0 ? attr.class_count() + embedding_dim(attr.class_count())
                      : 2 * cfg.hidden;
  }

  static SeqEnhancer init(const SeqEnhancerConfig& cfg,
                          const data::AttributeSpec& attr,
                          std::uint64_t seed) {
    cfg.validate();
    attr.validate();
    SeqEnhancer m;
    m.cfg = cfg;
    m.attr = attr;
    const std::size_t C = attr.class_count();
    const std::size_t d_e = embedding_dim(C);
    const std::size_t H = cfg.hidden;
    const std::string base = "seq." + attr.name + ".";

    m.embedding = Parameter(base + "emb", Array({C, d_e}));
    {
      Rng rng(derive_seed(seed, m.embedding.name));
      for (auto& x : m.embedding.value.v) x = rng.normal(0.0, 0.1);
    }

    // LSTM weights uniform +-1/sqrt(hidden); forget-gate bias 1, rest 0.
    auto lstm_weight = [&](const std::string& name,
                           std::vector<std::size_t> shape) {
      Parameter p(name, Array(std::move(shape)));
      Rng rng(derive_seed(seed, p.name));
      const double bound = 1.0 / std::sqrt(static_cast<double>(H));
      for (auto& x : p.value.v) x = rng.uniform(-bound, bound);
      return p;
    };
    auto lstm_bias = [&](const std::string& name) {
      Parameter p(name, Array({4 * H}));
      for (std::size_t i = H; i < 2 * H; ++i) p.value.v[i] = 1.0;
      return p;
    };
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      const std::size_t in = l == 0 ? C + d_e : 2 * H;
      const std::string lb = base + "l" + std::to_string(l) + ".";
      Layer layer;
      layer.w_ih_f = lstm_weight(lb + "f.w_ih", {in, 4 * H});
      layer.w_hh_f = lstm_weight(lb + "f.w_hh", {H, 4 * H});
      layer.b_f = lstm_bias(lb + "f.b");
      layer.w_ih_b = lstm_weight(lb + "b.w_ih", {in, 4 * H});
      layer.w_hh_b = lstm_weight(lb + "b.w_hh", {H, 4 * H});
      layer.b_b = lstm_bias(lb + "b.b");
      m.layers.push_back(std::move(layer));
    }

    const std::size_t D = cfg.descriptor_dim();
    m.w_out = Parameter(base + "out.w", Array({D, C}));
    {
      Rng rng(derive_seed(seed, m.w_out.name));
      const double bound = 1.0 / std::sqrt(static_cast<double>(D));
      for (auto& x : m.w_out.value.v) x = rng.uniform(-bound, bound);
    }
    m.b_out = Parameter(base + "out.b", Array({C}));
    return m;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out = {&embedding};
    for (auto& l : layers) {
      out.push_back(&l.w_ih_f);
      out.push_back(&l.w_hh_f);
      out.push_back(&l.b_f);
      out.push_back(&l.w_ih_b);
      out.push_back(&l.w_hh_b);
      out.push_back(&l.b_b);
    }
    out.push_back(&w_out);
    out.push_back(&b_out);
    return out;
  }
};

// One window center within a section track.
struct WindowRef {
  const stream::SectionTrack* track = nullptr;
  std::size_t center = 0;
};

// Time-major batch of windows: per position, the logits rows and the
// winning-class indices that select embedding rows.
struct WindowBatch {
  std::vector<Array> logit_rows;          // T arrays of [B, C]
  std::vector<std::vector<int>> indices;  // T index vectors of length B
};

inline WindowBatch build_window_batch(const SeqEnhancerConfig& cfg,
                                      std::size_t classes,
                                      const std::vector<WindowRef>& windows) {
  const std::size_t T = cfg.window();
  const std::size_t B = windows.size();
  if (B == 0) throw ValidationError("window batch: empty");
  WindowBatch wb;
  wb.logit_rows.reserve(T);
  wb.indices.assign(T, std::vector<int>(B));
  const long half = static_cast<long>(cfg.half_window);
  for (std::size_t t = 0; t < T; ++t) wb.logit_rows.emplace_back(Array({B, classes}));
  for (std::size_t b = 0; b < B; ++b) {
    const auto& track = *windows[b].track;
    const long len = static_cast<long>(track.length());
    if (len == 0) throw ValidationError("window batch: empty section");
    if (windows[b].center >= track.length())
      throw ValidationError("window batch: center out of range");
    for (std::size_t t = 0; t < T; ++t) {
      long i = static_cast<long>(windows[b].center) - half + static_cast<long>(t);
      i = std::clamp(i, 0L, len - 1);
      const auto& row = track.logits[static_cast<std::size_t>(i)];
      if (row.size() != classes)
        throw ValidationError("window batch: logit width " +
                              std::to_string(row.size()) + " != class count " +
                              std::to_string(classes));
      for (std::size_t c = 0; c < classes; ++c)
        wb.logit_rows[t].v[b * classes + c] = row[c];
      wb.indices[t][b] = track.argmax[static_cast<std::size_t>(i)];
    }
  }
  return wb;
}

struct SeqForward {
  nn::NodeId logits = 0;
  nn::NodeId posterior = 0;
};

// Stacked bidirectional pass over one window batch. Layer inputs beyond the
// first are the concatenated bidirectional outputs of the previous layer.
inline SeqForward seq_forward(nn::Graph& g, SeqEnhancer& m,
                              const WindowBatch& wb) {
  const std::size_t T = m.cfg.window();
  const std::size_t H = m.cfg.hidden;
  const std::size_t C = m.attr.class_count();
  if (wb.logit_rows.size() != T || wb.indices.size() != T)
    throw ValidationError("seq forward: window length mismatch");
  const std::size_t B = wb.logit_rows[0].dim(0);

  const nn::NodeId emb = g.param(m.embedding);
  std::vector<nn::NodeId> xs(T);
  for (std::size_t t = 0; t < T; ++t)
    xs[t] = g.concat({g.constant(wb.logit_rows[t]),
                      g.embedding_lookup(emb, wb.indices[t])});

  std::vector<nn::NodeId> descriptor_parts;
  std::vector<nn::NodeId> hf(T), hb(T);
  for (std::size_t l = 0; l < m.cfg.num_layers; ++l) {
    auto& lp = m.layers[l];
    const nn::NodeId wif = g.param(lp.w_ih_f), whf = g.param(lp.w_hh_f),
                     bf = g.param(lp.b_f);
    nn::NodeId h = g.constant(Array({B, H})), c = g.constant(Array({B, H}));
    for (std::size_t t = 0; t < T; ++t) {
      const nn::NodeId state = g.lstm_step(xs[t], h, c, wif, whf, bf);
      h = g.slice_cols(state, 0, H);
      c = g.slice_cols(state, H, H);
      hf[t] = h;
    }
    const nn::NodeId wib = g.param(lp.w_ih_b), whb = g.param(lp.w_hh_b),
                     bb = g.param(lp.b_b);
    h = g.constant(Array({B, H}));
    c = g.constant(Array({B, H}));
    for (std::size_t t = T; t-- > 0;) {
      const nn::NodeId state = g.lstm_step(xs[t], h, c, wib, whb, bb);
      h = g.slice_cols(state, 0, H);
      c = g.slice_cols(state, H, H);
      hb[t] = h;
    }
    descriptor_parts.push_back(hf[T - 1]);  // forward final state
    descriptor_parts.push_back(hb[0]);      // backward final state
    for (std::size_t t = 0; t < T; ++t) xs[t] = g.concat({hf[t], hb[t]});
  }
  descriptor_parts.push_back(xs[m.cfg.half_window]);  // center, last layer

  const nn::NodeId desc = g.concat(descriptor_parts);
  if (g.value(desc).dim(1) != m.cfg.descriptor_dim())
    throw NumericError("seq forward: descriptor dim " +
                       std::to_string(g.value(desc).dim(1)) + " != " +
                       std::to_string(m.cfg.descriptor_dim()));
  SeqForward out;
  out.logits = g.linear(desc, g.param(m.w_out), g.param(m.b_out));
  out.posterior = g.softmax(out.logits);
  if (g.value(out.logits).dim(1) != C)
    throw NumericError("seq forward: logit width mismatch");
  return out;
}

// Re-classifies every segment of one section. Windows are independent;
// batching is a throughput choice only.
inline std::vector<stream::PredictionRecord> enhance_section(
    SeqEnhancer& m, const stream::SectionTrack& track,
    const std::string& section_id, std::size_t batch = 64) {
  if (batch == 0) throw ValidationError("enhance: zero batch size");
  const std::size_t len = track.length();
  std::vector<stream::PredictionRecord> records;
  records.reserve(len);
  const std::size_t C = m.attr.class_count();
  for (std::size_t off = 0; off < len; off += batch) {
    const std::size_t n = std::min(batch, len - off);
    std::vector<WindowRef> windows(n);
    for (std::size_t i = 0; i < n; ++i) windows[i] = {&track, off + i};
    nn::Graph g;
    const auto wb = build_window_batch(m.cfg, C, windows);
    const auto fwd = seq_forward(g, m, wb);
    const Array& lg = g.value(fwd.logits);
    for (std::size_t i = 0; i < n; ++i) {
      stream::PredictionRecord r;
      r.section_id = section_id;
      r.index = off + i;
      r.attribute = m.attr.name;
      r.stage = "seq";
      r.logits.assign(lg.v.begin() + static_cast<long>(i * C),
                      lg.v.begin() + static_cast<long>((i + 1) * C));
      r.argmax = stream::argmax_of(r.logits);
      records.push_back(std::move(r));
    }
  }
  return records;
}

// Enhances one attribute across the given sections, preserving order.
inline std::vector<stream::PredictionRecord> enhance_sections(
    SeqEnhancer& m, const stream::StreamIndex& index,
    const std::vector<std::string>& section_ids, std::size_t batch = 64) {
  std::vector<stream::PredictionRecord> out;
  for (const auto& s : section_ids) {
    auto recs = enhance_section(m, index.track(m.attr.name, s), s, batch);
    out.insert(out.end(), std::make_move_iterator(recs.begin()),
               std::make_move_iterator(recs.end()));
  }
  return out;
}

}  // namespace roadseq::model
