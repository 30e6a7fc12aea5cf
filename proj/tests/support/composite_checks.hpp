#pragma once

// Finite-difference checks for the full model forward passes: the complete
// local head (pools + two-layer head + softmax-CE) and the complete
// enhancer (stacked bidirectional LSTM + output head + softmax-CE). Small
// shapes keep the FD sweep fast while exercising every parameter.

#include <cstdint>
#include <vector>

#include "roadseq/dataset.hpp"
#include "roadseq/local_model.hpp"
#include "roadseq/seq_model.hpp"

#include "support/op_checks.hpp"

namespace roadseq::testing {

inline data::AttributeSpec smooth_spec(const std::string& name,
                                       std::size_t classes) {
  data::AttributeSpec s;
  s.name = name;
  for (std::size_t c = 0; c < classes; ++c)
    s.classes.push_back("c" + std::to_string(c));
  s.kind = data::TemporalKind::kSmooth;
  return s;
}

// Full stage-one forward: multi-task softmax-CE over two attribute heads,
// with the input grids themselves as differentiable leaves. Odd seeds run
// the three-frame variant.
inline GradCheckReport check_local_head(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "local_head"));
  model::LocalModelConfig cfg;
  cfg.h = 4;
  cfg.w = 5;
  cfg.c_f = 3;
  cfg.spp_grids = {2, 1};
  cfg.head_hidden = 5;
  cfg.frames = seed % 2 ? model::FramesMode::kMulti : model::FramesMode::kSingle;
  const std::vector<data::AttributeSpec> attrs = {smooth_spec("p", 3),
                                                  smooth_spec("q", 2)};
  auto m = model::LocalModel::init(cfg, attrs, derive_seed(seed, "init"));

  const std::size_t B = 2;
  std::vector<Parameter> inputs;
  for (std::size_t k = 0; k < cfg.frame_count(); ++k)
    inputs.emplace_back("x" + std::to_string(k),
                        random_array({B, cfg.h, cfg.w, cfg.c_f}, rng));
  std::vector<std::vector<int>> labels(attrs.size());
  std::vector<std::vector<double>> weights(attrs.size());
  for (std::size_t a = 0; a < attrs.size(); ++a) {
    for (std::size_t b = 0; b < B; ++b) {
      labels[a].push_back(static_cast<int>(rng.below(attrs[a].class_count())));
      weights[a].push_back(0.2 + rng.uniform());
    }
  }

  std::vector<Parameter*> params = m.parameters();
  for (auto& p : inputs) params.push_back(&p);

  auto run = [&](bool with_grad) {
    nn::Graph g;
    std::vector<nn::NodeId> frame_nodes;
    for (auto& p : inputs) frame_nodes.push_back(g.param(p));
    const auto fwd = model::local_forward(g, m, frame_nodes);
    std::vector<nn::NodeId> terms;
    for (std::size_t a = 0; a < attrs.size(); ++a)
      terms.push_back(g.weighted_nll(fwd.posteriors[a], labels[a], weights[a],
                                     nn::NllNorm::kSumWeights));
    const nn::NodeId root = g.mean_scalars(terms);
    const double value = g.value(root).v[0];
    if (with_grad) g.backward(root);
    return value;
  };
  return check_gradients(params, run);
}

// Full stage-two forward: window batch through the stacked bidirectional
// LSTM into softmax-CE on the center labels. Tiny widths, full depth logic.
inline GradCheckReport check_seq_enhancer(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "seq_enhancer"));
  model::SeqEnhancerConfig cfg;
  cfg.half_window = 2;  // window of 5
  cfg.num_layers = 2;
  cfg.hidden = 3;
  const auto spec = smooth_spec("p", 3);
  auto m = model::SeqEnhancer::init(cfg, spec, derive_seed(seed, "init"));

  stream::SectionTrack track;
  const std::size_t len = 7, C = spec.class_count();
  for (std::size_t i = 0; i < len; ++i) {
    std::vector<double> row(C);
    for (auto& x : row) x = rng.normal();
    track.argmax.push_back(stream::argmax_of(row));
    track.logits.push_back(std::move(row));
  }
  std::vector<model::WindowRef> windows;
  for (std::size_t center : {std::size_t{0}, std::size_t{3}, len - 1})
    windows.push_back({&track, center});
  const auto wb = model::build_window_batch(cfg, C, windows);
  std::vector<int> labels;
  std::vector<double> weights;
  for (std::size_t b = 0; b < windows.size(); ++b) {
    labels.push_back(static_cast<int>(rng.below(C)));
    weights.push_back(0.2 + rng.uniform());
  }

  auto run = [&](bool with_grad) {
    nn::Graph g;
    const auto fwd = model::seq_forward(g, m, wb);
    const nn::NodeId root =
        g.weighted_nll(fwd.posterior, labels, weights, nn::NllNorm::kSumWeights);
    const double value = g.value(root).v[0];
    if (with_grad) g.backward(root);
    return value;
  };
  return check_gradients(m.parameters(), run);
}

inline std::vector<OpCheck> composite_op_checks() {
  return {
      {"local_head", check_local_head},
      {"seq_enhancer", check_seq_enhancer},
  };
}

}  // namespace roadseq::testing
