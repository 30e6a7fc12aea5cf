#include <gtest/gtest.h>

#include <cmath>

#include "roadseq/local_model.hpp"
#include "roadseq/synthgen.hpp"

#include "support/composite_checks.hpp"
#include "support/tmpdir.hpp"

namespace rm = roadseq::model;
namespace rd = roadseq::data;
namespace rn = roadseq::nn;
namespace rst = roadseq::stream;
using roadseq::Array;
using roadseq::Parameter;
using roadseq::Rng;
using roadseq::testing::smooth_spec;

TEST(LocalConfig, DescriptorDims) {
  rm::LocalModelConfig cfg;  // defaults: 6x6x8, grids {6,3,2,1}
  EXPECT_EQ(cfg.spp_cells(), 50u);
  EXPECT_EQ(cfg.frame_descriptor_dim(), 408u);  // 8 attention + 400 pyramid
  EXPECT_EQ(cfg.descriptor_dim(), 408u);
  cfg.frames = rm::FramesMode::kMulti;
  EXPECT_EQ(cfg.descriptor_dim(), 3u * 408u);
}

TEST(LocalConfig, RejectsOversizedGrid) {
  rm::LocalModelConfig cfg;
  cfg.h = 4;
  cfg.w = 4;
  EXPECT_THROW(cfg.validate(), roadseq::ValidationError);  // grid 6 > 4
}

TEST(LocalForward, ConstantGridGivesConstantDescriptor) {
  rm::LocalModelConfig cfg;
  cfg.h = 4;
  cfg.w = 4;
  cfg.c_f = 3;
  cfg.spp_grids = {2, 1};
  cfg.head_hidden = 4;
  auto m = rm::LocalModel::init(cfg, {smooth_spec("p", 3)}, 7);
  // Every position carries the same feature vector, so the attention pool
  // equals the spatial mean and every pyramid cell repeats it.
  Array x({2, 4, 4, 3});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t p = 0; p < 16; ++p)
      for (std::size_t c = 0; c < 3; ++c)
        x.v[(b * 16 + p) * 3 + c] = 1.5 + static_cast<double>(c);
  rn::Graph g;
  const auto fwd = rm::local_forward(g, m, {g.constant(x)});
  const Array& d = g.value(fwd.descriptors[0]);
  ASSERT_EQ(d.dim(1), cfg.frame_descriptor_dim());
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 0; j < d.dim(1); ++j)
      EXPECT_NEAR(d.v[b * d.dim(1) + j], 1.5 + static_cast<double>(j % 3), 1e-12);
}

TEST(LocalForward, OrthogonalQueriesShareSppDifferInAttention) {
  rm::LocalModelConfig cfg;
  cfg.h = 1;
  cfg.w = 2;
  cfg.c_f = 2;
  cfg.spp_grids = {1};
  cfg.head_hidden = 4;
  auto m = rm::LocalModel::init(cfg, {smooth_spec("p", 2), smooth_spec("q", 2)}, 3);
  m.query[0].value.v = {4.0, 0.0};
  m.query[1].value.v = {0.0, 4.0};
  Array x({1, 1, 2, 2});
  x.v = {1.0, 0.0,   // position 0
         0.0, 1.0};  // position 1
  rn::Graph g;
  const auto fwd = rm::local_forward(g, m, {g.constant(x)});
  const Array& d0 = g.value(fwd.descriptors[0]);
  const Array& d1 = g.value(fwd.descriptors[1]);
  // Pyramid halves (last 2 entries) agree: same shared pool node.
  EXPECT_EQ(d0.v[2], d1.v[2]);
  EXPECT_EQ(d0.v[3], d1.v[3]);
  EXPECT_NEAR(d0.v[2], 0.5, 1e-12);
  // Attention halves mirror each other: query 0 prefers position 0.
  const double s = 4.0 / std::sqrt(2.0);  // score gap
  const double w = std::exp(s) / (std::exp(s) + 1.0);
  EXPECT_NEAR(d0.v[0], w, 1e-12);
  EXPECT_NEAR(d0.v[1], 1.0 - w, 1e-12);
  EXPECT_NEAR(d1.v[0], 1.0 - w, 1e-12);
  EXPECT_NEAR(d1.v[1], w, 1e-12);
}

TEST(LocalForward, ZeroHeadGivesUniformPosteriorAndArgmaxZero) {
  rm::LocalModelConfig cfg;
  cfg.h = 3;
  cfg.w = 3;
  cfg.c_f = 2;
  cfg.spp_grids = {1};
  cfg.head_hidden = 4;
  auto m = rm::LocalModel::init(cfg, {smooth_spec("p", 5)}, 11);
  m.w2[0].value.fill(0.0);
  m.b2[0].value.fill(0.0);
  Rng rng(4);
  rn::Graph g;
  const auto fwd = rm::local_forward(
      g, m, {g.constant(roadseq::testing::random_array({3, 3, 3, 2}, rng))});
  const Array& p = g.value(fwd.posteriors[0]);
  for (double v : p.v) EXPECT_NEAR(v, 0.2, 1e-12);
  const Array& lg = g.value(fwd.logits[0]);
  std::vector<double> row(lg.v.begin(), lg.v.begin() + 5);
  EXPECT_EQ(rst::argmax_of(row), 0);  // tie resolves to lowest index
}

TEST(LocalForward, HeadsIndependentGivenSharedPools) {
  rm::LocalModelConfig cfg;
  cfg.h = 3;
  cfg.w = 3;
  cfg.c_f = 2;
  cfg.spp_grids = {2, 1};
  cfg.head_hidden = 6;
  const std::vector<rd::AttributeSpec> attrs = {smooth_spec("p", 3),
                                                smooth_spec("q", 4)};
  auto m = rm::LocalModel::init(cfg, attrs, 19);
  Rng rng(5);
  const Array x = roadseq::testing::random_array({2, 3, 3, 2}, rng);
  auto eval = [&](rm::LocalModel& model) {
    rn::Graph g;
    const auto fwd = rm::local_forward(g, model, {g.constant(x)});
    return std::pair(g.value(fwd.logits[0]).v, g.value(fwd.logits[1]).v);
  };
  const auto before = eval(m);
  m.query[0].value.fill(0.0);
  m.w1[0].value.fill(0.0);
  m.w2[0].value.fill(0.0);
  const auto after = eval(m);
  EXPECT_NE(before.first, after.first);
  EXPECT_EQ(before.second, after.second);
}

TEST(LocalForward, MultiFrameOffsetsClampAtSectionStart) {
  roadseq::synth::GeneratorConfig gc;
  gc.num_sections = 3;
  gc.segments_per_section = 8;
  {
    roadseq::synth::GenAttribute a;
    a.spec = smooth_spec("zone", 2);
    a.regime = roadseq::synth::SmoothParams{0.9, {0.5, 0.5}};
    gc.attributes = {a};
  }
  gc.h = 2;
  gc.w = 2;
  gc.c_f = 2;
  const auto d = roadseq::synth::generate_dataset(gc);
  const std::size_t base = d.spans[1].first;
  // Segment at within-index 0: all offsets clamp to itself.
  auto g0 = rm::frame_grids(d, {base}, -4);
  EXPECT_EQ(g0[0], &d.grid_of(d.segments[base]));
  // Segment at within-index 4: offsets 0,-1,-4 hit indices 4,3,0.
  EXPECT_EQ(rm::frame_grids(d, {base + 4}, 0)[0], &d.grid_of(d.segments[base + 4]));
  EXPECT_EQ(rm::frame_grids(d, {base + 4}, -1)[0], &d.grid_of(d.segments[base + 3]));
  EXPECT_EQ(rm::frame_grids(d, {base + 4}, -4)[0], &d.grid_of(d.segments[base]));
  // Within-index 2: offset -4 clamps to the section start, not into the
  // previous section.
  EXPECT_EQ(rm::frame_grids(d, {base + 2}, -4)[0], &d.grid_of(d.segments[base]));
}

TEST(LocalForward, IdenticalFramesMatchSummedSingleFrameHead) {
  rm::LocalModelConfig multi_cfg;
  multi_cfg.h = 3;
  multi_cfg.w = 4;
  multi_cfg.c_f = 2;
  multi_cfg.spp_grids = {2, 1};
  multi_cfg.head_hidden = 5;
  multi_cfg.frames = rm::FramesMode::kMulti;
  const std::vector<rd::AttributeSpec> attrs = {smooth_spec("p", 3)};
  auto mm = rm::LocalModel::init(multi_cfg, attrs, 23);

  rm::LocalModelConfig single_cfg = multi_cfg;
  single_cfg.frames = rm::FramesMode::kSingle;
  auto ms = rm::LocalModel::init(single_cfg, attrs, 23);
  ms.query[0].value = mm.query[0].value;
  ms.b1[0].value = mm.b1[0].value;
  ms.w2[0].value = mm.w2[0].value;
  ms.b2[0].value = mm.b2[0].value;
  // First-layer linearity: with identical frames the multi head's three
  // weight blocks act on identical descriptor copies, so their sum applied
  // once reproduces the logits.
  const std::size_t D1 = single_cfg.descriptor_dim();
  const std::size_t hid = single_cfg.head_hidden;
  ms.w1[0].value.fill(0.0);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < D1; ++i)
      for (std::size_t j = 0; j < hid; ++j)
        ms.w1[0].value.v[i * hid + j] +=
            mm.w1[0].value.v[(k * D1 + i) * hid + j];

  Rng rng(6);
  const Array x = roadseq::testing::random_array({2, 3, 4, 2}, rng);
  rn::Graph gm;
  const rn::NodeId xm = gm.constant(x);
  const auto fm = rm::local_forward(gm, mm, {xm, xm, xm});
  rn::Graph gs;
  const auto fs = rm::local_forward(gs, ms, {gs.constant(x)});
  const auto& lm = gm.value(fm.logits[0]).v;
  const auto& ls = gs.value(fs.logits[0]).v;
  ASSERT_EQ(lm.size(), ls.size());
  for (std::size_t i = 0; i < lm.size(); ++i) EXPECT_NEAR(lm[i], ls[i], 1e-12);
}

TEST(LocalForward, LossGradientStaysInOwnBranch) {
  rm::LocalModelConfig cfg;
  cfg.h = 3;
  cfg.w = 3;
  cfg.c_f = 2;
  cfg.spp_grids = {2, 1};
  cfg.head_hidden = 4;
  const std::vector<rd::AttributeSpec> attrs = {smooth_spec("p", 3),
                                                smooth_spec("q", 2)};
  auto m = rm::LocalModel::init(cfg, attrs, 31);
  for (auto* p : m.parameters()) p->zero_grad();
  Rng rng(8);
  Parameter x("x", roadseq::testing::random_array({2, 3, 3, 2}, rng));
  x.zero_grad();

  rn::Graph g;
  const auto fwd = rm::local_forward(g, m, {g.param(x)});
  const rn::NodeId loss = g.weighted_nll(fwd.posteriors[0], {1, 2}, {1.0, 1.0},
                                         rn::NllNorm::kSumWeights);
  g.backward(loss);

  auto norm = [](const Array& a) {
    double s = 0.0;
    for (double v : a.v) s += std::abs(v);
    return s;
  };
  // Shared input sees gradient; so do attribute 0's query and head.
  EXPECT_GT(norm(x.grad), 0.0);
  EXPECT_GT(norm(m.query[0].grad), 0.0);
  EXPECT_GT(norm(m.w1[0].grad), 0.0);
  EXPECT_GT(norm(m.w2[0].grad), 0.0);
  // Attribute 1's parameters stay untouched.
  EXPECT_EQ(norm(m.query[1].grad), 0.0);
  EXPECT_EQ(norm(m.w1[1].grad), 0.0);
  EXPECT_EQ(norm(m.w2[1].grad), 0.0);
  EXPECT_EQ(norm(m.b1[1].grad), 0.0);
  EXPECT_EQ(norm(m.b2[1].grad), 0.0);
}

TEST(LocalForward, InitIsDeterministicAndSeedSensitive) {
  rm::LocalModelConfig cfg;
  cfg.h = 3;
  cfg.w = 3;
  cfg.c_f = 2;
  cfg.spp_grids = {1};
  const std::vector<rd::AttributeSpec> attrs = {smooth_spec("p", 3)};
  auto a = rm::LocalModel::init(cfg, attrs, 42);
  auto b = rm::LocalModel::init(cfg, attrs, 42);
  auto c = rm::LocalModel::init(cfg, attrs, 43);
  EXPECT_EQ(a.w1[0].value.v, b.w1[0].value.v);
  EXPECT_NE(a.w1[0].value.v, c.w1[0].value.v);
  EXPECT_EQ(a.b1[0].value.v, std::vector<double>(cfg.head_hidden, 0.0));
}

TEST(PredictDataset, StreamShapeOrderAndIdempotence) {
  roadseq::synth::GeneratorConfig gc;
  gc.num_sections = 3;
  gc.segments_per_section = 12;
  {
    roadseq::synth::GenAttribute sp;
    sp.spec = smooth_spec("evt", 2);
    sp.spec.kind = rd::TemporalKind::kSinglePeak;
    sp.spec.default_class = 0;
    sp.regime = roadseq::synth::SinglePeakParams{0.1};
    roadseq::synth::GenAttribute sm;
    sm.spec = smooth_spec("zone", 3);
    sm.regime = roadseq::synth::SmoothParams{0.9, {0.6, 0.3, 0.1}};
    gc.attributes = {sp, sm};
  }
  gc.h = 2;
  gc.w = 2;
  gc.c_f = 3;
  gc.seed = 9;
  const auto d = roadseq::synth::generate_dataset(gc);

  rm::LocalModelConfig cfg;
  cfg.h = 2;
  cfg.w = 2;
  cfg.c_f = 3;
  cfg.spp_grids = {2, 1};
  cfg.head_hidden = 4;
  auto m = rm::LocalModel::init(cfg, d.manifest.attributes, 3);

  const auto s1 = rm::predict_dataset(m, d, 5);
  const auto s2 = rm::predict_dataset(m, d, 7);  // different batching
  ASSERT_EQ(s1.size(), d.segments.size() * 2);
  ASSERT_EQ(s1.size(), s2.size());
  for (std::size_t i = 0; i < s1.size(); ++i) {
    EXPECT_EQ(s1[i].section_id, s2[i].section_id);
    EXPECT_EQ(s1[i].index, s2[i].index);
    EXPECT_EQ(s1[i].attribute, s2[i].attribute);
    ASSERT_EQ(s1[i].logits.size(), s2[i].logits.size());
    for (std::size_t c = 0; c < s1[i].logits.size(); ++c)
      EXPECT_NEAR(s1[i].logits[c], s2[i].logits[c], 1e-12);
  }
  // Order contract: section -> index -> attribute, attributes in manifest
  // order within a segment.
  EXPECT_EQ(s1[0].attribute, "evt");
  EXPECT_EQ(s1[1].attribute, "zone");
  EXPECT_EQ(s1[0].index, 0u);
  EXPECT_EQ(s1[2].index, 1u);
  EXPECT_EQ(s1[0].stage, "local");
}

TEST(PredictDataset, ZeroHeadsEmitZeroLogits) {
  roadseq::synth::GeneratorConfig gc;
  gc.num_sections = 3;
  gc.segments_per_section = 5;
  {
    roadseq::synth::GenAttribute sm;
    sm.spec = smooth_spec("zone", 3);
    sm.regime = roadseq::synth::SmoothParams{0.9, {0.6, 0.3, 0.1}};
    gc.attributes = {sm};
  }
  gc.h = 2;
  gc.w = 2;
  gc.c_f = 2;
  const auto d = roadseq::synth::generate_dataset(gc);
  rm::LocalModelConfig cfg;
  cfg.h = 2;
  cfg.w = 2;
  cfg.c_f = 2;
  cfg.spp_grids = {1};
  cfg.head_hidden = 3;
  auto m = rm::LocalModel::init(cfg, d.manifest.attributes, 3);
  m.w2[0].value.fill(0.0);
  for (const auto& r : rm::predict_dataset(m, d)) {
    for (double v : r.logits) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(r.argmax, 0);
  }
}

TEST(GroundTruthStream, OneHotWithGtStage) {
  roadseq::synth::GeneratorConfig gc;
  gc.num_sections = 3;
  gc.segments_per_section = 6;
  {
    roadseq::synth::GenAttribute sm;
    sm.spec = smooth_spec("zone", 3);
    sm.regime = roadseq::synth::SmoothParams{0.8, {0.5, 0.3, 0.2}};
    gc.attributes = {sm};
  }
  gc.h = 2;
  gc.w = 2;
  gc.c_f = 2;
  const auto d = roadseq::synth::generate_dataset(gc);
  const auto gt = rm::ground_truth_stream(d);
  ASSERT_EQ(gt.size(), d.segments.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    EXPECT_EQ(gt[i].stage, "gt");
    EXPECT_EQ(gt[i].argmax, d.segments[i].labels[0]);
    double sum = 0.0;
    for (double v : gt[i].logits) sum += v;
    EXPECT_EQ(sum, 1.0);
    EXPECT_EQ(gt[i].logits[static_cast<std::size_t>(gt[i].argmax)], 1.0);
  }
}

TEST(PredictionStream, FileRoundTripPreservesBits) {
  std::vector<rst::PredictionRecord> records;
  Rng rng(14);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < 4; ++i) {
      rst::PredictionRecord r;
      r.section_id = "sec" + std::to_string(s);
      r.index = i;
      r.attribute = "p";
      r.stage = "local";
      for (int c = 0; c < 3; ++c) r.logits.push_back(rng.normal());
      r.argmax = rst::argmax_of(r.logits);
      records.push_back(std::move(r));
    }
  const std::string path =
      roadseq::testing::fresh_dir("stream") + "/pred.jsonl";
  rst::write_stream(records, path);
  const auto loaded = rst::read_stream(path);
  ASSERT_EQ(loaded.size(), records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(loaded[i].section_id, records[i].section_id);
    EXPECT_EQ(loaded[i].index, records[i].index);
    EXPECT_EQ(loaded[i].logits, records[i].logits);  // bit-exact doubles
    EXPECT_EQ(loaded[i].argmax, records[i].argmax);
  }
  const rst::StreamIndex index(loaded);
  EXPECT_EQ(index.sections(), (std::vector<std::string>{"sec0", "sec1"}));
  EXPECT_EQ(index.track("p", "sec0").length(), 4u);
  EXPECT_TRUE(index.has("p", "sec1"));
  EXPECT_FALSE(index.has("q", "sec0"));
}

TEST(PredictionStream, IndexRejectsSparseAndDuplicateTracks) {
  auto rec = [](const std::string& sec, std::size_t idx) {
    rst::PredictionRecord r;
    r.section_id = sec;
    r.index = idx;
    r.attribute = "p";
    r.stage = "local";
    r.logits = {1.0, 0.0};
    r.argmax = 0;
    return r;
  };
  EXPECT_THROW(rst::StreamIndex({rec("a", 0), rec("a", 2)}),
               roadseq::ValidationError);
  EXPECT_THROW(rst::StreamIndex({rec("a", 0), rec("a", 0)}),
               roadseq::ValidationError);
  EXPECT_NO_THROW(rst::StreamIndex({rec("a", 1), rec("a", 0)}));
}

TEST(GradCheck, LocalHeadMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto report = roadseq::testing::check_local_head(seed);
    EXPECT_EQ(report.failures, 0u)
        << "seed " << seed << ": " << report.first_failure;
    EXPECT_GT(report.checked, 0u);
  }
}
