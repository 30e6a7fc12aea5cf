#pragma once

// Command-line surface: generate -> train-local -> train-seq -> eval /
// analyze, driven by one declarative run configuration plus flag overrides.
// Every command is deterministic given identical inputs and seed; exit codes
// are 0 success, 1 validation error, 2 runtime/numeric error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include "roadseq/checkpoint.hpp"
#include "roadseq/dataset.hpp"
#include "roadseq/error.hpp"
#include "roadseq/eval.hpp"
#include "roadseq/local_model.hpp"
#include "roadseq/prediction_stream.hpp"
#include "roadseq/seq_model.hpp"
#include "roadseq/synthgen.hpp"
#include "roadseq/trainer.hpp"

namespace roadseq::cli {

// --- Run configuration --------------------------------------------------------

struct RunConfig {
  std::uint64_t seed = 1;
  synth::GeneratorConfig generator;
  std::vector<std::size_t> spp_grids = {6, 3, 2, 1};
  model::FramesMode frames = model::FramesMode::kSingle;
  std::size_t head_hidden = 256;
  model::SeqEnhancerConfig seq;
  train::TrainConfig train_local = train::TrainConfig::local_defaults();
  train::TrainConfig train_seq = train::TrainConfig::seq_defaults();
};

// Default synthetic road: four event-like and four zone-like attributes,
// with one rare event class near one percent.
inline std::vector<synth::GenAttribute> default_attributes() {
  auto peak = [](const std::string& name, std::vector<std::string> classes,
                 double rate) {
    synth::GenAttribute a;
    a.spec.name = name;
    a.spec.classes = std::move(classes);
    a.spec.default_class = 0;
    a.spec.kind = data::TemporalKind::kSinglePeak;
    a.regime = synth::SinglePeakParams{rate};
    return a;
  };
  auto zone = [](const std::string& name, std::vector<std::string> classes,
                 double stay, std::vector<double> prior) {
    synth::GenAttribute a;
    a.spec.name = name;
    a.spec.classes = std::move(classes);
    a.spec.kind = data::TemporalKind::kSmooth;
    a.regime = synth::SmoothParams{stay, std::move(prior)};
    return a;
  };
  return {
      peak("speed_bump", {"none", "bump"}, 0.02),
      peak("pedestrian_crossing", {"none", "marked", "signalized"}, 0.03),
      peak("culvert", {"none", "culvert"}, 0.01),
      peak("intersection", {"none", "minor", "major"}, 0.04),
      zone("area_type", {"rural", "suburban", "urban"}, 0.97,
           {0.6, 0.25, 0.15}),
      zone("road_surface", {"paved", "unpaved"}, 0.98, {0.85, 0.15}),
      zone("lane_count", {"one", "two", "three_plus"}, 0.97,
           {0.3, 0.55, 0.15}),
      zone("median_type", {"none", "painted", "physical"}, 0.96,
           {0.7, 0.2, 0.1}),
  };
}

inline RunConfig default_run_config() {
  RunConfig cfg;
  cfg.generator.attributes = default_attributes();
  return cfg;
}

namespace detail {

inline void parse_train_section(const nlohmann::json& j,
                                train::TrainConfig& tc) {
  tc.lr = j.value("lr", tc.lr);
  tc.weight_decay = j.value("weight_decay", tc.weight_decay);
  tc.batch_size = j.value("batch_size", tc.batch_size);
  tc.epochs = j.value("epochs", tc.epochs);
  tc.lr_decay = j.value("lr_decay", tc.lr_decay);
  if (j.contains("loss"))
    tc.loss = train::loss_mode_from_string(j.at("loss").get<std::string>());
  if (j.contains("selection"))
    tc.selection =
        train::selection_from_string(j.at("selection").get<std::string>());
}

inline synth::GenAttribute parse_gen_attribute(const nlohmann::json& j) {
  synth::GenAttribute a;
  a.spec.name = j.at("name").get<std::string>();
  a.spec.classes = j.at("classes").get<std::vector<std::string>>();
  const auto kind = j.at("kind").get<std::string>();
  a.spec.kind = data::temporal_kind_from_string(kind);
  if (j.contains("default_class"))
    a.spec.default_class = j.at("default_class").get<std::size_t>();
  if (a.spec.kind == data::TemporalKind::kSinglePeak) {
    synth::SinglePeakParams p;
    p.event_rate = j.value("event_rate", p.event_rate);
    a.regime = p;
  } else if (a.spec.kind == data::TemporalKind::kSmooth) {
    synth::SmoothParams p;
    p.stay_prob = j.value("stay_prob", p.stay_prob);
    p.prior = j.at("prior").get<std::vector<double>>();
    a.regime = p;
  } else {
    throw ValidationError("generator cannot produce attribute kind: " + kind);
  }
  return a;
}

}  // namespace detail

inline RunConfig load_run_config(const std::string& path) {
  RunConfig cfg = default_run_config();
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  try {
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("generator")) {
      const auto& g = j.at("generator");
      auto& gc = cfg.generator;
      gc.num_sections = g.value("num_sections", gc.num_sections);
      gc.segments_per_section =
          g.value("segments_per_section", gc.segments_per_section);
      gc.h = g.value("h", gc.h);
      gc.w = g.value("w", gc.w);
      gc.c_f = g.value("c_f", gc.c_f);
      gc.noise_std = g.value("noise_std", gc.noise_std);
      gc.leakage_decay = g.value("leakage_decay", gc.leakage_decay);
      if (g.contains("split_fractions")) {
        const auto f = g.at("split_fractions").get<std::vector<double>>();
        if (f.size() != 3)
          throw ValidationError("split_fractions must have 3 entries");
        gc.split_fractions = {f[0], f[1], f[2]};
      }
      if (g.contains("attributes")) {
        gc.attributes.clear();
        for (const auto& ja : g.at("attributes"))
          gc.attributes.push_back(detail::parse_gen_attribute(ja));
      }
    }
    if (j.contains("local_model")) {
      const auto& l = j.at("local_model");
      if (l.contains("spp_grids"))
        cfg.spp_grids = l.at("spp_grids").get<std::vector<std::size_t>>();
      if (l.contains("frames"))
        cfg.frames =
            model::frames_mode_from_string(l.at("frames").get<std::string>());
      cfg.head_hidden = l.value("head_hidden", cfg.head_hidden);
    }
    if (j.contains("seq_model")) {
      const auto& s = j.at("seq_model");
      cfg.seq.half_window = s.value("half_window", cfg.seq.half_window);
      cfg.seq.num_layers = s.value("num_layers", cfg.seq.num_layers);
      cfg.seq.hidden = s.value("hidden", cfg.seq.hidden);
    }
    if (j.contains("train_local"))
      detail::parse_train_section(j.at("train_local"), cfg.train_local);
    if (j.contains("train_seq"))
      detail::parse_train_section(j.at("train_seq"), cfg.train_seq);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return cfg;
}

// --- Shared helpers -----------------------------------------------------------

namespace detail {

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open for write: " + path);
  out << text;
  if (!out) throw ValidationError("write failed: " + path);
}

inline std::vector<double> softmax_row(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

// Attributes covered by the stream for the given sections, in manifest order.
inline std::vector<std::size_t> covered_attributes(
    const data::DatasetManifest& m, const stream::StreamIndex& index,
    const std::vector<std::string>& sections) {
  std::vector<std::size_t> out;
  for (std::size_t a = 0; a < m.attributes.size(); ++a) {
    bool all = true;
    for (const auto& s : sections)
      if (!index.has(m.attributes[a].name, s)) {
        all = false;
        break;
      }
    if (all) out.push_back(a);
  }
  return out;
}

inline eval::AttrEvalInput attr_eval_input(const data::Dataset& d,
                                           std::size_t attr,
                                           const std::vector<std::size_t>& section_indices,
                                           const stream::StreamIndex& index) {
  eval::AttrEvalInput in;
  in.spec = d.manifest.attributes[attr];
  std::size_t total = 0;
  for (std::size_t s : section_indices) total += d.spans[s].count;
  in.posteriors = Array({total, in.spec.class_count()});
  std::size_t row = 0;
  for (std::size_t s : section_indices) {
    in.gt_sections.push_back(train::section_labels(d, s, attr));
    const auto& track =
        index.track(in.spec.name, d.manifest.sections[s].id);
    if (track.length() != d.spans[s].count)
      throw ValidationError("stream length mismatch for section " +
                            d.manifest.sections[s].id);
    in.pred_sections.push_back(track.argmax);
    for (std::size_t t = 0; t < track.length(); ++t, ++row) {
      const auto p = softmax_row(track.logits[t]);
      for (std::size_t c = 0; c < p.size(); ++c)
        in.posteriors.v[row * p.size() + c] = p[c];
    }
  }
  return in;
}

// Merge per-attribute records into the canonical section -> index ->
// attribute order. Attribute vectors must each be section-major and dense.
inline std::vector<stream::PredictionRecord> merge_attribute_streams(
    const data::Dataset& d,
    const std::vector<std::vector<stream::PredictionRecord>>& per_attr) {
  std::vector<stream::PredictionRecord> out;
  std::size_t total = 0;
  for (const auto& v : per_attr) total += v.size();
  out.reserve(total);
  std::vector<std::size_t> cursor(per_attr.size(), 0);
  for (std::size_t s = 0; s < d.spans.size(); ++s) {
    const auto& id = d.manifest.sections[s].id;
    for (std::size_t t = 0; t < d.spans[s].count; ++t)
      for (std::size_t a = 0; a < per_attr.size(); ++a) {
        if (cursor[a] >= per_attr[a].size()) continue;
        const auto& r = per_attr[a][cursor[a]];
        if (r.section_id == id && r.index == t) {
          out.push_back(r);
          ++cursor[a];
        }
      }
  }
  for (std::size_t a = 0; a < per_attr.size(); ++a)
    if (cursor[a] != per_attr[a].size())
      throw ValidationError("stream merge left unplaced records");
  return out;
}

}  // namespace detail

// --- Commands -----------------------------------------------------------------

inline int cmd_generate(const RunConfig& cfg, const std::string& out_dir) {
  auto gc = cfg.generator;
  gc.seed = cfg.seed;
  const auto d = synth::generate_dataset(gc);
  std::filesystem::create_directories(out_dir);
  data::save_dataset(d, out_dir);
  std::cout << "wrote " << out_dir << "/manifest.json ("
            << d.manifest.sections.size() << " sections, " << d.segments.size()
            << " segments, " << d.manifest.attributes.size() << " attributes)\n";
  return 0;
}

inline int cmd_train_local(const RunConfig& cfg, const std::string& dataset_path,
                           const std::string& out_dir) {
  const auto d = data::load_dataset(dataset_path);
  if (d.grids.empty()) throw ValidationError("dataset has no feature grids");
  model::LocalModelConfig arch;
  arch.h = d.grids[0].h;
  arch.w = d.grids[0].w;
  arch.c_f = d.grids[0].c;
  arch.spp_grids = cfg.spp_grids;
  arch.frames = cfg.frames;
  arch.head_hidden = cfg.head_hidden;
  auto m = model::LocalModel::init(arch, d.manifest.attributes,
                                   derive_seed(cfg.seed, "local_init"));
  auto tc = cfg.train_local;
  tc.seed = cfg.seed;
  const auto result = train::train_local(m, d, tc);

  std::filesystem::create_directories(out_dir);
  detail::write_text(out_dir + "/train.log", result.log);
  std::vector<const Parameter*> params;
  for (auto* p : m.parameters()) params.push_back(p);
  nn::save_checkpoint(params, out_dir + "/local.sqap");
  nlohmann::ordered_json arch_json;
  arch_json["type"] = "local";
  arch_json["h"] = arch.h;
  arch_json["w"] = arch.w;
  arch_json["c_f"] = arch.c_f;
  arch_json["spp_grids"] = arch.spp_grids;
  arch_json["frames"] = model::frames_mode_name(arch.frames);
  arch_json["head_hidden"] = arch.head_hidden;
  detail::write_text(out_dir + "/local.json", arch_json.dump(2) + "\n");
  stream::write_stream(model::predict_dataset(m, d), out_dir + "/stream.jsonl");
  std::cout << "trained local model: best epoch " << result.best_epoch
            << ", val mean macro-F1 " << eval::format_pp(result.best_mean_val_f1)
            << "\nwrote " << out_dir << "/local.sqap, stream.jsonl, train.log\n";
  return 0;
}

inline int cmd_train_seq(const RunConfig& cfg, const std::string& dataset_path,
                         const std::string& stream_path,
                         const std::string& out_dir,
                         const std::string& attr_filter) {
  const auto d = data::load_dataset(dataset_path);
  const auto records = stream::read_stream(stream_path);
  const stream::StreamIndex index(records);

  std::vector<std::size_t> attrs;
  for (std::size_t a = 0; a < d.manifest.attributes.size(); ++a)
    if (attr_filter.empty() || d.manifest.attributes[a].name == attr_filter)
      attrs.push_back(a);
  if (attrs.empty())
    throw ValidationError("no attribute matches filter: " + attr_filter);

  std::filesystem::create_directories(out_dir);
  std::vector<std::string> all_sections;
  for (const auto& s : d.manifest.sections) all_sections.push_back(s.id);

  std::string log;
  std::vector<std::vector<stream::PredictionRecord>> enhanced;
  for (std::size_t a : attrs) {
    const auto& spec = d.manifest.attributes[a];
    auto m = model::SeqEnhancer::init(cfg.seq, spec,
                                      derive_seed(cfg.seed, "seq_init", a));
    auto tc = cfg.train_seq;
    tc.seed = derive_seed(cfg.seed, "seq_train", a);
    const auto result = train::train_seq(m, d, index, tc);
    log += result.log;
    std::vector<const Parameter*> params;
    for (auto* p : m.parameters()) params.push_back(p);
    nn::save_checkpoint(params, out_dir + "/seq_" + spec.name + ".sqap");
    enhanced.push_back(model::enhance_sections(m, index, all_sections));
    std::cout << "trained enhancer for " << spec.name << ": best epoch "
              << result.best_epoch << ", val macro-F1 "
              << eval::format_pp(result.best_mean_val_f1) << "\n";
  }
  nlohmann::ordered_json arch_json;
  arch_json["type"] = "seq";
  arch_json["half_window"] = cfg.seq.half_window;
  arch_json["num_layers"] = cfg.seq.num_layers;
  arch_json["hidden"] = cfg.seq.hidden;
  detail::write_text(out_dir + "/seq.json", arch_json.dump(2) + "\n");
  detail::write_text(out_dir + "/train.log", log);
  stream::write_stream(detail::merge_attribute_streams(d, enhanced),
                       out_dir + "/stream.jsonl");
  std::cout << "wrote " << out_dir << "/stream.jsonl, train.log\n";
  return 0;
}

inline int cmd_eval(const std::string& dataset_path,
                    const std::string& stream_path, const std::string& split_name,
                    const std::vector<std::string>& exclude,
                    const std::string& out_dir) {
  const auto d = data::load_dataset(dataset_path);
  const auto split = data::split_from_string(split_name);
  const auto records = stream::read_stream(stream_path);
  const stream::StreamIndex index(records);

  const auto section_indices = d.sections_in(split);
  if (section_indices.empty())
    throw ValidationError("split has no sections: " + split_name);
  std::vector<std::string> section_ids;
  for (std::size_t s : section_indices)
    section_ids.push_back(d.manifest.sections[s].id);

  const auto attrs =
      detail::covered_attributes(d.manifest, index, section_ids);
  if (attrs.empty())
    throw ValidationError("stream covers no attribute on split " + split_name);

  std::vector<eval::AttrEvalInput> inputs;
  for (std::size_t a : attrs)
    inputs.push_back(detail::attr_eval_input(d, a, section_indices, index));
  const auto report = eval::build_report(inputs, exclude);

  std::filesystem::create_directories(out_dir);
  detail::write_text(out_dir + "/report.json",
                     eval::report_to_json(report).dump(2) + "\n");
  const auto text = eval::render_report_text(report);
  detail::write_text(out_dir + "/report.txt", text);
  for (const auto& ae : report.attributes) {
    const auto& classes =
        d.manifest.attributes[d.manifest.attribute_index(ae.name)].classes;
    detail::write_text(out_dir + "/cooc_" + ae.name + "_gt.csv",
                       eval::cooc_csv(ae.cooc_gt, classes));
    detail::write_text(out_dir + "/cooc_" + ae.name + "_pred.csv",
                       eval::cooc_csv(ae.cooc_pred, classes));
  }
  // Ground-truth stream for the split, for the diagnostics command.
  std::vector<stream::PredictionRecord> gt;
  for (std::size_t s : section_indices) {
    const auto& span = d.spans[s];
    for (std::size_t t = 0; t < span.count; ++t)
      for (std::size_t a = 0; a < d.manifest.attributes.size(); ++a) {
        stream::PredictionRecord r;
        r.section_id = d.manifest.sections[s].id;
        r.index = t;
        r.attribute = d.manifest.attributes[a].name;
        r.stage = "gt";
        r.logits.assign(d.manifest.attributes[a].class_count(), 0.0);
        const int y = d.segments[span.first + t].labels[a];
        r.logits[static_cast<std::size_t>(y)] = 1.0;
        r.argmax = y;
        gt.push_back(std::move(r));
      }
  }
  stream::write_stream(gt, out_dir + "/gt_stream.jsonl");
  std::cout << text;
  std::cout << "wrote " << out_dir << "/report.json\n";
  return 0;
}

inline int cmd_analyze(const std::string& dataset_path,
                       const std::string& gt_path, const std::string& pred_path,
                       const std::string& out_dir) {
  const auto d = data::load_dataset(dataset_path);
  const stream::StreamIndex gt(stream::read_stream(gt_path));
  const stream::StreamIndex pred(stream::read_stream(pred_path));
  const auto& sections = gt.sections();
  if (sections.empty()) throw ValidationError("ground-truth stream is empty");

  std::filesystem::create_directories(out_dir);
  nlohmann::ordered_json out;
  out["sections"] = sections.size();
  out["attributes"] = nlohmann::ordered_json::array();
  for (const auto& spec : d.manifest.attributes) {
    bool covered = true;
    for (const auto& s : sections)
      if (!gt.has(spec.name, s) || !pred.has(spec.name, s)) {
        covered = false;
        break;
      }
    if (!covered) continue;
    const std::size_t C = spec.class_count();
    const auto gt_cooc = eval::cooccurrence(gt.argmax_sections(spec.name, sections), C);
    const auto pred_cooc =
        eval::cooccurrence(pred.argmax_sections(spec.name, sections), C);
    const auto diag = eval::temporal_diagnostics(gt_cooc, pred_cooc, spec);
    nlohmann::ordered_json ja;
    ja["name"] = spec.name;
    ja["kind"] = data::to_string(spec.kind);
    ja["transitions"] = pred_cooc.total();
    ja["offdiag_gt"] = eval::offdiag_mass(gt_cooc);
    ja["offdiag_pred"] = eval::offdiag_mass(pred_cooc);
    if (diag.duplicated_peak_mass)
      ja["duplicated_peak_mass"] = *diag.duplicated_peak_mass;
    if (diag.spurious_transition_excess)
      ja["spurious_transition_excess"] = *diag.spurious_transition_excess;
    out["attributes"].push_back(ja);
    detail::write_text(out_dir + "/cooc_" + spec.name + "_gt.csv",
                       eval::cooc_csv(gt_cooc, spec.classes));
    detail::write_text(out_dir + "/cooc_" + spec.name + "_pred.csv",
                       eval::cooc_csv(pred_cooc, spec.classes));
    std::cout << "analyzed " << spec.name << "\n";
  }
  if (out["attributes"].empty())
    throw ValidationError("no attribute covered by both streams");
  detail::write_text(out_dir + "/diagnostics.json", out.dump(2) + "\n");
  std::cout << "wrote " << out_dir << "/diagnostics.json\n";
  return 0;
}

// --- Entry point --------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"multi-task road-attribute recognition pipeline"};
  app.require_subcommand(1);

  std::string config_path, dataset, out, stream_path, gt_path, pred_path;
  std::string split = "test", attr_filter, loss_override, frames_override;
  std::vector<std::string> exclude;
  std::uint64_t seed = 0;
  std::size_t threads = 1, epochs = 0, batch = 0;
  double lr = 0.0;
  bool have_seed = false;

  app.add_option("--threads", threads, "worker cap (this build runs 1)")
      ->check(CLI::PositiveNumber);

  auto* g = app.add_subcommand("generate", "write a synthetic dataset");
  g->add_option("--config", config_path, "run configuration JSON");
  g->add_option("--out", out, "output directory")->required();
  g->add_option("--seed", seed, "override config seed");

  auto* tl = app.add_subcommand("train-local", "train the per-segment model");
  tl->add_option("--config", config_path, "run configuration JSON");
  tl->add_option("--dataset", dataset, "manifest.json path")->required();
  tl->add_option("--out", out, "output directory")->required();
  tl->add_option("--loss", loss_override, "ce|ifw|recall-mt");
  tl->add_option("--frames", frames_override, "single|multi");
  tl->add_option("--seed", seed, "override config seed");
  tl->add_option("--epochs", epochs, "override epoch count");
  tl->add_option("--lr", lr, "override learning rate");
  tl->add_option("--batch", batch, "override batch size");

  auto* ts = app.add_subcommand("train-seq", "train sequential enhancers");
  ts->add_option("--config", config_path, "run configuration JSON");
  ts->add_option("--dataset", dataset, "manifest.json path")->required();
  ts->add_option("--stream", stream_path, "local prediction stream")->required();
  ts->add_option("--out", out, "output directory")->required();
  ts->add_option("--attr", attr_filter, "train only this attribute");
  ts->add_option("--loss", loss_override, "ce|ifw|recall-mt");
  ts->add_option("--seed", seed, "override config seed");
  ts->add_option("--epochs", epochs, "override epoch count");
  ts->add_option("--lr", lr, "override learning rate");
  ts->add_option("--batch", batch, "override batch size");

  auto* ev = app.add_subcommand("eval", "evaluate a prediction stream");
  ev->add_option("--dataset", dataset, "manifest.json path")->required();
  ev->add_option("--stream", stream_path, "prediction stream")->required();
  ev->add_option("--split", split, "train|val|test (default test)");
  ev->add_option("--exclude-attr", exclude, "drop from the filtered mean");
  ev->add_option("--out", out, "output directory")->required();

  auto* an = app.add_subcommand("analyze", "temporal diagnostics of a stream");
  an->add_option("--dataset", dataset, "manifest.json path")->required();
  an->add_option("--gt", gt_path, "ground-truth stream")->required();
  an->add_option("--pred", pred_path, "prediction stream")->required();
  an->add_option("--out", out, "output directory")->required();

  for (auto* cmd : {g, tl, ts})
    cmd->callback([&have_seed, cmd] { have_seed = cmd->count("--seed") > 0; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    RunConfig cfg = load_run_config(config_path);
    if (have_seed) cfg.seed = seed;
    if (!loss_override.empty()) {
      const auto mode = train::loss_mode_from_string(loss_override);
      cfg.train_local.loss = mode;
      cfg.train_seq.loss = mode;
    }
    if (!frames_override.empty())
      cfg.frames = model::frames_mode_from_string(frames_override);
    if (epochs > 0) {
      cfg.train_local.epochs = epochs;
      cfg.train_seq.epochs = epochs;
    }
    if (lr > 0.0) {
      cfg.train_local.lr = lr;
      cfg.train_seq.lr = lr;
    }
    if (batch > 0) {
      cfg.train_local.batch_size = batch;
      cfg.train_seq.batch_size = batch;
    }

    if (g->parsed()) return cmd_generate(cfg, out);
    if (tl->parsed()) return cmd_train_local(cfg, dataset, out);
    if (ts->parsed())
      return cmd_train_seq(cfg, dataset, stream_path, out, attr_filter);
    if (ev->parsed()) return cmd_eval(dataset, stream_path, split, exclude, out);
    if (an->parsed()) return cmd_analyze(dataset, gt_path, pred_path, out);
    throw ValidationError("no command given");
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

inline int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("roadseq");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace roadseq::cli
