#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "roadseq/binio.hpp"
#include "roadseq/error.hpp"
#include "roadseq/rng.hpp"

namespace roadseq::data {

enum class TemporalKind { kSinglePeak, kSmooth, kOther };

inline std::string to_string(TemporalKind k) {
  switch (k) {
    case TemporalKind::kSinglePeak: return "single_peak";
    case TemporalKind::kSmooth: return "smooth";
    default: return "other";
  }
}

inline TemporalKind temporal_kind_from_string(const std::string& s) {
  if (s == "single_peak") return TemporalKind::kSinglePeak;
  if (s == "smooth") return TemporalKind::kSmooth;
  if (s == "other") return TemporalKind::kOther;
  throw ValidationError("unknown temporal_kind: " + s);
}

struct AttributeSpec {
  std::string name;
  std::vector<std::string> classes;
  std::optional<std::size_t> default_class;
  TemporalKind kind = TemporalKind::kOther;

  std::size_t class_count() const { return classes.size(); }

  void validate() const {
    if (name.empty()) throw ValidationError("attribute with empty name");
    if (classes.size() < 2)
      throw ValidationError("attribute " + name + " needs at least 2 classes");
    std::unordered_set<std::string> seen;
    for (const auto& c : classes)
      if (!seen.insert(c).second)
        throw ValidationError("attribute " + name + " has duplicate class " + c);
    if (default_class && *default_class >= classes.size())
      throw ValidationError("attribute " + name + " default_class out of range");
    if (kind == TemporalKind::kSinglePeak && !default_class)
      throw ValidationError("single-peak attribute " + name +
                            " requires default_class");
  }
};

struct SectionInfo {
  std::string id;
  std::size_t segments = 0;
};

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    default: return "test";
  }
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ValidationError("unknown split: " + s);
}

struct DatasetManifest {
  std::vector<AttributeSpec> attributes;
  std::vector<SectionInfo> sections;
  std::array<std::vector<std::string>, 3> splits;  // train, val, test
  std::string records_path;
  std::string features_path;

  std::size_t attribute_index(const std::string& name) const {
    for (std::size_t i = 0; i < attributes.size(); ++i)
      if (attributes[i].name == name) return i;
    throw ValidationError("unknown attribute: " + name);
  }

  std::size_t section_index(const std::string& id) const {
    for (std::size_t i = 0; i < sections.size(); ++i)
      if (sections[i].id == id) return i;
    throw ValidationError("unknown section: " + id);
  }

  void validate() const {
    if (attributes.empty()) throw ValidationError("manifest has no attributes");
    std::unordered_set<std::string> names;
    for (const auto& a : attributes) {
      a.validate();
      if (!names.insert(a.name).second)
        throw ValidationError("duplicate attribute name: " + a.name);
    }
    if (sections.empty()) throw ValidationError("manifest has no sections");
    std::unordered_set<std::string> ids;
    for (const auto& s : sections) {
      if (s.segments == 0)
        throw ValidationError("section " + s.id + " has zero segments");
      if (!ids.insert(s.id).second)
        throw ValidationError("duplicate section id: " + s.id);
    }
    std::unordered_map<std::string, int> assigned;
    for (const auto& split : splits)
      for (const auto& id : split) {
        if (!ids.count(id))
          throw ValidationError("split references unknown section: " + id);
        if (++assigned[id] > 1)
          throw ValidationError("section in multiple splits: " + id);
      }
    for (const auto& s : sections)
      if (!assigned.count(s.id))
        throw ValidationError("section not assigned to any split: " + s.id);
    if (records_path.empty() || features_path.empty())
      throw ValidationError("manifest missing records_path or features_path");
  }
};

struct FeatureGrid {
  std::size_t h = 0, w = 0, c = 0;
  std::vector<float> values;  // row-major: h outer, w middle, c inner
};

struct Segment {
  std::string section_id;
  std::size_t index = 0;
  std::size_t feature_ref = 0;     // grid index in the feature file
  std::vector<int> labels;         // by manifest attribute order
};

struct SectionSpan {
  std::size_t first = 0;   // offset into Dataset::segments
  std::size_t count = 0;
  Split split = Split::kTrain;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<FeatureGrid> grids;
  std::vector<Segment> segments;    // grouped by section, index ascending
  std::vector<SectionSpan> spans;   // parallel to manifest.sections

  const FeatureGrid& grid_of(const Segment& s) const {
    return grids[s.feature_ref];
  }

  // Indices into manifest.sections for one split, in manifest order.
  std::vector<std::size_t> sections_in(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < spans.size(); ++i)
      if (spans[i].split == split) out.push_back(i);
    return out;
  }

  // Global segment indices for one split, section-major.
  std::vector<std::size_t> segment_indices_in(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < spans.size(); ++i)
      if (spans[i].split == split)
        for (std::size_t k = 0; k < spans[i].count; ++k)
          out.push_back(spans[i].first + k);
    return out;
  }
};

// --- JSON codecs -----------------------------------------------------------

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["attributes"] = nlohmann::ordered_json::array();
  for (const auto& a : m.attributes) {
    nlohmann::ordered_json ja;
    ja["name"] = a.name;
    ja["classes"] = a.classes;
    if (a.default_class) ja["default_class"] = *a.default_class;
    ja["temporal_kind"] = to_string(a.kind);
    j["attributes"].push_back(ja);
  }
  j["sections"] = nlohmann::ordered_json::array();
  for (const auto& s : m.sections)
    j["sections"].push_back({{"id", s.id}, {"segments", s.segments}});
  j["splits"] = {{"train", m.splits[0]}, {"val", m.splits[1]},
                 {"test", m.splits[2]}};
  j["records_path"] = m.records_path;
  j["features_path"] = m.features_path;
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    for (const auto& ja : j.at("attributes")) {
      AttributeSpec a;
      a.name = ja.at("name").get<std::string>();
      a.classes = ja.at("classes").get<std::vector<std::string>>();
      if (ja.contains("default_class"))
        a.default_class = ja.at("default_class").get<std::size_t>();
      a.kind = temporal_kind_from_string(
          ja.at("temporal_kind").get<std::string>());
      m.attributes.push_back(std::move(a));
    }
    for (const auto& js : j.at("sections"))
      m.sections.push_back({js.at("id").get<std::string>(),
                            js.at("segments").get<std::size_t>()});
    m.splits[0] = j.at("splits").at("train").get<std::vector<std::string>>();
    m.splits[1] = j.at("splits").at("val").get<std::vector<std::string>>();
    m.splits[2] = j.at("splits").at("test").get<std::vector<std::string>>();
    m.records_path = j.at("records_path").get<std::string>();
    m.features_path = j.at("features_path").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
  m.validate();
  return m;
}

// --- Feature file (magic SQAF) ---------------------------------------------

inline std::vector<FeatureGrid> read_features(const std::string& path) {
  binio::Reader r(binio::read_file(path), path);
  if (r.raw(4) != "SQAF") throw ValidationError(path + ": bad magic");
  const std::uint32_t h = r.u32(), w = r.u32(), c = r.u32();
  if (h == 0 || w == 0 || c == 0)
    throw ValidationError(path + ": zero feature dimension");
  const std::size_t per = static_cast<std::size_t>(h) * w * c;
  if (r.remaining() % (per * 4) != 0)
    throw ValidationError(path + ": payload not a whole number of grids");
  const std::size_t count = r.remaining() / (per * 4);
  std::vector<FeatureGrid> grids(count);
  for (std::size_t g = 0; g < count; ++g) {
    grids[g].h = h;
    grids[g].w = w;
    grids[g].c = c;
    grids[g].values.resize(per);
    for (std::size_t i = 0; i < per; ++i) {
      const float x = r.f32();
      if (!std::isfinite(x))
        throw ValidationError(path + ": non-finite value in grid " +
                              std::to_string(g));
      grids[g].values[i] = x;
    }
  }
  return grids;
}

inline void write_features(const std::vector<FeatureGrid>& grids,
                           const std::string& path) {
  if (grids.empty()) throw ValidationError("no feature grids to write");
  std::string out = "SQAF";
  binio::put_u32(out, static_cast<std::uint32_t>(grids[0].h));
  binio::put_u32(out, static_cast<std::uint32_t>(grids[0].w));
  binio::put_u32(out, static_cast<std::uint32_t>(grids[0].c));
  for (const auto& g : grids) {
    if (g.h != grids[0].h || g.w != grids[0].w || g.c != grids[0].c)
      throw ValidationError("feature grids must share dimensions");
    for (float x : g.values) binio::put_f32(out, x);
  }
  binio::write_file(path, out);
}

// --- Segment records (JSONL) -----------------------------------------------

inline void write_records(const DatasetManifest& m,
                          const std::vector<Segment>& segments,
                          const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open file for writing: " + path);
  for (const auto& s : segments) {
    nlohmann::ordered_json j;
    j["section_id"] = s.section_id;
    j["index"] = s.index;
    j["feature_offset"] = s.feature_ref;
    nlohmann::ordered_json labels;
    for (std::size_t a = 0; a < m.attributes.size(); ++a)
      labels[m.attributes[a].name] = s.labels[a];
    j["labels"] = labels;
    out << j.dump() << "\n";
  }
  if (!out.good()) throw NumericError("write failed: " + path);
}

// --- Loader ----------------------------------------------------------------

inline Dataset load_dataset(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw ValidationError("cannot open manifest: " + manifest_path);
  nlohmann::json mj;
  try {
    in >> mj;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(manifest_path + ": invalid JSON: " + e.what());
  }

  Dataset d;
  d.manifest = manifest_from_json(mj);
  const auto base = std::filesystem::path(manifest_path).parent_path();
  const std::string records_file = (base / d.manifest.records_path).string();
  const std::string features_file = (base / d.manifest.features_path).string();

  d.grids = read_features(features_file);

  std::unordered_map<std::string, std::size_t> section_idx;
  for (std::size_t i = 0; i < d.manifest.sections.size(); ++i)
    section_idx[d.manifest.sections[i].id] = i;

  // Collect records per section, then check contiguity against the manifest.
  std::vector<std::vector<Segment>> per_section(d.manifest.sections.size());
  std::ifstream rin(records_file);
  if (!rin) throw ValidationError("cannot open records: " + records_file);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(rin, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = records_file + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + ": invalid JSON: " + e.what());
    }
    Segment s;
    try {
      s.section_id = j.at("section_id").get<std::string>();
      s.index = j.at("index").get<std::size_t>();
      s.feature_ref = j.at("feature_offset").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + ": malformed record: " + e.what());
    }
    auto it = section_idx.find(s.section_id);
    if (it == section_idx.end())
      throw ValidationError(where + ": unknown section " + s.section_id);
    const SectionInfo& info = d.manifest.sections[it->second];
    if (s.index >= info.segments)
      throw ValidationError(where + ": index " + std::to_string(s.index) +
                            " outside section " + s.section_id);
    if (s.feature_ref >= d.grids.size())
      throw ValidationError(where + ": feature_offset out of range");
    if (!j.contains("labels") || !j.at("labels").is_object())
      throw ValidationError(where + ": missing labels object");
    const auto& jl = j.at("labels");
    s.labels.assign(d.manifest.attributes.size(), -1);
    for (std::size_t a = 0; a < d.manifest.attributes.size(); ++a) {
      const AttributeSpec& spec = d.manifest.attributes[a];
      if (!jl.contains(spec.name))
        throw ValidationError(where + ": missing label for attribute " +
                              spec.name);
      const long long v = jl.at(spec.name).get<long long>();
      if (v < 0 || static_cast<std::size_t>(v) >= spec.class_count())
        throw ValidationError(where + ": label index " + std::to_string(v) +
                              " out of range for attribute " + spec.name);
      s.labels[a] = static_cast<int>(v);
    }
    if (jl.size() != d.manifest.attributes.size())
      throw ValidationError(where + ": labels carry unknown attributes");
    per_section[it->second].push_back(std::move(s));
  }

  std::unordered_map<std::string, Split> split_of;
  for (int k = 0; k < 3; ++k)
    for (const auto& id : d.manifest.splits[static_cast<std::size_t>(k)])
      split_of[id] = static_cast<Split>(k);

  d.spans.resize(d.manifest.sections.size());
  for (std::size_t i = 0; i < d.manifest.sections.size(); ++i) {
    const SectionInfo& info = d.manifest.sections[i];
    auto& segs = per_section[i];
    if (segs.size() != info.segments)
      throw ValidationError("section " + info.id + " has " +
                            std::to_string(segs.size()) + " records, expected " +
                            std::to_string(info.segments));
    std::sort(segs.begin(), segs.end(),
              [](const Segment& a, const Segment& b) { return a.index < b.index; });
    for (std::size_t k = 0; k < segs.size(); ++k)
      if (segs[k].index != k)
        throw ValidationError("section " + info.id +
                              " has duplicate or missing index " +
                              std::to_string(k));
    d.spans[i].first = d.segments.size();
    d.spans[i].count = segs.size();
    d.spans[i].split = split_of.at(info.id);
    for (auto& s : segs) d.segments.push_back(std::move(s));
  }
  return d;
}

inline void write_manifest(const DatasetManifest& m, const std::string& path) {
  m.validate();
  binio::write_file(path, manifest_to_json(m).dump(2) + "\n");
}

// Writes manifest.json, records file and feature file into a directory.
inline void save_dataset(const Dataset& d, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto base = std::filesystem::path(dir);
  write_features(d.grids, (base / d.manifest.features_path).string());
  write_records(d.manifest, d.segments,
                (base / d.manifest.records_path).string());
  write_manifest(d.manifest, (base / "manifest.json").string());
}

// --- Splitting -------------------------------------------------------------

// Section-level partition: shuffle with the seed, then assign each section
// greedily to the split with the largest remaining quota (ties: train, val,
// test). Sizes land within 1 of the exact fractional targets.
inline std::array<std::vector<std::string>, 3> split_by_section(
    std::vector<std::string> sections, const std::array<double, 3>& fractions,
    std::uint64_t seed) {
  if (sections.size() < 3)
    throw ValidationError("need at least 3 sections to split");
  double sum = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw ValidationError("negative split fraction");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ValidationError("split fractions must sum to 1");

  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(sections);

  std::array<std::vector<std::string>, 3> out;
  const double n = static_cast<double>(sections.size());
  std::array<double, 3> assigned = {0.0, 0.0, 0.0};
  for (const auto& id : sections) {
    int best = 0;
    double best_quota = fractions[0] * n - assigned[0];
    for (int k = 1; k < 3; ++k) {
      const double q = fractions[static_cast<std::size_t>(k)] * n -
                       assigned[static_cast<std::size_t>(k)];
      if (q > best_quota) {
        best = k;
        best_quota = q;
      }
    }
    out[static_cast<std::size_t>(best)].push_back(id);
    assigned[static_cast<std::size_t>(best)] += 1.0;
  }
  return out;
}

// --- Class statistics ------------------------------------------------------

struct ClassCounts {
  std::vector<std::int64_t> counts;
  std::int64_t total = 0;
};

inline ClassCounts class_frequencies(const Dataset& d,
                                     std::size_t attribute_index,
                                     const std::vector<std::size_t>& segment_ids) {
  if (attribute_index >= d.manifest.attributes.size())
    throw ValidationError("attribute index out of range");
  ClassCounts cc;
  cc.counts.assign(d.manifest.attributes[attribute_index].class_count(), 0);
  for (std::size_t id : segment_ids) {
    cc.counts[static_cast<std::size_t>(d.segments[id].labels[attribute_index])]++;
    cc.total++;
  }
  return cc;
}

inline ClassCounts class_frequencies(const Dataset& d,
                                     const std::string& attribute) {
  const std::size_t a = d.manifest.attribute_index(attribute);
  std::vector<std::size_t> all(d.segments.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return class_frequencies(d, a, all);
}

}  // namespace roadseq::data
