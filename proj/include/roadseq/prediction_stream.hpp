#pragma once

// Prediction streams: one JSON object per line, carrying per-segment,
// per-attribute logits and the winning class. This file format is the
// interface between the local recognizer, the sequential enhancer, and the
// evaluation tools. Ground-truth streams use one-hot logits with stage "gt".

#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "roadseq/error.hpp"

namespace roadseq::stream {

struct PredictionRecord {
  std::string section_id;
  std::size_t index = 0;
  std::string attribute;
  std::string stage;  // "local", "seq", or "gt"
  std::vector<double> logits;
  int argmax = 0;
};

// Ties go to the lowest class index so reruns agree bit for bit.
inline int argmax_of(const std::vector<double>& v) {
  if (v.empty()) throw ValidationError("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<int>(best);
}

inline nlohmann::ordered_json record_to_json(const PredictionRecord& r) {
  nlohmann::ordered_json j;
  j["section_id"] = r.section_id;
  j["index"] = r.index;
  j["attribute"] = r.attribute;
  j["stage"] = r.stage;
  j["logits"] = r.logits;
  j["argmax"] = r.argmax;
  return j;
}

inline void write_stream(const std::vector<PredictionRecord>& records,
                         const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open for write: " + path);
  for (const auto& r : records) out << record_to_json(r).dump() << "\n";
  if (!out) throw ValidationError("write failed: " + path);
}

inline std::vector<PredictionRecord> read_stream(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open: " + path);
  std::vector<PredictionRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    }
    PredictionRecord r;
    try {
      r.section_id = j.at("section_id").get<std::string>();
      r.index = j.at("index").get<std::size_t>();
      r.attribute = j.at("attribute").get<std::string>();
      r.stage = j.value("stage", std::string("local"));
      r.logits = j.at("logits").get<std::vector<double>>();
      r.argmax = j.at("argmax").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    }
    if (r.logits.empty())
      throw ValidationError(where + ": empty logits");
    if (r.argmax < 0 || static_cast<std::size_t>(r.argmax) >= r.logits.size())
      throw ValidationError(where + ": argmax out of range");
    records.push_back(std::move(r));
  }
  return records;
}

// One attribute's predictions within one section, dense by segment index.
struct SectionTrack {
  std::vector<std::vector<double>> logits;
  std::vector<int> argmax;
  std::size_t length() const { return argmax.size(); }
};

// Indexes a stream by (attribute, section) and checks each track is dense:
// indices 0..n-1, each exactly once, consistent logit width.
class StreamIndex {
 public:
  explicit StreamIndex(const std::vector<PredictionRecord>& records) {
    std::map<Key, std::vector<const PredictionRecord*>> buckets;
    for (const auto& r : records) {
      buckets[{r.attribute, r.section_id}].push_back(&r);
      if (sections_seen_.insert({r.section_id, sections_.size()}).second)
        sections_.push_back(r.section_id);
    }
    for (auto& [key, recs] : buckets) {
      SectionTrack track;
      track.logits.resize(recs.size());
      track.argmax.assign(recs.size(), -1);
      std::size_t width = recs.front()->logits.size();
      for (const auto* r : recs) {
        if (r->index >= recs.size())
          throw ValidationError("stream: section " + key.second +
                                " attribute " + key.first +
                                " index " + std::to_string(r->index) +
                                " outside dense range");
        if (track.argmax[r->index] != -1)
          throw ValidationError("stream: duplicate record for section " +
                                key.second + " index " +
                                std::to_string(r->index) + " attribute " +
                                key.first);
        if (r->logits.size() != width)
          throw ValidationError("stream: inconsistent logit width for " +
                                key.first);
        track.logits[r->index] = r->logits;
        track.argmax[r->index] = r->argmax;
      }
      tracks_.emplace(key, std::move(track));
    }
  }

  const SectionTrack& track(const std::string& attribute,
                            const std::string& section_id) const {
    auto it = tracks_.find({attribute, section_id});
    if (it == tracks_.end())
      throw ValidationError("stream: no records for attribute " + attribute +
                            " in section " + section_id);
    return it->second;
  }

  bool has(const std::string& attribute, const std::string& section_id) const {
    return tracks_.count({attribute, section_id}) > 0;
  }

  // Section ids in first-appearance order of the underlying stream.
  const std::vector<std::string>& sections() const { return sections_; }

  // Argmax sequences for one attribute over the given sections, in order.
  std::vector<std::vector<int>> argmax_sections(
      const std::string& attribute,
      const std::vector<std::string>& section_ids) const {
    std::vector<std::vector<int>> out;
    out.reserve(section_ids.size());
    for (const auto& s : section_ids) out.push_back(track(attribute, s).argmax);
    return out;
  }

 private:
  using Key = std::pair<std::string, std::string>;  // attribute, section
  std::map<Key, SectionTrack> tracks_;
  std::map<std::string, std::size_t> sections_seen_;
  std::vector<std::string> sections_;
};

}  // namespace roadseq::stream
