#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nsgr/errors.hpp"
#include "nsgr/generator.hpp"
#include "nsgr/interest.hpp"
#include "nsgr/listspace.hpp"
#include "nsgr/metrics.hpp"
#include "nsgr/synthworld.hpp"

namespace nsgr {

using json = nlohmann::json;

// ---- item catalog ----

inline void write_items(const std::string& path, const std::vector<Item>& items, std::size_t dim) {
  json root;
  root["dim"] = dim;
  root["items"] = json::array();
  for (const Item& it : items) {
    json j;
    j["id"] = it.id;
    j["semantic_id"] = it.semantic_id;
    j["features"] = it.features;
    root["items"].push_back(std::move(j));
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << root.dump() << "\n";
}

inline std::vector<Item> read_items(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  json root;
  in >> root;
  std::vector<Item> items;
  for (const json& j : root.at("items")) {
    Item it;
    it.id = j.at("id").get<ItemId>();
    const auto sem = j.at("semantic_id").get<std::vector<int>>();
    if (sem.size() != 3) throw DataError("item semantic id must have 3 levels");
    std::copy(sem.begin(), sem.end(), it.semantic_id.begin());
    it.features = j.at("features").get<std::vector<double>>();
    items.push_back(std::move(it));
  }
  return items;
}

// ---- pageview samples (one JSON object per line) ----

inline void write_pageviews(const std::string& path, const std::vector<PageviewSample>& samples) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const PageviewSample& s : samples) {
    json j;
    j["user_id"] = s.user_id;
    j["item_ids"] = s.vocab_ids;
    j["labels"] = s.labels;
    j["pointwise_scores"] = s.pointwise_scores;
    out << j.dump() << "\n";
  }
}

inline std::vector<PageviewSample> read_pageviews(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::vector<PageviewSample> samples;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    PageviewSample s;
    s.user_id = j.at("user_id").get<std::int64_t>();
    s.vocab_ids = j.at("item_ids").get<std::vector<std::size_t>>();
    s.labels = j.at("labels").get<std::vector<int>>();
    s.pointwise_scores = j.at("pointwise_scores").get<std::vector<double>>();
    if (s.labels.size() != s.vocab_ids.size() || s.pointwise_scores.size() != s.vocab_ids.size())
      throw DataError("pageview fields disagree on list length");
    samples.push_back(std::move(s));
  }
  return samples;
}

// ---- behavior sequences ----

inline void write_behaviors(const std::string& path,
                            const std::map<std::int64_t, BehaviorSequence>& behaviors) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& [user, seq] : behaviors) {
    json j;
    j["user_id"] = user;
    j["events"] = json::array();
    for (const BehaviorEvent& e : seq.events)
      j["events"].push_back({e.code[0], e.code[1], e.code[2], e.timestamp});
    out << j.dump() << "\n";
  }
}

inline std::map<std::int64_t, BehaviorSequence> read_behaviors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::map<std::int64_t, BehaviorSequence> behaviors;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    BehaviorSequence seq;
    for (const json& ev : j.at("events")) {
      BehaviorEvent e;
      e.code = {ev.at(0).get<int>(), ev.at(1).get<int>(), ev.at(2).get<int>()};
      e.timestamp = ev.at(3).get<double>();
      seq.events.push_back(e);
    }
    seq.validate();
    behaviors[j.at("user_id").get<std::int64_t>()] = std::move(seq);
  }
  return behaviors;
}

// ---- precomputed interest store ----

inline void write_interest_store(const std::string& path,
                                 const std::map<std::int64_t, std::vector<double>>& store) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& [user, vec] : store) {
    json j;
    j["user_id"] = user;
    j["interest"] = vec;
    out << j.dump() << "\n";
  }
}

inline std::map<std::int64_t, std::vector<double>> read_interest_store(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::map<std::int64_t, std::vector<double>> store;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    store[j.at("user_id").get<std::int64_t>()] = j.at("interest").get<std::vector<double>>();
  }
  return store;
}

// ---- ranked lists & generation traces ----

inline json ranked_list_item_ids(const RankedList& list, const CandidateSet& candidates) {
  json arr = json::array();
  for (int idx : list.order) arr.push_back(candidates.items[static_cast<std::size_t>(idx)].id);
  return arr;
}

inline json trace_to_json(const GenerationTrace& trace, const CandidateSet& candidates) {
  json root;
  root["m"] = trace.m;
  root["priorities"] = trace.priorities;
  root["final_item_ids"] = ranked_list_item_ids(trace.final_list, candidates);
  root["final_order"] = trace.final_list.order;
  root["levels"] = json::array();
  for (std::size_t level = 0; level < trace.depth; ++level) {
    json lvl = json::array();
    for (const GenNode& n : trace.nodes) {
      if (n.level != level || n.width() < 2) continue;
      json node;
      node["interval"] = {n.lo, n.hi};
      node["items"] = n.items;
      node["scores"] = n.scores;
      node["take_first"] = n.take_first;
      lvl.push_back(std::move(node));
    }
    root["levels"].push_back(std::move(lvl));
  }
  return root;
}

// ---- CSV helpers ----

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path) {
    if (!out_) throw DataError("cannot write " + path);
    out_.precision(17);
  }

  void comment(const std::string& text) { out_ << "# " << text << "\n"; }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ",";
      out_ << cells[i];
    }
    out_ << "\n";
  }

  template <typename... Ts>
  void raw_row(const Ts&... vals) {
    bool first = true;
    ((out_ << (first ? "" : ",") << vals, first = false), ...);
    out_ << "\n";
  }

 private:
  std::ofstream out_;
};

inline std::string fmt_double(double v) {
  std::ostringstream ss;
  ss.precision(12);
  ss << v;
  return ss.str();
}

inline void write_matrix_csv(const std::string& path, const Tensor& t,
                             const std::vector<std::string>& comments = {}) {
  CsvWriter w(path);
  for (const std::string& c : comments) w.comment(c);
  for (std::size_t i = 0; i < t.rows; ++i) {
    std::vector<std::string> cells;
    for (std::size_t j = 0; j < t.cols; ++j) cells.push_back(fmt_double(t.at(i, j)));
    w.row(cells);
  }
}

inline void write_histogram_csv(const std::string& path, const ValueHistogram& hist,
                                const std::vector<std::string>& comments = {}) {
  CsvWriter w(path);
  for (const std::string& c : comments) w.comment(c);
  w.row({"bin_lo", "bin_hi", "count"});
  for (std::size_t b = 0; b < hist.counts.size(); ++b)
    w.row({fmt_double(hist.bin_edges[b]), fmt_double(hist.bin_edges[b + 1]),
           std::to_string(hist.counts[b])});
}

}  // namespace nsgr
