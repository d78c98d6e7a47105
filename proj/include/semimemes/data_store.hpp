#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "semimemes/binary_io.hpp"
#include "semimemes/errors.hpp"
#include "semimemes/rng.hpp"
#include "semimemes/tensor.hpp"

namespace semimemes::data {

/// One sample: paired image/text embeddings and optional 0/1 labels.
struct FeatureRecord {
  std::string id;
  std::vector<float> f_image;
  std::vector<float> f_text;
  std::optional<std::vector<std::uint8_t>> labels;

  bool operator==(const FeatureRecord&) const = default;
};

/// Immutable record collection with id lookup.
class FeatureStore {
 public:
  FeatureStore() = default;
  explicit FeatureStore(std::vector<FeatureRecord> records, std::vector<std::string> class_names = {})
      : records_(std::move(records)), class_names_(std::move(class_names)) {
    validate_and_index();
  }

  const std::vector<FeatureRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t label_dim() const { return label_dim_; }
  bool has_labels() const { return label_dim_ > 0; }
  const std::vector<std::string>& class_names() const { return class_names_; }

  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  std::size_t index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw DataError("unknown sample id '" + id + "'");
    return it->second;
  }

  const FeatureRecord& at(const std::string& id) const { return records_[index_of(id)]; }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back(r.id);
    return out;
  }

 private:
  void validate_and_index() {
    if (records_.empty()) return;
    dim_ = records_.front().f_image.size();
    label_dim_ = records_.front().labels ? records_.front().labels->size() : 0;
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const auto& r = records_[i];
      const std::string where = "record " + std::to_string(i) + " ('" + r.id + "')";
      if (r.id.empty()) throw DataError(where + ": empty id");
      if (r.id.size() > 0xFFFF) throw DataError(where + ": id longer than 65535 bytes");
      if (r.f_image.size() != dim_ || r.f_text.size() != dim_) {
        throw DataError(where + ": feature dimension mismatch, expected " + std::to_string(dim_));
      }
      if (!all_finite(std::span<const float>(r.f_image)) || !all_finite(std::span<const float>(r.f_text))) {
        throw DataError(where + ": non-finite feature value");
      }
      const std::size_t c = r.labels ? r.labels->size() : 0;
      if (c != label_dim_) throw DataError(where + ": label presence or width differs from first record");
      if (r.labels) {
        for (auto v : *r.labels)
          if (v > 1) throw DataError(where + ": labels must be 0 or 1");
      }
      if (!index_.emplace(r.id, i).second) throw DataError(where + ": duplicate id");
    }
    if (!class_names_.empty() && class_names_.size() != label_dim_) {
      throw DataError("class name count " + std::to_string(class_names_.size()) + " does not match label width " +
                      std::to_string(label_dim_));
    }
  }

  std::vector<FeatureRecord> records_;
  std::vector<std::string> class_names_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t dim_ = 0;
  std::size_t label_dim_ = 0;
};

// ---------------------------------------------------------------------------
// MMF1 feature file
//
//   "MMF1" | u16 version=1 | u16 flags (bit 0: labels) | u32 N | u32 D | u32 C
//   N x { u16 id_len | id bytes | D x f32 image | D x f32 text | C x u8 labels }
//   u64 FNV-1a of every preceding byte
//
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

inline constexpr char kFeatureMagic[4] = {'M', 'M', 'F', '1'};
inline constexpr std::uint16_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 4 + 2 + 2 + 4 + 4 + 4;
inline constexpr std::size_t kChecksumBytes = 8;

inline std::vector<std::uint8_t> encode_features(const FeatureStore& store) {
  io::ByteWriter w;
  w.bytes(std::string_view(kFeatureMagic, 4));
  w.u16(kFeatureVersion);
  w.u16(store.has_labels() ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(store.size()));
  w.u32(static_cast<std::uint32_t>(store.dim()));
  w.u32(static_cast<std::uint32_t>(store.label_dim()));
  for (const auto& r : store.records()) {
    w.u16(static_cast<std::uint16_t>(r.id.size()));
    w.bytes(r.id);
    for (float v : r.f_image) w.f32(v);
    for (float v : r.f_text) w.f32(v);
    if (r.labels)
      for (auto v : *r.labels) w.u8(v);
  }
  w.u64(w.checksum());
  return std::move(w.buffer());
}

inline FeatureStore decode_features(std::span<const std::uint8_t> bytes, const std::string& source) {
  io::ByteReader rd(bytes, source);
  if (rd.bytes(4) != std::string_view(kFeatureMagic, 4)) rd.fail("bad magic, not an MMF1 feature file");
  const auto version = rd.u16();
  if (version != kFeatureVersion) rd.fail("unsupported MMF1 version " + std::to_string(version));
  const auto flags = rd.u16();
  const auto n = rd.u32();
  const auto d = rd.u32();
  const auto c = rd.u32();
  const bool has_labels = flags & 1;
  if (has_labels != (c > 0)) rd.fail("label flag disagrees with label dimension");
  if (bytes.size() < kChecksumBytes) rd.fail("file too short");
  const std::size_t body = bytes.size() - kChecksumBytes;
  {
    io::ByteReader tail(bytes.subspan(body), source);
    const std::uint64_t stored = tail.u64();
    if (stored != io::fnv1a64(bytes.first(body))) {
      throw DataError(source + ": checksum mismatch at byte " + std::to_string(body));
    }
  }
  std::vector<FeatureRecord> records;
  records.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    FeatureRecord r;
    const auto len = rd.u16();
    r.id = rd.bytes(len);
    r.f_image.resize(d);
    r.f_text.resize(d);
    for (auto& v : r.f_image) v = rd.f32();
    for (auto& v : r.f_text) v = rd.f32();
    if (has_labels) {
      std::vector<std::uint8_t> labels(c);
      for (auto& v : labels) {
        v = rd.u8();
        if (v > 1) rd.fail("label byte is not 0/1 in record " + std::to_string(i));
      }
      r.labels = std::move(labels);
    }
    if (rd.position() > body) rd.fail("record " + std::to_string(i) + " overruns checksum");
    records.push_back(std::move(r));
  }
  if (rd.position() != body) rd.fail("trailing bytes after " + std::to_string(n) + " records");
  try {
    FeatureStore store(std::move(records));
    if (n > 0 && store.dim() != d) throw DataError("declared dimension disagrees with records");
    return store;
  } catch (const DataError& e) {
    throw DataError(source + ": " + e.what());
  }
}

inline void write_features(const FeatureStore& store, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_features(store));
}

inline void write_features(const std::vector<FeatureRecord>& records, const std::filesystem::path& path) {
  write_features(FeatureStore(records), path);
}

inline FeatureStore read_features(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return decode_features(bytes, path.string());
}

// ---------------------------------------------------------------------------
// Label manifest (JSONL)
//
//   {"classes": ["shaming", "stereotype", ...]}
//   {"id": "m0001", "labels": [0, 1, 0, 0], "split": "train"}
//
// "split" is optional: "train" (default), "dev", or "test".
// ---------------------------------------------------------------------------

struct LabelEntry {
  std::string id;
  std::vector<std::uint8_t> labels;
  std::string split = "train";
};

struct LabelManifest {
  std::vector<std::string> classes;
  std::vector<LabelEntry> entries;

  std::vector<std::string> ids_in(const std::string& split) const {
    std::vector<std::string> out;
    for (const auto& e : entries)
      if (e.split == split) out.push_back(e.id);
    return out;
  }
};

inline LabelManifest parse_label_manifest(const std::string& text, const std::string& source) {
  LabelManifest m;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::unordered_set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    if (!have_header) {
      if (!j.contains("classes") || !j["classes"].is_array()) throw DataError(where + ": first line must declare \"classes\"");
      for (const auto& c : j["classes"]) m.classes.push_back(c.get<std::string>());
      if (m.classes.empty()) throw DataError(where + ": empty class list");
      have_header = true;
      continue;
    }
    LabelEntry e;
    try {
      e.id = j.at("id").get<std::string>();
      for (const auto& v : j.at("labels")) {
        const int x = v.get<int>();
        if (x != 0 && x != 1) throw DataError(where + ": labels must be 0 or 1");
        e.labels.push_back(static_cast<std::uint8_t>(x));
      }
      if (j.contains("split")) e.split = j["split"].get<std::string>();
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(where + ": " + ex.what());
    }
    if (e.labels.size() != m.classes.size()) throw DataError(where + ": label width differs from class list");
    if (e.split != "train" && e.split != "dev" && e.split != "test") {
      throw DataError(where + ": split must be train, dev, or test");
    }
    if (!seen.insert(e.id).second) throw DataError(where + ": duplicate id '" + e.id + "'");
    m.entries.push_back(std::move(e));
  }
  if (!have_header) throw DataError(source + ": empty label manifest");
  return m;
}

inline LabelManifest read_label_manifest(const std::filesystem::path& path) {
  return parse_label_manifest(io::read_text(path), path.string());
}

inline std::string format_label_manifest(const LabelManifest& m) {
  std::string out = nlohmann::json{{"classes", m.classes}}.dump() + "\n";
  for (const auto& e : m.entries) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["labels"] = e.labels;
    j["split"] = e.split;
    out += j.dump() + "\n";
  }
  return out;
}

/// A store whose records carry the manifest's labels (ids without an entry
/// are rejected). Feature-file labels, if any, are replaced.
inline FeatureStore with_labels(const FeatureStore& features, const LabelManifest& labels) {
  std::unordered_map<std::string, const LabelEntry*> by_id;
  for (const auto& e : labels.entries) by_id.emplace(e.id, &e);
  std::vector<FeatureRecord> records = features.records();
  for (auto& r : records) {
    auto it = by_id.find(r.id);
    if (it == by_id.end()) throw DataError("feature record '" + r.id + "' has no entry in the label manifest");
    r.labels = it->second->labels;
  }
  for (const auto& e : labels.entries) {
    if (!features.contains(e.id)) throw DataError("label manifest id '" + e.id + "' has no feature record");
  }
  return FeatureStore(std::move(records), labels.classes);
}

// ---------------------------------------------------------------------------
// Split manifest
// ---------------------------------------------------------------------------

struct SplitManifest {
  std::uint64_t seed = 0;
  double labeled_ratio = 0.0;
  std::size_t original_training_size = 0;
  std::size_t val_count = 0;
  std::string dataset_tag = "custom";
  std::vector<std::string> labeled_ids;
  std::vector<std::string> unlabeled_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;

  bool operator==(const SplitManifest&) const = default;

  const std::vector<std::string>& partition(const std::string& name) const {
    if (name == "labeled") return labeled_ids;
    if (name == "unlabeled") return unlabeled_ids;
    if (name == "val" || name == "validation") return val_ids;
    if (name == "test") return test_ids;
    throw ConfigError("unknown partition '" + name + "' (expected labeled, unlabeled, val, or test)");
  }
};

/// round-half-up(ratio × size).
inline std::size_t labeled_count(double labeled_ratio, std::size_t original_training_size) {
  return static_cast<std::size_t>(std::floor(labeled_ratio * double(original_training_size) + 0.5));
}

struct SplitRequest {
  /// Training pool: validation (if carved), labeled, and unlabeled ids come from here.
  std::vector<std::string> pool_ids;
  std::size_t original_training_size = 0;
  double labeled_ratio = 0.0;
  /// Number of validation ids carved from the shuffled pool.
  std::size_t val_count = 0;
  std::uint64_t seed = 0;
  /// Predefined validation ids (e.g. a published dev set), kept as is.
  std::vector<std::string> fixed_val_ids;
  std::vector<std::string> test_ids;
  std::string dataset_tag = "custom";
};

inline SplitManifest make_split(const SplitRequest& req) {
  if (!(req.labeled_ratio > 0.0 && req.labeled_ratio < 1.0)) {
    throw ConfigError("labeled_ratio must lie in (0,1), got " + std::to_string(req.labeled_ratio));
  }
  if (req.val_count + 1 > req.pool_ids.size()) {
    throw ConfigError("val_count " + std::to_string(req.val_count) + " leaves no training ids out of " +
                      std::to_string(req.pool_ids.size()));
  }
  {
    std::unordered_set<std::string> seen;
    for (const auto* list : {&req.pool_ids, &req.fixed_val_ids, &req.test_ids})
      for (const auto& id : *list)
        if (!seen.insert(id).second) throw DataError("id '" + id + "' appears more than once in the split inputs");
  }
  SplitManifest m;
  m.seed = req.seed;
  m.labeled_ratio = req.labeled_ratio;
  m.original_training_size = req.original_training_size;
  m.val_count = req.val_count;
  m.dataset_tag = req.dataset_tag;

  std::vector<std::string> shuffled = req.pool_ids;
  Rng rng(req.seed);
  rng.shuffle(std::span<std::string>(shuffled));

  const std::size_t n_labeled = labeled_count(req.labeled_ratio, req.original_training_size);
  const std::size_t remainder = shuffled.size() - req.val_count;
  if (n_labeled > remainder) {
    throw ConfigError("requested " + std::to_string(n_labeled) + " labeled ids but only " +
                      std::to_string(remainder) + " remain after validation");
  }
  auto it = shuffled.begin();
  m.val_ids = req.fixed_val_ids;
  m.val_ids.insert(m.val_ids.end(), it, it + static_cast<std::ptrdiff_t>(req.val_count));
  it += static_cast<std::ptrdiff_t>(req.val_count);
  m.labeled_ids.assign(it, it + static_cast<std::ptrdiff_t>(n_labeled));
  it += static_cast<std::ptrdiff_t>(n_labeled);
  m.unlabeled_ids.assign(it, shuffled.end());
  m.test_ids = req.test_ids;
  return m;
}

/// Shuffles `ids`, carves `val_count` validation ids, then
/// round(labeled_ratio × original_training_size) labeled ids; the rest are unlabeled.
inline SplitManifest make_split(const std::vector<std::string>& ids, std::size_t original_training_size,
                                double labeled_ratio, std::size_t val_count, std::uint64_t seed) {
  SplitRequest req;
  req.pool_ids = ids;
  req.original_training_size = original_training_size;
  req.labeled_ratio = labeled_ratio;
  req.val_count = val_count;
  req.seed = seed;
  return make_split(req);
}

/// Throws unless the four partitions are pairwise disjoint.
inline void check_disjoint(const SplitManifest& m) {
  std::unordered_map<std::string, const char*> owner;
  const std::pair<const char*, const std::vector<std::string>*> parts[] = {
      {"labeled", &m.labeled_ids}, {"unlabeled", &m.unlabeled_ids}, {"val", &m.val_ids}, {"test", &m.test_ids}};
  for (const auto& [name, ids] : parts) {
    for (const auto& id : *ids) {
      auto [it, inserted] = owner.emplace(id, name);
      if (!inserted) {
        throw DataError("split manifest: id '" + id + "' is in both " + it->second + " and " + name);
      }
    }
  }
}

inline std::string format_split_manifest(const SplitManifest& m) {
  nlohmann::ordered_json j;
  j["dataset_tag"] = m.dataset_tag;
  j["seed"] = m.seed;
  j["labeled_ratio"] = m.labeled_ratio;
  j["original_training_size"] = m.original_training_size;
  j["val_count"] = m.val_count;
  j["counts"] = {{"labeled", m.labeled_ids.size()},
                 {"unlabeled", m.unlabeled_ids.size()},
                 {"val", m.val_ids.size()},
                 {"test", m.test_ids.size()}};
  j["labeled_ids"] = m.labeled_ids;
  j["unlabeled_ids"] = m.unlabeled_ids;
  j["val_ids"] = m.val_ids;
  j["test_ids"] = m.test_ids;
  return j.dump(1) + "\n";
}

inline SplitManifest parse_split_manifest(const std::string& text, const std::string& source) {
  try {
    const auto j = nlohmann::json::parse(text);
    SplitManifest m;
    m.dataset_tag = j.at("dataset_tag").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.labeled_ratio = j.at("labeled_ratio").get<double>();
    m.original_training_size = j.at("original_training_size").get<std::size_t>();
    m.val_count = j.at("val_count").get<std::size_t>();
    m.labeled_ids = j.at("labeled_ids").get<std::vector<std::string>>();
    m.unlabeled_ids = j.at("unlabeled_ids").get<std::vector<std::string>>();
    m.val_ids = j.at("val_ids").get<std::vector<std::string>>();
    m.test_ids = j.at("test_ids").get<std::vector<std::string>>();
    check_disjoint(m);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(source + ": malformed split manifest: " + e.what());
  }
}

inline void write_split_manifest(const SplitManifest& m, const std::filesystem::path& path) {
  io::write_text_atomic(path, format_split_manifest(m));
}

inline SplitManifest read_split_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("split manifest not found: " + path.string());
  return parse_split_manifest(io::read_text(path), path.string());
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

template <typename T>
struct Batch {
  Matrix<T> f_image;
  Matrix<T> f_text;
  std::optional<Matrix<T>> labels;
  std::vector<std::string> ids;

  std::size_t size() const { return ids.size(); }
};

/// Record indices for each batch of one epoch. The order is a permutation
/// drawn from derive_seed(shuffle_seed, epoch).
inline std::vector<std::vector<std::size_t>> batch_plan(const FeatureStore& store, const std::vector<std::string>& ids,
                                                        std::size_t batch_size, std::uint64_t shuffle_seed,
                                                        std::uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> indices;
  indices.reserve(ids.size());
  for (const auto& id : ids) indices.push_back(store.index_of(id));
  Rng rng(derive_seed(shuffle_seed, epoch));
  rng.shuffle(std::span<std::size_t>(indices));
  std::vector<std::vector<std::size_t>> plan;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t end = std::min(indices.size(), start + batch_size);
    plan.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(start),
                      indices.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return plan;
}

/// Materializes the records at `indices` (in order) as a batch.
template <typename T>
Batch<T> gather(const FeatureStore& store, std::span<const std::size_t> indices) {
  const std::size_t d = store.dim();
  Batch<T> b;
  b.f_image = Matrix<T>(indices.size(), d);
  b.f_text = Matrix<T>(indices.size(), d);
  if (store.has_labels()) b.labels = Matrix<T>(indices.size(), store.label_dim());
  b.ids.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& rec = store.records()[indices[r]];
    std::copy(rec.f_image.begin(), rec.f_image.end(), b.f_image.row(r).begin());
    std::copy(rec.f_text.begin(), rec.f_text.end(), b.f_text.row(r).begin());
    if (b.labels)
      for (std::size_t c = 0; c < rec.labels->size(); ++c) (*b.labels)(r, c) = T((*rec.labels)[c]);
    b.ids.push_back(rec.id);
  }
  return b;
}

/// All records named by `ids`, unshuffled, in one batch.
template <typename T>
Batch<T> gather(const FeatureStore& store, const std::vector<std::string>& ids) {
  std::vector<std::size_t> indices;
  indices.reserve(ids.size());
  for (const auto& id : ids) indices.push_back(store.index_of(id));
  return gather<T>(store, std::span<const std::size_t>(indices));
}

/// One epoch over `ids` in batches of at most `batch_size`.
template <typename T>
std::vector<Batch<T>> batches(const FeatureStore& store, const std::vector<std::string>& ids, std::size_t batch_size,
                              std::uint64_t shuffle_seed, std::uint64_t epoch) {
  std::vector<Batch<T>> out;
  for (const auto& idx : batch_plan(store, ids, batch_size, shuffle_seed, epoch)) {
    out.push_back(gather<T>(store, std::span<const std::size_t>(idx)));
  }
  return out;
}

}  // namespace semimemes::data
