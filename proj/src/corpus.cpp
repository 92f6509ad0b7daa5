#include "memesearch/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "memesearch/error.hpp"
#include "memesearch/numeric_text.hpp"
#include "memesearch/random.hpp"

namespace memesearch {

using ordered_json = nlohmann::ordered_json;

std::string_view label_name(ClassLabel label) {
  switch (label) {
    case ClassLabel::kMeme: return "meme";
    case ClassLabel::kSticker: return "sticker";
    case ClassLabel::kNoMeme: return "no_meme";
  }
  return "?";
}

std::optional<ClassLabel> parse_label(std::string_view name) {
  for (ClassLabel l : kAllLabels) {
    if (label_name(l) == name) return l;
  }
  return std::nullopt;
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kUnsplit: return "unsplit";
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
  }
  return "?";
}

std::optional<Split> parse_split(std::string_view name) {
  for (Split s : {Split::kUnsplit, Split::kTrain, Split::kTest}) {
    if (split_name(s) == name) return s;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

FeatureTable::FeatureTable(std::vector<FeatureVector> vectors)
    : rows_(std::move(vectors)) {
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const auto& row = rows_[i];
    if (i == 0) {
      dimension_ = row.dimension();
      if (dimension_ == 0) {
        throw Error(ErrorCode::kDimensionMismatch,
                    "feature vector '" + row.id + "' is empty");
      }
    } else if (row.dimension() != dimension_) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "feature vector '" + row.id + "' has dimension " +
                      std::to_string(row.dimension()) + ", expected " +
                      std::to_string(dimension_));
    }
    for (double v : row.values) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::kNonFinite,
                    "feature vector '" + row.id + "' has a non-finite value");
      }
    }
    if (!index_.emplace(row.id, i).second) {
      throw Error(ErrorCode::kDuplicateId, "duplicate id '" + row.id + "'");
    }
  }
}

const std::vector<double>* FeatureTable::find(std::string_view id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &rows_[it->second].values;
}

LabeledDataset::LabeledDataset(std::vector<Sample> samples)
    : samples_(std::move(samples)) {
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& s = samples_[i];
    if (i == 0) {
      dimension_ = s.features.dimension();
    } else if (s.features.dimension() != dimension_) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "sample '" + s.features.id + "' has dimension " +
                      std::to_string(s.features.dimension()) + ", expected " +
                      std::to_string(dimension_));
    }
    ++counts_[label_index(s.label)];
  }
}

LabeledDataset LabeledDataset::subset(
    const std::vector<std::size_t>& indices) const {
  std::vector<Sample> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(samples_.at(i));
  return LabeledDataset(std::move(out));
}

// ---------------------------------------------------------------------------

namespace {

std::string at_line(std::size_t line) {
  return "line " + std::to_string(line) + ": ";
}

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n';
  });
}

std::optional<std::string> optional_string(const ordered_json& obj,
                                           const char* key,
                                           std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) {
    throw Error(ErrorCode::kParse, at_line(line) + "field \"" +
                                       std::string(key) +
                                       "\" must be a string");
  }
  return it->get<std::string>();
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  }
  return in;
}

}  // namespace

std::vector<ManifestEntry> parse_manifest(std::istream& in) {
  std::vector<ManifestEntry> entries;
  std::set<std::string, std::less<>> seen;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (is_blank(text)) continue;
    ordered_json obj;
    try {
      obj = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::kParse, at_line(line) + e.what());
    }
    if (!obj.is_object()) {
      throw Error(ErrorCode::kParse, at_line(line) + "expected a JSON object");
    }
    ManifestEntry entry;
    auto id = optional_string(obj, "id", line);
    if (!id || id->empty()) {
      throw Error(ErrorCode::kMissingField,
                  at_line(line) + "missing required field \"id\"");
    }
    entry.id = *id;
    entry.image_path = optional_string(obj, "image_path", line);
    entry.caption = optional_string(obj, "caption", line);
    if (auto label = optional_string(obj, "label", line)) {
      entry.label = parse_label(*label);
      if (!entry.label) {
        throw Error(ErrorCode::kParse,
                    at_line(line) + "field \"label\" has unknown value \"" +
                        *label + "\" (expected meme, sticker or no_meme)");
      }
    }
    if (auto split = optional_string(obj, "split", line)) {
      auto parsed = parse_split(*split);
      if (!parsed) {
        throw Error(ErrorCode::kParse,
                    at_line(line) + "field \"split\" has unknown value \"" +
                        *split + "\" (expected train, test or unsplit)");
      }
      entry.split = *parsed;
    }
    if (!seen.insert(entry.id).second) {
      throw Error(ErrorCode::kDuplicateId,
                  at_line(line) + "duplicate id \"" + entry.id + "\"");
    }
    entries.push_back(std::move(entry));
  }
  return entries;
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  auto in = open_input(path);
  try {
    return parse_manifest(in);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void write_manifest(std::ostream& out,
                    const std::vector<ManifestEntry>& entries) {
  for (const auto& e : entries) {
    ordered_json obj;
    obj["id"] = e.id;
    if (e.image_path) obj["image_path"] = *e.image_path;
    if (e.label) obj["label"] = std::string(label_name(*e.label));
    if (e.caption) obj["caption"] = *e.caption;
    obj["split"] = std::string(split_name(e.split));
    out << obj.dump() << '\n';
  }
}

FeatureTable parse_feature_file(std::istream& in) {
  std::string text;
  if (!std::getline(in, text)) {
    throw Error(ErrorCode::kParse, "line 1: missing \"<count> <dimension>\" header");
  }
  auto header = split_ws(text);
  std::optional<long long> count, dim;
  if (header.size() == 2) {
    count = parse_integer(header[0]);
    dim = parse_integer(header[1]);
  }
  if (!count || !dim || *count < 0 || *dim < 1) {
    throw Error(ErrorCode::kParse,
                "line 1: header must be \"<count> <dimension>\" with dimension >= 1");
  }
  const auto dimension = static_cast<std::size_t>(*dim);

  std::vector<FeatureVector> rows;
  rows.reserve(static_cast<std::size_t>(*count));
  std::set<std::string, std::less<>> seen;
  std::size_t line = 1;
  while (std::getline(in, text)) {
    ++line;
    if (is_blank(text)) continue;
    const std::size_t row = rows.size() + 1;
    auto fields = split_ws(text);
    const std::string where =
        at_line(line) + "row " + std::to_string(row) + ": ";
    if (fields.size() - 1 != dimension) {
      throw Error(ErrorCode::kDimensionMismatch,
                  where + "expected " + std::to_string(dimension) +
                      " values, found " + std::to_string(fields.size() - 1));
    }
    FeatureVector fv;
    fv.id = std::string(fields[0]);
    fv.values.reserve(dimension);
    for (std::size_t j = 1; j < fields.size(); ++j) {
      auto v = parse_double(fields[j]);
      if (!v) {
        throw Error(ErrorCode::kParse, where + "malformed number \"" +
                                           std::string(fields[j]) + "\"");
      }
      if (!std::isfinite(*v)) {
        throw Error(ErrorCode::kNonFinite, where + "non-finite value \"" +
                                               std::string(fields[j]) + "\"");
      }
      fv.values.push_back(*v);
    }
    if (!seen.insert(fv.id).second) {
      throw Error(ErrorCode::kDuplicateId,
                  where + "duplicate id \"" + fv.id + "\"");
    }
    rows.push_back(std::move(fv));
  }
  if (rows.size() != static_cast<std::size_t>(*count)) {
    throw Error(ErrorCode::kParse, "header declares " + std::to_string(*count) +
                                       " rows, found " +
                                       std::to_string(rows.size()));
  }
  return FeatureTable(std::move(rows));
}

FeatureTable load_feature_file(const std::filesystem::path& path) {
  auto in = open_input(path);
  try {
    return parse_feature_file(in);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void write_feature_file(std::ostream& out, const FeatureTable& table) {
  out << table.size() << ' ' << table.dimension() << '\n';
  for (const auto& row : table.rows()) {
    out << row.id;
    for (double v : row.values) out << ' ' << format_double(v);
    out << '\n';
  }
}

void save_feature_file(const std::filesystem::path& path,
                       const FeatureTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  write_feature_file(out, table);
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

LabeledDataset labeled_dataset(const std::vector<ManifestEntry>& entries,
                               const FeatureTable& features) {
  std::vector<LabeledDataset::Sample> samples;
  for (const auto& e : entries) {
    if (!e.label) continue;
    const auto* values = features.find(e.id);
    if (values == nullptr) {
      throw Error(ErrorCode::kMissingField,
                  "labeled manifest entry '" + e.id + "' has no feature row");
    }
    samples.push_back({FeatureVector{e.id, *values}, *e.label});
  }
  if (samples.empty() && !entries.empty()) {
    throw Error(ErrorCode::kMissingField,
                "no manifest entry has a \"label\" field; classification needs "
                "labels meme, sticker or no_meme");
  }
  return LabeledDataset(std::move(samples));
}

// ---------------------------------------------------------------------------

namespace {

std::array<std::vector<std::size_t>, kNumClasses> indices_by_class(
    const LabeledDataset& data) {
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) {
    by_class[label_index(data.samples()[i].label)].push_back(i);
  }
  return by_class;
}

}  // namespace

LabeledDataset undersample(const LabeledDataset& data, std::uint64_t seed) {
  for (ClassLabel l : kAllLabels) {
    if (data.count(l) == 0) {
      throw Error(ErrorCode::kEmptyClass,
                  "class '" + std::string(label_name(l)) + "' has no samples");
    }
  }
  const std::size_t target =
      *std::min_element(data.class_counts().begin(), data.class_counts().end());

  Rng rng(seed);
  auto by_class = indices_by_class(data);
  std::vector<std::size_t> keep;
  keep.reserve(target * kNumClasses);
  for (auto& idx : by_class) {
    // Partial Fisher-Yates: the first `target` slots are a uniform draw.
    for (std::size_t i = 0; i < target; ++i) {
      std::size_t j = i + rng.below(idx.size() - i);
      std::swap(idx[i], idx[j]);
    }
    keep.insert(keep.end(), idx.begin(), idx.begin() + target);
  }
  std::sort(keep.begin(), keep.end());
  return data.subset(keep);
}

std::vector<Fold> stratified_folds(const LabeledDataset& data, std::size_t k,
                                   std::uint64_t seed) {
  if (k < 2) {
    throw Error(ErrorCode::kInvalidArgument, "fold count must be >= 2");
  }
  for (ClassLabel l : kAllLabels) {
    const std::size_t n = data.count(l);
    if (n > 0 && n < k) {
      throw Error(ErrorCode::kClassTooSmall,
                  "class '" + std::string(label_name(l)) + "' has " +
                      std::to_string(n) + " samples, fewer than " +
                      std::to_string(k) + " folds");
    }
  }
  Rng rng(seed);
  auto by_class = indices_by_class(data);
  std::vector<std::vector<std::size_t>> validation(k);
  std::size_t next = 0;
  for (auto& idx : by_class) {
    rng.shuffle(idx);
    for (std::size_t i : idx) {
      validation[next].push_back(i);
      next = (next + 1) % k;
    }
  }
  std::vector<Fold> folds(k);
  std::vector<std::size_t> owner(data.size());
  for (std::size_t f = 0; f < k; ++f) {
    std::sort(validation[f].begin(), validation[f].end());
    for (std::size_t i : validation[f]) owner[i] = f;
    folds[f].validation = std::move(validation[f]);
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t f = 0; f < k; ++f) {
      if (owner[i] != f) folds[f].train.push_back(i);
    }
  }
  return folds;
}

PairSplit split_pairs(const std::vector<ManifestEntry>& entries,
                      const FeatureTable& visual, std::size_t n_train,
                      std::uint64_t seed) {
  PairSplit split;
  std::vector<CaptionedPair> unsplit;
  for (const auto& e : entries) {
    if (!e.caption) continue;
    const auto* v = visual.find(e.id);
    if (v == nullptr) continue;
    CaptionedPair pair{e.id, *e.caption, *v};
    switch (e.split) {
      case Split::kTrain: split.train.push_back(std::move(pair)); break;
      case Split::kTest: split.test.push_back(std::move(pair)); break;
      case Split::kUnsplit: unsplit.push_back(std::move(pair)); break;
    }
  }
  const std::size_t total =
      split.train.size() + split.test.size() + unsplit.size();
  if (total < n_train + 1) {
    throw Error(ErrorCode::kInsufficientPairs,
                "need at least " + std::to_string(n_train + 1) +
                    " captioned pairs with visual features, found " +
                    std::to_string(total));
  }
  Rng rng(seed);
  rng.shuffle(unsplit);
  for (auto& pair : unsplit) {
    if (split.train.size() < n_train) {
      split.train.push_back(std::move(pair));
    } else {
      split.test.push_back(std::move(pair));
    }
  }
  return split;
}

}  // namespace memesearch
