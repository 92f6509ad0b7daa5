#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace memesearch {

/// The three image classes. Enumerator order is the global tie-break order
/// used by every classifier and by confusion-matrix layouts.
enum class ClassLabel : std::uint8_t { kMeme = 0, kSticker = 1, kNoMeme = 2 };

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<ClassLabel, kNumClasses> kAllLabels = {
    ClassLabel::kMeme, ClassLabel::kSticker, ClassLabel::kNoMeme};

inline std::size_t label_index(ClassLabel label) {
  return static_cast<std::size_t>(label);
}

/// "meme" | "sticker" | "no_meme"
std::string_view label_name(ClassLabel label);
std::optional<ClassLabel> parse_label(std::string_view name);

struct FeatureVector {
  std::string id;
  std::vector<double> values;

  std::size_t dimension() const { return values.size(); }
  bool operator==(const FeatureVector&) const = default;
};

enum class Split : std::uint8_t { kUnsplit, kTrain, kTest };

std::string_view split_name(Split split);
std::optional<Split> parse_split(std::string_view name);

struct ManifestEntry {
  std::string id;
  std::optional<std::string> image_path;
  std::optional<ClassLabel> label;
  std::optional<std::string> caption;
  Split split = Split::kUnsplit;

  bool operator==(const ManifestEntry&) const = default;
};

/// Features keyed by id, in ascending id order. All vectors share one
/// dimension.
class FeatureTable {
 public:
  FeatureTable() = default;

  /// Throws kDimensionMismatch, kNonFinite or kDuplicateId.
  explicit FeatureTable(std::vector<FeatureVector> vectors);

  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  std::size_t dimension() const { return dimension_; }

  const std::vector<double>* find(std::string_view id) const;
  bool contains(std::string_view id) const { return find(id) != nullptr; }

  /// Rows in file order.
  const std::vector<FeatureVector>& rows() const { return rows_; }

 private:
  std::size_t dimension_ = 0;
  std::vector<FeatureVector> rows_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// (feature vector, label) samples with cached per-class counts. Immutable.
class LabeledDataset {
 public:
  struct Sample {
    FeatureVector features;
    ClassLabel label;
  };

  LabeledDataset() = default;

  /// Throws kDimensionMismatch if samples disagree on dimension.
  explicit LabeledDataset(std::vector<Sample> samples);

  const std::vector<Sample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  std::size_t dimension() const { return dimension_; }
  const std::array<std::size_t, kNumClasses>& class_counts() const {
    return counts_;
  }
  std::size_t count(ClassLabel label) const {
    return counts_[label_index(label)];
  }

  /// New dataset holding samples at the given indices, in that order.
  LabeledDataset subset(const std::vector<std::size_t>& indices) const;

 private:
  std::vector<Sample> samples_;
  std::array<std::size_t, kNumClasses> counts_{};
  std::size_t dimension_ = 0;
};

// ---------------------------------------------------------------------------
// Manifest files: UTF-8 JSON Lines, one object per line with the keys
// "id" (required), "image_path", "label", "caption", "split".
// Blank lines are skipped. Errors report 1-based line numbers.

std::vector<ManifestEntry> parse_manifest(std::istream& in);
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);
void write_manifest(std::ostream& out, const std::vector<ManifestEntry>& entries);

// ---------------------------------------------------------------------------
// Feature files: first line "<count> <dimension>", then one row per vector,
// "<id> v1 ... vn", space separated. Word-vector tables use the same format.

FeatureTable parse_feature_file(std::istream& in);
FeatureTable load_feature_file(const std::filesystem::path& path);
void write_feature_file(std::ostream& out, const FeatureTable& table);
void save_feature_file(const std::filesystem::path& path,
                       const FeatureTable& table);

/// Joins labeled manifest entries with their feature rows. Unlabeled entries
/// are skipped. Throws kMissingField when no entry carries a label, and
/// kMissingField naming the id when a labeled entry has no feature row.
LabeledDataset labeled_dataset(const std::vector<ManifestEntry>& entries,
                               const FeatureTable& features);

// ---------------------------------------------------------------------------
// Resampling and fold construction.

/// Keeps a uniformly drawn subset of every class, sized to the smallest
/// class. Survivors keep their original relative order.
/// Throws kEmptyClass if any class has no samples.
LabeledDataset undersample(const LabeledDataset& data, std::uint64_t seed);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// k stratified folds. Each class is shuffled and dealt round-robin over the
/// folds, continuing from where the previous class stopped, so both per-class
/// and total fold sizes differ by at most one. Index lists are sorted.
/// Throws kInvalidArgument for k < 2, kClassTooSmall if a present class has
/// fewer than k samples.
std::vector<Fold> stratified_folds(const LabeledDataset& data, std::size_t k,
                                   std::uint64_t seed);

/// One (caption, visual feature) retrieval pair.
struct CaptionedPair {
  std::string id;
  std::string caption;
  std::vector<double> visual;
};

struct PairSplit {
  std::vector<CaptionedPair> train;
  std::vector<CaptionedPair> test;
};

/// Entries with a caption and a visual feature row become pairs. Entries
/// tagged train/test stay where they are; unsplit ones are shuffled and fill
/// the train side up to n_train, the rest go to test.
/// Throws kInsufficientPairs unless at least n_train + 1 pairs exist.
PairSplit split_pairs(const std::vector<ManifestEntry>& entries,
                      const FeatureTable& visual, std::size_t n_train,
                      std::uint64_t seed);

}  // namespace memesearch
