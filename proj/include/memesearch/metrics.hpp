#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "memesearch/classifiers.hpp"
#include "memesearch/corpus.hpp"

namespace memesearch {

/// Rows are the true class, columns the predicted class, both in label order.
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

  std::uint64_t total() const;
  std::uint64_t support(ClassLabel truth) const;
  /// Row-normalized copy; rows with no support stay zero.
  std::array<std::array<double, kNumClasses>, kNumClasses> normalized() const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;
};

/// Throws kLengthMismatch for unequal lengths, kInvalidArgument if empty.
ConfusionMatrix confusion(const std::vector<ClassLabel>& truth,
                          const std::vector<ClassLabel>& predicted);

/// Harmonic mean; 0 when both inputs are 0.
double f1_score(double precision, double recall);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
  // Set when the denominator was zero and the value was reported as 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
};

struct AveragedMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricReport {
  std::array<ClassMetrics, kNumClasses> per_class{};
  AveragedMetrics macro;
  AveragedMetrics weighted;
  double accuracy = 0.0;  // equals micro precision and micro recall
  std::uint64_t total = 0;
};

MetricReport classification_report(const ConfusionMatrix& cm);

/// Recall-weighted mean of the precision at every rank where a relevant item
/// appears. Throws kRelevantMissing if a relevant id is not ranked,
/// kInvalidArgument if `relevant` is empty.
double average_precision(const std::vector<std::string>& ranking,
                         const std::set<std::string>& relevant);

/// Fast path for the single-relevant case: AP = 1 / rank (1-based).
inline double average_precision_at_rank(std::size_t rank) {
  return 1.0 / static_cast<double>(rank);
}

struct RankingQuery {
  std::vector<std::string> ranking;
  std::set<std::string> relevant;
};

double mean_average_precision(const std::vector<RankingQuery>& queries);

/// Expected AP of a uniformly random ranking of n items with one relevant
/// item: H_n / n.
double random_ranking_map(std::size_t n);

// ---------------------------------------------------------------------------
// Repeated undersampling with stratified k-fold cross-validation.

struct FoldResult {
  std::size_t resample = 0;
  std::size_t fold = 0;
  ConfusionMatrix confusion;
  MetricReport report;
};

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for one value
};

struct CvReport {
  std::string method;
  ClassifierSpec spec;
  std::size_t resamples = 0;
  std::size_t folds = 0;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> undersample_seeds;
  std::vector<std::uint64_t> fold_seeds;
  std::vector<FoldResult> results;  // (resample, fold) order
  ConfusionMatrix pooled;           // sum over every validation fold

  MetricSummary macro_precision, macro_recall, macro_f1;
  MetricSummary weighted_precision, weighted_recall, weighted_f1;
  MetricSummary accuracy;

  /// Mean of the per-fold row-normalized confusion matrices.
  std::array<std::array<double, kNumClasses>, kNumClasses> mean_normalized{};
};

/// For each resample r: undersample with derive_seed(seed, "undersample", r),
/// build stratified folds with derive_seed(seed, "folds", r), then train on
/// all but one fold and evaluate on the held-out fold, once per fold.
CvReport cross_validate(const ClassifierSpec& spec, const LabeledDataset& data,
                        std::size_t resamples, std::size_t folds,
                        std::uint64_t seed, std::string method = {});

nlohmann::json to_json(const MetricReport& report);
nlohmann::json to_json(const CvReport& report);

// ---------------------------------------------------------------------------
// Inter-coder reliability.

struct AnnotationRecord {
  std::string item_id;
  std::string coder_id;
  ClassLabel label = ClassLabel::kMeme;
  std::int64_t timestamp_ms = 0;
};

struct CoderPairAgreement {
  std::string coder_a;  // coder_a < coder_b
  std::string coder_b;
  std::size_t co_annotated = 0;
  double agreement = 0.0;  // 0 when co_annotated == 0
};

struct IcrReport {
  std::vector<CoderPairAgreement> pairs;  // every coder pair, sorted
  double mean = 0.0;  // over pairs with at least one co-annotated item
};

/// Percent agreement per coder pair over items both coders labeled. For a
/// repeated (item, coder), the record with the latest timestamp wins; equal
/// timestamps resolve to the later record in the list. Throws kNoOverlap when
/// no pair shares an item.
IcrReport icr(const std::vector<AnnotationRecord>& records);

nlohmann::json to_json(const IcrReport& report);

}  // namespace memesearch
