#include "memesearch/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "memesearch/error.hpp"
#include "memesearch/random.hpp"

namespace memesearch {

using nlohmann::json;

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts) {
    for (auto c : row) t += c;
  }
  return t;
}

std::uint64_t ConfusionMatrix::support(ClassLabel truth) const {
  std::uint64_t t = 0;
  for (auto c : counts[label_index(truth)]) t += c;
  return t;
}

std::array<std::array<double, kNumClasses>, kNumClasses>
ConfusionMatrix::normalized() const {
  std::array<std::array<double, kNumClasses>, kNumClasses> out{};
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    const auto row_total = support(kAllLabels[i]);
    if (row_total == 0) continue;
    for (std::size_t j = 0; j < kNumClasses; ++j) {
      out[i][j] = static_cast<double>(counts[i][j]) /
                  static_cast<double>(row_total);
    }
  }
  return out;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    for (std::size_t j = 0; j < kNumClasses; ++j) {
      counts[i][j] += other.counts[i][j];
    }
  }
  return *this;
}

ConfusionMatrix confusion(const std::vector<ClassLabel>& truth,
                          const std::vector<ClassLabel>& predicted) {
  if (truth.size() != predicted.size()) {
    throw Error(ErrorCode::kLengthMismatch,
                "true labels: " + std::to_string(truth.size()) +
                    ", predicted labels: " + std::to_string(predicted.size()));
  }
  if (truth.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "no labels to compare");
  }
  ConfusionMatrix cm;
  for (std::size_t n = 0; n < truth.size(); ++n) {
    ++cm.counts[label_index(truth[n])][label_index(predicted[n])];
  }
  return cm;
}

double f1_score(double precision, double recall) {
  const double sum = precision + recall;
  return sum > 0.0 ? 2.0 * precision * recall / sum : 0.0;
}

MetricReport classification_report(const ConfusionMatrix& cm) {
  MetricReport r;
  r.total = cm.total();
  std::uint64_t trace = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::uint64_t tp = cm.counts[c][c];
    std::uint64_t predicted = 0;
    std::uint64_t actual = 0;
    for (std::size_t o = 0; o < kNumClasses; ++o) {
      predicted += cm.counts[o][c];
      actual += cm.counts[c][o];
    }
    trace += tp;
    ClassMetrics& m = r.per_class[c];
    m.support = actual;
    if (predicted > 0) {
      m.precision = static_cast<double>(tp) / static_cast<double>(predicted);
    } else {
      m.precision_undefined = true;
    }
    if (actual > 0) {
      m.recall = static_cast<double>(tp) / static_cast<double>(actual);
    } else {
      m.recall_undefined = true;
    }
    m.f1 = f1_score(m.precision, m.recall);
  }
  for (const ClassMetrics& m : r.per_class) {
    r.macro.precision += m.precision / kNumClasses;
    r.macro.recall += m.recall / kNumClasses;
    r.macro.f1 += m.f1 / kNumClasses;
    if (r.total > 0) {
      const double w =
          static_cast<double>(m.support) / static_cast<double>(r.total);
      r.weighted.precision += w * m.precision;
      r.weighted.recall += w * m.recall;
      r.weighted.f1 += w * m.f1;
    }
  }
  if (r.total > 0) {
    r.accuracy = static_cast<double>(trace) / static_cast<double>(r.total);
  }
  return r;
}

double average_precision(const std::vector<std::string>& ranking,
                         const std::set<std::string>& relevant) {
  if (relevant.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "relevant set is empty");
  }
  const double weight = 1.0 / static_cast<double>(relevant.size());
  std::set<std::string> found;
  double ap = 0.0;
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    if (relevant.count(ranking[i]) == 0) continue;
    if (!found.insert(ranking[i]).second) continue;
    // Recall rises by 1/|relevant| here, at precision |found| / rank.
    ap += weight * static_cast<double>(found.size()) / static_cast<double>(i + 1);
  }
  if (found.size() != relevant.size()) {
    for (const auto& id : relevant) {
      if (found.count(id) == 0) {
        throw Error(ErrorCode::kRelevantMissing,
                    "relevant item '" + id + "' is not in the ranking");
      }
    }
  }
  return ap;
}

double mean_average_precision(const std::vector<RankingQuery>& queries) {
  if (queries.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "no queries");
  }
  double sum = 0.0;
  for (const auto& q : queries) sum += average_precision(q.ranking, q.relevant);
  return sum / static_cast<double>(queries.size());
}

double random_ranking_map(std::size_t n) {
  if (n == 0) return 0.0;
  double h = 0.0;
  for (std::size_t i = n; i >= 1; --i) h += 1.0 / static_cast<double>(i);
  return h / static_cast<double>(n);
}

// ---------------------------------------------------------------------------

namespace {

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

json summary_json(const MetricSummary& s) {
  return {{"mean", s.mean}, {"stddev", s.stddev}};
}

json matrix_json(const ConfusionMatrix& cm) {
  json rows = json::array();
  for (const auto& row : cm.counts) rows.push_back(row);
  return rows;
}

}  // namespace

CvReport cross_validate(const ClassifierSpec& spec, const LabeledDataset& data,
                        std::size_t resamples, std::size_t folds,
                        std::uint64_t seed, std::string method) {
  if (resamples < 1) {
    throw Error(ErrorCode::kInvalidArgument, "resamples must be >= 1");
  }
  if (folds < 2) {
    throw Error(ErrorCode::kInvalidArgument, "folds must be >= 2");
  }
  spec.validate();
  CvReport report;
  report.method = method.empty() ? std::string(kind_name(spec.kind)) : std::move(method);
  report.spec = spec;
  report.resamples = resamples;
  report.folds = folds;
  report.seed = seed;

  std::vector<double> mp, mr, mf, wp, wr, wf, acc;
  for (std::size_t r = 0; r < resamples; ++r) {
    const std::uint64_t us_seed = derive_seed(seed, "undersample", r);
    const std::uint64_t fold_seed = derive_seed(seed, "folds", r);
    report.undersample_seeds.push_back(us_seed);
    report.fold_seeds.push_back(fold_seed);
    const LabeledDataset balanced = undersample(data, us_seed);
    const auto partition = stratified_folds(balanced, folds, fold_seed);
    for (std::size_t f = 0; f < folds; ++f) {
      ClassifierSpec fold_spec = spec;
      fold_spec.seed = derive_seed(spec.seed, "classifier", r * folds + f);
      const auto model = train(fold_spec, balanced.subset(partition[f].train));
      std::vector<ClassLabel> truth, predicted;
      for (std::size_t i : partition[f].validation) {
        const auto& s = balanced.samples()[i];
        truth.push_back(s.label);
        predicted.push_back(model.predict(s.features.values));
      }
      FoldResult fr{r, f, confusion(truth, predicted), {}};
      fr.report = classification_report(fr.confusion);
      report.pooled += fr.confusion;
      const auto norm = fr.confusion.normalized();
      for (std::size_t i = 0; i < kNumClasses; ++i) {
        for (std::size_t j = 0; j < kNumClasses; ++j) {
          report.mean_normalized[i][j] += norm[i][j];
        }
      }
      mp.push_back(fr.report.macro.precision);
      mr.push_back(fr.report.macro.recall);
      mf.push_back(fr.report.macro.f1);
      wp.push_back(fr.report.weighted.precision);
      wr.push_back(fr.report.weighted.recall);
      wf.push_back(fr.report.weighted.f1);
      acc.push_back(fr.report.accuracy);
      report.results.push_back(std::move(fr));
    }
  }
  const auto n = static_cast<double>(report.results.size());
  for (auto& row : report.mean_normalized) {
    for (double& v : row) v /= n;
  }
  report.macro_precision = summarize(mp);
  report.macro_recall = summarize(mr);
  report.macro_f1 = summarize(mf);
  report.weighted_precision = summarize(wp);
  report.weighted_recall = summarize(wr);
  report.weighted_f1 = summarize(wf);
  report.accuracy = summarize(acc);
  return report;
}

json to_json(const MetricReport& report) {
  json per_class = json::object();
  for (ClassLabel l : kAllLabels) {
    const ClassMetrics& m = report.per_class[label_index(l)];
    per_class[std::string(label_name(l))] = {
        {"precision", m.precision},
        {"recall", m.recall},
        {"f1", m.f1},
        {"support", m.support},
        {"precision_undefined", m.precision_undefined},
        {"recall_undefined", m.recall_undefined}};
  }
  return {{"per_class", per_class},
          {"macro",
           {{"precision", report.macro.precision},
            {"recall", report.macro.recall},
            {"f1", report.macro.f1}}},
          {"weighted",
           {{"precision", report.weighted.precision},
            {"recall", report.weighted.recall},
            {"f1", report.weighted.f1}}},
          {"accuracy", report.accuracy},
          {"total", report.total}};
}

json to_json(const CvReport& report) {
  json folds = json::array();
  for (const auto& fr : report.results) {
    folds.push_back({{"resample", fr.resample},
                     {"fold", fr.fold},
                     {"confusion", matrix_json(fr.confusion)},
                     {"report", to_json(fr.report)}});
  }
  json mean_norm = json::array();
  for (const auto& row : report.mean_normalized) mean_norm.push_back(row);
  json labels = json::array();
  for (ClassLabel l : kAllLabels) labels.push_back(std::string(label_name(l)));
  return {{"format_version", 1},
          {"method", report.method},
          {"classifier", std::string(kind_name(report.spec.kind))},
          {"resamples", report.resamples},
          {"folds", report.folds},
          {"seed", report.seed},
          {"undersample_seeds", report.undersample_seeds},
          {"fold_seeds", report.fold_seeds},
          {"labels", labels},
          {"summary",
           {{"macro_precision", summary_json(report.macro_precision)},
            {"macro_recall", summary_json(report.macro_recall)},
            {"macro_f1", summary_json(report.macro_f1)},
            {"weighted_precision", summary_json(report.weighted_precision)},
            {"weighted_recall", summary_json(report.weighted_recall)},
            {"weighted_f1", summary_json(report.weighted_f1)},
            {"accuracy", summary_json(report.accuracy)}}},
          {"pooled_confusion", matrix_json(report.pooled)},
          {"mean_normalized_confusion", mean_norm},
          {"fold_results", folds}};
}

// ---------------------------------------------------------------------------

IcrReport icr(const std::vector<AnnotationRecord>& records) {
  // (coder -> item -> (timestamp, position, label)); latest wins.
  struct Latest {
    std::int64_t timestamp;
    std::size_t position;
    ClassLabel label;
  };
  std::map<std::string, std::map<std::string, Latest>> by_coder;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    auto& slot = by_coder[r.coder_id];
    auto [it, inserted] = slot.try_emplace(r.item_id, Latest{r.timestamp_ms, i, r.label});
    if (!inserted && r.timestamp_ms >= it->second.timestamp) {
      it->second = Latest{r.timestamp_ms, i, r.label};
    }
  }
  IcrReport report;
  double sum = 0.0;
  std::size_t counted = 0;
  for (auto a = by_coder.begin(); a != by_coder.end(); ++a) {
    for (auto b = std::next(a); b != by_coder.end(); ++b) {
      CoderPairAgreement pair{a->first, b->first, 0, 0.0};
      std::size_t agree = 0;
      for (const auto& [item, la] : a->second) {
        auto it = b->second.find(item);
        if (it == b->second.end()) continue;
        ++pair.co_annotated;
        if (la.label == it->second.label) ++agree;
      }
      if (pair.co_annotated > 0) {
        pair.agreement = static_cast<double>(agree) /
                         static_cast<double>(pair.co_annotated);
        sum += pair.agreement;
        ++counted;
      }
      report.pairs.push_back(std::move(pair));
    }
  }
  if (counted == 0) {
    throw Error(ErrorCode::kNoOverlap,
                "no two coders labeled a common item");
  }
  report.mean = sum / static_cast<double>(counted);
  return report;
}

json to_json(const IcrReport& report) {
  json pairs = json::array();
  for (const auto& p : report.pairs) {
    pairs.push_back({{"coder_a", p.coder_a},
                     {"coder_b", p.coder_b},
                     {"co_annotated", p.co_annotated},
                     {"agreement", p.agreement}});
  }
  return {{"mean", report.mean}, {"pairs", pairs}};
}

}  // namespace memesearch
