#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "memesearch/corpus.hpp"

namespace memesearch {

enum class ClassifierKind : std::uint8_t {
  kKnn,
  kNaiveBayes,
  kDecisionTree,
  kLinearSvm,
};

std::string_view kind_name(ClassifierKind kind);
std::optional<ClassifierKind> parse_kind(std::string_view name);

struct ClassifierSpec {
  ClassifierKind kind = ClassifierKind::kLinearSvm;

  // knn
  std::size_t k = 5;
  // naive_bayes: epsilon = var_smoothing * largest per-feature variance
  double var_smoothing = 1e-9;
  // decision_tree
  std::size_t max_depth = 20;
  std::size_t min_leaf = 1;
  // linear_svm: step size 1 / (lambda * (t + t0)), t0 = 1 / (lambda * eta0)
  double lambda = 1e-4;
  std::size_t epochs = 50;
  double learning_rate = 0.1;

  std::uint64_t seed = 0;

  /// Throws kInvalidArgument for out-of-range hyperparameters of `kind`.
  void validate() const;
};

using ClassScores = std::map<ClassLabel, double>;

/// Breaks ties toward the earlier label in meme < sticker < no_meme.
ClassLabel argmax_label(const ClassScores& scores);

/// Learned state of one classifier. Immutable after training.
class TrainedClassifier {
 public:
  struct KnnState {
    std::vector<std::vector<double>> points;
    std::vector<ClassLabel> labels;
  };
  struct GaussianState {
    std::vector<double> log_prior;          // per trained label
    std::vector<std::vector<double>> mean;  // per trained label
    std::vector<std::vector<double>> var;   // smoothed
  };
  struct TreeNode {
    // feature < 0 marks a leaf.
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    std::array<std::size_t, kNumClasses> counts{};
    double impurity = 0.0;
  };
  struct TreeState {
    std::vector<TreeNode> nodes;  // root at index 0
  };
  struct SvmState {
    std::vector<std::vector<double>> weights;  // per trained label
    std::vector<double> bias;
    /// Sum over the one-vs-rest problems of the regularized hinge objective,
    /// evaluated on the training set after each epoch.
    std::vector<double> objective_trace;
  };
  using State = std::variant<KnnState, GaussianState, TreeState, SvmState>;

  TrainedClassifier(ClassifierSpec spec, std::size_t dimension,
                    std::vector<ClassLabel> labels, State state);

  ClassifierKind kind() const { return spec_.kind; }
  const ClassifierSpec& spec() const { return spec_; }
  std::size_t dimension() const { return dimension_; }
  /// Labels present in the training data, in label order.
  const std::vector<ClassLabel>& labels() const { return labels_; }
  const State& state() const { return state_; }

  /// Throws kDimensionMismatch if x has the wrong length.
  ClassLabel predict(std::span<const double> x) const;

  /// knn: neighbor vote fractions. naive_bayes: log prior + log likelihood.
  /// decision_tree: leaf class fractions. linear_svm: raw decision values.
  /// Only trained labels appear.
  ClassScores predict_scores(std::span<const double> x) const;

  static constexpr int kFormatVersion = 1;
  nlohmann::json to_json() const;
  static TrainedClassifier from_json(const nlohmann::json& doc);

 private:
  ClassifierSpec spec_;
  std::size_t dimension_;
  std::vector<ClassLabel> labels_;
  State state_;
};

/// Throws kEmptyClass on an empty dataset. Labels absent from `data` are
/// never predicted.
TrainedClassifier train(const ClassifierSpec& spec, const LabeledDataset& data);

void save_classifier(const std::filesystem::path& path,
                     const TrainedClassifier& model);
TrainedClassifier load_classifier(const std::filesystem::path& path);

}  // namespace memesearch
