#include "memesearch/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "memesearch/error.hpp"
#include "memesearch/random.hpp"

namespace memesearch {

using nlohmann::json;

std::string_view kind_name(ClassifierKind kind) {
  switch (kind) {
    case ClassifierKind::kKnn: return "knn";
    case ClassifierKind::kNaiveBayes: return "naive_bayes";
    case ClassifierKind::kDecisionTree: return "decision_tree";
    case ClassifierKind::kLinearSvm: return "linear_svm";
  }
  return "?";
}

std::optional<ClassifierKind> parse_kind(std::string_view name) {
  for (auto k : {ClassifierKind::kKnn, ClassifierKind::kNaiveBayes,
                 ClassifierKind::kDecisionTree, ClassifierKind::kLinearSvm}) {
    if (kind_name(k) == name) return k;
  }
  return std::nullopt;
}

void ClassifierSpec::validate() const {
  auto fail = [](const std::string& msg) {
    throw Error(ErrorCode::kInvalidArgument, msg);
  };
  switch (kind) {
    case ClassifierKind::kKnn:
      if (k < 1) fail("knn: k must be >= 1");
      break;
    case ClassifierKind::kNaiveBayes:
      if (!(var_smoothing > 0.0) || !std::isfinite(var_smoothing)) {
        fail("naive_bayes: var_smoothing must be positive");
      }
      break;
    case ClassifierKind::kDecisionTree:
      if (max_depth < 1) fail("decision_tree: max_depth must be >= 1");
      if (min_leaf < 1) fail("decision_tree: min_leaf must be >= 1");
      break;
    case ClassifierKind::kLinearSvm:
      if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        fail("linear_svm: lambda must be positive");
      }
      if (epochs < 1) fail("linear_svm: epochs must be >= 1");
      if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        fail("linear_svm: learning_rate must be positive");
      }
      break;
  }
}

ClassLabel argmax_label(const ClassScores& scores) {
  // std::map iterates in label order, so strict > keeps the earliest label.
  auto best = scores.begin();
  for (auto it = scores.begin(); it != scores.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return best->first;
}

TrainedClassifier::TrainedClassifier(ClassifierSpec spec, std::size_t dimension,
                                     std::vector<ClassLabel> labels,
                                     State state)
    : spec_(spec),
      dimension_(dimension),
      labels_(std::move(labels)),
      state_(std::move(state)) {}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double gini(const std::array<std::size_t, kNumClasses>& counts,
            std::size_t total) {
  if (total == 0) return 0.0;
  double sum_sq = 0.0;
  for (std::size_t c : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    sum_sq += p * p;
  }
  return 1.0 - sum_sq;
}

// --- knn -------------------------------------------------------------------

TrainedClassifier::KnnState train_knn(const LabeledDataset& data) {
  TrainedClassifier::KnnState s;
  for (const auto& sample : data.samples()) {
    s.points.push_back(sample.features.values);
    s.labels.push_back(sample.label);
  }
  return s;
}

ClassScores knn_scores(const TrainedClassifier::KnnState& s, std::size_t k,
                       const std::vector<ClassLabel>& labels,
                       std::span<const double> x) {
  const std::size_t n = s.points.size();
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    dist[i] = {squared_distance(s.points[i], x), i};
  }
  const std::size_t kk = std::min(k, n);
  std::partial_sort(dist.begin(), dist.begin() + kk, dist.end());
  ClassScores scores;
  for (ClassLabel l : labels) scores[l] = 0.0;
  for (std::size_t i = 0; i < kk; ++i) {
    scores[s.labels[dist[i].second]] += 1.0;
  }
  for (auto& [label, v] : scores) v /= static_cast<double>(kk);
  return scores;
}

// --- naive bayes -----------------------------------------------------------

TrainedClassifier::GaussianState train_naive_bayes(
    const LabeledDataset& data, const std::vector<ClassLabel>& labels,
    double var_smoothing) {
  const std::size_t dim = data.dimension();
  const auto n_total = static_cast<double>(data.size());

  // Largest per-feature variance over the whole training set.
  std::vector<double> mean_all(dim, 0.0);
  for (const auto& s : data.samples()) {
    for (std::size_t j = 0; j < dim; ++j) mean_all[j] += s.features.values[j];
  }
  for (double& m : mean_all) m /= n_total;
  std::vector<double> var_all(dim, 0.0);
  for (const auto& s : data.samples()) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = s.features.values[j] - mean_all[j];
      var_all[j] += d * d;
    }
  }
  double max_var = 0.0;
  for (double v : var_all) max_var = std::max(max_var, v / n_total);
  double epsilon = var_smoothing * max_var;
  if (epsilon <= 0.0) epsilon = var_smoothing;

  TrainedClassifier::GaussianState g;
  for (ClassLabel label : labels) {
    std::vector<double> mean(dim, 0.0);
    std::vector<double> var(dim, 0.0);
    std::size_t n = 0;
    for (const auto& s : data.samples()) {
      if (s.label != label) continue;
      ++n;
      for (std::size_t j = 0; j < dim; ++j) mean[j] += s.features.values[j];
    }
    for (double& m : mean) m /= static_cast<double>(n);
    for (const auto& s : data.samples()) {
      if (s.label != label) continue;
      for (std::size_t j = 0; j < dim; ++j) {
        const double d = s.features.values[j] - mean[j];
        var[j] += d * d;
      }
    }
    for (double& v : var) v = v / static_cast<double>(n) + epsilon;
    g.log_prior.push_back(std::log(static_cast<double>(n) / n_total));
    g.mean.push_back(std::move(mean));
    g.var.push_back(std::move(var));
  }
  return g;
}

ClassScores naive_bayes_scores(const TrainedClassifier::GaussianState& g,
                               const std::vector<ClassLabel>& labels,
                               std::span<const double> x) {
  ClassScores scores;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    double ll = g.log_prior[c];
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double d = x[j] - g.mean[c][j];
      ll -= 0.5 * (std::log(2.0 * std::numbers::pi * g.var[c][j]) +
                   d * d / g.var[c][j]);
    }
    scores[labels[c]] = ll;
  }
  return scores;
}

// --- decision tree ---------------------------------------------------------

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double impurity = 0.0;
};

SplitChoice best_split(const LabeledDataset& data,
                       const std::vector<std::size_t>& rows,
                       double parent_impurity, std::size_t min_leaf) {
  const std::size_t n = rows.size();
  SplitChoice best;
  best.impurity = parent_impurity;
  std::array<std::size_t, kNumClasses> total{};
  for (std::size_t r : rows) ++total[label_index(data.samples()[r].label)];

  std::vector<std::pair<double, std::size_t>> order(n);
  for (std::size_t f = 0; f < data.dimension(); ++f) {
    for (std::size_t i = 0; i < n; ++i) {
      order[i] = {data.samples()[rows[i]].features.values[f], rows[i]};
    }
    std::sort(order.begin(), order.end());
    std::array<std::size_t, kNumClasses> left{};
    for (std::size_t i = 0; i + 1 < n; ++i) {
      ++left[label_index(data.samples()[order[i].second].label)];
      const double lo = order[i].first;
      const double hi = order[i + 1].first;
      if (lo == hi) continue;
      const std::size_t n_left = i + 1;
      const std::size_t n_right = n - n_left;
      if (n_left < min_leaf || n_right < min_leaf) continue;
      std::array<std::size_t, kNumClasses> right{};
      for (std::size_t c = 0; c < kNumClasses; ++c) right[c] = total[c] - left[c];
      const double weighted =
          (static_cast<double>(n_left) * gini(left, n_left) +
           static_cast<double>(n_right) * gini(right, n_right)) /
          static_cast<double>(n);
      if (weighted < best.impurity - 1e-15) {
        double mid = lo + (hi - lo) / 2.0;
        if (!(mid < hi)) mid = lo;
        best = {static_cast<int>(f), mid, weighted};
      }
    }
  }
  return best;
}

TrainedClassifier::TreeState train_tree(const LabeledDataset& data,
                                        std::size_t max_depth,
                                        std::size_t min_leaf) {
  using Node = TrainedClassifier::TreeNode;
  TrainedClassifier::TreeState tree;
  struct Pending {
    int node;
    std::vector<std::size_t> rows;
    std::size_t depth;
  };
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  tree.nodes.push_back(Node{});
  std::vector<Pending> stack;
  stack.push_back({0, std::move(all), 0});
  while (!stack.empty()) {
    Pending p = std::move(stack.back());
    stack.pop_back();
    Node node;
    for (std::size_t r : p.rows) ++node.counts[label_index(data.samples()[r].label)];
    node.impurity = gini(node.counts, p.rows.size());
    if (node.impurity > 0.0 && p.depth < max_depth &&
        p.rows.size() >= 2 * min_leaf) {
      SplitChoice split = best_split(data, p.rows, node.impurity, min_leaf);
      if (split.feature >= 0) {
        std::vector<std::size_t> left_rows, right_rows;
        for (std::size_t r : p.rows) {
          const double v =
              data.samples()[r].features.values[static_cast<std::size_t>(split.feature)];
          (v <= split.threshold ? left_rows : right_rows).push_back(r);
        }
        node.feature = split.feature;
        node.threshold = split.threshold;
        node.left = static_cast<int>(tree.nodes.size());
        node.right = node.left + 1;
        tree.nodes.push_back(Node{});
        tree.nodes.push_back(Node{});
        // Right pushed first so the left subtree is finished first.
        stack.push_back({node.right, std::move(right_rows), p.depth + 1});
        stack.push_back({node.left, std::move(left_rows), p.depth + 1});
      }
    }
    tree.nodes[static_cast<std::size_t>(p.node)] = node;
  }
  return tree;
}

ClassScores tree_scores(const TrainedClassifier::TreeState& tree,
                        const std::vector<ClassLabel>& labels,
                        std::span<const double> x) {
  std::size_t i = 0;
  while (tree.nodes[i].feature >= 0) {
    const auto& n = tree.nodes[i];
    i = static_cast<std::size_t>(
        x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  const auto& leaf = tree.nodes[i];
  std::size_t total = 0;
  for (std::size_t c : leaf.counts) total += c;
  ClassScores scores;
  for (ClassLabel l : labels) {
    scores[l] = static_cast<double>(leaf.counts[label_index(l)]) /
                static_cast<double>(total);
  }
  return scores;
}

// --- linear svm ------------------------------------------------------------

double svm_objective(const LabeledDataset& data, ClassLabel positive,
                     const std::vector<double>& w, double b, double lambda) {
  double hinge = 0.0;
  for (const auto& s : data.samples()) {
    const double y = s.label == positive ? 1.0 : -1.0;
    hinge += std::max(0.0, 1.0 - y * (dot(w, s.features.values) + b));
  }
  return 0.5 * lambda * dot(w, w) + hinge / static_cast<double>(data.size());
}

TrainedClassifier::SvmState train_svm(const LabeledDataset& data,
                                      const std::vector<ClassLabel>& labels,
                                      const ClassifierSpec& spec) {
  const std::size_t dim = data.dimension();
  TrainedClassifier::SvmState s;
  s.weights.assign(labels.size(), std::vector<double>(dim, 0.0));
  s.bias.assign(labels.size(), 0.0);
  const double t0 = 1.0 / (spec.lambda * spec.learning_rate);
  Rng rng = make_rng(spec.seed, "svm_shuffle");
  double t = 0.0;
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    const auto order = rng.permutation(data.size());
    for (std::size_t idx : order) {
      const auto& sample = data.samples()[idx];
      const auto& x = sample.features.values;
      const double eta = 1.0 / (spec.lambda * (t + t0));
      const double decay = 1.0 - eta * spec.lambda;
      for (std::size_t c = 0; c < labels.size(); ++c) {
        auto& w = s.weights[c];
        const double y = sample.label == labels[c] ? 1.0 : -1.0;
        const double margin = y * (dot(w, x) + s.bias[c]);
        for (double& wj : w) wj *= decay;
        if (margin < 1.0) {
          for (std::size_t j = 0; j < dim; ++j) w[j] += eta * y * x[j];
          s.bias[c] += eta * y;
        }
      }
      t += 1.0;
    }
    double objective = 0.0;
    for (std::size_t c = 0; c < labels.size(); ++c) {
      objective += svm_objective(data, labels[c], s.weights[c], s.bias[c],
                                 spec.lambda);
    }
    s.objective_trace.push_back(objective);
  }
  return s;
}

ClassScores svm_scores(const TrainedClassifier::SvmState& s,
                       const std::vector<ClassLabel>& labels,
                       std::span<const double> x) {
  ClassScores scores;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    scores[labels[c]] = dot(s.weights[c], x) + s.bias[c];
  }
  return scores;
}

}  // namespace

ClassScores TrainedClassifier::predict_scores(std::span<const double> x) const {
  if (x.size() != dimension_) {
    throw Error(ErrorCode::kDimensionMismatch,
                "query has dimension " + std::to_string(x.size()) +
                    ", model expects " + std::to_string(dimension_));
  }
  return std::visit(
      [&](const auto& s) -> ClassScores {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, KnnState>) {
          return knn_scores(s, spec_.k, labels_, x);
        } else if constexpr (std::is_same_v<T, GaussianState>) {
          return naive_bayes_scores(s, labels_, x);
        } else if constexpr (std::is_same_v<T, TreeState>) {
          return tree_scores(s, labels_, x);
        } else {
          return svm_scores(s, labels_, x);
        }
      },
      state_);
}

ClassLabel TrainedClassifier::predict(std::span<const double> x) const {
  return argmax_label(predict_scores(x));
}

TrainedClassifier train(const ClassifierSpec& spec, const LabeledDataset& data) {
  spec.validate();
  if (data.empty()) {
    throw Error(ErrorCode::kEmptyClass, "cannot train on an empty dataset");
  }
  if (data.dimension() == 0) {
    throw Error(ErrorCode::kDimensionMismatch, "samples have dimension 0");
  }
  std::vector<ClassLabel> labels;
  for (ClassLabel l : kAllLabels) {
    if (data.count(l) > 0) labels.push_back(l);
  }
  TrainedClassifier::State state;
  switch (spec.kind) {
    case ClassifierKind::kKnn: state = train_knn(data); break;
    case ClassifierKind::kNaiveBayes:
      state = train_naive_bayes(data, labels, spec.var_smoothing);
      break;
    case ClassifierKind::kDecisionTree:
      state = train_tree(data, spec.max_depth, spec.min_leaf);
      break;
    case ClassifierKind::kLinearSvm:
      state = train_svm(data, labels, spec);
      break;
  }
  return TrainedClassifier(spec, data.dimension(), std::move(labels),
                           std::move(state));
}

// --- serialization ---------------------------------------------------------

namespace {

json flatten(const std::vector<std::vector<double>>& rows) {
  json flat = json::array();
  for (const auto& r : rows) {
    for (double v : r) flat.push_back(v);
  }
  return flat;
}

std::vector<std::vector<double>> unflatten(const json& flat, std::size_t rows,
                                           std::size_t cols) {
  if (!flat.is_array() || flat.size() != rows * cols) {
    throw Error(ErrorCode::kParse, "array has wrong length for " +
                                       std::to_string(rows) + "x" +
                                       std::to_string(cols));
  }
  std::vector<std::vector<double>> out(rows, std::vector<double>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      out[i][j] = flat[i * cols + j].get<double>();
    }
  }
  return out;
}

ClassLabel label_from_json(const json& j) {
  auto l = parse_label(j.get<std::string>());
  if (!l) throw Error(ErrorCode::kParse, "unknown label in model file");
  return *l;
}

}  // namespace

json TrainedClassifier::to_json() const {
  json doc;
  doc["format_version"] = kFormatVersion;
  doc["kind"] = std::string(kind_name(spec_.kind));
  json hp;
  switch (spec_.kind) {
    case ClassifierKind::kKnn: hp["k"] = spec_.k; break;
    case ClassifierKind::kNaiveBayes: hp["var_smoothing"] = spec_.var_smoothing; break;
    case ClassifierKind::kDecisionTree:
      hp["max_depth"] = spec_.max_depth;
      hp["min_leaf"] = spec_.min_leaf;
      break;
    case ClassifierKind::kLinearSvm:
      hp["lambda"] = spec_.lambda;
      hp["epochs"] = spec_.epochs;
      hp["learning_rate"] = spec_.learning_rate;
      break;
  }
  doc["hyperparameters"] = hp;
  doc["seed"] = spec_.seed;
  doc["input_dimension"] = dimension_;
  json labels = json::array();
  for (ClassLabel l : labels_) labels.push_back(std::string(label_name(l)));
  doc["labels"] = labels;

  json params;
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, KnnState>) {
          params["count"] = s.points.size();
          params["points"] = flatten(s.points);
          json pl = json::array();
          for (ClassLabel l : s.labels) pl.push_back(std::string(label_name(l)));
          params["point_labels"] = pl;
        } else if constexpr (std::is_same_v<T, GaussianState>) {
          params["log_prior"] = s.log_prior;
          params["mean"] = flatten(s.mean);
          params["var"] = flatten(s.var);
        } else if constexpr (std::is_same_v<T, TreeState>) {
          json nodes = json::array();
          for (const auto& n : s.nodes) {
            nodes.push_back({{"feature", n.feature},
                             {"threshold", n.threshold},
                             {"left", n.left},
                             {"right", n.right},
                             {"counts", n.counts},
                             {"impurity", n.impurity}});
          }
          params["nodes"] = nodes;
        } else {
          params["weights"] = flatten(s.weights);
          params["bias"] = s.bias;
          params["objective_trace"] = s.objective_trace;
        }
      },
      state_);
  doc["parameters"] = params;
  return doc;
}

TrainedClassifier TrainedClassifier::from_json(const json& doc) {
  try {
    if (doc.at("format_version").get<int>() != kFormatVersion) {
      throw Error(ErrorCode::kParse, "unsupported classifier format_version");
    }
    ClassifierSpec spec;
    auto kind = parse_kind(doc.at("kind").get<std::string>());
    if (!kind) throw Error(ErrorCode::kParse, "unknown classifier kind");
    spec.kind = *kind;
    spec.seed = doc.at("seed").get<std::uint64_t>();
    const json& hp = doc.at("hyperparameters");
    const json& p = doc.at("parameters");
    const auto dim = doc.at("input_dimension").get<std::size_t>();
    std::vector<ClassLabel> labels;
    for (const auto& l : doc.at("labels")) labels.push_back(label_from_json(l));

    State state;
    switch (spec.kind) {
      case ClassifierKind::kKnn: {
        spec.k = hp.at("k").get<std::size_t>();
        KnnState s;
        const auto n = p.at("count").get<std::size_t>();
        s.points = unflatten(p.at("points"), n, dim);
        for (const auto& l : p.at("point_labels")) s.labels.push_back(label_from_json(l));
        state = std::move(s);
        break;
      }
      case ClassifierKind::kNaiveBayes: {
        spec.var_smoothing = hp.at("var_smoothing").get<double>();
        GaussianState s;
        s.log_prior = p.at("log_prior").get<std::vector<double>>();
        s.mean = unflatten(p.at("mean"), labels.size(), dim);
        s.var = unflatten(p.at("var"), labels.size(), dim);
        state = std::move(s);
        break;
      }
      case ClassifierKind::kDecisionTree: {
        spec.max_depth = hp.at("max_depth").get<std::size_t>();
        spec.min_leaf = hp.at("min_leaf").get<std::size_t>();
        TreeState s;
        for (const auto& n : p.at("nodes")) {
          TreeNode node;
          node.feature = n.at("feature").get<int>();
          node.threshold = n.at("threshold").get<double>();
          node.left = n.at("left").get<int>();
          node.right = n.at("right").get<int>();
          node.counts = n.at("counts").get<std::array<std::size_t, kNumClasses>>();
          node.impurity = n.at("impurity").get<double>();
          s.nodes.push_back(node);
        }
        if (s.nodes.empty()) throw Error(ErrorCode::kParse, "tree has no nodes");
        state = std::move(s);
        break;
      }
      case ClassifierKind::kLinearSvm: {
        spec.lambda = hp.at("lambda").get<double>();
        spec.epochs = hp.at("epochs").get<std::size_t>();
        spec.learning_rate = hp.at("learning_rate").get<double>();
        SvmState s;
        s.weights = unflatten(p.at("weights"), labels.size(), dim);
        s.bias = p.at("bias").get<std::vector<double>>();
        s.objective_trace = p.at("objective_trace").get<std::vector<double>>();
        state = std::move(s);
        break;
      }
    }
    spec.validate();
    return TrainedClassifier(spec, dim, std::move(labels), std::move(state));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("classifier model: ") + e.what());
  }
}

void save_classifier(const std::filesystem::path& path,
                     const TrainedClassifier& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  out << model.to_json().dump(1) << '\n';
}

TrainedClassifier load_classifier(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  return TrainedClassifier::from_json(doc);
}

}  // namespace memesearch
