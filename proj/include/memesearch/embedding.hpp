#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "memesearch/corpus.hpp"
#include "memesearch/text.hpp"

namespace memesearch {

enum class DistanceMode : std::uint8_t { kSquaredEuclidean, kEuclidean };
enum class TripletDirection : std::uint8_t { kBidirectional, kTextAnchored };
enum class Branch : std::uint8_t { kVisual, kText };

std::string_view distance_name(DistanceMode mode);
std::optional<DistanceMode> parse_distance(std::string_view name);
std::string_view direction_name(TripletDirection direction);
std::optional<TripletDirection> parse_direction(std::string_view name);

/// Epsilon under the square root of the stabilized Euclidean distance.
inline constexpr double kDistanceEpsilon = 1e-12;

struct EmbeddingConfig {
  std::size_t dim = 256;
  double margin = 1.0;
  double learning_rate = 1e-4;
  std::size_t batch_size = 16;
  std::size_t epochs = 270;
  std::uint64_t seed = 0;
  DistanceMode distance = DistanceMode::kSquaredEuclidean;
  TripletDirection direction = TripletDirection::kBidirectional;
  // L2-normalize projections before measuring distance.
  bool normalize = false;

  void validate() const;
};

/// Two affine heads into a shared space: visual W_v (dim x D_v) + b_v and
/// text W_t (dim x D_t) + b_t.
class EmbeddingModel {
 public:
  EmbeddingModel() = default;
  EmbeddingModel(EmbeddingConfig config, Eigen::MatrixXd visual_weight,
                 Eigen::VectorXd visual_bias, Eigen::MatrixXd text_weight,
                 Eigen::VectorXd text_bias);

  /// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases, drawn
  /// from derive_seed(config.seed, "init").
  static EmbeddingModel initialize(const EmbeddingConfig& config,
                                   std::size_t visual_dim,
                                   std::size_t text_dim);

  const EmbeddingConfig& config() const { return config_; }
  std::size_t dim() const { return config_.dim; }
  std::size_t input_dim(Branch branch) const;

  const Eigen::MatrixXd& weight(Branch b) const {
    return b == Branch::kVisual ? visual_weight_ : text_weight_;
  }
  const Eigen::VectorXd& bias(Branch b) const {
    return b == Branch::kVisual ? visual_bias_ : text_bias_;
  }
  Eigen::MatrixXd& weight(Branch b) {
    return b == Branch::kVisual ? visual_weight_ : text_weight_;
  }
  Eigen::VectorXd& bias(Branch b) {
    return b == Branch::kVisual ? visual_bias_ : text_bias_;
  }

  /// W x + b, then L2-normalized when config().normalize is set.
  /// Throws kDimensionMismatch on a wrong-length input.
  Eigen::VectorXd project(Branch branch, std::span<const double> x) const;

  /// Shared-space distance in the configured mode. Euclidean mode uses the
  /// plain root here so identical points sit at distance 0.
  double distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const;

  /// Same model with a different distance mode, for ranking comparisons.
  EmbeddingModel with_distance(DistanceMode mode) const;

  static constexpr int kFormatVersion = 1;
  nlohmann::json to_json() const;
  static EmbeddingModel from_json(const nlohmann::json& doc);

  bool operator==(const EmbeddingModel& other) const;

 private:
  EmbeddingConfig config_;
  Eigen::MatrixXd visual_weight_;
  Eigen::VectorXd visual_bias_;
  Eigen::MatrixXd text_weight_;
  Eigen::VectorXd text_bias_;
};

void save_embedding_model(const std::filesystem::path& path,
                          const EmbeddingModel& model);
EmbeddingModel load_embedding_model(const std::filesystem::path& path);

struct TripletLoss {
  double loss = 0.0;
  Eigen::VectorXd grad_anchor;
  Eigen::VectorXd grad_positive;
  Eigen::VectorXd grad_negative;
};

/// max(d(a, p) - d(a, n) + margin, 0) with exact subgradients. At the kink
/// the zero branch is taken. Euclidean mode uses sqrt(|x|^2 + 1e-12).
TripletLoss triplet_loss(const Eigen::VectorXd& anchor,
                         const Eigen::VectorXd& positive,
                         const Eigen::VectorXd& negative, double margin,
                         DistanceMode mode);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  // Mean triplet loss over the training set after the epoch, with one fixed
  // negative per pair (same protocol as test_loss).
  double train_loss = 0.0;
  // Mean of the batch losses seen while stepping through the epoch.
  double batch_loss = 0.0;
  double test_loss = 0.0;
  double test_map = 0.0;
};

struct TrainingTrace {
  double initial_test_loss = 0.0;  // before the first update
  double initial_test_map = 0.0;
  std::vector<EpochStats> epochs;
  std::vector<std::string> skipped;  // pair ids whose caption had no known token
};

struct EmbeddingResult {
  EmbeddingModel model;
  TrainingTrace trace;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Triplet-loss SGD on both heads. Per epoch the training pairs are shuffled
/// (stream "shuffle") and cut into batches; each pair contributes a
/// text-anchored triplet (negative: visual of a uniformly drawn other pair,
/// stream "negatives") and, when bidirectional, an image-anchored triplet
/// with a text negative. One averaged subgradient step per batch. Pairs whose
/// caption has no in-vocabulary token are skipped.
///
/// Train and test losses use one fixed negative per pair (streams
/// "train_eval_negatives", "test_negatives"); test mAP ranks every test image
/// against each test caption.
///
/// Throws kInsufficientPairs for fewer than 2 usable train or test pairs and
/// kNonFiniteLoss (naming the epoch) when the loss diverges.
EmbeddingResult train_embedding(const std::vector<CaptionedPair>& train,
                                const std::vector<CaptionedPair>& test,
                                const WordVectorTable& table,
                                const EmbeddingConfig& config,
                                const EpochCallback& on_epoch = {});

/// Text-to-image mAP of `model` over paired items (pair i's caption is
/// relevant to image i only).
double retrieval_map(const EmbeddingModel& model,
                     const std::vector<Eigen::VectorXd>& text_inputs,
                     const std::vector<Eigen::VectorXd>& visual_inputs,
                     const std::vector<std::string>& ids);

struct RankedItem {
  std::string id;
  double distance = 0.0;
  std::size_t rank = 0;  // 1-based
};

struct RankedResult {
  std::vector<RankedItem> items;
  std::vector<std::string> dropped_tokens;
  std::vector<std::string> skipped_ids;  // rank_texts: unembeddable captions
};

/// Ranks visual items by ascending distance to the projected caption, ties
/// by id. k is clamped to the item count. Throws kEmptyItems,
/// UnknownTokensError, kInvalidArgument (empty query).
RankedResult rank_memes(const EmbeddingModel& model, std::string_view query,
                        const std::vector<FeatureVector>& items,
                        const WordVectorTable& table, std::size_t k);

/// Ranks captions against a visual query. Captions with no known token are
/// left out and listed in skipped_ids.
RankedResult rank_texts(const EmbeddingModel& model,
                        std::span<const double> query_visual,
                        const std::vector<std::pair<std::string, std::string>>& captions,
                        const WordVectorTable& table, std::size_t k);

}  // namespace memesearch
