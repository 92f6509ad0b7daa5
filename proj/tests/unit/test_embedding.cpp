#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "memesearch/embedding.hpp"
#include "memesearch/error.hpp"
#include "memesearch/metrics.hpp"
#include "memesearch/random.hpp"
#include "memesearch/synthetic.hpp"
#include "test_support.hpp"

namespace memesearch {
namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

EmbeddingModel identity_model(std::size_t dim, DistanceMode mode = DistanceMode::kSquaredEuclidean) {
  EmbeddingConfig cfg;
  cfg.dim = dim;
  cfg.distance = mode;
  const auto d = static_cast<Eigen::Index>(dim);
  return EmbeddingModel(cfg, Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Zero(d),
                        Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Zero(d));
}

WordVectorTable words_from(std::vector<FeatureVector> rows) {
  return WordVectorTable(FeatureTable(std::move(rows)));
}

synthetic::LatentPairs small_pairs(std::size_t n, std::uint64_t seed) {
  synthetic::LatentPairsConfig cfg;
  cfg.pairs = n;
  cfg.latent_dim = 4;
  cfg.text_dim = 6;
  cfg.visual_dim = 8;
  cfg.mixing_scale = 3.0;
  cfg.seed = seed;
  return synthetic::make_latent_pairs(cfg);
}

EmbeddingConfig small_config(std::size_t epochs = 5) {
  EmbeddingConfig cfg;
  cfg.dim = 8;
  cfg.epochs = epochs;
  cfg.learning_rate = 1e-3;
  cfg.seed = 3;
  return cfg;
}

// --- names and config -------------------------------------------------------

TEST(EmbeddingConfig, Defaults) {
  EmbeddingConfig cfg;
  EXPECT_EQ(cfg.epochs, 270u);
  EXPECT_EQ(cfg.batch_size, 16u);
  EXPECT_EQ(cfg.learning_rate, 0.0001);
  EXPECT_EQ(cfg.margin, 1.0);
  EXPECT_EQ(cfg.dim, 256u);
  EXPECT_EQ(cfg.distance, DistanceMode::kSquaredEuclidean);
  EXPECT_EQ(cfg.direction, TripletDirection::kBidirectional);
  EXPECT_FALSE(cfg.normalize);
}

TEST(EmbeddingConfig, Validation) {
  EmbeddingConfig cfg;
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.margin = -1;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.dim = 0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(EmbeddingNames, RoundTrip) {
  for (auto m : {DistanceMode::kSquaredEuclidean, DistanceMode::kEuclidean})
    EXPECT_EQ(parse_distance(distance_name(m)), m);
  for (auto d : {TripletDirection::kBidirectional, TripletDirection::kTextAnchored})
    EXPECT_EQ(parse_direction(direction_name(d)), d);
}

// --- projection ----------------------------------------------------------------

TEST(Project, IdentityAndScaling) {
  auto m = identity_model(2);
  std::vector<double> x{1, -1};
  EXPECT_EQ(m.project(Branch::kVisual, x), vec({1, -1}));
  m.weight(Branch::kText) *= 2.0;
  EXPECT_EQ(m.project(Branch::kText, x), vec({2, -2}));
}

TEST(Project, MatchesNaiveLoop) {
  EmbeddingConfig cfg;
  cfg.dim = 7;
  cfg.seed = 12;
  auto m = EmbeddingModel::initialize(cfg, 11, 5);
  Rng r(1);
  m.bias(Branch::kVisual) = Eigen::VectorXd::Random(7);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> x(11);
    for (double& v : x) v = r.normal();
    auto got = m.project(Branch::kVisual, x);
    const auto& W = m.weight(Branch::kVisual);
    for (int i = 0; i < 7; ++i) {
      double s = m.bias(Branch::kVisual)[i];
      for (int j = 0; j < 11; ++j) s += W(i, j) * x[static_cast<std::size_t>(j)];
      EXPECT_NEAR(got[i], s, 1e-9);
    }
  }
}

TEST(Project, DimensionMismatch) {
  auto m = identity_model(3);
  try {
    m.project(Branch::kText, std::vector<double>{1, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
}

TEST(Project, NormalizeFlag) {
  EmbeddingConfig cfg;
  cfg.dim = 2;
  cfg.normalize = true;
  EmbeddingModel m(cfg, Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2),
                   Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2));
  auto z = m.project(Branch::kVisual, std::vector<double>{3, 4});
  EXPECT_NEAR(z[0], 0.6, 1e-12);
  EXPECT_NEAR(z[1], 0.8, 1e-12);
}

TEST(Initialize, XavierBoundsZeroBiasesSeeded) {
  EmbeddingConfig cfg;
  cfg.dim = 16;
  cfg.seed = 5;
  auto a = EmbeddingModel::initialize(cfg, 40, 24);
  auto b = EmbeddingModel::initialize(cfg, 40, 24);
  EXPECT_TRUE(a == b);
  const double bound_v = std::sqrt(6.0 / (40 + 16));
  EXPECT_LE(a.weight(Branch::kVisual).cwiseAbs().maxCoeff(), bound_v);
  EXPECT_GT(a.weight(Branch::kVisual).cwiseAbs().maxCoeff(), 0.8 * bound_v);
  EXPECT_EQ(a.bias(Branch::kVisual).norm(), 0.0);
  EXPECT_EQ(a.bias(Branch::kText).norm(), 0.0);
  cfg.seed = 6;
  EXPECT_FALSE(a == EmbeddingModel::initialize(cfg, 40, 24));
}

TEST(ModelFile, LosslessRoundTrip) {
  EmbeddingConfig cfg;
  cfg.dim = 5;
  cfg.seed = 8;
  cfg.distance = DistanceMode::kEuclidean;
  cfg.direction = TripletDirection::kTextAnchored;
  auto m = EmbeddingModel::initialize(cfg, 7, 3);
  m.bias(Branch::kText) = vec({0.1, -1.0 / 3, 1e-300, 2.5, 0});
  testing::TempDir dir;
  save_embedding_model(dir / "m.json", m);
  auto back = load_embedding_model(dir / "m.json");
  EXPECT_TRUE(back == m);
  EXPECT_EQ(back.config().distance, DistanceMode::kEuclidean);
  EXPECT_EQ(back.config().direction, TripletDirection::kTextAnchored);
  EXPECT_EQ(back.to_json().dump(), m.to_json().dump());
}

// --- triplet loss ------------------------------------------------------------------

TEST(TripletLoss, InactiveHinge) {
  auto r = triplet_loss(vec({0, 0}), vec({0, 0}), vec({3, 0}), 1.0, DistanceMode::kSquaredEuclidean);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.grad_anchor.norm(), 0.0);
  EXPECT_EQ(r.grad_positive.norm(), 0.0);
  EXPECT_EQ(r.grad_negative.norm(), 0.0);
}

TEST(TripletLoss, EqualDistancesGiveMargin) {
  for (double m : {0.0, 0.3, 1.0, 2.5}) {
    for (auto mode : {DistanceMode::kSquaredEuclidean, DistanceMode::kEuclidean}) {
      auto r = triplet_loss(vec({0, 0}), vec({1, 0}), vec({0, 1}), m, mode);
      EXPECT_NEAR(r.loss, m, 1e-15);
    }
  }
}

TEST(TripletLoss, HandDifferentiatedSquaredCase) {
  auto r = triplet_loss(vec({0, 0}), vec({0, 2}), vec({1, 0}), 1.0, DistanceMode::kSquaredEuclidean);
  EXPECT_DOUBLE_EQ(r.loss, 4.0);
  EXPECT_EQ(r.grad_anchor, vec({2, -4}));
  EXPECT_EQ(r.grad_positive, vec({0, 4}));
  EXPECT_EQ(r.grad_negative, vec({-2, 0}));
}

TEST(TripletLoss, KinkTakesZeroBranch) {
  // d(a,p) - d(a,n) + m == 0 exactly.
  auto r = triplet_loss(vec({0}), vec({1}), vec({2}), 3.0, DistanceMode::kSquaredEuclidean);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.grad_anchor.norm(), 0.0);
}

TEST(TripletLoss, NonNegativeAndZeroIffSatisfied) {
  Rng rng(4);
  for (int t = 0; t < 500; ++t) {
    Eigen::VectorXd a(3), p(3), n(3);
    for (int i = 0; i < 3; ++i) {
      a[i] = rng.normal();
      p[i] = rng.normal();
      n[i] = rng.normal();
    }
    const double m = rng.uniform(0, 2);
    auto r = triplet_loss(a, p, n, m, DistanceMode::kSquaredEuclidean);
    EXPECT_GE(r.loss, 0.0);
    const bool satisfied = (a - p).squaredNorm() + m <= (a - n).squaredNorm();
    EXPECT_EQ(r.loss == 0.0, satisfied);
  }
}

TEST(TripletLoss, GradientsMatchFiniteDifferences) {
  for (auto mode : {DistanceMode::kSquaredEuclidean, DistanceMode::kEuclidean}) {
    auto r = testing::triplet_gradient_check(mode, 100, 17);
    EXPECT_EQ(r.checked, 100u);
    EXPECT_LT(r.worst_relative_error, 1e-4) << distance_name(mode);
  }
}

// --- training -------------------------------------------------------------------------

TEST(TrainEmbedding, ZeroLearningRateLeavesParametersUnchanged) {
  auto data = small_pairs(40, 1);
  auto split = split_pairs(data.entries, data.visual, 30, 1);
  auto cfg = small_config(1);
  cfg.learning_rate = 0.0;
  auto res = train_embedding(split.train, split.test, data.words, cfg);
  EXPECT_EQ(res.trace.epochs.size(), 1u);
  EXPECT_TRUE(res.model == EmbeddingModel::initialize(cfg, 8, 6));
  EXPECT_EQ(res.trace.epochs[0].test_map, res.trace.initial_test_map);
  EXPECT_EQ(res.trace.epochs[0].test_loss, res.trace.initial_test_loss);
}

TEST(TrainEmbedding, BitwiseDeterministic) {
  auto data = small_pairs(60, 2);
  auto split = split_pairs(data.entries, data.visual, 45, 4);
  for (auto dir : {TripletDirection::kBidirectional, TripletDirection::kTextAnchored}) {
    auto cfg = small_config(4);
    cfg.direction = dir;
    auto a = train_embedding(split.train, split.test, data.words, cfg);
    auto b = train_embedding(split.train, split.test, data.words, cfg);
    EXPECT_TRUE(a.model == b.model);
    EXPECT_EQ(a.model.to_json().dump(), b.model.to_json().dump());
    ASSERT_EQ(a.trace.epochs.size(), b.trace.epochs.size());
    for (std::size_t i = 0; i < a.trace.epochs.size(); ++i) {
      EXPECT_EQ(a.trace.epochs[i].train_loss, b.trace.epochs[i].train_loss);
      EXPECT_EQ(a.trace.epochs[i].test_map, b.trace.epochs[i].test_map);
    }
    cfg.seed = 4;
    EXPECT_FALSE(a.model == train_embedding(split.train, split.test, data.words, cfg).model);
  }
}

TEST(TrainEmbedding, TraceHasOneEntryPerEpochAndCallbackFires) {
  auto data = small_pairs(50, 3);
  auto split = split_pairs(data.entries, data.visual, 40, 0);
  std::vector<std::size_t> seen;
  auto res = train_embedding(split.train, split.test, data.words, small_config(6),
                             [&](const EpochStats& e) { seen.push_back(e.epoch); });
  ASSERT_EQ(res.trace.epochs.size(), 6u);
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3, 4, 5, 6}));
  for (const auto& e : res.trace.epochs) {
    EXPECT_GE(e.test_map, 0.1);  // every caption ranks its image last
    EXPECT_LE(e.test_map, 1.0);
    EXPECT_GE(e.train_loss, 0.0);
  }
}

TEST(TrainEmbedding, LearnsBeyondRandomBaselineAndInitialMap) {
  auto data = small_pairs(120, 4);
  auto split = split_pairs(data.entries, data.visual, 100, 2);
  auto cfg = small_config(60);
  cfg.learning_rate = 2e-3;
  auto res = train_embedding(split.train, split.test, data.words, cfg);
  double best = 0;
  for (const auto& e : res.trace.epochs) best = std::max(best, e.test_map);
  EXPECT_GE(best, res.trace.initial_test_map);
  EXPECT_GT(res.trace.epochs.back().test_map, 3 * random_ranking_map(split.test.size()));
  EXPECT_LT(res.trace.epochs.back().train_loss, res.trace.epochs.front().train_loss);
}

TEST(TrainEmbedding, NormalizedAndEuclideanModesTrain) {
  auto data = small_pairs(80, 5);
  auto split = split_pairs(data.entries, data.visual, 60, 2);
  for (int variant = 0; variant < 2; ++variant) {
    auto cfg = small_config(40);
    cfg.learning_rate = 1e-2;
    if (variant == 0) {
      cfg.normalize = true;
      cfg.margin = 0.2;
    } else {
      cfg.distance = DistanceMode::kEuclidean;
    }
    auto res = train_embedding(split.train, split.test, data.words, cfg);
    EXPECT_LT(res.trace.epochs.back().train_loss, res.trace.epochs.front().train_loss) << variant;
    EXPECT_GT(res.trace.epochs.back().test_map, res.trace.initial_test_map) << variant;
  }
}

TEST(TrainEmbedding, SkipsUnembeddableCaptions) {
  auto data = small_pairs(30, 6);
  auto split = split_pairs(data.entries, data.visual, 20, 1);
  split.train[0].caption = "zzz-unknown";
  auto res = train_embedding(split.train, split.test, data.words, small_config(1));
  EXPECT_EQ(res.trace.skipped, std::vector<std::string>{split.train[0].id});
}

TEST(TrainEmbedding, Errors) {
  auto data = small_pairs(30, 6);
  auto split = split_pairs(data.entries, data.visual, 20, 1);
  auto code = [&](std::vector<CaptionedPair> tr, std::vector<CaptionedPair> te, EmbeddingConfig cfg) {
    try {
      train_embedding(tr, te, data.words, cfg);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInvalidArgument;
  };
  EXPECT_EQ(code({split.train[0]}, split.test, small_config()), ErrorCode::kInsufficientPairs);
  EXPECT_EQ(code(split.train, {split.test[0]}, small_config()), ErrorCode::kInsufficientPairs);
  auto cfg = small_config(3);
  cfg.learning_rate = 1e200;
  EXPECT_EQ(code(split.train, split.test, cfg), ErrorCode::kNonFiniteLoss);
}

// --- ranking ---------------------------------------------------------------------------

std::vector<FeatureVector> random_items(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng r(seed);
  std::vector<FeatureVector> items;
  for (std::size_t i = 0; i < n; ++i) {
    FeatureVector fv{"item" + std::to_string(1000 + (i * 37) % n), std::vector<double>(dim)};
    for (double& v : fv.values) v = r.normal();
    items.push_back(fv);
  }
  return items;
}

TEST(RankMemes, CoincidingProjectionRanksFirstAtZero) {
  auto m = identity_model(2);
  auto words = words_from({{"gato", {1, 2}}});
  std::vector<FeatureVector> items{{"far", {5, 5}}, {"hit", {1, 2}}, {"near", {1, 3}}};
  auto r = rank_memes(m, "gato", items, words, 3);
  EXPECT_EQ(r.items[0].id, "hit");
  EXPECT_EQ(r.items[0].distance, 0.0);
  EXPECT_EQ(r.items[0].rank, 1u);
}

TEST(RankMemes, NearerFirst) {
  auto m = identity_model(1, DistanceMode::kEuclidean);
  auto words = words_from({{"q", {0}}});
  auto r = rank_memes(m, "q", {{"a", {3}}, {"b", {1}}}, words, 10);
  ASSERT_EQ(r.items.size(), 2u);  // k clamped, no padding
  EXPECT_EQ(r.items[0].id, "b");
  EXPECT_EQ(r.items[0].distance, 1.0);
  EXPECT_EQ(r.items[1].id, "a");
  EXPECT_EQ(r.items[1].rank, 2u);
}

TEST(RankMemes, MatchesBruteForceSort) {
  EmbeddingConfig cfg;
  cfg.dim = 4;
  cfg.seed = 2;
  auto m = EmbeddingModel::initialize(cfg, 6, 3);
  auto words = words_from({{"uno", {0.3, -1, 2}}, {"dos", {1, 1, 0}}});
  auto items = random_items(50, 6, 9);
  items.push_back({"dup-b", items[3].values});  // exact distance tie
  items.push_back({"dup-a", items[3].values});
  auto r = rank_memes(m, "uno dos", items, words, 100);
  // Oracle: explicit projection and comparison sort.
  Eigen::VectorXd q = m.project(Branch::kText, std::vector<double>{0.65, 0, 1});
  std::vector<std::pair<double, std::string>> oracle;
  for (const auto& it : items) {
    Eigen::VectorXd z = m.weight(Branch::kVisual) *
                        Eigen::Map<const Eigen::VectorXd>(it.values.data(), 6);
    oracle.push_back({(z - q).squaredNorm(), it.id});
  }
  std::sort(oracle.begin(), oracle.end());
  ASSERT_EQ(r.items.size(), oracle.size());
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    EXPECT_EQ(r.items[i].id, oracle[i].second) << i;
    EXPECT_NEAR(r.items[i].distance, oracle[i].first, 1e-9);
    EXPECT_EQ(r.items[i].rank, i + 1);
  }
  EXPECT_EQ(rank_memes(m, "uno dos", items, words, 5).items.size(), 5u);
}

TEST(RankMemes, MonotoneDistanceTransformKeepsOrder) {
  EmbeddingConfig cfg;
  cfg.dim = 5;
  cfg.seed = 3;
  auto m = EmbeddingModel::initialize(cfg, 6, 3);
  auto words = words_from({{"w", {1, 0, -1}}});
  auto items = random_items(60, 6, 10);
  auto sq = rank_memes(m, "w", items, words, 60);
  auto eu = rank_memes(m.with_distance(DistanceMode::kEuclidean), "w", items, words, 60);
  for (std::size_t i = 0; i < 60; ++i) {
    EXPECT_EQ(sq.items[i].id, eu.items[i].id);
    EXPECT_NEAR(std::sqrt(sq.items[i].distance), eu.items[i].distance, 1e-9);
  }
}

TEST(RankMemes, ReportsDroppedAndUnknownTokens) {
  auto m = identity_model(1);
  auto words = words_from({{"gato", {1}}});
  auto r = rank_memes(m, "el gato", {{"a", {0}}}, words, 1);
  EXPECT_EQ(r.dropped_tokens, std::vector<std::string>{"el"});
  try {
    rank_memes(m, "el perro", {{"a", {0}}}, words, 1);
    FAIL();
  } catch (const UnknownTokensError& e) {
    EXPECT_EQ(e.tokens(), (std::vector<std::string>{"el", "perro"}));
  }
  try {
    rank_memes(m, "gato", {}, words, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyItems);
  }
}

TEST(RankTexts, ReversalSymmetryWithIdentityHeads) {
  // One-to-one data: caption i is the single token "t<i>" whose vector equals
  // image i's feature vector.
  auto m = identity_model(3);
  auto items = random_items(20, 3, 12);
  std::vector<FeatureVector> vocab;
  std::vector<std::pair<std::string, std::string>> captions;
  for (std::size_t i = 0; i < items.size(); ++i) {
    vocab.push_back({"t" + std::to_string(i), items[i].values});
    captions.push_back({items[i].id, "t" + std::to_string(i)});
  }
  auto words = words_from(vocab);
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto memes = rank_memes(m, captions[i].second, items, words, 1);
    ASSERT_EQ(memes.items[0].id, items[i].id);
    EXPECT_EQ(memes.items[0].distance, 0.0);
    const auto& top = *std::find_if(items.begin(), items.end(),
                                    [&](const auto& it) { return it.id == memes.items[0].id; });
    auto texts = rank_texts(m, top.values, captions, words, 3);
    EXPECT_EQ(texts.items[0].id, captions[i].first);
    EXPECT_EQ(texts.items[0].distance, 0.0);
  }
}

TEST(RankTexts, MatchesBruteForceAndSkipsUnknown) {
  EmbeddingConfig cfg;
  cfg.dim = 4;
  cfg.seed = 5;
  auto m = EmbeddingModel::initialize(cfg, 3, 2);
  Rng r(3);
  std::vector<FeatureVector> vocab;
  std::vector<std::pair<std::string, std::string>> captions;
  for (int i = 0; i < 50; ++i) {
    vocab.push_back({"w" + std::to_string(i), {r.normal(), r.normal()}});
    captions.push_back({"c" + std::to_string(i), "w" + std::to_string(i)});
  }
  captions.push_back({"bad", "nada"});
  auto words = words_from(vocab);
  std::vector<double> query{0.2, -0.4, 1.0};
  auto res = rank_texts(m, query, captions, words, 100);
  EXPECT_EQ(res.skipped_ids, std::vector<std::string>{"bad"});
  auto qa = m.project(Branch::kVisual, query);
  std::vector<std::pair<double, std::string>> oracle;
  for (int i = 0; i < 50; ++i) {
    auto z = m.project(Branch::kText, vocab[static_cast<std::size_t>(i)].values);
    oracle.push_back({(qa - z).squaredNorm(), "c" + std::to_string(i)});
  }
  std::sort(oracle.begin(), oracle.end());
  ASSERT_EQ(res.items.size(), 50u);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(res.items[i].id, oracle[i].second);
}

TEST(RetrievalMap, PerfectAndReversed) {
  auto m = identity_model(1);
  std::vector<Eigen::VectorXd> text{vec({0}), vec({10}), vec({20})};
  EXPECT_EQ(retrieval_map(m, text, text, {"a", "b", "c"}), 1.0);
  std::vector<Eigen::VectorXd> vis{vec({20}), vec({10}), vec({0})};
  // a -> rank 3, b -> rank 1, c -> rank 3.
  EXPECT_NEAR(retrieval_map(m, text, vis, {"a", "b", "c"}), (1.0 / 3 + 1 + 1.0 / 3) / 3, 1e-15);
}

}  // namespace
}  // namespace memesearch
