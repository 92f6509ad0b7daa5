#include "memesearch/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>

#include <nlohmann/json.hpp>

#include "memesearch/error.hpp"
#include "memesearch/metrics.hpp"
#include "memesearch/random.hpp"

namespace memesearch {

using nlohmann::json;

std::string_view distance_name(DistanceMode mode) {
  return mode == DistanceMode::kEuclidean ? "euclidean" : "squared_euclidean";
}

std::optional<DistanceMode> parse_distance(std::string_view name) {
  if (name == "euclidean") return DistanceMode::kEuclidean;
  if (name == "squared_euclidean") return DistanceMode::kSquaredEuclidean;
  return std::nullopt;
}

std::string_view direction_name(TripletDirection direction) {
  return direction == TripletDirection::kTextAnchored ? "text_anchored"
                                                      : "bidirectional";
}

std::optional<TripletDirection> parse_direction(std::string_view name) {
  if (name == "bidirectional") return TripletDirection::kBidirectional;
  if (name == "text_anchored") return TripletDirection::kTextAnchored;
  return std::nullopt;
}

void EmbeddingConfig::validate() const {
  auto fail = [](const std::string& msg) {
    throw Error(ErrorCode::kInvalidArgument, msg);
  };
  if (dim < 1) fail("embedding dim must be >= 1");
  if (!(margin >= 0.0) || !std::isfinite(margin)) fail("margin must be >= 0");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    fail("learning rate must be >= 0");
  }
  if (batch_size < 1) fail("batch size must be >= 1");
  if (epochs < 1) fail("epochs must be >= 1");
}

// ---------------------------------------------------------------------------

EmbeddingModel::EmbeddingModel(EmbeddingConfig config,
                               Eigen::MatrixXd visual_weight,
                               Eigen::VectorXd visual_bias,
                               Eigen::MatrixXd text_weight,
                               Eigen::VectorXd text_bias)
    : config_(config),
      visual_weight_(std::move(visual_weight)),
      visual_bias_(std::move(visual_bias)),
      text_weight_(std::move(text_weight)),
      text_bias_(std::move(text_bias)) {
  config_.validate();
  const auto d = static_cast<Eigen::Index>(config_.dim);
  if (visual_weight_.rows() != d || text_weight_.rows() != d ||
      visual_bias_.size() != d || text_bias_.size() != d) {
    throw Error(ErrorCode::kDimensionMismatch,
                "projection head outputs must have dimension " +
                    std::to_string(config_.dim));
  }
  if (visual_weight_.cols() < 1 || text_weight_.cols() < 1) {
    throw Error(ErrorCode::kDimensionMismatch, "projection head has no inputs");
  }
  if (!visual_weight_.allFinite() || !visual_bias_.allFinite() ||
      !text_weight_.allFinite() || !text_bias_.allFinite()) {
    throw Error(ErrorCode::kNonFinite, "embedding parameters must be finite");
  }
}

EmbeddingModel EmbeddingModel::initialize(const EmbeddingConfig& config,
                                          std::size_t visual_dim,
                                          std::size_t text_dim) {
  config.validate();
  Rng rng = make_rng(config.seed, "init");
  auto draw = [&](std::size_t fan_in) {
    const double bound =
        std::sqrt(6.0 / static_cast<double>(fan_in + config.dim));
    Eigen::MatrixXd w(static_cast<Eigen::Index>(config.dim),
                      static_cast<Eigen::Index>(fan_in));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        w(r, c) = rng.uniform(-bound, bound);
      }
    }
    return w;
  };
  Eigen::MatrixXd wv = draw(visual_dim);
  Eigen::MatrixXd wt = draw(text_dim);
  const auto d = static_cast<Eigen::Index>(config.dim);
  return EmbeddingModel(config, std::move(wv), Eigen::VectorXd::Zero(d),
                        std::move(wt), Eigen::VectorXd::Zero(d));
}

std::size_t EmbeddingModel::input_dim(Branch branch) const {
  return static_cast<std::size_t>(weight(branch).cols());
}

Eigen::VectorXd EmbeddingModel::project(Branch branch,
                                        std::span<const double> x) const {
  if (x.size() != input_dim(branch)) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::string(branch == Branch::kVisual ? "visual" : "text") +
                    " input has dimension " + std::to_string(x.size()) +
                    ", model expects " + std::to_string(input_dim(branch)));
  }
  Eigen::Map<const Eigen::VectorXd> v(x.data(), static_cast<Eigen::Index>(x.size()));
  Eigen::VectorXd z = weight(branch) * v + bias(branch);
  if (config_.normalize) {
    const double norm = std::sqrt(z.squaredNorm() + kDistanceEpsilon);
    z /= norm;
  }
  return z;
}

double EmbeddingModel::distance(const Eigen::VectorXd& a,
                                const Eigen::VectorXd& b) const {
  const double sq = (a - b).squaredNorm();
  return config_.distance == DistanceMode::kEuclidean ? std::sqrt(sq) : sq;
}

EmbeddingModel EmbeddingModel::with_distance(DistanceMode mode) const {
  EmbeddingModel copy = *this;
  copy.config_.distance = mode;
  return copy;
}

bool EmbeddingModel::operator==(const EmbeddingModel& o) const {
  auto same = [](const auto& x, const auto& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
  };
  const auto& c = config_;
  const auto& oc = o.config_;
  return c.dim == oc.dim && c.margin == oc.margin &&
         c.learning_rate == oc.learning_rate && c.batch_size == oc.batch_size &&
         c.epochs == oc.epochs && c.seed == oc.seed &&
         c.distance == oc.distance && c.direction == oc.direction &&
         c.normalize == oc.normalize && same(visual_weight_, o.visual_weight_) &&
         same(visual_bias_, o.visual_bias_) &&
         same(text_weight_, o.text_weight_) && same(text_bias_, o.text_bias_);
}

namespace {

json row_major(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  }
  return out;
}

Eigen::MatrixXd matrix_from(const json& flat, std::size_t rows,
                            std::size_t cols) {
  if (!flat.is_array() || flat.size() != rows * cols) {
    throw Error(ErrorCode::kParse, "parameter block has wrong length");
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          flat[r * cols + c].get<double>();
    }
  }
  return m;
}

Eigen::VectorXd vector_from(const json& flat, std::size_t n) {
  Eigen::MatrixXd m = matrix_from(flat, n, 1);
  return m.col(0);
}

}  // namespace

json EmbeddingModel::to_json() const {
  json doc;
  doc["format_version"] = kFormatVersion;
  doc["kind"] = "visual_semantic_embedding";
  doc["dim"] = config_.dim;
  doc["distance"] = std::string(distance_name(config_.distance));
  doc["normalize"] = config_.normalize;
  doc["config"] = {{"margin", config_.margin},
                   {"learning_rate", config_.learning_rate},
                   {"batch_size", config_.batch_size},
                   {"epochs", config_.epochs},
                   {"seed", config_.seed},
                   {"direction", std::string(direction_name(config_.direction))}};
  doc["visual_input_dim"] = input_dim(Branch::kVisual);
  doc["text_input_dim"] = input_dim(Branch::kText);
  doc["visual_weight"] = row_major(visual_weight_);
  doc["visual_bias"] = row_major(visual_bias_);
  doc["text_weight"] = row_major(text_weight_);
  doc["text_bias"] = row_major(text_bias_);
  return doc;
}

EmbeddingModel EmbeddingModel::from_json(const json& doc) {
  try {
    if (doc.at("format_version").get<int>() != kFormatVersion) {
      throw Error(ErrorCode::kParse, "unsupported embedding format_version");
    }
    EmbeddingConfig cfg;
    cfg.dim = doc.at("dim").get<std::size_t>();
    auto dist = parse_distance(doc.at("distance").get<std::string>());
    if (!dist) throw Error(ErrorCode::kParse, "unknown distance mode");
    cfg.distance = *dist;
    cfg.normalize = doc.at("normalize").get<bool>();
    const json& c = doc.at("config");
    cfg.margin = c.at("margin").get<double>();
    cfg.learning_rate = c.at("learning_rate").get<double>();
    cfg.batch_size = c.at("batch_size").get<std::size_t>();
    cfg.epochs = c.at("epochs").get<std::size_t>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
    auto dir = parse_direction(c.at("direction").get<std::string>());
    if (!dir) throw Error(ErrorCode::kParse, "unknown triplet direction");
    cfg.direction = *dir;
    const auto dv = doc.at("visual_input_dim").get<std::size_t>();
    const auto dt = doc.at("text_input_dim").get<std::size_t>();
    return EmbeddingModel(cfg, matrix_from(doc.at("visual_weight"), cfg.dim, dv),
                          vector_from(doc.at("visual_bias"), cfg.dim),
                          matrix_from(doc.at("text_weight"), cfg.dim, dt),
                          vector_from(doc.at("text_bias"), cfg.dim));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("embedding model: ") + e.what());
  }
}

void save_embedding_model(const std::filesystem::path& path,
                          const EmbeddingModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  out << model.to_json().dump() << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

EmbeddingModel load_embedding_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  return EmbeddingModel::from_json(doc);
}

// ---------------------------------------------------------------------------

TripletLoss triplet_loss(const Eigen::VectorXd& anchor,
                         const Eigen::VectorXd& positive,
                         const Eigen::VectorXd& negative, double margin,
                         DistanceMode mode) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "triplet vectors must share one dimension");
  }
  const Eigen::VectorXd ap = anchor - positive;
  const Eigen::VectorXd an = anchor - negative;
  TripletLoss out;
  const auto n = anchor.size();
  out.grad_anchor = Eigen::VectorXd::Zero(n);
  out.grad_positive = Eigen::VectorXd::Zero(n);
  out.grad_negative = Eigen::VectorXd::Zero(n);

  if (mode == DistanceMode::kSquaredEuclidean) {
    const double value = ap.squaredNorm() - an.squaredNorm() + margin;
    if (value > 0.0) {
      out.loss = value;
      out.grad_anchor = 2.0 * (negative - positive);
      out.grad_positive = -2.0 * ap;
      out.grad_negative = 2.0 * an;
    }
  } else {
    const double d_ap = std::sqrt(ap.squaredNorm() + kDistanceEpsilon);
    const double d_an = std::sqrt(an.squaredNorm() + kDistanceEpsilon);
    const double value = d_ap - d_an + margin;
    if (value > 0.0) {
      out.loss = value;
      out.grad_positive = -ap / d_ap;
      out.grad_negative = an / d_an;
      out.grad_anchor = -(out.grad_positive + out.grad_negative);
    }
  }
  // Overflowed distances give NaN slack; report it so training can stop
  // instead of treating the triplet as satisfied.
  if (std::isnan(ap.squaredNorm() - an.squaredNorm() + margin)) {
    out.loss = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct EncodedPairs {
  std::vector<std::string> ids;
  Eigen::MatrixXd text;    // D_t x N
  Eigen::MatrixXd visual;  // D_v x N
};

EncodedPairs encode_pairs(const std::vector<CaptionedPair>& pairs,
                          const WordVectorTable& table,
                          std::vector<std::string>& skipped) {
  std::vector<std::vector<double>> text_rows;
  std::vector<const std::vector<double>*> visual_rows;
  EncodedPairs out;
  std::size_t visual_dim = 0;
  for (const auto& p : pairs) {
    std::vector<double> emb;
    try {
      emb = embed_text(p.caption, table).values;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kAllTokensUnknown &&
          e.code() != ErrorCode::kInvalidArgument) {
        throw;
      }
      skipped.push_back(p.id);
      continue;
    }
    if (visual_rows.empty()) {
      visual_dim = p.visual.size();
    } else if (p.visual.size() != visual_dim) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "pair '" + p.id + "' has visual dimension " +
                      std::to_string(p.visual.size()) + ", expected " +
                      std::to_string(visual_dim));
    }
    out.ids.push_back(p.id);
    text_rows.push_back(std::move(emb));
    visual_rows.push_back(&p.visual);
  }
  const auto n = static_cast<Eigen::Index>(out.ids.size());
  out.text.resize(static_cast<Eigen::Index>(table.dimension()), n);
  out.visual.resize(static_cast<Eigen::Index>(visual_dim), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = text_rows[static_cast<std::size_t>(i)];
    const auto& v = *visual_rows[static_cast<std::size_t>(i)];
    for (Eigen::Index r = 0; r < out.text.rows(); ++r) out.text(r, i) = t[static_cast<std::size_t>(r)];
    for (Eigen::Index r = 0; r < out.visual.rows(); ++r) out.visual(r, i) = v[static_cast<std::size_t>(r)];
  }
  return out;
}

// Projected columns plus what backpropagation through the optional
// normalization needs.
struct Projection {
  Eigen::MatrixXd out;    // d x B, what distances see
  Eigen::VectorXd norms;  // per column, when normalized
};

Projection project_columns(const EmbeddingModel& model, Branch branch,
                           const Eigen::MatrixXd& inputs) {
  Projection p;
  p.out = model.weight(branch) * inputs;
  p.out.colwise() += model.bias(branch);
  if (model.config().normalize) {
    p.norms.resize(p.out.cols());
    for (Eigen::Index c = 0; c < p.out.cols(); ++c) {
      p.norms(c) = std::sqrt(p.out.col(c).squaredNorm() + kDistanceEpsilon);
      p.out.col(c) /= p.norms(c);
    }
  }
  return p;
}

// Converts gradients w.r.t. projected (possibly normalized) columns into
// gradients w.r.t. the affine outputs, in place.
void backprop_normalization(const EmbeddingModel& model, const Projection& p,
                            Eigen::MatrixXd& grad) {
  if (!model.config().normalize) return;
  for (Eigen::Index c = 0; c < grad.cols(); ++c) {
    const auto u = p.out.col(c);
    const double along = u.dot(grad.col(c));
    grad.col(c) = (grad.col(c) - along * u) / p.norms(c);
  }
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& m,
                       const std::vector<std::size_t>& cols) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = m.col(static_cast<Eigen::Index>(cols[i]));
  }
  return out;
}

std::size_t draw_other(Rng& rng, std::size_t n, std::size_t self) {
  std::size_t j = rng.below(n - 1);
  return j >= self ? j + 1 : j;
}

struct FixedTriplets {
  std::vector<std::size_t> index, visual, text;
};

FixedTriplets fixed_triplets(std::uint64_t seed, std::string_view stream,
                             std::size_t n) {
  Rng rng = make_rng(seed, stream);
  FixedTriplets t;
  for (std::size_t i = 0; i < n; ++i) {
    t.index.push_back(i);
    t.visual.push_back(draw_other(rng, n, i));
    t.text.push_back(draw_other(rng, n, i));
  }
  return t;
}

struct BatchOutcome {
  double loss_sum = 0.0;
  std::size_t triplets = 0;
};

// Loss (and optionally a gradient step) over one batch of pair indices.
BatchOutcome run_batch(EmbeddingModel& model, const EncodedPairs& data,
                       const std::vector<std::size_t>& batch,
                       const std::vector<std::size_t>& visual_negatives,
                       const std::vector<std::size_t>& text_negatives,
                       bool apply_step) {
  const EmbeddingConfig& cfg = model.config();
  const bool both = cfg.direction == TripletDirection::kBidirectional;
  const Eigen::MatrixXd xt = gather(data.text, batch);
  const Eigen::MatrixXd xv = gather(data.visual, batch);
  const Eigen::MatrixXd xv_neg = gather(data.visual, visual_negatives);
  Eigen::MatrixXd xt_neg;

  const Projection pt = project_columns(model, Branch::kText, xt);
  const Projection pv = project_columns(model, Branch::kVisual, xv);
  const Projection pv_neg = project_columns(model, Branch::kVisual, xv_neg);
  Projection pt_neg;
  if (both) {
    xt_neg = gather(data.text, text_negatives);
    pt_neg = project_columns(model, Branch::kText, xt_neg);
  }

  const auto d = static_cast<Eigen::Index>(cfg.dim);
  const auto b = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd g_t = Eigen::MatrixXd::Zero(d, b);
  Eigen::MatrixXd g_v = Eigen::MatrixXd::Zero(d, b);
  Eigen::MatrixXd g_v_neg = Eigen::MatrixXd::Zero(d, b);
  Eigen::MatrixXd g_t_neg = both ? Eigen::MatrixXd::Zero(d, b) : Eigen::MatrixXd();

  BatchOutcome outcome;
  for (Eigen::Index i = 0; i < b; ++i) {
    const TripletLoss text_anchor =
        triplet_loss(pt.out.col(i), pv.out.col(i), pv_neg.out.col(i),
                     cfg.margin, cfg.distance);
    outcome.loss_sum += text_anchor.loss;
    ++outcome.triplets;
    g_t.col(i) += text_anchor.grad_anchor;
    g_v.col(i) += text_anchor.grad_positive;
    g_v_neg.col(i) += text_anchor.grad_negative;
    if (both) {
      const TripletLoss image_anchor =
          triplet_loss(pv.out.col(i), pt.out.col(i), pt_neg.out.col(i),
                       cfg.margin, cfg.distance);
      outcome.loss_sum += image_anchor.loss;
      ++outcome.triplets;
      g_v.col(i) += image_anchor.grad_anchor;
      g_t.col(i) += image_anchor.grad_positive;
      g_t_neg.col(i) += image_anchor.grad_negative;
    }
  }
  if (!apply_step || cfg.learning_rate == 0.0) return outcome;

  backprop_normalization(model, pt, g_t);
  backprop_normalization(model, pv, g_v);
  backprop_normalization(model, pv_neg, g_v_neg);
  const double scale = 1.0 / static_cast<double>(outcome.triplets);
  Eigen::MatrixXd grad_wv = (g_v * xv.transpose() + g_v_neg * xv_neg.transpose()) * scale;
  Eigen::VectorXd grad_bv = (g_v.rowwise().sum() + g_v_neg.rowwise().sum()) * scale;
  Eigen::MatrixXd grad_wt = g_t * xt.transpose() * scale;
  Eigen::VectorXd grad_bt = g_t.rowwise().sum() * scale;
  if (both) {
    backprop_normalization(model, pt_neg, g_t_neg);
    grad_wt += g_t_neg * xt_neg.transpose() * scale;
    grad_bt += g_t_neg.rowwise().sum() * scale;
  }
  const double lr = cfg.learning_rate;
  model.weight(Branch::kVisual) -= lr * grad_wv;
  model.bias(Branch::kVisual) -= lr * grad_bv;
  model.weight(Branch::kText) -= lr * grad_wt;
  model.bias(Branch::kText) -= lr * grad_bt;
  return outcome;
}

double evaluate_map(const EmbeddingModel& model, const EncodedPairs& data) {
  const Projection pt = project_columns(model, Branch::kText, data.text);
  const Projection pv = project_columns(model, Branch::kVisual, data.visual);
  const Eigen::Index n = pt.out.cols();
  double sum = 0.0;
  for (Eigen::Index q = 0; q < n; ++q) {
    const double own = model.distance(pt.out.col(q), pv.out.col(q));
    std::size_t rank = 1;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == q) continue;
      const double dj = model.distance(pt.out.col(q), pv.out.col(j));
      if (dj < own || (dj == own && data.ids[static_cast<std::size_t>(j)] <
                                        data.ids[static_cast<std::size_t>(q)])) {
        ++rank;
      }
    }
    sum += average_precision_at_rank(rank);
  }
  return sum / static_cast<double>(n);
}

}  // namespace

double retrieval_map(const EmbeddingModel& model,
                     const std::vector<Eigen::VectorXd>& text_inputs,
                     const std::vector<Eigen::VectorXd>& visual_inputs,
                     const std::vector<std::string>& ids) {
  if (text_inputs.size() != visual_inputs.size() || ids.size() != text_inputs.size()) {
    throw Error(ErrorCode::kLengthMismatch, "retrieval_map inputs differ in length");
  }
  if (ids.empty()) throw Error(ErrorCode::kEmptyItems, "no items to rank");
  EncodedPairs data;
  data.ids = ids;
  const auto n = static_cast<Eigen::Index>(ids.size());
  data.text.resize(static_cast<Eigen::Index>(model.input_dim(Branch::kText)), n);
  data.visual.resize(static_cast<Eigen::Index>(model.input_dim(Branch::kVisual)), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = text_inputs[static_cast<std::size_t>(i)];
    const auto& v = visual_inputs[static_cast<std::size_t>(i)];
    if (t.size() != data.text.rows() || v.size() != data.visual.rows()) {
      throw Error(ErrorCode::kDimensionMismatch, "retrieval_map input dimension");
    }
    data.text.col(i) = t;
    data.visual.col(i) = v;
  }
  return evaluate_map(model, data);
}

EmbeddingResult train_embedding(const std::vector<CaptionedPair>& train,
                                const std::vector<CaptionedPair>& test,
                                const WordVectorTable& table,
                                const EmbeddingConfig& config,
                                const EpochCallback& on_epoch) {
  config.validate();
  TrainingTrace trace;
  const EncodedPairs train_data = encode_pairs(train, table, trace.skipped);
  const EncodedPairs test_data = encode_pairs(test, table, trace.skipped);
  const auto n_train = static_cast<std::size_t>(train_data.text.cols());
  const auto n_test = static_cast<std::size_t>(test_data.text.cols());
  if (n_train < 2) {
    throw Error(ErrorCode::kInsufficientPairs,
                "need at least 2 usable training pairs, found " +
                    std::to_string(n_train));
  }
  if (n_test < 2) {
    throw Error(ErrorCode::kInsufficientPairs,
                "need at least 2 usable test pairs, found " + std::to_string(n_test));
  }
  if (train_data.visual.rows() != test_data.visual.rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "train and test visual features differ in dimension");
  }

  EmbeddingModel model =
      EmbeddingModel::initialize(config, static_cast<std::size_t>(train_data.visual.rows()),
                                 table.dimension());

  // Fixed evaluation negatives so losses are comparable across epochs.
  const FixedTriplets train_eval = fixed_triplets(config.seed, "train_eval_negatives", n_train);
  const FixedTriplets test_eval = fixed_triplets(config.seed, "test_negatives", n_test);
  auto eval_loss = [&](const EncodedPairs& data, const FixedTriplets& t) {
    const BatchOutcome o = run_batch(model, data, t.index, t.visual, t.text, false);
    return o.loss_sum / static_cast<double>(o.triplets);
  };

  trace.initial_test_loss = eval_loss(test_data, test_eval);
  trace.initial_test_map = evaluate_map(model, test_data);

  Rng shuffle_rng = make_rng(config.seed, "shuffle");
  Rng negative_rng = make_rng(config.seed, "negatives");
  std::vector<std::size_t> batch, vneg, tneg;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = shuffle_rng.permutation(n_train);
    double loss_sum = 0.0;
    std::size_t triplets = 0;
    for (std::size_t start = 0; start < n_train; start += config.batch_size) {
      const std::size_t end = std::min(n_train, start + config.batch_size);
      batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                   order.begin() + static_cast<std::ptrdiff_t>(end));
      vneg.clear();
      tneg.clear();
      for (std::size_t i : batch) {
        vneg.push_back(draw_other(negative_rng, n_train, i));
        if (config.direction == TripletDirection::kBidirectional) {
          tneg.push_back(draw_other(negative_rng, n_train, i));
        }
      }
      const BatchOutcome o = run_batch(model, train_data, batch, vneg, tneg, true);
      loss_sum += o.loss_sum;
      triplets += o.triplets;
      if (!std::isfinite(o.loss_sum)) break;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.batch_loss = loss_sum / static_cast<double>(triplets);
    const bool finite = std::isfinite(stats.batch_loss) &&
                        model.weight(Branch::kVisual).allFinite() &&
                        model.weight(Branch::kText).allFinite();
    if (!finite) {
      throw Error(ErrorCode::kNonFiniteLoss,
                  "training diverged: non-finite loss in epoch " +
                      std::to_string(epoch));
    }
    stats.train_loss = eval_loss(train_data, train_eval);
    stats.test_loss = eval_loss(test_data, test_eval);
    stats.test_map = evaluate_map(model, test_data);
    trace.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return {std::move(model), std::move(trace)};
}

// ---------------------------------------------------------------------------

namespace {

void finish_ranking(std::vector<RankedItem>& items, std::size_t k) {
  std::sort(items.begin(), items.end(), [](const RankedItem& a, const RankedItem& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.id < b.id;
  });
  if (items.size() > k) items.resize(k);
  for (std::size_t i = 0; i < items.size(); ++i) items[i].rank = i + 1;
}

}  // namespace

RankedResult rank_memes(const EmbeddingModel& model, std::string_view query,
                        const std::vector<FeatureVector>& items,
                        const WordVectorTable& table, std::size_t k) {
  if (items.empty()) throw Error(ErrorCode::kEmptyItems, "no items to rank");
  const TextEmbedding text = embed_text(query, table);
  const Eigen::VectorXd anchor = model.project(Branch::kText, text.values);
  RankedResult result;
  result.dropped_tokens = text.dropped;
  result.items.reserve(items.size());
  for (const auto& item : items) {
    const Eigen::VectorXd z = model.project(Branch::kVisual, item.values);
    result.items.push_back({item.id, model.distance(anchor, z), 0});
  }
  finish_ranking(result.items, k);
  return result;
}

RankedResult rank_texts(
    const EmbeddingModel& model, std::span<const double> query_visual,
    const std::vector<std::pair<std::string, std::string>>& captions,
    const WordVectorTable& table, std::size_t k) {
  if (captions.empty()) throw Error(ErrorCode::kEmptyItems, "no captions to rank");
  const Eigen::VectorXd anchor = model.project(Branch::kVisual, query_visual);
  RankedResult result;
  for (const auto& [id, caption] : captions) {
    std::vector<double> emb;
    try {
      emb = embed_text(caption, table).values;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kAllTokensUnknown &&
          e.code() != ErrorCode::kInvalidArgument) {
        throw;
      }
      result.skipped_ids.push_back(id);
      continue;
    }
    const Eigen::VectorXd z = model.project(Branch::kText, emb);
    result.items.push_back({id, model.distance(anchor, z), 0});
  }
  if (result.items.empty()) {
    throw Error(ErrorCode::kEmptyItems, "no caption could be embedded");
  }
  finish_ranking(result.items, k);
  return result;
}

}  // namespace memesearch
