// memesearch: command-line front end for feature extraction, classifier
// cross-validation, embedding training, text-to-meme search and the HTTP
// service.
//
// Exit status: 0 success, 1 usage, 2 data error, 3 numeric failure.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "memesearch/classifiers.hpp"
#include "memesearch/corpus.hpp"
#include "memesearch/embedding.hpp"
#include "memesearch/error.hpp"
#include "memesearch/hog.hpp"
#include "memesearch/metrics.hpp"
#include "memesearch/numeric_text.hpp"
#include "memesearch/random.hpp"
#include "memesearch/service.hpp"
#include "memesearch/text.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen.
#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace memesearch;

namespace {

constexpr std::uint64_t kDefaultSeed = 42;
constexpr int kExitUsage = 1;

struct GlobalOptions {
  std::uint64_t seed = kDefaultSeed;
  std::string out;
  std::string format = "table";
  bool verbose = false;
};

// Usage errors detected after parsing (missing --out and the like).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  out << text;
  out.flush();
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

std::string require_out(const GlobalOptions& g, const char* what) {
  if (g.out.empty()) throw UsageError(std::string("--out is required (") + what + ")");
  return g.out;
}

// Writes to --out when given, otherwise to stdout.
void emit(const GlobalOptions& g, const std::string& text) {
  if (g.out.empty()) {
    std::cout << text << std::flush;
  } else {
    write_text_file(g.out, text);
  }
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// hog-extract

struct HogOptions {
  std::string images;
  HogConfig config;
};

std::optional<GrayImage> read_image(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty() || bgr.type() != CV_8UC3) return std::nullopt;
  const auto w = static_cast<std::size_t>(bgr.cols);
  const auto h = static_cast<std::size_t>(bgr.rows);
  std::vector<std::uint8_t> rgb(w * h * 3);
  for (std::size_t y = 0; y < h; ++y) {
    const auto* row = bgr.ptr<std::uint8_t>(static_cast<int>(y));
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t o = (y * w + x) * 3;
      rgb[o] = row[x * 3 + 2];
      rgb[o + 1] = row[x * 3 + 1];
      rgb[o + 2] = row[x * 3];
    }
  }
  return GrayImage::from_rgb8(w, h, rgb);
}

int run_hog_extract(const GlobalOptions& g, const HogOptions& o) {
  const fs::path out = require_out(g, "feature file");
  o.config.validate();
  const std::size_t dim = o.config.descriptor_length();

  std::error_code ec;
  if (!fs::is_directory(o.images, ec)) {
    throw Error(ErrorCode::kIo, "'" + o.images + "' is not a directory");
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(o.images)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().filename().string().starts_with(".")) continue;
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw Error(ErrorCode::kIo, "no image files in '" + o.images + "'");
  }

  std::vector<FeatureVector> rows;
  std::size_t skipped = 0;
  for (const auto& file : files) {
    auto img = read_image(file);
    if (!img) {
      std::cerr << "warning: skipping unreadable image '" << file.string() << "'\n";
      ++skipped;
      continue;
    }
    rows.push_back({file.stem().string(), hog_descriptor(*img, o.config)});
    if (g.verbose) std::cerr << file.filename().string() << "\n";
  }
  if (rows.empty()) {
    throw Error(ErrorCode::kIo, "none of the " + std::to_string(files.size()) +
                                    " files in '" + o.images + "' could be decoded");
  }
  const std::size_t count = rows.size();
  save_feature_file(out, FeatureTable(std::move(rows)));
  std::cout << "extracted " << count << " descriptors of dimension " << dim
            << ", skipped " << skipped << " -> " << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Classifier options shared by train-classifier and cross-validate.

struct ClassifierOptions {
  std::string manifest;
  std::string features;
  ClassifierSpec spec;
};

void add_classifier_flags(CLI::App* cmd, ClassifierOptions& o) {
  cmd->add_option("--manifest", o.manifest, "Manifest (JSON Lines) with labels")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--features", o.features, "Feature file keyed by manifest id")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--k", o.spec.k, "knn: neighbors")->capture_default_str();
  cmd->add_option("--var-smoothing", o.spec.var_smoothing, "naive_bayes: variance smoothing")
      ->capture_default_str();
  cmd->add_option("--max-depth", o.spec.max_depth, "decision_tree: depth limit")
      ->capture_default_str();
  cmd->add_option("--min-leaf", o.spec.min_leaf, "decision_tree: samples per leaf")
      ->capture_default_str();
  cmd->add_option("--lambda", o.spec.lambda, "linear_svm: regularization")
      ->capture_default_str();
  cmd->add_option("--svm-epochs", o.spec.epochs, "linear_svm: passes over the data")
      ->capture_default_str();
  cmd->add_option("--svm-lr", o.spec.learning_rate, "linear_svm: initial step size")
      ->capture_default_str();
}

ClassifierKind kind_from_text(const std::string& text) {
  auto kind = parse_kind(text);
  if (!kind) {
    throw UsageError("unknown classifier '" + text +
                     "' (expected knn, naive_bayes, decision_tree, linear_svm)");
  }
  return *kind;
}

LabeledDataset load_labeled(const ClassifierOptions& o) {
  return labeled_dataset(load_manifest(o.manifest), load_feature_file(o.features));
}

// ---------------------------------------------------------------------------
// train-classifier

struct TrainClassifierOptions {
  ClassifierOptions common;
  std::string kind = "linear_svm";
  bool undersample = false;
};

int run_train_classifier(const GlobalOptions& g, TrainClassifierOptions o) {
  const fs::path out = require_out(g, "classifier model");
  o.common.spec.kind = kind_from_text(o.kind);
  o.common.spec.seed = derive_seed(g.seed, "classifier");
  o.common.spec.validate();
  LabeledDataset data = load_labeled(o.common);
  if (o.undersample) data = undersample(data, derive_seed(g.seed, "undersample"));
  const TrainedClassifier model = train(o.common.spec, data);
  save_classifier(out, model);
  std::cerr << "trained " << kind_name(model.kind()) << " on " << data.size()
            << " samples of dimension " << data.dimension() << " -> " << out.string()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// cross-validate

struct CrossValidateOptions {
  ClassifierOptions common;
  std::vector<std::string> methods{"knn", "naive_bayes", "decision_tree", "linear_svm"};
  std::string feature_name;
  std::size_t resamples = 10;
  std::size_t folds = 10;
};

int run_cross_validate(const GlobalOptions& g, const CrossValidateOptions& o) {
  if (g.format != "table" && g.format != "records") {
    throw UsageError("--format must be table or records");
  }
  std::vector<ClassifierSpec> specs;
  for (const auto& m : o.methods) {
    ClassifierSpec spec = o.common.spec;
    spec.kind = kind_from_text(m);
    spec.validate();
    specs.push_back(spec);
  }
  const LabeledDataset data = load_labeled(o.common);

  json reports = json::array();
  std::ostringstream table;
  if (g.format == "table") {
    table << std::left << std::setw(28) << "Method" << std::setw(11) << "Precision"
          << std::setw(8) << "Recall" << "F1-Score\n";
  }
  for (const auto& spec : specs) {
    std::string method(kind_name(spec.kind));
    if (!o.feature_name.empty()) method = o.feature_name + " + " + method;
    const CvReport report = cross_validate(spec, data, o.resamples, o.folds, g.seed, method);
    if (g.format == "table") {
      table << std::left << std::setw(28) << method << std::setw(11)
            << fixed3(report.macro_precision.mean) << std::setw(8)
            << fixed3(report.macro_recall.mean) << fixed3(report.macro_f1.mean) << "\n";
    } else {
      auto summary = [](const MetricSummary& s) {
        return json{{"mean", s.mean}, {"stddev", s.stddev}};
      };
      table << json{{"method", method},
                    {"macro_precision", summary(report.macro_precision)},
                    {"macro_recall", summary(report.macro_recall)},
                    {"macro_f1", summary(report.macro_f1)},
                    {"accuracy", summary(report.accuracy)}}
                   .dump()
            << "\n";
    }
    reports.push_back(to_json(report));
  }
  std::cout << table.str() << std::flush;
  if (!g.out.empty()) {
    json doc{{"version", 1}, {"reports", reports}};
    write_text_file(g.out, doc.dump(2) + "\n");
  }
  return 0;
}

// ---------------------------------------------------------------------------
// train-embedding

struct TrainEmbeddingOptions {
  std::string manifest;
  std::string visual;
  std::string words;
  std::string trace;
  std::size_t test_size = 83;
  EmbeddingConfig config;
  std::string distance = "squared_euclidean";
  std::string direction = "bidirectional";
};

std::string trace_text(const TrainingTrace& trace, const std::string& format) {
  std::ostringstream out;
  if (format == "records") {
    for (const auto& e : trace.epochs) {
      out << json{{"epoch", e.epoch},
                  {"train_loss", e.train_loss},
                  {"batch_loss", e.batch_loss},
                  {"test_loss", e.test_loss},
                  {"test_map", e.test_map}}
                 .dump()
          << "\n";
    }
    return out.str();
  }
  out << "epoch\ttrain_loss\ttest_loss\ttest_map\tbatch_loss\n";
  for (const auto& e : trace.epochs) {
    out << e.epoch << '\t' << format_double(e.train_loss) << '\t'
        << format_double(e.test_loss) << '\t' << format_double(e.test_map) << '\t'
        << format_double(e.batch_loss) << '\n';
  }
  return out.str();
}

int run_train_embedding(const GlobalOptions& g, TrainEmbeddingOptions o) {
  const fs::path out = require_out(g, "embedding model");
  if (g.format != "table" && g.format != "records") {
    throw UsageError("--format must be table or records");
  }
  auto distance = parse_distance(o.distance);
  if (!distance) throw UsageError("unknown --distance '" + o.distance + "'");
  auto direction = parse_direction(o.direction);
  if (!direction) throw UsageError("unknown --direction '" + o.direction + "'");
  o.config.distance = *distance;
  o.config.direction = *direction;
  o.config.seed = g.seed;
  o.config.validate();
  if (o.test_size < 1) throw UsageError("--test-size must be >= 1");

  std::cerr << "epochs=" << o.config.epochs << " batch=" << o.config.batch_size
            << " lr=" << format_decimal(o.config.learning_rate)
            << " margin=" << format_decimal(o.config.margin) << "\n";

  const auto entries = load_manifest(o.manifest);
  const FeatureTable visual = load_feature_file(o.visual);
  const WordVectorTable words = load_word_vectors(o.words);

  std::size_t usable = 0;
  for (const auto& e : entries) {
    if (e.caption && visual.contains(e.id)) ++usable;
  }
  if (usable <= o.test_size) {
    throw Error(ErrorCode::kInsufficientPairs,
                std::to_string(usable) + " captioned pairs with visual features; need more than --test-size=" +
                    std::to_string(o.test_size));
  }
  const PairSplit split = split_pairs(entries, visual, usable - o.test_size,
                                      derive_seed(g.seed, "split"));
  std::cerr << "pairs: " << split.train.size() << " train, " << split.test.size()
            << " test\n";

  const EpochCallback progress = [&](const EpochStats& e) {
    if (!g.verbose) return;
    std::cerr << "epoch " << e.epoch << " train_loss " << format_double(e.train_loss)
              << " test_loss " << format_double(e.test_loss) << " test_map "
              << format_double(e.test_map) << "\n";
  };
  const EmbeddingResult result =
      train_embedding(split.train, split.test, words, o.config, progress);
  if (!result.trace.skipped.empty()) {
    std::cerr << "warning: " << result.trace.skipped.size()
              << " pairs skipped (no known caption token)\n";
  }

  save_embedding_model(out, result.model);
  const fs::path trace_path =
      o.trace.empty() ? fs::path(out.string() + (g.format == "records" ? ".trace.jsonl"
                                                                       : ".trace.tsv"))
                      : fs::path(o.trace);
  write_text_file(trace_path, trace_text(result.trace, g.format));

  const auto& last = result.trace.epochs.back();
  std::cout << "initial test_map " << format_double(result.trace.initial_test_map)
            << ", final test_map " << format_double(last.test_map) << " after "
            << last.epoch << " epochs; random baseline "
            << format_double(random_ranking_map(split.test.size())) << "\n"
            << "model -> " << out.string() << "\ntrace -> " << trace_path.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// search

struct SearchOptions {
  std::string model;
  std::string features;
  std::string words;
  std::string manifest;
  std::string query;
  std::size_t k = 10;
};

int run_search(const GlobalOptions& g, const SearchOptions& o) {
  if (g.format != "table" && g.format != "records") {
    throw UsageError("--format must be table or records");
  }
  if (o.k < 1) throw UsageError("--k must be >= 1");
  const EmbeddingModel model = load_embedding_model(o.model);
  const FeatureTable visual = load_feature_file(o.features);
  const WordVectorTable words = load_word_vectors(o.words);

  std::vector<FeatureVector> items;
  if (o.manifest.empty()) {
    items = visual.rows();
  } else {
    for (const auto& e : load_manifest(o.manifest)) {
      if (const auto* v = visual.find(e.id)) items.push_back({e.id, *v});
    }
  }

  RankedResult ranked;
  try {
    ranked = rank_memes(model, o.query, items, words, o.k);
  } catch (const UnknownTokensError& e) {
    std::cerr << "error: no query token has a word vector; dropped:";
    for (const auto& t : e.tokens()) std::cerr << ' ' << t;
    std::cerr << "\n";
    return exit_status(e.code());
  }
  if (!ranked.dropped_tokens.empty()) {
    std::cerr << "warning: dropped unknown tokens:";
    for (const auto& t : ranked.dropped_tokens) std::cerr << ' ' << t;
    std::cerr << "\n";
  }

  std::ostringstream out;
  if (g.format == "records") {
    for (const auto& r : ranked.items) {
      out << json{{"rank", r.rank}, {"id", r.id}, {"distance", r.distance}}.dump() << "\n";
    }
  } else {
    out << "rank\tid\tdistance\n";
    for (const auto& r : ranked.items) {
      out << r.rank << '\t' << r.id << '\t' << format_double(r.distance) << '\n';
    }
  }
  emit(g, out.str());
  return 0;
}

// ---------------------------------------------------------------------------
// serve

struct ServeOptions {
  std::string model;
  std::string classifier;
  std::string manifest;
  std::string features;
  std::string words;
  std::string log = "annotations.jsonl";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
};

int run_serve(const GlobalOptions&, const ServeOptions& o) {
  std::optional<TrainedClassifier> classifier;
  if (!o.classifier.empty()) classifier = load_classifier(o.classifier);
  MemeService service(load_embedding_model(o.model), std::move(classifier),
                      load_manifest(o.manifest), load_feature_file(o.features),
                      load_word_vectors(o.words), o.log);
  httplib::Server server;
  service.bind(server);
  if (!o.static_dir.empty() && !server.set_mount_point("/", o.static_dir)) {
    throw Error(ErrorCode::kIo, "cannot serve static directory '" + o.static_dir + "'");
  }
  std::cerr << "serving " << service.items().size() << " items on http://" << o.host
            << ":" << o.port << "\n";
  if (!server.listen(o.host, o.port)) {
    throw Error(ErrorCode::kIo, "cannot listen on " + o.host + ":" + std::to_string(o.port));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meme classification and text-to-meme retrieval"};
  app.fallthrough();
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file; keys mirror the long flags");

  GlobalOptions g;
  app.add_option("--seed", g.seed, "Run seed; every random stream derives from it")
      ->capture_default_str();
  app.add_option("--out", g.out, "Primary output path");
  app.add_option("--format", g.format, "table or records")
      ->check(CLI::IsMember({"table", "records"}))
      ->capture_default_str();
  app.add_flag("-v,--verbose", g.verbose, "Progress on stderr");

  HogOptions hog;
  auto* hog_cmd = app.add_subcommand("hog-extract", "HOG descriptors for a directory of images");
  hog_cmd->add_option("--images", hog.images, "Directory of raster images")->required();
  hog_cmd->add_option("--resize-width", hog.config.resize_width)->capture_default_str();
  hog_cmd->add_option("--resize-height", hog.config.resize_height)->capture_default_str();
  hog_cmd->add_option("--cell-size", hog.config.cell_size)->capture_default_str();
  hog_cmd->add_option("--block-size", hog.config.block_size)->capture_default_str();
  hog_cmd->add_option("--bins", hog.config.num_bins)->capture_default_str();
  hog_cmd->add_option("--clip", hog.config.clip)->capture_default_str();

  TrainClassifierOptions tc;
  auto* tc_cmd = app.add_subcommand("train-classifier", "Train one classifier on labeled features");
  add_classifier_flags(tc_cmd, tc.common);
  tc_cmd->add_option("--method", tc.kind, "knn | naive_bayes | decision_tree | linear_svm")
      ->capture_default_str();
  tc_cmd->add_flag("--undersample", tc.undersample, "Balance classes before training");

  CrossValidateOptions cv;
  auto* cv_cmd = app.add_subcommand("cross-validate",
                                    "Repeated undersampling + stratified k-fold evaluation");
  add_classifier_flags(cv_cmd, cv.common);
  cv_cmd->add_option("--method", cv.methods, "Classifiers to evaluate (repeatable)")
      ->capture_default_str();
  cv_cmd->add_option("--feature-name", cv.feature_name,
                     "Prefix for the method column, e.g. HOG");
  cv_cmd->add_option("--resamples", cv.resamples)->capture_default_str();
  cv_cmd->add_option("--folds", cv.folds)->capture_default_str();

  TrainEmbeddingOptions te;
  auto* te_cmd = app.add_subcommand("train-embedding", "Triplet-loss text/image embedding");
  te_cmd->add_option("--manifest", te.manifest, "Manifest with captions")
      ->required()
      ->check(CLI::ExistingFile);
  te_cmd->add_option("--visual", te.visual, "Visual feature file")
      ->required()
      ->check(CLI::ExistingFile);
  te_cmd->add_option("--words", te.words, "Word-vector file")
      ->required()
      ->check(CLI::ExistingFile);
  te_cmd->add_option("--trace", te.trace, "Per-epoch trace path (default: <out>.trace.tsv)");
  te_cmd->add_option("--test-size", te.test_size, "Held-out pairs")->capture_default_str();
  te_cmd->add_option("--dim", te.config.dim, "Shared embedding dimension")->capture_default_str();
  te_cmd->add_option("--margin", te.config.margin)->capture_default_str();
  te_cmd->add_option("--lr", te.config.learning_rate)->capture_default_str();
  te_cmd->add_option("--batch", te.config.batch_size)->capture_default_str();
  te_cmd->add_option("--epochs", te.config.epochs)->capture_default_str();
  te_cmd->add_option("--distance", te.distance, "squared_euclidean | euclidean")
      ->capture_default_str();
  te_cmd->add_option("--direction", te.direction, "bidirectional | text_anchored")
      ->capture_default_str();
  te_cmd->add_flag("--normalize", te.config.normalize, "L2-normalize projections");

  SearchOptions so;
  auto* search_cmd = app.add_subcommand("search", "Rank memes for a text query");
  search_cmd->add_option("--model", so.model)->required()->check(CLI::ExistingFile);
  search_cmd->add_option("--features", so.features, "Visual feature file")
      ->required()
      ->check(CLI::ExistingFile);
  search_cmd->add_option("--words", so.words)->required()->check(CLI::ExistingFile);
  search_cmd->add_option("--manifest", so.manifest, "Restrict to manifest ids")
      ->check(CLI::ExistingFile);
  search_cmd->add_option("--query", so.query)->required();
  search_cmd->add_option("--k", so.k, "Results to print (clamped to the corpus)")
      ->capture_default_str();

  ServeOptions sv;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP service over trained artifacts");
  serve_cmd->add_option("--model", sv.model)
      ->required()
      ->envname("MEMESEARCH_MODEL")
      ->check(CLI::ExistingFile);
  serve_cmd->add_option("--classifier", sv.classifier)
      ->envname("MEMESEARCH_CLASSIFIER")
      ->check(CLI::ExistingFile);
  serve_cmd->add_option("--manifest", sv.manifest)
      ->required()
      ->envname("MEMESEARCH_MANIFEST")
      ->check(CLI::ExistingFile);
  serve_cmd->add_option("--features", sv.features)
      ->required()
      ->envname("MEMESEARCH_FEATURES")
      ->check(CLI::ExistingFile);
  serve_cmd->add_option("--words", sv.words)
      ->required()
      ->envname("MEMESEARCH_WORDS")
      ->check(CLI::ExistingFile);
  serve_cmd->add_option("--log", sv.log, "Annotation log")
      ->envname("MEMESEARCH_LOG")
      ->capture_default_str();
  serve_cmd->add_option("--host", sv.host)->envname("MEMESEARCH_HOST")->capture_default_str();
  serve_cmd->add_option("--port", sv.port)->envname("MEMESEARCH_PORT")->capture_default_str();
  serve_cmd->add_option("--static", sv.static_dir, "Directory served at /")
      ->envname("MEMESEARCH_STATIC");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*hog_cmd) return run_hog_extract(g, hog);
    if (*tc_cmd) return run_train_classifier(g, tc);
    if (*cv_cmd) return run_cross_validate(g, cv);
    if (*te_cmd) return run_train_embedding(g, te);
    if (*search_cmd) return run_search(g, so);
    if (*serve_cmd) return run_serve(g, sv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error [" << error_code_name(e.code()) << "]: " << e.what() << "\n";
    return exit_status(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return kExitUsage;
}
