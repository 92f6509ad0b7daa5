// Python bindings: HOG extraction, tokenization, ranking metrics,
// cross-validation, inter-coder reliability and the text/image embedding.
// Structured results cross the boundary as JSON text, decoded in __init__.py.
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "memesearch/classifiers.hpp"
#include "memesearch/corpus.hpp"
#include "memesearch/embedding.hpp"
#include "memesearch/error.hpp"
#include "memesearch/hog.hpp"
#include "memesearch/metrics.hpp"
#include "memesearch/random.hpp"
#include "memesearch/text.hpp"

namespace py = pybind11;
using namespace memesearch;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

ClassLabel label_from(const std::string& name) {
  auto label = parse_label(name);
  if (!label) throw Error(ErrorCode::kInvalidArgument, "unknown label '" + name + "'");
  return *label;
}

// Rows of a 2-D array keyed by the given ids.
std::vector<FeatureVector> rows_of(const std::vector<std::string>& ids, const Array& matrix) {
  if (matrix.ndim() != 2 || static_cast<std::size_t>(matrix.shape(0)) != ids.size()) {
    throw Error(ErrorCode::kLengthMismatch, "features must be a 2-D array with one row per id");
  }
  const auto cols = static_cast<std::size_t>(matrix.shape(1));
  std::vector<FeatureVector> rows;
  rows.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double* p = matrix.data() + i * cols;
    rows.push_back({ids[i], std::vector<double>(p, p + cols)});
  }
  return rows;
}

WordVectorTable words_of(const std::vector<std::string>& tokens, const Array& vectors) {
  return WordVectorTable(FeatureTable(rows_of(tokens, vectors)));
}

std::vector<double> hog(const Array& image, std::size_t resize_width, std::size_t resize_height,
                        std::size_t cell_size, std::size_t block_size, std::size_t bins,
                        double clip) {
  if (image.ndim() != 2) {
    throw Error(ErrorCode::kInvalidArgument, "image must be a 2-D grayscale array in [0, 1]");
  }
  const auto h = static_cast<std::size_t>(image.shape(0));
  const auto w = static_cast<std::size_t>(image.shape(1));
  GrayImage img(w, h, std::vector<double>(image.data(), image.data() + w * h));
  HogConfig cfg{resize_width, resize_height, cell_size, block_size, bins, clip};
  return hog_descriptor(img, cfg);
}

std::string cross_validate_json(const std::vector<std::string>& ids, const Array& features,
                                const std::vector<std::string>& labels,
                                const std::string& method, std::size_t resamples,
                                std::size_t folds, std::uint64_t seed, std::size_t k,
                                double lambda) {
  if (labels.size() != ids.size()) {
    throw Error(ErrorCode::kLengthMismatch, "labels must have one entry per id");
  }
  auto rows = rows_of(ids, features);
  std::vector<LabeledDataset::Sample> samples;
  for (std::size_t i = 0; i < rows.size(); ++i)
    samples.push_back({std::move(rows[i]), label_from(labels[i])});
  auto kind = parse_kind(method);
  if (!kind) throw Error(ErrorCode::kInvalidArgument, "unknown method '" + method + "'");
  ClassifierSpec spec;
  spec.kind = *kind;
  spec.k = k;
  spec.lambda = lambda;
  spec.validate();
  py::gil_scoped_release release;
  return to_json(cross_validate(spec, LabeledDataset(std::move(samples)), resamples, folds, seed,
                                method))
      .dump();
}

std::string icr_json(const std::vector<std::tuple<std::string, std::string, std::string, std::int64_t>>& records) {
  std::vector<AnnotationRecord> out;
  for (const auto& [item, coder, label, ts] : records)
    out.push_back({item, coder, label_from(label), ts});
  return to_json(icr(out)).dump();
}

class PyEmbedding {
 public:
  explicit PyEmbedding(EmbeddingModel model) : model_(std::move(model)) {}

  static PyEmbedding load(const std::string& path) { return PyEmbedding(load_embedding_model(path)); }
  void save(const std::string& path) const { save_embedding_model(path, model_); }
  std::string to_json() const { return model_.to_json().dump(); }
  std::size_t dim() const { return model_.dim(); }

  std::vector<std::tuple<std::size_t, std::string, double>> search(
      const std::string& query, const std::vector<std::string>& ids, const Array& visual,
      const std::vector<std::string>& tokens, const Array& vectors, std::size_t k) const {
    auto ranked = rank_memes(model_, query, rows_of(ids, visual), words_of(tokens, vectors), k);
    std::vector<std::tuple<std::size_t, std::string, double>> out;
    for (const auto& r : ranked.items) out.emplace_back(r.rank, r.id, r.distance);
    return out;
  }

 private:
  EmbeddingModel model_;
};

py::tuple train_pairs(const std::vector<std::string>& ids, const std::vector<std::string>& captions,
                const Array& visual, const std::vector<std::string>& tokens, const Array& vectors,
                std::size_t test_size, std::size_t dim, double margin, double lr,
                std::size_t batch, std::size_t epochs, std::uint64_t seed,
                const std::string& distance) {
  if (captions.size() != ids.size()) {
    throw Error(ErrorCode::kLengthMismatch, "captions must have one entry per id");
  }
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ManifestEntry e;
    e.id = ids[i];
    e.caption = captions[i];
    entries.push_back(std::move(e));
  }
  const FeatureTable table(rows_of(ids, visual));
  if (test_size >= ids.size()) {
    throw Error(ErrorCode::kInsufficientPairs, "test_size must be smaller than the pair count");
  }
  const auto split = split_pairs(entries, table, ids.size() - test_size, derive_seed(seed, "split"));
  EmbeddingConfig cfg;
  cfg.dim = dim;
  cfg.margin = margin;
  cfg.learning_rate = lr;
  cfg.batch_size = batch;
  cfg.epochs = epochs;
  cfg.seed = seed;
  auto mode = parse_distance(distance);
  if (!mode) throw Error(ErrorCode::kInvalidArgument, "unknown distance '" + distance + "'");
  cfg.distance = *mode;
  const auto words = words_of(tokens, vectors);
  EmbeddingResult result;
  {
    py::gil_scoped_release release;
    result = train_embedding(split.train, split.test, words, cfg);
  }
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& e : result.trace.epochs) {
    trace.push_back({{"epoch", e.epoch},
                     {"train_loss", e.train_loss},
                     {"batch_loss", e.batch_loss},
                     {"test_loss", e.test_loss},
                     {"test_map", e.test_map}});
  }
  return py::make_tuple(PyEmbedding(std::move(result.model)), trace.dump());
}

}  // namespace

PYBIND11_MODULE(_memesearch, m) {
  m.doc() = "Meme classification and text-to-meme retrieval";

  PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
  error_type.call_once_and_store_result(
      [&] { return py::object(py::exception<Error>(m, "Error", PyExc_ValueError)); });
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object type = error_type.get_stored();
      py::object instance = type(e.what());
      instance.attr("code") = error_code_name(e.code());
      if (const auto* unknown = dynamic_cast<const UnknownTokensError*>(&e))
        instance.attr("tokens") = unknown->tokens();
      PyErr_SetObject(type.ptr(), instance.ptr());
    }
  });

  m.def("hog_descriptor", &hog, py::arg("image"), py::arg("resize_width") = 128,
        py::arg("resize_height") = 128, py::arg("cell_size") = 8, py::arg("block_size") = 2,
        py::arg("bins") = 9, py::arg("clip") = 0.2,
        "HOG descriptor of a 2-D grayscale image with intensities in [0, 1].");
  m.def("tokenize", [](const std::string& s) { return tokenize(s); });
  m.def("average_precision",
        [](const std::vector<std::string>& ranking, const std::set<std::string>& relevant) {
          return average_precision(ranking, relevant);
        });
  m.def("random_ranking_map", &random_ranking_map, py::arg("n"));
  m.def("f1_score", &f1_score, py::arg("precision"), py::arg("recall"));
  m.def("_cross_validate", &cross_validate_json, py::arg("ids"), py::arg("features"),
        py::arg("labels"), py::arg("method") = "linear_svm", py::arg("resamples") = 10,
        py::arg("folds") = 10, py::arg("seed") = 42, py::arg("k") = 5, py::arg("lam") = 1e-4);
  m.def("_icr", &icr_json, py::arg("records"));

  py::class_<PyEmbedding>(m, "EmbeddingModel")
      .def_static("load", &PyEmbedding::load, py::arg("path"))
      .def("save", &PyEmbedding::save, py::arg("path"))
      .def("_to_json", &PyEmbedding::to_json)
      .def_property_readonly("dim", &PyEmbedding::dim)
      .def("_search", &PyEmbedding::search, py::arg("query"), py::arg("ids"), py::arg("visual"),
           py::arg("tokens"), py::arg("vectors"), py::arg("k") = 10);
  m.def("_train_embedding", &train_pairs, py::arg("ids"), py::arg("captions"), py::arg("visual"),
        py::arg("tokens"), py::arg("vectors"), py::arg("test_size"), py::arg("dim") = 256,
        py::arg("margin") = 1.0, py::arg("lr") = 1e-4, py::arg("batch") = 16,
        py::arg("epochs") = 270, py::arg("seed") = 42, py::arg("distance") = "squared_euclidean");
}
