#include "memesearch/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "memesearch/error.hpp"

namespace memesearch {

using nlohmann::json;

// ---------------------------------------------------------------------------

json to_json(const AnnotationRecord& r) {
  return {{"item_id", r.item_id},
          {"coder_id", r.coder_id},
          {"label", std::string(label_name(r.label))},
          {"timestamp_ms", r.timestamp_ms}};
}

AnnotationRecord annotation_from_json(const json& j) {
  AnnotationRecord r;
  r.item_id = j.at("item_id").get<std::string>();
  r.coder_id = j.at("coder_id").get<std::string>();
  auto label = parse_label(j.at("label").get<std::string>());
  if (!label) throw Error(ErrorCode::kParse, "unknown annotation label");
  r.label = *label;
  r.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
  return r;
}

AnnotationLog::AnnotationLog(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_, std::ios::binary);
  if (!in) {
    std::ofstream create(path_, std::ios::app);
    if (!create) {
      throw Error(ErrorCode::kIo, "cannot create annotation log '" + path_.string() + "'");
    }
    return;
  }
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      records_.push_back(annotation_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kParse, path_.string() + ": line " +
                                         std::to_string(n) + ": " + e.what());
    }
  }
}

void AnnotationLog::append(const AnnotationRecord& record) {
  const std::string line = to_json(record).dump() + "\n";
  std::lock_guard lock(mutex_);
  const int fd = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) {
    throw Error(ErrorCode::kIo, "cannot open annotation log: " +
                                    std::string(std::strerror(errno)));
  }
  std::size_t written = 0;
  while (written < line.size()) {
    const ssize_t n = ::write(fd, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw Error(ErrorCode::kIo, "annotation log write failed");
    }
    written += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
  records_.push_back(record);
}

std::vector<AnnotationRecord> AnnotationLog::snapshot() const {
  std::lock_guard lock(mutex_);
  return records_;
}

// ---------------------------------------------------------------------------

namespace {

HttpReply reply(int status, json body) {
  body["version"] = kWireVersion;
  return {status, "application/json", body.dump()};
}

HttpReply error_reply(int status, const std::string& message, json extra = json::object()) {
  extra["error"] = message;
  return reply(status, std::move(extra));
}

// Parses a request body; nullopt plus a ready 400 reply on failure.
std::optional<json> parse_body(const std::string& body, HttpReply& failure) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    failure = error_reply(400, std::string("malformed JSON body: ") + e.what());
    return std::nullopt;
  }
  if (!doc.is_object()) {
    failure = error_reply(400, "request body must be a JSON object");
    return std::nullopt;
  }
  if (auto v = doc.find("version"); v != doc.end()) {
    if (!v->is_number_integer() || v->get<int>() != kWireVersion) {
      failure = error_reply(400, "unsupported version; expected " +
                                     std::to_string(kWireVersion));
      return std::nullopt;
    }
  }
  return doc;
}

std::int64_t system_millis() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

json scores_json(const ClassScores& scores) {
  json out = json::object();
  for (const auto& [label, v] : scores) out[std::string(label_name(label))] = v;
  return out;
}

std::string content_type_for(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  if (ext == ".bmp") return "image/bmp";
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return "image/x-portable-anymap";
  return "application/octet-stream";
}

}  // namespace

MemeService::MemeService(EmbeddingModel model,
                         std::optional<TrainedClassifier> classifier,
                         std::vector<ManifestEntry> manifest, FeatureTable visual,
                         WordVectorTable words,
                         std::filesystem::path annotation_log, Clock clock)
    : model_(std::move(model)),
      classifier_(std::move(classifier)),
      manifest_(std::move(manifest)),
      visual_(std::move(visual)),
      words_(std::move(words)),
      log_(std::move(annotation_log)),
      clock_(clock ? std::move(clock) : Clock(system_millis)),
      started_(std::chrono::steady_clock::now()) {
  if (!visual_.empty() && visual_.dimension() != model_.input_dim(Branch::kVisual)) {
    throw Error(ErrorCode::kDimensionMismatch,
                "visual features have dimension " + std::to_string(visual_.dimension()) +
                    ", model expects " +
                    std::to_string(model_.input_dim(Branch::kVisual)));
  }
  if (words_.dimension() != model_.input_dim(Branch::kText)) {
    throw Error(ErrorCode::kDimensionMismatch,
                "word vectors have dimension " + std::to_string(words_.dimension()) +
                    ", model expects " + std::to_string(model_.input_dim(Branch::kText)));
  }
  for (const auto& e : manifest_) {
    Item item{e.id, e.caption, e.image_path, visual_.find(e.id)};
    if (item.visual != nullptr) searchable_.push_back({e.id, *item.visual});
    item_index_.emplace(e.id, items_.size());
    items_.push_back(std::move(item));
  }
}

const MemeService::Item* MemeService::find_item(const std::string& id) const {
  auto it = item_index_.find(id);
  return it == item_index_.end() ? nullptr : &items_[it->second];
}

HttpReply MemeService::health() const {
  const double uptime = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - started_)
                            .count();
  json classifier = nullptr;
  if (classifier_) {
    classifier = {{"kind", std::string(kind_name(classifier_->kind()))},
                  {"format_version", TrainedClassifier::kFormatVersion},
                  {"input_dimension", classifier_->dimension()}};
  }
  return reply(200, {{"status", "ok"},
                     {"embedding_model",
                      {{"format_version", EmbeddingModel::kFormatVersion},
                       {"dim", model_.dim()},
                       {"distance", std::string(distance_name(model_.config().distance))},
                       {"visual_input_dim", model_.input_dim(Branch::kVisual)},
                       {"text_input_dim", model_.input_dim(Branch::kText)}}},
                     {"classifier", classifier},
                     {"item_count", items_.size()},
                     {"searchable_count", searchable_.size()},
                     {"uptime_seconds", uptime}});
}

HttpReply MemeService::search(const std::string& body) const {
  HttpReply failure;
  auto doc = parse_body(body, failure);
  if (!doc) return failure;
  auto q = doc->find("query");
  if (q == doc->end() || !q->is_string()) {
    return error_reply(400, "field \"query\" (string) is required");
  }
  const auto query = q->get<std::string>();
  std::size_t k = 10;
  if (auto kk = doc->find("k"); kk != doc->end()) {
    if (!kk->is_number_integer() || kk->get<long long>() < 1) {
      return error_reply(400, "field \"k\" must be an integer >= 1");
    }
    k = kk->get<std::size_t>();
  }
  if (tokenize(query).empty()) return error_reply(400, "query is empty");
  if (searchable_.empty()) return error_reply(404, "no items with visual features");

  RankedResult ranked;
  try {
    ranked = rank_memes(model_, query, searchable_, words_, k);
  } catch (const UnknownTokensError& e) {
    return error_reply(422, e.what(), {{"dropped_tokens", e.tokens()}});
  }
  json results = json::array();
  for (const auto& r : ranked.items) {
    const Item* item = find_item(r.id);
    results.push_back({{"rank", r.rank},
                       {"id", r.id},
                       {"distance", r.distance},
                       {"caption", item->caption ? json(*item->caption) : json(nullptr)},
                       {"image_path", item->image_path ? json(*item->image_path) : json(nullptr)}});
  }
  return reply(200, {{"query", query},
                     {"k", k},
                     {"results", results},
                     {"dropped_tokens", ranked.dropped_tokens}});
}

HttpReply MemeService::classify(const std::string& body) const {
  HttpReply failure;
  auto doc = parse_body(body, failure);
  if (!doc) return failure;
  if (!classifier_) return error_reply(409, "no classifier loaded");

  std::vector<double> features;
  json echo_id = nullptr;
  if (auto id = doc->find("id"); id != doc->end()) {
    if (!id->is_string()) return error_reply(400, "field \"id\" must be a string");
    const Item* item = find_item(id->get<std::string>());
    if (item == nullptr) return error_reply(404, "unknown item id");
    if (item->visual == nullptr) return error_reply(404, "item has no feature vector");
    features = *item->visual;
    echo_id = *id;
  } else if (auto f = doc->find("features"); f != doc->end()) {
    if (!f->is_array() ||
        !std::all_of(f->begin(), f->end(), [](const json& v) { return v.is_number(); })) {
      return error_reply(400, "field \"features\" must be an array of numbers");
    }
    features = f->get<std::vector<double>>();
  } else {
    return error_reply(400, "provide \"id\" or \"features\"");
  }
  if (features.size() != classifier_->dimension()) {
    return error_reply(400,
                       "features have dimension " + std::to_string(features.size()) +
                           ", expected dimension " +
                           std::to_string(classifier_->dimension()),
                       {{"expected_dimension", classifier_->dimension()}});
  }
  const ClassScores scores = classifier_->predict_scores(features);
  return reply(200, {{"id", echo_id},
                     {"label", std::string(label_name(argmax_label(scores)))},
                     {"scores", scores_json(scores)}});
}

HttpReply MemeService::annotate(const std::string& body) {
  HttpReply failure;
  auto doc = parse_body(body, failure);
  if (!doc) return failure;
  auto field = [&](const char* key) -> std::optional<std::string> {
    auto it = doc->find(key);
    if (it == doc->end() || !it->is_string() || it->get<std::string>().empty()) {
      return std::nullopt;
    }
    return it->get<std::string>();
  };
  auto item_id = field("item_id");
  auto coder_id = field("coder_id");
  auto label_text = field("label");
  if (!item_id || !coder_id || !label_text) {
    return error_reply(400, "fields \"item_id\", \"coder_id\" and \"label\" are required");
  }
  auto label = parse_label(*label_text);
  if (!label) {
    return error_reply(400, "label must be one of meme, sticker, no_meme");
  }
  if (find_item(*item_id) == nullptr) return error_reply(404, "unknown item id");
  AnnotationRecord record{*item_id, *coder_id, *label, clock_()};
  log_.append(record);
  return reply(201, {{"record", to_json(record)}});
}

HttpReply MemeService::icr_report() const {
  const auto records = log_.snapshot();
  try {
    json body = to_json(icr(records));
    body["records"] = records.size();
    return reply(200, std::move(body));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNoOverlap) throw;
    return reply(200, {{"mean", nullptr},
                       {"pairs", json::array()},
                       {"records", records.size()},
                       {"note", e.what()}});
  }
}

HttpReply MemeService::image(const std::string& id) const {
  const Item* item = find_item(id);
  if (item == nullptr) return error_reply(404, "unknown item id");
  if (!item->image_path) return error_reply(404, "item has no image_path");
  std::ifstream in(*item->image_path, std::ios::binary);
  if (!in) return error_reply(404, "image file not readable");
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return {200, content_type_for(*item->image_path), bytes.str()};
}

void MemeService::bind(httplib::Server& server) {
  auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server.Get("/health", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, health());
  });
  server.Post("/search", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, search(req.body));
  });
  server.Post("/classify", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, classify(req.body));
  });
  server.Post("/annotations", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, annotate(req.body));
  });
  server.Get("/icr", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, icr_report());
  });
  server.Get(R"(/memes/([^/]+)/image)",
             [this, send](const httplib::Request& req, httplib::Response& res) {
               send(res, image(req.matches[1]));
             });
  server.set_exception_handler(
      [](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "internal error";
        try {
          std::rethrow_exception(ep);
        } catch (const std::exception& e) {
          what = e.what();
        } catch (...) {
        }
        json body{{"version", kWireVersion}, {"error", what}};
        res.status = 500;
        res.set_content(body.dump(), "application/json");
      });
}

}  // namespace memesearch
