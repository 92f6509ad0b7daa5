#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "memesearch/classifiers.hpp"
#include "memesearch/corpus.hpp"
#include "memesearch/embedding.hpp"
#include "memesearch/metrics.hpp"
#include "memesearch/text.hpp"

namespace httplib {
class Server;
}

namespace memesearch {

inline constexpr int kWireVersion = 1;

/// Append-only JSON Lines log of annotation records. Every append is
/// flushed and fsync'ed before it becomes visible to readers.
class AnnotationLog {
 public:
  /// Loads existing records; creates the file if absent.
  explicit AnnotationLog(std::filesystem::path path);

  void append(const AnnotationRecord& record);
  std::vector<AnnotationRecord> snapshot() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::vector<AnnotationRecord> records_;
};

nlohmann::json to_json(const AnnotationRecord& record);
AnnotationRecord annotation_from_json(const nlohmann::json& j);

struct HttpReply {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Request handlers over immutable model state plus the annotation log.
/// Handlers are callable concurrently; only annotation appends serialize.
class MemeService {
 public:
  using Clock = std::function<std::int64_t()>;  // milliseconds since epoch

  struct Item {
    std::string id;
    std::optional<std::string> caption;
    std::optional<std::string> image_path;
    const std::vector<double>* visual = nullptr;  // into visual_
  };

  MemeService(EmbeddingModel model, std::optional<TrainedClassifier> classifier,
              std::vector<ManifestEntry> manifest, FeatureTable visual,
              WordVectorTable words, std::filesystem::path annotation_log,
              Clock clock = {});

  MemeService(const MemeService&) = delete;
  MemeService& operator=(const MemeService&) = delete;

  HttpReply health() const;
  HttpReply search(const std::string& body) const;
  HttpReply classify(const std::string& body) const;
  HttpReply annotate(const std::string& body);
  HttpReply icr_report() const;
  HttpReply image(const std::string& id) const;

  /// Registers GET /health, POST /search, POST /classify, POST /annotations,
  /// GET /icr and GET /memes/{id}/image.
  void bind(httplib::Server& server);

  const std::vector<Item>& items() const { return items_; }

 private:
  const Item* find_item(const std::string& id) const;

  EmbeddingModel model_;
  std::optional<TrainedClassifier> classifier_;
  std::vector<ManifestEntry> manifest_;
  FeatureTable visual_;
  WordVectorTable words_;
  std::vector<Item> items_;
  std::map<std::string, std::size_t, std::less<>> item_index_;
  std::vector<FeatureVector> searchable_;
  AnnotationLog log_;
  Clock clock_;
  std::chrono::steady_clock::time_point started_;
};

}  // namespace memesearch
