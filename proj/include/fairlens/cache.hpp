#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>

#include <json.hpp>

#include "fairlens/modelio.hpp"

namespace fairlens {

// Content-addressed store of JSON records, one file per key. With an empty
// directory it lives only in memory. Safe for concurrent readers and writers.
class RecordCache {
 public:
  RecordCache() = default;
  explicit RecordCache(std::filesystem::path dir);

  std::optional<nlohmann::json> get(const std::string& key) const;
  void put(const std::string& key, const nlohmann::json& value);
  std::size_t size() const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::shared_mutex mutex_;
  mutable std::map<std::string, nlohmann::json> memory_;
};

// Writes `content` to `path` through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

class CachedChatModel final : public ChatModel {
 public:
  // `scope` joins every cache key, isolating e.g. different prompt modes.
  CachedChatModel(ChatModel& inner, RecordCache& cache, std::string scope = {})
      : inner_(inner), cache_(cache), scope_(std::move(scope)) {}
  ChatResponse complete(const ChatRequest& request) override;
  std::string identity() const override { return inner_.identity(); }

 private:
  ChatModel& inner_;
  RecordCache& cache_;
  std::string scope_;
};

class CachedEmbeddingModel final : public EmbeddingModel {
 public:
  CachedEmbeddingModel(EmbeddingModel& inner, RecordCache& cache, std::string scope = {})
      : inner_(inner), cache_(cache), scope_(std::move(scope)) {}
  // Caches per text, so only missing texts reach the inner model.
  std::vector<Embedding> embed_raw(const std::vector<std::string>& texts,
                                   const std::optional<std::string>& system_prompt) override;
  std::string identity() const override { return inner_.identity(); }

 private:
  EmbeddingModel& inner_;
  RecordCache& cache_;
  std::string scope_;
};

class CachedImageModel final : public ImageModel {
 public:
  CachedImageModel(ImageModel& inner, RecordCache& cache, std::string scope = {})
      : inner_(inner), cache_(cache), scope_(std::move(scope)) {}
  ImageResult generate(const ImageRequest& request) override;
  std::string identity() const override { return inner_.identity(); }

 private:
  ImageModel& inner_;
  RecordCache& cache_;
  std::string scope_;
};

}  // namespace fairlens
