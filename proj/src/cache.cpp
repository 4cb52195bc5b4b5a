#include "fairlens/cache.hpp"

#include <fstream>
#include <sstream>
#include <thread>

#include "fairlens/error.hpp"

namespace fairlens {

using nlohmann::json;

namespace {

std::filesystem::path record_path(const std::filesystem::path& dir, const std::string& key) {
  return dir / key.substr(0, 2) / (key + ".json");
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  static std::atomic<std::uint64_t> counter{0};
  auto tmp = path;
  tmp += ".tmp" + std::to_string(counter.fetch_add(1)) + "-" +
         std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::IoError, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error(ErrorCode::IoError, "cannot rename into " + path.string() + ": " + ec.message());
  }
}

RecordCache::RecordCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (!dir_.empty()) std::filesystem::create_directories(dir_);
}

std::optional<json> RecordCache::get(const std::string& key) const {
  {
    std::shared_lock lock(mutex_);
    if (auto it = memory_.find(key); it != memory_.end()) return it->second;
  }
  if (dir_.empty()) return std::nullopt;
  std::ifstream in(record_path(dir_, key), std::ios::binary);
  if (!in) return std::nullopt;
  std::stringstream buf;
  buf << in.rdbuf();
  json value;
  try {
    value = json::parse(buf.str());
  } catch (const json::exception&) {
    return std::nullopt;  // a torn or foreign file is treated as a miss
  }
  std::unique_lock lock(mutex_);
  memory_.emplace(key, value);
  return value;
}

void RecordCache::put(const std::string& key, const json& value) {
  if (!dir_.empty()) write_file_atomic(record_path(dir_, key), value.dump());
  std::unique_lock lock(mutex_);
  memory_[key] = value;
}

std::size_t RecordCache::size() const {
  if (dir_.empty()) {
    std::shared_lock lock(mutex_);
    return memory_.size();
  }
  std::size_t n = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir_)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") ++n;
  }
  return n;
}

ChatResponse CachedChatModel::complete(const ChatRequest& request) {
  json wire = request.to_wire(inner_.identity());
  const std::string key = request_digest(inner_.identity(), {{"scope", scope_}, {"request", wire}});
  if (auto hit = cache_.get(key)) {
    ChatResponse cached = ChatResponse::from_json(*hit);
    // A cached plain-text answer cannot satisfy a later logprob request.
    if (!request.logprobs || cached.first_token_logprobs) return cached;
  }
  ChatResponse resp = inner_.complete(request);
  cache_.put(key, resp.to_json());
  return resp;
}

std::vector<Embedding> CachedEmbeddingModel::embed_raw(const std::vector<std::string>& texts,
                                                       const std::optional<std::string>& system_prompt) {
  std::vector<Embedding> out(texts.size());
  std::vector<std::string> keys(texts.size());
  std::vector<std::string> missing;
  std::vector<std::size_t> missing_index;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    json req = {{"scope", scope_}, {"text", texts[i]}, {"system_prompt", nullptr}};
    if (system_prompt) req["system_prompt"] = *system_prompt;
    keys[i] = request_digest(inner_.identity(), req);
    if (auto hit = cache_.get(keys[i])) {
      out[i] = hit->get<Embedding>();
    } else {
      missing.push_back(texts[i]);
      missing_index.push_back(i);
    }
  }
  if (!missing.empty()) {
    auto fresh = inner_.embed_raw(missing, system_prompt);
    if (fresh.size() != missing.size()) {
      throw Error(ErrorCode::EmbeddingShapeError, "embedding count mismatch from " + inner_.identity());
    }
    for (std::size_t j = 0; j < missing.size(); ++j) {
      cache_.put(keys[missing_index[j]], fresh[j]);
      out[missing_index[j]] = std::move(fresh[j]);
    }
  }
  return out;
}

ImageResult CachedImageModel::generate(const ImageRequest& request) {
  const std::string key =
      request_digest(inner_.identity(), {{"scope", scope_}, {"request", request.to_wire(inner_.identity())}});
  if (auto hit = cache_.get(key)) return ImageResult::from_json(*hit);
  ImageResult result = inner_.generate(request);
  cache_.put(key, result.to_json());
  return result;
}

}  // namespace fairlens
