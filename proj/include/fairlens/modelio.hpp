#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace fairlens {

using Embedding = std::vector<double>;

enum class EndpointKind { Chat, Embedding, ImageGen };

std::string_view to_string(EndpointKind kind);
EndpointKind parse_endpoint_kind(std::string_view name);

// Endpoints whose base_url uses this scheme are served by the in-process
// simulator instead of HTTP.
inline constexpr std::string_view kSimulatorScheme = "sim://";

struct ModelEndpoint {
  EndpointKind kind = EndpointKind::Chat;
  std::string base_url;
  std::string model_name;
  std::string auth_token_env;
  double timeout_seconds = 60.0;
  int max_retries = 3;
  std::size_t max_parallel = 4;
  double backoff_seconds = 0.5;

  bool is_simulated() const;
  void validate() const;

  nlohmann::json to_json() const;
  static ModelEndpoint from_json(const nlohmann::json& j);
};

struct LogprobOptions {
  int top_k = 5;
};

// An image handed to a vision-capable chat model. `metadata` carries the
// simulator's ground-truth classes and is never sent over the wire.
struct ImageAttachment {
  std::string ref;
  std::map<std::string, std::string> metadata;
};

struct ChatRequest {
  std::optional<std::string> system_prompt;  // absent: no system message at all
  std::string user_prompt;
  double temperature = 0.7;
  std::optional<std::int64_t> seed;
  std::optional<LogprobOptions> logprobs;
  std::optional<ImageAttachment> image;

  void validate() const;
  nlohmann::json messages() const;
  nlohmann::json to_wire(std::string_view model) const;
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;
};

struct ChatResponse {
  std::string text;
  std::optional<std::vector<TokenLogprob>> first_token_logprobs;

  nlohmann::json to_json() const;
  static ChatResponse from_json(const nlohmann::json& j);
};

struct ImageRequest {
  std::optional<std::string> system_prompt;
  std::string user_prompt;
  std::int64_t seed = 0;

  nlohmann::json to_wire(std::string_view model) const;
};

struct ImageResult {
  std::string image_ref;
  std::optional<Embedding> image_embedding;
  std::string raw_response_digest;
  std::map<std::string, std::string> ground_truth;  // simulator only

  nlohmann::json to_json() const;
  static ImageResult from_json(const nlohmann::json& j);
};

struct GenerationRecord {
  std::string prompt_id;
  std::int64_t seed = 0;
  std::string mode;
  std::string image_ref;
  std::optional<Embedding> image_embedding;
  std::string raw_response_digest;
  std::map<std::string, std::string> ground_truth;

  std::string key() const;
  nlohmann::json to_json() const;
  static GenerationRecord from_json(const nlohmann::json& j);
};

class ChatModel {
 public:
  virtual ~ChatModel() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
  virtual std::string identity() const = 0;
};

class EmbeddingModel {
 public:
  virtual ~EmbeddingModel() = default;
  // Raw vectors, one per text. When `system_prompt` is set the backend encodes
  // the concatenation [system_prompt; text].
  virtual std::vector<Embedding> embed_raw(const std::vector<std::string>& texts,
                                           const std::optional<std::string>& system_prompt) = 0;
  virtual std::string identity() const = 0;
};

class ImageModel {
 public:
  virtual ~ImageModel() = default;
  virtual ImageResult generate(const ImageRequest& request) = 0;
  virtual std::string identity() const = 0;
};

// Sends `req` and enforces the logprob contract: when logprobs were requested
// and the backend returned none, throws LogprobsUnsupported.
ChatResponse chat(ChatModel& model, const ChatRequest& req);

// L2-normalized embeddings; throws EmbeddingShapeError on ragged batches.
std::vector<Embedding> embed(EmbeddingModel& model, const std::vector<std::string>& texts,
                             const std::optional<std::string>& system_prompt = std::nullopt);

GenerationRecord generate_image(ImageModel& model, const std::optional<std::string>& system_prompt,
                                const std::string& user_prompt, std::int64_t seed);

Embedding normalized(Embedding v);
double l2_norm(const Embedding& v);

std::string sha256_hex(std::string_view data);
std::string base64_encode(std::string_view data);
std::string base64_decode(std::string_view data);

// Digest used as the cache key of a request.
std::string request_digest(std::string_view model_identity, const nlohmann::json& request);

// --- HTTP (OpenAI-compatible) ------------------------------------------------

struct CallCounter {
  std::atomic<std::uint64_t> calls{0};
  std::atomic<std::uint64_t> attempts{0};
};

class HttpTransport {
 public:
  explicit HttpTransport(ModelEndpoint endpoint);

  // POST `body` to base_url + path, retrying transport errors, 429 and 5xx up
  // to max_retries times with exponential backoff.
  nlohmann::json post(std::string_view path, const nlohmann::json& body);

  const ModelEndpoint& endpoint() const { return endpoint_; }
  std::uint64_t calls() const { return counter_.calls.load(); }
  std::uint64_t attempts() const { return counter_.attempts.load(); }

 private:
  ModelEndpoint endpoint_;
  std::string scheme_host_port_;
  std::string base_path_;
  CallCounter counter_;
};

class HttpChatModel final : public ChatModel {
 public:
  explicit HttpChatModel(ModelEndpoint endpoint);
  ChatResponse complete(const ChatRequest& request) override;
  std::string identity() const override;
  const HttpTransport& transport() const { return transport_; }

 private:
  HttpTransport transport_;
};

class HttpEmbeddingModel final : public EmbeddingModel {
 public:
  explicit HttpEmbeddingModel(ModelEndpoint endpoint);
  std::vector<Embedding> embed_raw(const std::vector<std::string>& texts,
                                   const std::optional<std::string>& system_prompt) override;
  std::string identity() const override;

 private:
  HttpTransport transport_;
};

class HttpImageModel final : public ImageModel {
 public:
  // Images returned inline are written under `image_dir`.
  HttpImageModel(ModelEndpoint endpoint, std::filesystem::path image_dir);
  ImageResult generate(const ImageRequest& request) override;
  std::string identity() const override;

 private:
  HttpTransport transport_;
  std::filesystem::path image_dir_;
};

// --- default system prompts and chat wire templates --------------------------

enum class OutputFormat { TaggedBlock, LastLineMarker };

std::string_view to_string(OutputFormat f);
OutputFormat parse_output_format(std::string_view name);

struct ModelProfile {
  std::string name;
  std::string default_system_prompt;
  OutputFormat meta_format = OutputFormat::TaggedBlock;
  // Renders the token stream the text encoder sees.
  std::string (*render)(const std::optional<std::string>& system_prompt,
                        std::string_view user_prompt) = nullptr;
};

const ModelProfile& profile(std::string_view name);  // "qwen-image" or "sana"
std::vector<std::string> profile_names();

}  // namespace fairlens
