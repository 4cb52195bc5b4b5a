#include "fairlens/modelio.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <openssl/evp.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "fairlens/error.hpp"
#include "fairlens/text.hpp"

namespace fairlens {

using nlohmann::json;

std::string_view to_string(EndpointKind kind) {
  switch (kind) {
    case EndpointKind::Chat: return "chat";
    case EndpointKind::Embedding: return "embedding";
    case EndpointKind::ImageGen: return "image";
  }
  return "chat";
}

EndpointKind parse_endpoint_kind(std::string_view name) {
  const std::string n = text::to_lower(name);
  if (n == "chat") return EndpointKind::Chat;
  if (n == "embedding" || n == "embeddings") return EndpointKind::Embedding;
  if (n == "image" || n == "imagegen" || n == "images") return EndpointKind::ImageGen;
  throw Error(ErrorCode::ConfigError, "unknown endpoint kind '" + std::string(name) + "'");
}

// --- endpoint and request types ---------------------------------------------

bool ModelEndpoint::is_simulated() const { return base_url.rfind(kSimulatorScheme, 0) == 0; }

void ModelEndpoint::validate() const {
  const bool absolute = is_simulated() || base_url.rfind("http://", 0) == 0 ||
                        base_url.rfind("https://", 0) == 0;
  if (!absolute) throw Error(ErrorCode::ConfigError, "endpoint base_url must be absolute: '" + base_url + "'");
  if (!(timeout_seconds > 0)) throw Error(ErrorCode::ConfigError, "endpoint timeout must be positive");
  if (max_retries < 0) throw Error(ErrorCode::ConfigError, "endpoint max_retries must be >= 0");
  if (max_parallel == 0) throw Error(ErrorCode::ConfigError, "endpoint max_parallel must be >= 1");
}

json ModelEndpoint::to_json() const {
  return {{"kind", std::string(to_string(kind))},
          {"base_url", base_url},
          {"model_name", model_name},
          {"auth_token_env", auth_token_env},
          {"timeout_seconds", timeout_seconds},
          {"max_retries", max_retries},
          {"max_parallel", max_parallel},
          {"backoff_seconds", backoff_seconds}};
}

ModelEndpoint ModelEndpoint::from_json(const json& j) {
  ModelEndpoint e;
  e.kind = parse_endpoint_kind(j.value("kind", std::string("chat")));
  e.base_url = j.at("base_url").get<std::string>();
  e.model_name = j.value("model_name", std::string{});
  e.auth_token_env = j.value("auth_token_env", std::string{});
  e.timeout_seconds = j.value("timeout_seconds", 60.0);
  e.max_retries = j.value("max_retries", 3);
  e.max_parallel = j.value("max_parallel", std::size_t{4});
  e.backoff_seconds = j.value("backoff_seconds", 0.5);
  e.validate();
  return e;
}

void ChatRequest::validate() const {
  if (!(temperature >= 0.0 && temperature <= 2.0)) {
    throw Error(ErrorCode::InvalidInput, "temperature must lie in [0, 2]");
  }
  if (logprobs && logprobs->top_k < 1) throw Error(ErrorCode::InvalidInput, "top_k must be >= 1");
}

json ChatRequest::messages() const {
  json msgs = json::array();
  if (system_prompt) msgs.push_back({{"role", "system"}, {"content", *system_prompt}});
  if (image) {
    msgs.push_back({{"role", "user"},
                    {"content", json::array({{{"type", "text"}, {"text", user_prompt}},
                                             {{"type", "image_url"}, {"image_url", {{"url", image->ref}}}}})}});
  } else {
    msgs.push_back({{"role", "user"}, {"content", user_prompt}});
  }
  return msgs;
}

json ChatRequest::to_wire(std::string_view model) const {
  json body = {{"model", model}, {"messages", messages()}, {"temperature", temperature}};
  if (seed) body["seed"] = *seed;
  if (logprobs) {
    body["logprobs"] = true;
    body["top_logprobs"] = logprobs->top_k;
    body["max_tokens"] = 1;
  }
  return body;
}

json ChatResponse::to_json() const {
  json j = {{"text", text}};
  if (first_token_logprobs) {
    json arr = json::array();
    for (const auto& t : *first_token_logprobs) arr.push_back({{"token", t.token}, {"logprob", t.logprob}});
    j["first_token_logprobs"] = arr;
  }
  return j;
}

ChatResponse ChatResponse::from_json(const json& j) {
  ChatResponse r;
  r.text = j.at("text").get<std::string>();
  if (j.contains("first_token_logprobs")) {
    std::vector<TokenLogprob> lps;
    for (const auto& t : j["first_token_logprobs"]) {
      lps.push_back({t.at("token").get<std::string>(), t.at("logprob").get<double>()});
    }
    r.first_token_logprobs = std::move(lps);
  }
  return r;
}

json ImageRequest::to_wire(std::string_view model) const {
  json body = {{"model", model}, {"prompt", user_prompt}, {"n", 1}, {"seed", seed},
               {"response_format", "b64_json"}};
  if (system_prompt) body["system_prompt"] = *system_prompt;
  return body;
}

json ImageResult::to_json() const {
  json j = {{"image_ref", image_ref}, {"raw_response_digest", raw_response_digest},
            {"ground_truth", ground_truth}};
  if (image_embedding) j["image_embedding"] = *image_embedding;
  return j;
}

ImageResult ImageResult::from_json(const json& j) {
  ImageResult r;
  r.image_ref = j.at("image_ref").get<std::string>();
  r.raw_response_digest = j.value("raw_response_digest", std::string{});
  r.ground_truth = j.value("ground_truth", std::map<std::string, std::string>{});
  if (j.contains("image_embedding")) r.image_embedding = j["image_embedding"].get<Embedding>();
  return r;
}

std::string GenerationRecord::key() const {
  return mode + "|" + prompt_id + "|" + std::to_string(seed);
}

json GenerationRecord::to_json() const {
  json j = {{"prompt_id", prompt_id},   {"seed", seed},
            {"mode", mode},             {"image_ref", image_ref},
            {"raw_response_digest", raw_response_digest},
            {"ground_truth", ground_truth}};
  if (image_embedding) j["image_embedding"] = *image_embedding;
  return j;
}

GenerationRecord GenerationRecord::from_json(const json& j) {
  GenerationRecord r;
  r.prompt_id = j.at("prompt_id").get<std::string>();
  r.seed = j.at("seed").get<std::int64_t>();
  r.mode = j.value("mode", std::string{});
  r.image_ref = j.at("image_ref").get<std::string>();
  r.raw_response_digest = j.value("raw_response_digest", std::string{});
  r.ground_truth = j.value("ground_truth", std::map<std::string, std::string>{});
  if (j.contains("image_embedding")) r.image_embedding = j["image_embedding"].get<Embedding>();
  return r;
}

// --- operations -------------------------------------------------------------

ChatResponse chat(ChatModel& model, const ChatRequest& req) {
  req.validate();
  ChatResponse resp = model.complete(req);
  if (req.logprobs && !resp.first_token_logprobs) {
    throw Error(ErrorCode::LogprobsUnsupported, model.identity() + " returned no logprobs");
  }
  return resp;
}

double l2_norm(const Embedding& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

Embedding normalized(Embedding v) {
  const double n = l2_norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw Error(ErrorCode::EmbeddingShapeError, "cannot normalize a zero or non-finite vector");
  }
  for (double& x : v) x /= n;
  return v;
}

std::vector<Embedding> embed(EmbeddingModel& model, const std::vector<std::string>& texts,
                             const std::optional<std::string>& system_prompt) {
  if (texts.empty()) throw Error(ErrorCode::InvalidInput, "embed called with no texts");
  auto raw = model.embed_raw(texts, system_prompt);
  if (raw.size() != texts.size()) {
    throw Error(ErrorCode::EmbeddingShapeError, "expected " + std::to_string(texts.size()) +
                                                    " embeddings, got " + std::to_string(raw.size()));
  }
  const std::size_t dim = raw.front().size();
  for (auto& v : raw) {
    if (v.empty() || v.size() != dim) {
      throw Error(ErrorCode::EmbeddingShapeError, "embedding dimensions differ within a batch");
    }
    v = normalized(std::move(v));
  }
  return raw;
}

GenerationRecord generate_image(ImageModel& model, const std::optional<std::string>& system_prompt,
                                const std::string& user_prompt, std::int64_t seed) {
  ImageResult result = model.generate({system_prompt, user_prompt, seed});
  GenerationRecord rec;
  rec.seed = seed;
  rec.image_ref = std::move(result.image_ref);
  if (result.image_embedding) rec.image_embedding = normalized(std::move(*result.image_embedding));
  rec.raw_response_digest = std::move(result.raw_response_digest);
  rec.ground_truth = std::move(result.ground_truth);
  return rec;
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::IoError, "SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string base64_encode(std::string_view data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(data.data()),
                                static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view data) {
  std::string clean;
  for (char c : data) {
    if (!std::isspace(static_cast<unsigned char>(c))) clean += c;
  }
  if (clean.size() % 4 != 0) throw Error(ErrorCode::InvalidInput, "malformed base64");
  std::string out(3 * clean.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) throw Error(ErrorCode::InvalidInput, "malformed base64");
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string request_digest(std::string_view model_identity, const json& request) {
  return sha256_hex(std::string(model_identity) + "\n" + request.dump());
}

// --- HTTP -------------------------------------------------------------------

HttpTransport::HttpTransport(ModelEndpoint endpoint) : endpoint_(std::move(endpoint)) {
  endpoint_.validate();
  if (endpoint_.is_simulated()) {
    throw Error(ErrorCode::ConfigError, "simulated endpoint passed to the HTTP transport");
  }
  const auto scheme_end = endpoint_.base_url.find("://");
  const auto path_start = endpoint_.base_url.find('/', scheme_end + 3);
  scheme_host_port_ = endpoint_.base_url.substr(0, path_start);
  base_path_ = path_start == std::string::npos ? "" : endpoint_.base_url.substr(path_start);
  while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
}

json HttpTransport::post(std::string_view path, const json& body) {
  counter_.calls.fetch_add(1);
  httplib::Headers headers;
  if (!endpoint_.auth_token_env.empty()) {
    if (const char* token = std::getenv(endpoint_.auth_token_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }
  const std::string full_path = base_path_ + std::string(path);
  const std::string payload = body.dump();
  const auto secs = static_cast<time_t>(endpoint_.timeout_seconds);
  const auto usecs = static_cast<time_t>((endpoint_.timeout_seconds - static_cast<double>(secs)) * 1e6);

  std::string last_error;
  for (int attempt = 0; attempt <= endpoint_.max_retries; ++attempt) {
    if (attempt > 0) {
      const double delay = endpoint_.backoff_seconds * std::pow(2.0, attempt - 1);
      std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
    counter_.attempts.fetch_add(1);
    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    auto res = client.Post(full_path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw Error(ErrorCode::EndpointError, endpoint_.base_url + std::string(path) + " returned HTTP " +
                                                std::to_string(res->status) + ": " + res->body);
    }
    try {
      return json::parse(res->body);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::EndpointError, "malformed JSON from " + endpoint_.base_url + ": " + e.what());
    }
  }
  throw Error(ErrorCode::EndpointError, endpoint_.base_url + std::string(path) + " failed after " +
                                            std::to_string(endpoint_.max_retries + 1) +
                                            " attempts: " + last_error);
}

namespace {

std::string inline_image(const std::string& ref) {
  if (ref.rfind("http://", 0) == 0 || ref.rfind("https://", 0) == 0 || ref.rfind("data:", 0) == 0) {
    return ref;
  }
  std::ifstream in(ref, std::ios::binary);
  if (!in) return ref;
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return "data:image/png;base64," + base64_encode(bytes);
}

}  // namespace

HttpChatModel::HttpChatModel(ModelEndpoint endpoint) : transport_(std::move(endpoint)) {}

std::string HttpChatModel::identity() const {
  return transport_.endpoint().base_url + "#" + transport_.endpoint().model_name;
}

ChatResponse HttpChatModel::complete(const ChatRequest& request) {
  json body = request.to_wire(transport_.endpoint().model_name);
  if (request.image) {
    auto& content = body["messages"].back()["content"];
    content[1]["image_url"]["url"] = inline_image(request.image->ref);
  }
  const json resp = transport_.post("/chat/completions", body);
  ChatResponse out;
  try {
    const auto& choice = resp.at("choices").at(0);
    const auto& content = choice.at("message").at("content");
    out.text = content.is_null() ? std::string{} : content.get<std::string>();
    if (request.logprobs && choice.contains("logprobs") && !choice["logprobs"].is_null()) {
      const auto& lp = choice["logprobs"];
      if (lp.contains("content") && lp["content"].is_array() && !lp["content"].empty()) {
        const auto& first = lp["content"][0];
        std::vector<TokenLogprob> tokens;
        if (first.contains("top_logprobs")) {
          for (const auto& t : first["top_logprobs"]) {
            tokens.push_back({t.at("token").get<std::string>(), t.at("logprob").get<double>()});
          }
        } else {
          tokens.push_back({first.at("token").get<std::string>(), first.at("logprob").get<double>()});
        }
        out.first_token_logprobs = std::move(tokens);
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::EndpointError, "unexpected chat response shape: " + std::string(e.what()));
  }
  return out;
}

HttpEmbeddingModel::HttpEmbeddingModel(ModelEndpoint endpoint) : transport_(std::move(endpoint)) {}

std::string HttpEmbeddingModel::identity() const {
  return transport_.endpoint().base_url + "#" + transport_.endpoint().model_name;
}

std::vector<Embedding> HttpEmbeddingModel::embed_raw(const std::vector<std::string>& texts,
                                                     const std::optional<std::string>& system_prompt) {
  json input = json::array();
  for (const auto& t : texts) input.push_back(system_prompt ? *system_prompt + "\n" + t : t);
  const json resp = transport_.post("/embeddings", {{"model", transport_.endpoint().model_name}, {"input", input}});
  std::vector<Embedding> out(texts.size());
  try {
    const auto& data = resp.at("data");
    if (data.size() != texts.size()) {
      throw Error(ErrorCode::EmbeddingShapeError, "embedding count mismatch");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::size_t index = data[i].value("index", i);
      if (index >= out.size()) throw Error(ErrorCode::EmbeddingShapeError, "embedding index out of range");
      out[index] = data[i].at("embedding").get<Embedding>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::EndpointError, "unexpected embeddings response shape: " + std::string(e.what()));
  }
  return out;
}

HttpImageModel::HttpImageModel(ModelEndpoint endpoint, std::filesystem::path image_dir)
    : transport_(std::move(endpoint)), image_dir_(std::move(image_dir)) {}

std::string HttpImageModel::identity() const {
  return transport_.endpoint().base_url + "#" + transport_.endpoint().model_name;
}

ImageResult HttpImageModel::generate(const ImageRequest& request) {
  const json resp = transport_.post("/images/generations", request.to_wire(transport_.endpoint().model_name));
  ImageResult out;
  out.raw_response_digest = sha256_hex(resp.dump());
  try {
    const auto& item = resp.at("data").at(0);
    if (item.contains("b64_json") && item["b64_json"].is_string()) {
      std::filesystem::create_directories(image_dir_);
      const auto path = image_dir_ / (out.raw_response_digest.substr(0, 32) + ".png");
      std::ofstream file(path, std::ios::binary);
      if (!file) throw Error(ErrorCode::IoError, "cannot write " + path.string());
      const std::string bytes = base64_decode(item["b64_json"].get<std::string>());
      file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      out.image_ref = path.string();
    } else {
      out.image_ref = item.at("url").get<std::string>();
    }
    if (item.contains("embedding")) out.image_embedding = item["embedding"].get<Embedding>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::EndpointError, "unexpected image response shape: " + std::string(e.what()));
  }
  return out;
}

// --- profiles -----------------------------------------------------------------

std::string_view to_string(OutputFormat f) {
  return f == OutputFormat::TaggedBlock ? "tagged" : "last-line";
}

OutputFormat parse_output_format(std::string_view name) {
  const std::string n = text::to_lower(name);
  if (n == "tagged" || n == "tagged-block" || n == "taggedblock") return OutputFormat::TaggedBlock;
  if (n == "last-line" || n == "lastline" || n == "last-line-marker" || n == "lastlinemarker") {
    return OutputFormat::LastLineMarker;
  }
  throw Error(ErrorCode::ConfigError, "unknown output format '" + std::string(name) + "'");
}

namespace {

std::string render_qwen(const std::optional<std::string>& system_prompt, std::string_view user_prompt) {
  std::string out;
  if (system_prompt) out += "<|im_start|>system\n" + *system_prompt + "<|im_end|>\n";
  out += "<|im_start|>user\n" + std::string(user_prompt) + "<|im_end|>\n<|im_start|>assistant\n";
  return out;
}

// Gemma has no system role; the instruction is prefixed to the user turn.
std::string render_gemma(const std::optional<std::string>& system_prompt, std::string_view user_prompt) {
  std::string turn = system_prompt ? *system_prompt + " " + std::string(user_prompt) : std::string(user_prompt);
  return "<start_of_turn>user\n" + turn + "<end_of_turn>\n<start_of_turn>model\n";
}

const std::vector<ModelProfile>& profiles() {
  static const std::vector<ModelProfile> all = {
      {"qwen-image",
       "Describe the image by detailing the color, shape, size, texture, quantity, text, and "
       "spatial relationships of the objects and background:",
       OutputFormat::TaggedBlock, &render_qwen},
      {"sana",
       "Given a user prompt, generate an \"Enhanced prompt\" that provides detailed visual "
       "descriptions suitable for image generation. Evaluate the level of detail in the user "
       "prompt.\n\n"
       "If the prompt is simple, focus on adding specifics about colors, shapes, sizes, textures, "
       "and spatial relationships to create vivid and concrete scenes.\n\n"
       "If the prompt is already detailed, refine and enhance the existing details slightly "
       "without overcomplicating.\n\n"
       "Here are examples of how to transform or refine prompts:\n\n"
       "User Prompt: A cat sleeping → A small, fluffy white cat curled up in a round shape, "
       "sleeping peacefully on a warm sunny windowsill, surrounded by pots of blooming red "
       "flowers.\n\n"
       "User Prompt: A busy city street → A bustling city street scene at dusk, featuring "
       "glowing street lamps, a diverse crowd of people in colorful clothing, and a double-decker "
       "bus passing by towering glass skyscrapers.\n\n"
       "Please generate only the enhanced description for the prompt below and avoid including "
       "any additional commentary or evaluations.\n\n"
       "User Prompt:",
       OutputFormat::LastLineMarker, &render_gemma},
  };
  return all;
}

}  // namespace

const ModelProfile& profile(std::string_view name) {
  for (const auto& p : profiles()) {
    if (p.name == name) return p;
  }
  throw Error(ErrorCode::ConfigError, "unknown model profile '" + std::string(name) + "'");
}

std::vector<std::string> profile_names() {
  std::vector<std::string> names;
  for (const auto& p : profiles()) names.push_back(p.name);
  return names;
}

}  // namespace fairlens
