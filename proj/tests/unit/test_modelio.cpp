#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "fairlens/cache.hpp"
#include "fairlens/error.hpp"
#include "fairlens/modelio.hpp"
#include "fairlens/simulator.hpp"
#include "support.hpp"

using namespace fairlens;
using nlohmann::json;

namespace {

// Minimal OpenAI-compatible server. `fail_next` makes the next N requests
// answer with `fail_status` before behaving normally.
class FakeOpenAI {
 public:
  FakeOpenAI() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      if (!admit(req, res)) return;
      const json body = json::parse(req.body);
      json message = {{"role", "assistant"}, {"content", "echo:" + last_user_text(body)}};
      json choice = {{"index", 0}, {"message", message}};
      if (body.value("logprobs", false) && logprobs_enabled) {
        json top = json::array({{{"token", "A"}, {"logprob", std::log(0.6)}},
                                {{"token", "B"}, {"logprob", std::log(0.4)}}});
        choice["logprobs"] = {{"content", json::array({{{"token", "A"}, {"logprob", std::log(0.6)},
                                                         {"top_logprobs", top}}})}};
      }
      res.set_content(json({{"choices", json::array({choice})}}).dump(), "application/json");
    });
    server_.Post("/v1/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
      if (!admit(req, res)) return;
      const json body = json::parse(req.body);
      json data = json::array();
      std::size_t i = 0;
      for (const auto& input : body.at("input")) {
        const auto len = static_cast<double>(input.get<std::string>().size());
        json emb = ragged && i == 1 ? json::array({3.0}) : json::array({3.0, 4.0 + len});
        data.push_back({{"index", i++}, {"embedding", emb}});
      }
      res.set_content(json({{"data", data}}).dump(), "application/json");
    });
    server_.Post("/v1/images/generations", [this](const httplib::Request& req, httplib::Response& res) {
      if (!admit(req, res)) return;
      json item = {{"b64_json", base64_encode("PNGDATA")}};
      res.set_content(json({{"data", json::array({item})}}).dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~FakeOpenAI() {
    server_.stop();
    thread_.join();
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

  ModelEndpoint endpoint(EndpointKind kind) const {
    ModelEndpoint e;
    e.kind = kind;
    e.base_url = base_url();
    e.model_name = "fake-model";
    e.auth_token_env = "FAIRLENS_TEST_TOKEN";
    e.timeout_seconds = 5;
    e.max_retries = 2;
    e.backoff_seconds = 0.001;
    return e;
  }

  std::vector<json> bodies() {
    std::lock_guard lock(mutex_);
    return bodies_;
  }
  std::vector<std::string> auth_headers() {
    std::lock_guard lock(mutex_);
    return auth_;
  }
  int hits() {
    std::lock_guard lock(mutex_);
    return hits_;
  }

  int fail_next = 0;
  int fail_status = 503;
  bool logprobs_enabled = true;
  bool ragged = false;

 private:
  bool admit(const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mutex_);
    ++hits_;
    auth_.push_back(req.get_header_value("Authorization"));
    bodies_.push_back(json::parse(req.body));
    if (fail_next > 0) {
      --fail_next;
      res.status = fail_status;
      res.set_content("{\"error\":\"injected\"}", "application/json");
      return false;
    }
    return true;
  }

  static std::string last_user_text(const json& body) {
    const auto& content = body.at("messages").back().at("content");
    if (content.is_string()) return content.get<std::string>();
    return content.at(0).at("text").get<std::string>();
  }

  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::mutex mutex_;
  std::vector<json> bodies_;
  std::vector<std::string> auth_;
  int hits_ = 0;
};

class ModelIoHttp : public ::testing::Test {
 protected:
  void SetUp() override { ::setenv("FAIRLENS_TEST_TOKEN", "sk-test-123", 1); }
  FakeOpenAI server;
};

}  // namespace

TEST(ChatRequestWire, NoSystemMessageWhenAbsent) {
  ChatRequest r;
  r.user_prompt = "hello";
  EXPECT_EQ(r.messages().size(), 1u);
  EXPECT_EQ(r.messages()[0]["role"], "user");
  r.system_prompt = "";
  ASSERT_EQ(r.messages().size(), 2u);
  EXPECT_EQ(r.messages()[0]["role"], "system");
}

TEST(ChatRequestWire, LogprobFields) {
  ChatRequest r;
  r.user_prompt = "q";
  r.logprobs = LogprobOptions{2};
  r.seed = 9;
  const json w = r.to_wire("m");
  EXPECT_EQ(w["top_logprobs"], 2);
  EXPECT_EQ(w["max_tokens"], 1);
  EXPECT_EQ(w["logprobs"], true);
  EXPECT_EQ(w["seed"], 9);
}

TEST(ChatRequestWire, TemperatureRange) {
  ChatRequest r;
  r.temperature = 2.5;
  EXPECT_THROW(r.validate(), Error);
  r.temperature = 2.0;
  EXPECT_NO_THROW(r.validate());
}

TEST(Endpoint, Validation) {
  ModelEndpoint e;
  e.base_url = "localhost:8000";
  EXPECT_THROW(e.validate(), Error);
  e.base_url = "http://localhost:8000/v1";
  EXPECT_NO_THROW(e.validate());
  e.timeout_seconds = 0;
  EXPECT_THROW(e.validate(), Error);
  e.timeout_seconds = 1;
  e.max_retries = -1;
  EXPECT_THROW(e.validate(), Error);
}

TEST(Endpoint, JsonRoundTrip) {
  ModelEndpoint e;
  e.kind = EndpointKind::Embedding;
  e.base_url = "https://api.example.com/v1";
  e.model_name = "emb";
  e.auth_token_env = "KEY";
  EXPECT_EQ(ModelEndpoint::from_json(e.to_json()).to_json(), e.to_json());
}

TEST(Digest, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Digest, Base64RoundTrip) {
  EXPECT_EQ(base64_encode("Man"), "TWFu");
  EXPECT_EQ(base64_encode("Ma"), "TWE=");
  fairlens::testing::Gen gen(11);
  for (int i = 0; i < 50; ++i) {
    std::string s(gen.index(40), '\0');
    for (auto& c : s) c = static_cast<char>(gen.index(256));
    EXPECT_EQ(base64_decode(base64_encode(s)), s);
  }
}

TEST(Digest, RequestDigestDependsOnIdentity) {
  const json req = {{"a", 1}};
  EXPECT_EQ(request_digest("m1", req), request_digest("m1", req));
  EXPECT_NE(request_digest("m1", req), request_digest("m2", req));
  EXPECT_EQ(request_digest("m1", req).size(), 64u);
}

TEST(Simulated, EchoesPing) {
  SimulatedModel sim(SimulatedModelSpec{}, AttributeTaxonomy::default_taxonomy());
  ChatRequest r;
  r.user_prompt = "ping";
  EXPECT_EQ(chat(sim, r).text, "ping");
}

TEST(Simulated, FixedLogitsTopTwo) {
  SimulatedModelSpec spec;
  spec.token_probe.mode = TokenProbeProfile::Mode::Fixed;
  spec.token_probe.p_a = 0.6;
  SimulatedModel sim(spec, AttributeTaxonomy::default_taxonomy());
  ChatRequest r;
  r.user_prompt = "Which?\nA. x\nB. y\nAnswer with A or B only.";
  r.logprobs = LogprobOptions{2};
  const auto resp = chat(sim, r);
  ASSERT_TRUE(resp.first_token_logprobs);
  ASSERT_EQ(resp.first_token_logprobs->size(), 2u);
  EXPECT_EQ((*resp.first_token_logprobs)[0].token, "A");
  EXPECT_NEAR((*resp.first_token_logprobs)[0].logprob, std::log(0.6), 1e-12);
  EXPECT_EQ((*resp.first_token_logprobs)[1].token, "B");
  EXPECT_NEAR((*resp.first_token_logprobs)[1].logprob, std::log(0.4), 1e-12);
}

TEST(Simulated, MissingLogprobsRaise) {
  SimulatedModelSpec spec;
  spec.token_probe.supports_logprobs = false;
  SimulatedModel sim(spec, AttributeTaxonomy::default_taxonomy());
  ChatRequest r;
  r.user_prompt = "q\nA. a man\nB. a woman";
  r.logprobs = LogprobOptions{};
  try {
    chat(sim, r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LogprobsUnsupported);
  }
}

TEST(Simulated, EmbeddingsDeterministicUnitAndArity) {
  SimulatedModel sim(SimulatedModelSpec{}, AttributeTaxonomy::default_taxonomy());
  const auto a = embed(sim, {"a nurse", "a doctor", "a nurse"});
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a[0], a[2]);
  for (const auto& v : a) EXPECT_NEAR(l2_norm(v), 1.0, 1e-6);
  EXPECT_EQ(embed(sim, {"a nurse"})[0], a[0]);
}

TEST(Embed, RaggedBatchIsShapeError) {
  class Ragged final : public EmbeddingModel {
   public:
    std::vector<Embedding> embed_raw(const std::vector<std::string>&, const std::optional<std::string>&) override {
      return {{1.0, 0.0}, {1.0}};
    }
    std::string identity() const override { return "ragged"; }
  } ragged;
  try {
    embed(ragged, {"a", "b"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmbeddingShapeError);
  }
}

TEST_F(ModelIoHttp, ChatSendsBearerAndParsesLogprobs) {
  HttpChatModel model(server.endpoint(EndpointKind::Chat));
  ChatRequest r;
  r.user_prompt = "ping";
  r.logprobs = LogprobOptions{2};
  const auto resp = chat(model, r);
  EXPECT_EQ(resp.text, "echo:ping");
  ASSERT_TRUE(resp.first_token_logprobs);
  EXPECT_NEAR(resp.first_token_logprobs->at(1).logprob, std::log(0.4), 1e-12);
  ASSERT_EQ(server.auth_headers().size(), 1u);
  EXPECT_EQ(server.auth_headers()[0], "Bearer sk-test-123");
  const json body = server.bodies()[0];
  EXPECT_EQ(body["model"], "fake-model");
  EXPECT_EQ(body["messages"].size(), 1u);
}

TEST_F(ModelIoHttp, MissingLogprobsOverHttp) {
  server.logprobs_enabled = false;
  HttpChatModel model(server.endpoint(EndpointKind::Chat));
  ChatRequest r;
  r.user_prompt = "q";
  r.logprobs = LogprobOptions{};
  try {
    chat(model, r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LogprobsUnsupported);
  }
}

TEST_F(ModelIoHttp, RetriesServerErrorsThenSucceeds) {
  server.fail_next = 2;
  server.fail_status = 503;
  HttpChatModel model(server.endpoint(EndpointKind::Chat));
  ChatRequest r;
  r.user_prompt = "x";
  EXPECT_EQ(model.complete(r).text, "echo:x");
  EXPECT_EQ(server.hits(), 3);
  EXPECT_EQ(model.transport().attempts(), 3u);
}

TEST_F(ModelIoHttp, RetriesRateLimit) {
  server.fail_next = 1;
  server.fail_status = 429;
  HttpChatModel model(server.endpoint(EndpointKind::Chat));
  ChatRequest r;
  r.user_prompt = "x";
  EXPECT_EQ(model.complete(r).text, "echo:x");
  EXPECT_EQ(server.hits(), 2);
}

TEST_F(ModelIoHttp, GivesUpAfterRetries) {
  server.fail_next = 10;
  HttpChatModel model(server.endpoint(EndpointKind::Chat));
  ChatRequest r;
  r.user_prompt = "x";
  try {
    model.complete(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EndpointError);
  }
  EXPECT_EQ(server.hits(), 3);
}

TEST_F(ModelIoHttp, ClientErrorsAreNotRetried) {
  server.fail_next = 1;
  server.fail_status = 401;
  HttpChatModel model(server.endpoint(EndpointKind::Chat));
  ChatRequest r;
  r.user_prompt = "x";
  EXPECT_THROW(model.complete(r), Error);
  EXPECT_EQ(server.hits(), 1);
}

TEST_F(ModelIoHttp, UnreachableHostIsEndpointError) {
  ModelEndpoint e = server.endpoint(EndpointKind::Chat);
  e.base_url = "http://127.0.0.1:1/v1";
  e.max_retries = 1;
  HttpChatModel model(e);
  ChatRequest r;
  r.user_prompt = "x";
  try {
    model.complete(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EndpointError);
  }
}

TEST_F(ModelIoHttp, EmbeddingsNormalizedAndPrefixed) {
  HttpEmbeddingModel model(server.endpoint(EndpointKind::Embedding));
  const auto out = embed(model, {"", "ab"}, std::string("sys"));
  ASSERT_EQ(out.size(), 2u);
  for (const auto& v : out) EXPECT_NEAR(l2_norm(v), 1.0, 1e-9);
  EXPECT_EQ(server.bodies()[0]["input"][1], "sys\nab");
}

TEST_F(ModelIoHttp, RaggedEmbeddingsRejected) {
  server.ragged = true;
  HttpEmbeddingModel model(server.endpoint(EndpointKind::Embedding));
  try {
    embed(model, {"a", "b"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmbeddingShapeError);
  }
}

TEST_F(ModelIoHttp, ImageWrittenToDisk) {
  fairlens::testing::TempDir dir("img");
  HttpImageModel model(server.endpoint(EndpointKind::ImageGen), dir.path());
  const auto rec = generate_image(model, std::nullopt, "a chef", 3);
  std::ifstream in(rec.image_ref, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(bytes, "PNGDATA");
  EXPECT_EQ(rec.seed, 3);
  const json body = server.bodies()[0];
  EXPECT_FALSE(body.contains("system_prompt"));
  EXPECT_EQ(body["seed"], 3);
}

TEST_F(ModelIoHttp, CacheAvoidsSecondRequest) {
  fairlens::testing::TempDir dir("cache");
  HttpChatModel inner(server.endpoint(EndpointKind::Chat));
  RecordCache cache(dir.path());
  CachedChatModel model(inner, cache, "judge");
  ChatRequest r;
  r.user_prompt = "hello";
  r.temperature = 0.0;
  EXPECT_EQ(model.complete(r).text, "echo:hello");
  EXPECT_EQ(model.complete(r).text, "echo:hello");
  EXPECT_EQ(server.hits(), 1);
  // A fresh cache object over the same directory still hits disk.
  RecordCache reopened(dir.path());
  CachedChatModel again(inner, reopened, "judge");
  EXPECT_EQ(again.complete(r).text, "echo:hello");
  EXPECT_EQ(server.hits(), 1);
  // A different scope is a different key.
  CachedChatModel other(inner, reopened, "meta");
  other.complete(r);
  EXPECT_EQ(server.hits(), 2);
}

TEST(Cache, AtomicWriteReplacesContent) {
  fairlens::testing::TempDir dir("atomic");
  const auto p = dir.path() / "sub" / "f.txt";
  write_file_atomic(p, "one");
  write_file_atomic(p, "two");
  std::ifstream in(p);
  std::string s;
  std::getline(in, s);
  EXPECT_EQ(s, "two");
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(p.parent_path())) {
    (void)e;
    ++files;
  }
  EXPECT_EQ(files, 1u);
}

TEST(Cache, EmbeddingsCachedPerText) {
  SimulatedModel sim(SimulatedModelSpec{}, AttributeTaxonomy::default_taxonomy());
  RecordCache cache;
  CachedEmbeddingModel cached(sim, cache);
  const auto first = embed(cached, {"a", "b"});
  const auto calls = sim.embed_calls();
  const auto second = embed(cached, {"b", "c"});
  EXPECT_EQ(second[0], first[1]);
  EXPECT_EQ(sim.embed_calls(), calls + 1);
}

TEST(Profiles, KnownNames) {
  EXPECT_EQ(profile_names().size(), 2u);
  EXPECT_EQ(profile("sana").meta_format, OutputFormat::LastLineMarker);
  EXPECT_EQ(profile("qwen-image").meta_format, OutputFormat::TaggedBlock);
  EXPECT_THROW(profile("nope"), Error);
  const auto rendered = profile("qwen-image").render(std::nullopt, "a chef");
  EXPECT_NE(rendered.find("a chef"), std::string::npos);
  EXPECT_EQ(rendered.find("system"), std::string::npos);
}
