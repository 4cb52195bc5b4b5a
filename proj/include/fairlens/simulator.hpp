#pragma once

#include <atomic>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairlens/corpus.hpp"
#include "fairlens/modelio.hpp"

namespace fairlens {

enum class RewriteBehavior { Echo, Verbose, InjectDemographic };

std::string_view to_string(RewriteBehavior b);
RewriteBehavior parse_rewrite_behavior(std::string_view name);

// How the simulator answers forced-choice A/B probes with logprobs.
struct TokenProbeProfile {
  enum class Mode { Fixed, Gender };
  Mode mode = Mode::Gender;
  double p_a = 0.5;                       // Fixed: probability of label "A"
  double p_male = 0.5;                    // Gender: probability of the male option
  std::map<std::string, double> per_occupation;  // Gender: overrides p_male
  // Fraction of the male/female gap removed when no system prompt is given.
  double none_shrink = 0.0;
  bool supports_logprobs = true;
  // Split each label's mass 0.9/0.1 between "A" and " A" as real tokenizers do.
  bool spelling_variants = false;
};

struct ScriptedReply {
  std::string contains;  // substring of the user prompt
  std::string reply;
};

struct SimulatedModelSpec {
  // occupation (article form) -> category -> class probabilities in taxonomy order
  std::map<std::string, std::map<std::string, std::vector<double>>> priors;
  // used for occupations absent from `priors`; missing categories are uniform
  std::map<std::string, std::vector<double>> default_prior;
  double fairness_sensitivity = 0.0;
  // Mixing weight toward uniform applied when no system prompt is present.
  double no_system_prompt_shrink = 0.0;
  RewriteBehavior rewrite_behavior = RewriteBehavior::Echo;
  // Prompts never treated as fairness-aware even if they contain a marker
  // word (SANA's default instruction mentions "a diverse crowd").
  std::vector<std::string> default_system_prompts;
  TokenProbeProfile token_probe;
  std::vector<ScriptedReply> scripted;
  std::size_t embedding_dim = 64;
  double embedding_gender_strength = 0.6;

  void validate(const AttributeTaxonomy& taxonomy) const;
  nlohmann::json to_json() const;
  static SimulatedModelSpec from_json(const nlohmann::json& j);
};

inline constexpr const char* kFairnessMarkers[] = {"diverse", "diversity", "inclusiv", "stereotype",
                                                   "fair"};

bool contains_fairness_marker(std::string_view system_prompt);

// Deterministic offline stand-in for chat, embedding and image endpoints.
// All randomness is a hash of (occupation, seed, category), so results do not
// depend on call order or thread scheduling.
class SimulatedModel final : public ChatModel, public EmbeddingModel, public ImageModel {
 public:
  SimulatedModel(SimulatedModelSpec spec, AttributeTaxonomy taxonomy);

  ChatResponse complete(const ChatRequest& request) override;
  std::vector<Embedding> embed_raw(const std::vector<std::string>& texts,
                                   const std::optional<std::string>& system_prompt) override;
  ImageResult generate(const ImageRequest& request) override;
  std::string identity() const override { return "simulator"; }

  // Sampling prior for (user prompt, system prompt) after any fairness or
  // no-system-prompt adjustment.
  std::vector<double> effective_prior(std::string_view user_prompt,
                                      const std::optional<std::string>& system_prompt,
                                      const std::string& category) const;
  bool is_fairness_aware(const std::optional<std::string>& system_prompt) const;
  // Longest known occupation mentioned in `text`, if any.
  std::optional<std::string> detect_occupation(std::string_view text) const;

  const SimulatedModelSpec& spec() const { return spec_; }
  const AttributeTaxonomy& taxonomy() const { return taxonomy_; }

  std::uint64_t chat_calls() const { return chat_calls_.load(); }
  std::uint64_t embed_calls() const { return embed_calls_.load(); }
  std::uint64_t image_calls() const { return image_calls_.load(); }
  std::uint64_t total_calls() const { return chat_calls() + embed_calls() + image_calls(); }

 private:
  ChatResponse answer_probe(const ChatRequest& request) const;
  ChatResponse answer_judge(const ChatRequest& request) const;
  ChatResponse answer_meta(const ChatRequest& request) const;
  ChatResponse answer_generic(const ChatRequest& request) const;
  Embedding text_vector(std::string_view text, const std::optional<std::string>& system_prompt) const;
  double occupation_p_male(std::string_view text) const;

  SimulatedModelSpec spec_;
  AttributeTaxonomy taxonomy_;
  std::vector<std::pair<std::string, std::string>> occupation_nouns_;  // noun, article form
  std::atomic<std::uint64_t> chat_calls_{0};
  std::atomic<std::uint64_t> embed_calls_{0};
  std::atomic<std::uint64_t> image_calls_{0};
};

}  // namespace fairlens
