#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairlens/lexicon.hpp"
#include "fairlens/modelio.hpp"

namespace fairlens {

enum class Gender { Male, Female };
enum class Skew { MaleSkewed, FemaleSkewed, Neutral };
enum class SystemPromptMode { Default, None };

std::string_view to_string(Gender g);
std::string_view to_string(Skew s);
std::string_view to_string(SystemPromptMode m);
Skew parse_skew(std::string_view name);
SystemPromptMode parse_system_prompt_mode(std::string_view name);

// --- decoded-text analysis ---------------------------------------------------

// Total matches per group of `dimension` summed over all texts.
std::map<std::string, std::size_t> word_distribution(const std::vector<std::string>& decoded_texts,
                                                     const WordCategoryLexicon& lexicon,
                                                     Dimension dimension);

// A decode leans toward a gender when it mentions more words of that gender
// than of the other; the prompt is biased toward a gender when more than half
// of its decodes lean that way.
std::optional<Gender> classify_decoded(const std::vector<std::string>& decoded_texts,
                                       const WordCategoryLexicon& lexicon);

// Judged gender labels of one prompt's samples ("male"/"female"/other).
std::optional<Gender> classify_visual(const std::vector<std::string>& gender_labels);

struct AgreementResult {
  std::optional<double> fraction;  // empty when no prompt is biased on both sides
  std::size_t compared = 0;
  std::size_t matched = 0;
};

AgreementResult decoded_agreement(const std::map<std::string, std::optional<Gender>>& decoded_bias,
                                  const std::map<std::string, std::optional<Gender>>& visual_bias);

// --- token-probability probe -------------------------------------------------

struct ComparisonTemplate {
  std::string question;
  std::string option_a;
  std::string option_b;
  Gender gender_a = Gender::Male;
  Gender gender_b = Gender::Female;
};

// The five published templates, each in both option orders (10 total).
std::vector<ComparisonTemplate> default_comparison_templates();
std::vector<ComparisonTemplate> comparison_templates_from_json(const nlohmann::json& doc);
void validate_template(const ComparisonTemplate& t);

std::string render_probe_prompt(const ComparisonTemplate& t, std::string_view occupation);

// p(male option) - p(female option), after renormalizing over the two labels.
double template_bias(double p_a, double p_b, const ComparisonTemplate& t);

Skew classify_skew(double bias, double neutral_threshold);

struct TokenProbeOptions {
  double neutral_threshold = 0.1;
  std::string default_system_prompt;
  int top_k = 5;
  bool sampling_fallback = false;
  int fallback_samples = 20;
  std::int64_t seed = 0;
};

struct TokenProbeResult {
  std::string occupation;
  std::vector<double> per_template;
  double bias = 0.0;
  Skew skew = Skew::Neutral;
  bool estimated_by_sampling = false;

  nlohmann::json to_json() const;
  static TokenProbeResult from_json(const nlohmann::json& j);
};

TokenProbeResult token_probe(const std::string& occupation,
                             const std::vector<ComparisonTemplate>& templates, ChatModel& model,
                             SystemPromptMode mode, const TokenProbeOptions& options = {});

struct SkewShiftSummary {
  // transitions[from][to], indexed by Skew
  std::array<std::array<std::size_t, 3>, 3> transitions{};
  std::optional<double> male_to_neutral;    // fraction of default male-skewed
  std::optional<double> female_to_neutral;  // fraction of default female-skewed

  nlohmann::json to_json() const;
};

SkewShiftSummary skew_shift_summary(const std::vector<TokenProbeResult>& default_results,
                                    const std::vector<TokenProbeResult>& none_results);

struct TokenProbeAggregate {
  double mean_abs = 0.0;
  double mean_signed = 0.0;
};

TokenProbeAggregate aggregate_token_bias(const std::vector<TokenProbeResult>& results);

// --- embedding association ---------------------------------------------------

// cos(g_m, o) - cos(g_f, o)
double association_score(const Embedding& male_concept, const Embedding& female_concept,
                         const Embedding& occupation);

// Mean of unit vectors, renormalized.
Embedding concept_vector(const std::vector<Embedding>& word_embeddings);

struct EmbeddingAssociation {
  std::string occupation;
  double b = 0.0;
};

struct EmbeddingAssociationReport {
  std::vector<EmbeddingAssociation> items;
  double mean_abs = 0.0;
  double mean_signed = 0.0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

EmbeddingAssociationReport embedding_association(const std::vector<std::string>& occupation_texts,
                                                 const WordCategoryLexicon& lexicon,
                                                 EmbeddingModel& model,
                                                 const std::optional<std::string>& system_prompt);

}  // namespace fairlens
