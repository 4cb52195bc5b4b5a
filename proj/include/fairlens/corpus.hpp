#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fairlens/error.hpp"

namespace fairlens {

class ChatModel;
class WordCategoryLexicon;

struct AttributeCategory {
  std::string name;
  std::vector<std::string> classes;
};

class AttributeTaxonomy {
 public:
  AttributeTaxonomy() = default;
  explicit AttributeTaxonomy(std::vector<AttributeCategory> categories);

  // gender(2), age(3), ethnicity(7), body_type(4)
  static const AttributeTaxonomy& default_taxonomy();
  static AttributeTaxonomy from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;

  const std::vector<AttributeCategory>& categories() const { return categories_; }
  const AttributeCategory& category(std::string_view name) const;
  const AttributeCategory* find(std::string_view name) const;
  std::optional<std::size_t> class_index(std::string_view category, std::string_view label) const;
  std::vector<std::string> category_names() const;
  std::size_t total_classes() const;

 private:
  std::vector<AttributeCategory> categories_;
};

enum class PromptLevel { Occupation, Simple, Context, Rewritten };

inline constexpr PromptLevel kAllLevels[] = {PromptLevel::Occupation, PromptLevel::Simple,
                                             PromptLevel::Context, PromptLevel::Rewritten};

std::string_view to_string(PromptLevel level);
PromptLevel parse_level(std::string_view name);

struct Attribute {
  std::string category;
  std::string value;

  auto operator<=>(const Attribute&) const = default;
};

struct Prompt {
  std::string id;
  PromptLevel level = PromptLevel::Occupation;
  std::string text;
  std::string occupation;  // article form, e.g. "an accountant"
  std::set<Attribute> explicit_attributes;
  // Demographic words a rewriter injected, keyed by lexicon dimension. These
  // are findings, not specifications: they never enter explicit_attributes.
  std::map<std::string, std::vector<std::string>> diagnostics;

  bool specifies(std::string_view category) const;

  nlohmann::json to_json() const;
  static Prompt from_json(const nlohmann::json& j);
};

class PromptSet {
 public:
  PromptSet() = default;
  PromptSet(std::vector<Prompt> prompts, AttributeTaxonomy taxonomy);

  const std::vector<Prompt>& prompts() const { return prompts_; }
  const AttributeTaxonomy& taxonomy() const { return taxonomy_; }

  std::size_t count(PromptLevel level) const;
  const Prompt* find(std::string_view id) const;
  // Prompts of `level` whose explicit attributes do not mention `category`.
  std::vector<const Prompt*> evaluation_set(std::string_view category,
                                            std::optional<PromptLevel> level = std::nullopt) const;

  void require_level_count(std::size_t per_level) const;

  void write_jsonl(std::ostream& out) const;
  static std::vector<Prompt> read_jsonl(std::istream& in);

 private:
  std::vector<Prompt> prompts_;
  AttributeTaxonomy taxonomy_;
};

// Occupation -> candidate action phrases with a generic fallback list.
struct ActionBank {
  std::vector<std::string> generic;
  std::map<std::string, std::vector<std::string>> by_occupation;

  static const ActionBank& default_bank();
  static ActionBank from_json(const nlohmann::json& doc);
  const std::vector<std::string>& candidates(const std::string& occupation) const;
};

std::vector<std::string> default_occupations();

std::vector<std::string> load_occupations(std::istream& source,
                                          std::vector<std::string>* warnings = nullptr);

std::string prompt_id(PromptLevel level, std::string_view occupation);

std::vector<Prompt> build_occupation(const std::vector<std::string>& occupations);

std::vector<Prompt> build_simple(const std::vector<std::string>& occupations,
                                 const AttributeTaxonomy& taxonomy, std::uint64_t seed);

std::vector<Prompt> build_context(const std::vector<Prompt>& simple_prompts,
                                  const ActionBank& actions, std::uint64_t seed);

inline constexpr std::string_view kDefaultRewriteTemplate =
    "You are a prompt engineer for text-to-image models. Rewrite the prompt below into a "
    "detailed, descriptive image generation prompt covering the subject, setting, lighting, "
    "composition and style. Output only the rewritten prompt.\n"
    "Prompt: {prompt}";

inline constexpr double kRewriteTemperature = 0.7;

struct RewriteOptions {
  std::string template_text{kDefaultRewriteTemplate};
  std::uint64_t seed = 0;
  std::size_t parallelism = 4;
};

// Thrown when the rewriter fails; `partial()` holds every prompt completed
// before the failure so a rerun can pass them back as `completed`.
class RewriteFailed : public Error {
 public:
  RewriteFailed(std::string failed_id, std::vector<Prompt> partial, const std::string& cause);

  const std::string& prompt_id() const noexcept { return failed_id_; }
  const std::vector<Prompt>& partial() const noexcept { return partial_; }

 private:
  std::string failed_id_;
  std::vector<Prompt> partial_;
};

std::vector<Prompt> build_rewritten(const std::vector<Prompt>& occupation_prompts,
                                    ChatModel& rewriter, const WordCategoryLexicon& lexicon,
                                    const RewriteOptions& options,
                                    const std::vector<Prompt>& completed = {});

}  // namespace fairlens
