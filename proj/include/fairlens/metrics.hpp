#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairlens/corpus.hpp"
#include "fairlens/judge.hpp"
#include "fairlens/modelio.hpp"

namespace fairlens {

// Compensated (Kahan-Babuska) sum in input order.
double stable_sum(std::span<const double> values);
double stable_mean(std::span<const double> values);

struct AttributeDistribution {
  std::string category;
  std::vector<double> probs;
  std::vector<std::string> support;
  std::size_t n_samples_used = 0;
  std::size_t n_unknown = 0;
};

// One-hot mean over the known labels of `records` for `category`; Unknown
// labels are dropped before normalizing. Throws EmptyDistribution when no
// record carries a known label.
AttributeDistribution empirical_distribution(std::span<const AnnotationRecord> records,
                                             const AttributeCategory& category);

// 1 / sqrt(1 - 1/N): maps the largest possible distance to uniform onto 1.
double normalization_factor(std::size_t n_classes);

double distance_to_uniform(std::span<const double> probs);

struct BiasScore {
  std::string category;
  double raw_fd = 0.0;
  double normalized = 0.0;
  std::size_t n_prompts = 0;
  std::size_t n_samples_used = 0;

  nlohmann::json to_json() const;
  static BiasScore from_json(const nlohmann::json& j);
};

BiasScore fd_bias(std::span<const AttributeDistribution> dists, std::size_t n_classes);

double alignment_score(std::span<const double> image_embedding, std::span<const double> text_embedding);

// Mean cosine similarity over `n_pairs` distinct index pairs drawn with a
// seeded generator; every pair is used when n_pairs covers them all.
double pairwise_diversity(const std::vector<Embedding>& embeddings, std::size_t n_pairs = 4,
                          std::uint64_t seed = 0);

double pearson(std::span<const double> xs, std::span<const double> ys);

struct ReportCell {
  std::string mode;
  PromptLevel level = PromptLevel::Occupation;
  std::string category;
  std::optional<BiasScore> score;  // empty: missing cell
  std::size_t skipped_prompts = 0;  // prompts whose labels were all Unknown
  std::string note;
};

struct LevelSummary {
  std::string mode;
  PromptLevel level = PromptLevel::Occupation;
  std::optional<double> mean_bias;
  std::optional<double> alignment;
  std::optional<double> diversity;
  double unknown_rate = 0.0;
  std::size_t n_annotations = 0;
};

struct CategoryMean {
  std::string mode;
  std::string category;
  std::optional<double> mean_bias;  // mean over levels
};

struct BiasReport {
  std::string model_name;
  std::vector<std::string> modes;
  std::vector<PromptLevel> levels;
  std::vector<std::string> categories;
  std::vector<ReportCell> cells;
  std::vector<LevelSummary> level_summaries;
  std::vector<CategoryMean> category_means;
  std::map<std::string, std::optional<double>> mode_means;
  // Correlation of (level alignment, level bias) across levels, per mode.
  std::map<std::string, std::optional<double>> pearson_r;
  std::vector<std::string> notes;
  bool partial = false;

  const ReportCell* cell(std::string_view mode, PromptLevel level, std::string_view category) const;
  const LevelSummary* summary(std::string_view mode, PromptLevel level) const;
  const CategoryMean* category_mean(std::string_view mode, std::string_view category) const;

  nlohmann::json to_json() const;
  static BiasReport from_json(const nlohmann::json& j);
};

struct ReportConfig {
  std::string model_name = "model";
  std::vector<std::string> modes;
  std::vector<PromptLevel> levels;
  std::vector<std::int64_t> seeds;
  std::size_t diversity_pairs = 4;
};

// `text_embeddings` maps prompt id -> embedding of the prompt text; it may be
// empty, in which case alignment is reported as unavailable.
BiasReport aggregate_report(const std::vector<AnnotationRecord>& annotations,
                            const std::vector<GenerationRecord>& generations,
                            const std::map<std::string, Embedding>& text_embeddings,
                            const PromptSet& prompts, const ReportConfig& config);

std::string report_to_csv(const BiasReport& report);
std::string report_to_markdown(const BiasReport& report);

}  // namespace fairlens
