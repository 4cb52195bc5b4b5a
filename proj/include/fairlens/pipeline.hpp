#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairlens/corpus.hpp"
#include "fairlens/fairpro.hpp"
#include "fairlens/metrics.hpp"
#include "fairlens/modelio.hpp"
#include "fairlens/probes.hpp"
#include "fairlens/simulator.hpp"

namespace fairlens {

inline constexpr std::string_view kToolVersion = "0.3.0";

struct ProbeConfig {
  bool tokens = false;
  bool embeddings = false;
  bool decoded = false;
  double neutral_threshold = 0.1;
  bool sampling_fallback = false;

  nlohmann::json to_json() const;
  static ProbeConfig from_json(const nlohmann::json& j);
};

struct RunConfig {
  std::string model_name = "simulated";
  std::string profile = "qwen-image";  // default system prompt and meta output format
  ModelEndpoint generator;
  ModelEndpoint judge;
  ModelEndpoint embedder;
  ModelEndpoint meta;
  ModelEndpoint rewriter;
  std::optional<SimulatedModelSpec> simulator;

  std::vector<PromptLevel> levels{std::begin(kAllLevels), std::end(kAllLevels)};
  std::vector<PromptMode> modes{PromptMode::Default, PromptMode::FairPro};
  std::vector<std::int64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::optional<std::filesystem::path> taxonomy_path;
  std::optional<std::filesystem::path> occupations_path;
  std::optional<std::filesystem::path> actions_path;
  std::vector<std::string> occupations;  // explicit subset; empty: all
  std::uint64_t corpus_seed = 0;
  std::int64_t meta_seed = 0;
  double meta_temperature = 0.7;
  std::size_t diversity_pairs = 4;
  ProbeConfig probes;

  // Not part of the config digest: they do not change results.
  std::size_t parallelism = 4;
  std::filesystem::path output_dir = "run";

  void validate() const;
  // Digest of every result-affecting field.
  std::string digest() const;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);

  // 8 occupations x 4 levels x 10 seeds x {default, fairpro} on the simulator.
  static RunConfig desk_preset();
};

struct RunManifest {
  std::string config_digest;
  std::string tool_version{kToolVersion};
  std::map<std::string, bool> stages;
  std::size_t prompts = 0;
  std::size_t seeds = 0;
  std::size_t modes = 0;
  std::size_t generations = 0;
  std::size_t annotations = 0;

  bool complete() const;
  // generations == prompts * seeds * modes once the stage is complete
  bool counts_consistent() const;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

enum class ReportFormat { Json, Csv, Markdown };

// Writes report.{json,csv,md} for each requested format; returns the paths.
std::vector<std::filesystem::path> emit_report(const BiasReport& report,
                                               const std::set<ReportFormat>& formats,
                                               const std::filesystem::path& dir);

struct CallStats {
  std::uint64_t generator = 0;
  std::uint64_t judge = 0;
  std::uint64_t embedder = 0;
  std::uint64_t meta = 0;
  std::uint64_t rewriter = 0;

  std::uint64_t total() const { return generator + judge + embedder + meta + rewriter; }
};

struct AuditOutcome {
  std::optional<BiasReport> report;
  RunManifest manifest;
  std::filesystem::path run_dir;
  CallStats calls;
  int exit_code = 0;  // 0 success, 2 partial with resumable state, 1 hard failure
  std::string error;
  std::optional<ErrorCode> error_code;
};

// Executes corpus -> fairpro -> generate -> judge -> score (-> probes) with
// every stage persisted under output_dir/<digest>/ and resumable.
class AuditRunner {
 public:
  explicit AuditRunner(RunConfig config);
  ~AuditRunner();

  // Run into an explicit directory instead of output_dir/<digest>; refuses
  // (RefusesToMixRuns) when it holds a manifest of a different config.
  void set_run_dir(std::filesystem::path dir);

  AuditOutcome run();

  const RunConfig& config() const { return config_; }

 private:
  struct Impl;
  RunConfig config_;
  std::optional<std::filesystem::path> run_dir_override_;
  std::unique_ptr<Impl> impl_;
};

BiasReport run_audit(const RunConfig& config);

}  // namespace fairlens
