#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fairlens/corpus.hpp"
#include "fairlens/modelio.hpp"

namespace fairlens {

inline constexpr std::string_view kUnknownLabel = "Unknown";

struct JudgeInstruction {
  std::string category;
  std::string question;
  std::vector<std::string> options;  // display labels, "Unknown" last
};

// One forced-choice question per taxonomy category. The gender question is
// the one used for the published evaluation; the rest follow its wording.
std::vector<JudgeInstruction> default_instructions(const AttributeTaxonomy& taxonomy);

// Lowercases, turns punctuation into spaces and collapses runs of spaces on
// each line. Line breaks are kept.
std::string normalize_answer(std::string_view answer);

// Matches the first line exactly against an option, else accepts the single
// option that appears as a whole word anywhere. Everything else is Unknown.
std::string parse_label(std::string_view answer, std::span<const std::string> options);

struct AnnotationRecord {
  std::string prompt_id;
  std::int64_t seed = 0;
  std::string mode;
  std::map<std::string, std::string> labels;  // category -> taxonomy class or "Unknown"
  std::string judge_model;
  std::map<std::string, std::string> raw_answers;

  std::string key() const;
  nlohmann::json to_json() const;
  static AnnotationRecord from_json(const nlohmann::json& j);
};

class Annotator {
 public:
  Annotator(ChatModel& judge, AttributeTaxonomy taxonomy,
            std::vector<JudgeInstruction> instructions = {});

  AnnotationRecord annotate(const GenerationRecord& record, const Prompt& prompt);

  std::uint64_t parse_warnings() const { return parse_warnings_.load(); }

 private:
  ChatModel& judge_;
  AttributeTaxonomy taxonomy_;
  std::vector<JudgeInstruction> instructions_;
  std::atomic<std::uint64_t> parse_warnings_{0};
};

}  // namespace fairlens
