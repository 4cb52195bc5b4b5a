#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "fairlens/modelio.hpp"

namespace fairlens {

enum class PromptMode { Default, None, Fixed, NoUserPrompt, NoCoT, TwoCalls, FairPro, UserPromptRewrite };

std::string_view to_string(PromptMode mode);
PromptMode parse_prompt_mode(std::string_view name);  // accepts "two-calls" and "two_calls"

// Modes that obtain their system prompt (or rewritten user prompt) from a
// meta call.
bool uses_meta_call(PromptMode mode);

struct MetaInstruction {
  std::string template_text;  // contains "{user_prompt}" unless the mode omits it
  OutputFormat output_format = OutputFormat::TaggedBlock;
  bool cot_enabled = true;

  std::string instantiate(std::string_view user_prompt) const;
};

MetaInstruction meta_instruction(PromptMode mode, OutputFormat format);

// Throws NotApplicable for Default and None.
std::string build_meta(std::string_view user_prompt, PromptMode mode, OutputFormat format);

// First call of the two-call variant: asks only for the bias analysis.
std::string build_analysis_request(std::string_view user_prompt);
// Second call: the meta instruction with the first call's analysis attached.
std::string build_two_call_followup(std::string_view user_prompt, std::string_view analysis,
                                    OutputFormat format);

struct ParsedFairOutput {
  std::string reasoning;
  std::string system_prompt;
};

// TaggedBlock: innermost <tag>...</tag> span (the last one when several).
// LastLineMarker: the final non-empty line must be "User Prompt:"; the text
// after the last recognized preamble line is the instruction.
// Throws ParseFailed carrying the raw output.
ParsedFairOutput parse_fair_output(std::string_view raw, OutputFormat format,
                                   std::string_view tag = "system_prompt");

struct FairPromptResult {
  std::string user_prompt;
  std::string reasoning;
  std::string system_prompt;  // the rewritten user prompt in UserPromptRewrite mode
  PromptMode mode = PromptMode::FairPro;
  std::string raw_output;
  bool fell_back = false;     // parsing failed twice; the default prompt is used
  std::size_t meta_calls = 0;

  nlohmann::json to_json() const;
  static FairPromptResult from_json(const nlohmann::json& j);
};

struct FairProOptions {
  double temperature = 0.7;
  std::int64_t seed = 0;
  OutputFormat format = OutputFormat::TaggedBlock;
};

FairPromptResult fair_system_prompt(std::string_view user_prompt, ChatModel& model, PromptMode mode,
                                    const FairProOptions& options = {});

struct GenerationInputs {
  std::optional<std::string> system_prompt;
  std::string user_prompt;
};

GenerationInputs assemble_generation_inputs(PromptMode mode, const FairPromptResult* result,
                                            const std::string& user_prompt,
                                            const std::string& default_system_prompt);

}  // namespace fairlens
