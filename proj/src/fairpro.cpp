#include "fairlens/fairpro.hpp"

#include <algorithm>
#include <cctype>
#include <vector>

#include "fairlens/error.hpp"
#include "fairlens/text.hpp"

namespace fairlens {

using nlohmann::json;

std::string_view to_string(PromptMode mode) {
  switch (mode) {
    case PromptMode::Default: return "default";
    case PromptMode::None: return "none";
    case PromptMode::Fixed: return "fixed";
    case PromptMode::NoUserPrompt: return "no-user-prompt";
    case PromptMode::NoCoT: return "no-cot";
    case PromptMode::TwoCalls: return "two-calls";
    case PromptMode::FairPro: return "fairpro";
    case PromptMode::UserPromptRewrite: return "user-prompt-rewrite";
  }
  return "default";
}

PromptMode parse_prompt_mode(std::string_view name) {
  std::string n = text::replace_all(text::to_lower(text::trim(name)), "_", "-");
  if (n == "default") return PromptMode::Default;
  if (n == "none") return PromptMode::None;
  if (n == "fixed") return PromptMode::Fixed;
  if (n == "no-user-prompt") return PromptMode::NoUserPrompt;
  if (n == "no-cot") return PromptMode::NoCoT;
  if (n == "two-calls") return PromptMode::TwoCalls;
  if (n == "fairpro") return PromptMode::FairPro;
  if (n == "user-prompt-rewrite") return PromptMode::UserPromptRewrite;
  throw Error(ErrorCode::InvalidInput, "unknown prompt mode '" + std::string(name) + "'");
}

bool uses_meta_call(PromptMode mode) { return mode != PromptMode::Default && mode != PromptMode::None; }

// --- meta instructions -------------------------------------------------------------

namespace {

constexpr std::string_view kPreamble =
    "You are an intelligent, unbiased assistant.\n"
    "Your goal is to design a fair instruction that guides detailed, accurate, and globally "
    "inclusive image descriptions.\n\n";

constexpr std::string_view kUserBlock = "Consider the following user prompt:\n{user_prompt}\n\n";

constexpr std::string_view kFocus =
    "Focus on:\n"
    "- Potential social stereotypes or biases that might emerge\n"
    "- Lack of diversity or inclusivity\n"
    "- Cultural or demographic assumptions\n\n";

constexpr std::string_view kTaggedOutput =
    "Output format:\n<system_prompt>\n"
    "[Write only the final revised system prompt here—no explanations or reasoning text.]\n"
    "</system_prompt>";

constexpr std::string_view kLastLineOutput =
    "Output constraint: Write only the final revised system instruction with no commentary, "
    "explanations, or reasoning.\n"
    "The last line must exactly be \"User Prompt: \".";

constexpr std::string_view kRewriteOutput =
    "Output format:\n<user_prompt>\n"
    "[Write only the final revised user prompt here—no explanations or reasoning text.]\n"
    "</user_prompt>";

std::string noun_for(OutputFormat format) {
  return format == OutputFormat::TaggedBlock ? "system prompt" : "system instruction";
}

std::string output_for(OutputFormat format) {
  return std::string(format == OutputFormat::TaggedBlock ? kTaggedOutput : kLastLineOutput);
}

}  // namespace

std::string MetaInstruction::instantiate(std::string_view user_prompt) const {
  return text::replace_all(template_text, "{user_prompt}", user_prompt);
}

MetaInstruction meta_instruction(PromptMode mode, OutputFormat format) {
  MetaInstruction m;
  m.output_format = format;
  const std::string noun = noun_for(format);
  std::string t(kPreamble);
  switch (mode) {
    case PromptMode::Default:
    case PromptMode::None:
      throw Error(ErrorCode::NotApplicable, std::string(to_string(mode)) + " mode makes no meta call");
    case PromptMode::FairPro:
    case PromptMode::TwoCalls:
      t += std::string(kUserBlock);
      t += "Identify what would be the problem if the original system prompt were used for the above "
           "user prompt. " + std::string(kFocus);
      t += "Think of a concise analysis of the potential issues.\n";
      t += "Based on this analysis, create a " + noun +
           " that addresses these issues and promotes fairness, diversity, and inclusivity.\n\n";
      t += output_for(format);
      break;
    case PromptMode::Fixed:
      m.cot_enabled = false;
      t += "Create a " + noun + " that promotes fairness, diversity, and inclusivity.\n\n";
      t += output_for(format);
      break;
    case PromptMode::NoUserPrompt:
      t += "Identify what would be the problem if the original system prompt were used for a user "
           "prompt. " + std::string(kFocus);
      t += "Think of a concise analysis of the potential issues.\n";
      t += "Based on this analysis, create a " + noun +
           " that addresses these issues and promotes fairness, diversity, and inclusivity.\n\n";
      t += output_for(format);
      break;
    case PromptMode::NoCoT:
      m.cot_enabled = false;
      t += std::string(kUserBlock);
      t += "Create a " + noun +
           " for the above user prompt that promotes fairness, diversity, and inclusivity.\n\n";
      t += output_for(format);
      break;
    case PromptMode::UserPromptRewrite:
      m.output_format = OutputFormat::TaggedBlock;
      t += std::string(kUserBlock);
      t += "Identify what would be the problem if the original system prompt were used for the above "
           "user prompt. " + std::string(kFocus);
      t += "Think of a concise analysis of the potential issues.\n";
      t += "Based on this analysis, rewrite the user prompt so that it addresses these issues and "
           "promotes fairness, diversity, and inclusivity.\n\n";
      t += std::string(kRewriteOutput);
      break;
  }
  m.template_text = std::move(t);
  return m;
}

std::string build_meta(std::string_view user_prompt, PromptMode mode, OutputFormat format) {
  return meta_instruction(mode, format).instantiate(user_prompt);
}

std::string build_analysis_request(std::string_view user_prompt) {
  std::string t(kPreamble);
  t += text::replace_all(std::string(kUserBlock), "{user_prompt}", user_prompt);
  t += "Identify what would be the problem if the original system prompt were used for the above user "
       "prompt. " + std::string(kFocus);
  t += "Output only the analysis of the potential issues.";
  return t;
}

std::string build_two_call_followup(std::string_view user_prompt, std::string_view analysis,
                                    OutputFormat format) {
  std::string t(kPreamble);
  t += text::replace_all(std::string(kUserBlock), "{user_prompt}", user_prompt);
  t += "Analysis of the potential issues:\n" + text::trim(analysis) + "\n\n";
  t += "Based on this analysis, create a " + noun_for(format) +
       " that addresses these issues and promotes fairness, diversity, and inclusivity.\n\n";
  t += output_for(format);
  return t;
}

// --- parsing ---------------------------------------------------------------------

namespace {

bool is_placeholder(std::string_view span) { return text::trim(span).rfind("[Write only", 0) == 0; }

ParsedFairOutput parse_tagged(std::string_view raw, std::string_view tag) {
  const std::string open = "<" + std::string(tag) + ">";
  const std::string close = "</" + std::string(tag) + ">";

  struct Span {
    std::size_t outer_open;
    std::size_t begin;
    std::size_t end;
  };
  std::vector<Span> innermost;
  std::vector<std::size_t> stack;
  std::size_t last_open_seen = std::string_view::npos;
  std::size_t pos = 0;
  while (true) {
    const std::size_t o = raw.find(open, pos);
    const std::size_t c = raw.find(close, pos);
    if (o == std::string_view::npos && c == std::string_view::npos) break;
    if (o != std::string_view::npos && (c == std::string_view::npos || o < c)) {
      stack.push_back(o);
      last_open_seen = o;
      pos = o + open.size();
      continue;
    }
    if (!stack.empty()) {
      const std::size_t start = stack.back();
      stack.pop_back();
      const std::size_t begin = start + open.size();
      // Innermost: no other opening tag between this one and its close.
      if (last_open_seen == start) {
        innermost.push_back({stack.empty() ? start : stack.front(), begin, c});
      }
    }
    pos = c + close.size();
  }

  for (auto it = innermost.rbegin(); it != innermost.rend(); ++it) {
    const std::string_view body = raw.substr(it->begin, it->end - it->begin);
    if (is_placeholder(body)) continue;
    const std::string prompt = text::trim(body);
    if (prompt.empty()) throw ParseFailed("empty <" + std::string(tag) + "> block", std::string(raw));
    return {text::trim(raw.substr(0, it->outer_open)), prompt};
  }
  // An unterminated final block, as when generation stops at the token limit.
  if (!stack.empty()) {
    const std::size_t start = stack.back();
    const std::string_view body = raw.substr(start + open.size());
    const std::string prompt = text::trim(body);
    if (!prompt.empty() && !is_placeholder(body)) return {text::trim(raw.substr(0, stack.front())), prompt};
  }
  throw ParseFailed("no <" + std::string(tag) + "> block", std::string(raw));
}

std::string strip_decoration(std::string_view line) {
  std::string s = text::trim(line);
  s.erase(std::remove(s.begin(), s.end(), '*'), s.end());
  while (!s.empty() && s.front() == '#') s.erase(s.begin());
  return text::trim(s);
}

bool is_marker_line(std::string_view line) { return text::to_lower(strip_decoration(line)) == "user prompt:"; }

// "Revised System Instruction:" and the like. Returns the text following the
// colon when the line is a preamble.
std::optional<std::string> preamble_rest(std::string_view line) {
  const std::string s = strip_decoration(line);
  const auto colon = s.find(':');
  if (colon == std::string::npos) return std::nullopt;
  const std::string label = text::to_lower(s.substr(0, colon));
  if (label.size() > 60) return std::nullopt;
  const bool names_prompt = label.find("instruction") != std::string::npos ||
                            label.find("system prompt") != std::string::npos;
  if (!names_prompt || label.find("user prompt") != std::string::npos) return std::nullopt;
  return text::trim(std::string_view(s).substr(colon + 1));
}

ParsedFairOutput parse_last_line(std::string_view raw) {
  std::vector<std::string> lines = text::split_lines(raw);
  while (!lines.empty() && text::trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty() || !is_marker_line(lines.back())) {
    throw ParseFailed("the last line is not \"User Prompt:\"", std::string(raw));
  }
  lines.pop_back();

  std::optional<std::size_t> preamble;
  std::string first_part;
  for (std::size_t i = lines.size(); i-- > 0;) {
    if (auto rest = preamble_rest(lines[i])) {
      preamble = i;
      first_part = *rest;
      break;
    }
  }
  std::size_t body_start = 0;
  std::string reasoning;
  if (preamble) {
    body_start = *preamble + 1;
    reasoning = text::join(std::vector<std::string>(lines.begin(), lines.begin() + static_cast<long>(*preamble)), "\n");
  } else {
    // Without a label, the final paragraph is the instruction.
    std::size_t end = lines.size();
    while (end > 0 && text::trim(lines[end - 1]).empty()) --end;
    std::size_t start = end;
    while (start > 0 && !text::trim(lines[start - 1]).empty()) --start;
    body_start = start;
    reasoning = text::join(std::vector<std::string>(lines.begin(), lines.begin() + static_cast<long>(start)), "\n");
  }
  std::string body = text::join(std::vector<std::string>(lines.begin() + static_cast<long>(body_start), lines.end()), "\n");
  if (!first_part.empty()) body = first_part + (text::trim(body).empty() ? "" : "\n" + body);
  const std::string prompt = text::trim(body);
  if (prompt.empty()) throw ParseFailed("no instruction before \"User Prompt:\"", std::string(raw));
  return {text::trim(reasoning), prompt};
}

}  // namespace

ParsedFairOutput parse_fair_output(std::string_view raw, OutputFormat format, std::string_view tag) {
  return format == OutputFormat::TaggedBlock ? parse_tagged(raw, tag) : parse_last_line(raw);
}

// --- generation ----------------------------------------------------------------------

json FairPromptResult::to_json() const {
  return {{"user_prompt", user_prompt}, {"reasoning", reasoning},   {"system_prompt", system_prompt},
          {"mode", std::string(fairlens::to_string(mode))}, {"raw_output", raw_output},
          {"fell_back", fell_back},     {"meta_calls", meta_calls}};
}

FairPromptResult FairPromptResult::from_json(const json& j) {
  FairPromptResult r;
  r.user_prompt = j.at("user_prompt").get<std::string>();
  r.reasoning = j.value("reasoning", std::string{});
  r.system_prompt = j.at("system_prompt").get<std::string>();
  r.mode = parse_prompt_mode(j.at("mode").get<std::string>());
  r.raw_output = j.value("raw_output", std::string{});
  r.fell_back = j.value("fell_back", false);
  r.meta_calls = j.value("meta_calls", std::size_t{0});
  return r;
}

FairPromptResult fair_system_prompt(std::string_view user_prompt, ChatModel& model, PromptMode mode,
                                    const FairProOptions& options) {
  if (!uses_meta_call(mode)) {
    throw Error(ErrorCode::NotApplicable, std::string(to_string(mode)) + " mode makes no meta call");
  }
  FairPromptResult result;
  result.user_prompt = std::string(user_prompt);
  result.mode = mode;
  const bool rewrite = mode == PromptMode::UserPromptRewrite;
  const OutputFormat format = rewrite ? OutputFormat::TaggedBlock : options.format;

  auto ask = [&](const std::string& prompt, std::int64_t seed) {
    ChatRequest req;
    req.user_prompt = prompt;
    req.temperature = options.temperature;
    req.seed = seed;
    ++result.meta_calls;
    return chat(model, req).text;
  };

  for (int attempt = 0; attempt < 2; ++attempt) {
    const std::int64_t seed = options.seed + attempt;
    std::string analysis;
    if (mode == PromptMode::TwoCalls) {
      analysis = ask(build_analysis_request(user_prompt), seed);
      result.raw_output = ask(build_two_call_followup(user_prompt, analysis, format), seed);
    } else {
      result.raw_output = ask(build_meta(user_prompt, mode, format), seed);
    }
    try {
      const ParsedFairOutput parsed =
          parse_fair_output(result.raw_output, format, rewrite ? "user_prompt" : "system_prompt");
      result.reasoning = mode == PromptMode::TwoCalls ? text::trim(analysis) : parsed.reasoning;
      result.system_prompt = parsed.system_prompt;
      // The encoder template expects the instruction to end with the marker.
      if (format == OutputFormat::LastLineMarker) result.system_prompt += "\nUser Prompt:";
      return result;
    } catch (const ParseFailed&) {
    }
  }
  result.fell_back = true;
  result.reasoning.clear();
  result.system_prompt.clear();
  return result;
}

GenerationInputs assemble_generation_inputs(PromptMode mode, const FairPromptResult* result,
                                            const std::string& user_prompt,
                                            const std::string& default_system_prompt) {
  switch (mode) {
    case PromptMode::Default: return {default_system_prompt, user_prompt};
    case PromptMode::None: return {std::nullopt, user_prompt};
    default: break;
  }
  if (!result) {
    throw Error(ErrorCode::InvalidInput, std::string(to_string(mode)) + " mode needs a meta-call result");
  }
  if (result->fell_back) return {default_system_prompt, user_prompt};
  if (mode == PromptMode::UserPromptRewrite) return {default_system_prompt, result->system_prompt};
  return {result->system_prompt, user_prompt};
}

}  // namespace fairlens
