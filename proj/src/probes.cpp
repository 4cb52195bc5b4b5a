#include "fairlens/probes.hpp"

#include <cctype>
#include <cmath>

#include "fairlens/assets.hpp"
#include "fairlens/error.hpp"
#include "fairlens/metrics.hpp"
#include "fairlens/text.hpp"

namespace fairlens {

using nlohmann::json;

std::string_view to_string(Gender g) { return g == Gender::Male ? "male" : "female"; }

std::string_view to_string(Skew s) {
  switch (s) {
    case Skew::MaleSkewed: return "male-skewed";
    case Skew::FemaleSkewed: return "female-skewed";
    case Skew::Neutral: return "neutral";
  }
  return "neutral";
}

std::string_view to_string(SystemPromptMode m) { return m == SystemPromptMode::Default ? "default" : "none"; }

Skew parse_skew(std::string_view name) {
  const std::string n = text::to_lower(name);
  if (n == "male-skewed" || n == "male") return Skew::MaleSkewed;
  if (n == "female-skewed" || n == "female") return Skew::FemaleSkewed;
  if (n == "neutral") return Skew::Neutral;
  throw Error(ErrorCode::InvalidInput, "unknown skew '" + std::string(name) + "'");
}

SystemPromptMode parse_system_prompt_mode(std::string_view name) {
  const std::string n = text::to_lower(name);
  if (n == "default") return SystemPromptMode::Default;
  if (n == "none") return SystemPromptMode::None;
  throw Error(ErrorCode::InvalidInput, "unknown system prompt mode '" + std::string(name) + "'");
}

// --- decoded text --------------------------------------------------------------

std::map<std::string, std::size_t> word_distribution(const std::vector<std::string>& decoded_texts,
                                                     const WordCategoryLexicon& lexicon, Dimension dimension) {
  std::map<std::string, std::size_t> total;
  for (const auto& g : lexicon.groups(dimension)) total[g.name] = 0;
  for (const auto& t : decoded_texts) {
    for (const auto& [group, n] : lexicon.count(t, dimension)) total[group] += n;
  }
  return total;
}

namespace {

std::optional<Gender> majority(std::size_t male, std::size_t female, std::size_t total) {
  if (2 * male > total) return Gender::Male;
  if (2 * female > total) return Gender::Female;
  return std::nullopt;
}

}  // namespace

std::optional<Gender> classify_decoded(const std::vector<std::string>& decoded_texts,
                                       const WordCategoryLexicon& lexicon) {
  std::size_t male = 0;
  std::size_t female = 0;
  for (const auto& t : decoded_texts) {
    const auto counts = lexicon.count(t, Dimension::Gender);
    const auto m = counts.count("male") ? counts.at("male") : 0;
    const auto f = counts.count("female") ? counts.at("female") : 0;
    if (m > f) ++male;
    if (f > m) ++female;
  }
  return majority(male, female, decoded_texts.size());
}

std::optional<Gender> classify_visual(const std::vector<std::string>& gender_labels) {
  std::size_t male = 0;
  std::size_t female = 0;
  for (const auto& l : gender_labels) {
    const std::string n = text::to_lower(text::trim(l));
    if (n == "male") ++male;
    if (n == "female") ++female;
  }
  return majority(male, female, gender_labels.size());
}

AgreementResult decoded_agreement(const std::map<std::string, std::optional<Gender>>& decoded_bias,
                                  const std::map<std::string, std::optional<Gender>>& visual_bias) {
  AgreementResult r;
  for (const auto& [id, decoded] : decoded_bias) {
    const auto it = visual_bias.find(id);
    if (!decoded || it == visual_bias.end() || !it->second) continue;
    ++r.compared;
    if (*decoded == *it->second) ++r.matched;
  }
  if (r.compared > 0) r.fraction = static_cast<double>(r.matched) / static_cast<double>(r.compared);
  return r;
}

// --- token probe ----------------------------------------------------------------

std::vector<ComparisonTemplate> comparison_templates_from_json(const json& doc) {
  std::vector<ComparisonTemplate> out;
  for (const auto& t : doc.at("templates")) {
    const auto q = t.at("question").get<std::string>();
    const auto m = t.at("male").get<std::string>();
    const auto f = t.at("female").get<std::string>();
    out.push_back({q, m, f, Gender::Male, Gender::Female});
    out.push_back({q, f, m, Gender::Female, Gender::Male});
  }
  for (const auto& t : out) validate_template(t);
  return out;
}

std::vector<ComparisonTemplate> default_comparison_templates() {
  static const auto templates = comparison_templates_from_json(json::parse(assets::raw("probe_templates.json")));
  return templates;
}

void validate_template(const ComparisonTemplate& t) {
  if (text::trim(t.question).empty()) throw Error(ErrorCode::InvalidInput, "probe template without a question");
  if (t.option_a.find("{occupation}") == std::string::npos ||
      t.option_b.find("{occupation}") == std::string::npos) {
    throw Error(ErrorCode::InvalidInput, "probe options must contain {occupation}");
  }
  if (t.gender_a == t.gender_b) throw Error(ErrorCode::InvalidInput, "probe options must differ in gender");
}

namespace {

std::string fill_occupation(std::string option, const std::string& noun) {
  const std::string article_form = text::with_article(noun);
  option = text::replace_all(std::move(option), "a {occupation}", article_form);
  option = text::replace_all(std::move(option), "A {occupation}", text::capitalize_first(article_form));
  return text::replace_all(std::move(option), "{occupation}", noun);
}

// "A", " A", "A." and "(A)" all name option A.
std::string option_letter(std::string_view token) {
  std::string t;
  for (char c : token) {
    if (std::isalpha(static_cast<unsigned char>(c))) t += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    else if (!std::isspace(static_cast<unsigned char>(c)) && !std::ispunct(static_cast<unsigned char>(c))) return {};
  }
  return t;
}

}  // namespace

std::string render_probe_prompt(const ComparisonTemplate& t, std::string_view occupation) {
  const std::string noun = text::strip_article(occupation);
  return t.question + "\nA. " + fill_occupation(t.option_a, noun) + "\nB. " + fill_occupation(t.option_b, noun) +
         "\nAnswer with A or B only.";
}

double template_bias(double p_a, double p_b, const ComparisonTemplate& t) {
  const double s = p_a + p_b;
  if (!(s > 0.0)) throw Error(ErrorCode::InvalidInput, "no probability mass on either option");
  const double pa = p_a / s;
  const double pb = p_b / s;
  const double p_male = t.gender_a == Gender::Male ? pa : pb;
  const double p_female = t.gender_a == Gender::Male ? pb : pa;
  return p_male - p_female;
}

Skew classify_skew(double bias, double neutral_threshold) {
  if (std::abs(bias) <= neutral_threshold) return Skew::Neutral;
  return bias > 0.0 ? Skew::MaleSkewed : Skew::FemaleSkewed;
}

json TokenProbeResult::to_json() const {
  return {{"occupation", occupation}, {"per_template", per_template}, {"bias", bias},
          {"skew", std::string(fairlens::to_string(skew))}, {"estimated_by_sampling", estimated_by_sampling}};
}

TokenProbeResult TokenProbeResult::from_json(const json& j) {
  TokenProbeResult r;
  r.occupation = j.at("occupation").get<std::string>();
  r.per_template = j.at("per_template").get<std::vector<double>>();
  r.bias = j.at("bias").get<double>();
  r.skew = parse_skew(j.at("skew").get<std::string>());
  r.estimated_by_sampling = j.value("estimated_by_sampling", false);
  return r;
}

TokenProbeResult token_probe(const std::string& occupation, const std::vector<ComparisonTemplate>& templates,
                             ChatModel& model, SystemPromptMode mode, const TokenProbeOptions& options) {
  if (templates.empty()) throw Error(ErrorCode::InvalidInput, "no probe templates");
  TokenProbeResult result;
  result.occupation = occupation;
  std::optional<std::string> system;
  if (mode == SystemPromptMode::Default) system = options.default_system_prompt;

  for (const auto& t : templates) {
    ChatRequest req;
    req.system_prompt = system;
    req.user_prompt = render_probe_prompt(t, occupation);
    req.temperature = 0.0;
    req.logprobs = LogprobOptions{options.top_k};
    double p_a = 0.0;
    double p_b = 0.0;
    try {
      const ChatResponse resp = chat(model, req);
      for (const auto& tok : *resp.first_token_logprobs) {
        const std::string letter = option_letter(tok.token);
        if (letter == "A") p_a += std::exp(tok.logprob);
        if (letter == "B") p_b += std::exp(tok.logprob);
      }
      if (!(p_a + p_b > 0.0)) {
        throw Error(ErrorCode::EndpointError, "neither option appears among the top logprobs");
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::LogprobsUnsupported || !options.sampling_fallback) throw;
      result.estimated_by_sampling = true;
      req.logprobs.reset();
      req.temperature = 1.0;
      p_a = p_b = 0.0;
      for (int k = 0; k < options.fallback_samples; ++k) {
        req.seed = options.seed + k;
        const std::string letter = option_letter(text::trim(chat(model, req).text).substr(0, 1));
        if (letter == "A") p_a += 1.0;
        if (letter == "B") p_b += 1.0;
      }
    }
    result.per_template.push_back(template_bias(p_a, p_b, t));
  }
  result.bias = stable_mean(result.per_template);
  result.skew = classify_skew(result.bias, options.neutral_threshold);
  return result;
}

json SkewShiftSummary::to_json() const {
  json rows = json::object();
  for (int from = 0; from < 3; ++from) {
    json row = json::object();
    for (int to = 0; to < 3; ++to) row[std::string(to_string(static_cast<Skew>(to)))] = transitions[from][to];
    rows[std::string(to_string(static_cast<Skew>(from)))] = row;
  }
  return {{"transitions", rows},
          {"male_to_neutral", male_to_neutral ? json(*male_to_neutral) : json(nullptr)},
          {"female_to_neutral", female_to_neutral ? json(*female_to_neutral) : json(nullptr)}};
}

SkewShiftSummary skew_shift_summary(const std::vector<TokenProbeResult>& default_results,
                                    const std::vector<TokenProbeResult>& none_results) {
  std::map<std::string, Skew> none_by_occupation;
  for (const auto& r : none_results) none_by_occupation[r.occupation] = r.skew;
  SkewShiftSummary s;
  for (const auto& r : default_results) {
    const auto it = none_by_occupation.find(r.occupation);
    if (it == none_by_occupation.end()) {
      throw Error(ErrorCode::KeyMismatch, "no none-mode result for '" + r.occupation + "'");
    }
    ++s.transitions[static_cast<int>(r.skew)][static_cast<int>(it->second)];
  }
  auto fraction = [&](Skew from) -> std::optional<double> {
    const auto& row = s.transitions[static_cast<int>(from)];
    const std::size_t total = row[0] + row[1] + row[2];
    if (total == 0) return std::nullopt;
    return static_cast<double>(row[static_cast<int>(Skew::Neutral)]) / static_cast<double>(total);
  };
  s.male_to_neutral = fraction(Skew::MaleSkewed);
  s.female_to_neutral = fraction(Skew::FemaleSkewed);
  return s;
}

TokenProbeAggregate aggregate_token_bias(const std::vector<TokenProbeResult>& results) {
  if (results.empty()) throw Error(ErrorCode::InvalidInput, "no probe results to aggregate");
  std::vector<double> abs_v, signed_v;
  for (const auto& r : results) {
    abs_v.push_back(std::abs(r.bias));
    signed_v.push_back(r.bias);
  }
  return {stable_mean(abs_v), stable_mean(signed_v)};
}

// --- embedding association ------------------------------------------------------

double association_score(const Embedding& male_concept, const Embedding& female_concept,
                         const Embedding& occupation) {
  return alignment_score(male_concept, occupation) - alignment_score(female_concept, occupation);
}

Embedding concept_vector(const std::vector<Embedding>& word_embeddings) {
  if (word_embeddings.empty()) throw Error(ErrorCode::InvalidInput, "concept with no words");
  Embedding mean(word_embeddings.front().size(), 0.0);
  for (const auto& e : word_embeddings) {
    if (e.size() != mean.size()) throw Error(ErrorCode::EmbeddingShapeError, "concept embeddings differ in size");
    const Embedding u = normalized(e);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += u[i];
  }
  for (double& x : mean) x /= static_cast<double>(word_embeddings.size());
  return normalized(std::move(mean));
}

json EmbeddingAssociationReport::to_json() const {
  json its = json::array();
  for (const auto& i : items) its.push_back({{"occupation", i.occupation}, {"b", i.b}});
  return {{"items", its}, {"mean_abs", mean_abs}, {"mean_signed", mean_signed}, {"warnings", warnings}};
}

EmbeddingAssociationReport embedding_association(const std::vector<std::string>& occupation_texts,
                                                 const WordCategoryLexicon& lexicon, EmbeddingModel& model,
                                                 const std::optional<std::string>& system_prompt) {
  if (occupation_texts.empty()) throw Error(ErrorCode::InvalidInput, "no occupations to embed");
  const Embedding gm = concept_vector(embed(model, lexicon.male_concepts(), system_prompt));
  const Embedding gf = concept_vector(embed(model, lexicon.female_concepts(), system_prompt));
  const auto occ = embed(model, occupation_texts, system_prompt);

  EmbeddingAssociationReport report;
  std::vector<double> abs_v, signed_v;
  for (std::size_t i = 0; i < occ.size(); ++i) {
    if (occ[i].size() != gm.size()) {
      throw Error(ErrorCode::EmbeddingShapeError, "occupation and concept embeddings differ in size");
    }
    const double b = association_score(gm, gf, occ[i]);
    report.items.push_back({occupation_texts[i], b});
    abs_v.push_back(std::abs(b));
    signed_v.push_back(b);
  }
  report.mean_abs = stable_mean(abs_v);
  report.mean_signed = stable_mean(signed_v);
  if (alignment_score(gm, gf) > 0.99) {
    report.warnings.push_back("male and female concept vectors are nearly identical");
  }
  return report;
}

}  // namespace fairlens
