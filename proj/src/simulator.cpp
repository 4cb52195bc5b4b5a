#include "fairlens/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fairlens/error.hpp"
#include "fairlens/lexicon.hpp"
#include "fairlens/rng.hpp"
#include "fairlens/text.hpp"

namespace fairlens {

using nlohmann::json;

std::string_view to_string(RewriteBehavior b) {
  switch (b) {
    case RewriteBehavior::Echo: return "echo";
    case RewriteBehavior::Verbose: return "verbose";
    case RewriteBehavior::InjectDemographic: return "inject-demographic";
  }
  return "echo";
}

RewriteBehavior parse_rewrite_behavior(std::string_view name) {
  const std::string n = text::to_lower(name);
  if (n == "echo") return RewriteBehavior::Echo;
  if (n == "verbose") return RewriteBehavior::Verbose;
  if (n == "inject-demographic" || n == "inject_demographic") return RewriteBehavior::InjectDemographic;
  throw Error(ErrorCode::ConfigError, "unknown rewrite behavior '" + std::string(name) + "'");
}

bool contains_fairness_marker(std::string_view system_prompt) {
  const std::string lower = text::to_lower(system_prompt);
  return std::any_of(std::begin(kFairnessMarkers), std::end(kFairnessMarkers),
                     [&](const char* m) { return lower.find(m) != std::string::npos; });
}

// --- spec ----------------------------------------------------------------------

namespace {

void check_distribution(const std::vector<double>& p, std::size_t n, const std::string& where) {
  if (p.size() != n) {
    throw Error(ErrorCode::ConfigError, where + ": expected " + std::to_string(n) + " probabilities");
  }
  double sum = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) throw Error(ErrorCode::ConfigError, where + ": negative probability");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw Error(ErrorCode::ConfigError, where + ": probabilities must sum to 1");
}

void check_unit(double x, const std::string& what) {
  if (!(x >= 0.0 && x <= 1.0)) throw Error(ErrorCode::ConfigError, what + " must lie in [0, 1]");
}

std::vector<double> mix_uniform(std::vector<double> p, double weight) {
  if (weight <= 0.0) return p;
  const double u = 1.0 / static_cast<double>(p.size());
  for (double& x : p) x = (1.0 - weight) * x + weight * u;
  return p;
}

// Deterministic unit vector for a key; components are Box-Muller normals.
Embedding hashed_unit_vector(std::string_view key, std::size_t dim) {
  SeededRng rng(stable_hash(key));
  Embedding v(dim);
  for (std::size_t i = 0; i < dim; i += 2) {
    const double u1 = 1.0 - rng.uniform01();
    const double u2 = rng.uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    v[i] = r * std::cos(2.0 * M_PI * u2);
    if (i + 1 < dim) v[i + 1] = r * std::sin(2.0 * M_PI * u2);
  }
  return normalized(std::move(v));
}

void axpy(Embedding& y, double a, const Embedding& x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

std::vector<std::string> word_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text::to_lower(s)) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur += c;
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// Text after `marker` up to the next blank line.
std::optional<std::string> block_after(std::string_view s, std::string_view marker) {
  const auto pos = s.find(marker);
  if (pos == std::string_view::npos) return std::nullopt;
  std::string_view rest = s.substr(pos + marker.size());
  const auto end = rest.find("\n\n");
  std::string out = text::trim(rest.substr(0, end));
  if (out.empty()) return std::nullopt;
  return out;
}

std::size_t inverse_cdf(const std::vector<double>& p, double u) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  // Rounding can leave the total just under one; fall to the last class with mass.
  for (std::size_t i = p.size(); i-- > 0;) {
    if (p[i] > 0.0) return i;
  }
  return p.size() - 1;
}

}  // namespace

void SimulatedModelSpec::validate(const AttributeTaxonomy& taxonomy) const {
  for (const auto& [occupation, cats] : priors) {
    for (const auto& [name, probs] : cats) {
      const auto* cat = taxonomy.find(name);
      if (!cat) throw Error(ErrorCode::ConfigError, "prior for unknown category '" + name + "'");
      check_distribution(probs, cat->classes.size(), "prior " + occupation + "/" + name);
    }
  }
  for (const auto& [name, probs] : default_prior) {
    const auto* cat = taxonomy.find(name);
    if (!cat) throw Error(ErrorCode::ConfigError, "default prior for unknown category '" + name + "'");
    check_distribution(probs, cat->classes.size(), "default prior " + name);
  }
  check_unit(fairness_sensitivity, "fairness_sensitivity");
  check_unit(no_system_prompt_shrink, "no_system_prompt_shrink");
  check_unit(token_probe.p_a, "token_probe.p_a");
  check_unit(token_probe.p_male, "token_probe.p_male");
  check_unit(token_probe.none_shrink, "token_probe.none_shrink");
  for (const auto& [occ, p] : token_probe.per_occupation) check_unit(p, "token_probe p_male for " + occ);
  if (embedding_dim < 2) throw Error(ErrorCode::ConfigError, "embedding_dim must be >= 2");
}

json SimulatedModelSpec::to_json() const {
  json tp = {{"mode", token_probe.mode == TokenProbeProfile::Mode::Fixed ? "fixed" : "gender"},
             {"p_a", token_probe.p_a},
             {"p_male", token_probe.p_male},
             {"per_occupation", token_probe.per_occupation},
             {"none_shrink", token_probe.none_shrink},
             {"supports_logprobs", token_probe.supports_logprobs},
             {"spelling_variants", token_probe.spelling_variants}};
  json scripts = json::array();
  for (const auto& s : scripted) scripts.push_back({{"contains", s.contains}, {"reply", s.reply}});
  return {{"priors", priors},
          {"default_prior", default_prior},
          {"fairness_sensitivity", fairness_sensitivity},
          {"no_system_prompt_shrink", no_system_prompt_shrink},
          {"rewrite_behavior", std::string(fairlens::to_string(rewrite_behavior))},
          {"default_system_prompts", default_system_prompts},
          {"token_probe", tp},
          {"scripted", scripts},
          {"embedding_dim", embedding_dim},
          {"embedding_gender_strength", embedding_gender_strength}};
}

SimulatedModelSpec SimulatedModelSpec::from_json(const json& j) {
  SimulatedModelSpec s;
  if (j.contains("priors")) s.priors = j["priors"].get<decltype(s.priors)>();
  if (j.contains("default_prior")) s.default_prior = j["default_prior"].get<decltype(s.default_prior)>();
  s.fairness_sensitivity = j.value("fairness_sensitivity", 0.0);
  s.no_system_prompt_shrink = j.value("no_system_prompt_shrink", 0.0);
  s.rewrite_behavior = parse_rewrite_behavior(j.value("rewrite_behavior", std::string("echo")));
  s.default_system_prompts = j.value("default_system_prompts", std::vector<std::string>{});
  if (j.contains("token_probe")) {
    const auto& tp = j["token_probe"];
    const std::string mode = tp.value("mode", std::string("gender"));
    if (mode != "fixed" && mode != "gender") throw Error(ErrorCode::ConfigError, "unknown token_probe mode");
    s.token_probe.mode = mode == "fixed" ? TokenProbeProfile::Mode::Fixed : TokenProbeProfile::Mode::Gender;
    s.token_probe.p_a = tp.value("p_a", 0.5);
    s.token_probe.p_male = tp.value("p_male", 0.5);
    s.token_probe.per_occupation = tp.value("per_occupation", std::map<std::string, double>{});
    s.token_probe.none_shrink = tp.value("none_shrink", 0.0);
    s.token_probe.supports_logprobs = tp.value("supports_logprobs", true);
    s.token_probe.spelling_variants = tp.value("spelling_variants", false);
  }
  for (const auto& sc : j.value("scripted", json::array())) {
    s.scripted.push_back({sc.at("contains").get<std::string>(), sc.at("reply").get<std::string>()});
  }
  s.embedding_dim = j.value("embedding_dim", std::size_t{64});
  s.embedding_gender_strength = j.value("embedding_gender_strength", 0.6);
  return s;
}

// --- model -----------------------------------------------------------------------

SimulatedModel::SimulatedModel(SimulatedModelSpec spec, AttributeTaxonomy taxonomy)
    : spec_(std::move(spec)), taxonomy_(std::move(taxonomy)) {
  spec_.validate(taxonomy_);
  std::map<std::string, std::string> nouns;
  for (const auto& occ : default_occupations()) nouns.emplace(text::to_lower(text::strip_article(occ)), occ);
  for (const auto& [occ, _] : spec_.priors) nouns[text::to_lower(text::strip_article(occ))] = occ;
  for (const auto& [occ, _] : spec_.token_probe.per_occupation) {
    nouns[text::to_lower(text::strip_article(occ))] = occ;
  }
  occupation_nouns_.assign(nouns.begin(), nouns.end());
  std::stable_sort(occupation_nouns_.begin(), occupation_nouns_.end(),
                   [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
}

std::optional<std::string> SimulatedModel::detect_occupation(std::string_view text) const {
  const std::string lower = text::to_lower(text);
  for (const auto& [noun, article_form] : occupation_nouns_) {
    if (lower.find(noun) != std::string::npos && text::contains_word(lower, noun)) return article_form;
  }
  return std::nullopt;
}

bool SimulatedModel::is_fairness_aware(const std::optional<std::string>& system_prompt) const {
  if (!system_prompt) return false;
  const std::string trimmed = text::trim(*system_prompt);
  for (const auto& d : spec_.default_system_prompts) {
    if (text::trim(d) == trimmed) return false;
  }
  return contains_fairness_marker(*system_prompt);
}

std::vector<double> SimulatedModel::effective_prior(std::string_view user_prompt,
                                                    const std::optional<std::string>& system_prompt,
                                                    const std::string& category) const {
  const AttributeCategory& cat = taxonomy_.category(category);
  const std::size_t n = cat.classes.size();

  // An attribute written into the prompt is rendered as asked.
  std::optional<std::size_t> named;
  std::size_t named_len = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (cat.classes[i].size() > named_len && text::contains_word(user_prompt, cat.classes[i])) {
      named = i;
      named_len = cat.classes[i].size();
    }
  }
  if (named) {
    std::vector<double> one_hot(n, 0.0);
    one_hot[*named] = 1.0;
    return one_hot;
  }

  std::vector<double> p(n, 1.0 / static_cast<double>(n));
  bool found = false;
  if (auto occ = detect_occupation(user_prompt)) {
    if (auto it = spec_.priors.find(*occ); it != spec_.priors.end()) {
      if (auto c = it->second.find(category); c != it->second.end()) {
        p = c->second;
        found = true;
      }
    }
  }
  if (!found) {
    if (auto it = spec_.default_prior.find(category); it != spec_.default_prior.end()) p = it->second;
  }

  // Only the system prompt steers the sampler; fairness wording in the user
  // prompt changes the scene, not who is drawn.
  if (is_fairness_aware(system_prompt)) p = mix_uniform(std::move(p), spec_.fairness_sensitivity);
  if (!system_prompt) p = mix_uniform(std::move(p), spec_.no_system_prompt_shrink);
  return p;
}

double SimulatedModel::occupation_p_male(std::string_view text) const {
  const auto occ = detect_occupation(text);
  if (occ) {
    if (auto it = spec_.token_probe.per_occupation.find(*occ); it != spec_.token_probe.per_occupation.end()) {
      return it->second;
    }
    if (auto it = spec_.priors.find(*occ); it != spec_.priors.end()) {
      if (auto g = it->second.find("gender"); g != it->second.end()) {
        if (auto idx = taxonomy_.class_index("gender", "male")) return g->second[*idx];
      }
    }
  }
  return spec_.token_probe.p_male;
}

ChatResponse SimulatedModel::complete(const ChatRequest& request) {
  chat_calls_.fetch_add(1);
  for (const auto& s : spec_.scripted) {
    if (request.user_prompt.find(s.contains) != std::string::npos) return {s.reply, std::nullopt};
  }
  if (request.logprobs) return answer_probe(request);
  if (request.image) return answer_judge(request);
  if (request.user_prompt.find("unbiased assistant") != std::string::npos) return answer_meta(request);
  return answer_generic(request);
}

ChatResponse SimulatedModel::answer_probe(const ChatRequest& request) const {
  const auto& tp = spec_.token_probe;
  double p_a = tp.p_a;
  if (tp.mode == TokenProbeProfile::Mode::Gender) {
    double p_male = occupation_p_male(request.user_prompt);
    if (!request.system_prompt) p_male = 0.5 + (p_male - 0.5) * (1.0 - tp.none_shrink);
    if (is_fairness_aware(request.system_prompt)) {
      p_male = 0.5 + (p_male - 0.5) * (1.0 - spec_.fairness_sensitivity);
    }
    // Option A's gender is read off its sentence.
    bool a_is_male = true;
    for (const auto& line : text::split_lines(request.user_prompt)) {
      const std::string t = text::trim(line);
      if (t.rfind("A. ", 0) == 0) {
        const auto counts = WordCategoryLexicon::default_lexicon().count(t.substr(3), Dimension::Gender);
        const auto m = counts.count("male") ? counts.at("male") : 0;
        const auto f = counts.count("female") ? counts.at("female") : 0;
        a_is_male = m >= f;
        break;
      }
    }
    p_a = a_is_male ? p_male : 1.0 - p_male;
  }
  const double p_b = 1.0 - p_a;
  ChatResponse r;
  r.text = p_a >= p_b ? "A" : "B";
  if (!tp.supports_logprobs) return r;
  std::vector<TokenLogprob> lps;
  const double main_share = tp.spelling_variants ? 0.9 : 1.0;
  for (const auto& [label, p] : {std::pair{std::string("A"), p_a}, std::pair{std::string("B"), p_b}}) {
    if (p <= 0.0) continue;
    lps.push_back({label, std::log(main_share * p)});
    if (tp.spelling_variants) lps.push_back({" " + label, std::log((1.0 - main_share) * p)});
  }
  std::stable_sort(lps.begin(), lps.end(), [](const auto& x, const auto& y) { return x.logprob > y.logprob; });
  if (lps.size() > static_cast<std::size_t>(std::max(request.logprobs->top_k, 1))) {
    lps.resize(static_cast<std::size_t>(std::max(request.logprobs->top_k, 1)));
  }
  r.first_token_logprobs = std::move(lps);
  return r;
}

ChatResponse SimulatedModel::answer_judge(const ChatRequest& request) const {
  const std::string lower = text::to_lower(request.user_prompt);
  for (const auto& cat : taxonomy_.categories()) {
    const std::string spoken = text::replace_all(cat.name, "_", " ");
    if (lower.find("perceived " + spoken + " ") == std::string::npos) continue;
    const auto it = request.image->metadata.find(cat.name);
    if (it == request.image->metadata.end()) return {"Unknown", std::nullopt};
    return {text::title_case(it->second), std::nullopt};
  }
  return {"Unknown", std::nullopt};
}

ChatResponse SimulatedModel::answer_meta(const ChatRequest& request) const {
  const std::string& prompt = request.user_prompt;
  const auto payload = block_after(prompt, "Consider the following user prompt:");
  const auto occ = payload ? detect_occupation(*payload) : std::nullopt;
  const std::string subject = occ ? text::strip_article(*occ) : std::string("person");
  const std::string plural = subject + "s";

  std::string reasoning;
  if (occ) {
    reasoning = "The prompt asks for " + *occ + " without describing the person. " +
                text::capitalize_first(plural) +
                " are often portrayed as one gender and one age group, and a default description "
                "would repeat that stereotype. Ethnicity and body type would also drift toward the "
                "most common depiction.";
  } else {
    reasoning = "Prompts that leave the person unspecified tend to produce the most stereotypical "
                "depiction of their role, narrowing gender, age and ethnicity.";
  }
  if (prompt.find("Output only the analysis") != std::string::npos) return {reasoning, std::nullopt};

  const bool cot = prompt.find("analysis") != std::string::npos;
  if (prompt.find("<user_prompt>") != std::string::npos) {
    const std::string base = payload ? *payload : std::string("a person");
    std::string out = cot ? reasoning + "\n\n" : std::string{};
    out += "<user_prompt>\n" + base +
           ", shown as someone of any gender, age or ethnicity, reflecting the diverse people who "
           "do this work\n</user_prompt>";
    return {out, std::nullopt};
  }

  const std::string instruction =
      "Describe " + text::with_article(subject) +
      " in rich visual detail, depicting people of diverse genders, ages, ethnicities and body "
      "types and avoiding stereotypes about who does this work.";
  std::string out = cot ? reasoning + "\n\n" : std::string{};
  if (prompt.find("<system_prompt>") != std::string::npos) {
    out += "<system_prompt>\n" + instruction + "\n</system_prompt>";
  } else {
    out += "Revised System Instruction:\n" + instruction + "\nUser Prompt:";
  }
  return {out, std::nullopt};
}

ChatResponse SimulatedModel::answer_generic(const ChatRequest& request) const {
  std::string payload = text::trim(request.user_prompt);
  if (auto block = block_after(request.user_prompt, "Consider the following user prompt:")) {
    payload = *block;
  } else {
    const auto lines = text::split_lines(request.user_prompt);
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
      const std::string t = text::trim(*it);
      if (t.rfind("Prompt:", 0) == 0) {
        payload = text::trim(std::string_view(t).substr(7));
        break;
      }
    }
  }
  switch (spec_.rewrite_behavior) {
    case RewriteBehavior::Echo:
      return {payload, std::nullopt};
    case RewriteBehavior::Verbose:
      return {text::capitalize_first(payload) +
                  ", photographed in soft natural light with a detailed background and sharp focus",
              std::nullopt};
    case RewriteBehavior::InjectDemographic: {
      const auto prior = effective_prior(payload, request.system_prompt, "gender");
      const auto occ = detect_occupation(payload);
      std::uint64_t h = stable_hash(occ ? *occ : payload);
      h = hash_combine(h, static_cast<std::uint64_t>(request.seed.value_or(0)));
      h = hash_combine(h, stable_hash("decode"));
      const std::size_t cls = inverse_cdf(prior, unit_interval(h));
      const auto male = taxonomy_.class_index("gender", "male");
      const std::string pronoun = male && cls == *male ? "his" : "her";
      return {text::capitalize_first(payload) + " at work, " + pronoun +
                  " expression focused, photographed in soft natural light",
              std::nullopt};
    }
  }
  return {payload, std::nullopt};
}

Embedding SimulatedModel::text_vector(std::string_view text,
                                      const std::optional<std::string>& system_prompt) const {
  const std::size_t dim = spec_.embedding_dim;
  const std::string full = system_prompt ? *system_prompt + "\n" + std::string(text) : std::string(text);
  const auto tokens = word_tokens(full);
  Embedding v(dim, 0.0);
  for (const auto& t : tokens) axpy(v, 1.0, hashed_unit_vector("tok:" + t, dim));
  if (!tokens.empty()) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(tokens.size()));
    for (double& x : v) x *= scale;
  }

  const auto& lex = WordCategoryLexicon::default_lexicon();
  double gender = 0.0;
  for (const auto& t : word_tokens(text)) {
    if (std::find(lex.male_concepts().begin(), lex.male_concepts().end(), t) != lex.male_concepts().end()) {
      gender += 1.0;
    }
    if (std::find(lex.female_concepts().begin(), lex.female_concepts().end(), t) !=
        lex.female_concepts().end()) {
      gender -= 1.0;
    }
  }
  if (detect_occupation(text)) {
    double skew = 2.0 * (occupation_p_male(text) - 0.5);
    if (!system_prompt) skew *= 1.0 - spec_.token_probe.none_shrink;
    if (is_fairness_aware(system_prompt)) skew *= 1.0 - spec_.fairness_sensitivity;
    gender += skew;
  }
  axpy(v, spec_.embedding_gender_strength * gender, hashed_unit_vector("axis:gender", dim));
  if (l2_norm(v) == 0.0) v = hashed_unit_vector("empty", dim);
  return v;
}

std::vector<Embedding> SimulatedModel::embed_raw(const std::vector<std::string>& texts,
                                                 const std::optional<std::string>& system_prompt) {
  embed_calls_.fetch_add(1);
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(text_vector(t, system_prompt));
  return out;
}

ImageResult SimulatedModel::generate(const ImageRequest& request) {
  image_calls_.fetch_add(1);
  const auto occ = detect_occupation(request.user_prompt);
  const std::uint64_t base =
      hash_combine(stable_hash(occ ? *occ : request.user_prompt), static_cast<std::uint64_t>(request.seed));

  ImageResult result;
  const std::size_t dim = spec_.embedding_dim;
  Embedding classes(dim, 0.0);
  for (const auto& cat : taxonomy_.categories()) {
    const auto prior = effective_prior(request.user_prompt, request.system_prompt, cat.name);
    const std::size_t idx = inverse_cdf(prior, unit_interval(hash_combine(base, stable_hash(cat.name))));
    result.ground_truth[cat.name] = cat.classes[idx];
    axpy(classes, 1.0, hashed_unit_vector("class:" + cat.name + ":" + cat.classes[idx], dim));
  }

  json wire = request.to_wire("simulator");
  const std::string digest = sha256_hex(wire.dump());
  result.image_ref = "sim://image/" + digest.substr(0, 24);
  result.raw_response_digest = digest;

  Embedding img(dim, 0.0);
  axpy(img, 0.8, normalized(text_vector(request.user_prompt, std::nullopt)));
  axpy(img, 0.5 / std::sqrt(static_cast<double>(taxonomy_.categories().size())), classes);
  axpy(img, 0.3, hashed_unit_vector("noise:" + digest, dim));
  result.image_embedding = normalized(std::move(img));
  return result;
}

}  // namespace fairlens
