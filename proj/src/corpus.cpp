#include "fairlens/corpus.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "fairlens/assets.hpp"
#include "fairlens/lexicon.hpp"
#include "fairlens/modelio.hpp"
#include "fairlens/parallel.hpp"
#include "fairlens/rng.hpp"
#include "fairlens/text.hpp"

namespace fairlens {

// --- taxonomy ---------------------------------------------------------------

AttributeTaxonomy::AttributeTaxonomy(std::vector<AttributeCategory> categories)
    : categories_(std::move(categories)) {
  std::set<std::string> names;
  for (const auto& c : categories_) {
    if (c.name.empty()) throw Error(ErrorCode::InvalidInput, "category with empty name");
    if (!names.insert(c.name).second) {
      throw Error(ErrorCode::InvalidInput, "duplicate category '" + c.name + "'");
    }
    if (c.classes.size() < 2) {
      throw Error(ErrorCode::InvalidInput, "category '" + c.name + "' needs at least 2 classes");
    }
    std::set<std::string> labels;
    for (const auto& label : c.classes) {
      if (label.empty()) throw Error(ErrorCode::InvalidInput, "empty class in '" + c.name + "'");
      if (!labels.insert(label).second) {
        throw Error(ErrorCode::InvalidInput, "duplicate class '" + label + "' in '" + c.name + "'");
      }
    }
  }
}

const AttributeTaxonomy& AttributeTaxonomy::default_taxonomy() {
  static const AttributeTaxonomy taxonomy =
      from_json(nlohmann::json::parse(assets::raw("taxonomy.json")));
  return taxonomy;
}

AttributeTaxonomy AttributeTaxonomy::from_json(const nlohmann::json& doc) {
  std::vector<AttributeCategory> cats;
  for (const auto& c : doc.at("categories")) {
    cats.push_back({c.at("name").get<std::string>(), c.at("classes").get<std::vector<std::string>>()});
  }
  return AttributeTaxonomy(std::move(cats));
}

nlohmann::json AttributeTaxonomy::to_json() const {
  nlohmann::json cats = nlohmann::json::array();
  for (const auto& c : categories_) cats.push_back({{"name", c.name}, {"classes", c.classes}});
  return {{"categories", cats}};
}

const AttributeCategory* AttributeTaxonomy::find(std::string_view name) const {
  for (const auto& c : categories_) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

const AttributeCategory& AttributeTaxonomy::category(std::string_view name) const {
  if (const auto* c = find(name)) return *c;
  throw Error(ErrorCode::InvalidInput, "unknown category '" + std::string(name) + "'");
}

std::optional<std::size_t> AttributeTaxonomy::class_index(std::string_view category,
                                                          std::string_view label) const {
  const auto* c = find(category);
  if (c == nullptr) return std::nullopt;
  const std::string lower = text::to_lower(label);
  for (std::size_t i = 0; i < c->classes.size(); ++i) {
    if (text::to_lower(c->classes[i]) == lower) return i;
  }
  return std::nullopt;
}

std::vector<std::string> AttributeTaxonomy::category_names() const {
  std::vector<std::string> names;
  for (const auto& c : categories_) names.push_back(c.name);
  return names;
}

std::size_t AttributeTaxonomy::total_classes() const {
  std::size_t n = 0;
  for (const auto& c : categories_) n += c.classes.size();
  return n;
}

// --- prompts ----------------------------------------------------------------

std::string_view to_string(PromptLevel level) {
  switch (level) {
    case PromptLevel::Occupation: return "occupation";
    case PromptLevel::Simple: return "simple";
    case PromptLevel::Context: return "context";
    case PromptLevel::Rewritten: return "rewritten";
  }
  return "occupation";
}

PromptLevel parse_level(std::string_view name) {
  const std::string n = text::to_lower(text::trim(name));
  for (auto level : kAllLevels) {
    if (to_string(level) == n) return level;
  }
  throw Error(ErrorCode::InvalidInput, "unknown prompt level '" + std::string(name) + "'");
}

bool Prompt::specifies(std::string_view category) const {
  return std::any_of(explicit_attributes.begin(), explicit_attributes.end(),
                     [&](const Attribute& a) { return a.category == category; });
}

nlohmann::json Prompt::to_json() const {
  nlohmann::json attrs = nlohmann::json::object();
  for (const auto& a : explicit_attributes) attrs[a.category] = a.value;
  nlohmann::json diag = nlohmann::json::object();
  if (!diagnostics.empty()) diag["injected"] = diagnostics;
  return {{"id", id},
          {"level", std::string(to_string(level))},
          {"text", text},
          {"occupation", occupation},
          {"explicit_attributes", attrs},
          {"diagnostics", diag}};
}

Prompt Prompt::from_json(const nlohmann::json& j) {
  Prompt p;
  p.id = j.at("id").get<std::string>();
  p.level = parse_level(j.at("level").get<std::string>());
  p.text = j.at("text").get<std::string>();
  p.occupation = j.value("occupation", std::string{});
  if (j.contains("explicit_attributes")) {
    for (const auto& [k, v] : j["explicit_attributes"].items()) {
      p.explicit_attributes.insert({k, v.get<std::string>()});
    }
  }
  if (j.contains("diagnostics") && j["diagnostics"].contains("injected")) {
    p.diagnostics = j["diagnostics"]["injected"].get<std::map<std::string, std::vector<std::string>>>();
  }
  if (p.text.empty()) throw Error(ErrorCode::InvalidInput, "prompt '" + p.id + "' has empty text");
  return p;
}

PromptSet::PromptSet(std::vector<Prompt> prompts, AttributeTaxonomy taxonomy)
    : prompts_(std::move(prompts)), taxonomy_(std::move(taxonomy)) {
  std::set<std::string> ids;
  for (const auto& p : prompts_) {
    if (!ids.insert(p.id).second) throw Error(ErrorCode::InvalidInput, "duplicate prompt id '" + p.id + "'");
    for (const auto& a : p.explicit_attributes) {
      if (!taxonomy_.class_index(a.category, a.value)) {
        throw Error(ErrorCode::InvalidInput,
                    "prompt '" + p.id + "' names unknown attribute " + a.category + "=" + a.value);
      }
    }
  }
}

std::size_t PromptSet::count(PromptLevel level) const {
  return static_cast<std::size_t>(std::count_if(prompts_.begin(), prompts_.end(),
                                                [&](const Prompt& p) { return p.level == level; }));
}

const Prompt* PromptSet::find(std::string_view id) const {
  for (const auto& p : prompts_) {
    if (p.id == id) return &p;
  }
  return nullptr;
}

std::vector<const Prompt*> PromptSet::evaluation_set(std::string_view category,
                                                     std::optional<PromptLevel> level) const {
  std::vector<const Prompt*> out;
  for (const auto& p : prompts_) {
    if (level && p.level != *level) continue;
    if (!p.specifies(category)) out.push_back(&p);
  }
  return out;
}

void PromptSet::require_level_count(std::size_t per_level) const {
  for (auto level : kAllLevels) {
    const std::size_t n = count(level);
    if (n != per_level) {
      throw Error(ErrorCode::InvalidInput, "level " + std::string(to_string(level)) + " has " +
                                               std::to_string(n) + " prompts, expected " +
                                               std::to_string(per_level));
    }
  }
}

void PromptSet::write_jsonl(std::ostream& out) const {
  for (const auto& p : prompts_) out << p.to_json().dump() << '\n';
}

std::vector<Prompt> PromptSet::read_jsonl(std::istream& in) {
  std::vector<Prompt> prompts;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    prompts.push_back(Prompt::from_json(nlohmann::json::parse(line)));
  }
  return prompts;
}

// --- builders ---------------------------------------------------------------

const ActionBank& ActionBank::default_bank() {
  static const ActionBank bank = from_json(nlohmann::json::parse(assets::raw("actions.json")));
  return bank;
}

ActionBank ActionBank::from_json(const nlohmann::json& doc) {
  ActionBank bank;
  bank.generic = doc.value("generic", std::vector<std::string>{});
  if (doc.contains("occupations")) {
    bank.by_occupation = doc["occupations"].get<std::map<std::string, std::vector<std::string>>>();
  }
  return bank;
}

const std::vector<std::string>& ActionBank::candidates(const std::string& occupation) const {
  auto it = by_occupation.find(occupation);
  if (it != by_occupation.end() && !it->second.empty()) return it->second;
  return generic;
}

std::vector<std::string> load_occupations(std::istream& source, std::vector<std::string>* warnings) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  std::string line;
  while (std::getline(source, line)) {
    std::string entry = text::to_lower(text::trim(line));
    if (entry.empty()) continue;
    std::istringstream words(entry);
    std::vector<std::string> parts;
    for (std::string w; words >> w;) parts.push_back(w);
    entry = text::join(parts, " ");
    if (parts.front() != "a" && parts.front() != "an") entry = text::with_article(entry);
    if (!seen.insert(entry).second) {
      if (warnings) warnings->push_back("duplicate occupation '" + entry + "' ignored");
      continue;
    }
    out.push_back(std::move(entry));
  }
  if (out.empty()) throw Error(ErrorCode::EmptyCorpus, "occupation source is empty");
  return out;
}

std::vector<std::string> default_occupations() {
  std::istringstream in{std::string(assets::raw("occupations.txt"))};
  return load_occupations(in);
}

std::string prompt_id(PromptLevel level, std::string_view occupation) {
  return std::string(to_string(level)) + "-" + text::slug(text::strip_article(occupation));
}

std::vector<Prompt> build_occupation(const std::vector<std::string>& occupations) {
  if (occupations.empty()) throw Error(ErrorCode::EmptyCorpus, "no occupations");
  std::vector<Prompt> out;
  for (const auto& occ : occupations) {
    Prompt p;
    p.id = prompt_id(PromptLevel::Occupation, occ);
    p.level = PromptLevel::Occupation;
    p.text = occ;
    p.occupation = occ;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Prompt> build_simple(const std::vector<std::string>& occupations,
                                 const AttributeTaxonomy& taxonomy, std::uint64_t seed) {
  if (occupations.empty()) throw Error(ErrorCode::EmptyCorpus, "no occupations");
  std::vector<Attribute> flat;
  for (const auto& c : taxonomy.categories()) {
    for (const auto& label : c.classes) flat.push_back({c.name, label});
  }
  SeededRng rng(seed);
  std::vector<Prompt> out;
  for (const auto& occ : occupations) {
    const Attribute& attr = flat[rng.uniform_index(flat.size())];
    Prompt p;
    p.id = prompt_id(PromptLevel::Simple, occ);
    p.level = PromptLevel::Simple;
    p.text = text::capitalize_first(attr.value) + " " + text::strip_article(occ);
    p.occupation = occ;
    p.explicit_attributes.insert(attr);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Prompt> build_context(const std::vector<Prompt>& simple_prompts, const ActionBank& actions,
                                  std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<Prompt> out;
  for (const auto& s : simple_prompts) {
    const auto& candidates = actions.candidates(s.occupation);
    if (candidates.empty()) {
      throw Error(ErrorCode::MissingAction, "no action phrase for '" + s.occupation + "'");
    }
    const std::string& action = candidates[rng.uniform_index(candidates.size())];
    const std::string noun = text::strip_article(s.occupation);
    std::string descriptor = noun;
    if (!s.explicit_attributes.empty()) {
      descriptor = text::to_lower(s.explicit_attributes.begin()->value) + " " + noun;
    }
    Prompt p;
    p.id = prompt_id(PromptLevel::Context, s.occupation);
    p.level = PromptLevel::Context;
    p.text = text::with_article(descriptor) + " is " + action;
    p.occupation = s.occupation;
    p.explicit_attributes = s.explicit_attributes;
    out.push_back(std::move(p));
  }
  return out;
}

RewriteFailed::RewriteFailed(std::string failed_id, std::vector<Prompt> partial, const std::string& cause)
    : Error(ErrorCode::RewriteFailed, "rewrite of '" + failed_id + "' failed: " + cause),
      failed_id_(std::move(failed_id)),
      partial_(std::move(partial)) {}

std::vector<Prompt> build_rewritten(const std::vector<Prompt>& occupation_prompts, ChatModel& rewriter,
                                    const WordCategoryLexicon& lexicon, const RewriteOptions& options,
                                    const std::vector<Prompt>& completed) {
  if (options.template_text.find("{prompt}") == std::string::npos) {
    throw Error(ErrorCode::InvalidInput, "rewrite template lacks the {prompt} placeholder");
  }
  std::map<std::string, const Prompt*> done;
  for (const auto& p : completed) done[p.id] = &p;

  std::exception_ptr error;
  auto results = parallel_map_partial(
      occupation_prompts.size(), options.parallelism,
      [&](std::size_t i) {
        const Prompt& src = occupation_prompts[i];
        const std::string id = prompt_id(PromptLevel::Rewritten, src.occupation);
        if (auto it = done.find(id); it != done.end()) return *it->second;

        ChatRequest req;
        req.user_prompt = text::replace_all(options.template_text, "{prompt}", src.text);
        req.temperature = kRewriteTemperature;
        req.seed = static_cast<std::int64_t>(options.seed);
        ChatResponse resp = chat(rewriter, req);
        if (text::trim(resp.text).empty()) {
          throw Error(ErrorCode::EndpointError, "rewriter returned empty text");
        }
        Prompt p;
        p.id = id;
        p.level = PromptLevel::Rewritten;
        p.text = std::move(resp.text);
        p.occupation = src.occupation;
        for (auto dim : {Dimension::Gender, Dimension::Age, Dimension::Ethnicity}) {
          auto found = lexicon.matches(p.text, dim);
          if (!found.empty()) p.diagnostics[std::string(to_string(dim))] = std::move(found);
        }
        return p;
      },
      error);

  std::vector<Prompt> out;
  std::string failed_id;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i]) {
      out.push_back(std::move(*results[i]));
    } else if (failed_id.empty()) {
      failed_id = prompt_id(PromptLevel::Rewritten, occupation_prompts[i].occupation);
    }
  }
  if (error) {
    std::string cause = "unknown error";
    try {
      std::rethrow_exception(error);
    } catch (const std::exception& e) {
      cause = e.what();
    }
    throw RewriteFailed(failed_id, std::move(out), cause);
  }
  return out;
}

}  // namespace fairlens
