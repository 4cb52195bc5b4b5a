#include "fairlens/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include "fairlens/cache.hpp"
#include "fairlens/error.hpp"
#include "fairlens/judge.hpp"
#include "fairlens/lexicon.hpp"
#include "fairlens/parallel.hpp"
#include "fairlens/text.hpp"

namespace fairlens {

using nlohmann::json;
namespace fs = std::filesystem;

// --- configuration -----------------------------------------------------------------

json ProbeConfig::to_json() const {
  return {{"tokens", tokens},
          {"embeddings", embeddings},
          {"decoded", decoded},
          {"neutral_threshold", neutral_threshold},
          {"sampling_fallback", sampling_fallback}};
}

ProbeConfig ProbeConfig::from_json(const json& j) {
  ProbeConfig p;
  p.tokens = j.value("tokens", false);
  p.embeddings = j.value("embeddings", false);
  p.decoded = j.value("decoded", false);
  p.neutral_threshold = j.value("neutral_threshold", 0.1);
  p.sampling_fallback = j.value("sampling_fallback", false);
  return p;
}

namespace {

ModelEndpoint simulated_endpoint(EndpointKind kind) {
  ModelEndpoint e;
  e.kind = kind;
  e.base_url = "sim://local";
  e.model_name = "simulator";
  return e;
}

const char* const kEndpointRoles[] = {"generator", "judge", "embedder", "meta", "rewriter"};

std::vector<ModelEndpoint*> endpoint_fields(RunConfig& c) {
  return {&c.generator, &c.judge, &c.embedder, &c.meta, &c.rewriter};
}

std::vector<const ModelEndpoint*> endpoint_fields(const RunConfig& c) {
  return {&c.generator, &c.judge, &c.embedder, &c.meta, &c.rewriter};
}

json optional_path(const std::optional<fs::path>& p) { return p ? json(p->generic_string()) : json(nullptr); }

void require_file(const std::optional<fs::path>& p, const char* what) {
  if (p && !fs::is_regular_file(*p)) {
    throw Error(ErrorCode::ConfigError, std::string(what) + " not found: " + p->string());
  }
}

}  // namespace

void RunConfig::validate() const {
  if (seeds.empty()) throw Error(ErrorCode::ConfigError, "at least one seed is required");
  if (std::set<std::int64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw Error(ErrorCode::ConfigError, "seeds must be distinct");
  }
  if (modes.empty()) throw Error(ErrorCode::ConfigError, "at least one mode is required");
  if (std::set<PromptMode>(modes.begin(), modes.end()).size() != modes.size()) {
    throw Error(ErrorCode::ConfigError, "modes must be distinct");
  }
  if (levels.empty()) throw Error(ErrorCode::ConfigError, "at least one prompt level is required");
  if (parallelism == 0) throw Error(ErrorCode::ConfigError, "parallelism must be >= 1");
  if (diversity_pairs == 0) throw Error(ErrorCode::ConfigError, "diversity_pairs must be >= 1");
  if (!(meta_temperature >= 0.0 && meta_temperature <= 2.0)) {
    throw Error(ErrorCode::ConfigError, "meta_temperature must lie in [0, 2]");
  }
  (void)fairlens::profile(profile);
  bool simulated = false;
  for (const auto* e : endpoint_fields(*this)) {
    e->validate();
    simulated |= e->is_simulated();
  }
  if (simulated && !simulator) throw Error(ErrorCode::ConfigError, "a sim:// endpoint needs a simulator spec");
  require_file(taxonomy_path, "taxonomy file");
  require_file(occupations_path, "occupations file");
  require_file(actions_path, "actions file");
}

json RunConfig::to_json() const {
  json levels_j = json::array();
  for (auto l : levels) levels_j.push_back(std::string(to_string(l)));
  json modes_j = json::array();
  for (auto m : modes) modes_j.push_back(std::string(to_string(m)));
  json endpoints = json::object();
  const auto fields = endpoint_fields(*this);
  for (std::size_t i = 0; i < fields.size(); ++i) endpoints[kEndpointRoles[i]] = fields[i]->to_json();
  return {{"model_name", model_name},
          {"profile", profile},
          {"endpoints", endpoints},
          {"simulator", simulator ? simulator->to_json() : json(nullptr)},
          {"levels", levels_j},
          {"modes", modes_j},
          {"seeds", seeds},
          {"taxonomy_path", optional_path(taxonomy_path)},
          {"occupations_path", optional_path(occupations_path)},
          {"actions_path", optional_path(actions_path)},
          {"occupations", occupations},
          {"corpus_seed", corpus_seed},
          {"meta_seed", meta_seed},
          {"meta_temperature", meta_temperature},
          {"diversity_pairs", diversity_pairs},
          {"probes", probes.to_json()},
          {"parallelism", parallelism},
          {"output_dir", output_dir.generic_string()}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  c.model_name = j.value("model_name", c.model_name);
  c.profile = j.value("profile", c.profile);
  const json endpoints = j.value("endpoints", json::object());
  const auto fields = endpoint_fields(c);
  const EndpointKind kinds[] = {EndpointKind::ImageGen, EndpointKind::Chat, EndpointKind::Embedding,
                                EndpointKind::Chat, EndpointKind::Chat};
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (endpoints.contains(kEndpointRoles[i])) {
      json e = endpoints[kEndpointRoles[i]];
      if (!e.contains("kind")) e["kind"] = std::string(to_string(kinds[i]));
      *fields[i] = ModelEndpoint::from_json(e);
    } else {
      *fields[i] = simulated_endpoint(kinds[i]);
    }
  }
  if (j.contains("simulator") && !j["simulator"].is_null()) {
    c.simulator = SimulatedModelSpec::from_json(j["simulator"]);
  }
  if (j.contains("levels")) {
    c.levels.clear();
    for (const auto& l : j["levels"]) c.levels.push_back(parse_level(l.get<std::string>()));
  }
  if (j.contains("modes")) {
    c.modes.clear();
    for (const auto& m : j["modes"]) c.modes.push_back(parse_prompt_mode(m.get<std::string>()));
  }
  if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::int64_t>>();
  auto path_of = [&](const char* key) -> std::optional<fs::path> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return fs::path(j[key].get<std::string>());
  };
  c.taxonomy_path = path_of("taxonomy_path");
  c.occupations_path = path_of("occupations_path");
  c.actions_path = path_of("actions_path");
  c.occupations = j.value("occupations", std::vector<std::string>{});
  c.corpus_seed = j.value("corpus_seed", std::uint64_t{0});
  c.meta_seed = j.value("meta_seed", std::int64_t{0});
  c.meta_temperature = j.value("meta_temperature", 0.7);
  c.diversity_pairs = j.value("diversity_pairs", std::size_t{4});
  if (j.contains("probes")) c.probes = ProbeConfig::from_json(j["probes"]);
  c.parallelism = j.value("parallelism", std::size_t{4});
  c.output_dir = j.value("output_dir", std::string("run"));
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, "malformed config " + path.string() + ": " + e.what());
  }
  RunConfig c = from_json(doc);
  // Relative paths are resolved against the config file's directory.
  const fs::path base = path.parent_path();
  for (auto* p : {&c.taxonomy_path, &c.occupations_path, &c.actions_path}) {
    if (*p && p->value().is_relative()) *p = base / p->value();
  }
  c.validate();
  return c;
}

std::string RunConfig::digest() const {
  json j = to_json();
  j.erase("parallelism");
  j.erase("output_dir");
  j["tool_version"] = std::string(kToolVersion);
  return sha256_hex(j.dump());
}

RunConfig RunConfig::desk_preset() {
  RunConfig c;
  c.model_name = "simulated (desk preset)";
  c.profile = "qwen-image";
  c.generator = simulated_endpoint(EndpointKind::ImageGen);
  c.judge = simulated_endpoint(EndpointKind::Chat);
  c.embedder = simulated_endpoint(EndpointKind::Embedding);
  c.meta = simulated_endpoint(EndpointKind::Chat);
  c.rewriter = simulated_endpoint(EndpointKind::Chat);
  c.occupations = {"an accountant", "a baker", "a cab driver", "a chef",
                   "a nurse",       "a doctor", "a farmer",   "a home health aide"};

  SimulatedModelSpec spec;
  const std::map<std::string, double> p_male = {
      {"an accountant", 0.8}, {"a baker", 0.35},  {"a cab driver", 0.9}, {"a chef", 0.75},
      {"a nurse", 0.1},       {"a doctor", 0.7},  {"a farmer", 0.85},    {"a home health aide", 0.15}};
  for (const auto& [occ, p] : p_male) spec.priors[occ]["gender"] = {p, 1.0 - p};
  spec.priors["a nurse"]["age"] = {0.3, 0.6, 0.1};
  spec.priors["a farmer"]["age"] = {0.05, 0.45, 0.5};
  spec.priors["a cab driver"]["ethnicity"] = {0.25, 0.2, 0.15, 0.05, 0.15, 0.05, 0.15};
  spec.default_prior["age"] = {0.15, 0.7, 0.15};
  spec.default_prior["ethnicity"] = {0.55, 0.1, 0.1, 0.05, 0.1, 0.05, 0.05};
  spec.default_prior["body_type"] = {0.2, 0.55, 0.15, 0.1};
  spec.fairness_sensitivity = 0.8;
  spec.rewrite_behavior = RewriteBehavior::InjectDemographic;
  spec.token_probe.none_shrink = 0.3;
  spec.token_probe.spelling_variants = true;
  c.simulator = spec;
  c.probes.tokens = true;
  c.probes.embeddings = true;
  c.probes.decoded = true;
  c.output_dir = "run";
  return c;
}

// --- manifest and reports ----------------------------------------------------------

bool RunManifest::complete() const {
  return !stages.empty() &&
         std::all_of(stages.begin(), stages.end(), [](const auto& kv) { return kv.second; });
}

bool RunManifest::counts_consistent() const {
  const std::size_t expected = prompts * seeds * modes;
  auto done = [&](const char* stage) {
    const auto it = stages.find(stage);
    return it != stages.end() && it->second;
  };
  if (done("generate") && generations != expected) return false;
  if (done("judge") && annotations != expected) return false;
  return true;
}

json RunManifest::to_json() const {
  return {{"config_digest", config_digest}, {"tool_version", tool_version}, {"stages", stages},
          {"prompts", prompts},             {"seeds", seeds},               {"modes", modes},
          {"generations", generations},     {"annotations", annotations}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.config_digest = j.at("config_digest").get<std::string>();
  m.tool_version = j.value("tool_version", std::string(kToolVersion));
  m.stages = j.value("stages", std::map<std::string, bool>{});
  m.prompts = j.value("prompts", std::size_t{0});
  m.seeds = j.value("seeds", std::size_t{0});
  m.modes = j.value("modes", std::size_t{0});
  m.generations = j.value("generations", std::size_t{0});
  m.annotations = j.value("annotations", std::size_t{0});
  return m;
}

std::vector<fs::path> emit_report(const BiasReport& report, const std::set<ReportFormat>& formats,
                                  const fs::path& dir) {
  std::vector<fs::path> written;
  if (formats.empty()) return written;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  for (const auto f : formats) {
    fs::path path;
    std::string content;
    switch (f) {
      case ReportFormat::Json:
        path = dir / "report.json";
        content = report.to_json().dump(2) + "\n";
        break;
      case ReportFormat::Csv:
        path = dir / "report.csv";
        content = report_to_csv(report);
        break;
      case ReportFormat::Markdown:
        path = dir / "report.md";
        content = report_to_markdown(report);
        break;
    }
    write_file_atomic(path, content);
    written.push_back(path);
  }
  return written;
}

// --- runner ------------------------------------------------------------------------

namespace {

std::vector<json> read_jsonl(const fs::path& path) {
  std::vector<json> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception&) {
      break;  // a torn tail from an interrupted write; the rest is recomputed
    }
  }
  return out;
}

template <typename T>
void write_jsonl(const fs::path& path, const std::vector<T>& records) {
  std::string content;
  for (const auto& r : records) content += r.to_json().dump() + "\n";
  write_file_atomic(path, content);
}

class CountingChat final : public ChatModel {
 public:
  explicit CountingChat(ChatModel& inner) : inner_(inner) {}
  ChatResponse complete(const ChatRequest& r) override {
    calls.fetch_add(1);
    return inner_.complete(r);
  }
  std::string identity() const override { return inner_.identity(); }
  std::atomic<std::uint64_t> calls{0};

 private:
  ChatModel& inner_;
};

class CountingEmbed final : public EmbeddingModel {
 public:
  explicit CountingEmbed(EmbeddingModel& inner) : inner_(inner) {}
  std::vector<Embedding> embed_raw(const std::vector<std::string>& t,
                                   const std::optional<std::string>& s) override {
    calls.fetch_add(1);
    return inner_.embed_raw(t, s);
  }
  std::string identity() const override { return inner_.identity(); }
  std::atomic<std::uint64_t> calls{0};

 private:
  EmbeddingModel& inner_;
};

class CountingImage final : public ImageModel {
 public:
  explicit CountingImage(ImageModel& inner) : inner_(inner) {}
  ImageResult generate(const ImageRequest& r) override {
    calls.fetch_add(1);
    return inner_.generate(r);
  }
  std::string identity() const override { return inner_.identity(); }
  std::atomic<std::uint64_t> calls{0};

 private:
  ImageModel& inner_;
};

std::size_t workers_for(const RunConfig& c, const ModelEndpoint& e) {
  return e.is_simulated() ? c.parallelism : std::min(c.parallelism, e.max_parallel);
}

}  // namespace

struct AuditRunner::Impl {
  const RunConfig& config;
  fs::path dir;
  AttributeTaxonomy taxonomy;
  const ModelProfile* profile = nullptr;
  RunManifest manifest;
  std::vector<Prompt> synthesized;  // occupation prompts for probes when that level is not audited

  std::unique_ptr<SimulatedModel> simulator;
  std::vector<std::unique_ptr<ChatModel>> owned_chat;
  std::unique_ptr<EmbeddingModel> owned_embed;
  std::unique_ptr<ImageModel> owned_image;
  std::unique_ptr<CountingChat> judge_count, meta_count, rewriter_count;
  std::unique_ptr<CountingEmbed> embed_count;
  std::unique_ptr<CountingImage> image_count;
  std::unique_ptr<RecordCache> chat_cache, embed_cache, image_cache;

  explicit Impl(const RunConfig& c) : config(c) {}

  CallStats calls() const {
    CallStats s;
    if (image_count) s.generator = image_count->calls.load();
    if (judge_count) s.judge = judge_count->calls.load();
    if (embed_count) s.embedder = embed_count->calls.load();
    if (meta_count) s.meta = meta_count->calls.load();
    if (rewriter_count) s.rewriter = rewriter_count->calls.load();
    return s;
  }

  void save_manifest() const { write_file_atomic(dir / "manifest.json", manifest.to_json().dump(2) + "\n"); }

  void mark(const std::string& stage, bool done) {
    manifest.stages[stage] = done;
    save_manifest();
  }

  bool done(const std::string& stage) const {
    const auto it = manifest.stages.find(stage);
    return it != manifest.stages.end() && it->second;
  }

  ChatModel& chat_backend(const ModelEndpoint& e) {
    if (e.is_simulated()) return *simulator;
    owned_chat.push_back(std::make_unique<HttpChatModel>(e));
    return *owned_chat.back();
  }

  void setup_models() {
    if (config.simulator) {
      SimulatedModelSpec spec = *config.simulator;
      for (const auto& name : profile_names()) spec.default_system_prompts.push_back(fairlens::profile(name).default_system_prompt);
      simulator = std::make_unique<SimulatedModel>(std::move(spec), taxonomy);
    }
    judge_count = std::make_unique<CountingChat>(chat_backend(config.judge));
    meta_count = std::make_unique<CountingChat>(chat_backend(config.meta));
    rewriter_count = std::make_unique<CountingChat>(chat_backend(config.rewriter));
    if (config.embedder.is_simulated()) {
      embed_count = std::make_unique<CountingEmbed>(*simulator);
    } else {
      owned_embed = std::make_unique<HttpEmbeddingModel>(config.embedder);
      embed_count = std::make_unique<CountingEmbed>(*owned_embed);
    }
    if (config.generator.is_simulated()) {
      image_count = std::make_unique<CountingImage>(*simulator);
    } else {
      owned_image = std::make_unique<HttpImageModel>(config.generator, dir / "generations" / "images");
      image_count = std::make_unique<CountingImage>(*owned_image);
    }
    chat_cache = std::make_unique<RecordCache>(dir / "cache" / "chat");
    embed_cache = std::make_unique<RecordCache>(dir / "cache" / "embed");
    image_cache = std::make_unique<RecordCache>(dir / "cache" / "image");
  }

  // --- stages ---

  PromptSet stage_prompts() {
    const fs::path file = dir / "prompts" / "prompts.jsonl";
    if (done("prompts") && fs::exists(file)) {
      std::ifstream in(file);
      return PromptSet(PromptSet::read_jsonl(in), taxonomy);
    }
    mark("prompts", false);

    std::vector<std::string> occupations;
    if (config.occupations_path) {
      std::ifstream in(*config.occupations_path);
      occupations = load_occupations(in);
    } else {
      occupations = default_occupations();
    }
    if (!config.occupations.empty()) {
      std::istringstream subset(text::join(config.occupations, "\n"));
      occupations = load_occupations(subset);
    }
    ActionBank actions = ActionBank::default_bank();
    if (config.actions_path) {
      std::ifstream in(*config.actions_path);
      actions = ActionBank::from_json(json::parse(in));
    }

    const auto wants = [&](PromptLevel l) {
      return std::find(config.levels.begin(), config.levels.end(), l) != config.levels.end();
    };
    const auto occ_prompts = build_occupation(occupations);
    const auto simple = build_simple(occupations, taxonomy, config.corpus_seed);
    std::vector<Prompt> all;
    if (wants(PromptLevel::Occupation)) all.insert(all.end(), occ_prompts.begin(), occ_prompts.end());
    if (wants(PromptLevel::Simple)) all.insert(all.end(), simple.begin(), simple.end());
    if (wants(PromptLevel::Context)) {
      const auto context = build_context(simple, actions, config.corpus_seed);
      all.insert(all.end(), context.begin(), context.end());
    }
    if (wants(PromptLevel::Rewritten)) {
      const fs::path partial = dir / "prompts" / "rewritten.partial.jsonl";
      std::vector<Prompt> completed;
      for (const auto& j : read_jsonl(partial)) completed.push_back(Prompt::from_json(j));
      CachedChatModel rewriter(*rewriter_count, *chat_cache, "rewrite");
      RewriteOptions options;
      options.seed = config.corpus_seed;
      options.parallelism = workers_for(config, config.rewriter);
      try {
        const auto rewritten =
            build_rewritten(occ_prompts, rewriter, WordCategoryLexicon::default_lexicon(), options, completed);
        all.insert(all.end(), rewritten.begin(), rewritten.end());
      } catch (const RewriteFailed& e) {
        write_jsonl(partial, e.partial());
        throw;
      }
      fs::remove(partial);
    }
    PromptSet set(std::move(all), taxonomy);
    std::ostringstream out;
    set.write_jsonl(out);
    write_file_atomic(file, out.str());
    manifest.prompts = set.prompts().size();
    mark("prompts", true);
    return set;
  }

  std::map<std::string, FairPromptResult> stage_fairpro(PromptMode mode, const PromptSet& prompts) {
    const std::string stage = "fairpro:" + std::string(to_string(mode));
    const fs::path file = dir / "fairpro" / (std::string(to_string(mode)) + ".jsonl");
    std::map<std::string, FairPromptResult> existing;
    for (const auto& j : read_jsonl(file)) existing.emplace(j.at("prompt_id").get<std::string>(), FairPromptResult::from_json(j.at("result")));

    // Identical prompt texts share one result.
    std::vector<const Prompt*> todo;
    for (const auto& p : prompts.prompts()) {
      if (!existing.count(p.id)) todo.push_back(&p);
    }
    CachedChatModel meta(*meta_count, *chat_cache, std::string(to_string(mode)));
    FairProOptions options;
    options.temperature = config.meta_temperature;
    options.seed = config.meta_seed;
    options.format = profile->meta_format;
    std::exception_ptr error;
    auto results = parallel_map_partial(todo.size(), workers_for(config, config.meta), [&](std::size_t i) {
      return fair_system_prompt(todo[i]->text, meta, mode, options);
    }, error);
    for (std::size_t i = 0; i < todo.size(); ++i) {
      if (results[i]) existing.emplace(todo[i]->id, std::move(*results[i]));
    }

    std::string content;
    for (const auto& p : prompts.prompts()) {
      const auto it = existing.find(p.id);
      if (it == existing.end()) continue;
      content += json({{"prompt_id", p.id}, {"result", it->second.to_json()}}).dump() + "\n";
    }
    write_file_atomic(file, content);
    if (error) {
      mark(stage, false);
      std::rethrow_exception(error);
    }
    mark(stage, true);
    return existing;
  }

  std::vector<GenerationRecord> stage_generate(PromptMode mode, const PromptSet& prompts,
                                               const std::map<std::string, FairPromptResult>& fair) {
    const std::string mode_name(to_string(mode));
    const fs::path file = dir / "generations" / (mode_name + ".jsonl");
    std::map<std::string, GenerationRecord> existing;
    for (const auto& j : read_jsonl(file)) {
      auto r = GenerationRecord::from_json(j);
      existing.emplace(r.key(), std::move(r));
    }
    struct Item {
      const Prompt* prompt;
      std::int64_t seed;
      std::string key;
    };
    std::vector<Item> all;
    std::vector<std::size_t> todo;
    for (const auto& p : prompts.prompts()) {
      for (const auto seed : config.seeds) {
        all.push_back({&p, seed, mode_name + "|" + p.id + "|" + std::to_string(seed)});
        if (!existing.count(all.back().key)) todo.push_back(all.size() - 1);
      }
    }
    CachedImageModel images(*image_count, *image_cache, mode_name);
    std::exception_ptr error;
    auto results = parallel_map_partial(todo.size(), workers_for(config, config.generator), [&](std::size_t i) {
      const Item& item = all[todo[i]];
      const FairPromptResult* fr = nullptr;
      if (uses_meta_call(mode)) fr = &fair.at(item.prompt->id);
      const auto inputs = assemble_generation_inputs(mode, fr, item.prompt->text, profile->default_system_prompt);
      GenerationRecord rec = generate_image(images, inputs.system_prompt, inputs.user_prompt, item.seed);
      rec.prompt_id = item.prompt->id;
      rec.mode = mode_name;
      return rec;
    }, error);
    for (std::size_t i = 0; i < todo.size(); ++i) {
      if (results[i]) existing.emplace(all[todo[i]].key, std::move(*results[i]));
    }
    std::vector<GenerationRecord> ordered;
    for (const auto& item : all) {
      if (auto it = existing.find(item.key); it != existing.end()) ordered.push_back(it->second);
    }
    write_jsonl(file, ordered);
    if (error) std::rethrow_exception(error);
    return ordered;
  }

  std::vector<AnnotationRecord> stage_judge(const std::string& mode_name, const PromptSet& prompts,
                                            const std::vector<GenerationRecord>& generations) {
    const fs::path file = dir / "annotations" / (mode_name + ".jsonl");
    std::map<std::string, AnnotationRecord> existing;
    for (const auto& j : read_jsonl(file)) {
      auto r = AnnotationRecord::from_json(j);
      existing.emplace(r.key(), std::move(r));
    }
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < generations.size(); ++i) {
      if (!existing.count(generations[i].key())) todo.push_back(i);
    }
    CachedChatModel judge(*judge_count, *chat_cache, "judge:" + mode_name);
    Annotator annotator(judge, taxonomy);
    std::exception_ptr error;
    auto results = parallel_map_partial(todo.size(), workers_for(config, config.judge), [&](std::size_t i) {
      const GenerationRecord& g = generations[todo[i]];
      return annotator.annotate(g, *prompts.find(g.prompt_id));
    }, error);
    for (std::size_t i = 0; i < todo.size(); ++i) {
      if (results[i]) existing.emplace(generations[todo[i]].key(), std::move(*results[i]));
    }
    std::vector<AnnotationRecord> ordered;
    for (const auto& g : generations) {
      if (auto it = existing.find(g.key()); it != existing.end()) ordered.push_back(it->second);
    }
    write_jsonl(file, ordered);
    if (error) std::rethrow_exception(error);
    return ordered;
  }

  std::map<std::string, Embedding> text_embeddings(const PromptSet& prompts) {
    CachedEmbeddingModel embedder(*embed_count, *embed_cache, "alignment");
    std::vector<std::string> texts;
    for (const auto& p : prompts.prompts()) texts.push_back(p.text);
    const auto embs = embed(embedder, texts);
    std::map<std::string, Embedding> out;
    for (std::size_t i = 0; i < texts.size(); ++i) out.emplace(prompts.prompts()[i].id, embs[i]);
    return out;
  }

  void stage_probes(const PromptSet& prompts, const std::vector<AnnotationRecord>& default_annotations) {
    const fs::path probe_dir = dir / "probes";
    std::vector<const Prompt*> occ_prompts;
    for (const auto& p : prompts.prompts()) {
      if (p.level == PromptLevel::Occupation) occ_prompts.push_back(&p);
    }
    if (occ_prompts.empty()) {
      std::vector<std::string> seen;
      for (const auto& p : prompts.prompts()) {
        if (std::find(seen.begin(), seen.end(), p.occupation) == seen.end()) seen.push_back(p.occupation);
      }
      synthesized = build_occupation(seen);
      for (const auto& p : synthesized) occ_prompts.push_back(&p);
    }
    const auto& lexicon = WordCategoryLexicon::default_lexicon();

    if (config.probes.tokens) {
      CachedChatModel lvlm(*meta_count, *chat_cache, "probe:tokens");
      const auto templates = default_comparison_templates();
      TokenProbeOptions options;
      options.neutral_threshold = config.probes.neutral_threshold;
      options.default_system_prompt = profile->default_system_prompt;
      options.sampling_fallback = config.probes.sampling_fallback;
      options.seed = config.meta_seed;
      json summary = json::object();
      std::map<SystemPromptMode, std::vector<TokenProbeResult>> by_mode;
      for (const auto mode : {SystemPromptMode::Default, SystemPromptMode::None}) {
        by_mode[mode] = parallel_map(occ_prompts.size(), workers_for(config, config.meta), [&](std::size_t i) {
          return token_probe(occ_prompts[i]->occupation, templates, lvlm, mode, options);
        });
        write_jsonl(probe_dir / ("tokens_" + std::string(to_string(mode)) + ".jsonl"), by_mode[mode]);
        const auto agg = aggregate_token_bias(by_mode[mode]);
        summary[std::string(to_string(mode))] = {{"mean_abs", agg.mean_abs}, {"mean_signed", agg.mean_signed}};
      }
      summary["skew_shift"] =
          skew_shift_summary(by_mode[SystemPromptMode::Default], by_mode[SystemPromptMode::None]).to_json();
      write_file_atomic(probe_dir / "tokens_summary.json", summary.dump(2) + "\n");
      mark("probe:tokens", true);
    }

    if (config.probes.embeddings) {
      CachedEmbeddingModel embedder(*embed_count, *embed_cache, "probe:embeddings");
      std::vector<std::string> texts;
      for (const auto* p : occ_prompts) texts.push_back(p->text);
      json out = json::object();
      out["default"] = embedding_association(texts, lexicon, embedder, profile->default_system_prompt).to_json();
      out["none"] = embedding_association(texts, lexicon, embedder, std::nullopt).to_json();
      write_file_atomic(probe_dir / "embeddings.json", out.dump(2) + "\n");
      mark("probe:embeddings", true);
    }

    if (config.probes.decoded) {
      CachedChatModel lvlm(*meta_count, *chat_cache, "probe:decoded");
      auto decodes = parallel_map(occ_prompts.size(), workers_for(config, config.meta), [&](std::size_t i) {
        std::vector<std::string> texts;
        for (const auto seed : config.seeds) {
          ChatRequest req;
          req.system_prompt = profile->default_system_prompt;
          req.user_prompt = occ_prompts[i]->text;
          req.seed = seed;
          texts.push_back(chat(lvlm, req).text);
        }
        return texts;
      });
      std::vector<std::string> all_texts;
      std::map<std::string, std::optional<Gender>> decoded_bias;
      std::map<std::string, std::optional<Gender>> visual_bias;
      std::map<std::string, std::vector<std::string>> gender_labels;
      for (const auto& a : default_annotations) {
        if (auto it = a.labels.find("gender"); it != a.labels.end()) gender_labels[a.prompt_id].push_back(it->second);
      }
      json per_prompt = json::array();
      for (std::size_t i = 0; i < occ_prompts.size(); ++i) {
        all_texts.insert(all_texts.end(), decodes[i].begin(), decodes[i].end());
        const auto d = classify_decoded(decodes[i], lexicon);
        decoded_bias[occ_prompts[i]->id] = d;
        const auto labels = gender_labels.find(occ_prompts[i]->id);
        const auto v = labels == gender_labels.end() ? std::nullopt : classify_visual(labels->second);
        visual_bias[occ_prompts[i]->id] = v;
        per_prompt.push_back({{"prompt_id", occ_prompts[i]->id},
                              {"decoded", d ? json(std::string(to_string(*d))) : json(nullptr)},
                              {"visual", v ? json(std::string(to_string(*v))) : json(nullptr)}});
      }
      const auto agreement = decoded_agreement(decoded_bias, visual_bias);
      json dist = json::object();
      for (const auto d : {Dimension::Gender, Dimension::Age, Dimension::Ethnicity}) {
        dist[std::string(to_string(d))] = word_distribution(all_texts, lexicon, d);
      }
      json out = {{"word_distribution", dist},
                  {"prompts", per_prompt},
                  {"agreement",
                   {{"fraction", agreement.fraction ? json(*agreement.fraction) : json(nullptr)},
                    {"compared", agreement.compared},
                    {"matched", agreement.matched}}}};
      write_file_atomic(probe_dir / "decoded.json", out.dump(2) + "\n");
      mark("probe:decoded", true);
    }
  }

  BiasReport execute() {
    std::vector<std::string> mode_names;
    for (const auto m : config.modes) mode_names.emplace_back(to_string(m));

    const PromptSet prompts = stage_prompts();

    std::vector<AnnotationRecord> all_annotations;
    std::vector<GenerationRecord> all_generations;
    std::vector<AnnotationRecord> default_annotations;
    std::size_t n_generations = 0;
    std::size_t n_annotations = 0;
    bool generate_failed = false;
    bool judge_failed = false;
    std::exception_ptr first_error;
    for (const auto mode : config.modes) {
      const std::string name(to_string(mode));
      bool judging = false;
      try {
        std::map<std::string, FairPromptResult> fair;
        if (uses_meta_call(mode)) fair = stage_fairpro(mode, prompts);
        const auto gens = stage_generate(mode, prompts, fair);
        n_generations += gens.size();
        judging = true;
        const auto anns = stage_judge(name, prompts, gens);
        n_annotations += anns.size();
        if (mode == PromptMode::Default) default_annotations = anns;
        all_generations.insert(all_generations.end(), gens.begin(), gens.end());
        all_annotations.insert(all_annotations.end(), anns.begin(), anns.end());
      } catch (...) {
        // Keep going with the other modes so their work is persisted too.
        // A mode that never reached the judge leaves it incomplete as well.
        generate_failed |= !judging;
        judge_failed = true;
        if (!first_error) first_error = std::current_exception();
      }
    }
    manifest.generations = n_generations;
    manifest.annotations = n_annotations;
    manifest.stages["generate"] = !generate_failed;
    manifest.stages["judge"] = !judge_failed;
    save_manifest();
    if (first_error) std::rethrow_exception(first_error);

    ReportConfig rc;
    rc.model_name = config.model_name;
    rc.modes = mode_names;
    rc.levels = config.levels;
    rc.seeds = config.seeds;
    rc.diversity_pairs = config.diversity_pairs;
    const BiasReport report = aggregate_report(all_annotations, all_generations, text_embeddings(prompts), prompts, rc);
    emit_report(report, {ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown}, dir / "report");
    mark("score", true);

    if (config.probes.tokens || config.probes.embeddings || config.probes.decoded) {
      stage_probes(prompts, default_annotations);
    }
    return report;
  }
};

AuditRunner::AuditRunner(RunConfig config) : config_(std::move(config)) {}

AuditRunner::~AuditRunner() = default;

void AuditRunner::set_run_dir(fs::path dir) { run_dir_override_ = std::move(dir); }

AuditOutcome AuditRunner::run() {
  AuditOutcome outcome;
  impl_ = std::make_unique<Impl>(config_);
  Impl& impl = *impl_;
  bool state_written = false;
  try {
    config_.validate();
    const std::string digest = config_.digest();
    impl.dir = run_dir_override_ ? *run_dir_override_ : config_.output_dir / digest.substr(0, 16);
    outcome.run_dir = impl.dir;

    const fs::path manifest_path = impl.dir / "manifest.json";
    if (fs::exists(manifest_path)) {
      std::ifstream in(manifest_path);
      RunManifest previous = RunManifest::from_json(json::parse(in));
      if (previous.config_digest != digest) {
        throw Error(ErrorCode::RefusesToMixRuns, impl.dir.string() + " holds a run of a different configuration");
      }
      impl.manifest = previous;
    } else {
      impl.manifest.config_digest = digest;
    }
    impl.manifest.seeds = config_.seeds.size();
    impl.manifest.modes = config_.modes.size();
    for (const char* s : {"prompts", "generate", "judge", "score"}) impl.manifest.stages.emplace(s, false);
    for (const auto m : config_.modes) {
      if (uses_meta_call(m)) impl.manifest.stages.emplace("fairpro:" + std::string(to_string(m)), false);
    }
    if (config_.probes.tokens) impl.manifest.stages.emplace("probe:tokens", false);
    if (config_.probes.embeddings) impl.manifest.stages.emplace("probe:embeddings", false);
    if (config_.probes.decoded) impl.manifest.stages.emplace("probe:decoded", false);

    fs::create_directories(impl.dir);
    // The run directory is its own location, so output_dir is left out.
    json persisted = config_.to_json();
    persisted.erase("output_dir");
    write_file_atomic(impl.dir / "config.json", persisted.dump(2) + "\n");
    impl.save_manifest();
    state_written = true;

    if (config_.taxonomy_path) {
      std::ifstream in(*config_.taxonomy_path);
      impl.taxonomy = AttributeTaxonomy::from_json(json::parse(in));
    } else {
      impl.taxonomy = AttributeTaxonomy::default_taxonomy();
    }
    impl.profile = &fairlens::profile(config_.profile);
    impl.setup_models();

    outcome.report = impl.execute();
    outcome.exit_code = 0;
  } catch (const Error& e) {
    outcome.error = e.what();
    outcome.error_code = e.code();
    outcome.exit_code = state_written ? 2 : 1;
  } catch (const std::exception& e) {
    outcome.error = e.what();
    outcome.exit_code = state_written ? 2 : 1;
  }
  outcome.manifest = impl.manifest;
  outcome.calls = impl.calls();
  return outcome;
}

BiasReport run_audit(const RunConfig& config) {
  AuditRunner runner(config);
  AuditOutcome outcome = runner.run();
  if (!outcome.report) {
    throw Error(outcome.error_code.value_or(ErrorCode::IoError), outcome.error);
  }
  return *outcome.report;
}

}  // namespace fairlens
