// fairlens: command-line front end for building prompt corpora, running
// generation and judging, scoring bias and running the mechanistic probes.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include "fairlens/cache.hpp"
#include "fairlens/corpus.hpp"
#include "fairlens/error.hpp"
#include "fairlens/fairpro.hpp"
#include "fairlens/judge.hpp"
#include "fairlens/lexicon.hpp"
#include "fairlens/metrics.hpp"
#include "fairlens/parallel.hpp"
#include "fairlens/pipeline.hpp"
#include "fairlens/probes.hpp"
#include "fairlens/simulator.hpp"
#include "fairlens/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fairlens;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitPartial = 2;

// Endpoint flags shared by every verb that talks to a model.
struct EndpointArgs {
  std::string url = "sim://local";
  std::string model = "simulator";
  std::string auth_env = "OPENAI_API_KEY";
  double timeout = 60.0;
  int retries = 3;

  ModelEndpoint endpoint(EndpointKind kind) const {
    ModelEndpoint e;
    e.kind = kind;
    e.base_url = url;
    e.model_name = model;
    e.auth_token_env = auth_env;
    e.timeout_seconds = timeout;
    e.max_retries = retries;
    e.validate();
    return e;
  }
};

void add_endpoint_flags(CLI::App* cmd, EndpointArgs& args, const std::string& role) {
  cmd->add_option("--" + role + "-endpoint", args.url, "Base URL of the OpenAI-compatible API, or sim://")
      ->capture_default_str();
  cmd->add_option("--" + role + "-model", args.model, "Model name sent to the endpoint")->capture_default_str();
  cmd->add_option("--auth-env", args.auth_env, "Environment variable holding the bearer token")
      ->capture_default_str();
  cmd->add_option("--timeout", args.timeout, "Request timeout in seconds")->capture_default_str();
  cmd->add_option("--retries", args.retries, "Retries on transport errors, 429 and 5xx")->capture_default_str();
}

// Everything the verbs share: the simulator (if any) and the backends built on it.
struct Context {
  std::string simulator_path;
  std::string taxonomy_path;
  std::size_t parallelism = 4;

  AttributeTaxonomy taxonomy() const {
    if (taxonomy_path.empty()) return AttributeTaxonomy::default_taxonomy();
    std::ifstream in(taxonomy_path);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot read " + taxonomy_path);
    return AttributeTaxonomy::from_json(json::parse(in));
  }

  SimulatedModel& simulator() {
    if (!sim_) {
      SimulatedModelSpec spec = *RunConfig::desk_preset().simulator;
      if (!simulator_path.empty()) {
        std::ifstream in(simulator_path);
        if (!in) throw Error(ErrorCode::ConfigError, "cannot read " + simulator_path);
        spec = SimulatedModelSpec::from_json(json::parse(in));
      }
      for (const auto& name : profile_names()) spec.default_system_prompts.push_back(profile(name).default_system_prompt);
      sim_ = std::make_unique<SimulatedModel>(std::move(spec), taxonomy());
    }
    return *sim_;
  }

  ChatModel& chat(const EndpointArgs& a) {
    const ModelEndpoint e = a.endpoint(EndpointKind::Chat);
    if (e.is_simulated()) return simulator();
    chats_.push_back(std::make_unique<HttpChatModel>(e));
    return *chats_.back();
  }

  EmbeddingModel& embedder(const EndpointArgs& a) {
    const ModelEndpoint e = a.endpoint(EndpointKind::Embedding);
    if (e.is_simulated()) return simulator();
    embeds_.push_back(std::make_unique<HttpEmbeddingModel>(e));
    return *embeds_.back();
  }

  ImageModel& images(const EndpointArgs& a, const fs::path& image_dir) {
    const ModelEndpoint e = a.endpoint(EndpointKind::ImageGen);
    if (e.is_simulated()) return simulator();
    images_.push_back(std::make_unique<HttpImageModel>(e, image_dir));
    return *images_.back();
  }

 private:
  std::unique_ptr<SimulatedModel> sim_;
  std::vector<std::unique_ptr<ChatModel>> chats_;
  std::vector<std::unique_ptr<EmbeddingModel>> embeds_;
  std::vector<std::unique_ptr<ImageModel>> images_;
};

std::vector<Prompt> read_prompts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
  return PromptSet::read_jsonl(in);
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!text::trim(line).empty()) out.push_back(json::parse(line));
  }
  return out;
}

// All *.jsonl files of a directory (or the file itself), in name order.
std::vector<json> read_jsonl_dir(const fs::path& path) {
  if (!fs::is_directory(path)) return read_jsonl(path);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<json> out;
  for (const auto& f : files) {
    auto part = read_jsonl(f);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

void write_lines(const fs::path& path, const std::vector<json>& rows) {
  std::string content;
  for (const auto& r : rows) content += r.dump() + "\n";
  write_file_atomic(path, content);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = text::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// "0-9" or "0,1,5"
std::vector<std::int64_t> parse_seeds(const std::string& s) {
  std::vector<std::int64_t> out;
  for (const auto& part : split_list(s)) {
    const auto dash = part.find('-', 1);
    if (dash == std::string::npos) {
      out.push_back(std::stoll(part));
    } else {
      const auto lo = std::stoll(part.substr(0, dash));
      const auto hi = std::stoll(part.substr(dash + 1));
      if (hi < lo) throw Error(ErrorCode::InvalidInput, "empty seed range " + part);
      for (auto v = lo; v <= hi; ++v) out.push_back(v);
    }
  }
  if (out.empty()) throw Error(ErrorCode::InvalidInput, "no seeds given");
  return out;
}

std::set<ReportFormat> parse_formats(const std::string& s) {
  std::set<ReportFormat> out;
  for (const auto& f : split_list(text::to_lower(s))) {
    if (f == "json") out.insert(ReportFormat::Json);
    else if (f == "csv") out.insert(ReportFormat::Csv);
    else if (f == "md" || f == "markdown") out.insert(ReportFormat::Markdown);
    else throw Error(ErrorCode::InvalidInput, "unknown report format '" + f + "'");
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fairlens: text-to-image fairness audits"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  Context ctx;
  app.add_option("--simulator", ctx.simulator_path, "Simulator spec (JSON) used for sim:// endpoints");
  app.add_option("--taxonomy", ctx.taxonomy_path, "Attribute taxonomy (JSON)");
  app.add_option("-j,--parallelism", ctx.parallelism, "Concurrent requests per stage")->capture_default_str();

  int exit_code = kExitOk;

  // corpus build
  auto* corpus = app.add_subcommand("corpus", "Prompt corpus tools");
  corpus->require_subcommand(1);
  auto* corpus_build = corpus->add_subcommand("build", "Build the multi-level prompt corpus");
  std::string levels_arg = "occupation,simple,context,rewritten";
  std::uint64_t corpus_seed = 0;
  std::string corpus_out;
  std::string occupations_path;
  std::string actions_path;
  std::string template_path;
  EndpointArgs rewriter;
  corpus_build->add_option("--levels", levels_arg, "Comma-separated prompt levels")->capture_default_str();
  corpus_build->add_option("--seed", corpus_seed, "Seed for attribute and action sampling")->capture_default_str();
  corpus_build->add_option("--out", corpus_out, "Output JSON-lines file")->required();
  corpus_build->add_option("--occupations", occupations_path, "One occupation per line");
  corpus_build->add_option("--actions", actions_path, "Action bank (JSON)");
  corpus_build->add_option("--rewrite-template", template_path, "Rewriter instruction with {prompt}");
  add_endpoint_flags(corpus_build, rewriter, "rewriter");
  corpus_build->callback([&] {
    std::vector<std::string> occupations;
    std::vector<std::string> warnings;
    if (occupations_path.empty()) {
      occupations = default_occupations();
    } else {
      std::ifstream in(occupations_path);
      if (!in) throw Error(ErrorCode::IoError, "cannot read " + occupations_path);
      occupations = load_occupations(in, &warnings);
    }
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    ActionBank actions = ActionBank::default_bank();
    if (!actions_path.empty()) {
      std::ifstream in(actions_path);
      actions = ActionBank::from_json(json::parse(in));
    }
    const AttributeTaxonomy taxonomy = ctx.taxonomy();
    std::set<PromptLevel> levels;
    for (const auto& l : split_list(levels_arg)) levels.insert(parse_level(l));

    const auto occ = build_occupation(occupations);
    const auto simple = build_simple(occupations, taxonomy, corpus_seed);
    std::vector<Prompt> all;
    if (levels.count(PromptLevel::Occupation)) all.insert(all.end(), occ.begin(), occ.end());
    if (levels.count(PromptLevel::Simple)) all.insert(all.end(), simple.begin(), simple.end());
    if (levels.count(PromptLevel::Context)) {
      const auto context = build_context(simple, actions, corpus_seed);
      all.insert(all.end(), context.begin(), context.end());
    }
    if (levels.count(PromptLevel::Rewritten)) {
      const fs::path partial_path = corpus_out + ".partial";
      std::vector<Prompt> completed;
      if (fs::exists(partial_path)) completed = read_prompts(partial_path.string());
      RewriteOptions options;
      options.seed = corpus_seed;
      options.parallelism = ctx.parallelism;
      if (!template_path.empty()) {
        std::ifstream in(template_path);
        options.template_text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
      }
      try {
        const auto rewritten = build_rewritten(occ, ctx.chat(rewriter), WordCategoryLexicon::default_lexicon(),
                                               options, completed);
        all.insert(all.end(), rewritten.begin(), rewritten.end());
        fs::remove(partial_path);
      } catch (const RewriteFailed& e) {
        std::ostringstream out;
        PromptSet(e.partial(), taxonomy).write_jsonl(out);
        write_file_atomic(partial_path, out.str());
        std::cerr << "error: " << e.what() << "\npartial rewrites saved to " << partial_path.string()
                  << "; rerun to resume\n";
        exit_code = kExitPartial;
        return;
      }
    }
    PromptSet set(std::move(all), taxonomy);
    std::ostringstream out;
    set.write_jsonl(out);
    write_file_atomic(corpus_out, out.str());
    std::cout << "wrote " << set.prompts().size() << " prompts to " << corpus_out << '\n';
  });

  // fairpro
  auto* fairpro = app.add_subcommand("fairpro", "Generate fairness-aware system prompts");
  std::string fp_mode = "fairpro";
  std::string fp_prompts;
  std::string fp_out;
  std::string fp_profile = "qwen-image";
  std::int64_t fp_seed = 0;
  double fp_temperature = 0.7;
  EndpointArgs meta;
  fairpro->add_option("--mode", fp_mode, "fairpro|two-calls|no-cot|no-user-prompt|fixed|user-prompt-rewrite")
      ->capture_default_str();
  fairpro->add_option("--prompts", fp_prompts, "Prompt corpus (JSON-lines)")->required();
  fairpro->add_option("--out", fp_out, "Output JSON-lines file")->required();
  fairpro->add_option("--profile", fp_profile, "Model profile: qwen-image or sana")->capture_default_str();
  fairpro->add_option("--seed", fp_seed, "Meta-call seed")->capture_default_str();
  fairpro->add_option("--temperature", fp_temperature, "Meta-call temperature")->capture_default_str();
  add_endpoint_flags(fairpro, meta, "meta");
  fairpro->callback([&] {
    const PromptMode mode = parse_prompt_mode(fp_mode);
    const auto prompts = read_prompts(fp_prompts);
    ChatModel& model = ctx.chat(meta);
    FairProOptions options;
    options.seed = fp_seed;
    options.temperature = fp_temperature;
    options.format = profile(fp_profile).meta_format;
    std::exception_ptr error;
    auto results = parallel_map_partial(prompts.size(), ctx.parallelism, [&](std::size_t i) {
      return fair_system_prompt(prompts[i].text, model, mode, options);
    }, error);
    std::vector<json> rows;
    std::size_t fallbacks = 0;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      if (!results[i]) continue;
      fallbacks += results[i]->fell_back ? 1 : 0;
      rows.push_back({{"prompt_id", prompts[i].id}, {"result", results[i]->to_json()}});
    }
    write_lines(fp_out, rows);
    if (fallbacks) std::cerr << "warning: " << fallbacks << " prompts fell back to the default system prompt\n";
    if (error) std::rethrow_exception(error);
    std::cout << "wrote " << rows.size() << " results to " << fp_out << '\n';
  });

  // generate
  auto* generate = app.add_subcommand("generate", "Generate images for a prompt corpus");
  std::string gen_prompts;
  std::string gen_mode = "default";
  std::string gen_fairpro;
  std::string gen_seeds = "0-9";
  std::string gen_out;
  std::string gen_profile = "qwen-image";
  EndpointArgs generator;
  generate->add_option("--prompts", gen_prompts, "Prompt corpus (JSON-lines)")->required();
  generate->add_option("--mode", gen_mode, "Prompt mode")->capture_default_str();
  generate->add_option("--fairpro", gen_fairpro, "Meta-call results from `fairlens fairpro`");
  generate->add_option("--seeds", gen_seeds, "Seeds, e.g. 0-9 or 0,3,7")->capture_default_str();
  generate->add_option("--out", gen_out, "Output directory")->required();
  generate->add_option("--profile", gen_profile, "Model profile: qwen-image or sana")->capture_default_str();
  add_endpoint_flags(generate, generator, "generator");
  generate->callback([&] {
    const PromptMode mode = parse_prompt_mode(gen_mode);
    const auto prompts = read_prompts(gen_prompts);
    const auto seeds = parse_seeds(gen_seeds);
    std::map<std::string, FairPromptResult> fair;
    if (uses_meta_call(mode)) {
      if (gen_fairpro.empty()) throw Error(ErrorCode::InvalidInput, "--fairpro is required for mode " + gen_mode);
      for (const auto& j : read_jsonl(gen_fairpro)) {
        fair.emplace(j.at("prompt_id").get<std::string>(), FairPromptResult::from_json(j.at("result")));
      }
    }
    const fs::path out_dir = gen_out;
    RecordCache cache(out_dir / "cache");
    CachedImageModel images(ctx.images(generator, out_dir / "images"), cache, std::string(to_string(mode)));
    const std::string& s_default = profile(gen_profile).default_system_prompt;
    std::exception_ptr error;
    auto records = parallel_map_partial(prompts.size() * seeds.size(), ctx.parallelism, [&](std::size_t i) {
      const Prompt& p = prompts[i / seeds.size()];
      const std::int64_t seed = seeds[i % seeds.size()];
      const FairPromptResult* fr = nullptr;
      if (uses_meta_call(mode)) {
        const auto it = fair.find(p.id);
        if (it == fair.end()) throw Error(ErrorCode::KeyMismatch, "no meta-call result for " + p.id);
        fr = &it->second;
      }
      const auto inputs = assemble_generation_inputs(mode, fr, p.text, s_default);
      GenerationRecord rec = generate_image(images, inputs.system_prompt, inputs.user_prompt, seed);
      rec.prompt_id = p.id;
      rec.mode = std::string(to_string(mode));
      return rec;
    }, error);
    std::vector<json> rows;
    for (auto& r : records) {
      if (r) rows.push_back(r->to_json());
    }
    write_lines(out_dir / (std::string(to_string(mode)) + ".jsonl"), rows);
    if (error) {
      exit_code = kExitPartial;
      std::rethrow_exception(error);
    }
    std::cout << "wrote " << rows.size() << " generations to " << out_dir.string() << '\n';
  });

  // judge run
  auto* judge = app.add_subcommand("judge", "LVLM-as-judge annotation");
  judge->require_subcommand(1);
  auto* judge_run = judge->add_subcommand("run", "Annotate generated images");
  std::string judge_generations;
  std::string judge_prompts;
  std::string judge_out;
  EndpointArgs judge_ep;
  judge_run->add_option("--generations", judge_generations, "Generation directory or file")->required();
  judge_run->add_option("--prompts", judge_prompts, "Prompt corpus (JSON-lines)")->required();
  judge_run->add_option("--out", judge_out, "Output directory")->required();
  add_endpoint_flags(judge_run, judge_ep, "judge");
  judge_run->callback([&] {
    const auto taxonomy = ctx.taxonomy();
    const PromptSet prompts(read_prompts(judge_prompts), taxonomy);
    std::vector<GenerationRecord> gens;
    for (const auto& j : read_jsonl_dir(judge_generations)) gens.push_back(GenerationRecord::from_json(j));
    RecordCache cache(fs::path(judge_out) / "cache");
    CachedChatModel model(ctx.chat(judge_ep), cache, "judge");
    Annotator annotator(model, taxonomy);
    std::exception_ptr error;
    auto anns = parallel_map_partial(gens.size(), ctx.parallelism, [&](std::size_t i) {
      const Prompt* p = prompts.find(gens[i].prompt_id);
      if (!p) throw Error(ErrorCode::KeyMismatch, "unknown prompt id " + gens[i].prompt_id);
      return annotator.annotate(gens[i], *p);
    }, error);
    std::map<std::string, std::vector<json>> by_mode;
    for (auto& a : anns) {
      if (a) by_mode[a->mode].push_back(a->to_json());
    }
    for (const auto& [mode, rows] : by_mode) {
      write_lines(fs::path(judge_out) / ((mode.empty() ? std::string("annotations") : mode) + ".jsonl"), rows);
    }
    if (annotator.parse_warnings()) {
      std::cerr << "warning: " << annotator.parse_warnings() << " judge answers did not parse\n";
    }
    if (error) {
      exit_code = kExitPartial;
      std::rethrow_exception(error);
    }
    std::cout << "annotated " << gens.size() << " images into " << judge_out << '\n';
  });

  // score
  auto* score = app.add_subcommand("score", "Compute the bias report");
  std::string score_annotations;
  std::string score_generations;
  std::string score_prompts;
  std::string score_out = "report.json";
  std::string score_model = "model";
  std::string score_seeds;
  std::size_t score_pairs = 4;
  std::string score_formats = "json";
  EndpointArgs score_embedder;
  score_embedder.url.clear();
  score->add_option("--annotations", score_annotations, "Annotation directory or file")->required();
  score->add_option("--prompts", score_prompts, "Prompt corpus (JSON-lines)")->required();
  score->add_option("--generations", score_generations, "Generation directory (for alignment and diversity)");
  score->add_option("--out", score_out, "Report path; other formats go next to it")->capture_default_str();
  score->add_option("--formats", score_formats, "json,csv,md")->capture_default_str();
  score->add_option("--model-name", score_model, "Name shown in the report")->capture_default_str();
  score->add_option("--seeds", score_seeds, "Restrict to these seeds");
  score->add_option("--diversity-pairs", score_pairs, "Image pairs per prompt for diversity")->capture_default_str();
  score->add_option("--embedder-endpoint", score_embedder.url, "Text embedder for alignment");
  score->add_option("--embedder-model", score_embedder.model, "Embedding model name");
  score->callback([&] {
    const auto taxonomy = ctx.taxonomy();
    const PromptSet prompts(read_prompts(score_prompts), taxonomy);
    std::vector<AnnotationRecord> anns;
    for (const auto& j : read_jsonl_dir(score_annotations)) anns.push_back(AnnotationRecord::from_json(j));
    std::vector<GenerationRecord> gens;
    if (!score_generations.empty()) {
      for (const auto& j : read_jsonl_dir(score_generations)) gens.push_back(GenerationRecord::from_json(j));
    }
    std::map<std::string, Embedding> text_embs;
    if (!score_embedder.url.empty()) {
      std::vector<std::string> texts;
      for (const auto& p : prompts.prompts()) texts.push_back(p.text);
      const auto embs = embed(ctx.embedder(score_embedder), texts);
      for (std::size_t i = 0; i < texts.size(); ++i) text_embs.emplace(prompts.prompts()[i].id, embs[i]);
    }
    ReportConfig rc;
    rc.model_name = score_model;
    std::set<std::string> modes;
    std::set<PromptLevel> levels;
    for (const auto& a : anns) modes.insert(a.mode);
    for (const auto& p : prompts.prompts()) levels.insert(p.level);
    rc.modes.assign(modes.begin(), modes.end());
    rc.levels.assign(levels.begin(), levels.end());
    if (!score_seeds.empty()) rc.seeds = parse_seeds(score_seeds);
    rc.diversity_pairs = score_pairs;
    const BiasReport report = aggregate_report(anns, gens, text_embs, prompts, rc);
    const fs::path out = score_out;
    const auto formats = parse_formats(score_formats);
    if (formats.count(ReportFormat::Json)) write_file_atomic(out, report.to_json().dump(2) + "\n");
    std::set<ReportFormat> others = formats;
    others.erase(ReportFormat::Json);
    emit_report(report, others, out.has_parent_path() ? out.parent_path() : fs::path("."));
    if (report.partial) exit_code = kExitPartial;
    std::cout << report_to_markdown(report);
  });

  // probe tokens|embeddings|decoded
  auto* probe = app.add_subcommand("probe", "Mechanistic bias probes");
  probe->require_subcommand(1);
  std::string probe_mode = "default";
  std::string probe_occupations;
  std::string probe_out;
  std::string probe_profile = "qwen-image";
  double probe_tau = 0.1;
  bool probe_sampling = false;
  EndpointArgs probe_ep;
  auto add_probe_flags = [&](CLI::App* cmd) {
    cmd->add_option("--mode", probe_mode, "default|none")->capture_default_str();
    cmd->add_option("--occupations", probe_occupations, "One occupation per line (default: built-in list)");
    cmd->add_option("--out", probe_out, "Output file")->required();
    cmd->add_option("--profile", probe_profile, "Model profile: qwen-image or sana")->capture_default_str();
    add_endpoint_flags(cmd, probe_ep, "backend");
  };
  auto occupations_for_probe = [&] {
    if (probe_occupations.empty()) return default_occupations();
    std::ifstream in(probe_occupations);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + probe_occupations);
    return load_occupations(in);
  };
  auto system_for_probe = [&]() -> std::optional<std::string> {
    if (parse_system_prompt_mode(probe_mode) == SystemPromptMode::None) return std::nullopt;
    return profile(probe_profile).default_system_prompt;
  };

  auto* probe_tokens = probe->add_subcommand("tokens", "Forced-choice next-token probe");
  add_probe_flags(probe_tokens);
  probe_tokens->add_option("--neutral-threshold", probe_tau, "Neutral band for |B|")->capture_default_str();
  probe_tokens->add_flag("--sampling-fallback", probe_sampling, "Estimate by sampling when logprobs are missing");
  probe_tokens->callback([&] {
    const auto occupations = occupations_for_probe();
    const auto templates = default_comparison_templates();
    TokenProbeOptions options;
    options.neutral_threshold = probe_tau;
    options.default_system_prompt = profile(probe_profile).default_system_prompt;
    options.sampling_fallback = probe_sampling;
    const SystemPromptMode mode = parse_system_prompt_mode(probe_mode);
    ChatModel& model = ctx.chat(probe_ep);
    const auto results = parallel_map(occupations.size(), ctx.parallelism, [&](std::size_t i) {
      return token_probe(occupations[i], templates, model, mode, options);
    });
    std::vector<json> rows;
    for (const auto& r : results) rows.push_back(r.to_json());
    write_lines(probe_out, rows);
    const auto agg = aggregate_token_bias(results);
    std::size_t counts[3] = {0, 0, 0};
    for (const auto& r : results) ++counts[static_cast<int>(r.skew)];
    std::cout << "E|B| = " << agg.mean_abs << "  mean B = " << agg.mean_signed << "  male-skewed "
              << counts[0] << "  female-skewed " << counts[1] << "  neutral " << counts[2] << '\n';
  });

  auto* probe_embeddings = probe->add_subcommand("embeddings", "Occupation-gender embedding association");
  add_probe_flags(probe_embeddings);
  probe_embeddings->callback([&] {
    const auto report = embedding_association(occupations_for_probe(), WordCategoryLexicon::default_lexicon(),
                                              ctx.embedder(probe_ep), system_for_probe());
    write_file_atomic(probe_out, report.to_json().dump(2) + "\n");
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << "E|b| = " << report.mean_abs << "  mean b = " << report.mean_signed << '\n';
  });

  auto* probe_decoded = probe->add_subcommand("decoded", "Demographic words in decoded text");
  add_probe_flags(probe_decoded);
  std::string decoded_seeds = "0-9";
  probe_decoded->add_option("--seeds", decoded_seeds, "Decoding seeds")->capture_default_str();
  probe_decoded->callback([&] {
    const auto occupations = occupations_for_probe();
    const auto seeds = parse_seeds(decoded_seeds);
    const auto system = system_for_probe();
    ChatModel& model = ctx.chat(probe_ep);
    const auto& lexicon = WordCategoryLexicon::default_lexicon();
    const auto decodes = parallel_map(occupations.size(), ctx.parallelism, [&](std::size_t i) {
      std::vector<std::string> texts;
      for (const auto seed : seeds) {
        ChatRequest req;
        req.system_prompt = system;
        req.user_prompt = text::capitalize_first(occupations[i]);
        req.seed = seed;
        texts.push_back(fairlens::chat(model, req).text);
      }
      return texts;
    });
    json rows = json::array();
    std::vector<std::string> all;
    for (std::size_t i = 0; i < occupations.size(); ++i) {
      all.insert(all.end(), decodes[i].begin(), decodes[i].end());
      const auto lean = classify_decoded(decodes[i], lexicon);
      rows.push_back({{"occupation", occupations[i]},
                      {"texts", decodes[i]},
                      {"bias", lean ? json(std::string(to_string(*lean))) : json(nullptr)}});
    }
    json dist = json::object();
    for (const auto d : {Dimension::Gender, Dimension::Age, Dimension::Ethnicity}) {
      dist[std::string(to_string(d))] = word_distribution(all, lexicon, d);
    }
    write_file_atomic(probe_out, json({{"word_distribution", dist}, {"occupations", rows}}).dump(2) + "\n");
    std::cout << dist.dump(2) << '\n';
  });

  // audit
  auto* audit = app.add_subcommand("audit", "Run the end-to-end audit");
  std::string audit_config;
  std::string audit_preset;
  std::string audit_out;
  audit->add_option("--config", audit_config, "Run configuration (JSON)");
  audit->add_option("--preset", audit_preset, "Built-in configuration: desk");
  audit->add_option("--out", audit_out, "Output directory (overrides the config)");
  audit->callback([&] {
    RunConfig config;
    if (!audit_config.empty()) {
      config = RunConfig::load(audit_config);
    } else if (audit_preset == "desk") {
      config = RunConfig::desk_preset();
    } else {
      throw Error(ErrorCode::ConfigError, audit_preset.empty() ? "give --config or --preset"
                                                               : "unknown preset '" + audit_preset + "'");
    }
    if (!audit_out.empty()) config.output_dir = audit_out;
    config.parallelism = ctx.parallelism;
    AuditRunner runner(config);
    const AuditOutcome outcome = runner.run();
    std::cout << "run directory: " << outcome.run_dir.string() << '\n';
    std::cout << "endpoint calls: generator " << outcome.calls.generator << ", judge " << outcome.calls.judge
              << ", embedder " << outcome.calls.embedder << ", meta " << outcome.calls.meta << ", rewriter "
              << outcome.calls.rewriter << '\n';
    if (outcome.report) std::cout << report_to_markdown(*outcome.report);
    if (!outcome.error.empty()) {
      std::cerr << "error: " << outcome.error << '\n';
      if (outcome.exit_code == kExitPartial) std::cerr << "state saved; rerun the same command to resume\n";
    }
    exit_code = outcome.exit_code;
  });

  // report
  auto* report_cmd = app.add_subcommand("report", "Render a saved report");
  std::string report_in;
  std::string report_out = ".";
  std::string report_formats = "md";
  report_cmd->add_option("--in", report_in, "report.json")->required();
  report_cmd->add_option("--out", report_out, "Output directory")->capture_default_str();
  report_cmd->add_option("--formats", report_formats, "json,csv,md")->capture_default_str();
  report_cmd->callback([&] {
    std::ifstream in(report_in);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + report_in);
    const BiasReport report = BiasReport::from_json(json::parse(in));
    for (const auto& p : emit_report(report, parse_formats(report_formats), report_out)) {
      std::cout << "wrote " << p.string() << '\n';
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.message() << '\n';
    return exit_code == kExitPartial ? kExitPartial : kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code == kExitPartial ? kExitPartial : kExitFailure;
  }
  return exit_code;
}
