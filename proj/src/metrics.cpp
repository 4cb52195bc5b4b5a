#include "fairlens/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "fairlens/error.hpp"
#include "fairlens/rng.hpp"

namespace fairlens {

using nlohmann::json;

double stable_sum(std::span<const double> values) {
  double sum = 0.0;
  double comp = 0.0;
  for (double v : values) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      comp += (sum - t) + v;
    } else {
      comp += (v - t) + sum;
    }
    sum = t;
  }
  return sum + comp;
}

double stable_mean(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::InvalidInput, "mean of an empty sequence");
  return stable_sum(values) / static_cast<double>(values.size());
}

AttributeDistribution empirical_distribution(std::span<const AnnotationRecord> records,
                                             const AttributeCategory& category) {
  AttributeDistribution d;
  d.category = category.name;
  d.support = category.classes;
  std::vector<std::size_t> counts(category.classes.size(), 0);
  for (const auto& r : records) {
    const auto it = r.labels.find(category.name);
    if (it == r.labels.end()) continue;
    const auto pos = std::find(category.classes.begin(), category.classes.end(), it->second);
    if (pos == category.classes.end()) {
      ++d.n_unknown;
      continue;
    }
    ++counts[static_cast<std::size_t>(pos - category.classes.begin())];
    ++d.n_samples_used;
  }
  if (d.n_samples_used == 0) {
    throw Error(ErrorCode::EmptyDistribution, "no known " + category.name + " labels");
  }
  d.probs.reserve(counts.size());
  for (std::size_t c : counts) {
    d.probs.push_back(static_cast<double>(c) / static_cast<double>(d.n_samples_used));
  }
  return d;
}

double normalization_factor(std::size_t n_classes) {
  if (n_classes < 2) throw Error(ErrorCode::InvalidInput, "normalization needs at least two classes");
  return 1.0 / std::sqrt(1.0 - 1.0 / static_cast<double>(n_classes));
}

double distance_to_uniform(std::span<const double> probs) {
  if (probs.empty()) throw Error(ErrorCode::InvalidInput, "empty distribution");
  const double u = 1.0 / static_cast<double>(probs.size());
  std::vector<double> sq;
  sq.reserve(probs.size());
  for (double p : probs) sq.push_back((p - u) * (p - u));
  return std::sqrt(stable_sum(sq));
}

json BiasScore::to_json() const {
  return {{"category", category}, {"raw_fd", raw_fd}, {"normalized", normalized},
          {"n_prompts", n_prompts}, {"n_samples_used", n_samples_used}};
}

BiasScore BiasScore::from_json(const json& j) {
  return {j.at("category").get<std::string>(), j.at("raw_fd").get<double>(),
          j.at("normalized").get<double>(), j.at("n_prompts").get<std::size_t>(),
          j.at("n_samples_used").get<std::size_t>()};
}

BiasScore fd_bias(std::span<const AttributeDistribution> dists, std::size_t n_classes) {
  if (dists.empty()) throw Error(ErrorCode::NoDataForCategory, "no scorable prompts");
  BiasScore s;
  s.category = dists.front().category;
  std::vector<double> distances;
  distances.reserve(dists.size());
  for (const auto& d : dists) {
    if (d.probs.size() != n_classes) {
      throw Error(ErrorCode::InvalidInput, "distribution over " + std::to_string(d.probs.size()) +
                                               " classes, expected " + std::to_string(n_classes));
    }
    distances.push_back(distance_to_uniform(d.probs));
    s.n_samples_used += d.n_samples_used;
  }
  s.raw_fd = stable_mean(distances);
  s.normalized = s.raw_fd * normalization_factor(n_classes);
  s.n_prompts = dists.size();
  return s;
}

namespace {

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw Error(ErrorCode::EmbeddingShapeError, "embedding dimensions differ");
  }
  std::vector<double> ab, aa, bb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab.push_back(a[i] * b[i]);
    aa.push_back(a[i] * a[i]);
    bb.push_back(b[i] * b[i]);
  }
  const double na = std::sqrt(stable_sum(aa));
  const double nb = std::sqrt(stable_sum(bb));
  if (!(na > 0.0) || !(nb > 0.0)) throw Error(ErrorCode::EmbeddingShapeError, "zero-norm embedding");
  return stable_sum(ab) / (na * nb);
}

}  // namespace

double alignment_score(std::span<const double> image_embedding, std::span<const double> text_embedding) {
  return cosine(image_embedding, text_embedding);
}

double pairwise_diversity(const std::vector<Embedding>& embeddings, std::size_t n_pairs, std::uint64_t seed) {
  const std::size_t n = embeddings.size();
  if (n < 2) throw Error(ErrorCode::NotEnoughSamples, "diversity needs at least two samples");
  if (n_pairs == 0) throw Error(ErrorCode::InvalidInput, "n_pairs must be positive");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  }
  if (n_pairs < pairs.size()) {
    SeededRng rng(seed);
    for (std::size_t k = 0; k < n_pairs; ++k) {
      std::swap(pairs[k], pairs[k + rng.uniform_index(pairs.size() - k)]);
    }
    pairs.resize(n_pairs);
  }
  std::vector<double> sims;
  for (const auto& [i, j] : pairs) sims.push_back(cosine(embeddings[i], embeddings[j]));
  return stable_mean(sims);
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error(ErrorCode::InvalidInput, "pearson inputs differ in length");
  if (xs.size() < 2) throw Error(ErrorCode::UndefinedCorrelation, "pearson needs at least two points");
  const double mx = stable_mean(xs);
  const double my = stable_mean(ys);
  std::vector<double> sxy, sxx, syy;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy.push_back((xs[i] - mx) * (ys[i] - my));
    sxx.push_back((xs[i] - mx) * (xs[i] - mx));
    syy.push_back((ys[i] - my) * (ys[i] - my));
  }
  const double vx = stable_sum(sxx);
  const double vy = stable_sum(syy);
  if (!(vx > 0.0) || !(vy > 0.0)) throw Error(ErrorCode::UndefinedCorrelation, "zero variance");
  return stable_sum(sxy) / std::sqrt(vx * vy);
}

// --- report ------------------------------------------------------------------

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  return stable_mean(v);
}

}  // namespace

const ReportCell* BiasReport::cell(std::string_view mode, PromptLevel level, std::string_view category) const {
  for (const auto& c : cells) {
    if (c.mode == mode && c.level == level && c.category == category) return &c;
  }
  return nullptr;
}

const LevelSummary* BiasReport::summary(std::string_view mode, PromptLevel level) const {
  for (const auto& s : level_summaries) {
    if (s.mode == mode && s.level == level) return &s;
  }
  return nullptr;
}

const CategoryMean* BiasReport::category_mean(std::string_view mode, std::string_view category) const {
  for (const auto& m : category_means) {
    if (m.mode == mode && m.category == category) return &m;
  }
  return nullptr;
}

json BiasReport::to_json() const {
  json j;
  j["model_name"] = model_name;
  j["modes"] = modes;
  json lv = json::array();
  for (auto l : levels) lv.push_back(std::string(to_string(l)));
  j["levels"] = lv;
  j["categories"] = categories;
  json cs = json::array();
  for (const auto& c : cells) {
    cs.push_back({{"mode", c.mode},
                  {"level", std::string(to_string(c.level))},
                  {"category", c.category},
                  {"score", c.score ? c.score->to_json() : json(nullptr)},
                  {"skipped_prompts", c.skipped_prompts},
                  {"note", c.note}});
  }
  j["cells"] = cs;
  json ss = json::array();
  for (const auto& s : level_summaries) {
    ss.push_back({{"mode", s.mode},
                  {"level", std::string(to_string(s.level))},
                  {"mean_bias", opt_json(s.mean_bias)},
                  {"alignment", opt_json(s.alignment)},
                  {"diversity", opt_json(s.diversity)},
                  {"unknown_rate", s.unknown_rate},
                  {"n_annotations", s.n_annotations}});
  }
  j["level_summaries"] = ss;
  json cm = json::array();
  for (const auto& m : category_means) {
    cm.push_back({{"mode", m.mode}, {"category", m.category}, {"mean_bias", opt_json(m.mean_bias)}});
  }
  j["category_means"] = cm;
  json mm = json::object();
  for (const auto& [k, v] : mode_means) mm[k] = opt_json(v);
  j["mode_means"] = mm;
  json pr = json::object();
  for (const auto& [k, v] : pearson_r) pr[k] = opt_json(v);
  j["pearson_r"] = pr;
  j["notes"] = notes;
  j["partial"] = partial;
  return j;
}

BiasReport BiasReport::from_json(const json& j) {
  BiasReport r;
  r.model_name = j.at("model_name").get<std::string>();
  r.modes = j.at("modes").get<std::vector<std::string>>();
  for (const auto& l : j.at("levels")) r.levels.push_back(parse_level(l.get<std::string>()));
  r.categories = j.at("categories").get<std::vector<std::string>>();
  for (const auto& c : j.at("cells")) {
    ReportCell cell;
    cell.mode = c.at("mode").get<std::string>();
    cell.level = parse_level(c.at("level").get<std::string>());
    cell.category = c.at("category").get<std::string>();
    if (!c.at("score").is_null()) cell.score = BiasScore::from_json(c["score"]);
    cell.skipped_prompts = c.value("skipped_prompts", std::size_t{0});
    cell.note = c.value("note", std::string{});
    r.cells.push_back(std::move(cell));
  }
  for (const auto& s : j.at("level_summaries")) {
    LevelSummary ls;
    ls.mode = s.at("mode").get<std::string>();
    ls.level = parse_level(s.at("level").get<std::string>());
    ls.mean_bias = opt_from(s, "mean_bias");
    ls.alignment = opt_from(s, "alignment");
    ls.diversity = opt_from(s, "diversity");
    ls.unknown_rate = s.value("unknown_rate", 0.0);
    ls.n_annotations = s.value("n_annotations", std::size_t{0});
    r.level_summaries.push_back(ls);
  }
  for (const auto& m : j.at("category_means")) {
    r.category_means.push_back(
        {m.at("mode").get<std::string>(), m.at("category").get<std::string>(), opt_from(m, "mean_bias")});
  }
  for (const auto& [k, v] : j.at("mode_means").items()) {
    r.mode_means[k] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
  }
  for (const auto& [k, v] : j.at("pearson_r").items()) {
    r.pearson_r[k] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
  }
  r.notes = j.value("notes", std::vector<std::string>{});
  r.partial = j.value("partial", false);
  return r;
}

BiasReport aggregate_report(const std::vector<AnnotationRecord>& annotations,
                            const std::vector<GenerationRecord>& generations,
                            const std::map<std::string, Embedding>& text_embeddings,
                            const PromptSet& prompts, const ReportConfig& config) {
  const AttributeTaxonomy& taxonomy = prompts.taxonomy();
  BiasReport report;
  report.model_name = config.model_name;
  report.modes = config.modes;
  report.levels = config.levels;
  report.categories = taxonomy.category_names();

  const std::set<std::int64_t> seeds(config.seeds.begin(), config.seeds.end());
  auto seed_ok = [&](std::int64_t s) { return seeds.empty() || seeds.count(s) > 0; };

  using Key = std::pair<std::string, std::string>;  // (mode, prompt id)
  std::map<Key, std::vector<AnnotationRecord>> by_prompt;
  for (const auto& a : annotations) {
    if (seed_ok(a.seed)) by_prompt[{a.mode, a.prompt_id}].push_back(a);
  }
  std::map<Key, std::vector<const GenerationRecord*>> gens_by_prompt;
  for (const auto& g : generations) {
    if (seed_ok(g.seed)) gens_by_prompt[{g.mode, g.prompt_id}].push_back(&g);
  }
  for (auto& [_, v] : gens_by_prompt) {
    std::sort(v.begin(), v.end(), [](const auto* a, const auto* b) { return a->seed < b->seed; });
  }

  std::size_t missing = 0;
  for (const auto& mode : config.modes) {
    for (const auto level : config.levels) {
      std::vector<const Prompt*> level_prompts;
      for (const auto& p : prompts.prompts()) {
        if (p.level == level) level_prompts.push_back(&p);
      }

      LevelSummary summary;
      summary.mode = mode;
      summary.level = level;
      std::size_t labels_total = 0;
      std::size_t labels_unknown = 0;
      for (const auto* p : level_prompts) {
        const auto it = by_prompt.find({mode, p->id});
        const std::size_t have = it == by_prompt.end() ? 0 : it->second.size();
        if (!seeds.empty() && have < seeds.size()) missing += seeds.size() - have;
        if (it == by_prompt.end()) continue;
        summary.n_annotations += have;
        for (const auto& a : it->second) {
          for (const auto& [cat, label] : a.labels) {
            ++labels_total;
            if (label == kUnknownLabel) ++labels_unknown;
          }
        }
      }
      summary.unknown_rate =
          labels_total ? static_cast<double>(labels_unknown) / static_cast<double>(labels_total) : 0.0;

      std::vector<double> level_scores;
      for (const auto& cat : taxonomy.categories()) {
        ReportCell cell;
        cell.mode = mode;
        cell.level = level;
        cell.category = cat.name;
        std::vector<AttributeDistribution> dists;
        for (const auto* p : prompts.evaluation_set(cat.name, level)) {
          const auto it = by_prompt.find({mode, p->id});
          if (it == by_prompt.end()) continue;
          try {
            dists.push_back(empirical_distribution(it->second, cat));
          } catch (const Error& e) {
            if (e.code() != ErrorCode::EmptyDistribution) throw;
            ++cell.skipped_prompts;
          }
        }
        if (dists.empty()) {
          cell.note = "no scorable prompts";
        } else {
          cell.score = fd_bias(dists, cat.classes.size());
          level_scores.push_back(cell.score->normalized);
        }
        report.cells.push_back(std::move(cell));
      }
      summary.mean_bias = mean_of(level_scores);

      std::vector<double> aligns;
      std::vector<double> diversities;
      for (const auto* p : level_prompts) {
        const auto it = gens_by_prompt.find({mode, p->id});
        if (it == gens_by_prompt.end()) continue;
        const auto te = text_embeddings.find(p->id);
        std::vector<Embedding> embs;
        for (const auto* g : it->second) {
          if (!g->image_embedding) continue;
          embs.push_back(*g->image_embedding);
          if (te != text_embeddings.end()) aligns.push_back(alignment_score(*g->image_embedding, te->second));
        }
        if (embs.size() >= 2) {
          diversities.push_back(pairwise_diversity(embs, config.diversity_pairs, stable_hash(p->id)));
        }
      }
      summary.alignment = mean_of(aligns);
      summary.diversity = mean_of(diversities);
      report.level_summaries.push_back(summary);
    }

    std::vector<double> cat_means;
    for (const auto& cat : taxonomy.categories()) {
      std::vector<double> v;
      for (const auto level : config.levels) {
        const auto* c = report.cell(mode, level, cat.name);
        if (c && c->score) v.push_back(c->score->normalized);
      }
      CategoryMean m{mode, cat.name, mean_of(v)};
      if (m.mean_bias) cat_means.push_back(*m.mean_bias);
      report.category_means.push_back(m);
    }
    report.mode_means[mode] = mean_of(cat_means);

    std::vector<double> xs, ys;
    for (const auto level : config.levels) {
      const auto* s = report.summary(mode, level);
      if (s && s->alignment && s->mean_bias) {
        xs.push_back(*s->alignment);
        ys.push_back(*s->mean_bias);
      }
    }
    try {
      report.pearson_r[mode] = pearson(xs, ys);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::UndefinedCorrelation) throw;
      report.pearson_r[mode] = std::nullopt;
    }
  }

  if (missing > 0) {
    report.partial = true;
    report.notes.push_back(std::to_string(missing) + " expected annotations are missing");
  }
  if (text_embeddings.empty()) report.notes.push_back("alignment unavailable: no text embeddings");
  report.notes.push_back("LPIPS unavailable: diversity is the mean pairwise cosine similarity of image embeddings");
  return report;
}

namespace {

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string fmt_opt(const std::optional<double>& v, const std::string& missing) {
  return v ? fmt(*v) : missing;
}

}  // namespace

std::string report_to_csv(const BiasReport& report) {
  std::ostringstream os;
  os << "mode,level,category,bias,raw_fd,n_prompts,n_samples_used,skipped_prompts\n";
  for (const auto& c : report.cells) {
    os << c.mode << ',' << to_string(c.level) << ',' << c.category << ',';
    if (c.score) {
      os << fmt(c.score->normalized, 6) << ',' << fmt(c.score->raw_fd, 6) << ',' << c.score->n_prompts << ','
         << c.score->n_samples_used;
    } else {
      os << ",,0,0";
    }
    os << ',' << c.skipped_prompts << '\n';
  }
  return os.str();
}

std::string report_to_markdown(const BiasReport& report) {
  const std::string dash = "—";
  bool any_missing = false;
  std::ostringstream os;
  os << "# Bias report: " << report.model_name << "\n\n";
  if (report.partial) os << "**Partial run:** some expected annotations are missing.\n\n";

  os << "## Bias by attribute (mean over prompt levels)\n\n| Method |";
  for (const auto& c : report.categories) os << ' ' << c << " |";
  os << " Mean |\n|---|";
  for (std::size_t i = 0; i <= report.categories.size(); ++i) os << "---|";
  os << '\n';
  for (const auto& mode : report.modes) {
    os << "| " << mode << " |";
    for (const auto& c : report.categories) {
      const auto* m = report.category_mean(mode, c);
      const bool have = m && m->mean_bias;
      any_missing |= !have;
      os << ' ' << (have ? fmt(*m->mean_bias) : dash) << " |";
    }
    const auto it = report.mode_means.find(mode);
    const bool have = it != report.mode_means.end() && it->second;
    any_missing |= !have;
    os << ' ' << (have ? fmt(*it->second) : dash) << " |\n";
  }

  os << "\n## By prompt level\n\n| Method | Level |";
  for (const auto& c : report.categories) os << ' ' << c << " |";
  os << " Bias | Alignment | Diversity | Unknown rate |\n|---|---|";
  for (std::size_t i = 0; i < report.categories.size() + 4; ++i) os << "---|";
  os << '\n';
  for (const auto& mode : report.modes) {
    for (const auto level : report.levels) {
      os << "| " << mode << " | " << to_string(level) << " |";
      for (const auto& c : report.categories) {
        const auto* cell = report.cell(mode, level, c);
        const bool have = cell && cell->score;
        any_missing |= !have;
        os << ' ' << (have ? fmt(cell->score->normalized) : dash) << " |";
      }
      const auto* s = report.summary(mode, level);
      if (s) {
        any_missing |= !s->mean_bias || !s->alignment || !s->diversity;
        os << ' ' << fmt_opt(s->mean_bias, dash) << " | " << fmt_opt(s->alignment, dash) << " | "
           << fmt_opt(s->diversity, dash) << " | " << fmt(s->unknown_rate) << " |\n";
      } else {
        any_missing = true;
        os << ' ' << dash << " | " << dash << " | " << dash << " | " << dash << " |\n";
      }
    }
  }

  os << "\n## Alignment and bias correlation\n\n| Method | Pearson r |\n|---|---|\n";
  for (const auto& mode : report.modes) {
    const auto it = report.pearson_r.find(mode);
    const bool have = it != report.pearson_r.end() && it->second;
    any_missing |= !have;
    os << "| " << mode << " | " << (have ? fmt(*it->second) : dash) << " |\n";
  }

  if (any_missing) os << "\n" << dash << " no data: the cell had no scorable prompts or the value is undefined.\n";
  if (!report.notes.empty()) {
    os << "\n## Notes\n\n";
    for (const auto& n : report.notes) os << "- " << n << '\n';
  }
  return os.str();
}

}  // namespace fairlens
