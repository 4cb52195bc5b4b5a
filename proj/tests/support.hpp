#pragma once

// Shared helpers for the unit and acceptance tests: seeded input generators,
// temp directories and small in-memory pipelines over the simulator.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fairlens/corpus.hpp"
#include "fairlens/fairpro.hpp"
#include "fairlens/judge.hpp"
#include "fairlens/metrics.hpp"
#include "fairlens/modelio.hpp"
#include "fairlens/simulator.hpp"

namespace fairlens::testing {

// Seeded generator for property tests. Every case prints its seed on failure
// through the caller's SCOPED_TRACE, so a failing input can be replayed.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return lo + (hi - lo) * std::generate_canonical<double, 53>(engine_);
  }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

  int between(int lo, int hi) { return lo + static_cast<int>(index(static_cast<std::size_t>(hi - lo + 1))); }

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

  // Point on the simplex. Some draws are sparse so extreme shapes show up.
  std::vector<double> distribution(std::size_t n) {
    std::vector<double> p(n);
    const bool sparse = index(4) == 0;
    double total = 0.0;
    for (auto& x : p) {
      x = sparse && index(2) == 0 ? 0.0 : -std::log(uniform(1e-12, 1.0));
      total += x;
    }
    if (total == 0.0) {
      p[index(n)] = 1.0;
      return p;
    }
    for (auto& x : p) x /= total;
    return p;
  }

  std::vector<double> vector(std::size_t dim) {
    std::vector<double> v(dim);
    for (auto& x : v) x = normal();
    return v;
  }

  std::vector<double> unit_vector(std::size_t dim) {
    for (;;) {
      auto v = vector(dim);
      double n = 0.0;
      for (double x : v) n += x * x;
      if (n < 1e-12) continue;
      for (auto& x : v) x /= std::sqrt(n);
      return v;
    }
  }

  // Random orthogonal matrix (row-major) via Gram-Schmidt on Gaussian rows.
  std::vector<std::vector<double>> orthogonal(std::size_t dim) {
    std::vector<std::vector<double>> q;
    while (q.size() < dim) {
      auto v = vector(dim);
      for (const auto& row : q) {
        double d = 0.0;
        for (std::size_t i = 0; i < dim; ++i) d += v[i] * row[i];
        for (std::size_t i = 0; i < dim; ++i) v[i] -= d * row[i];
      }
      double n = 0.0;
      for (double x : v) n += x * x;
      if (n < 1e-8) continue;
      for (auto& x : v) x /= std::sqrt(n);
      q.push_back(std::move(v));
    }
    return q;
  }

  std::string word(std::size_t max_len = 8) {
    static constexpr char kLetters[] = "abcdefghijklmnopqrstuvwxyz";
    std::string s(1 + index(max_len), 'a');
    for (auto& c : s) c = kLetters[index(26)];
    return s;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

inline std::vector<double> apply(const std::vector<std::vector<double>>& m, const std::vector<double>& v) {
  std::vector<double> out(m.size(), 0.0);
  for (std::size_t r = 0; r < m.size(); ++r) {
    for (std::size_t c = 0; c < v.size(); ++c) out[r] += m[r][c] * v[c];
  }
  return out;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("fairlens-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline AnnotationRecord annotation(std::string prompt_id, std::int64_t seed, std::map<std::string, std::string> labels,
                                   std::string mode = "default") {
  AnnotationRecord r;
  r.prompt_id = std::move(prompt_id);
  r.seed = seed;
  r.mode = std::move(mode);
  r.labels = std::move(labels);
  r.judge_model = "test";
  return r;
}

// Spec whose every occupation samples from `prior` (category -> probs).
inline SimulatedModelSpec planted_spec(std::map<std::string, std::vector<double>> prior) {
  SimulatedModelSpec spec;
  spec.default_prior = std::move(prior);
  for (const auto& name : profile_names()) spec.default_system_prompts.push_back(profile(name).default_system_prompt);
  return spec;
}

struct InMemoryRun {
  std::vector<GenerationRecord> generations;
  std::vector<AnnotationRecord> annotations;
};

// Generates and judges every prompt under `mode` with the simulator playing
// generator, meta LVLM and judge, without touching disk.
inline InMemoryRun simulate_mode(SimulatedModel& sim, const std::vector<Prompt>& prompts, PromptMode mode,
                                 std::int64_t n_seeds, const std::string& profile_name = "qwen-image") {
  InMemoryRun run;
  const std::string& s_default = profile(profile_name).default_system_prompt;
  Annotator annotator(sim, sim.taxonomy());
  const std::string mode_name(to_string(mode));
  for (const auto& p : prompts) {
    std::optional<FairPromptResult> fair;
    if (uses_meta_call(mode)) fair = fair_system_prompt(p.text, sim, mode);
    const auto inputs = assemble_generation_inputs(mode, fair ? &*fair : nullptr, p.text, s_default);
    for (std::int64_t seed = 0; seed < n_seeds; ++seed) {
      GenerationRecord g = generate_image(sim, inputs.system_prompt, inputs.user_prompt, seed);
      g.prompt_id = p.id;
      g.mode = mode_name;
      AnnotationRecord a = annotator.annotate(g, p);
      run.generations.push_back(std::move(g));
      run.annotations.push_back(std::move(a));
    }
  }
  return run;
}

inline BiasReport score(const std::vector<AnnotationRecord>& annotations, const PromptSet& prompts,
                        std::vector<std::string> modes) {
  ReportConfig rc;
  rc.model_name = "simulated";
  rc.modes = std::move(modes);
  std::set<PromptLevel> levels;
  for (const auto& p : prompts.prompts()) levels.insert(p.level);
  rc.levels.assign(levels.begin(), levels.end());
  return aggregate_report(annotations, {}, {}, prompts, rc);
}

}  // namespace fairlens::testing
