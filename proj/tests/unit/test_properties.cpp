// Randomized invariants. Each property runs a fixed number of seeded cases;
// the failing case's seed is in the SCOPED_TRACE so it can be replayed.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fairlens/judge.hpp"
#include "fairlens/lexicon.hpp"
#include "fairlens/metrics.hpp"
#include "fairlens/modelio.hpp"
#include "fairlens/probes.hpp"
#include "fairlens/simulator.hpp"
#include "fairlens/text.hpp"
#include "support.hpp"

using namespace fairlens;
using fairlens::testing::Gen;

namespace {

constexpr int kCases = 200;

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST(Property, NormalizedBiasLiesInUnitInterval) {
  for (int seed = 0; seed < kCases; ++seed) {
    SCOPED_TRACE(seed);
    Gen g(seed);
    const std::size_t n = static_cast<std::size_t>(g.between(2, 9));
    std::vector<AttributeDistribution> dists(static_cast<std::size_t>(g.between(1, 12)));
    for (auto& d : dists) d.probs = g.distribution(n);
    const auto s = fd_bias(dists, n);
    EXPECT_GE(s.normalized, 0.0);
    EXPECT_LE(s.normalized, 1.0 + 1e-12);
    EXPECT_NEAR(s.normalized, s.raw_fd * normalization_factor(n), 1e-12);
    EXPECT_EQ(s.n_prompts, dists.size());
  }
}

TEST(Property, DistanceToUniformBoundedByOneHot) {
  for (int seed = 0; seed < kCases; ++seed) {
    SCOPED_TRACE(seed);
    Gen g(seed);
    const std::size_t n = static_cast<std::size_t>(g.between(2, 9));
    const auto p = g.distribution(n);
    EXPECT_LE(distance_to_uniform(p), std::sqrt(1.0 - 1.0 / static_cast<double>(n)) + 1e-12);
  }
}

TEST(Property, EmpiricalDistributionSumsToOneAndIgnoresOrder) {
  const auto& tax = AttributeTaxonomy::default_taxonomy();
  for (int seed = 0; seed < kCases; ++seed) {
    SCOPED_TRACE(seed);
    Gen g(seed);
    const auto& cat = tax.categories()[g.index(tax.categories().size())];
    std::vector<AnnotationRecord> records;
    const int n = g.between(1, 30);
    for (int i = 0; i < n; ++i) {
      const bool unknown = g.index(5) == 0;
      records.push_back(fairlens::testing::annotation(
          "p", i, {{cat.name, unknown ? std::string(kUnknownLabel) : cat.classes[g.index(cat.classes.size())]}}));
    }
    // Ensure at least one known label.
    records.push_back(fairlens::testing::annotation("p", n, {{cat.name, cat.classes[0]}}));
    const auto d = empirical_distribution(records, cat);
    EXPECT_NEAR(stable_sum(d.probs), 1.0, 1e-12);
    EXPECT_EQ(d.n_samples_used + d.n_unknown, records.size());
    std::shuffle(records.begin(), records.end(), g.engine());
    EXPECT_EQ(empirical_distribution(records, cat).probs, d.probs);
  }
}

TEST(Property, AssociationInvariantUnderRotation) {
  for (int seed = 0; seed < 60; ++seed) {
    SCOPED_TRACE(seed);
    Gen g(seed);
    const std::size_t dim = static_cast<std::size_t>(g.between(2, 16));
    const auto m = g.vector(dim), f = g.vector(dim), o = g.vector(dim);
    const auto q = g.orthogonal(dim);
    const double before = association_score(m, f, o);
    const double after = association_score(fairlens::testing::apply(q, m), fairlens::testing::apply(q, f),
                                           fairlens::testing::apply(q, o));
    EXPECT_NEAR(before, after, 1e-9);
    EXPECT_LE(std::abs(before), 2.0 + 1e-12);
    // Scaling any argument leaves cosines unchanged.
    auto scaled = o;
    const double k = g.uniform(0.1, 10.0);
    for (auto& x : scaled) x *= k;
    EXPECT_NEAR(association_score(m, f, scaled), before, 1e-9);
  }
}

TEST(Property, ConceptVectorIsUnit) {
  for (int seed = 0; seed < kCases; ++seed) {
    SCOPED_TRACE(seed);
    Gen g(seed);
    std::vector<Embedding> words;
    for (int i = g.between(1, 6); i > 0; --i) words.push_back(g.unit_vector(8));
    EXPECT_NEAR(norm(concept_vector(words)), 1.0, 1e-9);
  }
}

TEST(Property, TemplateBiasBoundedAndOrderSymmetric) {
  const auto templates = default_comparison_templates();
  for (int seed = 0; seed < kCases; ++seed) {
    SCOPED_TRACE(seed);
    Gen g(seed);
    const double pa = g.uniform(1e-6, 1.0), pb = g.uniform(1e-6, 1.0);
    const auto& t = templates[g.index(templates.size())];
    const double b = template_bias(pa, pb, t);
    EXPECT_LE(std::abs(b), 1.0 + 1e-12);
    ComparisonTemplate swapped = t;
    std::swap(swapped.option_a, swapped.option_b);
    std::swap(swapped.gender_a, swapped.gender_b);
    EXPECT_NEAR(template_bias(pb, pa, swapped), b, 1e-12);
    // Only the ratio matters.
    const double k = g.uniform(0.01, 1.0);
    EXPECT_NEAR(template_bias(pa * k, pb * k, t), b, 1e-9);
  }
}

TEST(Property, TokenBiasIsMeanOfTemplates) {
  const auto templates = default_comparison_templates();
  for (int seed = 0; seed < 40; ++seed) {
    SCOPED_TRACE(seed);
    Gen g(seed);
    SimulatedModelSpec spec;
    spec.token_probe.p_male = g.uniform(0.01, 0.99);
    spec.token_probe.none_shrink = g.uniform(0.0, 1.0);
    spec.token_probe.spelling_variants = g.index(2) == 0;
    SimulatedModel sim(spec, AttributeTaxonomy::default_taxonomy());
    TokenProbeOptions opts;
    opts.neutral_threshold = g.uniform(0.0, 0.5);
    const auto mode = g.index(2) == 0 ? SystemPromptMode::Default : SystemPromptMode::None;
    const auto r = token_probe("a " + g.word(), templates, sim, mode, opts);
    ASSERT_EQ(r.per_template.size(), templates.size());
    for (double b : r.per_template) EXPECT_LE(std::abs(b), 1.0 + 1e-12);
    EXPECT_NEAR(r.bias, stable_mean(r.per_template), 1e-12);
    EXPECT_EQ(r.skew, classify_skew(r.bias, opts.neutral_threshold));
  }
}

TEST(Property, ParseLabelAlwaysReturnsAnOption) {
  const auto& tax = AttributeTaxonomy::default_taxonomy();
  for (int seed = 0; seed < kCases; ++seed) {
    SCOPED_TRACE(seed);
    Gen g(seed);
    const auto& cat = tax.categories()[g.index(tax.categories().size())];
    std::vector<std::string> options = cat.classes;
    for (auto& o : options) o = text::title_case(o);
    options.emplace_back(kUnknownLabel);
    std::string answer;
    for (int w = g.between(0, 6); w > 0; --w) {
      answer += g.index(3) == 0 ? options[g.index(options.size())] : g.word();
      answer += g.index(4) == 0 ? ".\n" : " ";
    }
    const auto label = parse_label(answer, options);
    EXPECT_NE(std::find(options.begin(), options.end(), label), options.end()) << answer;
    // An exact option always round-trips.
    const auto& pick = options[g.index(options.size())];
    EXPECT_EQ(parse_label(pick, options), pick);
  }
}

TEST(Property, Base64RoundTrip) {
  for (int seed = 0; seed < kCases; ++seed) {
    SCOPED_TRACE(seed);
    Gen g(seed);
    std::string bytes(g.index(300), '\0');
    for (auto& c : bytes) c = static_cast<char>(g.index(256));
    const auto enc = base64_encode(bytes);
    EXPECT_EQ(enc.size() % 4, 0u);
    EXPECT_EQ(base64_decode(enc), bytes);
  }
}

TEST(Property, SimulatorPriorIsADistribution) {
  const auto& tax = AttributeTaxonomy::default_taxonomy();
  for (int seed = 0; seed < kCases; ++seed) {
    SCOPED_TRACE(seed);
    Gen g(seed);
    SimulatedModelSpec spec;
    for (const auto& cat : tax.categories()) {
      if (g.index(3) != 0) spec.default_prior[cat.name] = g.distribution(cat.classes.size());
    }
    spec.fairness_sensitivity = g.uniform();
    spec.no_system_prompt_shrink = g.uniform();
    SimulatedModel sim(spec, tax);
    std::optional<std::string> system;
    switch (g.index(3)) {
      case 0: break;
      case 1: system = "You are a helpful assistant."; break;
      default: system = "Depict a diverse range of people."; break;
    }
    for (const auto& cat : tax.categories()) {
      const auto p = sim.effective_prior("a " + g.word(), system, cat.name);
      ASSERT_EQ(p.size(), cat.classes.size());
      for (double x : p) EXPECT_GE(x, 0.0);
      EXPECT_NEAR(stable_sum(p), 1.0, 1e-12);
    }
  }
}

TEST(Property, WordCountsAddAcrossTexts) {
  const auto& lex = WordCategoryLexicon::default_lexicon();
  std::vector<std::string> vocab;
  for (const auto& grp : lex.groups(Dimension::Gender)) vocab.insert(vocab.end(), grp.words.begin(), grp.words.end());
  for (const auto& grp : lex.groups(Dimension::Age)) vocab.insert(vocab.end(), grp.words.begin(), grp.words.end());
  auto text = [&](Gen& g) {
    std::string s;
    for (int w = g.between(0, 12); w > 0; --w) {
      s += g.index(3) == 0 ? vocab[g.index(vocab.size())] : g.word();
      s += g.index(5) == 0 ? ", " : " ";
    }
    return s;
  };
  for (int seed = 0; seed < kCases; ++seed) {
    SCOPED_TRACE(seed);
    Gen g(seed);
    const std::string a = text(g), b = text(g);
    for (auto d : {Dimension::Gender, Dimension::Age}) {
      const auto both = word_distribution({a, b}, lex, d);
      const auto only_a = word_distribution({a}, lex, d);
      const auto only_b = word_distribution({b}, lex, d);
      for (const auto& [group, n] : both) {
        const auto get = [&](const auto& m) { return m.count(group) ? m.at(group) : std::size_t{0}; };
        EXPECT_EQ(n, get(only_a) + get(only_b)) << group;
      }
      // Case does not matter.
      std::string upper = a;
      std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
      EXPECT_EQ(word_distribution({upper}, lex, d), only_a);
    }
  }
}

TEST(Property, DiversityWithinCosineRange) {
  for (int seed = 0; seed < kCases; ++seed) {
    SCOPED_TRACE(seed);
    Gen g(seed);
    std::vector<Embedding> e;
    for (int i = g.between(2, 10); i > 0; --i) e.push_back(g.unit_vector(6));
    const double d = pairwise_diversity(e, static_cast<std::size_t>(g.between(1, 10)), static_cast<std::uint64_t>(seed));
    EXPECT_GE(d, -1.0 - 1e-12);
    EXPECT_LE(d, 1.0 + 1e-12);
  }
}

TEST(Property, PearsonInvariantUnderPositiveAffineMaps) {
  for (int seed = 0; seed < kCases; ++seed) {
    SCOPED_TRACE(seed);
    Gen g(seed);
    const std::size_t n = static_cast<std::size_t>(g.between(3, 20));
    const auto xs = g.vector(n), ys = g.vector(n);
    const double r = pearson(xs, ys);
    EXPECT_LE(std::abs(r), 1.0 + 1e-12);
    auto moved = xs;
    const double a = g.uniform(0.1, 5.0), b = g.uniform(-3.0, 3.0);
    for (auto& x : moved) x = a * x + b;
    EXPECT_NEAR(pearson(moved, ys), r, 1e-9);
    EXPECT_NEAR(pearson(ys, xs), r, 1e-12);
  }
}
