#include <gtest/gtest.h>

#include "fairlens/error.hpp"
#include "fairlens/simulator.hpp"
#include "support.hpp"

using namespace fairlens;

namespace {

const AttributeTaxonomy& tax() { return AttributeTaxonomy::default_taxonomy(); }

std::size_t count_male(SimulatedModel& sim, const std::string& prompt, const std::optional<std::string>& system,
                       std::int64_t seeds) {
  std::size_t male = 0;
  for (std::int64_t s = 0; s < seeds; ++s) {
    ImageRequest req;
    req.user_prompt = prompt;
    req.system_prompt = system;
    req.seed = s;
    male += sim.generate(req).ground_truth.at("gender") == "male" ? 1 : 0;
  }
  return male;
}

}  // namespace

TEST(SimulatorSpec, RejectsBadPriors) {
  SimulatedModelSpec spec;
  spec.default_prior["gender"] = {0.7, 0.2};
  EXPECT_THROW(SimulatedModel(spec, tax()), Error);
  spec.default_prior["gender"] = {1.2, -0.2};
  EXPECT_THROW(SimulatedModel(spec, tax()), Error);
  spec.default_prior["gender"] = {0.5, 0.3, 0.2};
  EXPECT_THROW(SimulatedModel(spec, tax()), Error);
  spec.default_prior = {{"height", {0.5, 0.5}}};
  EXPECT_THROW(SimulatedModel(spec, tax()), Error);
  spec.default_prior.clear();
  spec.fairness_sensitivity = 1.5;
  EXPECT_THROW(SimulatedModel(spec, tax()), Error);
}

TEST(SimulatorSpec, JsonRoundTrip) {
  SimulatedModelSpec spec;
  spec.priors["a nurse"]["gender"] = {0.1, 0.9};
  spec.default_prior["age"] = {0.2, 0.6, 0.2};
  spec.fairness_sensitivity = 0.4;
  spec.rewrite_behavior = RewriteBehavior::Verbose;
  spec.token_probe.per_occupation["a nurse"] = 0.2;
  spec.scripted.push_back({"hello", "world"});
  EXPECT_EQ(SimulatedModelSpec::from_json(spec.to_json()).to_json(), spec.to_json());
}

TEST(Simulator, DegeneratePriorAlwaysMale) {
  SimulatedModel sim(fairlens::testing::planted_spec({{"gender", {1.0, 0.0}}}), tax());
  EXPECT_EQ(count_male(sim, "a baker", profile("qwen-image").default_system_prompt, 200), 200u);
}

TEST(Simulator, FairnessAwarePromptFlattensPrior) {
  auto spec = fairlens::testing::planted_spec({{"gender", {1.0, 0.0}}});
  spec.fairness_sensitivity = 1.0;
  SimulatedModel sim(spec, tax());
  const auto p = sim.effective_prior("a baker", std::string("Depict people of diverse genders."), "gender");
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Simulator, ZeroSensitivityLeavesPrior) {
  auto spec = fairlens::testing::planted_spec({{"gender", {0.7, 0.3}}});
  SimulatedModel sim(spec, tax());
  const auto p = sim.effective_prior("a baker", std::string("Depict people of diverse genders."), "gender");
  EXPECT_DOUBLE_EQ(p[0], 0.7);
}

TEST(Simulator, DefaultSystemPromptsAreNotFairnessAware) {
  SimulatedModel sim(fairlens::testing::planted_spec({}), tax());
  for (const auto& name : profile_names()) {
    EXPECT_FALSE(sim.is_fairness_aware(profile(name).default_system_prompt)) << name;
  }
  EXPECT_TRUE(sim.is_fairness_aware(std::string("Show a diverse range of people.")));
  EXPECT_FALSE(sim.is_fairness_aware(std::nullopt));
}

TEST(Simulator, FairnessWordsInUserPromptDoNotSteer) {
  auto spec = fairlens::testing::planted_spec({{"gender", {0.9, 0.1}}});
  spec.fairness_sensitivity = 1.0;
  SimulatedModel sim(spec, tax());
  const auto p = sim.effective_prior("a diverse, inclusive picture of a baker", std::string("plain"), "gender");
  EXPECT_DOUBLE_EQ(p[0], 0.9);
}

TEST(Simulator, NamedAttributeIsRendered) {
  SimulatedModel sim(fairlens::testing::planted_spec({{"gender", {1.0, 0.0}}}), tax());
  EXPECT_EQ(count_male(sim, "Female accountant", std::nullopt, 50), 0u);
}

TEST(Simulator, MonteCarloMatchesPrior) {
  SimulatedModel sim(fairlens::testing::planted_spec({{"gender", {0.7, 0.3}}}), tax());
  const double freq = static_cast<double>(count_male(sim, "a baker", std::string("sys"), 10000)) / 10000.0;
  EXPECT_NEAR(freq, 0.7, 0.02);
}

TEST(Simulator, PerOccupationPriorBeatsDefault) {
  auto spec = fairlens::testing::planted_spec({{"gender", {0.5, 0.5}}});
  spec.priors["a home health aide"]["gender"] = {0.0, 1.0};
  spec.priors["an aide"]["gender"] = {1.0, 0.0};
  SimulatedModel sim(spec, tax());
  // Longest match wins.
  EXPECT_EQ(sim.detect_occupation("A tired home health aide at night"), std::optional<std::string>("a home health aide"));
  EXPECT_EQ(count_male(sim, "a home health aide", std::nullopt, 30), 0u);
}

TEST(Simulator, GenerationIsDeterministicAndUnit) {
  SimulatedModel sim(fairlens::testing::planted_spec({}), tax());
  ImageRequest req;
  req.user_prompt = "a chef";
  req.seed = 4;
  const auto a = sim.generate(req);
  const auto b = sim.generate(req);
  EXPECT_EQ(a.image_ref, b.image_ref);
  EXPECT_EQ(a.ground_truth, b.ground_truth);
  ASSERT_TRUE(a.image_embedding);
  EXPECT_NEAR(l2_norm(*a.image_embedding), 1.0, 1e-9);
  req.seed = 5;
  EXPECT_NE(sim.generate(req).image_ref, a.image_ref);
}

TEST(Simulator, ScriptedReplyWins) {
  auto spec = fairlens::testing::planted_spec({});
  spec.scripted.push_back({"magic", "scripted answer"});
  SimulatedModel sim(spec, tax());
  ChatRequest r;
  r.user_prompt = "say the magic word";
  EXPECT_EQ(sim.complete(r).text, "scripted answer");
}

TEST(Simulator, InjectDemographicUsesPronoun) {
  auto spec = fairlens::testing::planted_spec({{"gender", {1.0, 0.0}}});
  spec.rewrite_behavior = RewriteBehavior::InjectDemographic;
  SimulatedModel sim(spec, tax());
  ChatRequest r;
  r.user_prompt = "Rewrite this.\nPrompt: a cab driver";
  const auto text = sim.complete(r).text;
  EXPECT_NE(text.find(" his "), std::string::npos) << text;
}

TEST(Simulator, CallCounters) {
  SimulatedModel sim(fairlens::testing::planted_spec({}), tax());
  ChatRequest r;
  r.user_prompt = "x";
  sim.complete(r);
  sim.embed_raw({"a"}, std::nullopt);
  ImageRequest ir;
  ir.user_prompt = "a chef";
  sim.generate(ir);
  EXPECT_EQ(sim.chat_calls(), 1u);
  EXPECT_EQ(sim.embed_calls(), 1u);
  EXPECT_EQ(sim.image_calls(), 1u);
  EXPECT_EQ(sim.total_calls(), 3u);
}
