#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "fairlens/corpus.hpp"
#include "fairlens/error.hpp"
#include "fairlens/text.hpp"
#include "fairlens/lexicon.hpp"
#include "fairlens/simulator.hpp"
#include "support.hpp"

using namespace fairlens;

namespace {

std::vector<std::string> load(const std::string& s, std::vector<std::string>* warnings = nullptr) {
  std::istringstream in(s);
  return load_occupations(in, warnings);
}

// Chat model that always answers with the same text.
class FixedReply final : public ChatModel {
 public:
  explicit FixedReply(std::string reply) : reply_(std::move(reply)) {}
  ChatResponse complete(const ChatRequest&) override { return {reply_, std::nullopt}; }
  std::string identity() const override { return "fixed"; }

 private:
  std::string reply_;
};

// Fails on prompts mentioning `poison`, echoes everything else.
class FailingOn final : public ChatModel {
 public:
  explicit FailingOn(std::string poison) : poison_(std::move(poison)) {}
  ChatResponse complete(const ChatRequest& r) override {
    if (r.user_prompt.find(poison_) != std::string::npos) throw Error(ErrorCode::EndpointError, "boom");
    return {"rewritten", std::nullopt};
  }
  std::string identity() const override { return "failing"; }

 private:
  std::string poison_;
};

}  // namespace

TEST(Taxonomy, DefaultShape) {
  const auto& t = AttributeTaxonomy::default_taxonomy();
  ASSERT_EQ(t.categories().size(), 4u);
  EXPECT_EQ(t.category("gender").classes.size(), 2u);
  EXPECT_EQ(t.category("age").classes.size(), 3u);
  EXPECT_EQ(t.category("ethnicity").classes.size(), 7u);
  EXPECT_EQ(t.category("body_type").classes.size(), 4u);
  for (const auto& c : t.categories()) {
    std::set<std::string> unique(c.classes.begin(), c.classes.end());
    EXPECT_EQ(unique.size(), c.classes.size()) << c.name;
    for (const auto& label : c.classes) EXPECT_FALSE(label.empty());
  }
}

TEST(Taxonomy, RejectsSingleClassCategory) {
  EXPECT_THROW(AttributeTaxonomy(std::vector<AttributeCategory>{{"solo", {"only"}}}), Error);
}

TEST(Taxonomy, JsonRoundTrip) {
  const auto& t = AttributeTaxonomy::default_taxonomy();
  EXPECT_EQ(AttributeTaxonomy::from_json(t.to_json()).to_json(), t.to_json());
}

TEST(LoadOccupations, KeepsListedOrder) {
  EXPECT_EQ(load("an accountant\na baker\n"), (std::vector<std::string>{"an accountant", "a baker"}));
}

TEST(LoadOccupations, IgnoresBlankLines) {
  EXPECT_EQ(load("an accountant\n\n  \na baker\n\n\n"), (std::vector<std::string>{"an accountant", "a baker"}));
}

TEST(LoadOccupations, DuplicatesWarnAndKeepFirst) {
  std::vector<std::string> warnings;
  EXPECT_EQ(load("a baker\na baker", &warnings), std::vector<std::string>{"a baker"});
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(LoadOccupations, NormalizesCaseAndArticle) {
  EXPECT_EQ(load("  An  Accountant \nengineer\n"), (std::vector<std::string>{"an accountant", "an engineer"}));
}

TEST(LoadOccupations, EmptySourceIsError) {
  try {
    load("\n\n");
    FAIL() << "expected EmptyCorpus";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyCorpus);
  }
}

TEST(LoadOccupations, ShippedListHas256Entries) {
  const auto occ = default_occupations();
  EXPECT_EQ(occ.size(), 256u);
  EXPECT_EQ(occ.front(), "an accountant");
}

TEST(BuildSimple, AttributePrefixAndExplicitSet) {
  // Find a seed that samples gender=male for the accountant, then check the text.
  bool seen_male = false;
  for (std::uint64_t seed = 0; seed < 200 && !seen_male; ++seed) {
    const auto p = build_simple({"an accountant"}, AttributeTaxonomy::default_taxonomy(), seed).at(0);
    ASSERT_EQ(p.explicit_attributes.size(), 1u);
    if (*p.explicit_attributes.begin() == Attribute{"gender", "male"}) {
      EXPECT_EQ(p.text, "Male accountant");
      seen_male = true;
    }
  }
  EXPECT_TRUE(seen_male);
}

TEST(BuildSimple, YoungBotanist) {
  bool seen = false;
  for (std::uint64_t seed = 0; seed < 200 && !seen; ++seed) {
    const auto p = build_simple({"a botanist"}, AttributeTaxonomy::default_taxonomy(), seed).at(0);
    if (*p.explicit_attributes.begin() == Attribute{"age", "young"}) {
      EXPECT_EQ(p.text, "Young botanist");
      seen = true;
    }
  }
  EXPECT_TRUE(seen);
}

TEST(BuildSimple, DeterministicPerSeed) {
  const auto occ = default_occupations();
  const auto a = build_simple(occ, AttributeTaxonomy::default_taxonomy(), 7);
  const auto b = build_simple(occ, AttributeTaxonomy::default_taxonomy(), 7);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].text, b[i].text);
    EXPECT_EQ(a[i].explicit_attributes, b[i].explicit_attributes);
  }
}

TEST(BuildContext, AppendsActionPhrase) {
  Prompt simple;
  simple.id = "simple-accountant";
  simple.level = PromptLevel::Simple;
  simple.text = "Male accountant";
  simple.occupation = "an accountant";
  simple.explicit_attributes = {{"gender", "male"}};
  ActionBank bank;
  bank.by_occupation["an accountant"] = {"preparing financial reports"};
  const auto ctx = build_context({simple}, bank, 0).at(0);
  EXPECT_EQ(ctx.text, "a male accountant is preparing financial reports");
  EXPECT_EQ(ctx.explicit_attributes, simple.explicit_attributes);

  simple.text = "Young actor";
  simple.occupation = "an actor";
  simple.explicit_attributes = {{"age", "young"}};
  bank.by_occupation["an actor"] = {"watching a TV show"};
  EXPECT_EQ(build_context({simple}, bank, 0).at(0).text, "a young actor is watching a TV show");
}

TEST(BuildContext, GenericFallback) {
  ActionBank bank;
  bank.generic = {"working"};
  const auto simple = build_simple(default_occupations(), AttributeTaxonomy::default_taxonomy(), 3);
  for (const auto& p : build_context(simple, bank, 3)) {
    EXPECT_TRUE(p.text.ends_with(" is working")) << p.text;
  }
}

TEST(BuildContext, MissingActionIsError) {
  const auto simple = build_simple({"a baker"}, AttributeTaxonomy::default_taxonomy(), 0);
  try {
    build_context(simple, ActionBank{}, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingAction);
  }
}

TEST(BuildRewritten, ScanFlagsInjectedWords) {
  FixedReply rewriter("A middle-aged cab driver adjusts his mirror while a woman in her late 40s waits.");
  const auto out = build_rewritten(build_occupation({"a cab driver"}), rewriter,
                                   WordCategoryLexicon::default_lexicon(), {});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_TRUE(out[0].explicit_attributes.empty());
  ASSERT_TRUE(out[0].diagnostics.count("gender"));
  const auto& g = out[0].diagnostics.at("gender");
  EXPECT_NE(std::find(g.begin(), g.end(), "his"), g.end());
  EXPECT_NE(std::find(g.begin(), g.end(), "woman"), g.end());
  EXPECT_TRUE(out[0].diagnostics.count("age"));
}

TEST(BuildRewritten, EchoRewriterLeavesTextAndNoFlags) {
  SimulatedModelSpec spec;
  SimulatedModel echo(spec, AttributeTaxonomy::default_taxonomy());
  const auto src = build_occupation({"a florist"});
  RewriteOptions opts;
  const auto out = build_rewritten(src, echo, WordCategoryLexicon::default_lexicon(), opts);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].text, "a florist");
  EXPECT_TRUE(out[0].diagnostics.empty());
}

TEST(BuildRewritten, FailureCarriesCompletedPrompts) {
  const auto src = build_occupation({"a baker", "a chef", "a nurse"});
  FailingOn rewriter("a chef");
  RewriteOptions opts;
  opts.parallelism = 1;
  try {
    build_rewritten(src, rewriter, WordCategoryLexicon::default_lexicon(), opts);
    FAIL();
  } catch (const RewriteFailed& e) {
    EXPECT_EQ(e.code(), ErrorCode::RewriteFailed);
    EXPECT_EQ(e.prompt_id(), "rewritten-chef");
    EXPECT_EQ(e.partial().size(), 2u);
    // Resuming with a healthy rewriter only rewrites the missing prompt.
    FixedReply healthy("a chef plating food");
    const auto out = build_rewritten(src, healthy, WordCategoryLexicon::default_lexicon(), opts, e.partial());
    ASSERT_EQ(out.size(), 3u);
    EXPECT_EQ(out[0].text, "rewritten");
    EXPECT_EQ(out[1].text, "a chef plating food");
  }
}

TEST(PromptSet, DuplicateIdsRejected) {
  const auto occ = build_occupation({"a baker"});
  std::vector<Prompt> twice{occ[0], occ[0]};
  EXPECT_THROW(PromptSet(twice, AttributeTaxonomy::default_taxonomy()), Error);
}

TEST(PromptSet, FullCorpusHas256PerLevelAndInvariants) {
  const auto occ = default_occupations();
  const auto& tax = AttributeTaxonomy::default_taxonomy();
  auto all = build_occupation(occ);
  const auto simple = build_simple(occ, tax, 0);
  const auto context = build_context(simple, ActionBank::default_bank(), 0);
  SimulatedModel echo(SimulatedModelSpec{}, tax);
  const auto rewritten = build_rewritten(build_occupation(occ), echo, WordCategoryLexicon::default_lexicon(), {});
  all.insert(all.end(), simple.begin(), simple.end());
  all.insert(all.end(), context.begin(), context.end());
  all.insert(all.end(), rewritten.begin(), rewritten.end());
  PromptSet set(all, tax);
  EXPECT_NO_THROW(set.require_level_count(256));
  for (const auto& p : set.prompts()) {
    EXPECT_FALSE(p.text.empty());
    switch (p.level) {
      case PromptLevel::Occupation:
      case PromptLevel::Rewritten:
        EXPECT_TRUE(p.explicit_attributes.empty()) << p.id;
        break;
      case PromptLevel::Simple:
      case PromptLevel::Context:
        EXPECT_EQ(p.explicit_attributes.size(), 1u) << p.id;
        break;
    }
    if (p.level != PromptLevel::Rewritten) {
      EXPECT_NE(text::to_lower(p.text).find(text::strip_article(p.occupation)), std::string::npos) << p.id;
    }
  }
  EXPECT_EQ(set.evaluation_set("gender", PromptLevel::Occupation).size(), 256u);
  const auto simple_gender = set.evaluation_set("gender", PromptLevel::Simple);
  for (const auto* p : simple_gender) EXPECT_FALSE(p->specifies("gender"));
}

TEST(PromptSet, JsonLinesRoundTrip) {
  const auto simple = build_simple({"an accountant", "a baker"}, AttributeTaxonomy::default_taxonomy(), 1);
  PromptSet set(simple, AttributeTaxonomy::default_taxonomy());
  std::stringstream buf;
  set.write_jsonl(buf);
  const auto back = PromptSet::read_jsonl(buf);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].text, simple[1].text);
  EXPECT_EQ(back[1].explicit_attributes, simple[1].explicit_attributes);
}
