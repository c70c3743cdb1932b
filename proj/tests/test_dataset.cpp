#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <map>
#include <set>

#include "creward/dataset.hpp"
#include "creward/image.hpp"
#include "support.hpp"

using namespace creward;
using creward::testing::TempDir;

namespace {

std::vector<std::string> ids(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("img-" + std::to_string(i));
  return out;
}

// Degree audit, self-loop and duplicate check of an undirected pair list.
void expect_regular_simple(const std::vector<PairRecord>& pairs, const std::vector<std::string>& images, int degree) {
  std::map<std::string, int> deg;
  std::set<std::pair<std::string, std::string>> edges;
  for (const auto& p : pairs) {
    EXPECT_NE(p.image_a, p.image_b);
    ++deg[p.image_a];
    ++deg[p.image_b];
    const auto e = std::minmax(p.image_a, p.image_b);
    EXPECT_TRUE(edges.insert({e.first, e.second}).second) << "duplicate " << e.first << "-" << e.second;
    EXPECT_EQ(p.context, PairContext::benchmark);
  }
  for (const auto& id : images) EXPECT_EQ(deg[id], degree) << id;
}

}  // namespace

TEST(PromptBank, BundledCounts) {
  const auto agnostic = agnostic_templates();
  EXPECT_EQ(agnostic.size(), 24u);
  for (CreativityType t : kAxisTypes) {
    EXPECT_EQ(std::count_if(agnostic.begin(), agnostic.end(), [&](const auto& p) { return p.target_type == t; }), 8);
  }
  for (const auto& p : agnostic) EXPECT_NE(p.text.find("{obj}"), std::string::npos) << p.prompt_id;

  const auto chair = bundled_specific_prompts("chair");
  ASSERT_TRUE(chair);
  EXPECT_EQ(chair->size(), 36u);
  EXPECT_FALSE(bundled_specific_prompts("spaceship"));

  EXPECT_EQ(assessment_prompts().size(), 100u);
  const auto guidance = guidance_prompts();
  for (CreativityType t : kAxisTypes) {
    EXPECT_EQ(std::count_if(guidance.begin(), guidance.end(), [&](const auto& p) { return p.target_type == t; }), 5);
  }
  EXPECT_EQ(guidance_objects().size(), 20u);
}

TEST(PromptBank, FullBankForChair) {
  const PromptBank bank = build_prompt_bank("chair");
  EXPECT_EQ(bank.creative.size(), 60u);
  EXPECT_EQ(bank.all().size(), 61u);
  EXPECT_EQ(bank.normal.scope, PromptScope::normal);
  EXPECT_EQ(instantiate_template(bank.normal.text, "chair"), "a chair");
  const auto prompts = bank.all();
  std::vector<ManifestRecord> records(prompts.begin(), prompts.end());
  EXPECT_TRUE(validate_manifest(records).empty());
}

TEST(PromptBank, NewObjectNeedsSpecificPrompts) {
  try {
    build_prompt_bank("lamp");
    FAIL() << "expected bank error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "bank");
  }
  // Reusing the chair prompts as if they were written for lamps completes the bank.
  auto specific = *bundled_specific_prompts("chair");
  for (auto& p : specific) p.object_category = "lamp";
  const PromptBank bank = build_prompt_bank("lamp", specific);
  EXPECT_EQ(bank.creative.size(), 60u);
  specific.pop_back();
  EXPECT_THROW(build_prompt_bank("lamp", specific), Error);
}

TEST(PromptBank, DispatchTextAddsBackgroundSuffixToCreativePrompts) {
  const PromptBank bank = build_prompt_bank("chair");
  EXPECT_EQ(dispatch_text(bank.normal, "chair"), "a chair");
  const std::string text = dispatch_text(bank.creative.front(), "chair");
  EXPECT_TRUE(text.ends_with(kCleanBackgroundSuffix));
  EXPECT_EQ(text.find("{obj}"), std::string::npos);
}

TEST(BenchmarkPairs, PaperShapeAcrossSeeds) {
  const auto images = ids(25);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto pairs = sample_benchmark_pairs({images, 8, 100, seed});
    ASSERT_EQ(pairs.size(), 100u);
    expect_regular_simple(pairs, images, 8);
  }
}

TEST(BenchmarkPairs, TwoImagesOneAppearance) {
  const auto pairs = sample_benchmark_pairs({ids(2), 1, 1, 3});
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(std::set<std::string>({pairs[0].image_a, pairs[0].image_b}), std::set<std::string>({"img-0", "img-1"}));
}

TEST(BenchmarkPairs, FourImagesTwoAppearancesFormCycles) {
  const auto images = ids(4);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto pairs = sample_benchmark_pairs({images, 2, 4, seed});
    ASSERT_EQ(pairs.size(), 4u);
    expect_regular_simple(pairs, images, 2);
  }
}

TEST(BenchmarkPairs, FeasibleShapesUpToFifty) {
  Rng rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_index(49));
    int d = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(std::min(n - 1, 10))));
    if ((n * d) % 2 != 0) --d;
    if (d == 0) continue;
    const auto images = ids(n);
    const auto pairs = sample_benchmark_pairs({images, d, n * d / 2, rng.next_u64()});
    expect_regular_simple(pairs, images, d);
  }
}

TEST(BenchmarkPairs, InfeasibleShapesThrow) {
  EXPECT_THROW(sample_benchmark_pairs({ids(3), 1, 1, 0}), Error);    // odd stub count
  EXPECT_THROW(sample_benchmark_pairs({ids(4), 4, 8, 0}), Error);    // degree >= n
  EXPECT_THROW(sample_benchmark_pairs({ids(25), 8, 99, 0}), Error);  // pair count disagrees
}

TEST(BenchmarkPairs, SameSeedSameManifest) {
  const auto a = sample_benchmark_pairs({ids(25), 8, 100, 7});
  const auto b = sample_benchmark_pairs({ids(25), 8, 100, 7});
  const auto c = sample_benchmark_pairs({ids(25), 8, 100, 8});
  EXPECT_EQ(to_json_rows(a), to_json_rows(b));
  EXPECT_NE(to_json_rows(a), to_json_rows(c));
}

TEST(TrainingPairs, EndpointsComeFromDistinctPrompts) {
  TrainingPairSpec spec;
  std::map<std::string, std::string> prompt_of;
  for (int p = 0; p < 60; ++p) {
    const std::string pid = "p" + std::to_string(p);
    spec.prompt_ids.push_back(pid);
    for (int i = 0; i < 10; ++i) {
      const std::string id = pid + "-" + std::to_string(i);
      spec.images_per_prompt[pid].push_back(id);
      prompt_of[id] = pid;
    }
  }
  spec.n_pairs_per_object = 1000;
  spec.seed = 11;
  const auto pairs = sample_training_pairs(spec);
  ASSERT_EQ(pairs.size(), 1000u);
  std::set<std::string> pair_ids;
  for (const auto& p : pairs) {
    EXPECT_NE(prompt_of.at(p.image_a), prompt_of.at(p.image_b));
    EXPECT_EQ(p.context, PairContext::training);
    pair_ids.insert(p.pair_id);
  }
  EXPECT_EQ(pair_ids.size(), pairs.size());
}

TEST(TrainingPairs, RepeatsAllowedWithDistinctIds) {
  TrainingPairSpec spec;
  spec.prompt_ids = {"p0", "p1"};
  spec.images_per_prompt = {{"p0", {"a"}}, {"p1", {"b"}}};
  spec.n_pairs_per_object = 3;
  const auto pairs = sample_training_pairs(spec);
  ASSERT_EQ(pairs.size(), 3u);
  std::set<std::string> pair_ids;
  for (const auto& p : pairs) {
    EXPECT_EQ(std::set<std::string>({p.image_a, p.image_b}), std::set<std::string>({"a", "b"}));
    pair_ids.insert(p.pair_id);
  }
  EXPECT_EQ(pair_ids.size(), 3u);
}

TEST(TrainingPairs, EmptyPromptIsNamed) {
  TrainingPairSpec spec;
  spec.prompt_ids = {"p0", "p1"};
  spec.images_per_prompt = {{"p0", {"a"}}, {"p1", {}}};
  try {
    sample_training_pairs(spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "empty-prompt");
    EXPECT_NE(std::string(e.what()).find("p1"), std::string::npos);
  }
}

TEST(Generation, FixtureCountsAndKinds) {
  TempDir dir;
  const PromptBank bank = build_prompt_bank("chair");
  FixtureGenerator gen(16);
  const auto report = generate_images(bank.creative, "chair", gen, 10, dir.path(), 3);
  EXPECT_TRUE(report.failures.empty());
  ASSERT_EQ(report.images.size(), 600u);
  for (std::size_t i = 0; i < report.images.size(); ++i) {
    EXPECT_EQ(report.images[i].prompt_id, bank.creative[i / 10].prompt_id);
    EXPECT_EQ(report.images[i].kind, ImageKind::creative);
  }
  const auto normal = generate_images({bank.normal}, "chair", gen, 5, dir.path(), 3);
  ASSERT_EQ(normal.images.size(), 5u);
  for (const auto& img : normal.images) EXPECT_EQ(img.kind, ImageKind::normal);
}

TEST(Generation, OrderIndependentOfWorkerCount) {
  TempDir a, b;
  const auto prompts = agnostic_templates();
  FixtureGenerator gen(8);
  const auto one = generate_images(prompts, "vase", gen, 2, a.path(), 1, 1);
  const auto many = generate_images(prompts, "vase", gen, 2, b.path(), 1, 8);
  ASSERT_EQ(one.images.size(), many.images.size());
  for (std::size_t i = 0; i < one.images.size(); ++i) {
    EXPECT_EQ(one.images[i].image_id, many.images[i].image_id);
    EXPECT_EQ(read_text(one.images[i].uri), read_text(many.images[i].uri));
  }
}

namespace {

// Fails on one prompt after writing a single file.
class FlakyGenerator final : public GeneratorAdapter {
 public:
  GenerationOutput generate(const GenerationRequest& r) override {
    if (r.prompt_text.starts_with("bad")) {
      std::filesystem::create_directories(r.out_dir);
      save_image(r.out_dir / "sample_0.ppm", synthesize_image(1, 8, true));
      throw Error("generator", "backend crashed");
    }
    return inner_.generate(r);
  }

 private:
  FixtureGenerator inner_{8};
};

}  // namespace

TEST(Generation, FailedPromptKeepsPartialOutput) {
  TempDir dir;
  PromptRecord good{"good", "good {obj}", CreativityType::texture, PromptScope::object_agnostic};
  PromptRecord bad{"bad", "bad {obj}", CreativityType::texture, PromptScope::object_agnostic};
  FlakyGenerator gen;
  const auto report = generate_images({good, bad}, "chair", gen, 3, dir.path(), 0);
  ASSERT_EQ(report.failures.size(), 1u);
  EXPECT_EQ(report.failures[0].prompt_id, "bad");
  EXPECT_EQ(report.images.size(), 4u);
  EXPECT_EQ(report.images.back().prompt_id, "bad");
}

TEST(Generation, CommandContract) {
  TempDir dir;
  // A generator that copies one fixture image per requested count and names
  // them in the sidecar.
  const auto fixture = dir / "fixture.ppm";
  save_image(fixture, synthesize_image(9, 8, false));
  const auto script = dir / "gen.sh";
  write_text(script,
             "#!/bin/sh\n"
             "out=$(dirname \"$1\")\n"
             "cp " + fixture.string() + " \"$out/one.ppm\"\n"
             "cp " + fixture.string() + " \"$out/two.ppm\"\n"
             "printf '{\"source_model\":\"ext\",\"images\":[\"one.ppm\",\"two.ppm\"]}' > \"$out/sidecar.json\"\n");
  std::filesystem::permissions(script, std::filesystem::perms::owner_all);
  CommandGenerator gen(script.string());
  PromptRecord p{"p", "x {obj}", CreativityType::geometry, PromptScope::object_agnostic};
  const auto report = generate_images({p}, "bowl", gen, 2, dir / "out", 0);
  EXPECT_TRUE(report.failures.empty());
  ASSERT_EQ(report.images.size(), 2u);
  EXPECT_EQ(report.images[0].source_model, "ext");

  const auto request = Json::parse(read_text(dir / "out" / "bowl" / "p" / "request.json"));
  EXPECT_EQ(request.at("count"), 2);
  EXPECT_EQ(request.at("prompt"), "x bowl" + std::string(kCleanBackgroundSuffix));

  CommandGenerator broken("false");
  const auto failed = generate_images({p}, "bowl", broken, 2, dir / "out2", 0);
  EXPECT_EQ(failed.failures.size(), 1u);
}

TEST(Images, PpmRoundTripAndErrors) {
  const Image img = synthesize_image(4, 12, false);
  const Image back = decode_ppm(encode_ppm(img));
  ASSERT_EQ(back.width, 12);
  ASSERT_EQ(back.height, 12);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) EXPECT_NEAR(back.rgb[i], img.rgb[i], 0.5 / 255.0 + 1e-6);
  EXPECT_THROW(decode_ppm("P3\n1 1\n255\n0 0 0"), Error);
  EXPECT_THROW(decode_ppm("P6\n2 2\n255\nabc"), Error);
}
