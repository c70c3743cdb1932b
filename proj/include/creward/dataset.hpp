#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "creward/core.hpp"

namespace creward {

// ---------------------------------------------------------------------------
// Prompt banks

/// The 24 object-agnostic templates (8 per axis type), text contains "{obj}".
std::vector<PromptRecord> agnostic_templates();
/// Bundled 36 object-specific prompts (12 per axis type), when shipped for
/// `object`; currently only "chair".
std::optional<std::vector<PromptRecord>> bundled_specific_prompts(std::string_view object);
/// The 100 type-agnostic creative prompts used for assessment and filtering.
std::vector<PromptRecord> assessment_prompts();
/// Five creativity-guided prompts per axis type (prompting baseline).
std::vector<PromptRecord> guidance_prompts();
/// The 20 unseen object categories of the guidance protocol.
const std::vector<std::string>& guidance_objects();
/// Objects of the human benchmark.
const std::vector<std::string>& benchmark_objects();

PromptRecord normal_prompt(std::string_view object);

struct PromptBank {
  std::string object;
  std::vector<PromptRecord> creative;  // 60: agnostic templates then specific
  PromptRecord normal;

  std::vector<PromptRecord> all() const;
};

/// Builds a full bank. `specific` overrides the bundled prompts and must hold
/// 12 prompts per axis type for `object`. Throws Error{"bank"} when the bank
/// cannot be completed.
PromptBank build_prompt_bank(std::string_view object,
                             const std::optional<std::vector<PromptRecord>>& specific = std::nullopt);

// ---------------------------------------------------------------------------
// Pair sampling

struct BenchmarkSpec {
  std::vector<std::string> images;
  int appearances_per_image = 8;
  int n_pairs = 100;
  std::uint64_t seed = 0;
};

/// Random simple `appearances`-regular pairing of the images. Stub matching
/// followed by edge-swap repair of self-loops and duplicates; after 10,000
/// swap attempts the stubs are reshuffled. Throws Error{"infeasible"}.
std::vector<PairRecord> sample_benchmark_pairs(const BenchmarkSpec& spec);

inline constexpr int kMaxRepairSwaps = 10'000;

struct TrainingPairSpec {
  std::vector<std::string> prompt_ids;
  std::map<std::string, std::vector<std::string>> images_per_prompt;
  int n_pairs_per_object = 1000;
  std::uint64_t seed = 0;
};

/// Two distinct prompts uniformly, then one image uniformly from each. The
/// same unordered pair may repeat. Throws Error{"empty-prompt"} naming the
/// prompt that has no images.
std::vector<PairRecord> sample_training_pairs(const TrainingPairSpec& spec);

/// Builds a TrainingPairSpec from an image manifest restricted to `object`.
TrainingPairSpec training_spec_from_images(const std::vector<ImageRecord>& images,
                                           const std::vector<std::string>& prompt_ids, std::string_view object,
                                           int n_pairs, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Image generation

struct GenerationRequest {
  std::string prompt_text;
  std::uint64_t seed = 0;
  int count = 1;
  std::filesystem::path out_dir;
};

struct GenerationOutput {
  std::string source_model;
  std::vector<std::filesystem::path> files;
};

/// Text-to-image backend. Implementations write `count` image files under
/// `out_dir` and must be safe to call concurrently with distinct out_dirs.
class GeneratorAdapter {
 public:
  virtual ~GeneratorAdapter() = default;
  virtual GenerationOutput generate(const GenerationRequest& request) = 0;
};

/// Procedural PPM images; creativity-free silhouettes for normal prompts.
class FixtureGenerator final : public GeneratorAdapter {
 public:
  explicit FixtureGenerator(int size = 32, std::string model = "fixture")
      : size_(size), model_(std::move(model)) {}
  GenerationOutput generate(const GenerationRequest& request) override;

 private:
  int size_;
  std::string model_;
};

/// External generator driven through a command contract: the command is run
/// as `<command> <request.json>`, where the request holds {prompt, seed,
/// count, out_dir}; it must leave the images plus `sidecar.json`
/// ({"source_model": str, "images": [file names]}) in out_dir.
class CommandGenerator final : public GeneratorAdapter {
 public:
  explicit CommandGenerator(std::string command) : command_(std::move(command)) {}
  GenerationOutput generate(const GenerationRequest& request) override;

 private:
  std::string command_;
};

struct GenerationFailure {
  std::string prompt_id;
  std::string message;
};

struct GenerationReport {
  std::vector<ImageRecord> images;
  std::vector<GenerationFailure> failures;
};

inline constexpr std::string_view kCleanBackgroundSuffix = ", clean background";

/// Text dispatched to the generator: the template instantiated for `object`,
/// with the clean-background suffix on creative prompts.
std::string dispatch_text(const PromptRecord& prompt, std::string_view object);

/// Generates n_per_prompt images per prompt on a bounded worker pool.
/// Output order follows the prompt order regardless of scheduling. A prompt
/// whose generator call fails keeps whatever files it produced and is
/// recorded in `failures`.
GenerationReport generate_images(const std::vector<PromptRecord>& prompts, std::string_view object,
                                 GeneratorAdapter& generator, int n_per_prompt,
                                 const std::filesystem::path& out_dir, std::uint64_t seed,
                                 std::size_t workers = 4);

}  // namespace creward
