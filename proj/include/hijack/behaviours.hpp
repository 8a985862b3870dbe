#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hijack/tokens.hpp"
#include "hijack/vlm.hpp"

namespace hijack {

// Ordered, seed-reproducible set of chat contexts with a split tag.
struct ContextSet {
  std::vector<ChatContext> contexts;
  std::string split;  // "train" / "val" / "test" / ""
  std::string provenance;

  std::size_t size() const { return contexts.size(); }
  bool empty() const { return contexts.empty(); }
};

struct CaptureStats {
  std::size_t hits = 0;
  std::size_t misses = 0;
  std::size_t skipped = 0;  // empty teacher generations, recorded and skipped
};

// A target behaviour: a deterministic, total function from contexts to
// targets, plus the context set that defines it.
struct Behaviour {
  std::string name;
  ContextSet contexts;
  std::function<Target(const ChatContext&)> target;
  // Set for prompt-matching behaviours; counts teacher-capture cache traffic.
  std::shared_ptr<CaptureStats> capture_stats;
};

struct SplitSpec {
  std::size_t val_n = 100;   // 100 validation
  std::size_t test_n = 1000; // and 1,000 held-out test instructions
  std::uint64_t seed = 0;
};

struct InstructionSplits {
  ContextSet train, val, test;
};

// JSON-lines instruction corpus: one object per line, required key
// "instruction", optional "input" appended after a single space.
// Deterministic shuffled split; remainder goes to train.
InstructionSplits load_instruction_dataset(const std::string& path, const SplitSpec& spec);

// CSV with header `goal,target`, file order preserved.
struct HarmfulPair {
  std::string goal;
  std::string label;
};
std::vector<HarmfulPair> load_harmful_pairs(const std::string& path);

// B(ctx) = HardText(s) for every ctx.
Behaviour specific_string_behaviour(const std::string& s);

// Template with exactly one "{ctx}" placeholder; B(ctx) splices the user text
// in raw (no escaping).
Behaviour leak_context_behaviour(const std::string& tmpl);
void validate_leak_template(const std::string& tmpl);  // throws on 0 or 2+ placeholders

// Context set is the goals; B(goal_i) = HardText(label_i). Duplicate goals
// are ambiguous and rejected.
Behaviour jailbreak_proxy_behaviour(const std::vector<HarmfulPair>& pairs);

// Soft-logit behaviour B_p(ctx) := teacher(I, p ++ ctx), captured lazily by
// greedy decoding + teacher forcing and cached on disk keyed by
// (teacher id, image hash, p, ctx).
struct PromptMatchingOptions {
  int gen_cap = 64;
  std::string cache_dir;  // empty: in-memory only
};
Behaviour prompt_matching_behaviour(VlmPtr teacher, const ImageTensor& I,
                                    const std::string& p, const PromptMatchingOptions& opt);

// Capture (or re-hit) the soft-target cache for every context in the set.
CaptureStats capture_teacher_targets(const Behaviour& behaviour, const ContextSet& contexts);

// Random 4-word leak template: "w1 w2{ctx}w3 w4".
struct RandomTemplate {
  Behaviour behaviour;
  std::string template_text;
};
RandomTemplate random_template_behaviour(std::uint64_t rng_seed,
                                         const std::string& wordlist_path);

// base plus copies x |variations| appended contexts, order seed-shuffled.
ContextSet augment_with_repeats(const ContextSet& base,
                                const std::vector<std::string>& variations,
                                std::size_t copies, std::uint64_t seed);

}  // namespace hijack
