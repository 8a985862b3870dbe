#pragma once

#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "hijack/behaviours.hpp"
#include "hijack/constraints.hpp"
#include "hijack/image.hpp"
#include "hijack/vlm.hpp"

namespace hijack {

// strip(output) == strip(target).
bool exact_match_success(const std::string& output, const std::string& target);

// strip(output) matches the template with some body string in the {ctx} slot,
// and ctx is a substring of that body. Prefix/suffix of the template are
// compared literally; no regex involved.
bool leak_context_success(const std::string& output, const std::string& ctx,
                          const std::string& tmpl);

// Unit-cost insert/delete/substitute edit distance.
std::size_t levenshtein(const std::string& a, const std::string& b);

// Subjective criteria are delegated to a judge: (ctx, output) -> verdict.
enum class Verdict { Success, Failure, Unscored };
class Judge {
 public:
  virtual ~Judge() = default;
  virtual Verdict score(const ChatContext& ctx, const std::string& output) = 0;
  virtual std::string name() const = 0;
};
using JudgePtr = std::shared_ptr<Judge>;

// Deterministic judge reading JSON-lines {ctx_index, verdict}.
JudgePtr make_manual_label_judge(const std::string& labels_path);
// HTTP judge: POST {system, content} to endpoint, expect {"verdict": "success"|"failure"}.
// Every request/response pair is appended verbatim to log_path.
JudgePtr make_http_judge(const std::string& endpoint, const std::string& system_prompt,
                         const std::string& log_path, int max_retries = 2);

struct ExactMatch {
  std::string target;
};
struct LeakTemplate {
  std::string tmpl;
};
struct JudgeScored {
  JudgePtr judge;
};
using SuccessCriterion = std::variant<ExactMatch, LeakTemplate, JudgeScored>;

std::string criterion_name(const SuccessCriterion& c);

struct ContextRecord {
  std::string ctx;
  std::string output;
  Verdict verdict = Verdict::Failure;
  std::optional<std::size_t> edit_distance;
  std::optional<Placement> placement;  // moving-patch evaluation placement
};

struct EvalReport {
  std::string criterion;
  std::size_t n = 0;
  std::size_t successes = 0;
  std::size_t unscored = 0;
  double rate = 0.0;  // successes / scored
  std::vector<ContextRecord> per_context;
  std::string artifact_hash;
  std::string model_manifest;
};

struct EvalOptions {
  int max_tokens = 128;
  // Set for patch constraints: the hijack PNG holds the patch; each context
  // composites it with a fresh placement (moving) or the fixed one.
  std::optional<ConstraintSpec> constraint;
  bool record_edit_distance = false;
  std::string edit_distance_target;  // reference string when recording distances
};

// Dequantize the PNG artifact, generate per context, apply the criterion.
EvalReport evaluate(const Vlm& model, const ByteImage& hijack, const ContextSet& contexts,
                    const SuccessCriterion& criterion, Rng& rng,
                    const EvalOptions& opt = {});

// Judge-scored consistency rate over a question set; optionally also scores
// the target-prompt upper bound M(I, p ++ ctx).
struct DisinfoOptions {
  std::optional<std::string> target_prompt;  // evaluate upper bound if set
  std::optional<ImageTensor> prompt_image;   // image I used with the prompt
  int max_tokens = 128;
};
EvalReport disinformation_eval(const Vlm& model, const ByteImage& hijack,
                               const ContextSet& questions, JudgePtr judge,
                               const DisinfoOptions& opt = {});

// report.json plus report.csv with stable field ordering.
void report_render(const EvalReport& report, const std::string& dir);
EvalReport report_from_json(const std::string& path);

}  // namespace hijack
