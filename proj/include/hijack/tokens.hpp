#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace hijack {

struct TokenSequence {
  std::vector<int> ids;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  bool operator==(const TokenSequence&) const = default;
};

// T x V matrix; row t holds next-token logits for output position t.
using LogitsSeq = Eigen::MatrixXd;

// User-visible input context. Formatting (roles, image-token placement,
// specials) is owned entirely by the model adapter; the core treats this as
// opaque text.
struct ChatContext {
  std::string user_text;
  std::optional<std::string> system_text;

  // Prompt prepended to the user text ("p ++ ctx").
  ChatContext with_prefix(const std::string& p) const {
    ChatContext out = *this;
    out.user_text = p + out.user_text;
    return out;
  }
  bool operator==(const ChatContext&) const = default;
};

// Hard text target: optimized toward the token sequence of `text` (terminated
// by the model's end-of-sequence token).
struct HardText {
  std::string text;
};

// Soft logit target captured from a teacher model by teacher forcing to `gen`.
struct SoftLogits {
  LogitsSeq logits;    // T x V
  TokenSequence gen;   // the teacher's decoded tokens, len T
};

using Target = std::variant<HardText, SoftLogits>;

inline std::size_t target_length(const Target& t, std::size_t hard_len_hint = 0) {
  if (const auto* s = std::get_if<SoftLogits>(&t)) return s->gen.size();
  (void)hard_len_hint;
  return std::get<HardText>(t).text.size();
}

}  // namespace hijack
