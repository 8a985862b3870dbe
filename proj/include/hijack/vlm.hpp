#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hijack/image.hpp"
#include "hijack/tokens.hpp"

namespace hijack {

struct LossGrad {
  double loss = 0.0;
  ImageTensor grad;  // d loss / d image, same shape as the input image
};

// The differentiable VLM contract. Parameters are frozen for the lifetime of
// a handle; with the deterministic flag set, every operation is a pure
// function of its arguments.
class Vlm {
 public:
  virtual ~Vlm() = default;

  virtual std::string id() const = 0;
  virtual ImageShape image_shape() const = 0;
  virtual int vocab_size() const = 0;
  virtual bool deterministic() const { return true; }
  virtual bool differentiable() const { return true; }
  // Safe for concurrent calls from multiple threads?
  virtual bool reentrant() const { return false; }

  virtual TokenSequence tokenize(const std::string& text) const = 0;
  virtual std::string detokenize(const TokenSequence& toks) const = 0;

  // Greedy decode, truncated at end-of-sequence (excluded) or max_tokens.
  virtual TokenSequence generate(const ImageTensor& image, const ChatContext& ctx,
                                 int max_tokens) const = 0;

  // Row t: next-token logits given image, ctx and gen[0..t). len(gen) rows.
  virtual LogitsSeq teacher_forced_logits(const ImageTensor& image,
                                          const ChatContext& ctx,
                                          const TokenSequence& gen) const = 0;

  // Mean per-position cross-entropy against the target, and its gradient with
  // respect to the image.
  virtual LossGrad loss_and_image_grad(const ImageTensor& image, const ChatContext& ctx,
                                       const Target& target) const = 0;

  virtual std::uint64_t param_checksum() const = 0;

  // Text canonical under the model's tokenizer (detokenize . tokenize).
  std::string canonical_text(const std::string& s) const {
    return detokenize(tokenize(s));
  }

 protected:
  void check_image(const ImageTensor& img) const {
    if (img.shape != image_shape())
      throw ConfigError("image shape mismatch: model " + id() + " expects " +
                        std::to_string(image_shape().channels) + "x" +
                        std::to_string(image_shape().height) + "x" +
                        std::to_string(image_shape().width));
  }
};

using VlmPtr = std::shared_ptr<Vlm>;
using AdapterFactory = std::function<VlmPtr(const nlohmann::json& params)>;

// Adapter registry: external models plug in behind the Vlm contract and are
// configuration-selected by name.
void register_adapter(const std::string& name, AdapterFactory factory);
AdapterFactory resolve_adapter(const std::string& name);
std::vector<std::string> registered_adapters();
VlmPtr make_vlm(const std::string& adapter, const nlohmann::json& params);

// Registers the bundled adapters ("toy"); idempotent, called by the CLI and
// the test suites.
void register_builtin_adapters();

}  // namespace hijack
