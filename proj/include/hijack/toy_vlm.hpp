#pragma once

#include <cstdint>
#include <string>

#include "hijack/vlm.hpp"

namespace hijack {

// Desk-scale differentiable VLM. A patch embedder maps the image to soft
// tokens that are prepended to the byte-level text embedding sequence; a
// small causal pre-LN transformer decodes over the concatenation. On top of
// the transformer logits sit structured heads that give the image genuine
// authority over the output distribution (LayerNorm bounds what the
// attention pathway alone can express):
//   - a direct readout addressed by generation position: position r reads a
//     dedicated pixel slice through a fixed random projection;
//   - a tail readout addressed by r - |ctx| tokens, which is constant at the
//     post-context template suffix whatever the context length;
//   - two copy heads over the prompt (previous-token induction and a
//     context-start bootstrap) whose sigmoid gates are driven by their own
//     per-position pixel slices, so optimization can switch context copying
//     on and off per position.
struct ToyVlmConfig {
  int vocab = 64;   // 4 specials + 60 byte buckets; 260 selects full-byte mode
  int channels = 3;
  int height = 32;
  int width = 32;
  int patch = 8;    // must divide height and width
  int dmodel = 64;
  int layers = 2;
  int heads = 4;
  int dff = 256;
  int max_text_tokens = 128;
  bool single_precision = true;  // false: 64-bit mode for gradient checks

  // Initialization gains. Defaults are tuned so that the acceptance-scale
  // attacks converge under plain SGD at the stock learning rates.
  double patch_gain = 6.0;
  double emb_gain = 1.0;
  double pos_gain = 0.5;
  double out_gain = 1.0;
  double direct_gain = 40.0;     // direct / tail readout scale
  double pointer_gamma = 30.0;   // copy-head logit scale
  // Gate scale is kept moderate so arbitrary starting images leave the
  // sigmoids trainable instead of saturating them at random signs.
  double gate_gain = 6.0;        // gate preactivation scale
  double gate_bias = -2.5;       // copying is off until the image asks for it

  // Pixel-slice partition for the structured heads. The defaults tile a
  // 3x32x32 image exactly; larger images can afford wider slices.
  int direct_r_blocks = 64;  // addressable generation positions
  int direct_r_dim = 32;     // pixels per direct-readout block
  int direct_t_blocks = 64;  // addressable tail positions
  int direct_t_dim = 8;
  int gate_copy_r_dim = 3;
  int gate_copy_t_dim = 2;
  int gate_start_r_dim = 3;

  // Test hook: corrupt the returned image gradient (for gradcheck fault
  // injection). Never set outside tests.
  bool grad_fault_injection = false;

  int image_tokens() const { return (height / patch) * (width / patch); }
  bool full_byte() const { return vocab >= 260; }
  std::uint64_t config_hash() const;
};

// Token ids: 0=PAD, 1=BOS, 2=EOS, 3=SEP, bytes from 4.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kSep = 3;
inline constexpr int kByteBase = 4;

VlmPtr build_toy_vlm(const ToyVlmConfig& config, std::uint64_t seed);

// Weight snapshot round trip: flat binary container with a JSON manifest
// (shapes, seed, config hash) for reproducible test fixtures.
void save_toy_weights(const VlmPtr& model, const std::string& path);
VlmPtr load_toy_vlm(const std::string& path);

}  // namespace hijack
