#pragma once

// The trainable stack: a causal decoder-only backbone, a linear patch embedder
// standing in for the vision encoder, the projections W_l / W_v, the language
// and visual auxiliary decoders, and an optional trajectory regression head.
//
// All three transformers share one block layout:
//   x += Wo·attn(LN1(x)) + bo ;  x += W2·gelu(W1·LN2(x) + b1) + b2
// with learned absolute positions and a final layer norm.
//
// Parameter groups: backbone/ patch/ w_l/ w_v/ dec_l/ dec_v/ head/.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "onevl/layout.hpp"
#include "onevl/params.hpp"
#include "onevl/tensor.hpp"
#include "onevl/vocab.hpp"

namespace onevl {

struct ModelConfig {
  int d = 128;
  int n_layers = 4;
  int n_heads = 4;
  int max_seq_len = 320;
  int dec_layers = 2;
  int dec_heads = 4;
  int dec_max_len = 320;
  int latent_vis_count = 4;
  int latent_lang_count = 2;
  int codebook_size = 256;
  int patch = 4;
  int raster_height = 32;
  int raster_width = 32;
  bool with_head = true;

  int num_patches() const { return (raster_height / patch) * (raster_width / patch); }
  int patch_dim() const { return patch * patch * kNumCellClasses; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline const std::vector<std::string> kGroups = {"backbone", "patch", "w_l", "w_v", "dec_l", "dec_v", "head"};

struct ModelBundle {
  ModelConfig cfg;
  ParamStore params;
  std::int32_t vocab_size = 0;       // backbone output size
  std::int32_t text_vocab_size = 0;  // language decoder output size
  std::int32_t visual_base = 0;

  bool has_group(const std::string& g) const;
};

/// Weights ~ N(0, 0.02), gains 1, biases 0, drawn in parameter order from `seed`.
ModelBundle init_bundle(const ModelConfig& cfg, const Vocab& vocab, std::uint64_t seed);

struct ForwardOutput {
  Tensor logits;              // rows logits_from .. T-1
  std::size_t logits_from = 0;
  Tensor hidden_last;         // T x d, after the final layer norm
  Tensor H_v;                 // C_v x d (undefined when C_v = 0)
  Tensor H_l;                 // C_t x d (undefined when C_t = 0)
  Tensor V_embed;             // N_v x d
};

/// Patch embedder output for a raster's one-hot patch features.
Tensor patch_embed(const ModelBundle& b, const Tensor& patch_features);

/// Causal forward over a layout. Image-span rows come from the patch
/// embedder, every other row from the token table. Logits are computed for
/// rows >= logits_from only; pass ids.size() to skip the output head.
ForwardOutput backbone_forward(const ModelBundle& b, const TokenLayout& layout, const Tensor& patch_features,
                               std::size_t logits_from = 0);

/// Main cross entropy: next-token targets at every position whose successor
/// is supervised by the layout's loss mask.
Tensor main_loss(const ForwardOutput& out, const TokenLayout& layout);

struct AuxOutput {
  Tensor loss;
  Tensor logits;  // one row per target
};

/// D_l over [W_l(V) ; W_l(H_l) ; shifted targets].
AuxOutput lang_aux_forward(const ModelBundle& b, const Tensor& V_embed, const Tensor& H_l,
                           std::span<const std::int32_t> target_ids);
/// D_v over [W_v(V) ; W_v(H_v) ; shifted targets]; an undefined H_v gives the
/// unconditioned pretraining form. Targets are backbone vocabulary ids
/// (visual codes and image sentinels).
AuxOutput vis_aux_forward(const ModelBundle& b, const Tensor& V_embed, const Tensor& H_v,
                          std::span<const std::int32_t> target_ids, const Vocab& vocab);

/// Decoder-local id of a visual target: code k -> k, image_start -> K,
/// image_end -> K + 1. Throws std::out_of_range otherwise.
std::int32_t visual_local_id(std::int32_t id, const Vocab& vocab);
std::int32_t visual_global_id(std::int32_t local, const Vocab& vocab);

inline constexpr double kLambdaLang = 1.0;
inline constexpr double kLambdaVis = 0.1;

/// L_c + lambda_l * L_l + lambda_v * L_v. Throws NumericError on a non-finite input.
Tensor total_loss(const Tensor& L_c, const Tensor& L_l, const Tensor& L_v, double lambda_l = kLambdaLang,
                  double lambda_v = kLambdaVis);

/// 8 x 2 waypoints in metres from the hidden state of the last latent token (1 x d).
Tensor mlp_head_forward(const ModelBundle& b, const Tensor& h_last);
/// Hidden row fed to the head.
Tensor head_input(const ForwardOutput& out);
Tensor trajectory_tensor(const Trajectory& t);

/// Shared block stack. `x` is the embedded input including positions.
Tensor transformer_stack(const ParamStore& ps, const std::string& prefix, const Tensor& x, int n_layers,
                         int n_heads);
/// Two-layer GELU MLP under `prefix` (fc1, fc2).
Tensor mlp2(const ParamStore& ps, const std::string& prefix, const Tensor& x);

// ---- checkpoints -----------------------------------------------------------

/// Writes `path` (tensor checkpoint) and `path` + ".json" (config sidecar with
/// the model config and `config_hash`).
void save_bundle(const std::filesystem::path& path, const ModelBundle& b, const std::string& config_hash);
struct LoadedBundle {
  ModelBundle bundle;
  std::string config_hash;
};
LoadedBundle load_bundle(const std::filesystem::path& path, const Vocab& vocab);

std::string model_config_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace onevl
