#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "plab/tape.hpp"
#include "plab/tensor.hpp"

namespace plab {

class Rng;

struct ViTConfig {
    int image_size = 16;
    int channels = 1;
    int patch_size = 4;
    int embed_dim = 32;
    int depth = 2;
    int heads = 2;
    double mlp_ratio = 4.0;
    // Block index whose input receives the prompt rows; 0 = the embedded
    // input sequence (standard prompt tuning).
    int insert_layer = 0;

    int patches_per_side() const { return image_size / patch_size; }
    int num_patches() const { return patches_per_side() * patches_per_side(); }
    int patch_dim() const { return patch_size * patch_size * channels; }
    int head_dim() const { return embed_dim / heads; }
    int mlp_hidden() const {
        return static_cast<int>(mlp_ratio * static_cast<double>(embed_dim) + 0.5);
    }
    void validate() const;
};

struct BlockWeights {
    Tensor w_q, w_k, w_v, w_o;   // D x D
    Tensor ln1_gamma, ln1_beta;  // D (attention sub-layer norm)
    Tensor w1, b1, w2, b2;       // D x H, H, H x D, D
    Tensor ln2_gamma, ln2_beta;  // D (MLP sub-layer norm)
};

// Frozen (or, during pretraining, trainable) ViT parameters.
struct BackboneState {
    ViTConfig config;
    Tensor patch_proj;  // patch_dim x D ("E")
    Tensor pos_embed;   // (1 + N_p) x D ("E_pos"), row 0 belongs to [CLS]
    Tensor cls_token;   // 1 x D
    std::vector<BlockWeights> blocks;
    Tensor ln_f_gamma, ln_f_beta;
    bool frozen = false;

    // uniform(-1/sqrt(D), 1/sqrt(D)) weights, zero biases, unit layer norms.
    static BackboneState random_init(const ViTConfig& config, std::uint64_t seed);

    // Canonical (name, tensor) walk in a fixed order; names follow the
    // PTW1 scheme (patch_proj, pos_embed, cls_token, blocks.N.attn.w_q, ...).
    std::vector<std::pair<std::string, Tensor*>> named_tensors();
    std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;

    void set_frozen(bool on);  // frozen drops requires_grad on every tensor
};

// Ids of every backbone tensor on a tape. Frozen states bind as read-only
// inputs; trainable states bind as gradient leaves.
struct BoundBackbone {
    struct Block {
        Id w_q, w_k, w_v, w_o;
        Id ln1_gamma, ln1_beta;
        Id w1, b1, w2, b2;
        Id ln2_gamma, ln2_beta;
    };
    Id patch_proj, pos_embed, cls_token;
    std::vector<Block> blocks;
    Id ln_f_gamma, ln_f_beta;
};

BoundBackbone bind_backbone(Tape& tape, const BackboneState& state);
BoundBackbone bind_backbone_trainable(Tape& tape, BackboneState& state);

// Row-major patch grid, channel-major flattening: {N_p, patch_dim}.
Tensor extract_patches(const Tensor& image, const ViTConfig& config);

// Patches projected by the embedding matrix; positional embedding NOT yet added.
Id patch_embed(Tape& tape, const Tensor& image, const BoundBackbone& bb,
               const ViTConfig& config);

// [cls + pos_0 ; prompts (no positional embedding) ; patches + pos_1..N_p]
Id build_input_sequence(Tape& tape, Id patches, const std::vector<Id>& prompt_parts,
                        const BoundBackbone& bb, const ViTConfig& config);

Id attention(Tape& tape, Id x, const BoundBackbone::Block& w, const ViTConfig& config);

// ln1(Attn(ln1(x)) + x) then ln2(MLP(ln2(.)) + .)
Id block_forward(Tape& tape, Id x, const BoundBackbone::Block& w,
                 const ViTConfig& config);

// Final-LN [CLS] row, shape {1, D}. prompt_parts may be empty.
Id forward_features(Tape& tape, const Tensor& image,
                    const std::vector<Id>& prompt_parts, const BoundBackbone& bb,
                    const ViTConfig& config);

// Prompt-free [CLS] feature of a frozen query encoder, computed on a local
// tape and returned detached (shape {D}).
Tensor query_feature(const Tensor& image, const BackboneState& query_state);

}  // namespace plab
