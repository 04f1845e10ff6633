#include "plab/vit.hpp"

#include <cmath>

#include "plab/rng.hpp"

namespace plab {

namespace {
constexpr double kLnEps = 1e-6;
}

void ViTConfig::validate() const {
    if (image_size <= 0 || channels <= 0 || patch_size <= 0 || embed_dim <= 0 ||
        depth <= 0 || heads <= 0 || mlp_ratio <= 0.0) {
        throw Error("vit config: all sizes must be positive");
    }
    if (image_size % patch_size != 0) {
        throw Error("vit config: image_size must be divisible by patch_size");
    }
    if (embed_dim % heads != 0) {
        throw Error("vit config: embed_dim must be divisible by heads");
    }
    if (insert_layer < 0 || insert_layer >= depth) {
        throw Error("vit config: insert_layer must lie in [0, depth)");
    }
}

BackboneState BackboneState::random_init(const ViTConfig& config,
                                         std::uint64_t seed) {
    config.validate();
    const int d = config.embed_dim;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    Rng rng(seed);

    BackboneState s;
    s.config = config;
    s.patch_proj = uniform_tensor({config.patch_dim(), d}, bound, rng);
    s.pos_embed = uniform_tensor({1 + config.num_patches(), d}, bound, rng);
    s.cls_token = uniform_tensor({1, d}, bound, rng);
    s.blocks.resize(config.depth);
    for (BlockWeights& b : s.blocks) {
        b.w_q = uniform_tensor({d, d}, bound, rng);
        b.w_k = uniform_tensor({d, d}, bound, rng);
        b.w_v = uniform_tensor({d, d}, bound, rng);
        b.w_o = uniform_tensor({d, d}, bound, rng);
        b.ln1_gamma = Tensor::full({d}, 1.0);
        b.ln1_beta = Tensor::zeros({d});
        b.w1 = uniform_tensor({d, config.mlp_hidden()}, bound, rng);
        b.b1 = Tensor::zeros({config.mlp_hidden()});
        b.w2 = uniform_tensor({config.mlp_hidden(), d}, bound, rng);
        b.b2 = Tensor::zeros({d});
        b.ln2_gamma = Tensor::full({d}, 1.0);
        b.ln2_beta = Tensor::zeros({d});
    }
    s.ln_f_gamma = Tensor::full({d}, 1.0);
    s.ln_f_beta = Tensor::zeros({d});
    return s;
}

namespace {

template <typename State, typename TensorPtr>
std::vector<std::pair<std::string, TensorPtr>> walk(State& s) {
    std::vector<std::pair<std::string, TensorPtr>> out;
    out.emplace_back("patch_proj", &s.patch_proj);
    out.emplace_back("pos_embed", &s.pos_embed);
    out.emplace_back("cls_token", &s.cls_token);
    for (std::size_t i = 0; i < s.blocks.size(); ++i) {
        auto& b = s.blocks[i];
        const std::string p = "blocks." + std::to_string(i) + ".";
        out.emplace_back(p + "attn.w_q", &b.w_q);
        out.emplace_back(p + "attn.w_k", &b.w_k);
        out.emplace_back(p + "attn.w_v", &b.w_v);
        out.emplace_back(p + "attn.w_o", &b.w_o);
        out.emplace_back(p + "ln1.gamma", &b.ln1_gamma);
        out.emplace_back(p + "ln1.beta", &b.ln1_beta);
        out.emplace_back(p + "mlp.w1", &b.w1);
        out.emplace_back(p + "mlp.b1", &b.b1);
        out.emplace_back(p + "mlp.w2", &b.w2);
        out.emplace_back(p + "mlp.b2", &b.b2);
        out.emplace_back(p + "ln2.gamma", &b.ln2_gamma);
        out.emplace_back(p + "ln2.beta", &b.ln2_beta);
    }
    out.emplace_back("ln_f.gamma", &s.ln_f_gamma);
    out.emplace_back("ln_f.beta", &s.ln_f_beta);
    return out;
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> BackboneState::named_tensors() {
    return walk<BackboneState, Tensor*>(*this);
}

std::vector<std::pair<std::string, const Tensor*>> BackboneState::named_tensors()
    const {
    return walk<const BackboneState, const Tensor*>(*this);
}

void BackboneState::set_frozen(bool on) {
    frozen = on;
    for (auto& [name, t] : named_tensors()) {
        (void)name;
        t->set_requires_grad(false);
    }
}

BoundBackbone bind_backbone(Tape& tape, const BackboneState& state) {
    BoundBackbone bb;
    bb.patch_proj = tape.input(state.patch_proj);
    bb.pos_embed = tape.input(state.pos_embed);
    bb.cls_token = tape.input(state.cls_token);
    for (const BlockWeights& b : state.blocks) {
        BoundBackbone::Block ib;
        ib.w_q = tape.input(b.w_q);
        ib.w_k = tape.input(b.w_k);
        ib.w_v = tape.input(b.w_v);
        ib.w_o = tape.input(b.w_o);
        ib.ln1_gamma = tape.input(b.ln1_gamma);
        ib.ln1_beta = tape.input(b.ln1_beta);
        ib.w1 = tape.input(b.w1);
        ib.b1 = tape.input(b.b1);
        ib.w2 = tape.input(b.w2);
        ib.b2 = tape.input(b.b2);
        ib.ln2_gamma = tape.input(b.ln2_gamma);
        ib.ln2_beta = tape.input(b.ln2_beta);
        bb.blocks.push_back(ib);
    }
    bb.ln_f_gamma = tape.input(state.ln_f_gamma);
    bb.ln_f_beta = tape.input(state.ln_f_beta);
    return bb;
}

BoundBackbone bind_backbone_trainable(Tape& tape, BackboneState& state) {
    if (state.frozen) throw Error("bind_backbone_trainable: backbone is frozen");
    BoundBackbone bb;
    const auto bind = [&tape](Tensor& t) {
        if (!t.requires_grad) t.set_requires_grad(true);
        return tape.leaf(t);
    };
    bb.patch_proj = bind(state.patch_proj);
    bb.pos_embed = bind(state.pos_embed);
    bb.cls_token = bind(state.cls_token);
    for (BlockWeights& b : state.blocks) {
        BoundBackbone::Block ib;
        ib.w_q = bind(b.w_q);
        ib.w_k = bind(b.w_k);
        ib.w_v = bind(b.w_v);
        ib.w_o = bind(b.w_o);
        ib.ln1_gamma = bind(b.ln1_gamma);
        ib.ln1_beta = bind(b.ln1_beta);
        ib.w1 = bind(b.w1);
        ib.b1 = bind(b.b1);
        ib.w2 = bind(b.w2);
        ib.b2 = bind(b.b2);
        ib.ln2_gamma = bind(b.ln2_gamma);
        ib.ln2_beta = bind(b.ln2_beta);
        bb.blocks.push_back(ib);
    }
    bb.ln_f_gamma = bind(state.ln_f_gamma);
    bb.ln_f_beta = bind(state.ln_f_beta);
    return bb;
}

Tensor extract_patches(const Tensor& image, const ViTConfig& config) {
    const int c = config.channels, hw = config.image_size, p = config.patch_size;
    const bool rank2_ok = config.channels == 1 && image.shape.size() == 2 &&
                          image.shape[0] == hw && image.shape[1] == hw;
    const bool rank3_ok = image.shape.size() == 3 && image.shape[0] == c &&
                          image.shape[1] == hw && image.shape[2] == hw;
    if (!rank2_ok && !rank3_ok) {
        throw Error("extract_patches: image shape " + image.shape_str() +
                    " does not match the configured image size");
    }
    const int grid = config.patches_per_side();
    Tensor out = Tensor::zeros({config.num_patches(), config.patch_dim()});
    std::int64_t row = 0;
    for (int gy = 0; gy < grid; ++gy) {
        for (int gx = 0; gx < grid; ++gx) {
            double* dst = out.data.data() + row * config.patch_dim();
            std::int64_t k = 0;
            for (int ch = 0; ch < c; ++ch) {
                for (int py = 0; py < p; ++py) {
                    for (int px = 0; px < p; ++px) {
                        const std::int64_t y = gy * p + py;
                        const std::int64_t x = gx * p + px;
                        dst[k++] = image.data[(ch * hw + y) * hw + x];
                    }
                }
            }
            ++row;
        }
    }
    return out;
}

Id patch_embed(Tape& tape, const Tensor& image, const BoundBackbone& bb,
               const ViTConfig& config) {
    const Id patches = tape.constant(extract_patches(image, config));
    return tape.matmul(patches, bb.patch_proj);
}

Id build_input_sequence(Tape& tape, Id patches, const std::vector<Id>& prompt_parts,
                        const BoundBackbone& bb, const ViTConfig& config) {
    const int np = config.num_patches();
    if (tape.val(patches).rows() != np ||
        tape.val(patches).cols() != config.embed_dim) {
        throw Error("build_input_sequence: patch matrix shape mismatch");
    }
    for (const Id p : prompt_parts) {
        if (tape.val(p).cols() != config.embed_dim) {
            throw Error("build_input_sequence: prompt width mismatch");
        }
    }
    const Id cls_row = tape.add(bb.cls_token, tape.slice_rows(bb.pos_embed, 0, 1));
    const Id patch_rows = tape.add(patches, tape.slice_rows(bb.pos_embed, 1, np));
    std::vector<Id> parts;
    parts.push_back(cls_row);
    parts.insert(parts.end(), prompt_parts.begin(), prompt_parts.end());
    parts.push_back(patch_rows);
    return tape.concat_rows(parts);
}

Id attention(Tape& tape, Id x, const BoundBackbone::Block& w,
             const ViTConfig& config) {
    const int dk = config.head_dim();
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    const Id q = tape.matmul(x, w.w_q);
    const Id k = tape.matmul(x, w.w_k);
    const Id v = tape.matmul(x, w.w_v);
    std::vector<Id> head_outputs;
    for (int h = 0; h < config.heads; ++h) {
        const Id qh = tape.slice_cols(q, h * dk, dk);
        const Id kh = tape.slice_cols(k, h * dk, dk);
        const Id vh = tape.slice_cols(v, h * dk, dk);
        const Id scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt_dk);
        const Id attn = tape.softmax_rows(scores);
        head_outputs.push_back(tape.matmul(attn, vh));
    }
    const Id merged =
        config.heads == 1 ? head_outputs[0] : tape.concat_cols(head_outputs);
    return tape.matmul(merged, w.w_o);
}

Id block_forward(Tape& tape, Id x, const BoundBackbone::Block& w,
                 const ViTConfig& config) {
    const Id attn_in = tape.layer_norm(x, w.ln1_gamma, w.ln1_beta, kLnEps);
    const Id attn_out = attention(tape, attn_in, w, config);
    const Id s = tape.layer_norm(tape.add(attn_out, x), w.ln1_gamma, w.ln1_beta, kLnEps);

    const Id mlp_in = tape.layer_norm(s, w.ln2_gamma, w.ln2_beta, kLnEps);
    const Id hidden = tape.gelu(tape.add_row_bias(tape.matmul(mlp_in, w.w1), w.b1));
    const Id mlp_out = tape.add_row_bias(tape.matmul(hidden, w.w2), w.b2);
    return tape.layer_norm(tape.add(mlp_out, s), w.ln2_gamma, w.ln2_beta, kLnEps);
}

Id forward_features(Tape& tape, const Tensor& image,
                    const std::vector<Id>& prompt_parts, const BoundBackbone& bb,
                    const ViTConfig& config) {
    config.validate();
    const Id pe = patch_embed(tape, image, bb, config);
    const bool insert_at_input = config.insert_layer == 0;
    Id seq = build_input_sequence(
        tape, pe, insert_at_input ? prompt_parts : std::vector<Id>{}, bb, config);
    for (int b = 0; b < config.depth; ++b) {
        if (b == config.insert_layer && !insert_at_input && !prompt_parts.empty()) {
            const std::int64_t rows = tape.val(seq).rows();
            std::vector<Id> parts;
            parts.push_back(tape.slice_rows(seq, 0, 1));
            parts.insert(parts.end(), prompt_parts.begin(), prompt_parts.end());
            parts.push_back(tape.slice_rows(seq, 1, rows - 1));
            seq = tape.concat_rows(parts);
        }
        seq = block_forward(tape, seq, bb.blocks[b], config);
    }
    const Id final_ln = tape.layer_norm(seq, bb.ln_f_gamma, bb.ln_f_beta, kLnEps);
    return tape.slice_rows(final_ln, 0, 1);
}

Tensor query_feature(const Tensor& image, const BackboneState& query_state) {
    if (!query_state.frozen) {
        throw Error("query_feature: query backbone must be frozen");
    }
    Tape tape;
    const BoundBackbone bb = bind_backbone(tape, query_state);
    const Id feat = forward_features(tape, image, {}, bb, query_state.config);
    Tensor out = Tensor::from_vec(tape.val(feat).data);
    return out;
}

}  // namespace plab
