#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "plab/tensor.hpp"

namespace plab {

using Id = std::int32_t;

// Reverse-mode tape. Ops execute eagerly through the active kernel table and
// record a backward rule when any input requires gradients; a pass with no
// leaves therefore records nothing and runs at pure forward cost.
//
// Gradients accumulate (+=) into the leaf tensors' grad buffers. Calling
// backward() again without touching the leaves adds the same gradient a
// second time; callers zero leaf grads between steps.
//
// Single-threaded per tape. Tensors registered via input() must outlive it.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // External trainable tensor; requires_grad must be set.
    Id leaf(Tensor& t);
    // External read-only tensor (no copy; caller keeps ownership).
    Id input(const Tensor& t);
    // Tape-owned constant.
    Id constant(Tensor t);

    Id matmul(Id a, Id b);
    Id add(Id a, Id b);
    Id scale(Id a, double alpha);
    Id add_row_bias(Id x, Id bias);
    Id transpose(Id a);
    Id concat_rows(const std::vector<Id>& parts);
    Id slice_rows(Id a, std::int64_t start, std::int64_t count);
    Id slice_cols(Id a, std::int64_t start, std::int64_t width);
    Id concat_cols(const std::vector<Id>& parts);
    Id softmax_rows(Id x);
    Id layer_norm(Id x, Id gamma, Id beta, double eps);
    Id gelu(Id x);
    Id sum(Id x);

    // Cross-entropy over the active-class logits only; `active` is a C-long
    // 0/1 mask. Inactive logits are never read, and their gradient stays
    // exactly zero.
    Id masked_cross_entropy(Id logits, int label, const std::vector<std::uint8_t>& active);

    // coef * sum_i weight_i * (p_i - anchor_i)^2  (EWC/SI penalties).
    Id quadratic_penalty(Id params, const Tensor& anchor, const Tensor& weight, double coef);

    // mean over selected key rows of (1 - cos(query, key)). The query is a
    // detached constant; gradients flow to the keys only.
    Id surrogate_key_loss(const Tensor& query, Id keys, const std::vector<int>& selected);

    // softmax over cos(query, key_j) weights the value prompts into one
    // composed prompt; differentiable into keys and values.
    Id weighted_compose(const Tensor& query, Id keys, const std::vector<Id>& values);

    void backward(Id loss);
    void reset();

    const Tensor& val(Id id) const;
    bool grad_tracked(Id id) const;
    // Gradient buffer of any tracked id (leaf grads live in the leaf tensor).
    const std::vector<double>& grad(Id id) const;
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Slot {
        const Tensor* ext = nullptr;  // external const or leaf
        Tensor* leaf = nullptr;       // set when ext is a gradient sink
        Tensor owned;
        std::vector<double> gradbuf;  // non-leaf gradient
        bool needs = false;
    };

    const Tensor& v(Id id) const { return slots_[id].ext ? *slots_[id].ext : slots_[id].owned; }
    std::vector<double>& gbuf(Id id);
    Id add_result(Tensor out, bool needs, const char* op);
    void check_id(Id id, const char* op) const;

    std::vector<Slot> slots_;
    std::vector<std::function<void()>> nodes_;
};

// Central-difference gradient verification. Builds the loss with
// `build_loss` on fresh tapes, runs backward once for the analytic
// gradients, then perturbs every coordinate of every leaf by +-h and
// returns max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
// Two baseline evaluations must agree bitwise, else Error (f is required
// to be deterministic). h must lie in [1e-7, 1e-3].
double finite_diff_check(const std::function<Id(Tape&)>& build_loss,
                         const std::vector<Tensor*>& leaves, double h);

}  // namespace plab
