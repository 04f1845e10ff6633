#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "plab/tape.hpp"
#include "plab/tensor.hpp"

namespace plab {

class Rng;

enum class Strategy { none, only_prompt, pool, weighted };
const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

// Trainable prompt parameters. only_prompt holds one N x D token block whose
// mask implements the sub-token padding trick; pool/weighted hold M separate
// L_p x D prompts plus an M x D key matrix.
struct PromptState {
    Strategy strategy = Strategy::none;
    int dim = 0;
    int prompt_len = 0;  // rows per prompt
    int top_n = 1;
    std::vector<Tensor> values;
    std::vector<std::vector<std::uint8_t>> masks;  // 1 = trainable
    Tensor keys;  // M x D for pool/weighted, empty otherwise

    int pool_size() const { return static_cast<int>(values.size()); }
    bool has_keys() const { return !keys.data.empty(); }
    std::int64_t trainable_value_params() const;
    std::int64_t key_params() const { return static_cast<std::int64_t>(keys.data.size()); }
    // Masked-off entries must be exactly zero at all times.
    void check_mask_invariant() const;
};

// N = ceil(n_params / dim) tokens; the trailing dim*N - n_params entries of
// the last token are mask-frozen zeros. Trainable entries start at
// uniform(-1/sqrt(dim), 1/sqrt(dim)).
PromptState build_only_prompt(std::int64_t n_params, int dim, Rng& rng);
PromptState build_pool(int pool_size, int prompt_len, int dim, int top_n, Rng& rng);
PromptState build_weighted(int pool_size, int prompt_len, int dim, Rng& rng);

// Cosine similarity; either vector having zero norm yields -1.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Indices of the top_n keys by cosine similarity to the query, descending,
// ties broken toward the lower index. Selection is detached (no gradients).
std::vector<int> retrieve_top_n(const Tensor& query, const Tensor& keys, int top_n);

// The flattened prompt that would actually be fed to the model for this
// query: the single block (only_prompt), the rank-ordered top-n concatenation
// (pool), or the softmax-composed prompt (weighted). This is the vector
// entering the prompt-similarity diagnostic.
std::vector<double> retrieved_prompt_vector(const PromptState& prompts,
                                            const Tensor& query);

enum class HeadKind { linear, nmc };
const char* head_name(HeadKind k);

struct HeadState {
    HeadKind kind = HeadKind::linear;
    int classes = 0;
    int dim = 0;
    Tensor w;  // C x D, rows of unseen classes stay at initialization (zero)
    Tensor b;  // C
    Tensor nmc_sums;  // C x D running feature sums
    std::vector<std::int64_t> nmc_counts;
    std::vector<std::uint8_t> seen;

    static HeadState linear_head(int classes, int dim);
    static HeadState nmc_head(int classes, int dim);
};

void nmc_fit(HeadState& head, const Tensor& feature, int label);
// Argmin Euclidean distance over fitted class means; ties -> lower class id.
// `restrict_to` (optional 0/1 mask) limits the candidate set.
int nmc_predict(const HeadState& head, const Tensor& feature,
                const std::vector<std::uint8_t>* restrict_to = nullptr);

enum class RegKind { none, ewc, si };
const char* reg_name(RegKind k);
RegKind reg_from_name(const std::string& name);

// Weight-regularizer state, keyed by trainable-parameter name so the set of
// anchored tensors can vary across tasks.
struct RegState {
    RegKind kind = RegKind::none;
    double lambda = 0.0;
    double xi = 0.1;
    bool has_anchor = false;
    std::map<std::string, Tensor> anchor;
    std::map<std::string, Tensor> fisher;     // EWC: running mean across tasks
    int fisher_tasks = 0;
    std::map<std::string, Tensor> omega;      // SI: within-task path integral
    std::map<std::string, Tensor> big_omega;  // SI: consolidated importance
};

// EWC penalty (lambda/2) * sum F_i (p_i - anchor_i)^2, summed over tensors.
double ewc_penalty(const RegState& reg,
                   const std::vector<std::pair<std::string, const Tensor*>>& params);
// SI penalty lambda * sum Omega_i (p_i - anchor_i)^2.
double si_penalty(const RegState& reg,
                  const std::vector<std::pair<std::string, const Tensor*>>& params);

// Per-class feature statistics captured at task boundaries for TAP.
struct ClassStats {
    Tensor mean;
    Tensor var;  // diagonal
    std::int64_t count = 0;
};
using StatsMap = std::map<int, ClassStats>;

// Redraws Gaussian pseudo-features from the stored statistics and retrains
// the linear head on them (all seen classes active). Backbone and prompts
// are untouched.
void tap_align(HeadState& head, const StatsMap& stats, int samples_per_class,
               int epochs, double lr, double beta1, double beta2, double eps,
               Rng& rng);

}  // namespace plab
