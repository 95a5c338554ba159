#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "setfork/rng.hpp"
#include "setfork/vocab.hpp"

namespace setfork {

struct ModelConfig {
    int d_model = 128;
    int n_layers = 4;
    int n_heads = 4;
    int d_ff = 512;
    int context_len = 512;
    int vocab_size = 0;
    double init_scale = 0.06;
    int fork_tag_len = 1;  // forking tag emitted as this many copies of <think i>

    void validate() const;
};

// Named dense arrays; one struct shape shared by parameters, gradients and
// optimizer moments.
struct ParamSet {
    struct Block {
        std::vector<double> ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
        std::vector<double> ln2_g, ln2_b, fc_w, fc_b, fc2_w, fc2_b;
    };
    std::vector<double> wte, wpe;
    std::vector<Block> layers;
    std::vector<double> lnf_g, lnf_b, head_w, head_b;

    static ParamSet zeros(const ModelConfig& cfg);
    size_t count() const;
    void fill(double v);

    // Visits every named array in a fixed order.
    template <class F>
    void for_each(F&& fn) {
        fn("wte", wte);
        fn("wpe", wpe);
        for (size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            Block& blk = layers[l];
            fn(p + "ln1_g", blk.ln1_g);
            fn(p + "ln1_b", blk.ln1_b);
            fn(p + "qkv_w", blk.qkv_w);
            fn(p + "qkv_b", blk.qkv_b);
            fn(p + "proj_w", blk.proj_w);
            fn(p + "proj_b", blk.proj_b);
            fn(p + "ln2_g", blk.ln2_g);
            fn(p + "ln2_b", blk.ln2_b);
            fn(p + "fc_w", blk.fc_w);
            fn(p + "fc_b", blk.fc_b);
            fn(p + "fc2_w", blk.fc2_w);
            fn(p + "fc2_b", blk.fc2_b);
        }
        fn("lnf_g", lnf_g);
        fn("lnf_b", lnf_b);
        fn("head_w", head_w);
        fn("head_b", head_b);
    }
    template <class F>
    void for_each(F&& fn) const {
        const_cast<ParamSet*>(this)->for_each(
            [&](const std::string& n, std::vector<double>& v) { fn(n, static_cast<const std::vector<double>&>(v)); });
    }
};

// Padded token/target matrices. Stage rows with add_row / add_pad_row, then
// pack() before handing the batch to the model. targets[r,t] = -1 marks
// positions outside the completion loss mask.
struct SequenceBatch {
    void add_row(const std::vector<TokenId>& prompt, const std::vector<TokenId>& fork_tag,
                 const std::vector<TokenId>& trace, int upto = -1);
    void add_pad_row(int len = 2);
    void pack(int context_len);

    int n_targets() const;
    bool packed() const { return T > 0 || rows == 0; }

    int rows = 0, T = 0;
    std::vector<int> tokens, targets, lens;
    std::vector<std::vector<int>> staged_tokens, staged_targets;
};

struct GenConfig {
    double temperature = 0.7;
    double top_p = 0.95;
    int max_new = 160;
    uint64_t seed = 0;
    bool greedy = false;  // argmax mode (temperature -> 0 limit)
};

struct OptConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    double warmup_frac = 0.05;
    long total_steps = 0;  // 0 disables the schedule (constant lr)
};

// Linear warmup to 1 over warmup_frac*total_steps, then cosine decay to 0 at
// total_steps. step is 1-based (the step being applied).
double lr_multiplier(const OptConfig& opt, long step);

struct GradCheckReport {
    double max_rel_err = 0.0;
    int checked = 0;
    bool pass = false;
};

struct ForwardBackwardResult {
    std::vector<double> row_nll_sum;  // per row: sum of NLL over target positions
    std::vector<int> row_targets;     // per row: number of target positions
    double total_nll = 0.0;
    int total_targets = 0;
};

class Model {
public:
    Model(const ModelConfig& cfg, uint64_t seed);

    // Gradient-isolated scoring pass: per-position NLL (rows*T, zeros off
    // mask). Leaves no gradient state behind.
    std::vector<double> score(const SequenceBatch& batch) const;

    // Per-token NLL of trace under (prompt, <think i> tag); upto < 0 scores
    // the full trace.
    std::vector<double> forward_nll(const std::vector<TokenId>& prompt, int fork_index,
                                    const std::vector<TokenId>& trace, int upto = -1) const;

    // Accumulates parameter gradients. row_scale[r] is dLoss/dNLL for every
    // target position of row r.
    ForwardBackwardResult forward_backward(const SequenceBatch& batch,
                                           const std::vector<double>& row_scale);

    // Mean NLL over masked positions; gradients populated for all parameters.
    double sft_loss(const SequenceBatch& batch);

    void zero_grads();
    // AdamW with decoupled weight decay and the warmup+cosine schedule.
    // Throws NonFiniteError on non-finite gradients.
    void optimizer_step(const OptConfig& opt);

    std::vector<TokenId> sample(const std::vector<TokenId>& prompt, int fork_index,
                                const GenConfig& gen) const;

    GradCheckReport grad_check(const SequenceBatch& batch, double eps, double tol, int samples,
                               uint64_t seed);

    void save(const std::string& path) const;
    static Model load(const std::string& path);

    std::vector<TokenId> fork_tag(int fork_index) const;

    ModelConfig cfg;
    ParamSet params, grads, adam_m, adam_v;
    long step = 0;
    Rng rng;
    bool use_serial_kernels = false;  // reference path, exercised by tests/bench
};

// Incremental decoder with a per-session KV cache. Read-only over the model;
// safe to run several sessions concurrently.
class DecodeSession {
public:
    explicit DecodeSession(const Model& m);
    // Feeds one token and returns logits for the next position.
    const std::vector<double>& feed(TokenId t);
    int pos() const { return pos_; }

private:
    const Model& m_;
    int pos_ = 0;
    std::vector<std::vector<double>> kcache_, vcache_;  // per layer [ctx][C]
    std::vector<double> x_, xn_, qkv_, atty_, proj_, fch_, logits_;
};

}  // namespace setfork
