#include "setfork/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "setfork/errors.hpp"
#include "setfork/kernels.hpp"

namespace setfork {

using nlohmann::json;
namespace kn = kernels;

void ModelConfig::validate() const {
    if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1) throw ConfigError("model: dims must be positive");
    if (d_model % n_heads != 0) throw ConfigError("model: d_model must be divisible by n_heads");
    if (context_len < 2) throw ConfigError("model: context_len too small");
    if (vocab_size < Vocab::kThinkBase + 1) throw ConfigError("model: vocab_size too small");
    if (init_scale <= 0.0) throw ConfigError("model: init_scale must be positive");
    if (fork_tag_len < 1) throw ConfigError("model: fork_tag_len must be >= 1");
}

ParamSet ParamSet::zeros(const ModelConfig& cfg) {
    const int C = cfg.d_model, F = cfg.d_ff, V = cfg.vocab_size;
    ParamSet p;
    p.wte.assign(static_cast<size_t>(V) * C, 0.0);
    p.wpe.assign(static_cast<size_t>(cfg.context_len) * C, 0.0);
    p.layers.resize(cfg.n_layers);
    for (auto& blk : p.layers) {
        blk.ln1_g.assign(C, 0.0);
        blk.ln1_b.assign(C, 0.0);
        blk.qkv_w.assign(static_cast<size_t>(3 * C) * C, 0.0);
        blk.qkv_b.assign(3 * C, 0.0);
        blk.proj_w.assign(static_cast<size_t>(C) * C, 0.0);
        blk.proj_b.assign(C, 0.0);
        blk.ln2_g.assign(C, 0.0);
        blk.ln2_b.assign(C, 0.0);
        blk.fc_w.assign(static_cast<size_t>(F) * C, 0.0);
        blk.fc_b.assign(F, 0.0);
        blk.fc2_w.assign(static_cast<size_t>(C) * F, 0.0);
        blk.fc2_b.assign(C, 0.0);
    }
    p.lnf_g.assign(C, 0.0);
    p.lnf_b.assign(C, 0.0);
    p.head_w.assign(static_cast<size_t>(V) * C, 0.0);
    p.head_b.assign(V, 0.0);
    return p;
}

size_t ParamSet::count() const {
    size_t n = 0;
    for_each([&](const std::string&, const std::vector<double>& v) { n += v.size(); });
    return n;
}

void ParamSet::fill(double x) {
    for_each([&](const std::string&, std::vector<double>& v) { std::fill(v.begin(), v.end(), x); });
}

void SequenceBatch::add_row(const std::vector<TokenId>& prompt, const std::vector<TokenId>& fork_tag,
                            const std::vector<TokenId>& trace, int upto) {
    if (trace.empty()) throw ConfigError("batch: empty trace");
    const int take = upto < 0 ? static_cast<int>(trace.size())
                              : std::min<int>(upto, static_cast<int>(trace.size()));
    if (take < 1) throw ConfigError("batch: upto must be >= 1");
    std::vector<int> toks;
    toks.reserve(prompt.size() + fork_tag.size() + take - 1);
    toks.insert(toks.end(), prompt.begin(), prompt.end());
    toks.insert(toks.end(), fork_tag.begin(), fork_tag.end());
    toks.insert(toks.end(), trace.begin(), trace.begin() + (take - 1));
    std::vector<int> tgts(toks.size(), -1);
    // The tag's last position predicts the first trace token; trace positions
    // predict their successor. Prompt and tag tokens are never targets.
    const int first = static_cast<int>(prompt.size() + fork_tag.size()) - 1;
    for (int j = 0; j < take; ++j) tgts[first + j] = trace[j];
    staged_tokens.push_back(std::move(toks));
    staged_targets.push_back(std::move(tgts));
    ++rows;
}

void SequenceBatch::add_pad_row(int len) {
    staged_tokens.emplace_back(len, Vocab::kPad);
    staged_targets.emplace_back(len, -1);
    ++rows;
}

void SequenceBatch::pack(int context_len) {
    T = 0;
    for (const auto& r : staged_tokens) {
        if (static_cast<int>(r.size()) > context_len) {
            throw ContextOverflowError("batch: row length " + std::to_string(r.size()) +
                                       " exceeds context " + std::to_string(context_len));
        }
        T = std::max(T, static_cast<int>(r.size()));
    }
    tokens.assign(static_cast<size_t>(rows) * T, Vocab::kPad);
    targets.assign(static_cast<size_t>(rows) * T, -1);
    lens.resize(rows);
    for (int r = 0; r < rows; ++r) {
        const auto& src = staged_tokens[r];
        lens[r] = static_cast<int>(src.size());
        std::copy(src.begin(), src.end(), tokens.begin() + static_cast<size_t>(r) * T);
        std::copy(staged_targets[r].begin(), staged_targets[r].end(),
                  targets.begin() + static_cast<size_t>(r) * T);
    }
}

int SequenceBatch::n_targets() const {
    int n = 0;
    for (int x : targets) n += x >= 0 ? 1 : 0;
    return n;
}

double lr_multiplier(const OptConfig& opt, long step) {
    if (opt.total_steps <= 0) return 1.0;
    const long total = opt.total_steps;
    const long warm = std::max<long>(1, std::lround(opt.warmup_frac * static_cast<double>(total)));
    if (step <= warm) return static_cast<double>(step) / static_cast<double>(warm);
    if (step >= total || total == warm) {
        return step >= total ? 0.0 : 1.0;
    }
    const double progress = static_cast<double>(step - warm) / static_cast<double>(total - warm);
    return 0.5 * (1.0 + std::cos(M_PI * progress));
}

// ---------------------------------------------------------------------------
// forward / backward plumbing

namespace {

struct KernelTable {
    decltype(&kn::embedding_forward) embedding_forward;
    decltype(&kn::embedding_backward) embedding_backward;
    decltype(&kn::layernorm_forward) layernorm_forward;
    decltype(&kn::layernorm_backward) layernorm_backward;
    decltype(&kn::matmul_forward) matmul_forward;
    decltype(&kn::matmul_backward) matmul_backward;
    decltype(&kn::attention_forward) attention_forward;
    decltype(&kn::attention_backward) attention_backward;
    decltype(&kn::gelu_forward) gelu_forward;
    decltype(&kn::gelu_backward) gelu_backward;
    decltype(&kn::residual_forward) residual_forward;
    decltype(&kn::softmax_nll_forward) softmax_nll_forward;
    decltype(&kn::softmax_nll_backward) softmax_nll_backward;
    decltype(&kn::adamw_update) adamw_update;
};

const KernelTable kParallel = {
    kn::embedding_forward, kn::embedding_backward, kn::layernorm_forward, kn::layernorm_backward,
    kn::matmul_forward,    kn::matmul_backward,    kn::attention_forward, kn::attention_backward,
    kn::gelu_forward,      kn::gelu_backward,      kn::residual_forward,  kn::softmax_nll_forward,
    kn::softmax_nll_backward, kn::adamw_update};

const KernelTable kSerial = {
    kn::serial::embedding_forward, kn::serial::embedding_backward, kn::serial::layernorm_forward,
    kn::serial::layernorm_backward, kn::serial::matmul_forward, kn::serial::matmul_backward,
    kn::serial::attention_forward, kn::serial::attention_backward, kn::serial::gelu_forward,
    kn::serial::gelu_backward, kn::serial::residual_forward, kn::serial::softmax_nll_forward,
    kn::serial::softmax_nll_backward, kn::serial::adamw_update};

struct LayerActs {
    std::vector<double> ln1, ln1_mean, ln1_rstd, qkv, attprobs, atty, attproj, res1;
    std::vector<double> ln2, ln2_mean, ln2_rstd, fch, gelu, fcproj, res2;
};

struct Acts {
    Acts(const ModelConfig& cfg, int rows, int T) {
        const size_t rt = static_cast<size_t>(rows) * T;
        const int C = cfg.d_model, F = cfg.d_ff, V = cfg.vocab_size;
        encoded.assign(rt * C, 0.0);
        layers.resize(cfg.n_layers);
        for (auto& a : layers) {
            a.ln1.assign(rt * C, 0.0);
            a.ln1_mean.assign(rt, 0.0);
            a.ln1_rstd.assign(rt, 0.0);
            a.qkv.assign(rt * 3 * C, 0.0);
            a.attprobs.assign(static_cast<size_t>(rows) * cfg.n_heads * T * T, 0.0);
            a.atty.assign(rt * C, 0.0);
            a.attproj.assign(rt * C, 0.0);
            a.res1.assign(rt * C, 0.0);
            a.ln2.assign(rt * C, 0.0);
            a.ln2_mean.assign(rt, 0.0);
            a.ln2_rstd.assign(rt, 0.0);
            a.fch.assign(rt * F, 0.0);
            a.gelu.assign(rt * F, 0.0);
            a.fcproj.assign(rt * C, 0.0);
            a.res2.assign(rt * C, 0.0);
        }
        lnf.assign(rt * C, 0.0);
        lnf_mean.assign(rt, 0.0);
        lnf_rstd.assign(rt, 0.0);
        logits.assign(rt * V, 0.0);
        probs.assign(rt * V, 0.0);
        nll.assign(rt, 0.0);
    }
    std::vector<double> encoded;
    std::vector<LayerActs> layers;
    std::vector<double> lnf, lnf_mean, lnf_rstd, logits, probs, nll;
};

void run_forward(const ModelConfig& cfg, const ParamSet& p, const KernelTable& kt,
                 const SequenceBatch& b, Acts& a) {
    const int C = cfg.d_model, F = cfg.d_ff, V = cfg.vocab_size, NH = cfg.n_heads;
    const int R = b.rows, T = b.T;
    const int* lens = b.lens.data();
    kt.embedding_forward(a.encoded.data(), b.tokens.data(), p.wte.data(), p.wpe.data(), R, T, lens, C);
    const double* x = a.encoded.data();
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& w = p.layers[l];
        auto& s = a.layers[l];
        kt.layernorm_forward(s.ln1.data(), s.ln1_mean.data(), s.ln1_rstd.data(), x, w.ln1_g.data(),
                             w.ln1_b.data(), R, T, lens, C);
        kt.matmul_forward(s.qkv.data(), s.ln1.data(), w.qkv_w.data(), w.qkv_b.data(), R, T, lens, C, 3 * C);
        kt.attention_forward(s.atty.data(), s.attprobs.data(), s.qkv.data(), R, T, lens, C, NH);
        kt.matmul_forward(s.attproj.data(), s.atty.data(), w.proj_w.data(), w.proj_b.data(), R, T, lens, C, C);
        kt.residual_forward(s.res1.data(), x, s.attproj.data(), static_cast<long>(R) * T * C);
        kt.layernorm_forward(s.ln2.data(), s.ln2_mean.data(), s.ln2_rstd.data(), s.res1.data(),
                             w.ln2_g.data(), w.ln2_b.data(), R, T, lens, C);
        kt.matmul_forward(s.fch.data(), s.ln2.data(), w.fc_w.data(), w.fc_b.data(), R, T, lens, C, F);
        kt.gelu_forward(s.gelu.data(), s.fch.data(), static_cast<long>(R) * T * F);
        kt.matmul_forward(s.fcproj.data(), s.gelu.data(), w.fc2_w.data(), w.fc2_b.data(), R, T, lens, F, C);
        kt.residual_forward(s.res2.data(), s.res1.data(), s.fcproj.data(), static_cast<long>(R) * T * C);
        x = s.res2.data();
    }
    kt.layernorm_forward(a.lnf.data(), a.lnf_mean.data(), a.lnf_rstd.data(), x, p.lnf_g.data(),
                         p.lnf_b.data(), R, T, lens, C);
    kt.matmul_forward(a.logits.data(), a.lnf.data(), p.head_w.data(), p.head_b.data(), R, T, lens, C, V);
    kt.softmax_nll_forward(a.probs.data(), a.nll.data(), a.logits.data(), b.targets.data(), R, T, lens, V);
}

void run_backward(const ModelConfig& cfg, const ParamSet& p, ParamSet& g, const KernelTable& kt,
                  const SequenceBatch& b, const Acts& a, const std::vector<double>& dnll) {
    const int C = cfg.d_model, F = cfg.d_ff, V = cfg.vocab_size, NH = cfg.n_heads;
    const int R = b.rows, T = b.T;
    const int* lens = b.lens.data();
    const size_t rt = static_cast<size_t>(R) * T;

    std::vector<double> dlogits(rt * V, 0.0);
    kt.softmax_nll_backward(dlogits.data(), a.probs.data(), b.targets.data(), dnll.data(), R, T, lens, V);

    std::vector<double> dlnf(rt * C, 0.0);
    kt.matmul_backward(dlnf.data(), g.head_w.data(), g.head_b.data(), dlogits.data(), a.lnf.data(),
                       p.head_w.data(), R, T, lens, C, V);

    const double* x_last = cfg.n_layers > 0 ? a.layers.back().res2.data() : a.encoded.data();
    std::vector<double> dx(rt * C, 0.0);
    kt.layernorm_backward(dx.data(), g.lnf_g.data(), g.lnf_b.data(), dlnf.data(), x_last,
                          p.lnf_g.data(), a.lnf_mean.data(), a.lnf_rstd.data(), R, T, lens, C);

    std::vector<double> dgelu(rt * F), dfch(rt * F), dln2(rt * C), dres1(rt * C);
    std::vector<double> datty(rt * C), dqkv(rt * 3 * C), dln1(rt * C), dxprev(rt * C);
    std::vector<double> dprobs(static_cast<size_t>(R) * NH * T * T);
    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const auto& w = p.layers[l];
        auto& gw = g.layers[l];
        const auto& s = a.layers[l];
        const double* x_in = l > 0 ? a.layers[l - 1].res2.data() : a.encoded.data();

        // dx holds d(res2): flows into the MLP branch and through the residual.
        std::fill(dgelu.begin(), dgelu.end(), 0.0);
        kt.matmul_backward(dgelu.data(), gw.fc2_w.data(), gw.fc2_b.data(), dx.data(), s.gelu.data(),
                           w.fc2_w.data(), R, T, lens, F, C);
        std::fill(dfch.begin(), dfch.end(), 0.0);
        kt.gelu_backward(dfch.data(), s.fch.data(), dgelu.data(), static_cast<long>(R) * T * F);
        std::fill(dln2.begin(), dln2.end(), 0.0);
        kt.matmul_backward(dln2.data(), gw.fc_w.data(), gw.fc_b.data(), dfch.data(), s.ln2.data(),
                           w.fc_w.data(), R, T, lens, C, F);
        dres1 = dx;
        kt.layernorm_backward(dres1.data(), gw.ln2_g.data(), gw.ln2_b.data(), dln2.data(), s.res1.data(),
                              w.ln2_g.data(), s.ln2_mean.data(), s.ln2_rstd.data(), R, T, lens, C);

        // dres1 -> attention branch and the residual to the layer input.
        std::fill(datty.begin(), datty.end(), 0.0);
        kt.matmul_backward(datty.data(), gw.proj_w.data(), gw.proj_b.data(), dres1.data(), s.atty.data(),
                           w.proj_w.data(), R, T, lens, C, C);
        std::fill(dqkv.begin(), dqkv.end(), 0.0);
        kt.attention_backward(dqkv.data(), dprobs.data(), datty.data(), s.attprobs.data(), s.qkv.data(),
                              R, T, lens, C, NH);
        std::fill(dln1.begin(), dln1.end(), 0.0);
        kt.matmul_backward(dln1.data(), gw.qkv_w.data(), gw.qkv_b.data(), dqkv.data(), s.ln1.data(),
                           w.qkv_w.data(), R, T, lens, C, 3 * C);
        dxprev = dres1;
        kt.layernorm_backward(dxprev.data(), gw.ln1_g.data(), gw.ln1_b.data(), dln1.data(), x_in,
                              w.ln1_g.data(), s.ln1_mean.data(), s.ln1_rstd.data(), R, T, lens, C);
        std::swap(dx, dxprev);
    }
    kt.embedding_backward(g.wte.data(), g.wpe.data(), dx.data(), b.tokens.data(), R, T, lens, C);
}

}  // namespace

// ---------------------------------------------------------------------------

Model::Model(const ModelConfig& config, uint64_t seed) : cfg(config), rng(seed) {
    cfg.validate();
    params = ParamSet::zeros(cfg);
    grads = ParamSet::zeros(cfg);
    adam_m = ParamSet::zeros(cfg);
    adam_v = ParamSet::zeros(cfg);

    const double resid_scale = cfg.init_scale / std::sqrt(2.0 * cfg.n_layers);
    auto gauss_fill = [&](std::vector<double>& v, double scale) {
        for (double& x : v) x = rng.gaussian() * scale;
    };
    gauss_fill(params.wte, cfg.init_scale);
    gauss_fill(params.wpe, cfg.init_scale);
    for (auto& blk : params.layers) {
        std::fill(blk.ln1_g.begin(), blk.ln1_g.end(), 1.0);
        gauss_fill(blk.qkv_w, cfg.init_scale);
        gauss_fill(blk.proj_w, resid_scale);
        std::fill(blk.ln2_g.begin(), blk.ln2_g.end(), 1.0);
        gauss_fill(blk.fc_w, cfg.init_scale);
        gauss_fill(blk.fc2_w, resid_scale);
    }
    std::fill(params.lnf_g.begin(), params.lnf_g.end(), 1.0);
    gauss_fill(params.head_w, cfg.init_scale);
}

std::vector<TokenId> Model::fork_tag(int fork_index) const {
    const TokenId id = Vocab::kThinkBase + fork_index - 1;
    if (fork_index < 1 || id >= cfg.vocab_size) {
        throw ConfigError("model: fork index out of range: " + std::to_string(fork_index));
    }
    return std::vector<TokenId>(cfg.fork_tag_len, id);
}

std::vector<double> Model::score(const SequenceBatch& batch) const {
    if (!batch.packed()) throw ConfigError("model: batch not packed");
    if (batch.rows == 0) return {};
    const KernelTable& kt = use_serial_kernels ? kSerial : kParallel;
    Acts acts(cfg, batch.rows, batch.T);
    run_forward(cfg, params, kt, batch, acts);
    for (double v : acts.nll) {
        if (!std::isfinite(v)) throw NonFiniteError("model: non-finite logits in scoring pass");
    }
    return std::move(acts.nll);
}

std::vector<double> Model::forward_nll(const std::vector<TokenId>& prompt, int fork_index,
                                       const std::vector<TokenId>& trace, int upto) const {
    SequenceBatch b;
    b.add_row(prompt, fork_tag(fork_index), trace, upto);
    b.pack(cfg.context_len);
    std::vector<double> nll = score(b);
    std::vector<double> out;
    for (int t = 0; t < b.T; ++t) {
        if (b.targets[t] >= 0) out.push_back(nll[t]);
    }
    return out;
}

ForwardBackwardResult Model::forward_backward(const SequenceBatch& batch,
                                              const std::vector<double>& row_scale) {
    if (!batch.packed()) throw ConfigError("model: batch not packed");
    if (static_cast<int>(row_scale.size()) != batch.rows) {
        throw ConfigError("model: row_scale size mismatch");
    }
    const KernelTable& kt = use_serial_kernels ? kSerial : kParallel;
    Acts acts(cfg, batch.rows, batch.T);
    run_forward(cfg, params, kt, batch, acts);

    ForwardBackwardResult res;
    res.row_nll_sum.assign(batch.rows, 0.0);
    res.row_targets.assign(batch.rows, 0);
    std::vector<double> dnll(static_cast<size_t>(batch.rows) * batch.T, 0.0);
    for (int r = 0; r < batch.rows; ++r) {
        for (int t = 0; t < batch.T; ++t) {
            const size_t i = static_cast<size_t>(r) * batch.T + t;
            if (batch.targets[i] >= 0) {
                res.row_nll_sum[r] += acts.nll[i];
                res.row_targets[r] += 1;
                dnll[i] = row_scale[r];
            }
        }
        res.total_nll += res.row_nll_sum[r];
        res.total_targets += res.row_targets[r];
    }
    if (!std::isfinite(res.total_nll)) throw NonFiniteError("model: non-finite loss");
    run_backward(cfg, params, grads, kt, batch, acts, dnll);
    return res;
}

double Model::sft_loss(const SequenceBatch& batch) {
    const int n = batch.n_targets();
    if (batch.rows == 0 || n == 0) return 0.0;
    std::vector<double> scale(batch.rows, 1.0 / n);
    auto res = forward_backward(batch, scale);
    return res.total_nll / n;
}

void Model::zero_grads() { grads.fill(0.0); }

void Model::optimizer_step(const OptConfig& opt) {
    grads.for_each([&](const std::string& name, std::vector<double>& g) {
        for (double v : g) {
            if (!std::isfinite(v)) {
                throw NonFiniteError("optimizer: non-finite gradient in " + name + " at step " +
                                     std::to_string(step));
            }
        }
    });
    const double lr = opt.lr * lr_multiplier(opt, step + 1);
    const KernelTable& kt = use_serial_kernels ? kSerial : kParallel;
    auto* gm = &adam_m;
    auto* gv = &adam_v;
    // Iterate params/grads/moments in lockstep (identical layout).
    std::vector<std::vector<double>*> ps, gs, ms, vs;
    params.for_each([&](const std::string&, std::vector<double>& v) { ps.push_back(&v); });
    grads.for_each([&](const std::string&, std::vector<double>& v) { gs.push_back(&v); });
    gm->for_each([&](const std::string&, std::vector<double>& v) { ms.push_back(&v); });
    gv->for_each([&](const std::string&, std::vector<double>& v) { vs.push_back(&v); });
    for (size_t i = 0; i < ps.size(); ++i) {
        kt.adamw_update(ps[i]->data(), gs[i]->data(), ms[i]->data(), vs[i]->data(),
                        static_cast<long>(ps[i]->size()), lr, opt.beta1, opt.beta2, opt.eps,
                        opt.weight_decay, step + 1);
    }
    ++step;
}

// ---------------------------------------------------------------------------
// sampling

namespace {

int pick_token(const std::vector<double>& logits, const GenConfig& gen, Rng& rng) {
    const int V = static_cast<int>(logits.size());
    if (gen.greedy) {
        int best = 0;
        for (int v = 1; v < V; ++v) {
            if (logits[v] > logits[best]) best = v;
        }
        return best;
    }
    std::vector<double> p(V);
    double maxv = logits[0];
    for (int v = 1; v < V; ++v) maxv = std::max(maxv, logits[v]);
    double denom = 0.0;
    for (int v = 0; v < V; ++v) {
        p[v] = std::exp((logits[v] - maxv) / gen.temperature);
        denom += p[v];
    }
    for (int v = 0; v < V; ++v) p[v] /= denom;

    // Nucleus: keep the smallest prefix of the sorted distribution with mass
    // >= top_p, then renormalize.
    std::vector<int> idx(V);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int x, int y) { return p[x] > p[y]; });
    double cum = 0.0;
    int keep = 0;
    while (keep < V) {
        cum += p[idx[keep]];
        ++keep;
        if (cum >= gen.top_p) break;
    }
    const double u = rng.uniform() * cum;
    double acc = 0.0;
    for (int i = 0; i < keep; ++i) {
        acc += p[idx[i]];
        if (u < acc) return idx[i];
    }
    return idx[keep - 1];
}

}  // namespace

std::vector<TokenId> Model::sample(const std::vector<TokenId>& prompt, int fork_index,
                                   const GenConfig& gen) const {
    if (!gen.greedy && (gen.temperature <= 0.0 || gen.top_p <= 0.0 || gen.top_p > 1.0)) {
        throw ConfigError("sample: require temperature > 0 and 0 < top_p <= 1");
    }
    const auto tag = fork_tag(fork_index);
    if (static_cast<int>(prompt.size() + tag.size()) >= cfg.context_len) {
        throw ContextOverflowError("sample: prompt does not fit the context window");
    }
    DecodeSession sess(*this);
    const std::vector<double>* logits = nullptr;
    for (TokenId t : prompt) logits = &sess.feed(t);
    for (TokenId t : tag) logits = &sess.feed(t);

    Rng local(gen.seed);
    std::vector<TokenId> out;
    for (int i = 0; i < gen.max_new; ++i) {
        const TokenId next = pick_token(*logits, gen, local);
        out.push_back(next);
        if (next == Vocab::kEos) break;
        if (sess.pos() >= cfg.context_len) break;
        logits = &sess.feed(next);
    }
    return out;
}

// ---------------------------------------------------------------------------
// gradient check

GradCheckReport Model::grad_check(const SequenceBatch& batch, double eps, double tol, int samples,
                                  uint64_t seed) {
    if (params.count() > 50000) {
        throw ConfigError("grad_check: model too large for finite differences");
    }
    const int n = batch.n_targets();
    zero_grads();
    std::vector<double> scale(batch.rows, 1.0 / n);
    forward_backward(batch, scale);

    std::vector<std::vector<double>*> pv, gv;
    params.for_each([&](const std::string&, std::vector<double>& v) { pv.push_back(&v); });
    grads.for_each([&](const std::string&, std::vector<double>& v) { gv.push_back(&v); });
    const size_t total = params.count();

    auto loss_at = [&]() {
        std::vector<double> nll = score(batch);
        double s = 0.0;
        for (double x : nll) s += x;
        return s / n;
    };

    Rng pick(seed);
    GradCheckReport rep;
    for (int s = 0; s < samples; ++s) {
        size_t flat = static_cast<size_t>(pick.uniform_int(0, static_cast<int64_t>(total) - 1));
        size_t a = 0;
        while (flat >= pv[a]->size()) {
            flat -= pv[a]->size();
            ++a;
        }
        double& theta = (*pv[a])[flat];
        const double orig = theta;
        theta = orig + eps;
        const double lp = loss_at();
        theta = orig - eps;
        const double lm = loss_at();
        theta = orig;
        const double numeric = (lp - lm) / (2.0 * eps);
        const double analytic = (*gv[a])[flat];
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        rep.max_rel_err = std::max(rep.max_rel_err, rel);
        ++rep.checked;
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

// ---------------------------------------------------------------------------
// checkpoint io

void Model::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    json hdr;
    hdr["config"] = {{"d_model", cfg.d_model},       {"n_layers", cfg.n_layers},
                     {"n_heads", cfg.n_heads},       {"d_ff", cfg.d_ff},
                     {"context_len", cfg.context_len}, {"vocab_size", cfg.vocab_size},
                     {"init_scale", cfg.init_scale}, {"fork_tag_len", cfg.fork_tag_len}};
    hdr["step"] = step;
    hdr["rng"] = rng.save_state();
    json arrays = json::array();
    params.for_each([&](const std::string& name, const std::vector<double>& v) {
        arrays.push_back({{"name", name}, {"size", v.size()}});
    });
    hdr["params"] = std::move(arrays);
    const std::string hs = hdr.dump();
    const char magic[4] = {'S', 'F', 'C', 'K'};
    const uint32_t version = 1;
    const uint64_t hlen = hs.size();
    f.write(magic, 4);
    f.write(reinterpret_cast<const char*>(&version), sizeof version);
    f.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    params.for_each([&](const std::string&, const std::vector<double>& v) {
        f.write(reinterpret_cast<const char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
    });
    if (!f) throw IoError("write failed: " + path);
}

Model Model::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    char magic[4];
    uint32_t version = 0;
    uint64_t hlen = 0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&version), sizeof version);
    f.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
    if (!f || std::memcmp(magic, "SFCK", 4) != 0 || version != 1) {
        throw IoError("checkpoint: bad magic or version in " + path);
    }
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    json hdr = json::parse(hs);
    ModelConfig cfg;
    const json& jc = hdr.at("config");
    cfg.d_model = jc.at("d_model").get<int>();
    cfg.n_layers = jc.at("n_layers").get<int>();
    cfg.n_heads = jc.at("n_heads").get<int>();
    cfg.d_ff = jc.at("d_ff").get<int>();
    cfg.context_len = jc.at("context_len").get<int>();
    cfg.vocab_size = jc.at("vocab_size").get<int>();
    cfg.init_scale = jc.at("init_scale").get<double>();
    cfg.fork_tag_len = jc.at("fork_tag_len").get<int>();

    Model m(cfg, 0);
    m.step = hdr.at("step").get<long>();
    m.rng.load_state(hdr.at("rng").get<std::string>());
    size_t i = 0;
    const json& arrays = hdr.at("params");
    m.params.for_each([&](const std::string& name, std::vector<double>& v) {
        if (i >= arrays.size() || arrays[i].at("name") != name ||
            arrays[i].at("size").get<size_t>() != v.size()) {
            throw IoError("checkpoint: parameter layout mismatch at " + name);
        }
        f.read(reinterpret_cast<char*>(v.data()),
               static_cast<std::streamsize>(v.size() * sizeof(double)));
        ++i;
    });
    if (!f) throw IoError("checkpoint: truncated file " + path);
    return m;
}

// ---------------------------------------------------------------------------
// incremental decoding

DecodeSession::DecodeSession(const Model& m) : m_(m) {
    const int C = m.cfg.d_model;
    kcache_.assign(m.cfg.n_layers, std::vector<double>(static_cast<size_t>(m.cfg.context_len) * C));
    vcache_.assign(m.cfg.n_layers, std::vector<double>(static_cast<size_t>(m.cfg.context_len) * C));
    x_.resize(C);
    xn_.resize(C);
    qkv_.resize(3 * C);
    atty_.resize(C);
    proj_.resize(std::max(C, m.cfg.d_ff));
    fch_.resize(m.cfg.d_ff);
    logits_.resize(m.cfg.vocab_size);
}

namespace {

void ln_row(double* out, const double* x, const double* g, const double* b, int C) {
    constexpr double kEps = 1e-5;
    double mu = 0.0;
    for (int c = 0; c < C; ++c) mu += x[c];
    mu /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) var += (x[c] - mu) * (x[c] - mu);
    var /= C;
    const double rs = 1.0 / std::sqrt(var + kEps);
    for (int c = 0; c < C; ++c) out[c] = (x[c] - mu) * rs * g[c] + b[c];
}

void matvec(double* out, const double* x, const double* w, const double* bias, int IN, int OUT) {
    for (int k = 0; k < OUT; ++k) {
        double acc = bias ? bias[k] : 0.0;
        const double* wr = w + static_cast<long>(k) * IN;
        for (int i = 0; i < IN; ++i) acc += x[i] * wr[i];
        out[k] = acc;
    }
}

}  // namespace

const std::vector<double>& DecodeSession::feed(TokenId t) {
    const auto& cfg = m_.cfg;
    const auto& p = m_.params;
    const int C = cfg.d_model, F = cfg.d_ff, NH = cfg.n_heads, HS = C / NH;
    if (pos_ >= cfg.context_len) throw ContextOverflowError("decode: context window exhausted");
    if (t < 0 || t >= cfg.vocab_size) throw RunError("decode: token id out of range");
    for (int c = 0; c < C; ++c) {
        x_[c] = p.wte[static_cast<size_t>(t) * C + c] + p.wpe[static_cast<size_t>(pos_) * C + c];
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(HS));
    std::vector<double> scores(static_cast<size_t>(pos_) + 1);
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& w = p.layers[l];
        ln_row(xn_.data(), x_.data(), w.ln1_g.data(), w.ln1_b.data(), C);
        matvec(qkv_.data(), xn_.data(), w.qkv_w.data(), w.qkv_b.data(), C, 3 * C);
        std::copy(qkv_.begin() + C, qkv_.begin() + 2 * C, kcache_[l].begin() + static_cast<size_t>(pos_) * C);
        std::copy(qkv_.begin() + 2 * C, qkv_.end(), vcache_[l].begin() + static_cast<size_t>(pos_) * C);
        for (int h = 0; h < NH; ++h) {
            const double* q = qkv_.data() + h * HS;
            double maxv = -1e300;
            for (int t2 = 0; t2 <= pos_; ++t2) {
                const double* k = kcache_[l].data() + static_cast<size_t>(t2) * C + h * HS;
                double s = 0.0;
                for (int i = 0; i < HS; ++i) s += q[i] * k[i];
                s *= scale;
                scores[t2] = s;
                maxv = std::max(maxv, s);
            }
            double denom = 0.0;
            for (int t2 = 0; t2 <= pos_; ++t2) {
                scores[t2] = std::exp(scores[t2] - maxv);
                denom += scores[t2];
            }
            double* o = atty_.data() + h * HS;
            for (int i = 0; i < HS; ++i) o[i] = 0.0;
            for (int t2 = 0; t2 <= pos_; ++t2) {
                const double pr = scores[t2] / denom;
                const double* v = vcache_[l].data() + static_cast<size_t>(t2) * C + h * HS;
                for (int i = 0; i < HS; ++i) o[i] += pr * v[i];
            }
        }
        matvec(proj_.data(), atty_.data(), w.proj_w.data(), w.proj_b.data(), C, C);
        for (int c = 0; c < C; ++c) x_[c] += proj_[c];
        ln_row(xn_.data(), x_.data(), w.ln2_g.data(), w.ln2_b.data(), C);
        matvec(fch_.data(), xn_.data(), w.fc_w.data(), w.fc_b.data(), C, F);
        kernels::serial::gelu_forward(fch_.data(), fch_.data(), F);
        matvec(proj_.data(), fch_.data(), w.fc2_w.data(), w.fc2_b.data(), F, C);
        for (int c = 0; c < C; ++c) x_[c] += proj_[c];
    }
    ln_row(xn_.data(), x_.data(), p.lnf_g.data(), p.lnf_b.data(), C);
    matvec(logits_.data(), xn_.data(), p.head_w.data(), p.head_b.data(), C, cfg.vocab_size);
    ++pos_;
    return logits_;
}

}  // namespace setfork
