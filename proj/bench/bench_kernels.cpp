// Times the OpenMP kernels against the serial reference at a few shapes and
// prints a speedup table. Also times a full forward/backward on both paths.

#include <chrono>
#include <cstdio>
#include <vector>

#include <omp.h>

#include "setfork/kernels.hpp"
#include "setfork/model.hpp"
#include "setfork/rng.hpp"
#include "setfork/vocab.hpp"

using namespace setfork;
namespace kn = setfork::kernels;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <class F>
double time_best_of(int reps, F&& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = Clock::now();
        fn();
        best = std::min(best, ms_since(t0));
    }
    return best;
}

void fill(std::vector<double>& v, Rng& rng) {
    for (double& x : v) x = rng.gaussian();
}

void bench_matmul(int B, int T, int IN, int OUT) {
    Rng rng(7);
    std::vector<double> in(static_cast<size_t>(B) * T * IN), w(static_cast<size_t>(OUT) * IN),
        bias(OUT), out(static_cast<size_t>(B) * T * OUT);
    fill(in, rng);
    fill(w, rng);
    fill(bias, rng);
    std::vector<int> lens(B, T);
    const double serial = time_best_of(3, [&] {
        kn::serial::matmul_forward(out.data(), in.data(), w.data(), bias.data(), B, T, lens.data(),
                                   IN, OUT);
    });
    const double par = time_best_of(3, [&] {
        kn::matmul_forward(out.data(), in.data(), w.data(), bias.data(), B, T, lens.data(), IN, OUT);
    });
    std::printf("matmul    B=%-3d T=%-4d %4dx%-4d   serial %8.2f ms   omp %8.2f ms   x%.2f\n", B, T,
                IN, OUT, serial, par, serial / par);
}

void bench_attention(int B, int T, int C, int NH) {
    Rng rng(7);
    std::vector<double> qkv(static_cast<size_t>(B) * T * 3 * C),
        probs(static_cast<size_t>(B) * NH * T * T), out(static_cast<size_t>(B) * T * C);
    fill(qkv, rng);
    std::vector<int> lens(B, T);
    const double serial = time_best_of(3, [&] {
        kn::serial::attention_forward(out.data(), probs.data(), qkv.data(), B, T, lens.data(), C, NH);
    });
    const double par = time_best_of(3, [&] {
        kn::attention_forward(out.data(), probs.data(), qkv.data(), B, T, lens.data(), C, NH);
    });
    std::printf("attention B=%-3d T=%-4d C=%-4d H=%d  serial %8.2f ms   omp %8.2f ms   x%.2f\n", B,
                T, C, NH, serial, par, serial / par);
}

void bench_model(int rows, int T) {
    ModelConfig cfg;
    cfg.d_model = 128;
    cfg.n_layers = 4;
    cfg.n_heads = 4;
    cfg.d_ff = 512;
    cfg.context_len = T + 8;
    cfg.vocab_size = Vocab(4).size();
    Model model(cfg, 1);
    Rng rng(3);
    SequenceBatch b;
    for (int r = 0; r < rows; ++r) {
        std::vector<TokenId> prompt, trace;
        for (int t = 0; t < T / 2; ++t) {
            prompt.push_back(static_cast<TokenId>(rng.uniform_int(8, cfg.vocab_size - 1)));
        }
        for (int t = 0; t < T / 2; ++t) {
            trace.push_back(static_cast<TokenId>(rng.uniform_int(8, cfg.vocab_size - 1)));
        }
        b.add_row(prompt, model.fork_tag(1 + r % 4), trace, -1);
    }
    b.pack(cfg.context_len);
    std::vector<double> scale(b.rows, 1.0 / b.n_targets());

    model.use_serial_kernels = true;
    const double serial = time_best_of(2, [&] {
        model.zero_grads();
        model.forward_backward(b, scale);
    });
    model.use_serial_kernels = false;
    const double par = time_best_of(2, [&] {
        model.zero_grads();
        model.forward_backward(b, scale);
    });
    std::printf("fwd+bwd   rows=%-2d T=%-4d d=128 L=4  serial %8.2f ms   omp %8.2f ms   x%.2f\n",
                rows, T, serial, par, serial / par);
}

}  // namespace

int main() {
    std::printf("threads: %d\n", omp_get_max_threads());
    bench_matmul(8, 128, 128, 512);
    bench_matmul(8, 256, 128, 512);
    bench_attention(8, 128, 128, 4);
    bench_attention(8, 256, 128, 4);
    bench_model(4, 128);
    bench_model(8, 256);
    return 0;
}
