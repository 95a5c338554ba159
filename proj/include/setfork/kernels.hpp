#pragma once

// Dense kernels for the tiny decoder-only transformer. Two implementations
// share one contract: kernels:: uses OpenMP parallel-for over independent
// output slices, kernels::serial is the plain-loop reference used by tests
// and the benchmark. Reduction order inside each output element is identical
// in both, so results match bit for bit.
//
// Conventions: row-major storage; B is the number of batch rows, T the padded
// sequence length, lens[b] the valid prefix of row b. Positions t >= lens[b]
// are never read or written. Backward kernels accumulate (+=) into gradient
// buffers; callers zero them.

namespace setfork::kernels {

// out[b,t,:] = wte[tokens[b,t],:] + wpe[t,:]
void embedding_forward(double* out, const int* tokens, const double* wte, const double* wpe,
                       int B, int T, const int* lens, int C);
void embedding_backward(double* dwte, double* dwpe, const double* dout, const int* tokens,
                        int B, int T, const int* lens, int C);

void layernorm_forward(double* out, double* mean, double* rstd, const double* in,
                       const double* gamma, const double* beta,
                       int B, int T, const int* lens, int C);
void layernorm_backward(double* din, double* dgamma, double* dbeta, const double* dout,
                        const double* in, const double* gamma, const double* mean,
                        const double* rstd, int B, int T, const int* lens, int C);

// w is [OUT][IN]; out[b,t,o] = bias[o] + sum_i in[b,t,i] * w[o,i]
void matmul_forward(double* out, const double* in, const double* w, const double* bias,
                    int B, int T, const int* lens, int IN, int OUT);
void matmul_backward(double* din, double* dw, double* dbias, const double* dout,
                     const double* in, const double* w,
                     int B, int T, const int* lens, int IN, int OUT);

// qkv[b,t,3C] packs q|k|v; probs[b,h,t,t2] holds causal attention weights.
void attention_forward(double* out, double* probs, const double* qkv,
                       int B, int T, const int* lens, int C, int NH);
void attention_backward(double* dqkv, double* dprobs_scratch, const double* dout,
                        const double* probs, const double* qkv,
                        int B, int T, const int* lens, int C, int NH);

void gelu_forward(double* out, const double* in, long n);
void gelu_backward(double* din, const double* in, const double* dout, long n);

void residual_forward(double* out, const double* a, const double* b, long n);

// probs = softmax(logits) rowwise (max-subtracted); nll[b,t] = -log probs[target]
// where targets[b,t] >= 0, else 0. Accumulation in the log domain is double
// throughout.
void softmax_nll_forward(double* probs, double* nll, const double* logits, const int* targets,
                         int B, int T, const int* lens, int V);
// dlogits[b,t,:] += dnll[b,t] * (probs - onehot(target)) at target positions.
void softmax_nll_backward(double* dlogits, const double* probs, const int* targets,
                          const double* dnll, int B, int T, const int* lens, int V);

// Decoupled weight decay; bias-corrected moments; t is the 1-based step.
void adamw_update(double* param, const double* grad, double* m, double* v, long n,
                  double lr, double beta1, double beta2, double eps, double weight_decay,
                  long t);

namespace serial {
void embedding_forward(double* out, const int* tokens, const double* wte, const double* wpe,
                       int B, int T, const int* lens, int C);
void embedding_backward(double* dwte, double* dwpe, const double* dout, const int* tokens,
                        int B, int T, const int* lens, int C);
void layernorm_forward(double* out, double* mean, double* rstd, const double* in,
                       const double* gamma, const double* beta,
                       int B, int T, const int* lens, int C);
void layernorm_backward(double* din, double* dgamma, double* dbeta, const double* dout,
                        const double* in, const double* gamma, const double* mean,
                        const double* rstd, int B, int T, const int* lens, int C);
void matmul_forward(double* out, const double* in, const double* w, const double* bias,
                    int B, int T, const int* lens, int IN, int OUT);
void matmul_backward(double* din, double* dw, double* dbias, const double* dout,
                     const double* in, const double* w,
                     int B, int T, const int* lens, int IN, int OUT);
void attention_forward(double* out, double* probs, const double* qkv,
                       int B, int T, const int* lens, int C, int NH);
void attention_backward(double* dqkv, double* dprobs_scratch, const double* dout,
                        const double* probs, const double* qkv,
                        int B, int T, const int* lens, int C, int NH);
void gelu_forward(double* out, const double* in, long n);
void gelu_backward(double* din, const double* in, const double* dout, long n);
void residual_forward(double* out, const double* a, const double* b, long n);
void softmax_nll_forward(double* probs, double* nll, const double* logits, const int* targets,
                         int B, int T, const int* lens, int V);
void softmax_nll_backward(double* dlogits, const double* probs, const int* targets,
                          const double* dnll, int B, int T, const int* lens, int V);
void adamw_update(double* param, const double* grad, double* m, double* v, long n,
                  double lr, double beta1, double beta2, double eps, double weight_decay,
                  long t);
}  // namespace serial

}  // namespace setfork::kernels
