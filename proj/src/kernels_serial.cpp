#include "setfork/kernels.hpp"

#include <cmath>

// Plain-loop reference implementations. No threading, no restructuring;
// the math and per-element summation order match the parallel kernels.

namespace setfork::kernels::serial {

void embedding_forward(double* out, const int* tokens, const double* wte, const double* wpe,
                       int B, int T, const int* lens, int C) {
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < lens[b]; ++t) {
            for (int c = 0; c < C; ++c) {
                out[(static_cast<long>(b) * T + t) * C + c] =
                    wte[static_cast<long>(tokens[b * T + t]) * C + c] + wpe[static_cast<long>(t) * C + c];
            }
        }
    }
}

void embedding_backward(double* dwte, double* dwpe, const double* dout, const int* tokens,
                        int B, int T, const int* lens, int C) {
    for (int c = 0; c < C; ++c) {
        for (int b = 0; b < B; ++b) {
            for (int t = 0; t < lens[b]; ++t) {
                const double g = dout[(static_cast<long>(b) * T + t) * C + c];
                dwte[static_cast<long>(tokens[b * T + t]) * C + c] += g;
                dwpe[static_cast<long>(t) * C + c] += g;
            }
        }
    }
}

void layernorm_forward(double* out, double* mean, double* rstd, const double* in,
                       const double* gamma, const double* beta,
                       int B, int T, const int* lens, int C) {
    constexpr double kEps = 1e-5;
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < lens[b]; ++t) {
            const long row = static_cast<long>(b) * T + t;
            const double* x = in + row * C;
            double mu = 0.0;
            for (int c = 0; c < C; ++c) mu += x[c];
            mu /= C;
            double var = 0.0;
            for (int c = 0; c < C; ++c) var += (x[c] - mu) * (x[c] - mu);
            var /= C;
            const double rs = 1.0 / std::sqrt(var + kEps);
            for (int c = 0; c < C; ++c) out[row * C + c] = (x[c] - mu) * rs * gamma[c] + beta[c];
            mean[row] = mu;
            rstd[row] = rs;
        }
    }
}

void layernorm_backward(double* din, double* dgamma, double* dbeta, const double* dout,
                        const double* in, const double* gamma, const double* mean,
                        const double* rstd, int B, int T, const int* lens, int C) {
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < lens[b]; ++t) {
            const long row = static_cast<long>(b) * T + t;
            const double* x = in + row * C;
            const double* dy = dout + row * C;
            const double mu = mean[row], rs = rstd[row];
            double sum_dn = 0.0, sum_dn_xhat = 0.0;
            for (int c = 0; c < C; ++c) {
                const double xhat = (x[c] - mu) * rs;
                const double dn = dy[c] * gamma[c];
                sum_dn += dn;
                sum_dn_xhat += dn * xhat;
            }
            sum_dn /= C;
            sum_dn_xhat /= C;
            for (int c = 0; c < C; ++c) {
                const double xhat = (x[c] - mu) * rs;
                const double dn = dy[c] * gamma[c];
                din[row * C + c] += (dn - sum_dn - xhat * sum_dn_xhat) * rs;
            }
        }
    }
    for (int c = 0; c < C; ++c) {
        double dg = 0.0, db = 0.0;
        for (int b = 0; b < B; ++b) {
            for (int t = 0; t < lens[b]; ++t) {
                const long row = static_cast<long>(b) * T + t;
                const double xhat = (in[row * C + c] - mean[row]) * rstd[row];
                dg += dout[row * C + c] * xhat;
                db += dout[row * C + c];
            }
        }
        dgamma[c] += dg;
        dbeta[c] += db;
    }
}

void matmul_forward(double* out, const double* in, const double* w, const double* bias,
                    int B, int T, const int* lens, int IN, int OUT) {
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < lens[b]; ++t) {
            const long row = static_cast<long>(b) * T + t;
            for (int k = 0; k < OUT; ++k) {
                double acc = bias ? bias[k] : 0.0;
                for (int i = 0; i < IN; ++i) acc += in[row * IN + i] * w[static_cast<long>(k) * IN + i];
                out[row * OUT + k] = acc;
            }
        }
    }
}

void matmul_backward(double* din, double* dw, double* dbias, const double* dout,
                     const double* in, const double* w,
                     int B, int T, const int* lens, int IN, int OUT) {
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < lens[b]; ++t) {
            const long row = static_cast<long>(b) * T + t;
            for (int k = 0; k < OUT; ++k) {
                const double g = dout[row * OUT + k];
                for (int i = 0; i < IN; ++i) din[row * IN + i] += g * w[static_cast<long>(k) * IN + i];
            }
        }
    }
    for (int k = 0; k < OUT; ++k) {
        double db = 0.0;
        for (int b = 0; b < B; ++b) {
            for (int t = 0; t < lens[b]; ++t) {
                const long row = static_cast<long>(b) * T + t;
                const double g = dout[row * OUT + k];
                db += g;
                for (int i = 0; i < IN; ++i) dw[static_cast<long>(k) * IN + i] += g * in[row * IN + i];
            }
        }
        if (dbias) dbias[k] += db;
    }
}

void attention_forward(double* out, double* probs, const double* qkv,
                       int B, int T, const int* lens, int C, int NH) {
    const int HS = C / NH;
    const double scale = 1.0 / std::sqrt(static_cast<double>(HS));
    for (int b = 0; b < B; ++b) {
        for (int h = 0; h < NH; ++h) {
            for (int t = 0; t < lens[b]; ++t) {
                const double* q = qkv + (static_cast<long>(b) * T + t) * 3 * C + h * HS;
                double* prow = probs + ((static_cast<long>(b) * NH + h) * T + t) * T;
                double maxv = -1e300;
                for (int t2 = 0; t2 <= t; ++t2) {
                    const double* k = qkv + (static_cast<long>(b) * T + t2) * 3 * C + C + h * HS;
                    double s = 0.0;
                    for (int i = 0; i < HS; ++i) s += q[i] * k[i];
                    s *= scale;
                    prow[t2] = s;
                    if (s > maxv) maxv = s;
                }
                double denom = 0.0;
                for (int t2 = 0; t2 <= t; ++t2) {
                    prow[t2] = std::exp(prow[t2] - maxv);
                    denom += prow[t2];
                }
                for (int t2 = 0; t2 <= t; ++t2) prow[t2] *= 1.0 / denom;
                double* o = out + (static_cast<long>(b) * T + t) * C + h * HS;
                for (int i = 0; i < HS; ++i) o[i] = 0.0;
                for (int t2 = 0; t2 <= t; ++t2) {
                    const double* v = qkv + (static_cast<long>(b) * T + t2) * 3 * C + 2 * C + h * HS;
                    for (int i = 0; i < HS; ++i) o[i] += prow[t2] * v[i];
                }
            }
        }
    }
}

void attention_backward(double* dqkv, double* dprobs_scratch, const double* dout,
                        const double* probs, const double* qkv,
                        int B, int T, const int* lens, int C, int NH) {
    const int HS = C / NH;
    const double scale = 1.0 / std::sqrt(static_cast<double>(HS));
    for (int b = 0; b < B; ++b) {
        for (int h = 0; h < NH; ++h) {
            for (int t = 0; t < lens[b]; ++t) {
                const long row_t = static_cast<long>(b) * T + t;
                const double* dy = dout + row_t * C + h * HS;
                const double* prow = probs + ((static_cast<long>(b) * NH + h) * T + t) * T;
                double* datt = dprobs_scratch + ((static_cast<long>(b) * NH + h) * T + t) * T;
                for (int t2 = 0; t2 <= t; ++t2) {
                    const long row_t2 = static_cast<long>(b) * T + t2;
                    const double* v = qkv + row_t2 * 3 * C + 2 * C + h * HS;
                    double* dv = dqkv + row_t2 * 3 * C + 2 * C + h * HS;
                    double acc = 0.0;
                    for (int i = 0; i < HS; ++i) {
                        acc += dy[i] * v[i];
                        dv[i] += prow[t2] * dy[i];
                    }
                    datt[t2] = acc;
                }
                double dot = 0.0;
                for (int t2 = 0; t2 <= t; ++t2) dot += prow[t2] * datt[t2];
                const double* q = qkv + row_t * 3 * C + h * HS;
                double* dq = dqkv + row_t * 3 * C + h * HS;
                for (int t2 = 0; t2 <= t; ++t2) {
                    const double dpre = prow[t2] * (datt[t2] - dot) * scale;
                    const long row_t2 = static_cast<long>(b) * T + t2;
                    const double* k = qkv + row_t2 * 3 * C + C + h * HS;
                    double* dk = dqkv + row_t2 * 3 * C + C + h * HS;
                    for (int i = 0; i < HS; ++i) {
                        dq[i] += dpre * k[i];
                        dk[i] += dpre * q[i];
                    }
                }
            }
        }
    }
}

namespace {
constexpr double kGeluC = 0.7978845608028654;
}

void gelu_forward(double* out, const double* in, long n) {
    for (long i = 0; i < n; ++i) {
        const double x = in[i];
        const double u = kGeluC * (x + 0.044715 * x * x * x);
        out[i] = 0.5 * x * (1.0 + std::tanh(u));
    }
}

void gelu_backward(double* din, const double* in, const double* dout, long n) {
    for (long i = 0; i < n; ++i) {
        const double x = in[i];
        const double u = kGeluC * (x + 0.044715 * x * x * x);
        const double th = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
        din[i] += dout[i] * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du);
    }
}

void residual_forward(double* out, const double* a, const double* b, long n) {
    for (long i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void softmax_nll_forward(double* probs, double* nll, const double* logits, const int* targets,
                         int B, int T, const int* lens, int V) {
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < lens[b]; ++t) {
            const long row = static_cast<long>(b) * T + t;
            const double* z = logits + row * V;
            double* p = probs + row * V;
            double maxv = z[0];
            for (int v = 1; v < V; ++v) maxv = std::max(maxv, z[v]);
            double denom = 0.0;
            for (int v = 0; v < V; ++v) {
                p[v] = std::exp(z[v] - maxv);
                denom += p[v];
            }
            for (int v = 0; v < V; ++v) p[v] *= 1.0 / denom;
            nll[row] = targets[row] >= 0 ? -std::log(p[targets[row]]) : 0.0;
        }
    }
}

void softmax_nll_backward(double* dlogits, const double* probs, const int* targets,
                          const double* dnll, int B, int T, const int* lens, int V) {
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < lens[b]; ++t) {
            const long row = static_cast<long>(b) * T + t;
            const int tgt = targets[row];
            if (tgt < 0) continue;
            for (int v = 0; v < V; ++v) {
                dlogits[row * V + v] += dnll[row] * (probs[row * V + v] - (v == tgt ? 1.0 : 0.0));
            }
        }
    }
}

void adamw_update(double* param, const double* grad, double* m, double* v, long n,
                  double lr, double beta1, double beta2, double eps, double weight_decay,
                  long t) {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (long i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        param[i] -= lr * ((m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps) + weight_decay * param[i]);
    }
}

}  // namespace setfork::kernels::serial
