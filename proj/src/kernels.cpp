#include "setfork/kernels.hpp"

#include <cmath>

namespace setfork::kernels {

void embedding_forward(double* out, const int* tokens, const double* wte, const double* wpe,
                       int B, int T, const int* lens, int C) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < lens[b]; ++t) {
            double* o = out + (static_cast<long>(b) * T + t) * C;
            const double* e = wte + static_cast<long>(tokens[b * T + t]) * C;
            const double* p = wpe + static_cast<long>(t) * C;
            for (int c = 0; c < C; ++c) o[c] = e[c] + p[c];
        }
    }
}

void embedding_backward(double* dwte, double* dwpe, const double* dout, const int* tokens,
                        int B, int T, const int* lens, int C) {
    // Token rows collide across (b,t); parallelize over the channel dim so
    // every thread owns a disjoint column slice and the scatter order stays
    // fixed.
#pragma omp parallel for schedule(static)
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
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < lens[b]; ++t) {
            const long row = static_cast<long>(b) * T + t;
            const double* x = in + row * C;
            double mu = 0.0;
            for (int c = 0; c < C; ++c) mu += x[c];
            mu /= C;
            double var = 0.0;
            for (int c = 0; c < C; ++c) {
                const double d = x[c] - mu;
                var += d * d;
            }
            var /= C;
            const double rs = 1.0 / std::sqrt(var + kEps);
            double* o = out + row * C;
            for (int c = 0; c < C; ++c) o[c] = (x[c] - mu) * rs * gamma[c] + beta[c];
            mean[row] = mu;
            rstd[row] = rs;
        }
    }
}

void layernorm_backward(double* din, double* dgamma, double* dbeta, const double* dout,
                        const double* in, const double* gamma, const double* mean,
                        const double* rstd, int B, int T, const int* lens, int C) {
#pragma omp parallel for schedule(static)
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
            double* dx = din + row * C;
            for (int c = 0; c < C; ++c) {
                const double xhat = (x[c] - mu) * rs;
                const double dn = dy[c] * gamma[c];
                dx[c] += (dn - sum_dn - xhat * sum_dn_xhat) * rs;
            }
        }
    }
    // Parameter grads reduce over rows; one thread per channel keeps the
    // accumulation order identical to the serial reference.
#pragma omp parallel for schedule(static)
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
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < lens[b]; ++t) {
            const long row = static_cast<long>(b) * T + t;
            const double* x = in + row * IN;
            double* o = out + row * OUT;
            for (int k = 0; k < OUT; ++k) {
                const double* wr = w + static_cast<long>(k) * IN;
                double acc = bias ? bias[k] : 0.0;
                for (int i = 0; i < IN; ++i) acc += x[i] * wr[i];
                o[k] = acc;
            }
        }
    }
}

void matmul_backward(double* din, double* dw, double* dbias, const double* dout,
                     const double* in, const double* w,
                     int B, int T, const int* lens, int IN, int OUT) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < lens[b]; ++t) {
            const long row = static_cast<long>(b) * T + t;
            const double* dy = dout + row * OUT;
            double* dx = din + row * IN;
            for (int k = 0; k < OUT; ++k) {
                const double* wr = w + static_cast<long>(k) * IN;
                const double g = dy[k];
                for (int i = 0; i < IN; ++i) dx[i] += g * wr[i];
            }
        }
    }
#pragma omp parallel for schedule(static)
    for (int k = 0; k < OUT; ++k) {
        double* dwr = dw + static_cast<long>(k) * IN;
        double db = 0.0;
        for (int b = 0; b < B; ++b) {
            for (int t = 0; t < lens[b]; ++t) {
                const long row = static_cast<long>(b) * T + t;
                const double g = dout[row * OUT + k];
                db += g;
                const double* x = in + row * IN;
                for (int i = 0; i < IN; ++i) dwr[i] += g * x[i];
            }
        }
        if (dbias) dbias[k] += db;
    }
}

void attention_forward(double* out, double* probs, const double* qkv,
                       int B, int T, const int* lens, int C, int NH) {
    const int HS = C / NH;
    const double scale = 1.0 / std::sqrt(static_cast<double>(HS));
#pragma omp parallel for collapse(2) schedule(static)
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
                const double inv = 1.0 / denom;
                for (int t2 = 0; t2 <= t; ++t2) prow[t2] *= inv;
                double* o = out + (static_cast<long>(b) * T + t) * C + h * HS;
                for (int i = 0; i < HS; ++i) o[i] = 0.0;
                for (int t2 = 0; t2 <= t; ++t2) {
                    const double* v = qkv + (static_cast<long>(b) * T + t2) * 3 * C + 2 * C + h * HS;
                    const double p = prow[t2];
                    for (int i = 0; i < HS; ++i) o[i] += p * v[i];
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
    // dk/dv accumulate across query positions t; keep t serial inside each
    // (b,h) slice so the order matches the reference exactly.
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; ++b) {
        for (int h = 0; h < NH; ++h) {
            for (int t = 0; t < lens[b]; ++t) {
                const long row_t = static_cast<long>(b) * T + t;
                const double* dy = dout + row_t * C + h * HS;
                const double* prow = probs + ((static_cast<long>(b) * NH + h) * T + t) * T;
                double* datt = dprobs_scratch + ((static_cast<long>(b) * NH + h) * T + t) * T;
                // d att and dV
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
                // softmax backward
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
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
}

void gelu_forward(double* out, const double* in, long n) {
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) {
        const double x = in[i];
        const double u = kGeluC * (x + 0.044715 * x * x * x);
        out[i] = 0.5 * x * (1.0 + std::tanh(u));
    }
}

void gelu_backward(double* din, const double* in, const double* dout, long n) {
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) {
        const double x = in[i];
        const double u = kGeluC * (x + 0.044715 * x * x * x);
        const double th = std::tanh(u);
        const double sech2 = 1.0 - th * th;
        const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
        din[i] += dout[i] * (0.5 * (1.0 + th) + 0.5 * x * sech2 * du);
    }
}

void residual_forward(double* out, const double* a, const double* b, long n) {
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void softmax_nll_forward(double* probs, double* nll, const double* logits, const int* targets,
                         int B, int T, const int* lens, int V) {
#pragma omp parallel for schedule(static)
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
            const double inv = 1.0 / denom;
            for (int v = 0; v < V; ++v) p[v] *= inv;
            const int tgt = targets[row];
            nll[row] = tgt >= 0 ? -std::log(p[tgt]) : 0.0;
        }
    }
}

void softmax_nll_backward(double* dlogits, const double* probs, const int* targets,
                          const double* dnll, int B, int T, const int* lens, int V) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < lens[b]; ++t) {
            const long row = static_cast<long>(b) * T + t;
            const int tgt = targets[row];
            if (tgt < 0) continue;
            const double g = dnll[row];
            const double* p = probs + row * V;
            double* dz = dlogits + row * V;
            for (int v = 0; v < V; ++v) dz[v] += g * (p[v] - (v == tgt ? 1.0 : 0.0));
        }
    }
}

void adamw_update(double* param, const double* grad, double* m, double* v, long n,
                  double lr, double beta1, double beta2, double eps, double weight_decay,
                  long t) {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * param[i]);
    }
}

}  // namespace setfork::kernels
