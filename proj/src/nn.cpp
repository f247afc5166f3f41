#include "coordatt/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace coordatt {

static inline std::size_t ix4(int C, int H, int W, int n, int c, int h, int w) {
    return static_cast<std::size_t>(((static_cast<std::int64_t>(n) * C + c) * H + h) * W + w);
}

static void require_rank4(const Tensor& x, const char* op) {
    if (x.rank() != 4)
        throw std::runtime_error(std::string(op) + ": rank-4 input required, got " +
                                 shape_to_string(x.shape));
}

int conv_out_extent(int in, int k, int stride, int padding) {
    return (in + 2 * padding - k) / stride + 1;
}

ConvParams conv_init(Rng& rng, int cout, int cin, int k,
                     int stride, int padding, int groups, bool bias) {
    if (cin % groups != 0 || cout % groups != 0)
        throw std::runtime_error("conv_init: groups must divide both channel counts");
    const int cing = cin / groups;
    const double bound = std::sqrt(6.0 / (static_cast<double>(cing) * k * k));
    ConvParams p;
    p.weight = rng.uniform_tensor({cout, cing, k, k}, -bound, bound);
    if (bias) p.bias = Tensor::zeros({cout});
    p.stride = stride;
    p.padding = padding;
    p.groups = groups;
    return p;
}

BatchNormParams batchnorm_init(int c) {
    BatchNormParams p;
    p.gamma = Tensor::full({c}, 1.0);
    p.beta = Tensor::zeros({c});
    p.running_mean = Tensor::zeros({c});
    p.running_var = Tensor::full({c}, 1.0);
    return p;
}

LinearParams linear_init(Rng& rng, int cout, int cin) {
    const double bound = std::sqrt(6.0 / static_cast<double>(cin));
    LinearParams p;
    p.weight = rng.uniform_tensor({cout, cin}, -bound, bound);
    p.bias = Tensor::zeros({cout});
    return p;
}

ConvVars bind(Tape& t, ConvParams& p) {
    ConvVars v;
    v.weight = t.param(p.weight);
    if (p.bias) v.bias = t.param(*p.bias);
    v.stride = p.stride;
    v.padding = p.padding;
    v.groups = p.groups;
    return v;
}

BatchNormVars bind(Tape& t, BatchNormParams& p) {
    BatchNormVars v;
    v.gamma = t.param(p.gamma);
    v.beta = t.param(p.beta);
    v.p = &p;
    return v;
}

LinearVars bind(Tape& t, LinearParams& p) {
    LinearVars v;
    v.weight = t.param(p.weight);
    v.bias = t.param(p.bias);
    return v;
}

NodeId conv2d(Tape& t, NodeId xid, const ConvVars& p) {
    const Tensor& x = t.val(xid);
    const Tensor& w = t.val(p.weight);
    require_rank4(x, "conv2d");
    const int N = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int Cout = w.shape[0], CinG = w.shape[1], kH = w.shape[2], kW = w.shape[3];
    const int G = p.groups;
    if (Cin != CinG * G)
        throw std::runtime_error("conv2d: input channels " + std::to_string(Cin) +
                                 " do not match weight " + shape_to_string(w.shape) +
                                 " with groups " + std::to_string(G));
    if (Cout % G != 0)
        throw std::runtime_error("conv2d: groups must divide output channels");
    const int Ho = conv_out_extent(H, kH, p.stride, p.padding);
    const int Wo = conv_out_extent(W, kW, p.stride, p.padding);
    if (Ho < 1 || Wo < 1)
        throw std::runtime_error("conv2d: output extents collapse on input " +
                                 shape_to_string(x.shape));
    const int CoutG = Cout / G;
    const int s = p.stride, pad = p.padding;

    Tensor y({N, Cout, Ho, Wo});
    const double* xd = x.data.data();
    const double* wd = w.data.data();
    const double* bd = p.bias >= 0 ? t.val(p.bias).data.data() : nullptr;
    double* yd = y.data.data();
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co) {
            const int g = co / CoutG;
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    double acc = bd ? bd[co] : 0.0;
                    for (int cig = 0; cig < CinG; ++cig) {
                        const int ci = g * CinG + cig;
                        for (int kh = 0; kh < kH; ++kh) {
                            const int ih = oh * s - pad + kh;
                            if (ih < 0 || ih >= H) continue;
                            for (int kw = 0; kw < kW; ++kw) {
                                const int iw = ow * s - pad + kw;
                                if (iw < 0 || iw >= W) continue;
                                acc += xd[ix4(Cin, H, W, n, ci, ih, iw)] *
                                       wd[ix4(CinG, kH, kW, co, cig, kh, kw)];
                            }
                        }
                    }
                    yd[ix4(Cout, Ho, Wo, n, co, oh, ow)] = acc;
                }
        }

    const NodeId wid = p.weight, bid = p.bias;
    NodeId out = t.emit(std::move(y), {xid, p.weight}, nullptr);
    const NodeId oid = out;
    t.nodes[static_cast<std::size_t>(out)].backprop = [xid, wid, bid, oid, s, pad, N, Cin, H, W,
                                                       Cout, CinG, CoutG, kH, kW, Ho,
                                                       Wo](Tape& t) {
        const std::vector<double>& gy = t.grad(oid);
        const double* xd = t.val(xid).data.data();
        const double* wd = t.val(wid).data.data();
        const bool want_dx = t.needs_grad(xid);
        const bool want_dw = t.needs_grad(wid);
        double* dx = want_dx ? t.grad(xid).data() : nullptr;
        double* dw = want_dw ? t.grad(wid).data() : nullptr;
        double* db = bid >= 0 && t.needs_grad(bid) ? t.grad(bid).data() : nullptr;
        for (int n = 0; n < N; ++n)
            for (int co = 0; co < Cout; ++co) {
                const int g = co / CoutG;
                for (int oh = 0; oh < Ho; ++oh)
                    for (int ow = 0; ow < Wo; ++ow) {
                        const double go = gy[ix4(Cout, Ho, Wo, n, co, oh, ow)];
                        if (go == 0.0) continue;
                        if (db) db[co] += go;
                        if (!dx && !dw) continue;
                        for (int cig = 0; cig < CinG; ++cig) {
                            const int ci = g * CinG + cig;
                            for (int kh = 0; kh < kH; ++kh) {
                                const int ih = oh * s - pad + kh;
                                if (ih < 0 || ih >= H) continue;
                                for (int kw = 0; kw < kW; ++kw) {
                                    const int iw = ow * s - pad + kw;
                                    if (iw < 0 || iw >= W) continue;
                                    const std::size_t xi = ix4(Cin, H, W, n, ci, ih, iw);
                                    const std::size_t wi = ix4(CinG, kH, kW, co, cig, kh, kw);
                                    if (dx) dx[xi] += go * wd[wi];
                                    if (dw) dw[wi] += go * xd[xi];
                                }
                            }
                        }
                    }
            }
    };
    // bias participates in requires_grad propagation
    if (bid >= 0 && t.needs_grad(bid))
        t.nodes[static_cast<std::size_t>(out)].requires_grad = true;
    return out;
}

NodeId batchnorm(Tape& t, NodeId xid, const BatchNormVars& vars, Mode mode) {
    const Tensor& x = t.val(xid);
    require_rank4(x, "batchnorm");
    BatchNormParams& p = *vars.p;
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    if (p.gamma.numel() != C)
        throw std::runtime_error("batchnorm: channel mismatch, input " + shape_to_string(x.shape) +
                                 " vs params C=" + std::to_string(p.gamma.numel()));
    const Tensor& gamma = t.val(vars.gamma);
    const Tensor& beta = t.val(vars.beta);
    const std::int64_t M = static_cast<std::int64_t>(N) * H * W;

    std::vector<double> mean(static_cast<std::size_t>(C), 0.0);
    std::vector<double> invstd(static_cast<std::size_t>(C), 0.0);
    if (mode == Mode::train) {
        std::vector<double> var(static_cast<std::size_t>(C), 0.0);
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int n = 0; n < N; ++n)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) s += x.at(n, c, h, w);
            mean[static_cast<std::size_t>(c)] = s / static_cast<double>(M);
        }
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            const double mu = mean[static_cast<std::size_t>(c)];
            for (int n = 0; n < N; ++n)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) {
                        const double d = x.at(n, c, h, w) - mu;
                        s += d * d;
                    }
            var[static_cast<std::size_t>(c)] = s / static_cast<double>(M);
        }
        for (int c = 0; c < C; ++c) {
            const auto ci = static_cast<std::size_t>(c);
            invstd[ci] = 1.0 / std::sqrt(var[ci] + p.eps);
            const double unbiased =
                M > 1 ? var[ci] * static_cast<double>(M) / static_cast<double>(M - 1) : var[ci];
            p.running_mean.data[ci] =
                (1.0 - p.momentum) * p.running_mean.data[ci] + p.momentum * mean[ci];
            p.running_var.data[ci] =
                (1.0 - p.momentum) * p.running_var.data[ci] + p.momentum * unbiased;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            const auto ci = static_cast<std::size_t>(c);
            mean[ci] = p.running_mean.data[ci];
            invstd[ci] = 1.0 / std::sqrt(p.running_var.data[ci] + p.eps);
        }
    }

    Tensor y(x.shape);
    std::vector<double> xhat(x.data.size());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const auto ci = static_cast<std::size_t>(c);
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    const std::size_t i = ix4(C, H, W, n, c, h, w);
                    xhat[i] = (x.data[i] - mean[ci]) * invstd[ci];
                    y.data[i] = gamma.data[ci] * xhat[i] + beta.data[ci];
                }
        }

    NodeId out = t.emit(std::move(y), {xid, vars.gamma, vars.beta}, nullptr);
    const NodeId oid = out, gid = vars.gamma, bid = vars.beta;
    t.nodes[static_cast<std::size_t>(out)].backprop =
        [xid, gid, bid, oid, mode, N, C, H, W, M, xhat = std::move(xhat),
         invstd = std::move(invstd)](Tape& t) {
            const std::vector<double>& gy = t.grad(oid);
            const double* gm = t.val(gid).data.data();
            double* dg = t.needs_grad(gid) ? t.grad(gid).data() : nullptr;
            double* db = t.needs_grad(bid) ? t.grad(bid).data() : nullptr;
            double* dx = t.needs_grad(xid) ? t.grad(xid).data() : nullptr;
            for (int c = 0; c < C; ++c) {
                const auto ci = static_cast<std::size_t>(c);
                double s1 = 0.0, s2 = 0.0;
                for (int n = 0; n < N; ++n)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w) {
                            const std::size_t i = ix4(C, H, W, n, c, h, w);
                            s1 += gy[i];
                            s2 += gy[i] * xhat[i];
                        }
                if (dg) dg[ci] += s2;
                if (db) db[ci] += s1;
                if (!dx) continue;
                const double k = gm[ci] * invstd[ci];
                if (mode == Mode::train) {
                    const double m = static_cast<double>(M);
                    for (int n = 0; n < N; ++n)
                        for (int h = 0; h < H; ++h)
                            for (int w = 0; w < W; ++w) {
                                const std::size_t i = ix4(C, H, W, n, c, h, w);
                                dx[i] += k * (gy[i] - s1 / m - xhat[i] * s2 / m);
                            }
                } else {
                    for (int n = 0; n < N; ++n)
                        for (int h = 0; h < H; ++h)
                            for (int w = 0; w < W; ++w) {
                                const std::size_t i = ix4(C, H, W, n, c, h, w);
                                dx[i] += k * gy[i];
                            }
                }
            }
        };
    return out;
}

NodeId linear(Tape& t, NodeId xid, const LinearVars& p) {
    const Tensor& x = t.val(xid);
    const Tensor& w = t.val(p.weight);
    const Tensor& b = t.val(p.bias);
    if (x.rank() != 2)
        throw std::runtime_error("linear: rank-2 input required, got " + shape_to_string(x.shape));
    const int N = x.shape[0], Cin = x.shape[1];
    const int Cout = w.shape[0];
    if (w.rank() != 2 || w.shape[1] != Cin || b.numel() != Cout)
        throw std::runtime_error("linear: weight " + shape_to_string(w.shape) +
                                 " incompatible with input " + shape_to_string(x.shape));
    Tensor y({N, Cout});
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co) {
            double acc = b.data[static_cast<std::size_t>(co)];
            for (int ci = 0; ci < Cin; ++ci) acc += x.at(n, ci) * w.at(co, ci);
            y.at(n, co) = acc;
        }
    NodeId out = t.emit(std::move(y), {xid, p.weight, p.bias}, nullptr);
    const NodeId oid = out, wid = p.weight, bid = p.bias;
    t.nodes[static_cast<std::size_t>(out)].backprop = [xid, wid, bid, oid, N, Cin,
                                                       Cout](Tape& t) {
        const std::vector<double>& gy = t.grad(oid);
        const Tensor& x = t.val(xid);
        const Tensor& w = t.val(wid);
        double* dx = t.needs_grad(xid) ? t.grad(xid).data() : nullptr;
        double* dw = t.needs_grad(wid) ? t.grad(wid).data() : nullptr;
        double* db = t.needs_grad(bid) ? t.grad(bid).data() : nullptr;
        for (int n = 0; n < N; ++n)
            for (int co = 0; co < Cout; ++co) {
                const double go = gy[static_cast<std::size_t>(n) * Cout + co];
                if (db) db[co] += go;
                for (int ci = 0; ci < Cin; ++ci) {
                    if (dx) dx[static_cast<std::size_t>(n) * Cin + ci] += go * w.at(co, ci);
                    if (dw) dw[static_cast<std::size_t>(co) * Cin + ci] += go * x.at(n, ci);
                }
            }
    };
    return out;
}

NodeId global_avg_pool(Tape& t, NodeId xid) {
    const Tensor& x = t.val(xid);
    require_rank4(x, "global_avg_pool");
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    Tensor y({N, C, 1, 1});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) s += x.at(n, c, h, w);
            y.at(n, c, 0, 0) = s / (static_cast<double>(H) * W);
        }
    NodeId out = t.emit(std::move(y), {xid}, nullptr);
    const NodeId oid = out;
    t.nodes[static_cast<std::size_t>(out)].backprop = [xid, oid, N, C, H, W](Tape& t) {
        if (!t.needs_grad(xid)) return;
        const std::vector<double>& gy = t.grad(oid);
        std::vector<double>& dx = t.grad(xid);
        const double k = 1.0 / (static_cast<double>(H) * W);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const double go = gy[static_cast<std::size_t>(n) * C + c] * k;
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) dx[ix4(C, H, W, n, c, h, w)] += go;
            }
    };
    return out;
}

NodeId pool_x(Tape& t, NodeId xid) {
    const Tensor& x = t.val(xid);
    require_rank4(x, "pool_x");
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    Tensor y({N, C, H, 1});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h) {
                double s = 0.0;
                for (int w = 0; w < W; ++w) s += x.at(n, c, h, w);
                y.at(n, c, h, 0) = s / static_cast<double>(W);
            }
    NodeId out = t.emit(std::move(y), {xid}, nullptr);
    const NodeId oid = out;
    t.nodes[static_cast<std::size_t>(out)].backprop = [xid, oid, N, C, H, W](Tape& t) {
        if (!t.needs_grad(xid)) return;
        const std::vector<double>& gy = t.grad(oid);
        std::vector<double>& dx = t.grad(xid);
        const double k = 1.0 / static_cast<double>(W);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < H; ++h) {
                    const double go = gy[ix4(C, H, 1, n, c, h, 0)] * k;
                    for (int w = 0; w < W; ++w) dx[ix4(C, H, W, n, c, h, w)] += go;
                }
    };
    return out;
}

NodeId pool_y(Tape& t, NodeId xid) {
    const Tensor& x = t.val(xid);
    require_rank4(x, "pool_y");
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    Tensor y({N, C, 1, W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int w = 0; w < W; ++w) {
                double s = 0.0;
                for (int h = 0; h < H; ++h) s += x.at(n, c, h, w);
                y.at(n, c, 0, w) = s / static_cast<double>(H);
            }
    NodeId out = t.emit(std::move(y), {xid}, nullptr);
    const NodeId oid = out;
    t.nodes[static_cast<std::size_t>(out)].backprop = [xid, oid, N, C, H, W](Tape& t) {
        if (!t.needs_grad(xid)) return;
        const std::vector<double>& gy = t.grad(oid);
        std::vector<double>& dx = t.grad(xid);
        const double k = 1.0 / static_cast<double>(H);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int w = 0; w < W; ++w) {
                    const double go = gy[ix4(C, 1, W, n, c, 0, w)] * k;
                    for (int h = 0; h < H; ++h) dx[ix4(C, H, W, n, c, h, w)] += go;
                }
    };
    return out;
}

NodeId global_max_pool(Tape& t, NodeId xid) {
    const Tensor& x = t.val(xid);
    require_rank4(x, "global_max_pool");
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    Tensor y({N, C, 1, 1});
    std::vector<std::size_t> arg(static_cast<std::size_t>(N) * C);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            std::size_t best = ix4(C, H, W, n, c, 0, 0);
            double bv = x.data[best];
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    const std::size_t i = ix4(C, H, W, n, c, h, w);
                    if (x.data[i] > bv) { bv = x.data[i]; best = i; }
                }
            y.at(n, c, 0, 0) = bv;
            arg[static_cast<std::size_t>(n) * C + c] = best;
        }
    NodeId out = t.emit(std::move(y), {xid}, nullptr);
    const NodeId oid = out;
    t.nodes[static_cast<std::size_t>(out)].backprop = [xid, oid, N, C,
                                                       arg = std::move(arg)](Tape& t) {
        if (!t.needs_grad(xid)) return;
        const std::vector<double>& gy = t.grad(oid);
        std::vector<double>& dx = t.grad(xid);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const std::size_t i = static_cast<std::size_t>(n) * C + c;
                dx[arg[i]] += gy[i];
            }
    };
    return out;
}

NodeId channel_pool_mean_max(Tape& t, NodeId xid) {
    const Tensor& x = t.val(xid);
    require_rank4(x, "channel_pool_mean_max");
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    Tensor y({N, 2, H, W});
    std::vector<int> arg(static_cast<std::size_t>(N) * H * W);
    for (int n = 0; n < N; ++n)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                double s = 0.0, bv = x.at(n, 0, h, w);
                int bc = 0;
                for (int c = 0; c < C; ++c) {
                    const double v = x.at(n, c, h, w);
                    s += v;
                    if (v > bv) { bv = v; bc = c; }
                }
                y.at(n, 0, h, w) = s / static_cast<double>(C);
                y.at(n, 1, h, w) = bv;
                arg[(static_cast<std::size_t>(n) * H + h) * W + w] = bc;
            }
    NodeId out = t.emit(std::move(y), {xid}, nullptr);
    const NodeId oid = out;
    t.nodes[static_cast<std::size_t>(out)].backprop = [xid, oid, N, C, H, W,
                                                       arg = std::move(arg)](Tape& t) {
        if (!t.needs_grad(xid)) return;
        const std::vector<double>& gy = t.grad(oid);
        std::vector<double>& dx = t.grad(xid);
        const double k = 1.0 / static_cast<double>(C);
        for (int n = 0; n < N; ++n)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    const double gmean = gy[ix4(2, H, W, n, 0, h, w)] * k;
                    for (int c = 0; c < C; ++c) dx[ix4(C, H, W, n, c, h, w)] += gmean;
                    const int bc = arg[(static_cast<std::size_t>(n) * H + h) * W + w];
                    dx[ix4(C, H, W, n, bc, h, w)] += gy[ix4(2, H, W, n, 1, h, w)];
                }
    };
    return out;
}

// elementwise helper: forward map + derivative from (input value, output value)
template <typename F, typename DF>
static NodeId elementwise(Tape& t, NodeId xid, F f, DF df) {
    const Tensor& x = t.val(xid);
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = f(x.data[i]);
    NodeId out = t.emit(std::move(y), {xid}, nullptr);
    const NodeId oid = out;
    t.nodes[static_cast<std::size_t>(out)].backprop = [xid, oid, df](Tape& t) {
        if (!t.needs_grad(xid)) return;
        const std::vector<double>& gy = t.grad(oid);
        const Tensor& x = t.val(xid);
        const Tensor& y = t.val(oid);
        std::vector<double>& dx = t.grad(xid);
        for (std::size_t i = 0; i < dx.size(); ++i)
            dx[i] += gy[i] * df(x.data[i], y.data[i]);
    };
    return out;
}

NodeId sigmoid(Tape& t, NodeId x) {
    return elementwise(
        t, x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

NodeId relu(Tape& t, NodeId x) {
    return elementwise(
        t, x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

NodeId relu6(Tape& t, NodeId x) {
    return elementwise(
        t, x, [](double v) { return std::min(std::max(v, 0.0), 6.0); },
        [](double v, double) { return (v > 0.0 && v < 6.0) ? 1.0 : 0.0; });
}

NodeId hard_swish(Tape& t, NodeId x) {
    return elementwise(
        t, x,
        [](double v) { return v * std::min(std::max(v + 3.0, 0.0), 6.0) / 6.0; },
        [](double v, double) {
            if (v <= -3.0) return 0.0;
            if (v >= 3.0) return 1.0;
            return (2.0 * v + 3.0) / 6.0;
        });
}

NodeId activation(Tape& t, NodeId x, Act act) {
    switch (act) {
        case Act::none: return x;
        case Act::relu: return relu(t, x);
        case Act::relu6: return relu6(t, x);
        case Act::hard_swish: return hard_swish(t, x);
        case Act::sigmoid: return sigmoid(t, x);
    }
    throw std::runtime_error("activation: unknown kind");
}

NodeId add(Tape& t, NodeId aid, NodeId bid) {
    const Tensor& a = t.val(aid);
    const Tensor& b = t.val(bid);
    if (!a.same_shape(b))
        throw std::runtime_error("add: shape mismatch, " + shape_to_string(a.shape) + " vs " +
                                 shape_to_string(b.shape));
    Tensor y(a.shape);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = a.data[i] + b.data[i];
    NodeId out = t.emit(std::move(y), {aid, bid}, nullptr);
    const NodeId oid = out;
    t.nodes[static_cast<std::size_t>(out)].backprop = [aid, bid, oid](Tape& t) {
        const std::vector<double>& gy = t.grad(oid);
        if (t.needs_grad(aid)) {
            std::vector<double>& da = t.grad(aid);
            for (std::size_t i = 0; i < gy.size(); ++i) da[i] += gy[i];
        }
        if (t.needs_grad(bid)) {
            std::vector<double>& db = t.grad(bid);
            for (std::size_t i = 0; i < gy.size(); ++i) db[i] += gy[i];
        }
    };
    return out;
}

NodeId mul_broadcast(Tape& t, NodeId xid, NodeId gid) {
    const Tensor& x = t.val(xid);
    const Tensor& g = t.val(gid);
    require_rank4(x, "mul_broadcast");
    require_rank4(g, "mul_broadcast");
    for (int a = 0; a < 4; ++a)
        if (g.shape[static_cast<std::size_t>(a)] != 1 &&
            g.shape[static_cast<std::size_t>(a)] != x.shape[static_cast<std::size_t>(a)])
            throw std::runtime_error("mul_broadcast: gate " + shape_to_string(g.shape) +
                                     " does not broadcast over " + shape_to_string(x.shape));
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int gN = g.shape[0], gC = g.shape[1], gH = g.shape[2], gW = g.shape[3];
    Tensor y(x.shape);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    y.at(n, c, h, w) =
                        x.at(n, c, h, w) * g.at(gN == 1 ? 0 : n, gC == 1 ? 0 : c,
                                                gH == 1 ? 0 : h, gW == 1 ? 0 : w);
    NodeId out = t.emit(std::move(y), {xid, gid}, nullptr);
    const NodeId oid = out;
    t.nodes[static_cast<std::size_t>(out)].backprop = [xid, gid, oid, N, C, H, W, gN, gC, gH,
                                                       gW](Tape& t) {
        const std::vector<double>& gy = t.grad(oid);
        const Tensor& x = t.val(xid);
        const Tensor& g = t.val(gid);
        double* dx = t.needs_grad(xid) ? t.grad(xid).data() : nullptr;
        double* dg = t.needs_grad(gid) ? t.grad(gid).data() : nullptr;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) {
                        const std::size_t xi = ix4(C, H, W, n, c, h, w);
                        const std::size_t gi = ix4(gC, gH, gW, gN == 1 ? 0 : n, gC == 1 ? 0 : c,
                                                   gH == 1 ? 0 : h, gW == 1 ? 0 : w);
                        if (dx) dx[xi] += gy[xi] * g.data[gi];
                        if (dg) dg[gi] += gy[xi] * x.data[xi];
                    }
    };
    return out;
}

NodeId broadcast_mul(Tape& t, NodeId xid, NodeId ghid, NodeId gwid) {
    const Tensor& x = t.val(xid);
    Tensor y = broadcast_mul(x, t.val(ghid), t.val(gwid));
    NodeId out = t.emit(std::move(y), {xid, ghid, gwid}, nullptr);
    const NodeId oid = out;
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    t.nodes[static_cast<std::size_t>(out)].backprop = [xid, ghid, gwid, oid, N, C, H,
                                                       W](Tape& t) {
        const std::vector<double>& gy = t.grad(oid);
        const Tensor& x = t.val(xid);
        const Tensor& gh = t.val(ghid);
        const Tensor& gw = t.val(gwid);
        double* dx = t.needs_grad(xid) ? t.grad(xid).data() : nullptr;
        double* dgh = t.needs_grad(ghid) ? t.grad(ghid).data() : nullptr;
        double* dgw = t.needs_grad(gwid) ? t.grad(gwid).data() : nullptr;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < H; ++h) {
                    const double vh = gh.at(n, c, h, 0);
                    for (int w = 0; w < W; ++w) {
                        const std::size_t xi = ix4(C, H, W, n, c, h, w);
                        const double vw = gw.at(n, c, 0, w);
                        const double go = gy[xi];
                        if (dx) dx[xi] += go * vh * vw;
                        if (dgh) dgh[ix4(C, H, 1, n, c, h, 0)] += go * x.data[xi] * vw;
                        if (dgw) dgw[ix4(C, 1, W, n, c, 0, w)] += go * x.data[xi] * vh;
                    }
                }
    };
    return out;
}

NodeId concat_spatial(Tape& t, NodeId aid, NodeId bid) {
    const Tensor& a = t.val(aid);
    const Tensor& b = t.val(bid);
    Tensor y = concat_spatial(a, b);
    const int N = a.shape[0], C = a.shape[1], H = a.shape[2], W = b.shape[3];
    NodeId out = t.emit(std::move(y), {aid, bid}, nullptr);
    const NodeId oid = out;
    t.nodes[static_cast<std::size_t>(out)].backprop = [aid, bid, oid, N, C, H, W](Tape& t) {
        const std::vector<double>& gy = t.grad(oid);
        double* da = t.needs_grad(aid) ? t.grad(aid).data() : nullptr;
        double* db = t.needs_grad(bid) ? t.grad(bid).data() : nullptr;
        const int L = H + W;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                if (da)
                    for (int i = 0; i < H; ++i)
                        da[ix4(C, H, 1, n, c, i, 0)] += gy[ix4(C, 1, L, n, c, 0, i)];
                if (db)
                    for (int j = 0; j < W; ++j)
                        db[ix4(C, 1, W, n, c, 0, j)] += gy[ix4(C, 1, L, n, c, 0, H + j)];
            }
    };
    return out;
}

std::pair<NodeId, NodeId> split_spatial(Tape& t, NodeId fid, int h) {
    const Tensor& f = t.val(fid);
    auto [fh, fw] = split_spatial(f, h);
    const int N = f.shape[0], C = f.shape[1], L = f.shape[3], W = L - h;
    NodeId hid = t.emit(std::move(fh), {fid}, nullptr);
    t.nodes[static_cast<std::size_t>(hid)].backprop = [fid, hid, N, C, L, h](Tape& t) {
        if (!t.needs_grad(fid)) return;
        const std::vector<double>& gy = t.grad(hid);
        std::vector<double>& df = t.grad(fid);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int i = 0; i < h; ++i)
                    df[ix4(C, 1, L, n, c, 0, i)] += gy[ix4(C, h, 1, n, c, i, 0)];
    };
    NodeId wid = t.emit(std::move(fw), {fid}, nullptr);
    t.nodes[static_cast<std::size_t>(wid)].backprop = [fid, wid, N, C, L, W, h](Tape& t) {
        if (!t.needs_grad(fid)) return;
        const std::vector<double>& gy = t.grad(wid);
        std::vector<double>& df = t.grad(fid);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int j = 0; j < W; ++j)
                    df[ix4(C, 1, L, n, c, 0, h + j)] += gy[ix4(C, 1, W, n, c, 0, j)];
    };
    return {hid, wid};
}

NodeId reshape(Tape& t, NodeId xid, std::vector<int> shape) {
    const Tensor& x = t.val(xid);
    if (shape_numel(shape) != x.numel())
        throw std::runtime_error("reshape: element count mismatch, " + shape_to_string(x.shape) +
                                 " -> " + shape_to_string(shape));
    Tensor y(std::move(shape), x.data);
    NodeId out = t.emit(std::move(y), {xid}, nullptr);
    const NodeId oid = out;
    t.nodes[static_cast<std::size_t>(out)].backprop = [xid, oid](Tape& t) {
        if (!t.needs_grad(xid)) return;
        const std::vector<double>& gy = t.grad(oid);
        std::vector<double>& dx = t.grad(xid);
        for (std::size_t i = 0; i < gy.size(); ++i) dx[i] += gy[i];
    };
    return out;
}

NodeId sum(Tape& t, NodeId xid) {
    const Tensor& x = t.val(xid);
    double s = 0.0;
    for (double v : x.data) s += v;
    NodeId out = t.emit(Tensor({1}, {s}), {xid}, nullptr);
    const NodeId oid = out;
    t.nodes[static_cast<std::size_t>(out)].backprop = [xid, oid](Tape& t) {
        if (!t.needs_grad(xid)) return;
        const double go = t.grad(oid)[0];
        std::vector<double>& dx = t.grad(xid);
        for (double& v : dx) v += go;
    };
    return out;
}

NodeId softmax_cross_entropy(Tape& t, NodeId lid, const std::vector<int>& labels) {
    const Tensor& logits = t.val(lid);
    if (logits.rank() != 2)
        throw std::runtime_error("softmax_cross_entropy: rank-2 logits required");
    const int N = logits.shape[0], K = logits.shape[1];
    if (static_cast<int>(labels.size()) != N)
        throw std::runtime_error("softmax_cross_entropy: label count mismatch");
    for (int lbl : labels)
        if (lbl < 0 || lbl >= K)
            throw std::runtime_error("softmax_cross_entropy: label out of range");
    std::vector<double> probs(logits.data.size());
    double loss = 0.0;
    for (int n = 0; n < N; ++n) {
        double mx = logits.at(n, 0);
        for (int k = 1; k < K; ++k) mx = std::max(mx, logits.at(n, k));
        double z = 0.0;
        for (int k = 0; k < K; ++k) z += std::exp(logits.at(n, k) - mx);
        for (int k = 0; k < K; ++k)
            probs[static_cast<std::size_t>(n) * K + k] = std::exp(logits.at(n, k) - mx) / z;
        loss -= std::log(probs[static_cast<std::size_t>(n) * K +
                               static_cast<std::size_t>(labels[static_cast<std::size_t>(n)])]);
    }
    loss /= static_cast<double>(N);
    NodeId out = t.emit(Tensor({1}, {loss}), {lid}, nullptr);
    const NodeId oid = out;
    t.nodes[static_cast<std::size_t>(out)].backprop =
        [lid, oid, N, K, labels, probs = std::move(probs)](Tape& t) {
            if (!t.needs_grad(lid)) return;
            const double go = t.grad(oid)[0] / static_cast<double>(N);
            std::vector<double>& dl = t.grad(lid);
            for (int n = 0; n < N; ++n)
                for (int k = 0; k < K; ++k) {
                    const std::size_t i = static_cast<std::size_t>(n) * K + k;
                    const double onehot =
                        (k == labels[static_cast<std::size_t>(n)]) ? 1.0 : 0.0;
                    dl[i] += go * (probs[i] - onehot);
                }
        };
    return out;
}

// ---- raw wrappers -----------------------------------------------------------

Tensor conv2d(const Tensor& x, const ConvParams& p) {
    Tape t;
    ConvVars v;
    v.weight = t.leaf(p.weight);
    if (p.bias) v.bias = t.leaf(*p.bias);
    v.stride = p.stride;
    v.padding = p.padding;
    v.groups = p.groups;
    return t.val(conv2d(t, t.leaf(x), v));
}

Tensor batchnorm(const Tensor& x, BatchNormParams& p, Mode mode) {
    Tape t;
    BatchNormVars v;
    v.gamma = t.leaf(p.gamma);
    v.beta = t.leaf(p.beta);
    v.p = &p;
    return t.val(batchnorm(t, t.leaf(x), v, mode));
}

Tensor linear(const Tensor& x, const LinearParams& p) {
    Tape t;
    LinearVars v;
    v.weight = t.leaf(p.weight);
    v.bias = t.leaf(p.bias);
    return t.val(linear(t, t.leaf(x), v));
}

Tensor global_avg_pool(const Tensor& x) { Tape t; return t.val(global_avg_pool(t, t.leaf(x))); }
Tensor pool_x(const Tensor& x) { Tape t; return t.val(pool_x(t, t.leaf(x))); }
Tensor pool_y(const Tensor& x) { Tape t; return t.val(pool_y(t, t.leaf(x))); }
Tensor global_max_pool(const Tensor& x) { Tape t; return t.val(global_max_pool(t, t.leaf(x))); }
Tensor channel_pool_mean_max(const Tensor& x) {
    Tape t;
    return t.val(channel_pool_mean_max(t, t.leaf(x)));
}
Tensor sigmoid(const Tensor& x) { Tape t; return t.val(sigmoid(t, t.leaf(x))); }
Tensor relu(const Tensor& x) { Tape t; return t.val(relu(t, t.leaf(x))); }
Tensor relu6(const Tensor& x) { Tape t; return t.val(relu6(t, t.leaf(x))); }
Tensor hard_swish(const Tensor& x) { Tape t; return t.val(hard_swish(t, t.leaf(x))); }

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2)
        throw std::runtime_error("softmax_rows: rank-2 input required");
    const int N = logits.shape[0], K = logits.shape[1];
    Tensor p(logits.shape);
    for (int n = 0; n < N; ++n) {
        double mx = logits.at(n, 0);
        for (int k = 1; k < K; ++k) mx = std::max(mx, logits.at(n, k));
        double z = 0.0;
        for (int k = 0; k < K; ++k) z += std::exp(logits.at(n, k) - mx);
        for (int k = 0; k < K; ++k) p.at(n, k) = std::exp(logits.at(n, k) - mx) / z;
    }
    return p;
}

} // namespace coordatt
