#include "coordatt/oracles.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace coordatt {

namespace {

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

double apply_act(double v, Act a) {
    switch (a) {
        case Act::none: return v;
        case Act::relu: return v > 0.0 ? v : 0.0;
        case Act::relu6: return v < 0.0 ? 0.0 : (v > 6.0 ? 6.0 : v);
        case Act::hard_swish: {
            double c = v + 3.0;
            if (c < 0.0) c = 0.0;
            if (c > 6.0) c = 6.0;
            return v * c / 6.0;
        }
        case Act::sigmoid: return sig(v);
    }
    throw std::logic_error("apply_act: bad enum");
}

// y[m] = b[m] + sum_c w[m,c,0,0] * v[c], for a 1x1 conv treated as a matrix.
std::vector<double> mat1x1(const ConvParams& p, const std::vector<double>& v) {
    int rows = p.weight.extent(0);
    int cols = p.weight.extent(1);
    std::vector<double> out(static_cast<std::size_t>(rows), 0.0);
    for (int m = 0; m < rows; ++m) {
        double acc = p.bias ? p.bias->data[static_cast<std::size_t>(m)] : 0.0;
        for (int c = 0; c < cols; ++c)
            acc += p.weight.at(m, c, 0, 0) * v[static_cast<std::size_t>(c)];
        out[static_cast<std::size_t>(m)] = acc;
    }
    return out;
}

} // namespace

Tensor oracle_forward_se(const Tensor& x, const SEParams& p) {
    int N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    Tensor y = Tensor::zeros(x.shape);
    for (int n = 0; n < N; ++n) {
        std::vector<double> z(static_cast<std::size_t>(C), 0.0);
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) acc += x.at(n, c, i, j);
            z[static_cast<std::size_t>(c)] = acc / (static_cast<double>(H) * W);
        }
        std::vector<double> a = mat1x1(p.t1, z);
        for (double& v : a) v = v > 0.0 ? v : 0.0;
        std::vector<double> s = mat1x1(p.t2, a);
        for (int c = 0; c < C; ++c) {
            double g = sig(s[static_cast<std::size_t>(c)]);
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) y.at(n, c, i, j) = x.at(n, c, i, j) * g;
        }
    }
    return y;
}

Tensor oracle_forward_cbam(const Tensor& x, const CBAMParams& p) {
    int N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    int k = p.spatial.weight.extent(2);
    int pad = (k - 1) / 2;
    Tensor y = Tensor::zeros(x.shape);
    for (int n = 0; n < N; ++n) {
        std::vector<double> zavg(static_cast<std::size_t>(C), 0.0);
        std::vector<double> zmax(static_cast<std::size_t>(C), 0.0);
        for (int c = 0; c < C; ++c) {
            double acc = 0.0, best = x.at(n, c, 0, 0);
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    double v = x.at(n, c, i, j);
                    acc += v;
                    if (v > best) best = v;
                }
            zavg[static_cast<std::size_t>(c)] = acc / (static_cast<double>(H) * W);
            zmax[static_cast<std::size_t>(c)] = best;
        }
        std::vector<double> ha = mat1x1(p.mlp1, zavg);
        std::vector<double> hm = mat1x1(p.mlp1, zmax);
        for (double& v : ha) v = v > 0.0 ? v : 0.0;
        for (double& v : hm) v = v > 0.0 ? v : 0.0;
        std::vector<double> sa = mat1x1(p.mlp2, ha);
        std::vector<double> sm = mat1x1(p.mlp2, hm);

        // channel gate, then the two channel-pooled maps of the gated tensor
        std::vector<double> x1(static_cast<std::size_t>(C * H * W), 0.0);
        for (int c = 0; c < C; ++c) {
            double g = sig(sa[static_cast<std::size_t>(c)] + sm[static_cast<std::size_t>(c)]);
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j)
                    x1[static_cast<std::size_t>((c * H + i) * W + j)] = x.at(n, c, i, j) * g;
        }
        std::vector<double> pooled(static_cast<std::size_t>(2 * H * W), 0.0);
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                double acc = 0.0;
                double best = x1[static_cast<std::size_t>(i * W + j)];
                for (int c = 0; c < C; ++c) {
                    double v = x1[static_cast<std::size_t>((c * H + i) * W + j)];
                    acc += v;
                    if (v > best) best = v;
                }
                pooled[static_cast<std::size_t>(i * W + j)] = acc / C;
                pooled[static_cast<std::size_t>((H + i) * W + j)] = best;
            }
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                double acc = p.spatial.bias ? p.spatial.bias->data[0] : 0.0;
                for (int q = 0; q < 2; ++q)
                    for (int u = 0; u < k; ++u)
                        for (int v = 0; v < k; ++v) {
                            int ii = i + u - pad, jj = j + v - pad;
                            if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
                            acc += p.spatial.weight.at(0, q, u, v) *
                                   pooled[static_cast<std::size_t>((q * H + ii) * W + jj)];
                        }
                double s = sig(acc);
                for (int c = 0; c < C; ++c)
                    y.at(n, c, i, j) = x1[static_cast<std::size_t>((c * H + i) * W + j)] * s;
            }
    }
    return y;
}

Tensor oracle_forward_ca(const Tensor& x, const CAParams& p, const AttentionConfig& cfg) {
    int N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    int mid = p.f1.weight.extent(0);
    int L = H + W;
    Tensor y = Tensor::zeros(x.shape);
    for (int n = 0; n < N; ++n) {
        // joint[c][p]: per-row means for p < H, per-column means after
        std::vector<double> joint(static_cast<std::size_t>(C * L), 0.0);
        for (int c = 0; c < C; ++c) {
            for (int i = 0; i < H; ++i) {
                double acc = 0.0;
                for (int j = 0; j < W; ++j) acc += x.at(n, c, i, j);
                joint[static_cast<std::size_t>(c * L + i)] = acc / W;
            }
            for (int j = 0; j < W; ++j) {
                double acc = 0.0;
                for (int i = 0; i < H; ++i) acc += x.at(n, c, i, j);
                joint[static_cast<std::size_t>(c * L + H + j)] = acc / H;
            }
        }
        std::vector<double> f(static_cast<std::size_t>(mid * L), 0.0);
        for (int m = 0; m < mid; ++m)
            for (int q = 0; q < L; ++q) {
                double acc = p.f1.bias ? p.f1.bias->data[static_cast<std::size_t>(m)] : 0.0;
                for (int c = 0; c < C; ++c)
                    acc += p.f1.weight.at(m, c, 0, 0) * joint[static_cast<std::size_t>(c * L + q)];
                if (p.bn) {
                    const BatchNormParams& bn = *p.bn;
                    double inv = 1.0 / std::sqrt(bn.running_var.data[static_cast<std::size_t>(m)] +
                                                 bn.eps);
                    acc = bn.gamma.data[static_cast<std::size_t>(m)] *
                              (acc - bn.running_mean.data[static_cast<std::size_t>(m)]) * inv +
                          bn.beta.data[static_cast<std::size_t>(m)];
                }
                f[static_cast<std::size_t>(m * L + q)] = apply_act(acc, cfg.delta_activation);
            }
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    double gh = 1.0, gw = 1.0;
                    if (p.fh) {
                        double acc = p.fh->bias ? p.fh->bias->data[static_cast<std::size_t>(c)]
                                                : 0.0;
                        for (int m = 0; m < mid; ++m)
                            acc += p.fh->weight.at(c, m, 0, 0) *
                                   f[static_cast<std::size_t>(m * L + i)];
                        gh = sig(acc);
                    }
                    if (p.fw) {
                        double acc = p.fw->bias ? p.fw->bias->data[static_cast<std::size_t>(c)]
                                                : 0.0;
                        for (int m = 0; m < mid; ++m)
                            acc += p.fw->weight.at(c, m, 0, 0) *
                                   f[static_cast<std::size_t>(m * L + H + j)];
                        gw = sig(acc);
                    }
                    y.at(n, c, i, j) = x.at(n, c, i, j) * gh * gw;
                }
    }
    return y;
}

Tensor oracle_forward(const Tensor& x, const AttentionParams& p) {
    switch (p.cfg.kind) {
        case AttnKind::none: return x;
        case AttnKind::se: return oracle_forward_se(x, *p.se);
        case AttnKind::cbam: return oracle_forward_cbam(x, *p.cbam);
        case AttnKind::ca:
        case AttnKind::ca_x:
        case AttnKind::ca_y: return oracle_forward_ca(x, *p.ca, p.cfg);
    }
    throw std::logic_error("oracle_forward: bad enum");
}

} // namespace coordatt
