#include "coordatt/attention.hpp"

#include <stdexcept>

namespace coordatt {

std::string attn_kind_name(AttnKind k) {
    switch (k) {
        case AttnKind::none: return "none";
        case AttnKind::se: return "se";
        case AttnKind::cbam: return "cbam";
        case AttnKind::ca: return "ca";
        case AttnKind::ca_x: return "ca_x";
        case AttnKind::ca_y: return "ca_y";
    }
    return "none";
}

AttnKind attn_kind_from_name(const std::string& name) {
    if (name == "none") return AttnKind::none;
    if (name == "se") return AttnKind::se;
    if (name == "cbam") return AttnKind::cbam;
    if (name == "ca") return AttnKind::ca;
    if (name == "ca_x") return AttnKind::ca_x;
    if (name == "ca_y") return AttnKind::ca_y;
    throw std::runtime_error("unknown attention kind \"" + name + "\"");
}

int mid_channels(int c, const AttentionConfig& cfg) {
    if (cfg.reduction < 1) throw std::runtime_error("mid_channels: reduction must be >= 1");
    int mid = std::max(c / cfg.reduction, cfg.mid_channels_min);
    if (mid < 1) throw std::runtime_error("mid_channels: underflow");
    return mid;
}

AttentionParams attach(AttnKind kind, int c, const AttentionConfig& cfg, Rng& rng) {
    AttentionParams p;
    p.cfg = cfg;
    p.cfg.kind = kind;
    p.channels = c;
    if (kind == AttnKind::none) return p;
    const int mid = mid_channels(c, cfg);
    if (kind == AttnKind::se) {
        SEParams se;
        se.t1 = conv_init(rng, mid, c, 1, 1, 0, 1, true);
        se.t2 = conv_init(rng, c, mid, 1, 1, 0, 1, true);
        p.se = std::move(se);
    } else if (kind == AttnKind::cbam) {
        if (cfg.cbam_kernel % 2 == 0)
            throw std::runtime_error("attach: cbam kernel must be odd");
        CBAMParams cb;
        cb.mlp1 = conv_init(rng, mid, c, 1, 1, 0, 1, true);
        cb.mlp2 = conv_init(rng, c, mid, 1, 1, 0, 1, true);
        cb.spatial = conv_init(rng, 1, 2, cfg.cbam_kernel, 1, (cfg.cbam_kernel - 1) / 2, 1, true);
        p.cbam = std::move(cb);
    } else {
        CAParams ca;
        ca.f1 = conv_init(rng, mid, c, 1, 1, 0, 1, !cfg.f1_batchnorm);
        if (cfg.f1_batchnorm) ca.bn = batchnorm_init(mid);
        if (kind != AttnKind::ca_y) ca.fh = conv_init(rng, c, mid, 1, 1, 0, 1, true);
        if (kind != AttnKind::ca_x) ca.fw = conv_init(rng, c, mid, 1, 1, 0, 1, true);
        p.ca = std::move(ca);
    }
    return p;
}

AttentionVars bind(Tape& t, AttentionParams& p) {
    AttentionVars v;
    v.p = &p;
    if (p.se) {
        SEVars se;
        se.t1 = bind(t, p.se->t1);
        se.t2 = bind(t, p.se->t2);
        v.se = se;
    }
    if (p.cbam) {
        CBAMVars cb;
        cb.mlp1 = bind(t, p.cbam->mlp1);
        cb.mlp2 = bind(t, p.cbam->mlp2);
        cb.spatial = bind(t, p.cbam->spatial);
        v.cbam = cb;
    }
    if (p.ca) {
        CAVars ca;
        ca.f1 = bind(t, p.ca->f1);
        if (p.ca->bn) ca.bn = bind(t, *p.ca->bn);
        if (p.ca->fh) ca.fh = bind(t, *p.ca->fh);
        if (p.ca->fw) ca.fw = bind(t, *p.ca->fw);
        v.ca = ca;
    }
    return v;
}

NodeId se_forward(Tape& t, NodeId x, const SEVars& p, AttentionTrace* trace) {
    NodeId z = global_avg_pool(t, x);
    NodeId a = relu(t, conv2d(t, z, p.t1));
    NodeId g = sigmoid(t, conv2d(t, a, p.t2));
    if (trace) trace->se_gate = g;
    return mul_broadcast(t, x, g);
}

NodeId cbam_forward(Tape& t, NodeId x, const CBAMVars& p, AttentionTrace* trace) {
    NodeId za = conv2d(t, relu(t, conv2d(t, global_avg_pool(t, x), p.mlp1)), p.mlp2);
    NodeId zm = conv2d(t, relu(t, conv2d(t, global_max_pool(t, x), p.mlp1)), p.mlp2);
    NodeId gc = sigmoid(t, add(t, za, zm));
    if (trace) trace->cbam_channel = gc;
    NodeId x1 = mul_broadcast(t, x, gc);
    NodeId gs = sigmoid(t, conv2d(t, channel_pool_mean_max(t, x1), p.spatial));
    if (trace) trace->cbam_spatial = gs;
    return mul_broadcast(t, x1, gs);
}

NodeId ca_forward(Tape& t, NodeId x, const CAVars& p, const AttentionConfig& cfg, Mode mode,
                  AttentionTrace* trace) {
    const Tensor& xv = t.val(x);
    if (xv.rank() != 4)
        throw std::runtime_error("ca_forward: rank-4 input required");
    const int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
    NodeId zh = pool_x(t, x);
    NodeId zw = pool_y(t, x);
    NodeId f = conv2d(t, concat_spatial(t, zh, zw), p.f1);
    if (p.bn) f = batchnorm(t, f, *p.bn, mode);
    f = activation(t, f, cfg.delta_activation);
    auto [fh, fw] = split_spatial(t, f, H);
    NodeId gh, gw;
    if (cfg.kind != AttnKind::ca_y) {
        if (!p.fh) throw std::runtime_error("ca_forward: missing Fh params");
        gh = sigmoid(t, conv2d(t, fh, *p.fh));
    } else {
        gh = t.leaf(Tensor::full({N, C, H, 1}, 1.0));
    }
    if (cfg.kind != AttnKind::ca_x) {
        if (!p.fw) throw std::runtime_error("ca_forward: missing Fw params");
        gw = sigmoid(t, conv2d(t, fw, *p.fw));
    } else {
        gw = t.leaf(Tensor::full({N, C, 1, W}, 1.0));
    }
    if (trace) {
        trace->gh = gh;
        trace->gw = gw;
    }
    return broadcast_mul(t, x, gh, gw);
}

NodeId attention_forward(Tape& t, NodeId x, const AttentionVars& vars, Mode mode,
                         AttentionTrace* trace) {
    const AttnKind kind = vars.p ? vars.p->cfg.kind : AttnKind::none;
    switch (kind) {
        case AttnKind::none: return x;
        case AttnKind::se: return se_forward(t, x, *vars.se, trace);
        case AttnKind::cbam: return cbam_forward(t, x, *vars.cbam, trace);
        default: return ca_forward(t, x, *vars.ca, vars.p->cfg, mode, trace);
    }
}

Tensor se_forward(const Tensor& x, const SEParams& p) {
    Tape t;
    SEVars v;
    v.t1.weight = t.leaf(p.t1.weight);
    v.t1.bias = p.t1.bias ? t.leaf(*p.t1.bias) : -1;
    v.t2.weight = t.leaf(p.t2.weight);
    v.t2.bias = p.t2.bias ? t.leaf(*p.t2.bias) : -1;
    return t.val(se_forward(t, t.leaf(x), v));
}

Tensor cbam_forward(const Tensor& x, const CBAMParams& p) {
    Tape t;
    CBAMVars v;
    auto leaf_conv = [&t](const ConvParams& c) {
        ConvVars cv;
        cv.weight = t.leaf(c.weight);
        cv.bias = c.bias ? t.leaf(*c.bias) : -1;
        cv.stride = c.stride;
        cv.padding = c.padding;
        cv.groups = c.groups;
        return cv;
    };
    v.mlp1 = leaf_conv(p.mlp1);
    v.mlp2 = leaf_conv(p.mlp2);
    v.spatial = leaf_conv(p.spatial);
    return t.val(cbam_forward(t, t.leaf(x), v));
}

Tensor ca_forward(const Tensor& x, const CAParams& p, const AttentionConfig& cfg) {
    Tape t;
    CAVars v;
    auto leaf_conv = [&t](const ConvParams& c) {
        ConvVars cv;
        cv.weight = t.leaf(c.weight);
        cv.bias = c.bias ? t.leaf(*c.bias) : -1;
        cv.stride = c.stride;
        cv.padding = c.padding;
        cv.groups = c.groups;
        return cv;
    };
    v.f1 = leaf_conv(p.f1);
    if (p.bn) {
        BatchNormVars bv;
        bv.gamma = t.leaf(p.bn->gamma);
        bv.beta = t.leaf(p.bn->beta);
        bv.p = const_cast<BatchNormParams*>(&*p.bn);
        v.bn = bv;
    }
    if (p.fh) v.fh = leaf_conv(*p.fh);
    if (p.fw) v.fw = leaf_conv(*p.fw);
    return t.val(ca_forward(t, t.leaf(x), v, cfg, Mode::eval));
}

Tensor attention_forward(const Tensor& x, AttentionParams& p) {
    switch (p.cfg.kind) {
        case AttnKind::none: return x;
        case AttnKind::se: return se_forward(x, *p.se);
        case AttnKind::cbam: return cbam_forward(x, *p.cbam);
        default: return ca_forward(x, *p.ca, p.cfg);
    }
}

} // namespace coordatt
