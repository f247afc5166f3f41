#pragma once

#include "coordatt/nn.hpp"

#include <string>

namespace coordatt {

enum class AttnKind { none, se, cbam, ca, ca_x, ca_y };

std::string attn_kind_name(AttnKind k);
AttnKind attn_kind_from_name(const std::string& name);   // throws on unknown kind

struct AttentionConfig {
    AttnKind kind = AttnKind::none;
    int reduction = 32;
    int mid_channels_min = 8;
    Act delta_activation = Act::hard_swish;
    int cbam_kernel = 7;
    bool f1_batchnorm = true;
};

// Bottleneck width of the attention transform: max(C/r, floor).
int mid_channels(int c, const AttentionConfig& cfg);

struct SEParams {
    ConvParams t1, t2;             // 1x1 convs with bias
};

struct CBAMParams {
    ConvParams mlp1, mlp2;         // shared MLP, applied to GAP and GMP paths
    ConvParams spatial;            // kxk conv on the 2-channel pooled map
};

struct CAParams {
    ConvParams f1;                 // bias off when bn present
    std::optional<BatchNormParams> bn;
    std::optional<ConvParams> fh;  // absent for kind=ca_y
    std::optional<ConvParams> fw;  // absent for kind=ca_x
};

struct AttentionParams {
    AttentionConfig cfg;
    int channels = 0;
    std::optional<SEParams> se;
    std::optional<CBAMParams> cbam;
    std::optional<CAParams> ca;
};

// Allocates and initializes the parameters for one attention block over C
// channels, deterministically from rng. kind=none yields an empty set.
AttentionParams attach(AttnKind kind, int c, const AttentionConfig& cfg, Rng& rng);

struct SEVars {
    ConvVars t1, t2;
};
struct CBAMVars {
    ConvVars mlp1, mlp2, spatial;
};
struct CAVars {
    ConvVars f1;
    std::optional<BatchNormVars> bn;
    std::optional<ConvVars> fh, fw;
};
struct AttentionVars {
    const AttentionParams* p = nullptr;
    std::optional<SEVars> se;
    std::optional<CBAMVars> cbam;
    std::optional<CAVars> ca;
};

AttentionVars bind(Tape& t, AttentionParams& p);

// Gate tensors recorded during a forward pass, for inspection and dumping.
struct AttentionTrace {
    NodeId se_gate = -1;        // [N,C,1,1]
    NodeId cbam_channel = -1;   // [N,C,1,1]
    NodeId cbam_spatial = -1;   // [N,1,H,W]
    NodeId gh = -1;             // [N,C,H,1]
    NodeId gw = -1;             // [N,C,1,W]
};

NodeId se_forward(Tape& t, NodeId x, const SEVars& p, AttentionTrace* trace = nullptr);
NodeId cbam_forward(Tape& t, NodeId x, const CBAMVars& p, AttentionTrace* trace = nullptr);
NodeId ca_forward(Tape& t, NodeId x, const CAVars& p, const AttentionConfig& cfg, Mode mode,
                  AttentionTrace* trace = nullptr);
// Dispatch on p.cfg.kind; kind=none returns x unchanged.
NodeId attention_forward(Tape& t, NodeId x, const AttentionVars& vars, Mode mode,
                         AttentionTrace* trace = nullptr);

// Raw wrappers (eval mode, throwaway tape).
Tensor se_forward(const Tensor& x, const SEParams& p);
Tensor cbam_forward(const Tensor& x, const CBAMParams& p);
Tensor ca_forward(const Tensor& x, const CAParams& p, const AttentionConfig& cfg);
Tensor attention_forward(const Tensor& x, AttentionParams& p);

} // namespace coordatt
