#pragma once

#include "coordatt/attention.hpp"

#include <array>

namespace coordatt {

enum class BlockType { inverted_residual, sandglass };
enum class AttnPlacement { pre_project, post_project };

struct BlockSpec {
    BlockType block_type = BlockType::inverted_residual;
    int in_channels = 0;
    int out_channels = 0;
    int stride = 1;
    // t: expansion factor for inverted residual, reduction factor for sandglass
    double expansion = 6.0;
    AttentionConfig attention;
    AttnPlacement placement = AttnPlacement::pre_project;
    // Head-expansion blocks (the final sandglass stage that feeds the
    // classifier) opt out when a global attention kind is applied.
    bool attach_attention = true;
};

struct StemSpec {
    int out_channels = 32;
    int kernel = 3;
    int stride = 2;
};

struct HeadSpec {
    int conv_channels = 0;   // 0: classifier reads the last block directly
    int classes = 1000;
};

struct NetworkSpec {
    std::string name = "custom";
    double width_multiplier = 1.0;
    std::array<int, 3> input_shape{3, 224, 224};
    StemSpec stem;
    std::vector<BlockSpec> blocks;
    HeadSpec head;
    bool use_batchnorm = true;
};

// Nearest multiple of divisor, never below 0.9*c, minimum divisor.
int channel_round(double c, int divisor = 8);

// Bottleneck width of a sandglass block: in/t, clamped up to
// channel_round(ceil(out/6)) so narrow stage transitions stay expressive.
int sandglass_hidden(int in_channels, int out_channels, double t);

// Built-in presets: mobilenetv2-{1.0,0.75,0.5}, mobilenext-{1.0,0.75,0.5}.
NetworkSpec preset(const std::string& name);
const std::vector<std::string>& preset_names();

// Applies one attention config to every block with attach_attention=true.
void apply_attention(NetworkSpec& spec, const AttentionConfig& cfg);

// Structural validation (channel chain, strides, head); throws with the
// offending field path.
void validate(const NetworkSpec& spec);

struct ConvBn {
    ConvParams conv;
    std::optional<BatchNormParams> bn;
    Act act = Act::none;
};

struct Block {
    BlockSpec spec;
    std::string name;
    int hidden_channels = 0;   // expanded width (IR) / bottleneck width (sandglass)
    int attn_channels = 0;
    // inverted residual path
    std::optional<ConvBn> expand, dw, project;
    // sandglass path
    std::optional<ConvBn> dw1, reduce, expdw, dw2;
    AttentionParams attn;

    bool has_shortcut() const {
        return spec.stride == 1 && spec.in_channels == spec.out_channels;
    }
};

struct ParamEntry {
    std::string name;
    Tensor* tensor = nullptr;
    bool learnable = true;
};

struct Network {
    NetworkSpec spec;
    ConvBn stem;
    std::vector<Block> blocks;
    std::optional<ConvBn> head_conv;
    LinearParams classifier;

    // Stable, structure-ordered parameter walk; pointers are valid while the
    // network is alive and unmoved.
    std::vector<ParamEntry> parameters();
    Tensor* find_param(const std::string& name);
    void zero_grad();

    NodeId forward(Tape& t, NodeId x, Mode mode,
                   std::vector<AttentionTrace>* traces = nullptr);
    Tensor forward(const Tensor& x, Mode mode);
};

Network build_network(const NetworkSpec& spec, Rng& rng);
Block build_block(const BlockSpec& spec, Rng& rng, bool use_batchnorm,
                  const std::string& name);

// with_residual=false evaluates the block body alone (shortcut skipped).
NodeId inverted_residual_forward(Tape& t, NodeId x, Block& b, Mode mode,
                                 bool with_residual = true,
                                 AttentionTrace* trace = nullptr);
NodeId sandglass_forward(Tape& t, NodeId x, Block& b, Mode mode,
                         bool with_residual = true, AttentionTrace* trace = nullptr);
NodeId block_forward(Tape& t, NodeId x, Block& b, Mode mode, bool with_residual = true,
                     AttentionTrace* trace = nullptr);

void append_parameters(std::vector<ParamEntry>& out, const std::string& prefix, ConvBn& layer);
void append_parameters(std::vector<ParamEntry>& out, const std::string& prefix,
                       AttentionParams& attn);

} // namespace coordatt
