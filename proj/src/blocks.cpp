#include "coordatt/blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace coordatt {

int channel_round(double c, int divisor) {
    int v = std::max(divisor, (static_cast<int>(c + divisor / 2.0) / divisor) * divisor);
    if (v < 0.9 * c) v += divisor;
    return v;
}

int sandglass_hidden(int in_channels, int out_channels, double t) {
    if (t <= 0) throw std::runtime_error("sandglass_hidden: expansion must be positive");
    int hidden = static_cast<int>(in_channels / t);
    if (hidden < out_channels / 6.0)
        hidden = channel_round(std::ceil(out_channels / 6.0), 8);
    return std::max(hidden, 1);
}

namespace {

struct StageCfg {
    double t;
    int c, n, s;
};

const std::vector<StageCfg> kMbv2Stages = {
    {1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2},
    {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1},
};

const std::vector<StageCfg> kMnextStages = {
    {2, 96, 1, 2},  {6, 144, 1, 1}, {6, 192, 3, 2}, {6, 288, 3, 2},
    {6, 384, 4, 1}, {6, 576, 4, 2}, {6, 960, 3, 1}, {6, 1280, 1, 1},
};

NetworkSpec make_preset(const std::string& name, BlockType type, double width) {
    NetworkSpec spec;
    spec.name = name;
    spec.width_multiplier = width;
    spec.input_shape = {3, 224, 224};
    spec.stem.out_channels = channel_round(32 * width);
    const auto& stages = type == BlockType::inverted_residual ? kMbv2Stages : kMnextStages;
    int cin = spec.stem.out_channels;
    for (const auto& st : stages) {
        const int cout = channel_round(st.c * width);
        for (int i = 0; i < st.n; ++i) {
            BlockSpec b;
            b.block_type = type;
            b.in_channels = cin;
            b.out_channels = cout;
            b.stride = i == 0 ? st.s : 1;
            b.expansion = st.t;
            spec.blocks.push_back(b);
            cin = cout;
        }
    }
    if (type == BlockType::inverted_residual) {
        spec.head.conv_channels = width <= 1.0 ? 1280 : channel_round(1280 * width);
    } else {
        // the final 1280-expansion stage already plays the head-conv role;
        // a global attention kind must not gate the classifier features
        spec.head.conv_channels = 0;
        spec.blocks.back().attach_attention = false;
    }
    spec.head.classes = 1000;
    return spec;
}

} // namespace

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {
        "mobilenetv2-1.0", "mobilenetv2-0.75", "mobilenetv2-0.5",
        "mobilenext-1.0",  "mobilenext-0.75",  "mobilenext-0.5",
    };
    return names;
}

NetworkSpec preset(const std::string& name) {
    const auto dash = name.rfind('-');
    if (dash != std::string::npos) {
        const std::string family = name.substr(0, dash);
        const std::string width_s = name.substr(dash + 1);
        if ((family == "mobilenetv2" || family == "mobilenext") &&
            (width_s == "1.0" || width_s == "0.75" || width_s == "0.5")) {
            const double width = std::stod(width_s);
            const BlockType type = family == "mobilenetv2" ? BlockType::inverted_residual
                                                           : BlockType::sandglass;
            return make_preset(name, type, width);
        }
    }
    throw std::runtime_error("unknown preset \"" + name + "\"");
}

void apply_attention(NetworkSpec& spec, const AttentionConfig& cfg) {
    for (auto& b : spec.blocks)
        if (b.attach_attention) b.attention = cfg;
}

void validate(const NetworkSpec& spec) {
    if (spec.width_multiplier <= 0)
        throw std::runtime_error("width_multiplier: must be positive");
    for (int e : spec.input_shape)
        if (e < 1) throw std::runtime_error("input_shape: extents must be >= 1");
    if (spec.stem.out_channels < 1) throw std::runtime_error("stem.out_channels: must be >= 1");
    if (spec.stem.stride != 1 && spec.stem.stride != 2)
        throw std::runtime_error("stem.stride: must be 1 or 2");
    if (spec.blocks.empty()) throw std::runtime_error("blocks: at least one block required");
    int cin = spec.stem.out_channels;
    for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
        const auto& b = spec.blocks[i];
        const std::string at = "blocks[" + std::to_string(i) + "]";
        if (b.in_channels != cin)
            throw std::runtime_error(at + ".in_channels: expected " + std::to_string(cin) +
                                     " to chain from the previous layer, got " +
                                     std::to_string(b.in_channels));
        if (b.out_channels < 1) throw std::runtime_error(at + ".out_channels: must be >= 1");
        if (b.stride != 1 && b.stride != 2)
            throw std::runtime_error(at + ".stride: must be 1 or 2");
        if (b.expansion <= 0) throw std::runtime_error(at + ".expansion: must be positive");
        if (b.attention.reduction < 1)
            throw std::runtime_error(at + ".attention.reduction: must be >= 1");
        if (b.attention.cbam_kernel % 2 == 0)
            throw std::runtime_error(at + ".attention.cbam_kernel: must be odd");
        cin = b.out_channels;
    }
    if (spec.head.conv_channels < 0)
        throw std::runtime_error("head.conv_channels: must be >= 0");
    if (spec.head.classes < 1) throw std::runtime_error("head.classes: must be >= 1");
}

namespace {

ConvBn make_conv_bn(Rng& rng, int cin, int cout, int k, int stride, int groups, Act act,
                    bool use_bn) {
    ConvBn layer;
    layer.conv = conv_init(rng, cout, cin, k, stride, (k - 1) / 2, groups, !use_bn);
    if (use_bn) layer.bn = batchnorm_init(cout);
    layer.act = act;
    return layer;
}

} // namespace

Block build_block(const BlockSpec& spec, Rng& rng, bool use_batchnorm,
                  const std::string& name) {
    Block b;
    b.spec = spec;
    b.name = name;
    const int cin = spec.in_channels, cout = spec.out_channels;
    const AttnKind kind = spec.attach_attention ? spec.attention.kind : AttnKind::none;
    if (spec.block_type == BlockType::inverted_residual) {
        const int hidden = static_cast<int>(std::llround(cin * spec.expansion));
        b.hidden_channels = hidden;
        if (hidden != cin)
            b.expand = make_conv_bn(rng, cin, hidden, 1, 1, 1, Act::relu6, use_batchnorm);
        b.dw = make_conv_bn(rng, hidden, hidden, 3, spec.stride, hidden, Act::relu6,
                            use_batchnorm);
        b.attn_channels = spec.placement == AttnPlacement::pre_project ? hidden : cout;
        b.attn = attach(kind, b.attn_channels, spec.attention, rng);
        b.project = make_conv_bn(rng, hidden, cout, 1, 1, 1, Act::none, use_batchnorm);
    } else {
        const int hidden = sandglass_hidden(cin, cout, spec.expansion);
        b.hidden_channels = hidden;
        b.dw1 = make_conv_bn(rng, cin, cin, 3, 1, cin, Act::relu6, use_batchnorm);
        b.reduce = make_conv_bn(rng, cin, hidden, 1, 1, 1, Act::none, use_batchnorm);
        b.expdw = make_conv_bn(rng, hidden, cout, 1, 1, 1, Act::relu6, use_batchnorm);
        b.attn_channels = cout;
        b.attn = attach(kind, cout, spec.attention, rng);
        b.dw2 = make_conv_bn(rng, cout, cout, 3, spec.stride, cout, Act::none, use_batchnorm);
    }
    return b;
}

Network build_network(const NetworkSpec& spec, Rng& rng) {
    validate(spec);
    Network net;
    net.spec = spec;
    net.stem = make_conv_bn(rng, spec.input_shape[0], spec.stem.out_channels, spec.stem.kernel,
                            spec.stem.stride, 1, Act::relu6, spec.use_batchnorm);
    net.blocks.reserve(spec.blocks.size());
    for (std::size_t i = 0; i < spec.blocks.size(); ++i)
        net.blocks.push_back(build_block(spec.blocks[i], rng, spec.use_batchnorm,
                                         "block" + std::to_string(i)));
    int feat = spec.blocks.back().out_channels;
    if (spec.head.conv_channels > 0) {
        net.head_conv = make_conv_bn(rng, feat, spec.head.conv_channels, 1, 1, 1, Act::relu6,
                                     spec.use_batchnorm);
        feat = spec.head.conv_channels;
    }
    net.classifier = linear_init(rng, spec.head.classes, feat);
    return net;
}

namespace {

struct ConvBnVars {
    ConvVars conv;
    std::optional<BatchNormVars> bn;
    Act act;
};

ConvBnVars bind(Tape& t, ConvBn& layer) {
    ConvBnVars v;
    v.conv = bind(t, layer.conv);
    if (layer.bn) v.bn = bind(t, *layer.bn);
    v.act = layer.act;
    return v;
}

NodeId conv_bn_act(Tape& t, NodeId x, ConvBn& layer, Mode mode) {
    ConvBnVars v = bind(t, layer);
    NodeId y = conv2d(t, x, v.conv);
    if (v.bn) y = batchnorm(t, y, *v.bn, mode);
    return activation(t, y, v.act);
}

} // namespace

NodeId inverted_residual_forward(Tape& t, NodeId x, Block& b, Mode mode, bool with_residual,
                                 AttentionTrace* trace) {
    if (t.val(x).shape[1] != b.spec.in_channels)
        throw std::runtime_error("inverted_residual_forward: input channels " +
                                 std::to_string(t.val(x).shape[1]) + " do not match block " +
                                 std::to_string(b.spec.in_channels));
    NodeId y = x;
    if (b.expand) y = conv_bn_act(t, y, *b.expand, mode);
    y = conv_bn_act(t, y, *b.dw, mode);
    AttentionVars attn = bind(t, b.attn);
    if (b.spec.placement == AttnPlacement::pre_project)
        y = attention_forward(t, y, attn, mode, trace);
    y = conv_bn_act(t, y, *b.project, mode);
    if (b.spec.placement == AttnPlacement::post_project)
        y = attention_forward(t, y, attn, mode, trace);
    if (with_residual && b.has_shortcut()) y = add(t, y, x);
    return y;
}

NodeId sandglass_forward(Tape& t, NodeId x, Block& b, Mode mode, bool with_residual,
                         AttentionTrace* trace) {
    if (t.val(x).shape[1] != b.spec.in_channels)
        throw std::runtime_error("sandglass_forward: input channels " +
                                 std::to_string(t.val(x).shape[1]) + " do not match block " +
                                 std::to_string(b.spec.in_channels));
    NodeId y = conv_bn_act(t, x, *b.dw1, mode);
    y = conv_bn_act(t, y, *b.reduce, mode);
    y = conv_bn_act(t, y, *b.expdw, mode);
    AttentionVars attn = bind(t, b.attn);
    if (b.spec.placement == AttnPlacement::pre_project)
        y = attention_forward(t, y, attn, mode, trace);
    y = conv_bn_act(t, y, *b.dw2, mode);
    if (b.spec.placement == AttnPlacement::post_project)
        y = attention_forward(t, y, attn, mode, trace);
    if (with_residual && b.has_shortcut()) y = add(t, y, x);
    return y;
}

NodeId block_forward(Tape& t, NodeId x, Block& b, Mode mode, bool with_residual,
                     AttentionTrace* trace) {
    return b.spec.block_type == BlockType::inverted_residual
               ? inverted_residual_forward(t, x, b, mode, with_residual, trace)
               : sandglass_forward(t, x, b, mode, with_residual, trace);
}

void append_parameters(std::vector<ParamEntry>& out, const std::string& prefix, ConvBn& layer) {
    out.push_back({prefix + ".conv.weight", &layer.conv.weight, true});
    if (layer.conv.bias) out.push_back({prefix + ".conv.bias", &*layer.conv.bias, true});
    if (layer.bn) {
        out.push_back({prefix + ".bn.gamma", &layer.bn->gamma, true});
        out.push_back({prefix + ".bn.beta", &layer.bn->beta, true});
        out.push_back({prefix + ".bn.running_mean", &layer.bn->running_mean, false});
        out.push_back({prefix + ".bn.running_var", &layer.bn->running_var, false});
    }
}

static void append_conv(std::vector<ParamEntry>& out, const std::string& prefix,
                        ConvParams& conv) {
    out.push_back({prefix + ".weight", &conv.weight, true});
    if (conv.bias) out.push_back({prefix + ".bias", &*conv.bias, true});
}

void append_parameters(std::vector<ParamEntry>& out, const std::string& prefix,
                       AttentionParams& attn) {
    if (attn.se) {
        append_conv(out, prefix + ".t1", attn.se->t1);
        append_conv(out, prefix + ".t2", attn.se->t2);
    }
    if (attn.cbam) {
        append_conv(out, prefix + ".mlp1", attn.cbam->mlp1);
        append_conv(out, prefix + ".mlp2", attn.cbam->mlp2);
        append_conv(out, prefix + ".spatial", attn.cbam->spatial);
    }
    if (attn.ca) {
        append_conv(out, prefix + ".f1", attn.ca->f1);
        if (attn.ca->bn) {
            out.push_back({prefix + ".f1.bn.gamma", &attn.ca->bn->gamma, true});
            out.push_back({prefix + ".f1.bn.beta", &attn.ca->bn->beta, true});
            out.push_back({prefix + ".f1.bn.running_mean", &attn.ca->bn->running_mean, false});
            out.push_back({prefix + ".f1.bn.running_var", &attn.ca->bn->running_var, false});
        }
        if (attn.ca->fh) append_conv(out, prefix + ".fh", *attn.ca->fh);
        if (attn.ca->fw) append_conv(out, prefix + ".fw", *attn.ca->fw);
    }
}

std::vector<ParamEntry> Network::parameters() {
    std::vector<ParamEntry> out;
    append_parameters(out, "stem", stem);
    for (auto& b : blocks) {
        if (b.expand) append_parameters(out, b.name + ".expand", *b.expand);
        if (b.dw) append_parameters(out, b.name + ".dw", *b.dw);
        if (b.dw1) append_parameters(out, b.name + ".dw1", *b.dw1);
        if (b.reduce) append_parameters(out, b.name + ".reduce", *b.reduce);
        if (b.expdw) append_parameters(out, b.name + ".expand", *b.expdw);
        append_parameters(out, b.name + ".attn", b.attn);
        if (b.project) append_parameters(out, b.name + ".project", *b.project);
        if (b.dw2) append_parameters(out, b.name + ".dw2", *b.dw2);
    }
    if (head_conv) append_parameters(out, "head", *head_conv);
    out.push_back({"classifier.weight", &classifier.weight, true});
    out.push_back({"classifier.bias", &classifier.bias, true});
    return out;
}

Tensor* Network::find_param(const std::string& name) {
    for (auto& e : parameters())
        if (e.name == name) return e.tensor;
    return nullptr;
}

void Network::zero_grad() {
    for (auto& e : parameters()) e.tensor->grad.reset();
}

NodeId Network::forward(Tape& t, NodeId x, Mode mode, std::vector<AttentionTrace>* traces) {
    const Tensor& xv = t.val(x);
    if (xv.rank() != 4 || xv.shape[1] != spec.input_shape[0])
        throw std::runtime_error("network forward: expected input [N," +
                                 std::to_string(spec.input_shape[0]) + ",H,W], got " +
                                 shape_to_string(xv.shape));
    NodeId y = conv_bn_act(t, x, stem, mode);
    if (traces) traces->assign(blocks.size(), AttentionTrace{});
    for (std::size_t i = 0; i < blocks.size(); ++i)
        y = block_forward(t, y, blocks[i], mode, true, traces ? &(*traces)[i] : nullptr);
    if (head_conv) y = conv_bn_act(t, y, *head_conv, mode);
    y = global_avg_pool(t, y);
    const Tensor& pooled = t.val(y);
    y = reshape(t, y, {pooled.shape[0], pooled.shape[1]});
    LinearVars cls = bind(t, classifier);
    return linear(t, y, cls);
}

Tensor Network::forward(const Tensor& x, Mode mode) {
    Tape t;
    return t.val(forward(t, t.leaf(x), mode));
}

} // namespace coordatt
