#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "coordatt/blocks.hpp"
#include "coordatt/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

using namespace coordatt;

namespace {

AttentionConfig attn_cfg(AttnKind kind, int reduction = 4, int floor = 2) {
    AttentionConfig cfg;
    cfg.kind = kind;
    cfg.reduction = reduction;
    cfg.mid_channels_min = floor;
    return cfg;
}

BlockSpec ir_spec(int in, int out, int stride, double t, AttnKind kind) {
    BlockSpec s;
    s.block_type = BlockType::inverted_residual;
    s.in_channels = in;
    s.out_channels = out;
    s.stride = stride;
    s.expansion = t;
    s.attention = attn_cfg(kind);
    return s;
}

} // namespace

TEST_CASE("channel_round follows the divisor-8 rule") {
    CHECK(channel_round(32.0 * 0.75) == 24);
    CHECK(channel_round(16.0 * 0.5) == 8);
    CHECK(channel_round(24.0 * 0.75) == 24);   // 18 rounds to 16, below 0.9*18, bumps to 24
    CHECK(channel_round(10.0) == 16);
    CHECK(channel_round(32.0) == 32);
    CHECK(channel_round(1.0) == 8);
    CHECK(channel_round(960.0 * 0.5) == 480);
}

TEST_CASE("sandglass_hidden clamps narrow transitions") {
    CHECK(sandglass_hidden(96, 144, 6.0) == 24);   // 96/6=16 < 144/6, lifted to round(24)
    CHECK(sandglass_hidden(96, 96, 6.0) == 16);
    CHECK(sandglass_hidden(32, 96, 2.0) == 16);
    CHECK(sandglass_hidden(960, 960, 6.0) == 160);
    CHECK(sandglass_hidden(960, 1280, 6.0) == 216);   // ceil(1280/6)=214 rounds to 216
}

TEST_CASE("presets encode the published tables") {
    NetworkSpec v2 = preset("mobilenetv2-1.0");
    CHECK(v2.blocks.size() == 17);
    CHECK(v2.stem.out_channels == 32);
    CHECK(v2.stem.stride == 2);
    CHECK(v2.head.conv_channels == 1280);
    CHECK(v2.head.classes == 1000);
    CHECK(v2.blocks[0].expansion == 1.0);
    CHECK(v2.blocks[0].in_channels == 32);
    CHECK(v2.blocks[0].out_channels == 16);
    CHECK(v2.blocks[1].stride == 2);
    CHECK(v2.blocks[16].out_channels == 320);
    for (const BlockSpec& b : v2.blocks) {
        CHECK(b.block_type == BlockType::inverted_residual);
        CHECK(b.attach_attention);
    }
    validate(v2);

    NetworkSpec nx = preset("mobilenext-1.0");
    CHECK(nx.blocks.size() == 20);
    CHECK(nx.head.conv_channels == 0);   // classifier reads the 1280-wide last block
    CHECK(nx.blocks[0].in_channels == 32);
    CHECK(nx.blocks[0].out_channels == 96);
    CHECK(nx.blocks[19].out_channels == 1280);
    CHECK(!nx.blocks[19].attach_attention);   // head-expansion stage opts out
    for (const BlockSpec& b : nx.blocks) CHECK(b.block_type == BlockType::sandglass);
    validate(nx);

    CHECK(preset("mobilenetv2-0.75").stem.out_channels == 24);
    CHECK(preset("mobilenetv2-0.5").stem.out_channels == 16);
    CHECK(preset_names().size() == 6);
    CHECK_THROWS_WITH_AS(preset("mobilenetv3-1.0"), doctest::Contains("unknown preset"),
                         std::runtime_error);
}

TEST_CASE("apply_attention respects the opt-out flag") {
    NetworkSpec nx = preset("mobilenext-1.0");
    apply_attention(nx, attn_cfg(AttnKind::ca, 32, 8));
    for (std::size_t i = 0; i + 1 < nx.blocks.size(); ++i)
        CHECK(nx.blocks[i].attention.kind == AttnKind::ca);
    CHECK(nx.blocks[19].attention.kind == AttnKind::none);
}

TEST_CASE("validate reports a broken channel chain") {
    NetworkSpec v2 = preset("mobilenetv2-1.0");
    v2.blocks[3].in_channels = 99;
    CHECK_THROWS_WITH_AS(validate(v2), doctest::Contains("blocks[3]"), std::runtime_error);
}

TEST_CASE("identity-initialized block doubles its input through the shortcut") {
    BlockSpec spec = ir_spec(4, 4, 1, 1.0, AttnKind::none);
    Rng rng(3);
    Block b = build_block(spec, rng, false, "b");
    CHECK(!b.expand.has_value());   // t=1 skips the expansion conv
    REQUIRE(b.dw.has_value());
    REQUIRE(b.project.has_value());
    for (double& v : b.dw->conv.weight.data) v = 0.0;
    for (int c = 0; c < 4; ++c) b.dw->conv.weight.at(c, 0, 1, 1) = 1.0;
    if (b.dw->conv.bias)
        for (double& v : b.dw->conv.bias->data) v = 0.0;
    for (double& v : b.project->conv.weight.data) v = 0.0;
    for (int c = 0; c < 4; ++c) b.project->conv.weight.at(c, c, 0, 0) = 1.0;
    if (b.project->conv.bias)
        for (double& v : b.project->conv.bias->data) v = 0.0;

    Tensor x = Rng(5).uniform_tensor({1, 4, 5, 5}, 0.0, 1.0);
    Tape t;
    NodeId y = block_forward(t, t.leaf(x), b, Mode::eval);
    for (std::size_t i = 0; i < x.data.size(); ++i)
        CHECK(t.val(y).data[i] == 2.0 * x.data[i]);
}

TEST_CASE("shortcut adds the input exactly") {
    Rng rng(7);
    for (BlockType type : {BlockType::inverted_residual, BlockType::sandglass}) {
        BlockSpec spec = ir_spec(8, 8, 1, 2.0, AttnKind::ca);
        spec.block_type = type;
        Block b = build_block(spec, rng, true, "b");
        CHECK(b.has_shortcut());
        Tensor x = rng.uniform_tensor({2, 8, 6, 6}, -2.0, 2.0);
        Tape t1, t2;
        Tensor full = t1.val(block_forward(t1, t1.leaf(x), b, Mode::eval, true));
        Tensor body = t2.val(block_forward(t2, t2.leaf(x), b, Mode::eval, false));
        for (std::size_t i = 0; i < x.data.size(); ++i)
            CHECK(full.data[i] == x.data[i] + body.data[i]);
    }
    CHECK(!build_block(ir_spec(8, 16, 1, 2.0, AttnKind::none), rng, true, "b").has_shortcut());
    CHECK(!build_block(ir_spec(8, 8, 2, 2.0, AttnKind::none), rng, true, "b").has_shortcut());
}

TEST_CASE("stride 2 halves spatial extents") {
    Rng rng(9);
    Block ir = build_block(ir_spec(8, 16, 2, 6.0, AttnKind::none), rng, true, "b");
    Tape t;
    CHECK(t.val(block_forward(t, t.leaf(Tensor({1, 8, 12, 8}, 0.5)), ir, Mode::eval)).shape ==
          std::vector<int>{1, 16, 6, 4});

    BlockSpec sg = ir_spec(8, 16, 2, 2.0, AttnKind::none);
    sg.block_type = BlockType::sandglass;
    Block s = build_block(sg, rng, true, "b");
    REQUIRE(s.dw1.has_value());
    REQUIRE(s.reduce.has_value());
    REQUIRE(s.expdw.has_value());
    REQUIRE(s.dw2.has_value());
    Tape ts;
    CHECK(ts.val(block_forward(ts, ts.leaf(Tensor({1, 8, 12, 8}, 0.5)), s, Mode::eval)).shape ==
          std::vector<int>{1, 16, 6, 4});
}

TEST_CASE("zero-weight ca scales the block body by exactly 0.25") {
    BlockSpec spec = ir_spec(6, 8, 1, 2.0, AttnKind::ca);
    spec.placement = AttnPlacement::pre_project;
    Rng rng(13);
    Block b = build_block(spec, rng, false, "b");
    REQUIRE(b.attn.ca);
    for (double& v : b.attn.ca->f1.weight.data) v = 0.0;
    for (double& v : b.attn.ca->fh->weight.data) v = 0.0;
    for (double& v : b.attn.ca->fh->bias->data) v = 0.0;
    for (double& v : b.attn.ca->fw->weight.data) v = 0.0;
    for (double& v : b.attn.ca->fw->bias->data) v = 0.0;

    Tensor x = rng.uniform_tensor({1, 6, 5, 5}, -1.0, 1.0);
    Tape t;
    Tensor body = t.val(block_forward(t, t.leaf(x), b, Mode::eval, false));

    // manual composition of the same layers without the attention stage
    Tensor h = relu6(conv2d(x, b.expand->conv));
    h = relu6(conv2d(h, b.dw->conv));
    Tensor reference = conv2d(h, b.project->conv);
    for (std::size_t i = 0; i < body.data.size(); ++i)
        CHECK(body.data[i] == 0.25 * reference.data[i]);
}

TEST_CASE("se attention changes the output of an otherwise fixed block") {
    Rng rng(17);
    BlockSpec spec = ir_spec(8, 8, 1, 2.0, AttnKind::se);
    Block b = build_block(spec, rng, true, "b");
    Tensor x = rng.uniform_tensor({1, 8, 6, 6}, -2.0, 2.0);
    Tape t1, t2;
    Tensor with_se = t1.val(block_forward(t1, t1.leaf(x), b, Mode::eval, false));
    b.attn = AttentionParams{};   // detach: kind defaults to none
    Tensor without = t2.val(block_forward(t2, t2.leaf(x), b, Mode::eval, false));
    double max_diff = 0.0;
    for (std::size_t i = 0; i < with_se.data.size(); ++i)
        max_diff = std::max(max_diff, std::abs(with_se.data[i] - without.data[i]));
    CHECK(max_diff > 1e-6);
}

TEST_CASE("network forward maps input to class logits") {
    NetworkSpec spec;
    spec.name = "tiny";
    spec.input_shape = {3, 16, 16};
    spec.stem = {8, 3, 1};
    spec.head = {0, 10};
    spec.blocks.push_back(ir_spec(8, 8, 1, 2.0, AttnKind::ca));
    spec.blocks.push_back(ir_spec(8, 16, 2, 2.0, AttnKind::se));
    validate(spec);
    Rng rng(19);
    Network net = build_network(spec, rng);
    Tensor x = rng.uniform_tensor({2, 3, 16, 16}, -1.0, 1.0);
    Tensor logits = net.forward(x, Mode::eval);
    CHECK(logits.shape == std::vector<int>{2, 10});
    CHECK(logits.all_finite());

    Tensor again = net.forward(x, Mode::eval);
    CHECK(again.data == logits.data);
}

TEST_CASE("preset network forward is finite at full resolution") {
    NetworkSpec spec = preset("mobilenetv2-1.0");
    apply_attention(spec, attn_cfg(AttnKind::ca, 32, 8));
    Rng rng(23);
    Network net = build_network(spec, rng);
    Tensor x = rng.uniform_tensor({1, 3, 224, 224}, -1.0, 1.0);
    Tensor logits = net.forward(x, Mode::eval);
    CHECK(logits.shape == std::vector<int>{1, 1000});
    CHECK(logits.all_finite());
}

TEST_CASE("swapping attention kind never changes the output shape") {
    Rng rng(29);
    Tensor x = rng.uniform_tensor({1, 8, 6, 6}, -1.0, 1.0);
    for (AttnKind kind : {AttnKind::none, AttnKind::se, AttnKind::cbam, AttnKind::ca,
                          AttnKind::ca_x, AttnKind::ca_y}) {
        Block b = build_block(ir_spec(8, 12, 1, 2.0, kind), rng, true, "b");
        Tape t;
        CHECK(t.val(block_forward(t, t.leaf(x), b, Mode::eval)).shape ==
              std::vector<int>{1, 12, 6, 6});
    }
}

TEST_CASE("gradient check passes for both block types and the 2-block network") {
    for (const std::string& target : {"inverted_residual", "sandglass"}) {
        CheckReport r = run_gradcheck(target, 7, 20);
        INFO("target ", target, " max_rel ", r.max_rel);
        CHECK(r.pass);
    }
    CheckReport net = run_gradcheck("network", 7, 20);
    CHECK(net.pass);
    CHECK(net.threshold == 1e-5);
    CHECK(net.max_rel < 1e-5);
}

TEST_CASE("build_network rejects an unknown preset and bad chains") {
    CHECK_THROWS_AS(preset("nope"), std::runtime_error);
    NetworkSpec spec = preset("mobilenetv2-1.0");
    spec.blocks[0].in_channels = 48;   // stem emits 32
    Rng rng(1);
    CHECK_THROWS_AS(build_network(spec, rng), std::runtime_error);
}
