#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "coordatt/attention.hpp"
#include "coordatt/blocks.hpp"
#include "coordatt/gradcheck.hpp"
#include "coordatt/oracles.hpp"

#include <cmath>
#include <stdexcept>

using namespace coordatt;

namespace {

void zero_conv(ConvParams& p) {
    for (double& v : p.weight.data) v = 0.0;
    if (p.bias)
        for (double& v : p.bias->data) v = 0.0;
}

void zero_attention_convs(AttentionParams& p) {
    if (p.se) {
        zero_conv(p.se->t1);
        zero_conv(p.se->t2);
    }
    if (p.cbam) {
        zero_conv(p.cbam->mlp1);
        zero_conv(p.cbam->mlp2);
        zero_conv(p.cbam->spatial);
    }
    if (p.ca) {
        zero_conv(p.ca->f1);
        if (p.ca->fh) zero_conv(*p.ca->fh);
        if (p.ca->fw) zero_conv(*p.ca->fw);
    }
}

Tensor dyadic_tensor(Rng& rng, std::vector<int> shape) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform_int(-128, 128) / 64.0;
    return t;
}

AttentionConfig make_cfg(AttnKind kind, int reduction, int floor = 8) {
    AttentionConfig cfg;
    cfg.kind = kind;
    cfg.reduction = reduction;
    cfg.mid_channels_min = floor;
    return cfg;
}

} // namespace

TEST_CASE("attention kind names round-trip") {
    for (AttnKind k : {AttnKind::none, AttnKind::se, AttnKind::cbam, AttnKind::ca,
                       AttnKind::ca_x, AttnKind::ca_y})
        CHECK(attn_kind_from_name(attn_kind_name(k)) == k);
    CHECK_THROWS_WITH_AS(attn_kind_from_name("caa"),
                         doctest::Contains("unknown attention kind"), std::runtime_error);
}

TEST_CASE("mid_channels applies integer division with a floor") {
    CHECK(mid_channels(8, make_cfg(AttnKind::se, 32, 8)) == 8);
    CHECK(mid_channels(64, make_cfg(AttnKind::se, 32, 2)) == 2);
    CHECK(mid_channels(64, make_cfg(AttnKind::se, 32, 8)) == 8);
    CHECK(mid_channels(96, make_cfg(AttnKind::ca, 32, 8)) == 8);
    CHECK(mid_channels(960, make_cfg(AttnKind::ca, 32, 8)) == 30);
    CHECK(mid_channels(16, make_cfg(AttnKind::ca, 1, 1)) == 16);
    CHECK_THROWS_AS(mid_channels(8, make_cfg(AttnKind::se, 0, 8)), std::runtime_error);
}

TEST_CASE("attach allocates the documented parameter shapes") {
    Rng rng(6);
    AttentionConfig cfg = make_cfg(AttnKind::se, 4, 2);

    AttentionParams none = attach(AttnKind::none, 8, cfg, rng);
    CHECK(!none.se);
    CHECK(!none.cbam);
    CHECK(!none.ca);

    AttentionParams se = attach(AttnKind::se, 8, cfg, rng);
    REQUIRE(se.se);
    CHECK(se.se->t1.weight.shape == std::vector<int>{2, 8, 1, 1});
    CHECK(se.se->t2.weight.shape == std::vector<int>{8, 2, 1, 1});
    REQUIRE(se.se->t1.bias);
    REQUIRE(se.se->t2.bias);

    AttentionParams cbam = attach(AttnKind::cbam, 8, cfg, rng);
    REQUIRE(cbam.cbam);
    CHECK(cbam.cbam->spatial.weight.shape == std::vector<int>{1, 2, 7, 7});
    CHECK(cbam.cbam->spatial.padding == 3);

    AttentionParams ca = attach(AttnKind::ca, 8, cfg, rng);
    REQUIRE(ca.ca);
    CHECK(ca.ca->f1.weight.shape == std::vector<int>{2, 8, 1, 1});
    CHECK(!ca.ca->f1.bias);        // BatchNorm follows by default
    REQUIRE(ca.ca->bn);
    REQUIRE(ca.ca->fh);
    REQUIRE(ca.ca->fw);
    CHECK(ca.ca->fh->weight.shape == std::vector<int>{8, 2, 1, 1});

    AttentionConfig nobn = cfg;
    nobn.f1_batchnorm = false;
    AttentionParams ca2 = attach(AttnKind::ca, 8, nobn, rng);
    REQUIRE(ca2.ca);
    CHECK(ca2.ca->f1.bias.has_value());
    CHECK(!ca2.ca->bn);

    AttentionParams cax = attach(AttnKind::ca_x, 8, cfg, rng);
    REQUIRE(cax.ca);
    CHECK(cax.ca->fh.has_value());
    CHECK(!cax.ca->fw.has_value());
    AttentionParams cay = attach(AttnKind::ca_y, 8, cfg, rng);
    CHECK(!cay.ca->fh.has_value());
    CHECK(cay.ca->fw.has_value());

    AttentionConfig even = cfg;
    even.cbam_kernel = 4;
    CHECK_THROWS_WITH_AS(attach(AttnKind::cbam, 8, even, rng),
                         doctest::Contains("odd"), std::runtime_error);
}

TEST_CASE("attach is deterministic per seed") {
    AttentionConfig cfg = make_cfg(AttnKind::ca, 4, 2);
    Rng r1(77), r2(77);
    AttentionParams a = attach(AttnKind::ca, 16, cfg, r1);
    AttentionParams b = attach(AttnKind::ca, 16, cfg, r2);
    CHECK(a.ca->f1.weight.data == b.ca->f1.weight.data);
    CHECK(a.ca->fh->weight.data == b.ca->fh->weight.data);
    CHECK(a.ca->fw->bias->data == b.ca->fw->bias->data);
}

TEST_CASE("gates lie strictly in (0,1) and attenuate the input") {
    Rng rng(31);
    AttentionConfig cfg = make_cfg(AttnKind::se, 4, 2);
    for (AttnKind kind : {AttnKind::se, AttnKind::cbam, AttnKind::ca, AttnKind::ca_x,
                          AttnKind::ca_y}) {
        AttentionParams p = attach(kind, 8, cfg, rng);
        Tensor x = rng.uniform_tensor({2, 8, 5, 6}, -2.0, 2.0);
        Tape t;
        AttentionTrace trace;
        AttentionVars v = bind(t, p);
        NodeId y = attention_forward(t, t.leaf(x), v, Mode::eval, &trace);
        CHECK(t.val(y).shape == x.shape);
        CHECK(t.val(y).all_finite());
        for (NodeId gate : {trace.se_gate, trace.cbam_channel, trace.cbam_spatial}) {
            if (gate < 0) continue;
            for (double g : t.val(gate).data) {
                CHECK(g > 0.0);
                CHECK(g < 1.0);
            }
        }
        if (kind == AttnKind::ca || kind == AttnKind::ca_x)
            for (double g : t.val(trace.gh).data) {
                CHECK(g > 0.0);
                CHECK(g < 1.0);
            }
        if (kind == AttnKind::ca || kind == AttnKind::ca_y)
            for (double g : t.val(trace.gw).data) {
                CHECK(g > 0.0);
                CHECK(g < 1.0);
            }
        if (kind == AttnKind::ca_x)
            for (double g : t.val(trace.gw).data) CHECK(g == 1.0);
        if (kind == AttnKind::ca_y)
            for (double g : t.val(trace.gh).data) CHECK(g == 1.0);
        for (std::size_t i = 0; i < x.data.size(); ++i)
            CHECK(std::abs(t.val(y).data[i]) <= std::abs(x.data[i]));
    }
}

TEST_CASE("zero-weight gates collapse to sigmoid(0)") {
    Rng rng(41);
    AttentionConfig cfg = make_cfg(AttnKind::se, 4, 2);
    Tensor x = rng.uniform_tensor({1, 8, 4, 5}, -2.0, 2.0);

    AttentionParams se = attach(AttnKind::se, 8, cfg, rng);
    zero_attention_convs(se);
    Tensor ys = attention_forward(x, se);
    for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(ys.data[i] == 0.5 * x.data[i]);

    AttentionParams cbam = attach(AttnKind::cbam, 8, cfg, rng);
    zero_attention_convs(cbam);
    Tensor yc = attention_forward(x, cbam);
    for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(yc.data[i] == 0.25 * x.data[i]);

    AttentionParams ca = attach(AttnKind::ca, 8, cfg, rng);
    zero_attention_convs(ca);
    Tensor ya = attention_forward(x, ca);
    for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(ya.data[i] == 0.25 * x.data[i]);

    // single-sided variants keep the missing gate at exactly 1
    AttentionParams cax = attach(AttnKind::ca_x, 8, cfg, rng);
    zero_attention_convs(cax);
    Tensor yx = attention_forward(x, cax);
    for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(yx.data[i] == 0.5 * x.data[i]);

    AttentionParams cay = attach(AttnKind::ca_y, 8, cfg, rng);
    zero_attention_convs(cay);
    Tensor yy = attention_forward(x, cay);
    for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(yy.data[i] == 0.5 * x.data[i]);
}

TEST_CASE("se output is the same spatial permutation of the unpermuted output") {
    Rng rng(51);
    AttentionConfig cfg = make_cfg(AttnKind::se, 4, 2);
    AttentionParams p = attach(AttnKind::se, 6, cfg, rng);
    Tensor x = dyadic_tensor(rng, {1, 6, 3, 4});
    std::vector<int> perm{7, 2, 11, 0, 5, 9, 1, 10, 3, 8, 6, 4};
    Tensor px({1, 6, 3, 4});
    for (int c = 0; c < 6; ++c)
        for (int s = 0; s < 12; ++s) {
            const int q = perm[static_cast<std::size_t>(s)];
            px.at(0, c, s / 4, s % 4) = x.at(0, c, q / 4, q % 4);
        }
    Tensor y = attention_forward(x, p);
    Tensor py = attention_forward(px, p);
    for (int c = 0; c < 6; ++c)
        for (int s = 0; s < 12; ++s) {
            const int q = perm[static_cast<std::size_t>(s)];
            CHECK(py.at(0, c, s / 4, s % 4) == y.at(0, c, q / 4, q % 4));
        }
}

TEST_CASE("ca row permutation: gh equivariant, gw invariant, output permuted") {
    Rng rng(53);
    AttentionConfig cfg = make_cfg(AttnKind::ca, 4, 2);
    AttentionParams p = attach(AttnKind::ca, 6, cfg, rng);
    Tensor x = dyadic_tensor(rng, {1, 6, 5, 4});
    std::vector<int> perm{3, 0, 4, 1, 2};
    Tensor px({1, 6, 5, 4});
    for (int c = 0; c < 6; ++c)
        for (int h = 0; h < 5; ++h)
            for (int w = 0; w < 4; ++w)
                px.at(0, c, h, w) = x.at(0, c, perm[static_cast<std::size_t>(h)], w);

    auto run = [&](const Tensor& in, Tensor& gh, Tensor& gw) {
        Tape t;
        AttentionTrace trace;
        AttentionVars v = bind(t, p);
        NodeId y = attention_forward(t, t.leaf(in), v, Mode::eval, &trace);
        gh = t.val(trace.gh);
        gw = t.val(trace.gw);
        return t.val(y);
    };
    Tensor gh, gw, ghp, gwp;
    Tensor y = run(x, gh, gw);
    Tensor py = run(px, ghp, gwp);

    CHECK(gwp.data == gw.data);
    for (int c = 0; c < 6; ++c)
        for (int h = 0; h < 5; ++h) {
            CHECK(ghp.at(0, c, h, 0) == gh.at(0, c, perm[static_cast<std::size_t>(h)], 0));
            for (int w = 0; w < 4; ++w)
                CHECK(py.at(0, c, h, w) == y.at(0, c, perm[static_cast<std::size_t>(h)], w));
        }
}

TEST_CASE("ca column permutation: gw equivariant, gh invariant") {
    Rng rng(59);
    AttentionConfig cfg = make_cfg(AttnKind::ca, 4, 2);
    AttentionParams p = attach(AttnKind::ca, 4, cfg, rng);
    Tensor x = dyadic_tensor(rng, {1, 4, 3, 6});
    std::vector<int> perm{5, 1, 0, 3, 2, 4};
    Tensor px({1, 4, 3, 6});
    for (int c = 0; c < 4; ++c)
        for (int h = 0; h < 3; ++h)
            for (int w = 0; w < 6; ++w)
                px.at(0, c, h, w) = x.at(0, c, h, perm[static_cast<std::size_t>(w)]);

    auto run = [&](const Tensor& in, Tensor& gh, Tensor& gw) {
        Tape t;
        AttentionTrace trace;
        AttentionVars v = bind(t, p);
        NodeId y = attention_forward(t, t.leaf(in), v, Mode::eval, &trace);
        gh = t.val(trace.gh);
        gw = t.val(trace.gw);
        return t.val(y);
    };
    Tensor gh, gw, ghp, gwp;
    Tensor y = run(x, gh, gw);
    Tensor py = run(px, ghp, gwp);

    CHECK(ghp.data == gh.data);
    for (int c = 0; c < 4; ++c)
        for (int w = 0; w < 6; ++w) {
            CHECK(gwp.at(0, c, 0, w) == gw.at(0, c, 0, perm[static_cast<std::size_t>(w)]));
            for (int h = 0; h < 3; ++h)
                CHECK(py.at(0, c, h, w) == y.at(0, c, h, perm[static_cast<std::size_t>(w)]));
        }
}

TEST_CASE("H=W=1 degenerates to cascaded channel gates") {
    Rng rng(61);
    AttentionConfig cfg = make_cfg(AttnKind::ca, 4, 2);
    AttentionParams p = attach(AttnKind::ca, 8, cfg, rng);
    Tensor x = rng.uniform_tensor({2, 8, 1, 1}, -2.0, 2.0);
    Tensor y = attention_forward(x, p);
    CHECK(y.shape == x.shape);
    Tensor slow = oracle_forward(x, p);
    for (std::size_t i = 0; i < y.data.size(); ++i)
        CHECK(std::abs(y.data[i] - slow.data[i]) < 1e-10);
}

TEST_CASE("sequential ca_x then ca_y differs from joint ca") {
    // the shared F1 couples the two directions; a factorized pipeline is wrong
    Rng rng(67);
    AttentionConfig cfg = make_cfg(AttnKind::ca, 4, 2);
    AttentionParams p = attach(AttnKind::ca, 8, cfg, rng);
    Tensor x = rng.uniform_tensor({1, 8, 5, 5}, -2.0, 2.0);

    Tensor joint = ca_forward(x, *p.ca, p.cfg);
    AttentionConfig cx = p.cfg;
    cx.kind = AttnKind::ca_x;
    AttentionConfig cy = p.cfg;
    cy.kind = AttnKind::ca_y;
    Tensor seq = ca_forward(ca_forward(x, *p.ca, cx), *p.ca, cy);

    double max_diff = 0.0;
    for (std::size_t i = 0; i < joint.data.size(); ++i)
        max_diff = std::max(max_diff, std::abs(joint.data[i] - seq.data[i]));
    CHECK(max_diff > 1e-6);
}

TEST_CASE("fast path agrees with the loop oracle for every kind") {
    for (AttnKind kind : {AttnKind::se, AttnKind::cbam, AttnKind::ca, AttnKind::ca_x,
                          AttnKind::ca_y}) {
        AgreementReport r = run_oracle_agreement(kind, 7, 20);
        INFO("kind ", attn_kind_name(kind), " max_abs_diff ", r.max_abs_diff);
        CHECK(r.pass);
        CHECK(r.max_abs_diff < 1e-10);
        CHECK(r.cases == 20);
    }
}

TEST_CASE("gradient check passes for every attention module") {
    for (const std::string& target : {"se", "cbam", "ca", "ca_x", "ca_y"}) {
        CheckReport r = run_gradcheck(target, 7, 20);
        INFO("target ", target, " max_rel ", r.max_rel);
        CHECK(r.pass);
        CHECK(r.max_rel < r.threshold);
    }
}

TEST_CASE("attention forward rejects channel mismatch") {
    Rng rng(71);
    AttentionConfig cfg = make_cfg(AttnKind::se, 4, 2);
    AttentionParams se = attach(AttnKind::se, 8, cfg, rng);
    Tensor x({1, 6, 3, 3}, 1.0);
    CHECK_THROWS_AS(attention_forward(x, se), std::runtime_error);
}
