#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "coordatt/cost.hpp"
#include "coordatt/serialize.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using namespace coordatt;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& leaf) {
    return (fs::temp_directory_path() / ("coordatt_test_" + leaf)).string();
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

NetworkSpec tiny_spec() {
    NetworkSpec spec;
    spec.name = "tiny";
    spec.input_shape = {1, 8, 8};
    spec.stem = {8, 3, 1};
    spec.head = {16, 4};
    BlockSpec b;
    b.in_channels = 8;
    b.out_channels = 8;
    b.stride = 1;
    b.expansion = 2.0;
    b.attention.kind = AttnKind::ca;
    b.attention.reduction = 4;
    spec.blocks.push_back(b);
    return spec;
}

} // namespace

TEST_CASE("activation names round-trip and reject unknowns") {
    for (Act a : {Act::none, Act::relu, Act::relu6, Act::hard_swish, Act::sigmoid})
        CHECK(act_from_name(act_name(a)) == a);
    CHECK_THROWS_WITH_AS(act_from_name("gelu"), doctest::Contains("unknown activation"),
                         std::invalid_argument);
}

TEST_CASE("preset reference documents expand with global attention") {
    NetworkSpec spec = parse_spec(
        R"({"version":1,"preset":"mobilenetv2-1.0","attention":{"kind":"ca","reduction":32}})");
    CHECK(spec.name == "mobilenetv2-1.0");
    CHECK(spec.blocks.size() == 17);
    for (const BlockSpec& b : spec.blocks) {
        CHECK(b.attention.kind == AttnKind::ca);
        CHECK(b.attention.reduction == 32);
    }
    NetworkSpec manual = preset("mobilenetv2-1.0");
    AttentionConfig cfg;
    cfg.kind = AttnKind::ca;
    cfg.reduction = 32;
    apply_attention(manual, cfg);
    CHECK(spec_to_json(spec) == spec_to_json(manual));
}

TEST_CASE("bad attention kind is rejected with the field path") {
    CHECK_THROWS_WITH_AS(
        parse_spec(R"({"version":1,"preset":"mobilenetv2-1.0","attention":{"kind":"caa"}})"),
        doctest::Contains("attention.kind"), std::runtime_error);
    try {
        parse_spec(R"({"version":1,"preset":"mobilenetv2-1.0","attention":{"kind":"caa"}})");
        FAIL("expected a throw");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("caa") != std::string::npos);
    }
}

TEST_CASE("unknown fields are rejected with their path") {
    CHECK_THROWS_WITH_AS(parse_spec(R"({"version":1,"preset":"mobilenetv2-1.0","colour":"red"})"),
                         doctest::Contains("colour: unknown field"), std::runtime_error);
    NetworkSpec t = tiny_spec();
    nlohmann::json doc = nlohmann::json::parse(spec_to_json(t));
    doc["stem"]["kernell"] = 3;
    CHECK_THROWS_WITH_AS(parse_spec(doc.dump()), doctest::Contains("stem.kernell: unknown field"),
                         std::runtime_error);
    doc = nlohmann::json::parse(spec_to_json(t));
    doc["blocks"][0]["strides"] = 2;
    CHECK_THROWS_WITH_AS(parse_spec(doc.dump()),
                         doctest::Contains("blocks[0].strides: unknown field"),
                         std::runtime_error);
}

TEST_CASE("version gate") {
    CHECK_THROWS_WITH_AS(parse_spec(R"({"version":2,"preset":"mobilenetv2-1.0"})"),
                         doctest::Contains("unsupported version 2"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_spec(R"({"preset":"mobilenetv2-1.0"})"),
                         doctest::Contains("version"), std::runtime_error);
}

TEST_CASE("parser is total over arbitrary bytes") {
    // Everything throws; nothing crashes. Inputs that die inside the json
    // layer carry the "spec: " prefix; structurally invalid specs fail later
    // in validate() with a bare field path.
    const std::string prefixed[] = {
        "", "{", "[1,2", "\"just a string\"", "null", "42", "[]",
        R"({"version":1})",
        R"({"version":1,"preset":5})",
        R"({"version":1,"preset":"nope"})",
        R"({"version":1,"blocks":[]})",
        R"({"version":"1","preset":"mobilenetv2-1.0"})",
        std::string("\x00\xff\xfe{]garbage\x01", 13),
    };
    for (const std::string& s : prefixed) {
        CAPTURE(s);
        CHECK_THROWS_AS(parse_spec(s), std::exception);
        try {
            parse_spec(s);
        } catch (const std::exception& e) {
            CHECK(std::string(e.what()).rfind("spec: ", 0) == 0);
        }
    }
    CHECK_THROWS_WITH_AS(
        parse_spec(R"({"version":1,"blocks":[{"in_channels":-3,"out_channels":8}]})"),
        doctest::Contains("blocks[0].in_channels"), std::runtime_error);
}

TEST_CASE("spec json round-trips as a fixpoint") {
    for (const std::string& name : preset_names()) {
        NetworkSpec spec = preset(name);
        if (name.rfind("mobilenext", 0) == 0) {
            AttentionConfig cfg;
            cfg.kind = AttnKind::ca;
            apply_attention(spec, cfg);
        }
        const std::string j1 = spec_to_json(spec);
        const std::string j2 = spec_to_json(parse_spec(j1));
        CHECK(j1 == j2);
    }
    const std::string j = spec_to_json(tiny_spec());
    CHECK(spec_to_json(parse_spec(j)) == j);
}

TEST_CASE("explicit document builds the same network as the preset") {
    NetworkSpec a = parse_spec(R"({"version":1,"preset":"mobilenetv2-1.0"})");
    NetworkSpec b = parse_spec(spec_to_json(preset("mobilenetv2-1.0")));
    Rng r1(3), r2(3);
    Network na = build_network(a, r1);
    Network nb = build_network(b, r2);
    CHECK(emit_report(cost_report(na, {3, 224, 224}), ReportFormat::csv) ==
          emit_report(cost_report(nb, {3, 224, 224}), ReportFormat::csv));
    auto ea = na.parameters();
    auto eb = nb.parameters();
    REQUIRE(ea.size() == eb.size());
    for (std::size_t i = 0; i < ea.size(); ++i) {
        CHECK(ea[i].name == eb[i].name);
        CHECK(ea[i].tensor->data == eb[i].tensor->data);
    }
}

TEST_CASE("weight files round-trip byte-identically") {
    Rng rng(11);
    Network net = build_network(tiny_spec(), rng);
    const std::string p1 = tmp_path("w1.caw");
    const std::string p2 = tmp_path("w2.caw");
    save_weights(net, p1);
    load_weights(p1, net);
    save_weights(net, p2);
    CHECK(read_bytes(p1) == read_bytes(p2));
    const std::string bytes = read_bytes(p1);
    REQUIRE(bytes.size() >= 4);
    CHECK(bytes.substr(0, 4) == "CAW1");
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("loading quantizes exactly to f32 and transfers state") {
    Rng r1(11), r2(22);
    Network src = build_network(tiny_spec(), r1);
    Network dst = build_network(tiny_spec(), r2);
    const std::string path = tmp_path("w3.caw");
    save_weights(src, path);
    load_weights(path, dst);
    auto es = src.parameters();
    auto ed = dst.parameters();
    REQUIRE(es.size() == ed.size());
    for (std::size_t i = 0; i < es.size(); ++i) {
        REQUIRE(es[i].tensor->data.size() == ed[i].tensor->data.size());
        for (std::size_t k = 0; k < es[i].tensor->data.size(); ++k) {
            const double orig = es[i].tensor->data[k];
            const double got = ed[i].tensor->data[k];
            CHECK(got == static_cast<double>(static_cast<float>(orig)));
            CHECK(std::abs(got - orig) <= std::max(std::abs(orig), 1.0) * 1.2e-7);
        }
    }
    // BN running stats travel with the file, so eval outputs agree too.
    Rng rx(5);
    Tensor x({2, 1, 8, 8});
    for (double& v : x.data) v = rx.uniform(-1.0, 1.0);
    Tensor ys = src.forward(x, Mode::eval);
    Tensor yd = dst.forward(x, Mode::eval);
    for (std::size_t i = 0; i < ys.data.size(); ++i)
        CHECK(std::abs(ys.data[i] - yd.data[i]) < 1e-5);
    fs::remove(path);
}

TEST_CASE("corrupted weight files are rejected") {
    Rng rng(7);
    Network net = build_network(tiny_spec(), rng);
    const std::string path = tmp_path("w4.caw");
    save_weights(net, path);
    const std::string good = read_bytes(path);

    std::string bad = good;
    bad[0] = 'X';
    write_bytes(path, bad);
    CHECK_THROWS_WITH_AS(load_weights(path, net), doctest::Contains("bad magic"),
                         std::runtime_error);

    write_bytes(path, good.substr(0, good.size() / 2));
    CHECK_THROWS_WITH_AS(load_weights(path, net), doctest::Contains("truncated"),
                         std::runtime_error);

    CHECK_THROWS_WITH_AS(load_weights(tmp_path("does_not_exist.caw"), net),
                         doctest::Contains("cannot open"), std::runtime_error);
    fs::remove(path);
}

TEST_CASE("structure mismatches list the offending tensors") {
    Rng r1(1), r2(2);
    Network small = build_network(tiny_spec(), r1);
    NetworkSpec wide = tiny_spec();
    wide.stem.out_channels = 16;
    wide.blocks[0].in_channels = 16;
    wide.blocks[0].out_channels = 16;
    Network big = build_network(wide, r2);
    const std::string path = tmp_path("w5.caw");
    save_weights(small, path);
    try {
        load_weights(path, big);
        FAIL("expected a structure mismatch");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("structure mismatch") != std::string::npos);
        CHECK(msg.find("shape mismatch") != std::string::npos);
        CHECK(msg.find("stem.conv.weight") != std::string::npos);
    }
    fs::remove(path);
}
