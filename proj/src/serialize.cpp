#include "coordatt/serialize.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace coordatt {

using nlohmann::json;

std::string act_name(Act a) {
    switch (a) {
        case Act::none: return "none";
        case Act::relu: return "relu";
        case Act::relu6: return "relu6";
        case Act::hard_swish: return "hard_swish";
        case Act::sigmoid: return "sigmoid";
    }
    throw std::logic_error("act_name: bad enum");
}

Act act_from_name(const std::string& name) {
    if (name == "none") return Act::none;
    if (name == "relu") return Act::relu;
    if (name == "relu6") return Act::relu6;
    if (name == "hard_swish") return Act::hard_swish;
    if (name == "sigmoid") return Act::sigmoid;
    throw std::invalid_argument("unknown activation \"" + name + "\"");
}

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
    throw std::runtime_error("spec: " + path + ": " + msg);
}

void check_fields(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
    if (!obj.is_object()) fail(path, "expected an object");
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key)) fail(path.empty() ? key : path + "." + key, "unknown field");
}

int get_int(const json& obj, const std::string& path, const std::string& key, int fallback,
            bool required = false) {
    if (!obj.contains(key)) {
        if (required) fail(path + key, "missing required field");
        return fallback;
    }
    const json& v = obj.at(key);
    if (!v.is_number_integer()) fail(path + key, "expected an integer");
    return v.get<int>();
}

double get_num(const json& obj, const std::string& path, const std::string& key, double fallback,
               bool required = false) {
    if (!obj.contains(key)) {
        if (required) fail(path + key, "missing required field");
        return fallback;
    }
    const json& v = obj.at(key);
    if (!v.is_number()) fail(path + key, "expected a number");
    return v.get<double>();
}

bool get_bool(const json& obj, const std::string& path, const std::string& key, bool fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_boolean()) fail(path + key, "expected a boolean");
    return v.get<bool>();
}

std::string get_str(const json& obj, const std::string& path, const std::string& key,
                    const std::string& fallback, bool required = false) {
    if (!obj.contains(key)) {
        if (required) fail(path + key, "missing required field");
        return fallback;
    }
    const json& v = obj.at(key);
    if (!v.is_string()) fail(path + key, "expected a string");
    return v.get<std::string>();
}

AttentionConfig parse_attention(const json& obj, const std::string& path) {
    check_fields(obj, path,
                 {"kind", "reduction", "mid_channels_min", "delta_activation", "cbam_kernel",
                  "f1_batchnorm"});
    AttentionConfig cfg;
    const std::string kind = get_str(obj, path + ".", "kind", "", true);
    try {
        cfg.kind = attn_kind_from_name(kind);
    } catch (const std::exception& e) {
        fail(path + ".kind", e.what());
    }
    cfg.reduction = get_int(obj, path + ".", "reduction", cfg.reduction);
    if (cfg.reduction < 1) fail(path + ".reduction", "expected a positive integer");
    cfg.mid_channels_min = get_int(obj, path + ".", "mid_channels_min", cfg.mid_channels_min);
    if (cfg.mid_channels_min < 1) fail(path + ".mid_channels_min", "expected a positive integer");
    try {
        cfg.delta_activation =
            act_from_name(get_str(obj, path + ".", "delta_activation",
                                  act_name(cfg.delta_activation)));
    } catch (const std::exception& e) {
        fail(path + ".delta_activation", e.what());
    }
    cfg.cbam_kernel = get_int(obj, path + ".", "cbam_kernel", cfg.cbam_kernel);
    if (cfg.cbam_kernel < 1 || cfg.cbam_kernel % 2 == 0)
        fail(path + ".cbam_kernel", "expected an odd positive integer");
    cfg.f1_batchnorm = get_bool(obj, path + ".", "f1_batchnorm", cfg.f1_batchnorm);
    return cfg;
}

BlockSpec parse_block(const json& obj, const std::string& path) {
    check_fields(obj, path,
                 {"type", "in_channels", "out_channels", "stride", "expansion", "attention",
                  "placement", "attach_attention"});
    BlockSpec b;
    const std::string type = get_str(obj, path + ".", "type", "inverted_residual");
    if (type == "inverted_residual")
        b.block_type = BlockType::inverted_residual;
    else if (type == "sandglass")
        b.block_type = BlockType::sandglass;
    else
        fail(path + ".type", "unknown block type \"" + type + "\"");
    b.in_channels = get_int(obj, path + ".", "in_channels", 0, true);
    b.out_channels = get_int(obj, path + ".", "out_channels", 0, true);
    b.stride = get_int(obj, path + ".", "stride", 1);
    b.expansion = get_num(obj, path + ".", "expansion", 6.0);
    if (obj.contains("attention")) b.attention = parse_attention(obj.at("attention"), path + ".attention");
    const std::string placement = get_str(obj, path + ".", "placement", "pre_project");
    if (placement == "pre_project")
        b.placement = AttnPlacement::pre_project;
    else if (placement == "post_project")
        b.placement = AttnPlacement::post_project;
    else
        fail(path + ".placement", "unknown placement \"" + placement + "\"");
    b.attach_attention = get_bool(obj, path + ".", "attach_attention", true);
    return b;
}

} // namespace

NetworkSpec parse_spec(const std::string& document) {
    json doc;
    try {
        doc = json::parse(document);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("spec: invalid json: ") + e.what());
    }
    if (!doc.is_object()) throw std::runtime_error("spec: top level must be an object");
    const int version = get_int(doc, "", "version", 0, true);
    if (version != 1)
        throw std::runtime_error("spec: version: unsupported version " + std::to_string(version));

    NetworkSpec spec;
    if (doc.contains("preset")) {
        check_fields(doc, "", {"version", "preset", "attention"});
        const std::string name = get_str(doc, "", "preset", "", true);
        try {
            spec = preset(name);
        } catch (const std::exception& e) {
            fail("preset", e.what());
        }
        if (doc.contains("attention"))
            apply_attention(spec, parse_attention(doc.at("attention"), "attention"));
    } else {
        check_fields(doc, "",
                     {"version", "name", "width_multiplier", "input_shape", "use_batchnorm",
                      "stem", "head", "blocks", "attention"});
        spec.name = get_str(doc, "", "name", "custom");
        spec.width_multiplier = get_num(doc, "", "width_multiplier", 1.0);
        if (doc.contains("input_shape")) {
            const json& s = doc.at("input_shape");
            if (!s.is_array() || s.size() != 3) fail("input_shape", "expected [C, H, W]");
            for (std::size_t i = 0; i < 3; ++i) {
                if (!s[i].is_number_integer() || s[i].get<int>() < 1)
                    fail("input_shape[" + std::to_string(i) + "]", "expected a positive integer");
                spec.input_shape[i] = s[i].get<int>();
            }
        }
        spec.use_batchnorm = get_bool(doc, "", "use_batchnorm", true);
        if (doc.contains("stem")) {
            const json& s = doc.at("stem");
            check_fields(s, "stem", {"out_channels", "kernel", "stride"});
            spec.stem.out_channels = get_int(s, "stem.", "out_channels", spec.stem.out_channels);
            spec.stem.kernel = get_int(s, "stem.", "kernel", spec.stem.kernel);
            spec.stem.stride = get_int(s, "stem.", "stride", spec.stem.stride);
        }
        if (doc.contains("head")) {
            const json& h = doc.at("head");
            check_fields(h, "head", {"conv_channels", "classes"});
            spec.head.conv_channels = get_int(h, "head.", "conv_channels", spec.head.conv_channels);
            spec.head.classes = get_int(h, "head.", "classes", spec.head.classes);
        }
        if (!doc.contains("blocks")) fail("blocks", "missing required field");
        const json& blocks = doc.at("blocks");
        if (!blocks.is_array() || blocks.empty()) fail("blocks", "expected a non-empty array");
        for (std::size_t i = 0; i < blocks.size(); ++i)
            spec.blocks.push_back(parse_block(blocks[i], "blocks[" + std::to_string(i) + "]"));
        if (doc.contains("attention")) {
            // global attention fills in blocks that carry none of their own
            const AttentionConfig cfg = parse_attention(doc.at("attention"), "attention");
            for (BlockSpec& b : spec.blocks)
                if (b.attention.kind == AttnKind::none && b.attach_attention) b.attention = cfg;
        }
    }
    validate(spec);
    return spec;
}

NetworkSpec load_spec(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("spec: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_spec(buf.str());
}

std::string spec_to_json(const NetworkSpec& spec) {
    json doc;
    doc["version"] = 1;
    doc["name"] = spec.name;
    doc["width_multiplier"] = spec.width_multiplier;
    doc["input_shape"] = {spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
    doc["use_batchnorm"] = spec.use_batchnorm;
    doc["stem"] = {{"out_channels", spec.stem.out_channels},
                   {"kernel", spec.stem.kernel},
                   {"stride", spec.stem.stride}};
    doc["head"] = {{"conv_channels", spec.head.conv_channels}, {"classes", spec.head.classes}};
    json blocks = json::array();
    for (const BlockSpec& b : spec.blocks) {
        json jb;
        jb["type"] = b.block_type == BlockType::inverted_residual ? "inverted_residual"
                                                                  : "sandglass";
        jb["in_channels"] = b.in_channels;
        jb["out_channels"] = b.out_channels;
        jb["stride"] = b.stride;
        jb["expansion"] = b.expansion;
        jb["attention"] = {{"kind", attn_kind_name(b.attention.kind)},
                           {"reduction", b.attention.reduction},
                           {"mid_channels_min", b.attention.mid_channels_min},
                           {"delta_activation", act_name(b.attention.delta_activation)},
                           {"cbam_kernel", b.attention.cbam_kernel},
                           {"f1_batchnorm", b.attention.f1_batchnorm}};
        jb["placement"] = b.placement == AttnPlacement::pre_project ? "pre_project"
                                                                    : "post_project";
        jb["attach_attention"] = b.attach_attention;
        blocks.push_back(std::move(jb));
    }
    doc["blocks"] = std::move(blocks);
    return doc.dump(2);
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

void put_f32(std::ostream& out, double v) {
    float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

std::uint32_t take_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("weights: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double take_f32(std::istream& in) {
    std::uint32_t bits = take_u32(in);
    float f;
    std::memcpy(&f, &bits, 4);
    return static_cast<double>(f);
}

} // namespace

void save_weights(Network& net, const std::string& path) {
    std::vector<ParamEntry> entries = net.parameters();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("weights: cannot open " + path + " for writing");
    out.write("CAW1", 4);
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const ParamEntry& e : entries) {
        put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        put_u32(out, static_cast<std::uint32_t>(e.tensor->rank()));
        for (int d = 0; d < e.tensor->rank(); ++d)
            put_u32(out, static_cast<std::uint32_t>(e.tensor->extent(d)));
        for (double v : e.tensor->data) put_f32(out, v);
    }
    if (!out) throw std::runtime_error("weights: write to " + path + " failed");
}

void load_weights(const std::string& path, Network& net) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("weights: cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "CAW1", 4) != 0)
        throw std::runtime_error("weights: bad magic");
    const std::uint32_t version = take_u32(in);
    if (version != 1)
        throw std::runtime_error("weights: unsupported version " + std::to_string(version));
    const std::uint32_t count = take_u32(in);

    struct Entry {
        std::vector<int> shape;
        std::vector<double> data;
    };
    std::map<std::string, Entry> file;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = take_u32(in);
        std::string name(name_len, '\0');
        if (name_len && !in.read(name.data(), name_len))
            throw std::runtime_error("weights: truncated file");
        const std::uint32_t rank = take_u32(in);
        if (rank < 1 || rank > 4)
            throw std::runtime_error("weights: tensor \"" + name + "\" has bad rank " +
                                     std::to_string(rank));
        Entry e;
        std::size_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            e.shape.push_back(static_cast<int>(take_u32(in)));
            n *= static_cast<std::size_t>(e.shape.back());
        }
        e.data.reserve(n);
        for (std::size_t k = 0; k < n; ++k) e.data.push_back(take_f32(in));
        file[name] = std::move(e);
    }

    std::vector<ParamEntry> entries = net.parameters();
    std::string missing, unexpected, mismatched;
    std::set<std::string> net_names;
    for (const ParamEntry& e : entries) {
        net_names.insert(e.name);
        auto it = file.find(e.name);
        if (it == file.end()) {
            missing += (missing.empty() ? "" : ", ") + e.name;
            continue;
        }
        if (it->second.shape != e.tensor->shape)
            mismatched += (mismatched.empty() ? "" : ", ") + e.name;
    }
    for (const auto& [name, entry] : file)
        if (!net_names.count(name)) unexpected += (unexpected.empty() ? "" : ", ") + name;
    if (!missing.empty() || !unexpected.empty() || !mismatched.empty()) {
        std::string msg = "weights: structure mismatch";
        if (!missing.empty()) msg += "; missing from file: " + missing;
        if (!unexpected.empty()) msg += "; unexpected in file: " + unexpected;
        if (!mismatched.empty()) msg += "; shape mismatch: " + mismatched;
        throw std::runtime_error(msg);
    }
    for (ParamEntry& e : entries) e.tensor->data = file.at(e.name).data;
}

} // namespace coordatt
