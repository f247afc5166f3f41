#include "coordatt/cost.hpp"

#include <json.hpp>

#include <sstream>
#include <stdexcept>

namespace coordatt {

namespace {

// One convolution applied to an input of spatial extent (h, w).
CostRow conv_row(const std::string& layer, const ConvParams& p, int h, int w) {
    const int cout = p.weight.shape[0], cing = p.weight.shape[1];
    const int kh = p.weight.shape[2], kw = p.weight.shape[3];
    const int ho = conv_out_extent(h, kh, p.stride, p.padding);
    const int wo = conv_out_extent(w, kw, p.stride, p.padding);
    CostRow row;
    row.layer = layer;
    row.kind = "conv";
    row.params = p.weight.numel() + (p.bias ? p.bias->numel() : 0);
    row.madds = static_cast<std::int64_t>(cout) * ho * wo * cing * kh * kw;
    row.out_shape = {cout, ho, wo};
    return row;
}

CostRow bn_row(const std::string& layer, const BatchNormParams& p, int h, int w) {
    CostRow row;
    row.layer = layer;
    row.kind = "batchnorm";
    row.params = p.gamma.numel() + p.beta.numel();
    row.madds = 0;
    row.out_shape = {static_cast<int>(p.gamma.numel()), h, w};
    return row;
}

struct Walker {
    std::vector<CostRow> rows;

    // appends conv (+bn) rows and returns the output spatial extents
    std::pair<int, int> conv_bn(const std::string& prefix, const ConvBn& layer, int h, int w) {
        CostRow row = conv_row(prefix + ".conv", layer.conv, h, w);
        const int ho = row.out_shape[1], wo = row.out_shape[2];
        rows.push_back(std::move(row));
        if (layer.bn) rows.push_back(bn_row(prefix + ".bn", *layer.bn, ho, wo));
        return {ho, wo};
    }

    void attention(const std::string& prefix, const AttentionParams& p, int h, int w) {
        if (p.se) {
            rows.push_back(conv_row(prefix + ".t1", p.se->t1, 1, 1));
            rows.push_back(conv_row(prefix + ".t2", p.se->t2, 1, 1));
        }
        if (p.cbam) {
            CostRow m1 = conv_row(prefix + ".mlp1", p.cbam->mlp1, 1, 1);
            CostRow m2 = conv_row(prefix + ".mlp2", p.cbam->mlp2, 1, 1);
            m1.kind = m2.kind = "conv-x2";   // shared MLP runs on both pooled paths
            m1.madds *= 2;
            m2.madds *= 2;
            rows.push_back(std::move(m1));
            rows.push_back(std::move(m2));
            rows.push_back(conv_row(prefix + ".spatial", p.cbam->spatial, h, w));
        }
        if (p.ca) {
            rows.push_back(conv_row(prefix + ".f1", p.ca->f1, 1, h + w));
            if (p.ca->bn) rows.push_back(bn_row(prefix + ".f1.bn", *p.ca->bn, 1, h + w));
            if (p.ca->fh) rows.push_back(conv_row(prefix + ".fh", *p.ca->fh, h, 1));
            if (p.ca->fw) rows.push_back(conv_row(prefix + ".fw", *p.ca->fw, 1, w));
        }
    }
};

} // namespace

CostReport cost_report(Network& net, std::array<int, 3> input_chw) {
    if (input_chw[0] != net.spec.input_shape[0])
        throw std::runtime_error("cost_report: input channels " + std::to_string(input_chw[0]) +
                                 " do not match network (" +
                                 std::to_string(net.spec.input_shape[0]) + ")");
    CostReport report;
    report.input_shape = input_chw;
    Walker walk;
    auto [h, w] = walk.conv_bn("stem", net.stem, input_chw[1], input_chw[2]);
    for (auto& b : net.blocks) {
        if (b.spec.block_type == BlockType::inverted_residual) {
            if (b.expand) std::tie(h, w) = walk.conv_bn(b.name + ".expand", *b.expand, h, w);
            std::tie(h, w) = walk.conv_bn(b.name + ".dw", *b.dw, h, w);
            if (b.spec.placement == AttnPlacement::pre_project)
                walk.attention(b.name + ".attn", b.attn, h, w);
            std::tie(h, w) = walk.conv_bn(b.name + ".project", *b.project, h, w);
            if (b.spec.placement == AttnPlacement::post_project)
                walk.attention(b.name + ".attn", b.attn, h, w);
        } else {
            std::tie(h, w) = walk.conv_bn(b.name + ".dw1", *b.dw1, h, w);
            std::tie(h, w) = walk.conv_bn(b.name + ".reduce", *b.reduce, h, w);
            std::tie(h, w) = walk.conv_bn(b.name + ".expand", *b.expdw, h, w);
            if (b.spec.placement == AttnPlacement::pre_project)
                walk.attention(b.name + ".attn", b.attn, h, w);
            std::tie(h, w) = walk.conv_bn(b.name + ".dw2", *b.dw2, h, w);
            if (b.spec.placement == AttnPlacement::post_project)
                walk.attention(b.name + ".attn", b.attn, h, w);
        }
    }
    if (net.head_conv) std::tie(h, w) = walk.conv_bn("head", *net.head_conv, h, w);
    const int feat = walk.rows.empty() ? 0 : walk.rows.back().out_shape[0];
    CostRow gap;
    gap.layer = "gap";
    gap.kind = "pool";
    gap.out_shape = {feat, 1, 1};
    walk.rows.push_back(std::move(gap));
    CostRow cls;
    cls.layer = "classifier";
    cls.kind = "linear";
    cls.params = net.classifier.weight.numel() + net.classifier.bias.numel();
    cls.madds = net.classifier.weight.numel();
    cls.out_shape = {net.classifier.weight.shape[0]};
    walk.rows.push_back(std::move(cls));

    report.rows = std::move(walk.rows);
    for (const auto& row : report.rows) {
        report.total_params += row.params;
        report.total_madds += row.madds;
        if (row.kind != "batchnorm") report.total_params_no_bn += row.params;
    }
    return report;
}

std::int64_t count_params(Network& net) {
    std::int64_t total = 0;
    for (const auto& e : net.parameters())
        if (e.learnable) total += e.tensor->numel();
    return total;
}

std::int64_t count_madds(Network& net, std::array<int, 3> input_chw) {
    return cost_report(net, input_chw).total_madds;
}

static std::string shape_x(const std::vector<int>& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += 'x';
        s += std::to_string(shape[i]);
    }
    return s;
}

std::string emit_report(const CostReport& report, ReportFormat format) {
    if (format == ReportFormat::csv) {
        std::ostringstream os;
        os << "layer,kind,params,madds,out_shape\n";
        for (const auto& row : report.rows)
            os << row.layer << ',' << row.kind << ',' << row.params << ',' << row.madds << ','
               << shape_x(row.out_shape) << '\n';
        os << "TOTAL,," << report.total_params << ',' << report.total_madds << ",\n";
        return os.str();
    }
    nlohmann::json j;
    j["convention"] = report.convention;
    j["input_shape"] = report.input_shape;
    j["rows"] = nlohmann::json::array();
    for (const auto& row : report.rows)
        j["rows"].push_back({{"layer", row.layer},
                             {"kind", row.kind},
                             {"params", row.params},
                             {"madds", row.madds},
                             {"out_shape", row.out_shape}});
    j["totals"] = {{"params", report.total_params},
                   {"params_no_bn", report.total_params_no_bn},
                   {"madds", report.total_madds}};
    return j.dump(2) + "\n";
}

} // namespace coordatt
